//! Benchmark data generators and their analytic references.

pub mod bifurcation;
pub mod chafee;
pub mod circle;
pub mod hugoniot;
pub mod sde;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Bifurcation,
    Sde,
    Shock,
    Chafee,
    Circle,
}

impl Problem {
    pub const ALL: [Problem; 5] = [Problem::Bifurcation, Problem::Sde, Problem::Shock, Problem::Chafee, Problem::Circle];

    pub fn name(self) -> &'static str {
        match self {
            Problem::Bifurcation => "bifurcation",
            Problem::Sde => "sde",
            Problem::Shock => "shock",
            Problem::Chafee => "chafee",
            Problem::Circle => "circle",
        }
    }
}

impl std::fmt::Display for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Problem {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Problem::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| crate::Error::InvalidConfig(format!("unknown problem {s:?}")))
    }
}
