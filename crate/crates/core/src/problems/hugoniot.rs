//! Shock Hugoniot `Us–Up` records with a regime label, and a synthetic
//! three-branch surrogate.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const HEADER: &str = "up_km_s,us_km_s,regime";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Elastic,
    Plastic,
    PhaseTransformation,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Elastic, Regime::Plastic, Regime::PhaseTransformation];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Elastic => "elastic",
            Regime::Plastic => "plastic",
            Regime::PhaseTransformation => "phase_transformation",
        }
    }

    /// Class label used in datasets.
    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown regime {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HugoniotRecord {
    pub up: f64,
    pub us: f64,
    pub regime: Regime,
}

pub fn to_dataset(records: &[HugoniotRecord]) -> Dataset {
    Dataset::from_pairs(records.iter().map(|r| r.up).collect(), records.iter().map(|r| r.us).collect())
        .and_then(|d| d.with_labels(records.iter().map(|r| Some(r.regime.label())).collect()))
        .expect("paired columns")
}

pub fn parse_hugoniot(text: &str) -> Result<Vec<HugoniotRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        other => {
            return Err(Error::Parse { line: 1, message: format!("expected header {HEADER:?}, found {other:?}") })
        }
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", f.len())));
        }
        let up: f64 = f[0].parse().map_err(|e| err(format!("up {:?}: {e}", f[0])))?;
        let us: f64 = f[1].parse().map_err(|e| err(format!("us {:?}: {e}", f[1])))?;
        let regime: Regime = f[2].parse().map_err(err)?;
        if !(up >= 0.0) || !(us > 0.0) {
            return Err(err(format!("velocities out of range: up={up}, us={us}")));
        }
        out.push(HugoniotRecord { up, us, regime });
    }
    Ok(out)
}

pub fn load_hugoniot(path: impl AsRef<Path>) -> Result<Dataset> {
    Ok(to_dataset(&parse_hugoniot(&std::fs::read_to_string(path)?)?))
}

pub fn hugoniot_csv(records: &[HugoniotRecord]) -> String {
    let mut out = format!("{HEADER}\n");
    for r in records {
        writeln!(out, "{},{},{}", r.up, r.us, r.regime.name()).unwrap();
    }
    out
}

pub fn save_hugoniot(records: &[HugoniotRecord], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, hugoniot_csv(records))?;
    Ok(())
}

/// Linear branch `Us = intercept + slope·Up` over an `Up` interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub intercept: f64,
    pub slope: f64,
    pub up_min: f64,
    pub up_max: f64,
}

impl Branch {
    pub fn us(&self, up: f64) -> f64 {
        self.intercept + self.slope * up
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub branches: [Branch; 3],
    pub scatter: f64,
    pub n_per_regime: usize,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            branches: [
                Branch { intercept: 12.4, slope: 0.3, up_min: 0.0, up_max: 2.0 },
                Branch { intercept: 8.6, slope: 0.9, up_min: 1.0, up_max: 3.6 },
                Branch { intercept: 8.0, slope: 1.0, up_min: 2.2, up_max: 5.0 },
            ],
            scatter: 0.15,
            n_per_regime: 40,
        }
    }
}

impl SurrogateParams {
    pub fn branch(&self, regime: Regime) -> &Branch {
        &self.branches[regime.label()]
    }
}

/// `n_per_regime` records per branch, `Up` uniform on the branch interval,
/// Gaussian scatter on `Us`. Regime `k` draws from stream `k`.
pub fn gen_hugoniot_surrogate(p: &SurrogateParams, seed: u64) -> Result<Vec<HugoniotRecord>> {
    if p.branches.iter().any(|b| b.slope < 0.0 || !(b.up_max > b.up_min) || b.up_min < 0.0) {
        return Err(Error::InvalidConfig("branches need non-negative slopes and ordered Up ranges".into()));
    }
    let noise = Normal::new(0.0, p.scatter).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = Vec::with_capacity(3 * p.n_per_regime);
    for regime in Regime::ALL {
        let b = p.branch(regime);
        let mut rng = rng::stream(seed, Purpose::Data, regime.label() as u32);
        for _ in 0..p.n_per_regime {
            let up = rng.random_range(b.up_min..b.up_max);
            let us = b.us(up) + noise.sample(&mut rng);
            out.push(HugoniotRecord { up, us, regime });
        }
    }
    Ok(out)
}
