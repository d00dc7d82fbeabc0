//! One-dimensional densities tabulated on a grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trapezoid rule for samples `y` at abscissae `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Running trapezoid integral from `x[0]`; the first entry is zero.
pub fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), y.len());
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..x.len() {
        acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
        out.push(acc);
    }
    out
}

/// `n` equispaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityCurve {
    pub fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        check_grid(&grid)?;
        if density.len() != grid.len() {
            return Err(Error::InvalidInput("density and grid lengths differ".into()));
        }
        if density.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput("densities must be finite and non-negative".into()));
        }
        Ok(Self { grid, density })
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Rescaled to unit trapezoid integral.
    pub fn normalized(mut self) -> Result<Self> {
        let z = self.integral();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::InvalidInput(format!("cannot normalize a density with integral {z}")));
        }
        self.density.iter_mut().for_each(|p| *p /= z);
        Ok(self)
    }

    /// Grid point of the largest density.
    pub fn argmax(&self) -> f64 {
        let mut best = 0;
        for (i, p) in self.density.iter().enumerate() {
            if *p > self.density[best] {
                best = i;
            }
        }
        self.grid[best]
    }

    /// Grid points that are strict local maxima.
    pub fn local_maxima(&self) -> Vec<f64> {
        let p = &self.density;
        (1..p.len().saturating_sub(1))
            .filter(|&i| p[i] > p[i - 1] && p[i] >= p[i + 1])
            .map(|i| self.grid[i])
            .collect()
    }

    pub fn to_csv(&self, value_name: &str) -> String {
        let mut out = format!("u,{value_name}\n");
        for (u, p) in self.grid.iter().zip(&self.density) {
            out.push_str(&format!("{u},{p}\n"));
        }
        out
    }
}

/// Strictly increasing with at least two points.
pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("grid must be strictly increasing with at least two points".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_for_linear_functions() {
        let x = linspace(-1.0, 2.0, 7);
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        assert!((trapezoid(&x, &y) - 7.5).abs() < 1e-14);
        let c = cumulative_trapezoid(&x, &y);
        assert_eq!(c[0], 0.0);
        assert!((c[6] - 7.5).abs() < 1e-14);
    }

    #[test]
    fn linspace_endpoints_are_exact() {
        let g = linspace(-3.0, 3.0, 6001);
        assert_eq!(g[0], -3.0);
        assert_eq!(g[3000], 0.0);
        assert_eq!(g[4000], 1.0);
        assert_eq!(g[6000], 3.0);
    }

    #[test]
    fn normalization_and_validation() {
        let c = DensityCurve::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0]).unwrap();
        assert!((c.normalized().unwrap().integral() - 1.0).abs() < 1e-15);
        assert!(DensityCurve::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(DensityCurve::new(vec![0.0, 1.0], vec![-1.0, 1.0]).is_err());
    }
}
