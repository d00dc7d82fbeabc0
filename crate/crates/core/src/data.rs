//! Datasets of `(context, target, label)` records and their CSV form.
//!
//! CSV layout: header `context,target` or `context,target,label` (for
//! multi-dimensional contexts the context columns are `context_0, context_1, …`).
//! Values are decimal in shortest round-trip form, UTF-8, LF line endings.
//! Labels are 0-based class indices; an empty label field means "unlabeled".

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub context_dim: usize,
    /// Row-major `len × context_dim`.
    pub contexts: Vec<f64>,
    pub targets: Vec<f64>,
    /// Either empty (no labels) or one entry per record.
    pub labels: Vec<Option<usize>>,
}

impl Dataset {
    pub fn new(context_dim: usize, contexts: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if context_dim == 0 || contexts.len() != context_dim * targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} context values do not match {} targets of width {context_dim}",
                contexts.len(),
                targets.len()
            )));
        }
        Ok(Self { context_dim, contexts, targets, labels: Vec::new() })
    }

    /// Scalar contexts.
    pub fn from_pairs(contexts: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        Self::new(1, contexts, targets)
    }

    pub fn with_labels(mut self, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} records",
                labels.len(),
                self.len()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn context(&self, i: usize) -> &[f64] {
        &self.contexts[i * self.context_dim..(i + 1) * self.context_dim]
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.get(i).copied().flatten()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    pub fn is_fully_labeled(&self) -> bool {
        !self.labels.is_empty() && self.labels.iter().all(Option::is_some)
    }

    /// Records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let d = self.context_dim;
        let mut contexts = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            contexts.extend_from_slice(self.context(i));
        }
        Dataset {
            context_dim: d,
            contexts,
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.labels[i]).collect()
            },
        }
    }

    /// Smallest and largest value of context coordinate `dim`.
    pub fn context_range(&self, dim: usize) -> (f64, f64) {
        self.contexts
            .iter()
            .skip(dim)
            .step_by(self.context_dim)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.context_dim == 1 {
            out.push_str("context");
        } else {
            let cols: Vec<String> = (0..self.context_dim).map(|k| format!("context_{k}")).collect();
            out.push_str(&cols.join(","));
        }
        out.push_str(",target");
        let labeled = !self.labels.is_empty();
        if labeled {
            out.push_str(",label");
        }
        out.push('\n');
        for i in 0..self.len() {
            for (k, x) in self.context(i).iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write!(out, "{x}").unwrap();
            }
            write!(out, ",{}", self.targets[i]).unwrap();
            if labeled {
                out.push(',');
                if let Some(c) = self.labels[i] {
                    write!(out, "{c}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let labeled = cols.last() == Some(&"label");
        let context_dim = cols.len() - 1 - usize::from(labeled);
        if context_dim == 0 || cols[context_dim] != "target" {
            return Err(Error::Parse { line: 1, message: format!("unexpected header {header:?}") });
        }
        let mut contexts = Vec::new();
        let mut targets = Vec::new();
        let mut labels = Vec::new();
        for (k, line) in lines.enumerate() {
            let line_no = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|e| Error::Parse { line: line_no, message: format!("{s:?}: {e}") })
            };
            for f in &fields[..context_dim] {
                contexts.push(num(f)?);
            }
            targets.push(num(fields[context_dim])?);
            if labeled {
                let f = fields[context_dim + 1];
                labels.push(if f.is_empty() {
                    None
                } else {
                    Some(f.parse::<usize>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("label {f:?}: {e}"),
                    })?)
                });
            }
        }
        let mut data = Dataset::new(context_dim, contexts, targets)?;
        if labeled {
            data.labels = labels;
        }
        Ok(data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Per-coordinate affine standardization `z = (x − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Fit to row-major `values` of width `dim`. Degenerate coordinates get unit scale.
    pub fn fit(values: &[f64], dim: usize) -> Self {
        let n = values.len() / dim;
        let mut mean = vec![0.0; dim];
        let mut std = vec![1.0; dim];
        if n == 0 {
            return Self { mean, std };
        }
        for k in 0..dim {
            let col = values.iter().skip(k).step_by(dim);
            let m = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            mean[k] = m;
            if var > 0.0 {
                std[k] = var.sqrt();
            }
        }
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let d = self.dim();
        values
            .iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i % d]) / self.std[i % d])
            .collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        let d = self.dim();
        values
            .iter()
            .enumerate()
            .map(|(i, z)| self.mean[i % d] + self.std[i % d] * z)
            .collect()
    }
}
