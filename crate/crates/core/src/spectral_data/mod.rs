//! Covariance spectra, synthetic datasets and the data assumptions.

mod assumptions;
mod dataset;

pub use assumptions::{check_assumptions, AssumptionReport, Constants};
pub use dataset::{sample_dataset, sample_dataset_rotated, Dataset, LabelSpec, MagnitudeDist, SignRule, ZDist};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Isotropic,
    Geometric,
    Explicit,
}

/// Eigenvalues of the feature covariance, sorted in descending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub kind: SpectrumKind,
    pub lambda: Vec<f64>,
}

/// Build a spectrum of dimension `d`.
///
/// `params` is empty for `Isotropic`, `[ratio]` for `Geometric`
/// (`λ_i = ratio^i`) and the full eigenvalue list for `Explicit`.
pub fn make_spectrum(kind: SpectrumKind, d: usize, params: &[f64]) -> Result<Spectrum> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let lambda = match kind {
        SpectrumKind::Isotropic => vec![1.0; d],
        SpectrumKind::Geometric => {
            let ratio =
                *params.first().ok_or_else(|| Error::InvalidArgument("geometric spectrum needs a ratio".into()))?;
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::InvalidArgument(format!("geometric ratio must lie in (0, 1], got {ratio}")));
            }
            (0..d).map(|i| ratio.powi(i as i32)).collect()
        }
        SpectrumKind::Explicit => {
            if params.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: params.len() });
            }
            params.to_vec()
        }
    };
    Spectrum::new(kind, lambda)
}

impl Spectrum {
    pub fn new(kind: SpectrumKind, lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidArgument("empty spectrum".into()));
        }
        if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument("eigenvalues must be finite and nonnegative".into()));
        }
        if lambda.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("eigenvalues must be sorted descending".into()));
        }
        if lambda[0] <= 0.0 {
            return Err(Error::InvalidArgument("at least one eigenvalue must be positive".into()));
        }
        Ok(Self { kind, lambda })
    }

    pub fn isotropic(d: usize) -> Self {
        Self { kind: SpectrumKind::Isotropic, lambda: vec![1.0; d.max(1)] }
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn l1(&self) -> f64 {
        self.lambda.iter().sum()
    }

    pub fn l2(&self) -> f64 {
        self.lambda.iter().map(|l| l * l).sum::<f64>().sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.lambda[0]
    }

    pub fn d2(&self) -> f64 {
        let l1 = self.l1();
        l1 * l1 / self.lambda.iter().map(|l| l * l).sum::<f64>()
    }

    pub fn dinf(&self) -> f64 {
        self.l1() / self.linf()
    }
}

/// `(d₂, d∞)`.
pub fn effective_dims(spectrum: &Spectrum) -> (f64, f64) {
    (spectrum.d2(), spectrum.dinf())
}
