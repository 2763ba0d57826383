use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Where a set of constants came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsSource {
    /// Built-in defaults with the fallback `C_g = 3`.
    #[default]
    Default,
    /// `C_g` taken from the Gram spectrum of a dataset.
    Estimated,
    /// At least one value was set by the caller.
    User,
}

/// The theory's unnamed constants. None of these is pinned down analytically;
/// the defaults are the smallest values satisfying the required orderings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    #[serde(rename = "C_g")]
    pub c_g: f64,
    #[serde(rename = "C_alpha")]
    pub c_alpha: f64,
    #[serde(rename = "C_0")]
    pub c_0: f64,
    #[serde(rename = "C_y")]
    pub c_y: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(default)]
    pub source: ConstantsSource,
}

pub const FALLBACK_C_G: f64 = 3.0;

impl Default for Constants {
    fn default() -> Self {
        Self::from_c_g(FALLBACK_C_G)
    }
}

impl Constants {
    /// Defaults derived from a given `C_g`: `C_y = 2`, `C = 10`,
    /// `C_α = 4·max(C_g², C_y·C_g)`, `C₀ = 4·C_α²`.
    pub fn from_c_g(c_g: f64) -> Self {
        let c_y = 2.0;
        let c_alpha = 4.0 * (c_g * c_g).max(c_y * c_g);
        Self { c_g, c_alpha, c_0: 4.0 * c_alpha * c_alpha, c_y, c: 10.0, source: ConstantsSource::Default }
    }

    /// Defaults with `C_g` estimated from the dataset's Gram spectrum,
    /// falling back to 3 if the estimate is unusable.
    pub fn for_dataset(ds: &Dataset) -> Self {
        let g = ds.gram();
        let l1 = ds.l1();
        let est = (g.mu_max() / l1).max(l1 / g.mu_min());
        if est.is_finite() && est >= 1.0 {
            Self { source: ConstantsSource::Estimated, ..Self::from_c_g(est) }
        } else {
            Self::default()
        }
    }

    /// Apply `key=value` overrides (`C_g`, `C_alpha`, `C_0`, `C_y`, `C`).
    /// Dependent constants that were not overridden are re-derived.
    pub fn with_overrides(mut self, overrides: &[(String, f64)]) -> Result<Self> {
        let set = |name: &str| overrides.iter().rev().find(|(k, _)| k == name).map(|(_, v)| *v);
        let (g, a, z, y, c) = (set("C_g"), set("C_alpha"), set("C_0"), set("C_y"), set("C"));
        if let Some((k, _)) =
            overrides.iter().find(|(k, _)| !["C_g", "C_alpha", "C_0", "C_y", "C"].contains(&k.as_str()))
        {
            return Err(Error::InvalidArgument(format!("unknown constant {k}")));
        }
        if overrides.is_empty() {
            return Ok(self);
        }
        if let Some(v) = g {
            self.c_g = v;
        }
        if let Some(v) = y {
            self.c_y = v;
        }
        if let Some(v) = c {
            self.c = v;
        }
        self.c_alpha = a.unwrap_or(if g.is_some() || y.is_some() {
            4.0 * (self.c_g * self.c_g).max(self.c_y * self.c_g)
        } else {
            self.c_alpha
        });
        self.c_0 = z.unwrap_or(if a.is_some() || g.is_some() || y.is_some() {
            4.0 * self.c_alpha * self.c_alpha
        } else {
            self.c_0
        });
        self.source = ConstantsSource::User;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.c_g, self.c_alpha, self.c_0, self.c_y, self.c].iter().all(|v| v.is_finite() && *v > 0.0)
            && self.c_g >= 1.0
            && self.c_alpha >= (self.c_g * self.c_g).max(self.c_y * self.c_g)
            && self.c_0 >= self.c_alpha * self.c_alpha
            && self.c_y >= 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "constants violate C_g >= 1, C_alpha >= max(C_g^2, C_y C_g), C_0 >= C_alpha^2, C_y >= 2: {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub label_bounds_hold: bool,
    /// `min(min|y| − y_min, y_max − max|y|)`; negative when violated.
    pub label_bounds_margin: f64,
    pub d2: f64,
    pub d2_required: f64,
    pub dinf: f64,
    pub dinf_required: f64,
    pub dimension_hold: bool,
    /// `min(d₂/required, d∞/required)`; below 1 when violated.
    pub dimension_margin: f64,
    pub constants: Constants,
}

/// Check the bounded-label and effective-dimension assumptions.
pub fn check_assumptions(ds: &Dataset, constants: &Constants) -> AssumptionReport {
    let (lo, hi) = (ds.y_min(), ds.y_max());
    let abs_min = ds.y().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let abs_max = ds.y().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let label_bounds_margin = (abs_min - lo).min(hi - abs_max);

    let n = ds.n() as f64;
    let ratio = hi / lo;
    let c0 = constants.c_0;
    let d2_required = c0 * c0 * n * n * ratio * ratio;
    let dinf_required = c0 * n.powf(1.5) * ratio;
    let (d2, dinf) = super::effective_dims(ds.spectrum());
    let dimension_margin = (d2 / d2_required).min(dinf / dinf_required);
    AssumptionReport {
        label_bounds_hold: label_bounds_margin >= 0.0,
        label_bounds_margin,
        d2,
        d2_required,
        dinf,
        dinf_required,
        dimension_hold: d2 >= d2_required && dinf >= dinf_required,
        dimension_margin,
        constants: *constants,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_data::{sample_dataset, LabelSpec, MagnitudeDist, SignRule, Spectrum, ZDist};

    fn unit_labels() -> LabelSpec {
        LabelSpec {
            y_min: 1.0,
            y_max: 1.0,
            signs: SignRule::Exact { frac_positive: 2.0 / 3.0 },
            magnitude: MagnitudeDist::Fixed,
            require_both_signs: false,
        }
    }

    fn c0_two() -> Constants {
        Constants { c_g: 1.0, c_alpha: 1.0, c_0: 2.0, c_y: 2.0, c: 10.0, source: ConstantsSource::User }
    }

    #[test]
    fn small_dimension_fails() {
        let ds = sample_dataset(&Spectrum::isotropic(4), 3, &unit_labels(), ZDist::Gaussian, 0).unwrap();
        let r = check_assumptions(&ds, &c0_two());
        assert_eq!(r.d2_required, 36.0);
        assert!(!r.dimension_hold);
        assert!(r.label_bounds_hold);
        assert_eq!(r.label_bounds_margin, 0.0);
    }

    #[test]
    fn huge_dimension_holds() {
        let ds = sample_dataset(&Spectrum::isotropic(1_000_000), 3, &unit_labels(), ZDist::Rademacher, 0).unwrap();
        let r = check_assumptions(&ds, &c0_two());
        assert!(r.dimension_hold);
        assert!((r.dinf_required - 2.0 * 3f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn default_constants_are_consistent() {
        let c = Constants::default();
        c.validate().unwrap();
        assert_eq!(c.c_alpha, 36.0);
        assert_eq!(c.c_0, 4.0 * 36.0 * 36.0);
        let c = Constants::from_c_g(1.2);
        c.validate().unwrap();
        assert_eq!(c.c_alpha, 4.0 * 2.4);
    }

    #[test]
    fn overrides_rederive_dependents() {
        let c = Constants::default().with_overrides(&[("C_g".into(), 1.0)]).unwrap();
        assert_eq!(c.c_alpha, 8.0);
        assert_eq!(c.c_0, 256.0);
        assert!(Constants::default().with_overrides(&[("C_y".into(), 1.0)]).is_err());
        assert!(Constants::default().with_overrides(&[("bogus".into(), 1.0)]).is_err());
    }
}
