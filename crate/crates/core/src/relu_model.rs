//! Shallow ReLU predictor `h(x) = Σ_k s_k σ(w_kᵀx)` with fixed output signs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::spectral_data::Dataset;

/// Fixed second-layer sign of a neuron.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    /// Sign of a nonzero real.
    pub fn of(v: f64) -> Sign {
        if v > 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Sign>> {
        s.split(',')
            .map(|t| match t.trim() {
                "+" | "+1" | "1" => Ok(Sign::Plus),
                "-" | "-1" => Ok(Sign::Minus),
                other => Err(Error::InvalidArgument(format!("bad sign {other:?}"))),
            })
            .collect()
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        match s {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            _ => Err(format!("sign must be +1 or -1, got {v}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelDoc", try_from = "ModelDoc")]
pub struct ModelState {
    pub weights: Vec<DVector<f64>>,
    pub signs: Vec<Sign>,
    pub iter: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    signs: Vec<Sign>,
    weights: Vec<Vec<f64>>,
    iter: usize,
}

impl From<ModelState> for ModelDoc {
    fn from(m: ModelState) -> Self {
        Self { signs: m.signs, weights: m.weights.iter().map(|w| w.iter().copied().collect()).collect(), iter: m.iter }
    }
}

impl TryFrom<ModelDoc> for ModelState {
    type Error = String;
    fn try_from(doc: ModelDoc) -> std::result::Result<Self, String> {
        let weights: Vec<DVector<f64>> = doc.weights.into_iter().map(DVector::from_vec).collect();
        ModelState::new(weights, doc.signs, doc.iter).map_err(|e| e.to_string())
    }
}

impl ModelState {
    pub fn new(weights: Vec<DVector<f64>>, signs: Vec<Sign>, iter: usize) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one neuron".into()));
        }
        check_dim(weights.len(), signs.len())?;
        let d = weights[0].len();
        for w in &weights {
            check_dim(d, w.len())?;
        }
        Ok(Self { weights, signs, iter })
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.weights[0].len()
    }

    /// `β_k = X w_k` for every neuron.
    pub fn preactivations(&self, x: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        check_dim(self.d(), x.ncols())?;
        Ok(self.weights.iter().map(|w| x * w).collect())
    }
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// `Σ_k s_k σ(β_k)`.
pub fn output_from_preactivations(betas: &[DVector<f64>], signs: &[Sign]) -> DVector<f64> {
    let n = betas.first().map_or(0, |b| b.len());
    let mut h = DVector::zeros(n);
    for (b, s) in betas.iter().zip(signs) {
        let sv = s.value();
        for i in 0..n {
            h[i] += sv * relu(b[i]);
        }
    }
    h
}

pub fn predict(model: &ModelState, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(output_from_preactivations(&model.preactivations(x)?, &model.signs))
}

/// `½‖h(X) − y‖²`.
pub fn empirical_risk(model: &ModelState, ds: &Dataset) -> Result<f64> {
    let h = predict(model, ds.x())?;
    Ok(0.5 * (h - ds.y()).norm_squared())
}

/// `∇_{w_k} R = s_k Xᵀ D(Xw_k)(h − y)` with `D` the strict indicator.
pub fn gradient(model: &ModelState, ds: &Dataset) -> Result<Vec<DVector<f64>>> {
    let betas = model.preactivations(ds.x())?;
    let r = output_from_preactivations(&betas, &model.signs) - ds.y();
    Ok(betas
        .iter()
        .zip(&model.signs)
        .map(|(b, s)| {
            let v = DVector::from_fn(b.len(), |i, _| if b[i] > 0.0 { s.value() * r[i] } else { 0.0 });
            ds.x().tr_mul(&v)
        })
        .collect())
}

/// Strict activation pattern, one row per neuron.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActivationMask {
    rows: Vec<Vec<bool>>,
}

impl ActivationMask {
    pub fn from_preactivations(betas: &[DVector<f64>]) -> Self {
        Self { rows: betas.iter().map(|b| b.iter().map(|v| *v > 0.0).collect()).collect() }
    }

    pub fn from_rows(rows: Vec<Vec<bool>>) -> Self {
        Self { rows }
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn n(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn get(&self, k: usize, i: usize) -> bool {
        self.rows[k][i]
    }

    pub fn row(&self, k: usize) -> &[bool] {
        &self.rows[k]
    }

    /// Indices where neuron `k` is active.
    pub fn active(&self, k: usize) -> Vec<usize> {
        self.rows[k].iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i).collect()
    }
}

pub fn activation_mask(model: &ModelState, ds: &Dataset) -> Result<ActivationMask> {
    Ok(ActivationMask::from_preactivations(&model.preactivations(ds.x())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_data::{sample_dataset, LabelSpec, Spectrum, ZDist};
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn single(w: &[f64]) -> ModelState {
        ModelState::new(vec![v(w)], vec![Sign::Plus], 0).unwrap()
    }

    fn tiny(x: &[f64], y: f64) -> Dataset {
        let d = x.len();
        Dataset::new(DMatrix::from_row_slice(1, d, x), v(&[y]), Spectrum::isotropic(d)).unwrap()
    }

    #[test]
    fn predict_examples() {
        let m = single(&[1.0, 0.0]);
        let x = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -3.0, 1.0]);
        assert_eq!(predict(&m, &x).unwrap().as_slice(), &[2.0, 0.0]);
        let pair = ModelState::new(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])], vec![Sign::Plus, Sign::Minus], 0).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(predict(&pair, &x).unwrap()[0], 0.0);
        assert!(predict(&m, &DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn risk_examples() {
        let ds = tiny(&[2.0, 0.0], 1.0);
        assert_eq!(empirical_risk(&single(&[1.0, 0.0]), &ds).unwrap(), 0.5);
        assert_eq!(empirical_risk(&single(&[0.5, 0.0]), &ds).unwrap(), 0.0);
        let neg = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            v(&[-0.5, -2.0]),
            Spectrum::isotropic(2),
        )
        .unwrap();
        assert_eq!(empirical_risk(&single(&[-1.0, -1.0]), &neg).unwrap(), 0.5 * (0.25 + 4.0));
    }

    #[test]
    fn gradient_examples() {
        let ds = tiny(&[1.0, 0.0], 0.5);
        let g = gradient(&single(&[1.0, 0.0]), &ds).unwrap();
        assert_eq!(g[0].as_slice(), &[0.5, 0.0]);
        let g = gradient(&single(&[-1.0, 0.0]), &ds).unwrap();
        assert_eq!(g[0].as_slice(), &[0.0, 0.0]);
        let g = gradient(&single(&[0.5, 7.0]), &ds).unwrap();
        assert_eq!(g[0].as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn mask_examples() {
        let ds = tiny(&[1.0, 0.0], 1.0);
        assert_eq!(activation_mask(&single(&[0.0, 0.0]), &ds).unwrap().row(0), &[false]);
        assert_eq!(activation_mask(&single(&[0.1, 0.0]), &ds).unwrap().row(0), &[true]);
        let x = DMatrix::from_row_slice(3, 2, &[0.3, -1.2, 0.7, 0.4, -0.9, 0.2]);
        let m = single(&[0.8, 0.5]);
        let b = m.preactivations(&x).unwrap();
        let neg = single(&[-0.8, -0.5]);
        let c = neg.preactivations(&x).unwrap();
        let mb = ActivationMask::from_preactivations(&b);
        let mc = ActivationMask::from_preactivations(&c);
        for i in 0..3 {
            assert_ne!(mb.get(0, i), mc.get(0, i));
        }
    }

    #[test]
    fn model_json_shape() {
        let m = ModelState::new(vec![v(&[1.0, 0.5])], vec![Sign::Minus], 3).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"signs":[-1],"weights":[[1.0,0.5]],"iter":3}"#);
        let back: ModelState = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ModelState>(r#"{"signs":[2],"weights":[[1.0]],"iter":0}"#).is_err());
    }

    fn random_model(ds: &Dataset, m: usize, seed: u64) -> ModelState {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..m).map(|_| DVector::from_fn(ds.d(), |_, _| StandardNormal.sample(&mut rng))).collect();
        let signs = (0..m).map(|k| if k % 2 == 0 { Sign::Plus } else { Sign::Minus }).collect();
        ModelState::new(weights, signs, 0).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gradient_matches_central_differences(seed in 0u64..10_000, m in 1usize..4) {
            let ds = sample_dataset(&Spectrum::isotropic(12), 5, &LabelSpec::uniform_mixed(), ZDist::Gaussian, seed).unwrap();
            let model = random_model(&ds, m, seed ^ 0xabc);
            let betas = model.preactivations(ds.x()).unwrap();
            let scale = ds.x().norm();
            let delta = 1e-6 * scale;
            prop_assume!(betas.iter().all(|b| b.iter().all(|v| v.abs() > delta)));
            let g = gradient(&model, &ds).unwrap();
            let h = 1e-6;
            for k in 0..m {
                for j in 0..ds.d() {
                    let mut plus = model.clone();
                    plus.weights[k][j] += h;
                    let mut minus = model.clone();
                    minus.weights[k][j] -= h;
                    let fd = (empirical_risk(&plus, &ds).unwrap() - empirical_risk(&minus, &ds).unwrap()) / (2.0 * h);
                    let err = (fd - g[k][j]).abs();
                    let gnorm = g[k].amax().max(1e-12);
                    prop_assert!(err <= 1e-4 * g[k][j].abs().max(gnorm), "k={} j={} fd={} g={}", k, j, fd, g[k][j]);
                }
            }
        }

        #[test]
        fn positive_homogeneity(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let ds = sample_dataset(&Spectrum::isotropic(8), 4, &LabelSpec::uniform_mixed(), ZDist::Gaussian, seed).unwrap();
            let model = random_model(&ds, 2, seed);
            let mut scaled = model.clone();
            for w in &mut scaled.weights { *w *= c; }
            let a = predict(&model, ds.x()).unwrap() * c;
            let b = predict(&scaled, ds.x()).unwrap();
            prop_assert!((a - &b).norm() <= 1e-12 * (1.0 + b.norm()));
            prop_assert_eq!(activation_mask(&model, &ds).unwrap(), activation_mask(&scaled, &ds).unwrap());
        }

        #[test]
        fn predict_is_signed_sum_of_relus(seed in 0u64..10_000) {
            let ds = sample_dataset(&Spectrum::isotropic(8), 4, &LabelSpec::uniform_mixed(), ZDist::Gaussian, seed).unwrap();
            let model = random_model(&ds, 3, seed);
            let h = predict(&model, ds.x()).unwrap();
            for i in 0..ds.n() {
                let mut acc = 0.0;
                for k in 0..3 {
                    let pre: f64 = (0..ds.d()).map(|j| ds.x()[(i, j)] * model.weights[k][j]).sum();
                    acc += model.signs[k].value() * pre.max(0.0);
                }
                prop_assert!((acc - h[i]).abs() <= 1e-12 * (1.0 + acc.abs()));
            }
        }
    }
}
