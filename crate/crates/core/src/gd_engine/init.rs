use log::warn;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::relu_model::{ModelState, Sign};
use crate::spectral_data::{Constants, Dataset};

const STREAM_INIT: u64 = 200;
const STREAM_ASSIGN: u64 = 201;

/// `y_min/(2C_α)`.
pub fn eps_single(ds: &Dataset, c: &Constants) -> f64 {
    ds.y_min() / (2.0 * c.c_alpha)
}

/// `y_min/(4C_α)`.
pub fn eps_two(ds: &Dataset, c: &Constants) -> f64 {
    ds.y_min() / (4.0 * c.c_alpha)
}

/// `y_min/(2C_α·m)`.
pub fn eps_multi(ds: &Dataset, c: &Constants, m: usize) -> f64 {
    ds.y_min() / (2.0 * c.c_alpha * m as f64)
}

fn check_eps(ds: &Dataset, eps: &DVector<f64>) -> Result<()> {
    check_dim(ds.n(), eps.len())?;
    if eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidArgument("initial preactivations must be strictly positive".into()));
    }
    Ok(())
}

/// Weights in the row span with prescribed preactivations `Xw = target`.
fn span_weights(ds: &Dataset, target: &DVector<f64>) -> DVector<f64> {
    ds.x().tr_mul(&ds.gram().solve(target))
}

/// `w⁰ = Xᵀ(XXᵀ)⁻¹ε`, a single positive neuron.
pub fn init_single(ds: &Dataset, eps: &DVector<f64>) -> Result<ModelState> {
    check_eps(ds, eps)?;
    ModelState::new(vec![span_weights(ds, eps)], vec![Sign::Plus], 0)
}

/// Positive and negative neuron with `Xw_⊕⁰ = ε_⊕`, `Xw_⊖⁰ = ε_⊖`.
pub fn init_two(ds: &Dataset, eps_plus: &DVector<f64>, eps_minus: &DVector<f64>) -> Result<ModelState> {
    check_eps(ds, eps_plus)?;
    check_eps(ds, eps_minus)?;
    ModelState::new(vec![span_weights(ds, eps_plus), span_weights(ds, eps_minus)], vec![Sign::Plus, Sign::Minus], 0)
}

fn check_assignment(ds: &Dataset, assignment: &[usize], signs: &[Sign]) -> Result<()> {
    check_dim(ds.n(), assignment.len())?;
    for (i, &a) in assignment.iter().enumerate() {
        let s = signs
            .get(a)
            .ok_or_else(|| Error::InvalidArgument(format!("example {i} assigned to missing neuron {a}")))?;
        if s.value() * ds.y()[i] <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "example {i} (label {}) assigned to a neuron of the opposite sign",
                ds.y()[i]
            )));
        }
    }
    Ok(())
}

/// `A_k y` for every neuron: `(A_k)_ii = 0` if `a_i = k` or `s_k y_i < 0`,
/// otherwise `−sign(y_i)`.
pub fn disjoint_offsets(ds: &Dataset, assignment: &[usize], signs: &[Sign]) -> Result<Vec<DVector<f64>>> {
    check_assignment(ds, assignment, signs)?;
    let y = ds.y();
    Ok((0..signs.len())
        .map(|k| {
            DVector::from_fn(ds.n(), |i, _| {
                if assignment[i] == k || signs[k].value() * y[i] < 0.0 {
                    0.0
                } else {
                    -y[i].signum() * y[i]
                }
            })
        })
        .collect())
}

/// `w_k⁰ = Xᵀ(XXᵀ)⁻¹(A_k y / C_g + ε_k)`.
pub fn init_multi_disjoint(
    ds: &Dataset,
    assignment: &[usize],
    signs: &[Sign],
    c_g_hat: f64,
    eps: &[DVector<f64>],
) -> Result<ModelState> {
    check_dim(signs.len(), eps.len())?;
    if !(c_g_hat > 0.0) {
        return Err(Error::InvalidArgument("C_g must be positive".into()));
    }
    for e in eps {
        check_eps(ds, e)?;
    }
    let offsets = disjoint_offsets(ds, assignment, signs)?;
    let weights = offsets.iter().zip(eps).map(|(a, e)| span_weights(ds, &(a / c_g_hat + e))).collect();
    ModelState::new(weights, signs.to_vec(), 0)
}

/// I.i.d. `N(0, scale²)` weights.
pub fn init_random(ds: &Dataset, signs: &[Sign], scale: f64, seed: u64) -> Result<ModelState> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("random init scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT);
    let weights =
        signs.iter().map(|_| DVector::from_fn(ds.d(), |_, _| scale * rng.sample::<f64, _>(StandardNormal))).collect();
    ModelState::new(weights, signs.to_vec(), 0)
}

/// Uniformly random assignment of each example to a neuron whose sign
/// matches its label.
pub fn random_assignment(ds: &Dataset, signs: &[Sign], seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_ASSIGN);
    ds.y()
        .iter()
        .map(|&y| {
            let options: Vec<usize> = (0..signs.len()).filter(|&k| signs[k].value() * y > 0.0).collect();
            if options.is_empty() {
                Err(Error::InvalidArgument(format!("no neuron has the sign of label {y}")))
            } else {
                Ok(options[rng.random_range(0..options.len())])
            }
        })
        .collect()
}

/// Serializable description of an initialisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    SingleEps { eps: Vec<f64> },
    TwoEps { eps_plus: Vec<f64>, eps_minus: Vec<f64> },
    MultiDisjoint { assignment: Vec<usize>, signs: Vec<Sign>, c_g: f64, eps: Vec<Vec<f64>> },
    Random { signs: Vec<Sign>, scale: f64, seed: u64 },
}

impl InitSpec {
    pub fn build(&self, ds: &Dataset) -> Result<ModelState> {
        let vecd = |v: &[f64]| DVector::from_row_slice(v);
        match self {
            InitSpec::SingleEps { eps } => init_single(ds, &vecd(eps)),
            InitSpec::TwoEps { eps_plus, eps_minus } => init_two(ds, &vecd(eps_plus), &vecd(eps_minus)),
            InitSpec::MultiDisjoint { assignment, signs, c_g, eps } => {
                let eps: Vec<_> = eps.iter().map(|e| vecd(e)).collect();
                init_multi_disjoint(ds, assignment, signs, *c_g, &eps)
            }
            InitSpec::Random { signs, scale, seed } => init_random(ds, signs, *scale, *seed),
        }
    }

    /// Log a warning when the offsets exceed the size the theory asks for.
    pub fn warn_if_large(&self, ds: &Dataset, c: &Constants) {
        let (limit, eps): (f64, Vec<f64>) = match self {
            InitSpec::SingleEps { eps } => (ds.y_min() / c.c_alpha, eps.clone()),
            InitSpec::TwoEps { eps_plus, eps_minus } => {
                (ds.y_min() / (2.0 * c.c_alpha), eps_plus.iter().chain(eps_minus).copied().collect())
            }
            InitSpec::MultiDisjoint { eps, signs, .. } => {
                (ds.y_min() / (c.c_alpha * signs.len() as f64), eps.iter().flatten().copied().collect())
            }
            InitSpec::Random { .. } => return,
        };
        if let Some(e) = eps.iter().find(|e| **e > limit) {
            warn!("initial offset {e:.3e} exceeds the recommended {limit:.3e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_model::{predict, ModelState};
    use crate::spectral_data::{sample_dataset, LabelSpec, Spectrum, ZDist};
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn hand_single_init() {
        let ds =
            Dataset::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]), v(&[1.0, -1.0]), Spectrum::isotropic(2))
                .unwrap();
        let s = init_single(&ds, &v(&[0.1, 0.2])).unwrap();
        assert!((s.weights[0][0] - 0.1).abs() < 1e-15);
        assert!((s.weights[0][1] - 0.1).abs() < 1e-15);
        assert!(init_single(&ds, &v(&[0.1, 0.0])).is_err());
    }

    #[test]
    fn orthonormal_rows() {
        let ds = Dataset::new(DMatrix::identity(3, 5), v(&[1.0, 0.5, -1.0]), Spectrum::isotropic(5)).unwrap();
        let s = init_single(&ds, &DVector::repeat(3, 1.0)).unwrap();
        assert_eq!(s.weights[0], ds.x().tr_mul(&DVector::repeat(3, 1.0)));
    }

    #[test]
    fn init_reproduces_targets() {
        let ds =
            sample_dataset(&Spectrum::isotropic(300), 10, &LabelSpec::uniform_mixed(), ZDist::Gaussian, 1).unwrap();
        let eps = DVector::from_fn(10, |i, _| 0.01 + 0.001 * i as f64);
        let s = init_two(&ds, &eps, &eps).unwrap();
        for w in &s.weights {
            let b = ds.x() * w;
            assert!((b - &eps).norm() <= 1e-8 * eps.norm());
        }
        assert!(predict(&s, ds.x()).unwrap().amax() < 1e-15);
    }

    #[test]
    fn disjoint_offsets_two_neurons() {
        let ds = sample_dataset(&Spectrum::isotropic(60), 6, &LabelSpec::uniform_mixed(), ZDist::Gaussian, 2).unwrap();
        let signs = [Sign::Plus, Sign::Minus];
        let a: Vec<usize> = ds.y().iter().map(|y| if *y > 0.0 { 0 } else { 1 }).collect();
        let off = disjoint_offsets(&ds, &a, &signs).unwrap();
        assert!(off.iter().all(|o| o.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn disjoint_offsets_four_neurons() {
        let ds =
            sample_dataset(&Spectrum::isotropic(500), 10, &LabelSpec::uniform_mixed(), ZDist::Gaussian, 4).unwrap();
        let signs = [Sign::Plus, Sign::Plus, Sign::Minus, Sign::Minus];
        let a = random_assignment(&ds, &signs, 4).unwrap();
        let eps: Vec<_> = (0..4).map(|_| DVector::repeat(10, 1e-3)).collect();
        let s = init_multi_disjoint(&ds, &a, &signs, 1.2, &eps).unwrap();
        let betas: Vec<_> = s.weights.iter().map(|w| ds.x() * w).collect();
        for i in 0..10 {
            assert!((betas[a[i]][i] - 1e-3).abs() < 1e-10);
            for k in 0..4 {
                let same_sign = signs[k].value() * ds.y()[i] > 0.0;
                if k != a[i] && same_sign {
                    let expect = -ds.y()[i].abs() / 1.2 + 1e-3;
                    assert!((betas[k][i] - expect).abs() < 1e-10);
                    assert!(betas[k][i] < 0.0);
                }
            }
        }
        let mut bad = a.clone();
        bad[0] = if signs[a[0]] == Sign::Plus { 2 } else { 0 };
        assert!(init_multi_disjoint(&ds, &bad, &signs, 1.2, &eps).is_err());
    }

    #[test]
    fn random_init_is_seeded() {
        let ds = sample_dataset(&Spectrum::isotropic(50), 10, &LabelSpec::uniform_mixed(), ZDist::Gaussian, 0).unwrap();
        let signs = [Sign::Plus, Sign::Minus];
        let a = init_random(&ds, &signs, 2e-6f64.sqrt(), 5).unwrap();
        let b = init_random(&ds, &signs, 2e-6f64.sqrt(), 5).unwrap();
        assert_eq!(a, b);
        let sd = (a.weights[0].norm_squared() / 50.0).sqrt();
        assert!(sd > 0.5e-3 && sd < 2.5e-3);
        let tiny: ModelState = init_random(&ds, &signs, 1e-300, 5).unwrap();
        assert!(tiny.preactivations(ds.x()).unwrap().iter().all(|b| b.amax() < 1e-290));
    }
}
