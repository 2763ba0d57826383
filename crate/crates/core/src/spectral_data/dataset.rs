use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Spectrum;
use crate::error::{Error, Result};
use crate::linalg::Gram;

const RANK_RTOL: f64 = 1e-10;
const MAX_RESAMPLES: u64 = 5;
const MAX_SIGN_REDRAWS: usize = 1000;

const STREAM_LABELS: u64 = 0;
const STREAM_FEATURES: u64 = 1;
const STREAM_ROTATION: u64 = 100;

/// Distribution of the whitened feature coordinates; all have unit variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZDist {
    Gaussian,
    Rademacher,
    UniformUnitVar,
}

impl ZDist {
    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ZDist::Gaussian => rng.sample(StandardNormal),
            ZDist::Rademacher => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            ZDist::UniformUnitVar => {
                let r = 3.0_f64.sqrt();
                rng.random_range(-r..=r)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeDist {
    /// `|y_i| ~ U[y_min, y_max]`.
    Uniform,
    /// `|y_i| = y_max`.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignRule {
    /// Exactly `round(n · frac_positive)` positive labels.
    Exact { frac_positive: f64 },
    /// Each label is positive independently with probability `frac_positive`.
    Bernoulli { frac_positive: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub y_min: f64,
    pub y_max: f64,
    pub signs: SignRule,
    pub magnitude: MagnitudeDist,
    /// Insist that both label signs occur.
    #[serde(default)]
    pub require_both_signs: bool,
}

impl LabelSpec {
    /// `|y| ~ U[0.1, 1]` with fair random signs, both signs present.
    pub fn uniform_mixed() -> Self {
        Self {
            y_min: 0.1,
            y_max: 1.0,
            signs: SignRule::Bernoulli { frac_positive: 0.5 },
            magnitude: MagnitudeDist::Uniform,
            require_both_signs: true,
        }
    }

    pub fn all_positive(y_min: f64, y_max: f64) -> Self {
        Self {
            y_min,
            y_max,
            signs: SignRule::Exact { frac_positive: 1.0 },
            magnitude: MagnitudeDist::Uniform,
            require_both_signs: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.y_min > 0.0 && self.y_min <= self.y_max && self.y_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "label bounds must satisfy 0 < y_min <= y_max, got [{}, {}]",
                self.y_min, self.y_max
            )));
        }
        let frac = match self.signs {
            SignRule::Exact { frac_positive } | SignRule::Bernoulli { frac_positive } => frac_positive,
        };
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::InvalidArgument(format!("frac_positive {frac} outside [0, 1]")));
        }
        Ok(())
    }

    /// Labels with positives first.
    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.validate()?;
        let positive: Vec<bool> = match self.signs {
            SignRule::Exact { frac_positive } => {
                let n_pos = (n as f64 * frac_positive).round() as usize;
                if self.require_both_signs && (n_pos == 0 || n_pos == n) {
                    return Err(Error::InvalidArgument(format!(
                        "frac_positive {frac_positive} gives {n_pos} of {n} positives but both signs are required"
                    )));
                }
                (0..n).map(|i| i < n_pos).collect()
            }
            SignRule::Bernoulli { frac_positive } => {
                if self.require_both_signs && (n < 2 || frac_positive == 0.0 || frac_positive == 1.0) {
                    return Err(Error::InvalidArgument(
                        "both signs required but the sign rule cannot produce them".into(),
                    ));
                }
                let mut draws = 0;
                loop {
                    let s: Vec<bool> = (0..n).map(|_| rng.random_bool(frac_positive)).collect();
                    let n_pos = s.iter().filter(|b| **b).count();
                    if !self.require_both_signs || (n_pos > 0 && n_pos < n) {
                        break s;
                    }
                    draws += 1;
                    if draws >= MAX_SIGN_REDRAWS {
                        return Err(Error::InvalidArgument("could not draw labels with both signs".into()));
                    }
                }
            }
        };
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for p in positive {
            let mag = match self.magnitude {
                MagnitudeDist::Uniform if self.y_min < self.y_max => rng.random_range(self.y_min..=self.y_max),
                _ => self.y_max,
            };
            if p {
                pos.push(mag);
            } else {
                neg.push(-mag);
            }
        }
        pos.extend(neg);
        Ok(pos)
    }
}

/// Training set with positive labels in the leading rows.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    n_pos: usize,
    spectrum: Spectrum,
    seed: u64,
    z_dist: Option<ZDist>,
    y_min: f64,
    y_max: f64,
    gram: Gram,
}

impl Dataset {
    /// Wrap explicit data. Label bounds default to the realised `min |y|` and `max |y|`.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, spectrum: Spectrum) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one example".into()));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: y.len() });
        }
        if spectrum.dim() != x.ncols() {
            return Err(Error::DimensionMismatch { expected: x.ncols(), found: spectrum.dim() });
        }
        if n > x.ncols() {
            return Err(Error::InvalidArgument(format!("n = {n} exceeds d = {}", x.ncols())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entries in dataset".into()));
        }
        if y.iter().any(|v| *v == 0.0) {
            return Err(Error::InvalidArgument("labels must be nonzero".into()));
        }
        let n_pos = y.iter().take_while(|v| **v > 0.0).count();
        if y.iter().skip(n_pos).any(|v| *v > 0.0) {
            return Err(Error::InvalidArgument("positive labels must precede negative ones".into()));
        }
        check_rank(&x)?;
        let gram = Gram::from_features(&x)?;
        let y_min = y.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let y_max = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(Self { x, y, n_pos, spectrum, seed: 0, z_dist: None, y_min, y_max, gram })
    }

    /// Declare the label bounds used by assumption checks and theorem constants.
    pub fn with_label_bounds(mut self, y_min: f64, y_max: f64) -> Result<Self> {
        if !(y_min > 0.0 && y_min <= y_max) {
            return Err(Error::InvalidArgument(format!("invalid label bounds [{y_min}, {y_max}]")));
        }
        self.y_min = y_min;
        self.y_max = y_max;
        Ok(self)
    }

    /// Same features, labels multiplied by `c > 0`; label bounds scale too.
    pub fn scaled_labels(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument("label scale must be positive".into()));
        }
        let mut out = self.clone();
        out.y *= c;
        out.y_min *= c;
        out.y_max *= c;
        Ok(out)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn d(&self) -> usize {
        self.x.ncols()
    }
    pub fn n_pos(&self) -> usize {
        self.n_pos
    }
    pub fn n_neg(&self) -> usize {
        self.n() - self.n_pos
    }
    pub fn pos_idx(&self) -> Vec<usize> {
        (0..self.n_pos).collect()
    }
    pub fn neg_idx(&self) -> Vec<usize> {
        (self.n_pos..self.n()).collect()
    }
    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn z_dist(&self) -> Option<ZDist> {
        self.z_dist
    }
    /// Declared lower label bound.
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    /// Declared upper label bound.
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn gram(&self) -> &Gram {
        &self.gram
    }
    pub fn l1(&self) -> f64 {
        self.spectrum.l1()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DatasetDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: DatasetDoc = serde_json::from_str(s)?;
        doc.try_into()
    }

    /// CSV with header `row,label,x0,x1,...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["row".to_string(), "label".to_string()];
        header.extend((0..self.d()).map(|j| format!("x{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![i.to_string(), self.y[i].to_string()];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if sv.len() < x.nrows() || !(min > RANK_RTOL * max) {
        return Err(Error::RankDeficient(format!("smallest singular value {min:.3e} vs largest {max:.3e}")));
    }
    Ok(())
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Draw `n` rows `x = Λ^½ z` (identity rotation) with labels per `label_spec`.
pub fn sample_dataset(
    spectrum: &Spectrum,
    n: usize,
    label_spec: &LabelSpec,
    z_dist: ZDist,
    seed: u64,
) -> Result<Dataset> {
    sample_impl(spectrum, n, label_spec, z_dist, seed, false)
}

/// As [`sample_dataset`] but with `x = VΛ^½z` for a seeded Haar rotation `V`.
pub fn sample_dataset_rotated(
    spectrum: &Spectrum,
    n: usize,
    label_spec: &LabelSpec,
    z_dist: ZDist,
    seed: u64,
) -> Result<Dataset> {
    sample_impl(spectrum, n, label_spec, z_dist, seed, true)
}

fn haar_rotation(d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed, STREAM_ROTATION);
    let g = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let rmat = qr.r();
    for j in 0..d {
        if rmat[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn sample_impl(
    spectrum: &Spectrum,
    n: usize,
    label_spec: &LabelSpec,
    z_dist: ZDist,
    seed: u64,
    rotate: bool,
) -> Result<Dataset> {
    let d = spectrum.dim();
    if n == 0 || n > d {
        return Err(Error::InvalidArgument(format!("need 1 <= n <= d, got n = {n}, d = {d}")));
    }
    let y = DVector::from_vec(label_spec.draw(n, &mut rng(seed, STREAM_LABELS))?);
    let sqrt_lambda: Vec<f64> = spectrum.lambda.iter().map(|l| l.sqrt()).collect();
    let rotation = rotate.then(|| haar_rotation(d, seed));

    let mut last_err = None;
    for attempt in 0..=MAX_RESAMPLES {
        let mut r = rng(seed, STREAM_FEATURES + attempt);
        let mut x = DMatrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] = sqrt_lambda[j] * z_dist.draw(&mut r);
            }
        }
        if let Some(v) = &rotation {
            x = x * v.transpose();
        }
        match Dataset::new(x, y.clone(), spectrum.clone()) {
            Ok(mut ds) => {
                ds.seed = seed;
                ds.z_dist = Some(z_dist);
                ds.y_min = label_spec.y_min;
                ds.y_max = label_spec.y_max;
                return Ok(ds);
            }
            Err(e @ Error::RankDeficient(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::RankDeficient("resampling exhausted".into())))
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    n: usize,
    d: usize,
    seed: u64,
    z_dist: Option<ZDist>,
    spectrum: Spectrum,
    y_min: f64,
    y_max: f64,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl From<&Dataset> for DatasetDoc {
    fn from(ds: &Dataset) -> Self {
        Self {
            n: ds.n(),
            d: ds.d(),
            seed: ds.seed,
            z_dist: ds.z_dist,
            spectrum: ds.spectrum.clone(),
            y_min: ds.y_min,
            y_max: ds.y_max,
            x: (0..ds.n()).map(|i| ds.x.row(i).iter().copied().collect()).collect(),
            y: ds.y.iter().copied().collect(),
        }
    }
}

impl TryFrom<DatasetDoc> for Dataset {
    type Error = Error;

    fn try_from(doc: DatasetDoc) -> Result<Self> {
        if doc.x.len() != doc.n || doc.y.len() != doc.n {
            return Err(Error::Schema(format!("expected {} rows and labels", doc.n)));
        }
        if let Some(row) = doc.x.iter().find(|r| r.len() != doc.d) {
            return Err(Error::Schema(format!("row of length {} but d = {}", row.len(), doc.d)));
        }
        let x = DMatrix::from_fn(doc.n, doc.d, |i, j| doc.x[i][j]);
        let spectrum = Spectrum::new(doc.spectrum.kind, doc.spectrum.lambda)?;
        let mut ds = Dataset::new(x, DVector::from_vec(doc.y), spectrum)?.with_label_bounds(doc.y_min, doc.y_max)?;
        ds.seed = doc.seed;
        ds.z_dist = doc.z_dist;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_data::{make_spectrum, SpectrumKind};

    fn fixed_positive() -> LabelSpec {
        LabelSpec {
            y_min: 1.0,
            y_max: 1.0,
            signs: SignRule::Exact { frac_positive: 1.0 },
            magnitude: MagnitudeDist::Fixed,
            require_both_signs: false,
        }
    }

    #[test]
    fn forced_labels() {
        let s = Spectrum::isotropic(4);
        let ds = sample_dataset(&s, 2, &fixed_positive(), ZDist::Gaussian, 7).unwrap();
        assert_eq!(ds.y().as_slice(), &[1.0, 1.0]);
        assert_eq!(ds.n_neg(), 0);
    }

    #[test]
    fn deterministic_in_seed() {
        let s = Spectrum::isotropic(50);
        let spec = LabelSpec::uniform_mixed();
        let a = sample_dataset(&s, 10, &spec, ZDist::Gaussian, 3).unwrap();
        let b = sample_dataset(&s, 10, &spec, ZDist::Gaussian, 3).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        let c = sample_dataset(&s, 10, &spec, ZDist::Gaussian, 4).unwrap();
        assert_ne!(a.x(), c.x());
    }

    #[test]
    fn positives_lead_and_magnitudes_bounded() {
        let s = Spectrum::isotropic(200);
        for seed in 0..10 {
            let ds = sample_dataset(&s, 10, &LabelSpec::uniform_mixed(), ZDist::Gaussian, seed).unwrap();
            assert!(ds.n_pos() > 0 && ds.n_neg() > 0);
            for (i, v) in ds.y().iter().enumerate() {
                assert!(v.abs() >= 0.1 && v.abs() <= 1.0);
                assert_eq!(*v > 0.0, i < ds.n_pos());
            }
        }
    }

    #[test]
    fn zero_label_bound_rejected() {
        let mut spec = LabelSpec::uniform_mixed();
        spec.y_min = 0.0;
        let s = Spectrum::isotropic(20);
        assert!(sample_dataset(&s, 5, &spec, ZDist::Gaussian, 0).is_err());
    }

    #[test]
    fn degenerate_sign_fraction_rejected() {
        let spec = LabelSpec { signs: SignRule::Exact { frac_positive: 0.01 }, ..LabelSpec::uniform_mixed() };
        let s = Spectrum::isotropic(20);
        assert!(sample_dataset(&s, 5, &spec, ZDist::Gaussian, 0).is_err());
    }

    #[test]
    fn rank_deficient_input_rejected() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        assert!(matches!(Dataset::new(x, y, Spectrum::isotropic(3)), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn unordered_labels_rejected() {
        let x = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![-1.0, 1.0]);
        assert!(Dataset::new(x, y, Spectrum::isotropic(2)).is_err());
    }

    #[test]
    fn column_space_identity() {
        for (seed, z) in [(0, ZDist::Gaussian), (1, ZDist::Rademacher), (2, ZDist::UniformUnitVar)] {
            let s = make_spectrum(SpectrumKind::Geometric, 40, &[0.95]).unwrap();
            let ds = sample_dataset_rotated(&s, 8, &LabelSpec::uniform_mixed(), z, seed).unwrap();
            let k = ds.gram().matrix();
            let lu = k.clone().lu();
            let proj = k * lu.solve(ds.x()).unwrap();
            let err = (&proj - ds.x()).norm() / ds.x().norm();
            assert!(err <= 1e-8, "column-space residual {err}");
        }
    }

    #[test]
    fn second_moment_matches_trace() {
        let s = Spectrum::isotropic(2000);
        for z in [ZDist::Gaussian, ZDist::Rademacher, ZDist::UniformUnitVar] {
            let ds = sample_dataset(&s, 50, &LabelSpec::uniform_mixed(), z, 11).unwrap();
            let mean: f64 = (0..ds.n()).map(|i| ds.x().row(i).norm_squared()).sum::<f64>() / ds.n() as f64;
            let ratio = mean / s.l1();
            assert!((ratio - 1.0).abs() < 0.05, "{z:?}: ratio {ratio}");
        }
        let g = make_spectrum(SpectrumKind::Geometric, 500, &[0.99]).unwrap();
        let ds = sample_dataset_rotated(&g, 200, &LabelSpec::uniform_mixed(), ZDist::Gaussian, 5).unwrap();
        let mean: f64 = (0..ds.n()).map(|i| ds.x().row(i).norm_squared()).sum::<f64>() / 200.0;
        assert!((mean / g.l1() - 1.0).abs() < 0.05);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let s = Spectrum::isotropic(30);
        let ds = sample_dataset(&s, 6, &LabelSpec::uniform_mixed(), ZDist::Gaussian, 9).unwrap();
        let back = Dataset::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(back.x(), ds.x());
        assert_eq!(back.y(), ds.y());
        assert_eq!(back.seed(), 9);
        assert_eq!(back.y_min(), 0.1);
        assert_eq!(back.to_json().unwrap(), ds.to_json().unwrap());
    }

    #[test]
    fn csv_export_header() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.5]);
        let ds = Dataset::new(x, DVector::from_vec(vec![1.0, -0.5]), Spectrum::isotropic(3)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "row,label,x0,x1,x2\n0,1,1,0,0\n1,-0.5,0,1,0.5\n");
    }
}
