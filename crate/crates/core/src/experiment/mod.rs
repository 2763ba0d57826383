//! Scenario presets, the experiment runner and artifact emission.

mod plot;
mod runner;
mod verify;

pub use plot::{emit_plot, read_aggregate, render_svg, AggregateRow};
pub use runner::{
    generate_datasets, run_experiment, ArtifactManifest, FileEntry, GramSummary, SeedError, SeedSummary, SweepResult,
};
pub use verify::{verify_artifacts, CheckOutcome, VerifyReport};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relu_model::Sign;
use crate::spectral_data::{Constants, LabelSpec, SpectrumKind, ZDist};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Variance of the small random initialisation used by the failure presets.
const RANDOM_INIT_VARIANCE: f64 = 2e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SingleThm,
    SingleSweepD,
    TwoGoodInit,
    TwoRandomInit,
    TwoLowDim,
    MultiDisjoint,
    MultiSharedSignFail,
    SingleModerateDim,
    GramConc,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::SingleThm,
        Scenario::SingleSweepD,
        Scenario::TwoGoodInit,
        Scenario::TwoRandomInit,
        Scenario::TwoLowDim,
        Scenario::MultiDisjoint,
        Scenario::MultiSharedSignFail,
        Scenario::SingleModerateDim,
        Scenario::GramConc,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::InvalidArgument(format!("unknown scenario {s:?}")))
    }

    pub fn is_sweep(self) -> bool {
        self == Scenario::SingleSweepD
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    /// The initialisation prescribed by the theory for the model's arity.
    Theorem,
    Random {
        scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n: usize,
    /// One dimension, or the sweep grid.
    pub dims: Vec<usize>,
    pub spectrum: SpectrumKind,
    #[serde(default)]
    pub spectrum_params: Vec<f64>,
    pub labels: LabelSpec,
    pub z_dist: ZDist,
    pub signs: Vec<Sign>,
    pub init: InitKind,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default = "one")]
    pub stride: usize,
    pub seeds: Vec<u64>,
    /// Overrides applied on top of the per-dataset estimated constants.
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    pub output_dir: PathBuf,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn preset(scenario: Scenario) -> Self {
        let signs = |s: &str| Sign::parse_list(s).expect("preset sign list");
        let mut cfg = Self {
            scenario,
            n: 10,
            dims: vec![2000],
            spectrum: SpectrumKind::Isotropic,
            spectrum_params: Vec::new(),
            labels: LabelSpec::uniform_mixed(),
            z_dist: ZDist::Gaussian,
            signs: signs("+"),
            init: InitKind::Theorem,
            eta: None,
            max_iters: None,
            stride: 1,
            seeds: (0..20).collect(),
            constants: BTreeMap::new(),
            output_dir: PathBuf::from("out").join(scenario.name()),
        };
        let random = InitKind::Random { scale: RANDOM_INIT_VARIANCE.sqrt() };
        match scenario {
            Scenario::SingleThm | Scenario::GramConc => {}
            Scenario::SingleSweepD => cfg.dims = vec![500, 1000, 2000, 4000, 8000],
            Scenario::TwoGoodInit => cfg.signs = signs("+,-"),
            Scenario::TwoRandomInit => {
                cfg.signs = signs("+,-");
                cfg.init = random;
                cfg.seeds = (0..50).collect();
            }
            Scenario::TwoLowDim => {
                cfg.signs = signs("+,-");
                cfg.dims = vec![15];
            }
            Scenario::MultiDisjoint => {
                cfg.signs = signs("+,+,-,-");
                cfg.seeds = (0..10).collect();
            }
            Scenario::MultiSharedSignFail => {
                cfg.signs = signs("+,+,-,-");
                cfg.init = random;
            }
            Scenario::SingleModerateDim => {
                cfg.dims = vec![50];
                cfg.init = random;
                cfg.eta = Some(1e-4);
                cfg.stride = 10;
                cfg.seeds = vec![0, 1];
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.n == 0 || self.dims.is_empty() || self.dims.iter().any(|&d| d < self.n) {
            return bad(format!("need 1 <= n <= d, got n = {} and d = {:?}", self.n, self.dims));
        }
        if !self.scenario.is_sweep() && self.dims.len() != 1 {
            return bad(format!("scenario {} takes a single dimension", self.scenario.name()));
        }
        if self.scenario.is_sweep() && self.dims.len() < 4 {
            return bad("a sweep needs at least 4 dimensions for the slope fit".into());
        }
        if self.signs.is_empty() {
            return bad("at least one neuron is required".into());
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad(format!("eta must be positive, got {eta}"));
            }
        }
        if let InitKind::Random { scale } = self.init {
            if !(scale > 0.0) {
                return bad("random init scale must be positive".into());
            }
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        Constants::default().with_overrides(&self.constant_overrides())?;
        Ok(())
    }

    pub fn constant_overrides(&self) -> Vec<(String, f64)> {
        self.constants.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        for s in &mut self.seeds {
            *s += offset;
        }
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse `a,b,c` into seeds.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',').map(|t| t.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad seed {t:?}")))).collect()
}

/// Parse `key=val,...` into constant overrides.
pub fn parse_constants(s: &str) -> Result<BTreeMap<String, f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (k, v) =
                t.split_once('=').ok_or_else(|| Error::InvalidArgument(format!("expected key=val, got {t:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad value in {t:?}")))?;
            Ok((k.trim().to_owned(), v))
        })
        .collect()
}
