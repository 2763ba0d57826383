use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::plot::{render_svg, write_aggregate, AggregateRow};
use super::{ExperimentConfig, InitKind, Scenario, VERSION};
use crate::error::{Error, Result};
use crate::gd_engine::{
    detect_activation_freeze, dual_update_check, eps_multi, eps_single, eps_two, init_multi_disjoint, init_random,
    init_single, init_two, monotone_risk_violations, primal_dual_residual, random_assignment, recommend_step_size, run,
    write_trajectory_csv, RunSummary, StepSize, StopRule, Trajectory,
};
use crate::min_norm::{feasible_upper_bound_multi, min_norm_single, min_norm_two, MinNormOptions};
use crate::relu_model::{ModelState, Sign};
use crate::spectral_data::{make_spectrum, sample_dataset, Constants, Dataset};
use crate::theory_monitor::{
    bound_report_single, bound_report_two, check_conditions_multi, check_conditions_single, check_conditions_two,
    eigen_bounds, freezing_violations, gram_deviation, slope_estimate, verify_implicit_bias_multi,
    verify_implicit_bias_single, verify_implicit_bias_two, ConditionLedger, EigenBounds, GramDeviation,
    ImplicitBiasReport, SlopeFit,
};

/// Tolerance handed to the implicit-bias verifiers.
const BIAS_TOL: f64 = 1e-6;
const RISK_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedError {
    pub seed: u64,
    pub d: usize,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(flatten)]
    pub run: RunSummary,
    pub step_size: StepSize,
    pub constants: Constants,
    pub assignment: Option<Vec<usize>>,
    pub ledger_holds_from_1: bool,
    pub first_violation: Option<(usize, String)>,
    /// Iterates `t ≥ 1` at which condition (a) fails.
    pub condition_a_violations: usize,
    pub implicit_bias_passed: bool,
    /// Per-neuron distance to the min-norm solution, when one is computed.
    pub distance: Vec<f64>,
    pub lower_bound: Vec<f64>,
    pub upper_bound: Vec<f64>,
    pub min_norm_objective: Option<f64>,
    /// `½Σ‖w̃‖²` for multi-neuron runs.
    pub feasible_upper_bound: Option<f64>,
    pub primal_dual_residual: f64,
    /// `None` when the trajectory was not logged at every iterate.
    pub dual_violations: Option<usize>,
    pub risk_monotone_violations: Option<usize>,
    pub freezing_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramSummary {
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub deviation: GramDeviation,
    pub eigen: EigenBounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<AggregateRow>,
    pub fit: Option<SlopeFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub version: String,
    pub scenario: Scenario,
    pub config: ExperimentConfig,
    pub files: Vec<FileEntry>,
    pub errors: Vec<SeedError>,
    pub runs: Vec<SeedSummary>,
    pub gram: Vec<GramSummary>,
    pub sweep: Option<SweepResult>,
}

impl ArtifactManifest {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }
}

/// Records every file it writes.
struct Writer<'a> {
    root: &'a Path,
    files: Vec<FileEntry>,
}

impl<'a> Writer<'a> {
    fn new(root: &'a Path) -> Self {
        Self { root, files: Vec::new() }
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.push(FileEntry {
            path: rel.to_owned(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }
}

struct StageError {
    stage: &'static str,
    error: Error,
}

trait At<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> At<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

enum Family {
    Single,
    Two,
    Multi,
    Gram,
}

fn family(cfg: &ExperimentConfig) -> Family {
    match cfg.scenario {
        Scenario::GramConc => Family::Gram,
        _ if cfg.signs == [Sign::Plus] => Family::Single,
        _ if cfg.signs == [Sign::Plus, Sign::Minus] => Family::Two,
        _ => Family::Multi,
    }
}

fn seed_dir(cfg: &ExperimentConfig, d: usize, seed: u64) -> String {
    if cfg.scenario.is_sweep() {
        format!("d_{d}/seed_{seed}")
    } else {
        format!("seed_{seed}")
    }
}

pub(crate) fn dataset_for(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<Dataset> {
    let spectrum = make_spectrum(cfg.spectrum, d, &cfg.spectrum_params)?;
    sample_dataset(&spectrum, cfg.n, &cfg.labels, cfg.z_dist, seed)
}

struct Prepared {
    state: ModelState,
    assignment: Option<Vec<usize>>,
}

fn initial_state(cfg: &ExperimentConfig, ds: &Dataset, c: &Constants, seed: u64) -> Result<Prepared> {
    let n = ds.n();
    let m = cfg.signs.len();
    let needs_assignment = matches!(family(cfg), Family::Multi);
    let assignment = if needs_assignment { Some(random_assignment(ds, &cfg.signs, seed)?) } else { None };
    let state = match (cfg.init, family(cfg)) {
        (InitKind::Random { scale }, _) => init_random(ds, &cfg.signs, scale, seed)?,
        (InitKind::Theorem, Family::Single) => init_single(ds, &DVector::repeat(n, eps_single(ds, c)))?,
        (InitKind::Theorem, Family::Two) => {
            let e = DVector::repeat(n, eps_two(ds, c));
            init_two(ds, &e, &e)?
        }
        (InitKind::Theorem, _) => {
            let eps = vec![DVector::repeat(n, eps_multi(ds, c, m)); m];
            init_multi_disjoint(ds, assignment.as_deref().unwrap_or_default(), &cfg.signs, c.c_g, &eps)?
        }
    };
    Ok(Prepared { state, assignment })
}

struct RunOutputs {
    summary: SeedSummary,
    files: Vec<FileEntry>,
}

fn ledger_for(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    ds: &Dataset,
    c: &Constants,
    a: Option<&[usize]>,
) -> Result<ConditionLedger> {
    match family(cfg) {
        Family::Single => check_conditions_single(traj, ds, c),
        Family::Two => check_conditions_two(traj, ds, c),
        _ => check_conditions_multi(traj, ds, a.unwrap_or_default(), c),
    }
}

fn bias_for(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    ds: &Dataset,
    a: Option<&[usize]>,
) -> Result<ImplicitBiasReport> {
    match family(cfg) {
        Family::Single => verify_implicit_bias_single(traj, ds, BIAS_TOL),
        Family::Two => verify_implicit_bias_two(traj, ds, BIAS_TOL),
        _ => verify_implicit_bias_multi(traj, ds, a.unwrap_or_default(), BIAS_TOL),
    }
}

fn run_seed(cfg: &ExperimentConfig, root: &Path, d: usize, seed: u64) -> StageResult<RunOutputs> {
    let dir = seed_dir(cfg, d, seed);
    let mut w = Writer::new(root);
    let ds = dataset_for(cfg, d, seed).at("dataset")?;
    if !cfg.scenario.is_sweep() {
        w.write(&format!("{dir}/dataset.json"), ds.to_json().at("dataset")?.as_bytes()).at("write")?;
    }
    let c = Constants::for_dataset(&ds).with_overrides(&cfg.constant_overrides()).at("constants")?;
    let step_size = recommend_step_size(&ds, &c).at("step_size")?;
    let eta = cfg.eta.unwrap_or(step_size.eta);
    let prepared = initial_state(cfg, &ds, &c, seed).at("init")?;
    let assignment = prepared.assignment.as_deref();
    let mut stop = StopRule::default_for(&ds, eta);
    stop.stride = cfg.stride;
    if let Some(mi) = cfg.max_iters {
        stop.max_iters = mi;
    }
    let traj = run(&prepared.state, &ds, eta, &stop).at("run")?;

    let mut csv = Vec::new();
    write_trajectory_csv(&traj, &mut csv).at("trajectory")?;
    w.write(&format!("{dir}/trajectory.csv"), &csv).at("write")?;

    let ledger = ledger_for(cfg, &traj, &ds, &c, assignment).at("ledger")?;
    let mut lcsv = Vec::new();
    ledger.write_csv(&mut lcsv).at("ledger")?;
    w.write(&format!("{dir}/ledger.csv"), &lcsv).at("write")?;

    let bias = bias_for(cfg, &traj, &ds, assignment).at("implicit_bias")?;
    w.json(&format!("{dir}/implicit_bias.json"), &bias).at("write")?;

    let opts = MinNormOptions::default();
    let (bounds, objective, feasible) = match family(cfg) {
        Family::Single => {
            let mn = min_norm_single(&ds, &opts).at("min_norm")?;
            let b = bound_report_single(&traj.final_state.weights[0], &ds, &c, &mn).at("bounds")?;
            (Some(b), Some(mn.objective), None)
        }
        Family::Two => {
            let mn = min_norm_two(&ds, &opts).at("min_norm")?;
            let fin = &traj.final_state.weights;
            let b = bound_report_two((&fin[0], &fin[1]), &ds, &c, &mn).at("bounds")?;
            (Some(b), Some(mn.objective), None)
        }
        _ => (None, None, feasible_upper_bound_multi(&ds, &cfg.signs).ok()),
    };
    let bound_json = match &bounds {
        Some(b) => serde_json::to_value(b).map_err(Error::from).at("bounds")?,
        None => serde_json::json!({
            "feasible_upper_bound": feasible,
            "final_objective": 0.5 * traj.final_state.weights.iter().map(|w| w.norm_squared()).sum::<f64>(),
        }),
    };
    w.json(&format!("{dir}/bound_report.json"), &bound_json).at("write")?;

    let stride_one = traj.stride == 1;
    let t0 = if stride_one { detect_activation_freeze(&traj).at("freeze")? } else { None };
    let dual_violations = if stride_one { Some(dual_update_check(&traj, &ds).at("dual_check")?.len()) } else { None };
    let risk_monotone_violations = t0.map(|t| monotone_risk_violations(&traj, t, RISK_SLACK).len());
    let summary = SeedSummary {
        seed,
        d,
        n: ds.n(),
        n_pos: ds.n_pos(),
        n_neg: ds.n_neg(),
        run: RunSummary::new(&traj, t0),
        step_size,
        constants: c,
        assignment: prepared.assignment.clone(),
        ledger_holds_from_1: ledger.all_hold_from(1),
        first_violation: ledger.first_violation(1),
        condition_a_violations: ledger.violations("a", 1).len(),
        implicit_bias_passed: bias.passed,
        distance: bounds.as_ref().map(|b| b.distance.clone()).unwrap_or_default(),
        lower_bound: bounds.as_ref().map(|b| b.lower_bound.clone()).unwrap_or_default(),
        upper_bound: bounds.as_ref().map(|b| b.upper_bound.clone()).unwrap_or_default(),
        min_norm_objective: objective,
        feasible_upper_bound: feasible,
        primal_dual_residual: primal_dual_residual(&traj, &ds),
        dual_violations,
        risk_monotone_violations,
        freezing_violations: freezing_violations(&traj, &ledger).len(),
    };
    w.json(&format!("{dir}/summary.json"), &summary).at("write")?;
    Ok(RunOutputs { summary, files: w.files })
}

fn gram_seed(cfg: &ExperimentConfig, root: &Path, d: usize, seed: u64) -> StageResult<(GramSummary, Vec<FileEntry>)> {
    let dir = seed_dir(cfg, d, seed);
    let mut w = Writer::new(root);
    let ds = dataset_for(cfg, d, seed).at("dataset")?;
    w.write(&format!("{dir}/dataset.json"), ds.to_json().at("dataset")?.as_bytes()).at("write")?;
    let c = Constants::for_dataset(&ds).with_overrides(&cfg.constant_overrides()).at("constants")?;
    let summary = GramSummary {
        seed,
        d,
        n: ds.n(),
        deviation: gram_deviation(&ds, &c).at("gram_deviation")?,
        eigen: eigen_bounds(&ds).at("eigen_bounds")?,
    };
    w.json(&format!("{dir}/gram.json"), &summary).at("write")?;
    Ok((summary, w.files))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("RELUBIAS_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(k) if k > 0 => b = b.num_threads(k),
            _ => warn!("ignoring RELUBIAS_THREADS={v:?}"),
        }
    }
    b.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn aggregate(cfg: &ExperimentConfig, runs: &[SeedSummary]) -> SweepResult {
    let points: Vec<AggregateRow> = cfg
        .dims
        .iter()
        .filter_map(|&d| {
            let at: Vec<&SeedSummary> = runs.iter().filter(|r| r.d == d && !r.distance.is_empty()).collect();
            if at.is_empty() {
                return None;
            }
            let col = |f: &dyn Fn(&SeedSummary) -> f64| at.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (mean, std) = mean_std(&col(&|r| r.distance[0]));
            let (lower, _) = mean_std(&col(&|r| r.lower_bound[0]));
            let (upper, _) = mean_std(&col(&|r| r.upper_bound[0]));
            Some(AggregateRow { d, mean_error: mean, std_error: std, lower_bound: lower, upper_bound: upper })
        })
        .collect();
    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.d as f64, p.mean_error)).collect();
    SweepResult { fit: slope_estimate(&pts).ok(), points }
}

/// Run every seed (and dimension) of `cfg`, writing per-seed artifacts and a
/// manifest under `cfg.output_dir`. A failing seed is recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ArtifactManifest> {
    cfg.validate()?;
    let root = cfg.output_dir.as_path();
    fs::create_dir_all(root)?;
    let tasks: Vec<(usize, u64)> = cfg.dims.iter().flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s))).collect();
    info!("{}: {} runs", cfg.scenario.name(), tasks.len());
    let pool = thread_pool()?;

    let mut manifest = ArtifactManifest {
        version: VERSION.to_owned(),
        scenario: cfg.scenario,
        config: cfg.clone(),
        files: Vec::new(),
        errors: Vec::new(),
        runs: Vec::new(),
        gram: Vec::new(),
        sweep: None,
    };
    let record_error = |m: &mut ArtifactManifest, d: usize, seed: u64, e: StageError| {
        warn!("seed {seed} (d = {d}) failed at {}: {}", e.stage, e.error);
        m.errors.push(SeedError { seed, d, stage: e.stage.to_owned(), message: e.error.to_string() });
    };
    if let Family::Gram = family(cfg) {
        let results: Vec<_> = pool.install(|| tasks.par_iter().map(|&(d, s)| gram_seed(cfg, root, d, s)).collect());
        for (&(d, s), r) in tasks.iter().zip(results) {
            match r {
                Ok((summary, files)) => {
                    manifest.gram.push(summary);
                    manifest.files.extend(files);
                }
                Err(e) => record_error(&mut manifest, d, s, e),
            }
        }
    } else {
        let results: Vec<_> = pool.install(|| tasks.par_iter().map(|&(d, s)| run_seed(cfg, root, d, s)).collect());
        for (&(d, s), r) in tasks.iter().zip(results) {
            match r {
                Ok(out) => {
                    manifest.runs.push(out.summary);
                    manifest.files.extend(out.files);
                }
                Err(e) => record_error(&mut manifest, d, s, e),
            }
        }
    }

    if cfg.scenario.is_sweep() {
        let sweep = aggregate(cfg, &manifest.runs);
        let mut w = Writer::new(root);
        let mut buf = Vec::new();
        write_aggregate(&sweep.points, &mut buf)?;
        w.write("aggregate.csv", &buf)?;
        if !sweep.points.is_empty() {
            w.write("aggregate.svg", render_svg(&sweep.points)?.as_bytes())?;
        }
        manifest.files.extend(w.files);
        manifest.sweep = Some(sweep);
    }
    let mut s = serde_json::to_string_pretty(&manifest)?;
    s.push('\n');
    fs::write(ArtifactManifest::path_in(root), s)?;
    Ok(manifest)
}

/// Write `seed_<s>/dataset.json` and `seed_<s>/dataset.csv` for every seed and dimension.
pub fn generate_datasets(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let root = cfg.output_dir.as_path();
    let mut w = Writer::new(root);
    for &d in &cfg.dims {
        for &seed in &cfg.seeds {
            let ds = dataset_for(cfg, d, seed)?;
            let dir = seed_dir(cfg, d, seed);
            w.write(&format!("{dir}/dataset.json"), ds.to_json()?.as_bytes())?;
            let mut buf = Vec::new();
            ds.write_csv(&mut buf)?;
            w.write(&format!("{dir}/dataset.csv"), &buf)?;
        }
    }
    Ok(w.files.iter().map(|f| root.join(&f.path)).collect())
}
