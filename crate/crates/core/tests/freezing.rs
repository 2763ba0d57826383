use nalgebra::DVector;

use relubias::gd_engine::{eps_single, init_single, recommend_step_size, run, StopRule};
use relubias::spectral_data::{sample_dataset, Constants, Dataset, LabelSpec, Spectrum, ZDist};
use relubias::theory_monitor::{check_conditions_single, freezing_violations};

fn freezing_breaks(ds: &Dataset) -> Vec<usize> {
    let c = Constants::for_dataset(ds);
    let step = recommend_step_size(ds, &c).unwrap();
    assert!(step.eta <= step.eta_hi);
    let init = init_single(ds, &DVector::repeat(ds.n(), eps_single(ds, &c))).unwrap();
    let traj = run(&init, ds, step.eta, &StopRule::default_for(ds, step.eta)).unwrap();
    let ledger = check_conditions_single(&traj, ds, &c).unwrap();
    freezing_violations(&traj, &ledger)
}

fn dataset(d: usize, seed: u64) -> Dataset {
    sample_dataset(&Spectrum::isotropic(d), 10, &LabelSpec::uniform_mixed(), ZDist::Gaussian, seed).unwrap()
}

#[test]
fn active_sets_freeze_once_conditions_hold_at_d_2000() {
    for seed in 0..20 {
        assert!(freezing_breaks(&dataset(2000, seed)).is_empty(), "seed {seed}");
    }
}

/// At d = 500 the measured conditions can all hold while a negative example's
/// preactivation still drifts upward through zero.
#[test]
fn conditions_alone_do_not_imply_freezing_at_d_500() {
    let broken = freezing_breaks(&dataset(500, 1));
    assert_eq!(broken, vec![5]);
}
