use nalgebra::{DMatrix, DVector};

use super::*;
use crate::gd_engine::{
    eps_multi, eps_single, eps_two, init_multi_disjoint, init_single, init_two, random_assignment, recommend_step_size,
    run, step, StopRule, Trajectory,
};
use crate::min_norm::{min_norm_single, min_norm_two, MinNormOptions};
use crate::relu_model::Sign;
use crate::spectral_data::{sample_dataset, LabelSpec, Spectrum, SpectrumKind, ZDist};

fn data(d: usize, n: usize, seed: u64) -> Dataset {
    sample_dataset(&Spectrum::isotropic(d), n, &LabelSpec::uniform_mixed(), ZDist::Gaussian, seed).unwrap()
}

fn single_run(ds: &Dataset) -> (Trajectory, Constants) {
    let c = Constants::for_dataset(ds);
    let eta = recommend_step_size(ds, &c).unwrap().eta;
    let s = init_single(ds, &DVector::repeat(ds.n(), eps_single(ds, &c))).unwrap();
    (run(&s, ds, eta, &StopRule::default_for(ds, eta)).unwrap(), c)
}

fn two_run(ds: &Dataset) -> (Trajectory, Constants) {
    let c = Constants::for_dataset(ds);
    let eta = recommend_step_size(ds, &c).unwrap().eta;
    let e = DVector::repeat(ds.n(), eps_two(ds, &c));
    let s = init_two(ds, &e, &e).unwrap();
    (run(&s, ds, eta, &StopRule::default_for(ds, eta)).unwrap(), c)
}

#[test]
fn gram_deviation_examples() {
    let d = 50;
    let x = DMatrix::identity(4, d) * (d as f64).sqrt();
    let ds = Dataset::new(x, DVector::from_row_slice(&[1.0, 0.5, -1.0, -0.2]), Spectrum::isotropic(d)).unwrap();
    assert!(gram_deviation(&ds, &Constants::default()).unwrap().deviation < 1e-13);

    let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 0.5]);
    let ds = Dataset::new(x, DVector::from_element(1, 1.0), Spectrum::isotropic(3)).unwrap();
    let dev = gram_deviation(&ds, &Constants::default()).unwrap();
    assert!((dev.deviation - (5.25_f64 / 3.0 - 1.0).abs()).abs() < 1e-14);
}

#[test]
fn eigen_bound_examples() {
    let spec = Spectrum::new(SpectrumKind::Explicit, vec![1.0, 0.0, 0.0]).unwrap();
    let ds = Dataset::new(DMatrix::identity(2, 3), DVector::from_row_slice(&[1.0, -1.0]), spec).unwrap();
    let e = eigen_bounds(&ds).unwrap();
    assert!((e.mu_n - 1.0).abs() < 1e-14 && (e.mu_1 - 1.0).abs() < 1e-14 && (e.c_g_hat - 1.0).abs() < 1e-14);

    for seed in 0..5 {
        let ds = data(2000, 10, seed);
        assert!(eigen_bounds(&ds).unwrap().c_g_hat <= 1.3);
        let dev = gram_deviation(&ds, &Constants::default()).unwrap();
        assert!(dev.deviation <= 5.0 * (10.0_f64 / 2000.0).sqrt());
    }
}

#[test]
fn single_ledger_holds_after_first_step_and_freezes() {
    for seed in 0..20 {
        let ds = data(2000, 10, seed);
        let (traj, c) = single_run(&ds);
        let ledger = check_conditions_single(&traj, &ds, &c).unwrap();
        assert!(ledger.all_hold_from(1), "seed {seed}: {:?}", ledger.first_violation(1));
        assert_eq!(ledger.violations("e", 0), vec![0]);
        assert!(freezing_violations(&traj, &ledger).is_empty());
        assert_eq!(check_conditions_single(&traj, &ds, &c).unwrap(), ledger);
    }
}

#[test]
fn ledger_csv_shape() {
    let ds = data(300, 4, 1);
    let (traj, c) = single_run(&ds);
    let ledger = check_conditions_single(&traj, &ds, &c).unwrap();
    let mut buf = Vec::new();
    ledger.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,condition,holds,margin\n0,a,"));
    assert_eq!(text.lines().count(), 1 + 6 * traj.snapshots.len());
}

#[test]
fn two_ledger_and_m2_reduction() {
    for seed in 0..5 {
        let ds = data(2000, 10, seed);
        let (traj, c) = two_run(&ds);
        let two = check_conditions_two(&traj, &ds, &c).unwrap();
        assert!(two.all_hold_from(1), "seed {seed}: {:?}", two.first_violation(1));
        assert!(freezing_violations(&traj, &two).is_empty());

        let assignment: Vec<usize> = (0..ds.n()).map(|i| usize::from(ds.y()[i] < 0.0)).collect();
        let multi = check_conditions_multi(&traj, &ds, &assignment, &c).unwrap();
        for (rt, rm) in two.rows.iter().zip(&multi.rows) {
            let v = &rt.values;
            let both = |a: usize, b: usize| (v[a].holds && v[b].holds, v[a].margin.min(v[b].margin));
            let pairs = [both(0, 1), both(2, 3), (v[4].holds, v[4].margin), (v[5].holds, v[5].margin), both(6, 7)];
            for (p, m) in pairs.iter().zip(&rm.values) {
                assert_eq!(*p, (m.holds, m.margin));
            }
        }
    }
}

#[test]
fn two_ledger_flip_swaps_columns() {
    let ds = data(2000, 10, 3);
    let (traj, c) = two_run(&ds);
    // y → −y, reordered so positives come first again
    let order: Vec<usize> = ds.neg_idx().into_iter().chain(ds.pos_idx()).collect();
    let x = DMatrix::from_fn(ds.n(), ds.d(), |r, col| ds.x()[(order[r], col)]);
    let y = DVector::from_fn(ds.n(), |r, _| -ds.y()[order[r]]);
    let flipped = Dataset::new(x, y, ds.spectrum().clone()).unwrap().with_label_bounds(ds.y_min(), ds.y_max()).unwrap();
    let e = DVector::repeat(ds.n(), eps_two(&ds, &c));
    let s = init_two(&flipped, &e, &e).unwrap();
    let t2 =
        run(&s, &flipped, traj.eta, &StopRule { max_iters: 20, ..StopRule::default_for(&flipped, traj.eta) }).unwrap();
    let l1 = check_conditions_two(&traj, &ds, &c).unwrap();
    let l2 = check_conditions_two(&t2, &flipped, &c).unwrap();
    let swap = [1, 0, 3, 2, 4, 5, 7, 6];
    for (r1, r2) in l1.rows.iter().zip(&l2.rows).take(20) {
        for (a, &b) in swap.iter().enumerate() {
            let (m1, m2) = (r1.values[a].margin, r2.values[b].margin);
            assert_eq!(r1.values[a].holds, r2.values[b].holds);
            assert!((m1 - m2).abs() <= 1e-9 * (1.0 + m1.abs()), "t {} cond {a}: {m1} vs {m2}", r1.t);
        }
    }
}

#[test]
fn multi_disjoint_ledger_holds() {
    let signs = Sign::parse_list("+,+,-,-").unwrap();
    for seed in 0..3 {
        let ds = data(2000, 10, seed);
        let c = Constants::for_dataset(&ds);
        let assignment = random_assignment(&ds, &signs, seed).unwrap();
        let eps = vec![DVector::repeat(ds.n(), eps_multi(&ds, &c, 4)); 4];
        let s = init_multi_disjoint(&ds, &assignment, &signs, c.c_g, &eps).unwrap();
        let eta = recommend_step_size(&ds, &c).unwrap().eta;
        let traj = run(&s, &ds, eta, &StopRule::default_for(&ds, eta)).unwrap();
        let ledger = check_conditions_multi(&traj, &ds, &assignment, &c).unwrap();
        assert!(ledger.all_hold_from(1), "seed {seed}: {:?}", ledger.first_violation(1));
        let rep = verify_implicit_bias_multi(&traj, &ds, &assignment, 1e-6).unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}

#[test]
fn multi_with_an_idle_neuron() {
    let signs = Sign::parse_list("+,+,-").unwrap();
    let ds = data(2000, 8, 4);
    let c = Constants::for_dataset(&ds);
    let assignment: Vec<usize> = (0..ds.n()).map(|i| if ds.y()[i] > 0.0 { 0 } else { 2 }).collect();
    let eps = vec![DVector::repeat(ds.n(), eps_multi(&ds, &c, 3)); 3];
    let s = init_multi_disjoint(&ds, &assignment, &signs, c.c_g, &eps).unwrap();
    let eta = recommend_step_size(&ds, &c).unwrap().eta;
    let traj = run(&s, &ds, eta, &StopRule::default_for(&ds, eta)).unwrap();
    let rep = verify_implicit_bias_multi(&traj, &ds, &assignment, 1e-6).unwrap();
    assert!(rep.neurons[1].fitted.is_empty());
    assert!(rep.neurons[1].max_off_preactivation.unwrap() <= OFF_TOL);
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn single_implicit_bias_and_detector() {
    let ds = data(2000, 10, 7);
    let (mut traj, _) = single_run(&ds);
    let rep = verify_implicit_bias_single(&traj, &ds, 1e-6).unwrap();
    assert!(rep.passed && rep.converged, "{rep:?}");
    traj.final_state.weights[0] += ds.x().tr_mul(&DVector::repeat(ds.n(), 1e-3 / ds.l1().sqrt()));
    assert!(!verify_implicit_bias_single(&traj, &ds, 1e-6).unwrap().passed);
}

#[test]
fn first_iterates_match_one_step() {
    let ds = data(2000, 10, 2);
    let (traj, _) = single_run(&ds);
    let w1 = step(&traj.initial, &ds, traj.eta).unwrap().weights[0].clone();
    assert!((first_iterate_single(&traj, &ds) - &w1).norm() <= 1e-10 * w1.norm());

    let (traj, _) = two_run(&ds);
    let one = step(&traj.initial, &ds, traj.eta).unwrap();
    let (wp, wm) = first_iterate_two(&traj, &ds);
    assert!((&wp - &one.weights[0]).norm() <= 1e-10 * wp.norm());
    assert!((&wm - &one.weights[1]).norm() <= 1e-10 * wm.norm());
    // equal offsets: the ε terms cancel in the difference
    let diff = &wp - &wm;
    let expected = ds.x().tr_mul(ds.y()) * (2.0 * traj.eta);
    assert!((diff - &expected).norm() <= 1e-10 * expected.norm());
    assert!(verify_implicit_bias_two(&traj, &ds, 1e-6).unwrap().passed);
}

#[test]
fn all_positive_bounds_collapse() {
    let ds =
        sample_dataset(&Spectrum::isotropic(1000), 8, &LabelSpec::all_positive(0.1, 1.0), ZDist::Gaussian, 5).unwrap();
    let (traj, c) = single_run(&ds);
    let mn = min_norm_single(&ds, &MinNormOptions::default()).unwrap();
    let rep = bound_report_single(&traj.final_state.weights[0], &ds, &c, &mn).unwrap();
    assert_eq!((rep.lower_bound[0], rep.upper_bound[0]), (0.0, 0.0));
    assert!(rep.distance[0] <= 1e-6 && rep.within);
    let v = verify_implicit_bias_single(&traj, &ds, 1e-6).unwrap();
    assert_eq!(v.neurons[0].fitted.len(), 8);
    assert!(v.passed);
}

#[test]
fn single_bounds_with_negatives() {
    let ds = data(2000, 10, 11);
    let (traj, c) = single_run(&ds);
    let mn = min_norm_single(&ds, &MinNormOptions::default()).unwrap();
    let rep = bound_report_single(&traj.final_state.weights[0], &ds, &c, &mn).unwrap();
    let expected = (16.0 * ds.n_neg() as f64 * ds.y_max().powi(2) / (c.c_g * ds.l1())).sqrt();
    assert!((rep.upper_bound[0] - expected).abs() < 1e-15);
    assert!(rep.distance[0] > 0.0 && rep.distance[0] <= rep.upper_bound[0]);
    assert!(rep.bounds_ordered);
}

#[test]
fn two_bounds_are_strictly_positive() {
    let ds = data(2000, 10, 12);
    let (traj, c) = two_run(&ds);
    let mn = min_norm_two(&ds, &MinNormOptions::default()).unwrap();
    let fin = &traj.final_state.weights;
    let rep = bound_report_two((&fin[0], &fin[1]), &ds, &c, &mn).unwrap();
    assert!(rep.distance.iter().all(|d| *d > 0.0));
    assert_eq!(rep.lower_bound[0], distance_bounds(ds.n_neg(), &ds, &c).0);
    assert_eq!(rep.lower_bound[1], distance_bounds(ds.n_pos(), &ds, &c).0);
}

#[test]
fn slope_examples() {
    let pts: Vec<(f64, f64)> = [500.0, 1000.0, 2000.0, 4000.0].iter().map(|d: &f64| (*d, 3.0 / d.sqrt())).collect();
    let fit = slope_estimate(&pts).unwrap();
    assert!((fit.slope + 0.5).abs() < 1e-12 && (fit.r2 - 1.0).abs() < 1e-12);
    let flat: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, 0.2)).collect();
    assert!(slope_estimate(&flat).unwrap().slope.abs() < 1e-12);
    assert!(slope_estimate(&pts[..3]).is_err());
    let mut bad = pts.clone();
    bad[1].1 = 0.0;
    assert!(slope_estimate(&bad).is_err());
}
