use proptest::prelude::*;
use resil_core::faults::{FaultEvent, FaultKind, FaultPlan};
use resil_core::heat::{self, Boundary, HeatConfig, Initial};
use resil_core::sim::{ClusterConfig, SimCluster, Tag};
use resil_core::{Error, SimTime};

fn cluster(n: usize) -> SimCluster {
    SimCluster::new(ClusterConfig::new(n, 11)).unwrap()
}

fn config(n: usize, steps: usize, c: usize) -> HeatConfig {
    HeatConfig::new(n, 1.0, 1.0, 0.25, steps, Boundary::Dirichlet { left: 0.0, right: 1.0 }, c)
        .unwrap()
        .with_initial(Initial::Sine { amplitude: 2.0, mode: 3 })
        .unwrap()
}

/// Serial forward Euler over the whole grid, written independently of the library.
fn serial(cfg: &HeatConfig) -> Vec<f64> {
    let (bl, br) = cfg.boundary.values();
    let r = cfg.ratio();
    let mut u = cfg.initial_field();
    for _ in 0..cfg.n_steps {
        let mut full = vec![bl];
        full.extend_from_slice(&u);
        full.push(br);
        u = (1..full.len() - 1)
            .map(|i| full[i] + r * (full[i - 1] - 2.0 * full[i] + full[i + 1]))
            .collect();
    }
    u
}

fn kill_plan(kills: &[(usize, SimTime)]) -> FaultPlan {
    FaultPlan {
        seed: 0,
        events: kills
            .iter()
            .map(|&(rank, time)| FaultEvent {
                time,
                kind: FaultKind::RankKill { rank },
            })
            .collect(),
    }
}

/// A time inside the update of `step` (1-based), taken from a fault-free run.
fn during_step(times: &[SimTime], step: usize) -> SimTime {
    let end = times[step - 1];
    let prev = if step > 1 { times[step - 2] } else { SimTime::ZERO };
    // updates are charged last, so just before the end lies inside the update
    SimTime::from_ticks(end.ticks() - 1).max(prev)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn constant_field_is_fixed() {
    let cfg = HeatConfig::new(12, 1.0, 1.0, 0.25, 50, Boundary::Dirichlet { left: 3.0, right: 3.0 }, 5)
        .unwrap()
        .with_initial(Initial::Constant { value: 3.0 })
        .unwrap();
    let run = heat::run_plain(&mut cluster(3), &cfg).unwrap();
    assert!(run.field.iter().all(|&v| v == 3.0));
}

#[test]
fn linear_profile_is_steady() {
    let base = HeatConfig::new(9, 1.0, 1.0, 0.25, 40, Boundary::Dirichlet { left: -1.0, right: 4.0 }, 5).unwrap();
    let profile = base.steady_profile();
    let cfg = base.with_initial(Initial::Values { values: profile.clone() }).unwrap();
    let run = heat::run_plain(&mut cluster(2), &cfg).unwrap();
    for (u, x) in run.field.iter().zip(&profile) {
        assert!((u - x).abs() <= 1e-14);
    }
}

#[test]
fn matches_serial_oracle_bitwise_for_any_rank_count() {
    let cfg = config(23, 60, 7);
    let want = bits(&serial(&cfg));
    for n in [1, 2, 3, 5, 8] {
        let run = heat::run_plain(&mut cluster(n), &cfg).unwrap();
        assert_eq!(bits(&run.field), want, "{n} ranks");
    }
}

#[test]
fn steady_state_checks() {
    let cfg = HeatConfig::new(32, 1.0, 1.0, 0.25, 20000, Boundary::Dirichlet { left: 0.0, right: 1.0 }, 1000).unwrap();
    let one = heat::steady_state_check(&mut cluster(1), &cfg).unwrap();
    let two = heat::steady_state_check(&mut cluster(2), &cfg).unwrap();
    assert!(one < 1e-8, "{one}");
    assert_eq!(one.to_bits(), two.to_bits());

    let zero = HeatConfig::new(32, 1.0, 1.0, 0.25, 20000, Boundary::Dirichlet { left: 0.0, right: 0.0 }, 1000)
        .unwrap()
        .with_initial(Initial::Sine { amplitude: 5.0, mode: 2 })
        .unwrap();
    assert!(heat::steady_state_check(&mut cluster(4), &zero).unwrap() < 1e-8);
}

#[test]
fn fault_free_lflr_matches_plain() {
    let cfg = config(40, 100, 20);
    let plain = heat::run_plain(&mut cluster(4), &cfg).unwrap();
    let lflr = heat::run_with_lflr(&mut cluster(4), &cfg, FaultPlan::empty()).unwrap();
    assert_eq!(bits(&plain.field), bits(&lflr.field));
    assert!(lflr.recoveries.is_empty());
    assert_eq!(lflr.persists, 6);
}

#[test]
fn kill_mid_run_replays_from_last_persist() {
    let cfg = config(40, 100, 20);
    let oracle = heat::run_with_lflr(&mut cluster(4), &cfg, FaultPlan::empty()).unwrap();
    let at = during_step(&oracle.step_end_times, 50);
    let mut c = cluster(4);
    let run = heat::run_with_lflr(&mut c, &cfg, kill_plan(&[(1, at)])).unwrap();
    assert_eq!(bits(&run.field), bits(&oracle.field));
    assert_eq!(run.recoveries.len(), 1);
    let rec = &run.recoveries[0];
    assert_eq!(rec.rank, 1);
    assert_eq!(rec.restored_step, 40);
    assert_eq!((rec.recomputed_first, rec.recomputed_last), (41, 50));
    assert_eq!(c.ledger().messages_touching(3, Tag::Recovery), 0);
    assert!(run.simulated_elapsed > oracle.simulated_elapsed);
}

#[test]
fn two_separated_kills_both_recover() {
    let cfg = config(40, 100, 20);
    let oracle = heat::run_with_lflr(&mut cluster(5), &cfg, FaultPlan::empty()).unwrap();
    let plan = kill_plan(&[
        (1, during_step(&oracle.step_end_times, 33)),
        (3, during_step(&oracle.step_end_times, 77)),
    ]);
    let run = heat::run_with_lflr(&mut cluster(5), &cfg, plan).unwrap();
    assert_eq!(bits(&run.field), bits(&oracle.field));
    let ranks: Vec<usize> = run.recoveries.iter().map(|r| r.rank).collect();
    assert_eq!(ranks, vec![1, 3]);
}

#[test]
fn simultaneous_non_adjacent_kills_recover() {
    let cfg = config(40, 60, 10);
    let oracle = heat::run_with_lflr(&mut cluster(4), &cfg, FaultPlan::empty()).unwrap();
    let at = during_step(&oracle.step_end_times, 25);
    let run = heat::run_with_lflr(&mut cluster(4), &cfg, kill_plan(&[(0, at), (2, at)])).unwrap();
    assert_eq!(bits(&run.field), bits(&oracle.field));
    assert_eq!(run.recoveries.len(), 2);
}

#[test]
fn kill_in_final_step_is_recovered_before_return() {
    let cfg = config(20, 30, 10);
    let oracle = heat::run_with_lflr(&mut cluster(3), &cfg, FaultPlan::empty()).unwrap();
    let at = during_step(&oracle.step_end_times, 30);
    let run = heat::run_with_lflr(&mut cluster(3), &cfg, kill_plan(&[(2, at)])).unwrap();
    assert_eq!(bits(&run.field), bits(&oracle.field));
    assert_eq!(run.recoveries.len(), 1);
}

#[test]
fn adjacent_kills_are_unrecoverable() {
    let cfg = config(40, 60, 10);
    let oracle = heat::run_with_lflr(&mut cluster(4), &cfg, FaultPlan::empty()).unwrap();
    let at = during_step(&oracle.step_end_times, 25);
    let out = heat::run_with_lflr(&mut cluster(4), &cfg, kill_plan(&[(1, at), (2, at)]));
    assert!(matches!(out, Err(Error::Unrecoverable(_))), "{out:?}");
}

#[test]
fn plain_run_reports_rank_failure() {
    let cfg = config(20, 30, 10);
    let mut c = cluster(2);
    c.schedule_kill(1, SimTime::from_units(3.0).unwrap()).unwrap();
    assert!(matches!(heat::run_plain(&mut c, &cfg), Err(Error::RankFailure { .. })));
}

#[test]
fn config_rejections() {
    let cfg = config(3, 10, 5);
    assert!(matches!(heat::run_plain(&mut cluster(4), &cfg), Err(Error::Config(_))));
    let bad = HeatConfig::new(4, 1.0, 1.0, 0.25, 1, Boundary::Dirichlet { left: 0.0, right: 0.0 }, 1)
        .unwrap()
        .with_initial(Initial::Values { values: vec![1.0; 3] });
    assert!(bad.is_err());
    let json = r#"{"n_global": 8, "alpha": 1, "dx": 1, "dt": 0.25, "n_steps": 4,
        "boundary": {"kind": "dirichlet", "left": 0, "right": 1}, "persist_interval": 2, "extra": 1}"#;
    assert!(serde_json::from_str::<HeatConfig>(json).is_err());
}

#[test]
fn field_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.csv");
    let field = vec![0.1, 1.0 / 3.0, -2.5e-300];
    heat::write_field_csv(&path, &field).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,value"));
    let back: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(bits(&back), bits(&field));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn maximum_principle(
        values in proptest::collection::vec(-5.0f64..5.0, 6..20),
        left in -5.0f64..5.0,
        right in -5.0f64..5.0,
        ratio in 0.01f64..=0.5,
        steps in 1usize..40,
        ranks in 1usize..4,
    ) {
        let n = values.len();
        let cfg = HeatConfig::new(n, 1.0, 1.0, ratio, steps, Boundary::Dirichlet { left, right }, 5)
            .unwrap()
            .with_initial(Initial::Values { values: values.clone() })
            .unwrap();
        let lo = values.iter().copied().fold(left.min(right), f64::min);
        let hi = values.iter().copied().fold(left.max(right), f64::max);
        let run = heat::run_plain(&mut cluster(ranks.min(n)), &cfg).unwrap();
        for u in run.field {
            prop_assert!(u >= lo - 1e-12 && u <= hi + 1e-12);
        }
    }

    #[test]
    fn any_single_kill_is_exact(victim in 0usize..4, step in 1usize..=45, c in 1usize..12) {
        let cfg = config(24, 45, c);
        let oracle = heat::run_with_lflr(&mut cluster(4), &cfg, FaultPlan::empty()).unwrap();
        let at = during_step(&oracle.step_end_times, step);
        let run = heat::run_with_lflr(&mut cluster(4), &cfg, kill_plan(&[(victim, at)])).unwrap();
        prop_assert_eq!(bits(&run.field), bits(&oracle.field));
    }
}
