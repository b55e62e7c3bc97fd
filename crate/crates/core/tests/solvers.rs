use std::sync::Arc;

use resil_core::linalg::{CsrMatrix, DistCsr, DistVector, Layout};
use resil_core::memory::Reliability;
use resil_core::sim::{ClusterConfig, SimCluster};
use resil_core::solvers::{
    ft_gmres, ft_gmres_with, gmres, pipelined_gmres, skeptical_gmres, InnerConfig, InnerSolver,
    SkepticalPolicy, SolverConfig,
};
use resil_core::Error;

struct Problem {
    cluster: SimCluster,
    a: DistCsr,
    b: DistVector,
    x: DistVector,
}

fn setup(matrix: CsrMatrix, b: &[f64], n_ranks: usize) -> Problem {
    let mut cluster = SimCluster::new(ClusterConfig::new(n_ranks, 1)).unwrap();
    let layout = Arc::new(Layout::balanced(matrix.n_rows(), n_ranks));
    let a = DistCsr::new(Arc::new(matrix), layout.clone()).unwrap();
    let b = DistVector::from_global(&mut cluster, Reliability::Reliable, "b", &layout, b).unwrap();
    let x = DistVector::alloc(&mut cluster, Reliability::Reliable, "x", &layout).unwrap();
    Problem { cluster, a, b, x }
}

/// Dense Gaussian elimination with partial pivoting, used as a reference.
fn dense_solve(a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = a.to_dense();
    let mut rhs = b.to_vec();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        m.swap(k, p);
        rhs.swap(k, p);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
            rhs[i] -= f * rhs[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (rhs[i] - s) / m[i][i];
    }
    x
}

fn true_relative_residual(a: &CsrMatrix, b: &[f64], x: &[f64]) -> f64 {
    let ax = a.mul_vec(x).unwrap();
    let r: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
    r / b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Normalizing by ‖b‖ and scaling back costs a few roundings.
fn assert_close_ulps(got: &[f64], want: &[f64]) {
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 4.0 * f64::EPSILON * w.abs(), "{g} vs {w}");
    }
}

#[test]
fn identity_converges_in_one_iteration() {
    let b = [1.0, -2.0, 3.5];
    let mut p = setup(CsrMatrix::identity(3), &b, 2);
    let rep = gmres(&mut p.cluster, &p.a, &p.b, &p.x, &SolverConfig::default()).unwrap();
    assert!(rep.converged);
    assert_eq!(rep.iterations, 1);
    assert_close_ulps(&p.x.gather(&p.cluster), &b);
    assert_eq!(rep.residual_history.len(), rep.iterations + 1);
}

#[test]
fn scaled_identity() {
    let mut p = setup(CsrMatrix::diagonal(&[2.0, 2.0]).unwrap(), &[2.0, 2.0], 1);
    let rep = gmres(&mut p.cluster, &p.a, &p.b, &p.x, &SolverConfig::default()).unwrap();
    assert_eq!(rep.iterations, 1);
    assert_close_ulps(&p.x.gather(&p.cluster), &[1.0, 1.0]);
}

#[test]
fn two_by_two_diagonal_against_direct_solve() {
    let a = CsrMatrix::diagonal(&[1.0, 2.0]).unwrap();
    let expect = dense_solve(&a, &[1.0, 1.0]);
    let mut p = setup(a, &[1.0, 1.0], 2);
    let rep = gmres(&mut p.cluster, &p.a, &p.b, &p.x, &SolverConfig::default()).unwrap();
    assert!(rep.converged);
    assert_eq!(rep.iterations, 2);
    for (got, want) in p.x.gather(&p.cluster).iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn laplacian_converges_with_restarts_and_certificate() {
    let a = CsrMatrix::laplacian_2d(8);
    let b: Vec<f64> = (0..64).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
    let cfg = SolverConfig {
        restart: 10,
        ..SolverConfig::default()
    };
    let mut p = setup(a.clone(), &b, 3);
    let rep = gmres(&mut p.cluster, &p.a, &p.b, &p.x, &cfg).unwrap();
    assert!(rep.converged);
    assert!(rep.restarts > 0);
    let x = p.x.gather(&p.cluster);
    assert!(true_relative_residual(&a, &b, &x) <= cfg.tol);
    assert_eq!(rep.residual_history.len(), rep.iterations + 1);
    assert!(rep.final_true_residual <= cfg.tol);
    // every region the solver allocated has been released
    assert_eq!(p.cluster.mem().ids().count(), 2);
}

#[test]
fn maxit_reports_not_converged() {
    let a = CsrMatrix::laplacian_2d(8);
    let b = vec![1.0; 64];
    let cfg = SolverConfig {
        restart: 5,
        maxit: 7,
        ..SolverConfig::default()
    };
    let mut p = setup(a, &b, 2);
    let rep = gmres(&mut p.cluster, &p.a, &p.b, &p.x, &cfg).unwrap();
    assert!(!rep.converged);
    assert_eq!(rep.iterations, 7);
    assert_eq!(rep.residual_history.len(), 8);
}

#[test]
fn non_finite_iterate_diverges_with_history() {
    let mut p = setup(CsrMatrix::laplacian_1d(6), &[1.0; 6], 2);
    p.cluster.mem_mut().block_mut(p.x.id, 1)[0] = f64::NAN;
    match gmres(&mut p.cluster, &p.a, &p.b, &p.x, &SolverConfig::default()) {
        Err(Error::Diverged { report, .. }) => assert!(report.residual_history[0].is_nan()),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_errors() {
    let mut p = setup(CsrMatrix::identity(2), &[1.0, 1.0], 1);
    let bad = SolverConfig {
        tol: 0.0,
        ..SolverConfig::default()
    };
    assert!(matches!(gmres(&mut p.cluster, &p.a, &p.b, &p.x, &bad), Err(Error::Config(_))));
    let depth = SolverConfig {
        pipeline_depth: 2,
        ..SolverConfig::default()
    };
    assert!(matches!(gmres(&mut p.cluster, &p.a, &p.b, &p.x, &depth), Err(Error::Config(_))));
    assert!(skeptical_gmres(&mut p.cluster, &p.a, &p.b, &p.x, &SolverConfig::default()).is_err());
    assert!(pipelined_gmres(&mut p.cluster, &p.a, &p.b, &p.x, &SolverConfig::default()).is_err());
}

#[test]
fn detect_only_matches_plain_bit_for_bit() {
    let a = CsrMatrix::laplacian_2d(6);
    let b: Vec<f64> = (0..36).map(|i| (i as f64).sin()).collect();
    let plain_cfg = SolverConfig {
        restart: 8,
        ..SolverConfig::default()
    };
    let skeptical_cfg = SolverConfig {
        skeptical_policy: SkepticalPolicy::DetectOnly,
        ..plain_cfg.clone()
    };
    let mut p = setup(a.clone(), &b, 4);
    let plain = gmres(&mut p.cluster, &p.a, &p.b, &p.x, &plain_cfg).unwrap();
    let mut q = setup(a, &b, 4);
    let skep = skeptical_gmres(&mut q.cluster, &q.a, &q.b, &q.x, &skeptical_cfg).unwrap();
    assert!(skep.detections.is_empty());
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&plain.residual_history), bits(&skep.residual_history));
    assert_eq!(bits(&p.x.gather(&p.cluster)), bits(&q.x.gather(&q.cluster)));
}

#[test]
fn pipelined_tracks_synchronous() {
    let a = CsrMatrix::laplacian_2d(8);
    let b: Vec<f64> = (0..64).map(|i| 1.0 + (i % 3) as f64).collect();
    let sync_cfg = SolverConfig::default();
    let pipe_cfg = SolverConfig {
        pipeline_depth: 1,
        ..SolverConfig::default()
    };
    let mut p = setup(a.clone(), &b, 4);
    let sync = gmres(&mut p.cluster, &p.a, &p.b, &p.x, &sync_cfg).unwrap();
    let mut q = setup(a, &b, 4);
    let pipe = pipelined_gmres(&mut q.cluster, &q.a, &q.b, &q.x, &pipe_cfg).unwrap();
    assert!(sync.converged && pipe.converged);
    assert_eq!(sync.iterations, pipe.iterations);
    for (s, t) in sync.residual_history.iter().zip(&pipe.residual_history) {
        assert!((s - t).abs() <= 1e-10, "{s} vs {t}");
    }
    assert!(pipe.simulated_elapsed < sync.simulated_elapsed);
}

#[test]
fn ft_gmres_fault_free_matches_unvalidated_baseline() {
    let a = CsrMatrix::laplacian_2d(8);
    let b = vec![1.0; 64];
    let outer = SolverConfig {
        restart: 20,
        maxit: 200,
        ..SolverConfig::default()
    };
    let mut p = setup(a.clone(), &b, 2);
    let ft = ft_gmres(&mut p.cluster, &p.a, &p.b, &p.x, &outer, &InnerConfig::default()).unwrap();
    let baseline_inner = InnerConfig {
        validate: false,
        ..InnerConfig::default()
    };
    let mut q = setup(a.clone(), &b, 2);
    let base = ft_gmres(&mut q.cluster, &q.a, &q.b, &q.x, &outer, &baseline_inner).unwrap();
    assert!(ft.converged);
    assert_eq!(ft.inner_rejections, 0);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ft.residual_history), bits(&base.residual_history));
    assert_eq!(bits(&p.x.gather(&p.cluster)), bits(&q.x.gather(&q.cluster)));
    assert!(true_relative_residual(&a, &b, &p.x.gather(&p.cluster)) <= outer.tol);
}

/// Jacobi preconditioner that emits an infinity on its second call.
struct PoisonOnce {
    calls: usize,
}

impl InnerSolver for PoisonOnce {
    fn solve(
        &mut self,
        cluster: &mut SimCluster,
        _a: &DistCsr,
        rhs: &DistVector,
        z: &DistVector,
    ) -> resil_core::Result<usize> {
        self.calls += 1;
        // Jacobi step for a matrix with diagonal 2
        let mut values: Vec<f64> = rhs.gather(cluster).iter().map(|v| v / 2.0).collect();
        if self.calls == 2 {
            values[0] = f64::INFINITY;
        }
        z.scatter(cluster, &values)?;
        Ok(1)
    }
}

#[test]
fn infinite_inner_result_is_rejected_once() {
    let a = CsrMatrix::laplacian_1d(12);
    let b = vec![1.0; 12];
    let mut p = setup(a.clone(), &b, 3);
    let mut inner = PoisonOnce { calls: 0 };
    let rep = ft_gmres_with(&mut p.cluster, &p.a, &p.b, &p.x, &SolverConfig::default(), true, &mut inner).unwrap();
    assert_eq!(rep.inner_rejections, 1);
    assert!(rep.converged);
    assert!(true_relative_residual(&a, &b, &p.x.gather(&p.cluster)) <= 1e-8);
}

#[test]
fn pipelined_tracks_synchronous_on_larger_systems() {
    let diag: Vec<f64> = (1..=10).map(f64::from).collect();
    let cases = [
        (CsrMatrix::laplacian_2d(16), vec![1.0; 256]),
        (CsrMatrix::diagonal(&diag).unwrap(), vec![1.0; 10]),
    ];
    for (a, b) in cases {
        for ranks in [1, 4] {
            let mut p = setup(a.clone(), &b, ranks);
            let sync = gmres(&mut p.cluster, &p.a, &p.b, &p.x, &SolverConfig::default()).unwrap();
            let pipe_cfg = SolverConfig {
                pipeline_depth: 1,
                ..SolverConfig::default()
            };
            let mut q = setup(a.clone(), &b, ranks);
            let pipe = pipelined_gmres(&mut q.cluster, &q.a, &q.b, &q.x, &pipe_cfg).unwrap();
            assert_eq!(sync.residual_history.len(), pipe.residual_history.len());
            let worst = sync
                .residual_history
                .iter()
                .zip(&pipe.residual_history)
                .fold(0.0f64, |m, (s, t)| m.max((s - t).abs()));
            assert!(worst <= 1e-10, "{worst}");
        }
    }
}
