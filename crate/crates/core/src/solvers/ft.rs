//! Fault-tolerant GMRES: a flexible outer iteration kept entirely in reliable
//! memory around an inner solve that runs on unreliable data.

use std::sync::Arc;

use super::config::{InnerConfig, SolverConfig};
use super::gmres::{self, Workspace};
use super::report::{IterationRecord, SolverReport};
use crate::error::{Error, Result};
use crate::linalg::hessenberg::is_breakdown;
use crate::linalg::{self, DistCsr, DistVector, Hessenberg};
use crate::memory::Reliability;
use crate::sim::SimCluster;

/// An approximate solver for `A z = rhs` used as a variable preconditioner.
pub trait InnerSolver {
    /// Writes an approximation into `z` (unreliable, zero on entry) and
    /// returns the number of inner iterations spent.
    fn solve(
        &mut self,
        cluster: &mut SimCluster,
        a: &DistCsr,
        rhs: &DistVector,
        z: &DistVector,
    ) -> Result<usize>;
}

/// Restarted GMRES on unreliable storage with a zero initial guess.
pub struct GmresInner {
    config: SolverConfig,
}

impl GmresInner {
    pub fn new(config: &InnerConfig) -> Self {
        GmresInner {
            config: config.solver_config(),
        }
    }
}

impl InnerSolver for GmresInner {
    fn solve(
        &mut self,
        cluster: &mut SimCluster,
        a: &DistCsr,
        rhs: &DistVector,
        z: &DistVector,
    ) -> Result<usize> {
        gmres::gmres(cluster, a, rhs, z, &self.config).map(|rep| rep.iterations)
    }
}

/// Outcome of checking one inner result.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Validation {
    accepted: bool,
}

/// Flexible GMRES with a GMRES inner solve on unreliable data.
pub fn ft_gmres(
    cluster: &mut SimCluster,
    a: &DistCsr,
    b: &DistVector,
    x: &DistVector,
    outer: &SolverConfig,
    inner: &InnerConfig,
) -> Result<SolverReport> {
    let mut solver = GmresInner::new(inner);
    ft_gmres_with(cluster, a, b, x, outer, inner.validate, &mut solver)
}

/// Flexible GMRES around an arbitrary inner solver. With `validate` false
/// every inner result is used as returned.
pub fn ft_gmres_with(
    cluster: &mut SimCluster,
    a: &DistCsr,
    b: &DistVector,
    x: &DistVector,
    outer: &SolverConfig,
    validate: bool,
    inner: &mut dyn InnerSolver,
) -> Result<SolverReport> {
    outer.validate()?;
    if *b.layout != **a.layout() || *x.layout != **a.layout() {
        return Err(Error::usage("right-hand side, iterate and matrix distributions differ"));
    }
    let mut ws = Workspace::default();
    let out = run(cluster, &mut ws, a, b, x, outer, validate, inner);
    ws.release(cluster);
    out
}

#[allow(clippy::too_many_arguments)]
fn run(
    cluster: &mut SimCluster,
    ws: &mut Workspace,
    a: &DistCsr,
    b: &DistVector,
    x: &DistVector,
    cfg: &SolverConfig,
    validate: bool,
    inner: &mut dyn InnerSolver,
) -> Result<SolverReport> {
    let start = cluster.clock();
    let layout = Arc::clone(a.layout());
    let m = cfg.restart;
    let rel = Reliability::Reliable;
    let mut report = SolverReport::default();
    let finish = |cluster: &SimCluster, mut report: SolverReport| {
        report.simulated_elapsed = cluster.clock() - start;
        report
    };

    let bnorm = linalg::norm2(cluster, b)?;
    if bnorm == 0.0 {
        linalg::fill(cluster, x, 0.0);
        report.converged = true;
        report.residual_history.push(0.0);
        report.iteration_log.push(IterationRecord {
            iteration: 0,
            residual_estimate: 0.0,
            true_residual: Some(0.0),
            clock: cluster.clock(),
        });
        return Ok(finish(cluster, report));
    }

    let r = ws.vector(cluster, rel, "ft.r", &layout)?;
    let w = ws.vector(cluster, rel, "ft.w", &layout)?;
    let mut basis = Vec::with_capacity(m + 1);
    for i in 0..=m {
        basis.push(ws.vector(cluster, rel, &format!("ft.v{i}"), &layout)?);
    }
    let mut zs = Vec::with_capacity(m);
    for i in 0..m {
        zs.push(ws.vector(cluster, rel, &format!("ft.z{i}"), &layout)?);
    }

    let mut cycles = 0usize;
    loop {
        linalg::spmv(cluster, a, x, &w)?;
        linalg::sub_into(cluster, b, &w, &r)?;
        let beta = linalg::norm2(cluster, &r)?;
        let relres = beta / bnorm;
        report.final_true_residual = relres;
        match report.iteration_log.last_mut() {
            None => {
                report.residual_history.push(relres);
                report.iteration_log.push(IterationRecord {
                    iteration: 0,
                    residual_estimate: relres,
                    true_residual: Some(relres),
                    clock: cluster.clock(),
                });
            }
            Some(last) => last.true_residual = Some(relres),
        }
        if !relres.is_finite() {
            let iteration = report.iterations;
            return Err(Error::Diverged {
                iteration,
                report: Box::new(finish(cluster, report)),
            });
        }
        if relres <= cfg.tol {
            report.converged = true;
            break;
        }
        if report.iterations >= cfg.maxit {
            break;
        }
        if cycles > 0 {
            report.restarts += 1;
        }
        cycles += 1;

        linalg::div_into(cluster, &r, beta, &basis[0])?;
        let mut h = Hessenberg::new(m, beta);
        let mut used = 0;
        for j in 0..m {
            if report.iterations >= cfg.maxit {
                break;
            }
            let v = &basis[j];
            let z = &zs[j];
            let accepted = inner_step(cluster, a, v, z, &w, validate, inner, &mut report)?;
            if !accepted.accepted {
                report.inner_rejections += 1;
                linalg::copy(cluster, v, z)?;
                linalg::spmv(cluster, a, z, &w)?;
            }
            let mut col = Vec::with_capacity(j + 2);
            for vi in &basis[..=j] {
                let hij = linalg::dot(cluster, &w, vi)?;
                linalg::axpy(cluster, -hij, vi, &w)?;
                col.push(hij);
            }
            let hn = linalg::norm2(cluster, &w)?;
            col.push(hn);
            let breakdown = is_breakdown(&col);
            if !breakdown {
                linalg::div_into(cluster, &w, hn, &basis[j + 1])?;
            }
            let est = h.push_column(col)?;
            report.iterations += 1;
            report.residual_history.push(est / bnorm);
            report.iteration_log.push(IterationRecord {
                iteration: report.iterations,
                residual_estimate: est / bnorm,
                true_residual: None,
                clock: cluster.clock(),
            });
            used = j + 1;
            if breakdown || est / bnorm <= cfg.tol {
                break;
            }
        }
        let y = h.solve_leading(used);
        for (yi, z) in y.iter().zip(&zs) {
            linalg::axpy(cluster, *yi, z, x)?;
        }
    }
    Ok(finish(cluster, report))
}

/// Runs the inner solve for `v`, promotes its result into `z` and leaves
/// `A z` in `w`. Returns whether the result passed validation.
#[allow(clippy::too_many_arguments)]
fn inner_step(
    cluster: &mut SimCluster,
    a: &DistCsr,
    v: &DistVector,
    z: &DistVector,
    w: &DistVector,
    validate: bool,
    inner: &mut dyn InnerSolver,
    report: &mut SolverReport,
) -> Result<Validation> {
    let layout = Arc::clone(a.layout());
    let rhs = DistVector::alloc(cluster, Reliability::Unreliable, "ft.inner.rhs", &layout)?;
    let zin = DistVector::alloc(cluster, Reliability::Unreliable, "ft.inner.z", &layout)?;
    let solved = linalg::copy(cluster, v, &rhs).and_then(|_| inner.solve(cluster, a, &rhs, &zin));
    let outcome = match solved {
        Ok(iters) => {
            report.inner_iterations += iters;
            check_inner(cluster, a, v, &zin, z, w, validate)
        }
        Err(Error::Diverged { .. }) | Err(Error::PersistentCorruption { .. }) if validate => {
            Ok(Validation { accepted: false })
        }
        Err(e) => Err(e),
    };
    cluster.free(rhs.id)?;
    cluster.free(zin.id)?;
    outcome
}

fn check_inner(
    cluster: &mut SimCluster,
    a: &DistCsr,
    v: &DistVector,
    zin: &DistVector,
    z: &DistVector,
    w: &DistVector,
    validate: bool,
) -> Result<Validation> {
    let layout = Arc::clone(a.layout());
    cluster.mem_mut().promote(zin.id, z.id)?;
    cluster.compute("promote", layout.max_len() as u64);
    linalg::spmv(cluster, a, z, w)?;
    if !validate {
        return Ok(Validation { accepted: true });
    }
    let d = DistVector::alloc(cluster, Reliability::Reliable, "ft.check", &layout)?;
    let vals = linalg::sub_into(cluster, v, w, &d).and_then(|_| linalg::dots(cluster, &[(z, z), (&d, &d), (v, v)]));
    cluster.free(d.id)?;
    let vals = vals?;
    let accepted = vals.iter().all(|x| x.is_finite()) && vals[1] < vals[2];
    Ok(Validation { accepted })
}
