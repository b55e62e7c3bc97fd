//! Restarted GMRES: synchronous modified Gram-Schmidt or a depth-one
//! pipelined Arnoldi process, with optional skeptical checks.

use std::sync::Arc;

use super::config::{SkepticalPolicy, SolverConfig};
use super::report::{CheckName, Detection, IterationRecord, SolverReport};
use crate::error::{Error, Result};
use crate::linalg::hessenberg::is_breakdown;
use crate::linalg::{self, DistCsr, DistVector, Hessenberg, Layout};
use crate::memory::{RegionId, Reliability};
use crate::sim::SimCluster;

/// Below this fraction of `z.z` the Pythagorean norm is replaced by an explicit one.
const PYTHAGORAS_FLOOR: f64 = 0.5;

/// Regions allocated by a solve; all are freed when the solve returns.
#[derive(Default)]
pub(crate) struct Workspace {
    ids: Vec<RegionId>,
}

impl Workspace {
    pub(crate) fn vector(
        &mut self,
        cluster: &mut SimCluster,
        kind: Reliability,
        label: &str,
        layout: &Arc<Layout>,
    ) -> Result<DistVector> {
        let v = DistVector::alloc(cluster, kind, label, layout)?;
        self.ids.push(v.id);
        Ok(v)
    }

    pub(crate) fn release(self, cluster: &mut SimCluster) {
        for id in self.ids {
            if cluster.mem().contains(id) {
                cluster.free(id).expect("live region frees");
            }
        }
    }
}

/// `max_i sum_j |a_ij|`, reduced over ranks.
pub fn inf_norm(cluster: &mut SimCluster, a: &DistCsr) -> Result<f64> {
    let layout = Arc::clone(a.layout());
    let per_rank: Vec<f64> = (0..layout.n_ranks())
        .map(|r| {
            layout
                .range(r)
                .map(|i| a.global().row(i).map(|(_, v)| v.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .collect();
    let nnz = (0..layout.n_ranks())
        .map(|r| layout.range(r).map(|i| a.global().row_nnz(i)).sum::<usize>())
        .max()
        .unwrap_or(0);
    cluster.compute("inf_norm", nnz as u64);
    cluster.allreduce_max(&per_rank)
}

/// Plain restarted GMRES. `x` holds the initial guess and receives the result.
pub fn gmres(
    cluster: &mut SimCluster,
    a: &DistCsr,
    b: &DistVector,
    x: &DistVector,
    config: &SolverConfig,
) -> Result<SolverReport> {
    solve(cluster, a, b, x, config)
}

/// GMRES with invariant checks; the policy must not be `Off`.
pub fn skeptical_gmres(
    cluster: &mut SimCluster,
    a: &DistCsr,
    b: &DistVector,
    x: &DistVector,
    config: &SolverConfig,
) -> Result<SolverReport> {
    if config.skeptical_policy == SkepticalPolicy::Off {
        return Err(Error::config("skeptical_gmres needs a skeptical_policy other than off"));
    }
    solve(cluster, a, b, x, config)
}

/// GMRES whose reductions overlap the next sparse product; needs `pipeline_depth = 1`.
pub fn pipelined_gmres(
    cluster: &mut SimCluster,
    a: &DistCsr,
    b: &DistVector,
    x: &DistVector,
    config: &SolverConfig,
) -> Result<SolverReport> {
    if config.pipeline_depth != 1 {
        return Err(Error::config("pipelined_gmres needs pipeline_depth = 1"));
    }
    solve(cluster, a, b, x, config)
}

/// Runs the variant selected by `config`.
pub fn solve(
    cluster: &mut SimCluster,
    a: &DistCsr,
    b: &DistVector,
    x: &DistVector,
    config: &SolverConfig,
) -> Result<SolverReport> {
    config.validate()?;
    if *b.layout != **a.layout() || *x.layout != **a.layout() {
        return Err(Error::usage("right-hand side, iterate and matrix distributions differ"));
    }
    let mut ws = Workspace::default();
    let out = Engine::new(cluster, a, config).and_then(|mut e| e.run(&mut ws, b, x));
    ws.release(cluster);
    out
}

struct Engine<'a> {
    cluster: &'a mut SimCluster,
    a: &'a DistCsr,
    cfg: &'a SolverConfig,
    report: SolverReport,
    start: crate::time::SimTime,
}

struct StepChecks {
    fired: bool,
    non_finite: bool,
}

impl<'a> Engine<'a> {
    fn new(cluster: &'a mut SimCluster, a: &'a DistCsr, cfg: &'a SolverConfig) -> Result<Self> {
        let start = cluster.clock();
        Ok(Engine {
            cluster,
            a,
            cfg,
            report: SolverReport::default(),
            start,
        })
    }

    fn finish(&mut self) -> SolverReport {
        self.report.simulated_elapsed = self.cluster.clock() - self.start;
        std::mem::take(&mut self.report)
    }

    fn run(&mut self, ws: &mut Workspace, b: &DistVector, x: &DistVector) -> Result<SolverReport> {
        let layout = Arc::clone(self.a.layout());
        let m = self.cfg.restart;
        let kind = self.cfg.workspace;
        let policy = self.cfg.skeptical_policy;
        let pipelined = self.cfg.pipeline_depth == 1;

        let bnorm = linalg::norm2(self.cluster, b)?;
        if bnorm == 0.0 {
            linalg::fill(self.cluster, x, 0.0);
            self.report.converged = true;
            self.report.residual_history.push(0.0);
            self.report.iteration_log.push(IterationRecord {
                iteration: 0,
                residual_estimate: 0.0,
                true_residual: Some(0.0),
                clock: self.cluster.clock(),
            });
            return Ok(self.finish());
        }

        let r = ws.vector(self.cluster, kind, "gmres.r", &layout)?;
        let w = ws.vector(self.cluster, kind, "gmres.w", &layout)?;
        let mut basis = Vec::with_capacity(m + 1);
        for i in 0..=m {
            basis.push(ws.vector(self.cluster, kind, &format!("gmres.v{i}"), &layout)?);
        }
        let mut zs = Vec::new();
        let mut p = None;
        if pipelined {
            for i in 0..=m {
                zs.push(ws.vector(self.cluster, kind, &format!("gmres.z{i}"), &layout)?);
            }
            p = Some(ws.vector(self.cluster, kind, "gmres.p", &layout)?);
        }
        let anorm = match policy {
            SkepticalPolicy::Off => None,
            _ => Some(inf_norm(self.cluster, self.a)?),
        };
        let checkpoint = if policy == SkepticalPolicy::RejectAndRestart {
            let c = ws.vector(self.cluster, Reliability::Reliable, "x.verified", &layout)?;
            linalg::copy(self.cluster, x, &c)?;
            Some(c)
        } else {
            None
        };

        let mut consecutive = 0usize;
        let mut cycles = 0usize;
        loop {
            linalg::spmv(self.cluster, self.a, x, &w)?;
            linalg::sub_into(self.cluster, b, &w, &r)?;
            let beta = linalg::norm2(self.cluster, &r)?;
            let rel = beta / bnorm;
            self.report.final_true_residual = rel;
            match self.report.iteration_log.last_mut() {
                None => {
                    self.report.residual_history.push(rel);
                    self.report.iteration_log.push(IterationRecord {
                        iteration: 0,
                        residual_estimate: rel,
                        true_residual: Some(rel),
                        clock: self.cluster.clock(),
                    });
                }
                Some(last) => last.true_residual = Some(rel),
            }
            if !rel.is_finite() {
                let iteration = self.report.iterations;
                return Err(Error::Diverged {
                    iteration,
                    report: Box::new(self.finish()),
                });
            }
            if rel <= self.cfg.tol {
                self.report.converged = true;
                break;
            }
            if self.report.iterations >= self.cfg.maxit {
                break;
            }
            if cycles > 0 {
                self.report.restarts += 1;
            }
            cycles += 1;

            linalg::div_into(self.cluster, &r, beta, &basis[0])?;
            if pipelined {
                linalg::spmv(self.cluster, self.a, &basis[0], &zs[0])?;
            }
            let mut h = Hessenberg::new(m, beta);
            let mut prev_est = beta;
            let mut use_cols = 0;
            let mut rejected = false;
            for j in 0..m {
                if self.report.iterations >= self.cfg.maxit {
                    break;
                }
                let col = if pipelined {
                    self.pipelined_step(j, &basis, &zs, p.as_ref().expect("pipelined"), &w)?
                } else {
                    self.mgs_step(j, &basis, &w)?
                };
                let est = h.push_column(col.clone())?;
                self.report.iterations += 1;
                let it = self.report.iterations;
                self.report.residual_history.push(est / bnorm);
                self.report.iteration_log.push(IterationRecord {
                    iteration: it,
                    residual_estimate: est / bnorm,
                    true_residual: None,
                    clock: self.cluster.clock(),
                });

                let checks = match anorm {
                    Some(anorm) => self.check_step(it, j, &col, anorm, est, prev_est, &basis, &h)?,
                    None => StepChecks {
                        fired: false,
                        non_finite: false,
                    },
                };
                prev_est = est;
                if checks.fired && policy == SkepticalPolicy::RejectAndRestart {
                    rejected = true;
                    break;
                }
                if checks.non_finite && policy == SkepticalPolicy::Continue {
                    break;
                }
                use_cols = j + 1;
                if h.breakdown() || est / bnorm <= self.cfg.tol {
                    break;
                }
            }

            if rejected {
                self.report.cycle_rejections += 1;
                consecutive += 1;
                let checkpoint = checkpoint.as_ref().expect("checkpoint kept for rejection");
                linalg::copy(self.cluster, checkpoint, x)?;
                if consecutive > self.cfg.max_rejections {
                    return Err(Error::PersistentCorruption {
                        rejections: consecutive,
                        report: Box::new(self.finish()),
                    });
                }
                continue;
            }
            consecutive = 0;
            let y = h.solve_leading(use_cols);
            for (yi, v) in y.iter().zip(&basis) {
                linalg::axpy(self.cluster, *yi, v, x)?;
            }
            if let Some(c) = &checkpoint {
                linalg::copy(self.cluster, x, c)?;
            }
        }
        Ok(self.finish())
    }

    /// One modified Gram-Schmidt step; writes `v_{j+1}` unless the step breaks down.
    fn mgs_step(&mut self, j: usize, basis: &[DistVector], w: &DistVector) -> Result<Vec<f64>> {
        linalg::spmv(self.cluster, self.a, &basis[j], w)?;
        let mut col = Vec::with_capacity(j + 2);
        for v in &basis[..=j] {
            let hij = linalg::dot(self.cluster, w, v)?;
            linalg::axpy(self.cluster, -hij, v, w)?;
            col.push(hij);
        }
        let hn = linalg::norm2(self.cluster, w)?;
        col.push(hn);
        if !is_breakdown(&col) {
            linalg::div_into(self.cluster, w, hn, &basis[j + 1])?;
        }
        Ok(col)
    }

    /// One pipelined step: the fused reduction for column j is in flight while
    /// `A z_j` is computed. Maintains `z_i = A v_i` by recurrence.
    fn pipelined_step(
        &mut self,
        j: usize,
        basis: &[DistVector],
        zs: &[DistVector],
        p: &DistVector,
        w: &DistVector,
    ) -> Result<Vec<f64>> {
        let zj = &zs[j];
        let mut pairs: Vec<(&DistVector, &DistVector)> = basis[..=j].iter().map(|v| (v, zj)).collect();
        pairs.push((zj, zj));
        let handle = linalg::idots(self.cluster, &pairs)?;
        linalg::spmv(self.cluster, self.a, zj, p)?;
        let vals = self.cluster.wait(handle)?;
        let mut col: Vec<f64> = vals[..=j].to_vec();
        let zz = vals[j + 1];
        let mut t = zz;
        for hij in &col {
            t -= hij * hij;
        }

        linalg::copy(self.cluster, zj, w)?;
        for (hij, v) in col.iter().zip(basis) {
            linalg::axpy(self.cluster, -hij, v, w)?;
        }
        let hn = if t.is_finite() && t > PYTHAGORAS_FLOOR * zz {
            t.sqrt()
        } else {
            linalg::norm2(self.cluster, w)?
        };
        col.push(hn);
        if !is_breakdown(&col) {
            linalg::div_into(self.cluster, w, hn, &basis[j + 1])?;
            linalg::copy(self.cluster, p, w)?;
            for (hij, z) in col[..=j].iter().zip(zs) {
                linalg::axpy(self.cluster, -hij, z, w)?;
            }
            linalg::div_into(self.cluster, w, hn, &zs[j + 1])?;
        }
        Ok(col)
    }

    #[allow(clippy::too_many_arguments)]
    fn check_step(
        &mut self,
        iteration: usize,
        j: usize,
        col: &[f64],
        anorm: f64,
        est: f64,
        prev_est: f64,
        basis: &[DistVector],
        h: &Hessenberg,
    ) -> Result<StepChecks> {
        let mut out = StepChecks {
            fired: false,
            non_finite: false,
        };
        let record = |report: &mut SolverReport, check, observed, threshold| {
            report.detections.push(Detection {
                iteration,
                check,
                observed,
                threshold,
            });
        };

        if col.iter().any(|v| !v.is_finite()) {
            out.non_finite = true;
            out.fired = true;
            record(&mut self.report, CheckName::Finite, f64::INFINITY, f64::MAX);
        }
        let bound = self.cfg.checks.norm_growth_factor * anorm;
        let worst = col
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > bound {
            out.fired = true;
            record(&mut self.report, CheckName::GrowthBound, worst, bound);
        }
        let limit = prev_est * (1.0 + self.cfg.checks.residual_increase_tol);
        if est > limit {
            out.fired = true;
            record(&mut self.report, CheckName::ResidualMonotone, est, limit);
        }
        if let Some(orth_tol) = self.cfg.checks.orth_tol {
            if !out.non_finite && !h.breakdown() {
                let next = &basis[j + 1];
                let pairs: Vec<(&DistVector, &DistVector)> = basis[..=j].iter().map(|v| (v, next)).collect();
                let overlaps = linalg::dots(self.cluster, &pairs)?;
                let worst = overlaps.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if !(worst <= orth_tol) {
                    out.fired = true;
                    record(&mut self.report, CheckName::Orthogonality, worst, orth_tol);
                }
            }
        }
        Ok(out)
    }
}
