//! Campaign runner: every seed runs every arm of one experiment against the
//! same fault plan, and the results are written as JSON lines, a residual
//! CSV and a summary.

mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    diagnostics_error, CampaignConfig, ClusterSpec, Diagnostic, Experiment, LinearProblem, MatrixSource,
    OutputSpec, Problem, RhsSpec,
};

use crate::error::{Error, Result};
use crate::faults::{build_plan, FaultPlan};
use crate::heat::{self, HeatConfig, HeatRecovery};
use crate::linalg::{CsrMatrix, DistCsr, DistVector, Layout};
use crate::memory::Reliability;
use crate::sim::SimCluster;
use crate::solvers::lossless_opt;
use crate::solvers::{self, SkepticalPolicy, SolverReport};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    NotConverged,
    Diverged,
    PersistentCorruption,
    RankFailure,
    Unrecoverable,
    Completed,
}

impl Outcome {
    /// Outcomes that make the campaign exit with a failure status.
    pub fn is_fatal(self) -> bool {
        matches!(self, Outcome::PersistentCorruption | Outcome::Unrecoverable)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatOutcome {
    pub steps: usize,
    pub persists: usize,
    pub recoveries: Vec<HeatRecovery>,
    /// Final field equals the fault-free field bit for bit.
    pub matches_fault_free: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub arm: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub converged: bool,
    /// Converged and the true residual, recomputed serially against the
    /// original right-hand side, is within tolerance.
    pub verified: bool,
    #[serde(serialize_with = "lossless_opt")]
    pub true_relative_residual: Option<f64>,
    pub simulated_elapsed: SimTime,
    pub planned_faults: usize,
    pub injected_faults: usize,
    pub plan_digest: String,
    pub injected_digest: String,
    pub ledger_digest: String,
    pub error: Option<String>,
    pub report: Option<SolverReport>,
    pub heat: Option<HeatOutcome>,
    #[serde(skip)]
    pub field: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    pub converged: usize,
    pub verified: usize,
    pub mean_simulated_elapsed: f64,
    pub detections: usize,
    pub runs_with_detection: usize,
    pub inner_rejections: usize,
    pub cycle_rejections: usize,
    pub diverged: usize,
    pub rank_failures: usize,
    pub fatal: usize,
    pub injected_faults: usize,
    pub recoveries: usize,
    pub matches_fault_free: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub experiment: Experiment,
    pub seeds: usize,
    pub arms: Vec<ArmSummary>,
    pub fatal_runs: usize,
}

#[derive(Clone, Debug)]
pub struct CampaignResult {
    pub records: Vec<RunRecord>,
    pub summary: CampaignSummary,
}

impl CampaignResult {
    pub fn any_fatal(&self) -> bool {
        self.summary.fatal_runs > 0
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seeds: Option<Vec<u64>>,
    pub arm: Option<String>,
}

/// Parses a seed range `a..b` (exclusive) or `a..=b` (inclusive).
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::config(format!("seed range {text:?} is not of the form a..b or a..=b"));
    let (lo, hi, inclusive) = if let Some((a, b)) = text.split_once("..=") {
        (a, b, true)
    } else {
        let (a, b) = text.split_once("..").ok_or_else(bad)?;
        (a, b, false)
    };
    let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
    let seeds: Vec<u64> = if inclusive { (lo..=hi).collect() } else { (lo..hi).collect() };
    if seeds.is_empty() {
        return Err(Error::config(format!("seed range {text:?} is empty")));
    }
    Ok(seeds)
}

/// Checks the config and returns every problem found.
pub fn validate_config(path: &Path) -> std::result::Result<CampaignConfig, Vec<Diagnostic>> {
    let cfg = CampaignConfig::load(path).map_err(|d| vec![d])?;
    let diags = cfg.check();
    if diags.is_empty() {
        Ok(cfg)
    } else {
        Err(diags)
    }
}

enum Prepared {
    Linear { a: Arc<CsrMatrix>, b: Vec<f64> },
    Heat(HeatConfig),
}

pub fn run_campaign(cfg: &CampaignConfig, opts: &RunOptions) -> Result<CampaignResult> {
    let mut cfg = cfg.clone();
    if let Some(seeds) = &opts.seeds {
        cfg.seeds = seeds.clone();
    }
    let diags = cfg.check();
    if !diags.is_empty() {
        return Err(diagnostics_error(&diags));
    }
    let arms: Vec<&'static str> = match &opts.arm {
        None => cfg.experiment.arms().to_vec(),
        Some(name) => {
            let arm = cfg.experiment.arms().iter().find(|a| *a == name).ok_or_else(|| {
                Error::config(format!(
                    "experiment {} has no arm {name:?}; arms are {:?}",
                    cfg.experiment.name(),
                    cfg.experiment.arms()
                ))
            })?;
            vec![*arm]
        }
    };
    let prepared = match &cfg.problem {
        Problem::Linear(_) => {
            let (a, b) = cfg.linear_system()?;
            Prepared::Linear { a, b }
        }
        Problem::Heat(h) => Prepared::Heat(h.clone()),
    };

    let per_seed: Vec<Result<Vec<RunRecord>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(&cfg, &prepared, &arms, seed))
        .collect();
    let mut records = Vec::new();
    for r in per_seed {
        records.extend(r?);
    }
    let summary = summarize(cfg.experiment, cfg.seeds.len(), &arms, &records);
    Ok(CampaignResult { records, summary })
}

fn run_seed(cfg: &CampaignConfig, prepared: &Prepared, arms: &[&str], seed: u64) -> Result<Vec<RunRecord>> {
    let plan = build_plan(&cfg.faults, seed, cfg.cluster.n_ranks)?;
    let oracle = match prepared {
        Prepared::Heat(h) => {
            let mut cluster = SimCluster::new(cfg.cluster.cluster_config(seed))?;
            Some(heat::run_plain(&mut cluster, h)?.field)
        }
        Prepared::Linear { .. } => None,
    };
    arms.iter()
        .map(|&arm| {
            let mut cluster = SimCluster::new(cfg.cluster.cluster_config(seed))?;
            let mut record = match prepared {
                Prepared::Linear { a, b } => run_linear(cfg, &mut cluster, a, b, arm, &plan)?,
                Prepared::Heat(h) => run_heat(&mut cluster, h, arm, &plan, oracle.as_deref().expect("heat oracle"))?,
            };
            record.run_id = format!("{}-{seed}-{arm}", cfg.experiment.name());
            record.seed = seed;
            record.planned_faults = cluster.plan().len();
            record.injected_faults = cluster.injected_count();
            record.plan_digest = cluster.plan().digest();
            record.injected_digest = cluster.ledger().injected_digest();
            record.ledger_digest = cluster.ledger().digest();
            record.simulated_elapsed = cluster.clock();
            Ok(record)
        })
        .collect()
}

fn blank(arm: &str, outcome: Outcome) -> RunRecord {
    RunRecord {
        run_id: String::new(),
        arm: arm.to_string(),
        seed: 0,
        outcome,
        converged: false,
        verified: false,
        true_relative_residual: None,
        simulated_elapsed: SimTime::ZERO,
        planned_faults: 0,
        injected_faults: 0,
        plan_digest: String::new(),
        injected_digest: String::new(),
        ledger_digest: String::new(),
        error: None,
        report: None,
        heat: None,
        field: None,
    }
}

fn run_linear(
    cfg: &CampaignConfig,
    cluster: &mut SimCluster,
    a: &Arc<CsrMatrix>,
    b_vals: &[f64],
    arm: &str,
    plan: &FaultPlan,
) -> Result<RunRecord> {
    let Problem::Linear(lp) = &cfg.problem else {
        unreachable!("checked by run_campaign")
    };
    let layout = Arc::new(Layout::balanced(a.n_rows(), cluster.n_ranks()));
    let dist = DistCsr::new(Arc::clone(a), Arc::clone(&layout))?;
    let b = DistVector::from_global(cluster, Reliability::Reliable, "b", &layout, b_vals)?;
    let x = DistVector::alloc(cluster, Reliability::Reliable, "x", &layout)?;
    cluster.install_plan(plan.clone())?;

    let plain = solvers::SolverConfig {
        skeptical_policy: SkepticalPolicy::Off,
        pipeline_depth: 0,
        ..lp.solver.clone()
    };
    let solved = match arm {
        "gmres" | "sync" => solvers::gmres(cluster, &dist, &b, &x, &plain),
        "skeptical_gmres" => solvers::skeptical_gmres(
            cluster,
            &dist,
            &b,
            &x,
            &solvers::SolverConfig {
                pipeline_depth: 0,
                ..lp.solver.clone()
            },
        ),
        "pipelined" => solvers::pipelined_gmres(
            cluster,
            &dist,
            &b,
            &x,
            &solvers::SolverConfig {
                pipeline_depth: 1,
                skeptical_policy: SkepticalPolicy::Off,
                ..lp.solver.clone()
            },
        ),
        "ft_gmres" => solvers::ft_gmres(cluster, &dist, &b, &x, &plain, &lp.inner),
        other => return Err(Error::usage(format!("unknown arm {other}"))),
    };
    cluster.finish();

    let mut record = match solved {
        Ok(rep) => {
            let outcome = if rep.converged {
                Outcome::Converged
            } else {
                Outcome::NotConverged
            };
            let mut r = blank(arm, outcome);
            r.converged = rep.converged;
            r.report = Some(rep);
            r
        }
        Err(Error::Diverged { report, .. }) => with_report(arm, Outcome::Diverged, *report),
        Err(Error::PersistentCorruption { report, .. }) => with_report(arm, Outcome::PersistentCorruption, *report),
        Err(e @ Error::RankFailure { .. }) => {
            let mut r = blank(arm, Outcome::RankFailure);
            r.error = Some(e.to_string());
            r
        }
        Err(e) => return Err(e),
    };
    let xs = x.gather(cluster);
    let rr = true_relative_residual(a, b_vals, &xs)?;
    record.true_relative_residual = Some(rr);
    record.verified = record.converged && rr <= lp.solver.tol;
    Ok(record)
}

fn with_report(arm: &str, outcome: Outcome, report: SolverReport) -> RunRecord {
    let mut r = blank(arm, outcome);
    r.error = Some(format!("{outcome:?}"));
    r.report = Some(report);
    r
}

/// `‖b − A x‖ / ‖b‖` computed serially, independent of the simulated cluster.
pub fn true_relative_residual(a: &CsrMatrix, b: &[f64], x: &[f64]) -> Result<f64> {
    let ax = a.mul_vec(x)?;
    let r: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai) * (bi - ai)).sum();
    let bn: f64 = b.iter().map(|v| v * v).sum();
    Ok(if bn == 0.0 { r.sqrt() } else { (r / bn).sqrt() })
}

fn run_heat(cluster: &mut SimCluster, cfg: &HeatConfig, arm: &str, plan: &FaultPlan, oracle: &[f64]) -> Result<RunRecord> {
    let out = match arm {
        "fault_free" => heat::run_plain(cluster, cfg),
        "lflr" => heat::run_with_lflr(cluster, cfg, plan.clone()),
        other => return Err(Error::usage(format!("unknown arm {other}"))),
    };
    match out {
        Ok(run) => {
            let matches = run.field.len() == oracle.len()
                && run.field.iter().zip(oracle).all(|(a, b)| a.to_bits() == b.to_bits());
            let mut r = blank(arm, Outcome::Completed);
            r.converged = true;
            r.verified = matches;
            r.heat = Some(HeatOutcome {
                steps: run.steps,
                persists: run.persists,
                recoveries: run.recoveries,
                matches_fault_free: matches,
            });
            r.field = Some(run.field);
            Ok(r)
        }
        Err(e @ Error::Unrecoverable(_)) => {
            let mut r = blank(arm, Outcome::Unrecoverable);
            r.error = Some(e.to_string());
            Ok(r)
        }
        Err(e @ Error::RankFailure { .. }) => {
            let mut r = blank(arm, Outcome::RankFailure);
            r.error = Some(e.to_string());
            Ok(r)
        }
        Err(e) => Err(e),
    }
}

fn summarize(experiment: Experiment, seeds: usize, arms: &[&str], records: &[RunRecord]) -> CampaignSummary {
    let arms = arms
        .iter()
        .map(|&arm| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.arm == arm).collect();
            let mut s = ArmSummary {
                arm: arm.to_string(),
                runs: runs.len(),
                ..Default::default()
            };
            let mut elapsed = 0.0;
            for r in &runs {
                s.converged += usize::from(r.converged);
                s.verified += usize::from(r.verified);
                s.diverged += usize::from(r.outcome == Outcome::Diverged);
                s.rank_failures += usize::from(r.outcome == Outcome::RankFailure);
                s.fatal += usize::from(r.outcome.is_fatal());
                s.injected_faults += r.injected_faults;
                elapsed += r.simulated_elapsed.as_units();
                if let Some(rep) = &r.report {
                    s.detections += rep.detections.len();
                    s.runs_with_detection += usize::from(rep.detected());
                    s.inner_rejections += rep.inner_rejections;
                    s.cycle_rejections += rep.cycle_rejections;
                }
                if let Some(h) = &r.heat {
                    s.recoveries += h.recoveries.len();
                    s.matches_fault_free += usize::from(h.matches_fault_free);
                }
            }
            if !runs.is_empty() {
                s.mean_simulated_elapsed = elapsed / runs.len() as f64;
            }
            s
        })
        .collect::<Vec<_>>();
    CampaignSummary {
        experiment,
        seeds,
        fatal_runs: arms.iter().map(|a| a.fatal).sum(),
        arms,
    }
}

/// Human-readable summary, identical for identical results.
pub fn summary_text(summary: &CampaignSummary) -> String {
    let mut out = format!("experiment: {}\nseeds: {}\n", summary.experiment.name(), summary.seeds);
    for a in &summary.arms {
        out.push_str(&format!(
            "\n[{}]\nruns: {}\nconverged: {}/{}\nverified: {}/{}\nmean simulated elapsed: {}\n\
             detections: {} (in {} runs)\ninner rejections: {}\ncycle rejections: {}\n\
             diverged: {}\nrank failures: {}\nfatal: {}\ninjected faults: {}\n",
            a.arm,
            a.runs,
            a.converged,
            a.runs,
            a.verified,
            a.runs,
            a.mean_simulated_elapsed,
            a.detections,
            a.runs_with_detection,
            a.inner_rejections,
            a.cycle_rejections,
            a.diverged,
            a.rank_failures,
            a.fatal,
            a.injected_faults,
        ));
        if summary.experiment == Experiment::HeatLflr {
            out.push_str(&format!(
                "recoveries: {}\nmatches fault-free: {}/{}\n",
                a.recoveries, a.matches_fault_free, a.runs
            ));
        }
    }
    out
}

/// Writes `runs.jsonl`, `residuals.csv`, `summary.txt`, `summary.json` and,
/// for heat campaigns, one `field-<run_id>.csv` per run into `dir`.
pub fn write_outputs(result: &CampaignResult, dir: &Path, generated_at_unix: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let to_io = |e: serde_json::Error| Error::Io(e.into());

    let mut runs = BufWriter::new(fs::File::create(dir.join("runs.jsonl"))?);
    for r in &result.records {
        serde_json::to_writer(&mut runs, r).map_err(to_io)?;
        runs.write_all(b"\n")?;
    }
    runs.flush()?;

    let mut csv = BufWriter::new(fs::File::create(dir.join("residuals.csv"))?);
    writeln!(csv, "run_id,arm,seed,iteration,residual_estimate,true_residual,clock")?;
    for r in &result.records {
        let Some(rep) = &r.report else { continue };
        for it in &rep.iteration_log {
            let truth = it.true_residual.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.run_id,
                r.arm,
                r.seed,
                it.iteration,
                it.residual_estimate,
                truth,
                it.clock.as_units()
            )?;
        }
    }
    csv.flush()?;

    for r in &result.records {
        if let Some(field) = &r.field {
            heat::write_field_csv(&dir.join(format!("field-{}.csv", r.run_id)), field)?;
        }
    }

    fs::write(dir.join("summary.txt"), summary_text(&result.summary))?;

    #[derive(Serialize)]
    struct Stamped<'a> {
        generated_at_unix: u64,
        #[serde(flatten)]
        summary: &'a CampaignSummary,
    }
    let json = serde_json::to_string_pretty(&Stamped {
        generated_at_unix,
        summary: &result.summary,
    })
    .map_err(to_io)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}
