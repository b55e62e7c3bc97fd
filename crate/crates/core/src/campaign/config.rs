use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::{build_plan, FaultKind, FlipTarget, GeneratorSpec, RegionRef};
use crate::heat::HeatConfig;
use crate::linalg::{read_matrix_market, CsrMatrix};
use crate::memory::Reliability;
use crate::sim::{ClusterConfig, CostModel, JitterModel};
use crate::solvers::{InnerConfig, SkepticalPolicy, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Gmres,
    SkepticalGmres,
    FtGmres,
    PipelinedVsSync,
    HeatLflr,
}

impl Experiment {
    /// Arms run for every seed, in output order.
    pub fn arms(self) -> &'static [&'static str] {
        match self {
            Experiment::Gmres => &["gmres"],
            Experiment::SkepticalGmres => &["gmres", "skeptical_gmres"],
            Experiment::FtGmres => &["gmres", "ft_gmres"],
            Experiment::PipelinedVsSync => &["sync", "pipelined"],
            Experiment::HeatLflr => &["fault_free", "lflr"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Gmres => "gmres",
            Experiment::SkepticalGmres => "skeptical_gmres",
            Experiment::FtGmres => "ft_gmres",
            Experiment::PipelinedVsSync => "pipelined_vs_sync",
            Experiment::HeatLflr => "heat_lflr",
        }
    }

    fn is_heat(self) -> bool {
        self == Experiment::HeatLflr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSource {
    Identity { n: usize },
    Diagonal { values: Vec<f64> },
    /// diag(1, 2, ..., n)
    DiagonalRange { n: usize },
    #[serde(rename = "laplacian_1d")]
    Laplacian1d { n: usize },
    /// 5-point Laplacian on a k x k grid.
    #[serde(rename = "laplacian_2d")]
    Laplacian2d { k: usize },
    /// Path relative to the config file.
    MatrixMarket { path: PathBuf },
}

impl MatrixSource {
    pub fn load(&self, base_dir: &Path) -> Result<CsrMatrix> {
        let nonzero = |n: usize| {
            if n == 0 {
                Err(Error::config("matrix dimension must be positive"))
            } else {
                Ok(n)
            }
        };
        match self {
            MatrixSource::Identity { n } => Ok(CsrMatrix::identity(nonzero(*n)?)),
            MatrixSource::Diagonal { values } => CsrMatrix::diagonal(values),
            MatrixSource::DiagonalRange { n } => {
                let values: Vec<f64> = (1..=nonzero(*n)?).map(|i| i as f64).collect();
                CsrMatrix::diagonal(&values)
            }
            MatrixSource::Laplacian1d { n } => Ok(CsrMatrix::laplacian_1d(nonzero(*n)?)),
            MatrixSource::Laplacian2d { k } => Ok(CsrMatrix::laplacian_2d(nonzero(*k)?)),
            MatrixSource::MatrixMarket { path } => read_matrix_market(&base_dir.join(path)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsSpec {
    #[default]
    Ones,
    Values {
        values: Vec<f64>,
    },
    /// `A * ones`, so the exact solution is all ones.
    ImageOfOnes,
}

impl RhsSpec {
    pub fn build(&self, a: &CsrMatrix) -> Result<Vec<f64>> {
        let b = match self {
            RhsSpec::Ones => vec![1.0; a.n_rows()],
            RhsSpec::Values { values } => values.clone(),
            RhsSpec::ImageOfOnes => a.mul_vec(&vec![1.0; a.n_cols()])?,
        };
        if b.len() != a.n_rows() {
            return Err(Error::config(format!(
                "right-hand side has {} entries, matrix has {} rows",
                b.len(),
                a.n_rows()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("right-hand side must be finite"));
        }
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearProblem {
    pub matrix: MatrixSource,
    #[serde(default)]
    pub rhs: RhsSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub inner: InnerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Problem {
    Linear(LinearProblem),
    Heat(HeatConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub n_ranks: usize,
    #[serde(default)]
    pub jitter: JitterModel,
    #[serde(default)]
    pub costs: CostModel,
}

impl ClusterSpec {
    pub fn cluster_config(&self, seed: u64) -> ClusterConfig {
        ClusterConfig {
            n_ranks: self.n_ranks,
            seed,
            jitter: self.jitter,
            costs: self.costs,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("campaign-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: default_out_dir() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub experiment: Experiment,
    pub problem: Problem,
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub faults: GeneratorSpec,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: OutputSpec,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One problem found while loading or checking a config.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Dotted location in the document, `.` for the whole config.
    pub path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    fn at(path: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            path: path.to_string(),
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "line {l}, column {c}: ")?;
        }
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Joins diagnostics into one config error.
pub fn diagnostics_error(diags: &[Diagnostic]) -> Error {
    let lines: Vec<String> = diags.iter().map(ToString::to_string).collect();
    Error::Config(lines.join("; "))
}

impl CampaignConfig {
    /// Parses a config document. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> std::result::Result<Self, Diagnostic> {
        let mut de = serde_json::Deserializer::from_str(text);
        let mut cfg: CampaignConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Diagnostic {
                path,
                line: Some(inner.line()),
                column: Some(inner.column()),
                message: inner.to_string(),
            }
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, Diagnostic> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Diagnostic::at(".", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Semantic checks that need no simulation.
    pub fn check(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.seeds.is_empty() {
            out.push(Diagnostic::at("seeds", "at least one seed is required"));
        }
        if let Err(e) = self.cluster.cluster_config(0).validate() {
            out.push(Diagnostic::at("cluster", e.to_string()));
        }
        let n_ranks = self.cluster.n_ranks;
        match (&self.problem, self.experiment.is_heat()) {
            (Problem::Heat(h), true) => {
                if let Err(e) = h.validate() {
                    out.push(Diagnostic::at("problem", e.to_string()));
                }
                if n_ranks > h.n_global {
                    out.push(Diagnostic::at(
                        "cluster.n_ranks",
                        format!("{n_ranks} ranks exceed the {} grid points", h.n_global),
                    ));
                }
            }
            (Problem::Linear(lp), false) => self.check_linear(lp, &mut out),
            (_, true) => out.push(Diagnostic::at("problem", "heat_lflr needs a heat problem")),
            (_, false) => out.push(Diagnostic::at(
                "problem",
                format!("{} needs a linear problem", self.experiment.name()),
            )),
        }
        self.check_faults(&mut out);
        out
    }

    fn check_linear(&self, lp: &LinearProblem, out: &mut Vec<Diagnostic>) {
        if let Err(e) = lp.solver.validate() {
            out.push(Diagnostic::at("problem.solver", e.to_string()));
        }
        if let Err(e) = lp.inner.solver_config().validate() {
            out.push(Diagnostic::at("problem.inner", e.to_string()));
        }
        if self.experiment == Experiment::SkepticalGmres && lp.solver.skeptical_policy == SkepticalPolicy::Off {
            out.push(Diagnostic::at(
                "problem.solver.skeptical_policy",
                "skeptical_gmres needs a policy other than off",
            ));
        }
        match lp.matrix.load(&self.base_dir) {
            Ok(a) => {
                if !a.is_square() {
                    out.push(Diagnostic::at("problem.matrix", "matrix must be square"));
                }
                if self.cluster.n_ranks > a.n_rows() {
                    out.push(Diagnostic::at(
                        "cluster.n_ranks",
                        format!("{} ranks exceed the {} matrix rows", self.cluster.n_ranks, a.n_rows()),
                    ));
                }
                if let Err(e) = lp.rhs.build(&a) {
                    out.push(Diagnostic::at("problem.rhs", e.to_string()));
                }
            }
            Err(e) => out.push(Diagnostic::at("problem.matrix", e.to_string())),
        }
    }

    fn check_faults(&self, out: &mut Vec<Diagnostic>) {
        let n_ranks = self.cluster.n_ranks.max(1);
        if let Some(&seed) = self.seeds.first() {
            if let Err(e) = build_plan(&self.faults, seed, n_ranks) {
                out.push(Diagnostic::at("faults", e.to_string()));
            }
        }
        let GeneratorSpec::Explicit { events } = &self.faults else {
            return;
        };
        let fixed = self.fixed_regions();
        for (i, ev) in events.iter().enumerate() {
            let path = format!("faults.events[{i}]");
            let FaultKind::BitFlip { target, .. } = &ev.kind else {
                continue;
            };
            let FlipTarget::Element { region, .. } = target else {
                continue;
            };
            let reliable = match region {
                RegionRef::Id(id) => fixed.get(*id as usize).is_some_and(|(_, k)| *k == Reliability::Reliable),
                RegionRef::Label(label) => {
                    fixed.iter().any(|(l, k)| l == label && *k == Reliability::Reliable)
                        || self.reliable_label(label)
                }
            };
            if reliable {
                out.push(Diagnostic::at(
                    &format!("{path}.target.region"),
                    format!("bit flip targets reliable region {region:?}; only unreliable data may be corrupted"),
                ));
            }
        }
    }

    /// Regions every run allocates before the plan is installed, in id order.
    pub fn fixed_regions(&self) -> Vec<(String, Reliability)> {
        match self.problem {
            Problem::Linear(_) => vec![
                ("b".into(), Reliability::Reliable),
                ("x".into(), Reliability::Reliable),
            ],
            Problem::Heat(_) => vec![
                ("heat.u".into(), Reliability::Unreliable),
                ("heat.sent.left".into(), Reliability::Reliable),
                ("heat.sent.right".into(), Reliability::Reliable),
            ],
        }
    }

    /// Whether an arm of this experiment allocates `label` as reliable storage.
    fn reliable_label(&self, label: &str) -> bool {
        match &self.problem {
            Problem::Heat(_) => label.starts_with("heat.sent."),
            Problem::Linear(lp) => {
                let ft = self.experiment == Experiment::FtGmres
                    && label.starts_with("ft.")
                    && !label.starts_with("ft.inner.");
                let verified = label == "x.verified";
                let workspace = lp.solver.workspace == Reliability::Reliable && label.starts_with("gmres.");
                ft || verified || workspace
            }
        }
    }

    /// Loads the matrix and right-hand side of a linear problem.
    pub fn linear_system(&self) -> Result<(Arc<CsrMatrix>, Vec<f64>)> {
        let Problem::Linear(lp) = &self.problem else {
            return Err(Error::config("not a linear problem"));
        };
        let a = lp.matrix.load(&self.base_dir)?;
        let b = lp.rhs.build(&a)?;
        Ok((Arc::new(a), b))
    }
}
