//! GMRES family: plain restarted GMRES, skeptical GMRES with invariant
//! checks, depth-one pipelined GMRES, and fault-tolerant flexible GMRES.

mod config;
mod ft;
mod gmres;
mod report;

pub use config::{CheckTolerances, InnerConfig, SkepticalPolicy, SolverConfig};
pub use ft::{ft_gmres, ft_gmres_with, GmresInner, InnerSolver};
pub use gmres::{gmres, inf_norm, pipelined_gmres, skeptical_gmres, solve};
pub use report::{lossless, lossless_opt, CheckName, Detection, IterationRecord, SolverReport};
