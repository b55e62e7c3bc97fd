use serde::{Serialize, Serializer};

use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    /// C1: the new Hessenberg column is finite.
    Finite,
    /// C2: every new Hessenberg entry is within the Arnoldi growth bound.
    GrowthBound,
    /// C3: the residual estimate does not increase within a cycle.
    ResidualMonotone,
    /// Optional audit of basis orthogonality.
    Orthogonality,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Detection {
    pub iteration: usize,
    pub check: CheckName,
    #[serde(serialize_with = "lossless")]
    pub observed: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    #[serde(serialize_with = "lossless")]
    pub residual_estimate: f64,
    #[serde(serialize_with = "lossless_opt")]
    pub true_residual: Option<f64>,
    pub clock: SimTime,
}

/// Outcome of one solve. Residuals are relative to `‖b‖`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    /// Entry 0 is the initial true residual; entry k the estimate after iteration k.
    #[serde(serialize_with = "lossless_vec")]
    pub residual_history: Vec<f64>,
    pub simulated_elapsed: SimTime,
    pub detections: Vec<Detection>,
    pub inner_rejections: usize,
    pub inner_iterations: usize,
    pub cycle_rejections: usize,
    pub restarts: usize,
    #[serde(serialize_with = "lossless")]
    pub final_true_residual: f64,
    pub iteration_log: Vec<IterationRecord>,
}

impl SolverReport {
    pub fn detected(&self) -> bool {
        !self.detections.is_empty()
    }

    pub fn first_detection(&self) -> Option<&Detection> {
        self.detections.first()
    }
}

/// Finite values serialize as numbers, the rest as "nan", "inf" or "-inf".
pub fn lossless<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn lossless_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => lossless(x, s),
        None => s.serialize_none(),
    }
}

fn lossless_vec<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    struct One(f64);
    impl Serialize for One {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            lossless(&self.0, s)
        }
    }
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&One(*x))?;
    }
    seq.end()
}
