use serde::{Deserialize, Serialize};

use crate::store::{complexity, LibrarySnapshot};

/// Success rate, library complexity Ω and the penalized objective
/// F = success_rate − λ·Ω for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTrace {
    pub iteration: u32,
    pub success_rate: f64,
    pub omega: usize,
    pub lambda: f64,
    #[serde(rename = "F")]
    pub f: f64,
}

impl ObjectiveTrace {
    pub fn new(iteration: u32, success_rate: f64, omega: usize, lambda: f64) -> Self {
        Self {
            iteration,
            success_rate,
            omega,
            lambda,
            f: success_rate - lambda * omega as f64,
        }
    }

    pub fn holds(&self) -> bool {
        self.f == self.success_rate - self.lambda * self.omega as f64
    }
}

pub fn objective_trace(
    iteration: u32,
    snapshot: &LibrarySnapshot,
    success_rate: f64,
    lambda: f64,
) -> ObjectiveTrace {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    ObjectiveTrace::new(iteration, success_rate, complexity(snapshot), lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalized_objective() {
        let t = ObjectiveTrace::new(1, 0.8, 10, 0.01);
        assert!((t.f - 0.7).abs() < 1e-12);
        assert!(t.holds());
    }

    #[test]
    fn zero_lambda_is_success_rate() {
        assert_eq!(ObjectiveTrace::new(1, 0.55, 42, 0.0).f, 0.55);
    }

    #[test]
    fn empty_library_is_success_rate() {
        let t = objective_trace(2, &LibrarySnapshot::default(), 0.25, 3.0);
        assert_eq!((t.omega, t.f), (0, 0.25));
    }

    #[test]
    fn serializes_f_under_its_symbol() {
        let v = serde_json::to_value(ObjectiveTrace::new(1, 0.5, 2, 0.1)).unwrap();
        assert!(v.get("F").is_some());
    }
}
