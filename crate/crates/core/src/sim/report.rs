//! Post-run checks on a trajectory.

use std::fmt;

use super::trajectory::Trajectory;

/// Pointwise comparison of `‖x_c(k)‖` against the envelope bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub within: Vec<bool>,
    /// `max_k ‖x_c(k)‖ / bound(k)`; zero for an empty run.
    pub max_ratio: f64,
    pub first_violation: Option<usize>,
    /// Asymptotic residual term of the bound.
    pub residual: f64,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.first_violation.is_none()
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.first_violation {
            None => write!(
                f,
                "state bound holds at all {} steps (max ratio {:.4})",
                self.within.len(),
                self.max_ratio
            ),
            Some(k) => write!(f, "state bound violated first at step {k} (max ratio {:.4})", self.max_ratio),
        }
    }
}

pub fn bound_check(trajectory: &Trajectory) -> BoundReport {
    let mut within = Vec::with_capacity(trajectory.records.len());
    let mut max_ratio = 0.0f64;
    let mut first_violation = None;
    for r in &trajectory.records {
        let ok = r.norm_xc <= r.bound;
        if !ok && first_violation.is_none() {
            first_violation = Some(r.k);
        }
        within.push(ok);
        max_ratio = max_ratio.max(r.norm_xc / r.bound);
    }
    BoundReport {
        within,
        max_ratio,
        first_violation,
        residual: trajectory.bounds.residual,
    }
}

/// Bit-exact agreement between the encrypted loop and its plaintext shadow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquivalenceReport {
    pub steps: usize,
    pub identical: usize,
    pub first_mismatch: Option<usize>,
    /// Steps recorded without a shadow loop.
    pub unchecked: usize,
}

impl EquivalenceReport {
    pub fn holds(&self) -> bool {
        self.first_mismatch.is_none() && self.unchecked == 0
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} steps identical to the shadow loop", self.identical, self.steps)?;
        if let Some(k) = self.first_mismatch {
            write!(f, ", first mismatch at step {k}")?;
        }
        if self.unchecked > 0 {
            write!(f, ", {} steps without shadow", self.unchecked)?;
        }
        Ok(())
    }
}

pub fn equivalence_audit(trajectory: &Trajectory) -> EquivalenceReport {
    let mut report = EquivalenceReport {
        steps: trajectory.records.len(),
        identical: 0,
        first_mismatch: None,
        unchecked: 0,
    };
    for r in &trajectory.records {
        match r.equivalent() {
            Some(true) => report.identical += 1,
            Some(false) => {
                report.first_mismatch.get_or_insert(r.k);
            }
            None => report.unchecked += 1,
        }
    }
    report
}
