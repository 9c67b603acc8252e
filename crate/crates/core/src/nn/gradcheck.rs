/// Central-difference step used throughout the test-suite.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Denominator floor for the relative error so that near-zero gradients are
/// compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-6)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic` with central finite differences of `f` around `params`.
/// An empty parameter vector passes vacuously.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], step: f64, mut f: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        checked: params.len(),
    };
    let mut p = params.to_vec();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = f(&p);
        p[i] = orig - step;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(REL_FLOOR);
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        if report.worst_index.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
        report.max_abs_error = report.max_abs_error.max(abs);
    }
    report
}
