//! Central finite-difference gradient checking.

use crate::params::Params;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged by absolute error instead of amplified rounding noise.
pub const REL_ERR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }

    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a - n| / max(|a| + |n|, REL_ERR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` around
/// `params`, perturbing every scalar in turn. `loss` must be deterministic.
pub fn grad_check<P, F>(params: &P, analytic: &P, mut loss: F, step: f64) -> GradCheckReport
where
    P: Params + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = params.clone();
    let names: Vec<String> = params.named_blocks().into_iter().map(|(n, _)| n).collect();
    let analytic_blocks = analytic.blocks();
    let mut report = Vec::with_capacity(names.len());
    for (bi, name) in names.into_iter().enumerate() {
        let len = analytic_blocks[bi].len();
        let mut worst = BlockError {
            name,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..len {
            let orig = probe.blocks_mut()[bi].data()[i];
            probe.blocks_mut()[bi].data_mut()[i] = orig + step;
            let up = loss(&probe);
            probe.blocks_mut()[bi].data_mut()[i] = orig - step;
            let down = loss(&probe);
            probe.blocks_mut()[bi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic_blocks[bi].data()[i];
            let err = relative_error(a, numeric);
            if err > worst.max_rel_err || !err.is_finite() {
                worst.max_rel_err = if err.is_finite() { err } else { f64::INFINITY };
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        report.push(worst);
    }
    GradCheckReport { blocks: report }
}
