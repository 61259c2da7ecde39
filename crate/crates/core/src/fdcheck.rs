//! Central finite-difference gradient checking.
//!
//! Used as the independent oracle for every backward rule and for
//! full-model gradient verification. It only ever calls the forward
//! closure, so it cannot share a code path with the backward pass it
//! checks.

use crate::tape::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Settings for [`check_gradient`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Central-difference step.
    pub h: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Check at most this many entries per input (deterministic subsample);
    /// `None` checks every entry.
    pub max_entries_per_input: Option<usize>,
    /// Seed for the subsample.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { h: 1e-5, floor: 1e-6, max_entries_per_input: None, seed: 0 }
    }
}

/// Result of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
    /// (input index, entry index) of the worst entry.
    pub worst: Option<(usize, usize)>,
}

/// Compares analytic gradients against central finite differences.
///
/// `forward` maps inputs to the scalar objective; `analytic` returns one
/// gradient per input at the unperturbed point. Relative error per entry is
/// `|fd - g| / max(|fd|, |g|, floor)`.
pub fn check_gradient<F>(
    forward: F,
    inputs: &[Mat],
    analytic: &dyn Fn(&[Mat]) -> Vec<Mat>,
    cfg: GradCheck,
) -> GradCheckReport
where
    F: Fn(&[Mat]) -> f64,
{
    let grads = analytic(inputs);
    assert_eq!(grads.len(), inputs.len(), "one gradient per input expected");

    let mut work: Vec<Mat> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for (ii, input) in inputs.iter().enumerate() {
        let total = input.len();
        let entries: Vec<usize> = match cfg.max_entries_per_input {
            Some(k) if k < total => {
                let mut all: Vec<usize> = (0..total).collect();
                all.shuffle(&mut rng);
                all.truncate(k);
                all.sort_unstable();
                all
            }
            _ => (0..total).collect(),
        };
        let cols = input.ncols();
        for e in entries {
            let (r, c) = (e / cols, e % cols);
            let orig = work[ii][(r, c)];
            work[ii][(r, c)] = orig + cfg.h;
            let plus = forward(&work);
            work[ii][(r, c)] = orig - cfg.h;
            let minus = forward(&work);
            work[ii][(r, c)] = orig;

            let fd = (plus - minus) / (2.0 * cfg.h);
            let g = grads[ii][(r, c)];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(cfg.floor);
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = Some((ii, e));
            }
        }
    }

    GradCheckReport { max_rel_error: max_rel, entries_checked: checked, worst }
}
