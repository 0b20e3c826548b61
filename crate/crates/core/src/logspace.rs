//! Log-domain arithmetic for sums of heavy-tailed positive terms.
//!
//! `f64::NEG_INFINITY` stands for the logarithm of an empty sum.

/// `ln(e^a + e^b)`. Never smaller than `max(a, b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

const LEAF: usize = 16;

fn pairwise_sum(xs: &[f64], shift: f64) -> f64 {
    if xs.len() <= LEAF {
        xs.iter().map(|x| (x - shift).exp()).sum()
    } else {
        let (l, r) = xs.split_at(xs.len() / 2);
        pairwise_sum(l, shift) + pairwise_sum(r, shift)
    }
}

/// `ln Σ e^{x_i}` with a max shift and pairwise summation of the shifted
/// exponentials. Every shifted term is at most one, so the inner sum never
/// exceeds the term count.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + pairwise_sum(xs, max).ln()
}

/// `ln Σ e^{x_i}` over a slice restricted to finite or `-inf` entries,
/// also returning the maximum term.
pub fn log_sum_and_max(xs: &[f64]) -> (f64, f64) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (log_sum_exp(xs), max)
}

/// Running log-domain sum, one term at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogAccumulator {
    value: f64,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        Self {
            value: f64::NEG_INFINITY,
        }
    }
}

impl LogAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, log_term: f64) {
        self.value = log_add_exp(self.value, log_term);
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}
