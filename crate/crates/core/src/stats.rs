//! Empirical distributions, Kolmogorov–Smirnov comparison and streaming
//! Monte Carlo aggregation.
//!
//! Replicated experiments draw their randomness from `(seed, domain, index)`
//! triples (see [`replica_rng`]); [`replicate`] evaluates replicas in
//! parallel but always reduces them in index order, so the result does not
//! depend on the number of worker threads.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::measures::{extremal_marginal, TailMeasure};
use crate::Error;

/// Sorted sample with CDF and quantile queries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Sorts the sample. NaNs are rejected.
    pub fn new(mut values: Vec<f64>) -> Result<Self, Error> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Domain("sample contains NaN".into()));
        }
        values.sort_by(|a, b| a.total_cmp(b));
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fraction of the sample that is `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let below = self.values.partition_point(|v| *v <= x);
        below as f64 / self.values.len() as f64
    }

    /// Lower empirical quantile: the smallest sample value `v` with
    /// `cdf(v) >= q`.
    pub fn quantile(&self, q: f64) -> Result<f64, Error> {
        if self.values.is_empty() {
            return Err(Error::Domain("quantile of an empty sample".into()));
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Domain(format!("quantile level {q} outside [0,1]")));
        }
        let n = self.values.len();
        let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
        Ok(self.values[rank - 1])
    }
}

/// Supremum distance between the empirical CDF and `cdf`.
///
/// Both one-sided gaps are evaluated at every distinct sample value; tied
/// values are treated as a single jump.
pub fn ks_statistic<F>(emp: &EmpiricalDistribution, cdf: F) -> Result<f64, Error>
where
    F: Fn(f64) -> f64,
{
    let n = emp.len();
    if n == 0 {
        return Err(Error::Domain("KS statistic of an empty sample".into()));
    }
    let nf = n as f64;
    let v = emp.values();
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < n {
        let x = v[i];
        let mut j = i;
        while j < n && v[j] == x {
            j += 1;
        }
        let f = cdf(x).clamp(0.0, 1.0);
        let before = i as f64 / nf;
        let after = j as f64 / nf;
        d = d.max(after - f).max(f - before);
        i = j;
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Asymptotic Kolmogorov critical value `c(α)/√N`, `c(α) = sqrt(-ln(α/2)/2)`.
pub fn ks_threshold(count: usize, significance: f64) -> Result<f64, Error> {
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::Domain(format!(
            "significance {significance} outside (0,1)"
        )));
    }
    if count < 35 {
        return Err(Error::Domain(format!(
            "asymptotic KS threshold needs at least 35 samples, got {count}; use an exact small-sample table"
        )));
    }
    let c = (-(significance / 2.0).ln() / 2.0).sqrt();
    Ok(c / (count as f64).sqrt())
}

/// Streaming count / mean / second central moment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MCAccumulator {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl MCAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let mut acc = Self::new();
        for v in values {
            acc.push(v);
        }
        acc
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Pooled combination (Chan et al. parallel variance update).
    pub fn merge(&self, other: &MCAccumulator) -> MCAccumulator {
        if other.count == 0 {
            return *self;
        }
        if self.count == 0 {
            return *other;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        MCAccumulator {
            count: self.count + other.count,
            mean: (na * self.mean + nb * other.mean) / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
        }
    }

    /// Unbiased sample variance; zero for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.mean,
            se: self.std_error(),
            count: self.count,
        }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub count: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            se: 0.0,
            count: 0,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            value: self.value * factor,
            se: self.se * factor.abs(),
            count: self.count,
        }
    }

    /// `|value - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed for a named experiment so that unrelated experiments
/// sharing one master seed never share streams.
pub fn domain_seed(seed: u64, domain: &str) -> u64 {
    let mut h = splitmix64(seed);
    for b in domain.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

/// The random stream of replica `index` inside experiment `domain`.
pub fn replica_rng(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(domain_seed(seed, domain));
    rng.set_stream(index);
    rng
}

const REPLICA_CHUNK: u64 = 256;

/// Runs `reps` independent replicas of `f` and aggregates their outputs.
///
/// Replicas run on the current rayon pool in fixed-size chunks; chunk
/// accumulators are merged in index order, so the output is bitwise
/// identical for any thread count.
pub fn replicate<F>(seed: u64, domain: &str, reps: u64, f: F) -> MCAccumulator
where
    F: Fn(&mut ChaCha8Rng, u64) -> f64 + Sync,
{
    let chunks = reps.div_ceil(REPLICA_CHUNK);
    let parts: Vec<MCAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = MCAccumulator::new();
            let end = ((c + 1) * REPLICA_CHUNK).min(reps);
            for i in c * REPLICA_CHUNK..end {
                let mut rng = replica_rng(seed, domain, i);
                acc.push(f(&mut rng, i));
            }
            acc
        })
        .collect();
    parts
        .iter()
        .fold(MCAccumulator::new(), |acc, part| acc.merge(part))
}

/// Like [`replicate`] but keeps every replica output, in index order.
pub fn replicate_collect<T, F>(seed: u64, domain: &str, reps: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, domain, i);
            f(&mut rng, i)
        })
        .collect()
}

/// One row of a quantile comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub level: f64,
    pub empirical: f64,
    pub theoretical: f64,
}

/// Outcome of comparing a sample with an extremal-process marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub count: usize,
    pub time: f64,
    pub statistic: f64,
    pub threshold: f64,
    pub significance: f64,
    pub pass: bool,
    pub quantiles: Vec<QuantileRow>,
}

impl KsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("KS report serializes")
    }

    /// Quantile table as CSV with 17 significant digits.
    pub fn write_quantile_csv<W: Write>(&self, out: W) -> Result<(), Error> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["level", "empirical", "theoretical"])?;
        for row in &self.quantiles {
            w.write_record([
                format_float(row.level),
                format_float(row.empirical),
                format_float(row.theoretical),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Formats a float with 17 significant digits so that it reloads bit-exactly.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub const QUANTILE_LEVELS: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95];

/// KS comparison of samples of a powered clock at time `t` against
/// `F_t(u) = exp(-t ν(u,∞))`.
pub fn empirical_vs_extremal(
    samples: &[f64],
    measure: &TailMeasure,
    t: f64,
    significance: f64,
) -> Result<KsReport, Error> {
    let emp = EmpiricalDistribution::new(samples.to_vec())?;
    let threshold = ks_threshold(emp.len(), significance)?;
    let statistic = ks_statistic(&emp, |u| {
        if u <= 0.0 {
            0.0
        } else {
            extremal_marginal(measure, t, u).unwrap_or(0.0)
        }
    })?;
    let quantiles = QUANTILE_LEVELS
        .iter()
        .map(|&q| {
            Ok(QuantileRow {
                level: q,
                empirical: emp.quantile(q)?,
                theoretical: measure.marginal_quantile(t, q)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(KsReport {
        count: emp.len(),
        time: t,
        statistic,
        threshold,
        significance,
        pass: statistic <= threshold,
        quantiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ks_on_quantile_grid_is_half_a_step() {
        let n = 200;
        // Uniform cdf, sample at (i - 0.5)/N.
        let sample: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
        let emp = EmpiricalDistribution::new(sample).unwrap();
        let d = ks_statistic(&emp, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ks_against_step_cdf() {
        let emp = EmpiricalDistribution::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // cdf jumps from 0 to 1 at 2.5: the largest gap is at x=2 (0.5 vs 0).
        let d = ks_statistic(&emp, |x| if x < 2.5 { 0.0 } else { 1.0 }).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_handles_ties() {
        let emp = EmpiricalDistribution::new(vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        // Uniform on [0,4]: the tie at 1 jumps the empirical CDF to 0.75 vs 0.25.
        let d = ks_statistic(&emp, |x| (x / 4.0).clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_empty_is_error() {
        let emp = EmpiricalDistribution::new(vec![]).unwrap();
        assert!(ks_statistic(&emp, |x| x).is_err());
    }

    #[test]
    fn ks_threshold_values() {
        let t = ks_threshold(10_000, 0.05).unwrap();
        assert!((t - 0.01358).abs() < 1e-5);
        let t01 = ks_threshold(10_000, 0.01).unwrap();
        assert!((t01 - 0.01628).abs() < 1e-5);
        assert!(ks_threshold(20_000, 0.05).unwrap() < t);
        assert!(ks_threshold(10_000, 0.1).unwrap() < t);
        assert!(ks_threshold(34, 0.05).is_err());
    }

    #[test]
    fn merge_matches_direct_accumulation() {
        let a = MCAccumulator::from_values([1.0, 2.0]);
        let b = MCAccumulator::from_values([3.0, 4.0]);
        let all = MCAccumulator::from_values([1.0, 2.0, 3.0, 4.0]);
        let m = a.merge(&b);
        assert_eq!(m.count, 4);
        assert!((m.mean - 2.5).abs() < 1e-12 * 2.5);
        assert!((m.m2 - 5.0).abs() < 1e-12 * 5.0);
        assert!((m.m2 - all.m2).abs() < 1e-12 * all.m2);
        let e = MCAccumulator::new();
        assert_eq!(a.merge(&e), a);
        assert_eq!(e.merge(&a), a);
    }

    #[test]
    fn quantiles_and_cdf() {
        let emp = EmpiricalDistribution::new(vec![3.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(emp.quantile(0.5).unwrap(), 2.0);
        assert_eq!(emp.quantile(1.0).unwrap(), 4.0);
        assert_eq!(emp.quantile(0.0).unwrap(), 1.0);
        assert_eq!(emp.cdf(2.5), 0.5);
        assert!(emp.quantile(1.5).is_err());
    }

    #[test]
    fn replicate_is_thread_count_invariant() {
        let f = |rng: &mut ChaCha8Rng, _i: u64| rand::Rng::random::<f64>(rng);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| replicate(7, "t", 5000, f));
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| replicate(7, "t", 5000, f));
        assert_eq!(one, many);
        assert!((one.mean - 0.5).abs() < 4.0 * one.std_error());
    }

    #[test]
    fn extremal_self_consistency() {
        // Inverse-CDF draws from F_t itself must pass at 1%.
        let m = TailMeasure::pareto(4.0).unwrap();
        let t = 2.0;
        let samples = replicate_collect(11, "self", 20_000, |rng, _| {
            let q: f64 = rand::Rng::random_range(rng, f64::MIN_POSITIVE..1.0);
            m.marginal_quantile(t, q).unwrap()
        });
        let r = empirical_vs_extremal(&samples, &m, t, 0.01).unwrap();
        assert!(r.pass, "{r:?}");
        // Median at tK/ln 2.
        let med = r.quantiles.iter().find(|q| q.level == 0.5).unwrap();
        assert!((med.theoretical - t * 4.0 / std::f64::consts::LN_2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_commutative(
            xs in proptest::collection::vec(-1e3f64..1e3, 3..200),
            cut1 in 0usize..1000, cut2 in 0usize..1000,
        ) {
            let n = xs.len();
            let (i, j) = { let a = cut1 % n; let b = cut2 % n; (a.min(b), a.max(b)) };
            let a = MCAccumulator::from_values(xs[..i].iter().copied());
            let b = MCAccumulator::from_values(xs[i..j].iter().copied());
            let c = MCAccumulator::from_values(xs[j..].iter().copied());
            let left = a.merge(&b).merge(&c);
            let right = a.merge(&b.merge(&c));
            let swapped = c.merge(&a).merge(&b);
            let tol = |x: f64| 1e-12 * x.abs().max(1.0);
            prop_assert_eq!(left.count, n as u64);
            prop_assert!((left.mean - right.mean).abs() <= tol(left.mean));
            prop_assert!((left.m2 - right.m2).abs() <= tol(left.m2) * 10.0);
            prop_assert!((left.mean - swapped.mean).abs() <= tol(left.mean));
            prop_assert!((left.m2 - swapped.m2).abs() <= tol(left.m2) * 10.0);
        }

        #[test]
        fn ks_statistic_is_a_probability_gap(
            xs in proptest::collection::vec(-5f64..5.0, 1..100),
        ) {
            let emp = EmpiricalDistribution::new(xs).unwrap();
            let d = ks_statistic(&emp, |x| 1.0 / (1.0 + (-x).exp())).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
