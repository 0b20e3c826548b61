//! Tail measures on (0,∞), Poisson point processes with intensity
//! `dt × dν`, and the extremal processes built from their running maxima.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::stats::{replicate, Estimate};
use crate::Error;

type TailFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A σ-finite measure on (0,∞), represented by `u ↦ ν(u,∞)`.
///
/// User-supplied tails must be finite, non-negative, non-increasing and
/// diverge as `u → 0⁺`.
#[derive(Clone)]
pub enum TailMeasure {
    /// `ν(u,∞) = k / u`.
    Pareto { k: f64 },
    Custom(TailFn),
}

impl fmt::Debug for TailMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailMeasure::Pareto { k } => f.debug_struct("Pareto").field("k", k).finish(),
            TailMeasure::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

const INVERSION_RTOL: f64 = 1e-12;

impl TailMeasure {
    pub fn pareto(k: f64) -> Result<Self, Error> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Domain(format!("Pareto constant must be positive, got {k}")));
        }
        Ok(TailMeasure::Pareto { k })
    }

    pub fn custom<F>(tail: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TailMeasure::Custom(Arc::new(tail))
    }

    /// `ν(u,∞)`.
    pub fn tail_mass(&self, u: f64) -> Result<f64, Error> {
        if !(u > 0.0) {
            return Err(Error::Domain(format!("tail mass needs u > 0, got {u}")));
        }
        Ok(self.tail_unchecked(u))
    }

    fn tail_unchecked(&self, u: f64) -> f64 {
        match self {
            TailMeasure::Pareto { k } => k / u,
            TailMeasure::Custom(f) => f(u),
        }
    }

    /// The level `u` with `ν(u,∞) = mass`, for `mass > 0`.
    pub fn inverse_tail(&self, mass: f64) -> Result<f64, Error> {
        if !(mass > 0.0) {
            return Err(Error::Domain(format!("inverse tail needs positive mass, got {mass}")));
        }
        match self {
            TailMeasure::Pareto { k } => Ok(k / mass),
            TailMeasure::Custom(f) => invert_decreasing(f.as_ref(), mass),
        }
    }

    /// Quantile of the extremal marginal `F_t(u) = exp(-t ν(u,∞))` at level
    /// `q ∈ (0,1)`.
    pub fn marginal_quantile(&self, t: f64, q: f64) -> Result<f64, Error> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level {q} outside (0,1)")));
        }
        self.inverse_tail(-q.ln() / t)
    }
}

/// Bisection in `ln u` for a non-increasing tail.
fn invert_decreasing(f: &(dyn Fn(f64) -> f64 + Send + Sync), mass: f64) -> Result<f64, Error> {
    let mut lo = 1.0f64;
    let mut hi = 1.0f64;
    let mut guard = 0;
    while f(lo) < mass {
        lo *= 0.5;
        guard += 1;
        if guard > 2100 {
            return Err(Error::Numerical("tail never reaches the requested mass".into()));
        }
    }
    guard = 0;
    while f(hi) > mass {
        hi *= 2.0;
        guard += 1;
        if guard > 2100 {
            return Err(Error::Numerical("tail does not decay to the requested mass".into()));
        }
    }
    for _ in 0..200 {
        if hi - lo <= INVERSION_RTOL * hi {
            break;
        }
        let mid = (lo * hi).sqrt();
        if f(mid) > mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One atom of a Poisson point process: rescaled time and magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSample {
    pub time: f64,
    pub magnitude: f64,
}

/// `exp(-t ν(u,∞))`.
pub fn extremal_marginal(m: &TailMeasure, t: f64, u: f64) -> Result<f64, Error> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    Ok((-t * m.tail_mass(u)?).exp())
}

/// `P(M(t_1) ≤ x_1, …, M(t_k) ≤ x_k)` for an extremal process with
/// `F(x) = exp(-ν(x,∞))`.
pub fn fdd_probability(m: &TailMeasure, times: &[f64], thresholds: &[f64]) -> Result<f64, Error> {
    if times.is_empty() || times.len() != thresholds.len() {
        return Err(Error::Precondition(
            "times and thresholds must be non-empty and of equal length".into(),
        ));
    }
    if times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("times must be positive and strictly increasing".into()));
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("thresholds must be non-decreasing".into()));
    }
    if times.len() == 1 {
        return extremal_marginal(m, times[0], thresholds[0]);
    }
    let mut log_p = 0.0;
    let mut prev = 0.0;
    for (&t, &x) in times.iter().zip(thresholds) {
        log_p -= (t - prev) * m.tail_mass(x)?;
        prev = t;
    }
    Ok(log_p.exp())
}

/// Samples the point process restricted to `(0, t_max] × (u_min, ∞)`.
pub fn sample_poisson_points<R: Rng + ?Sized>(
    m: &TailMeasure,
    t_max: f64,
    u_min: f64,
    rng: &mut R,
) -> Result<Vec<PointSample>, Error> {
    if !(t_max > 0.0) {
        return Err(Error::Domain(format!("t_max must be positive, got {t_max}")));
    }
    if !(u_min > 0.0) {
        return Err(Error::Domain(
            "u_min = 0 gives a window of infinite intensity".into(),
        ));
    }
    let base = m.tail_mass(u_min)?;
    if !base.is_finite() {
        return Err(Error::Domain("tail mass at u_min is infinite".into()));
    }
    let mean = t_max * base;
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| Error::Numerical(format!("Poisson({mean}): {e}")))?
            .sample(rng) as usize
    } else {
        0
    };
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        // 1 - U lies in (0, 1].
        let time = t_max * (1.0 - rng.random::<f64>());
        let v = 1.0 - rng.random::<f64>();
        let magnitude = match m {
            TailMeasure::Pareto { .. } => u_min / v,
            TailMeasure::Custom(_) => {
                if v == 1.0 {
                    u_min
                } else {
                    m.inverse_tail(v * base)?.max(u_min)
                }
            }
        };
        points.push(PointSample { time, magnitude });
    }
    Ok(points)
}

/// `max{x_k : t_k ≤ t}`, or `floor` when no point has arrived by `t`.
pub fn sup_path(points: &[PointSample], t: f64, floor: f64) -> f64 {
    points
        .iter()
        .filter(|p| p.time <= t)
        .map(|p| p.magnitude)
        .fold(floor, f64::max)
}

/// The right-continuous running maximum of a point configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalPath {
    pub floor: f64,
    /// `(time, level)` pairs at which the path jumps, increasing in both.
    pub breakpoints: Vec<(f64, f64)>,
}

impl ExtremalPath {
    pub fn from_points(points: &[PointSample], floor: f64) -> Self {
        let mut sorted: Vec<PointSample> = points.to_vec();
        sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut level = floor;
        let mut breakpoints = Vec::new();
        for p in sorted {
            if p.magnitude > level {
                level = p.magnitude;
                breakpoints.push((p.time, level));
            }
        }
        Self { floor, breakpoints }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.breakpoints.partition_point(|(bt, _)| *bt <= t);
        if k == 0 {
            self.floor
        } else {
            self.breakpoints[k - 1].1
        }
    }

    /// Whether the path jumps inside the time window `(t, t + s]`.
    pub fn jumps_in(&self, t: f64, s: f64) -> bool {
        self.breakpoints
            .iter()
            .any(|(bt, _)| *bt > t && *bt <= t + s)
    }
}

/// `t / (t + s)`: the probability that the range of the extremal process
/// with tail `K/u` avoids `(t, t+s)`. Independent of `K`.
pub fn range_avoidance_prob(k: f64, t: f64, s: f64) -> Result<f64, Error> {
    if !(k > 0.0) {
        return Err(Error::Domain(format!("K must be positive, got {k}")));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("s must be non-negative, got {s}")));
    }
    Ok(t / (t + s))
}

/// Monte Carlo estimate of `P(no record in (t, t+s])` from truncated point
/// process realizations. A record occurs iff `sup_path(t+s) > sup_path(t)`.
pub fn estimate_range_avoidance(
    m: &TailMeasure,
    t: f64,
    s: f64,
    u_min: f64,
    reps: u64,
    seed: u64,
) -> Result<Estimate, Error> {
    m.tail_mass(u_min)?;
    if !(t > 0.0 && s >= 0.0) {
        return Err(Error::Domain("need t > 0 and s >= 0".into()));
    }
    let acc = replicate(seed, "range-avoidance", reps, |rng, _| {
        let pts = sample_poisson_points(m, t + s, u_min, rng).expect("validated window");
        let before = sup_path(&pts, t, u_min);
        let after = sup_path(&pts, t + s, u_min);
        if after > before {
            0.0
        } else {
            1.0
        }
    });
    Ok(acc.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::replica_rng;
    use proptest::prelude::*;

    #[test]
    fn pareto_tail_values() {
        let m = TailMeasure::pareto(4.0).unwrap();
        assert_eq!(m.tail_mass(2.0).unwrap(), 2.0);
        let m6 = TailMeasure::pareto(2.0 * 3.0).unwrap();
        assert_eq!(m6.tail_mass(1.0).unwrap(), 6.0);
        assert!(m.tail_mass(1e300).unwrap() < 1e-299);
        assert!(m.tail_mass(0.0).is_err());
        assert!(m.tail_mass(-1.0).is_err());
        assert!(TailMeasure::pareto(0.0).is_err());
    }

    #[test]
    fn marginal_values() {
        for k in [0.5, 4.0, 17.0] {
            let m = TailMeasure::pareto(k).unwrap();
            let v = extremal_marginal(&m, 1.0, k).unwrap();
            assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        }
        let m = TailMeasure::pareto(4.0).unwrap();
        assert!((extremal_marginal(&m, 2.0, 8.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((extremal_marginal(&m, 0.5, 1.0).unwrap() - 0.1353352832366127).abs() < 1e-15);
        assert!(extremal_marginal(&m, 0.0, 1.0).is_err());
        assert!(extremal_marginal(&m, 1.0, 0.0).is_err());
    }

    #[test]
    fn fdd_cases() {
        let m = TailMeasure::pareto(4.0).unwrap();
        let single = fdd_probability(&m, &[1.0], &[3.0]).unwrap();
        assert_eq!(single, extremal_marginal(&m, 1.0, 3.0).unwrap());
        let two = fdd_probability(&m, &[1.0, 2.0], &[4.0, 4.0]).unwrap();
        assert!((two - (-2.0f64).exp()).abs() < 1e-15);
        assert!(fdd_probability(&m, &[1.0, 2.0], &[5.0, 3.0]).is_err());
        assert!(fdd_probability(&m, &[2.0, 1.0], &[3.0, 5.0]).is_err());
    }

    #[test]
    fn sup_path_examples() {
        let pts = [
            PointSample { time: 0.5, magnitude: 3.0 },
            PointSample { time: 1.5, magnitude: 2.0 },
        ];
        assert_eq!(sup_path(&pts, 1.0, 0.1), 3.0);
        assert_eq!(sup_path(&pts, 2.0, 0.1), 3.0);
        assert_eq!(sup_path(&[], 1.0, 0.25), 0.25);
        let path = ExtremalPath::from_points(&pts, 0.1);
        assert_eq!(path.breakpoints, vec![(0.5, 3.0)]);
        assert_eq!(path.value_at(0.2), 0.1);
        assert_eq!(path.value_at(0.5), 3.0);
    }

    #[test]
    fn range_avoidance_values() {
        assert_eq!(range_avoidance_prob(4.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(range_avoidance_prob(4.0, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(range_avoidance_prob(4.0, 1.0, 3.0).unwrap(), 0.25);
        assert!(range_avoidance_prob(4.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn poisson_window_is_respected() {
        let m = TailMeasure::pareto(4.0).unwrap();
        let mut rng = replica_rng(1, "window", 0);
        for _ in 0..100 {
            let pts = sample_poisson_points(&m, 2.0, 1.0, &mut rng).unwrap();
            assert!(pts.iter().all(|p| p.magnitude > 1.0 && p.time <= 2.0 && p.time > 0.0));
        }
        assert!(sample_poisson_points(&m, 2.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn poisson_count_mean() {
        // Expected count t_max K / u_min = 8; variance 8.
        let m = TailMeasure::pareto(4.0).unwrap();
        let acc = replicate(3, "count", 100_000, |rng, _| {
            sample_poisson_points(&m, 2.0, 1.0, rng).unwrap().len() as f64
        });
        assert!((acc.mean - 8.0).abs() <= 3.0 * acc.std_error(), "{acc:?}");
    }

    #[test]
    fn custom_tail_matches_pareto() {
        let custom = TailMeasure::custom(|u| 4.0 / u);
        let q = custom.marginal_quantile(1.0, 0.5).unwrap();
        let exact = 4.0 / std::f64::consts::LN_2;
        assert!((q - exact).abs() <= 1e-11 * exact);
        let mut rng = replica_rng(5, "custom", 0);
        let pts = sample_poisson_points(&custom, 1.0, 0.5, &mut rng).unwrap();
        assert!(pts.iter().all(|p| p.magnitude >= 0.5));
    }

    proptest! {
        #[test]
        fn marginal_monotone(k in 0.1f64..10.0, t in 0.01f64..10.0, u in 0.01f64..100.0,
                             du in 0.0f64..10.0, dt in 0.0f64..10.0) {
            let m = TailMeasure::pareto(k).unwrap();
            let base = extremal_marginal(&m, t, u).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(extremal_marginal(&m, t, u + du).unwrap() >= base);
            prop_assert!(extremal_marginal(&m, t + dt, u).unwrap() <= base);
        }

        #[test]
        fn sup_path_non_decreasing(seed in 0u64..1000, t1 in 0.0f64..2.0, dt in 0.0f64..2.0) {
            let m = TailMeasure::pareto(4.0).unwrap();
            let mut rng = replica_rng(seed, "prop", 0);
            let pts = sample_poisson_points(&m, 4.0, 0.5, &mut rng).unwrap();
            prop_assert!(sup_path(&pts, t1 + dt, 0.5) >= sup_path(&pts, t1, 0.5));
            let path = ExtremalPath::from_points(&pts, 0.5);
            prop_assert_eq!(path.value_at(t1), sup_path(&pts, t1, 0.5));
        }
    }
}
