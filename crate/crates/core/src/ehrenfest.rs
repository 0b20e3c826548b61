//! The Ehrenfest chain: Hamming distance of hypercube simple random walk
//! from its starting point.
//!
//! On `{0, …, n}` the chain moves down with probability `k/n` and up with
//! probability `1 − k/n`. It is reversible for Binomial(n, 1/2), and its
//! hitting times have closed forms, so it serves as an exact reference for
//! hypercube quantities at small `n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::logspace::log_sum_exp;
use crate::stats::{replicate, replicate_collect, Estimate};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EhrenfestChain {
    pub n: usize,
}

impl EhrenfestChain {
    pub fn new(n: usize) -> Result<Self, Error> {
        if n == 0 {
            return Err(Error::Domain("Ehrenfest chain needs n >= 1".into()));
        }
        Ok(Self { n })
    }

    /// `p_{k,k−1} = k/n`.
    pub fn p_down(&self, k: usize) -> f64 {
        k as f64 / self.n as f64
    }

    /// `p_{k,k+1} = 1 − k/n`.
    pub fn p_up(&self, k: usize) -> f64 {
        (self.n - k) as f64 / self.n as f64
    }

    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut m = vec![vec![0.0; n + 1]; n + 1];
        for (k, row) in m.iter_mut().enumerate() {
            if k > 0 {
                row[k - 1] = self.p_down(k);
            }
            if k < n {
                row[k + 1] = self.p_up(k);
            }
        }
        m
    }

    /// Law of `Q(steps)` started from `start`, by repeated vector-matrix
    /// products on the tridiagonal kernel.
    pub fn exact_distribution(&self, start: usize, steps: usize) -> Result<Vec<f64>, Error> {
        let n = self.n;
        if start > n {
            return Err(Error::Domain(format!("start {start} outside 0..={n}")));
        }
        let mut cur = vec![0.0; n + 1];
        cur[start] = 1.0;
        for _ in 0..steps {
            cur = step_distribution(self, &cur);
        }
        Ok(cur)
    }

    /// `E_{l−1} T_l = (n/l) Σ_{j=0}^{l−1} Π_{k=j+1}^{l} k/(n−k+1)`.
    pub fn expected_hitting_adjacent(&self, l: usize) -> Result<f64, Error> {
        let n = self.n;
        if l == 0 || l > n {
            return Err(Error::Domain(format!("need 1 <= l <= {n}, got {l}")));
        }
        // Suffix log-products: terms[j] = Σ_{k=j+1}^{l} ln(k/(n−k+1)).
        let mut terms = vec![0.0; l];
        let mut acc = 0.0;
        for j in (0..l).rev() {
            let k = j + 1;
            acc += (k as f64).ln() - ((n - k + 1) as f64).ln();
            terms[j] = acc;
        }
        Ok((n as f64 / l as f64) * log_sum_exp(&terms).exp())
    }

    /// `E_0 T_d = Σ_{l=1}^{d} E_{l−1} T_l`.
    pub fn expected_hitting_from_zero(&self, d: usize) -> Result<f64, Error> {
        if d == 0 || d > self.n {
            return Err(Error::Domain(format!("need 1 <= d <= {}, got {d}", self.n)));
        }
        let mut sum = 0.0;
        let mut comp = 0.0;
        for l in 1..=d {
            let y = self.expected_hitting_adjacent(l)? - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        Ok(sum)
    }

    /// `d / (1 − 2d/n)`, an upper bound on `E_0 T_d` for `d < n/2`.
    pub fn hitting_bound(&self, d: usize) -> Result<f64, Error> {
        if 2 * d >= self.n {
            return Err(Error::Domain(format!(
                "hitting bound undefined for d = {d} >= n/2 = {}",
                self.n as f64 / 2.0
            )));
        }
        let d = d as f64;
        Ok(d / (1.0 - 2.0 * d / self.n as f64))
    }

    pub fn step<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> usize {
        if rng.random::<f64>() * (self.n as f64) < k as f64 {
            k - 1
        } else {
            k + 1
        }
    }

    /// `Z = Σ_{j=1}^{v} 1{Q(j) = d}·(j − d)` along one path from 0.
    pub fn occupation_path<R: Rng + ?Sized>(&self, d: usize, v: usize, rng: &mut R) -> f64 {
        let mut q = 0;
        let mut z = 0.0;
        for j in 1..=v {
            q = self.step(q, rng);
            if q == d {
                z += j as f64 - d as f64;
            }
        }
        z
    }

    /// Monte Carlo estimate of `E_0 Z`.
    pub fn occupation_statistic(&self, d: usize, v: usize, reps: u64, seed: u64) -> Result<Estimate, Error> {
        if d == 0 || d > v || d > self.n {
            return Err(Error::Domain(format!("need 1 <= d <= min(v, n), got d = {d}")));
        }
        Ok(replicate(seed, "ehrenfest-occupation", reps, |rng, _| {
            self.occupation_path(d, v, rng)
        })
        .estimate())
    }

    /// `E_0 Z = Σ_{j=d}^{v} (j − d) P_0(Q(j) = d)`, from the exact laws.
    pub fn occupation_exact(&self, d: usize, v: usize) -> Result<f64, Error> {
        if d > self.n {
            return Err(Error::Domain(format!("d = {d} exceeds n = {}", self.n)));
        }
        let mut dist = self.exact_distribution(0, 0)?;
        let mut total = 0.0;
        for j in 1..=v {
            dist = step_distribution(self, &dist);
            if j >= d {
                total += (j - d) as f64 * dist[d];
            }
        }
        Ok(total)
    }

    /// First time a path from 0 reaches `d`, or `None` past `cap` steps.
    pub fn hitting_time<R: Rng + ?Sized>(&self, d: usize, cap: u64, rng: &mut R) -> Option<u64> {
        let mut q = 0;
        let mut t = 0;
        while q != d {
            if t >= cap {
                return None;
            }
            q = self.step(q, rng);
            t += 1;
        }
        Some(t)
    }

    /// Monte Carlo estimate of `E_0 T_d`.
    pub fn estimate_hitting_time(&self, d: usize, reps: u64, seed: u64) -> Result<Estimate, Error> {
        if d == 0 || d > self.n {
            return Err(Error::Domain(format!("need 1 <= d <= {}, got {d}", self.n)));
        }
        // The mean hitting time of the far end is of order 2^n steps.
        let cap = 1u64 << (self.n.min(40) + 10);
        let samples = replicate_collect(seed, "ehrenfest-hitting", reps, |rng, _| {
            self.hitting_time(d, cap, rng)
        });
        if samples.iter().any(Option::is_none) {
            return Err(Error::Budget {
                budget: cap,
                completed: samples.iter().filter(|s| s.is_some()).count() as u64,
                requested: reps,
            });
        }
        Ok(crate::stats::MCAccumulator::from_values(samples.into_iter().flatten().map(|t| t as f64)).estimate())
    }
}

fn step_distribution(chain: &EhrenfestChain, cur: &[f64]) -> Vec<f64> {
    let n = chain.n;
    let mut next = vec![0.0; n + 1];
    for (k, &mass) in cur.iter().enumerate() {
        if k > 0 {
            next[k - 1] += mass * chain.p_down(k);
        }
        if k < n {
            next[k + 1] += mass * chain.p_up(k);
        }
    }
    next
}

/// Total-variation distance between two probability vectors.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..len).map(|i| (get(a, i) - get(b, i)).abs()).sum::<f64>()
}

/// Per-step comparison of simulated hypercube distances with the exact law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCheck {
    pub n: usize,
    pub reps: u64,
    /// Total-variation distance at steps `1..=steps`.
    pub tv_by_step: Vec<f64>,
    pub max_tv: f64,
}

/// Simulates simple random walk on `{−1,1}^n` and compares the law of
/// `dist(J(0), J(k))` with the Ehrenfest law from 0 for `k ≤ steps`.
pub fn distance_process_check(n: usize, steps: usize, reps: u64, seed: u64) -> Result<DistanceCheck, Error> {
    if n == 0 || n > 64 {
        return Err(Error::Domain(format!("distance check supports 1 <= n <= 64, got {n}")));
    }
    if reps == 0 {
        return Err(Error::Domain("need at least one replica".into()));
    }
    let chain = EhrenfestChain::new(n)?;
    let paths = replicate_collect(seed, "ehrenfest-distance", reps, |rng, _| {
        let mut x: u64 = if n == 64 { rng.random() } else { rng.random::<u64>() & ((1 << n) - 1) };
        let start = x;
        (1..=steps)
            .map(|_| {
                x ^= 1 << rng.random_range(0..n);
                (x ^ start).count_ones() as u8
            })
            .collect::<Vec<u8>>()
    });
    let mut tv_by_step = Vec::with_capacity(steps);
    let mut exact = chain.exact_distribution(0, 0)?;
    for k in 1..=steps {
        exact = step_distribution(&chain, &exact);
        let mut counts = vec![0u64; n + 1];
        for p in &paths {
            counts[p[k - 1] as usize] += 1;
        }
        let emp: Vec<f64> = counts.iter().map(|c| *c as f64 / reps as f64).collect();
        tv_by_step.push(total_variation(&emp, &exact));
    }
    let max_tv = tv_by_step.iter().copied().fold(0.0, f64::max);
    Ok(DistanceCheck {
        n,
        reps,
        tv_by_step,
        max_tv,
    })
}

/// Binomial(n, 1/2) restricted to the parity class of `steps` and renormalized:
/// the large-time law of `Q(steps)` from 0.
pub fn parity_stationary_law(n: usize, steps: usize) -> Vec<f64> {
    let mut law: Vec<f64> = (0..=n)
        .map(|k| {
            if k % 2 == steps % 2 {
                ln_binomial(n, k).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = law.iter().sum();
    law.iter_mut().for_each(|x| *x /= total);
    law
}

/// `ln C(n, k)`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}
