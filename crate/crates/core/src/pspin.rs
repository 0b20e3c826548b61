//! The p-spin SK environment on the hypercube `{−1, 1}^n`.
//!
//! `H_n(x) = n^{(1−p)/2} Σ_{i_1..i_p} J_{i_1..i_p} x_{i_1}···x_{i_p}` with an
//! unsymmetrized tensor of i.i.d. standard Gaussians, so that
//! `E H_n(x) H_n(x') = n R_n(x, x')^p` holds exactly. The environment is
//! `τ_n(x) = exp(β_n H_n(x))`, and the jump chain is simple random walk.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use lru::LruCache;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::{Dynamics, Environment, JumpChain, ScalingSchedule, Walker};
use crate::stats::{domain_seed, replicate, replicate_collect, Estimate, MCAccumulator};
use crate::Error;

/// A configuration `x ∈ {−1, 1}^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinState(pub Vec<i8>);

impl SpinState {
    pub fn new(spins: Vec<i8>) -> Result<Self, Error> {
        if spins.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::Domain("spins must be ±1".into()));
        }
        Ok(Self(spins))
    }

    pub fn all_up(n: usize) -> Self {
        Self(vec![1; n])
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self((0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut y = self.clone();
        y.flip(i);
        y
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|s| -s).collect())
    }

    pub fn hamming(&self, other: &SpinState) -> Result<usize, Error> {
        if self.len() != other.len() {
            return Err(Error::Domain(format!(
                "length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count())
    }

    /// `R_n(x, x') = 1 − 2 dist(x, x')/n`.
    pub fn overlap(&self, other: &SpinState) -> Result<f64, Error> {
        let d = self.hamming(other)?;
        Ok(1.0 - 2.0 * d as f64 / self.len() as f64)
    }
}

/// `R_n(x, x')`.
pub fn overlap(x: &SpinState, y: &SpinState) -> Result<f64, Error> {
    x.overlap(y)
}

/// Flips one uniformly chosen coordinate.
pub fn srw_step<R: Rng + ?Sized>(x: &SpinState, rng: &mut R) -> SpinState {
    x.flipped(rng.random_range(0..x.len()))
}

/// Default limit on stored coupling entries (2 GiB of `f64`).
pub const DEFAULT_TENSOR_BUDGET: usize = 1 << 28;

pub const GENERATOR_ID: &str = "chacha8-standard-normal-v1";

/// A realization of the p-spin couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct PSpinInstance {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    couplings: Vec<f64>,
    scale: f64,
}

fn check_size(n: usize, p: usize, budget: usize) -> Result<usize, Error> {
    let fits = |m: usize| (m as u128).checked_pow(p as u32).is_some_and(|e| e <= budget as u128);
    let mut max_n = (budget as f64).powf(1.0 / p as f64).round() as usize + 1;
    while max_n > 0 && !fits(max_n) {
        max_n -= 1;
    }
    let entries = (n as u128).checked_pow(p as u32).unwrap_or(u128::MAX);
    if entries > budget as u128 {
        return Err(Error::Size { n, p, max_n });
    }
    Ok(entries as usize)
}

impl PSpinInstance {
    pub fn build(n: usize, p: usize, seed: u64) -> Result<Self, Error> {
        Self::build_with_budget(n, p, seed, DEFAULT_TENSOR_BUDGET)
    }

    pub fn build_with_budget(n: usize, p: usize, seed: u64, budget: usize) -> Result<Self, Error> {
        if n < 2 || p < 2 {
            return Err(Error::Domain(format!("need n >= 2 and p >= 2, got n = {n}, p = {p}")));
        }
        let entries = check_size(n, p, budget)?;
        let mut rng = ChaCha8Rng::seed_from_u64(domain_seed(seed, "pspin-couplings"));
        let couplings = (0..entries).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self::assemble(n, p, seed, couplings))
    }

    /// An instance with explicit couplings in row-major order.
    pub fn from_couplings(n: usize, p: usize, couplings: Vec<f64>) -> Result<Self, Error> {
        if n < 1 || p < 1 || couplings.len() as u128 != (n as u128).pow(p as u32) {
            return Err(Error::Domain("coupling tensor must have n^p entries".into()));
        }
        Ok(Self::assemble(n, p, 0, couplings))
    }

    fn assemble(n: usize, p: usize, seed: u64, couplings: Vec<f64>) -> Self {
        let scale = (n as f64).powf((1.0 - p as f64) / 2.0);
        Self {
            n,
            p,
            seed,
            couplings,
            scale,
        }
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    /// Full contraction, `O(n^p)`.
    pub fn hamiltonian(&self, x: &SpinState) -> f64 {
        let n = self.n;
        let xs: Vec<f64> = x.0.iter().map(|s| f64::from(*s)).collect();
        let mut cur: Vec<f64> = self
            .couplings
            .chunks_exact(n)
            .map(|row| row.iter().zip(&xs).map(|(j, s)| j * s).sum())
            .collect();
        while cur.len() > 1 {
            cur = cur
                .chunks_exact(n)
                .map(|row| row.iter().zip(&xs).map(|(j, s)| j * s).sum())
                .collect();
        }
        self.scale * cur[0]
    }

    /// `H_n` after flipping coordinate `k`, given `h_old = H_n(x)`.
    ///
    /// A coupling term changes sign iff `k` occurs an odd number of times in
    /// its index tuple, so only those terms are summed: `O(p n^{p−1})`.
    pub fn delta_flip(&self, x: &SpinState, k: usize, h_old: f64) -> f64 {
        let xs: Vec<f64> = x.0.iter().map(|s| f64::from(*s)).collect();
        let mut odd = 0.0;
        for mask in 1u32..(1 << self.p) {
            if mask.count_ones() % 2 == 1 {
                odd += self.masked_sum(&xs, k, mask, 0, 0, 1.0);
            }
        }
        // `odd` already includes the factor x_k^{|S|} = x_k for odd |S|.
        h_old - 2.0 * self.scale * odd
    }

    /// Sum of `J_i Π x` over tuples with index `k` exactly at the positions
    /// in `mask` and indices other than `k` elsewhere.
    fn masked_sum(&self, xs: &[f64], k: usize, mask: u32, pos: usize, offset: usize, prod: f64) -> f64 {
        if pos == self.p {
            return self.couplings[offset] * prod;
        }
        let n = self.n;
        if mask & (1 << pos) != 0 {
            return self.masked_sum(xs, k, mask, pos + 1, offset * n + k, prod * xs[k]);
        }
        if pos + 1 == self.p {
            let base = offset * n;
            let row = &self.couplings[base..base + n];
            let s: f64 = row.iter().zip(xs).map(|(j, s)| j * s).sum();
            return prod * (s - row[k] * xs[k]);
        }
        (0..n)
            .filter(|&i| i != k)
            .map(|i| self.masked_sum(xs, k, mask, pos + 1, offset * n + i, prod * xs[i]))
            .sum()
    }

    /// `ln τ(x) = β H_n(x)`.
    pub fn log_tau(&self, beta: f64, x: &SpinState) -> f64 {
        beta * self.hamiltonian(x)
    }

    /// SHA-256 of the first 64 coupling entries as little-endian bytes.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in self.couplings.iter().take(64) {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Stores `(n, p, seed, generator id, content hash)`; the tensor itself is
    /// regenerated from the seed on load.
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut f = File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&(self.n as u64).to_le_bytes())?;
        f.write_all(&(self.p as u64).to_le_bytes())?;
        f.write_all(&self.seed.to_le_bytes())?;
        f.write_all(&(GENERATOR_ID.len() as u32).to_le_bytes())?;
        f.write_all(GENERATOR_ID.as_bytes())?;
        f.write_all(&self.content_hash())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = bytes.as_slice();
        let mut take = |len: usize| -> Result<Vec<u8>, Error> {
            if r.len() < len {
                return Err(Error::Integrity("instance file truncated".into()));
            }
            let (head, tail) = r.split_at(len);
            r = tail;
            Ok(head.to_vec())
        };
        let u64_of = |b: Vec<u8>| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        if take(MAGIC.len())? != MAGIC {
            return Err(Error::Integrity("not an instance file".into()));
        }
        let n = u64_of(take(8)?) as usize;
        let p = u64_of(take(8)?) as usize;
        let seed = u64_of(take(8)?);
        let id_len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let id = take(id_len)?;
        if id != GENERATOR_ID.as_bytes() {
            return Err(Error::Integrity(format!(
                "unknown generator {:?}",
                String::from_utf8_lossy(&id)
            )));
        }
        let stored = take(32)?;
        let inst = Self::build(n, p, seed)?;
        if inst.content_hash()[..] != stored[..] {
            return Err(Error::Integrity("coupling hash mismatch".into()));
        }
        Ok(inst)
    }
}

const MAGIC: &[u8; 8] = b"XCLKINST";

/// Simple random walk on the hypercube, started and stationary uniform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HypercubeWalk {
    pub n: usize,
}

impl JumpChain for HypercubeWalk {
    type State = SpinState;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> SpinState {
        SpinState::random(self.n, rng)
    }

    fn sample_invariant<R: Rng + ?Sized>(&self, rng: &mut R) -> SpinState {
        SpinState::random(self.n, rng)
    }

    fn next_state<R: Rng + ?Sized>(&self, x: &SpinState, rng: &mut R) -> SpinState {
        srw_step(x, rng)
    }

    fn log_invariant(&self, _x: &SpinState) -> f64 {
        -(self.n as f64) * std::f64::consts::LN_2
    }

    fn period(&self) -> usize {
        2
    }
}

/// `τ = exp(β H_n)` with `C = 2^n`, so that `λ⁻¹ = τ`.
#[derive(Debug, Clone, Copy)]
pub struct PSpinEnvironment<'a> {
    pub instance: &'a PSpinInstance,
    pub beta: f64,
}

impl Environment<SpinState> for PSpinEnvironment<'_> {
    fn log_tau(&self, x: &SpinState) -> f64 {
        self.instance.log_tau(self.beta, x)
    }

    fn log_constant(&self) -> f64 {
        self.instance.n as f64 * std::f64::consts::LN_2
    }
}

/// Schedule of the SK model with its defining parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkSchedule {
    pub schedule: ScalingSchedule,
    pub p: usize,
    pub c: f64,
    pub beta: f64,
    pub gamma: f64,
    pub omega: f64,
}

/// `γ = n^{−c}`, `α = γ/β`, `a_n = √(2πn) γ⁻¹ e^{γ²n/2}`, `ln c_n = γβn`,
/// `θ_n = 3n²`, `v_n = round(n^ω)` with `ω = (c + 3/2)/2`.
pub fn make_schedule(n: usize, p: usize, c: f64, beta: f64) -> Result<SkSchedule, Error> {
    if !(c > 0.0 && c < 0.5) {
        return Err(Error::Domain(format!("c must lie in (0, 1/2), got {c}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("β must be positive, got {beta}")));
    }
    if n < 2 || p < 2 {
        return Err(Error::Domain(format!("need n >= 2 and p >= 2, got n = {n}, p = {p}")));
    }
    let nf = n as f64;
    let gamma = nf.powf(-c);
    let alpha = gamma / beta;
    if alpha >= 1.0 {
        log::warn!("α_n = {alpha} >= 1 at n = {n}: the heavy-tailed regime is not entered");
    }
    let a_n = (2.0 * std::f64::consts::PI * nf).sqrt() / gamma * (gamma * gamma * nf / 2.0).exp();
    let log_c_n = gamma * beta * nf;
    let theta = 3 * n * n;
    let omega = (c + 0.5 + 1.0) / 2.0;
    let v = (nf.powf(omega).round() as usize).clamp(1, theta);
    Ok(SkSchedule {
        schedule: ScalingSchedule::new(n, a_n, log_c_n, theta, alpha, v)?,
        p,
        c,
        beta,
        gamma,
        omega,
    })
}

/// The limiting tail constant `K_p = 2p`.
pub fn k_p(p: usize) -> f64 {
    2.0 * p as f64
}

pub const DEFAULT_CACHE_CAPACITY: usize = 1 << 22;

const RESYNC_INTERVAL: u32 = 1024;

/// Random hopping dynamics in the p-spin environment with incremental
/// Hamiltonian updates along the walk.
#[derive(Debug, Clone, Copy)]
pub struct SkModel<'a> {
    pub instance: &'a PSpinInstance,
    pub beta: f64,
    /// Per-walker LRU cache size for visited Hamiltonian values; 0 disables it.
    pub cache_capacity: usize,
}

impl<'a> SkModel<'a> {
    pub fn new(instance: &'a PSpinInstance, beta: f64) -> Self {
        Self {
            instance,
            beta,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
        }
    }

    pub fn with_cache_capacity(mut self, capacity: usize) -> Self {
        self.cache_capacity = capacity;
        self
    }
}

pub struct SkWalker<'a> {
    model: &'a SkModel<'a>,
    state: SpinState,
    h: f64,
    since_resync: u32,
    cache: Option<LruCache<SpinState, f64>>,
}

impl SkWalker<'_> {
    pub fn hamiltonian(&self) -> f64 {
        self.h
    }

    fn remember(&mut self) {
        if let Some(cache) = self.cache.as_mut() {
            if cache.len() >= self.model.cache_capacity {
                cache.pop_lru();
            }
            cache.put(self.state.clone(), self.h);
        }
    }
}

impl Walker for SkWalker<'_> {
    type State = SpinState;

    fn state(&self) -> &SpinState {
        &self.state
    }

    fn log_mean_hold(&self) -> f64 {
        self.model.beta * self.h
    }

    fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), Error> {
        let k = rng.random_range(0..self.state.len());
        let h_new = self.model.instance.delta_flip(&self.state, k, self.h);
        self.state.flip(k);
        self.since_resync += 1;
        let cached = self.cache.as_mut().and_then(|c| c.get(&self.state).copied());
        match cached {
            Some(h) => self.h = h,
            None => {
                if self.since_resync >= RESYNC_INTERVAL {
                    self.h = self.model.instance.hamiltonian(&self.state);
                    self.since_resync = 0;
                } else {
                    self.h = h_new;
                }
                self.remember();
            }
        }
        if !self.h.is_finite() {
            return Err(Error::Environment("non-finite Hamiltonian".into()));
        }
        Ok(())
    }
}

impl<'a> Dynamics for SkModel<'a> {
    type State = SpinState;
    type Walker<'b>
        = SkWalker<'b>
    where
        Self: 'b;

    fn walker_at(&self, start: SpinState) -> Result<SkWalker<'_>, Error> {
        if start.len() != self.instance.n {
            return Err(Error::Domain("start state has the wrong length".into()));
        }
        let h = self.instance.hamiltonian(&start);
        let cache = (self.cache_capacity > 0).then(LruCache::unbounded);
        let mut w = SkWalker {
            model: self,
            state: start,
            h,
            since_resync: 0,
            cache,
        };
        w.remember();
        Ok(w)
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> SpinState {
        SpinState::random(self.instance.n, rng)
    }

    fn sample_invariant<R: Rng + ?Sized>(&self, rng: &mut R) -> SpinState {
        SpinState::random(self.instance.n, rng)
    }

    fn next_state<R: Rng + ?Sized>(&self, x: &SpinState, rng: &mut R) -> SpinState {
        srw_step(x, rng)
    }

    fn log_holding_rate(&self, x: &SpinState) -> Result<f64, Error> {
        let log_tau = self.instance.log_tau(self.beta, x);
        if !log_tau.is_finite() {
            return Err(Error::Environment("non-finite τ".into()));
        }
        Ok(-log_tau)
    }

    fn period(&self) -> usize {
        2
    }
}

/// The decoupled comparison process on one block of length `v`:
/// a centered Gaussian vector with covariance `1 − 2p|i−j|/n`.
#[derive(Debug, Clone)]
pub struct H1Block {
    pub n: usize,
    pub p: usize,
    pub v: usize,
    /// Frobenius distance between the target and the repaired covariance.
    pub repair_distance: f64,
    factor: DMatrix<f64>,
}

/// `Δ¹` restricted to one block.
pub fn h1_covariance(n: usize, p: usize, v: usize) -> DMatrix<f64> {
    DMatrix::from_fn(v, v, |i, j| {
        1.0 - 2.0 * p as f64 * (i as f64 - j as f64).abs() / n as f64
    })
}

/// Clips negative eigenvalues at zero and rescales to unit diagonal.
pub fn repair_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d = rebuilt.diagonal().map(|x| 1.0 / x.max(f64::MIN_POSITIVE).sqrt());
    let scale = DMatrix::from_diagonal(&d);
    let mut out = &scale * rebuilt * &scale;
    out.fill_diagonal(1.0);
    (&out + out.transpose()) * 0.5
}

/// Cholesky factor, with a vanishing ridge for singular PSD matrices.
fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>, Error> {
    for ridge in [0.0, 1e-12, 1e-10, 1e-8] {
        let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * ridge;
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch.l());
        }
    }
    Err(Error::Numerical("Cholesky factorization failed after PSD repair".into()))
}

impl H1Block {
    pub fn new(n: usize, p: usize, v: usize) -> Result<Self, Error> {
        if v == 0 || n == 0 {
            return Err(Error::Domain("block length and n must be positive".into()));
        }
        let target = h1_covariance(n, p, v);
        let min_eig = SymmetricEigen::new(target.clone()).eigenvalues.min();
        let (cov, repair_distance) = if min_eig < 0.0 {
            let fixed = repair_psd(&target);
            let dist = (&fixed - &target).norm();
            (fixed, dist)
        } else {
            (target, 0.0)
        };
        Ok(Self {
            n,
            p,
            v,
            repair_distance,
            factor: psd_factor(&cov)?,
        })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.v).map(|_| rng.sample(StandardNormal)).collect();
        (0..self.v)
            .map(|i| (0..=i).map(|j| self.factor[(i, j)] * z[j]).sum())
            .collect()
    }
}

pub fn sample_h1_block<R: Rng + ?Sized>(n: usize, p: usize, v: usize, rng: &mut R) -> Result<Vec<f64>, Error> {
    Ok(H1Block::new(n, p, v)?.sample(rng))
}

/// Monte Carlo block-maximum tails of the comparison process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockTail {
    pub u: f64,
    /// `F_n(u, H¹, [v_n])`.
    pub f: Estimate,
    /// `G_n(u, H¹, [v_n])`, with exponential marks.
    pub g: Estimate,
    /// `a_n v_n⁻¹ F_n(u, H¹, [v_n])`.
    pub scaled_f: Estimate,
    /// `K_p / u`.
    pub target: f64,
    pub repair_distance: f64,
}

/// Estimates `F_n` and `G_n` on one H¹ block of length `v_n`, sharing the
/// Gaussian draws between the two.
pub fn block_max_tail(sk: &SkSchedule, u: f64, reps: u64, seed: u64) -> Result<BlockTail, Error> {
    if !(u > 0.0) {
        return Err(Error::Domain(format!("u must be positive, got {u}")));
    }
    let s = &sk.schedule;
    let block = H1Block::new(s.n, sk.p, s.v_n)?;
    let log_threshold = s.log_threshold(u);
    let lift = (s.n as f64).sqrt() * sk.beta;
    let pairs = replicate_collect(seed, "h1-block-tail", reps, |rng, _| {
        let x = block.sample(rng);
        let f = x.iter().any(|&xi| lift * xi > log_threshold);
        let g = x.iter().any(|&xi| {
            let e: f64 = rng.sample(Exp1);
            lift * xi + e.ln() > log_threshold
        });
        (f64::from(u8::from(f)), f64::from(u8::from(g)))
    });
    let f = MCAccumulator::from_values(pairs.iter().map(|p| p.0)).estimate();
    let g = MCAccumulator::from_values(pairs.iter().map(|p| p.1)).estimate();
    Ok(BlockTail {
        u,
        f,
        g,
        scaled_f: f.scaled(s.a_n / s.v_n as f64),
        target: k_p(sk.p) / u,
        repair_distance: block.repair_distance,
    })
}

/// `γ_n² ρ_n` with `ρ_n = ln n`.
pub fn thinning_rate(gamma: f64, n: usize) -> f64 {
    gamma * gamma * (n as f64).ln()
}

/// Independent Bernoulli(rate) selection of indices `1..=k`.
pub fn thin_indices<R: Rng + ?Sized>(k: usize, rate: f64, rng: &mut R) -> Result<Vec<usize>, Error> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain(format!("thinning rate must lie in [0,1], got {rate}")));
    }
    Ok((1..=k).filter(|_| rng.random::<f64>() < rate).collect())
}

fn check_correlation(m: &DMatrix<f64>, name: &str) -> Result<(), Error> {
    if !m.is_square() {
        return Err(Error::Domain(format!("{name} must be square")));
    }
    for i in 0..m.nrows() {
        if (m[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("{name} must have unit diagonal")));
        }
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                return Err(Error::Domain(format!("{name} must be symmetric")));
            }
        }
    }
    Ok(())
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]` to relative tolerance `rtol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    let tol = rtol * whole.abs().max(f64::MIN_POSITIVE);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `∫₀¹ (1 − (h d0 + (1−h) d1)²)^{−1/2} dh`.
pub fn interpolation_integral(d0: f64, d1: f64) -> Result<f64, Error> {
    // The interpolant is linear in h, so its modulus peaks at an endpoint.
    if d0.abs() >= 1.0 || d1.abs() >= 1.0 {
        return Err(Error::Numerical(format!(
            "singular comparison integral: correlation path reaches ±1 ({d1} → {d0})"
        )));
    }
    Ok(integrate(
        |h| {
            let r = h * d0 + (1.0 - h) * d1;
            1.0 / (1.0 - r * r).sqrt()
        },
        0.0,
        1.0,
        1e-10,
    ))
}

/// Right-hand side of the normal comparison inequality:
/// `Σ_{i≠j} (Δ⁰−Δ¹)⁺ exp(−s²/(1+Δᵐ)) ∫₀¹ (1−(Δʰ)²)^{−1/2} dh`.
pub fn gaussian_comparison_rhs(d0: &DMatrix<f64>, d1: &DMatrix<f64>, s: f64) -> Result<f64, Error> {
    check_correlation(d0, "Δ⁰")?;
    check_correlation(d1, "Δ¹")?;
    if d0.shape() != d1.shape() {
        return Err(Error::Domain("Δ⁰ and Δ¹ must have the same size".into()));
    }
    let mut total = 0.0;
    for i in 0..d0.nrows() {
        for j in 0..d0.ncols() {
            if i == j {
                continue;
            }
            let (a, b) = (d0[(i, j)], d1[(i, j)]);
            let gap = (a - b).max(0.0);
            if gap == 0.0 {
                continue;
            }
            let m = a.max(b);
            total += gap * (-s * s / (1.0 + m)).exp() * interpolation_integral(a, b)?;
        }
    }
    Ok(total)
}

/// Monte Carlo estimate of `P(max_i H(i) ≤ s)` for a centered Gaussian
/// vector with covariance `Δ`.
pub fn max_cdf_mc(delta: &DMatrix<f64>, s: f64, reps: u64, seed: u64) -> Result<Estimate, Error> {
    check_correlation(delta, "Δ")?;
    let l = psd_factor(delta)?;
    let dim = delta.nrows();
    Ok(replicate(seed, "max-cdf", reps, |rng, _| {
        let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let below = (0..dim).all(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>() <= s);
        f64::from(u8::from(below))
    })
    .estimate())
}

/// `P(max(X, Y) ≤ s)` for a standard bivariate normal pair with correlation
/// `ρ`, from Plackett's identity `∂P/∂ρ = φ₂(s, s; ρ)`.
pub fn bivariate_max_cdf(rho: f64, s: f64) -> Result<f64, Error> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")));
    }
    let phi = Normal::standard().cdf(s);
    if rho == 0.0 {
        return Ok(phi * phi);
    }
    let density = |r: f64| (-s * s / (1.0 + r)).exp() / (2.0 * std::f64::consts::PI * (1.0 - r * r).sqrt());
    Ok(phi * phi + integrate(density, 0.0, rho, 1e-12))
}

/// A random pair of correlation matrices with `Δ⁰ ≥ Δ¹` entrywise:
/// `Δ¹` from a normalized Gaussian factor and `Δ⁰ = wΔ¹ + (1 − w)𝟙𝟙ᵀ`.
pub fn random_comparison_pair<R: Rng + ?Sized>(size: usize, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let factor = DMatrix::from_fn(size, size + 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gram = &factor * factor.transpose();
    let d = gram.diagonal().map(|x| 1.0 / x.sqrt());
    let mut d1 = DMatrix::from_diagonal(&d) * gram * DMatrix::from_diagonal(&d);
    d1.fill_diagonal(1.0);
    let d1 = (&d1 + d1.transpose()) * 0.5;
    let w = rng.random_range(0.3..0.9);
    let mut d0 = &d1 * w + DMatrix::from_element(size, size, 1.0 - w);
    d0.fill_diagonal(1.0);
    (d0, d1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::replica_rng;

    #[test]
    fn overlap_examples() {
        let x = SpinState::all_up(4);
        assert_eq!(overlap(&x, &x).unwrap(), 1.0);
        assert_eq!(overlap(&x, &x.negated()).unwrap(), -1.0);
        assert_eq!(overlap(&x, &x.flipped(2)).unwrap(), 0.5);
        assert!(overlap(&x, &SpinState::all_up(5)).is_err());
        assert!(SpinState::new(vec![1, 0]).is_err());
    }

    #[test]
    fn srw_moves_one_step() {
        let mut rng = replica_rng(1, "srw", 0);
        let x = SpinState::random(10, &mut rng);
        let y = srw_step(&x, &mut rng);
        assert_eq!(x.hamming(&y).unwrap(), 1);
        let z = srw_step(&y, &mut rng);
        assert!(matches!(x.hamming(&z).unwrap(), 0 | 2));
    }

    #[test]
    fn two_spin_by_hand() {
        // H = n^{-1/2} Σ J_ij x_i x_j with n = 2.
        let inst = PSpinInstance::from_couplings(2, 2, vec![0.3, -1.2, 0.7, 2.0]).unwrap();
        let x = SpinState::new(vec![1, -1]).unwrap();
        let expect = (0.3 + 1.2 - 0.7 + 2.0) / 2f64.sqrt();
        assert!((inst.hamiltonian(&x) - expect).abs() < 1e-15);
        assert_eq!(inst.log_tau(0.0, &x), 0.0);
        assert!((inst.log_tau(2.0, &x) - 2.0 * inst.log_tau(1.0, &x)).abs() < 1e-15);
    }

    #[test]
    fn delta_flip_matches_full_evaluation() {
        for (n, p) in [(12, 2), (10, 3), (5, 4)] {
            let inst = PSpinInstance::build(n, p, 7).unwrap();
            let mut rng = replica_rng(3, "flip", (n * 10 + p) as u64);
            let mut x = SpinState::random(n, &mut rng);
            let mut h = inst.hamiltonian(&x);
            for _ in 0..1000 {
                let k = rng.random_range(0..n);
                h = inst.delta_flip(&x, k, h);
                x.flip(k);
                let fresh = inst.hamiltonian(&x);
                assert!((h - fresh).abs() <= 1e-10 * fresh.abs().max(1.0), "n={n} p={p}");
            }
            let h0 = inst.hamiltonian(&x);
            let back = inst.delta_flip(&x.flipped(0), 0, inst.delta_flip(&x, 0, h0));
            assert!((back - h0).abs() < 1e-9);
        }
    }

    #[test]
    fn size_budget_reports_max_n() {
        match PSpinInstance::build_with_budget(101, 3, 1, 1_000_000) {
            Err(Error::Size { max_n, .. }) => assert_eq!(max_n, 100),
            other => panic!("{other:?}"),
        }
        match PSpinInstance::build_with_budget(40, 2, 1, 1_000) {
            Err(Error::Size { max_n, .. }) => assert_eq!(max_n, 31),
            other => panic!("{other:?}"),
        }
        assert!(PSpinInstance::build_with_budget(31, 2, 1, 1_000).is_ok());
    }

    #[test]
    fn schedule_at_sixteen() {
        let sk = make_schedule(16, 2, 0.25, 1.0).unwrap();
        let s = sk.schedule;
        assert!((sk.gamma - 0.5).abs() < 1e-15);
        assert!((s.alpha_n - 0.5).abs() < 1e-15);
        assert_eq!(s.theta_n, 768);
        let expect = (32.0 * std::f64::consts::PI).sqrt() * 2.0 * 2f64.exp();
        assert!((s.a_n - expect).abs() < 1e-10);
        assert!((s.a_n - 148.17).abs() < 0.01);
        assert!((s.log_c_n - 8.0).abs() < 1e-12);
        assert_eq!(s.v_n, 11);
        assert_eq!(make_schedule(10, 2, 0.25, 1.0).unwrap().schedule.theta_n, 300);
        assert!(make_schedule(16, 2, 0.5, 1.0).is_err());
        assert!(make_schedule(16, 2, 0.0, 1.0).is_err());
    }

    #[test]
    fn incremental_walker_tracks_energy() {
        let inst = PSpinInstance::build(10, 3, 11).unwrap();
        for cap in [0, 16, DEFAULT_CACHE_CAPACITY] {
            let model = SkModel::new(&inst, 1.3).with_cache_capacity(cap);
            let mut rng = replica_rng(5, "walker", 0);
            let mut w = model.walker_at(SpinState::random(10, &mut rng)).unwrap();
            for _ in 0..3000 {
                w.advance(&mut rng).unwrap();
                let fresh = inst.hamiltonian(w.state());
                assert!((w.hamiltonian() - fresh).abs() < 1e-10 * fresh.abs().max(1.0));
                assert!((w.log_mean_hold() - 1.3 * fresh).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn h1_block_structure() {
        let b = H1Block::new(16, 2, 1).unwrap();
        assert_eq!(b.covariance()[(0, 0)], 1.0);
        let b = H1Block::new(64, 2, 11).unwrap();
        let cov = b.covariance();
        assert!((cov[(0, 1)] - (1.0 - 4.0 / 64.0)).abs() < 1e-12);
        assert_eq!(b.repair_distance, 0.0);
        // At n = 16 the entries 1 − |i−j|/4 turn negative inside an 11-block.
        assert!(H1Block::new(16, 2, 11).unwrap().repair_distance > 0.0);
        // Long blocks relative to n need repair; the result is a correlation matrix.
        let fixed = repair_psd(&h1_covariance(8, 3, 8));
        assert!(SymmetricEigen::new(fixed.clone()).eigenvalues.min() > -1e-10);
        assert!(fixed.diagonal().iter().all(|d| (d - 1.0).abs() < 1e-12));
    }

    #[test]
    fn thinning_edge_rates() {
        let mut rng = replica_rng(1, "thin", 0);
        assert!(thin_indices(50, 0.0, &mut rng).unwrap().is_empty());
        assert_eq!(thin_indices(50, 1.0, &mut rng).unwrap(), (1..=50).collect::<Vec<_>>());
        assert!(thin_indices(5, 1.5, &mut rng).is_err());
        assert!((thinning_rate(0.5, 16) - 0.25 * 16f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn comparison_integral_closed_form() {
        for (a, b) in [(0.5, 0.0), (0.9, -0.3), (0.2, 0.1), (0.99, 0.98)] {
            let q = interpolation_integral(a, b).unwrap();
            let exact = (f64::asin(a) - f64::asin(b)) / (a - b);
            assert!((q - exact).abs() < 1e-8 * exact, "{a} {b}");
        }
        assert!(interpolation_integral(1.0, 0.5).is_err());
    }

    #[test]
    fn identical_covariances_have_zero_rhs() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        assert_eq!(gaussian_comparison_rhs(&d, &d, 1.0).unwrap(), 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!(gaussian_comparison_rhs(&bad, &d, 1.0).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.bin");
        let inst = PSpinInstance::build(9, 2, 1234).unwrap();
        inst.save(&path).unwrap();
        let back = PSpinInstance::load(&path).unwrap();
        assert_eq!(back, inst);
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(PSpinInstance::load(&path), Err(Error::Integrity(_))));
    }
}
