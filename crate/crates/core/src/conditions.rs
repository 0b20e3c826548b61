//! Monte Carlo and exact estimators for the convergence conditions of the
//! blocked clock process.
//!
//! Block tails use `Q^u(y) = P_y(Σ_{j=1}^{θ_n} λ⁻¹(J(j)) e_j > c_n u^{1/α_n})`,
//! always compared as `ln Σ > ln c_n + ln(u)/α_n`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::ehrenfest::{ln_binomial, EhrenfestChain};
use crate::engine::{Dynamics, ScalingSchedule, Trajectory, Walker};
use crate::logspace::log_sum_exp;
use crate::pspin::{self, PSpinInstance, SkModel, SkSchedule, SpinState};
use crate::stats::{domain_seed, replicate_collect, Estimate, MCAccumulator};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionId {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1-1")]
    Mixing,
    #[serde(rename = "2-1a")]
    TailMean,
    #[serde(rename = "2-1b")]
    TailVariance,
    #[serde(rename = "3-1")]
    Truncated,
    #[serde(rename = "DR-1.14")]
    PathMean,
    #[serde(rename = "DR-1.15")]
    PathVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    TrendOnly,
}

/// One condition evaluated at one system size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub id: ConditionId,
    /// Which functional of the condition is reported.
    pub quantity: String,
    pub n: usize,
    pub p: usize,
    pub parameters: BTreeMap<String, f64>,
    pub estimate: f64,
    pub se: f64,
    pub target: f64,
    pub verdict: Verdict,
    pub flags: Vec<String>,
}

impl ConditionReport {
    pub fn to_json(&self) -> Result<String, Error> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Logarithms of the sum and maximum of one block
/// `λ⁻¹(J(j)) e_j, j = 1..=θ` started from `J(0) = y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSample {
    pub log_sum: f64,
    pub log_max: f64,
}

/// Event flags of one block at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockEvents {
    /// `max > T`.
    pub max: bool,
    /// `sum > T`.
    pub sum: bool,
    /// `max > T/θ`.
    pub rescaled_max: bool,
}

impl BlockEvents {
    /// `{max > T} ⊆ {sum > T} ⊆ {max > T/θ}`.
    pub fn nested(&self) -> bool {
        (!self.max || self.sum) && (!self.sum || self.rescaled_max)
    }
}

impl BlockSample {
    pub fn events(&self, log_threshold: f64, theta: usize) -> BlockEvents {
        BlockEvents {
            max: self.log_max > log_threshold,
            sum: self.log_sum > log_threshold,
            // Evaluated as max + ln θ so that it dominates the sum after rounding.
            rescaled_max: self.log_max + (theta as f64).ln() > log_threshold,
        }
    }
}

fn mark<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let e: f64 = rng.sample(Exp1);
        if e > 0.0 {
            return e;
        }
    }
}

pub fn sample_block<D: Dynamics, R: Rng + ?Sized>(
    dynamics: &D,
    start: D::State,
    theta: usize,
    rng: &mut R,
) -> Result<BlockSample, Error> {
    let mut walker = dynamics.walker_at(start)?;
    let mut terms = Vec::with_capacity(theta);
    for _ in 0..theta {
        walker.advance(rng)?;
        terms.push(walker.log_mean_hold() + mark(rng).ln());
    }
    Ok(BlockSample {
        log_sum: log_sum_exp(&terms),
        log_max: terms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Mean of `inner` block-sum indicators from `y`, drawn from `rng`.
fn inner_q<D: Dynamics, R: Rng + ?Sized>(
    dynamics: &D,
    y: &D::State,
    theta: usize,
    log_threshold: f64,
    inner: u64,
    rng: &mut R,
) -> Result<f64, Error> {
    let mut hits = 0u64;
    for _ in 0..inner {
        if sample_block(dynamics, y.clone(), theta, rng)?.log_sum > log_threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / inner as f64)
}

fn check_positive(name: &str, x: f64) -> Result<(), Error> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(())
}

fn collect_estimate(values: Vec<Result<f64, Error>>) -> Result<Estimate, Error> {
    let mut acc = MCAccumulator::new();
    for v in values {
        acc.push(v?);
    }
    Ok(acc.estimate())
}

/// `Q^u(y)`.
pub fn q_tail<D: Dynamics>(
    dynamics: &D,
    sched: &ScalingSchedule,
    y: &D::State,
    u: f64,
    reps: u64,
    seed: u64,
) -> Result<Estimate, Error> {
    check_positive("u", u)?;
    let log_t = sched.log_threshold(u);
    collect_estimate(replicate_collect(seed, "q-tail", reps, |rng, _| {
        let b = sample_block(dynamics, y.clone(), sched.theta_n, rng)?;
        Ok(f64::from(u8::from(b.log_sum > log_t)))
    }))
}

/// `P_y(max_{j=1..θ} λ⁻¹(J(j)) e_j > c_n u^{1/α_n})`.
pub fn q_tail_max<D: Dynamics>(
    dynamics: &D,
    sched: &ScalingSchedule,
    y: &D::State,
    u: f64,
    reps: u64,
    seed: u64,
) -> Result<Estimate, Error> {
    check_positive("u", u)?;
    let log_t = sched.log_threshold(u);
    collect_estimate(replicate_collect(seed, "q-tail", reps, |rng, _| {
        let b = sample_block(dynamics, y.clone(), sched.theta_n, rng)?;
        Ok(f64::from(u8::from(b.log_max > log_t)))
    }))
}

/// Block tails over a grid of `u` on common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailProfile {
    pub u: Vec<f64>,
    pub sum_tail: Vec<Estimate>,
    pub max_tail: Vec<Estimate>,
    /// `P(max > T/θ)`, i.e. the max tail at `u θ^{−α}`.
    pub rescaled_max_tail: Vec<Estimate>,
    pub paths: u64,
    /// Replicas on which the nested-event sandwich failed at some `u`.
    pub sandwich_violations: u64,
    /// Replicas on which an indicator increased with `u`.
    pub monotonicity_violations: u64,
}

/// Evaluates the sum, max and rescaled-max tails of blocks started from
/// draws of `start` at every `u`, sharing each path across thresholds.
pub fn tail_profile<D, F>(
    dynamics: &D,
    sched: &ScalingSchedule,
    us: &[f64],
    start: F,
    reps: u64,
    seed: u64,
) -> Result<TailProfile, Error>
where
    D: Dynamics,
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> D::State + Sync,
{
    if us.is_empty() {
        return Err(Error::Domain("empty u grid".into()));
    }
    for &u in us {
        check_positive("u", u)?;
    }
    let mut sorted = us.to_vec();
    sorted.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = sorted.iter().map(|u| sched.log_threshold(*u)).collect();
    let samples = replicate_collect(seed, "tail-profile", reps, |rng, _| {
        let y = start(rng);
        sample_block(dynamics, y, sched.theta_n, rng)
    });
    let k = sorted.len();
    let mut sums = vec![MCAccumulator::new(); k];
    let mut maxes = vec![MCAccumulator::new(); k];
    let mut rescaled = vec![MCAccumulator::new(); k];
    let (mut sandwich, mut monotone) = (0, 0);
    for s in samples {
        let s = s?;
        let events: Vec<BlockEvents> = thresholds.iter().map(|t| s.events(*t, sched.theta_n)).collect();
        if events.iter().any(|e| !e.nested()) {
            sandwich += 1;
        }
        if events.windows(2).any(|w| {
            (w[1].sum && !w[0].sum) || (w[1].max && !w[0].max) || (w[1].rescaled_max && !w[0].rescaled_max)
        }) {
            monotone += 1;
        }
        for (i, e) in events.iter().enumerate() {
            sums[i].push(f64::from(u8::from(e.sum)));
            maxes[i].push(f64::from(u8::from(e.max)));
            rescaled[i].push(f64::from(u8::from(e.rescaled_max)));
        }
    }
    Ok(TailProfile {
        u: sorted,
        sum_tail: sums.iter().map(MCAccumulator::estimate).collect(),
        max_tail: maxes.iter().map(MCAccumulator::estimate).collect(),
        rescaled_max_tail: rescaled.iter().map(MCAccumulator::estimate).collect(),
        paths: reps,
        sandwich_violations: sandwich,
        monotonicity_violations: monotone,
    })
}

/// A per-block average scaled by the number of blocks up to time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockFunctional {
    pub per_block: Estimate,
    /// `k_n(t) = ⌊⌊a_n t⌋/θ_n⌋`.
    pub blocks: usize,
    /// `k_n(t) × per_block`.
    pub value: Estimate,
    /// `(a_n t/θ_n) × per_block`, which stays informative when `k_n(t) = 0`.
    pub continuous: Estimate,
    pub degenerate: bool,
}

impl BlockFunctional {
    pub fn new(per_block: Estimate, sched: &ScalingSchedule, t: f64) -> Self {
        let blocks = sched.blocks(t);
        if blocks == 0 {
            log::warn!(
                "k_n(t) = 0 at n = {}, t = {t}: ⌊a_n t⌋ = {} < θ_n = {}",
                sched.n,
                sched.jumps(t),
                sched.theta_n
            );
        }
        Self {
            per_block,
            blocks,
            value: per_block.scaled(blocks as f64),
            continuous: per_block.scaled(sched.a_n * t / sched.theta_n as f64),
            degenerate: blocks == 0,
        }
    }

    /// The floored value, or the continuous one when the floor vanishes.
    pub fn trend_value(&self) -> Estimate {
        if self.degenerate {
            self.continuous
        } else {
            self.value
        }
    }
}

/// `ν_n^t(u,∞) = k_n(t) Σ_x π(x) Q^u(x)`.
pub fn nu_t<D: Dynamics>(
    dynamics: &D,
    sched: &ScalingSchedule,
    u: f64,
    t: f64,
    reps: u64,
    seed: u64,
) -> Result<BlockFunctional, Error> {
    check_positive("u", u)?;
    check_positive("t", t)?;
    let log_t = sched.log_threshold(u);
    let per_block = collect_estimate(replicate_collect(seed, "nu", reps, |rng, _| {
        let x = dynamics.sample_invariant(rng);
        let b = sample_block(dynamics, x, sched.theta_n, rng)?;
        Ok(f64::from(u8::from(b.log_sum > log_t)))
    }))?;
    Ok(BlockFunctional::new(per_block, sched, t))
}

/// `ν̄_n^t(u,∞) = k_n(t) P_π(max_{i=1..θ} λ⁻¹(J(i)) e_i > c_n u^{1/α_n})`.
pub fn nu_bar_t<D: Dynamics>(
    dynamics: &D,
    sched: &ScalingSchedule,
    u: f64,
    t: f64,
    reps: u64,
    seed: u64,
) -> Result<BlockFunctional, Error> {
    check_positive("u", u)?;
    check_positive("t", t)?;
    let log_t = sched.log_threshold(u);
    let per_block = collect_estimate(replicate_collect(seed, "nu-bar", reps, |rng, _| {
        let x = dynamics.sample_invariant(rng);
        let b = sample_block(dynamics, x, sched.theta_n, rng)?;
        Ok(f64::from(u8::from(b.log_max > log_t)))
    }))?;
    Ok(BlockFunctional::new(per_block, sched, t))
}

/// `(σ_n^t)²(u,∞) = k_n(t) Σ π(x) p^{(2)}(x,x') Q^u(x) Q^u(x')`, with
/// independent inner estimates of the two factors.
pub fn sigma_sq_t<D: Dynamics>(
    dynamics: &D,
    sched: &ScalingSchedule,
    u: f64,
    t: f64,
    reps: u64,
    inner: u64,
    seed: u64,
) -> Result<BlockFunctional, Error> {
    check_positive("u", u)?;
    check_positive("t", t)?;
    if inner == 0 {
        return Err(Error::Domain("need at least one inner replica".into()));
    }
    let log_t = sched.log_threshold(u);
    let per_block = collect_estimate(replicate_collect(seed, "sigma-sq", reps, |rng, _| {
        let x = dynamics.sample_invariant(rng);
        let mid = dynamics.next_state(&x, rng);
        let x2 = dynamics.next_state(&mid, rng);
        let a = inner_q(dynamics, &x, sched.theta_n, log_t, inner, rng)?;
        let b = inner_q(dynamics, &x2, sched.theta_n, log_t, inner, rng)?;
        Ok(a * b)
    }))?;
    Ok(BlockFunctional::new(per_block, sched, t))
}

/// Uniform `x` and `x'` at Hamming distance exactly 2.
pub fn distance_two_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (SpinState, SpinState) {
    let x = SpinState::random(n, rng);
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let y = x.flipped(i).flipped(j);
    (x, y)
}

/// `η_n^t(u) = k_n(t) Σ μ_n(x,x') Q^u(x) Q^u(x')` over uniform distance-2 pairs.
pub fn pair_distance2_functional<D>(
    dynamics: &D,
    sched: &ScalingSchedule,
    u: f64,
    t: f64,
    reps: u64,
    inner: u64,
    seed: u64,
) -> Result<BlockFunctional, Error>
where
    D: Dynamics<State = SpinState>,
{
    check_positive("u", u)?;
    check_positive("t", t)?;
    if sched.n < 2 {
        return Err(Error::Domain("distance-2 pairs need n >= 2".into()));
    }
    if inner == 0 {
        return Err(Error::Domain("need at least one inner replica".into()));
    }
    let log_t = sched.log_threshold(u);
    let per_block = collect_estimate(replicate_collect(seed, "eta", reps, |rng, _| {
        let (x, y) = distance_two_pair(sched.n, rng);
        let a = inner_q(dynamics, &x, sched.theta_n, log_t, inner, rng)?;
        let b = inner_q(dynamics, &y, sched.theta_n, log_t, inner, rng)?;
        Ok(a * b)
    }))?;
    Ok(BlockFunctional::new(per_block, sched, t))
}

/// Exact mixing deviation of hypercube simple random walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingCheck {
    pub n: usize,
    pub theta: usize,
    pub period: usize,
    pub max_deviation: f64,
    pub bound: f64,
    /// `(distance, i, deviation)`.
    pub rows: Vec<(usize, usize, f64)>,
}

impl MixingCheck {
    pub fn passes(&self) -> bool {
        self.max_deviation <= self.bound
    }
}

/// `max_{d,i} |Σ_{k=0}^{q−1} P_π(J(i+θ+k) = y, J(0) = x) − q π(x) π(y)|` for
/// `dist(x, y) = d`, with `P_x(J(m) = y) = P_0(Q(m) = d) / C(n, d)`. The
/// hypercube walk is bipartite, so `q = 2`.
pub fn mixing_check(n: usize, theta: usize, i_values: &[usize]) -> Result<MixingCheck, Error> {
    let chain = EhrenfestChain::new(n)?;
    let period = 2;
    let log_pi = -(n as f64) * std::f64::consts::LN_2;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for &i in i_values {
        let laws: Vec<Vec<f64>> = (0..period)
            .map(|k| chain.exact_distribution(0, i + theta + k))
            .collect::<Result<_, _>>()?;
        for d in 0..=n {
            let log_norm = ln_binomial(n, d);
            let joint: f64 = laws
                .iter()
                .map(|law| (log_pi + law[d].ln() - log_norm).exp())
                .sum();
            let dev = (joint - period as f64 * (2.0 * log_pi).exp()).abs();
            worst = worst.max(dev);
            rows.push((d, i, dev));
        }
    }
    Ok(MixingCheck {
        n,
        theta,
        period,
        max_deviation: worst,
        bound: 2f64.powi(1 - 3 * n as i32),
        rows,
    })
}

/// `Σ_x π(x) exp(−v^{1/α_n} c_n λ_n(x))`, with the exponent assembled in
/// log form.
pub fn condition0_check<D: Dynamics>(
    dynamics: &D,
    sched: &ScalingSchedule,
    v: f64,
    reps: u64,
    seed: u64,
) -> Result<Estimate, Error> {
    check_positive("v", v)?;
    collect_estimate(replicate_collect(seed, "condition-0", reps, |rng, _| {
        let x = dynamics.sample_invariant(rng);
        let log_rate = dynamics.log_holding_rate(&x)?;
        Ok((-(v.ln() / sched.alpha_n + sched.log_c_n + log_rate).exp()).exp())
    }))
}

/// The truncated first moment `a_n (c_n δ^{1/α_n})⁻¹ E_π[Y 1{Y ≤ c_n δ^{1/α_n}}]`
/// with `Y = λ⁻¹(J(1)) e_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMoment {
    pub delta: f64,
    pub estimate: Estimate,
    /// `estimate^{α_n}`.
    pub powered: f64,
}

pub fn condition31_estimate<D: Dynamics>(
    dynamics: &D,
    sched: &ScalingSchedule,
    delta: f64,
    reps: u64,
    seed: u64,
) -> Result<TruncatedMoment, Error> {
    check_positive("δ", delta)?;
    let log_t = sched.log_threshold(delta);
    let estimate = collect_estimate(replicate_collect(seed, "condition-3-1", reps, |rng, _| {
        let x0 = dynamics.sample_invariant(rng);
        let x1 = dynamics.next_state(&x0, rng);
        let log_y = -dynamics.log_holding_rate(&x1)? + mark(rng).ln();
        let ratio = log_y - log_t;
        Ok(if ratio <= 0.0 { ratio.exp() } else { 0.0 })
    }))?
    .scaled(sched.a_n);
    Ok(TruncatedMoment {
        delta,
        estimate,
        powered: estimate.value.max(0.0).powf(sched.alpha_n),
    })
}

/// `4 (δ γ_n β_n)⁻¹`.
pub fn condition31_bound(delta: f64, gamma: f64, beta: f64) -> f64 {
    4.0 / (delta * gamma * beta)
}

/// Path functionals along one realized chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFunctionals {
    /// Per-boundary estimates of `Σ_y p(J(θ i), y) Q^u(y)`, `i = 1..=k_n(t)`.
    pub per_boundary: Vec<f64>,
    /// `ν_n^{J,t}(u,∞)`: their sum.
    pub nu: f64,
    /// `(σ_n^{J,t})²(u,∞)`: the sum of their squares.
    pub sigma_sq: f64,
}

/// Estimates each `Σ_y p(J(θ i), y) Q^u(y)` by `inner` blocks, each started
/// from a fresh one-step successor of `J(θ i)`.
pub fn dr_path_functionals<D: Dynamics>(
    dynamics: &D,
    sched: &ScalingSchedule,
    u: f64,
    t: f64,
    traj: &Trajectory<D::State>,
    inner: u64,
    seed: u64,
) -> Result<PathFunctionals, Error> {
    check_positive("u", u)?;
    check_positive("t", t)?;
    if inner == 0 {
        return Err(Error::Domain("need at least one inner replica".into()));
    }
    let k = sched.blocks(t);
    let needed = sched.theta_n * k + 1;
    if traj.len() < needed {
        return Err(Error::Range {
            needed,
            available: traj.len(),
        });
    }
    let log_t = sched.log_threshold(u);
    let per_boundary = replicate_collect(seed, "dr-path", k as u64, |rng, i| {
        let x = &traj.states[sched.theta_n * (i as usize + 1)];
        let mut hits = 0u64;
        for _ in 0..inner {
            let y = dynamics.next_state(x, rng);
            if sample_block(dynamics, y, sched.theta_n, rng)?.log_sum > log_t {
                hits += 1;
            }
        }
        Ok(hits as f64 / inner as f64)
    })
    .into_iter()
    .collect::<Result<Vec<f64>, Error>>()?;
    Ok(PathFunctionals {
        nu: per_boundary.iter().sum(),
        sigma_sq: per_boundary.iter().map(|q| q * q).sum(),
        per_boundary,
    })
}

/// Spread of `ν̄_n^t(u,∞)` across independent environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvVariance {
    pub n: usize,
    pub p: usize,
    pub env_reps: u64,
    pub inner_reps: u64,
    /// Per-environment functional values (continuous block count when `k_n(t) = 0`).
    pub values: Vec<f64>,
    /// Sample variance of `values` across environments.
    pub raw_variance: f64,
    /// Raw variance minus the mean within-environment Monte Carlo variance.
    pub corrected_variance: f64,
    /// `γ_n^{−2} n^{1−p/2}`.
    pub scaling: f64,
    pub degenerate_blocks: bool,
}

pub fn env_replication_variance(
    sk: &SkSchedule,
    u: f64,
    t: f64,
    env_reps: u64,
    inner_reps: u64,
    seed: u64,
) -> Result<EnvVariance, Error> {
    check_positive("u", u)?;
    check_positive("t", t)?;
    if env_reps < 2 || inner_reps < 2 {
        return Err(Error::Domain("need at least two environments and two inner replicas".into()));
    }
    let s = &sk.schedule;
    let env_seed = domain_seed(seed, "environments");
    let mut values = Vec::with_capacity(env_reps as usize);
    let mut inner_var = MCAccumulator::new();
    let mut degenerate = false;
    for e in 0..env_reps {
        let inst = PSpinInstance::build(s.n, sk.p, env_seed.wrapping_add(e))?;
        let model = SkModel::new(&inst, sk.beta).with_cache_capacity(0);
        let f = nu_bar_t(&model, s, u, t, inner_reps, domain_seed(seed, "env-inner").wrapping_add(e))?;
        degenerate |= f.degenerate;
        let v = f.trend_value();
        values.push(v.value);
        inner_var.push(v.se * v.se);
    }
    let across = MCAccumulator::from_values(values.iter().copied());
    let raw = across.variance();
    Ok(EnvVariance {
        n: s.n,
        p: sk.p,
        env_reps,
        inner_reps,
        values,
        raw_variance: raw,
        corrected_variance: raw - inner_var.mean,
        scaling: sk.gamma.powi(-2) * (s.n as f64).powf(1.0 - sk.p as f64 / 2.0),
        degenerate_blocks: degenerate,
    })
}

/// Direction in which a finite-n sequence is expected to move with `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Values decrease with `n`.
    Decreasing,
    /// Distance to the target decreases with `n`.
    TowardTarget,
}

/// A sequence over the n-grid checked for the predicted direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub name: String,
    pub n_grid: Vec<usize>,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub target: f64,
    pub direction: Direction,
    pub monotone: bool,
    /// Set whenever the sequence is not monotone or rests on a fallback.
    pub flagged: bool,
    pub notes: Vec<String>,
}

impl TrendReport {
    pub fn new(
        name: impl Into<String>,
        n_grid: Vec<usize>,
        estimates: &[Estimate],
        target: f64,
        direction: Direction,
    ) -> Self {
        let values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
        let key: Vec<f64> = match direction {
            Direction::Decreasing => values.clone(),
            Direction::TowardTarget => values.iter().map(|v| (v - target).abs()).collect(),
        };
        let monotone = key.windows(2).all(|w| w[1] <= w[0]);
        let mut notes = Vec::new();
        if !monotone {
            notes.push("not monotone in the predicted direction over the n-grid".to_string());
        }
        Self {
            name: name.into(),
            n_grid,
            values,
            se: estimates.iter().map(|e| e.se).collect(),
            target,
            direction,
            monotone,
            flagged: !monotone,
            notes,
        }
    }

    pub fn flag(&mut self, note: impl Into<String>) {
        self.flagged = true;
        self.notes.push(note.into());
    }

    /// A trend is acceptable when monotone or explicitly flagged.
    pub fn acceptable(&self) -> bool {
        self.monotone || self.flagged
    }
}

/// Parameters of one SK verification run at a single `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkVerifyParams {
    pub p: usize,
    pub c: f64,
    pub beta: f64,
    pub u: f64,
    pub t: f64,
    pub delta: Vec<f64>,
    pub v: f64,
    pub reps: u64,
    pub inner_reps: u64,
    pub seed: u64,
}

fn report(
    id: ConditionId,
    quantity: &str,
    sk: &SkSchedule,
    parameters: BTreeMap<String, f64>,
    estimate: Estimate,
    target: f64,
    verdict: Verdict,
) -> ConditionReport {
    ConditionReport {
        id,
        quantity: quantity.to_string(),
        n: sk.schedule.n,
        p: sk.p,
        parameters,
        estimate: estimate.value,
        se: estimate.se,
        target,
        verdict,
        flags: Vec::new(),
    }
}

fn functional_report(
    id: ConditionId,
    quantity: &str,
    sk: &SkSchedule,
    mut parameters: BTreeMap<String, f64>,
    f: &BlockFunctional,
    target: f64,
) -> ConditionReport {
    parameters.insert("k_n".into(), f.blocks as f64);
    parameters.insert("continuous_estimate".into(), f.continuous.value);
    parameters.insert("continuous_se".into(), f.continuous.se);
    let mut r = report(id, quantity, sk, parameters, f.value, target, Verdict::TrendOnly);
    if f.degenerate {
        r.flags.push("k_n(t) = 0: floored block count degenerate; see continuous_estimate".into());
    }
    r
}

/// Every condition report for one SK instance at one system size.
pub fn verify_sk(n: usize, prm: &SkVerifyParams) -> Result<Vec<ConditionReport>, Error> {
    let sk = pspin::make_schedule(n, prm.p, prm.c, prm.beta)?;
    let s = &sk.schedule;
    let inst = PSpinInstance::build(n, prm.p, domain_seed(prm.seed, "verify-instance").wrapping_add(n as u64))?;
    let model = SkModel::new(&inst, prm.beta).with_cache_capacity(0);
    let seed = |tag: &str| domain_seed(prm.seed, tag).wrapping_add(n as u64);
    let base: BTreeMap<String, f64> = [
        ("c".to_string(), prm.c),
        ("beta".to_string(), prm.beta),
        ("gamma".to_string(), sk.gamma),
        ("alpha".to_string(), s.alpha_n),
        ("a_n".to_string(), s.a_n),
        ("log_c_n".to_string(), s.log_c_n),
        ("theta_n".to_string(), s.theta_n as f64),
        ("v_n".to_string(), s.v_n as f64),
    ]
    .into_iter()
    .collect();
    let with = |extra: &[(&str, f64)]| {
        let mut m = base.clone();
        for (k, v) in extra {
            m.insert((*k).to_string(), *v);
        }
        m
    };
    let mut out = Vec::new();

    let c0 = condition0_check(&model, s, prm.v, prm.reps, seed("c0"))?;
    let magnitude = sk.gamma * sk.gamma / (s.a_n * prm.v);
    out.push(report(ConditionId::Zero, "mean_exp_rate", &sk, with(&[("v", prm.v)]), c0, magnitude, Verdict::TrendOnly));

    let mix = mixing_check(n, s.theta_n, &[0, 1, 2])?;
    out.push(report(
        ConditionId::Mixing,
        "max_deviation",
        &sk,
        with(&[("bound", mix.bound)]),
        Estimate::exact(mix.max_deviation),
        mix.bound,
        if mix.passes() { Verdict::Pass } else { Verdict::Fail },
    ));

    let target = pspin::k_p(prm.p) * prm.t / prm.u;
    let nu = nu_t(&model, s, prm.u, prm.t, prm.reps, seed("nu"))?;
    out.push(functional_report(ConditionId::TailMean, "nu", &sk, with(&[("u", prm.u), ("t", prm.t)]), &nu, target));

    let sig = sigma_sq_t(&model, s, prm.u, prm.t, prm.reps, prm.inner_reps, seed("sigma"))?;
    out.push(functional_report(
        ConditionId::TailVariance,
        "sigma_sq",
        &sk,
        with(&[("u", prm.u), ("t", prm.t)]),
        &sig,
        0.0,
    ));
    let eta = pair_distance2_functional(&model, s, prm.u, prm.t, prm.reps, prm.inner_reps, seed("eta"))?;
    out.push(functional_report(
        ConditionId::TailVariance,
        "eta",
        &sk,
        with(&[("u", prm.u), ("t", prm.t)]),
        &eta,
        0.0,
    ));

    for &delta in &prm.delta {
        let m = condition31_estimate(&model, s, delta, prm.reps, seed("c31").wrapping_add(delta.to_bits()))?;
        let bound = condition31_bound(delta, sk.gamma, prm.beta);
        let pass = m.estimate.value <= bound + 3.0 * m.estimate.se;
        out.push(report(
            ConditionId::Truncated,
            "truncated_moment",
            &sk,
            with(&[("delta", delta), ("powered", m.powered)]),
            m.estimate,
            bound,
            if pass { Verdict::Pass } else { Verdict::Fail },
        ));
    }

    // Path functionals need at least one block boundary.
    let mut t_path = prm.t;
    let mut path_flags = Vec::new();
    if s.blocks(t_path) == 0 {
        t_path = (s.theta_n as f64 / s.a_n).max(prm.t);
        while s.blocks(t_path) == 0 {
            t_path = f64::from_bits(t_path.to_bits() + 1);
        }
        path_flags.push(format!("k_n(t) = 0 at t = {}: evaluated at t = {t_path}, the first time with one block", prm.t));
    }
    let steps = s.theta_n * s.blocks(t_path) + 1;
    let mut rng = crate::stats::replica_rng(prm.seed, "dr-trajectory", n as u64);
    let start = model.sample_invariant(&mut rng);
    let traj = crate::engine::simulate_trajectory_from(&model, start, steps, &mut rng)?;
    let dr = dr_path_functionals(&model, s, prm.u, t_path, &traj, prm.inner_reps.max(prm.reps / 100), seed("dr"))?;
    let params = with(&[("u", prm.u), ("t", t_path), ("k_n", s.blocks(t_path) as f64)]);
    let mut r = report(
        ConditionId::PathMean,
        "nu_path",
        &sk,
        params.clone(),
        Estimate::exact(dr.nu),
        pspin::k_p(prm.p) * t_path / prm.u,
        Verdict::TrendOnly,
    );
    r.flags = path_flags.clone();
    out.push(r);
    let mut r = report(ConditionId::PathVariance, "sigma_sq_path", &sk, params, Estimate::exact(dr.sigma_sq), 0.0, Verdict::TrendOnly);
    r.flags = path_flags;
    out.push(r);
    Ok(out)
}
