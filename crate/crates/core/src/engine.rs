//! Markov jump processes in a random environment.
//!
//! A jump chain `J` with transition kernel `p(x, y)` and invariant measure
//! `π` is time-changed by holding rates `λ(x) = C π(x) / τ(x)`. Holding times
//! are `λ⁻¹(J(i)) e_i` with i.i.d. unit exponential marks `e_i`, and the clock
//! process is their partial sum. All clock values are natural logarithms.

use std::fmt::Debug;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::logspace::{log_add_exp, log_sum_exp};
use crate::stats::{replicate_collect, Estimate, MCAccumulator};
use crate::Error;

/// Transition structure of a discrete-time jump chain.
pub trait JumpChain: Sync {
    type State: Clone + PartialEq + Debug + Send + Sync;

    /// Draw from the initial distribution `μ`.
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    /// Draw from the invariant measure `π`.
    fn sample_invariant<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    /// One move of the chain from `x`.
    fn next_state<R: Rng + ?Sized>(&self, x: &Self::State, rng: &mut R) -> Self::State;
    /// `ln π(x)`.
    fn log_invariant(&self, x: &Self::State) -> f64;
    fn period(&self) -> usize;
}

/// Chains whose state space can be listed, for exact checks.
pub trait EnumerableChain: JumpChain {
    fn states(&self) -> Vec<Self::State>;
    fn transition_probability(&self, x: &Self::State, y: &Self::State) -> f64;
}

/// `|Σ_x π(x) − 1|`.
pub fn invariant_mass_defect<C: EnumerableChain>(chain: &C) -> f64 {
    let total: f64 = chain
        .states()
        .iter()
        .map(|x| chain.log_invariant(x).exp())
        .sum();
    (total - 1.0).abs()
}

/// `max_{x,y} |π(x)p(x,y) − π(y)p(y,x)|`.
pub fn reversibility_defect<C: EnumerableChain>(chain: &C) -> f64 {
    let states = chain.states();
    let mut worst: f64 = 0.0;
    for x in &states {
        let px = chain.log_invariant(x).exp();
        for y in &states {
            let py = chain.log_invariant(y).exp();
            let flow = px * chain.transition_probability(x, y) - py * chain.transition_probability(y, x);
            worst = worst.max(flow.abs());
        }
    }
    worst
}

/// The random environment `τ(x) > 0` together with the model constant `C`.
pub trait Environment<S>: Sync {
    /// `ln τ(x)`. Non-positive `τ` shows up as a non-finite logarithm.
    fn log_tau(&self, x: &S) -> f64;
    /// `ln C`.
    fn log_constant(&self) -> f64;
}

/// `ln λ(x) = ln C + ln π(x) − ln τ(x)`.
pub fn log_holding_rate<C, E>(env: &E, chain: &C, x: &C::State) -> Result<f64, Error>
where
    C: JumpChain,
    E: Environment<C::State>,
{
    let log_tau = env.log_tau(x);
    if !log_tau.is_finite() {
        return Err(Error::Environment(format!(
            "τ must be positive and finite at {x:?} (ln τ = {log_tau})"
        )));
    }
    Ok(env.log_constant() + chain.log_invariant(x) - log_tau)
}

/// `λ(x) = C π(x) / τ(x)`.
pub fn holding_rate<C, E>(env: &E, chain: &C, x: &C::State) -> Result<f64, Error>
where
    C: JumpChain,
    E: Environment<C::State>,
{
    log_holding_rate(env, chain, x).map(f64::exp)
}

/// A position of the jump chain together with its mean holding time.
pub trait Walker {
    type State;
    fn state(&self) -> &Self::State;
    /// `ln λ⁻¹` at the current state.
    fn log_mean_hold(&self) -> f64;
    fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), Error>;
}

/// A jump chain coupled to its environment, able to spawn walkers.
///
/// Implementations may cache or update the environment incrementally along a
/// walk; [`RandomHopping`] is the generic from-scratch version.
pub trait Dynamics: Sync {
    type State: Clone + PartialEq + Debug + Send + Sync;
    type Walker<'a>: Walker<State = Self::State>
    where
        Self: 'a;

    fn walker_at(&self, start: Self::State) -> Result<Self::Walker<'_>, Error>;
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    fn sample_invariant<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    fn next_state<R: Rng + ?Sized>(&self, x: &Self::State, rng: &mut R) -> Self::State;
    fn log_holding_rate(&self, x: &Self::State) -> Result<f64, Error>;
    fn period(&self) -> usize;
}

/// Generic random hopping dynamics over any chain and environment.
#[derive(Debug, Clone)]
pub struct RandomHopping<C, E> {
    pub chain: C,
    pub env: E,
}

impl<C, E> RandomHopping<C, E> {
    pub fn new(chain: C, env: E) -> Self {
        Self { chain, env }
    }
}

pub struct ChainWalker<'a, C: JumpChain, E> {
    model: &'a RandomHopping<C, E>,
    state: C::State,
    log_hold: f64,
}

impl<C, E> Walker for ChainWalker<'_, C, E>
where
    C: JumpChain,
    E: Environment<C::State>,
{
    type State = C::State;

    fn state(&self) -> &C::State {
        &self.state
    }

    fn log_mean_hold(&self) -> f64 {
        self.log_hold
    }

    fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), Error> {
        let next = self.model.chain.next_state(&self.state, rng);
        self.log_hold = -log_holding_rate(&self.model.env, &self.model.chain, &next)?;
        self.state = next;
        Ok(())
    }
}

impl<C, E> Dynamics for RandomHopping<C, E>
where
    C: JumpChain,
    E: Environment<C::State>,
{
    type State = C::State;
    type Walker<'a>
        = ChainWalker<'a, C, E>
    where
        Self: 'a;

    fn walker_at(&self, start: C::State) -> Result<ChainWalker<'_, C, E>, Error> {
        let log_hold = -log_holding_rate(&self.env, &self.chain, &start)?;
        Ok(ChainWalker {
            model: self,
            state: start,
            log_hold,
        })
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> C::State {
        self.chain.sample_initial(rng)
    }

    fn sample_invariant<R: Rng + ?Sized>(&self, rng: &mut R) -> C::State {
        self.chain.sample_invariant(rng)
    }

    fn next_state<R: Rng + ?Sized>(&self, x: &C::State, rng: &mut R) -> C::State {
        self.chain.next_state(x, rng)
    }

    fn log_holding_rate(&self, x: &C::State) -> Result<f64, Error> {
        log_holding_rate(&self.env, &self.chain, x)
    }

    fn period(&self) -> usize {
        self.chain.period()
    }
}

/// Simple random walk on the complete graph with `size` vertices, started
/// uniformly. For `size = 2` the walk alternates deterministically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompleteGraph {
    pub size: usize,
}

impl CompleteGraph {
    pub fn new(size: usize) -> Result<Self, Error> {
        if size < 2 {
            return Err(Error::Domain("complete graph needs at least two vertices".into()));
        }
        Ok(Self { size })
    }
}

impl JumpChain for CompleteGraph {
    type State = usize;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.size)
    }

    fn sample_invariant<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.size)
    }

    fn next_state<R: Rng + ?Sized>(&self, x: &usize, rng: &mut R) -> usize {
        let y = rng.random_range(0..self.size - 1);
        if y >= *x {
            y + 1
        } else {
            y
        }
    }

    fn log_invariant(&self, _x: &usize) -> f64 {
        -(self.size as f64).ln()
    }

    fn period(&self) -> usize {
        if self.size == 2 {
            2
        } else {
            1
        }
    }
}

impl EnumerableChain for CompleteGraph {
    fn states(&self) -> Vec<usize> {
        (0..self.size).collect()
    }

    fn transition_probability(&self, x: &usize, y: &usize) -> f64 {
        if x == y {
            0.0
        } else {
            1.0 / (self.size - 1) as f64
        }
    }
}

/// An environment given by a table of `τ` values indexed by state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedEnvironment {
    pub tau: Vec<f64>,
    pub constant: f64,
}

impl Environment<usize> for TabulatedEnvironment {
    fn log_tau(&self, x: &usize) -> f64 {
        self.tau.get(*x).map_or(f64::NAN, |t| t.ln())
    }

    fn log_constant(&self) -> f64 {
        self.constant.ln()
    }
}

/// The sequences governing one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSchedule {
    pub n: usize,
    /// Jump scale `a_n`: number of chain steps per unit of rescaled time.
    pub a_n: f64,
    /// `ln c_n`; the time scale itself overflows for moderate `n`.
    pub log_c_n: f64,
    /// Block length `θ_n`.
    pub theta_n: usize,
    pub alpha_n: f64,
    /// Sub-block length of the comparison process.
    pub v_n: usize,
}

impl ScalingSchedule {
    pub fn new(
        n: usize,
        a_n: f64,
        log_c_n: f64,
        theta_n: usize,
        alpha_n: f64,
        v_n: usize,
    ) -> Result<Self, Error> {
        if !(a_n >= 1.0 && a_n.is_finite()) {
            return Err(Error::Domain(format!("a_n must be finite and >= 1, got {a_n}")));
        }
        if !log_c_n.is_finite() {
            return Err(Error::Domain("ln c_n must be finite".into()));
        }
        if theta_n == 0 {
            return Err(Error::Domain("θ_n must be at least 1".into()));
        }
        if !(alpha_n > 0.0 && alpha_n.is_finite()) {
            return Err(Error::Domain(format!("α_n must be positive, got {alpha_n}")));
        }
        if v_n == 0 || v_n > theta_n {
            return Err(Error::Domain(format!("need 1 <= v_n <= θ_n, got v_n = {v_n}")));
        }
        Ok(Self {
            n,
            a_n,
            log_c_n,
            theta_n,
            alpha_n,
            v_n,
        })
    }

    /// `⌊a_n t⌋`.
    pub fn jumps(&self, t: f64) -> usize {
        (self.a_n * t).floor().max(0.0) as usize
    }

    /// `k_n(t) = ⌊⌊a_n t⌋ / θ_n⌋`.
    pub fn blocks(&self, t: f64) -> usize {
        self.jumps(t) / self.theta_n
    }

    /// `ln(c_n u^{1/α_n})`.
    pub fn log_threshold(&self, u: f64) -> f64 {
        self.log_c_n + u.ln() / self.alpha_n
    }
}

/// A realized jump-chain path with its exponential holding marks.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub states: Vec<S>,
    pub marks: Vec<f64>,
    /// `ln λ⁻¹(J(i))`.
    pub log_holds: Vec<f64>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `ln(λ⁻¹(J(i)) e_i)`.
    pub fn log_term(&self, i: usize) -> f64 {
        self.log_holds[i] + self.marks[i].ln()
    }

    fn log_terms(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        range.map(|i| self.log_term(i)).collect()
    }
}

fn draw_mark<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let e: f64 = rng.sample(Exp1);
        if e > 0.0 {
            return e;
        }
    }
}

/// Runs `steps` transitions from a draw of the initial distribution.
pub fn simulate_trajectory<D: Dynamics, R: Rng + ?Sized>(
    dynamics: &D,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory<D::State>, Error> {
    let start = dynamics.sample_initial(rng);
    simulate_trajectory_from(dynamics, start, steps, rng)
}

/// Runs `steps` transitions from `start`; the result holds `steps + 1` states.
pub fn simulate_trajectory_from<D: Dynamics, R: Rng + ?Sized>(
    dynamics: &D,
    start: D::State,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory<D::State>, Error> {
    if steps == 0 {
        return Err(Error::Domain("a trajectory needs at least one step".into()));
    }
    let mut walker = dynamics.walker_at(start)?;
    let mut traj = Trajectory {
        states: Vec::with_capacity(steps + 1),
        marks: Vec::with_capacity(steps + 1),
        log_holds: Vec::with_capacity(steps + 1),
    };
    for i in 0..=steps {
        if i > 0 {
            walker.advance(rng)?;
        }
        traj.states.push(walker.state().clone());
        traj.log_holds.push(walker.log_mean_hold());
        traj.marks.push(draw_mark(rng));
    }
    Ok(traj)
}

/// `ln(c_n⁻¹ Σ_{i<m} λ⁻¹(J(i)) e_i)`; `-inf` for `m = 0`.
pub fn clock_value_steps<S>(traj: &Trajectory<S>, log_c_n: f64, m: usize) -> Result<f64, Error> {
    if traj.len() < m {
        return Err(Error::Range {
            needed: m,
            available: traj.len(),
        });
    }
    if m == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_sum_exp(&traj.log_terms(0..m)) - log_c_n)
}

/// `ln S_n(t)` with `S_n(t) = c_n⁻¹ Σ_{i=0}^{⌊a_n t⌋−1} λ⁻¹(J(i)) e_i`.
pub fn clock_value<S>(traj: &Trajectory<S>, sched: &ScalingSchedule, t: f64) -> Result<f64, Error> {
    clock_value_steps(traj, sched.log_c_n, sched.jumps(t))
}

/// `ln` of the block part `Σ_{i=1}^{k_n(t)} Z_{n,i}` (indices `1..=θ_n k_n(t)`)
/// and of the index-0 term, both rescaled by `c_n`.
pub fn blocked_clock_parts<S>(
    traj: &Trajectory<S>,
    sched: &ScalingSchedule,
    t: f64,
) -> Result<(f64, f64), Error> {
    let last = sched.theta_n * sched.blocks(t);
    if traj.len() < last + 1 {
        return Err(Error::Range {
            needed: last + 1,
            available: traj.len(),
        });
    }
    let blocks = if last == 0 {
        f64::NEG_INFINITY
    } else {
        log_sum_exp(&traj.log_terms(1..last + 1)) - sched.log_c_n
    };
    let head = traj.log_term(0) - sched.log_c_n;
    Ok((blocks, head))
}

/// `ln S_n^b(t)`: the block sums plus the separate index-0 term.
pub fn blocked_clock_value<S>(
    traj: &Trajectory<S>,
    sched: &ScalingSchedule,
    t: f64,
) -> Result<f64, Error> {
    let (blocks, head) = blocked_clock_parts(traj, sched, t)?;
    Ok(log_add_exp(blocks, head))
}

/// `exp(α · log_value)`; the empty-sum sentinel `-inf` maps to 0.
pub fn powered(log_value: f64, alpha: f64) -> Result<f64, Error> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("power exponent must lie in (0,1], got {alpha}")));
    }
    if log_value == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    Ok((alpha * log_value).exp())
}

/// `X(T) = J(k)` for the unique `k` with `S̃(k) ≤ T < S̃(k+1)`, where `T` is
/// given as `ln T` in unscaled time.
pub fn time_changed_state<S>(traj: &Trajectory<S>, log_time: f64) -> Result<&S, Error> {
    let mut cum = f64::NEG_INFINITY;
    for k in 0..traj.len() {
        let next = log_add_exp(cum, traj.log_term(k));
        if next > log_time {
            return Ok(&traj.states[k]);
        }
        cum = next;
    }
    Err(Error::Horizon { steps: traj.len() })
}

/// Outcome of the path-wise power-transform sandwich
/// `Ŝ^α ≤ (S^b)^α ≤ Ŝ^α + (head)^α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichOutcome {
    pub lower_holds: bool,
    pub upper_holds: bool,
}

impl SandwichOutcome {
    pub fn holds(&self) -> bool {
        self.lower_holds && self.upper_holds
    }
}

/// Relative slack for comparing two roundings of the same real number.
const SANDWICH_RTOL: f64 = 1e-12;

pub fn jensen_sandwich(
    traj: &Trajectory<impl Sized>,
    sched: &ScalingSchedule,
    t: f64,
) -> Result<SandwichOutcome, Error> {
    let alpha = sched.alpha_n;
    if alpha > 1.0 {
        return Err(Error::Precondition(format!(
            "the power sandwich needs α_n <= 1, got {alpha}"
        )));
    }
    let (blocks, head) = blocked_clock_parts(traj, sched, t)?;
    let total = log_add_exp(blocks, head);
    // Compare logarithms: α ln Ŝ ≤ α ln S^b ≤ ln(Ŝ^α + head^α).
    let lo = alpha * blocks;
    let mid = alpha * total;
    let hi = log_add_exp(alpha * blocks, alpha * head);
    let slack = SANDWICH_RTOL * hi.abs().max(1.0);
    Ok(SandwichOutcome {
        lower_holds: lo <= mid,
        upper_holds: mid <= hi + slack,
    })
}

/// Whether the power-transform sandwich holds on this path.
pub fn jensen_sandwich_check(
    traj: &Trajectory<impl Sized>,
    sched: &ScalingSchedule,
    t: f64,
) -> Result<bool, Error> {
    jensen_sandwich(traj, sched, t).map(|o| o.holds())
}

/// Replica bookkeeping for [`estimate_correlation_partial`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub estimate: Estimate,
    pub requested: u64,
    pub completed: u64,
    /// Replicas abandoned because the step budget ran out.
    pub exhausted: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationQuery {
    pub epsilon: f64,
    pub t: f64,
    pub s: f64,
    pub reps: u64,
    /// Maximum chain steps per replica.
    pub step_budget: u64,
    pub seed: u64,
}

pub const DEFAULT_STEP_BUDGET: u64 = 100_000_000;

type StatePair<D> = (<D as Dynamics>::State, <D as Dynamics>::State);

/// Follows one walker until the unscaled clock passes `ln T1` and then
/// `ln T2`, returning the states at both times.
fn states_at_two_times<D: Dynamics, R: Rng + ?Sized>(
    dynamics: &D,
    log_t1: f64,
    log_t2: f64,
    budget: u64,
    rng: &mut R,
) -> Result<Option<StatePair<D>>, Error> {
    let start = dynamics.sample_invariant(rng);
    let mut walker = dynamics.walker_at(start)?;
    let mut cum = f64::NEG_INFINITY;
    let mut first: Option<D::State> = None;
    let mut steps = 0u64;
    loop {
        let next = log_add_exp(cum, walker.log_mean_hold() + draw_mark(rng).ln());
        if first.is_none() && next > log_t1 {
            first = Some(walker.state().clone());
        }
        if next > log_t2 {
            let a = first.expect("T1 <= T2");
            return Ok(Some((a, walker.state().clone())));
        }
        cum = next;
        steps += 1;
        if steps >= budget {
            return Ok(None);
        }
        walker.advance(rng)?;
    }
}

/// Monte Carlo estimate of `P_π(R(X(t^{1/α} c_n), X((t+s)^{1/α} c_n)) ≥ 1 − ε)`,
/// reporting replicas that exhausted the step budget instead of failing.
pub fn estimate_correlation_partial<D, F>(
    dynamics: &D,
    sched: &ScalingSchedule,
    overlap: F,
    q: &CorrelationQuery,
) -> Result<CorrelationEstimate, Error>
where
    D: Dynamics,
    F: Fn(&D::State, &D::State) -> f64 + Sync,
{
    if !(q.epsilon > 0.0 && q.epsilon < 1.0) {
        return Err(Error::Domain(format!("ε must lie in (0,1), got {}", q.epsilon)));
    }
    if !(q.t > 0.0 && q.s >= 0.0) {
        return Err(Error::Domain("need t > 0 and s >= 0".into()));
    }
    let log_t1 = sched.log_threshold(q.t);
    let log_t2 = sched.log_threshold(q.t + q.s);
    let outcomes = replicate_collect(q.seed, "correlation", q.reps, |rng, _| {
        states_at_two_times(dynamics, log_t1, log_t2, q.step_budget, rng)
    });
    let mut acc = MCAccumulator::new();
    let mut exhausted = 0;
    for o in outcomes {
        match o? {
            Some((a, b)) => acc.push(if overlap(&a, &b) >= 1.0 - q.epsilon { 1.0 } else { 0.0 }),
            None => exhausted += 1,
        }
    }
    Ok(CorrelationEstimate {
        estimate: acc.estimate(),
        requested: q.reps,
        completed: acc.count,
        exhausted,
    })
}

/// As [`estimate_correlation_partial`], but budget exhaustion is an error.
pub fn estimate_correlation<D, F>(
    dynamics: &D,
    sched: &ScalingSchedule,
    overlap: F,
    q: &CorrelationQuery,
) -> Result<Estimate, Error>
where
    D: Dynamics,
    F: Fn(&D::State, &D::State) -> f64 + Sync,
{
    let r = estimate_correlation_partial(dynamics, sched, overlap, q)?;
    if r.exhausted > 0 {
        return Err(Error::Budget {
            budget: q.step_budget,
            completed: r.completed,
            requested: r.requested,
        });
    }
    Ok(r.estimate)
}
