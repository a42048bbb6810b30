//! Slotted multiaccess simulation.
//!
//! Every agent's age is stored as a birth slot `b`, so `h(t) = t − b`. Agents
//! of one class are kept in a deque of groups sharing a birth slot, oldest
//! first; both policies only ever look at the front of each class, so one
//! slot costs `O(C)`. Time averages are accumulated per sawtooth segment when
//! an agent resets (and once at the horizon) rather than slot by slot.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_network, AgeFunction, ModelError, NetworkSpec};

const SELECT_STREAM: u64 = 0;
const CHANNEL_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
/// Largest age for which partial sums of `V` are tabulated.
const AGE_TABLE_LIMIT: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("warmup {warmup} must be below the horizon {horizon}")]
    WarmupTooLong { warmup: u64, horizon: u64 },
    #[error("snapshot slot {slot} outside [1, {horizon}]")]
    SnapshotOutOfRange { slot: u64, horizon: u64 },
    #[error("expected {expected} thresholds, got {got}")]
    ThresholdCount { expected: usize, got: usize },
    #[error("index exponent {0} must be at least 1")]
    IndexExponent(f64),
    #[error("expected {expected} initial ages, got {got}")]
    InitialAgesLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Uniform choice among agents whose age exceeds their class threshold.
    ThresholdRandom { thresholds_unscaled: Vec<u64> },
    /// Largest `p_c · h^(index_exponent + 1)`.
    Index { index_exponent: f64 },
}

impl PolicySpec {
    pub fn index_default() -> Self {
        PolicySpec::Index { index_exponent: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::ThresholdRandom { .. } => "threshold_random",
            PolicySpec::Index { .. } => "index",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialAges {
    AllZero,
    /// Normal with mean `N/2` and variance `N`, redrawn while negative, rounded.
    Gaussian,
    Explicit { ages: Vec<u64> },
}

/// Age reached at the slot after a successful delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    #[default]
    Zero,
    One,
}

/// Whether the age function sees slot counts or `h / N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeScale {
    Unscaled,
    #[default]
    Rescaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub network: NetworkSpec,
    pub policy: PolicySpec,
    pub horizon: u64,
    pub seed: u64,
    pub snapshot_slots: Vec<u64>,
    pub age_function: AgeFunction,
    pub age_scale: AgeScale,
    pub initial_ages: InitialAges,
    pub reset: ResetMode,
    /// Slots excluded from the time averages.
    pub warmup: u64,
}

impl SimConfig {
    pub fn new(network: NetworkSpec, policy: PolicySpec, horizon: u64, seed: u64) -> Self {
        Self {
            network,
            policy,
            horizon,
            seed,
            snapshot_slots: Vec::new(),
            age_function: AgeFunction::Linear,
            age_scale: AgeScale::default(),
            initial_ages: InitialAges::AllZero,
            reset: ResetMode::default(),
            warmup: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        validate_network(self.network.clone())?;
        self.age_function.validate()?;
        if self.horizon == 0 {
            return Err(SimError::ZeroHorizon);
        }
        if self.warmup >= self.horizon {
            return Err(SimError::WarmupTooLong {
                warmup: self.warmup,
                horizon: self.horizon,
            });
        }
        if let Some(&slot) = self
            .snapshot_slots
            .iter()
            .find(|&&s| s == 0 || s > self.horizon)
        {
            return Err(SimError::SnapshotOutOfRange {
                slot,
                horizon: self.horizon,
            });
        }
        match &self.policy {
            PolicySpec::ThresholdRandom { thresholds_unscaled } => {
                if thresholds_unscaled.len() != self.network.num_classes() {
                    return Err(SimError::ThresholdCount {
                        expected: self.network.num_classes(),
                        got: thresholds_unscaled.len(),
                    });
                }
            }
            PolicySpec::Index { index_exponent } => {
                if !(*index_exponent >= 1.0 && index_exponent.is_finite()) {
                    return Err(SimError::IndexExponent(*index_exponent));
                }
            }
        }
        if let InitialAges::Explicit { ages } = &self.initial_ages {
            let n = self.network.num_agents as usize;
            if ages.len() != n {
                return Err(SimError::InitialAgesLength {
                    expected: n,
                    got: ages.len(),
                });
            }
        }
        Ok(())
    }
}

/// Rescaled ages of every agent at one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySnapshot {
    pub slot: u64,
    pub num_agents: u64,
    /// Sorted rescaled ages, one list per class.
    pub ages: Vec<Vec<f64>>,
}

impl OccupancySnapshot {
    pub fn num_classes(&self) -> usize {
        self.ages.len()
    }

    /// Share of all `N` agents that are in class `c` with rescaled age `≤ h`.
    pub fn empirical_cdf(&self, c: usize, h: f64) -> f64 {
        let count = self.ages[c].partition_point(|&a| a <= h);
        count as f64 / self.num_agents as f64
    }

    pub fn total_cdf(&self, h: f64) -> f64 {
        (0..self.ages.len()).map(|c| self.empirical_cdf(c, h)).sum()
    }
}

pub fn empirical_cdf(snapshot: &OccupancySnapshot, c: usize, h: f64) -> f64 {
    snapshot.empirical_cdf(c, h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// `(1 / (T N)) Σ_t Σ_n h_n(t)` over the accumulation window.
    pub avg_aoi: f64,
    /// Same average of `V(h)` or `V(h / N)`.
    pub avg_age_value: f64,
    pub accumulated_slots: u64,
    pub deliveries: u64,
    pub idle_slots: u64,
    pub snapshots: Vec<OccupancySnapshot>,
}

/// Outcome of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotOutcome {
    pub scheduled: Option<usize>,
    pub delivered: bool,
}

#[derive(Debug, Clone)]
struct Group {
    birth: i64,
    agents: Vec<usize>,
}

// Sawtooth accumulation of Σ h and Σ V(h) over a window of slots.
#[derive(Debug, Clone)]
struct Accumulator {
    window_start: i64,
    aoi: i128,
    age_value: f64,
    age_function: AgeFunction,
    divisor: f64,
    // prefix[k] = Σ_{j ≤ k} V(j / divisor)
    prefix: Vec<f64>,
}

impl Accumulator {
    fn value(&self, age: i64) -> f64 {
        self.age_function.eval(age as f64 / self.divisor)
    }

    fn prefix_through(&mut self, age: i64) -> f64 {
        let age = age as usize;
        while self.prefix.len() <= age {
            let j = self.prefix.len() as i64;
            let prev = self.prefix.last().copied().unwrap_or(0.0);
            self.prefix.push(prev + self.value(j));
        }
        self.prefix[age]
    }

    /// Add slots `[start, end)` of an agent born at `birth`.
    fn close(&mut self, birth: i64, start: i64, end: i64) {
        let start = start.max(self.window_start);
        if end <= start {
            return;
        }
        let (a0, a1) = (start - birth, end - 1 - birth);
        let count = (end - start) as i128;
        self.aoi += (a0 as i128 + a1 as i128) * count / 2;
        if (a1 as usize) < AGE_TABLE_LIMIT {
            let lower = if a0 > 0 { self.prefix_through(a0 - 1) } else { 0.0 };
            self.age_value += self.prefix_through(a1) - lower;
        } else {
            self.age_value += (a0..=a1).map(|a| self.value(a)).sum::<f64>();
        }
    }
}

/// A running simulation.
#[derive(Debug, Clone)]
pub struct SimState {
    pub slot: u64,
    num_agents: u64,
    class_of: Vec<usize>,
    success_probs: Vec<f64>,
    birth: Vec<i64>,
    segment_start: Vec<i64>,
    queues: Vec<VecDeque<Group>>,
    policy: Policy,
    reset: ResetMode,
    select_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
    acc: Accumulator,
    deliveries: u64,
    idle_slots: u64,
}

#[derive(Debug, Clone)]
enum Policy {
    Threshold {
        thresholds: Vec<i64>,
        eligible: Vec<usize>,
    },
    Index {
        exponent: f64,
    },
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn initial_ages(config: &SimConfig) -> Vec<u64> {
    let n = config.network.num_agents as usize;
    match &config.initial_ages {
        InitialAges::AllZero => vec![0; n],
        InitialAges::Explicit { ages } => ages.clone(),
        InitialAges::Gaussian => {
            let nf = config.network.num_agents as f64;
            let normal = Normal::new(nf / 2.0, nf.sqrt()).expect("finite parameters");
            let mut rng = stream_rng(config.seed, INIT_STREAM);
            (0..n)
                .map(|_| loop {
                    let x: f64 = normal.sample(&mut rng);
                    if x >= 0.0 {
                        break x.round() as u64;
                    }
                })
                .collect()
        }
    }
}

impl SimState {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let network = &config.network;
        let class_of = network.agent_classes();
        let ages = initial_ages(config);
        let birth: Vec<i64> = ages.iter().map(|&a| -(a as i64)).collect();

        let mut order: Vec<usize> = (0..class_of.len()).collect();
        order.sort_by_key(|&i| (class_of[i], birth[i], i));
        let mut queues = vec![VecDeque::new(); network.num_classes()];
        for i in order {
            push_back(&mut queues[class_of[i]], birth[i], i);
        }

        let policy = match &config.policy {
            PolicySpec::ThresholdRandom { thresholds_unscaled } => Policy::Threshold {
                thresholds: thresholds_unscaled.iter().map(|&h| h as i64).collect(),
                eligible: Vec::new(),
            },
            PolicySpec::Index { index_exponent } => Policy::Index {
                exponent: index_exponent + 1.0,
            },
        };
        let divisor = match config.age_scale {
            AgeScale::Unscaled => 1.0,
            AgeScale::Rescaled => network.num_agents as f64,
        };
        Ok(Self {
            slot: 0,
            num_agents: network.num_agents,
            success_probs: network.classes.iter().map(|c| c.success_prob).collect(),
            segment_start: vec![0; class_of.len()],
            class_of,
            birth,
            queues,
            policy,
            reset: config.reset,
            select_rng: stream_rng(config.seed, SELECT_STREAM),
            channel_rng: stream_rng(config.seed, CHANNEL_STREAM),
            acc: Accumulator {
                window_start: config.warmup as i64,
                aoi: 0,
                age_value: 0.0,
                age_function: config.age_function,
                divisor,
                prefix: Vec::new(),
            },
            deliveries: 0,
            idle_slots: 0,
        })
    }

    pub fn age(&self, agent: usize) -> u64 {
        (self.slot as i64 - self.birth[agent]) as u64
    }

    pub fn ages(&self) -> Vec<u64> {
        (0..self.birth.len()).map(|i| self.age(i)).collect()
    }

    pub fn class_of(&self, agent: usize) -> usize {
        self.class_of[agent]
    }

    pub fn snapshot(&self) -> OccupancySnapshot {
        let n = self.num_agents as f64;
        let mut ages = vec![Vec::new(); self.queues.len()];
        for (i, &c) in self.class_of.iter().enumerate() {
            ages[c].push(self.age(i) as f64 / n);
        }
        for list in &mut ages {
            list.sort_by(f64::total_cmp);
        }
        OccupancySnapshot {
            slot: self.slot,
            num_agents: self.num_agents,
            ages,
        }
    }

    /// Agent the policy schedules in the current slot, or `None` to idle.
    pub fn select(&mut self) -> Option<usize> {
        self.select_entry().map(|e| e.agent)
    }

    fn select_entry(&mut self) -> Option<Selection> {
        let t = self.slot as i64;
        match &mut self.policy {
            Policy::Threshold {
                thresholds,
                eligible,
            } => {
                for (c, queue) in self.queues.iter_mut().enumerate() {
                    while queue.front().is_some_and(|g| t - g.birth > thresholds[c]) {
                        let group = queue.pop_front().expect("front exists");
                        eligible.extend(group.agents);
                    }
                }
                if eligible.is_empty() {
                    return None;
                }
                let pos = self.select_rng.gen_range(0..eligible.len());
                Some(Selection {
                    agent: eligible[pos],
                    pos,
                })
            }
            Policy::Index { exponent } => {
                let mut best = 0.0f64;
                let mut tied = 0usize;
                for (c, queue) in self.queues.iter().enumerate() {
                    let Some(front) = queue.front() else { continue };
                    let w = self.success_probs[c] * ((t - front.birth) as f64).powf(*exponent);
                    if w > best {
                        best = w;
                        tied = front.agents.len();
                    } else if w == best && w > 0.0 {
                        tied += front.agents.len();
                    }
                }
                if best <= 0.0 {
                    return None;
                }
                let mut pick = self.select_rng.gen_range(0..tied);
                for (c, queue) in self.queues.iter().enumerate() {
                    let Some(front) = queue.front() else { continue };
                    let w = self.success_probs[c] * ((t - front.birth) as f64).powf(*exponent);
                    if w == best {
                        if pick < front.agents.len() {
                            return Some(Selection {
                                agent: front.agents[pick],
                                pos: pick,
                            });
                        }
                        pick -= front.agents.len();
                    }
                }
                unreachable!("tie count covers every tied group")
            }
        }
    }

    /// One slot: schedule, draw the channel, update ages.
    pub fn step(&mut self) -> SlotOutcome {
        let t = self.slot as i64;
        let Some(sel) = self.select_entry() else {
            self.idle_slots += 1;
            self.slot += 1;
            return SlotOutcome {
                scheduled: None,
                delivered: false,
            };
        };
        let agent = sel.agent;
        let c = self.class_of[agent];
        let delivered = self.channel_rng.gen_bool(self.success_probs[c]);
        if delivered {
            match &mut self.policy {
                Policy::Threshold { eligible, .. } => {
                    eligible.swap_remove(sel.pos);
                }
                Policy::Index { .. } => {
                    let front = self.queues[c].front_mut().expect("selected from front");
                    front.agents.swap_remove(sel.pos);
                    if front.agents.is_empty() {
                        self.queues[c].pop_front();
                    }
                }
            }
            self.acc.close(self.birth[agent], self.segment_start[agent], t + 1);
            let birth = match self.reset {
                ResetMode::Zero => t + 1,
                ResetMode::One => t,
            };
            self.birth[agent] = birth;
            self.segment_start[agent] = t + 1;
            push_back(&mut self.queues[c], birth, agent);
            self.deliveries += 1;
        }
        self.slot += 1;
        SlotOutcome {
            scheduled: Some(agent),
            delivered,
        }
    }

    /// Close every open segment and report averages over `[warmup, slot)`.
    fn finish(mut self, snapshots: Vec<OccupancySnapshot>) -> SimResult {
        let end = self.slot as i64;
        for agent in 0..self.birth.len() {
            self.acc.close(self.birth[agent], self.segment_start[agent], end);
        }
        let slots = (end - self.acc.window_start) as u64;
        let denom = slots as f64 * self.num_agents as f64;
        SimResult {
            avg_aoi: self.acc.aoi as f64 / denom,
            avg_age_value: self.acc.age_value / denom,
            accumulated_slots: slots,
            deliveries: self.deliveries,
            idle_slots: self.idle_slots,
            snapshots,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Selection {
    agent: usize,
    pos: usize,
}

fn push_back(queue: &mut VecDeque<Group>, birth: i64, agent: usize) {
    match queue.back_mut() {
        Some(g) if g.birth == birth => g.agents.push(agent),
        _ => queue.push_back(Group {
            birth,
            agents: vec![agent],
        }),
    }
}

/// Run `config.horizon` slots. Snapshot `s` is taken after `s` transitions.
pub fn run(config: &SimConfig) -> Result<SimResult, SimError> {
    let mut state = SimState::new(config)?;
    let mut wanted = config.snapshot_slots.clone();
    wanted.sort_unstable();
    wanted.dedup();
    let mut wanted = wanted.into_iter().peekable();
    let mut snapshots = Vec::new();
    while state.slot < config.horizon {
        if wanted.next_if_eq(&state.slot).is_some() {
            snapshots.push(state.snapshot());
        }
        state.step();
    }
    if wanted.next_if_eq(&state.slot).is_some() {
        snapshots.push(state.snapshot());
    }
    Ok(state.finish(snapshots))
}
