//! Bipartite action-graph games with additive function nodes.
//!
//! Action nodes feed function nodes through an input graph; each function
//! node maps the number of players whose action lies in its neighborhood to a
//! table value, and the payoff of an action is the weighted sum of all
//! function outputs (the output graph is complete, with some weights masked
//! to zero).
//!
//! Two kinds of families are supported. A player-count family stores tables
//! for `0..=max_players` and every instance `p` in `[min, max]` reads the
//! prefix `0..=p`. An edge-threshold family draws one latent uniform per
//! (action, function) pair and includes the edge iff `latent < v`, so edge
//! sets are nested in `v`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::game::{DeviationPayoffs, InstanceKey, Mixture, OpponentProfile};
use crate::sampling;
use crate::seeding::{self, stream};

/// How the sine and polynomial components of a function table were combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    #[default]
    Additive,
    Multiplicative,
}

/// The environment parameter a family varies and its range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParameterRange {
    PlayerCount { min: u32, max: u32 },
    ErThreshold { min: f64, max: f64 },
}

impl ParameterRange {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            ParameterRange::PlayerCount { min, max } => (min as f64, max as f64),
            ParameterRange::ErThreshold { min, max } => (min, max),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ParameterRange::PlayerCount { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParameterRange::PlayerCount { .. } => "player_count",
            ParameterRange::ErThreshold { .. } => "er_threshold",
        }
    }

    /// Map `v` to `[0, 1]`; degenerate ranges map to 0.5.
    pub fn normalize(&self, v: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.5
        }
    }

    /// Inverse of [`normalize`](Self::normalize); discrete ranges round to the
    /// nearest integer in range.
    pub fn denormalize(&self, t: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let v = lo + t.clamp(0.0, 1.0) * (hi - lo);
        if self.is_discrete() {
            v.round().clamp(lo, hi)
        } else {
            v
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let (lo, hi) = self.bounds();
        v >= lo && v <= hi && (!self.is_discrete() || v.fract() == 0.0)
    }

    pub fn check(&self, v: f64) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(v >= lo && v <= hi) {
            return Err(Error::OutOfRange { v, min: lo, max: hi });
        }
        if self.is_discrete() && v.fract() != 0.0 {
            return Err(Error::NonIntegerPlayers(v));
        }
        Ok(())
    }

    /// Uniform draw over the range (over integers for player counts).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParameterRange::PlayerCount { min, max } => rng.random_range(min..=max) as f64,
            ParameterRange::ErThreshold { min, max } => {
                if max > min {
                    rng.random_range(min..=max)
                } else {
                    min
                }
            }
        }
    }

    /// Evaluation grid: every integer for player counts, `points` evenly
    /// spaced values (endpoints included) for thresholds.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        match *self {
            ParameterRange::PlayerCount { min, max } => (min..=max).map(f64::from).collect(),
            ParameterRange::ErThreshold { min, max } => {
                if points <= 1 || max == min {
                    return vec![min];
                }
                (0..points)
                    .map(|i| if i + 1 == points { max } else { min + (max - min) * i as f64 / (points - 1) as f64 })
                    .collect()
            }
        }
    }
}

fn default_players() -> u32 {
    20
}

fn default_er_threshold() -> f64 {
    0.2
}

fn default_mask_probability() -> f64 {
    0.2
}

/// Settings for [`generate_family`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub num_strategies: usize,
    pub num_functions: usize,
    pub parameter: ParameterRange,
    /// Player count of threshold families.
    #[serde(default = "default_players")]
    pub players: u32,
    /// Fixed edge threshold of player-count families.
    #[serde(default = "default_er_threshold")]
    pub er_threshold: f64,
    #[serde(default)]
    pub combine_mode: CombineMode,
    #[serde(default = "default_mask_probability")]
    pub mask_probability: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of Gaussian observation noise added by the simulator.
    #[serde(default)]
    pub noise_stddev: f64,
}

impl GenerationConfig {
    /// Config with default players, threshold, combine mode, mask and noise.
    pub fn new(num_strategies: usize, num_functions: usize, parameter: ParameterRange, seed: u64) -> Self {
        GenerationConfig {
            num_strategies,
            num_functions,
            parameter,
            players: default_players(),
            er_threshold: default_er_threshold(),
            combine_mode: CombineMode::default(),
            mask_probability: default_mask_probability(),
            seed,
            noise_stddev: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_strategies == 0 || self.num_functions == 0 {
            return bad("need at least one strategy and one function".into());
        }
        if !(0.0..1.0).contains(&self.mask_probability) {
            return bad(format!("mask_probability {} not in [0, 1)", self.mask_probability));
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return bad(format!("noise_stddev {} must be non-negative", self.noise_stddev));
        }
        match self.parameter {
            ParameterRange::PlayerCount { min, max } => {
                if min == 0 || min > max {
                    return bad(format!("player range [{min}, {max}] is empty or contains 0"));
                }
                if !(0.0..=1.0).contains(&self.er_threshold) {
                    return bad(format!("er_threshold {} not in [0, 1]", self.er_threshold));
                }
            }
            ParameterRange::ErThreshold { min, max } => {
                if !(0.0..=1.0).contains(&min) || !(0.0..=1.0).contains(&max) || min > max {
                    return bad(format!("threshold range [{min}, {max}] invalid"));
                }
                if self.players == 0 {
                    return bad("players must be >= 1".into());
                }
            }
        }
        Ok(())
    }
}

/// A parameterized BAGGFN game family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggfnFamily {
    pub num_strategies: usize,
    pub num_functions: usize,
    pub min_players: u32,
    pub max_players: u32,
    /// `[action][function]` latent uniforms; edge present iff latent < threshold.
    pub input_edge_latents: Vec<Vec<f64>>,
    /// Fixed threshold, or `None` when the threshold is the family parameter.
    pub er_threshold: Option<f64>,
    /// `[function][count]` for counts `0..=max_players`.
    pub function_tables: Vec<Vec<f64>>,
    /// `[function][action]`.
    pub output_weights: Vec<Vec<f64>>,
    pub combine_mode: CombineMode,
    pub parameter: ParameterRange,
    /// `(min, max)` of pure payoffs over a seeded profile sample; the
    /// normalizer for every reported error.
    pub payoff_scale: (f64, f64),
    pub noise_stddev: f64,
    #[serde(default)]
    pub config: Option<GenerationConfig>,
}

/// One instance of a family, resolved from a parameter value.
#[derive(Debug, Clone)]
pub struct Instance {
    pub players: u32,
    /// `[function][action]` input-edge membership.
    pub inputs: Vec<Vec<bool>>,
    ln_fact: Vec<f64>,
}

impl Instance {
    fn binomial_pmf(&self, q: f64, out: &mut Vec<f64>) {
        let n = (self.players - 1) as usize;
        out.clear();
        out.resize(n + 1, 0.0);
        if q <= 0.0 {
            out[0] = 1.0;
            return;
        }
        if q >= 1.0 {
            out[n] = 1.0;
            return;
        }
        let (lq, lr) = (q.ln(), (-q).ln_1p());
        for (k, o) in out.iter_mut().enumerate() {
            *o = (self.ln_fact[n] - self.ln_fact[k] - self.ln_fact[n - k] + k as f64 * lq + (n - k) as f64 * lr).exp();
        }
    }
}

/// On-disk wrapper for [`BaggfnFamily`].
#[derive(Serialize, Deserialize)]
struct FamilyFile {
    format: String,
    version: u32,
    family: BaggfnFamily,
}

const FAMILY_FORMAT: &str = "gamefam-baggfn";
const FAMILY_VERSION: u32 = 1;

/// Generate a random polynomial-sine family. Deterministic in `config.seed`.
pub fn generate_family(config: &GenerationConfig) -> Result<BaggfnFamily> {
    config.validate()?;
    let mut rng = seeding::rng(seeding::derive(config.seed, stream::FAMILY));
    let (s, f) = (config.num_strategies, config.num_functions);
    let (min_players, max_players, er_threshold) = match config.parameter {
        ParameterRange::PlayerCount { min, max } => (min, max, Some(config.er_threshold)),
        ParameterRange::ErThreshold { .. } => (config.players, config.players, None),
    };

    let input_edge_latents: Vec<Vec<f64>> = (0..s).map(|_| (0..f).map(|_| rng.random::<f64>()).collect()).collect();

    let n = max_players as f64;
    let function_tables: Vec<Vec<f64>> = (0..f)
        .map(|_| {
            let period = rng.random_range(n..=10.0 * n);
            let amplitude = rng.random_range(0.5..=2.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let degree = rng.random_range(1..=3usize);
            let coefs: Vec<f64> = (0..=degree).map(|_| StandardNormal.sample(&mut rng)).collect();
            (0..=max_players)
                .map(|k| {
                    let k = k as f64;
                    let sine = amplitude * (2.0 * PI * k / period + phase).sin();
                    let x = k / n;
                    let poly = coefs.iter().rev().fold(0.0, |acc, c| acc * x + c);
                    match config.combine_mode {
                        CombineMode::Additive => sine + poly,
                        CombineMode::Multiplicative => sine * poly,
                    }
                })
                .collect()
        })
        .collect();

    let output_weights: Vec<Vec<f64>> = (0..f)
        .map(|_| {
            (0..s)
                .map(|_| {
                    let w: f64 = StandardNormal.sample(&mut rng);
                    let masked = rng.random::<f64>() < config.mask_probability;
                    if masked {
                        0.0
                    } else {
                        w
                    }
                })
                .collect()
        })
        .collect();

    let mut family = BaggfnFamily {
        num_strategies: s,
        num_functions: f,
        min_players,
        max_players,
        input_edge_latents,
        er_threshold,
        function_tables,
        output_weights,
        combine_mode: config.combine_mode,
        parameter: config.parameter,
        payoff_scale: (0.0, 1.0),
        noise_stddev: config.noise_stddev,
        config: Some(config.clone()),
    };
    family.payoff_scale = family.sample_payoff_scale(seeding::derive(config.seed, stream::PAYOFF_SCALE), 1000);
    Ok(family)
}

/// Rock-paper-scissors encoded as a two-player BAGGFN.
///
/// Function nodes count players on {R, P}, {P, S} and {S, R}; every table is
/// `[1, 0, 1]`. A pair-counter pays +1 to the winner of its pair and -1 to the
/// loser, so a node contributes only when both players sit on the pair.
pub fn rps_fixture() -> BaggfnFamily {
    const R: usize = 0;
    const P: usize = 1;
    const S: usize = 2;
    // (inputs, winner, loser) per function node: RP, PS, SR.
    let nodes = [([R, P], P, R), ([P, S], S, P), ([S, R], R, S)];
    let mut latents = vec![vec![1.0; 3]; 3];
    let mut weights = vec![vec![0.0; 3]; 3];
    for (f, (inputs, winner, loser)) in nodes.iter().enumerate() {
        for &a in inputs {
            latents[a][f] = 0.0;
        }
        weights[f][*winner] = 1.0;
        weights[f][*loser] = -1.0;
    }
    BaggfnFamily {
        num_strategies: 3,
        num_functions: 3,
        min_players: 2,
        max_players: 2,
        input_edge_latents: latents,
        er_threshold: Some(0.5),
        function_tables: vec![vec![1.0, 0.0, 1.0]; 3],
        output_weights: weights,
        combine_mode: CombineMode::Additive,
        parameter: ParameterRange::PlayerCount { min: 2, max: 2 },
        payoff_scale: (-1.0, 1.0),
        noise_stddev: 0.0,
        config: None,
    }
}

impl BaggfnFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("family: {m}")));
        if self.input_edge_latents.len() != self.num_strategies
            || self.input_edge_latents.iter().any(|r| r.len() != self.num_functions)
        {
            return bad("latent matrix shape");
        }
        if self.input_edge_latents.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
            return bad("latents outside [0, 1]");
        }
        let width = self.max_players as usize + 1;
        if self.function_tables.len() != self.num_functions || self.function_tables.iter().any(|t| t.len() != width) {
            return bad("function table shape");
        }
        if self.output_weights.len() != self.num_functions
            || self.output_weights.iter().any(|w| w.len() != self.num_strategies)
        {
            return bad("output weight shape");
        }
        let finite = |m: &Vec<Vec<f64>>| m.iter().flatten().all(|x| x.is_finite());
        if !finite(&self.function_tables) || !finite(&self.output_weights) {
            return bad("non-finite table or weight");
        }
        if self.min_players == 0 || self.min_players > self.max_players {
            return bad("player range");
        }
        if !(self.payoff_scale.1 > self.payoff_scale.0) {
            return bad("payoff scale must have max > min");
        }
        Ok(())
    }

    /// Payoff-scale width used to normalize payoffs and regrets.
    pub fn payoff_range(&self) -> f64 {
        self.payoff_scale.1 - self.payoff_scale.0
    }

    pub fn normalize_payoff(&self, x: f64) -> f64 {
        (x - self.payoff_scale.0) / self.payoff_range()
    }

    /// Input edges at threshold `v`, as `[action][function]`.
    pub fn edges_at(&self, v: f64) -> Result<Vec<Vec<bool>>> {
        if !matches!(self.parameter, ParameterRange::ErThreshold { .. }) {
            return Err(Error::WrongParameterKind { expected: "er_threshold" });
        }
        self.parameter.check(v)?;
        Ok(self.edges_for_threshold(v))
    }

    fn edges_for_threshold(&self, t: f64) -> Vec<Vec<bool>> {
        self.input_edge_latents.iter().map(|row| row.iter().map(|&l| l < t).collect()).collect()
    }

    /// Resolve parameter value `v` into an instance.
    pub fn instance(&self, v: impl Into<InstanceKey>) -> Result<Instance> {
        let v = v.into().value();
        self.parameter.check(v)?;
        let (players, threshold) = match self.parameter {
            ParameterRange::PlayerCount { .. } => (v as u32, self.er_threshold.unwrap_or(1.0)),
            ParameterRange::ErThreshold { .. } => (self.max_players, v),
        };
        let edges = self.edges_for_threshold(threshold);
        let inputs = (0..self.num_functions).map(|f| (0..self.num_strategies).map(|a| edges[a][f]).collect()).collect();
        let ln_fact = (0..=players).map(|k| if k < 2 { 0.0 } else { ln_gamma(k as f64 + 1.0) }).collect();
        Ok(Instance { players, inputs, ln_fact })
    }

    /// Noiseless payoff to a deviator choosing each strategy against `profile`.
    pub fn pure_payoffs(&self, v: impl Into<InstanceKey>, profile: &OpponentProfile) -> Result<DeviationPayoffs> {
        let inst = self.instance(v)?;
        if profile.len() != self.num_strategies {
            return Err(Error::DimensionMismatch { expected: self.num_strategies, got: profile.len() });
        }
        if profile.players() != inst.players {
            return Err(Error::InvalidProfile(format!(
                "profile has {} opponents, instance has {} players",
                profile.num_opponents(),
                inst.players
            )));
        }
        Ok(DeviationPayoffs::new(self.pure_payoffs_in(&inst, profile)))
    }

    pub fn pure_payoffs_in(&self, inst: &Instance, profile: &OpponentProfile) -> Vec<f64> {
        let counts = profile.counts();
        let mut out = vec![0.0; self.num_strategies];
        for (f, inputs) in inst.inputs.iter().enumerate() {
            let base: u32 = counts.iter().zip(inputs).filter(|(_, &e)| e).map(|(c, _)| *c).sum();
            let table = &self.function_tables[f];
            let weights = &self.output_weights[f];
            for (a, o) in out.iter_mut().enumerate() {
                let count = base + inputs[a] as u32;
                assert!(count <= inst.players, "function count out of table bounds");
                *o += weights[a] * table[count as usize];
            }
        }
        out
    }

    /// Exact deviation payoffs via per-function binomial opponent counts.
    pub fn deviation_payoffs_binomial(&self, v: impl Into<InstanceKey>, mix: &Mixture) -> Result<DeviationPayoffs> {
        let inst = self.instance(v)?;
        if mix.len() != self.num_strategies {
            return Err(Error::DimensionMismatch { expected: self.num_strategies, got: mix.len() });
        }
        Ok(DeviationPayoffs::new(self.deviation_payoffs_in(&inst, mix.probs())))
    }

    pub fn deviation_payoffs_in(&self, inst: &Instance, mix: &[f64]) -> Vec<f64> {
        let mut pmf = Vec::with_capacity(inst.players as usize);
        let mut out = vec![0.0; self.num_strategies];
        for (f, inputs) in inst.inputs.iter().enumerate() {
            let q: f64 = mix.iter().zip(inputs).filter(|(_, &e)| e).map(|(p, _)| p).sum();
            inst.binomial_pmf(q.clamp(0.0, 1.0), &mut pmf);
            let table = &self.function_tables[f];
            let mut without = 0.0;
            let mut with = 0.0;
            for (k, pr) in pmf.iter().enumerate() {
                without += pr * table[k];
                with += pr * table[k + 1];
            }
            let weights = &self.output_weights[f];
            for (a, o) in out.iter_mut().enumerate() {
                *o += weights[a] * if inputs[a] { with } else { without };
            }
        }
        out
    }

    /// One noisy simulator query: pure payoffs plus i.i.d. Gaussian noise.
    pub fn query_simulator<R: Rng + ?Sized>(
        &self,
        v: impl Into<InstanceKey>,
        profile: &OpponentProfile,
        rng: &mut R,
    ) -> Result<DeviationPayoffs> {
        let mut payoffs = self.pure_payoffs(v, profile)?.into_inner();
        if self.noise_stddev > 0.0 {
            let noise = Normal::new(0.0, self.noise_stddev).expect("valid noise");
            for x in &mut payoffs {
                *x += noise.sample(rng);
            }
        }
        Ok(DeviationPayoffs::new(payoffs))
    }

    /// Player count of the instance at `v`.
    pub fn players_at(&self, v: f64) -> Result<u32> {
        self.parameter.check(v)?;
        Ok(match self.parameter {
            ParameterRange::PlayerCount { .. } => v as u32,
            ParameterRange::ErThreshold { .. } => self.max_players,
        })
    }

    /// Min and max pure payoff over `samples` random (instance, profile) draws.
    pub fn sample_payoff_scale(&self, seed: u64, samples: usize) -> (f64, f64) {
        let mut rng = seeding::rng(seed);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..samples {
            let v = self.parameter.sample(&mut rng);
            let inst = self.instance(v).expect("sampled value in range");
            let mix = sampling::symmetric_dirichlet(self.num_strategies, 1.0, &mut rng);
            let profile = sampling::multinomial(inst.players - 1, &mix, &mut rng);
            for x in self.pure_payoffs_in(&inst, &profile) {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        if !(hi - lo > 1e-12) {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    }

    /// The single-instance game for `players`, built as a standalone family
    /// whose tables are the `0..=players` prefix of this family's tables.
    pub fn standalone_players_instance(&self, players: u32) -> Result<BaggfnFamily> {
        if !self.parameter.is_discrete() {
            return Err(Error::WrongParameterKind { expected: "player_count" });
        }
        self.parameter.check(players as f64)?;
        let mut fam = self.clone();
        fam.min_players = players;
        fam.max_players = players;
        fam.parameter = ParameterRange::PlayerCount { min: players, max: players };
        for t in &mut fam.function_tables {
            t.truncate(players as usize + 1);
        }
        fam.config = None;
        Ok(fam)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = FamilyFile { format: FAMILY_FORMAT.into(), version: FAMILY_VERSION, family: self.clone() };
        std::fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: FamilyFile = serde_json::from_str(&text)?;
        if file.format != FAMILY_FORMAT {
            return Err(Error::InvalidConfig(format!("not a family file (format {:?})", file.format)));
        }
        if file.version != FAMILY_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported family file version {}", file.version)));
        }
        file.family.validate()?;
        Ok(file.family)
    }
}
