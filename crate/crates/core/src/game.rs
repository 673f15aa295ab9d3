//! Symmetric-game mathematics: mixtures, opponent profiles, exact deviation
//! payoffs by enumeration over the opponent simplex, regret, and simplex
//! lattices.
//!
//! A symmetric game with `p` players and strategy set `S` is described by one
//! payoff function per strategy over opponent profiles (integer vectors
//! summing to `p - 1`). The deviation payoff of strategy `j` against a
//! symmetric mixture is the multinomial-weighted average of those payoffs.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Tolerance on the sum of a mixture's probabilities.
pub const MIXTURE_TOLERANCE: f64 = 1e-9;

/// Default cap on the number of opponent profiles enumerated.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Default cap on simplex lattice size.
pub const DEFAULT_LATTICE_CAP: u128 = 1_000_000;

/// A symmetric mixed-strategy profile: one probability per strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Mixture(Vec<f64>);

impl Mixture {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidMixture("no strategies".into()));
        }
        if let Some(x) = probs.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidMixture(format!("entry {x} is not a finite non-negative value")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > MIXTURE_TOLERANCE {
            return Err(Error::InvalidMixture(format!("entries sum to {sum}")));
        }
        Ok(Mixture(probs))
    }

    /// Rescale non-negative weights to sum to one.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidMixture(format!("weights sum to {sum}")));
        }
        Mixture::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(num_strategies: usize) -> Self {
        Mixture(vec![1.0 / num_strategies as f64; num_strategies])
    }

    pub fn pure(num_strategies: usize, strategy: usize) -> Self {
        let mut probs = vec![0.0; num_strategies];
        probs[strategy] = 1.0;
        Mixture(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// L-infinity distance to another mixture of the same length.
    pub fn linf_distance(&self, other: &Mixture) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn dot(&self, values: &[f64]) -> f64 {
        self.0.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

impl TryFrom<Vec<f64>> for Mixture {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Mixture::new(v)
    }
}

impl From<Mixture> for Vec<f64> {
    fn from(m: Mixture) -> Self {
        m.0
    }
}

/// Number of opponents choosing each strategy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpponentProfile(Vec<u32>);

impl OpponentProfile {
    pub fn new(counts: Vec<u32>) -> Self {
        OpponentProfile(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_opponents(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Player count of the game this profile belongs to (opponents plus the deviator).
    pub fn players(&self) -> u32 {
        self.num_opponents() + 1
    }

    /// All opponents on a single strategy.
    pub fn pure(num_strategies: usize, strategy: usize, opponents: u32) -> Self {
        let mut counts = vec![0; num_strategies];
        counts[strategy] = opponents;
        OpponentProfile(counts)
    }
}

/// One deviation payoff per strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationPayoffs(Vec<f64>);

impl DeviationPayoffs {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite deviation payoff");
        DeviationPayoffs(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// An environment-parameter value identifying one instance of a family.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceKey(pub f64);

impl InstanceKey {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<f64> for InstanceKey {
    fn from(v: f64) -> Self {
        InstanceKey(v)
    }
}

/// Binomial coefficient `C(n, k)` as an exact integer, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = match acc.checked_mul((n - i) as u128) {
            Some(x) => x / (i + 1) as u128,
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of opponent profiles `C(p - 1 + |S| - 1, |S| - 1)`.
pub fn num_opponent_profiles(num_strategies: usize, players: u32) -> u128 {
    assert!(num_strategies >= 1 && players >= 1);
    let opp = players as u64 - 1;
    binomial(opp + num_strategies as u64 - 1, num_strategies as u64 - 1)
}

/// All integer vectors of length `parts` with non-negative entries summing to
/// `total`, in descending lexicographic order (first coordinate largest first).
fn compositions(total: u32, parts: usize, out: &mut Vec<Vec<u32>>) {
    let mut current = vec![0u32; parts];
    fn rec(pos: usize, remaining: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos + 1 == current.len() {
            current[pos] = remaining;
            out.push(current.clone());
            return;
        }
        for c in (0..=remaining).rev() {
            current[pos] = c;
            rec(pos + 1, remaining - c, current, out);
        }
    }
    rec(0, total, &mut current, out);
}

/// Enumerate every opponent profile for a `players`-player game with
/// `num_strategies` strategies, with the default cap.
pub fn enumerate_opponent_profiles(num_strategies: usize, players: u32) -> Result<Vec<OpponentProfile>> {
    enumerate_opponent_profiles_capped(num_strategies, players, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_opponent_profiles_capped(
    num_strategies: usize,
    players: u32,
    cap: u128,
) -> Result<Vec<OpponentProfile>> {
    if num_strategies == 0 || players == 0 {
        return Err(Error::InvalidConfig("need at least one strategy and one player".into()));
    }
    let count = num_opponent_profiles(num_strategies, players);
    if count > cap {
        return Err(Error::EnumerationCap { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    compositions(players - 1, num_strategies, &mut out);
    Ok(out.into_iter().map(OpponentProfile).collect())
}

fn ln_factorial(n: u32) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// Multinomial probability that `p - 1` opponents drawn i.i.d. from `mix`
/// realize `profile`. Uses `0^0 = 1`.
pub fn profile_probability(profile: &OpponentProfile, mix: &Mixture) -> f64 {
    assert_eq!(profile.len(), mix.len(), "profile and mixture lengths differ");
    let n = profile.num_opponents();
    if n <= LINEAR_PROBABILITY_MAX_OPPONENTS {
        let p = profile_probability_linear(profile, mix);
        if p == 0.0 || p.is_normal() {
            return p;
        }
    }
    let mut log_p = ln_factorial(n);
    for (&s, &q) in profile.counts().iter().zip(mix.probs()) {
        if s == 0 {
            continue;
        }
        if q == 0.0 {
            return 0.0;
        }
        log_p += s as f64 * q.ln() - ln_factorial(s);
    }
    log_p.exp()
}

const LINEAR_PROBABILITY_MAX_OPPONENTS: u32 = 60;

/// Direct product form; accurate to a few ulp while the multinomial
/// coefficient stays well inside f64 range.
fn profile_probability_linear(profile: &OpponentProfile, mix: &Mixture) -> f64 {
    let mut coef = 1.0f64;
    let mut placed = 0u64;
    let mut mass = 1.0f64;
    for (&s, &q) in profile.counts().iter().zip(mix.probs()) {
        if s == 0 {
            continue;
        }
        if q == 0.0 {
            return 0.0;
        }
        placed += s as u64;
        coef *= binomial(placed, s as u64) as f64;
        mass *= q.powi(s as i32);
    }
    coef * mass
}

/// Deviation payoffs by explicit enumeration of the opponent simplex.
///
/// `payoff_fn(j, s)` is the payoff to a player choosing strategy `j` against
/// opponent profile `s`.
pub fn deviation_payoffs_enum<F>(
    payoff_fn: F,
    num_strategies: usize,
    players: u32,
    mix: &Mixture,
) -> Result<DeviationPayoffs>
where
    F: Fn(usize, &OpponentProfile) -> f64,
{
    if mix.len() != num_strategies {
        return Err(Error::DimensionMismatch { expected: num_strategies, got: mix.len() });
    }
    let profiles = enumerate_opponent_profiles(num_strategies, players)?;
    let mut out = vec![0.0; num_strategies];
    for s in &profiles {
        let pr = profile_probability(s, mix);
        if pr == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += pr * payoff_fn(j, s);
        }
    }
    Ok(DeviationPayoffs::new(out))
}

/// Maximum gain from deviating from `mix` to any pure strategy, clamped at 0.
pub fn regret(mix: &Mixture, devpays: &DeviationPayoffs) -> f64 {
    regret_raw(mix.probs(), devpays.values())
}

/// [`regret`] over raw slices.
pub fn regret_raw(mix: &[f64], devpays: &[f64]) -> f64 {
    assert_eq!(mix.len(), devpays.len(), "mixture and payoff lengths differ");
    let best = devpays.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let expected: f64 = mix.iter().zip(devpays).map(|(p, u)| p * u).sum();
    (best - expected).max(0.0)
}

/// Number of points in the simplex lattice of the given resolution.
pub fn lattice_size(num_strategies: usize, resolution: u32) -> u128 {
    binomial(resolution as u64 + num_strategies as u64 - 1, num_strategies as u64 - 1)
}

/// All mixtures whose entries are multiples of `1 / resolution`, default cap.
pub fn simplex_lattice(num_strategies: usize, resolution: u32) -> Result<Vec<Mixture>> {
    simplex_lattice_capped(num_strategies, resolution, DEFAULT_LATTICE_CAP)
}

pub fn simplex_lattice_capped(num_strategies: usize, resolution: u32, cap: u128) -> Result<Vec<Mixture>> {
    if num_strategies == 0 || resolution == 0 {
        return Err(Error::InvalidConfig("lattice needs at least one strategy and resolution >= 1".into()));
    }
    let count = lattice_size(num_strategies, resolution);
    if count > cap {
        return Err(Error::LatticeCap { count, cap });
    }
    let mut comps = Vec::with_capacity(count as usize);
    compositions(resolution, num_strategies, &mut comps);
    let r = resolution as f64;
    Ok(comps.into_iter().map(|c| Mixture(c.into_iter().map(|k| k as f64 / r).collect())).collect())
}
