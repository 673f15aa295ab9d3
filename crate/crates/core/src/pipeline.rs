//! The sample, fit, find-equilibria, resample loop.
//!
//! Every sampled mixture yields one multinomial opponent profile and one
//! simulator query; the row label is the noisy payoff vector for that single
//! profile. Refinement rounds draw neighborhoods around candidate equilibria
//! in both mixture and parameter space, and the model is refit from its
//! current weights.

use std::collections::HashMap;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baggfn::{BaggfnFamily, ParameterRange};
use crate::error::{Error, Result};
use crate::game::{Mixture, OpponentProfile};
use crate::nash::{attach_true_regret, filter_candidates, find_nash_family, CandidateEquilibrium, NashSettings};
use crate::sampling::{beta_around, dirichlet, multinomial, symmetric_dirichlet};
use crate::surrogate::{init_model, EncodedDataset, NetworkSpec, SurrogateModel, TrainSettings};
use crate::{par, seeding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default = "default_alpha")]
    pub dirichlet_alpha: f64,
    pub init_queries: usize,
    /// Simulator queries per refinement round.
    #[serde(default)]
    pub resamp_queries: usize,
    #[serde(default)]
    pub num_iters: usize,
    #[serde(default = "default_omega_sigma")]
    pub omega_sigma: f64,
    #[serde(default = "default_omega_v")]
    pub omega_v: f64,
    /// Normalized regret threshold; `None` disables the intermediate check.
    #[serde(default)]
    pub regret_filter: Option<f64>,
    #[serde(default = "default_per_candidate")]
    pub neighborhood_samples_per_candidate: usize,
    /// Epochs of each refit after a refinement round.
    #[serde(default = "default_refine_epochs")]
    pub refine_epochs: usize,
    /// Grid size for continuous parameters; player families use every integer.
    #[serde(default = "default_grid_points")]
    pub instance_grid_points: usize,
    #[serde(default)]
    pub nash: NashSettings,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_omega_sigma() -> f64 {
    1000.0
}
fn default_omega_v() -> f64 {
    100.0
}
fn default_per_candidate() -> usize {
    200
}
fn default_refine_epochs() -> usize {
    2
}
fn default_grid_points() -> usize {
    11
}

impl SamplingConfig {
    pub fn new(init_queries: usize) -> Self {
        SamplingConfig {
            dirichlet_alpha: default_alpha(),
            init_queries,
            resamp_queries: 0,
            num_iters: 0,
            omega_sigma: default_omega_sigma(),
            omega_v: default_omega_v(),
            regret_filter: None,
            neighborhood_samples_per_candidate: default_per_candidate(),
            refine_epochs: default_refine_epochs(),
            instance_grid_points: default_grid_points(),
            nash: NashSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha < 1.0) {
            return bad(format!("dirichlet_alpha must lie in (0, 1), got {}", self.dirichlet_alpha));
        }
        if self.init_queries == 0 {
            return bad("init_queries must be >= 1".into());
        }
        if self.num_iters > 0 && self.resamp_queries == 0 {
            return bad("resamp_queries must be >= 1 when num_iters > 0".into());
        }
        if !(self.omega_sigma > 0.0) || !(self.omega_v > 0.0) {
            return bad("omega_sigma and omega_v must be positive".into());
        }
        if let Some(f) = self.regret_filter {
            if !(f >= 0.0) {
                return bad(format!("regret_filter must be non-negative, got {f}"));
            }
        }
        if self.neighborhood_samples_per_candidate == 0 || self.instance_grid_points == 0 {
            return bad("neighborhood_samples_per_candidate and instance_grid_points must be >= 1".into());
        }
        self.nash.validate()
    }

    /// Queries the full run will issue.
    pub fn total_budget(&self) -> usize {
        self.init_queries + self.num_iters * self.resamp_queries
    }
}

/// Record of every simulator query, keyed by `(opponent profile, v)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryLedger {
    entries: Vec<LedgerEntry>,
    #[serde(skip)]
    seen: HashMap<(Vec<u32>, u64), usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub profile: Vec<u32>,
    pub v: f64,
    /// Dataset row produced by this query.
    pub row: usize,
}

impl QueryLedger {
    /// Register a query. Returns `true` when the `(profile, v)` pair was
    /// already present, which can only happen by independent random draws.
    pub fn record(&mut self, profile: &OpponentProfile, v: f64, row: usize) -> bool {
        let key = (profile.counts().to_vec(), v.to_bits());
        let count = self.seen.entry(key).or_insert(0);
        *count += 1;
        self.entries.push(LedgerEntry { profile: profile.counts().to_vec(), v, row });
        *count > 1
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Queries whose `(profile, v)` pair matched an earlier query.
    pub fn collisions(&self) -> usize {
        self.entries.len() - self.distinct()
    }

    pub fn distinct(&self) -> usize {
        let mut keys: Vec<(&[u32], u64)> = self.entries.iter().map(|e| (e.profile.as_slice(), e.v.to_bits())).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }

    /// Queries that re-simulated an existing dataset row. The pipeline never
    /// does this, so a non-zero value indicates a bookkeeping bug.
    pub fn deliberate_duplicates(&self) -> usize {
        let mut rows: Vec<usize> = self.entries.iter().map(|e| e.row).collect();
        rows.sort_unstable();
        let before = rows.len();
        rows.dedup();
        before - rows.len()
    }
}

/// Training rows in payoff units plus provenance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingDataset {
    pub mixes: Vec<Mixture>,
    pub vs: Vec<f64>,
    pub payoffs: Vec<Vec<f64>>,
    /// 0 for initial rows, `k` for rows added in refinement round `k`.
    pub round: Vec<usize>,
    pub ledger: QueryLedger,
}

impl TrainingDataset {
    pub fn len(&self) -> usize {
        self.mixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixes.is_empty()
    }

    pub fn encode(&self, model: &SurrogateModel) -> Result<EncodedDataset> {
        let mixes: Vec<&[f64]> = self.mixes.iter().map(|m| m.probs()).collect();
        let payoffs: Vec<&[f64]> = self.payoffs.iter().map(|p| p.as_slice()).collect();
        model.encode_dataset(&mixes, &self.vs, &payoffs)
    }

    /// Rows whose parameter equals `v` exactly, as a fresh dataset.
    pub fn partition(&self, v: f64) -> TrainingDataset {
        let mut out = TrainingDataset::default();
        for i in (0..self.len()).filter(|&i| self.vs[i].to_bits() == v.to_bits()) {
            out.mixes.push(self.mixes[i].clone());
            out.vs.push(self.vs[i]);
            out.payoffs.push(self.payoffs[i].clone());
            out.round.push(self.round[i]);
        }
        out
    }
}

/// Initial design: Dirichlet(alpha) mixtures with parameters uniform over the
/// family range.
pub fn init_samples<R: rand::Rng + ?Sized>(
    family: &BaggfnFamily,
    config: &SamplingConfig,
    rng: &mut R,
) -> Vec<(Mixture, f64)> {
    (0..config.init_queries)
        .map(|_| {
            let mix = symmetric_dirichlet(family.num_strategies, config.dirichlet_alpha, rng);
            let v = family.parameter.sample(rng);
            (mix, v)
        })
        .collect()
}

/// Initial design with exactly `per_instance` mixtures at every grid value.
pub fn init_samples_stratified<R: rand::Rng + ?Sized>(
    family: &BaggfnFamily,
    grid: &[f64],
    per_instance: usize,
    alpha: f64,
    rng: &mut R,
) -> Vec<(Mixture, f64)> {
    let mut out = Vec::with_capacity(grid.len() * per_instance);
    for &v in grid {
        for _ in 0..per_instance {
            out.push((symmetric_dirichlet(family.num_strategies, alpha, rng), v));
        }
    }
    out
}

/// One multinomial draw of the `players - 1` opponents.
pub fn sample_opponent_profile<R: rand::Rng + ?Sized>(mix: &Mixture, players: u32, rng: &mut R) -> OpponentProfile {
    multinomial(players.saturating_sub(1), mix, rng)
}

/// Neighborhood draw around one candidate.
pub fn neighbor<R: rand::Rng + ?Sized>(
    mix: &Mixture,
    v: f64,
    range: &ParameterRange,
    omega_sigma: f64,
    omega_v: f64,
    rng: &mut R,
) -> (Mixture, f64) {
    let alpha: Vec<f64> = mix.probs().iter().map(|p| omega_sigma * p + 1.0).collect();
    let m = dirichlet(&alpha, rng);
    let t = beta_around(range.normalize(v), omega_v, rng);
    (m, range.denormalize(t))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodStats {
    pub candidates_in: usize,
    pub candidates_after_filter: usize,
    pub candidates_sampled: usize,
    /// The filter removed everything and the round ran unfiltered.
    pub filter_fallback: bool,
}

/// Draw exactly `budget` neighborhood samples around `candidates`.
///
/// Candidates failing the regret filter are dropped first; if none survive,
/// all candidates are used. When the per-candidate count would exceed the
/// budget, a seeded random subset of candidates is sampled (the last one
/// partially); otherwise the budget is split evenly across candidates.
pub fn sample_neighborhood<R: rand::Rng + ?Sized>(
    candidates: &[CandidateEquilibrium],
    range: &ParameterRange,
    config: &SamplingConfig,
    budget: usize,
    rng: &mut R,
) -> Result<(Vec<(Mixture, f64)>, NeighborhoodStats)> {
    let usable: Vec<CandidateEquilibrium> = candidates.iter().filter(|c| !c.diverged).cloned().collect();
    let usable = if usable.is_empty() { candidates.to_vec() } else { usable };
    if usable.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut stats = NeighborhoodStats { candidates_in: candidates.len(), ..Default::default() };
    let mut pool = match config.regret_filter {
        Some(eps) => filter_candidates(&usable, eps),
        None => usable.clone(),
    };
    stats.candidates_after_filter = pool.len();
    if pool.is_empty() {
        warn!("regret filter removed all {} candidates; sampling unfiltered this round", usable.len());
        stats.filter_fallback = true;
        pool = usable;
    }
    let per = config.neighborhood_samples_per_candidate;
    let counts: Vec<(usize, usize)> = if pool.len() * per >= budget {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(rng);
        let needed = budget.div_ceil(per);
        let mut chosen: Vec<usize> = order.into_iter().take(needed).collect();
        chosen.sort_unstable();
        let mut left = budget;
        chosen
            .into_iter()
            .map(|i| {
                let k = per.min(left);
                left -= k;
                (i, k)
            })
            .collect()
    } else {
        let base = budget / pool.len();
        let extra = budget % pool.len();
        (0..pool.len()).map(|i| (i, base + (i < extra) as usize)).collect()
    };
    stats.candidates_sampled = counts.iter().filter(|(_, k)| *k > 0).count();
    let mut out = Vec::with_capacity(budget);
    for (i, k) in counts {
        let c = &pool[i];
        for _ in 0..k {
            out.push(neighbor(&c.mix, c.v, range, config.omega_sigma, config.omega_v, rng));
        }
    }
    debug_assert_eq!(out.len(), budget);
    Ok((out, stats))
}

/// Query the simulator once per sample and append the rows. Each sample's
/// randomness comes from its own stream `(round_seed, index)`, so the result
/// does not depend on the worker count.
pub fn simulate_round(
    family: &BaggfnFamily,
    samples: &[(Mixture, f64)],
    round: usize,
    round_seed: u64,
    data: &mut TrainingDataset,
) -> Result<usize> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let results = par::try_map(&idx, |&i| -> Result<(OpponentProfile, Vec<f64>)> {
        let (mix, v) = &samples[i];
        let mut rng = seeding::rng(seeding::derive_path(round_seed, &[seeding::stream::SIMULATOR, i as u64]));
        let players = family.players_at(*v)?;
        let profile = sample_opponent_profile(mix, players, &mut rng);
        let payoffs = family.query_simulator(*v, &profile, &mut rng)?.into_inner();
        Ok((profile, payoffs))
    })?;
    let mut collisions = 0;
    for ((mix, v), (profile, payoffs)) in samples.iter().zip(results) {
        let row = data.len();
        collisions += data.ledger.record(&profile, *v, row) as usize;
        data.mixes.push(mix.clone());
        data.vs.push(*v);
        data.payoffs.push(payoffs);
        data.round.push(round);
    }
    Ok(collisions)
}

/// Grid of instances over which equilibria are searched and models evaluated.
pub fn instance_grid(range: &ParameterRange, continuous_points: usize) -> Vec<f64> {
    range.grid(continuous_points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Dataset rows the model had seen when these candidates were computed.
    pub rows: usize,
    /// Simulator queries issued in the round that followed (0 for the last).
    pub queries: usize,
    pub collisions: usize,
    pub final_loss: f64,
    pub candidates: Vec<CandidateEquilibrium>,
    pub neighborhood: Option<NeighborhoodStats>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub model: SurrogateModel,
    pub dataset: TrainingDataset,
    /// Candidates after the initial fit and after every refit.
    pub iterations: Vec<IterationRecord>,
}

impl PipelineOutcome {
    pub fn final_candidates(&self) -> &[CandidateEquilibrium] {
        &self.iterations.last().expect("at least one iteration").candidates
    }
}

/// Options that do not change what Algorithm 1 computes, only how it is
/// instrumented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Attach exact-oracle regrets to every candidate set.
    pub true_regret: bool,
    /// Skip the candidate search after the last refit.
    pub skip_final_nash: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { true_regret: true, skip_final_nash: false }
    }
}

/// Algorithm 1: sample, simulate, fit, then `num_iters` rounds of
/// find-equilibria, neighborhood resampling, simulate and refit.
///
/// The initial fit runs `train.epochs` epochs; each refit runs
/// `config.refine_epochs`. All randomness derives from `seed`.
pub fn run_algorithm_one(
    family: &BaggfnFamily,
    spec: &NetworkSpec,
    train: &TrainSettings,
    config: &SamplingConfig,
    seed: u64,
    options: RunOptions,
) -> Result<PipelineOutcome> {
    config.validate()?;
    train.validate()?;
    family.validate()?;
    let range = family.parameter;
    let grid = instance_grid(&range, config.instance_grid_points);

    let mut init_rng = seeding::rng(seeding::derive(seed, seeding::stream::INIT_SAMPLES));
    let initial = init_samples(family, config, &mut init_rng);
    let mut data = TrainingDataset::default();
    let mut collisions =
        simulate_round(family, &initial, 0, seeding::derive_path(seed, &[seeding::stream::SIMULATOR, 0]), &mut data)?;

    let mut model = init_model(spec, range.bounds(), family.payoff_scale, seed)?;
    let train_settings = TrainSettings { seed: seeding::derive(seed, seeding::stream::TRAIN), ..train.clone() };
    model.train(&data.encode(&model)?, &train_settings)?;
    info!(
        "initial fit on {} rows, loss {:.6}",
        data.len(),
        model.meta.loss_history.last().copied().unwrap_or(f64::NAN)
    );

    let nash_at = |model: &SurrogateModel, k: usize| -> Result<Vec<CandidateEquilibrium>> {
        let mut cands = find_nash_family(
            model,
            &range,
            &grid,
            &config.nash,
            seeding::derive_path(seed, &[seeding::stream::NASH, k as u64]),
        )?;
        if options.true_regret {
            attach_true_regret(&mut cands, family)?;
        }
        Ok(cands)
    };

    let mut iterations = Vec::with_capacity(config.num_iters + 1);
    for k in 0..config.num_iters {
        let cands = nash_at(&model, k)?;
        let mut rng = seeding::rng(seeding::derive_path(seed, &[seeding::stream::NEIGHBORHOOD, k as u64]));
        let (samples, stats) = sample_neighborhood(&cands, &range, config, config.resamp_queries, &mut rng)?;
        iterations.push(IterationRecord {
            iteration: k,
            rows: data.len(),
            queries: samples.len(),
            collisions,
            final_loss: model.meta.loss_history.last().copied().unwrap_or(f64::NAN),
            candidates: cands,
            neighborhood: Some(stats),
        });
        collisions = simulate_round(
            family,
            &samples,
            k + 1,
            seeding::derive_path(seed, &[seeding::stream::SIMULATOR, k as u64 + 1]),
            &mut data,
        )?;
        model.train(&data.encode(&model)?, &train_settings.with_epochs(config.refine_epochs))?;
        info!(
            "refinement {} : {} rows, loss {:.6}",
            k + 1,
            data.len(),
            model.meta.loss_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    let cands = if options.skip_final_nash { Vec::new() } else { nash_at(&model, config.num_iters)? };
    iterations.push(IterationRecord {
        iteration: config.num_iters,
        rows: data.len(),
        queries: 0,
        collisions,
        final_loss: model.meta.loss_history.last().copied().unwrap_or(f64::NAN),
        candidates: cands,
        neighborhood: None,
    });
    Ok(PipelineOutcome { model, dataset: data, iterations })
}
