//! Batched equilibrium search over whole game families.
//!
//! Replicator dynamics run for every `(mixture, parameter)` start at once; each
//! iteration evaluates the deviation-payoff source on the full batch in one
//! call. Any [`DeviationPayoffSource`] can drive the dynamics: the exact
//! BAGGFN oracle, a variable-parameter surrogate, or a per-instance ensemble
//! of fixed-parameter surrogates.
//!
//! Regrets reported on candidates are normalized by the width of the source's
//! payoff scale, so thresholds are comparable across families.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baggfn::{BaggfnFamily, ParameterRange};
use crate::error::{Error, Result};
use crate::game::{regret_raw, Mixture};
use crate::report::{fmt_f64, fmt_opt, sigma_columns, Provenance, Table};
use crate::sampling::symmetric_dirichlet;
use crate::surrogate::SurrogateModel;
use crate::{par, seeding};

/// Rows per parallel work unit when evaluating a batch.
const EVAL_CHUNK: usize = 64;

/// Anything that maps batches of `(mixture, parameter)` rows to deviation
/// payoffs in payoff units.
pub trait DeviationPayoffSource: Sync {
    fn num_strategies(&self) -> usize;

    /// `(min, max)` payoff scale. The lower end anchors the replicator fitness
    /// shift; the width normalizes regrets.
    fn payoff_scale(&self) -> (f64, f64);

    fn deviation_payoffs_batch(&self, mixes: &[&[f64]], vs: &[f64]) -> Result<Vec<Vec<f64>>>;

    fn payoff_range(&self) -> f64 {
        let (lo, hi) = self.payoff_scale();
        hi - lo
    }
}

/// The exact BAGGFN deviation-payoff oracle.
#[derive(Debug, Clone, Copy)]
pub struct ExactOracle<'a>(pub &'a BaggfnFamily);

impl DeviationPayoffSource for ExactOracle<'_> {
    fn num_strategies(&self) -> usize {
        self.0.num_strategies
    }

    fn payoff_scale(&self) -> (f64, f64) {
        self.0.payoff_scale
    }

    fn deviation_payoffs_batch(&self, mixes: &[&[f64]], vs: &[f64]) -> Result<Vec<Vec<f64>>> {
        if mixes.len() != vs.len() {
            return Err(Error::DimensionMismatch { expected: mixes.len(), got: vs.len() });
        }
        let n = self.0.num_strategies;
        if let Some(bad) = mixes.iter().find(|m| m.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
        }
        let mut instances = BTreeMap::new();
        for &v in vs {
            if let std::collections::btree_map::Entry::Vacant(e) = instances.entry(v.to_bits()) {
                e.insert(self.0.instance(v)?);
            }
        }
        let rows: Vec<usize> = (0..mixes.len()).collect();
        Ok(par::map_chunks(&rows, EVAL_CHUNK, |chunk| {
            chunk.iter().map(|&i| self.0.deviation_payoffs_in(&instances[&vs[i].to_bits()], mixes[i])).collect()
        }))
    }
}

impl DeviationPayoffSource for SurrogateModel {
    fn num_strategies(&self) -> usize {
        self.spec.num_heads
    }

    fn payoff_scale(&self) -> (f64, f64) {
        self.output_norm
    }

    fn deviation_payoffs_batch(&self, mixes: &[&[f64]], vs: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.predict_batch(mixes, vs, false)
    }
}

/// One fixed-parameter surrogate per instance, looked up by exact parameter
/// value.
#[derive(Debug, Clone)]
pub struct FplEnsemble {
    models: BTreeMap<u64, SurrogateModel>,
    payoff_scale: (f64, f64),
    num_strategies: usize,
}

impl FplEnsemble {
    pub fn new(models: Vec<(f64, SurrogateModel)>) -> Result<Self> {
        let first = models.first().ok_or(Error::EmptyDataset)?;
        let payoff_scale = first.1.output_norm;
        let num_strategies = first.1.spec.num_heads;
        let mut map = BTreeMap::new();
        for (v, m) in models {
            if m.spec.num_heads != num_strategies {
                return Err(Error::DimensionMismatch { expected: num_strategies, got: m.spec.num_heads });
            }
            map.insert(v.to_bits(), m);
        }
        Ok(FplEnsemble { models: map, payoff_scale, num_strategies })
    }

    pub fn model(&self, v: f64) -> Option<&SurrogateModel> {
        self.models.get(&v.to_bits())
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut vs: Vec<f64> = self.models.keys().map(|b| f64::from_bits(*b)).collect();
        vs.sort_by(f64::total_cmp);
        vs
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

impl DeviationPayoffSource for FplEnsemble {
    fn num_strategies(&self) -> usize {
        self.num_strategies
    }

    fn payoff_scale(&self) -> (f64, f64) {
        self.payoff_scale
    }

    fn deviation_payoffs_batch(&self, mixes: &[&[f64]], vs: &[f64]) -> Result<Vec<Vec<f64>>> {
        if mixes.len() != vs.len() {
            return Err(Error::DimensionMismatch { expected: mixes.len(), got: vs.len() });
        }
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, v) in vs.iter().enumerate() {
            groups.entry(v.to_bits()).or_default().push(i);
        }
        let mut out = vec![Vec::new(); mixes.len()];
        for (bits, idx) in groups {
            let v = f64::from_bits(bits);
            let model = self
                .models
                .get(&bits)
                .ok_or_else(|| Error::InvalidConfig(format!("no fixed-parameter model trained for parameter {v}")))?;
            let rows: Vec<&[f64]> = idx.iter().map(|&i| mixes[i]).collect();
            for (i, pred) in idx.into_iter().zip(model.predict_batch(&rows, &vec![v; rows.len()], true)?) {
                out[i] = pred;
            }
        }
        Ok(out)
    }
}

/// A replicator-dynamics end point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEquilibrium {
    pub mix: Mixture,
    pub v: f64,
    /// Normalized regret under the driving source; infinite when the
    /// trajectory hit a non-finite payoff.
    pub estimated_regret: f64,
    /// Normalized regret under the exact oracle, when one is available.
    pub true_regret: Option<f64>,
    /// Index of the start within its instance; 0 is the uniform start.
    pub restart_id: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NashSettings {
    /// Starts per instance, counting the uniform start.
    pub restarts_per_instance: usize,
    pub iterations: usize,
    #[serde(default = "default_dedup")]
    pub dedup_tolerance: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_dedup() -> f64 {
    1e-3
}
fn default_delta() -> f64 {
    1e-10
}

impl Default for NashSettings {
    fn default() -> Self {
        NashSettings {
            restarts_per_instance: 100,
            iterations: 1000,
            dedup_tolerance: default_dedup(),
            delta: default_delta(),
        }
    }
}

impl NashSettings {
    pub fn validate(&self) -> Result<()> {
        if self.restarts_per_instance == 0 || self.iterations == 0 {
            return Err(Error::InvalidConfig("restarts_per_instance and iterations must be >= 1".into()));
        }
        if !(self.delta > 0.0) || !(self.dedup_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("delta must be > 0 and dedup_tolerance >= 0".into()));
        }
        Ok(())
    }

    /// Total replicator trajectories for `instances` grid points.
    pub fn batch_size(&self, instances: usize) -> usize {
        self.restarts_per_instance * instances
    }
}

/// One discrete replicator step with fitness `d - floor + delta`, where
/// `floor = min(payoff_floor, min d)`. Entries at exact zero stay zero.
pub fn replicator_step(mix: &mut [f64], devpays: &[f64], payoff_floor: f64, delta: f64) {
    let low = devpays.iter().copied().fold(payoff_floor, f64::min);
    let mut total = 0.0;
    for (p, d) in mix.iter_mut().zip(devpays) {
        *p *= d - low + delta;
        total += *p;
    }
    for p in mix.iter_mut() {
        *p /= total;
    }
}

/// Run `iterations` replicator steps from every start, evaluating the source
/// on the whole batch once per step, then score the end points.
pub fn replicator_dynamics_batch<S: DeviationPayoffSource + ?Sized>(
    source: &S,
    initial: &[(Mixture, f64)],
    iterations: usize,
    delta: f64,
) -> Result<Vec<CandidateEquilibrium>> {
    if initial.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if iterations == 0 {
        return Err(Error::InvalidConfig("replicator dynamics needs at least one iteration".into()));
    }
    let n = source.num_strategies();
    if let Some((m, _)) = initial.iter().find(|(m, _)| m.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: m.len() });
    }
    let floor = source.payoff_scale().0;
    let range = source.payoff_range();
    let vs: Vec<f64> = initial.iter().map(|(_, v)| *v).collect();
    let mut mixes: Vec<Vec<f64>> = initial.iter().map(|(m, _)| m.probs().to_vec()).collect();
    let mut diverged = vec![false; mixes.len()];

    let eval = |mixes: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        let rows: Vec<&[f64]> = mixes.iter().map(|m| m.as_slice()).collect();
        source.deviation_payoffs_batch(&rows, &vs)
    };

    for _ in 0..iterations {
        let devpays = eval(&mixes)?;
        let state: Vec<(Vec<f64>, bool)> = par::map_range(mixes.len(), |i| {
            let mut m = mixes[i].clone();
            if diverged[i] {
                return (m, true);
            }
            let d = &devpays[i];
            if d.iter().any(|x| !x.is_finite()) {
                return (m, true);
            }
            replicator_step(&mut m, d, floor, delta);
            if m.iter().any(|x| !x.is_finite()) {
                return (mixes[i].clone(), true);
            }
            (m, false)
        });
        for (i, (m, bad)) in state.into_iter().enumerate() {
            mixes[i] = m;
            diverged[i] = bad;
        }
    }

    let devpays = eval(&mixes)?;
    Ok(mixes
        .into_iter()
        .zip(devpays)
        .zip(vs.iter().zip(diverged))
        .map(|((m, d), (&v, bad))| {
            let bad = bad || d.iter().any(|x| !x.is_finite());
            let estimated_regret = if bad { f64::INFINITY } else { regret_raw(&m, &d) / range };
            CandidateEquilibrium {
                mix: Mixture::from_weights(m).unwrap_or_else(|_| Mixture::uniform(n)),
                v,
                estimated_regret,
                true_regret: None,
                restart_id: 0,
                diverged: bad,
            }
        })
        .collect())
}

/// Starts for one instance: uniform first, then Dirichlet(1) draws from a
/// stream that depends only on `(seed, v)`.
pub fn instance_starts(num_strategies: usize, v: f64, restarts: usize, seed: u64) -> Vec<Mixture> {
    let mut rng = seeding::rng(seeding::derive_path(seed, &[seeding::stream::NASH, v.to_bits()]));
    let mut starts = Vec::with_capacity(restarts);
    starts.push(Mixture::uniform(num_strategies));
    while starts.len() < restarts {
        starts.push(symmetric_dirichlet(num_strategies, 1.0, &mut rng));
    }
    starts
}

/// Replicator dynamics from many starts on every grid instance, in one batch.
/// Results are deduplicated per instance and sorted by `(v, estimated_regret)`.
pub fn find_nash_family<S: DeviationPayoffSource + ?Sized>(
    source: &S,
    range: &ParameterRange,
    instance_grid: &[f64],
    settings: &NashSettings,
    seed: u64,
) -> Result<Vec<CandidateEquilibrium>> {
    settings.validate()?;
    for &v in instance_grid {
        range.check(v)?;
    }
    let n = source.num_strategies();
    let mut initial = Vec::with_capacity(settings.batch_size(instance_grid.len()));
    let mut ids = Vec::with_capacity(initial.capacity());
    for &v in instance_grid {
        for (r, m) in instance_starts(n, v, settings.restarts_per_instance, seed).into_iter().enumerate() {
            initial.push((m, v));
            ids.push(r);
        }
    }
    if initial.is_empty() {
        return Ok(Vec::new());
    }
    let mut cands = replicator_dynamics_batch(source, &initial, settings.iterations, settings.delta)?;
    for (c, id) in cands.iter_mut().zip(ids) {
        c.restart_id = id;
    }
    Ok(dedup_candidates(cands, settings.dedup_tolerance))
}

fn candidate_order(a: &CandidateEquilibrium, b: &CandidateEquilibrium) -> std::cmp::Ordering {
    a.v.total_cmp(&b.v).then(a.estimated_regret.total_cmp(&b.estimated_regret)).then(a.restart_id.cmp(&b.restart_id))
}

/// Per instance, keep the lowest-regret representative of every cluster of
/// end points within `tol` in L-infinity distance.
pub fn dedup_candidates(mut cands: Vec<CandidateEquilibrium>, tol: f64) -> Vec<CandidateEquilibrium> {
    cands.sort_by(candidate_order);
    let mut kept: Vec<CandidateEquilibrium> = Vec::with_capacity(cands.len());
    let mut instance_start = 0;
    for c in cands {
        if kept.last().is_some_and(|k| k.v.to_bits() != c.v.to_bits()) {
            instance_start = kept.len();
        }
        if kept[instance_start..].iter().all(|k| k.mix.linf_distance(&c.mix) > tol) {
            kept.push(c);
        }
    }
    kept
}

/// Keep candidates whose estimated regret is at most `epsilon`; order is
/// preserved.
pub fn filter_candidates(cands: &[CandidateEquilibrium], epsilon: f64) -> Vec<CandidateEquilibrium> {
    cands.iter().filter(|c| c.estimated_regret <= epsilon).cloned().collect()
}

/// Fill in `true_regret` from the exact oracle.
pub fn attach_true_regret(cands: &mut [CandidateEquilibrium], family: &BaggfnFamily) -> Result<()> {
    let oracle = ExactOracle(family);
    let rows: Vec<&[f64]> = cands.iter().map(|c| c.mix.probs()).collect();
    let vs: Vec<f64> = cands.iter().map(|c| c.v).collect();
    let devpays = oracle.deviation_payoffs_batch(&rows, &vs)?;
    let range = family.payoff_range();
    for (c, d) in cands.iter_mut().zip(devpays) {
        c.true_regret = Some(regret_raw(c.mix.probs(), &d) / range);
    }
    Ok(())
}

pub fn candidate_header(num_strategies: usize) -> Vec<String> {
    let mut h = vec!["v".to_string()];
    h.extend(sigma_columns(num_strategies));
    h.extend(["est_regret", "true_regret", "restart_id"].map(String::from));
    h
}

pub fn candidate_table(cands: &[CandidateEquilibrium], num_strategies: usize) -> Result<Table> {
    let mut t = Table::new(candidate_header(num_strategies));
    for c in cands {
        let mut row = vec![fmt_f64(c.v)];
        row.extend(c.mix.probs().iter().map(|p| fmt_f64(*p)));
        row.push(fmt_f64(c.estimated_regret));
        row.push(fmt_opt(c.true_regret));
        row.push(c.restart_id.to_string());
        t.push(row)?;
    }
    Ok(t)
}

pub fn write_candidates(
    path: impl AsRef<Path>,
    cands: &[CandidateEquilibrium],
    num_strategies: usize,
    prov: &Provenance,
) -> Result<()> {
    candidate_table(cands, num_strategies)?.write(path, prov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baggfn::{generate_family, rps_fixture, GenerationConfig};
    use crate::game::regret;
    use proptest::prelude::*;

    /// Constant deviation payoffs per strategy, independent of the mixture.
    struct Constant(Vec<f64>);

    impl DeviationPayoffSource for Constant {
        fn num_strategies(&self) -> usize {
            self.0.len()
        }
        fn payoff_scale(&self) -> (f64, f64) {
            (-1.0, 1.0)
        }
        fn deviation_payoffs_batch(&self, mixes: &[&[f64]], _vs: &[f64]) -> Result<Vec<Vec<f64>>> {
            Ok(vec![self.0.clone(); mixes.len()])
        }
    }

    fn small_family(seed: u64) -> BaggfnFamily {
        generate_family(&GenerationConfig::new(3, 4, ParameterRange::PlayerCount { min: 4, max: 8 }, seed)).unwrap()
    }

    #[test]
    fn uniform_fixed_point_with_equal_payoffs() {
        let src = Constant(vec![0.3; 4]);
        let out = replicator_dynamics_batch(&src, &[(Mixture::uniform(4), 0.0)], 50, 1e-10).unwrap();
        assert_eq!(out[0].mix, Mixture::uniform(4));
        assert_eq!(out[0].estimated_regret, 0.0);
    }

    #[test]
    fn dominant_strategy_mass_grows_monotonically() {
        let src = Constant(vec![0.9, 0.1, -0.5]);
        let mut m = vec![0.2, 0.5, 0.3];
        let mut last = m[0];
        for _ in 0..100 {
            replicator_step(&mut m, &src.0, -1.0, 1e-10);
            assert!(m[0] > last || (m[0] >= last && last > 1.0 - 1e-12));
            last = m[0];
        }
        let out =
            replicator_dynamics_batch(&src, &[(Mixture::new(vec![0.2, 0.5, 0.3]).unwrap(), 0.0)], 100, 1e-10).unwrap();
        assert_eq!(out[0].mix.probs()[0], last);
    }

    #[test]
    fn rps_uniform_is_a_fixed_point() {
        let fam = rps_fixture();
        let out = replicator_dynamics_batch(&ExactOracle(&fam), &[(Mixture::uniform(3), 2.0)], 1000, 1e-10).unwrap();
        assert!(out[0].estimated_regret < 1e-12);
    }

    #[test]
    fn identical_starts_give_identical_outputs() {
        let fam = small_family(3);
        let start = (Mixture::new(vec![0.5, 0.2, 0.3]).unwrap(), 6.0);
        let out = replicator_dynamics_batch(&ExactOracle(&fam), &vec![start; 7], 200, 1e-10).unwrap();
        assert!(out.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn non_finite_payoffs_flag_the_trajectory() {
        let src = Constant(vec![0.0, f64::NAN]);
        let out = replicator_dynamics_batch(&src, &[(Mixture::uniform(2), 0.0)], 5, 1e-10).unwrap();
        assert!(out[0].diverged);
        assert!(out[0].estimated_regret.is_infinite());
        assert!(filter_candidates(&out, 1.0).is_empty());
    }

    #[test]
    fn instance_independence() {
        let fam = small_family(5);
        let range = fam.parameter;
        let settings = NashSettings { restarts_per_instance: 6, iterations: 150, ..Default::default() };
        let alone = find_nash_family(&ExactOracle(&fam), &range, &[6.0], &settings, 9).unwrap();
        let together = find_nash_family(&ExactOracle(&fam), &range, &[4.0, 6.0, 8.0], &settings, 9).unwrap();
        let at6: Vec<_> = together.into_iter().filter(|c| c.v == 6.0).collect();
        assert_eq!(alone, at6);
    }

    #[test]
    fn batch_matches_paper_configuration() {
        let settings = NashSettings::default();
        assert_eq!(settings.batch_size(51), 5100);
        let starts = instance_starts(5, 0.5, settings.restarts_per_instance, 0);
        assert_eq!(starts.len(), 100);
        assert_eq!(starts[0], Mixture::uniform(5));
    }

    #[test]
    fn find_nash_output_is_sorted_and_deduplicated() {
        let fam = small_family(7);
        let settings = NashSettings { restarts_per_instance: 12, iterations: 300, ..Default::default() };
        let cands = find_nash_family(&ExactOracle(&fam), &fam.parameter, &[4.0, 5.0, 8.0], &settings, 1).unwrap();
        assert!(cands.windows(2).all(|w| candidate_order(&w[0], &w[1]).is_le()));
        for (i, a) in cands.iter().enumerate() {
            for b in &cands[i + 1..] {
                if a.v == b.v {
                    assert!(a.mix.linf_distance(&b.mix) > 1e-3);
                }
            }
        }
        assert!(find_nash_family(&ExactOracle(&fam), &fam.parameter, &[9.0], &settings, 1).is_err());
    }

    #[test]
    fn dedup_keeps_lowest_regret() {
        let mk = |p: f64, r: f64, id: usize| CandidateEquilibrium {
            mix: Mixture::new(vec![p, 1.0 - p]).unwrap(),
            v: 1.0,
            estimated_regret: r,
            true_regret: None,
            restart_id: id,
            diverged: false,
        };
        let out = dedup_candidates(vec![mk(0.5, 0.2, 0), mk(0.5004, 0.1, 1), mk(0.9, 0.3, 2)], 1e-3);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].restart_id, 1);
    }

    #[test]
    fn filter_examples() {
        let mk = |r: f64| CandidateEquilibrium {
            mix: Mixture::uniform(2),
            v: 0.0,
            estimated_regret: r,
            true_regret: None,
            restart_id: 0,
            diverged: false,
        };
        let cands = vec![mk(0.05), mk(0.2)];
        assert_eq!(filter_candidates(&cands, f64::INFINITY), cands);
        assert_eq!(filter_candidates(&cands, 0.1), vec![mk(0.05)]);
        assert!(filter_candidates(&cands, 0.0).is_empty());
    }

    #[test]
    fn exact_oracle_candidates_pass_brute_force_check() {
        let fam = small_family(11);
        let settings = NashSettings { restarts_per_instance: 10, iterations: 2000, ..Default::default() };
        let grid = [4.0, 6.0];
        let mut cands = find_nash_family(&ExactOracle(&fam), &fam.parameter, &grid, &settings, 2).unwrap();
        attach_true_regret(&mut cands, &fam).unwrap();
        let passing = filter_candidates(&cands, 1e-3);
        assert!(!passing.is_empty());
        for c in passing {
            let devpays = crate::game::deviation_payoffs_enum(
                |j, s| fam.pure_payoffs(c.v, s).unwrap().values()[j],
                3,
                c.v as u32,
                &c.mix,
            )
            .unwrap();
            assert!(regret(&c.mix, &devpays) / fam.payoff_range() <= 1e-3);
        }
    }

    #[test]
    fn candidate_csv_schema() {
        let fam = rps_fixture();
        let mut cands = replicator_dynamics_batch(&ExactOracle(&fam), &[(Mixture::uniform(3), 2.0)], 3, 1e-10).unwrap();
        attach_true_regret(&mut cands, &fam).unwrap();
        let t = candidate_table(&cands, 3).unwrap();
        assert_eq!(t.header, ["v", "sigma_1", "sigma_2", "sigma_3", "est_regret", "true_regret", "restart_id"]);
        assert_eq!(t.rows.len(), 1);
        let no_oracle = candidate_table(&[CandidateEquilibrium { true_regret: None, ..cands[0].clone() }], 3).unwrap();
        assert_eq!(no_oracle.rows[0][5], "");
    }

    proptest! {
        #[test]
        fn replicator_preserves_simplex_and_zero_support(
            raw in prop::collection::vec(0.0f64..1.0, 4),
            zero in 0usize..4,
            payoffs in prop::collection::vec(-1.0f64..1.0, 4),
            steps in 1usize..50,
        ) {
            let mut w = raw.clone();
            w[zero] = 0.0;
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let mut m = Mixture::from_weights(w).unwrap().into_inner();
            for _ in 0..steps {
                replicator_step(&mut m, &payoffs, -1.0, 1e-10);
                prop_assert!(Mixture::new(m.clone()).is_ok());
                prop_assert_eq!(m[zero], 0.0);
            }
        }
    }
}
