//! Evaluation of learned deviation payoffs and family-level equilibrium
//! analyses.
//!
//! All errors and regrets are in normalized payoff units: raw payoffs are
//! divided by the width of the family's payoff scale.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::baggfn::BaggfnFamily;
use crate::error::{Error, Result};
use crate::game::{regret_raw, simplex_lattice, Mixture};
use crate::nash::{replicator_dynamics_batch, CandidateEquilibrium, DeviationPayoffSource, ExactOracle};
use crate::par;
use crate::report::{fmt_f64, sigma_columns, Table};

/// z-value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMae {
    pub v: f64,
    pub mae: f64,
    pub n_mixtures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_instance: Vec<InstanceMae>,
    /// Mean over every evaluated `(instance, mixture)` pair.
    pub overall_mae: f64,
    pub n_mixtures: usize,
}

/// Mean and 95% normal-approximation half-width across independent values
/// (one per game). The half-width is 0 for fewer than two values.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * (var / n as f64).sqrt())
}

/// Normalized deviation-payoff MAE of `source` against the exact oracle on
/// every lattice mixture of every grid instance.
pub fn evaluate_mae<S: DeviationPayoffSource + ?Sized>(
    source: &S,
    family: &BaggfnFamily,
    instance_grid: &[f64],
    lattice_resolution: u32,
) -> Result<EvaluationReport> {
    let n = family.num_strategies;
    if source.num_strategies() != n {
        return Err(Error::DimensionMismatch { expected: n, got: source.num_strategies() });
    }
    let lattice = simplex_lattice(n, lattice_resolution)?;
    let rows: Vec<&[f64]> = lattice.iter().map(|m| m.probs()).collect();
    let range = family.payoff_range();
    let oracle = ExactOracle(family);
    let per_instance = par::try_map(instance_grid, |&v| -> Result<(InstanceMae, f64)> {
        let vs = vec![v; rows.len()];
        let pred = source.deviation_payoffs_batch(&rows, &vs)?;
        let truth = oracle.deviation_payoffs_batch(&rows, &vs)?;
        let mut sum = 0.0;
        for (p, t) in pred.iter().zip(&truth) {
            sum += p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / (n as f64 * range);
        }
        Ok((InstanceMae { v, mae: sum / rows.len() as f64, n_mixtures: rows.len() }, sum))
    })?;
    let n_mixtures = rows.len() * instance_grid.len();
    let total: f64 = per_instance.iter().map(|(_, s)| s).sum();
    Ok(EvaluationReport {
        per_instance: per_instance.into_iter().map(|(m, _)| m).collect(),
        overall_mae: if n_mixtures > 0 { total / n_mixtures as f64 } else { f64::NAN },
        n_mixtures,
    })
}

/// Mean `|estimated - true|` regret over candidates. Diverged candidates are
/// skipped with a warning.
pub fn regret_error(cands: &[CandidateEquilibrium]) -> Result<f64> {
    let usable: Vec<&CandidateEquilibrium> = cands.iter().filter(|c| !c.diverged).collect();
    if usable.len() < cands.len() {
        warn!("skipping {} diverged candidates in regret error", cands.len() - usable.len());
    }
    if usable.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut sum = 0.0;
    for c in &usable {
        let t = c
            .true_regret
            .ok_or_else(|| Error::InvalidConfig("regret error needs exact-oracle regrets on every candidate".into()))?;
        sum += (c.estimated_regret - t).abs();
    }
    Ok(sum / usable.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessMap {
    pub mixtures: Vec<Mixture>,
    pub mean_regret: Vec<f64>,
    pub max_regret: Vec<f64>,
    /// Instances at which the mixture is an epsilon-equilibrium.
    pub freq: Vec<usize>,
    pub epsilon: f64,
    pub num_instances: usize,
}

/// Regret of every lattice mixture at every grid instance, summarized per
/// mixture.
pub fn robustness_map<S: DeviationPayoffSource + ?Sized>(
    source: &S,
    instance_grid: &[f64],
    lattice_resolution: u32,
    epsilon: f64,
) -> Result<RobustnessMap> {
    if instance_grid.is_empty() {
        return Err(Error::InvalidConfig("robustness map needs at least one instance".into()));
    }
    let lattice = simplex_lattice(source.num_strategies(), lattice_resolution)?;
    let range = source.payoff_range();
    let rows: Vec<&[f64]> = lattice.iter().map(|m| m.probs()).collect();
    // regrets[i][k]: instance i, mixture k.
    let regrets = par::try_map(instance_grid, |&v| -> Result<Vec<f64>> {
        let d = source.deviation_payoffs_batch(&rows, &vec![v; rows.len()])?;
        Ok(rows.iter().zip(&d).map(|(m, d)| regret_raw(m, d) / range).collect())
    })?;
    let k = lattice.len();
    let mut mean_regret = vec![0.0; k];
    let mut max_regret = vec![0.0f64; k];
    let mut freq = vec![0usize; k];
    for inst in &regrets {
        for j in 0..k {
            mean_regret[j] += inst[j];
            max_regret[j] = max_regret[j].max(inst[j]);
            freq[j] += (inst[j] <= epsilon) as usize;
        }
    }
    for m in &mut mean_regret {
        *m /= instance_grid.len() as f64;
    }
    Ok(RobustnessMap { mixtures: lattice, mean_regret, max_regret, freq, epsilon, num_instances: instance_grid.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTrace {
    /// One uniform-start replicator end point per instance, ordered by `v`.
    pub points: Vec<CandidateEquilibrium>,
    pub mean_regret: f64,
    pub max_regret: f64,
    /// Largest L-infinity jump between adjacent instances.
    pub max_step: f64,
}

pub fn sensitivity_trace<S: DeviationPayoffSource + ?Sized>(
    source: &S,
    instance_grid: &[f64],
    iterations: usize,
    delta: f64,
) -> Result<SensitivityTrace> {
    let mut grid = instance_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let n = source.num_strategies();
    let starts: Vec<(Mixture, f64)> = grid.iter().map(|&v| (Mixture::uniform(n), v)).collect();
    let points = replicator_dynamics_batch(source, &starts, iterations, delta)?;
    let (mean_regret, _) = mean_ci(&points.iter().map(|c| c.estimated_regret).collect::<Vec<_>>());
    let max_regret = points.iter().map(|c| c.estimated_regret).fold(0.0, f64::max);
    let max_step = points.windows(2).map(|w| w[0].mix.linf_distance(&w[1].mix)).fold(0.0, f64::max);
    Ok(SensitivityTrace { points, mean_regret, max_regret, max_step })
}

/// Average ranks (ties share the mean of their positions), 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with tie-averaged ranks. NaN when either input
/// is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

pub const MAE_REPORT_HEADER: [&str; 5] = ["game_id", "model", "v", "mae", "n_mixtures"];
pub const MAE_OVERALL_HEADER: [&str; 4] = ["game_id", "model", "mae", "n_mixtures"];
pub const MAE_SUMMARY_HEADER: [&str; 4] = ["model", "mean_mae", "ci95", "n_games"];
pub const REGRET_ERROR_HEADER: [&str; 4] = ["iteration", "variant", "mean_abs_err", "ci95"];

pub fn robustness_header(n: usize) -> Vec<String> {
    let mut h = sigma_columns(n);
    h.extend(["mean_regret", "max_regret", "freq"].map(String::from));
    h
}

pub fn sensitivity_header(n: usize) -> Vec<String> {
    let mut h = vec!["v".to_string()];
    h.extend(sigma_columns(n));
    h.push("regret".into());
    h
}

/// Append one report's per-instance rows to an `mae_report.csv` table.
pub fn push_mae_rows(table: &mut Table, game_id: usize, model: &str, report: &EvaluationReport) -> Result<()> {
    for r in &report.per_instance {
        table.push(vec![game_id.to_string(), model.into(), fmt_f64(r.v), fmt_f64(r.mae), r.n_mixtures.to_string()])?;
    }
    Ok(())
}

pub fn robustness_table(map: &RobustnessMap) -> Result<Table> {
    let n = map.mixtures.first().map(|m| m.len()).unwrap_or(0);
    let mut t = Table::new(robustness_header(n));
    for (j, m) in map.mixtures.iter().enumerate() {
        let mut row: Vec<String> = m.probs().iter().map(|p| fmt_f64(*p)).collect();
        row.push(fmt_f64(map.mean_regret[j]));
        row.push(fmt_f64(map.max_regret[j]));
        row.push(map.freq[j].to_string());
        t.push(row)?;
    }
    Ok(t)
}

pub fn sensitivity_table(trace: &SensitivityTrace) -> Result<Table> {
    let n = trace.points.first().map(|c| c.mix.len()).unwrap_or(0);
    let mut t = Table::new(sensitivity_header(n));
    for c in &trace.points {
        let mut row = vec![fmt_f64(c.v)];
        row.extend(c.mix.probs().iter().map(|p| fmt_f64(*p)));
        row.push(fmt_f64(c.estimated_regret));
        t.push(row)?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baggfn::{generate_family, GenerationConfig, ParameterRange};
    use crate::nash::{attach_true_regret, find_nash_family, NashSettings};
    use crate::seeding;
    use rand::Rng;

    fn family(seed: u64, range: ParameterRange) -> BaggfnFamily {
        generate_family(&GenerationConfig::new(3, 4, range, seed)).unwrap()
    }

    /// Predicts a fixed normalized value for every strategy.
    struct ConstantNormalized(usize, (f64, f64), f64);

    impl DeviationPayoffSource for ConstantNormalized {
        fn num_strategies(&self) -> usize {
            self.0
        }
        fn payoff_scale(&self) -> (f64, f64) {
            self.1
        }
        fn deviation_payoffs_batch(&self, mixes: &[&[f64]], _vs: &[f64]) -> Result<Vec<Vec<f64>>> {
            let (lo, hi) = self.1;
            Ok(vec![vec![lo + self.2 * (hi - lo); self.0]; mixes.len()])
        }
    }

    #[test]
    fn oracle_has_zero_mae() {
        let fam = family(1, ParameterRange::PlayerCount { min: 5, max: 9 });
        let grid = fam.parameter.grid(0);
        let rep = evaluate_mae(&ExactOracle(&fam), &fam, &grid, 6).unwrap();
        assert_eq!(rep.overall_mae, 0.0);
        assert_eq!(rep.per_instance.len(), 5);
        assert_eq!(rep.n_mixtures, 5 * 28);
    }

    #[test]
    fn lattice_of_paper_size() {
        let fam =
            generate_family(&GenerationConfig::new(5, 3, ParameterRange::PlayerCount { min: 4, max: 4 }, 0)).unwrap();
        let rep = evaluate_mae(&ExactOracle(&fam), &fam, &[4.0], 8).unwrap();
        assert_eq!(rep.per_instance[0].n_mixtures, 495);
    }

    /// Truth uniform on [0, 1] in normalized units, constant 0.5 prediction:
    /// E|U - 0.5| = 0.25.
    #[test]
    fn constant_half_predictor_oracle() {
        let mut rng = seeding::rng(3);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| (rng.random::<f64>() - 0.5).abs()).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 0.005);
        // On a real family the constant predictor's error is positive and bounded.
        let fam = family(2, ParameterRange::PlayerCount { min: 5, max: 6 });
        let src = ConstantNormalized(3, fam.payoff_scale, 0.5);
        let rep = evaluate_mae(&src, &fam, &[5.0, 6.0], 5).unwrap();
        assert!(rep.overall_mae > 0.0 && rep.overall_mae <= 0.5 + 1e-12);
    }

    #[test]
    fn overall_is_mean_over_mixtures() {
        let fam = family(4, ParameterRange::PlayerCount { min: 5, max: 6 });
        let src = ConstantNormalized(3, fam.payoff_scale, 0.3);
        let rep = evaluate_mae(&src, &fam, &[5.0, 6.0], 4).unwrap();
        let mean_of_means = rep.per_instance.iter().map(|r| r.mae).sum::<f64>() / 2.0;
        assert!((rep.overall_mae - mean_of_means).abs() < 1e-12);
    }

    #[test]
    fn mae_is_invariant_under_affine_rescaling() {
        let fam = family(5, ParameterRange::PlayerCount { min: 5, max: 6 });
        let (a, b) = (3.5, -2.0);
        let mut scaled = fam.clone();
        for w in &mut scaled.output_weights {
            w.iter_mut().for_each(|x| *x *= a);
        }
        // A function node without input edges that pays `b` to everyone.
        scaled.num_functions += 1;
        for row in &mut scaled.input_edge_latents {
            row.push(1.0);
        }
        scaled.function_tables.push(vec![b; fam.max_players as usize + 1]);
        scaled.output_weights.push(vec![1.0; 3]);
        scaled.payoff_scale = (a * fam.payoff_scale.0 + b, a * fam.payoff_scale.1 + b);
        let src = ConstantNormalized(3, fam.payoff_scale, 0.4);
        let src_scaled = ConstantNormalized(3, scaled.payoff_scale, 0.4);
        let r1 = evaluate_mae(&src, &fam, &[5.0, 6.0], 4).unwrap();
        let r2 = evaluate_mae(&src_scaled, &scaled, &[5.0, 6.0], 4).unwrap();
        assert!((r1.overall_mae - r2.overall_mae).abs() < 1e-12);
    }

    #[test]
    fn regret_error_examples() {
        let mk = |e: f64, t: f64| CandidateEquilibrium {
            mix: Mixture::uniform(2),
            v: 0.0,
            estimated_regret: e,
            true_regret: Some(t),
            restart_id: 0,
            diverged: false,
        };
        assert_eq!(regret_error(&[mk(0.2, 0.2), mk(0.0, 0.0)]).unwrap(), 0.0);
        assert!((regret_error(&[mk(0.10, 0.15)]).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(regret_error(&[]), Err(Error::EmptyCandidates)));
    }

    #[test]
    fn oracle_driven_candidates_have_no_regret_error() {
        let fam = family(6, ParameterRange::PlayerCount { min: 5, max: 7 });
        let settings = NashSettings { restarts_per_instance: 5, iterations: 100, ..Default::default() };
        let mut cands = find_nash_family(&ExactOracle(&fam), &fam.parameter, &[5.0, 7.0], &settings, 0).unwrap();
        attach_true_regret(&mut cands, &fam).unwrap();
        assert!(regret_error(&cands).unwrap() < 1e-6);
    }

    #[test]
    fn dominant_strategy_is_robust_everywhere() {
        struct Dominant;
        impl DeviationPayoffSource for Dominant {
            fn num_strategies(&self) -> usize {
                3
            }
            fn payoff_scale(&self) -> (f64, f64) {
                (0.0, 1.0)
            }
            fn deviation_payoffs_batch(&self, mixes: &[&[f64]], vs: &[f64]) -> Result<Vec<Vec<f64>>> {
                Ok(vs.iter().take(mixes.len()).map(|v| vec![0.9, 0.2 * v, 0.1]).collect())
            }
        }
        let grid = [0.1, 0.5, 0.9];
        let map = robustness_map(&Dominant, &grid, 4, 1e-9).unwrap();
        assert_eq!(map.mixtures.len(), 15);
        let pure = map.mixtures.iter().position(|m| m.probs() == [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(map.freq[pure], 3);
        assert_eq!(map.mean_regret[pure], 0.0);
        assert!(map.freq.iter().all(|f| *f <= 3));
    }

    #[test]
    fn frequency_is_monotone_in_epsilon() {
        let fam = family(7, ParameterRange::PlayerCount { min: 5, max: 8 });
        let grid = fam.parameter.grid(0);
        let mut last = vec![0usize; 0];
        for eps in [0.0, 0.01, 0.05, 0.2, 1.0] {
            let map = robustness_map(&ExactOracle(&fam), &grid, 6, eps).unwrap();
            if !last.is_empty() {
                assert!(map.freq.iter().zip(&last).all(|(a, b)| a >= b));
            }
            last = map.freq;
        }
        assert!(last.iter().all(|f| *f == 4));
    }

    #[test]
    fn mean_regret_and_frequency_are_anticorrelated() {
        let fam = family(8, ParameterRange::PlayerCount { min: 10, max: 20 });
        let grid = fam.parameter.grid(0);
        let map = robustness_map(&ExactOracle(&fam), &grid, 12, 0.02).unwrap();
        let freq: Vec<f64> = map.freq.iter().map(|f| *f as f64).collect();
        assert!(spearman(&map.mean_regret, &freq) < 0.0);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn sensitivity_on_identical_instances() {
        let mut fam = family(9, ParameterRange::ErThreshold { min: 0.3, max: 0.6 });
        for row in &mut fam.input_edge_latents {
            for l in row.iter_mut() {
                *l = if *l < 0.5 { 0.0 } else { 1.0 };
            }
        }
        let grid = fam.parameter.grid(7);
        let trace = sensitivity_trace(&ExactOracle(&fam), &grid, 300, 1e-10).unwrap();
        assert_eq!(trace.points.len(), 7);
        assert!(trace.points.windows(2).all(|w| w[0].mix == w[1].mix && w[0].v < w[1].v));
        assert_eq!(trace.max_step, 0.0);
    }

    #[test]
    fn csv_tables_have_expected_shape() {
        let fam = family(10, ParameterRange::PlayerCount { min: 5, max: 6 });
        let map = robustness_map(&ExactOracle(&fam), &[5.0, 6.0], 5, 0.1).unwrap();
        let t = robustness_table(&map).unwrap();
        assert_eq!(t.rows.len(), 21);
        assert_eq!(t.header, ["sigma_1", "sigma_2", "sigma_3", "mean_regret", "max_regret", "freq"]);
        let trace = sensitivity_trace(&ExactOracle(&fam), &[5.0, 6.0], 10, 1e-10).unwrap();
        assert_eq!(sensitivity_table(&trace).unwrap().header, ["v", "sigma_1", "sigma_2", "sigma_3", "regret"]);
    }

    #[test]
    fn ci_of_constant_values_is_zero() {
        let (m, h) = mean_ci(&[0.25, 0.25, 0.25]);
        assert_eq!((m, h), (0.25, 0.0));
        let (m, h) = mean_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 1.96 * (2.0f64 / 2.0).sqrt()).abs() < 1e-12);
    }
}
