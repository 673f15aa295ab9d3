//! Declarative experiments that produce CSV reports.
//!
//! Each run is a pure function of its [`ExperimentConfig`]: games are
//! generated from per-game seeds split off the master seed, replicated in
//! parallel, and merged in game order. Output goes to
//! `<out>/<experiment>/<seed>/` as CSV tables plus `manifest.json`.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{
    evaluate_mae, mean_ci, push_mae_rows, regret_error, robustness_map, robustness_table, sensitivity_table,
    sensitivity_trace, EvaluationReport, RobustnessMap, SensitivityTrace, MAE_OVERALL_HEADER, MAE_REPORT_HEADER,
    MAE_SUMMARY_HEADER, REGRET_ERROR_HEADER,
};
use crate::baggfn::{generate_family, BaggfnFamily, ParameterRange};
use crate::error::{Error, Result};
use crate::nash::{DeviationPayoffSource, ExactOracle, FplEnsemble};
use crate::pipeline::{
    init_samples_stratified, run_algorithm_one, simulate_round, PipelineOutcome, RunOptions, SamplingConfig,
    TrainingDataset,
};
use crate::report::{fmt_f64, Provenance, Table};
use crate::surrogate::{init_model, save_model, SurrogateModel, TrainSettings};
use crate::{par, seeding, TOOL_VERSION};

pub use config::{
    AnalysisSection, BudgetSection, EvaluationSection, ExperimentConfig, ExperimentKind, ModelSection,
    NetworkOverrides, RefinementSection, ScalabilitySection,
};

/// Simulator accounting for one data-collection run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerCheck {
    pub label: String,
    pub configured: usize,
    pub recorded: usize,
    pub deliberate_duplicates: usize,
    pub collisions: usize,
}

impl LedgerCheck {
    fn new(label: String, configured: usize, data: &TrainingDataset) -> Self {
        LedgerCheck {
            label,
            configured,
            recorded: data.ledger.total(),
            deliberate_duplicates: data.ledger.deliberate_duplicates(),
            collisions: data.ledger.collisions(),
        }
    }

    pub fn ok(&self) -> bool {
        self.configured == self.recorded && self.deliberate_duplicates == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameMae {
    pub game_id: usize,
    pub vpl: EvaluationReport,
    pub fpl: EvaluationReport,
    pub vpl_rows: usize,
    pub fpl_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    None,
    Filtered,
    Unfiltered,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::None, Variant::Filtered, Variant::Unfiltered];

    pub fn name(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Filtered => "filtered",
            Variant::Unfiltered => "unfiltered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRun {
    pub variant: Variant,
    /// `(iteration, regret error)`; the baseline has a single entry.
    pub regret_error: Vec<(usize, f64)>,
    /// `(iteration, v, regret error, candidates)` per instance.
    pub per_instance: Vec<(usize, f64, f64, usize)>,
    pub total_rows: usize,
    pub losses: Vec<f64>,
}

impl VariantRun {
    pub fn final_error(&self) -> f64 {
        self.regret_error.last().map(|(_, e)| *e).unwrap_or(f64::NAN)
    }

    pub fn error_at(&self, iteration: usize) -> Option<f64> {
        self.regret_error.iter().find(|(k, _)| *k == iteration).map(|(_, e)| *e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameRefinement {
    pub game_id: usize,
    pub variants: Vec<VariantRun>,
}

impl GameRefinement {
    pub fn variant(&self, v: Variant) -> &VariantRun {
        self.variants.iter().find(|r| r.variant == v).expect("all variants run")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthResult {
    pub width: u32,
    pub segments: Vec<(u32, u32)>,
    /// `(eval point, segment index, MAE)`.
    pub per_point: Vec<(f64, usize, f64)>,
    pub mean_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameScalability {
    pub game_id: usize,
    pub widths: Vec<WidthResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ExperimentResult {
    FplVsVpl(Vec<GameMae>),
    Refinement(Vec<GameRefinement>),
    ScalabilityPlayers(Vec<GameScalability>),
    Robustness(RobustnessMap),
    Sensitivity(SensitivityTrace),
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub tables: Vec<(String, Table)>,
    pub ledgers: Vec<LedgerCheck>,
    pub result: ExperimentResult,
    /// Trained models worth keeping, by file stem.
    pub models: Vec<(String, SurrogateModel)>,
    pub families: Vec<(String, BaggfnFamily)>,
}

impl ExperimentOutput {
    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.config.seed, self.config_hash.clone())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn csv_bytes(&self, name: &str) -> Result<Vec<u8>> {
        self.table(name).ok_or_else(|| Error::Schema(format!("no table named {name}")))?.to_bytes(&self.provenance())
    }

    /// `<root>/<experiment>/<seed>`.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(self.config.kind.name()).join(self.config.seed.to_string())
    }

    /// Write CSVs, models, families and the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let prov = self.provenance();
        let mut files = Vec::new();
        for (name, table) in &self.tables {
            let path = dir.join(name);
            table.write(&path, &prov)?;
            files.push(path);
        }
        for (stem, model) in &self.models {
            let path = dir.join("models").join(format!("{stem}.gfsm"));
            fs::create_dir_all(path.parent().expect("has parent"))?;
            save_model(model, &path)?;
            files.push(path);
        }
        for (stem, fam) in &self.families {
            let path = dir.join("families").join(format!("{stem}.json"));
            fs::create_dir_all(path.parent().expect("has parent"))?;
            fam.save(&path)?;
            files.push(path);
        }
        let manifest = Manifest {
            tool: TOOL_VERSION,
            kind: self.config.kind.name(),
            seed: self.config.seed,
            config_hash: &self.config_hash,
            config: &self.config,
            ledgers: &self.ledgers,
            files: files.iter().map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string()).collect(),
            result: &self.result,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
        files.push(path);
        Ok(files)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    kind: &'a str,
    seed: u64,
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    ledgers: &'a [LedgerCheck],
    files: Vec<String>,
    result: &'a ExperimentResult,
}

/// Run the experiment described by `config`.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    match config.kind {
        ExperimentKind::FplVsVpl | ExperimentKind::ScalabilityEr => run_fpl_vs_vpl(config),
        ExperimentKind::Refinement => run_refinement(config),
        ExperimentKind::ScalabilityPlayers => run_scalability_players(config),
        ExperimentKind::Robustness | ExperimentKind::Sensitivity => run_analysis(config),
    }
}

fn game_seed(config: &ExperimentConfig, game: usize) -> u64 {
    seeding::derive_path(config.seed, &[seeding::stream::GAME, game as u64])
}

/// Family for game `game`, generated from its own seed.
pub fn game_family(config: &ExperimentConfig, game: usize) -> Result<BaggfnFamily> {
    let mut gc = config.game.clone();
    gc.seed = seeding::derive(game_seed(config, game), seeding::stream::FAMILY);
    generate_family(&gc)
}

fn with_seed(settings: &TrainSettings, seed: u64) -> TrainSettings {
    TrainSettings { seed, ..settings.clone() }
}

fn train_on(model: &mut SurrogateModel, data: &TrainingDataset, settings: &TrainSettings) -> Result<()> {
    model.train(&data.encode(model)?, settings)
}

fn fpl_vs_vpl_game(
    config: &ExperimentConfig,
    game: usize,
) -> Result<(GameMae, LedgerCheck, SurrogateModel, BaggfnFamily)> {
    let gs = game_seed(config, game);
    let fam = game_family(config, game)?;
    let grid = config.grid();
    let per = config.budget.per_instance.unwrap_or_else(|| config.budget.total.unwrap_or(0) / grid.len());
    let alpha = config.sampling().dirichlet_alpha;
    let mut rng = seeding::rng(seeding::derive(gs, seeding::stream::INIT_SAMPLES));
    let samples = init_samples_stratified(&fam, &grid, per, alpha, &mut rng);
    let mut data = TrainingDataset::default();
    simulate_round(&fam, &samples, 0, seeding::derive(gs, seeding::stream::SIMULATOR), &mut data)?;
    let ledger = LedgerCheck::new(format!("game {game}"), per * grid.len(), &data);

    let train_seed = seeding::derive(gs, seeding::stream::TRAIN);
    let mut vpl = init_model(&config.vpl_spec(), fam.parameter.bounds(), fam.payoff_scale, seeding::derive(gs, 0))?;
    train_on(&mut vpl, &data, &with_seed(&config.train, train_seed))?;

    let fpl_settings = config.fpl_train();
    let fpl_spec = config.fpl_spec();
    let mut fpl_models = Vec::with_capacity(grid.len());
    let mut fpl_rows = 0;
    for (i, &v) in grid.iter().enumerate() {
        let part = data.partition(v);
        fpl_rows += part.len();
        let mut m = init_model(&fpl_spec, (v, v), fam.payoff_scale, seeding::derive(gs, 1 + i as u64))?;
        train_on(&mut m, &part, &with_seed(&fpl_settings, seeding::derive(train_seed, 1 + i as u64)))?;
        fpl_models.push((v, m));
    }
    let ensemble = FplEnsemble::new(fpl_models)?;
    let res = config.evaluation.lattice_resolution;
    let result = GameMae {
        game_id: game,
        vpl: evaluate_mae(&vpl, &fam, &grid, res)?,
        fpl: evaluate_mae(&ensemble, &fam, &grid, res)?,
        vpl_rows: data.len(),
        fpl_rows,
    };
    Ok((result, ledger, vpl, fam))
}

fn run_fpl_vs_vpl(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let games: Vec<usize> = (0..config.num_games).collect();
    let runs = par::try_map(&games, |&g| fpl_vs_vpl_game(config, g))?;
    let mut report = Table::new(MAE_REPORT_HEADER);
    let mut overall = Table::new(MAE_OVERALL_HEADER);
    let mut ledgers = Vec::new();
    let mut models = Vec::new();
    let mut families = Vec::new();
    let mut results = Vec::new();
    for (r, ledger, vpl, fam) in runs {
        push_mae_rows(&mut report, r.game_id, "vpl", &r.vpl)?;
        push_mae_rows(&mut report, r.game_id, "fpl", &r.fpl)?;
        for (name, rep) in [("vpl", &r.vpl), ("fpl", &r.fpl)] {
            overall.push(vec![
                r.game_id.to_string(),
                name.into(),
                fmt_f64(rep.overall_mae),
                rep.n_mixtures.to_string(),
            ])?;
        }
        ledgers.push(ledger);
        models.push((format!("game_{}_vpl", r.game_id), vpl));
        families.push((format!("game_{}", r.game_id), fam));
        results.push(r);
    }
    let mut summary = Table::new(MAE_SUMMARY_HEADER);
    for name in ["vpl", "fpl"] {
        let vals: Vec<f64> =
            results.iter().map(|r| if name == "vpl" { r.vpl.overall_mae } else { r.fpl.overall_mae }).collect();
        let (m, h) = mean_ci(&vals);
        summary.push(vec![name.into(), fmt_f64(m), fmt_f64(h), vals.len().to_string()])?;
    }
    Ok(ExperimentOutput {
        config: config.clone(),
        config_hash: config.hash(),
        tables: vec![
            ("mae_report.csv".into(), report),
            ("mae_overall.csv".into(), overall),
            ("mae_summary.csv".into(), summary),
        ],
        ledgers,
        result: ExperimentResult::FplVsVpl(results),
        models,
        families,
    })
}

/// Split `total` into an initial design and `iters` equal refinement rounds,
/// keeping the initial share as close to `fraction` as the rounding allows.
pub fn refinement_budget(total: usize, fraction: f64, iters: usize) -> (usize, usize) {
    let refine_total = total - (fraction * total as f64).round() as usize;
    let per_round = refine_total / iters;
    (total - per_round * iters, per_round)
}

fn variant_config(config: &ExperimentConfig, variant: Variant) -> (SamplingConfig, TrainSettings) {
    let total = config.budget.total.expect("validated");
    let base = config.sampling();
    let r = &config.refinement;
    match variant {
        Variant::None => (
            SamplingConfig { init_queries: total, resamp_queries: 0, num_iters: 0, ..base },
            config.train.with_epochs(r.baseline_epochs),
        ),
        Variant::Filtered | Variant::Unfiltered => {
            let (init, per_round) = refinement_budget(total, config.budget.initial_fraction, r.iterations);
            let filtered = variant == Variant::Filtered;
            (
                SamplingConfig {
                    init_queries: init,
                    resamp_queries: per_round,
                    num_iters: r.iterations,
                    regret_filter: filtered.then_some(r.filter_epsilon),
                    neighborhood_samples_per_candidate: if filtered {
                        r.filtered_per_candidate
                    } else {
                        r.unfiltered_per_candidate
                    },
                    ..base
                },
                config.train.clone(),
            )
        }
    }
}

fn summarize_variant(variant: Variant, out: &PipelineOutcome) -> Result<VariantRun> {
    let mut errors = Vec::new();
    let mut per_instance = Vec::new();
    for rec in &out.iterations {
        errors.push((rec.iteration, regret_error(&rec.candidates)?));
        let mut vs: Vec<f64> = rec.candidates.iter().map(|c| c.v).collect();
        vs.dedup();
        for v in vs {
            let at: Vec<_> = rec.candidates.iter().filter(|c| c.v == v).cloned().collect();
            per_instance.push((rec.iteration, v, regret_error(&at)?, at.len()));
        }
    }
    Ok(VariantRun {
        variant,
        regret_error: errors,
        per_instance,
        total_rows: out.dataset.len(),
        losses: out.model.meta.loss_history.clone(),
    })
}

fn refinement_game(config: &ExperimentConfig, game: usize) -> Result<(GameRefinement, Vec<LedgerCheck>)> {
    let gs = game_seed(config, game);
    let fam = game_family(config, game)?;
    let spec = config.vpl_spec();
    let mut variants = Vec::new();
    let mut ledgers = Vec::new();
    for variant in Variant::ALL {
        let (sampling, train) = variant_config(config, variant);
        let out = run_algorithm_one(&fam, &spec, &train, &sampling, gs, RunOptions::default())?;
        let mut run = summarize_variant(variant, &out)?;
        if variant == Variant::None {
            // The baseline has seen the whole budget, which refined variants
            // reach at their last iteration.
            run.regret_error = vec![(config.refinement.iterations, run.regret_error[0].1)];
            for row in &mut run.per_instance {
                row.0 = config.refinement.iterations;
            }
        }
        ledgers.push(LedgerCheck::new(
            format!("game {game} {}", variant.name()),
            sampling.total_budget(),
            &out.dataset,
        ));
        variants.push(run);
    }
    Ok((GameRefinement { game_id: game, variants }, ledgers))
}

fn run_refinement(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let games: Vec<usize> = (0..config.num_games).collect();
    let runs = par::try_map(&games, |&g| refinement_game(config, g))?;
    let mut per_game = Table::new(["game_id", "variant", "iteration", "mean_abs_err"]);
    let mut per_instance = Table::new(["game_id", "variant", "iteration", "v", "mean_abs_err", "n_candidates"]);
    let mut results = Vec::new();
    let mut ledgers = Vec::new();
    for (r, l) in runs {
        for run in &r.variants {
            for (k, e) in &run.regret_error {
                per_game.push(vec![r.game_id.to_string(), run.variant.name().into(), k.to_string(), fmt_f64(*e)])?;
            }
            for (k, v, e, n) in &run.per_instance {
                per_instance.push(vec![
                    r.game_id.to_string(),
                    run.variant.name().into(),
                    k.to_string(),
                    fmt_f64(*v),
                    fmt_f64(*e),
                    n.to_string(),
                ])?;
            }
        }
        ledgers.extend(l);
        results.push(r);
    }
    let mut summary = Table::new(REGRET_ERROR_HEADER);
    for variant in Variant::ALL {
        for k in 0..=config.refinement.iterations {
            let vals: Vec<f64> = results.iter().filter_map(|g| g.variant(variant).error_at(k)).collect();
            if vals.is_empty() {
                continue;
            }
            let (m, h) = mean_ci(&vals);
            summary.push(vec![k.to_string(), variant.name().into(), fmt_f64(m), fmt_f64(h)])?;
        }
    }
    Ok(ExperimentOutput {
        config: config.clone(),
        config_hash: config.hash(),
        tables: vec![
            ("regret_error.csv".into(), summary),
            ("regret_error_games.csv".into(), per_game),
            ("regret_error_instances.csv".into(), per_instance),
        ],
        ledgers,
        result: ExperimentResult::Refinement(results),
        models: Vec::new(),
        families: Vec::new(),
    })
}

/// Fewest width-`width` player ranges inside `[lo, hi]` covering every
/// evaluation point: each range starts at the first uncovered point and is
/// shifted left when it would overrun `hi`.
pub fn cover_segments(lo: u32, hi: u32, width: u32, points: &[u32]) -> Vec<(u32, u32)> {
    let mut segs: Vec<(u32, u32)> = Vec::new();
    for &p in points {
        if segs.iter().any(|(a, b)| (*a..=*b).contains(&p)) {
            continue;
        }
        let start = p.min(hi.saturating_sub(width)).max(lo);
        segs.push((start, (start + width).min(hi)));
    }
    segs
}

fn evaluation_points(config: &ExperimentConfig) -> Vec<u32> {
    let (lo, hi) = config.game.parameter.bounds();
    (lo as u32..=hi as u32).step_by(config.scalability.eval_step as usize).collect()
}

fn scalability_game(config: &ExperimentConfig, game: usize) -> Result<(GameScalability, Vec<LedgerCheck>)> {
    let gs = game_seed(config, game);
    let fam = game_family(config, game)?;
    let (lo, hi) = fam.parameter.bounds();
    let points = evaluation_points(config);
    let total = config.budget.total.expect("validated");
    let spec = config.vpl_spec();
    let sampling = SamplingConfig { init_queries: total, resamp_queries: 0, num_iters: 0, ..config.sampling() };
    let options = RunOptions { true_regret: false, skip_final_nash: true };
    let mut widths = Vec::new();
    let mut ledgers = Vec::new();
    for (wi, &width) in config.scalability.widths.iter().enumerate() {
        let segments = cover_segments(lo as u32, hi as u32, width, &points);
        let mut models = Vec::with_capacity(segments.len());
        for (si, &(a, b)) in segments.iter().enumerate() {
            let mut sub = fam.clone();
            sub.parameter = ParameterRange::PlayerCount { min: a, max: b };
            let seed = seeding::derive_path(gs, &[wi as u64, si as u64]);
            let out = run_algorithm_one(&sub, &spec, &config.train, &sampling, seed, options)?;
            ledgers.push(LedgerCheck::new(format!("game {game} width {width} [{a}, {b}]"), total, &out.dataset));
            models.push(out.model);
        }
        let mut per_point = Vec::with_capacity(points.len());
        for &p in &points {
            let si = segments.iter().position(|(a, b)| (*a..=*b).contains(&p)).expect("covered");
            let rep = evaluate_mae(&models[si], &fam, &[p as f64], config.evaluation.lattice_resolution)?;
            per_point.push((p as f64, si, rep.overall_mae));
        }
        let mean_mae = per_point.iter().map(|(_, _, m)| m).sum::<f64>() / per_point.len() as f64;
        widths.push(WidthResult { width, segments, per_point, mean_mae });
    }
    Ok((GameScalability { game_id: game, widths }, ledgers))
}

/// Pooled 95% half-width for the difference of two group means with equal
/// group sizes.
pub fn pooled_half_width(a: &[f64], b: &[f64]) -> f64 {
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len().max(2) - 1) as f64
    };
    let n = a.len().min(b.len()) as f64;
    crate::analysis::Z95 * ((var(a) + var(b)) / 2.0).sqrt() / n.sqrt()
}

fn run_scalability_players(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let games: Vec<usize> = (0..config.num_games).collect();
    let runs = par::try_map(&games, |&g| scalability_game(config, g))?;
    let mut detail = Table::new(["game_id", "width", "model_index", "v", "mae"]);
    let mut results = Vec::new();
    let mut ledgers = Vec::new();
    for (r, l) in runs {
        for w in &r.widths {
            for (v, si, mae) in &w.per_point {
                detail.push(vec![
                    r.game_id.to_string(),
                    w.width.to_string(),
                    si.to_string(),
                    fmt_f64(*v),
                    fmt_f64(*mae),
                ])?;
            }
        }
        ledgers.extend(l);
        results.push(r);
    }
    let mut summary = Table::new(["width", "n_models", "mean_mae", "ci95", "n_games"]);
    for (wi, &width) in config.scalability.widths.iter().enumerate() {
        let vals: Vec<f64> = results.iter().map(|g| g.widths[wi].mean_mae).collect();
        let (m, h) = mean_ci(&vals);
        let n_models = results.first().map(|g| g.widths[wi].segments.len()).unwrap_or(0);
        summary.push(vec![width.to_string(), n_models.to_string(), fmt_f64(m), fmt_f64(h), vals.len().to_string()])?;
    }
    Ok(ExperimentOutput {
        config: config.clone(),
        config_hash: config.hash(),
        tables: vec![("scalability.csv".into(), detail), ("scalability_summary.csv".into(), summary)],
        ledgers,
        result: ExperimentResult::ScalabilityPlayers(results),
        models: Vec::new(),
        families: Vec::new(),
    })
}

fn run_analysis(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let fam = game_family(config, 0)?;
    let gs = game_seed(config, 0);
    let grid = config.grid();
    let mut ledgers = Vec::new();
    let mut models = Vec::new();
    let model = if config.analysis.use_oracle {
        None
    } else {
        let sampling = config.sampling();
        let options = RunOptions { true_regret: false, skip_final_nash: true };
        let out = run_algorithm_one(&fam, &config.vpl_spec(), &config.train, &sampling, gs, options)?;
        ledgers.push(LedgerCheck::new("game 0".into(), sampling.total_budget(), &out.dataset));
        models.push(("game_0_vpl".to_string(), out.model.clone()));
        Some(out.model)
    };
    let oracle = ExactOracle(&fam);
    let source: &dyn DeviationPayoffSource = match &model {
        Some(m) => m,
        None => &oracle,
    };
    let a = &config.analysis;
    let (tables, result) = match config.kind {
        ExperimentKind::Robustness => {
            let map = robustness_map(source, &grid, a.lattice_resolution, a.epsilon)?;
            (vec![("robustness.csv".to_string(), robustness_table(&map)?)], ExperimentResult::Robustness(map))
        }
        _ => {
            let trace = sensitivity_trace(source, &grid, a.iterations, config.nash().delta)?;
            (vec![("sensitivity.csv".to_string(), sensitivity_table(&trace)?)], ExperimentResult::Sensitivity(trace))
        }
    };
    Ok(ExperimentOutput {
        config: config.clone(),
        config_hash: config.hash(),
        tables,
        ledgers,
        result,
        models,
        families: vec![("game_0".into(), fam)],
    })
}
