//! Plain-versus-projector runs over a seed list and their on-disk layout:
//!
//! ```text
//! <output_dir>/<experiment>/
//!   config.toml  manifest.json  summary.csv
//!   <seed>/comparison.json  <seed>/diffs.csv  <seed>/plots/*.svg
//!   <seed>/<variant>/history.csv  history.json  checkpoint.json  summary.json  [grid.csv]
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mgproj::checkpoint::Checkpoint;
use mgproj::data::{generate_token_task, generate_wiggly};
use mgproj::models::{BoundaryGrid, Classifier, TiedEncoder, ToyNet};
use mgproj::training::{
    averaged_metrics, boundary_disagreement, compare_runs, train, AveragedMetrics, ComparisonReport, Dataset,
    RunHistory,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Task, Variant};
use crate::error::{CliError, CliResult};

/// Copy of `cfg` with every seed field set to `seed`.
pub fn config_for_seed(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.seeds = vec![seed];
    c.train.seed = seed;
    c.wiggly.seed = seed;
    c.token.seed = seed;
    c.subspace.seed = seed;
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub seed: u64,
    pub variant: Variant,
    pub num_params: usize,
    pub epochs: usize,
    pub averaged: AveragedMetrics,
    /// Fraction of the boundary grid misclassified (wiggly task only).
    pub disagreement: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct VariantOutcome {
    pub history: RunHistory,
    pub checkpoint: Checkpoint,
    pub grid: Option<BoundaryGrid>,
    pub summary: VariantSummary,
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub plain: VariantOutcome,
    pub proj: VariantOutcome,
    /// `a` = plain, `b` = proj.
    pub comparison: ComparisonReport,
}

impl SeedOutcome {
    pub fn variant(&self, v: Variant) -> &VariantOutcome {
        match v {
            Variant::Plain => &self.plain,
            Variant::Proj => &self.proj,
        }
    }
}

fn outcome<M: Classifier>(
    model: &M,
    history: RunHistory,
    config: &impl Serialize,
    seed: u64,
    variant: Variant,
    num_params: usize,
    grid: Option<(BoundaryGrid, f64)>,
) -> CliResult<VariantOutcome> {
    let averaged = averaged_metrics(&history)?;
    let (grid, disagreement) = match grid {
        Some((g, d)) => (Some(g), Some(d)),
        None => (None, None),
    };
    Ok(VariantOutcome {
        checkpoint: Checkpoint::capture(config, model.params())?,
        summary: VariantSummary { seed, variant, num_params, epochs: history.records.len(), averaged, disagreement },
        history,
        grid,
    })
}

pub fn run_variant(cfg: &ExperimentConfig, seed: u64, variant: Variant) -> CliResult<VariantOutcome> {
    let cfg = config_for_seed(cfg, seed);
    match cfg.task {
        Task::Wiggly => {
            let (tr, te) = generate_wiggly(&cfg.wiggly)?;
            let data = Dataset::from_points(&tr, &te);
            let model_cfg = cfg.variant_toynet(variant);
            let mut net = ToyNet::new(&model_cfg, seed)?;
            let history = train(&mut net, &data, &cfg.train)?;
            let grid = net.decision_boundary_grid(cfg.wiggly.x1_range, cfg.wiggly.x2_range, cfg.grid_resolution)?;
            let dis = boundary_disagreement(&grid, &cfg.wiggly);
            outcome(&net, history, &model_cfg, seed, variant, net.num_params(), Some((grid, dis)))
        }
        Task::Token => {
            let (tr, te) = generate_token_task(&cfg.token)?;
            let data = Dataset::from_tokens(&tr, &te);
            let model_cfg = cfg.variant_encoder(variant);
            let mut enc = TiedEncoder::new(&model_cfg, seed)?;
            let history = train(&mut enc, &data, &cfg.train)?;
            outcome(&enc, history, &model_cfg, seed, variant, enc.num_params(), None)
        }
        Task::SubspaceValidation => {
            Err(CliError::Config("task subspace-validation has no training runs; use `validate`".into()))
        }
    }
}

/// Trains both variants for one seed. Pure: nothing is written.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<SeedOutcome> {
    let plain = run_variant(cfg, seed, Variant::Plain)?;
    let proj = run_variant(cfg, seed, Variant::Proj)?;
    let comparison = compare_runs(&plain.history, &proj.history)?;
    Ok(SeedOutcome { seed, plain, proj, comparison })
}

/// Runs every seed, in parallel on `threads` workers (all cores when `None`).
pub fn run_seeds(cfg: &ExperimentConfig, threads: Option<usize>) -> CliResult<Vec<SeedOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    pool.install(|| cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect())
}

pub fn seed_dir(exp_dir: &Path, seed: u64) -> PathBuf {
    exp_dir.join(seed.to_string())
}

pub fn variant_dir(exp_dir: &Path, seed: u64, v: Variant) -> PathBuf {
    seed_dir(exp_dir, seed).join(v.name())
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents).map_err(|e| CliError::Other(format!("writing {}: {e}", path.display())))?;
    written.push(path);
    Ok(())
}

/// Writes one seed's artifacts and returns the paths written.
pub fn write_seed(exp_dir: &Path, out: &SeedOutcome) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    for v in Variant::ALL {
        let dir = variant_dir(exp_dir, out.seed, v);
        let o = out.variant(v);
        write(dir.join("history.csv"), &o.history.to_csv(), &mut written)?;
        write(dir.join("history.json"), &o.history.to_json()?, &mut written)?;
        write(dir.join("checkpoint.json"), &o.checkpoint.to_json()?, &mut written)?;
        write(dir.join("summary.json"), &serde_json::to_string_pretty(&o.summary)?, &mut written)?;
        if let Some(g) = &o.grid {
            write(dir.join("grid.csv"), &g.to_csv(), &mut written)?;
        }
    }
    let dir = seed_dir(exp_dir, out.seed);
    write(dir.join("comparison.json"), &serde_json::to_string_pretty(&out.comparison)?, &mut written)?;
    write(dir.join("diffs.csv"), &out.comparison.diffs_csv(), &mut written)?;
    Ok(written)
}

pub const SUMMARY_HEADER: &str =
    "seed,variant,num_params,accuracy,precision,recall,f1,train_loss,val_loss,disagreement";

fn summary_row(s: &VariantSummary) -> String {
    let a = &s.averaged;
    let dis = s.disagreement.map(|d| d.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        s.seed,
        s.variant.name(),
        s.num_params,
        a.accuracy,
        a.precision,
        a.recall,
        a.f1,
        a.train_loss,
        a.val_loss,
        dis
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub task: Task,
    pub seeds: Vec<u64>,
    pub variants: Vec<String>,
    /// Paths relative to the experiment directory, sorted.
    pub files: Vec<String>,
}

fn relative(exp_dir: &Path, paths: &[PathBuf]) -> Vec<String> {
    let mut v: Vec<String> =
        paths.iter().map(|p| p.strip_prefix(exp_dir).unwrap_or(p).to_string_lossy().replace('\\', "/")).collect();
    v.sort();
    v
}

/// Writes everything for `outcomes` under the experiment directory, emits the
/// plots and finally the manifest.
pub fn write_experiment(cfg: &ExperimentConfig, outcomes: &[SeedOutcome]) -> CliResult<Manifest> {
    let exp_dir = cfg.experiment_dir();
    let mut written = Vec::new();
    write(exp_dir.join("config.toml"), &cfg.to_toml(), &mut written)?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for o in outcomes {
        written.extend(write_seed(&exp_dir, o)?);
        for v in Variant::ALL {
            summary.push_str(&summary_row(&o.variant(v).summary));
            summary.push('\n');
        }
    }
    write(exp_dir.join("summary.csv"), &summary, &mut written)?;
    written.extend(crate::plots::emit_plots(&exp_dir)?);
    let manifest = Manifest {
        experiment: cfg.experiment.clone(),
        task: cfg.task,
        seeds: cfg.seeds.clone(),
        variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
        files: relative(&exp_dir, &written),
    };
    let mut manifest_written = Vec::new();
    write(exp_dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?, &mut manifest_written)?;
    Ok(manifest)
}

/// Text printed by `--dry-run`.
pub fn describe(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    writeln!(s, "# resolved configuration").unwrap();
    s.push_str(&cfg.to_toml());
    writeln!(s, "\n# would write to {}", cfg.experiment_dir().display()).unwrap();
    let runs = match cfg.task {
        Task::SubspaceValidation => "heuristic validation".to_string(),
        _ => format!("{} seeds x {{plain, proj}}", cfg.seeds.len()),
    };
    writeln!(s, "# runs: {runs}").unwrap();
    s
}

/// One line of the cross-seed comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub f1_plain: f64,
    pub f1_proj: f64,
    pub accuracy_diff: f64,
    pub val_loss_diff: f64,
    pub disagreement_plain: Option<f64>,
    pub disagreement_proj: Option<f64>,
}

impl SeedComparison {
    pub fn proj_f1_at_least_plain(&self) -> bool {
        self.f1_proj >= self.f1_plain
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSeedSummary {
    pub seeds: Vec<SeedComparison>,
    pub proj_f1_wins: usize,
    pub median_disagreement_plain: Option<f64>,
    pub median_disagreement_proj: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn cross_seed_summary(rows: Vec<SeedComparison>) -> CrossSeedSummary {
    let med = |f: fn(&SeedComparison) -> Option<f64>| {
        let v: Option<Vec<f64>> = rows.iter().map(f).collect();
        v.and_then(|v| median(&v))
    };
    CrossSeedSummary {
        proj_f1_wins: rows.iter().filter(|r| r.proj_f1_at_least_plain()).count(),
        median_disagreement_plain: med(|r| r.disagreement_plain),
        median_disagreement_proj: med(|r| r.disagreement_proj),
        seeds: rows,
    }
}

impl CrossSeedSummary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "seed,f1_plain,f1_proj,f1_diff,accuracy_diff,val_loss_diff,disagreement_plain,disagreement_proj,proj_f1_at_least_plain\n",
        );
        let opt = |v: Option<f64>| v.map(|d| d.to_string()).unwrap_or_default();
        for r in &self.seeds {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.f1_plain,
                r.f1_proj,
                r.f1_proj - r.f1_plain,
                r.accuracy_diff,
                r.val_loss_diff,
                opt(r.disagreement_plain),
                opt(r.disagreement_proj),
                r.proj_f1_at_least_plain()
            )
            .unwrap();
        }
        s
    }

    pub fn report(&self) -> String {
        let mut s = format!("proj epoch-averaged F1 >= plain on {}/{} seeds\n", self.proj_f1_wins, self.seeds.len());
        if let (Some(a), Some(b)) = (self.median_disagreement_plain, self.median_disagreement_proj) {
            writeln!(s, "median boundary disagreement: plain {a:.4}, proj {b:.4}").unwrap();
        }
        s
    }
}

pub fn seed_comparison(seed: u64, plain: &VariantSummary, proj: &VariantSummary) -> SeedComparison {
    SeedComparison {
        seed,
        f1_plain: plain.averaged.f1,
        f1_proj: proj.averaged.f1,
        accuracy_diff: proj.averaged.accuracy - plain.averaged.accuracy,
        val_loss_diff: proj.averaged.val_loss - plain.averaged.val_loss,
        disagreement_plain: plain.disagreement,
        disagreement_proj: proj.disagreement,
    }
}

/// Reads a finished experiment directory, rebuilds the per-seed comparison from
/// the exported histories and writes `comparison_summary.{csv,json}`.
pub fn compare_dir(exp_dir: &Path) -> CliResult<CrossSeedSummary> {
    let cfg_path = exp_dir.join("config.toml");
    let mut required = vec![cfg_path.clone()];
    let cfg = if cfg_path.exists() { Some(ExperimentConfig::load(&cfg_path)?) } else { None };
    if let Some(cfg) = &cfg {
        for &seed in &cfg.seeds {
            for v in Variant::ALL {
                required.push(variant_dir(exp_dir, seed, v).join("history.csv"));
                required.push(variant_dir(exp_dir, seed, v).join("summary.json"));
            }
        }
    }
    let missing: Vec<PathBuf> = required.into_iter().filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        return Err(CliError::MissingInputs(missing));
    }
    let cfg = cfg.expect("config present");
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let load = |v: Variant| -> CliResult<(RunHistory, VariantSummary)> {
            let dir = variant_dir(exp_dir, seed, v);
            let h = RunHistory::from_csv(&fs::read_to_string(dir.join("history.csv"))?, cfg.train.clone())?;
            let s: VariantSummary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
            Ok((h, s))
        };
        let (ha, sa) = load(Variant::Plain)?;
        let (hb, sb) = load(Variant::Proj)?;
        let report = compare_runs(&ha, &hb)?;
        let mut row = seed_comparison(seed, &sa, &sb);
        // Recomputed from the CSV histories rather than trusted from the summaries.
        row.f1_plain = report.averaged_a.f1;
        row.f1_proj = report.averaged_b.f1;
        row.accuracy_diff = report.mean_diff("accuracy");
        row.val_loss_diff = report.mean_diff("val_loss");
        rows.push(row);
    }
    let summary = cross_seed_summary(rows);
    fs::write(exp_dir.join("comparison_summary.csv"), summary.to_csv())?;
    fs::write(exp_dir.join("comparison_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(task: &str) -> ExperimentConfig {
        let text = format!(
            "experiment = \"tiny\"\ntask = \"{task}\"\nseeds = [3]\ngrid_resolution = 8\n\n[train]\nepochs = 2\n\n\
             [wiggly]\nn_train = 64\nn_test = 32\n\n[toynet]\nhidden = 8\nlayers = 2\n\n\
             [token]\nn_train = 40\nn_test = 20\n\n[encoder]\nd = 8\nmlp_hidden = 8\nrefinement_steps = 1\nmultiscale = [2, 4, 6]\n"
        );
        ExperimentConfig::parse(&text).unwrap()
    }

    #[test]
    fn seed_override_reaches_every_component() {
        let c = config_for_seed(&tiny("wiggly"), 11);
        assert_eq!((c.train.seed, c.wiggly.seed, c.token.seed, c.subspace.seed), (11, 11, 11, 11));
        assert_eq!(c.seeds, vec![11]);
    }

    #[test]
    fn wiggly_seed_has_grids_and_matching_epochs() {
        let out = run_seed(&tiny("wiggly"), 3).unwrap();
        assert_eq!(out.plain.history.records.len(), 2);
        assert!(out.plain.grid.is_some() && out.proj.grid.is_some());
        assert!(out.proj.summary.num_params > out.plain.summary.num_params);
        assert!(out.proj.history.records[0].alpha.is_some());
        assert!(out.plain.history.records[0].alpha.is_none());
        assert_eq!(out.comparison.epoch_diffs.len(), 2);
    }

    #[test]
    fn token_seed_exports_multiscale_weights() {
        let out = run_seed(&tiny("token"), 3).unwrap();
        assert!(out.plain.grid.is_none());
        for r in &out.proj.history.records {
            assert_eq!(r.multiscale_weights.len(), 3);
            assert!(r.eta.is_some());
        }
        assert!(out.plain.history.records[0].multiscale_weights.is_empty());
    }

    #[test]
    fn runs_are_deterministic_under_parallelism() {
        let mut cfg = tiny("wiggly");
        cfg.seeds = vec![1, 2];
        let a = run_seeds(&cfg, Some(2)).unwrap();
        let b = run_seeds(&cfg, Some(1)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.proj.history.to_csv(), y.proj.history.to_csv());
            assert_eq!(x.plain.grid, y.plain.grid);
        }
    }

    #[test]
    fn median_of_even_and_odd_lists() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
