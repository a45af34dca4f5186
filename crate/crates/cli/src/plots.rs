//! Static plots for a finished experiment directory.

use std::fs;
use std::path::{Path, PathBuf};

use mgproj::models::BoundaryGrid;
use mgproj::training::{RunHistory, COMPARED_METRICS};

use crate::config::{ExperimentConfig, Task, Variant};
use crate::error::{CliError, CliResult};
use crate::experiment::{seed_dir, variant_dir};
use crate::svg::{bar_chart, class_heatmap, line_chart, Series};

/// Files written to `<seed>/plots/` for each task.
pub fn plot_manifest(task: Task) -> Vec<&'static str> {
    match task {
        Task::Wiggly => vec![
            "metrics.svg",
            "losses.svg",
            "grad_norm.svg",
            "boundary_plain.svg",
            "boundary_proj.svg",
            "alpha.svg",
            "diff.svg",
        ],
        Task::Token => vec!["metrics.svg", "losses.svg", "grad_norm.svg", "alpha.svg", "diff.svg"],
        Task::SubspaceValidation => Vec::new(),
    }
}

fn required_inputs(exp_dir: &Path, cfg: &ExperimentConfig) -> Vec<PathBuf> {
    let mut req = Vec::new();
    for &seed in &cfg.seeds {
        for v in Variant::ALL {
            req.push(variant_dir(exp_dir, seed, v).join("history.csv"));
            if cfg.task == Task::Wiggly {
                req.push(variant_dir(exp_dir, seed, v).join("grid.csv"));
            }
        }
        req.push(seed_dir(exp_dir, seed).join("diffs.csv"));
    }
    req
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Other(format!("reading {}: {e}", path.display())))
}

fn series(h: &RunHistory, name: &str, f: impl Fn(&mgproj::training::EpochRecord) -> f64) -> Series {
    Series::new(name, h.records.iter().map(|r| (r.epoch as f64, f(r))).collect())
}

fn metrics_plot(plain: &RunHistory, proj: &RunHistory) -> String {
    let mut s = Vec::new();
    for (tag, h, dashed) in [("plain", plain, true), ("proj", proj, false)] {
        let mk = |m: &str, f: fn(&mgproj::training::EpochRecord) -> f64| {
            let slot = ["accuracy", "precision", "recall", "f1"].iter().position(|x| *x == m).unwrap_or(0);
            let s = series(h, &format!("{m} {tag}"), f).color(slot);
            if dashed {
                s.dashed()
            } else {
                s
            }
        };
        s.push(mk("accuracy", |r| r.accuracy));
        s.push(mk("precision", |r| r.precision));
        s.push(mk("recall", |r| r.recall));
        s.push(mk("f1", |r| r.f1));
    }
    line_chart("Validation metrics", "epoch", "value", &s)
}

fn losses_plot(plain: &RunHistory, proj: &RunHistory) -> String {
    let s = vec![
        series(plain, "train plain", |r| r.train_loss).dashed().color(0),
        series(plain, "val plain", |r| r.val_loss).dashed().color(1),
        series(proj, "train proj", |r| r.train_loss).color(0),
        series(proj, "val proj", |r| r.val_loss).color(1),
    ];
    line_chart("Cross-entropy loss", "epoch", "loss", &s)
}

fn grad_plot(plain: &RunHistory, proj: &RunHistory) -> String {
    let s =
        vec![series(plain, "plain", |r| r.grad_norm).dashed().color(0), series(proj, "proj", |r| r.grad_norm).color(0)];
    line_chart("Mean gradient norm", "epoch", "norm", &s)
}

/// Mixing weights of the projector run: α for the feature projector, the
/// simplex weights for multi-scale projection, and η when it is recorded.
fn alpha_plot(proj: &RunHistory) -> String {
    let mut s = Vec::new();
    if proj.records.iter().any(|r| r.alpha.is_some()) {
        s.push(series(proj, "alpha", |r| r.alpha.unwrap_or(f64::NAN)));
    }
    let k = proj.records.first().map_or(0, |r| r.multiscale_weights.len());
    for i in 0..k {
        s.push(Series::new(
            format!("weight {i}"),
            proj.records.iter().map(|r| (r.epoch as f64, r.multiscale_weights[i])).collect(),
        ));
    }
    if proj.records.iter().any(|r| r.eta.is_some()) {
        s.push(series(proj, "eta", |r| r.eta.unwrap_or(f64::NAN)).dashed());
    }
    line_chart("Projector mixing weights", "epoch", "weight", &s)
}

fn diff_plot(diffs_csv: &str) -> CliResult<String> {
    let mut lines = diffs_csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header.len() != COMPARED_METRICS.len() + 1 {
        return Err(CliError::Other(format!("diffs.csv: unexpected header {header:?}")));
    }
    let mut epochs = Vec::new();
    let mut cols = vec![Vec::new(); COMPARED_METRICS.len()];
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(CliError::Other(format!("diffs.csv: malformed row {line:?}")));
        }
        epochs.push(f[0].to_string());
        for (c, v) in cols.iter_mut().zip(&f[1..]) {
            c.push(v.parse::<f64>().map_err(|e| CliError::Other(format!("diffs.csv: {e}")))?);
        }
    }
    let series: Vec<(String, Vec<f64>)> = COMPARED_METRICS.iter().map(|m| m.to_string()).zip(cols).collect();
    Ok(bar_chart("Epoch-wise difference (proj - plain)", "epoch", "difference", &epochs, &series))
}

fn boundary_plot(title: &str, grid: &BoundaryGrid, cfg: &ExperimentConfig) -> String {
    let [a, b] = cfg.wiggly.x1_range;
    let curve: Vec<(f64, f64)> = (0..=400)
        .map(|k| {
            let x = a + (b - a) * k as f64 / 400.0;
            (x, cfg.wiggly.boundary(x))
        })
        .collect();
    class_heatmap(title, grid.x1_range, grid.x2_range, grid.resolution, &grid.classes, &curve)
}

/// Writes every plot in [`plot_manifest`] for each seed of the experiment in
/// `exp_dir`. All missing inputs are reported together.
pub fn emit_plots(exp_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let cfg_path = exp_dir.join("config.toml");
    if !cfg_path.exists() {
        return Err(CliError::MissingInputs(vec![cfg_path]));
    }
    let cfg = ExperimentConfig::load(&cfg_path)?;
    let missing: Vec<PathBuf> = required_inputs(exp_dir, &cfg).into_iter().filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        return Err(CliError::MissingInputs(missing));
    }
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let load = |v: Variant| -> CliResult<RunHistory> {
            Ok(RunHistory::from_csv(&read(&variant_dir(exp_dir, seed, v).join("history.csv"))?, cfg.train.clone())?)
        };
        let plain = load(Variant::Plain)?;
        let proj = load(Variant::Proj)?;
        let dir = seed_dir(exp_dir, seed).join("plots");
        fs::create_dir_all(&dir)?;
        let mut put = |name: &str, svg: String| -> CliResult<()> {
            let p = dir.join(name);
            fs::write(&p, svg)?;
            written.push(p);
            Ok(())
        };
        put("metrics.svg", metrics_plot(&plain, &proj))?;
        put("losses.svg", losses_plot(&plain, &proj))?;
        put("grad_norm.svg", grad_plot(&plain, &proj))?;
        if cfg.task == Task::Wiggly {
            for v in Variant::ALL {
                let grid = BoundaryGrid::from_csv(&read(&variant_dir(exp_dir, seed, v).join("grid.csv"))?)?;
                let title = format!("Decision boundary, {} (seed {seed})", v.name());
                put(&format!("boundary_{}.svg", v.name()), boundary_plot(&title, &grid, &cfg))?;
            }
        }
        put("alpha.svg", alpha_plot(&proj))?;
        put("diff.svg", diff_plot(&read(&seed_dir(exp_dir, seed).join("diffs.csv"))?)?)?;
    }
    Ok(written)
}
