//! Optimization, schedules, metrics, run histories, comparisons and the Monte
//! Carlo checks of the smoothing heuristics.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::data::{LabeledPoint2D, SubspaceMixture, TokenSample, WigglyConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{argmax_class, BoundaryGrid, Classifier};
use crate::seed::{rng_for, stream};

/// Mean softmax cross-entropy of `n×C` logits against class indices, with the
/// row maximum subtracted before exponentiation.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += log_sum - (row[y] - max);
    }
    total / labels.len() as f64
}

/// Class index used by the models: `+1 → 1`, `−1 → 0`.
pub fn class_of(label: i8) -> usize {
    usize::from(label > 0)
}

pub fn label_of(class: usize) -> i8 {
    if class == 1 {
        1
    } else {
        -1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = store.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every trainable parameter from its stored gradient.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (k, p) in store.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        let g = p.grad.data();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaMode {
    Scheduled,
    Learnable,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub eta_mode: EtaMode,
    pub shuffle: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            lr_start: 0.01,
            lr_end: 0.0001,
            seed: 0,
            eta_mode: EtaMode::Scheduled,
            shuffle: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::Config(format!(
                "learning-rate bounds must satisfy lr_start >= lr_end > 0, got ({}, {})",
                self.lr_start, self.lr_end
            )));
        }
        if let EtaMode::Fixed(v) = self.eta_mode {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("fixed eta {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Linear interpolation from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.lr_start;
    }
    let frac = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_start * (1.0 - frac) + cfg.lr_end * frac
}

/// `η = 1 − 0.8 · epoch / max_epochs`.
pub fn eta_schedule(epoch: usize, max_epochs: usize) -> f64 {
    if max_epochs == 0 {
        return 1.0;
    }
    1.0 - 0.8 * epoch as f64 / max_epochs as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy, precision, recall and F1 with class 1 as the positive class.
/// Precision, recall and F1 are 0 when their denominator is 0.
pub fn confusion_metrics(preds: &[usize], labels: &[usize]) -> ConfusionMetrics {
    assert_eq!(preds.len(), labels.len(), "prediction and label counts differ");
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    ConfusionMetrics { accuracy: ratio(tp + tn, preds.len()), precision, recall, f1 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub grad_norm: f64,
    pub alpha: Option<f64>,
    pub multiscale_weights: Vec<f64>,
    pub eta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub config: TrainConfig,
    pub records: Vec<EpochRecord>,
    /// Seconds per epoch. Exported to JSON only, so CSV exports stay byte-stable.
    pub wall_clock: Vec<f64>,
}

impl RunHistory {
    /// Fixed column order; one `ms_weight_<i>` column per multi-scale weight.
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "epoch",
            "lr",
            "eta",
            "train_loss",
            "val_loss",
            "accuracy",
            "precision",
            "recall",
            "f1",
            "grad_norm",
            "alpha",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        let k = self.records.first().map_or(0, |r| r.multiscale_weights.len());
        cols.extend((0..k).map(|i| format!("ms_weight_{i}")));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = self.csv_header();
        s.push('\n');
        for r in &self.records {
            write!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                opt(r.eta),
                r.train_loss,
                r.val_loss,
                r.accuracy,
                r.precision,
                r.recall,
                r.f1,
                r.grad_norm,
                opt(r.alpha)
            )
            .expect("write to string");
            for w in &r.multiscale_weights {
                write!(s, ",{w}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }

    /// Parses a CSV written by [`RunHistory::to_csv`]; the config is not part of the CSV.
    pub fn from_csv(text: &str, config: TrainConfig) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty history CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 11 || cols[0] != "epoch" {
            return Err(Error::Config(format!("unrecognised history header {header:?}")));
        }
        let mut records = Vec::new();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Config(format!("history CSV line {}: cannot parse {line:?}", k + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            let opt = |i: usize| if f[i].is_empty() { Ok(None) } else { num(i).map(Some) };
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                lr: num(1)?,
                eta: opt(2)?,
                train_loss: num(3)?,
                val_loss: num(4)?,
                accuracy: num(5)?,
                precision: num(6)?,
                recall: num(7)?,
                f1: num(8)?,
                grad_norm: num(9)?,
                alpha: opt(10)?,
                multiscale_weights: (11..cols.len()).map(num).collect::<Result<_>>()?,
            });
        }
        let wall_clock = vec![0.0; records.len()];
        Ok(Self { config, records, wall_clock })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Arithmetic mean of each metric across all epochs.
pub fn averaged_metrics(history: &RunHistory) -> Result<AveragedMetrics> {
    let n = history.records.len();
    if n == 0 {
        return Err(Error::Config("cannot average an empty history".into()));
    }
    let mean = |f: fn(&EpochRecord) -> f64| history.records.iter().map(f).sum::<f64>() / n as f64;
    Ok(AveragedMetrics {
        accuracy: mean(|r| r.accuracy),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        train_loss: mean(|r| r.train_loss),
        val_loss: mean(|r| r.val_loss),
    })
}

/// Train and test splits of one task.
#[derive(Clone, Debug)]
pub struct Dataset<I> {
    pub train_x: Vec<I>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<I>,
    pub test_y: Vec<usize>,
}

impl Dataset<[f64; 2]> {
    pub fn from_points(train: &[LabeledPoint2D], test: &[LabeledPoint2D]) -> Self {
        let split = |pts: &[LabeledPoint2D]| {
            (pts.iter().map(|p| [p.x1, p.x2]).collect(), pts.iter().map(|p| class_of(p.label)).collect())
        };
        let (train_x, train_y) = split(train);
        let (test_x, test_y) = split(test);
        Self { train_x, train_y, test_x, test_y }
    }
}

impl Dataset<Vec<usize>> {
    pub fn from_tokens(train: &[TokenSample], test: &[TokenSample]) -> Self {
        let split = |s: &[TokenSample]| {
            (s.iter().map(|t| t.tokens.clone()).collect(), s.iter().map(|t| class_of(t.label)).collect())
        };
        let (train_x, train_y) = split(train);
        let (test_x, test_y) = split(test);
        Self { train_x, train_y, test_x, test_y }
    }
}

impl<I> Dataset<I> {
    fn validate(&self) -> Result<()> {
        if self.train_x.is_empty() || self.test_x.is_empty() {
            return Err(Error::Config("train and test splits must be nonempty".into()));
        }
        if self.train_x.len() != self.train_y.len() || self.test_x.len() != self.test_y.len() {
            return Err(Error::Shape("input and label counts differ".into()));
        }
        Ok(())
    }
}

/// Loss and metrics of a model on the full test split.
pub fn evaluate<M: Classifier>(
    model: &M,
    data: &Dataset<M::Input>,
    eta: Option<f64>,
) -> Result<(f64, ConfusionMetrics)> {
    let mut tape = Tape::new();
    let refs: Vec<&M::Input> = data.test_x.iter().collect();
    let logits = model.logits(&mut tape, &refs, eta)?;
    let values = tape.value(logits);
    let loss = cross_entropy(values, &data.test_y);
    if !loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    let preds: Vec<usize> = (0..values.rows()).map(|i| argmax_class(values.row(i))).collect();
    Ok((loss, confusion_metrics(&preds, &data.test_y)))
}

fn eta_for_epoch<M: Classifier>(model: &M, cfg: &TrainConfig, epoch: usize) -> Result<(Option<f64>, Option<f64>)> {
    // (value passed to the model, value recorded)
    if !model.uses_eta() {
        return Ok((None, None));
    }
    Ok(match cfg.eta_mode {
        EtaMode::Scheduled => {
            let v = eta_schedule(epoch, cfg.epochs.saturating_sub(1));
            (Some(v), Some(v))
        }
        EtaMode::Fixed(v) => (Some(v), Some(v)),
        EtaMode::Learnable => {
            let v = model
                .learned_eta()
                .ok_or_else(|| Error::Config("eta_mode = learnable but the model has no learnable eta".into()))?;
            (None, Some(v))
        }
    })
}

/// Minibatch Adam training with per-epoch evaluation on the full test split.
pub fn train<M: Classifier>(model: &mut M, data: &Dataset<M::Input>, cfg: &TrainConfig) -> Result<RunHistory> {
    cfg.validate()?;
    data.validate()?;
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let mut rng = rng_for(cfg.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..data.train_x.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut wall_clock = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = lr_schedule(cfg, epoch);
        let (eta_in, _) = eta_for_epoch(model, cfg, epoch)?;
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut norm_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<&M::Input> = chunk.iter().map(|&i| &data.train_x[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.train_y[i]).collect();
            let mut tape = Tape::new();
            let at = |e: Error| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, batch {b}")),
                e => e,
            };
            let logits = model.logits(&mut tape, &inputs, eta_in).map_err(at)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            let store = model.params_mut();
            store.zero_grad();
            tape.backward(loss, store)?;
            let norm = store.grad_norm();
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}, batch {b}")));
            }
            adam_step(store, &mut adam, lr);
            loss_sum += value * chunk.len() as f64;
            norm_sum += norm;
            batches += 1;
        }
        let (eta_eval, eta_record) = eta_for_epoch(model, cfg, epoch)?;
        let (val_loss, m) = evaluate(model, data, eta_eval)?;
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / data.train_x.len() as f64,
            val_loss,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            grad_norm: norm_sum / batches as f64,
            alpha: model.alpha(),
            multiscale_weights: model.multiscale_weights(),
            eta: eta_record,
        });
        wall_clock.push(start.elapsed().as_secs_f64());
    }
    Ok(RunHistory { config: cfg.clone(), records, wall_clock })
}

/// Fraction of grid nodes whose predicted class differs from the true wiggly label.
pub fn boundary_disagreement(grid: &BoundaryGrid, task: &WigglyConfig) -> f64 {
    let n = grid.resolution;
    let mut wrong = 0usize;
    for i in 0..n {
        for j in 0..n {
            if grid.class_at(i, j) != task.true_label(grid.x1(j), grid.x2(i)) {
                wrong += 1;
            }
        }
    }
    wrong as f64 / (n * n) as f64
}

/// Per-class statistics of `z′ = wᵀ(P + α(I − P))h`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassShrink {
    pub label: i8,
    pub count: usize,
    pub measured_var: f64,
    pub predicted_var: f64,
    pub measured_mean: f64,
    /// `w_cᵀ s_y`, the margin the smoothing should preserve.
    pub predicted_mean: f64,
    pub mean_std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceShrinkReport {
    pub alpha: f64,
    /// `‖(I − P)w‖`.
    pub w_fine_norm: f64,
    pub classes: Vec<ClassShrink>,
}

impl VarianceShrinkReport {
    /// Measured over predicted variance, averaged over classes.
    pub fn variance_ratio(&self) -> f64 {
        self.classes.iter().map(|c| c.measured_var / c.predicted_var).sum::<f64>() / self.classes.len() as f64
    }

    /// Whether every class mean lies within 3 standard errors of its prediction.
    pub fn margin_preserved(&self) -> bool {
        self.classes.iter().all(|c| (c.measured_mean - c.predicted_mean).abs() <= 3.0 * c.mean_std_error)
    }
}

fn split_weights(mix: &SubspaceMixture, w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let f = mix.basis.rows();
    if w.len() != f {
        return Err(Error::Shape(format!("classifier vector has length {}, expected {f}", w.len())));
    }
    let coarse = mix.basis.transpose().matmul(&Matrix::column_vector(w))?.into_data();
    let w_sq: f64 = w.iter().map(|v| v * v).sum();
    let c_sq: f64 = coarse.iter().map(|v| v * v).sum();
    Ok((coarse, (w_sq - c_sq).max(0.0).sqrt()))
}

/// Scores `z′` for every sample, with `B` the mixture basis and `P = BBᵀ`.
fn smoothed_scores(mix: &SubspaceMixture, w: &[f64], w_coarse: &[f64], alpha: f64) -> Vec<f64> {
    let basis_t = mix.basis.transpose();
    (0..mix.samples.rows())
        .map(|i| {
            let h = mix.samples.row(i);
            let coords = basis_t.matmul_unchecked(&Matrix::column_vector(h));
            let coarse: f64 = coords.data().iter().zip(w_coarse).map(|(a, b)| a * b).sum();
            let full: f64 = h.iter().zip(w).map(|(a, b)| a * b).sum();
            coarse + alpha * (full - coarse)
        })
        .collect()
}

/// Empirical versus analytic variance and mean of the smoothed score per class.
pub fn variance_shrink_check(mix: &SubspaceMixture, w: &[f64], alpha: f64) -> Result<VarianceShrinkReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    let (w_coarse, w_fine_norm) = split_weights(mix, w)?;
    let z = smoothed_scores(mix, w, &w_coarse, alpha);
    let predicted_var = alpha * alpha * mix.sigma * mix.sigma * w_fine_norm * w_fine_norm;
    let mut classes = Vec::new();
    for label in [-1i8, 1] {
        let vals: Vec<f64> = z.iter().zip(&mix.labels).filter(|(_, y)| **y == label).map(|(v, _)| *v).collect();
        let n = vals.len();
        if n < 2 {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let s = mix.mean_for(label);
        let predicted_mean: f64 = s.iter().zip(w).map(|(a, b)| a * b).sum();
        classes.push(ClassShrink {
            label,
            count: n,
            measured_var: var,
            predicted_var,
            measured_mean: mean,
            predicted_mean,
            mean_std_error: (var / n as f64).sqrt(),
        });
    }
    Ok(VarianceShrinkReport { alpha, w_fine_norm, classes })
}

/// Linear probe `w = B e₀ + w_f` with `w_f ⟂ range(B)` and `‖w_f‖ = fine_norm`.
/// The complement direction is drawn from `seed`.
pub fn probe_classifier(mix: &SubspaceMixture, fine_norm: f64, seed: u64) -> Result<Vec<f64>> {
    let f = mix.basis.rows();
    let probe = Matrix::seeded_normal(f, 1, seed);
    let comp = Matrix::identity(f).sub(&mix.projector())?.matmul(&probe)?;
    let scale = fine_norm / comp.frobenius_norm();
    Ok((0..f).map(|i| mix.basis.get(i, 0) + scale * comp.data()[i]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRateRow {
    pub alpha: f64,
    pub margin: f64,
    /// `α σ ‖w_f‖`.
    pub noise_scale: f64,
    pub predicted: f64,
    pub empirical: f64,
}

/// Empirical misclassification of `sign(z′)` against `Φ(−margin / (ασ‖w_f‖))`
/// for each `α`. Requires symmetric class means; `y z′ ≤ 0` counts as an error.
pub fn error_rate_vs_gaussian(mix: &SubspaceMixture, w: &[f64], alphas: &[f64]) -> Result<Vec<ErrorRateRow>> {
    let margin_pos: f64 = mix.mean_pos.iter().zip(w).map(|(a, b)| a * b).sum();
    let margin_neg: f64 = mix.mean_neg.iter().zip(w).map(|(a, b)| a * b).sum();
    if (margin_pos + margin_neg).abs() > 1e-9 * (1.0 + margin_pos.abs()) {
        return Err(Error::Config("error-rate prediction needs symmetric class means".into()));
    }
    let (w_coarse, w_fine_norm) = split_weights(mix, w)?;
    alphas
        .iter()
        .map(|&alpha| {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
            }
            let z = smoothed_scores(mix, w, &w_coarse, alpha);
            let errors = z.iter().zip(&mix.labels).filter(|(v, y)| **v * f64::from(**y) <= 0.0).count();
            let noise_scale = alpha * mix.sigma * w_fine_norm;
            let predicted = if noise_scale > 0.0 {
                normal_cdf(-margin_pos / noise_scale)
            } else if margin_pos > 0.0 {
                0.0
            } else if margin_pos < 0.0 {
                1.0
            } else {
                0.5
            };
            Ok(ErrorRateRow {
                alpha,
                margin: margin_pos,
                noise_scale,
                predicted,
                empirical: errors as f64 / z.len() as f64,
            })
        })
        .collect()
}

/// Complementary error function: power series for `|x| < 2.5`, continued
/// fraction (modified Lentz) beyond.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.5 {
        // erf(x) = 2/√π Σ (−1)ⁿ x^(2n+1) / (n! (2n+1))
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        return 1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum;
    }
    // erfc(x) = e^(−x²)/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub const COMPARED_METRICS: [&str; 5] = ["accuracy", "precision", "recall", "f1", "val_loss"];

fn metric(r: &EpochRecord, name: &str) -> f64 {
    match name {
        "accuracy" => r.accuracy,
        "precision" => r.precision,
        "recall" => r.recall,
        "f1" => r.f1,
        "val_loss" => r.val_loss,
        other => unreachable!("unknown metric {other}"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub metric: String,
    pub epoch_a: usize,
    pub value_a: f64,
    pub epoch_b: usize,
    pub value_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochDiff {
    pub epoch: usize,
    /// `b − a` for each entry of [`COMPARED_METRICS`], in order.
    pub diffs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub averaged_a: AveragedMetrics,
    pub averaged_b: AveragedMetrics,
    pub epoch_diffs: Vec<EpochDiff>,
    pub best_epochs: Vec<BestEpoch>,
    /// Epochs where `b` beats `a`, per metric (lower is better for `val_loss`).
    pub wins_b: Vec<(String, usize)>,
}

impl ComparisonReport {
    /// Mean of `b − a` over epochs for one metric.
    pub fn mean_diff(&self, metric: &str) -> f64 {
        let k = COMPARED_METRICS.iter().position(|m| *m == metric).expect("known metric");
        self.epoch_diffs.iter().map(|d| d.diffs[k]).sum::<f64>() / self.epoch_diffs.len() as f64
    }

    /// CSV of per-epoch differences: `epoch,<metric>_diff,…`.
    pub fn diffs_csv(&self) -> String {
        let mut s = String::from("epoch");
        for m in COMPARED_METRICS {
            write!(s, ",{m}_diff").expect("write to string");
        }
        s.push('\n');
        for d in &self.epoch_diffs {
            write!(s, "{}", d.epoch).expect("write to string");
            for v in &d.diffs {
                write!(s, ",{v}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }
}

/// Averaged metrics, epoch-wise differences `b − a`, best epochs and win counts.
pub fn compare_runs(a: &RunHistory, b: &RunHistory) -> Result<ComparisonReport> {
    if a.records.len() != b.records.len() {
        return Err(Error::Config(format!(
            "cannot compare histories of {} and {} epochs",
            a.records.len(),
            b.records.len()
        )));
    }
    let averaged_a = averaged_metrics(a)?;
    let averaged_b = averaged_metrics(b)?;
    let epoch_diffs = a
        .records
        .iter()
        .zip(&b.records)
        .map(|(ra, rb)| EpochDiff {
            epoch: ra.epoch,
            diffs: COMPARED_METRICS.iter().map(|m| metric(rb, m) - metric(ra, m)).collect(),
        })
        .collect();
    let best = |h: &RunHistory, m: &str| {
        let lower = m == "val_loss";
        let mut best = (h.records[0].epoch, metric(&h.records[0], m));
        for r in &h.records[1..] {
            let v = metric(r, m);
            if (lower && v < best.1) || (!lower && v > best.1) {
                best = (r.epoch, v);
            }
        }
        best
    };
    let best_epochs = COMPARED_METRICS
        .iter()
        .map(|m| {
            let (epoch_a, value_a) = best(a, m);
            let (epoch_b, value_b) = best(b, m);
            BestEpoch { metric: m.to_string(), epoch_a, value_a, epoch_b, value_b }
        })
        .collect();
    let wins_b = COMPARED_METRICS
        .iter()
        .map(|m| {
            let lower = *m == "val_loss";
            let wins = a
                .records
                .iter()
                .zip(&b.records)
                .filter(|(ra, rb)| {
                    let (va, vb) = (metric(ra, m), metric(rb, m));
                    if lower {
                        vb < va
                    } else {
                        vb > va
                    }
                })
                .count();
            (m.to_string(), wins)
        })
        .collect();
    Ok(ComparisonReport { averaged_a, averaged_b, epoch_diffs, best_epochs, wins_b })
}
