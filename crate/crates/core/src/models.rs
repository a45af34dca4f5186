//! Trainable classifiers: an MLP with shared residual pseudo-projection
//! ([`ToyNet`]) and a weight-tied single-block attention encoder with a
//! post-refinement projector correction ([`TiedEncoder`]).
//!
//! Both models own their [`ParamStore`]. Plain-network parameters are drawn from
//! the model-init stream and projector parameters from a separate stream, so a
//! plain and a projector variant built from the same seed share every plain
//! weight bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::autodiff::{logistic, ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::projectors::{
    residual_correction, BoundDual, BoundMultiScale, BoundSequence, DualProjector, FeatureProjector,
    MultiScaleProjector, SequenceProjector, DEFAULT_EPS,
};
use crate::seed::{rng_for, stream};

/// A binary classifier producing `n×2` logits (column 1 is the positive class).
pub trait Classifier {
    type Input;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Logits for a batch. `eta` is the residual-correction strength; `None`
    /// asks the model to use its learned value. Models without a correction path
    /// ignore it.
    fn logits(&self, tape: &mut Tape, batch: &[&Self::Input], eta: Option<f64>) -> Result<Var>;

    /// Net-level damping `α`, if the model has one.
    fn alpha(&self) -> Option<f64> {
        None
    }

    /// Multi-scale simplex weights, empty if the model has none.
    fn multiscale_weights(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Whether `eta` affects the forward pass.
    fn uses_eta(&self) -> bool {
        false
    }

    /// Current learned `η`, if the model learns it.
    fn learned_eta(&self) -> Option<f64> {
        None
    }
}

/// Index of the predicted class; ties resolve to class 0 (label −1).
pub fn argmax_class(row: &[f64]) -> usize {
    usize::from(row[1] > row[0])
}

/// Weight initialisation of dense layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// `W ~ N(0, 1/fan_in)`, zero bias.
    Normal,
    /// `W, b ~ U(±1/√fan_in)`.
    Uniform,
}

/// Initialisation of the restriction `Q*` relative to the prolongation `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictionInit {
    /// `Q* = Qᵀ` plus small noise: starts near an orthogonal projector.
    Transpose,
    /// `Q*` drawn independently of `Q`: starts oblique.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyNetConfig {
    /// Hidden width `D`.
    pub hidden: usize,
    /// Number of hidden layers `L`.
    pub layers: usize,
    pub use_projector: bool,
    /// Coarse width `D_c` of the shared projector.
    pub coarse_dim: usize,
    pub eps: f64,
    pub n_proj_steps: usize,
    pub alpha_logit_init: f64,
    pub init: WeightInit,
    pub restriction_init: RestrictionInit,
}

impl Default for ToyNetConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 3,
            use_projector: false,
            coarse_dim: 4,
            eps: DEFAULT_EPS,
            n_proj_steps: 1,
            alpha_logit_init: 0.0,
            init: WeightInit::Normal,
            restriction_init: RestrictionInit::Transpose,
        }
    }
}

impl ToyNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("toynet: hidden and layers must be >= 1".into()));
        }
        if self.use_projector {
            if self.coarse_dim == 0 || self.coarse_dim >= self.hidden {
                return Err(Error::Config(format!(
                    "toynet: coarse_dim {} must satisfy 1 <= coarse_dim < hidden {}",
                    self.coarse_dim, self.hidden
                )));
            }
            if self.n_proj_steps == 0 {
                return Err(Error::Config("toynet: n_proj_steps must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl rand::Rng) -> Self {
        Self::with_init(store, name, fan_in, fan_out, WeightInit::Normal, rng)
    }

    fn with_init(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: WeightInit,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let (w, b) = match init {
            WeightInit::Normal => (Matrix::random_normal(fan_in, fan_out, scale, rng), Matrix::zeros(1, fan_out)),
            WeightInit::Uniform => {
                let w = Matrix::random_uniform(fan_in, fan_out, scale, rng);
                (w, Matrix::random_uniform(1, fan_out, scale, rng))
            }
        };
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), b);
        Self { weight, bias }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// MLP `2 → D (×L, tanh) → 2` with an optional shared projector after each hidden layer.
#[derive(Clone, Debug)]
pub struct ToyNet {
    config: ToyNetConfig,
    store: ParamStore,
    hidden: Vec<Dense>,
    output: Dense,
    projector: Option<DualProjector>,
    projector_active: bool,
}

impl ToyNet {
    pub fn new(config: &ToyNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = rng_for(seed, stream::MODEL_INIT);
        let mut hidden = Vec::with_capacity(config.layers);
        let mut fan_in = 2;
        for l in 0..config.layers {
            let name = format!("toynet.layer{l}");
            hidden.push(Dense::with_init(&mut store, &name, fan_in, config.hidden, config.init, &mut rng));
            fan_in = config.hidden;
        }
        let output = Dense::with_init(&mut store, "toynet.output", config.hidden, 2, config.init, &mut rng);
        let projector = if config.use_projector {
            let mut prng = rng_for(seed, stream::PROJECTOR_INIT);
            let (d, dc, eps) = (config.hidden, config.coarse_dim, config.eps);
            let prefix = "toynet.proj.feature";
            let feat = match config.restriction_init {
                RestrictionInit::Transpose => FeatureProjector::new(&mut store, prefix, d, dc, eps, &mut prng)?,
                RestrictionInit::Independent => {
                    FeatureProjector::new_independent(&mut store, prefix, d, dc, eps, &mut prng)?
                }
            };
            Some(DualProjector::new(
                &mut store,
                "toynet.proj",
                Some(feat),
                None,
                config.alpha_logit_init,
                config.n_proj_steps,
            )?)
        } else {
            None
        };
        Ok(Self { config: config.clone(), store, hidden, output, projector, projector_active: true })
    }

    pub fn config(&self) -> &ToyNetConfig {
        &self.config
    }

    pub fn projector(&self) -> Option<&DualProjector> {
        self.projector.as_ref()
    }

    /// Bypasses the projector without removing its parameters.
    pub fn set_projector_active(&mut self, active: bool) {
        self.projector_active = active;
    }

    pub fn num_params(&self) -> usize {
        self.store.iter().map(|p| p.value.len()).sum()
    }

    /// Tape forward on an `n×2` input node.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if tape.shape(x).1 != 2 {
            return shape_err(format!("toynet expects n×2 inputs, got {:?}", tape.shape(x)));
        }
        let bound: Option<BoundDual> = match (&self.projector, self.projector_active) {
            (Some(p), true) => Some(p.bind(tape, &self.store)?),
            _ => None,
        };
        let mut h = x;
        for layer in &self.hidden {
            let pre = layer.forward(tape, &self.store, h)?;
            h = tape.tanh(pre);
            if let Some(b) = &bound {
                let n = tape.shape(h).0;
                h = b.apply_rows(tape, h, n)?;
            }
        }
        self.output.forward(tape, &self.store, h)
    }

    /// Logits for plain coordinates, without keeping the tape.
    pub fn predict_logits(&self, points: &[[f64; 2]]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let x = tape.constant(points_matrix(points.iter())?);
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }

    /// Predicted class (1 = positive) at every node of a regular grid.
    pub fn decision_boundary_grid(
        &self,
        x1_range: [f64; 2],
        x2_range: [f64; 2],
        resolution: usize,
    ) -> Result<BoundaryGrid> {
        if resolution < 2 {
            return Err(Error::Config(format!("grid resolution must be >= 2, got {resolution}")));
        }
        let mut classes = Vec::with_capacity(resolution * resolution);
        let nodes: Vec<[f64; 2]> = (0..resolution)
            .flat_map(|i| {
                (0..resolution).map(move |j| [grid_coord(x1_range, j, resolution), grid_coord(x2_range, i, resolution)])
            })
            .collect();
        for chunk in nodes.chunks(4096) {
            let logits = self.predict_logits(chunk)?;
            classes.extend((0..chunk.len()).map(|r| if argmax_class(logits.row(r)) == 1 { 1i8 } else { -1 }));
        }
        Ok(BoundaryGrid { x1_range, x2_range, resolution, classes })
    }
}

fn points_matrix<'a>(points: impl ExactSizeIterator<Item = &'a [f64; 2]>) -> Result<Matrix> {
    let n = points.len();
    Matrix::from_vec(n, 2, points.flat_map(|p| p.iter().copied()).collect())
}

/// Coordinate of node `k` of `resolution` evenly spaced nodes spanning `range` inclusively.
pub fn grid_coord(range: [f64; 2], k: usize, resolution: usize) -> f64 {
    range[0] + (range[1] - range[0]) * k as f64 / (resolution - 1) as f64
}

impl Classifier for ToyNet {
    type Input = [f64; 2];

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits(&self, tape: &mut Tape, batch: &[&[f64; 2]], _eta: Option<f64>) -> Result<Var> {
        let x = tape.constant(points_matrix(batch.iter().copied())?);
        self.forward(tape, x)
    }

    fn alpha(&self) -> Option<f64> {
        self.projector.as_ref().map(|p| p.alpha(&self.store))
    }
}

/// Predicted classes on a regular grid. `classes[i·resolution + j]` is the
/// prediction at `(x1_j, x2_i)`, stored as `+1`/`−1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGrid {
    pub x1_range: [f64; 2],
    pub x2_range: [f64; 2],
    pub resolution: usize,
    pub classes: Vec<i8>,
}

impl BoundaryGrid {
    pub fn x1(&self, j: usize) -> f64 {
        grid_coord(self.x1_range, j, self.resolution)
    }

    pub fn x2(&self, i: usize) -> f64 {
        grid_coord(self.x2_range, i, self.resolution)
    }

    pub fn class_at(&self, i: usize, j: usize) -> i8 {
        self.classes[i * self.resolution + j]
    }

    /// CSV with header `x1,x2,class`, one row per node.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x1,x2,class\n");
        for i in 0..self.resolution {
            for j in 0..self.resolution {
                s.push_str(&format!("{},{},{}\n", self.x1(j), self.x2(i), self.class_at(i, j)));
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("x1,x2,class") {
            return Err(Error::Config("grid CSV must start with header x1,x2,class".into()));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Config(format!("grid CSV line {}: cannot parse {line:?}", k + 2));
            if f.len() != 3 {
                return Err(bad());
            }
            let x1: f64 = f[0].parse().map_err(|_| bad())?;
            let x2: f64 = f[1].parse().map_err(|_| bad())?;
            let c: i8 = f[2].parse().map_err(|_| bad())?;
            rows.push((x1, x2, c));
        }
        let resolution = (rows.len() as f64).sqrt().round() as usize;
        if resolution < 2 || resolution * resolution != rows.len() {
            return Err(Error::Config(format!("grid CSV has {} nodes, not a square grid", rows.len())));
        }
        let last = rows.len() - 1;
        Ok(Self {
            x1_range: [rows[0].0, rows[last].0],
            x2_range: [rows[0].1, rows[last].1],
            resolution,
            classes: rows.into_iter().map(|r| r.2).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TiedEncoderConfig {
    pub vocab_size: usize,
    /// Sequence length `T`.
    pub seq_len: usize,
    /// Model width `D`.
    pub d: usize,
    pub mlp_hidden: usize,
    pub refinement_steps: usize,
    /// Coarse widths of the multi-scale feature projector; empty disables it.
    pub multiscale: Vec<usize>,
    /// Coarse length of the sequence projector; `None` disables it.
    pub seq_coarse: Option<usize>,
    pub eps: f64,
    /// Learn `η = logistic(logit)` instead of taking it from the caller.
    pub learnable_eta: bool,
}

impl Default for TiedEncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            seq_len: 16,
            d: 16,
            mlp_hidden: 32,
            refinement_steps: 2,
            multiscale: Vec::new(),
            seq_coarse: None,
            eps: DEFAULT_EPS,
            learnable_eta: false,
        }
    }
}

impl TiedEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.seq_len == 0 || self.d == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("encoder: sizes must be >= 1".into()));
        }
        if self.refinement_steps == 0 {
            return Err(Error::Config("encoder: refinement_steps must be >= 1".into()));
        }
        if let Some(bad) = self.multiscale.iter().find(|c| **c == 0 || **c >= self.d) {
            return Err(Error::Config(format!("encoder: multiscale width {bad} must be in [1, {})", self.d)));
        }
        if let Some(tc) = self.seq_coarse {
            if tc == 0 || tc >= self.seq_len {
                return Err(Error::Config(format!("encoder: seq_coarse {tc} must be in [1, {})", self.seq_len)));
            }
        }
        Ok(())
    }

    pub fn has_projector(&self) -> bool {
        !self.multiscale.is_empty() || self.seq_coarse.is_some()
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Matrix::filled(1, d, 1.0)),
            beta: store.add(format!("{name}.beta"), Matrix::zeros(1, d)),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x, LN_EPS);
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let scaled = tape.mul_row(n, g)?;
        tape.add_row(scaled, b)
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
struct Block {
    ln_attn: Norm,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln_mlp: Norm,
    mlp_in: Dense,
    mlp_out: Dense,
}

struct BoundBlock {
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
}

/// Token embedding, one pre-norm attention + MLP block applied
/// `refinement_steps` times with the same weights, an optional projector
/// correction `h ← h + η(P h − h)`, mean pooling and a linear head.
#[derive(Clone, Debug)]
pub struct TiedEncoder {
    config: TiedEncoderConfig,
    store: ParamStore,
    embed: ParamId,
    block: Block,
    head: Dense,
    multiscale: Option<MultiScaleProjector>,
    sequence: Option<SequenceProjector>,
    eta_logit: Option<ParamId>,
}

impl TiedEncoder {
    pub fn new(config: &TiedEncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let mut store = ParamStore::new();
        let mut rng = rng_for(seed, stream::MODEL_INIT);
        let embed = store.add("encoder.embed", Matrix::random_normal(config.vocab_size, d, 1.0, &mut rng));
        let proj = |store: &mut ParamStore, name: &str, rng: &mut rand_chacha::ChaCha8Rng| {
            store.add(name, Matrix::random_normal(d, d, 1.0 / (d as f64).sqrt(), rng))
        };
        let ln_attn = Norm::new(&mut store, "encoder.block.ln_attn", d);
        let wq = proj(&mut store, "encoder.block.attn.wq", &mut rng);
        let wk = proj(&mut store, "encoder.block.attn.wk", &mut rng);
        let wv = proj(&mut store, "encoder.block.attn.wv", &mut rng);
        let wo = proj(&mut store, "encoder.block.attn.wo", &mut rng);
        let ln_mlp = Norm::new(&mut store, "encoder.block.ln_mlp", d);
        let mlp_in = Dense::new(&mut store, "encoder.block.mlp_in", d, config.mlp_hidden, &mut rng);
        let mlp_out = Dense::new(&mut store, "encoder.block.mlp_out", config.mlp_hidden, d, &mut rng);
        let head = Dense::new(&mut store, "encoder.head", d, 2, &mut rng);
        let block = Block { ln_attn, wq, wk, wv, wo, ln_mlp, mlp_in, mlp_out };

        let mut prng = rng_for(seed, stream::PROJECTOR_INIT);
        let multiscale = if config.multiscale.is_empty() {
            None
        } else {
            Some(MultiScaleProjector::new(
                &mut store,
                "encoder.multiscale",
                d,
                &config.multiscale,
                config.eps,
                &mut prng,
            )?)
        };
        let sequence = match config.seq_coarse {
            Some(tc) => Some(SequenceProjector::new(&mut store, "encoder.sequence", config.seq_len, tc, &mut prng)?),
            None => None,
        };
        let eta_logit = (config.learnable_eta && config.has_projector())
            .then(|| store.add("encoder.eta_logit", Matrix::scalar(0.0)));
        Ok(Self { config: config.clone(), store, embed, block, head, multiscale, sequence, eta_logit })
    }

    pub fn config(&self) -> &TiedEncoderConfig {
        &self.config
    }

    pub fn multiscale(&self) -> Option<&MultiScaleProjector> {
        self.multiscale.as_ref()
    }

    pub fn sequence(&self) -> Option<&SequenceProjector> {
        self.sequence.as_ref()
    }

    pub fn num_params(&self) -> usize {
        self.store.iter().map(|p| p.value.len()).sum()
    }

    fn refine(&self, tape: &mut Tape, w: &BoundBlock, x: Var, batch: usize) -> Result<Var> {
        let (t, d) = (self.config.seq_len, self.config.d);
        let a = self.block.ln_attn.forward(tape, &self.store, x)?;
        let q = tape.matmul(a, w.wq)?;
        let k = tape.matmul(a, w.wk)?;
        let v = tape.matmul(a, w.wv)?;
        let mut heads = Vec::with_capacity(batch);
        for b in 0..batch {
            let qb = tape.slice_rows(q, b * t, t)?;
            let kb = tape.slice_rows(k, b * t, t)?;
            let vb = tape.slice_rows(v, b * t, t)?;
            let kt = tape.transpose(kb);
            let raw = tape.matmul(qb, kt)?;
            let scores = tape.scale(raw, 1.0 / (d as f64).sqrt());
            let attn = tape.softmax_rows(scores);
            heads.push(tape.matmul(attn, vb)?);
        }
        let mixed = tape.concat_rows(&heads)?;
        let attn_out = tape.matmul(mixed, w.wo)?;
        let x = tape.add(x, attn_out)?;
        let m = self.block.ln_mlp.forward(tape, &self.store, x)?;
        let hidden = self.block.mlp_in.forward(tape, &self.store, m)?;
        let hidden = tape.tanh(hidden);
        let mlp_out = self.block.mlp_out.forward(tape, &self.store, hidden)?;
        tape.add(x, mlp_out)
    }

    /// `B×2` logits for `B` token sequences of length `T`.
    pub fn forward(&self, tape: &mut Tape, tokens: &[&[usize]], eta: Option<f64>) -> Result<Var> {
        let t = self.config.seq_len;
        let batch = tokens.len();
        if batch == 0 {
            return shape_err("encoder batch is empty");
        }
        if let Some(bad) = tokens.iter().find(|s| s.len() != t) {
            return shape_err(format!("sequence of length {} for an encoder of length {t}", bad.len()));
        }
        let ids: Vec<usize> = tokens.iter().flat_map(|s| s.iter().copied()).collect();
        let table = tape.param(&self.store, self.embed);
        let mut x = tape.gather_rows(table, &ids)?;
        let w = BoundBlock {
            wq: tape.param(&self.store, self.block.wq),
            wk: tape.param(&self.store, self.block.wk),
            wv: tape.param(&self.store, self.block.wv),
            wo: tape.param(&self.store, self.block.wo),
        };
        for _ in 0..self.config.refinement_steps {
            x = self.refine(tape, &w, x, batch)?;
        }
        if self.config.has_projector() {
            let eta = match eta {
                Some(v) => tape.scalar(v),
                None => {
                    let id = self
                        .eta_logit
                        .ok_or_else(|| Error::Config("encoder has no learnable eta; supply one".into()))?;
                    let logit = tape.param(&self.store, id);
                    tape.sigmoid(logit)
                }
            };
            let seq: Option<BoundSequence> = self.sequence.as_ref().map(|s| s.bind(tape, &self.store)).transpose()?;
            let ms: Option<BoundMultiScale> =
                self.multiscale.as_ref().map(|m| m.bind(tape, &self.store)).transpose()?;
            let mut target = x;
            if let Some(s) = &seq {
                target = s.apply_rows(tape, target, batch)?;
            }
            if let Some(m) = &ms {
                target = m.project(tape, target)?;
            }
            x = residual_correction(tape, x, target, eta)?;
        }
        let pool = tape.constant(pooling_matrix(batch, t));
        let pooled = tape.matmul(pool, x)?;
        self.head.forward(tape, &self.store, pooled)
    }
}

/// `B×(B·T)` matrix averaging each sample's `T` rows.
fn pooling_matrix(batch: usize, t: usize) -> Matrix {
    let mut m = Matrix::zeros(batch, batch * t);
    for b in 0..batch {
        for k in 0..t {
            m.set(b, b * t + k, 1.0 / t as f64);
        }
    }
    m
}

impl Classifier for TiedEncoder {
    type Input = Vec<usize>;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits(&self, tape: &mut Tape, batch: &[&Vec<usize>], eta: Option<f64>) -> Result<Var> {
        let seqs: Vec<&[usize]> = batch.iter().map(|s| s.as_slice()).collect();
        self.forward(tape, &seqs, eta)
    }

    fn multiscale_weights(&self) -> Vec<f64> {
        self.multiscale.as_ref().map(|m| m.multiscale_weights(&self.store)).unwrap_or_default()
    }

    fn uses_eta(&self) -> bool {
        self.config.has_projector()
    }

    fn learned_eta(&self) -> Option<f64> {
        self.eta_logit.map(|id| logistic(self.store.value(id).item()))
    }
}
