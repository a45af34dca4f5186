//! Restriction–prolongation projectors and the operators built from them.
//!
//! * [`FeatureProjector`]: `P = Q(Q*Q + εI)⁻¹Q*` along the feature axis. With
//!   `Q* = Qᵀ` and `ε = 0` it is the orthogonal projector onto `range(Q)`; with
//!   independent (learned) `Q*` it is oblique.
//! * [`SequenceProjector`]: `P_t = Q_t Q_tᵀ` along the sequence axis, where `Q_t`
//!   is the orthonormal QR factor of a learned basis `W`.
//! * [`DualProjector`]: the damped iteration `h ← α_h h + (1 − α_h) P(h)` with
//!   `P = P_feat ∘ P_seq`.
//! * [`MultiScaleProjector`]: `P_MS = Σ α_i P_i` with softmax weights, applied as
//!   the residual correction `h ← h + η(P_MS h − h)`.
//! * [`MixedOperator`]: the explicit matrix form `M = P + α(I − P)`.
//!
//! Each projector has a tape-level entry point (`bind` then `apply_rows`) used by
//! the models and a value-level entry point over [`Tensor3`].

use rand::Rng;

use crate::autodiff::{logistic, softmax_slice, ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{qr_thin, solve_gram, Matrix, Tensor3};

pub const DEFAULT_EPS: f64 = 1e-4;
const QSTAR_INIT_NOISE: f64 = 0.01;

/// Learnable feature-axis pseudo-projector.
#[derive(Clone, Debug)]
pub struct FeatureProjector {
    w_q: ParamId,
    /// `None` means restriction is tied to the prolongation (`Q* = Qᵀ`).
    w_qstar: Option<ParamId>,
    eps: f64,
    d: usize,
    dc: usize,
}

fn check_coarse(fine: usize, coarse: usize, what: &str) -> Result<()> {
    if coarse == 0 || coarse >= fine {
        return Err(Error::Config(format!("{what}: coarse size {coarse} must satisfy 1 <= coarse < {fine}")));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("regularization eps must be >= 0, got {eps}")));
    }
    Ok(())
}

impl FeatureProjector {
    /// Random untied projector: `Q ~ N(0, 1/D)`, `Q* = Qᵀ + N(0, 0.01²)`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        dc: usize,
        eps: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        check_coarse(d, dc, prefix)?;
        let q = Matrix::random_normal(d, dc, 1.0 / (d as f64).sqrt(), rng);
        let noise = Matrix::random_normal(dc, d, QSTAR_INIT_NOISE, rng);
        let qstar = q.transpose().add(&noise)?;
        Self::from_matrices(store, prefix, q, qstar, eps)
    }

    /// Random untied projector with independent fan-in uniform draws:
    /// `Q ~ U(±1/√D_c)`, `Q* ~ U(±1/√D)`.
    pub fn new_independent(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        dc: usize,
        eps: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        check_coarse(d, dc, prefix)?;
        let q = Matrix::random_uniform(d, dc, 1.0 / (dc as f64).sqrt(), rng);
        let qstar = Matrix::random_uniform(dc, d, 1.0 / (d as f64).sqrt(), rng);
        Self::from_matrices(store, prefix, q, qstar, eps)
    }

    /// Random projector with `Q* = Qᵀ` enforced structurally.
    pub fn new_tied(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        dc: usize,
        eps: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let q = Matrix::random_normal(d, dc, 1.0 / (d as f64).sqrt(), rng);
        Self::tied(store, prefix, q, eps)
    }

    /// Projector with explicit prolongation `q` (`D×D_c`) and restriction `qstar` (`D_c×D`).
    pub fn from_matrices(store: &mut ParamStore, prefix: &str, q: Matrix, qstar: Matrix, eps: f64) -> Result<Self> {
        let (d, dc) = q.shape();
        check_coarse(d, dc, prefix)?;
        check_eps(eps)?;
        if qstar.shape() != (dc, d) {
            return shape_err(format!("restriction must be {dc}x{d}, got {:?}", qstar.shape()));
        }
        let w_q = store.add(format!("{prefix}.w_q"), q);
        let w_qstar = Some(store.add(format!("{prefix}.w_qstar"), qstar));
        Ok(Self { w_q, w_qstar, eps, d, dc })
    }

    pub fn tied(store: &mut ParamStore, prefix: &str, q: Matrix, eps: f64) -> Result<Self> {
        let (d, dc) = q.shape();
        check_coarse(d, dc, prefix)?;
        check_eps(eps)?;
        let w_q = store.add(format!("{prefix}.w_q"), q);
        Ok(Self { w_q, w_qstar: None, eps, d, dc })
    }

    pub fn fine_dim(&self) -> usize {
        self.d
    }

    pub fn coarse_dim(&self) -> usize {
        self.dc
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn is_tied(&self) -> bool {
        self.w_qstar.is_none()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.w_q).chain(self.w_qstar).collect()
    }

    pub fn prolongation<'a>(&self, store: &'a ParamStore) -> &'a Matrix {
        store.value(self.w_q)
    }

    pub fn restriction(&self, store: &ParamStore) -> Matrix {
        match self.w_qstar {
            Some(id) => store.value(id).clone(),
            None => store.value(self.w_q).transpose(),
        }
    }

    /// `P_ε = Q(Q*Q + εI)⁻¹Q*` as an explicit `D×D` matrix.
    pub fn explicit_projector(&self, store: &ParamStore) -> Result<Matrix> {
        let q = self.prolongation(store);
        let qstar = self.restriction(store);
        let gram = qstar.matmul(q)?;
        let coarse = solve_gram(&gram, self.eps, &qstar)?;
        q.matmul(&coarse)
    }

    /// Records `Q`, `Q*` and `A = Q*Q + εI` on the tape once per forward pass.
    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<BoundFeature> {
        let q = tape.param(store, self.w_q);
        let qstar = match self.w_qstar {
            Some(id) => tape.param(store, id),
            None => tape.transpose(q),
        };
        let gram = tape.matmul(qstar, q)?;
        let reg = tape.constant(Matrix::identity(self.dc).scale(self.eps));
        let a = tape.add(gram, reg)?;
        Ok(BoundFeature { q, qstar, a, d: self.d })
    }

    /// Value-level application along the feature axis of every `(b, t)` slice.
    pub fn apply_feature(&self, store: &ParamStore, x: &Tensor3) -> Result<Tensor3> {
        if x.features() != self.d {
            return shape_err(format!("feature width {} != projector width {}", x.features(), self.d));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, store)?;
        let rows = tape.constant(x.to_rows());
        let out = bound.apply_rows(&mut tape, rows)?;
        Tensor3::from_rows(x.batch(), x.seq_len(), tape.value(out).clone())
    }
}

/// A [`FeatureProjector`] whose operands are already on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundFeature {
    q: Var,
    qstar: Var,
    a: Var,
    d: usize,
}

impl BoundFeature {
    /// Applies `P` to each row of an `N×D` node: restrict, solve `A u = z`, prolong.
    pub fn apply_rows(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if tape.shape(x).1 != self.d {
            return shape_err(format!("feature width {} != projector width {}", tape.shape(x).1, self.d));
        }
        let xt = tape.transpose(x);
        let z = tape.matmul(self.qstar, xt)?;
        let u = tape.solve(self.a, z)?;
        let y = tape.matmul(self.q, u)?;
        Ok(tape.transpose(y))
    }
}

/// Learnable orthogonal projector along the sequence axis.
#[derive(Clone, Debug)]
pub struct SequenceProjector {
    w: ParamId,
    t: usize,
    tc: usize,
}

impl SequenceProjector {
    pub fn new(store: &mut ParamStore, prefix: &str, t: usize, tc: usize, rng: &mut impl Rng) -> Result<Self> {
        check_coarse(t, tc, prefix)?;
        let w = Matrix::random_normal(t, tc, 1.0 / (t as f64).sqrt(), rng);
        Self::from_matrix(store, prefix, w)
    }

    pub fn from_matrix(store: &mut ParamStore, prefix: &str, w: Matrix) -> Result<Self> {
        let (t, tc) = w.shape();
        check_coarse(t, tc, prefix)?;
        let w = store.add(format!("{prefix}.w"), w);
        Ok(Self { w, t, tc })
    }

    /// Like [`from_matrix`](Self::from_matrix) but also accepts a square basis
    /// (`T_c = T`), for which `P_t` is the identity.
    pub fn from_matrix_unchecked(store: &mut ParamStore, prefix: &str, w: Matrix) -> Result<Self> {
        let (t, tc) = w.shape();
        if tc == 0 || tc > t {
            return shape_err(format!("temporal basis must be T x T_c with T >= T_c >= 1, got {t}x{tc}"));
        }
        let w = store.add(format!("{prefix}.w"), w);
        Ok(Self { w, t, tc })
    }

    pub fn seq_len(&self) -> usize {
        self.t
    }

    pub fn coarse_len(&self) -> usize {
        self.tc
    }

    pub fn param_id(&self) -> ParamId {
        self.w
    }

    /// `P_t = Q_t Q_tᵀ` as an explicit `T×T` matrix.
    pub fn explicit_projector(&self, store: &ParamStore) -> Result<Matrix> {
        let (q, _) = qr_thin(store.value(self.w))?;
        q.matmul(&q.transpose())
    }

    /// Runs the QR once per forward pass.
    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<BoundSequence> {
        let w = tape.param(store, self.w);
        let q = tape.qr_q(w)?;
        let qt = tape.transpose(q);
        Ok(BoundSequence { q, qt, t: self.t })
    }

    pub fn apply_sequence(&self, store: &ParamStore, x: &Tensor3) -> Result<Tensor3> {
        if x.seq_len() != self.t {
            return shape_err(format!("sequence length {} != projector length {}", x.seq_len(), self.t));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, store)?;
        let rows = tape.constant(x.to_rows());
        let out = bound.apply_rows(&mut tape, rows, x.batch())?;
        Tensor3::from_rows(x.batch(), x.seq_len(), tape.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundSequence {
    q: Var,
    qt: Var,
    t: usize,
}

impl BoundSequence {
    /// Applies `P_t` to each of the `batch` stacked `T×D` blocks of `x`.
    pub fn apply_rows(&self, tape: &mut Tape, x: Var, batch: usize) -> Result<Var> {
        if tape.shape(x).0 != batch * self.t {
            return shape_err(format!("{} rows are not {batch} sequences of length {}", tape.shape(x).0, self.t));
        }
        let mut blocks = Vec::with_capacity(batch);
        for b in 0..batch {
            let xb = tape.slice_rows(x, b * self.t, self.t)?;
            let coarse = tape.matmul(self.qt, xb)?;
            blocks.push(tape.matmul(self.q, coarse)?);
        }
        tape.concat_rows(&blocks)
    }
}

/// Feature and/or sequence projector applied as a damped fixed-point iteration.
#[derive(Clone, Debug)]
pub struct DualProjector {
    pub feat: Option<FeatureProjector>,
    pub seq: Option<SequenceProjector>,
    alpha_logit: ParamId,
    n_steps: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDual {
    feat: Option<BoundFeature>,
    seq: Option<BoundSequence>,
    alpha: Var,
    n_steps: usize,
}

impl DualProjector {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        feat: Option<FeatureProjector>,
        seq: Option<SequenceProjector>,
        alpha_logit: f64,
        n_steps: usize,
    ) -> Result<Self> {
        if feat.is_none() && seq.is_none() {
            return Err(Error::Config("dual projector needs a feature or sequence projector".into()));
        }
        if n_steps == 0 {
            return Err(Error::Config("dual projector needs at least one step".into()));
        }
        let alpha_logit = store.add(format!("{prefix}.alpha_logit"), Matrix::scalar(alpha_logit));
        Ok(Self { feat, seq, alpha_logit, n_steps })
    }

    pub fn alpha(&self, store: &ParamStore) -> f64 {
        logistic(store.value(self.alpha_logit).item())
    }

    pub fn alpha_logit_id(&self) -> ParamId {
        self.alpha_logit
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<BoundDual> {
        let feat = self.feat.as_ref().map(|f| f.bind(tape, store)).transpose()?;
        let seq = self.seq.as_ref().map(|s| s.bind(tape, store)).transpose()?;
        let logit = tape.param(store, self.alpha_logit);
        let alpha = tape.sigmoid(logit);
        Ok(BoundDual { feat, seq, alpha, n_steps: self.n_steps })
    }

    pub fn dual_apply(&self, store: &ParamStore, h: &Tensor3) -> Result<Tensor3> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, store)?;
        let rows = tape.constant(h.to_rows());
        let out = bound.apply_rows(&mut tape, rows, h.batch())?;
        Tensor3::from_rows(h.batch(), h.seq_len(), tape.value(out).clone())
    }
}

impl BoundDual {
    /// One application of `P = P_feat ∘ P_seq`.
    pub fn project(&self, tape: &mut Tape, x: Var, batch: usize) -> Result<Var> {
        let mut y = x;
        if let Some(seq) = &self.seq {
            y = seq.apply_rows(tape, y, batch)?;
        }
        if let Some(feat) = &self.feat {
            y = feat.apply_rows(tape, y)?;
        }
        Ok(y)
    }

    /// `n_steps` iterations of `h ← α_h h + (1 − α_h) P(h)`.
    pub fn apply_rows(&self, tape: &mut Tape, h: Var, batch: usize) -> Result<Var> {
        let mut h = h;
        for _ in 0..self.n_steps {
            h = damped_step(tape, h, self.alpha, |tape, x| self.project(tape, x, batch))?;
        }
        Ok(h)
    }
}

/// `α h + (1 − α) P(h)`, computed as `P(h) + α (h − P(h))`.
pub(crate) fn damped_step(
    tape: &mut Tape,
    h: Var,
    alpha: Var,
    project: impl FnOnce(&mut Tape, Var) -> Result<Var>,
) -> Result<Var> {
    let ph = project(tape, h)?;
    let resid = tape.sub(h, ph)?;
    let damped = tape.scale_by(resid, alpha)?;
    tape.add(ph, damped)
}

/// Convex combination of feature projectors at several coarse sizes.
#[derive(Clone, Debug)]
pub struct MultiScaleProjector {
    scales: Vec<FeatureProjector>,
    beta: ParamId,
}

#[derive(Clone, Debug)]
pub struct BoundMultiScale {
    scales: Vec<BoundFeature>,
    weights: Vec<Var>,
}

impl MultiScaleProjector {
    /// Random untied scales with logits initialised to zero (uniform weights).
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        coarse: &[usize],
        eps: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let scales = coarse
            .iter()
            .enumerate()
            .map(|(i, dc)| FeatureProjector::new(store, &format!("{prefix}.scale{i}"), d, *dc, eps, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_scales(store, prefix, scales, &vec![0.0; coarse.len()])
    }

    pub fn from_scales(
        store: &mut ParamStore,
        prefix: &str,
        scales: Vec<FeatureProjector>,
        beta: &[f64],
    ) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config("multi-scale projector needs at least one scale".into()));
        }
        if beta.len() != scales.len() {
            return shape_err(format!("{} logits for {} scales", beta.len(), scales.len()));
        }
        let d = scales[0].fine_dim();
        if scales.iter().any(|s| s.fine_dim() != d) {
            return shape_err("all scales must share the same fine dimension");
        }
        let beta = store.add(format!("{prefix}.beta"), Matrix::from_vec(1, beta.len(), beta.to_vec())?);
        Ok(Self { scales, beta })
    }

    pub fn scales(&self) -> &[FeatureProjector] {
        &self.scales
    }

    pub fn fine_dim(&self) -> usize {
        self.scales[0].fine_dim()
    }

    pub fn beta_id(&self) -> ParamId {
        self.beta
    }

    /// Simplex weights `α_i = softmax(β)_i`.
    pub fn multiscale_weights(&self, store: &ParamStore) -> Vec<f64> {
        softmax_slice(store.value(self.beta).data())
    }

    /// `Σ α_i P_i` as an explicit matrix.
    pub fn explicit_projector(&self, store: &ParamStore) -> Result<Matrix> {
        let weights = self.multiscale_weights(store);
        let d = self.fine_dim();
        let mut total = Matrix::zeros(d, d);
        for (s, w) in self.scales.iter().zip(weights) {
            total.add_assign(&s.explicit_projector(store)?.scale(w));
        }
        Ok(total)
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<BoundMultiScale> {
        let scales = self.scales.iter().map(|s| s.bind(tape, store)).collect::<Result<Vec<_>>>()?;
        let beta = tape.param(store, self.beta);
        let alpha = tape.softmax(beta);
        let weights = (0..self.scales.len()).map(|i| tape.entry(alpha, 0, i)).collect();
        Ok(BoundMultiScale { scales, weights })
    }

    pub fn multiscale_apply(&self, store: &ParamStore, h: &Tensor3, eta: f64) -> Result<Tensor3> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")));
        }
        if h.features() != self.fine_dim() {
            return shape_err(format!("feature width {} != projector width {}", h.features(), self.fine_dim()));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, store)?;
        let rows = tape.constant(h.to_rows());
        let eta = tape.scalar(eta);
        let out = bound.correct(&mut tape, rows, eta)?;
        Tensor3::from_rows(h.batch(), h.seq_len(), tape.value(out).clone())
    }
}

impl BoundMultiScale {
    /// `P_MS x = Σ α_i P_i x` for each row of `x`.
    pub fn project(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (s, w) in self.scales.iter().zip(&self.weights) {
            let px = s.apply_rows(tape, x)?;
            let term = tape.scale_by(px, *w)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        Ok(acc.expect("at least one scale"))
    }

    /// `h + η (P_MS h − h)`.
    pub fn correct(&self, tape: &mut Tape, h: Var, eta: Var) -> Result<Var> {
        let ph = self.project(tape, h)?;
        residual_correction(tape, h, ph, eta)
    }
}

/// `h + η (target − h)`.
pub(crate) fn residual_correction(tape: &mut Tape, h: Var, target: Var, eta: Var) -> Result<Var> {
    let delta = tape.sub(target, h)?;
    let step = tape.scale_by(delta, eta)?;
    tape.add(h, step)
}

/// Explicit `M = P + α(I − P)` for a given projector matrix.
#[derive(Clone, Debug)]
pub struct MixedOperator {
    p: Matrix,
    alpha: f64,
}

impl MixedOperator {
    pub fn new(p: Matrix, alpha: f64) -> Result<Self> {
        if p.rows() != p.cols() {
            return shape_err(format!("projector must be square, got {:?}", p.shape()));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { p, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn matrix(&self) -> Matrix {
        let n = self.p.rows();
        let complement = Matrix::identity(n).sub(&self.p).expect("square");
        self.p.add(&complement.scale(self.alpha)).expect("square")
    }

    /// `h' = P h + α (h − P h)`.
    pub fn mixed_apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.p.rows() {
            return shape_err(format!("vector of length {} for {}x{} operator", h.len(), self.p.rows(), self.p.cols()));
        }
        let ph = self.p.matmul(&Matrix::column_vector(h))?;
        Ok(h.iter().zip(ph.data()).map(|(x, p)| p + self.alpha * (x - p)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::linalg::spectral_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Orthonormal basis of range(q) by classical Gram–Schmidt.
    fn orthonormal_basis(q: &Matrix) -> Matrix {
        let (m, n) = q.shape();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for j in 0..n {
            let mut v = q.column(j);
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= dot * ci;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
        let mut b = Matrix::zeros(m, n);
        for (j, c) in cols.iter().enumerate() {
            for i in 0..m {
                b.set(i, j, c[i]);
            }
        }
        b
    }

    fn basis_projector(q: &Matrix) -> Matrix {
        let b = orthonormal_basis(q);
        b.matmul(&b.transpose()).unwrap()
    }

    /// Applies an explicit `D×D` matrix to every feature row of a tensor.
    fn apply_matrix_features(p: &Matrix, x: &Tensor3) -> Tensor3 {
        let rows = x.to_rows().matmul(&p.transpose()).unwrap();
        Tensor3::from_rows(x.batch(), x.seq_len(), rows).unwrap()
    }

    /// Applies an explicit `T×T` matrix along the sequence axis of every sample.
    fn apply_matrix_sequence(p: &Matrix, x: &Tensor3) -> Tensor3 {
        let blocks: Vec<Matrix> = (0..x.batch()).map(|b| p.matmul(&x.sample(b)).unwrap()).collect();
        Tensor3::from_rows(x.batch(), x.seq_len(), Matrix::vstack(&blocks).unwrap()).unwrap()
    }

    fn tied(q: Matrix) -> (ParamStore, FeatureProjector) {
        let mut store = ParamStore::new();
        let fp = FeatureProjector::tied(&mut store, "fp", q, 0.0).unwrap();
        (store, fp)
    }

    #[test]
    fn coordinate_subspace_projector() {
        let q = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let (store, fp) = tied(q);
        let p = fp.explicit_projector(&store).unwrap();
        assert!(p.max_abs_diff(&Matrix::diag(&[1.0, 1.0, 0.0])) < 1e-15);
    }

    #[test]
    fn span_of_ones_projector() {
        let (store, fp) = tied(Matrix::from_rows(&[&[1.0], &[1.0]]));
        let p = fp.explicit_projector(&store).unwrap();
        assert!(p.max_abs_diff(&Matrix::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]])) < 1e-15);
    }

    #[test]
    fn random_orthogonal_projector_matches_basis_oracle() {
        let q = Matrix::seeded_normal(8, 3, 17);
        let oracle = basis_projector(&q);
        let (store, fp) = tied(q);
        let p = fp.explicit_projector(&store).unwrap();
        let p2 = p.matmul(&p).unwrap();
        assert!(p2.sub(&p).unwrap().frobenius_norm() < 1e-10);
        assert!((p.trace() - 3.0).abs() < 1e-8);
        assert!(p.max_abs_diff(&oracle) < 1e-9);
    }

    #[test]
    fn coarse_size_must_be_smaller() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(FeatureProjector::new(&mut store, "a", 4, 4, 1e-4, &mut rng), Err(Error::Config(_))));
        assert!(matches!(SequenceProjector::new(&mut store, "b", 4, 5, &mut rng), Err(Error::Config(_))));
        assert!(matches!(FeatureProjector::tied(&mut store, "c", Matrix::zeros(3, 1), -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn feature_apply_fixes_range_and_kills_kernel() {
        let q = Matrix::seeded_normal(6, 2, 3);
        let b = orthonormal_basis(&q);
        let (store, fp) = tied(q.clone());
        // rows in range(Q)
        let coeffs = Matrix::seeded_normal(2 * 3, 2, 4);
        let in_range = coeffs.matmul(&q.transpose()).unwrap();
        let x = Tensor3::from_rows(2, 3, in_range).unwrap();
        let y = fp.apply_feature(&store, &x).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-9);
        // rows orthogonal to range(Q)
        let raw = Matrix::seeded_normal(6, 6, 5);
        let proj = raw.matmul(&b).unwrap().matmul(&b.transpose()).unwrap();
        let orth = raw.sub(&proj).unwrap();
        let x = Tensor3::from_rows(2, 3, orth).unwrap();
        let y = fp.apply_feature(&store, &x).unwrap();
        assert!(y.max_abs_diff(&Tensor3::zeros(2, 3, 6)) < 1e-9);
    }

    #[test]
    fn feature_apply_matches_explicit_matrix() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let fp = FeatureProjector::new(&mut store, "fp", 8, 3, 1e-4, &mut rng).unwrap();
        let x = Tensor3::seeded_normal(2, 4, 8, 32);
        let y = fp.apply_feature(&store, &x).unwrap();
        let oracle = apply_matrix_features(&fp.explicit_projector(&store).unwrap(), &x);
        assert!(y.max_abs_diff(&oracle) < 1e-9);
        let wrong = Tensor3::seeded_normal(1, 2, 7, 1);
        assert!(matches!(fp.apply_feature(&store, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn oblique_projector_is_idempotent_but_not_symmetric() {
        let mut store = ParamStore::new();
        let q = Matrix::seeded_normal(10, 3, 40);
        let qstar = q.transpose().add(&Matrix::seeded_normal(3, 10, 41).scale(0.3)).unwrap();
        let fp = FeatureProjector::from_matrices(&mut store, "fp", q, qstar, 0.0).unwrap();
        let p = fp.explicit_projector(&store).unwrap();
        assert!(p.matmul(&p).unwrap().sub(&p).unwrap().frobenius_norm() <= 1e-8);
        assert!(p.sub(&p.transpose()).unwrap().frobenius_norm() > 1e-3);
    }

    #[test]
    fn regularization_converges_to_exact_projector() {
        let q = Matrix::seeded_normal(12, 4, 50);
        let gram_inv_norm = {
            let gram = q.transpose().matmul(&q).unwrap();
            let inv = crate::linalg::solve_lu(&gram, &Matrix::identity(4)).unwrap();
            spectral_norm(&inv, 500, 1)
        };
        let p0 = {
            let (store, fp) = tied(q.clone());
            fp.explicit_projector(&store).unwrap()
        };
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6] {
            let mut store = ParamStore::new();
            let fp = FeatureProjector::tied(&mut store, "fp", q.clone(), eps).unwrap();
            let diff = fp.explicit_projector(&store).unwrap().sub(&p0).unwrap().frobenius_norm();
            assert!(diff < last);
            assert!(diff < 10.0 * eps * gram_inv_norm, "eps {eps}: {diff}");
            last = diff;
        }
    }

    #[test]
    fn sequence_projector_cases() {
        // orthonormal columns: P_t = w wᵀ, fixed on span
        let mut store = ParamStore::new();
        let w = orthonormal_basis(&Matrix::seeded_normal(6, 2, 60));
        let sp = SequenceProjector::from_matrix(&mut store, "sp", w.clone()).unwrap();
        let pt = sp.explicit_projector(&store).unwrap();
        assert!(pt.max_abs_diff(&w.matmul(&w.transpose()).unwrap()) < 1e-12);
        let coeffs = Matrix::seeded_normal(2, 3, 61);
        let sample = w.matmul(&coeffs).unwrap();
        let x = Tensor3::from_rows(1, 6, sample).unwrap();
        assert!(sp.apply_sequence(&store, &x).unwrap().max_abs_diff(&x) < 1e-9);

        // square basis: identity
        let mut store = ParamStore::new();
        let sp = SequenceProjector::from_matrix_unchecked(&mut store, "sq", Matrix::seeded_normal(5, 5, 62)).unwrap();
        let x = Tensor3::seeded_normal(2, 5, 3, 63);
        assert!(sp.apply_sequence(&store, &x).unwrap().max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn sequence_projector_matches_explicit_matrix() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let sp = SequenceProjector::new(&mut store, "sp", 16, 4, &mut rng).unwrap();
        let pt = sp.explicit_projector(&store).unwrap();
        assert!((pt.trace() - 4.0).abs() < 1e-6);
        assert!(pt.matmul(&pt).unwrap().sub(&pt).unwrap().frobenius_norm() < 1e-8);
        assert!(pt.sub(&pt.transpose()).unwrap().frobenius_norm() < 1e-10);
        let x = Tensor3::seeded_normal(3, 16, 5, 71);
        let y = sp.apply_sequence(&store, &x).unwrap();
        assert!(y.max_abs_diff(&apply_matrix_sequence(&pt, &x)) < 1e-9);
    }

    #[test]
    fn sequence_projector_rank_deficient_basis() {
        let mut store = ParamStore::new();
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let sp = SequenceProjector::from_matrix(&mut store, "sp", w).unwrap();
        let x = Tensor3::seeded_normal(1, 3, 2, 1);
        assert!(matches!(sp.apply_sequence(&store, &x), Err(Error::RankDeficient { column: 1, .. })));
    }

    #[test]
    fn mixed_operator_endpoints() {
        let q = Matrix::seeded_normal(8, 3, 80);
        let p = basis_projector(&q);
        let h: Vec<f64> = Matrix::seeded_normal(8, 1, 81).into_data();
        let id = MixedOperator::new(p.clone(), 1.0).unwrap();
        let out = id.mixed_apply(&h).unwrap();
        assert!(out.iter().zip(&h).all(|(a, b)| (a - b).abs() < 1e-12));

        let ph = p.matmul(&Matrix::column_vector(&h)).unwrap();
        let perp: Vec<f64> = h.iter().zip(ph.data()).map(|(a, b)| a - b).collect();
        let full = MixedOperator::new(p.clone(), 0.0).unwrap();
        assert!(full.mixed_apply(&perp).unwrap().iter().all(|v| v.abs() < 1e-12));

        assert!(MixedOperator::new(p.clone(), 1.5).is_err());
        assert!(matches!(id.mixed_apply(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn mixed_operator_pythagorean_split() {
        let q = Matrix::seeded_normal(8, 3, 82);
        let p = basis_projector(&q);
        let h: Vec<f64> = Matrix::seeded_normal(8, 1, 83).into_data();
        let out = MixedOperator::new(p.clone(), 0.5).unwrap().mixed_apply(&h).unwrap();
        let ph = p.matmul(&Matrix::column_vector(&h)).unwrap().into_data();
        let coarse: f64 = ph.iter().map(|v| v * v).sum();
        let fine: f64 = h.iter().zip(&ph).map(|(a, b)| (a - b).powi(2)).sum();
        let lhs: f64 = out.iter().map(|v| v * v).sum();
        assert!((lhs - (coarse + 0.25 * fine)).abs() < 1e-12 * lhs.max(1.0));
    }

    fn dual_fixture(with_seq: bool, logit: f64, steps: usize) -> (ParamStore, DualProjector) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let feat = FeatureProjector::new(&mut store, "feat", 6, 2, 1e-4, &mut rng).unwrap();
        let seq =
            if with_seq { Some(SequenceProjector::new(&mut store, "seq", 8, 3, &mut rng).unwrap()) } else { None };
        let dp = DualProjector::new(&mut store, "dual", Some(feat), seq, logit, steps).unwrap();
        (store, dp)
    }

    #[test]
    fn dual_saturated_alpha_is_identity() {
        // 1 − α ≈ 2e-9 at logit 20, so the deviation scales with n_steps·|h − P(h)|.
        let h = Tensor3::seeded_normal(2, 8, 6, 91);
        let h = Tensor3::from_vec(2, 8, 6, h.data().iter().map(|v| 0.5 * v).collect()).unwrap();
        for steps in [1, 2] {
            let (store, dp) = dual_fixture(true, 20.0, steps);
            let d = dp.dual_apply(&store, &h).unwrap().max_abs_diff(&h);
            assert!(d < 1e-8, "{steps} steps: {d}");
        }
    }

    #[test]
    fn dual_single_feature_step_formula() {
        let (store, dp) = dual_fixture(false, 0.4, 1);
        let h = Tensor3::seeded_normal(2, 8, 6, 92);
        let a = dp.alpha(&store);
        let ph = dp.feat.as_ref().unwrap().apply_feature(&store, &h).unwrap();
        let expected: Vec<f64> = h.data().iter().zip(ph.data()).map(|(x, p)| a * x + (1.0 - a) * p).collect();
        let expected = Tensor3::from_vec(2, 8, 6, expected).unwrap();
        assert!(dp.dual_apply(&store, &h).unwrap().max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn dual_two_steps_is_one_step_twice() {
        let (store2, dp2) = dual_fixture(true, -0.3, 2);
        let (store1, dp1) = dual_fixture(true, -0.3, 1);
        let h = Tensor3::seeded_normal(2, 8, 6, 93);
        let once = dp1.dual_apply(&store1, &h).unwrap();
        let twice = dp1.dual_apply(&store1, &once).unwrap();
        assert_eq!(dp2.dual_apply(&store2, &h).unwrap(), twice);
    }

    #[test]
    fn dual_matches_straight_line_reference() {
        let (store, dp) = dual_fixture(true, 0.2, 2);
        let h = Tensor3::seeded_normal(2, 8, 6, 94);
        let pt = dp.seq.as_ref().unwrap().explicit_projector(&store).unwrap();
        let pf = dp.feat.as_ref().unwrap().explicit_projector(&store).unwrap();
        let a = dp.alpha(&store);
        let mut cur = h.clone();
        for _ in 0..2 {
            let p = apply_matrix_features(&pf, &apply_matrix_sequence(&pt, &cur));
            let next: Vec<f64> = cur.data().iter().zip(p.data()).map(|(x, p)| a * x + (1.0 - a) * p).collect();
            cur = Tensor3::from_vec(2, 8, 6, next).unwrap();
        }
        assert!(dp.dual_apply(&store, &h).unwrap().max_abs_diff(&cur) < 1e-8);
    }

    #[test]
    fn dual_requires_a_projector() {
        let mut store = ParamStore::new();
        assert!(DualProjector::new(&mut store, "d", None, None, 0.0, 1).is_err());
    }

    fn ms_fixture(coarse: &[usize], beta: &[f64]) -> (ParamStore, MultiScaleProjector) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let scales = coarse
            .iter()
            .enumerate()
            .map(|(i, dc)| {
                let q = Matrix::random_normal(8, *dc, 1.0, &mut rng);
                FeatureProjector::tied(&mut store, &format!("s{i}"), q, 0.0).unwrap()
            })
            .collect();
        let mp = MultiScaleProjector::from_scales(&mut store, "ms", scales, beta).unwrap();
        (store, mp)
    }

    #[test]
    fn multiscale_weight_examples() {
        let (store, mp) = ms_fixture(&[2, 3, 4], &[0.0, 0.0, 0.0]);
        for w in mp.multiscale_weights(&store) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let (store, mp) = ms_fixture(&[2, 3], &[2f64.ln(), 0.0]);
        let w = mp.multiscale_weights(&store);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let (store, mp) = ms_fixture(&[2, 3, 4], &[10.0, 0.0, 0.0]);
        assert!(mp.multiscale_weights(&store)[0] > 0.9999);
    }

    #[test]
    fn multiscale_apply_limits() {
        let (store, mp) = ms_fixture(&[2, 3, 4], &[0.1, -0.2, 0.3]);
        let h = Tensor3::seeded_normal(2, 3, 8, 101);
        assert_eq!(mp.multiscale_apply(&store, &h, 0.0).unwrap(), h);
        let (store1, mp1) = ms_fixture(&[3], &[0.7]);
        let single = mp1.scales()[0].apply_feature(&store1, &h).unwrap();
        assert!(mp1.multiscale_apply(&store1, &h, 1.0).unwrap().max_abs_diff(&single) < 1e-12);
        assert!(mp.multiscale_apply(&store, &h, 1.5).is_err());
    }

    #[test]
    fn multiscale_matches_explicit_sum_and_is_non_expansive() {
        let (store, mp) = ms_fixture(&[2, 3, 4], &[0.3, -0.1, 0.5]);
        let h = Tensor3::seeded_normal(2, 4, 8, 102);
        let pms = mp.explicit_projector(&store).unwrap();
        let ph = apply_matrix_features(&pms, &h);
        let expected: Vec<f64> = h.data().iter().zip(ph.data()).map(|(x, p)| 0.5 * x + 0.5 * p).collect();
        let expected = Tensor3::from_vec(2, 4, 8, expected).unwrap();
        assert!(mp.multiscale_apply(&store, &h, 0.5).unwrap().max_abs_diff(&expected) < 1e-9);
        assert!(spectral_norm(&pms, 500, 3) <= 1.0 + 1e-8);
    }

    #[test]
    fn projector_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        let feat = FeatureProjector::new(&mut store, "f", 5, 2, 1e-4, &mut rng).unwrap();
        let seq = SequenceProjector::new(&mut store, "s", 4, 2, &mut rng).unwrap();
        let dp = DualProjector::new(&mut store, "d", Some(feat), Some(seq), 0.3, 2).unwrap();
        let ms = MultiScaleProjector::new(&mut store, "m", 5, &[1, 2, 3], 1e-4, &mut rng).unwrap();
        let x = Tensor3::seeded_normal(2, 4, 5, 111).to_rows();
        let target = Matrix::seeded_normal(8, 5, 112);
        let err = grad_check(
            |tape, store| {
                let xv = tape.constant(x.clone());
                let bd = dp.bind(tape, store)?;
                let y = bd.apply_rows(tape, xv, 2)?;
                let bm = ms.bind(tape, store)?;
                let eta = tape.scalar(0.6);
                let y = bm.correct(tape, y, eta)?;
                let t = tape.constant(target.clone());
                let y = tape.mul(y, t)?;
                Ok(tape.sum(y))
            },
            &mut store,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn mixed_operator_is_non_expansive(seed in any::<u64>(), alpha in 0.0f64..=1.0, f in 3usize..24) {
                let c = 1 + (seed as usize % (f - 1));
                let p = basis_projector(&Matrix::seeded_normal(f, c, seed));
                let mo = MixedOperator::new(p, alpha).unwrap();
                let h1 = Matrix::seeded_normal(f, 1, seed ^ 1).into_data();
                let h2 = Matrix::seeded_normal(f, 1, seed ^ 2).into_data();
                let diff: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a - b).collect();
                let out = mo.mixed_apply(&diff).unwrap();
                let n_in = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                let n_out = out.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(n_out <= n_in * (1.0 + 1e-10));
            }

            #[test]
            fn simplex_weights(beta in proptest::collection::vec(-30.0f64..30.0, 1..6)) {
                let coarse = vec![1; beta.len()];
                let mut store = ParamStore::new();
                let scales = coarse.iter().enumerate().map(|(i, _)| {
                    FeatureProjector::tied(&mut store, &format!("s{i}"), Matrix::seeded_normal(3, 1, i as u64), 0.0).unwrap()
                }).collect();
                let mp = MultiScaleProjector::from_scales(&mut store, "ms", scales, &beta).unwrap();
                let w = mp.multiscale_weights(&store);
                prop_assert!(w.iter().all(|v| *v >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn orthogonal_projector_range_fixed_point(seed in any::<u64>(), f in 3usize..20) {
                let c = 1 + (seed as usize % (f - 1));
                let q = Matrix::seeded_normal(f, c, seed);
                let mut store = ParamStore::new();
                let fp = FeatureProjector::tied(&mut store, "fp", q.clone(), 0.0).unwrap();
                let p = fp.explicit_projector(&store).unwrap();
                prop_assert!(p.matmul(&p).unwrap().sub(&p).unwrap().frobenius_norm() <= 1e-8);
                prop_assert!(p.sub(&p.transpose()).unwrap().frobenius_norm() <= 1e-10);
                prop_assert!((p.trace() - c as f64).abs() <= 1e-6);
                let h = q.matmul(&Matrix::seeded_normal(c, 1, seed ^ 7)).unwrap();
                prop_assert!(p.matmul(&h).unwrap().max_abs_diff(&h) <= 1e-9 * h.max_abs().max(1.0));
            }
        }
    }
}
