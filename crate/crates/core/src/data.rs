//! Seeded synthetic datasets.
//!
//! * the 2-D "wiggly boundary" task: a convex quadratic trend plus sinusoids,
//!   labelled by which side of the curve a point falls on;
//! * a Gaussian mixture whose class signal lives in a known coarse subspace and
//!   whose noise lives in the orthogonal complement;
//! * a token-sequence task where label-irrelevant noise tokens are injected into
//!   a fraction of the samples.
//!
//! All generators are pure functions of their config, seed included.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{qr_thin, Matrix};
use crate::seed::{rng_for, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Oscillation {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WigglyConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Quadratic trend `a·x1² + b·x1 + c`.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub components: Vec<Oscillation>,
    pub x1_range: [f64; 2],
    pub x2_range: [f64; 2],
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for WigglyConfig {
    fn default() -> Self {
        Self {
            n_train: 800,
            n_test: 200,
            a: 0.8,
            b: 0.0,
            c: 0.0,
            components: vec![
                Oscillation { amplitude: 0.6, frequency: 3.0, phase: 0.0 },
                Oscillation { amplitude: 0.25, frequency: 9.0, phase: 1.0 },
            ],
            x1_range: [-2.0, 2.0],
            x2_range: [-1.5, 4.0],
            noise_std: 0.08,
            seed: 0,
        }
    }
}

impl WigglyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("wiggly: n_train and n_test must be >= 1".into()));
        }
        if self.components.iter().any(|c| !(c.frequency > 0.0)) {
            return Err(Error::Config("wiggly: oscillation frequencies must be > 0".into()));
        }
        for (name, r) in [("x1_range", self.x1_range), ("x2_range", self.x2_range)] {
            if !(r[0] < r[1]) {
                return Err(Error::Config(format!("wiggly: {name} must be a nonempty interval")));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("wiggly: noise_std must be >= 0".into()));
        }
        Ok(())
    }

    /// The true decision curve `x2 = boundary(x1)`.
    pub fn boundary(&self, x1: f64) -> f64 {
        wiggly_boundary(self, x1)
    }

    /// Ground-truth label of a clean point: `+1` strictly above the curve.
    pub fn true_label(&self, x1: f64, x2: f64) -> i8 {
        if x2 > self.boundary(x1) {
            1
        } else {
            -1
        }
    }
}

pub fn wiggly_boundary(cfg: &WigglyConfig, x1: f64) -> f64 {
    let trend = cfg.a * x1 * x1 + cfg.b * x1 + cfg.c;
    cfg.components.iter().fold(trend, |acc, o| acc + o.amplitude * (o.frequency * x1 + o.phase).sin())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint2D {
    pub x1: f64,
    pub x2: f64,
    /// `+1` or `−1`.
    pub label: i8,
}

fn sample_points(cfg: &WigglyConfig, n: usize, seed_stream: u64) -> Vec<LabeledPoint2D> {
    let mut rng = rng_for(cfg.seed, seed_stream);
    (0..n)
        .map(|_| {
            let x1 = rng.random_range(cfg.x1_range[0]..cfg.x1_range[1]);
            let x2 = rng.random_range(cfg.x2_range[0]..cfg.x2_range[1]);
            let label = cfg.true_label(x1, x2);
            // Noise draws happen regardless of noise_std so labels never depend on it.
            let n1: f64 = StandardNormal.sample(&mut rng);
            let n2: f64 = StandardNormal.sample(&mut rng);
            LabeledPoint2D { x1: x1 + cfg.noise_std * n1, x2: x2 + cfg.noise_std * n2, label }
        })
        .collect()
}

/// Independent train and test draws from the wiggly task.
pub fn generate_wiggly(cfg: &WigglyConfig) -> Result<(Vec<LabeledPoint2D>, Vec<LabeledPoint2D>)> {
    cfg.validate()?;
    Ok((sample_points(cfg, cfg.n_train, stream::TRAIN_DATA), sample_points(cfg, cfg.n_test, stream::TEST_DATA)))
}

pub fn write_points_csv(points: &[LabeledPoint2D], mut out: impl Write) -> Result<()> {
    let mut s = String::from("x1,x2,label\n");
    for p in points {
        writeln!(s, "{},{},{}", p.x1, p.x2, p.label).expect("write to string");
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_points_csv(input: impl BufRead) -> Result<Vec<LabeledPoint2D>> {
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "x1,x2,label" => {}
        _ => return Err(Error::Config("points CSV must start with header x1,x2,label".into())),
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Config(format!("points CSV line {}: cannot parse {line:?}", i + 2));
        let mut it = line.split(',');
        let x1: f64 = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let x2: f64 = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let label: i8 = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        if it.next().is_some() || (label != 1 && label != -1) {
            return Err(bad());
        }
        points.push(LabeledPoint2D { x1, x2, label });
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubspaceMixtureConfig {
    /// Fine dimension.
    pub f: usize,
    /// Coarse dimension.
    pub c: usize,
    pub basis_seed: u64,
    /// Class means in coarse coordinates (length `c`).
    pub s_pos: Vec<f64>,
    pub s_neg: Vec<f64>,
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for SubspaceMixtureConfig {
    fn default() -> Self {
        Self {
            f: 32,
            c: 4,
            basis_seed: 7,
            s_pos: vec![1.0, 0.0, 0.0, 0.0],
            s_neg: vec![-1.0, 0.0, 0.0, 0.0],
            sigma: 1.0,
            n: 100_000,
            seed: 0,
        }
    }
}

impl SubspaceMixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.c >= self.f {
            return Err(Error::Config(format!("mixture: need 1 <= c < f, got c={} f={}", self.c, self.f)));
        }
        if self.s_pos.len() != self.c || self.s_neg.len() != self.c {
            return Err(Error::Config("mixture: class means must have length c".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("mixture: sigma must be >= 0".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("mixture: n must be >= 1".into()));
        }
        Ok(())
    }

    /// Orthonormal `f×c` basis of the coarse subspace.
    pub fn basis(&self) -> Result<Matrix> {
        let w = Matrix::seeded_normal(self.f, self.c, crate::seed::sub_seed(self.basis_seed, stream::BASIS));
        Ok(qr_thin(&w)?.0)
    }
}

/// Samples `h = s_y + n` with `s_y ∈ range(basis)` and `n ∈ range(basis)^⊥`.
#[derive(Clone, Debug)]
pub struct SubspaceMixture {
    pub basis: Matrix,
    /// One sample per row (`n×f`).
    pub samples: Matrix,
    pub labels: Vec<i8>,
    pub sigma: f64,
    /// Fine-space class means `B·s_pos`, `B·s_neg`.
    pub mean_pos: Vec<f64>,
    pub mean_neg: Vec<f64>,
}

impl SubspaceMixture {
    pub fn mean_for(&self, label: i8) -> &[f64] {
        if label > 0 {
            &self.mean_pos
        } else {
            &self.mean_neg
        }
    }

    /// Orthogonal projector `B Bᵀ` onto the coarse subspace.
    pub fn projector(&self) -> Matrix {
        self.basis.matmul_unchecked(&self.basis.transpose())
    }
}

pub fn generate_subspace_mixture(cfg: &SubspaceMixtureConfig) -> Result<SubspaceMixture> {
    cfg.validate()?;
    let basis = cfg.basis()?;
    let lift = |coords: &[f64]| basis.matmul_unchecked(&Matrix::column_vector(coords)).into_data();
    let mean_pos = lift(&cfg.s_pos);
    let mean_neg = lift(&cfg.s_neg);
    let mut rng = rng_for(cfg.seed, stream::TRAIN_DATA);
    let mut samples = Matrix::zeros(cfg.n, cfg.f);
    let mut labels = Vec::with_capacity(cfg.n);
    let bt = basis.transpose();
    for i in 0..cfg.n {
        let label: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
        let g = Matrix::random_normal(cfg.f, 1, 1.0, &mut rng);
        let coarse = basis.matmul_unchecked(&bt.matmul_unchecked(&g));
        let mean = if label > 0 { &mean_pos } else { &mean_neg };
        for (j, out) in samples.row_mut(i).iter_mut().enumerate() {
            *out = mean[j] + cfg.sigma * (g.data()[j] - coarse.data()[j]);
        }
        labels.push(label);
    }
    Ok(SubspaceMixture { basis, samples, labels, sigma: cfg.sigma, mean_pos, mean_neg })
}

/// Token id reserved for padding.
pub const PAD: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenTaskConfig {
    pub vocab_size: usize,
    /// Padded sequence length.
    pub t: usize,
    /// Tokens in the class-determined signal block.
    pub pattern_len: usize,
    /// Distinct signal tokens per class.
    pub signal_tokens_per_class: usize,
    /// Probability that each signal-block token comes from the sample's own class.
    pub signal_purity: f64,
    /// Probability that a sample receives injected noise.
    pub noise_prob: f64,
    /// Upper bound `K` of the uniform noise count `k ∈ {1..K}`.
    pub max_noise: usize,
    pub noise_pool_size: usize,
    /// Fraction of positive samples, honoured exactly up to rounding.
    pub positive_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for TokenTaskConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            t: 16,
            pattern_len: 3,
            signal_tokens_per_class: 6,
            signal_purity: 0.75,
            noise_prob: 0.7,
            max_noise: 10,
            noise_pool_size: 40,
            positive_fraction: 0.3,
            n_train: 1200,
            n_test: 400,
            seed: 0,
        }
    }
}

impl TokenTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("token task: {m}")));
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return err(format!("noise_prob {} outside [0, 1]", self.noise_prob));
        }
        if !(0.0..=1.0).contains(&self.signal_purity) {
            return err(format!("signal_purity {} outside [0, 1]", self.signal_purity));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return err(format!("positive_fraction {} outside [0, 1]", self.positive_fraction));
        }
        if self.pattern_len == 0 || self.signal_tokens_per_class == 0 {
            return err("pattern_len and signal_tokens_per_class must be >= 1".into());
        }
        if self.pattern_len + self.max_noise > self.t {
            return err(format!(
                "pattern ({}) plus max noise ({}) exceeds sequence length {}",
                self.pattern_len, self.max_noise, self.t
            ));
        }
        if self.max_noise > self.noise_pool_size {
            return err("max_noise cannot exceed noise_pool_size (sampling is without replacement)".into());
        }
        let needed = 1 + 2 * self.signal_tokens_per_class + self.noise_pool_size;
        if self.vocab_size < needed {
            return err(format!("vocab_size {} < {needed} required ids", self.vocab_size));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return err("n_train and n_test must be >= 1".into());
        }
        Ok(())
    }

    /// Signal ids of a class: `−1` owns `1..=m`, `+1` owns `m+1..=2m`.
    pub fn signal_tokens(&self, label: i8) -> std::ops::RangeInclusive<usize> {
        let m = self.signal_tokens_per_class;
        if label > 0 {
            m + 1..=2 * m
        } else {
            1..=m
        }
    }

    /// The fixed pool of label-irrelevant tokens.
    pub fn noise_pool(&self) -> Vec<usize> {
        let first = 1 + 2 * self.signal_tokens_per_class;
        let mut rng = rng_for(self.seed, stream::NOISE_POOL);
        let mut ids: Vec<usize> = (first..self.vocab_size).collect();
        ids.shuffle(&mut rng);
        ids.truncate(self.noise_pool_size);
        ids.sort_unstable();
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSample {
    pub tokens: Vec<usize>,
    pub label: i8,
    /// Number of injected noise tokens (0 when the sample was left clean).
    #[serde(skip)]
    pub noise_tokens: usize,
}

fn token_split(cfg: &TokenTaskConfig, n: usize, seed_stream: u64, pool: &[usize]) -> Vec<TokenSample> {
    let mut rng = rng_for(cfg.seed, seed_stream);
    let n_pos = (n as f64 * cfg.positive_fraction).round() as usize;
    let mut remaining = [n - n_pos, n_pos];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // Rejection sampling: propose a balanced label, accept while its quota lasts.
        let proposal = usize::from(rng.random_bool(0.5));
        if remaining[proposal] == 0 {
            continue;
        }
        remaining[proposal] -= 1;
        let label: i8 = if proposal == 1 { 1 } else { -1 };
        let own: Vec<usize> = cfg.signal_tokens(label).collect();
        let other: Vec<usize> = cfg.signal_tokens(-label).collect();
        let pattern: Vec<usize> = (0..cfg.pattern_len)
            .map(|_| {
                let src = if rng.random_bool(cfg.signal_purity) { &own } else { &other };
                src[rng.random_range(0..src.len())]
            })
            .collect();
        let mut blocks: Vec<Vec<usize>> = vec![pattern];
        let mut noise_tokens = 0;
        if cfg.max_noise > 0 && rng.random_bool(cfg.noise_prob) {
            noise_tokens = rng.random_range(1..=cfg.max_noise);
            for i in index::sample(&mut rng, pool.len(), noise_tokens) {
                blocks.push(vec![pool[i]]);
            }
            blocks.shuffle(&mut rng);
        }
        let mut tokens: Vec<usize> = blocks.into_iter().flatten().collect();
        tokens.resize(cfg.t, PAD);
        out.push(TokenSample { tokens, label, noise_tokens });
    }
    out
}

pub fn generate_token_task(cfg: &TokenTaskConfig) -> Result<(Vec<TokenSample>, Vec<TokenSample>)> {
    cfg.validate()?;
    let pool = cfg.noise_pool();
    Ok((
        token_split(cfg, cfg.n_train, stream::TRAIN_DATA, &pool),
        token_split(cfg, cfg.n_test, stream::TEST_DATA, &pool),
    ))
}

pub fn write_tokens_jsonl(samples: &[TokenSample], mut out: impl Write) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tokens_jsonl(input: impl BufRead) -> Result<Vec<TokenSample>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(cfg: &WigglyConfig) -> WigglyConfig {
        WigglyConfig { noise_std: 0.0, ..cfg.clone() }
    }

    #[test]
    fn boundary_examples() {
        let cfg = WigglyConfig { a: 1.0, b: 0.0, c: 0.0, components: vec![], ..Default::default() };
        assert_eq!(wiggly_boundary(&cfg, 2.0), 4.0);
        let cfg = WigglyConfig {
            a: 0.0,
            components: vec![Oscillation { amplitude: 1.0, frequency: std::f64::consts::PI, phase: 0.0 }],
            ..Default::default()
        };
        assert!((wiggly_boundary(&cfg, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_matches_duplicate_formula() {
        let cfg = WigglyConfig::default();
        for i in 0..1000 {
            let x = -2.0 + 4.0 * i as f64 / 999.0;
            let dup = 0.8 * x * x + 0.0 * x + 0.0 + 0.6 * (3.0 * x + 0.0).sin() + 0.25 * (9.0 * x + 1.0).sin();
            assert_eq!(wiggly_boundary(&cfg, x).to_bits(), dup.to_bits(), "x = {x}");
        }
    }

    #[test]
    fn point_above_boundary_is_positive() {
        let cfg = WigglyConfig::default();
        assert_eq!(cfg.true_label(0.0, cfg.boundary(0.0) + 1.0), 1);
        assert_eq!(cfg.true_label(0.0, cfg.boundary(0.0) - 1.0), -1);
    }

    #[test]
    fn clean_points_carry_true_labels() {
        let cfg = quiet(&WigglyConfig { n_train: 300, n_test: 50, ..Default::default() });
        let (train, test) = generate_wiggly(&cfg).unwrap();
        assert_eq!((train.len(), test.len()), (300, 50));
        for p in train.iter().chain(&test) {
            assert_eq!(p.label, cfg.true_label(p.x1, p.x2));
        }
    }

    #[test]
    fn wiggly_is_deterministic_and_splits_differ() {
        let cfg = WigglyConfig { seed: 5, ..Default::default() };
        let a = generate_wiggly(&cfg).unwrap();
        let b = generate_wiggly(&cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0[..10], a.1[..10]);
    }

    #[test]
    fn labels_do_not_depend_on_noise() {
        let base = WigglyConfig { seed: 3, ..Default::default() };
        let (a, _) = generate_wiggly(&base).unwrap();
        let (b, _) = generate_wiggly(&WigglyConfig { noise_std: 0.5, ..base }).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.label == q.label));
        assert!(a.iter().zip(&b).any(|(p, q)| p.x1 != q.x1));
    }

    #[test]
    fn wiggly_class_balance_is_moderate() {
        let cfg = WigglyConfig { n_train: 10_000, seed: 1, ..Default::default() };
        let (train, _) = generate_wiggly(&cfg).unwrap();
        let pos = train.iter().filter(|p| p.label > 0).count() as f64 / train.len() as f64;
        assert!((0.35..=0.65).contains(&pos), "positive fraction {pos}");
    }

    #[test]
    fn wiggly_config_validation() {
        assert!(WigglyConfig { n_train: 0, ..Default::default() }.validate().is_err());
        assert!(WigglyConfig { x1_range: [1.0, 1.0], ..Default::default() }.validate().is_err());
        let bad = WigglyConfig {
            components: vec![Oscillation { amplitude: 1.0, frequency: 0.0, phase: 0.0 }],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn points_csv_round_trip() {
        let cfg = WigglyConfig { n_train: 20, n_test: 1, ..Default::default() };
        let (train, _) = generate_wiggly(&cfg).unwrap();
        let mut buf = Vec::new();
        write_points_csv(&train, &mut buf).unwrap();
        assert!(buf.starts_with(b"x1,x2,label\n"));
        assert_eq!(read_points_csv(buf.as_slice()).unwrap(), train);
        assert!(read_points_csv(&b"a,b\n"[..]).is_err());
    }

    #[test]
    fn noiseless_mixture_lies_in_subspace() {
        let cfg = SubspaceMixtureConfig { sigma: 0.0, n: 200, ..Default::default() };
        let mix = generate_subspace_mixture(&cfg).unwrap();
        let p = mix.projector();
        for i in 0..cfg.n {
            let h = Matrix::column_vector(mix.samples.row(i));
            let resid = h.sub(&p.matmul(&h).unwrap()).unwrap().frobenius_norm();
            assert!(resid < 1e-10);
        }
    }

    #[test]
    fn mixture_noise_is_orthogonal_to_basis() {
        let cfg = SubspaceMixtureConfig { n: 500, ..Default::default() };
        let mix = generate_subspace_mixture(&cfg).unwrap();
        let p = mix.projector();
        for mean in [&mix.mean_pos, &mix.mean_neg] {
            let m = Matrix::column_vector(mean);
            assert!(p.matmul(&m).unwrap().max_abs_diff(&m) < 1e-12);
        }
        for i in 0..cfg.n {
            let noise: Vec<f64> =
                mix.samples.row(i).iter().zip(mix.mean_for(mix.labels[i])).map(|(h, s)| h - s).collect();
            for j in 0..cfg.c {
                let dot: f64 = noise.iter().zip(mix.basis.column(j)).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mixture_complement_variance_and_class_means() {
        let cfg = SubspaceMixtureConfig { n: 100_000, sigma: 1.0, ..Default::default() };
        let mix = generate_subspace_mixture(&cfg).unwrap();
        // Orthonormal basis of the complement: columns of I − P spanned by a QR.
        let p = mix.projector();
        let comp = Matrix::identity(cfg.f).sub(&p).unwrap();
        let probe = comp.matmul(&Matrix::seeded_normal(cfg.f, 3, 99)).unwrap();
        let (dirs, _) = qr_thin(&probe).unwrap();
        for d in 0..3 {
            let u = dirs.column(d);
            let proj: Vec<f64> =
                (0..cfg.n).map(|i| mix.samples.row(i).iter().zip(&u).map(|(a, b)| a * b).sum()).collect();
            let mean = proj.iter().sum::<f64>() / cfg.n as f64;
            let var = proj.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (cfg.n - 1) as f64;
            assert!((var - 1.0).abs() < 0.02, "direction {d}: variance {var}");
        }
        // class means of P h
        for label in [1i8, -1] {
            let idx: Vec<usize> = (0..cfg.n).filter(|i| mix.labels[*i] == label).collect();
            let target = mix.mean_for(label);
            let coarse: Vec<f64> = {
                let mut acc = vec![0.0; cfg.f];
                for &i in &idx {
                    let ph = p.matmul(&Matrix::column_vector(mix.samples.row(i))).unwrap();
                    for (a, v) in acc.iter_mut().zip(ph.data()) {
                        *a += v;
                    }
                }
                acc.into_iter().map(|a| a / idx.len() as f64).collect()
            };
            let tol = 3.0 * cfg.sigma / (idx.len() as f64).sqrt();
            for (a, b) in coarse.iter().zip(target) {
                assert!((a - b).abs() <= tol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn token_task_without_noise() {
        let cfg = TokenTaskConfig { noise_prob: 0.0, n_train: 200, n_test: 20, ..Default::default() };
        let (train, _) = generate_token_task(&cfg).unwrap();
        let pool = cfg.noise_pool();
        for s in &train {
            assert_eq!(s.noise_tokens, 0);
            assert!(s.tokens[cfg.pattern_len..].iter().all(|t| *t == PAD));
            assert!(s.tokens.iter().all(|t| !pool.contains(t)));
        }
    }

    #[test]
    fn token_task_forced_single_noise_token() {
        let cfg = TokenTaskConfig { noise_prob: 1.0, max_noise: 1, n_train: 200, n_test: 20, ..Default::default() };
        let (train, test) = generate_token_task(&cfg).unwrap();
        let pool = cfg.noise_pool();
        for s in train.iter().chain(&test) {
            assert_eq!(s.noise_tokens, 1);
            assert_eq!(s.tokens.iter().filter(|t| pool.contains(t)).count(), 1);
            assert_eq!(s.tokens.len(), cfg.t);
        }
    }

    #[test]
    fn token_task_noise_rate_and_class_ratio() {
        let cfg = TokenTaskConfig { n_train: 20_000, n_test: 10, ..Default::default() };
        let (train, _) = generate_token_task(&cfg).unwrap();
        let noisy = train.iter().filter(|s| s.noise_tokens > 0).count() as f64 / train.len() as f64;
        assert!((noisy - 0.7).abs() <= 0.01, "noisy fraction {noisy}");
        let pos = train.iter().filter(|s| s.label > 0).count();
        assert_eq!(pos, 6000);
        assert!(train.iter().all(|s| s.noise_tokens <= cfg.max_noise));
    }

    #[test]
    fn token_task_rejects_overfull_sequences() {
        let cfg = TokenTaskConfig { t: 8, pattern_len: 3, max_noise: 6, ..Default::default() };
        assert!(matches!(generate_token_task(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn tokens_jsonl_round_trip() {
        let cfg = TokenTaskConfig { n_train: 5, n_test: 1, ..Default::default() };
        let (train, _) = generate_token_task(&cfg).unwrap();
        let mut buf = Vec::new();
        write_tokens_jsonl(&train, &mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        assert!(first.lines().next().unwrap().starts_with("{\"tokens\":["));
        let back = read_tokens_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.len(), train.len());
        for (a, b) in back.iter().zip(&train) {
            assert_eq!((&a.tokens, a.label), (&b.tokens, b.label));
        }
    }
}
