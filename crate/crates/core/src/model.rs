//! Collaborative auto-encoder: forward pass, the four noise-injection
//! variants, scoring, ranking and the regularized cross-entropy batch loss.
//!
//! For user `u` with binary profile `y`:
//!
//! ```text
//! z1     = (W1 + N1) y + p_u + n1 + b1
//! h      = act_enc(z1) + n2
//! logits = (W2 + N2) h + b2
//! scores = act_dec(logits)
//! ```
//!
//! The cross-entropy is always taken on `logits` (the sigmoid lives inside the
//! loss), so the decoder activation only changes the reported scores, never
//! the ranking or the loss.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::str::FromStr;

use crate::error::{AcaeError, Result};
use crate::numerics::{axpy_slices, bce_with_logits, dot_slices, sigmoid, Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Sigmoid,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Identity => x,
        }
    }

    /// Derivative expressed through the activated value.
    #[inline]
    pub(crate) fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => out * (1.0 - out),
            ActivationKind::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            ActivationKind::Sigmoid => 0,
            ActivationKind::Identity => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ActivationKind::Sigmoid),
            1 => Some(ActivationKind::Identity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Identity => "identity",
        }
    }
}

impl FromStr for ActivationKind {
    type Err = AcaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "identity" => Ok(ActivationKind::Identity),
            other => Err(AcaeError::InvalidInput(format!(
                "unknown activation {other:?} (expected sigmoid or identity)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Encoder weights, `K x I`.
    pub w1: Matrix,
    /// Decoder weights, `I x K`.
    pub w2: Matrix,
    /// Encoder bias, `K x 1`.
    pub b1: Matrix,
    /// Decoder bias, `I x 1`.
    pub b2: Matrix,
    /// User embeddings, `K x U`; column `u` is `p_u`.
    pub p: Matrix,
    pub encoder: ActivationKind,
    pub decoder: ActivationKind,
}

impl ModelParams {
    pub fn zeros(
        users: usize,
        items: usize,
        hidden: usize,
        encoder: ActivationKind,
        decoder: ActivationKind,
    ) -> Self {
        ModelParams {
            w1: Matrix::zeros(hidden, items),
            w2: Matrix::zeros(items, hidden),
            b1: Matrix::zeros(hidden, 1),
            b2: Matrix::zeros(items, 1),
            p: Matrix::zeros(hidden, users),
            encoder,
            decoder,
        }
    }

    pub fn users(&self) -> usize {
        self.p.cols()
    }

    pub fn items(&self) -> usize {
        self.w2.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, i, u) = (self.hidden(), self.items(), self.users());
        let expect = [
            ("W1", self.w1.shape(), (k, i)),
            ("W2", self.w2.shape(), (i, k)),
            ("b1", self.b1.shape(), (k, 1)),
            ("b2", self.b2.shape(), (i, 1)),
            ("P", self.p.shape(), (k, u)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(AcaeError::shape(
                    "ModelParams",
                    format!("{name} {}x{}", want.0, want.1),
                    format!("{}x{}", got.0, got.1),
                ));
            }
        }
        if !self.tensors().iter().all(|m| m.is_finite()) {
            return Err(AcaeError::InvalidInput("parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// `[W1, W2, b1, b2, P]`.
    pub fn tensors(&self) -> [&Matrix; 5] {
        [&self.w1, &self.w2, &self.b1, &self.b2, &self.p]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 5] {
        [
            &mut self.w1,
            &mut self.w2,
            &mut self.b1,
            &mut self.b2,
            &mut self.p,
        ]
    }

    /// `||W1||^2 + ||W2||^2 + ||b1||^2 + ||b2||^2 + ||P||^2`.
    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|m| m.sum_of_squares()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseSite {
    EncoderWeights,
    DecoderWeights,
    UserEmbedding,
    HiddenLayer,
}

impl NoiseSite {
    pub const ALL: [NoiseSite; 4] = [
        NoiseSite::EncoderWeights,
        NoiseSite::DecoderWeights,
        NoiseSite::UserEmbedding,
        NoiseSite::HiddenLayer,
    ];

    pub fn shape(self, params: &ModelParams) -> (usize, usize) {
        match self {
            NoiseSite::EncoderWeights => params.w1.shape(),
            NoiseSite::DecoderWeights => params.w2.shape(),
            NoiseSite::UserEmbedding | NoiseSite::HiddenLayer => (params.hidden(), 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseSite::EncoderWeights => "encoder",
            NoiseSite::DecoderWeights => "decoder",
            NoiseSite::UserEmbedding => "embedding",
            NoiseSite::HiddenLayer => "hidden",
        }
    }
}

impl FromStr for NoiseSite {
    type Err = AcaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" | "encoder_weights" => Ok(NoiseSite::EncoderWeights),
            "decoder" | "decoder_weights" => Ok(NoiseSite::DecoderWeights),
            "embedding" | "user_embedding" => Ok(NoiseSite::UserEmbedding),
            "hidden" | "hidden_layer" => Ok(NoiseSite::HiddenLayer),
            other => Err(AcaeError::InvalidInput(format!(
                "unknown noise site {other:?} (expected encoder, decoder, embedding or hidden)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Gaussian,
    Adversarial,
    Zero,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Adversarial => "adversarial",
            NoiseKind::Zero => "zero",
        }
    }
}

impl FromStr for NoiseKind {
    type Err = AcaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "adversarial" => Ok(NoiseKind::Adversarial),
            "zero" => Ok(NoiseKind::Zero),
            other => Err(AcaeError::InvalidInput(format!("unknown noise kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub site: NoiseSite,
    pub kind: NoiseKind,
    pub epsilon: f64,
}

/// A realized perturbation for one site.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTensor {
    pub spec: NoiseSpec,
    pub values: Matrix,
}

impl NoiseTensor {
    pub fn zero(site: NoiseSite, params: &ModelParams) -> Self {
        let (r, c) = site.shape(params);
        NoiseTensor {
            spec: NoiseSpec {
                site,
                kind: NoiseKind::Zero,
                epsilon: 0.0,
            },
            values: Matrix::zeros(r, c),
        }
    }

    pub fn site(&self) -> NoiseSite {
        self.spec.site
    }

    pub(crate) fn check(&self, params: &ModelParams) -> Result<()> {
        let want = self.spec.site.shape(params);
        if self.values.shape() != want {
            return Err(AcaeError::shape(
                "noise tensor",
                format!("{} site {}x{}", self.spec.site.name(), want.0, want.1),
                format!("{}x{}", self.values.rows(), self.values.cols()),
            ));
        }
        Ok(())
    }
}

/// Intermediate quantities of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// Hidden pre-activation.
    pub z1: Vec<f64>,
    /// Hidden output, including any hidden-layer noise.
    pub h: Vec<f64>,
    /// Output scores before the decoder activation.
    pub logits: Vec<f64>,
}

/// Mask-out corruption of the input profile.
pub struct InputCorruption<'a> {
    pub drop_prob: f64,
    pub rng: &'a mut RngStream,
}

/// Input profile of one user: a binary vector given by its non-zero indices,
/// or an explicitly weighted sparse vector.
#[derive(Clone, Copy, Debug)]
pub enum SparseInput<'a> {
    Binary(&'a [usize]),
    Weighted(&'a [(usize, f64)]),
}

/// One user of a mini-batch. `input` defaults to the target profile.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub user: usize,
    pub target: &'a [usize],
    pub input: Option<&'a [(usize, f64)]>,
}

impl<'a> Example<'a> {
    pub fn new(user: usize, target: &'a [usize]) -> Self {
        Example {
            user,
            target,
            input: None,
        }
    }

    pub(crate) fn sparse_input(&self) -> SparseInput<'a> {
        match self.input {
            Some(w) => SparseInput::Weighted(w),
            None => SparseInput::Binary(self.target),
        }
    }
}

/// Mask-out corruption: drops each coordinate with `drop_prob` and rescales
/// survivors by `1 / (1 - drop_prob)`.
pub fn corrupt_input(profile: &[usize], drop_prob: f64, rng: &mut RngStream) -> Vec<(usize, f64)> {
    if drop_prob <= 0.0 {
        return profile.iter().map(|&i| (i, 1.0)).collect();
    }
    let keep = 1.0 / (1.0 - drop_prob);
    profile
        .iter()
        .filter(|_| rng.uniform() >= drop_prob)
        .map(|&i| (i, keep))
        .collect()
}

/// Parameter view with at most a few noise tensors folded in.
pub(crate) struct Effective<'a> {
    pub params: &'a ModelParams,
    pub w1: Cow<'a, Matrix>,
    pub w2: Cow<'a, Matrix>,
    pub n1: Option<&'a [f64]>,
    pub n2: Option<&'a [f64]>,
}

impl<'a> Effective<'a> {
    pub fn clean(params: &'a ModelParams) -> Self {
        Effective {
            params,
            w1: Cow::Borrowed(&params.w1),
            w2: Cow::Borrowed(&params.w2),
            n1: None,
            n2: None,
        }
    }

    pub fn with_noise(params: &'a ModelParams, noise: Option<&'a NoiseTensor>) -> Result<Self> {
        let mut eff = Effective::clean(params);
        if let Some(n) = noise {
            n.check(params)?;
            match n.site() {
                NoiseSite::EncoderWeights => eff.w1 = Cow::Owned(params.w1.plus(&n.values)?),
                NoiseSite::DecoderWeights => eff.w2 = Cow::Owned(params.w2.plus(&n.values)?),
                NoiseSite::UserEmbedding => eff.n1 = Some(n.values.as_slice()),
                NoiseSite::HiddenLayer => eff.n2 = Some(n.values.as_slice()),
            }
        }
        Ok(eff)
    }

    /// Fills `z1` and `h`.
    pub fn encode(&self, user: usize, input: SparseInput<'_>, z1: &mut [f64], h: &mut [f64]) {
        let p = self.params;
        let k = p.hidden();
        let items = p.items();
        let w1 = self.w1.as_slice();
        for (r, z) in z1.iter_mut().enumerate() {
            let row = &w1[r * items..(r + 1) * items];
            let mut acc = match input {
                SparseInput::Binary(idx) => idx.iter().map(|&i| row[i]).sum::<f64>(),
                SparseInput::Weighted(pairs) => pairs.iter().map(|&(i, v)| row[i] * v).sum(),
            };
            acc += p.p.get(r, user);
            if let Some(n1) = self.n1 {
                acc += n1[r];
            }
            acc += p.b1.as_slice()[r];
            *z = acc;
        }
        for r in 0..k {
            h[r] = p.encoder.apply(z1[r]);
        }
        if let Some(n2) = self.n2 {
            axpy_slices(1.0, n2, h);
        }
    }

    #[inline]
    pub fn logit(&self, item: usize, h: &[f64]) -> f64 {
        dot_slices(self.w2.row(item), h) + self.params.b2.as_slice()[item]
    }

    pub fn decode_all(&self, h: &[f64], logits: &mut [f64]) {
        for (i, l) in logits.iter_mut().enumerate() {
            *l = self.logit(i, h);
        }
    }

    /// Cross-entropy of one example summed over all items.
    pub fn example_loss(&self, ex: &Example<'_>, z1: &mut [f64], h: &mut [f64], logits: &mut [f64]) -> f64 {
        self.encode(ex.user, ex.sparse_input(), z1, h);
        self.decode_all(h, logits);
        // bce(1, a) = bce(0, a) - a
        let negatives: f64 = logits.iter().map(|&a| bce_with_logits(0.0, a)).sum();
        negatives - ex.target.iter().map(|&i| logits[i]).sum::<f64>()
    }
}

fn check_input(params: &ModelParams, user: usize, y_u: &[usize]) -> Result<()> {
    if user >= params.users() {
        return Err(AcaeError::shape(
            "forward",
            format!("user < {}", params.users()),
            user.to_string(),
        ));
    }
    if let Some(&bad) = y_u.iter().find(|&&i| i >= params.items()) {
        return Err(AcaeError::shape(
            "forward",
            format!("item index < {}", params.items()),
            bad.to_string(),
        ));
    }
    Ok(())
}

pub fn forward(
    params: &ModelParams,
    user: usize,
    y_u: &[usize],
    noise: Option<&NoiseTensor>,
    corruption: Option<InputCorruption<'_>>,
) -> Result<ForwardTrace> {
    check_input(params, user, y_u)?;
    let eff = Effective::with_noise(params, noise)?;
    let k = params.hidden();
    let mut z1 = vec![0.0; k];
    let mut h = vec![0.0; k];
    let mut logits = vec![0.0; params.items()];
    match corruption {
        Some(c) => {
            let weighted = corrupt_input(y_u, c.drop_prob, c.rng);
            eff.encode(user, SparseInput::Weighted(&weighted), &mut z1, &mut h);
        }
        None => eff.encode(user, SparseInput::Binary(y_u), &mut z1, &mut h),
    }
    eff.decode_all(&h, &mut logits);
    Ok(ForwardTrace { z1, h, logits })
}

/// Scores of every item for user `u`: logits passed through the decoder
/// activation.
pub fn score_user(params: &ModelParams, u: usize, y_u: &[usize]) -> Result<Vec<f64>> {
    let mut scores = forward(params, u, y_u, None, None)?.logits;
    if params.decoder != ActivationKind::Identity {
        scores.iter_mut().for_each(|s| *s = params.decoder.apply(*s));
    }
    Ok(scores)
}

#[inline]
fn by_score_then_index(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `n` best candidates by descending score; ties go to the smaller index.
pub fn rank_top_n(scores: &[f64], candidates: &[usize], n: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = candidates.iter().map(|&i| (i, scores[i])).collect();
    rank_scored(&mut scored, n)
}

/// Ranks `(item, score)` pairs in place and returns the top `n` items.
pub fn rank_scored(scored: &mut [(usize, f64)], n: usize) -> Vec<usize> {
    let n = n.min(scored.len());
    if n == 0 {
        return Vec::new();
    }
    if n < scored.len() {
        scored.select_nth_unstable_by(n - 1, |a, b| by_score_then_index(*a, *b));
    }
    let top = &mut scored[..n];
    top.sort_unstable_by(|a, b| by_score_then_index(*a, *b));
    top.iter().map(|p| p.0).collect()
}

pub(crate) fn forward_checks(params: &ModelParams, ex: &Example<'_>) -> Result<()> {
    check_input(params, ex.user, ex.target)?;
    if ex.target.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AcaeError::InvalidInput(format!(
            "targets of user {} must be sorted and distinct",
            ex.user
        )));
    }
    if let Some(w) = ex.input {
        if let Some(&(bad, _)) = w.iter().find(|p| p.0 >= params.items()) {
            return Err(AcaeError::shape(
                "batch input",
                format!("item index < {}", params.items()),
                bad.to_string(),
            ));
        }
    }
    Ok(())
}

fn check_batch(params: &ModelParams, batch: &[Example<'_>]) -> Result<()> {
    batch.iter().try_for_each(|ex| forward_checks(params, ex))
}

/// Unregularized cross-entropy of `batch` under an optional noise tensor.
pub fn cross_entropy(
    params: &ModelParams,
    batch: &[Example<'_>],
    noise: Option<&NoiseTensor>,
) -> Result<f64> {
    check_batch(params, batch)?;
    let eff = Effective::with_noise(params, noise)?;
    let k = params.hidden();
    let (mut z1, mut h) = (vec![0.0; k], vec![0.0; k]);
    let mut logits = vec![0.0; params.items()];
    Ok(batch
        .iter()
        .map(|ex| eff.example_loss(ex, &mut z1, &mut h, &mut logits))
        .sum())
}

/// Clean cross-entropy, plus `lambda` times the cross-entropy under each
/// noise term, plus `gamma` times the squared norm of every parameter.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[Example<'_>],
    noise_terms: &[(NoiseTensor, f64)],
    gamma: f64,
) -> Result<f64> {
    let mut total = cross_entropy(params, batch, None)?;
    for (noise, lambda) in noise_terms {
        if *lambda != 0.0 {
            total += lambda * cross_entropy(params, batch, Some(noise))?;
        }
    }
    if gamma != 0.0 {
        total += gamma * params.squared_norm();
    }
    Ok(total)
}
