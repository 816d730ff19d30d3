//! Closed-form gradients of the batch loss and the fast-gradient adversary.

use crate::error::Result;
use crate::model::{Effective, Example, ModelParams, NoiseKind, NoiseSite, NoiseSpec, NoiseTensor, SparseInput};
use crate::numerics::{axpy_slices, bce_and_grad, dot_slices, gaussian_fill, scale_to_norm, Matrix, RngStream};

/// Gradients shaped like [`ModelParams`].
///
/// The data term only touches the `P` columns of batch users; the `gamma`
/// regularizer, when present, adds `2 gamma P` to every column.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub w1: Matrix,
    pub w2: Matrix,
    pub b1: Matrix,
    pub b2: Matrix,
    pub p: Matrix,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ParamGrads {
            w1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
            w2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
            b1: Matrix::zeros(params.b1.rows(), 1),
            b2: Matrix::zeros(params.b2.rows(), 1),
            p: Matrix::zeros(params.p.rows(), params.p.cols()),
        }
    }

    /// `[W1, W2, b1, b2, P]`, matching [`ModelParams::tensors`].
    pub fn tensors(&self) -> [&Matrix; 5] {
        [&self.w1, &self.w2, &self.b1, &self.b2, &self.p]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

/// Forward and backward over `batch`, adding `scale` times the gradient of the
/// cross-entropy into `grads`. When `hidden_grad` is given, the unscaled
/// gradient with respect to the hidden output is summed into it. Returns the
/// unscaled cross-entropy.
///
/// The decoder is swept item-major so each row of W2 and its gradient stays
/// hot while the batch's hidden vectors stream past it.
fn data_pass(
    eff: &Effective<'_>,
    batch: &[Example<'_>],
    scale: f64,
    grads: &mut ParamGrads,
    hidden_grad: Option<&mut [f64]>,
) -> f64 {
    let params = eff.params;
    let k = params.hidden();
    let items = params.items();
    let users = params.users();
    let nb = batch.len();
    let mut hs = vec![0.0; nb * k];
    let mut acts = vec![0.0; nb * k];
    let mut dhs = vec![0.0; nb * k];
    let mut z1 = vec![0.0; k];

    for (b, ex) in batch.iter().enumerate() {
        eff.encode(ex.user, ex.sparse_input(), &mut z1, &mut hs[b * k..(b + 1) * k]);
        for (a, z) in acts[b * k..(b + 1) * k].iter_mut().zip(&z1) {
            *a = params.encoder.apply(*z);
        }
    }

    let mut cursors = vec![0usize; nb];
    let mut losses = vec![0.0; nb];
    let b2 = params.b2.as_slice();
    let gw2 = grads.w2.as_mut_slice();
    let gb2 = grads.b2.as_mut_slice();
    for i in 0..items {
        let row = eff.w2.row(i);
        let grow = &mut gw2[i * k..(i + 1) * k];
        let mut gb = 0.0;
        for (b, ex) in batch.iter().enumerate() {
            let h = &hs[b * k..(b + 1) * k];
            let logit = dot_slices(row, h) + b2[i];
            let label = if ex.target.get(cursors[b]) == Some(&i) {
                cursors[b] += 1;
                1.0
            } else {
                0.0
            };
            let (loss, delta) = bce_and_grad(label, logit);
            losses[b] += loss;
            let sd = scale * delta;
            gb += sd;
            axpy_slices(sd, h, grow);
            axpy_slices(delta, row, &mut dhs[b * k..(b + 1) * k]);
        }
        gb2[i] += gb;
    }

    if let Some(hg) = hidden_grad {
        for dh in dhs.chunks_exact(k) {
            axpy_slices(1.0, dh, hg);
        }
    }

    let gb1 = grads.b1.as_mut_slice();
    let gp = grads.p.as_mut_slice();
    let gw1 = grads.w1.as_mut_slice();
    for (b, ex) in batch.iter().enumerate() {
        let input = ex.sparse_input();
        for r in 0..k {
            let dz = dhs[b * k + r] * params.encoder.derivative_from_output(acts[b * k + r]);
            let sg = scale * dz;
            gb1[r] += sg;
            gp[r * users + ex.user] += sg;
            let grow = &mut gw1[r * items..(r + 1) * items];
            match input {
                SparseInput::Binary(idx) => {
                    for &i in idx {
                        grow[i] += sg;
                    }
                }
                SparseInput::Weighted(pairs) => {
                    for &(i, v) in pairs {
                        grow[i] += sg * v;
                    }
                }
            }
        }
    }
    losses.iter().sum()
}

fn add_regularizer(params: &ModelParams, gamma: f64, grads: &mut ParamGrads) {
    if gamma == 0.0 {
        return;
    }
    let g = [&mut grads.w1, &mut grads.w2, &mut grads.b1, &mut grads.b2, &mut grads.p];
    for (grad, param) in g.into_iter().zip(params.tensors()) {
        for (a, b) in grad.as_mut_slice().iter_mut().zip(param.as_slice()) {
            *a += 2.0 * gamma * b;
        }
    }
}

/// Adds every `(noise, lambda)` term with non-zero `lambda` to `grads` and
/// returns the weighted cross-entropy they contribute.
fn add_noise_terms(
    params: &ModelParams,
    batch: &[Example<'_>],
    noise_terms: &[(NoiseTensor, f64)],
    grads: &mut ParamGrads,
) -> Result<f64> {
    let mut loss = 0.0;
    for (noise, lambda) in noise_terms {
        if *lambda == 0.0 {
            continue;
        }
        let eff = Effective::with_noise(params, Some(noise))?;
        loss += lambda * data_pass(&eff, batch, *lambda, grads, None);
    }
    Ok(loss)
}

/// Loss and exact gradient of [`crate::model::batch_loss`].
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &[Example<'_>],
    noise_terms: &[(NoiseTensor, f64)],
    gamma: f64,
) -> Result<(f64, ParamGrads)> {
    check(params, batch, noise_terms)?;
    let mut grads = ParamGrads::zeros_like(params);
    let mut loss = data_pass(&Effective::clean(params), batch, 1.0, &mut grads, None);
    loss += add_noise_terms(params, batch, noise_terms, &mut grads)?;
    add_regularizer(params, gamma, &mut grads);
    if gamma != 0.0 {
        loss += gamma * params.squared_norm();
    }
    Ok((loss, grads))
}

fn check(params: &ModelParams, batch: &[Example<'_>], noise_terms: &[(NoiseTensor, f64)]) -> Result<()> {
    for ex in batch {
        crate::model::forward_checks(params, ex)?;
    }
    noise_terms.iter().try_for_each(|(n, _)| n.check(params))
}

pub fn backprop(
    params: &ModelParams,
    batch: &[Example<'_>],
    noise_terms: &[(NoiseTensor, f64)],
    gamma: f64,
) -> Result<ParamGrads> {
    loss_and_grads(params, batch, noise_terms, gamma).map(|(_, g)| g)
}

/// Gradient of the unregularized batch cross-entropy with respect to every
/// noise site, evaluated at zero noise, plus the clean loss and gradients.
pub struct CleanPass {
    pub loss: f64,
    pub grads: ParamGrads,
    hidden: Vec<f64>,
}

impl CleanPass {
    pub fn run(params: &ModelParams, batch: &[Example<'_>]) -> Result<Self> {
        check(params, batch, &[])?;
        let mut grads = ParamGrads::zeros_like(params);
        let mut hidden = vec![0.0; params.hidden()];
        let loss = data_pass(
            &Effective::clean(params),
            batch,
            1.0,
            &mut grads,
            Some(&mut hidden),
        );
        Ok(CleanPass { loss, grads, hidden })
    }

    /// The noise enters additively next to W1, W2 and b1, so those sites share
    /// the corresponding parameter gradient.
    pub fn site_grad(&self, site: NoiseSite) -> Matrix {
        match site {
            NoiseSite::EncoderWeights => self.grads.w1.clone(),
            NoiseSite::DecoderWeights => self.grads.w2.clone(),
            NoiseSite::UserEmbedding => self.grads.b1.clone(),
            NoiseSite::HiddenLayer => Matrix::column(self.hidden.clone()),
        }
    }

    pub fn adversarial_noise(&self, site: NoiseSite, epsilon: f64) -> NoiseTensor {
        adversarial_from_grad(site, &self.site_grad(site), epsilon)
    }
}

fn adversarial_from_grad(site: NoiseSite, grad: &Matrix, epsilon: f64) -> NoiseTensor {
    NoiseTensor {
        spec: NoiseSpec {
            site,
            kind: NoiseKind::Adversarial,
            epsilon,
        },
        values: scale_to_norm(grad, epsilon),
    }
}

/// One maximization step followed by the gradient of the full adversarial
/// loss: fast-gradient noise is built at every site with a non-zero weight,
/// held fixed, and its weighted cross-entropy added to the clean loss and the
/// `gamma` regularizer. With `epsilon == 0` or no active site this is exactly
/// [`loss_and_grads`] on the plain loss.
pub fn minimax_grads(
    params: &ModelParams,
    batch: &[Example<'_>],
    lambdas: &[(NoiseSite, f64)],
    epsilon: f64,
    gamma: f64,
) -> Result<(f64, ParamGrads)> {
    let active: Vec<(NoiseSite, f64)> = lambdas.iter().copied().filter(|(_, l)| *l != 0.0).collect();
    if active.is_empty() || epsilon == 0.0 {
        return loss_and_grads(params, batch, &[], gamma);
    }
    let clean = CleanPass::run(params, batch)?;
    let terms: Vec<(NoiseTensor, f64)> = active
        .iter()
        .map(|&(site, lambda)| (clean.adversarial_noise(site, epsilon), lambda))
        .collect();
    let CleanPass { mut loss, mut grads, .. } = clean;
    loss += add_noise_terms(params, batch, &terms, &mut grads)?;
    add_regularizer(params, gamma, &mut grads);
    if gamma != 0.0 {
        loss += gamma * params.squared_norm();
    }
    Ok((loss, grads))
}

pub fn noise_grad(params: &ModelParams, batch: &[Example<'_>], site: NoiseSite) -> Result<Matrix> {
    Ok(CleanPass::run(params, batch)?.site_grad(site))
}

/// Fast-gradient adversary: the noise-site gradient rescaled to norm
/// `epsilon`, or zero when the gradient vanishes.
pub fn make_adversarial_noise(
    params: &ModelParams,
    batch: &[Example<'_>],
    site: NoiseSite,
    epsilon: f64,
) -> Result<NoiseTensor> {
    Ok(adversarial_from_grad(site, &noise_grad(params, batch, site)?, epsilon))
}

/// Standard-normal direction rescaled to norm `epsilon`.
pub fn make_gaussian_noise(
    site: NoiseSite,
    params: &ModelParams,
    epsilon: f64,
    rng: &mut RngStream,
) -> NoiseTensor {
    let (r, c) = site.shape(params);
    let raw = gaussian_fill(r, c, 1.0, rng);
    NoiseTensor {
        spec: NoiseSpec {
            site,
            kind: NoiseKind::Gaussian,
            epsilon,
        },
        values: scale_to_norm(&raw, epsilon),
    }
}
