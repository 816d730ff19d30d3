// Central finite-difference oracle for the analytic gradients.

#![allow(dead_code)]

use acae_core::gradients::{loss_and_grads, CleanPass};
use acae_core::model::{batch_loss, cross_entropy, corrupt_input};
use acae_core::numerics::gaussian_fill;
use acae_core::{ActivationKind, Example, Matrix, ModelParams, NoiseKind, NoiseSite, NoiseSpec, NoiseTensor, RngStream};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;
pub const SMALL: f64 = 1e-6;

pub const ACTIVATIONS: [(ActivationKind, ActivationKind); 4] = [
    (ActivationKind::Sigmoid, ActivationKind::Sigmoid),
    (ActivationKind::Sigmoid, ActivationKind::Identity),
    (ActivationKind::Identity, ActivationKind::Sigmoid),
    (ActivationKind::Identity, ActivationKind::Identity),
];

#[derive(Debug)]
pub struct Mismatch {
    pub what: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn agrees(analytic: f64, numeric: f64) -> bool {
    if analytic.abs() < SMALL {
        return (analytic - numeric).abs() <= ABS_TOL;
    }
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// Random small problem: parameters, per-user profiles and corrupted inputs.
pub struct Instance {
    pub params: ModelParams,
    pub profiles: Vec<Vec<usize>>,
    pub inputs: Vec<Vec<(usize, f64)>>,
}

impl Instance {
    pub fn new(seed: u64, users: usize, items: usize, k: usize, enc: ActivationKind, dec: ActivationKind) -> Self {
        let mut rng = RngStream::new(seed);
        let params = ModelParams {
            w1: gaussian_fill(k, items, 0.5, &mut rng),
            w2: gaussian_fill(items, k, 0.5, &mut rng),
            b1: gaussian_fill(k, 1, 0.5, &mut rng),
            b2: gaussian_fill(items, 1, 0.5, &mut rng),
            p: gaussian_fill(k, users, 0.5, &mut rng),
            encoder: enc,
            decoder: dec,
        };
        let profiles: Vec<Vec<usize>> = (0..users)
            .map(|_| {
                let n = 1 + rng.below(items / 2);
                let mut v = rng.sample_indices(items, n);
                v.sort_unstable();
                v
            })
            .collect();
        let inputs = profiles.iter().map(|p| corrupt_input(p, 0.3, &mut rng)).collect();
        Instance { params, profiles, inputs }
    }

    pub fn batch(&self) -> Vec<Example<'_>> {
        self.profiles
            .iter()
            .enumerate()
            .map(|(u, p)| Example::new(u, p))
            .collect()
    }

    /// Same targets, but each input is the corrupted, rescaled profile.
    pub fn corrupted_batch(&self) -> Vec<Example<'_>> {
        self.profiles
            .iter()
            .zip(&self.inputs)
            .enumerate()
            .map(|(u, (p, x))| Example {
                user: u,
                target: p,
                input: Some(x),
            })
            .collect()
    }
}

pub fn random_noise(site: NoiseSite, params: &ModelParams, scale: f64, rng: &mut RngStream) -> NoiseTensor {
    let (r, c) = site.shape(params);
    NoiseTensor {
        spec: NoiseSpec {
            site,
            kind: NoiseKind::Gaussian,
            epsilon: scale,
        },
        values: gaussian_fill(r, c, scale, rng),
    }
}

fn central<F: FnMut(&mut Matrix, usize, f64) -> f64>(m: &mut Matrix, index: usize, mut eval: F) -> f64 {
    let orig = m.as_slice()[index];
    let up = eval(m, index, orig + STEP);
    let down = eval(m, index, orig - STEP);
    m.as_mut_slice()[index] = orig;
    (up - down) / (2.0 * STEP)
}

const NAMES: [&str; 5] = ["w1", "w2", "b1", "b2", "p"];

/// Compares every parameter coordinate of [`loss_and_grads`] against central
/// differences of [`batch_loss`].
pub fn check_params(
    params: &ModelParams,
    batch: &[Example<'_>],
    terms: &[(NoiseTensor, f64)],
    gamma: f64,
) -> Vec<Mismatch> {
    let (_, grads) = loss_and_grads(params, batch, terms, gamma).expect("analytic gradient");
    let analytic = grads.tensors();
    let mut work = params.clone();
    let mut out = Vec::new();
    for t in 0..5 {
        let len = analytic[t].len();
        for index in 0..len {
            let numeric = {
                let read = |w: &mut ModelParams, v: f64| {
                    w.tensors_mut()[t].as_mut_slice()[index] = v;
                    batch_loss(w, batch, terms, gamma).unwrap()
                };
                let orig = work.tensors()[t].as_slice()[index];
                let up = read(&mut work, orig + STEP);
                let down = read(&mut work, orig - STEP);
                work.tensors_mut()[t].as_mut_slice()[index] = orig;
                (up - down) / (2.0 * STEP)
            };
            let a = analytic[t].as_slice()[index];
            if !agrees(a, numeric) {
                out.push(Mismatch {
                    what: NAMES[t].to_string(),
                    index,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    out
}

/// Compares the noise-site gradient at zero noise against central
/// differences of the noisy cross-entropy.
pub fn check_site(params: &ModelParams, batch: &[Example<'_>], site: NoiseSite) -> Vec<Mismatch> {
    let analytic = CleanPass::run(params, batch).expect("clean pass").site_grad(site);
    let mut noise = NoiseTensor::zero(site, params);
    let mut out = Vec::new();
    for index in 0..analytic.len() {
        let numeric = central(&mut noise.values, index, |m, i, v| {
            m.as_mut_slice()[i] = v;
            let probe = NoiseTensor {
                spec: NoiseSpec {
                    site,
                    kind: NoiseKind::Gaussian,
                    epsilon: 0.0,
                },
                values: m.clone(),
            };
            cross_entropy(params, batch, Some(&probe)).unwrap()
        });
        let a = analytic.as_slice()[index];
        if !agrees(a, numeric) {
            out.push(Mismatch {
                what: site.name().to_string(),
                index,
                analytic: a,
                numeric,
            });
        }
    }
    out
}

/// Every parameter and noise-site gradient across the four activation
/// configurations, with clean and corrupted inputs and with noise terms in
/// the loss. Returns the number of coordinates compared and the mismatches.
pub fn full_suite(seeds: std::ops::Range<u64>) -> (usize, Vec<Mismatch>) {
    let mut compared = 0;
    let mut bad = Vec::new();
    for seed in seeds {
        for (c, &(enc, dec)) in ACTIVATIONS.iter().enumerate() {
            let users = 4 + (seed as usize % 3);
            let k = 3 + (seed as usize % 2);
            let inst = Instance::new(seed * 31 + c as u64, users, 12, k, enc, dec);
            let params = &inst.params;
            let param_len: usize = params.tensors().iter().map(|m| m.len()).sum();
            let mut rng = RngStream::new(seed ^ 0xfeed);
            let terms: Vec<(NoiseTensor, f64)> = NoiseSite::ALL
                .iter()
                .enumerate()
                .map(|(k, &s)| (random_noise(s, params, 0.2, &mut rng), 0.25 * (k + 1) as f64))
                .collect();
            for batch in [inst.batch(), inst.corrupted_batch()] {
                bad.extend(check_params(params, &batch, &[], 0.0));
                bad.extend(check_params(params, &batch, &[], 0.01));
                bad.extend(check_params(params, &batch, &terms, 0.01));
                compared += 3 * param_len;
                for site in NoiseSite::ALL {
                    let found = check_site(params, &batch, site);
                    compared += site.shape(params).0 * site.shape(params).1;
                    bad.extend(found);
                }
            }
        }
    }
    (compared, bad)
}
