//! Leave-one-out ranking metrics, the popularity baseline and the noise
//! probes run against a trained model.

use std::fmt::Write as _;

use crate::data::SplitSpec;
use crate::error::Result;
use crate::gradients::{make_gaussian_noise, CleanPass};
use crate::model::{rank_scored, Effective, Example, ModelParams, NoiseKind, NoiseSite, NoiseTensor, SparseInput};
use crate::numerics::RngStream;

pub const DEFAULT_CUTOFFS: [usize; 2] = [5, 10];

/// Default probe grid for noise-impact and robustness curves.
pub const DEFAULT_EPS_GRID: [f64; 7] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 15.0];

/// 1 when `held_out` appears in `ranklist`.
pub fn hit(ranklist: &[usize], held_out: usize) -> u8 {
    ranklist.contains(&held_out) as u8
}

/// `1 / log2(position + 1)` for a 1-based hit position, else 0.
pub fn ndcg_at(ranklist: &[usize], held_out: usize) -> f64 {
    match ranklist.iter().position(|&i| i == held_out) {
        Some(pos) => 1.0 / ((pos + 2) as f64).log2(),
        None => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffMetrics {
    pub n: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Sorted by cutoff.
    pub cutoffs: Vec<CutoffMetrics>,
    pub users: usize,
}

impl EvalReport {
    pub fn at(&self, n: usize) -> Option<CutoffMetrics> {
        self.cutoffs.iter().copied().find(|c| c.n == n)
    }

    pub fn hr(&self, n: usize) -> f64 {
        self.at(n).map_or(f64::NAN, |c| c.hr)
    }

    pub fn ndcg(&self, n: usize) -> f64 {
        self.at(n).map_or(f64::NAN, |c| c.ndcg)
    }

    pub const CSV_HEADER: &'static str = "metric,n,value,users";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for c in &self.cutoffs {
            let _ = writeln!(out, "hr,{},{},{}", c.n, c.hr, self.users);
            let _ = writeln!(out, "ndcg,{},{},{}", c.n, c.ndcg, self.users);
        }
        out
    }
}

/// Anything that can score a user's candidate items.
pub trait Scorer {
    /// Writes one score per candidate into `out` (cleared first).
    fn score(&self, user: usize, profile: &[usize], candidates: &[usize], out: &mut Vec<f64>);
}

/// Scores candidates with the auto-encoder, optionally under one noise tensor.
pub struct ModelScorer<'a> {
    eff: Effective<'a>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams, noise: Option<&'a NoiseTensor>) -> Result<Self> {
        Ok(ModelScorer {
            eff: Effective::with_noise(params, noise)?,
        })
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, user: usize, profile: &[usize], candidates: &[usize], out: &mut Vec<f64>) {
        let k = self.eff.params.hidden();
        let (mut z1, mut h) = (vec![0.0; k], vec![0.0; k]);
        self.eff.encode(user, SparseInput::Binary(profile), &mut z1, &mut h);
        let dec = self.eff.params.decoder;
        out.clear();
        out.extend(candidates.iter().map(|&i| dec.apply(self.eff.logit(i, &h))));
    }
}

/// Training-set interaction counts.
pub struct ItemPopScorer {
    counts: Vec<usize>,
}

impl ItemPopScorer {
    pub fn from_split(split: &SplitSpec) -> Self {
        let mut counts = vec![0usize; split.item_count];
        for s in &split.users {
            for &i in &s.train {
                counts[i] += 1;
            }
        }
        ItemPopScorer { counts }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

impl Scorer for ItemPopScorer {
    fn score(&self, _user: usize, _profile: &[usize], candidates: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.extend(candidates.iter().map(|&i| self.counts[i] as f64));
    }
}

/// Metrics of one tested user at each cutoff.
pub fn user_metrics<S: Scorer + ?Sized>(
    scorer: &S,
    user: usize,
    profile: &[usize],
    held_out: usize,
    negatives: &[usize],
    cutoffs: &[usize],
) -> Vec<(u8, f64)> {
    let mut candidates = Vec::with_capacity(negatives.len() + 1);
    candidates.push(held_out);
    candidates.extend_from_slice(negatives);
    let mut scores = Vec::with_capacity(candidates.len());
    scorer.score(user, profile, &candidates, &mut scores);
    let mut scored: Vec<(usize, f64)> = candidates.iter().copied().zip(scores).collect();
    let max_n = cutoffs.iter().copied().max().unwrap_or(0);
    let ranking = rank_scored(&mut scored, max_n);
    cutoffs
        .iter()
        .map(|&n| {
            let top = &ranking[..n.min(ranking.len())];
            (hit(top, held_out), ndcg_at(top, held_out))
        })
        .collect()
}

pub fn evaluate_scorer<S: Scorer + ?Sized>(scorer: &S, split: &SplitSpec, cutoffs: &[usize]) -> EvalReport {
    let mut ns: Vec<usize> = cutoffs.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut hits = vec![0usize; ns.len()];
    let mut gains = vec![0.0f64; ns.len()];
    let mut users = 0usize;
    for (u, s) in split.tested_users() {
        let held = s.held_out.expect("tested user");
        for (k, (h, g)) in user_metrics(scorer, u, &s.train, held, &s.negatives, &ns)
            .into_iter()
            .enumerate()
        {
            hits[k] += h as usize;
            gains[k] += g;
        }
        users += 1;
    }
    let denom = users.max(1) as f64;
    EvalReport {
        cutoffs: ns
            .iter()
            .enumerate()
            .map(|(k, &n)| CutoffMetrics {
                n,
                hr: hits[k] as f64 / denom,
                ndcg: gains[k] / denom,
            })
            .collect(),
        users,
    }
}

/// Scores `{held_out} ∪ negatives` with the user's training profile as
/// input and averages HR@N and NDCG@N over tested users.
pub fn evaluate(params: &ModelParams, split: &SplitSpec, cutoffs: &[usize]) -> Result<EvalReport> {
    evaluate_with_noise(params, split, None, cutoffs)
}

pub fn evaluate_with_noise(
    params: &ModelParams,
    split: &SplitSpec,
    noise: Option<&NoiseTensor>,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    check_split(params, split)?;
    Ok(evaluate_scorer(&ModelScorer::new(params, noise)?, split, cutoffs))
}

fn check_split(params: &ModelParams, split: &SplitSpec) -> Result<()> {
    if params.users() != split.user_count() || params.items() != split.item_count {
        return Err(crate::error::AcaeError::shape(
            "evaluate",
            format!("split of {} users x {} items", params.users(), params.items()),
            format!("{} users x {} items", split.user_count(), split.item_count),
        ));
    }
    Ok(())
}

pub fn itempop(split: &SplitSpec, cutoffs: &[usize]) -> EvalReport {
    evaluate_scorer(&ItemPopScorer::from_split(split), split, cutoffs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub hr5: f64,
    pub ndcg5: f64,
}

/// Metric degradation as a function of injected noise level. The first point
/// is always the clean model at `epsilon = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessCurve {
    pub site: NoiseSite,
    pub kind: NoiseKind,
    pub points: Vec<CurvePoint>,
}

impl RobustnessCurve {
    pub const CSV_HEADER: &'static str = "site,kind,epsilon,hr5,ndcg5";

    pub fn baseline(&self) -> CurvePoint {
        self.points[0]
    }

    pub fn point(&self, epsilon: f64) -> Option<CurvePoint> {
        self.points.iter().copied().find(|p| p.epsilon == epsilon)
    }

    /// `(clean - noisy) / clean` for HR@5 at `epsilon`.
    pub fn relative_hr_drop(&self, epsilon: f64) -> Option<f64> {
        let base = self.baseline().hr5;
        self.point(epsilon).map(|p| (base - p.hr5) / base)
    }

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.site.name(),
                self.kind.name(),
                p.epsilon,
                p.hr5,
                p.ndcg5
            );
        }
        out
    }
}

pub fn curves_to_csv(curves: &[RobustnessCurve]) -> String {
    let mut out = format!("{}\n", RobustnessCurve::CSV_HEADER);
    for c in curves {
        out.push_str(&c.csv_rows());
    }
    out
}

fn grid_with_zero(eps_grid: &[f64]) -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend(eps_grid.iter().copied().filter(|&e| e != 0.0));
    grid
}

/// Tested users with their training profile as both input and target.
pub fn probe_batch(split: &SplitSpec) -> Vec<Example<'_>> {
    split
        .tested_users()
        .map(|(u, s)| Example::new(u, &s.train))
        .collect()
}

/// Injects one noise tensor at a time and records HR@5/NDCG@5 for each
/// `(site, kind)` over `eps_grid`. Adversarial noise linearizes the
/// reconstruction loss of every tested user; Gaussian points average `trials`
/// draws of norm-matched noise.
pub fn noise_impact_probe(
    params: &ModelParams,
    split: &SplitSpec,
    cases: &[(NoiseSite, NoiseKind)],
    eps_grid: &[f64],
    trials: usize,
    rng: &mut RngStream,
) -> Result<Vec<RobustnessCurve>> {
    check_split(params, split)?;
    let clean = evaluate(params, split, &[5])?;
    let clean_point = CurvePoint {
        epsilon: 0.0,
        hr5: clean.hr(5),
        ndcg5: clean.ndcg(5),
    };
    let needs_grad = cases.iter().any(|(_, k)| *k == NoiseKind::Adversarial);
    let pass = if needs_grad {
        Some(CleanPass::run(params, &probe_batch(split))?)
    } else {
        None
    };
    let grid = grid_with_zero(eps_grid);
    let mut curves = Vec::with_capacity(cases.len());
    for &(site, kind) in cases {
        let mut points = vec![clean_point];
        for &eps in &grid[1..] {
            let point = match kind {
                NoiseKind::Zero => clean_point,
                NoiseKind::Adversarial => {
                    let noise = pass.as_ref().unwrap().adversarial_noise(site, eps);
                    let r = evaluate_with_noise(params, split, Some(&noise), &[5])?;
                    CurvePoint {
                        epsilon: eps,
                        hr5: r.hr(5),
                        ndcg5: r.ndcg(5),
                    }
                }
                NoiseKind::Gaussian => {
                    let trials = trials.max(1);
                    let (mut hr, mut ndcg) = (0.0, 0.0);
                    for _ in 0..trials {
                        let noise = make_gaussian_noise(site, params, eps, rng);
                        let r = evaluate_with_noise(params, split, Some(&noise), &[5])?;
                        hr += r.hr(5);
                        ndcg += r.ndcg(5);
                    }
                    CurvePoint {
                        epsilon: eps,
                        hr5: hr / trials as f64,
                        ndcg5: ndcg / trials as f64,
                    }
                }
            };
            points.push(CurvePoint { epsilon: eps, ..point });
        }
        curves.push(RobustnessCurve { site, kind, points });
    }
    Ok(curves)
}

/// Adversarial robustness curve at a single site (decoder weights by
/// convention, where the noise hurts most).
pub fn robustness_sweep(
    params: &ModelParams,
    split: &SplitSpec,
    site: NoiseSite,
    eps_grid: &[f64],
) -> Result<RobustnessCurve> {
    let mut rng = RngStream::new(0);
    let mut curves = noise_impact_probe(
        params,
        split,
        &[(site, NoiseKind::Adversarial)],
        eps_grid,
        1,
        &mut rng,
    )?;
    Ok(curves.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_leave_one_out, BinaryDataset, UserSplit};
    use crate::model::ActivationKind;
    use crate::numerics::gaussian_fill;

    #[test]
    fn hit_and_ndcg_cases() {
        assert_eq!(hit(&[4, 1, 2], 4), 1);
        assert_eq!(ndcg_at(&[4, 1, 2], 4), 1.0);
        assert!((ndcg_at(&[1, 2, 4], 4) - 0.5).abs() < 1e-15);
        assert_eq!(hit(&[1, 2], 4), 0);
        assert_eq!(ndcg_at(&[1, 2], 4), 0.0);
    }

    fn toy_split() -> SplitSpec {
        SplitSpec {
            seed: 0,
            item_count: 4,
            users: vec![
                UserSplit { held_out: Some(0), negatives: vec![1, 2], train: vec![3] },
                UserSplit { held_out: Some(1), negatives: vec![0, 2], train: vec![3] },
                UserSplit { held_out: None, negatives: vec![], train: vec![0, 0, 0] },
            ],
        }
    }

    struct Oracle;
    impl Scorer for Oracle {
        fn score(&self, _u: usize, _p: &[usize], candidates: &[usize], out: &mut Vec<f64>) {
            out.clear();
            // The held-out item is always the first candidate.
            out.extend(candidates.iter().enumerate().map(|(k, _)| if k == 0 { 1.0 } else { 0.0 }));
        }
    }

    #[test]
    fn perfect_scorer_gets_full_marks() {
        let r = evaluate_scorer(&Oracle, &toy_split(), &[5, 10]);
        assert_eq!(r.users, 2);
        assert_eq!((r.hr(5), r.ndcg(5)), (1.0, 1.0));
        assert!(r.to_csv().starts_with("metric,n,value,users\nhr,5,1,2\n"));
    }

    #[test]
    fn itempop_ranks_popular_item_first() {
        // Item 0 has three training interactions, item 1 has one.
        let split = SplitSpec {
            seed: 0,
            item_count: 2,
            users: vec![
                UserSplit { held_out: None, negatives: vec![], train: vec![0] },
                UserSplit { held_out: None, negatives: vec![], train: vec![0] },
                UserSplit { held_out: None, negatives: vec![], train: vec![0, 1] },
            ],
        };
        let pop = ItemPopScorer::from_split(&split);
        assert_eq!(pop.counts(), &[3, 1]);
        let m = user_metrics(&pop, 0, &[], 1, &[0], &[1]);
        assert_eq!(m[0].0, 0);
        let m = user_metrics(&pop, 0, &[], 0, &[1], &[1]);
        assert_eq!(m[0].0, 1);
    }

    #[test]
    fn metrics_monotone_and_ndcg_below_hr() {
        let mut rng = RngStream::new(5);
        let positives: Vec<Vec<usize>> = (0..30)
            .map(|_| {
                let n = 2 + rng.below(10);
                rng.sample_indices(60, n)
            })
            .collect();
        let ds = BinaryDataset::from_positives(60, positives, None).unwrap();
        let split = split_leave_one_out(&ds, 2, 20).unwrap();
        let mut params = ModelParams::zeros(30, 60, 4, ActivationKind::Sigmoid, ActivationKind::Identity);
        params.w1 = gaussian_fill(4, 60, 1.0, &mut rng);
        params.w2 = gaussian_fill(60, 4, 1.0, &mut rng);
        let r = evaluate(&params, &split, &[1, 3, 5, 10, 21]).unwrap();
        for w in r.cutoffs.windows(2) {
            assert!(w[0].hr <= w[1].hr && w[0].ndcg <= w[1].ndcg);
        }
        assert!(r.cutoffs.iter().all(|c| c.ndcg <= c.hr));
        assert_eq!(r.hr(21), 1.0);
    }

    #[test]
    fn candidate_order_does_not_matter() {
        let mut rng = RngStream::new(8);
        let positives: Vec<Vec<usize>> = (0..20).map(|_| rng.sample_indices(40, 3)).collect();
        let ds = BinaryDataset::from_positives(40, positives, None).unwrap();
        let split = split_leave_one_out(&ds, 3, 15).unwrap();
        let mut shuffled = split.clone();
        for s in &mut shuffled.users {
            rng.shuffle(&mut s.negatives);
        }
        let params = ModelParams::zeros(20, 40, 3, ActivationKind::Sigmoid, ActivationKind::Identity);
        // All-tied scores exercise the index tie-break.
        assert_eq!(
            evaluate(&params, &split, &[5]).unwrap(),
            evaluate(&params, &shuffled, &[5]).unwrap()
        );
    }

    #[test]
    fn probe_starts_at_clean_point() {
        let mut rng = RngStream::new(9);
        let positives: Vec<Vec<usize>> = (0..15).map(|_| rng.sample_indices(30, 4)).collect();
        let ds = BinaryDataset::from_positives(30, positives, None).unwrap();
        let split = split_leave_one_out(&ds, 4, 10).unwrap();
        let mut params = ModelParams::zeros(15, 30, 3, ActivationKind::Sigmoid, ActivationKind::Identity);
        params.w2 = gaussian_fill(30, 3, 1.0, &mut rng);
        let clean = evaluate(&params, &split, &[5]).unwrap();
        let cases: Vec<(NoiseSite, NoiseKind)> = NoiseSite::ALL
            .iter()
            .flat_map(|&s| [(s, NoiseKind::Gaussian), (s, NoiseKind::Adversarial)])
            .collect();
        let curves = noise_impact_probe(&params, &split, &cases, &[0.0, 1.0], 2, &mut rng).unwrap();
        assert_eq!(curves.len(), 8);
        for c in &curves {
            assert_eq!(c.points.len(), 2);
            assert_eq!(c.baseline().epsilon, 0.0);
            assert_eq!(c.baseline().hr5, clean.hr(5));
        }
        let only_zero = robustness_sweep(&params, &split, NoiseSite::DecoderWeights, &[0.0]).unwrap();
        assert_eq!(only_zero.points.len(), 1);
        assert!(curves_to_csv(&curves).starts_with("site,kind,epsilon,hr5,ndcg5\nencoder,gaussian,0,"));
    }
}
