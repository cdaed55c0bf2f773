//! l2 projected-gradient attacks on a scorer, and AUROC under attack.

use std::fmt::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{auroc, certified_auroc};
use crate::model::Scorer;
use crate::sampler::derive_seed;

/// Points attacked together in one batched pass.
const CHUNK: usize = 256;
const GRAD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub radius_eps: f64,
    pub steps: usize,
    /// Step size as a fraction of the radius.
    pub step_size_factor: f64,
    pub restarts: usize,
}

impl AttackConfig {
    pub const DEFAULT_STEPS: usize = 40;
    pub const DEFAULT_STEP_SIZE_FACTOR: f64 = 0.025;
    pub const DEFAULT_RESTARTS: usize = 3;

    pub fn new(radius_eps: f64) -> Self {
        Self {
            radius_eps,
            steps: Self::DEFAULT_STEPS,
            step_size_factor: Self::DEFAULT_STEP_SIZE_FACTOR,
            restarts: Self::DEFAULT_RESTARTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_eps > 0.0) || !self.radius_eps.is_finite() {
            return Err(Error::Config(format!("attack radius must be positive, got {}", self.radius_eps)));
        }
        if self.steps == 0 || self.restarts == 0 || !(self.step_size_factor > 0.0) {
            return Err(Error::Config(format!("invalid attack settings {self:?}")));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.step_size_factor * self.radius_eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Decrease,
    Increase,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Decrease => -1.0,
            Direction::Increase => 1.0,
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Decrease => a < b,
            Direction::Increase => a > b,
        }
    }
}

/// Worst score found for each row of `x` and the perturbation reaching it.
pub struct AttackResult {
    pub scores: Array1<f64>,
    pub perturbations: Array2<f64>,
}

fn random_in_ball(rng: &mut ChaCha8Rng, d: usize, eps: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(GRAD_FLOOR);
    let r = eps * rng.random::<f64>().powf(1.0 / d as f64);
    v.into_iter().map(|a| a * r / norm).collect()
}

/// Rescales `delta` onto the ball of radius `eps` if it lies outside.
fn project(delta: &mut [f64], eps: f64) {
    let norm = delta.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > eps {
        let s = eps / norm;
        delta.iter_mut().for_each(|a| *a *= s);
    }
}

fn attack_chunk<S: Scorer + ?Sized>(
    net: &S,
    x: ArrayView2<f64>,
    cfg: &AttackConfig,
    dir: Direction,
    base_seed: u64,
    first_index: usize,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let (n, d) = x.dim();
    let eps = cfg.radius_eps;
    let zeta = cfg.step_size();
    let mut best = net.scores(x)?;
    let mut best_delta = Array2::zeros((n, d));
    let mut rngs: Vec<ChaCha8Rng> =
        (0..n).map(|i| ChaCha8Rng::seed_from_u64(derive_seed(base_seed, (first_index + i) as u64))).collect();
    for restart in 0..cfg.restarts {
        let mut delta = Array2::zeros((n, d));
        if restart > 0 {
            for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
                row.assign(&Array1::from(random_in_ball(&mut rngs[i], d, eps)));
            }
        }
        for step in 0..=cfg.steps {
            let point = &x + &delta;
            let (s, g) = net.scores_and_gradients(point.view())?;
            for i in 0..n {
                if dir.better(s[i], best[i]) {
                    best[i] = s[i];
                    best_delta.row_mut(i).assign(&delta.row(i));
                }
            }
            if step == cfg.steps {
                break;
            }
            for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
                let gi = g.row(i);
                let norm = gi.dot(&gi).sqrt();
                if norm > GRAD_FLOOR {
                    row.scaled_add(dir.sign() * zeta / norm, &gi);
                    project(row.as_slice_mut().expect("row-major"), eps);
                }
            }
        }
    }
    Ok((best, best_delta))
}

/// Batched l2-PGD. Restart 0 starts at the clean point, later restarts at a
/// uniform point of the ball; every iterate is scored and the extremal score
/// in `dir` is kept. Each row draws from its own derived stream.
pub fn pgd_l2_batch<S, R>(
    net: &S,
    x: ArrayView2<f64>,
    cfg: &AttackConfig,
    dir: Direction,
    rng: &mut R,
) -> Result<AttackResult>
where
    S: Scorer + ?Sized,
    R: RngCore + ?Sized,
{
    cfg.validate()?;
    if x.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: x.ncols() });
    }
    let base = rng.next_u64();
    let n = x.nrows();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| attack_chunk(net, x.slice(ndarray::s![s..(s + CHUNK).min(n), ..]), cfg, dir, base, s))
        .collect::<Result<Vec<_>>>()?;
    let scores = parts.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    let views: Vec<_> = parts.iter().map(|(_, d)| d.view()).collect();
    let perturbations = if views.is_empty() {
        Array2::zeros((0, x.ncols()))
    } else {
        ndarray::concatenate(Axis(0), &views).expect("same width")
    };
    Ok(AttackResult { scores, perturbations })
}

/// Single-point form of [`pgd_l2_batch`].
pub fn pgd_l2<S, R>(net: &S, x: &[f64], cfg: &AttackConfig, dir: Direction, rng: &mut R) -> Result<(f64, Vec<f64>)>
where
    S: Scorer + ?Sized,
    R: RngCore + ?Sized,
{
    let row = ndarray::ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Data(e.to_string()))?;
    let r = pgd_l2_batch(net, row, cfg, dir, rng)?;
    Ok((r.scores[0], r.perturbations.row(0).to_vec()))
}

/// Positives pushed down, negatives pushed up, then ranked.
pub fn auroc_under_attack<S, R>(
    net: &S,
    pos: ArrayView2<f64>,
    neg: ArrayView2<f64>,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<f64>
where
    S: Scorer + ?Sized,
    R: RngCore + ?Sized,
{
    if pos.nrows() == 0 || neg.nrows() == 0 {
        return Err(Error::Empty("attack point set"));
    }
    let p = pgd_l2_batch(net, pos, cfg, Direction::Decrease, rng)?;
    let n = pgd_l2_batch(net, neg, cfg, Direction::Increase, rng)?;
    auroc(p.scores.as_slice().expect("contiguous"), n.scores.as_slice().expect("contiguous"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackRow {
    pub epsilon: f64,
    pub clean_auroc: f64,
    pub certified_auroc: f64,
    pub attacked_auroc: f64,
}

/// Clean, certified and attacked AUROC per radius. A radius of zero reports
/// the clean value as attacked. `template` supplies steps, step factor and
/// restarts.
pub fn attack_report<S, R>(
    net: &S,
    pos: ArrayView2<f64>,
    neg: ArrayView2<f64>,
    eps_list: &[f64],
    template: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<AttackRow>>
where
    S: Scorer + ?Sized,
    R: RngCore + ?Sized,
{
    let ps = net.scores(pos)?.to_vec();
    let ns = net.scores(neg)?.to_vec();
    let clean = auroc(&ps, &ns)?;
    eps_list
        .iter()
        .map(|&epsilon| {
            let certified = certified_auroc(&ps, &ns, epsilon)?;
            let attacked = if epsilon == 0.0 {
                clean
            } else {
                auroc_under_attack(net, pos, neg, &AttackConfig { radius_eps: epsilon, ..*template }, rng)?
            };
            Ok(AttackRow { epsilon, clean_auroc: clean, certified_auroc: certified, attacked_auroc: attacked })
        })
        .collect()
}

pub fn report_csv(rows: &[AttackRow]) -> String {
    let mut out = String::from("epsilon,clean_auroc,certified_auroc,attacked_auroc\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.epsilon, r.clean_auroc, r.certified_auroc, r.attacked_auroc)
            .expect("string write");
    }
    out
}
