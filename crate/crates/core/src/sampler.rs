//! Negative sampling for the complementary distribution.
//!
//! Uniform draws in the bounded domain are pulled toward the `−ε` level set of
//! the current scorer with a few damped Newton-Raphson steps. The step size
//! `η ∈ [0, 1)` is drawn per sample so the negatives spread along the whole
//! path from their starting point to the level set.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scorer;

/// Axis-aligned box `[low, high]` that bounds all negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct DomainBox {
    low: Vec<f64>,
    high: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl TryFrom<RawBox> for DomainBox {
    type Error = Error;
    fn try_from(r: RawBox) -> Result<Self> {
        DomainBox::new(r.low, r.high)
    }
}

impl From<DomainBox> for RawBox {
    fn from(b: DomainBox) -> Self {
        RawBox { low: b.low, high: b.high }
    }
}

impl DomainBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.is_empty() || low.len() != high.len() {
            return Err(Error::Config(format!(
                "box bounds must be non-empty and of equal length ({} vs {})",
                low.len(),
                high.len()
            )));
        }
        if let Some(i) = (0..low.len()).find(|&i| !(low[i] < high[i]) || !low[i].is_finite() || !high[i].is_finite()) {
            return Err(Error::Config(format!("box axis {i} needs low < high, got [{}, {}]", low[i], high[i])));
        }
        Ok(Self { low, high })
    }

    /// `[−half, half]^dim`.
    pub fn symmetric(dim: usize, half: f64) -> Result<Self> {
        Self::new(vec![-half; dim], vec![half; dim])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim() && z.iter().zip(&self.low).zip(&self.high).all(|((v, l), h)| *l <= *v && *v <= *h)
    }

    /// Euclidean projection onto the box, which for a box is coordinate clamping.
    pub fn clamp(&self, z: &mut [f64]) {
        for ((v, l), h) in z.iter_mut().zip(&self.low).zip(&self.high) {
            *v = v.clamp(*l, *h);
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Number of refinement steps `T`. Zero returns the uniform draws.
    pub steps: usize,
    /// Target level is `−level_eps`.
    pub level_eps: f64,
    /// Lower bound on `‖∇f‖²` in the step denominator.
    pub grad_norm_floor: f64,
}

impl SamplerConfig {
    pub const DEFAULT_GRAD_NORM_FLOOR: f64 = 1e-6;

    pub fn new(steps: usize, level_eps: f64) -> Self {
        Self { steps, level_eps, grad_norm_floor: Self::DEFAULT_GRAD_NORM_FLOOR }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_norm_floor > 0.0) || !self.level_eps.is_finite() {
            return Err(Error::Config(format!("invalid sampler config {self:?}")));
        }
        Ok(())
    }
}

/// `n` i.i.d. uniform points in the box, one per row.
pub fn uniform_in_box<R: Rng + ?Sized>(domain: &DomainBox, rng: &mut R, n: usize) -> Array2<f64> {
    let d = domain.dim();
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        for (k, v) in domain.draw(rng).into_iter().enumerate() {
            row[k] = v;
        }
    }
    out
}

/// Seed of the private stream for sample `index` under base seed `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined words.
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws a batch of negatives: for each sample, a step size `η` and a start
/// point uniform in the box, then `T` projected Newton steps toward the
/// `−level_eps` level of `net`. Each sample uses its own derived stream.
pub fn newton_raphson_negatives<S, R>(
    net: &S,
    domain: &DomainBox,
    cfg: &SamplerConfig,
    rng: &mut R,
    batch: usize,
) -> Result<Array2<f64>>
where
    S: Scorer + ?Sized,
    R: RngCore + ?Sized,
{
    cfg.validate()?;
    if net.input_dim() != domain.dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: domain.dim() });
    }
    let base = rng.next_u64();
    let mut start = Array2::zeros((batch, domain.dim()));
    let mut etas = Array1::zeros(batch);
    for i in 0..batch {
        let mut r = ChaCha8Rng::seed_from_u64(derive_seed(base, i as u64));
        etas[i] = r.random::<f64>();
        for (k, v) in domain.draw(&mut r).into_iter().enumerate() {
            start[[i, k]] = v;
        }
    }
    newton_refine(net, domain, cfg, start, etas.view())
}

/// The deterministic part of the sampler: runs `T` steps from the given start
/// points with the given per-sample step sizes.
pub fn newton_refine<S: Scorer + ?Sized>(
    net: &S,
    domain: &DomainBox,
    cfg: &SamplerConfig,
    mut z: Array2<f64>,
    etas: ndarray::ArrayView1<f64>,
) -> Result<Array2<f64>> {
    if etas.len() != z.nrows() {
        return Err(Error::DimensionMismatch { expected: z.nrows(), got: etas.len() });
    }
    if cfg.steps == 0 {
        return Ok(z);
    }
    let t = cfg.steps as f64;
    for _ in 0..cfg.steps {
        let (scores, grads) = net.scores_and_gradients(z.view())?;
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            let g = grads.row(i);
            let denom = g.dot(&g).max(cfg.grad_norm_floor);
            let coef = etas[i] / t * (scores[i] + cfg.level_eps) / denom;
            row.scaled_add(-coef, &g);
            domain.clamp(row.as_slice_mut().expect("row-major"));
        }
    }
    Ok(z)
}

/// Checks that every row lies inside the box.
pub fn all_inside(domain: &DomainBox, z: ArrayView2<f64>) -> bool {
    z.rows().into_iter().all(|r| domain.contains(&r.to_vec()))
}
