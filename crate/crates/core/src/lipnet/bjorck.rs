//! Orthogonal projection of weight matrices.
//!
//! Raw weights are first divided by an upper estimate of their spectral norm,
//! then driven to the nearest matrix with orthonormal rows (or columns) by the
//! first-order Björck iteration
//!
//! ```text
//! Θ ← 1.5·Θ − 0.5·Θ·Θᵀ·Θ
//! ```
//!
//! which converges to the polar factor whenever every singular value of the
//! scaled input lies in (0, √3). The iteration is unrolled and recorded so
//! gradients can flow back to the raw weights.

use ndarray::{Array1, Array2, ArrayView2, Axis};

pub const DEFAULT_BJORCK_ITERATIONS: usize = 15;
pub const DEFAULT_POWER_ITERATIONS: usize = 30;

/// Multiplier applied to the power-iteration estimate so the scaled matrix has
/// operator norm at most one even when the estimate is slightly low.
pub const SPECTRAL_SAFETY: f64 = 1.01;
/// Returned for all-zero matrices instead of zero.
pub const SPECTRAL_FLOOR: f64 = 1e-12;

/// Upper estimate of the largest singular value of `w` by power iteration on
/// `WᵀW`, inflated by [`SPECTRAL_SAFETY`].
pub fn spectral_norm_upper(w: ArrayView2<f64>, iterations: usize) -> f64 {
    let (rows, cols) = w.dim();
    if rows == 0 || cols == 0 {
        return SPECTRAL_FLOOR;
    }
    // Deterministic start with irregular entries so it is not orthogonal to
    // the top singular vector of structured matrices.
    let mut v = Array1::from_shape_fn(cols, |i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    v /= l2(&v);
    let mut sigma = 0.0;
    for _ in 0..iterations.max(1) {
        let mut u = w.dot(&v);
        let nu = l2(&u);
        if nu == 0.0 {
            return SPECTRAL_FLOOR;
        }
        u /= nu;
        v = w.t().dot(&u);
        sigma = l2(&v);
        if sigma == 0.0 {
            return SPECTRAL_FLOOR;
        }
        v /= sigma;
    }
    (sigma * SPECTRAL_SAFETY).max(SPECTRAL_FLOOR)
}

fn l2(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Result of a projection, with the achieved orthogonality residual so callers
/// can detect ill-conditioned inputs and raise the iteration count.
#[derive(Debug, Clone)]
pub struct Projection {
    pub theta: Array2<f64>,
    pub residual: f64,
}

/// Recorded Björck iterates, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BjorckTape {
    scale: f64,
    transposed: bool,
    /// Iterates in wide orientation (rows ≤ cols); `iterates[0]` is the scaled input.
    iterates: Vec<Array2<f64>>,
    /// `X·Xᵀ` of each iterate.
    grams: Vec<Array2<f64>>,
}

/// Projects `w` onto the matrices with orthonormal rows (rows ≤ cols) or
/// orthonormal columns (cols < rows).
pub fn bjorck_project(w: ArrayView2<f64>, iterations: usize) -> Projection {
    let (theta, _) = run(w, iterations, false);
    let residual = orthogonality_residual(theta.view());
    Projection { theta, residual }
}

/// Same as [`bjorck_project`] but also returns the tape needed by
/// [`BjorckTape::backward`].
pub fn bjorck_project_tape(w: ArrayView2<f64>, iterations: usize) -> (Array2<f64>, BjorckTape) {
    let (theta, tape) = run(w, iterations, true);
    (theta, tape.expect("tape requested"))
}

fn run(w: ArrayView2<f64>, iterations: usize, record: bool) -> (Array2<f64>, Option<BjorckTape>) {
    let scale = spectral_norm_upper(w, DEFAULT_POWER_ITERATIONS);
    let transposed = w.nrows() > w.ncols();
    let mut x = if transposed { w.t().to_owned() } else { w.to_owned() };
    x /= scale;
    let mut iterates = Vec::new();
    let mut grams = Vec::new();
    for _ in 0..iterations {
        let gram = x.dot(&x.t());
        let next = &x * 1.5 - &(gram.dot(&x) * 0.5);
        if record {
            iterates.push(x);
            grams.push(gram);
        }
        x = next;
    }
    let theta = if transposed { x.t().to_owned() } else { x };
    let tape = record.then_some(BjorckTape { scale, transposed, iterates, grams });
    (theta, tape)
}

impl BjorckTape {
    /// Maps `∂L/∂Θ` to `∂L/∂W`. The spectral pre-scaling is treated as a
    /// constant: the converged polar factor does not depend on it.
    pub fn backward(&self, grad_theta: ArrayView2<f64>) -> Array2<f64> {
        let mut g = if self.transposed { grad_theta.t().to_owned() } else { grad_theta.to_owned() };
        for (x, gram) in self.iterates.iter().zip(&self.grams).rev() {
            // d/dX [1.5X − 0.5·X·Xᵀ·X] applied to G:
            // 1.5G − 0.5(G·XᵀX + X·Gᵀ·X + X·Xᵀ·G)
            let gxt = g.dot(&x.t());
            let mut next = &g * 1.5;
            next.scaled_add(-0.5, &gxt.dot(x));
            next.scaled_add(-0.5, &gxt.t().dot(x));
            next.scaled_add(-0.5, &gram.dot(&g));
            g = next;
        }
        g /= self.scale;
        if self.transposed {
            g.t().to_owned()
        } else {
            g
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterates.len()
    }
}

/// `‖ΘΘᵀ − I‖_F` when rows ≤ cols, `‖ΘᵀΘ − I‖_F` otherwise.
pub fn orthogonality_residual(theta: ArrayView2<f64>) -> f64 {
    let gram = if theta.nrows() <= theta.ncols() { theta.dot(&theta.t()) } else { theta.t().dot(&theta) };
    let mut acc = 0.0;
    for ((i, j), v) in gram.indexed_iter() {
        let d = if i == j { v - 1.0 } else { *v };
        acc += d * d;
    }
    acc.sqrt()
}

/// Random matrix with orthonormal rows or columns, by modified Gram-Schmidt on
/// the given Gaussian draws. Used for weight initialization.
pub fn orthonormalize(mut m: Array2<f64>) -> Array2<f64> {
    let transposed = m.nrows() > m.ncols();
    if transposed {
        m = m.t().to_owned();
    }
    for i in 0..m.nrows() {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let rj = m.row(j).to_owned();
            m.row_mut(i).scaled_add(-proj, &rj);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        if norm > 0.0 {
            m.row_mut(i).mapv_inplace(|v| v / norm);
        }
    }
    if transposed {
        m.t().to_owned()
    } else {
        m
    }
}

/// Sum over rows, used for bias gradients.
pub(crate) fn column_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(0))
}
