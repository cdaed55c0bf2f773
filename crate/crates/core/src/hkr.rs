//! Hinge Kantorovich-Rubinstein loss, the binary cross-entropy baseline loss,
//! and RMSprop.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Margin `m` and hinge weight `λ` of the HKR loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HkrParams {
    pub margin: f64,
    pub lambda: f64,
}

impl HkrParams {
    pub fn new(margin: f64, lambda: f64) -> Result<Self> {
        if !(margin > 0.0) || !(lambda > 0.0) {
            return Err(Error::Config(format!("HKR needs margin > 0 and lambda > 0, got m={margin}, λ={lambda}")));
        }
        Ok(Self { margin, lambda })
    }
}

impl Default for HkrParams {
    fn default() -> Self {
        Self { margin: 0.05, lambda: 100.0 }
    }
}

/// `λ·max(0, m − y·f) − y·f` for a label `y ∈ {−1, +1}`.
pub fn hkr_loss(y: f64, f: f64, p: HkrParams) -> f64 {
    p.lambda * (p.margin - y * f).max(0.0) - y * f
}

/// Derivative of [`hkr_loss`] in `f`. At the kink the hinge is taken inactive.
pub fn hkr_grad(y: f64, f: f64, p: HkrParams) -> f64 {
    if p.margin - y * f > 0.0 {
        -y * (p.lambda + 1.0)
    } else {
        -y
    }
}

fn mean(v: ArrayView1<f64>) -> f64 {
    v.sum() / v.len() as f64
}

/// Empirical HKR risk: mean loss of positives with label +1 plus mean loss of
/// negatives with label −1.
pub fn hkr_batch_risk(pos: ArrayView1<f64>, neg: ArrayView1<f64>, p: HkrParams) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::Empty("positive scores"));
    }
    if neg.is_empty() {
        return Err(Error::Empty("negative scores"));
    }
    Ok(mean(pos.mapv(|f| hkr_loss(1.0, f, p)).view()) + mean(neg.mapv(|f| hkr_loss(-1.0, f, p)).view()))
}

/// Hinge part of the batch risk alone: `λ·(mean max(0, m − f⁺) + mean max(0, m + f⁻))`.
pub fn hkr_hinge_part(pos: ArrayView1<f64>, neg: ArrayView1<f64>, p: HkrParams) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("score set"));
    }
    let hp = mean(pos.mapv(|f| (p.margin - f).max(0.0)).view());
    let hn = mean(neg.mapv(|f| (p.margin + f).max(0.0)).view());
    Ok(p.lambda * (hp + hn))
}

/// Batch risk and its gradient with respect to every score. `scores` holds
/// the positives first, then the negatives.
pub fn hkr_risk_and_grad(scores: ArrayView1<f64>, n_pos: usize, p: HkrParams) -> Result<(f64, Array1<f64>)> {
    let (pos, neg) = scores.split_at(ndarray::Axis(0), n_pos);
    let risk = hkr_batch_risk(pos, neg, p)?;
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let grad = Array1::from_iter(
        pos.iter().map(|&f| hkr_grad(1.0, f, p) / np).chain(neg.iter().map(|&f| hkr_grad(-1.0, f, p) / nn)),
    );
    Ok((risk, grad))
}

/// `log(1 + exp(−(2y − 1)·logit))` for `y ∈ {0, 1}`, without overflow.
pub fn bce_loss(y: f64, logit: f64) -> f64 {
    let z = -(2.0 * y - 1.0) * logit;
    softplus(z)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`bce_loss`] in the logit: `σ(logit) − y`.
pub fn bce_grad(y: f64, logit: f64) -> f64 {
    sigmoid(logit) - y
}

/// Mean BCE of positives (label 1) plus mean BCE of negatives (label 0), and
/// its gradient with respect to each logit. Positives come first in `scores`.
pub fn bce_risk_and_grad(scores: ArrayView1<f64>, n_pos: usize) -> Result<(f64, Array1<f64>)> {
    let (pos, neg) = scores.split_at(ndarray::Axis(0), n_pos);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("score set"));
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let risk = pos.iter().map(|&f| bce_loss(1.0, f)).sum::<f64>() / np
        + neg.iter().map(|&f| bce_loss(0.0, f)).sum::<f64>() / nn;
    let grad =
        Array1::from_iter(pos.iter().map(|&f| bce_grad(1.0, f) / np).chain(neg.iter().map(|&f| bce_grad(0.0, f) / nn)));
    Ok((risk, grad))
}

/// RMSprop with explicitly declared constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    accumulators: Vec<f64>,
}

impl RmsProp {
    pub const DEFAULT_LR: f64 = 1e-3;
    pub const DEFAULT_RHO: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-7;

    pub fn new(num_params: usize, learning_rate: f64, rho: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !(rho > 0.0 && rho < 1.0) || !(epsilon > 0.0) {
            return Err(Error::Config(format!("invalid RMSprop constants lr={learning_rate} rho={rho} eps={epsilon}")));
        }
        Ok(Self { learning_rate, rho, epsilon, accumulators: vec![0.0; num_params] })
    }

    pub fn with_defaults(num_params: usize) -> Self {
        Self::new(num_params, Self::DEFAULT_LR, Self::DEFAULT_RHO, Self::DEFAULT_EPSILON).expect("valid defaults")
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    /// `acc ← ρ·acc + (1−ρ)·g²; θ ← θ − lr·g/(√acc + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.accumulators.len() {
            return Err(Error::DimensionMismatch { expected: self.accumulators.len(), got: params.len() });
        }
        if grads.len() != params.len() {
            return Err(Error::DimensionMismatch { expected: params.len(), got: grads.len() });
        }
        let (rho, lr, eps) = (self.rho, self.learning_rate, self.epsilon);
        for ((p, &g), acc) in params.iter_mut().zip(grads).zip(self.accumulators.iter_mut()) {
            *acc = rho * *acc + (1.0 - rho) * g * g;
            *p -= lr * g / (acc.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const P: HkrParams = HkrParams { margin: 0.05, lambda: 100.0 };

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn loss_values() {
        assert!(close(hkr_loss(1.0, 1.0, P), -1.0, 1e-12));
        assert!(close(hkr_loss(1.0, 0.0, P), 5.0, 1e-12));
        assert!(close(hkr_loss(-1.0, 0.03, P), 8.03, 1e-12));
    }

    #[test]
    fn batch_risk_values() {
        let r = |p: &[f64], n: &[f64]| hkr_batch_risk(ArrayView1::from(p), ArrayView1::from(n), P).unwrap();
        assert!(close(r(&[1.0], &[-1.0]), -2.0, 1e-12));
        assert!(close(r(&[0.0], &[0.0]), 10.0, 1e-12));
        // Oracle: per-term closed forms, mean(−0.2, −1.0) + (−0.5).
        let oracle = (-0.2 + -1.0) / 2.0 + -0.5;
        assert!(close(r(&[0.2, 1.0], &[-0.5]), oracle, 1e-12));
        assert!(close(oracle, -1.1, 1e-12));
    }

    #[test]
    fn batch_risk_rejects_empty_side() {
        let e = ArrayView1::from(&[] as &[f64]);
        assert!(hkr_batch_risk(e, array![1.0].view(), P).is_err());
        assert!(hkr_batch_risk(array![1.0].view(), e, P).is_err());
    }

    #[test]
    fn grad_values() {
        assert_eq!(hkr_grad(1.0, 1.0, P), -1.0);
        assert_eq!(hkr_grad(1.0, 0.0, P), -101.0);
        assert_eq!(hkr_grad(-1.0, 0.03, P), 101.0);
        // Kink: hinge-inactive branch.
        assert_eq!(hkr_grad(1.0, 0.05, P), -1.0);
    }

    #[test]
    fn params_validated() {
        assert!(HkrParams::new(0.0, 1.0).is_err());
        assert!(HkrParams::new(0.1, -1.0).is_err());
    }

    #[test]
    fn separated_scores_have_null_hinge() {
        let pos = array![0.05, 0.3, 2.0];
        let neg = array![-0.05, -1.0];
        assert_eq!(hkr_hinge_part(pos.view(), neg.view(), P).unwrap(), 0.0);
        let risk = hkr_batch_risk(pos.view(), neg.view(), P).unwrap();
        assert!(close(risk, -(pos.sum() / 3.0) + neg.sum() / 2.0, 1e-12));
    }

    #[test]
    fn risk_gradient_is_per_sample_mean() {
        let s = array![0.0, 1.0, 0.03];
        let (risk, g) = hkr_risk_and_grad(s.view(), 2, P).unwrap();
        assert!(close(risk, (5.0 - 1.0) / 2.0 + 8.03, 1e-12));
        assert_eq!(g, array![-101.0 / 2.0, -1.0 / 2.0, 101.0]);
    }

    #[test]
    fn bce_values() {
        assert!(close(bce_loss(1.0, 0.0), std::f64::consts::LN_2, 1e-12));
        assert!(bce_loss(1.0, 800.0) == 0.0);
        assert!(bce_loss(1.0, 1e6).is_finite());
        // ln(1 + e²) evaluated at higher precision: 2.126928011042972...
        assert!(close(bce_loss(0.0, 2.0), 2.126_928_011_042_972_5, 1e-12));
        assert!(close(bce_loss(0.0, 1000.0), 1000.0, 1e-9));
    }

    #[test]
    fn bce_grad_matches_fd() {
        for &(y, z) in &[(1.0, 0.3), (0.0, -2.0), (1.0, 5.0), (0.0, 0.7)] {
            let h = 1e-6;
            let fd = (bce_loss(y, z + h) - bce_loss(y, z - h)) / (2.0 * h);
            assert!(close(fd, bce_grad(y, z), 1e-8));
        }
    }

    #[test]
    fn rmsprop_zero_gradient() {
        let mut opt = RmsProp::with_defaults(2);
        opt.accumulators = vec![1.0, 4.0];
        let mut p = vec![0.5, -0.5];
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, -0.5]);
        assert!(close(opt.accumulators[0], 0.9, 1e-15) && close(opt.accumulators[1], 3.6, 1e-15));
    }

    #[test]
    fn rmsprop_first_step_closed_form() {
        let mut opt = RmsProp::new(1, 1e-3, 0.9, 1e-7).unwrap();
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0]).unwrap();
        assert!(close(p[0], -1e-3 / (0.1f64.sqrt() + 1e-7), 1e-15));
    }

    #[test]
    fn rmsprop_two_steps_match_scalar_recurrence() {
        let (lr, rho, eps): (f64, f64, f64) = (1e-2, 0.9, 1e-7);
        let grads: [f64; 2] = [0.7, -1.3];
        // Hand-unrolled recurrence.
        let a1 = (1.0 - rho) * grads[0] * grads[0];
        let p1 = 2.0 - lr * grads[0] / (a1.sqrt() + eps);
        let a2 = rho * a1 + (1.0 - rho) * grads[1] * grads[1];
        let p2 = p1 - lr * grads[1] / (a2.sqrt() + eps);

        let mut opt = RmsProp::new(1, lr, rho, eps).unwrap();
        let mut p = vec![2.0];
        opt.step(&mut p, &grads[..1]).unwrap();
        opt.step(&mut p, &grads[1..]).unwrap();
        assert_eq!(p[0], p2);
    }

    #[test]
    fn rmsprop_shape_mismatch() {
        let mut opt = RmsProp::with_defaults(2);
        assert!(opt.step(&mut [0.0, 0.0], &[1.0]).is_err());
        assert!(opt.step(&mut [0.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn grad_matches_fd_away_from_kink(y in prop_oneof![Just(1.0), Just(-1.0)], f in -3.0f64..3.0) {
            prop_assume!((P.margin - y * f).abs() > 1e-3);
            let h = 1e-5;
            let fd = (hkr_loss(y, f + h, P) - hkr_loss(y, f - h, P)) / (2.0 * h);
            let g = hkr_grad(y, f, P);
            prop_assert!((fd - g).abs() / g.abs() <= 1e-8);
        }

        #[test]
        fn loss_convex_in_score(y in prop_oneof![Just(1.0), Just(-1.0)], a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mid = hkr_loss(y, 0.5 * (a + b), P);
            prop_assert!(mid <= 0.5 * (hkr_loss(y, a, P) + hkr_loss(y, b, P)) + 1e-12);
        }

        #[test]
        fn zero_learning_rate_is_identity(p in proptest::collection::vec(-10.0f64..10.0, 1..16)) {
            let g: Vec<f64> = p.iter().map(|v| v.sin()).collect();
            let mut opt = RmsProp::new(p.len(), 0.0, 0.9, 1e-7).unwrap();
            let mut q = p.clone();
            opt.step(&mut q, &g).unwrap();
            prop_assert_eq!(q, p);
        }
    }
}
