//! Training loops. Each round draws a fresh negative batch from the sampler
//! and a positive batch from the data, then updates the network on that fixed
//! pair: a fixed number of steps in [`train`], until the risk plateaus in
//! [`train_full_alternation`].

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{concatenate, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::hkr::{bce_risk_and_grad, hkr_risk_and_grad, HkrParams, RmsProp};
use crate::model::Trainable;
use crate::sampler::{newton_raphson_negatives, DomainBox, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Leading epochs whose negatives are plain uniform draws.
    pub warm_start_epochs: usize,
    /// Optimizer steps per negative batch (`K`).
    pub updates_per_round: usize,
    pub batch_size: usize,
    /// Negatives per round; defaults to `batch_size`.
    pub negatives_per_round: Option<usize>,
    pub hkr: HkrParams,
    /// Newton steps `T` of the sampler.
    pub sampler_steps: usize,
    /// Target level of the sampler is `−level_eps`; defaults to the margin.
    pub level_eps: Option<f64>,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// `false` trains with binary cross-entropy instead of HKR.
    pub constrained: bool,
    /// Stops after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            warm_start_epochs: 5,
            updates_per_round: 1,
            batch_size: 128,
            negatives_per_round: None,
            hkr: HkrParams::default(),
            sampler_steps: 4,
            level_eps: None,
            lr_start: 1e-3,
            lr_end: 1e-3,
            seed: 0,
            constrained: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.warm_start_epochs > self.epochs {
            return bad(format!("warm_start_epochs {} exceeds epochs {}", self.warm_start_epochs, self.epochs));
        }
        if self.updates_per_round == 0 || self.batch_size == 0 || self.negatives_per_round == Some(0) {
            return bad("updates_per_round, batch_size and negatives_per_round must be at least 1".into());
        }
        if !(self.lr_start > 0.0) || !(self.lr_end >= 0.0) {
            return bad(format!("learning rates must be positive, got {} -> {}", self.lr_start, self.lr_end));
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be at least 1".into());
        }
        HkrParams::new(self.hkr.margin, self.hkr.lambda)?;
        self.sampler_config().validate()
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig::new(self.sampler_steps, self.level_eps.unwrap_or(self.hkr.margin))
    }

    pub fn negatives(&self) -> usize {
        self.negatives_per_round.unwrap_or(self.batch_size)
    }

    /// Rounds per epoch times epochs times `K`, capped by `max_steps`.
    pub fn total_steps(&self, n: usize) -> usize {
        let planned = self.epochs * n.div_ceil(self.batch_size) * self.updates_per_round;
        self.max_steps.map_or(planned, |m| m.min(planned))
    }
}

/// Stopping rule for the inner loop of [`train_full_alternation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlternationConfig {
    pub relative_tolerance: f64,
    pub patience: usize,
    pub max_inner_steps: usize,
    /// Upper bound on rounds; `None` runs the epoch budget.
    pub max_rounds: Option<usize>,
}

impl Default for AlternationConfig {
    fn default() -> Self {
        Self { relative_tolerance: 1e-4, patience: 50, max_inner_steps: 2000, max_rounds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub inner_steps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch risk before each optimizer step.
    pub risks: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub rounds: Vec<RoundSummary>,
    pub epoch_seconds: Vec<f64>,
    /// Mean and max of `‖∇ₓf‖` over the training points after training.
    pub final_grad_norm_mean: f64,
    pub final_grad_norm_max: f64,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.risks.len()
    }

    pub fn final_risk(&self) -> Option<f64> {
        self.risks.last().copied()
    }

    /// `step,risk,lr` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,risk,lr\n");
        for (i, (r, lr)) in self.risks.iter().zip(&self.learning_rates).enumerate() {
            out.push_str(&format!("{i},{r},{lr}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Learning rate at `step` of a linear decay over `total` steps.
pub fn linear_decay(lr_start: f64, lr_end: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr_start;
    }
    let t = step.min(total - 1) as f64 / (total - 1) as f64;
    lr_start + (lr_end - lr_start) * t
}

/// Called after each epoch with the epoch index and the current network.
pub type EpochHook<'a, N> = &'a mut dyn FnMut(usize, &N) -> Result<()>;

struct Session<'a, N: Trainable> {
    net: N,
    cfg: &'a TrainConfig,
    domain: &'a DomainBox,
    data: &'a Dataset,
    rng: ChaCha8Rng,
    opt: RmsProp,
    params: Vec<f64>,
    report: TrainReport,
    step: usize,
    total: usize,
}

impl<'a, N: Trainable> Session<'a, N> {
    fn new(data: &'a Dataset, mut net: N, domain: &'a DomainBox, cfg: &'a TrainConfig, total: usize) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Empty("training data"));
        }
        if data.dim() != net.input_dim() || domain.dim() != net.input_dim() {
            return Err(Error::DimensionMismatch { expected: net.input_dim(), got: data.dim() });
        }
        if cfg.constrained && !net.is_lipschitz() {
            return Err(Error::Config("constrained training needs a Lipschitz network".into()));
        }
        net.set_training(true);
        let params = net.params();
        let opt = RmsProp::new(params.len(), cfg.lr_start, RmsProp::DEFAULT_RHO, RmsProp::DEFAULT_EPSILON)?;
        Ok(Self {
            net,
            cfg,
            domain,
            data,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            opt,
            params,
            report: TrainReport::default(),
            step: 0,
            total,
        })
    }

    fn shuffled(&mut self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.data.len()).collect();
        idx.shuffle(&mut self.rng);
        idx
    }

    /// Positive rows followed by fresh negatives; returns the batch and the
    /// number of positives.
    fn round_batch(&mut self, rows: &[usize], warm: bool) -> Result<(Array2<f64>, usize)> {
        let pos = self.data.points.select(Axis(0), rows);
        let mut sc = self.cfg.sampler_config();
        if warm {
            sc.steps = 0;
        }
        let neg = newton_raphson_negatives(&self.net, self.domain, &sc, &mut self.rng, self.cfg.negatives())?;
        let batch = concatenate(Axis(0), &[pos.view(), neg.view()]).expect("same width");
        Ok((batch, rows.len()))
    }

    /// One optimizer step on `batch`; returns the risk before the step.
    fn update(&mut self, batch: &Array2<f64>, n_pos: usize) -> Result<f64> {
        let hkr = self.cfg.hkr;
        let constrained = self.cfg.constrained;
        let mut loss = |s: ArrayView1<f64>| {
            if constrained {
                hkr_risk_and_grad(s, n_pos, hkr)
            } else {
                bce_risk_and_grad(s, n_pos)
            }
        };
        let (risk, _, grads) = self.net.value_and_param_gradients(batch.view(), &mut loss)?;
        if !risk.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite risk or gradient at step {} (risk {risk})", self.step)));
        }
        let lr = linear_decay(self.cfg.lr_start, self.cfg.lr_end, self.step, self.total);
        self.opt.learning_rate = lr;
        self.opt.step(&mut self.params, &grads)?;
        self.net.set_params(&self.params)?;
        self.report.risks.push(risk);
        self.report.learning_rates.push(lr);
        self.step += 1;
        Ok(risk)
    }

    fn finish(mut self) -> Result<(N, TrainReport)> {
        self.net.set_training(false);
        let (_, g) = self.net.scores_and_gradients(self.data.points.view())?;
        let norms = crate::lipnet::row_norms(&g);
        self.report.final_grad_norm_mean = norms.iter().sum::<f64>() / norms.len() as f64;
        self.report.final_grad_norm_max = norms.iter().copied().fold(0.0, f64::max);
        Ok((self.net, self.report))
    }
}

/// Lazy alternation: `K` optimizer steps per negative batch.
pub fn train<N: Trainable>(data: &Dataset, net: N, domain: &DomainBox, cfg: &TrainConfig) -> Result<(N, TrainReport)> {
    train_with_hook(data, net, domain, cfg, &mut |_, _| Ok(()))
}

pub fn train_with_hook<N: Trainable>(
    data: &Dataset,
    net: N,
    domain: &DomainBox,
    cfg: &TrainConfig,
    on_epoch: EpochHook<'_, N>,
) -> Result<(N, TrainReport)> {
    let total = cfg.total_steps(data.len());
    let mut s = Session::new(data, net, domain, cfg, total)?;
    'epochs: for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = s.shuffled();
        for rows in order.chunks(cfg.batch_size) {
            if s.step >= total {
                break 'epochs;
            }
            let (batch, n_pos) = s.round_batch(rows, epoch < cfg.warm_start_epochs)?;
            let mut k = 0;
            while k < cfg.updates_per_round && s.step < total {
                s.update(&batch, n_pos)?;
                k += 1;
            }
            s.report.rounds.push(RoundSummary { inner_steps: k, converged: false });
        }
        s.report.epoch_seconds.push(started.elapsed().as_secs_f64());
        on_epoch(epoch, &s.net)?;
    }
    s.finish()
}

/// Full alternation: the inner loop on each fixed batch runs until the
/// relative risk change over `patience` steps drops below the tolerance, or
/// `max_inner_steps` is reached. `updates_per_round` is ignored.
pub fn train_full_alternation<N: Trainable>(
    data: &Dataset,
    net: N,
    domain: &DomainBox,
    cfg: &TrainConfig,
    alt: &AlternationConfig,
) -> Result<(N, TrainReport)> {
    if alt.patience == 0 || alt.max_inner_steps == 0 || !(alt.relative_tolerance > 0.0) {
        return Err(Error::Config(format!("invalid alternation settings {alt:?}")));
    }
    let rounds_per_epoch = data.len().div_ceil(cfg.batch_size.max(1));
    let max_rounds = alt.max_rounds.unwrap_or(usize::MAX).min(cfg.epochs * rounds_per_epoch);
    let budget = max_rounds.saturating_mul(alt.max_inner_steps);
    let total = cfg.max_steps.map_or(budget, |m| m.min(budget));
    let mut s = Session::new(data, net, domain, cfg, total)?;
    let mut round = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = s.shuffled();
        for rows in order.chunks(cfg.batch_size) {
            if round >= max_rounds || s.step >= total {
                break 'epochs;
            }
            let (batch, n_pos) = s.round_batch(rows, epoch < cfg.warm_start_epochs)?;
            let mut history = Vec::new();
            let mut converged = false;
            while history.len() < alt.max_inner_steps && s.step < total {
                history.push(s.update(&batch, n_pos)?);
                if plateaued(&history, alt) {
                    converged = true;
                    break;
                }
            }
            s.report.rounds.push(RoundSummary { inner_steps: history.len(), converged });
            round += 1;
        }
        s.report.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    s.finish()
}

fn plateaued(history: &[f64], alt: &AlternationConfig) -> bool {
    let n = history.len();
    if n <= alt.patience {
        return false;
    }
    let (now, then) = (history[n - 1], history[n - 1 - alt.patience]);
    (now - then).abs() <= alt.relative_tolerance * then.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lipnet::{Activation, LipNet};

    fn small_setup() -> (Dataset, DomainBox, LipNet) {
        let pts = Array2::from_shape_fn((40, 2), |(i, k)| ((i * 7 + k * 3) % 11) as f64 / 22.0);
        let data = Dataset::new("t", pts, None).unwrap();
        let domain = DomainBox::symmetric(2, 3.0).unwrap();
        let net =
            LipNet::new(2, &[8, 8], Activation::GroupSort { group_size: 2 }, 15, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
        (data, domain, net)
    }

    #[test]
    fn decay_endpoints() {
        assert_eq!(linear_decay(1.0, 0.0, 0, 11), 1.0);
        assert_eq!(linear_decay(1.0, 0.0, 10, 11), 0.0);
        assert!((linear_decay(1.0, 0.0, 5, 11) - 0.5).abs() < 1e-15);
        assert_eq!(linear_decay(0.3, 0.1, 0, 1), 0.3);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = TrainConfig { warm_start_epochs: 50, ..Default::default() };
        assert!(c.validate().is_err());
        c.warm_start_epochs = 0;
        c.updates_per_round = 0;
        assert!(c.validate().is_err());
        c.updates_per_round = 1;
        c.batch_size = 0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn one_risk_per_step_and_total() {
        let (data, domain, net) = small_setup();
        let cfg =
            TrainConfig { epochs: 3, warm_start_epochs: 1, updates_per_round: 2, batch_size: 16, ..Default::default() };
        let (_, rep) = train(&data, net, &domain, &cfg).unwrap();
        // 40 points in batches of 16 → 3 rounds per epoch.
        assert_eq!(rep.steps(), 3 * 3 * 2);
        assert_eq!(rep.learning_rates.len(), rep.steps());
        assert_eq!(rep.rounds.len(), 9);
        assert_eq!(rep.epoch_seconds.len(), 3);
        assert_eq!(rep.to_csv().lines().count(), rep.steps() + 1);
    }

    #[test]
    fn max_steps_caps_training() {
        let (data, domain, net) = small_setup();
        let cfg =
            TrainConfig { epochs: 10, warm_start_epochs: 0, max_steps: Some(7), batch_size: 16, ..Default::default() };
        let (_, rep) = train(&data, net, &domain, &cfg).unwrap();
        assert_eq!(rep.steps(), 7);
    }

    #[test]
    fn hook_runs_each_epoch() {
        let (data, domain, net) = small_setup();
        let cfg = TrainConfig { epochs: 2, warm_start_epochs: 0, batch_size: 20, ..Default::default() };
        let mut seen = Vec::new();
        train_with_hook(&data, net, &domain, &cfg, &mut |e, n: &LipNet| {
            seen.push((e, n.params().len()));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn dimension_and_kind_checks() {
        let (data, _, net) = small_setup();
        let wrong = DomainBox::symmetric(3, 1.0).unwrap();
        assert!(train(&data, net.clone(), &wrong, &TrainConfig::default()).is_err());
        let domain = DomainBox::symmetric(2, 1.0).unwrap();
        let mlp = crate::baseline::MlpNet::zeros(2, &[4]).unwrap();
        assert!(train(&data, mlp, &domain, &TrainConfig::default()).is_err());
    }

    #[test]
    fn plateau_rule() {
        let alt = AlternationConfig { relative_tolerance: 1e-4, patience: 2, ..Default::default() };
        assert!(!plateaued(&[1.0, 1.0], &alt));
        assert!(plateaued(&[1.0, 0.5, 1.00005], &alt));
        assert!(!plateaued(&[1.0, 0.5, 1.1], &alt));
    }

    #[test]
    fn alternation_respects_inner_cap() {
        let (data, domain, net) = small_setup();
        let cfg = TrainConfig { epochs: 1, warm_start_epochs: 0, batch_size: 40, ..Default::default() };
        let alt = AlternationConfig { max_inner_steps: 5, max_rounds: Some(1), ..Default::default() };
        let (_, rep) = train_full_alternation(&data, net, &domain, &cfg, &alt).unwrap();
        assert_eq!(rep.rounds, vec![RoundSummary { inner_steps: 5, converged: false }]);
    }
}
