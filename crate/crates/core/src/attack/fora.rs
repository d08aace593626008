//! Substitute-client training, inverse-network training and reconstruction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mmd::{median_bandwidth, mmd2_with_grad, KernelSet, DEFAULT_KERNELS};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::models::{self, SubstituteFamily};
use crate::nn::loss::{mse, sigmoid};
use crate::nn::{Network, Optimizer, OptimizerConfig, Scalar, Tensor};
use crate::protocol::{eval_forward, Message, MessageKind, Observer, SnapshotStore};
use crate::rng::{streams, Rng};

/// Discriminator probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// How the discriminator is fitted. Both push `D` toward 1 on the client's
/// smashed data and toward 0 on substitute features, and both report
/// `ln(1 - D(z_priv)) + ln D(z_aux)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscObjective {
    /// Descend `-ln D(z_priv) - ln(1 - D(z_aux))`, which has a bounded optimum.
    #[default]
    Logistic,
    /// Descend `ln(1 - D(z_priv)) + ln D(z_aux)` directly. Unbounded below: the
    /// discriminator tends to collapse to a constant output.
    Literal,
}

fn default_adam() -> OptimizerConfig {
    OptimizerConfig::adam(1e-3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub substitute: SubstituteFamily,
    pub substitute_width: usize,
    pub inverse_width: usize,
    /// Number of Gaussian kernels on the median-heuristic ladder.
    pub kernels: usize,
    pub disc_weight: f64,
    pub mmd_weight: f64,
    pub disc_objective: DiscObjective,
    pub disc_steps: usize,
    pub substitute_steps: usize,
    /// Train on every `every`-th smashed batch.
    pub every: usize,
    /// Auxiliary batch size; defaults to the size of each smashed batch.
    pub aux_batch: Option<usize>,
    pub no_mkmmd: bool,
    pub no_disc: bool,
    /// When false the substitute keeps its initial weights (the no-training baseline).
    pub train_substitute: bool,
    pub substitute_optimizer: OptimizerConfig,
    pub disc_optimizer: OptimizerConfig,
    pub inverse_optimizer: OptimizerConfig,
    pub inverse_epochs: usize,
    pub inverse_batch: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            substitute: SubstituteFamily::Vgg,
            substitute_width: 12,
            inverse_width: 16,
            kernels: DEFAULT_KERNELS,
            disc_weight: 1.0,
            mmd_weight: 1.0,
            disc_objective: DiscObjective::Logistic,
            disc_steps: 1,
            substitute_steps: 1,
            every: 1,
            aux_batch: None,
            no_mkmmd: false,
            no_disc: false,
            train_substitute: true,
            substitute_optimizer: default_adam(),
            disc_optimizer: default_adam(),
            inverse_optimizer: default_adam(),
            inverse_epochs: 50,
            inverse_batch: 32,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.substitute_width == 0 || self.inverse_width == 0 || self.kernels == 0 {
            return Err(Error::Config("attack widths and kernel count must be positive".into()));
        }
        if !(self.disc_weight >= 0.0 && self.mmd_weight >= 0.0) {
            return Err(Error::Config("attack loss weights must be >= 0".into()));
        }
        if self.every == 0 || self.inverse_batch == 0 || self.aux_batch == Some(0) || self.aux_batch == Some(1) {
            return Err(Error::Config("attack schedule and batch sizes must be positive (aux batch >= 2)".into()));
        }
        for o in [&self.substitute_optimizer, &self.disc_optimizer, &self.inverse_optimizer] {
            o.validate()?;
        }
        Ok(())
    }

    /// Short label for reports: `fora`, `no_mkmmd`, `no_disc`, `untrained`, ...
    pub fn variant(&self) -> &'static str {
        match (self.train_substitute, self.no_disc, self.no_mkmmd) {
            (false, _, _) => "untrained",
            (true, false, false) => "fora",
            (true, true, false) => "no_disc",
            (true, false, true) => "no_mkmmd",
            (true, true, true) => "no_losses",
        }
    }
}

fn clamped_prob(score: f64) -> (f64, bool) {
    let p = sigmoid(score);
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

/// Mean of `ln(1 - D)` (when `toward_one` is false) or `ln D` over a batch
/// of discriminator logits, with the gradient w.r.t. the logits.
fn log_prob_term<T: Scalar>(scores: &Tensor<T>, toward_one: bool) -> (f64, Tensor<T>) {
    let n = scores.numel() as f64;
    let mut grad = Tensor::zeros(scores.shape());
    let mut total = 0.0;
    for (g, s) in grad.data_mut().iter_mut().zip(scores.data()) {
        let (p, clamped) = clamped_prob(s.as_f64());
        let (value, d) = if toward_one { (p.ln(), 1.0 - p) } else { ((1.0 - p).ln(), -p) };
        total += value;
        *g = T::from_f64(if clamped { 0.0 } else { d / n });
    }
    (total / n, grad)
}

/// One discriminator update pushing `D` toward 1 on the client's smashed
/// data and toward 0 on the substitute's. Both inputs are treated as
/// constants. Returns the pre-step value of `ln(1 - D(z_priv)) + ln D(z_aux)`.
pub fn disc_step<T: Scalar>(
    d: &mut Network<T>,
    opt: &mut Optimizer<T>,
    z_priv: &Tensor<T>,
    z_aux: &Tensor<T>,
    objective: DiscObjective,
) -> Result<f64> {
    d.train();
    d.zero_grad();
    let s_priv = d.forward(z_priv)?;
    let (l_priv, _) = log_prob_term(&s_priv, false);
    let g_priv = match objective {
        DiscObjective::Literal => log_prob_term(&s_priv, false).1,
        DiscObjective::Logistic => log_prob_term(&s_priv, true).1.map(|v| -v),
    };
    d.backward(&g_priv)?;
    let s_aux = d.forward(z_aux)?;
    let (l_aux, _) = log_prob_term(&s_aux, true);
    let g_aux = match objective {
        DiscObjective::Literal => log_prob_term(&s_aux, true).1,
        DiscObjective::Logistic => log_prob_term(&s_aux, false).1.map(|v| -v),
    };
    d.backward(&g_aux)?;
    opt.step(d)?;
    Ok(l_priv + l_aux)
}

/// Evaluate the discriminator loss without updating anything.
pub fn disc_loss<T: Scalar>(d: &mut Network<T>, z_priv: &Tensor<T>, z_aux: &Tensor<T>) -> Result<f64> {
    let s_priv = eval_forward(d, z_priv)?;
    let s_aux = eval_forward(d, z_aux)?;
    Ok(log_prob_term(&s_priv, false).0 + log_prob_term(&s_aux, true).0)
}

/// Which substitute losses are active and how they are weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstituteLoss {
    pub disc_weight: f64,
    pub mmd_weight: f64,
    pub no_disc: bool,
    pub no_mkmmd: bool,
    pub kernels: usize,
}

impl From<&AttackConfig> for SubstituteLoss {
    fn from(c: &AttackConfig) -> Self {
        Self { disc_weight: c.disc_weight, mmd_weight: c.mmd_weight, no_disc: c.no_disc, no_mkmmd: c.no_mkmmd, kernels: c.kernels }
    }
}

fn flatten<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    t.clone().reshape(&[t.batch(), t.row_len()])
}

/// One substitute update on `ln(1 - D(F(x_aux))) + MMD^2(F(x_aux), z_priv)`
/// with `D` frozen and `z_priv` constant. Returns the two pre-step loss
/// terms (zero when disabled). With both terms disabled nothing changes.
pub fn substitute_step<T: Scalar>(
    sub: &mut Network<T>,
    opt: &mut Optimizer<T>,
    d: &mut Network<T>,
    z_priv: &Tensor<T>,
    x_aux: &Tensor<T>,
    loss: SubstituteLoss,
) -> Result<(f64, f64)> {
    if loss.no_disc && loss.no_mkmmd {
        return Ok((0.0, 0.0));
    }
    if z_priv.shape()[1..] != sub.output_shape()[..] {
        return Err(Error::Shape(format!("substitute outputs {:?}, smashed data is {:?}", sub.output_shape(), z_priv.shape())));
    }
    sub.train();
    sub.zero_grad();
    let z_sub = sub.forward(x_aux)?;
    let mut total = Tensor::<T>::zeros(z_sub.shape());
    let (mut l_disc, mut l_mmd) = (0.0, 0.0);
    if !loss.no_disc {
        let scores = d.forward(&z_sub)?;
        let (value, g) = log_prob_term(&scores, false);
        l_disc = value;
        let w = T::from_f64(loss.disc_weight);
        let gz = d.backward(&g.map(|v| v * w))?;
        d.zero_grad();
        total.data_mut().iter_mut().zip(gz.data()).for_each(|(t, g)| *t = *t + *g);
    }
    if !loss.no_mkmmd {
        let (a, b) = (flatten(&z_sub)?, flatten(z_priv)?);
        let kernels = KernelSet::median_ladder(median_bandwidth(&a, &b)?, loss.kernels)?;
        let (value, g) = mmd2_with_grad(&a, &b, &kernels)?;
        l_mmd = value;
        let w = T::from_f64(loss.mmd_weight);
        total.data_mut().iter_mut().zip(g.data()).for_each(|(t, g)| *t = *t + w * *g);
    }
    sub.backward(&total)?;
    opt.step(sub)?;
    Ok((l_disc, l_mmd))
}

/// Fit `inverse` so that `inverse(sub(x)) ≈ x` on the auxiliary images, with
/// the substitute frozen. Returns the mean loss of each epoch.
pub fn train_inverse<T: Scalar>(
    inverse: &mut Network<T>,
    opt: &mut Optimizer<T>,
    sub: &mut Network<T>,
    aux: &ImageDataset,
    epochs: usize,
    batch: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if inverse.output_shape() != aux.image_shape() {
        return Err(Error::Shape(format!("inverse outputs {:?}, images are {:?}", inverse.output_shape(), aux.image_shape())));
    }
    let all: Vec<usize> = (0..aux.len()).collect();
    let (x, _) = aux.batch::<T>(&all)?;
    let features = eval_forward(sub, &x)?;
    inverse.train();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let order = rng.permutation(aux.len());
        let mut total = 0.0;
        for chunk in order.chunks(batch.max(1)) {
            let f = features.select_rows(chunk)?;
            let target = x.select_rows(chunk)?;
            inverse.zero_grad();
            let out = inverse.forward(&f)?;
            let l = mse(&out, &target)?;
            inverse.backward(&l.grad)?;
            opt.step(inverse)?;
            total += l.value * chunk.len() as f64;
        }
        history.push(total / aux.len() as f64);
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackPhase {
    /// Watching the SL session and fitting the substitute.
    Collecting,
    /// Inverse network trained; reconstruction allowed.
    InverseTrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackStepRecord {
    pub batch: usize,
    pub disc_loss: f64,
    pub adv_loss: f64,
    pub mmd_loss: f64,
}

/// Attacker state. Plugs into the server as an [`Observer`].
pub struct ForaAttacker<T: Scalar> {
    config: AttackConfig,
    substitute: Network<T>,
    disc: Network<T>,
    inverse: Network<T>,
    sub_opt: Optimizer<T>,
    disc_opt: Optimizer<T>,
    inv_opt: Optimizer<T>,
    aux: Arc<ImageDataset>,
    batch_rng: Rng,
    inverse_rng: Rng,
    aux_order: Vec<usize>,
    aux_cursor: usize,
    seen: usize,
    history: Vec<AttackStepRecord>,
    inverse_history: Vec<f64>,
    phase: AttackPhase,
}

impl<T: Scalar> ForaAttacker<T> {
    /// Builds the attack networks for smashed data of per-sample shape `smashed`.
    pub fn new(config: AttackConfig, aux: Arc<ImageDataset>, smashed: &[usize], seed: u64) -> Result<Self> {
        config.validate()?;
        if aux.len() < 2 {
            return Err(Error::Config("auxiliary set needs at least two images".into()));
        }
        let image = aux.image_shape().to_vec();
        let mut init = Rng::new(seed, streams::ATTACK_INIT);
        let substitute = Network::new(models::substitute_specs(config.substitute, &image, smashed, config.substitute_width)?, &image, &mut init)?;
        let disc = Network::new(models::discriminator_specs(smashed)?, smashed, &mut init)?;
        let inverse = Network::new(models::inverse_specs(smashed, &image, config.inverse_width)?, smashed, &mut init)?;
        Ok(Self {
            sub_opt: Optimizer::new(config.substitute_optimizer)?,
            disc_opt: Optimizer::new(config.disc_optimizer)?,
            inv_opt: Optimizer::new(config.inverse_optimizer)?,
            config,
            substitute,
            disc,
            inverse,
            aux,
            batch_rng: Rng::new(seed, streams::ATTACK_BATCH),
            inverse_rng: Rng::new(seed, streams::ATTACK_INVERSE),
            aux_order: Vec::new(),
            aux_cursor: 0,
            seen: 0,
            history: Vec::new(),
            inverse_history: Vec::new(),
            phase: AttackPhase::Collecting,
        })
    }

    pub fn config(&self) -> &AttackConfig {
        &self.config
    }

    pub fn phase(&self) -> AttackPhase {
        self.phase
    }

    pub fn substitute(&self) -> &Network<T> {
        &self.substitute
    }

    pub fn discriminator(&self) -> &Network<T> {
        &self.disc
    }

    pub fn inverse(&self) -> &Network<T> {
        &self.inverse
    }

    pub fn history(&self) -> &[AttackStepRecord] {
        &self.history
    }

    pub fn inverse_history(&self) -> &[f64] {
        &self.inverse_history
    }

    /// Smashed batches observed so far.
    pub fn batches_seen(&self) -> usize {
        self.seen
    }

    fn next_aux_batch(&mut self, n: usize) -> Result<Tensor<T>> {
        let n = n.min(self.aux.len());
        let mut idx = Vec::with_capacity(n);
        while idx.len() < n {
            if self.aux_cursor >= self.aux_order.len() {
                self.aux_order = self.batch_rng.permutation(self.aux.len());
                self.aux_cursor = 0;
            }
            idx.push(self.aux_order[self.aux_cursor]);
            self.aux_cursor += 1;
        }
        Ok(self.aux.batch::<T>(&idx)?.0)
    }

    /// Phase (a): one round of discriminator and substitute updates against
    /// a batch of the client's smashed data.
    pub fn train_on(&mut self, z_priv: &Tensor<T>) -> Result<()> {
        if self.phase != AttackPhase::Collecting {
            return Err(Error::Phase("substitute training after the inverse network was fitted"));
        }
        self.seen += 1;
        if !self.config.train_substitute || !(self.seen - 1).is_multiple_of(self.config.every) || z_priv.batch() < 2 {
            return Ok(());
        }
        let n = self.config.aux_batch.unwrap_or(z_priv.batch()).max(2);
        let loss = SubstituteLoss::from(&self.config);
        let mut record = AttackStepRecord { batch: self.seen - 1, disc_loss: 0.0, adv_loss: 0.0, mmd_loss: 0.0 };
        if !self.config.no_disc {
            for _ in 0..self.config.disc_steps {
                let x = self.next_aux_batch(n)?;
                self.substitute.train();
                let z_aux = self.substitute.forward(&x)?;
                record.disc_loss = disc_step(&mut self.disc, &mut self.disc_opt, z_priv, &z_aux, self.config.disc_objective)?;
            }
        }
        for _ in 0..self.config.substitute_steps {
            let x = self.next_aux_batch(n)?;
            let (a, m) = substitute_step(&mut self.substitute, &mut self.sub_opt, &mut self.disc, z_priv, &x, loss)?;
            record.adv_loss = a;
            record.mmd_loss = m;
        }
        self.history.push(record);
        Ok(())
    }

    /// Phase (b): fit the inverse network through the frozen substitute.
    pub fn fit_inverse(&mut self) -> Result<&[f64]> {
        let history = train_inverse(
            &mut self.inverse,
            &mut self.inv_opt,
            &mut self.substitute,
            &self.aux,
            self.config.inverse_epochs,
            self.config.inverse_batch,
            &mut self.inverse_rng,
        )?;
        self.inverse_history = history;
        self.phase = AttackPhase::InverseTrained;
        Ok(&self.inverse_history)
    }

    /// Phase (c): map every snapshot batch back to image space, one output
    /// tensor per snapshot entry, in order.
    pub fn reconstruct(&mut self, snapshot: &SnapshotStore<T>) -> Result<Vec<Tensor<T>>> {
        if self.phase != AttackPhase::InverseTrained {
            return Err(Error::Phase("reconstruction requested before the inverse network was trained"));
        }
        if snapshot.is_empty() {
            return Err(Error::Empty("snapshot store"));
        }
        snapshot.entries().iter().map(|e| eval_forward(&mut self.inverse, &e.smashed)).collect()
    }

    /// Substitute features of `x` (eval mode), for comparing with the client.
    pub fn substitute_features(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        eval_forward(&mut self.substitute, x)
    }
}

impl<T: Scalar> Observer<T> for ForaAttacker<T> {
    fn observe(&mut self, msg: &Message<T>) -> Result<()> {
        if msg.kind == MessageKind::SmashedData {
            self.train_on(&msg.payload)?;
        }
        Ok(())
    }
}
