//! Training loop: Nesterov SGD, EMA teacher, KL consistency with a sigmoid
//! rampup, validation-based model selection and held-out-domain testing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, preprocess, Dataset, DomainSplit, LabeledSample, PreprocessOptions};
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::mixup::{augment_batch, AugmentedSample, LambdaSampler, MixupPolicy};
use crate::model::{
    argmax, kl_divergence, kl_divergence_grad, soft_cross_entropy, soft_cross_entropy_grad, Architecture, Gradients,
    Params, TinyNet,
};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Spectral mixup with consistency regularization.
    Sam,
    /// Plain cross-entropy on the pooled source domains ("DeepAll").
    Erm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LrSchedule {
    /// Multiply by `factor` once, at `fraction` of the total epochs.
    StepAtFraction { fraction: f64, factor: f64 },
    /// Multiply by `factor` every `epochs` epochs.
    StepEvery { epochs: usize, factor: f64 },
    Constant,
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize, total_epochs: usize) -> f64 {
        match *self {
            LrSchedule::StepAtFraction { fraction, factor } => {
                if epoch >= (fraction * total_epochs as f64).floor() as usize {
                    base * factor
                } else {
                    base
                }
            }
            LrSchedule::StepEvery { epochs, factor } => base * factor.powi((epoch / epochs.max(1)) as i32),
            LrSchedule::Constant => base,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Upper bound of `λ ~ U(0, η)`.
    pub eta: f64,
    /// Weight of the augmented-sample classification term.
    pub gamma: f64,
    /// Target weight of the consistency terms.
    pub beta: f64,
    pub rampup_epochs: usize,
    pub teacher_momentum: f64,
    pub seed: u64,
    pub policy: MixupPolicy,
    pub preprocess: PreprocessOptions,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sam,
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.001,
            lr_schedule: LrSchedule::StepAtFraction {
                fraction: 0.8,
                factor: 0.1,
            },
            momentum: 0.9,
            weight_decay: 5e-4,
            eta: 1.0,
            gamma: 1.0,
            beta: 2.0,
            rampup_epochs: 5,
            teacher_momentum: 0.9995,
            seed: 0,
            policy: MixupPolicy::sam(),
            preprocess: PreprocessOptions::default(),
            conv1_channels: 16,
            conv2_channels: 32,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.teacher_momentum) {
            return Err(invalid(format!("teacher momentum must be in [0, 1), got {}", self.teacher_momentum)));
        }
        if self.gamma < 0.0 || self.beta < 0.0 {
            return Err(invalid("gamma and beta must be nonnegative"));
        }
        if self.rampup_epochs > self.epochs {
            return Err(invalid(format!(
                "rampup length {} exceeds epoch count {}",
                self.rampup_epochs, self.epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(invalid("batch size must be at least 2"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(invalid("learning rate must be positive"));
        }
        LambdaSampler::new(self.eta)?;
        Ok(())
    }

    pub fn architecture(&self, dataset: &Dataset) -> Architecture {
        let (c, h, w) = dataset.image_shape();
        Architecture {
            in_channels: c,
            height: h,
            width: w,
            conv1: self.conv1_channels,
            conv2: self.conv2_channels,
            classes: dataset.num_classes(),
        }
    }

    /// Report label: `DeepAll` for the baseline, `Ours` for the default table.
    pub fn tag(&self) -> String {
        match self.mode {
            Mode::Erm => "DeepAll".into(),
            Mode::Sam if self.policy == MixupPolicy::sam() => "Ours".into(),
            Mode::Sam if self.policy == MixupPolicy::fact() => "FACT".into(),
            Mode::Sam => "custom".into(),
        }
    }
}

/// `β · exp(-5 (1 - t)²)` for progress `t` through the rampup window.
pub fn beta_rampup(progress: f64, beta_target: f64) -> f64 {
    let t = progress.clamp(0.0, 1.0);
    beta_target * (-5.0 * (1.0 - t).powi(2)).exp()
}

/// `θ_t ← m·θ_t + (1 - m)·θ`.
pub fn ema_update(teacher: &mut Params, student: &Params, m: f64) -> Result<()> {
    teacher.check_congruent(student)?;
    if !(0.0..1.0).contains(&m) {
        return Err(invalid(format!("EMA momentum must be in [0, 1), got {m}")));
    }
    for (t, s) in teacher.values_mut().iter_mut().zip(student.values()) {
        *t = m * *t + (1.0 - m) * s;
    }
    Ok(())
}

/// One Nesterov step with coupled weight decay:
/// `g ← ∇ + wd·θ; v ← μ·v + g; θ ← θ − lr·(g + μ·v)`.
pub fn sgd_step(
    params: &mut Params,
    velocity: &mut Params,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    params.check_congruent(grads)?;
    params.check_congruent(velocity)?;
    if lr.is_nan() || lr <= 0.0 {
        return Err(invalid(format!("learning rate must be positive, got {lr}")));
    }
    for ((p, v), g) in params
        .values_mut()
        .iter_mut()
        .zip(velocity.values_mut())
        .zip(grads.values())
    {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p -= lr * (g + momentum * *v);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub student: Params,
    pub teacher: Params,
    pub velocity: Params,
    pub epoch: usize,
    pub step: usize,
}

impl TrainState {
    pub fn new(student: Params) -> Result<Self> {
        Ok(Self {
            teacher: student.clone(),
            velocity: Params::zeros(*student.arch())?,
            student,
            epoch: 0,
            step: 0,
        })
    }
}

/// Objective value, its parts and the gradient with respect to the student.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: f64,
    pub classification: f64,
    pub loss_c1: f64,
    pub loss_c2: f64,
    pub grads: Gradients,
}

struct PairTerms {
    cls: f64,
    c1: f64,
    c2: f64,
    grads: Gradients,
}

fn reduce(terms: Vec<Result<PairTerms>>, arch: Architecture, n: usize, beta: f64) -> Result<LossOutput> {
    let mut grads = Params::zeros(arch)?;
    let (mut cls, mut c1, mut c2) = (0.0, 0.0, 0.0);
    for t in terms {
        let t = t?;
        cls += t.cls;
        c1 += t.c1;
        c2 += t.c2;
        grads.add_scaled(&t.grads, 1.0)?;
    }
    let inv = 1.0 / n as f64;
    grads.scale(inv);
    let (cls, c1, c2) = (cls * inv, c1 * inv, c2 * inv);
    Ok(LossOutput {
        total: cls + beta * (c1 + c2),
        classification: cls,
        loss_c1: c1,
        loss_c2: c2,
        grads,
    })
}

/// `L + β(L_c1 + L_c2)` over a batch of (original, augmented) pairs, with
///
/// * `L    = mean[ℓ(f(x;θ), y) + γ·ℓ(f(x̃;θ), ỹ)]`
/// * `L_c1 = mean KL(f(x̃;θ) ‖ f(x;θ_t))`
/// * `L_c2 = mean KL(f(x;θ) ‖ f(x̃;θ_t))`
///
/// Teacher outputs are constants.
pub fn sam_loss(
    pairs: &[(LabeledSample, AugmentedSample)],
    student: &Params,
    teacher: &Params,
    gamma: f64,
    beta: f64,
    exec: Exec,
) -> Result<LossOutput> {
    student.check_congruent(teacher)?;
    if pairs.is_empty() {
        return Err(invalid("empty batch"));
    }
    let terms = exec.map(pairs, |(orig, aug)| -> Result<PairTerms> {
        let tr_x = TinyNet::forward_trace(student, &orig.image)?;
        let tr_a = TinyNet::forward_trace(student, &aug.image)?;
        let t_x = TinyNet::forward(teacher, &orig.image)?;
        let t_a = TinyNet::forward(teacher, &aug.image)?;
        let z = orig.one_hot();
        let cls = soft_cross_entropy(&tr_x.logits, &z)? + gamma * soft_cross_entropy(&tr_a.logits, &aug.label)?;
        let c1 = kl_divergence(&tr_a.logits, &t_x);
        let c2 = kl_divergence(&tr_x.logits, &t_a);

        let mut d_x = soft_cross_entropy_grad(&tr_x.logits, &z);
        for (d, k) in d_x.iter_mut().zip(kl_divergence_grad(&tr_x.logits, &t_a)) {
            *d += beta * k;
        }
        let mut d_a: Vec<f64> = soft_cross_entropy_grad(&tr_a.logits, &aug.label)
            .into_iter()
            .map(|g| gamma * g)
            .collect();
        for (d, k) in d_a.iter_mut().zip(kl_divergence_grad(&tr_a.logits, &t_x)) {
            *d += beta * k;
        }
        let mut grads = TinyNet::backward_trace(student, &tr_x, &d_x)?;
        grads.add_scaled(&TinyNet::backward_trace(student, &tr_a, &d_a)?, 1.0)?;
        Ok(PairTerms { cls, c1, c2, grads })
    });
    reduce(terms, *student.arch(), pairs.len(), beta)
}

/// Mean cross-entropy on plain samples.
pub fn erm_loss(samples: &[LabeledSample], params: &Params, exec: Exec) -> Result<LossOutput> {
    if samples.is_empty() {
        return Err(invalid("empty batch"));
    }
    let terms = exec.map(samples, |s| -> Result<PairTerms> {
        let tr = TinyNet::forward_trace(params, &s.image)?;
        let z = s.one_hot();
        let cls = soft_cross_entropy(&tr.logits, &z)?;
        let grads = TinyNet::backward_trace(params, &tr, &soft_cross_entropy_grad(&tr.logits, &z))?;
        Ok(PairTerms {
            cls,
            c1: 0.0,
            c2: 0.0,
            grads,
        })
    });
    reduce(terms, *params.arch(), samples.len(), 0.0)
}

/// Fraction of `samples` classified correctly.
pub fn accuracy(params: &Params, samples: &[&LabeledSample], exec: Exec) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("cannot evaluate on an empty set"));
    }
    let hits = exec.map(samples, |s| TinyNet::forward(params, &s.image).map(|l| (argmax(&l) == s.class) as usize));
    let mut correct = 0;
    for h in hits {
        correct += h?;
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Accuracy of `params` per domain present in `dataset` (`None` for empty domains).
pub fn per_domain_accuracy(params: &Params, dataset: &Dataset, exec: Exec) -> Result<Vec<Option<f64>>> {
    (0..dataset.num_domains())
        .map(|d| {
            let subset: Vec<&LabeledSample> = dataset.samples.iter().filter(|s| s.domain == d).collect();
            if subset.is_empty() {
                Ok(None)
            } else {
                accuracy(params, &subset, exec).map(Some)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean classification loss `L` over the epoch's steps.
    pub loss: f64,
    pub loss_c1: f64,
    pub loss_c2: f64,
    pub total: f64,
    /// β at the last step of the epoch.
    pub beta_now: f64,
    pub val_accuracy: f64,
    /// FNV-1a digest of the epoch's sample order.
    pub data_order_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tag: String,
    pub seed: u64,
    pub held_out_domain: usize,
    pub epochs: Vec<EpochMetrics>,
    /// First epoch with the highest validation accuracy.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    pub config: TrainConfig,
}

impl RunReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,L,L_c1,L_c2,beta_now,val_acc\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch, e.loss, e.loss_c1, e.loss_c2, e.beta_now, e.val_accuracy
            )
            .unwrap();
        }
        out
    }
}

/// Result of a run: the report plus the selected (best-validation) parameters.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub best: Params,
}

/// What an observer sees after every optimizer step.
pub struct StepEvent<'a> {
    pub epoch: usize,
    pub step: usize,
    pub batch: &'a [usize],
    pub loss: &'a LossOutput,
    pub beta_now: f64,
    pub state: &'a TrainState,
}

fn fnv1a(ids: impl Iterator<Item = usize>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for id in ids {
        for b in (id as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub fn train_run(config: &TrainConfig, dataset: &Dataset, split: &DomainSplit, exec: Exec) -> Result<RunOutcome> {
    train_run_observed(config, dataset, split, exec, &mut |_| {})
}

/// [`train_run`] with a callback after every step.
pub fn train_run_observed(
    config: &TrainConfig,
    dataset: &Dataset,
    split: &DomainSplit,
    exec: Exec,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<RunOutcome> {
    config.validate()?;
    if split.train.len() < config.batch_size {
        return Err(invalid(format!(
            "training split has {} samples, fewer than one batch of {}",
            split.train.len(),
            config.batch_size
        )));
    }
    if split.val.is_empty() || split.test.is_empty() {
        return Err(invalid("validation and test splits must be nonempty"));
    }
    let seed = config.seed;
    let arch = config.architecture(dataset);
    let mut state = TrainState::new(Params::init(arch, seed)?)?;
    let sampler = LambdaSampler::new(config.eta)?;
    let val: Vec<&LabeledSample> = dataset.get(&split.val);
    let test: Vec<&LabeledSample> = dataset.get(&split.test);

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Params)> = None;
    for epoch in 0..config.epochs {
        state.epoch = epoch;
        let lr = config.lr_schedule.lr_at(config.learning_rate, epoch, config.epochs);
        let batches = make_batches(&split.train, config.batch_size, &mut rng::stream(seed, &[tag::BATCH, epoch as u64]))?;
        let digest = fnv1a(batches.iter().flatten().copied());
        let (mut sum_l, mut sum_c1, mut sum_c2, mut sum_total) = (0.0, 0.0, 0.0, 0.0);
        let mut beta_now = 0.0;
        for (b, ids) in batches.iter().enumerate() {
            let processed: Vec<LabeledSample> = exec.map(ids, |&id| {
                let mut r = rng::stream(seed, &[tag::PREPROCESS, epoch as u64, id as u64]);
                preprocess(&dataset.samples[id], &mut r, &config.preprocess)
            });
            let loss = match config.mode {
                Mode::Erm => {
                    beta_now = 0.0;
                    erm_loss(&processed, &state.student, exec)?
                }
                Mode::Sam => {
                    let progress = if config.rampup_epochs == 0 {
                        1.0
                    } else {
                        (epoch as f64 + b as f64 / batches.len() as f64) / config.rampup_epochs as f64
                    };
                    beta_now = beta_rampup(progress, config.beta);
                    let mut r = rng::stream(seed, &[tag::PAIRING, epoch as u64, b as u64]);
                    let pairs = augment_batch(&processed, &config.policy, &sampler, &mut r, exec)?;
                    sam_loss(&pairs, &state.student, &state.teacher, config.gamma, beta_now, exec)?
                }
            };
            sgd_step(
                &mut state.student,
                &mut state.velocity,
                &loss.grads,
                lr,
                config.momentum,
                config.weight_decay,
            )?;
            ema_update(&mut state.teacher, &state.student, config.teacher_momentum)?;
            state.step += 1;
            sum_l += loss.classification;
            sum_c1 += loss.loss_c1;
            sum_c2 += loss.loss_c2;
            sum_total += loss.total;
            observer(&StepEvent {
                epoch,
                step: state.step,
                batch: ids,
                loss: &loss,
                beta_now,
                state: &state,
            });
        }
        let n = batches.len().max(1) as f64;
        let val_accuracy = accuracy(&state.student, &val, exec)?;
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, state.student.clone()));
        }
        epochs.push(EpochMetrics {
            epoch,
            learning_rate: lr,
            loss: sum_l / n,
            loss_c1: sum_c1 / n,
            loss_c2: sum_c2 / n,
            total: sum_total / n,
            beta_now,
            val_accuracy,
            data_order_digest: format!("{digest:016x}"),
        });
    }
    let (best_epoch, best_val_accuracy, best_params) = match best {
        Some(b) => b,
        None => (0, accuracy(&state.student, &val, exec)?, state.student.clone()),
    };
    let test_accuracy = accuracy(&best_params, &test, exec)?;
    Ok(RunOutcome {
        report: RunReport {
            tag: config.tag(),
            seed,
            held_out_domain: split.held_out_domain,
            epochs,
            best_epoch,
            best_val_accuracy,
            test_accuracy,
            config: config.clone(),
        },
        best: best_params,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub policy: MixupPolicy,
    pub reports: Vec<RunReport>,
    pub mean_test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Check/cross grid in the layout of the per-case ablation table.
    pub fn render(&self) -> String {
        let mark = |b: bool| if b { "✓" } else { "✗" };
        let mut out = String::new();
        writeln!(
            out,
            "| Model | intra-d intra-l A | P | intra-d inter-l A | P | inter-d intra-l A | P | inter-d inter-l A | P | Acc |"
        )
        .unwrap();
        writeln!(out, "|---|---|---|---|---|---|---|---|---|---|").unwrap();
        for row in &self.rows {
            let cells: Vec<&str> = row.policy.grid().iter().map(|&b| mark(b)).collect();
            writeln!(out, "| {} | {} | {:.4} |", row.name, cells.join(" | "), row.mean_test_accuracy).unwrap();
        }
        out
    }
}

/// One training run per `(policy, held-out domain, seed)`; every policy sees
/// the same seeds and folds.
pub fn ablation_run(
    config: &TrainConfig,
    dataset: &Dataset,
    policies: &[(String, MixupPolicy)],
    held_out: &[usize],
    seeds: &[u64],
    exec: Exec,
) -> Result<AblationTable> {
    if policies.is_empty() || held_out.is_empty() || seeds.is_empty() {
        return Err(invalid("ablation needs at least one policy, fold and seed"));
    }
    let mut rows = Vec::with_capacity(policies.len());
    for (name, policy) in policies {
        let mut reports = Vec::new();
        for &h in held_out {
            for &seed in seeds {
                let split = DomainSplit::leave_one_domain_out(dataset, h, config.val_fraction, seed)?;
                let cfg = TrainConfig {
                    mode: Mode::Sam,
                    policy: *policy,
                    seed,
                    ..config.clone()
                };
                let mut report = train_run(&cfg, dataset, &split, exec)?.report;
                report.tag = name.clone();
                reports.push(report);
            }
        }
        let mean = reports.iter().map(|r| r.test_accuracy).sum::<f64>() / reports.len() as f64;
        rows.push(AblationRow {
            name: name.clone(),
            policy: *policy,
            reports,
            mean_test_accuracy: mean,
        });
    }
    Ok(AblationTable { rows })
}
