//! Unsupervised training on the dual objective.
//!
//! Every step samples a fresh batch of games and targets, predicts duals,
//! evaluates the dual loss and its analytic gradient per game, and
//! backpropagates that gradient through the network. No exact solution is
//! ever computed here: reference solutions only enter through an
//! [`EvalSet`] built by the caller.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nes_core::io::write_json;
use nes_core::metrics::{equilibrium_gap, solver_gap};
use nes_core::targets::{make_targets, sample_invariant_game, TargetOptions, DEFAULT_RHO};
use nes_core::{DualProblem, GameShape, JointDistribution, NormOrder, ParamName};
use nes_tensor::{Tape, Tensor, TensorError};

use crate::checkpoint::save_network;
use crate::config::NetworkConfig;
use crate::error::{NetError, Result};
use crate::input::{assemble_input, Instance};
use crate::network::{Mode, Network, INIT_BATCH};

/// `(iteration, factor)` pairs of the full-scale learning-rate schedule.
pub const FULL_SCALE_SCHEDULE: [(usize, f64); 6] = [
    (100_000, 1.0),
    (1_000_000, 0.6),
    (4_000_000, 0.3),
    (7_000_000, 0.1),
    (10_000_000, 0.06),
    (100_000_000, 0.03),
];

/// Length of the full-scale run the schedule is compressed from.
pub const FULL_SCALE_STEPS: usize = 10_000_000;

/// Floor on the parameter norm in adaptive gradient clipping.
pub const CLIP_NORM_FLOOR: f64 = 1e-3;

/// The full-scale schedule with its iterations scaled by
/// `total_steps / FULL_SCALE_STEPS`; pairs beyond `total_steps` are dropped.
pub fn compressed_schedule(total_steps: usize) -> Vec<(usize, f64)> {
    let ratio = total_steps as f64 / FULL_SCALE_STEPS as f64;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for &(step, factor) in &FULL_SCALE_SCHEDULE {
        let s = ((step as f64 * ratio).round() as usize).max(1);
        if s > total_steps {
            break;
        }
        match out.last_mut() {
            Some(last) if last.0 >= s => last.1 = factor,
            _ => out.push((s, factor)),
        }
    }
    out
}

/// Learning-rate factor at `step`: the factor of the last pair whose
/// iteration is `<= step`, 1 before the first pair.
pub fn schedule_factor(schedule: &[(usize, f64)], step: usize) -> f64 {
    schedule
        .iter()
        .take_while(|(s, _)| *s <= step)
        .last()
        .map_or(1.0, |(_, f)| *f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub shape: GameShape,
    pub parameterization: ParamName,
    pub norm: NormOrder,
    pub rho: f64,
    pub mu: Option<f64>,
    pub batch_size: usize,
    pub total_steps: usize,
    pub learning_rate: f64,
    pub lr_schedule: Vec<(usize, f64)>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Coefficient of the `0.5 * |w|^2` penalty on linear weights.
    pub weight_decay: f64,
    /// Per-tensor gradient norms are clipped to this fraction of the
    /// parameter norm.
    pub grad_clip_fraction: f64,
    pub seed: u64,
    /// Games in the variance-scaling dummy batch.
    pub init_batch: usize,
    /// Steps between log records (and metrics rows).
    pub log_interval: usize,
    /// Steps between evaluations on the eval set (a multiple of
    /// `log_interval`); 0 disables evaluation during training.
    pub eval_interval: usize,
    /// Steps between parameter files; 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Desk-scale defaults for `shape`.
    pub fn new(network: NetworkConfig, shape: GameShape, parameterization: ParamName, total_steps: usize) -> Self {
        Self {
            network,
            shape,
            parameterization,
            norm: NormOrder::L2,
            rho: DEFAULT_RHO,
            mu: None,
            batch_size: 256,
            total_steps,
            learning_rate: 4e-4,
            lr_schedule: compressed_schedule(total_steps),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 1e-7,
            grad_clip_fraction: 1e-3,
            seed: 0,
            init_batch: INIT_BATCH,
            log_interval: 100,
            eval_interval: 0,
            checkpoint_interval: 0,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        self.network.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.init_batch == 0 {
            return bad("init_batch must be at least 1".into());
        }
        if self.log_interval == 0 {
            return bad("log_interval must be at least 1".into());
        }
        if self.eval_interval % self.log_interval != 0 {
            return bad("eval_interval must be a multiple of log_interval".into());
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("schedule steps must be strictly increasing".into());
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip_fraction > 0.0) || self.weight_decay < 0.0 {
            return bad("learning rate and clip fraction must be positive, weight decay >= 0".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.parameterization == ParamName::Mt {
            return bad("MT needs a caller-supplied target joint and cannot be sampled".into());
        }
        if !self.network.cubic_weight_sharing && self.network.num_players != self.shape.num_players() {
            return bad(format!(
                "network built for {} players, training shape {} has {}",
                self.network.num_players,
                self.shape,
                self.shape.num_players()
            ));
        }
        Ok(())
    }

    fn target_options(&self) -> TargetOptions {
        TargetOptions {
            norm: self.norm,
            rho: self.rho,
            mu: self.mu,
            target_joint: None,
        }
    }
}

/// Samples standardized games from the invariant sphere distribution and the
/// parameterization's targets.
pub fn sample_instances<R: Rng + ?Sized>(
    shape: &GameShape,
    name: ParamName,
    opts: &TargetOptions,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Instance>> {
    (0..count)
        .map(|_| {
            let game = sample_invariant_game(shape, opts.norm, rng);
            let targets = make_targets(name, &game, opts, rng)?;
            Ok(Instance::new(game, targets))
        })
        .collect()
}

/// A frozen evaluation set with reference (exact) joints.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    instances: Vec<Instance>,
    reference: Vec<JointDistribution>,
}

impl EvalSet {
    pub fn new(instances: Vec<Instance>, reference: Vec<JointDistribution>) -> Result<Self> {
        if instances.is_empty() || instances.len() != reference.len() {
            return Err(NetError::ShapeMismatch(format!(
                "{} eval games with {} reference joints",
                instances.len(),
                reference.len()
            )));
        }
        Ok(Self { instances, reference })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn reference(&self) -> &[JointDistribution] {
        &self.reference
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Means over an eval set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Half L1 distance between predicted and reference joints.
    pub solver_gap: f64,
    /// Distance of the predicted joint from the polytope at the predicted
    /// epsilon.
    pub gap: f64,
}

/// Games per forward pass during evaluation.
const EVAL_CHUNK: usize = 512;

/// Predicted joints and epsilons of the network on `instances`.
pub fn predict_solutions(net: &Network, instances: &[Instance]) -> Result<Vec<(JointDistribution, Vec<f64>)>> {
    let concept = net.config().concept;
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(EVAL_CHUNK) {
        for (inst, duals) in chunk.iter().zip(net.predict(chunk)?) {
            let sol = DualProblem::new(&inst.game, &inst.targets, concept)?.solution(&duals)?;
            out.push((sol.sigma, sol.epsilon));
        }
    }
    Ok(out)
}

/// Mean solver gap and mean (C)CE gap of the network on a frozen set.
pub fn eval_during_training(net: &Network, eval: &EvalSet) -> Result<EvalMetrics> {
    let concept = net.config().concept;
    let predictions = predict_solutions(net, &eval.instances)?;
    let mut sg = 0.0;
    let mut gap = 0.0;
    for ((inst, reference), (sigma, eps)) in eval.instances.iter().zip(&eval.reference).zip(&predictions) {
        sg += solver_gap(reference, sigma)?;
        gap += equilibrium_gap(&inst.game, sigma, eps, concept)?;
    }
    let n = eval.len() as f64;
    Ok(EvalMetrics {
        solver_gap: sg / n,
        gap: gap / n,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    /// Mean dual loss of the batch used at this step.
    pub loss: f64,
    pub solver_gap: Option<f64>,
    pub gap: Option<f64>,
    /// Wall time since the start of training.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// Equality of everything except wall time.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.step == b.step && a.loss.to_bits() == b.loss.to_bits() && a.solver_gap == b.solver_gap && a.gap == b.gap
            })
    }
}

/// Adam state for every parameter tensor.
#[derive(Debug, Clone)]
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(shapes: &[Tensor]) -> Self {
        Self {
            m: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for ((x, &gi), (m, v)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(self.m[k].iter_mut().zip(self.v[k].iter_mut()))
            {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

/// Scales `grad` so that `|grad| <= fraction * max(|param|, CLIP_NORM_FLOOR)`.
/// Returns the applied scale (1 when no clipping happens).
pub fn adaptive_clip(param: &Tensor, grad: &mut Tensor, fraction: f64) -> f64 {
    let pn = param.data().iter().map(|v| v * v).sum::<f64>().sqrt().max(CLIP_NORM_FLOOR);
    let gn = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let max = fraction * pn;
    if gn > max {
        let s = max / gn;
        grad.data_mut().iter_mut().for_each(|v| *v *= s);
        s
    } else {
        1.0
    }
}

/// The outcome of one optimizer step.
struct StepOutcome {
    loss: f64,
}

/// Batch loss and gradients of every parameter: the mean dual loss
/// over the batch, backpropagated from the per-game analytic gradients.
pub fn batch_loss_and_gradients(net: &Network, batch: &[Instance]) -> Result<(f64, Vec<Tensor>, Tape, crate::network::ForwardPass)> {
    let concept = net.config().concept;
    let shape = batch[0].game.shape().clone();
    let input = assemble_input(batch)?;
    let mut tape = Tape::new();
    let pass = net.forward_tape(&mut tape, &input, Mode::Train, true)?;
    let duals = net.outputs_to_duals(&tape, &pass.outputs, &shape)?;
    let b = batch.len();
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Vec<f64>> = pass.outputs.iter().map(|&o| vec![0.0; tape.value(o).len()]).collect();
    for (i, (inst, d)) in batch.iter().zip(&duals).enumerate() {
        let eval = DualProblem::new(&inst.game, &inst.targets, concept)?.evaluate(d)?;
        loss += eval.loss * inv_b;
        for (p, g) in eval.gradient.iter().enumerate() {
            let len = g.len();
            for (dst, &src) in grads[p][i * len..(i + 1) * len].iter_mut().zip(g) {
                *dst = src * inv_b;
            }
        }
    }
    if !loss.is_finite() {
        return Err(NetError::Tensor(TensorError::NonFiniteDetected("dual loss")));
    }
    let terms = pass
        .outputs
        .iter()
        .zip(grads)
        .map(|(&o, g)| {
            let t = Tensor::new(tape.shape(o).to_vec(), g)?;
            tape.external(o, t)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let total = tape.add_many(&terms)?;
    let g = tape.backward(total)?;
    let param_grads = pass.params.iter().map(|&v| g.get_or_zeros(&tape, v)).collect();
    Ok((loss, param_grads, tape, pass))
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    net: Network,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer<'_> {
    fn step(&mut self, step: usize) -> Result<StepOutcome> {
        let cfg = self.config;
        let batch = sample_instances(&cfg.shape, cfg.parameterization, &cfg.target_options(), cfg.batch_size, &mut self.rng)?;
        let (loss, mut grads, tape, pass) = match batch_loss_and_gradients(&self.net, &batch) {
            Ok(r) => r,
            Err(NetError::Tensor(TensorError::NonFiniteDetected(_))) => {
                let dump = dump_batch(cfg, step, &batch)?;
                return Err(NetError::NonFiniteLoss { step, dump });
            }
            Err(e) => return Err(e),
        };
        let params = &self.net.params().tensors;
        for ((name, p), g) in self.net.params().names.iter().zip(params).zip(grads.iter_mut()) {
            if name.ends_with(".w") && cfg.weight_decay > 0.0 {
                for (gi, &pi) in g.data_mut().iter_mut().zip(p.data()) {
                    *gi += cfg.weight_decay * pi;
                }
            }
            adaptive_clip(p, g, cfg.grad_clip_fraction);
        }
        let lr = cfg.learning_rate * schedule_factor(&cfg.lr_schedule, step);
        let cfg_ref = cfg;
        self.adam.step(&mut self.net.params_mut().tensors, &grads, lr, cfg_ref);
        self.net.update_running_stats(&tape, &pass);
        Ok(StepOutcome { loss })
    }
}

fn dump_batch(cfg: &TrainConfig, step: usize, batch: &[Instance]) -> Result<PathBuf> {
    let dir = match &cfg.checkpoint_dir {
        Some(d) => d.clone(),
        None => std::env::temp_dir(),
    };
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("nonfinite_batch_step{step}.json"));
    let games: Vec<serde_json::Value> = batch
        .iter()
        .map(|i| {
            serde_json::json!({
                "shape": i.game.shape(),
                "payoffs": i.game.payoffs(),
                "sigma_hat": i.targets.target_joint.probs(),
                "epsilon_hat": i.targets.target_epsilon,
                "epsilon_cap": i.targets.epsilon_cap,
                "welfare": i.targets.welfare,
                "rho": i.targets.rho,
                "mu": i.targets.mu,
            })
        })
        .collect();
    write_json(&path, &serde_json::json!({ "step": step, "games": games }))?;
    Ok(path)
}

fn params_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("params_{step:08}.json"))
}

/// Name of the final parameter file inside a checkpoint directory.
pub const FINAL_PARAMS: &str = "params_final.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";

/// Trains a network from scratch.
///
/// Deterministic given `config.seed`. When `checkpoint_dir` is set it
/// receives `config.json`, `metrics.csv` (one row per log record) and
/// parameter files.
pub fn train(config: &TrainConfig, eval: Option<&EvalSet>) -> Result<(Network, TrainLog)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dummy = sample_instances(&config.shape, config.parameterization, &config.target_options(), config.init_batch, &mut rng)?;
    let net = Network::initialize(config.network.clone(), &dummy, &mut rng)?;
    drop(dummy);
    let adam = Adam::new(&net.params().tensors);
    let mut trainer = Trainer {
        config,
        net,
        adam,
        rng,
    };

    let mut metrics = match &config.checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(&dir.join(CONFIG_FILE), config)?;
            let path = dir.join(METRICS_FILE);
            let fresh = !path.exists();
            let file = OpenOptions::new().create(true).append(true).open(&path)?;
            let mut w = csv::Writer::from_writer(file);
            if fresh {
                w.write_record(["step", "loss", "solver_gap", "gap", "seconds"])?;
                w.flush()?;
            }
            Some(w)
        }
        None => None,
    };

    let start = Instant::now();
    let mut log = TrainLog::default();
    for step in 0..config.total_steps {
        let outcome = trainer.step(step)?;
        let done = step + 1;
        if done % config.log_interval == 0 || done == config.total_steps {
            let evaluated = match eval {
                Some(e) if config.eval_interval > 0 && (done % config.eval_interval == 0 || done == config.total_steps) => {
                    Some(eval_during_training(&trainer.net, e)?)
                }
                _ => None,
            };
            let record = LogRecord {
                step: done,
                loss: outcome.loss,
                solver_gap: evaluated.map(|m| m.solver_gap),
                gap: evaluated.map(|m| m.gap),
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "step {} loss {:.6} solver_gap {:?} gap {:?}",
                record.step,
                record.loss,
                record.solver_gap,
                record.gap
            );
            if let Some(w) = metrics.as_mut() {
                let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
                w.write_record([
                    record.step.to_string(),
                    format!("{:e}", record.loss),
                    opt(record.solver_gap),
                    opt(record.gap),
                    format!("{:.3}", record.seconds),
                ])?;
                w.flush()?;
            }
            log.records.push(record);
        }
        if let Some(dir) = &config.checkpoint_dir {
            if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 {
                save_network(&params_path(dir, done), &trainer.net)?;
            }
        }
    }
    if let Some(dir) = &config.checkpoint_dir {
        save_network(&dir.join(FINAL_PARAMS), &trainer.net)?;
    }
    Ok((trainer.net, log))
}

/// Mean dual loss of the network on fixed instances (batch statistics).
pub fn mean_loss(net: &Network, instances: &[Instance]) -> Result<f64> {
    let concept = net.config().concept;
    let duals = net.predict(instances)?;
    let mut total = 0.0;
    for (inst, d) in instances.iter().zip(&duals) {
        total += DualProblem::new(&inst.game, &inst.targets, concept)?.loss(d)?;
    }
    Ok(total / instances.len() as f64)
}
