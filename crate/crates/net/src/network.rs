//! The full network: parameter layout, forward pass and initialization.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use nes_core::dual::block_len;
use nes_core::{Concept, DualVariables, GameShape, NormalFormGame, SelectionTargets};
use nes_tensor::{BatchNormMode, BatchStats, Tape, Tensor, Var};

use crate::config::NetworkConfig;
use crate::error::{NetError, Result};
use crate::input::{assemble_input, batch_shape, Instance, INPUT_CHANNELS};
use crate::layers::{
    ce_branch_count, ce_dual_branches, cce_branch_count, cce_dual_branches, joint_batchnorm, linear,
    outer_combine, payoff_branch_count, payoff_branches, payoff_to_dual_branches,
};

/// Size of the dummy batch used for variance-scaling initialization.
pub const INIT_BATCH: usize = 4096;

/// Named parameter tensors plus running batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub running: Vec<BatchStats>,
}

impl NetworkParams {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
enum LinearSet {
    Shared(Linear),
    PerPlayer(Vec<Linear>),
}

impl LinearSet {
    fn for_player(&self, p: usize) -> Linear {
        match self {
            LinearSet::Shared(l) => *l,
            LinearSet::PerPlayer(ls) => ls[p],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    payoff: Vec<(LinearSet, Norm)>,
    /// One head for CCE, two (recommendation, deviation) for CE.
    to_dual: (Vec<LinearSet>, Norm),
    dual: Vec<(LinearSet, Norm)>,
    output: LinearSet,
}

impl Layout {
    /// Every linear set in forward order, matching
    /// [`ForwardPass::pre_activations`].
    fn linear_sets(&self) -> Vec<&LinearSet> {
        let mut v: Vec<&LinearSet> = self.payoff.iter().map(|(l, _)| l).collect();
        v.extend(self.to_dual.0.iter());
        v.extend(self.dual.iter().map(|(l, _)| l));
        v.push(&self.output);
        v
    }
}

struct Builder {
    params: NetworkParams,
    share: bool,
    num_players: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, value: Tensor) -> usize {
        self.params.names.push(name);
        self.params.tensors.push(value);
        self.params.tensors.len() - 1
    }

    fn linear_one(&mut self, name: &str, c_out: usize, c_in: usize) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.w"), Tensor::zeros(&[c_out, c_in])),
            b: self.tensor(format!("{name}.b"), Tensor::zeros(&[c_out])),
        }
    }

    fn linear(&mut self, name: &str, c_out: usize, c_in: usize) -> LinearSet {
        if self.share {
            LinearSet::Shared(self.linear_one(name, c_out, c_in))
        } else {
            LinearSet::PerPlayer(
                (0..self.num_players)
                    .map(|p| self.linear_one(&format!("{name}.p{p}"), c_out, c_in))
                    .collect(),
            )
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = self.tensor(format!("{name}.bn.scale"), Tensor::full(&[c], 1.0));
        let beta = self.tensor(format!("{name}.bn.shift"), Tensor::zeros(&[c]));
        self.params.running.push(BatchStats {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        });
        Norm {
            gamma,
            beta,
            stats: self.params.running.len() - 1,
        }
    }
}

fn build_layout(config: &NetworkConfig) -> (Layout, NetworkParams) {
    let pool = &config.pooling;
    let phis = &pool.phis;
    let mut b = Builder {
        params: NetworkParams {
            names: Vec::new(),
            tensors: Vec::new(),
            running: Vec::new(),
        },
        share: config.cubic_weight_sharing,
        num_players: config.num_players,
    };
    let mut c = INPUT_CHANNELS;
    let mut payoff = Vec::new();
    let blocks = payoff_branch_count(&pool.payoff, phis, config.num_players, config.cubic_weight_sharing);
    for (i, &out) in config.payoff_layer_channels.iter().enumerate() {
        let name = format!("payoff{i}");
        let l = b.linear(&name, out, c * blocks);
        payoff.push((l, b.norm(&name, out)));
        c = out;
    }
    let c_in = c * pool.payoff_to_dual.len() * phis.len();
    let out = config.payoff_to_dual_channels;
    let heads = match config.concept {
        Concept::Cce => vec![b.linear("to_dual", out, c_in)],
        Concept::Ce => vec![b.linear("to_dual.rec", out, c_in), b.linear("to_dual.dev", out, c_in)],
    };
    let to_dual = (heads, b.norm("to_dual", out));
    c = out;
    let blocks = match config.concept {
        Concept::Cce => cce_branch_count(&pool.cce_dual, phis),
        Concept::Ce => ce_branch_count(&pool.ce_dual, phis),
    };
    let mut dual = Vec::new();
    for (i, &out) in config.dual_layer_channels.iter().enumerate() {
        let name = format!("dual{i}");
        let l = b.linear(&name, out, c * blocks);
        dual.push((l, b.norm(&name, out)));
        c = out;
    }
    let output = b.linear("output", 1, c * blocks);
    (
        Layout {
            payoff,
            to_dual,
            dual,
            output,
        },
        b.params,
    )
}

/// Whether batch normalization uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Tape handles produced by [`Network::forward_tape`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Per player: `[B, 1, |A_p|]` (CCE) or `[B, 1, |A_p|, |A_p|]` (CE).
    pub outputs: Vec<Var>,
    /// One handle per parameter tensor, in [`NetworkParams`] order.
    pub params: Vec<Var>,
    /// One batch-norm node per running-statistics entry.
    pub norms: Vec<Var>,
    /// Linear outputs before normalization or nonlinearity, per linear
    /// layer (in forward order), one entry per player for per-player layers
    /// and dual layers, a single entry for shared payoff layers.
    pub pre_activations: Vec<Vec<Var>>,
}

/// The equivariant network.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    layout: Layout,
    params: NetworkParams,
}

impl Network {
    /// A network with weights drawn from `N(0, 1/fan_in)`, zero biases and
    /// identity normalization; no data-dependent rescaling.
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (layout, mut params) = build_layout(&config);
        for (name, t) in params.names.iter().zip(params.tensors.iter_mut()) {
            if name.ends_with(".w") {
                let fan_in = t.shape()[1] as f64;
                let std = 1.0 / fan_in.sqrt();
                for v in t.data_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = z * std;
                }
            }
        }
        Ok(Self { config, layout, params })
    }

    /// [`Network::new`] followed by variance scaling on `dummy`: every linear
    /// layer's output channels are rescaled to unit variance on the batch,
    /// and running statistics are set to the batch statistics.
    pub fn initialize<R: Rng + ?Sized>(config: NetworkConfig, dummy: &[Instance], rng: &mut R) -> Result<Self> {
        let mut net = Self::new(config, rng)?;
        net.variance_scale(dummy)?;
        Ok(net)
    }

    /// Builds a network from stored parameters, checking their layout.
    pub fn from_params(config: NetworkConfig, params: NetworkParams) -> Result<Self> {
        config.validate()?;
        let (layout, fresh) = build_layout(&config);
        if fresh.names != params.names {
            return Err(NetError::Checkpoint("parameter names do not match the configuration".into()));
        }
        for ((name, a), b) in fresh.names.iter().zip(&fresh.tensors).zip(&params.tensors) {
            if a.shape() != b.shape() {
                return Err(NetError::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        let stats_ok = fresh.running.len() == params.running.len()
            && fresh
                .running
                .iter()
                .zip(&params.running)
                .all(|(a, b)| a.mean.len() == b.mean.len() && a.var.len() == b.var.len());
        if !stats_ok {
            return Err(NetError::Checkpoint("batch-norm statistics do not match".into()));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_shape(&self, shape: &GameShape) -> Result<()> {
        if !self.config.cubic_weight_sharing && shape.num_players() != self.config.num_players {
            return Err(NetError::ShapeMismatch(format!(
                "network without weight sharing is built for {} players, game {shape} has {}",
                self.config.num_players,
                shape.num_players()
            )));
        }
        Ok(())
    }

    /// Records the forward pass of an assembled `[B, 4, N, ...]` input.
    ///
    /// With `track_params` the parameters are gradient-tracked leaves.
    pub fn forward_tape(&self, tape: &mut Tape, input: &Tensor, mode: Mode, track_params: bool) -> Result<ForwardPass> {
        let dims = input.shape();
        if dims.len() < 5 || dims[1] != INPUT_CHANNELS || dims[2] != dims.len() - 3 {
            return Err(NetError::ShapeMismatch(format!("network input of shape {dims:?}")));
        }
        let shape = GameShape::new(dims[3..].to_vec())?;
        self.check_shape(&shape)?;
        let n = shape.num_players();
        let cfg = &self.config;
        let pool = &cfg.pooling;
        let share = cfg.cubic_weight_sharing;

        let params = self
            .params
            .tensors
            .iter()
            .map(|t| {
                if track_params {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut norms = Vec::new();
        let mut pre = Vec::new();
        let bn_mode = |norm: &Norm| match mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval(&self.params.running[norm.stats]),
        };

        let mut x = tape.constant(input.clone())?;
        for (lin, norm) in &self.layout.payoff {
            let cat = payoff_branches(tape, x, &pool.payoff, &pool.phis, share)?;
            let y = match lin {
                LinearSet::Shared(l) => {
                    let y = linear(tape, cat, params[l.w], params[l.b])?;
                    pre.push(vec![y]);
                    y
                }
                LinearSet::PerPlayer(ls) => {
                    let per = ls
                        .iter()
                        .enumerate()
                        .map(|(p, l)| {
                            let s = tape.select(cat, 2, p)?;
                            linear(tape, s, params[l.w], params[l.b])
                        })
                        .collect::<Result<Vec<_>>>()?;
                    pre.push(per.clone());
                    tape.stack(&per, 2)?
                }
            };
            let y = tape.batchnorm(y, params[norm.gamma], params[norm.beta], bn_mode(norm))?;
            norms.push(y);
            x = tape.relu(y)?;
        }

        let (heads, norm) = &self.layout.to_dual;
        let mut head_pre: Vec<Vec<Var>> = vec![Vec::new(); heads.len()];
        let mut duals = Vec::with_capacity(n);
        for p in 0..n {
            let cat = payoff_to_dual_branches(tape, x, p, &pool.payoff_to_dual, &pool.phis)?;
            let outs = heads
                .iter()
                .enumerate()
                .map(|(h, set)| {
                    let l = set.for_player(p);
                    let y = linear(tape, cat, params[l.w], params[l.b])?;
                    head_pre[h].push(y);
                    Ok(y)
                })
                .collect::<Result<Vec<_>>>()?;
            duals.push(match cfg.concept {
                Concept::Cce => outs[0],
                Concept::Ce => outer_combine(tape, outs[0], outs[1], cfg.outer_op.unwrap_or_default())?,
            });
        }
        pre.extend(head_pre);
        let (normed, node) = joint_batchnorm(tape, &duals, params[norm.gamma], params[norm.beta], bn_mode(norm))?;
        norms.push(node);
        let mut duals = self.dual_nonlinearity(tape, &normed, false)?;

        for (lin, norm) in &self.layout.dual {
            let ys = self.dual_linear(tape, &duals, &shape, lin, &params)?;
            pre.push(ys.clone());
            let (normed, node) = joint_batchnorm(tape, &ys, params[norm.gamma], params[norm.beta], bn_mode(norm))?;
            norms.push(node);
            duals = self.dual_nonlinearity(tape, &normed, false)?;
        }

        let ys = self.dual_linear(tape, &duals, &shape, &self.layout.output, &params)?;
        pre.push(ys.clone());
        let outputs = self.dual_nonlinearity(tape, &ys, true)?;
        Ok(ForwardPass {
            outputs,
            params,
            norms,
            pre_activations: pre,
        })
    }

    fn dual_linear(
        &self,
        tape: &mut Tape,
        duals: &[Var],
        shape: &GameShape,
        lin: &LinearSet,
        params: &[Var],
    ) -> Result<Vec<Var>> {
        let pool = &self.config.pooling;
        let cats = match self.config.concept {
            Concept::Cce => cce_dual_branches(tape, duals, shape, &pool.cce_dual, &pool.phis)?,
            Concept::Ce => ce_dual_branches(tape, duals, shape, &pool.ce_dual, &pool.phis)?,
        };
        cats.iter()
            .enumerate()
            .map(|(p, &cat)| {
                let l = lin.for_player(p);
                linear(tape, cat, params[l.w], params[l.b])
            })
            .collect()
    }

    /// ReLU (hidden) or softplus (output), then the zero-diagonal mask for CE.
    fn dual_nonlinearity(&self, tape: &mut Tape, duals: &[Var], output: bool) -> Result<Vec<Var>> {
        duals
            .iter()
            .map(|&d| {
                let y = if output { tape.softplus(d)? } else { tape.relu(d)? };
                Ok(match self.config.concept {
                    Concept::Cce => y,
                    Concept::Ce => tape.diag_mask(y, 2, 3)?,
                })
            })
            .collect()
    }

    /// Converts recorded outputs into per-game dual variables.
    pub fn outputs_to_duals(&self, tape: &Tape, outputs: &[Var], shape: &GameShape) -> Result<Vec<DualVariables>> {
        let concept = self.config.concept;
        let batch = tape.shape(outputs[0])[0];
        (0..batch)
            .map(|b| {
                let values = outputs
                    .iter()
                    .enumerate()
                    .map(|(p, &o)| {
                        let len = block_len(concept, shape.num_strategies(p));
                        tape.value(o).data()[b * len..(b + 1) * len].to_vec()
                    })
                    .collect();
                Ok(DualVariables::new(concept, shape, values)?)
            })
            .collect()
    }

    /// Predicted duals for a batch of same-shaped instances (running
    /// batch-norm statistics).
    pub fn predict(&self, batch: &[Instance]) -> Result<Vec<DualVariables>> {
        let shape = batch_shape(batch)?;
        let input = assemble_input(batch)?;
        let mut tape = Tape::new();
        let pass = self.forward_tape(&mut tape, &input, Mode::Eval, false)?;
        self.outputs_to_duals(&tape, &pass.outputs, &shape)
    }

    /// Predicted duals for one standardized game.
    pub fn forward(&self, game: &NormalFormGame, targets: &SelectionTargets) -> Result<DualVariables> {
        let inst = Instance::new(game.clone(), targets.clone());
        Ok(self.predict(std::slice::from_ref(&inst))?.remove(0))
    }

    /// Centered variance of every linear layer's output on `batch`, pooled
    /// over channels, in forward order.
    pub fn activation_variances(&self, batch: &[Instance], mode: Mode) -> Result<Vec<f64>> {
        let input = assemble_input(batch)?;
        let mut tape = Tape::new();
        let pass = self.forward_tape(&mut tape, &input, mode, false)?;
        Ok(pass
            .pre_activations
            .iter()
            .map(|vars| {
                let per_channel = channel_moments(&tape, vars);
                per_channel.iter().map(|(_, v)| v).sum::<f64>() / per_channel.len() as f64
            })
            .collect())
    }

    fn variance_scale(&mut self, dummy: &[Instance]) -> Result<()> {
        let input = assemble_input(dummy)?;
        {
            let mut tape = Tape::new();
            let pass = self.forward_tape(&mut tape, &input, Mode::Train, false)?;
            let sets: Vec<LinearSet> = self.layout.linear_sets().into_iter().cloned().collect();
            for (set, vars) in sets.iter().zip(&pass.pre_activations) {
                match set {
                    LinearSet::Shared(l) => self.rescale(*l, &channel_moments(&tape, vars)),
                    LinearSet::PerPlayer(ls) => {
                        for (l, v) in ls.iter().zip(vars) {
                            self.rescale(*l, &channel_moments(&tape, std::slice::from_ref(v)));
                        }
                    }
                }
            }
        }
        let mut tape = Tape::new();
        let pass = self.forward_tape(&mut tape, &input, Mode::Train, false)?;
        for (i, &node) in pass.norms.iter().enumerate() {
            if let Some(stats) = tape.batch_stats(node) {
                self.params.running[i] = stats.clone();
            }
        }
        Ok(())
    }

    /// Divides weight rows and bias entries by the channel's standard
    /// deviation so that the channel has unit variance.
    fn rescale(&mut self, l: Linear, moments: &[(f64, f64)]) {
        let c_in = self.params.tensors[l.w].shape()[1];
        for (c, &(_, var)) in moments.iter().enumerate() {
            if var > 1e-12 {
                let inv = 1.0 / var.sqrt();
                self.params.tensors[l.w].data_mut()[c * c_in..(c + 1) * c_in]
                    .iter_mut()
                    .for_each(|v| *v *= inv);
                self.params.tensors[l.b].data_mut()[c] *= inv;
            }
        }
    }

    /// Blends batch statistics recorded in a training pass into the running
    /// statistics: `running = m * running + (1 - m) * batch`.
    pub fn update_running_stats(&mut self, tape: &Tape, pass: &ForwardPass) {
        let m = self.config.batchnorm_momentum;
        for (i, &node) in pass.norms.iter().enumerate() {
            if let Some(stats) = tape.batch_stats(node) {
                let run = &mut self.params.running[i];
                for (r, b) in run.mean.iter_mut().zip(&stats.mean) {
                    *r = m * *r + (1.0 - m) * b;
                }
                for (r, b) in run.var.iter_mut().zip(&stats.var) {
                    *r = m * *r + (1.0 - m) * b;
                }
            }
        }
    }
}

/// Per-channel (axis 1) mean and centered variance over every other axis of
/// all the given tensors together.
fn channel_moments(tape: &Tape, vars: &[Var]) -> Vec<(f64, f64)> {
    let c = tape.shape(vars[0])[1];
    let mut sum = vec![0.0; c];
    let mut sq = vec![0.0; c];
    let mut count = 0.0;
    for &v in vars {
        let t = tape.value(v);
        let s = t.shape();
        let inner: usize = s[2..].iter().product();
        for b in 0..s[0] {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for &x in &t.data()[base..base + inner] {
                    sum[ch] += x;
                    sq[ch] += x * x;
                }
            }
        }
        count += (s[0] * inner) as f64;
    }
    sum.iter()
        .zip(&sq)
        .map(|(s, q)| {
            let mean = s / count;
            (mean, (q / count - mean * mean).max(0.0))
        })
        .collect()
}
