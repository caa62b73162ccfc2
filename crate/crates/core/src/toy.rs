//! Desk-scale training harness for quantized linear layers.
//!
//! A student MLP (tanh hidden activations, linear output) regresses the
//! outputs of a fixed random teacher MLP of the same shape. The quantized
//! run and the full-precision baseline see identical initial weights and
//! identical minibatches, so their loss gap isolates the quantization
//! effect.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blockquant::{ScalingStrategy, Tensor2D};
use crate::error::{Error, Result};
use crate::fpformat::FpFormat;
use crate::qlinear::{qlinear_backward, qlinear_forward, QLinearConfig, TargetSet};

pub const MAX_WIDTH: usize = 256;
pub const MAX_STEPS: usize = 10_000;

/// AdamW with cosine decay after linear warmup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_grad_norm: f64,
    /// Warmup length as a fraction of the run.
    pub warmup_fraction: f64,
}

impl OptimizerConfig {
    /// The large-model pretraining recipe: AdamW (0.9, 0.95), eps 1e-8,
    /// weight decay 0.1, clip 1.0, peak LR 3e-4 decaying to 0.
    pub fn pretraining() -> Self {
        OptimizerConfig {
            max_lr: 3.0e-4,
            min_lr: 0.0,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            clip_grad_norm: 1.0,
            warmup_fraction: 0.05,
        }
    }

    /// The pretraining recipe with a peak LR sized for a few hundred steps.
    pub fn toy() -> Self {
        OptimizerConfig {
            max_lr: 1e-2,
            ..OptimizerConfig::pretraining()
        }
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warmup = ((total as f64) * self.warmup_fraction).round() as usize;
        if step < warmup {
            return self.max_lr * (step + 1) as f64 / warmup as f64;
        }
        let span = (total - warmup).max(1) as f64;
        let progress = (step - warmup) as f64 / span;
        self.min_lr + 0.5 * (self.max_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    /// Layer widths, input first: `[32, 64, 64, 32]` is three linear layers.
    pub arch: Vec<usize>,
    pub batch: usize,
    pub steps: usize,
    pub eval_samples: usize,
    pub fmt: FpFormat,
    pub strat: ScalingStrategy,
    pub targets: TargetSet,
    #[serde(default)]
    pub bf16_output: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            arch: vec![32, 64, 64, 32],
            batch: 64,
            steps: 300,
            eval_samples: 256,
            fmt: FpFormat::E4M3,
            strat: ScalingStrategy::BlockWise(32),
            targets: TargetSet::default_targets(),
            bf16_output: false,
            optimizer: OptimizerConfig::toy(),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arch.len() < 2 {
            return Err(Error::Config("need at least an input and an output width".into()));
        }
        if let Some(w) = self.arch.iter().find(|w| **w == 0 || **w > MAX_WIDTH) {
            return Err(Error::Config(format!("layer width {w} outside [1, {MAX_WIDTH}]")));
        }
        if self.batch == 0 || self.batch > MAX_WIDTH {
            return Err(Error::Config(format!("batch {} outside [1, {MAX_WIDTH}]", self.batch)));
        }
        if self.steps == 0 || self.steps > MAX_STEPS {
            return Err(Error::Config(format!("steps {} outside [1, {MAX_STEPS}]", self.steps)));
        }
        if self.eval_samples == 0 {
            return Err(Error::Config("eval_samples must be positive".into()));
        }
        Ok(())
    }

    fn layer_configs(&self, targets: TargetSet) -> Result<Vec<QLinearConfig>> {
        self.arch
            .windows(2)
            .map(|w| {
                let mut c = QLinearConfig::new(self.fmt, self.strat, w[0], w[1])?.with_targets(targets);
                c.bf16_output = self.bf16_output;
                Ok(c)
            })
            .collect()
    }
}

/// Weights and biases of an MLP. Biases are kept in working precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Tensor2D>,
    pub biases: Vec<Vec<f64>>,
}

struct Tape {
    /// Input of every layer.
    inputs: Vec<Tensor2D>,
    output: Tensor2D,
}

impl Mlp {
    /// Xavier-style normal init.
    pub fn random(arch: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in arch.windows(2) {
            let std = (1.0 / w[0] as f64).sqrt();
            weights.push(Tensor2D::from_fn(w[1], w[0], |_, _| {
                std * rng.sample::<f64, _>(StandardNormal)
            }));
            biases.push(vec![0.0; w[1]]);
        }
        Mlp { weights, biases }
    }

    fn forward_tape(&self, x: &Tensor2D, layers: &[QLinearConfig]) -> Result<Tape> {
        let mut inputs = Vec::with_capacity(layers.len());
        let mut h = x.clone();
        for (i, cfg) in layers.iter().enumerate() {
            let mut y = qlinear_forward(&h, &self.weights[i], cfg)?;
            let cols = y.cols();
            for (j, v) in y.data_mut().iter_mut().enumerate() {
                *v += self.biases[i][j % cols];
            }
            if i + 1 < layers.len() {
                y.data_mut().iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut h, y));
        }
        Ok(Tape { inputs, output: h })
    }

    pub fn forward(&self, x: &Tensor2D, layers: &[QLinearConfig]) -> Result<Tensor2D> {
        Ok(self.forward_tape(x, layers)?.output)
    }

    /// Mean squared error over all outputs.
    pub fn loss(&self, x: &Tensor2D, target: &Tensor2D, layers: &[QLinearConfig]) -> Result<f64> {
        let y = self.forward(x, layers)?;
        Ok(mse(&y, target))
    }

    /// Loss and gradients (weights, biases) via the quantized backward GEMMs.
    pub fn loss_and_grad(
        &self,
        x: &Tensor2D,
        target: &Tensor2D,
        layers: &[QLinearConfig],
    ) -> Result<(f64, Mlp)> {
        let tape = self.forward_tape(x, layers)?;
        let loss = mse(&tape.output, target);
        let scale = 2.0 / tape.output.data().len() as f64;
        let mut dy = Tensor2D::from_fn(tape.output.rows(), tape.output.cols(), |r, c| {
            scale * (tape.output.get(r, c) - target.get(r, c))
        });
        let n = layers.len();
        let mut dws = vec![None; n];
        let mut dbs = vec![Vec::new(); n];
        for i in (0..n).rev() {
            let cols = dy.cols();
            let mut db = vec![0.0; cols];
            for (j, v) in dy.data().iter().enumerate() {
                db[j % cols] += v;
            }
            dbs[i] = db;
            let (dx, dw) = qlinear_backward(&dy, &tape.inputs[i], &self.weights[i], &layers[i])?;
            dws[i] = Some(dw);
            if i > 0 {
                // inputs[i] = tanh(pre-activation) of layer i - 1
                let h = &tape.inputs[i];
                dy = Tensor2D::from_fn(dx.rows(), dx.cols(), |r, c| {
                    let t = h.get(r, c);
                    dx.get(r, c) * (1.0 - t * t)
                });
            }
        }
        Ok((
            loss,
            Mlp {
                weights: dws.into_iter().map(Option::unwrap).collect(),
                biases: dbs,
            },
        ))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flat_map(|w| w.data_mut().iter_mut())
            .chain(self.biases.iter_mut().flat_map(|b| b.iter_mut()))
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .flat_map(|w| w.data().iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
    }

    fn param_count(&self) -> usize {
        self.params().count()
    }
}

fn mse(y: &Tensor2D, t: &Tensor2D) -> f64 {
    let n = y.data().len() as f64;
    y.data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

struct AdamW {
    cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(cfg: OptimizerConfig, n: usize) -> Self {
        AdamW {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Mlp, grads: &Mlp, lr: f64) {
        self.t += 1;
        let c = self.cfg;
        let norm = grads.params().map(|g| g * g).sum::<f64>().sqrt();
        let clip = if norm > c.clip_grad_norm {
            c.clip_grad_norm / norm
        } else {
            1.0
        };
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .params_mut()
            .zip(grads.params())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let g = g * clip;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            *p -= lr * (update + c.weight_decay * *p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Quantized,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ToyStatus {
    Completed,
    /// A loss became non-finite.
    Diverged { run: RunKind, step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyReport {
    pub seed: u64,
    /// Per-step training loss of the quantized run.
    pub loss_quant: Vec<f64>,
    pub loss_baseline: Vec<f64>,
    pub final_quant: f64,
    pub final_baseline: f64,
    /// `final_quant - final_baseline` on the held-out evaluation batch.
    pub gap: f64,
    pub status: ToyStatus,
}

impl ToyReport {
    pub fn diverged(&self) -> bool {
        self.status != ToyStatus::Completed
    }
}

struct Task {
    teacher: Mlp,
    eval_x: Tensor2D,
    eval_y: Tensor2D,
}

fn sample_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2D {
    Tensor2D::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn train(
    cfg: &ToyConfig,
    task: &Task,
    init: &Mlp,
    layers: &[QLinearConfig],
    seed: u64,
) -> Result<(Vec<f64>, f64, Option<usize>)> {
    let teacher_layers = cfg.layer_configs(TargetSet::empty())?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDA7A);
    let mut model = init.clone();
    let mut opt = AdamW::new(cfg.optimizer, model.param_count());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let x = sample_batch(&mut data_rng, cfg.batch, cfg.arch[0]);
        let y = task.teacher.forward(&x, &teacher_layers)?;
        let (loss, grads) = model.loss_and_grad(&x, &y, layers)?;
        if !loss.is_finite() || grads.params().any(|g| !g.is_finite()) {
            return Ok((losses, f64::NAN, Some(step)));
        }
        losses.push(loss);
        opt.step(&mut model, &grads, cfg.optimizer.lr_at(step, cfg.steps));
        if model.params().any(|v| !v.is_finite()) {
            return Ok((losses, f64::NAN, Some(step)));
        }
    }
    let eval = model.loss(&task.eval_x, &task.eval_y, layers)?;
    if !eval.is_finite() {
        return Ok((losses, eval, Some(cfg.steps)));
    }
    Ok((losses, eval, None))
}

/// Trains a quantized student and a full-precision baseline from the same
/// initialization on the same data stream.
pub fn run_toy_training(seed: u64, cfg: &ToyConfig) -> Result<ToyReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher = Mlp::random(&cfg.arch, &mut rng);
    let eval_x = sample_batch(&mut rng, cfg.eval_samples, cfg.arch[0]);
    let eval_y = teacher.forward(&eval_x, &cfg.layer_configs(TargetSet::empty())?)?;
    let task = Task {
        teacher,
        eval_x,
        eval_y,
    };
    let init = Mlp::random(&cfg.arch, &mut rng);

    let quant_layers = cfg.layer_configs(cfg.targets)?;
    let base_layers = cfg.layer_configs(TargetSet::empty())?;
    let (loss_quant, final_quant, q_div) = train(cfg, &task, &init, &quant_layers, seed)?;
    let (loss_baseline, final_baseline, b_div) = train(cfg, &task, &init, &base_layers, seed)?;
    let status = match (q_div, b_div) {
        (Some(step), _) => ToyStatus::Diverged {
            run: RunKind::Quantized,
            step,
        },
        (None, Some(step)) => ToyStatus::Diverged {
            run: RunKind::Baseline,
            step,
        },
        (None, None) => ToyStatus::Completed,
    };
    Ok(ToyReport {
        seed,
        gap: final_quant - final_baseline,
        loss_quant,
        loss_baseline,
        final_quant,
        final_baseline,
        status,
    })
}
