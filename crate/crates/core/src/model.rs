//! Residual CNN: convolutional stem, four residual stages, pooled dense head.
//!
//! ```text
//! input 128x128x1
//!   stem    conv3x3/2 (32) -> BN -> ReLU -> maxpool2x2      32x32x32
//!   stage1  2 blocks, 32 filters                             32x32x32
//!   stage2  2 blocks, 64 filters, first block stride 2       16x16x64
//!   stage3  3 blocks, 128 filters, first block stride 2       8x8x128
//!   stage4  3 blocks, 256 filters, first block stride 2       4x4x256
//!   head    GAP -> dense 256 + ReLU -> dropout -> dense 1 + sigmoid
//! ```
//!
//! A block is conv3x3 -> BN -> ReLU -> conv3x3 -> BN, added to the shortcut
//! and passed through ReLU. Blocks that change resolution or width use a
//! 1x1 stride-2 convolution plus BN on the shortcut.

use apnea_autograd::{conv_output_len, BatchNormState, Mode, Padding, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetConfig {
    pub stem_filters: usize,
    pub stage_filters: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    pub head_units: usize,
    pub dropout_rate: f64,
    /// Height, width, channels.
    pub input_shape: [usize; 3],
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            stem_filters: 32,
            stage_filters: vec![32, 64, 128, 256],
            stage_blocks: vec![2, 2, 3, 3],
            head_units: 256,
            dropout_rate: 0.5,
            input_shape: [128, 128, 1],
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ResNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stage_filters.len() != self.stage_blocks.len() {
            return bad(format!(
                "model.stage_filters has {} entries but model.stage_blocks has {}",
                self.stage_filters.len(),
                self.stage_blocks.len()
            ));
        }
        if self.stage_filters.is_empty() {
            return bad("model needs at least one residual stage".into());
        }
        if self.stem_filters == 0
            || self.head_units == 0
            || self.stage_filters.contains(&0)
            || self.stage_blocks.contains(&0)
        {
            return bad("model filter, block and unit counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("model.dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        if self.input_shape.contains(&0) {
            return bad("model.input_shape must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return bad("model.bn_momentum must lie in [0, 1] and model.bn_eps be positive".into());
        }
        let stem = self.input_shape[0].div_ceil(2).max(1);
        let stem_w = self.input_shape[1].div_ceil(2).max(1);
        if stem % 2 != 0 || stem_w % 2 != 0 {
            return bad(format!(
                "input {}x{} gives an odd stem map {stem}x{stem_w}; max pooling needs even sizes",
                self.input_shape[0], self.input_shape[1]
            ));
        }
        Ok(())
    }
}

/// Named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Named batch-normalization running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T> {
    pub name: String,
    pub state: BatchNormState<T>,
}

#[derive(Debug, Clone)]
struct Conv {
    weight: usize,
    bias: usize,
    stride: usize,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv,
    bn1: Norm,
    conv2: Conv,
    bn2: Norm,
    projection: Option<(Conv, Norm)>,
}

#[derive(Debug, Clone)]
struct Layout {
    stem_conv: Conv,
    stem_bn: Norm,
    stages: Vec<Vec<Block>>,
    fc: (usize, usize),
    out: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ResNetModel<T> {
    config: ResNetConfig,
    params: Vec<Parameter<T>>,
    norms: Vec<NormStats<T>>,
    layout: Layout,
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    /// Apnea probabilities, shape `[N, 1]`.
    pub probabilities: Var,
    /// One leaf per model parameter, in registration order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub name: String,
    /// `[H, W, C]` for feature maps, `[D]` for vectors.
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterCount {
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

struct Builder<'a, T> {
    params: Vec<Parameter<T>>,
    norms: Vec<NormStats<T>>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn he_normal(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(normal.sample(self.rng))).collect();
        self.push(name, Tensor::from_vec(shape.to_vec(), data).expect("consistent shape"))
    }

    fn push(&mut self, name: String, tensor: Tensor<T>) -> usize {
        self.params.push(Parameter { name, tensor });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize) -> Conv {
        let weight = self.he_normal(format!("{name}.weight"), &[out_c, in_c, k, k], in_c * k * k);
        let bias = self.push(format!("{name}.bias"), Tensor::zeros(&[out_c]));
        Conv {
            weight,
            bias,
            stride,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = self.push(format!("{name}.gamma"), Tensor::full(&[c], T::one()));
        let beta = self.push(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.norms.push(NormStats {
            name: name.to_string(),
            state: BatchNormState::new(c),
        });
        Norm {
            gamma,
            beta,
            stats: self.norms.len() - 1,
        }
    }

    fn dense(&mut self, name: &str, d: usize, u: usize) -> (usize, usize) {
        let w = self.he_normal(format!("{name}.weight"), &[d, u], d);
        let b = self.push(format!("{name}.bias"), Tensor::zeros(&[u]));
        (w, b)
    }
}

impl<T: Real> ResNetModel<T> {
    /// Builds the network with He-normal kernels, zero biases, unit BN scale.
    pub fn build(config: &ResNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: Vec::new(),
            norms: Vec::new(),
            rng: &mut rng,
        };
        let in_c = config.input_shape[2];
        let stem_conv = b.conv("stem.conv", in_c, config.stem_filters, 3, 2);
        let stem_bn = b.norm("stem.bn", config.stem_filters);

        let mut channels = config.stem_filters;
        let mut stages = Vec::new();
        for (s, (&filters, &blocks)) in config
            .stage_filters
            .iter()
            .zip(&config.stage_blocks)
            .enumerate()
        {
            let mut stage = Vec::new();
            for blk in 0..blocks {
                let name = format!("stage{}.block{}", s + 1, blk + 1);
                let stride = if blk == 0 && s > 0 { 2 } else { 1 };
                let conv1 = b.conv(&format!("{name}.conv1"), channels, filters, 3, stride);
                let bn1 = b.norm(&format!("{name}.bn1"), filters);
                let conv2 = b.conv(&format!("{name}.conv2"), filters, filters, 3, 1);
                let bn2 = b.norm(&format!("{name}.bn2"), filters);
                let projection = (stride != 1 || channels != filters).then(|| {
                    (
                        b.conv(&format!("{name}.shortcut.conv"), channels, filters, 1, stride),
                        b.norm(&format!("{name}.shortcut.bn"), filters),
                    )
                });
                stage.push(Block {
                    conv1,
                    bn1,
                    conv2,
                    bn2,
                    projection,
                });
                channels = filters;
            }
            stages.push(stage);
        }
        let fc = b.dense("head.fc", channels, config.head_units);
        let out = b.dense("head.out", config.head_units, 1);
        let (params, norms) = (b.params, b.norms);

        Ok(ResNetModel {
            config: config.clone(),
            params,
            norms,
            layout: Layout {
                stem_conv,
                stem_bn,
                stages,
                fc,
                out,
            },
        })
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn norm_stats(&self) -> &[NormStats<T>] {
        &self.norms
    }

    pub fn norm_stats_mut(&mut self) -> &mut [NormStats<T>] {
        &mut self.norms
    }

    /// Records a forward pass on `tape`.
    ///
    /// Train mode uses batch statistics (updating the running ones) and
    /// dropout; eval mode uses running statistics and no dropout.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        input: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardPass> {
        let [h, w, c] = self.config.input_shape;
        let shape = tape.value(input).shape();
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(Error::Data(format!(
                "model expects input [N,{c},{h},{w}], got {shape:?}"
            )));
        }
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.param(p.tensor.clone()))
            .collect();
        let momentum = T::of(self.config.bn_momentum);
        let eps = T::of(self.config.bn_eps);
        let norms = &mut self.norms;

        let conv = |tape: &mut Tape<T>, x: Var, c: &Conv| {
            tape.conv2d(x, vars[c.weight], Some(vars[c.bias]), c.stride, Padding::Same)
        };
        let mut bn = |tape: &mut Tape<T>, x: Var, n: &Norm| {
            tape.batchnorm2d(
                x,
                vars[n.gamma],
                vars[n.beta],
                &mut norms[n.stats].state,
                mode,
                momentum,
                eps,
            )
        };

        let layout = &self.layout;
        let mut x = conv(tape, input, &layout.stem_conv)?;
        x = bn(tape, x, &layout.stem_bn)?;
        x = tape.relu(x);
        x = tape.max_pool2d(x)?;
        for block in layout.stages.iter().flatten() {
            let mut y = conv(tape, x, &block.conv1)?;
            y = bn(tape, y, &block.bn1)?;
            y = tape.relu(y);
            y = conv(tape, y, &block.conv2)?;
            y = bn(tape, y, &block.bn2)?;
            let shortcut = match &block.projection {
                Some((pc, pn)) => {
                    let s = conv(tape, x, pc)?;
                    bn(tape, s, pn)?
                }
                None => x,
            };
            let sum = tape.add(y, shortcut)?;
            x = tape.relu(sum);
        }
        let pooled = tape.global_avg_pool(x)?;
        let mut z = tape.dense(pooled, vars[layout.fc.0], vars[layout.fc.1])?;
        z = tape.relu(z);
        z = tape.dropout(z, self.config.dropout_rate, mode, rng)?;
        let logits = tape.dense(z, vars[layout.out.0], vars[layout.out.1])?;
        let probabilities = tape.sigmoid(logits);
        Ok(ForwardPass {
            probabilities,
            params: vars,
        })
    }

    /// Eval-mode probabilities for a `[N,C,H,W]` batch.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<T>> {
        // Eval mode leaves running statistics untouched; the clone only keeps
        // `predict` usable through a shared reference.
        let mut model = self.clone();
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = model.forward(&mut tape, x, Mode::Eval, &mut rng)?;
        Ok(tape.value(pass.probabilities).data().to_vec())
    }

    /// Output shapes by symbolic propagation, no data involved.
    pub fn shape_trace(&self) -> Vec<TraceEntry> {
        let cfg = &self.config;
        let same = |len: usize, stride: usize| {
            conv_output_len(len, 3, stride, Padding::Same)
                .expect("validated config")
                .0
        };
        let mut out = Vec::new();
        let (mut h, mut w) = (same(cfg.input_shape[0], 2), same(cfg.input_shape[1], 2));
        out.push(TraceEntry {
            name: "stem.conv".into(),
            shape: vec![h, w, cfg.stem_filters],
        });
        h /= 2;
        w /= 2;
        out.push(TraceEntry {
            name: "stem.pool".into(),
            shape: vec![h, w, cfg.stem_filters],
        });
        for (s, (&filters, &blocks)) in cfg.stage_filters.iter().zip(&cfg.stage_blocks).enumerate() {
            for blk in 0..blocks {
                if blk == 0 && s > 0 {
                    h = same(h, 2);
                    w = same(w, 2);
                }
                out.push(TraceEntry {
                    name: format!("stage{}.block{}", s + 1, blk + 1),
                    shape: vec![h, w, filters],
                });
            }
            out.push(TraceEntry {
                name: format!("stage{}", s + 1),
                shape: vec![h, w, filters],
            });
        }
        let last = *cfg.stage_filters.last().expect("validated config");
        out.push(TraceEntry {
            name: "head.gap".into(),
            shape: vec![last],
        });
        out.push(TraceEntry {
            name: "head.fc".into(),
            shape: vec![cfg.head_units],
        });
        out.push(TraceEntry {
            name: "head.dropout".into(),
            shape: vec![cfg.head_units],
        });
        out.push(TraceEntry {
            name: "head.out".into(),
            shape: vec![1],
        });
        out
    }

    /// Parameter element counts grouped by layer (name minus its last segment).
    pub fn count_parameters(&self) -> ParameterCount {
        let mut per_layer: Vec<(String, usize)> = Vec::new();
        for p in &self.params {
            let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l);
            match per_layer.last_mut() {
                Some((name, count)) if name == layer => *count += p.tensor.len(),
                _ => per_layer.push((layer.to_string(), p.tensor.len())),
            }
        }
        let total = per_layer.iter().map(|(_, c)| c).sum();
        ParameterCount { per_layer, total }
    }

    /// Copy with every parameter and statistic converted to another precision.
    pub fn cast<U: Real>(&self) -> ResNetModel<U> {
        ResNetModel {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| NormStats {
                    name: n.name.clone(),
                    state: BatchNormState {
                        running_mean: n.state.running_mean.iter().map(|&v| U::of(v.to_f64().unwrap_or(f64::NAN))).collect(),
                        running_var: n.state.running_var.iter().map(|&v| U::of(v.to_f64().unwrap_or(f64::NAN))).collect(),
                    },
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }
}
