use crate::error::{AutogradError, Result};
use crate::real::Real;
use crate::tape::{Mode, Op, Tape, Var};
use crate::tensor::Tensor;

/// Running statistics of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Visits the `(offset, len)` runs of channel `ch` in an `[N,C,H,W]` buffer.
fn channel_runs(n: usize, c: usize, hw: usize, ch: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |i| (i * c + ch) * hw)
}

impl<T: Real> Tape<T> {
    /// Per-channel batch normalization followed by `gamma * x_hat + beta`.
    ///
    /// Train mode normalizes with the biased batch variance over `(N,H,W)`
    /// and folds the batch mean and unbiased variance into `state` with
    /// weight `momentum`. Eval mode normalizes with `state` unchanged.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
        momentum: T,
        eps: T,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("batchnorm2d")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(AutogradError::shape(
                    "batchnorm2d",
                    format!("{name} shape {:?}, expected [{c}]", self.value(v).shape()),
                ));
            }
        }
        if state.channels() != c {
            return Err(AutogradError::shape(
                "batchnorm2d",
                format!("state has {} channels, input {c}", state.channels()),
            ));
        }
        let hw = h * w;
        let m = n * hw;
        if mode == Mode::Train && m < 2 {
            return Err(AutogradError::DegenerateBatch(m));
        }

        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let count = T::of(m as f64);

        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = T::zero();
                    for off in channel_runs(n, c, hw, ch) {
                        sum += x[off..off + hw].iter().copied().sum::<T>();
                    }
                    let mean = sum / count;
                    let mut sq = T::zero();
                    for off in channel_runs(n, c, hw, ch) {
                        sq += x[off..off + hw].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                    }
                    let var = sq / count;
                    let unbiased = sq / T::of((m - 1) as f64);
                    let keep = T::one() - momentum;
                    state.running_mean[ch] = keep * state.running_mean[ch] + momentum * mean;
                    state.running_var[ch] = keep * state.running_var[ch] + momentum * unbiased;
                    (mean, var)
                }
                Mode::Eval => (state.running_mean[ch], state.running_var[ch]),
            };
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for off in channel_runs(n, c, hw, ch) {
                for i in off..off + hw {
                    let xh = (x[i] - mean) * is;
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }

        let value = Tensor::from_vec(vec![n, c, h, w], out)?;
        Ok(self.push(
            value,
            &[input, gamma, beta],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        ))
    }
}

pub(crate) fn backward<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    out_grad: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let s = input.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let count = T::of((n * hw) as f64);
    let g = gamma.data();
    let mut dx = vec![T::zero(); input.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];

    for ch in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for off in channel_runs(n, c, hw, ch) {
            for i in off..off + hw {
                sum_g += out_grad[i];
                sum_gx += out_grad[i] * xhat[i];
            }
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let scale = g[ch] * inv_std[ch];
        for off in channel_runs(n, c, hw, ch) {
            for i in off..off + hw {
                dx[i] = if batch_stats {
                    scale * (out_grad[i] - sum_g / count - xhat[i] * sum_gx / count)
                } else {
                    scale * out_grad[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
