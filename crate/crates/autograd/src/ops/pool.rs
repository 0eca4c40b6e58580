use crate::error::{AutogradError, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// 2x2 max pooling with stride 2.
    ///
    /// Ties route the gradient to the first maximum in row-major order.
    pub fn max_pool2d(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("max_pool2d")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(AutogradError::shape(
                "max_pool2d",
                format!("spatial dims must be even, got {h}x{w}"),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let top = base + 2 * oy * w + 2 * ox;
                    let mut best = top;
                    for idx in [top + 1, top + w, top + w + 1] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_vec(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, &[input], Op::MaxPool { input, argmax }))
    }

    /// Mean over the spatial axes: `[N,C,H,W]` to `[N,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("global_avg_pool")?;
        let hw = h * w;
        let scale = T::one() / T::of(hw as f64);
        let out = self
            .value(input)
            .data()
            .chunks_exact(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * scale)
            .collect();
        let value = Tensor::from_vec(vec![n, c], out)?;
        Ok(self.push(value, &[input], Op::GlobalAvgPool { input }))
    }
}

pub(crate) fn gap_backward<T: Real>(input: &Tensor<T>, out_grad: &[T]) -> Vec<T> {
    let s = input.shape();
    let hw = s[2] * s[3];
    let scale = T::one() / T::of(hw as f64);
    out_grad
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, hw))
        .collect()
}
