use crate::error::{AutogradError, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Spatial padding rule for [`Tape::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding; output length `ceil(len / stride)`. Odd total padding
    /// puts the extra row/column after the input.
    Same,
    /// No padding; output length `floor((len - kernel) / stride) + 1`.
    Valid,
}

/// Output length and leading pad for one spatial axis.
pub fn conv_output_len(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return Err(AutogradError::invalid("conv2d", "kernel and stride must be positive"));
    }
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(len);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if len < kernel {
                return Err(AutogradError::shape(
                    "conv2d",
                    format!("kernel {kernel} does not fit input length {len}"),
                ));
            }
            Ok(((len - kernel) / stride + 1, 0))
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for output coordinate `o` and kernel tap `k` on an axis.
    #[inline]
    fn source(&self, o: usize, k: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    /// Unfolds one `[C,H,W]` image into a `[C*kh*kw, out_h*out_w]` matrix.
    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let p = self.out_len();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        match self.source(oy, ki, self.pad_top, self.height) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.width..(iy + 1) * self.width];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, kj, self.pad_left, self.width) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, summing overlaps.
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let p = self.out_len();
        let mut row = 0;
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ki, self.pad_top, self.height) else {
                            continue;
                        };
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, &g) in line.iter().enumerate() {
                            if let Some(ix) = self.source(ox, kj, self.pad_left, self.width) {
                                plane[iy * self.width + ix] += g;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// 2-d cross-correlation of `[N,C,H,W]` input with `[F,C,kH,kW]` weights.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("conv2d")?;
        let (f, wc, kh, kw) = self.value(weight).dims4("conv2d")?;
        if wc != c {
            return Err(AutogradError::shape(
                "conv2d",
                format!("input has {c} channels but weight expects {wc}"),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [f] {
                return Err(AutogradError::shape(
                    "conv2d",
                    format!("bias shape {:?}, expected [{f}]", self.value(b).shape()),
                ));
            }
        }
        let (out_h, pad_top) = conv_output_len(h, kh, stride, padding)?;
        let (out_w, pad_left) = conv_output_len(w, kw, stride, padding)?;
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        };

        let k = geom.patch_len();
        let p = geom.out_len();
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let mut out = vec![T::zero(); n * f * p];
        let mut cols = vec![T::zero(); k * p];
        for (img, dst) in x.chunks_exact(c * h * w).zip(out.chunks_exact_mut(f * p)) {
            geom.im2col(img, &mut cols);
            if let Some(b) = bias {
                for (row, &bv) in dst.chunks_exact_mut(p).zip(self.value(b).data()) {
                    row.fill(bv);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            T::gemm(f, k, p, T::one(), wt, k, 1, &cols, p, 1, beta, dst, p, 1);
        }

        let value = Tensor::from_vec(vec![n, f, out_h, out_w], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            &inputs,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }
}

pub(crate) struct ConvGrads<T> {
    dx: Option<Vec<T>>,
    dw: Vec<T>,
    db: Vec<T>,
}

impl<T> ConvGrads<T> {
    pub(crate) fn into_contributions(
        self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
    ) -> Vec<(Var, Vec<T>)> {
        let mut out = vec![(weight, self.dw)];
        if let Some(b) = bias {
            out.push((b, self.db));
        }
        if let Some(dx) = self.dx {
            out.push((input, dx));
        }
        out
    }
}

pub(crate) fn backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    out_grad: &[T],
    geom: &ConvGeom,
    need_dx: bool,
) -> ConvGrads<T> {
    let f = weight.shape()[0];
    let k = geom.patch_len();
    let p = geom.out_len();
    let image_len = geom.channels * geom.height * geom.width;
    let wt = weight.data();

    let mut dw = vec![T::zero(); f * k];
    let mut db = vec![T::zero(); f];
    let mut dx = need_dx.then(|| vec![T::zero(); input.len()]);
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = vec![T::zero(); k * p];

    for (i, (img, g)) in input
        .data()
        .chunks_exact(image_len)
        .zip(out_grad.chunks_exact(f * p))
        .enumerate()
    {
        for (acc, row) in db.iter_mut().zip(g.chunks_exact(p)) {
            *acc += row.iter().copied().sum::<T>();
        }
        geom.im2col(img, &mut cols);
        // dW += g * cols^T
        T::gemm(f, p, k, T::one(), g, p, 1, &cols, 1, p, T::one(), &mut dw, k, 1);
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T * g
            T::gemm(k, f, p, T::one(), wt, 1, k, g, p, 1, T::zero(), &mut dcols, p, 1);
            geom.col2im(&dcols, &mut dx[i * image_len..(i + 1) * image_len]);
        }
    }
    ConvGrads { dx, dw, db }
}
