use crate::error::{AutogradError, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// Affine map `x W + b` for `x: [N,D]`, `W: [D,U]`, `b: [U]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.value(input).dims2("dense")?;
        let (wd, u) = self.value(weight).dims2("dense")?;
        if wd != d || self.value(bias).shape() != [u] {
            return Err(AutogradError::shape(
                "dense",
                format!(
                    "input [{n},{d}], weight [{wd},{u}], bias {:?}",
                    self.value(bias).shape()
                ),
            ));
        }
        let mut out: Vec<T> = self
            .value(bias)
            .data()
            .iter()
            .copied()
            .cycle()
            .take(n * u)
            .collect();
        T::gemm(
            n,
            d,
            u,
            T::one(),
            self.value(input).data(),
            d,
            1,
            self.value(weight).data(),
            u,
            1,
            T::one(),
            &mut out,
            u,
            1,
        );
        let value = Tensor::from_vec(vec![n, u], out)?;
        Ok(self.push(
            value,
            &[input, weight, bias],
            Op::Dense {
                input,
                weight,
                bias,
            },
        ))
    }
}

pub(crate) fn backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    out_grad: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let u = weight.shape()[1];
    let mut dw = vec![T::zero(); d * u];
    // dW = x^T g
    T::gemm(d, n, u, T::one(), input.data(), 1, d, out_grad, u, 1, T::zero(), &mut dw, u, 1);
    let mut db = vec![T::zero(); u];
    for row in out_grad.chunks_exact(u) {
        db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); n * d];
        // dx = g W^T
        T::gemm(n, u, d, T::one(), out_grad, u, 1, weight.data(), 1, u, T::zero(), &mut dx, d, 1);
        dx
    });
    (dx, dw, db)
}
