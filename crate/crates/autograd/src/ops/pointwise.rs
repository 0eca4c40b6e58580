use rand::Rng;

use crate::error::{AutogradError, Result};
use crate::real::Real;
use crate::tape::{Mode, Op, Tape, Var};
use crate::tensor::Tensor;

#[inline]
pub(crate) fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn relu_backward<T: Real>(input: &Tensor<T>, out_grad: &[T]) -> Vec<T> {
    input
        .data()
        .iter()
        .zip(out_grad)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AutogradError::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    /// `max(0, x)`; the subgradient at zero is zero.
    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(value, &[input], Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(stable_sigmoid);
        self.push(value, &[input], Op::Sigmoid { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, &[a, b], Op::Add { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, &[a, b], Op::Mul { a, b }))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(total), &[input], Op::Sum { input })
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Eval mode, and `rate == 0`, return `input` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutogradError::invalid(
                "dropout",
                format!("rate must lie in [0, 1), got {rate}"),
            ));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(input).len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = self
            .value(input)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let value = Tensor::from_vec(self.value(input).shape().to_vec(), data)?;
        Ok(self.push(value, &[input], Op::Dropout { input, mask }))
    }

    /// Records a scalar computed outside the tape from `input`, together
    /// with its gradient with respect to every element of `input`.
    pub fn scalar_loss(&mut self, input: Var, value: T, local_grad: Vec<T>) -> Result<Var> {
        if local_grad.len() != self.value(input).len() {
            return Err(AutogradError::shape(
                "scalar_loss",
                format!(
                    "gradient has {} entries for {} inputs",
                    local_grad.len(),
                    self.value(input).len()
                ),
            ));
        }
        Ok(self.push(
            Tensor::scalar(value),
            &[input],
            Op::ScalarLoss { input, local_grad },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(data: Vec<f64>) -> Tensor<f64> {
        let n = data.len();
        Tensor::from_vec(vec![n], data).unwrap()
    }

    #[test]
    fn relu_definition_and_dead_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(v(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.param(v(vec![-3.0, -0.5]));
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn sigmoid_symmetry_and_stability() {
        assert_eq!(stable_sigmoid(0.0f64), 0.5);
        for i in -200..=200 {
            let x = i as f64 * 0.37;
            let a = stable_sigmoid(x);
            let b = stable_sigmoid(-x);
            assert!((b - (1.0 - a)).abs() < 1e-12);
        }
        for x in [-50.0f64, 50.0, -800.0, 800.0] {
            let s = stable_sigmoid(x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
        let s = stable_sigmoid(-50.0f32);
        assert!(s.is_finite() && s >= 0.0);
    }

    #[test]
    fn add_zero_is_identity_and_shape_checked() {
        let mut tape = Tape::new();
        let a = tape.param(v(vec![1.0, -2.0]));
        let z = tape.constant(v(vec![0.0, 0.0]));
        let y = tape.add(a, z).unwrap();
        assert_eq!(tape.value(y), tape.value(a));
        let bad = tape.constant(v(vec![0.0]));
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.param(v(vec![1.0, 2.0, 3.0]));
        for mode in [Mode::Train, Mode::Eval] {
            let y = tape.dropout(x, 0.0, mode, &mut rng).unwrap();
            assert_eq!(tape.value(y), tape.value(x));
        }
        let y = tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[100_000], 1.0));
        let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let vals = tape.value(y).data();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(vals.iter().all(|&x| x == 0.0 || x == 2.0));
    }
}
