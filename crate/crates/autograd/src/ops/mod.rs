mod conv;
mod dense;
mod norm;
mod pointwise;
mod pool;

pub use conv::{conv_output_len, Padding};
pub(crate) use conv::ConvGeom;
pub use norm::BatchNormState;

use crate::real::Real;
use crate::tape::{Node, Op, Var};

/// Gradient contributions of one recorded node to its inputs.
pub(crate) fn backward<T: Real>(
    nodes: &[Node<T>],
    node: &Node<T>,
    out_grad: &[T],
) -> Vec<(Var, Vec<T>)> {
    let needs = |v: Var| nodes[v.0].requires_grad;
    let value = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
        } => conv::backward(
            value(*input),
            value(*weight),
            out_grad,
            geom,
            needs(*input),
        )
        .into_contributions(*input, *weight, *bias),
        Op::BatchNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => {
            let (dx, dgamma, dbeta) = norm::backward(
                value(*input),
                value(*gamma),
                xhat,
                inv_std,
                *batch_stats,
                out_grad,
            );
            vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
        }
        Op::Relu { input } => vec![(*input, pointwise::relu_backward(value(*input), out_grad))],
        Op::MaxPool { input, argmax } => {
            let mut dx = vec![T::zero(); value(*input).len()];
            for (&src, &g) in argmax.iter().zip(out_grad) {
                dx[src] += g;
            }
            vec![(*input, dx)]
        }
        Op::GlobalAvgPool { input } => vec![(*input, pool::gap_backward(value(*input), out_grad))],
        Op::Dense {
            input,
            weight,
            bias,
        } => {
            let (dx, dw, db) =
                dense::backward(value(*input), value(*weight), out_grad, needs(*input));
            let mut out = vec![(*weight, dw), (*bias, db)];
            if let Some(dx) = dx {
                out.push((*input, dx));
            }
            out
        }
        Op::Dropout { input, mask } => vec![(
            *input,
            out_grad.iter().zip(mask).map(|(&g, &m)| g * m).collect(),
        )],
        Op::Sigmoid { input } => {
            let s = node.value.data();
            vec![(
                *input,
                out_grad
                    .iter()
                    .zip(s)
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect(),
            )]
        }
        Op::Add { a, b } => vec![(*a, out_grad.to_vec()), (*b, out_grad.to_vec())],
        Op::Mul { a, b } => {
            let (av, bv) = (value(*a).data(), value(*b).data());
            vec![
                (*a, out_grad.iter().zip(bv).map(|(&g, &y)| g * y).collect()),
                (*b, out_grad.iter().zip(av).map(|(&g, &x)| g * x).collect()),
            ]
        }
        Op::Sum { input } => vec![(*input, vec![out_grad[0]; value(*input).len()])],
        Op::ScalarLoss { input, local_grad } => vec![(
            *input,
            local_grad.iter().map(|&d| d * out_grad[0]).collect(),
        )],
    }
}
