use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

const ULP_SEARCH: u32 = 32;

fn step_ulps(x: f64, k: i64) -> f64 {
    f64::from_bits((x.to_bits() as i64 + k) as u64)
}

/// Offsets 0, +1, -1, +2, -2, ... up to `max`.
fn around(max: u32) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=i64::from(max)).flat_map(|k| [k, -k]))
}

/// A double `w` close to `target / n` with `w * n == target` exactly, if any.
fn exact_factor(target: f64, n: f64) -> Option<f64> {
    let w = target / n;
    around(2).map(|k| step_ulps(w, k)).find(|&c| c * n == target)
}

/// Inverse-frequency weights `(n_pos + n_neg) / (2 n_c)`.
///
/// The returned doubles lie within a few ulps of the formula and are chosen
/// so that `w_pos * n_pos == w_neg * n_neg` holds in f64 arithmetic.
pub fn compute_class_weights(n_pos: usize, n_neg: usize) -> Result<(f64, f64)> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "class weights need both classes, got {n_pos} apnea and {n_neg} non-apnea"
        )));
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let half = (p + n) / 2.0;
    for k in around(ULP_SEARCH) {
        let target = step_ulps(half, k);
        if let (Some(wp), Some(wn)) = (exact_factor(target, p), exact_factor(target, n)) {
            return Ok((wp, wn));
        }
    }
    Ok((half / p, half / n))
}

/// Every index once plus minority duplicates drawn uniformly with replacement
/// until both classes are equally frequent, in shuffled order.
pub fn oversample<R: Rng + ?Sized>(labels: &[bool], rng: &mut R) -> Result<Vec<usize>> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data("oversampling needs both classes".into()));
    }
    let (minority, deficit) = if pos.len() < neg.len() {
        (&pos, neg.len() - pos.len())
    } else {
        (&neg, pos.len() - neg.len())
    };
    let mut out: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..deficit {
        out.push(minority[rng.gen_range(0..minority.len())]);
    }
    out.shuffle(rng);
    Ok(out)
}
