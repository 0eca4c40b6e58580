use apnea_autograd::{Real, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` in every loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    WeightedBce,
    Focal,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "weighted_bce" => Ok(LossKind::WeightedBce),
            "focal" => Ok(LossKind::Focal),
            _ => Err(Error::Config(format!(
                "unknown loss {s:?} (expected bce, weighted_bce or focal)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::WeightedBce => "weighted_bce",
            LossKind::Focal => "focal",
        })
    }
}

/// Loss selection. `w_pos`/`w_neg` scale apnea and non-apnea terms for the
/// weighted and focal kinds; plain BCE ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub w_pos: f64,
    pub w_neg: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::bce()
    }
}

impl LossSpec {
    pub fn bce() -> Self {
        LossSpec {
            kind: LossKind::Bce,
            w_pos: 1.0,
            w_neg: 1.0,
            alpha: 1.0,
            gamma: 0.0,
        }
    }

    pub fn weighted_bce(w_pos: f64, w_neg: f64) -> Self {
        LossSpec {
            kind: LossKind::WeightedBce,
            w_pos,
            w_neg,
            ..LossSpec::bce()
        }
    }

    pub fn focal(alpha: f64, gamma: f64) -> Self {
        LossSpec {
            kind: LossKind::Focal,
            alpha,
            gamma,
            ..LossSpec::bce()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_pos > 0.0 && self.w_neg > 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be positive, got ({}, {})",
                self.w_pos, self.w_neg
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("focal alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma {} must be non-negative", self.gamma)));
        }
        Ok(())
    }

    /// The loss actually optimized once class weights are in play: BCE turns
    /// into weighted BCE, the other kinds take the weights as-is.
    pub fn with_class_weights(self, (w_pos, w_neg): (f64, f64)) -> Self {
        let kind = match self.kind {
            LossKind::Bce => LossKind::WeightedBce,
            k => k,
        };
        LossSpec {
            kind,
            w_pos,
            w_neg,
            ..self
        }
    }

    /// Mean loss and its gradient with respect to each probability.
    pub fn evaluate(&self, p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.validate()?;
        if p.len() != y.len() {
            return Err(Error::Data(format!("{} probabilities but {} labels", p.len(), y.len())));
        }
        if p.is_empty() {
            return Err(Error::Data("loss over an empty batch".into()));
        }
        if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("label {v} is not 0 or 1")));
        }
        let n = p.len() as f64;
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(p.len());
        for (&pi, &yi) in p.iter().zip(y) {
            let pc = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let inside = pc == pi;
            let (w_pos, w_neg) = match self.kind {
                LossKind::Bce => (1.0, 1.0),
                _ => (self.w_pos, self.w_neg),
            };
            let (l, dl) = match self.kind {
                LossKind::Bce | LossKind::WeightedBce => (
                    -(w_pos * yi * pc.ln() + w_neg * (1.0 - yi) * (1.0 - pc).ln()),
                    -w_pos * yi / pc + w_neg * (1.0 - yi) / (1.0 - pc),
                ),
                LossKind::Focal => {
                    let pt = yi * pc + (1.0 - yi) * (1.0 - pc);
                    let w = if yi == 1.0 { w_pos } else { w_neg };
                    let (a, g) = (self.alpha, self.gamma);
                    let q = 1.0 - pt;
                    let l = -w * a * q.powf(g) * pt.ln();
                    let dq = if g == 0.0 { 0.0 } else { g * q.powf(g - 1.0) };
                    let dpt = w * a * (dq * pt.ln() - q.powf(g) / pt);
                    (l, dpt * (2.0 * yi - 1.0))
                }
            };
            total += l;
            grad.push(if inside { dl / n } else { 0.0 });
        }
        Ok((total / n, grad))
    }
}

fn labels_f64(y: &[bool]) -> Vec<f64> {
    y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    Ok(LossSpec::bce().evaluate(p, y)?.0)
}

pub fn weighted_bce_loss(p: &[f64], y: &[f64], w_pos: f64, w_neg: f64) -> Result<f64> {
    Ok(LossSpec::weighted_bce(w_pos, w_neg).evaluate(p, y)?.0)
}

pub fn focal_loss(p: &[f64], y: &[f64], alpha: f64, gamma: f64) -> Result<f64> {
    Ok(LossSpec::focal(alpha, gamma).evaluate(p, y)?.0)
}

/// Records `spec` applied to the probabilities held by `probs` as a scalar on `tape`.
pub fn loss_on_tape<T: Real>(tape: &mut Tape<T>, probs: Var, labels: &[bool], spec: &LossSpec) -> Result<Var> {
    let p: Vec<f64> = tape.value(probs).data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    let (value, grad) = spec.evaluate(&p, &labels_f64(labels))?;
    let grad = grad.into_iter().map(T::of).collect();
    Ok(tape.scalar_loss(probs, T::of(value), grad)?)
}
