use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Probabilities are clamped to `[FOCAL_CLAMP, 1 − FOCAL_CLAMP]` before the log.
pub const FOCAL_CLAMP: f64 = 1e-7;

/// Mean over valid rows of `−α_t (1 − p_t)^γ ln p_t`, where `p_t` is the
/// probability of the true class and `α_t` is `alpha` for positives and
/// `1 − alpha` for negatives. `alpha = None` disables class balancing.
pub fn focal_loss(
    tape: &mut Tape,
    probs: Var,
    labels: &[usize],
    valid: &[bool],
    alpha: Option<f64>,
    gamma: f64,
) -> Result<Var> {
    if valid.len() != labels.len() {
        return Err(Error::Shape(format!("{} validity flags for {} labels", valid.len(), labels.len())));
    }
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::Invalid("focal loss over a batch with no valid timesteps".into()));
    }
    let weights: Vec<f64> = labels
        .iter()
        .zip(valid)
        .map(|(&l, &v)| {
            if !v {
                return 0.0;
            }
            let a = match alpha {
                Some(a) if l == 1 => a,
                Some(a) => 1.0 - a,
                None => 1.0,
            };
            a / n as f64
        })
        .collect();
    tape.focal_loss(probs, labels, &weights, gamma, FOCAL_CLAMP)
}

/// Mean squared error over masked rows and both offset components.
pub fn regression_loss(tape: &mut Tape, offsets: Var, targets: &Tensor, mask: &[bool]) -> Result<Var> {
    tape.masked_mse(offsets, targets, mask)
}

/// `cls + weight·reg` on the tape.
pub fn total_loss(tape: &mut Tape, cls: Var, reg: Var, weight: f64) -> Result<Var> {
    let scaled = tape.scale(reg, weight);
    tape.add(cls, scaled)
}

/// `cls + weight·reg`, rejecting non-finite inputs.
pub fn combine_losses(cls: f64, reg: f64, weight: f64) -> Result<f64> {
    if !(cls.is_finite() && reg.is_finite()) {
        return Err(Error::NonFinite(format!("loss components cls={cls} reg={reg}")));
    }
    Ok(cls + weight * reg)
}
