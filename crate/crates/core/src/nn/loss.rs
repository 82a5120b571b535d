//! Temperature softmax, cross-entropy and the combined distillation loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the soft-target term is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdScaling {
    /// Multiply the KL term by τ² so its gradient magnitude does not shrink with τ.
    #[default]
    TauSquared,
    /// `(1−α)·CE + α·KL` with no extra factor.
    Literal,
}

impl KdScaling {
    fn factor(self, tau: f64) -> f64 {
        match self {
            KdScaling::TauSquared => tau * tau,
            KdScaling::Literal => 1.0,
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("temperature must be finite and > 0, got {tau}")))
    }
}

/// `exp(z_i/τ) / Σ_j exp(z_j/τ)`, shifted by the max logit for stability.
pub fn softmax_temperature(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if logits.is_empty() {
        return Err(Error::input("softmax of an empty vector"));
    }
    Ok(softmax(logits, tau))
}

/// Natural log of [`softmax_temperature`], computed without forming the probabilities.
pub fn log_softmax_temperature(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if logits.is_empty() {
        return Err(Error::input("softmax of an empty vector"));
    }
    Ok(log_softmax(logits, tau))
}

pub(crate) fn softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| ((z - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub(crate) fn log_softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&z| (z - max) / tau).collect();
    let lse = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|v| v - lse).collect()
}

/// `−log softmax(z)[label]` and its gradient `softmax(z) − onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let log_p = log_softmax(logits, 1.0);
    let mut grad = softmax(logits, 1.0);
    grad[label] -= 1.0;
    Ok((-log_p[label], grad))
}

/// Combined loss with the default τ² scaling; see [`kd_loss_with`].
pub fn kd_loss(
    student_logits: &[f64],
    teacher_logits: &[f64],
    label: usize,
    alpha: f64,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    kd_loss_with(student_logits, teacher_logits, label, alpha, tau, KdScaling::default())
}

/// `(1−α)·CE(label, softmax(z_s)) + α·s·KL(softmax(z_t/τ) ‖ softmax(z_s/τ))`
/// where `s` is τ² or 1 depending on `scaling`. Returns the loss and its
/// gradient with respect to the student logits.
///
/// At `α = 0` the teacher term is skipped entirely and at `α = 1` the label
/// term is, so the unused input cannot leak into the result.
pub fn kd_loss_with(
    student_logits: &[f64],
    teacher_logits: &[f64],
    label: usize,
    alpha: f64,
    tau: f64,
    scaling: KdScaling,
) -> Result<(f64, Vec<f64>)> {
    check_tau(tau)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let c = student_logits.len();
    if teacher_logits.len() != c {
        return Err(Error::input(format!(
            "student has {c} logits, teacher has {}",
            teacher_logits.len()
        )));
    }
    if label >= c {
        return Err(Error::input(format!("label {label} out of range for {c} classes")));
    }

    let mut loss = 0.0;
    let mut grad = vec![0.0; c];
    if alpha < 1.0 {
        let (ce, g) = cross_entropy(student_logits, label)?;
        loss += (1.0 - alpha) * ce;
        grad.iter_mut().zip(&g).for_each(|(o, g)| *o += (1.0 - alpha) * g);
    }
    if alpha > 0.0 {
        let s = scaling.factor(tau);
        let log_q_t = log_softmax(teacher_logits, tau);
        let log_q_s = log_softmax(student_logits, tau);
        let mut kl = 0.0;
        for (lt, ls) in log_q_t.iter().zip(&log_q_s) {
            let qt = lt.exp();
            if qt > 0.0 {
                kl += qt * (lt - ls);
            }
        }
        loss += alpha * s * kl;
        // d/dz_s of s·KL = (s/τ)(q_s − q_t)
        let coef = alpha * s / tau;
        for ((o, lt), ls) in grad.iter_mut().zip(&log_q_t).zip(&log_q_s) {
            *o += coef * (ls.exp() - lt.exp());
        }
    }
    Ok((loss, grad))
}
