use super::real::Real;
use crate::error::{Error, Result};

/// Mean loss over the batch and its gradient with respect to each logit.
#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on logits, `max(z, 0) − z·y + ln(1 + e^{−|z|})`,
/// averaged over the batch. The gradient is `(σ(z) − y) / n`.
pub fn bce_loss<T: Real>(logits: &[T], labels: &[u8]) -> Result<BceOutput> {
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Config(format!("label {bad} is not 0 or 1")));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let z = z.to_f64();
        if !z.is_finite() {
            return Err(Error::NonFinite("logit".into()));
        }
        let y = y as f64;
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - y) / n);
    }
    Ok(BceOutput {
        loss: total / n,
        grad,
    })
}
