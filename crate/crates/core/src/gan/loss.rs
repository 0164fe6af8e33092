//! Adversarial losses on discriminator logits, with their logit gradients.

use crate::error::{Error, Result};
use crate::nn::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Hinge,
    /// Binary cross-entropy for D, non-saturating `-log D(G(z))` for G.
    Minimax,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hinge" => Some(LossKind::Hinge),
            "minimax" => Some(LossKind::Minimax),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Hinge => "hinge",
            LossKind::Minimax => "minimax",
        }
    }

    /// Discriminator loss and its gradients with respect to the real and fake logits.
    pub fn discriminator(self, real: &[f64], fake: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        check(real, fake)?;
        let nr = real.len() as f64;
        let nf = fake.len() as f64;
        Ok(match self {
            LossKind::Hinge => {
                let loss = real.iter().map(|r| (1.0 - r).max(0.0)).sum::<f64>() / nr
                    + fake.iter().map(|f| (1.0 + f).max(0.0)).sum::<f64>() / nf;
                let dr = real.iter().map(|&r| if r < 1.0 { -1.0 / nr } else { 0.0 }).collect();
                let df = fake.iter().map(|&f| if f > -1.0 { 1.0 / nf } else { 0.0 }).collect();
                (loss, dr, df)
            }
            LossKind::Minimax => {
                // -log sigmoid(r) = softplus(-r), -log(1 - sigmoid(f)) = softplus(f)
                let loss = real.iter().map(|&r| softplus(-r)).sum::<f64>() / nr
                    + fake.iter().map(|&f| softplus(f)).sum::<f64>() / nf;
                let dr = real.iter().map(|&r| -sigmoid(-r) / nr).collect();
                let df = fake.iter().map(|&f| sigmoid(f) / nf).collect();
                (loss, dr, df)
            }
        })
    }

    /// Generator loss and its gradient with respect to the fake logits.
    pub fn generator(self, fake: &[f64]) -> Result<(f64, Vec<f64>)> {
        check(&[0.0], fake)?;
        let n = fake.len() as f64;
        Ok(match self {
            LossKind::Hinge => (-fake.iter().sum::<f64>() / n, vec![-1.0 / n; fake.len()]),
            LossKind::Minimax => (
                fake.iter().map(|&f| softplus(-f)).sum::<f64>() / n,
                fake.iter().map(|&f| -sigmoid(-f) / n).collect(),
            ),
        })
    }
}

fn check(real: &[f64], fake: &[f64]) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Parameter("loss needs at least one real and one fake logit".into()));
    }
    if real.iter().chain(fake).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite discriminator logit".into()));
    }
    Ok(())
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `(loss_D, loss_G)` for the cross-entropy game.
pub fn minimax_loss(real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    let (d, _, _) = LossKind::Minimax.discriminator(real, fake)?;
    let (g, _) = LossKind::Minimax.generator(fake)?;
    Ok((d, g))
}

/// `(loss_D, loss_G)` for the hinge game.
pub fn hinge_loss(real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    let (d, _, _) = LossKind::Hinge.discriminator(real, fake)?;
    let (g, _) = LossKind::Hinge.generator(fake)?;
    Ok((d, g))
}
