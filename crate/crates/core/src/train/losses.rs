//! Adversarial, pixel-wise and feature-matching losses.
//!
//! Each loss exists twice: a plain evaluation on numbers and a tape version
//! that records the same arithmetic for backpropagation.

use crate::autodiff::{Real, Tape, Tensor, TensorError, Var};

use super::TrainError;

/// Scores are clamped to `[EPS, 1 − EPS]` before taking logarithms.
pub const SCORE_EPS: f64 = 1e-7;

/// Generator side of the adversarial objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GenLossForm {
    /// Minimises `−log D(x̂)`.
    #[default]
    NonSaturating,
    /// Minimises `log(1 − D(x̂))`, the literal minimax objective.
    Minimax,
}

impl GenLossForm {
    pub fn name(self) -> &'static str {
        match self {
            GenLossForm::NonSaturating => "non-saturating",
            GenLossForm::Minimax => "minimax",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "non-saturating" => Some(GenLossForm::NonSaturating),
            "minimax" => Some(GenLossForm::Minimax),
            _ => None,
        }
    }
}

fn checked_score(s: f64) -> Result<f64, TrainError> {
    if (0.0..=1.0).contains(&s) {
        Ok(s.clamp(SCORE_EPS, 1.0 - SCORE_EPS))
    } else {
        Err(TrainError::ScoreOutOfRange(s))
    }
}

/// `−[log D(x) + log(1 − D(x̂))]`, minimised by the discriminator.
pub fn adv_loss_d(d_real: f64, d_fake: f64) -> Result<f64, TrainError> {
    let r = checked_score(d_real)?;
    let f = checked_score(d_fake)?;
    Ok(-(r.ln() + (1.0 - f).ln()))
}

pub fn adv_loss_g(d_fake: f64, form: GenLossForm) -> Result<f64, TrainError> {
    let f = checked_score(d_fake)?;
    Ok(match form {
        GenLossForm::NonSaturating => -f.ln(),
        GenLossForm::Minimax => (1.0 - f).ln(),
    })
}

/// Mean absolute elementwise difference.
pub fn l1_loss<T: Real>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<f64, TrainError> {
    if x.shape() != x_hat.shape() {
        return Err(TrainError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    if x.numel() == 0 {
        return Err(TrainError::ShapeMismatch("empty tensors".into()));
    }
    let s: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(s / x.numel() as f64)
}

/// `Σₙ λₙ · MAE(real[n], fake[n])`.
pub fn perceptual_loss<T: Real>(real: &[Tensor<T>], fake: &[Tensor<T>], lambda: &[f64]) -> Result<f64, TrainError> {
    if real.len() != fake.len() || real.len() != lambda.len() {
        return Err(TrainError::LengthMismatch {
            real: real.len(),
            fake: fake.len(),
            lambda: lambda.len(),
        });
    }
    real.iter()
        .zip(fake)
        .zip(lambda)
        .map(|((r, f), &l)| Ok(l * l1_loss(r, f)?))
        .sum()
}

fn log_clamped<T: Real>(tape: &mut Tape<T>, p: Var) -> Var {
    let eps = T::from_f64(SCORE_EPS);
    let c = tape.clamp(p, eps, T::one() - eps);
    tape.log(c)
}

fn one_minus<T: Real>(tape: &mut Tape<T>, p: Var) -> Var {
    let neg = tape.scale(p, -T::one());
    tape.add_scalar(neg, T::one())
}

pub fn tape_adv_loss_d<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var, TensorError> {
    let a = log_clamped(tape, d_real);
    let nf = one_minus(tape, d_fake);
    let b = log_clamped(tape, nf);
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, -T::one()))
}

pub fn tape_adv_loss_g<T: Real>(tape: &mut Tape<T>, d_fake: Var, form: GenLossForm) -> Var {
    match form {
        GenLossForm::NonSaturating => {
            let l = log_clamped(tape, d_fake);
            tape.scale(l, -T::one())
        }
        GenLossForm::Minimax => {
            let nf = one_minus(tape, d_fake);
            log_clamped(tape, nf)
        }
    }
}

pub fn tape_l1_loss<T: Real>(tape: &mut Tape<T>, x: Var, x_hat: Var) -> Result<Var, TensorError> {
    let d = tape.sub(x, x_hat)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

pub fn tape_perceptual_loss<T: Real>(
    tape: &mut Tape<T>,
    real: &[Var],
    fake: &[Var],
    lambda: &[f64],
) -> Result<Var, TrainError> {
    if real.len() != fake.len() || real.len() != lambda.len() || real.is_empty() {
        return Err(TrainError::LengthMismatch {
            real: real.len(),
            fake: fake.len(),
            lambda: lambda.len(),
        });
    }
    let mut total: Option<Var> = None;
    for ((&r, &f), &l) in real.iter().zip(fake).zip(lambda) {
        let mae = tape_l1_loss(tape, r, f)?;
        let term = tape.scale(mae, T::from_f64(l));
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn discriminator_loss_values() {
        assert!((adv_loss_d(0.5, 0.5).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-9);
        assert!((adv_loss_d(0.8, 0.3).unwrap() - 0.579_818_495_252_942).abs() < 1e-12);
        assert!(adv_loss_d(1.0, 0.0).unwrap() < 1e-6);
        assert!(matches!(adv_loss_d(1.5, 0.0), Err(TrainError::ScoreOutOfRange(_))));
        assert!(matches!(adv_loss_d(0.5, f64::NAN), Err(TrainError::ScoreOutOfRange(_))));
    }

    #[test]
    fn generator_loss_values() {
        let ns = GenLossForm::NonSaturating;
        assert!((adv_loss_g(0.5, ns).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((adv_loss_g(0.25, ns).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(adv_loss_g(1.0, ns).unwrap() < 1e-6);
        assert!((adv_loss_g(0.5, GenLossForm::Minimax).unwrap() + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn l1_values() {
        assert_eq!(l1_loss(&t(&[0.3, -0.2]), &t(&[0.3, -0.2])).unwrap(), 0.0);
        assert_eq!(l1_loss(&t(&[1.0; 5]), &t(&[0.0; 5])).unwrap(), 1.0);
        assert_eq!(l1_loss(&t(&[1.0, -1.0]), &t(&[0.0, 0.0])).unwrap(), 1.0);
        assert!(matches!(l1_loss(&t(&[1.0]), &t(&[1.0, 2.0])), Err(TrainError::ShapeMismatch(_))));
    }

    #[test]
    fn perceptual_values() {
        let a = vec![t(&[0.1, 0.2]), t(&[1.0, 2.0, 3.0])];
        assert_eq!(perceptual_loss(&a, &a, &[0.5, 0.5]).unwrap(), 0.0);
        let shifted = vec![t(&[0.6, 0.7])];
        assert!((perceptual_loss(&a[..1], &shifted, &[1.0]).unwrap() - 0.5).abs() < 1e-12);
        let real = vec![t(&[0.0, 0.0]), t(&[0.0, 0.0])];
        let fake = vec![t(&[0.1, -0.1]), t(&[0.4, -0.4])];
        let p = perceptual_loss(&real, &fake, &[2.0, 1.0]).unwrap();
        assert!((p - 0.6).abs() < 1e-9);
        assert_eq!(p, perceptual_loss(&fake, &real, &[2.0, 1.0]).unwrap());
        assert!(matches!(
            perceptual_loss(&real, &fake[..1], &[1.0]),
            Err(TrainError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn tape_losses_agree_with_plain_ones() {
        let mut tape = Tape::<f64>::new();
        let r = tape.leaf(Tensor::scalar(0.8));
        let f = tape.leaf(Tensor::scalar(0.3));
        let d = tape_adv_loss_d(&mut tape, r, f).unwrap();
        assert!((tape.scalar(d) - adv_loss_d(0.8, 0.3).unwrap()).abs() < 1e-15);
        for form in [GenLossForm::NonSaturating, GenLossForm::Minimax] {
            let g = tape_adv_loss_g(&mut tape, f, form);
            assert!((tape.scalar(g) - adv_loss_g(0.3, form).unwrap()).abs() < 1e-15);
        }
        let x = tape.leaf(t(&[1.0, -1.0]));
        let y = tape.leaf(t(&[0.0, 0.0]));
        let l = tape_l1_loss(&mut tape, x, y).unwrap();
        assert_eq!(tape.scalar(l), 1.0);
        let p = tape_perceptual_loss(&mut tape, &[x, x], &[y, x], &[2.0, 1.0]).unwrap();
        assert_eq!(tape.scalar(p), 2.0);
    }
}
