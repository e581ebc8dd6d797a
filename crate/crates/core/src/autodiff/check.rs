//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Largest deviation between backprop and central differences of
/// `Σ r ⊙ f(inputs)`, relative to the largest numeric gradient.
///
/// `r` is a fixed projection with the shape of `f`'s output, so every output
/// element contributes with a distinct weight.
pub fn gradient_error(
    inputs: &[Tensor<f64>],
    projection: impl FnOnce(&[usize]) -> Tensor<f64>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
    h: f64,
) -> f64 {
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&mut tape, &vars);
        tape.shape(y).to_vec()
    };
    let r = projection(&out_shape);
    let loss_of = |tape: &mut Tape<f64>, vars: &[Var]| {
        let y = f(tape, vars);
        let rv = tape.constant(r.clone());
        let p = tape.mul(y, rv).expect("projection matches the output shape");
        tape.sum(p)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = loss_of(&mut tape, &vars);
    tape.backward(loss).expect("scalar loss");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map_or(vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let eval = |ins: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let l = loss_of(&mut tape, &vars);
        tape.scalar(l)
    };
    let (mut worst, mut scale) = (0.0f64, f64::MIN_POSITIVE);
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].numel() {
            let x = inputs[i].data()[k];
            probe[i].data_mut()[k] = x + h;
            let plus = eval(&probe);
            probe[i].data_mut()[k] = x - h;
            let minus = eval(&probe);
            probe[i].data_mut()[k] = x;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max((numeric - analytic[i][k]).abs());
            scale = scale.max(numeric.abs());
        }
    }
    worst / scale
}
