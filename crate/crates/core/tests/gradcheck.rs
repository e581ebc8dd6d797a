//! Central finite-difference checks of every tape operation at f64.

use aegan_core::autodiff::check::gradient_error;
use aegan_core::autodiff::{Bound, NormKind, ParamStore, Tape, Tensor, Var};
use aegan_core::models::{CasNet, CasNetConfig, Norm, UBlockConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    // Values stay at least 0.1 away from zero so no kink sits within H.
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rel_error(seed: u64, inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gradient_error(inputs, |s| random(&mut rng, s), f, H)
}

fn assert_grad(name: &str, seed: u64, shapes: &[&[usize]], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(&mut rng, s)).collect();
    let e = rel_error(seed, &inputs, f);
    assert!(e < TOL, "{name}: relative error {e:e}");
}

#[test]
fn elementwise_ops() {
    let s: &[usize] = &[2, 3, 2, 2];
    assert_grad("add", 1, &[s, s], |t, v| t.add(v[0], v[1]).unwrap());
    assert_grad("sub", 2, &[s, s], |t, v| t.sub(v[0], v[1]).unwrap());
    assert_grad("mul", 3, &[s, s], |t, v| t.mul(v[0], v[1]).unwrap());
    assert_grad("scale", 4, &[s], |t, v| t.scale(v[0], -1.7));
    assert_grad("add_scalar", 5, &[s], |t, v| t.add_scalar(v[0], 0.3));
    assert_grad("abs", 6, &[s], |t, v| t.abs(v[0]));
    assert_grad("log", 7, &[s], |t, v| {
        let a = t.abs(v[0]);
        t.log(a)
    });
    assert_grad("clamp", 8, &[s], |t, v| t.clamp(v[0], -0.55, 0.45));
    assert_grad("leaky_relu", 9, &[s], |t, v| t.leaky_relu(v[0], 0.2));
    assert_grad("relu", 10, &[s], |t, v| t.relu(v[0]));
    assert_grad("tanh", 11, &[s], |t, v| t.tanh(v[0]));
    assert_grad("sigmoid", 12, &[s], |t, v| t.sigmoid(v[0]));
}

#[test]
fn reductions_and_scalars() {
    let s: &[usize] = &[3, 4];
    assert_grad("sum", 13, &[s], |t, v| t.sum(v[0]));
    assert_grad("mean", 14, &[s], |t, v| t.mean(v[0]));
    assert_grad("scalar chain", 15, &[&[], &[]], |t, v| {
        let p = t.mul(v[0], v[1]).unwrap();
        let q = t.sigmoid(p);
        t.log(q)
    });
}

#[test]
fn detach_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
    let d = tape.detach(x);
    let y = tape.mul(d, x).unwrap();
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    // Only the attached factor contributes: ∂(d·x)/∂x = d.
    assert_eq!(tape.grad(x).unwrap(), &[0.5, -0.5]);
}

#[test]
fn structural_ops() {
    assert_grad("concat", 16, &[&[2, 1, 3, 3], &[2, 2, 3, 3]], |t, v| {
        t.concat_channels(v[0], v[1]).unwrap()
    });
    assert_grad("instance_norm", 17, &[&[2, 3, 4, 4]], |t, v| {
        t.normalize(v[0], NormKind::Instance, 1e-5).unwrap()
    });
    assert_grad("batch_norm", 18, &[&[3, 2, 3, 3]], |t, v| {
        t.normalize(v[0], NormKind::Batch, 1e-5).unwrap()
    });
}

#[test]
fn convolutions() {
    assert_grad("conv2d s2 p1", 19, &[&[2, 3, 8, 8], &[4, 3, 4, 4], &[4]], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap()
    });
    assert_grad("conv2d s1 p0", 20, &[&[1, 2, 5, 6], &[3, 2, 3, 2], &[3]], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 1, 0).unwrap()
    });
    assert_grad("conv_transpose2d s2 p1", 21, &[&[2, 3, 4, 4], &[3, 2, 4, 4], &[2]], |t, v| {
        t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1).unwrap()
    });
    assert_grad("conv_transpose2d s1 p0", 22, &[&[1, 2, 3, 3], &[2, 3, 2, 2]], |t, v| {
        t.conv_transpose2d(v[0], v[1], None, 1, 0).unwrap()
    });
}

#[test]
fn conv_transpose_is_the_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for (stride, pad, k) in [(2, 1, 4), (1, 0, 3), (2, 0, 2), (1, 1, 3)] {
        let x = random(&mut rng, &[2, 3, 8, 8]);
        let w = random(&mut rng, &[5, 3, k, k]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w);
        let cx = tape.conv2d(xv, wv, None, stride, pad).unwrap();
        let y = random(&mut rng, tape.shape(cx));
        let yv = tape.constant(y.clone());
        let ty = tape.conv_transpose2d(yv, wv, None, stride, pad).unwrap();
        assert_eq!(tape.shape(ty), x.shape());
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(tape.value(cx).data(), y.data());
        let rhs = dot(x.data(), tape.value(ty).data());
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

/// Gradient check of a whole depth-3 U-block, parameters included.
#[test]
fn ublock_depth3() {
    let net = CasNet::new(CasNetConfig {
        n_blocks: 1,
        ublock: UBlockConfig {
            depth: 3,
            base_channels: 2,
            norm: Norm::Instance,
        },
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let template: ParamStore<f64> = net.layout().init(&mut rng);
    let mut inputs = vec![random(&mut rng, &[1, 1, 16, 16])];
    // Moderate random weights keep activations clear of the ReLU kinks.
    inputs.extend(template.iter().map(|(_, t)| random(&mut rng, t.shape())));
    let e = rel_error(25, &inputs, |tape, vars| {
        let bound = Bound::from_vars(vars[1..].to_vec());
        net.forward(tape, &bound, vars[0]).unwrap()
    });
    assert!(e < TOL, "U-block: relative error {e:e}");
}
