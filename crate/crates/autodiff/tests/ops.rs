use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rppg_autodiff::{grad_check, grad_check_coords, DiffError, Graph, Tensor, Var};

const EPS: f64 = 1e-4;
const OP_TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    let t = random(shape, seed);
    Tensor::new(shape.to_vec(), t.data().iter().map(|v| 0.5 + v.abs()).collect()).unwrap()
}

/// Reduces any output to a scalar with a fixed random weighting so every
/// output coordinate contributes a distinct sensitivity.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> rppg_autodiff::Result<Var> {
    let w = random(g.shape(y), seed);
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check_unary(name: &str, x: Tensor, f: impl Fn(&mut Graph, Var) -> rppg_autodiff::Result<Var>) {
    let err = grad_check(
        |g, v| {
            let y = f(g, v)?;
            weighted_sum(g, y, 99)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < OP_TOL, "{name}: relative error {err}");
}

#[test]
fn add_example() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let b = g.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn activation_values_at_zero() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0)).unwrap();
    let s = g.silu(z).unwrap();
    let sg = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).item(), 0.0);
    assert_eq!(g.value(sg).item(), 0.5);
}

#[test]
fn identity_matmul() {
    let mut g = Graph::new();
    let i = g.constant(Tensor::identity(3)).unwrap();
    let a_t = random(&[3, 3], 4);
    let a = g.constant(a_t.clone()).unwrap();
    let p = g.matmul(i, a).unwrap();
    assert_eq!(g.value(p), &a_t);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[4])).unwrap();
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    let m = g.matmul(a, a).unwrap_err();
    assert!(matches!(m, DiffError::ShapeMismatch { .. }));
}

#[test]
fn non_finite_inputs_are_rejected() {
    let mut g = Graph::new();
    let bad = Tensor::vector(vec![1.0, f64::NAN]);
    assert_eq!(g.constant(bad), Err(DiffError::NonFinite { op: "leaf" }));
    let big = g.constant(Tensor::scalar(1e3)).unwrap();
    assert!(matches!(g.exp(big), Err(DiffError::NonFinite { .. })));
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let y = g.square(x).unwrap();
    assert_eq!(g.backward(y), Err(DiffError::NonScalarRoot(vec![2])));
}

#[test]
fn mean_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
    let sq = g.square(x).unwrap();
    let m = g.mean(sq).unwrap();
    g.backward(m).unwrap();
    let gr = g.grad(x).unwrap();
    let want = [2.0 / 3.0, 4.0 / 3.0, 2.0];
    for (a, b) in gr.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn bilinear_gradient() {
    let mut g = Graph::new();
    let av = random(&[5], 1);
    let bv = random(&[5], 2);
    let a = g.param(av.clone()).unwrap();
    let b = g.param(bv.clone()).unwrap();
    let p = g.mul(a, b).unwrap();
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap(), bv.data());
    assert_eq!(g.grad(b).unwrap(), av.data());
}

#[test]
fn backward_twice_accumulates() {
    let mut g = Graph::new();
    let x = g.param(random(&[4, 3], 3)).unwrap();
    let s = g.silu(x).unwrap();
    let r = g.mean(s).unwrap();
    g.backward(r).unwrap();
    let once = g.grad(x).unwrap().to_vec();
    g.backward(r).unwrap();
    let twice = g.grad(x).unwrap();
    for (a, b) in once.iter().zip(twice) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn forward_is_independent_of_grad_flags() {
    let build = |flag: bool| {
        let mut g = Graph::new();
        let x = g.leaf(random(&[6, 4], 5), flag).unwrap();
        let w = g.leaf(random(&[4, 2], 6), flag).unwrap();
        let y = g.matmul(x, w).unwrap();
        let y = g.softplus(y).unwrap();
        let y = g.softmax(y).unwrap();
        g.value(y).clone()
    };
    assert_eq!(build(true), build(false));
}

fn loop_scan(a: &[f64], b: &[f64], steps: usize, width: usize) -> Vec<f64> {
    let mut h = vec![0.0; width];
    let mut out = Vec::new();
    for t in 0..steps {
        for c in 0..width {
            h[c] = a[t * width + c] * h[c] + b[t * width + c];
        }
        out.extend_from_slice(&h);
    }
    out
}

#[test]
fn scan_examples() {
    let mut g = Graph::new();
    let zeros = g.constant(Tensor::zeros(&[4, 1])).unwrap();
    let drive_t = random(&[4, 1], 8);
    let drive = g.constant(drive_t.clone()).unwrap();
    let out = g.scan(zeros, drive).unwrap();
    assert_eq!(g.value(out), &drive_t);

    let ones = g.constant(Tensor::filled(&[4, 1], 1.0)).unwrap();
    let run = g.scan(ones, ones).unwrap();
    assert_eq!(g.value(run).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = random(&[3, 2], 9);
    let b = random(&[3, 2], 10);
    let (av, bv) = (g.constant(a.clone()).unwrap(), g.constant(b.clone()).unwrap());
    let s = g.scan(av, bv).unwrap();
    assert_eq!(g.value(s).data(), loop_scan(a.data(), b.data(), 3, 2).as_slice());
}

#[test]
fn scan_shape_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[3, 2])).unwrap();
    let b = g.constant(Tensor::zeros(&[3, 3])).unwrap();
    assert!(matches!(g.scan(a, b), Err(DiffError::ShapeMismatch { op: "scan", .. })));
}

proptest! {
    #[test]
    fn scan_matches_sequential_loop_exactly(seed in 0u64..10_000, steps in 1usize..20, width in 1usize..6) {
        let a = random(&[steps, width], seed);
        let b = random(&[steps, width], seed + 1);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()).unwrap(), g.constant(b.clone()).unwrap());
        let s = g.scan(av, bv).unwrap();
        let want = loop_scan(a.data(), b.data(), steps, width);
        prop_assert_eq!(g.value(s).data(), want.as_slice());
    }

    #[test]
    fn broadcast_add_matches_explicit_expansion(seed in 0u64..1000, rows in 1usize..5, cols in 1usize..5) {
        let m = random(&[rows, cols], seed);
        let v = random(&[cols], seed + 7);
        let mut g = Graph::new();
        let (mv, vv) = (g.constant(m.clone()).unwrap(), g.constant(v.clone()).unwrap());
        let s = g.add(mv, vv).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                prop_assert_eq!(g.value(s).data()[r * cols + c], m.data()[r * cols + c] + v.data()[c]);
            }
        }
    }
}

#[test]
fn grad_check_constant_gradient() {
    let err = grad_check(|g, x| g.sum(x), &random(&[7], 12), EPS).unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn grad_check_silu_of_linear_map() {
    let w = random(&[4, 4], 13);
    let err = grad_check(
        |g, x| {
            let wv = g.constant(w.clone())?;
            let y = g.matmul(wv, x)?;
            let y = g.silu(y)?;
            g.mean(y)
        },
        &random(&[4, 1], 14),
        EPS,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn every_elementwise_op_matches_finite_differences() {
    let x = random(&[4, 5], 20);
    let p = positive(&[4, 5], 21);
    let other = random(&[5], 22);
    let other_pos = positive(&[4, 1], 23);
    check_unary("add", x.clone(), |g, v| {
        let o = g.constant(other.clone())?;
        g.add(v, o)
    });
    check_unary("add-broadcast-side", other.clone(), |g, v| {
        let o = g.constant(x.clone())?;
        g.add(o, v)
    });
    check_unary("sub", x.clone(), |g, v| {
        let o = g.constant(other.clone())?;
        g.sub(o, v)
    });
    check_unary("mul", x.clone(), |g, v| {
        let o = g.constant(other.clone())?;
        g.mul(v, o)
    });
    check_unary("mul-broadcast-side", other.clone(), |g, v| {
        let o = g.constant(x.clone())?;
        g.mul(o, v)
    });
    check_unary("div-numerator", x.clone(), |g, v| {
        let o = g.constant(other_pos.clone())?;
        g.div(v, o)
    });
    check_unary("div-denominator", other_pos.clone(), |g, v| {
        let o = g.constant(x.clone())?;
        g.div(o, v)
    });
    check_unary("scale", x.clone(), |g, v| g.scale(v, -2.5));
    check_unary("add_scalar", x.clone(), |g, v| g.add_scalar(v, 0.3));
    check_unary("square", x.clone(), |g, v| g.square(v));
    check_unary("sqrt", p.clone(), |g, v| g.sqrt(v));
    check_unary("exp", x.clone(), |g, v| g.exp(v));
    check_unary("ln", p.clone(), |g, v| g.ln(v));
    check_unary("abs", x.clone(), |g, v| g.abs(v));
    check_unary("sigmoid", x.clone(), |g, v| g.sigmoid(v));
    check_unary("silu", x.clone(), |g, v| g.silu(v));
    check_unary("softplus", x.clone(), |g, v| g.softplus(v));
    check_unary("softmax", x.clone(), |g, v| g.softmax(v));
}

#[test]
fn every_structural_op_matches_finite_differences() {
    let x = random(&[3, 4, 2], 30);
    check_unary("sum", x.clone(), |g, v| g.sum(v));
    check_unary("mean", x.clone(), |g, v| g.mean(v));
    for axis in 0..3 {
        check_unary("sum_axis", x.clone(), move |g, v| g.sum_axis(v, axis));
        check_unary("slice", x.clone(), move |g, v| g.slice(v, axis, 1, 1));
    }
    check_unary("reshape", x.clone(), |g, v| g.reshape(v, &[12, 2]));
    check_unary("broadcast", random(&[4, 1], 31), |g, v| g.broadcast_to(v, &[3, 4, 5]));
    check_unary("transpose", random(&[3, 5], 32), |g, v| g.transpose(v));
    let y = random(&[3, 2, 2], 33);
    check_unary("concat", x.clone(), move |g, v| {
        let o = g.constant(y.clone())?;
        g.concat(&[o, v], 1)
    });
    let b = random(&[4, 3], 34);
    check_unary("matmul-left", random(&[2, 4], 35), |g, v| {
        let o = g.constant(b.clone())?;
        g.matmul(v, o)
    });
    let a = random(&[2, 4], 36);
    check_unary("matmul-right", random(&[4, 3], 37), |g, v| {
        let o = g.constant(a.clone())?;
        g.matmul(o, v)
    });
    let m = Arc::new(random(&[5, 4], 38));
    check_unary("axis_map", x.clone(), move |g, v| g.axis_map(v, 1, m.clone()));
}

#[test]
fn convolution_ops_match_finite_differences() {
    let kernel: Arc<[f64]> = random(&[5], 40).into_data().into();
    check_unary("conv1d_fixed", random(&[2, 9], 41), move |g, v| {
        g.conv1d_fixed(v, kernel.clone())
    });

    let k = random(&[3, 5], 42);
    check_unary("depthwise-x", random(&[8, 3], 43), |g, v| {
        let kv = g.constant(k.clone())?;
        g.depthwise_temporal_conv(v, kv)
    });
    let x = random(&[8, 3], 44);
    check_unary("depthwise-k", random(&[3, 5], 45), |g, v| {
        let xv = g.constant(x.clone())?;
        g.depthwise_temporal_conv(xv, v)
    });

    let k = random(&[2, 2, 3, 3, 3], 46);
    check_unary("st_conv-x", random(&[2, 3, 3, 5], 47), |g, v| {
        let kv = g.constant(k.clone())?;
        g.spatiotemporal_conv(v, kv)
    });
    let x = random(&[2, 3, 3, 5], 48);
    check_unary("st_conv-k", random(&[2, 2, 3, 3, 3], 49), |g, v| {
        let xv = g.constant(x.clone())?;
        g.spatiotemporal_conv(xv, v)
    });

    let k = random(&[3, 2, 3, 3], 50);
    check_unary("conv2d-x", random(&[2, 2, 4, 3], 51), |g, v| {
        let kv = g.constant(k.clone())?;
        g.conv2d(v, kv)
    });
    let x = random(&[2, 2, 4, 3], 52);
    check_unary("conv2d-k", random(&[3, 2, 3, 3], 53), |g, v| {
        let xv = g.constant(x.clone())?;
        g.conv2d(xv, v)
    });
}

#[test]
fn sequence_ops_match_finite_differences() {
    let drive = random(&[6, 3], 60);
    check_unary("scan-decay", random(&[6, 3], 61), |g, v| {
        let b = g.constant(drive.clone())?;
        g.scan(v, b)
    });
    let decay = random(&[6, 3], 62);
    check_unary("scan-drive", random(&[6, 3], 63), |g, v| {
        let a = g.constant(decay.clone())?;
        g.scan(a, v)
    });
    check_unary("temporal_normalize", random(&[12, 4], 64), |g, v| g.temporal_normalize(v));
}

#[test]
fn composite_scan_silu_graph_matches_finite_differences() {
    let x = random(&[10, 4], 70);
    let err = grad_check(
        |g, v| {
            let gate = g.sigmoid(v)?;
            let act = g.silu(v)?;
            let h = g.scan(gate, act)?;
            let h = g.silu(h)?;
            let sq = g.square(h)?;
            g.mean(sq)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn coordinate_subset_check() {
    let x = random(&[50], 80);
    let err = grad_check_coords(
        |g, v| {
            let e = g.exp(v)?;
            g.sum(e)
        },
        &x,
        EPS,
        &[0, 17, 49],
    )
    .unwrap();
    assert!(err < 1e-8);
}
