//! Central finite-difference checks for every primitive.

use std::rc::Rc;

use pif_autodiff::{uniform_knots, Result, Shape, Tape, Value};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

/// Relative error between two gradient vectors, measured in the 2-norm.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Builds `sum(w * op(inputs))` on a fresh tape and returns (value, grads).
fn eval<F>(inputs: &[(Shape, Vec<f64>)], weights: &[f64], op: &F) -> (f64, Vec<Vec<f64>>)
where
    F: Fn(&mut Tape, &[Value]) -> Result<Value>,
{
    let mut t = Tape::new();
    let leaves: Vec<Value> = inputs.iter().map(|(s, v)| t.param(*s, v.clone()).unwrap()).collect();
    let y = op(&mut t, &leaves).unwrap();
    let w = t.constant(y.shape(), weights[..y.shape().len()].to_vec()).unwrap();
    let p = t.mul(y, w).unwrap();
    let root = t.sum(p).unwrap();
    let g = t.backward(root).unwrap();
    (t.scalar_value(root), leaves.iter().map(|l| g.get(*l)).collect())
}

fn check<F>(name: &str, inputs: Vec<(Shape, Vec<f64>)>, weights: &[f64], op: F, tol: f64)
where
    F: Fn(&mut Tape, &[Value]) -> Result<Value>,
{
    let (_, analytic) = eval(&inputs, weights, &op);
    for (k, (_, vals)) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; vals.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[k].1[i] += H;
            let mut minus = inputs.clone();
            minus[k].1[i] -= H;
            *slot = (eval(&plus, weights, &op).0 - eval(&minus, weights, &op).0) / (2.0 * H);
        }
        let e = rel_err(&analytic[k], &numeric);
        assert!(
            e < tol,
            "{name}: input {k} relative error {e:e}\n analytic {:?}\n numeric {:?}",
            analytic[k],
            numeric
        );
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let knots: Rc<[f64]> = uniform_knots(-1.0, 1.0, 5, 3).into();
    for trial in 0..10 {
        let w = rand_vec(&mut rng, 64, -1.0, 1.0);
        let m23 = |rng: &mut ChaCha8Rng| (Shape::Matrix(2, 3), rand_vec(rng, 6, -1.5, 1.5));
        let pos = |rng: &mut ChaCha8Rng| (Shape::Matrix(2, 3), rand_vec(rng, 6, 0.5, 2.0));
        let tag = |s: &str| format!("{s}#{trial}");
        let tol = 1e-6;

        check(&tag("add"), vec![m23(&mut rng), m23(&mut rng)], &w, |t, v| t.add(v[0], v[1]), tol);
        check(&tag("sub"), vec![m23(&mut rng), m23(&mut rng)], &w, |t, v| t.sub(v[0], v[1]), tol);
        check(&tag("mul"), vec![m23(&mut rng), m23(&mut rng)], &w, |t, v| t.mul(v[0], v[1]), tol);
        check(&tag("div"), vec![m23(&mut rng), pos(&mut rng)], &w, |t, v| t.div(v[0], v[1]), tol);
        check(
            &tag("mul-broadcast"),
            vec![m23(&mut rng), (Shape::Scalar, rand_vec(&mut rng, 1, -2.0, 2.0))],
            &w,
            |t, v| t.mul(v[0], v[1]),
            tol,
        );
        check(
            &tag("matmul"),
            vec![m23(&mut rng), (Shape::Matrix(3, 4), rand_vec(&mut rng, 12, -1.0, 1.0))],
            &w,
            |t, v| t.matmul(v[0], v[1]),
            tol,
        );
        check(
            &tag("matvec"),
            vec![m23(&mut rng), (Shape::Vector(3), rand_vec(&mut rng, 3, -1.0, 1.0))],
            &w,
            |t, v| t.matmul(v[0], v[1]),
            tol,
        );
        check(
            &tag("add_row"),
            vec![m23(&mut rng), (Shape::Vector(3), rand_vec(&mut rng, 3, -1.0, 1.0))],
            &w,
            |t, v| t.add_row(v[0], v[1]),
            tol,
        );
        check(&tag("transpose"), vec![m23(&mut rng)], &w, |t, v| t.transpose(v[0]), tol);
        check(&tag("tanh"), vec![m23(&mut rng)], &w, |t, v| t.tanh(v[0]), tol);
        check(&tag("sigmoid"), vec![m23(&mut rng)], &w, |t, v| t.sigmoid(v[0]), tol);
        // keep away from the kink
        let relu_in = (
            Shape::Matrix(2, 3),
            rand_vec(&mut rng, 6, 0.1, 1.0)
                .into_iter()
                .enumerate()
                .map(|(i, x)| if i % 2 == 0 { x } else { -x })
                .collect(),
        );
        check(&tag("relu"), vec![relu_in], &w, |t, v| t.relu(v[0]), tol);
        check(&tag("exp"), vec![m23(&mut rng)], &w, |t, v| t.exp(v[0]), tol);
        check(&tag("log"), vec![pos(&mut rng)], &w, |t, v| t.log(v[0]), tol);
        check(&tag("pow"), vec![pos(&mut rng)], &w, |t, v| t.pow(v[0], 2.5), tol);
        check(&tag("pow-int"), vec![m23(&mut rng)], &w, |t, v| t.pow(v[0], 3.0), tol);
        check(&tag("sum"), vec![m23(&mut rng)], &w, |t, v| t.sum(v[0]), tol);
        check(&tag("mean"), vec![m23(&mut rng)], &w, |t, v| t.mean(v[0]), tol);
        check(
            &tag("concat"),
            vec![m23(&mut rng), (Shape::Matrix(2, 2), rand_vec(&mut rng, 4, -1.0, 1.0))],
            &w,
            |t, v| t.concat(&[v[0], v[1]]),
            tol,
        );
        check(
            &tag("concat-vec"),
            vec![(Shape::Scalar, vec![0.3]), (Shape::Vector(3), rand_vec(&mut rng, 3, -1.0, 1.0))],
            &w,
            |t, v| t.concat(&[v[0], v[1]]),
            tol,
        );
        check(&tag("slice_cols"), vec![m23(&mut rng)], &w, |t, v| t.slice_cols(v[0], 1..3), tol);
        check(&tag("slice_rows"), vec![m23(&mut rng)], &w, |t, v| t.slice_rows(v[0], 1..2), tol);
        check(&tag("softmax"), vec![m23(&mut rng)], &w, |t, v| t.softmax(v[0], false), tol);
        check(
            &tag("softmax-causal"),
            vec![(Shape::Matrix(3, 3), rand_vec(&mut rng, 9, -1.0, 1.0))],
            &w,
            |t, v| t.softmax(v[0], true),
            tol,
        );
        let k = knots.clone();
        check(
            &tag("bspline"),
            vec![m23(&mut rng)],
            &w,
            move |t, v| t.bspline(v[0], k.clone(), 3),
            tol,
        );
        let cheb_in = (Shape::Matrix(2, 3), rand_vec(&mut rng, 6, -0.95, 0.95));
        check(&tag("chebyshev"), vec![cheb_in], &w, |t, v| t.chebyshev(v[0], 4), tol);
    }
}

/// Three stacked tanh layers with a sigmoid readout.
fn three_layer(t: &mut Tape, v: &[Value]) -> Result<Value> {
    let h1 = t.matmul(v[0], v[1])?;
    let h1 = t.tanh(h1)?;
    let h2 = t.matmul(h1, v[2])?;
    let h2 = t.tanh(h2)?;
    let h3 = t.matmul(h2, v[3])?;
    let o = t.sigmoid(h3)?;
    t.mean(o)
}

#[test]
fn three_layer_composition_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        (Shape::Matrix(4, 3), rand_vec(&mut rng, 12, -1.0, 1.0)),
        (Shape::Matrix(3, 5), rand_vec(&mut rng, 15, -1.0, 1.0)),
        (Shape::Matrix(5, 4), rand_vec(&mut rng, 20, -1.0, 1.0)),
        (Shape::Matrix(4, 1), rand_vec(&mut rng, 4, -1.0, 1.0)),
    ];
    check("three-layer", inputs, &[1.0], three_layer, 1e-6);
}

#[test]
fn identical_graphs_give_bit_identical_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![
        (Shape::Matrix(4, 3), rand_vec(&mut rng, 12, -1.0, 1.0)),
        (Shape::Matrix(3, 5), rand_vec(&mut rng, 15, -1.0, 1.0)),
        (Shape::Matrix(5, 4), rand_vec(&mut rng, 20, -1.0, 1.0)),
        (Shape::Matrix(4, 1), rand_vec(&mut rng, 4, -1.0, 1.0)),
    ];
    let a = eval(&inputs, &[1.0], &three_layer);
    let b = eval(&inputs, &[1.0], &three_layer);
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    for (x, y) in a.1.iter().zip(&b.1) {
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// grad(a f + b g) = a grad(f) + b grad(g)
    #[test]
    fn backward_is_linear(xs in prop::collection::vec(-2.0f64..2.0, 4), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = |t: &mut Tape, x: Value| -> Result<Value> { let y = t.tanh(x)?; let y = t.mul(y, x)?; t.sum(y) };
        let g = |t: &mut Tape, x: Value| -> Result<Value> { let y = t.sigmoid(x)?; let y = t.square(y)?; t.mean(y) };
        let grad_of = |which: u8| {
            let mut t = Tape::new();
            let x = t.param(Shape::Vector(4), xs.clone()).unwrap();
            let root = match which {
                0 => f(&mut t, x).unwrap(),
                1 => g(&mut t, x).unwrap(),
                _ => {
                    let fv = f(&mut t, x).unwrap();
                    let gv = g(&mut t, x).unwrap();
                    let fa = t.scale(fv, a).unwrap();
                    let gb = t.scale(gv, b).unwrap();
                    t.add(fa, gb).unwrap()
                }
            };
            t.backward(root).unwrap().get(x)
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..4 {
            prop_assert!((gc[i] - (a * gf[i] + b * gg[i])).abs() < 1e-10);
        }
    }
}
