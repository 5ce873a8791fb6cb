//! Finite-difference checks of every numeric primitive's reverse rule.
//!
//! Gradients computed in 64-bit mode must match to 1e-6; gradients computed
//! in 32-bit mode must match a 64-bit finite difference of the same
//! function to 1e-3.

mod common;

use common::{check_gradient, dot, random_tensor, rng, to_f64};
use rand::Rng;
use tokdistill::numerics::{
    cross_entropy, gelu, gelu_backward, matmul, matmul_backward, rmsnorm, rmsnorm_backward,
    softmax_rows, softmax_rows_backward, Tensor,
};

const TRIALS: usize = 100;
const FLOOR: f64 = 1e-3;

/// Runs `trial` in both precisions and returns the worst errors.
fn run(name: &str, mut trial: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> (f64, f64)) {
    let mut r = rng(name.len() as u64 * 7919);
    let (mut w64, mut w32): (f64, f64) = (0.0, 0.0);
    for _ in 0..TRIALS {
        let (e64, e32) = trial(&mut r);
        w64 = w64.max(e64);
        w32 = w32.max(e32);
    }
    assert!(w64 <= 1e-6, "{name}: 64-bit error {w64:e}");
    assert!(w32 <= 1e-3, "{name}: 32-bit error {w32:e}");
}

fn dims(r: &mut rand_chacha::ChaCha8Rng) -> (usize, usize, usize) {
    (
        r.random_range(1..5),
        r.random_range(1..6),
        r.random_range(1..5),
    )
}

#[test]
fn matmul_gradients() {
    run("matmul", |r| {
        let (m, k, n) = dims(r);
        let a = random_tensor(r, &[m, k], 1.0);
        let b = random_tensor(r, &[k, n], 1.0);
        let probe = random_tensor(r, &[m, n], 1.0);
        let loss =
            |a: &Tensor<f64>, b: &Tensor<f64>| dot(matmul(a, b).unwrap().data(), probe.data());
        let (da, db) = matmul_backward(&a, &b, &probe).unwrap();
        let e64 = check_gradient(&a, da.data(), |x| loss(x, &b), FLOOR).max(check_gradient(
            &b,
            db.data(),
            |x| loss(&a, x),
            FLOOR,
        ));
        let (da32, db32) = matmul_backward(&a.cast::<f32>(), &b.cast(), &probe.cast()).unwrap();
        let e32 = check_gradient(&a, &to_f64(&da32), |x| loss(x, &b), FLOOR).max(check_gradient(
            &b,
            &to_f64(&db32),
            |x| loss(&a, x),
            FLOOR,
        ));
        (e64, e32)
    });
}

#[test]
fn softmax_gradients() {
    run("softmax", |r| {
        let (m, n, _) = dims(r);
        let x = random_tensor(r, &[m, n], 3.0);
        let probe = random_tensor(r, &[m, n], 1.0);
        let loss = |x: &Tensor<f64>| dot(softmax_rows(x).unwrap().data(), probe.data());
        let g = softmax_rows_backward(&softmax_rows(&x).unwrap(), &probe).unwrap();
        let x32 = x.cast::<f32>();
        let g32 = softmax_rows_backward(&softmax_rows(&x32).unwrap(), &probe.cast()).unwrap();
        (
            check_gradient(&x, g.data(), loss, FLOOR),
            check_gradient(&x, &to_f64(&g32), loss, FLOOR),
        )
    });
}

#[test]
fn rmsnorm_gradients() {
    let eps = 1e-5;
    run("rmsnorm", |r| {
        let (m, d, _) = dims(r);
        let x = random_tensor(r, &[m, d], 2.0);
        let gain = random_tensor(r, &[d], 1.5);
        let probe = random_tensor(r, &[m, d], 1.0);
        let loss = |x: &Tensor<f64>, g: &Tensor<f64>| {
            dot(rmsnorm(x, g, eps).unwrap().data(), probe.data())
        };
        let (dx, dg) = rmsnorm_backward(&x, &gain, eps, &probe).unwrap();
        let e64 = check_gradient(&x, dx.data(), |t| loss(t, &gain), FLOOR).max(check_gradient(
            &gain,
            dg.data(),
            |t| loss(&x, t),
            FLOOR,
        ));
        let (dx32, dg32) =
            rmsnorm_backward(&x.cast::<f32>(), &gain.cast(), eps, &probe.cast()).unwrap();
        let e32 = check_gradient(&x, &to_f64(&dx32), |t| loss(t, &gain), FLOOR).max(
            check_gradient(&gain, &to_f64(&dg32), |t| loss(&x, t), FLOOR),
        );
        (e64, e32)
    });
}

#[test]
fn gelu_gradients() {
    run("gelu", |r| {
        let (m, n, _) = dims(r);
        let x = random_tensor(r, &[m, n], 4.0);
        let probe = random_tensor(r, &[m, n], 1.0);
        let loss = |x: &Tensor<f64>| dot(gelu(x).unwrap().data(), probe.data());
        let g = gelu_backward(&x, &probe).unwrap();
        let g32 = gelu_backward(&x.cast::<f32>(), &probe.cast()).unwrap();
        (
            check_gradient(&x, g.data(), loss, FLOOR),
            check_gradient(&x, &to_f64(&g32), loss, FLOOR),
        )
    });
}

#[test]
fn cross_entropy_gradients() {
    run("cross_entropy", |r| {
        let (m, v, _) = dims(r);
        let v = v + 1;
        let x = random_tensor(r, &[m, v], 3.0);
        let targets: Vec<u32> = (0..m).map(|_| r.random_range(0..v as u32)).collect();
        let mut mask: Vec<bool> = (0..m).map(|_| r.random_bool(0.3)).collect();
        mask[0] = false;
        let loss = |x: &Tensor<f64>| cross_entropy(x, &targets, &mask).unwrap().loss;
        let g = cross_entropy(&x, &targets, &mask).unwrap().grad;
        let g32 = cross_entropy(&x.cast::<f32>(), &targets, &mask)
            .unwrap()
            .grad;
        (
            check_gradient(&x, g.data(), loss, FLOOR),
            check_gradient(&x, &to_f64(&g32), loss, FLOOR),
        )
    });
}

#[test]
fn matmul_matches_triple_loop_on_random_cases() {
    let mut r = rng(3);
    for _ in 0..TRIALS {
        let (m, k, n) = dims(&mut r);
        let a = random_tensor(&mut r, &[m, k], 1.0);
        let b = random_tensor(&mut r, &[k, n], 1.0);
        let c = matmul(&a, &b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k)
                    .map(|p| a.data()[i * k + p] * b.data()[p * n + j])
                    .sum();
                let scale: f64 = (0..k)
                    .map(|p| (a.data()[i * k + p] * b.data()[p * n + j]).abs())
                    .sum();
                assert!((c.data()[i * n + j] - want).abs() <= 1e-12 * scale.max(1.0));
            }
        }
        assert_eq!(matmul(&a, &b).unwrap(), c, "bitwise determinism");
    }
}

#[test]
fn softmax_rows_sum_to_one_for_large_inputs() {
    let mut r = rng(4);
    for _ in 0..TRIALS {
        let (m, n, _) = dims(&mut r);
        let x = random_tensor(&mut r, &[m, n], 1e4).cast::<f32>();
        let y = softmax_rows(&x).unwrap();
        for i in 0..m {
            let s: f64 = y.row(i).iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() <= 1e-6, "row sum {s}");
        }
    }
}

#[test]
fn softmax_matches_direct_evaluation() {
    let x = Tensor::<f64>::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
    let y = softmax_rows(&x).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (i, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
        assert!((y.data()[i] - v.exp() / z).abs() <= 1e-7);
    }
    let big = Tensor::<f32>::from_rows(&[vec![1000.0, 0.0]]).unwrap();
    assert_eq!(softmax_rows(&big).unwrap().data(), &[1.0, 0.0]);
}

#[test]
fn cross_entropy_matches_direct_evaluation() {
    let mut r = rng(5);
    for _ in 0..TRIALS {
        let (m, v, _) = dims(&mut r);
        let x = random_tensor(&mut r, &[m, v], 3.0);
        let targets: Vec<u32> = (0..m).map(|_| r.random_range(0..v as u32)).collect();
        let mask = vec![false; m];
        let got = cross_entropy(&x, &targets, &mask).unwrap().loss;
        let want: f64 = (0..m)
            .map(|i| {
                let row = x.row(i);
                let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
                lse - row[targets[i] as usize]
            })
            .sum::<f64>()
            / m as f64;
        assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0));
    }
}
