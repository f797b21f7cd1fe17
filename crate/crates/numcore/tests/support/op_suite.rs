//! Finite-difference checks for every differentiable op, shared with the
//! acceptance suite.

use numcore::{grad_check, Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
pub const EPS: f64 = 1e-6;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduce to a scalar with fixed random weights so no gradient is symmetric.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(random(g.shape(y), seed ^ 0xabcdef))?;
    g.dot(y, w)
}

/// Largest relative error of `f` composed with a weighted sum.
pub fn check(shape: &[usize], seed: u64, f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) -> f64 {
    let x = random(shape, seed);
    grad_check(
        |g, xv| {
            let y = f(g, xv)?;
            weighted_sum(g, y, seed)
        },
        &x,
        EPS,
    )
    .unwrap()
}

pub fn matmul_both_sides() -> f64 {
    let mut errs = Vec::new();
    let b = random(&[4, 2], 7);
    errs.push(check(&[3, 4], 1, |g, x| {
        let bv = g.constant(b.clone())?;
        g.matmul(x, bv)
    }));
    let a = random(&[3, 4], 8);
    errs.push(check(&[4, 2], 2, |g, x| {
        let av = g.constant(a.clone())?;
        g.matmul(av, x)
    }));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn transpose_softmax() -> f64 {
    let mut errs = Vec::new();
    errs.push(check(&[3, 5], 3, |g, x| g.transpose(x)));
    errs.push(check(&[3, 5], 4, |g, x| g.softmax_rows(x)));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn conv2d_input_weight_bias() -> f64 {
    let mut errs = Vec::new();
    let w = random(&[3, 2, 3, 3], 10);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        errs.push(check(&[2, 5, 6], 11, |g, x| {
            let wv = g.constant(w.clone())?;
            g.conv2d(x, wv, None, stride, pad)
        }));
    }
    let x = random(&[2, 5, 6], 12);
    errs.push(check(&[3, 2, 3, 3], 13, |g, w| {
        let xv = g.constant(x.clone())?;
        g.conv2d(xv, w, None, 2, 1)
    }));
    errs.push(check(&[3], 14, |g, b| {
        let xv = g.constant(x.clone())?;
        let wv = g.constant(w.clone())?;
        g.conv2d(xv, wv, Some(b), 1, 1)
    }));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn instance_norm_input_and_affine() -> f64 {
    let mut errs = Vec::new();
    errs.push(check(&[3, 4, 4], 20, |g, x| g.instance_norm(x, None, None, 1e-5)));
    let x = random(&[3, 4, 4], 21);
    errs.push(check(&[3], 22, |g, gamma| {
        let xv = g.constant(x.clone())?;
        g.instance_norm(xv, Some(gamma), None, 1e-5)
    }));
    errs.push(check(&[3], 23, |g, beta| {
        let xv = g.constant(x.clone())?;
        g.instance_norm(xv, None, Some(beta), 1e-5)
    }));
    let gamma = random(&[3], 24);
    errs.push(check(&[3, 4, 4], 25, |g, x| {
        let gv = g.constant(gamma.clone())?;
        g.instance_norm(x, Some(gv), None, 1e-5)
    }));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn pooling_ops() -> f64 {
    let mut errs = Vec::new();
    errs.push(check(&[2, 4, 6], 30, |g, x| g.avgpool2x2(x)));
    errs.push(check(&[2, 3, 2], 31, |g, x| g.upsample_nearest2x(x)));
    errs.push(check(&[2, 3, 2], 32, |g, x| g.global_avg_pool(x)));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn shape_ops() -> f64 {
    let mut errs = Vec::new();
    errs.push(check(&[2, 3, 4], 40, |g, x| g.reshape(x, &[6, 4])));
    errs.push(check(&[2, 3, 4], 41, |g, x| g.permute(x, &[2, 0, 1])));
    let other = random(&[2, 2, 4], 42);
    errs.push(check(&[2, 3, 4], 43, |g, x| {
        let o = g.constant(other.clone())?;
        g.concat(&[o, x, o], 1)
    }));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn elementwise_ops() -> f64 {
    let mut errs = Vec::new();
    let other = random(&[3, 4], 50);
    errs.push(check(&[3, 4], 51, |g, x| {
        let o = g.constant(other.clone())?;
        g.add(x, o)
    }));
    errs.push(check(&[3, 4], 52, |g, x| {
        let o = g.constant(other.clone())?;
        g.sub(o, x)
    }));
    errs.push(check(&[3, 4], 53, |g, x| {
        let o = g.constant(other.clone())?;
        g.mul(x, o)
    }));
    errs.push(check(&[3, 4], 54, |g, x| g.mul(x, x)));
    errs.push(check(&[3, 4], 55, |g, x| g.scale(x, -2.5)));
    errs.push(check(&[3, 4], 56, |g, x| g.add_scalar(x, 0.7)));
    errs.push(check(&[3, 4], 57, |g, x| g.relu(x)));
    errs.push(check(&[3, 4], 58, |g, x| g.sigmoid(x)));
    errs.push(check(&[3, 4], 59, |g, x| g.abs(x)));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn reductions_and_lookups() -> f64 {
    let mut errs = Vec::new();
    errs.push(check(&[3, 4], 60, |g, x| g.sum(x)));
    errs.push(check(&[3, 4], 61, |g, x| g.mean(x)));
    errs.push(check(&[3, 4], 62, |g, x| g.row_mean(x)));
    errs.push(check(&[3], 63, |g, x| g.broadcast_cols(x, 5)));
    errs.push(check(&[4, 3], 64, |g, x| g.gather_row(x, 2)));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn spectral_norm_weight() -> f64 {
    let mut errs = Vec::new();
    let w0 = random(&[3, 2, 3, 3], 70);
    let mut u = random(&[3], 71).into_data();
    let (v, _) = numcore::power_iteration(&w0, &mut u);
    errs.push(check(&[3, 2, 3, 3], 72, |g, w| g.spectral_norm(w, &u, &v)));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn composite_chain() -> f64 {
    let mut errs = Vec::new();
    // conv -> norm -> relu -> pool -> flatten -> attention-style softmax product
    let w = random(&[4, 2, 3, 3], 80);
    errs.push(check(&[2, 4, 4], 81, |g, x| {
        let wv = g.constant(w.clone())?;
        let y = g.conv2d(x, wv, None, 1, 1)?;
        let y = g.instance_norm(y, None, None, 1e-5)?;
        let y = g.relu(y)?;
        let y = g.avgpool2x2(y)?;
        let y = g.reshape(y, &[4, 4])?;
        let yt = g.transpose(y)?;
        let a = g.matmul(yt, y)?;
        let s = g.softmax_rows(a)?;
        g.matmul(y, s)
    }));
    errs.into_iter().fold(0.0, f64::max)
}

pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("matmul_both_sides", matmul_both_sides()),
        ("transpose_softmax", transpose_softmax()),
        ("conv2d_input_weight_bias", conv2d_input_weight_bias()),
        ("instance_norm_input_and_affine", instance_norm_input_and_affine()),
        ("pooling_ops", pooling_ops()),
        ("shape_ops", shape_ops()),
        ("elementwise_ops", elementwise_ops()),
        ("reductions_and_lookups", reductions_and_lookups()),
        ("spectral_norm_weight", spectral_norm_weight()),
        ("composite_chain", composite_chain()),
    ]
}
