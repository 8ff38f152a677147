//! Finite-difference checks for every differentiable op, including the
//! gradient-of-gradient path that second-order penalties rely on.

use fagan_tensor::{gradcheck, Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn rt(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for kinked or singular ops.
fn rt_offset(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.2..1.2);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn rt_positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.3..2.0))
}

fn check1(input: Tensor<f64>, f: impl Fn(&mut Graph<f64>, NodeId) -> NodeId) {
    gradcheck::check(&[input], TOL, |g, ids| {
        let y = f(g, ids[0]);
        g.sum_all(y)
    })
    .unwrap();
}

fn check2(a: Tensor<f64>, b: Tensor<f64>, f: impl Fn(&mut Graph<f64>, NodeId, NodeId) -> NodeId) {
    gradcheck::check(&[a, b], TOL, |g, ids| {
        let y = f(g, ids[0], ids[1]);
        g.sum_all(y)
    })
    .unwrap();
}

#[test]
fn elementwise_binary() {
    check2(rt(&[3, 4], 1), rt(&[3, 4], 2), |g, a, b| g.add(a, b));
    check2(rt(&[3, 4], 3), rt(&[3, 4], 4), |g, a, b| g.sub(a, b));
    check2(rt(&[3, 4], 5), rt(&[3, 4], 6), |g, a, b| g.mul(a, b));
    check2(rt(&[3, 4], 7), rt_offset(&[3, 4], 8), |g, a, b| g.div(a, b));
}

#[test]
fn elementwise_unary() {
    check1(rt(&[2, 5], 10), |g, a| g.neg(a));
    check1(rt_offset(&[2, 5], 11), |g, a| g.abs(a));
    check1(rt(&[2, 5], 12), |g, a| g.exp(a));
    check1(rt_positive(&[2, 5], 13), |g, a| g.ln(a));
    check1(rt(&[2, 5], 14), |g, a| g.tanh(a));
    check1(rt_offset(&[2, 5], 15), |g, a| g.min_zero(a));
    check1(rt_offset(&[2, 5], 16), |g, a| g.leaky_relu(a, 0.2));
    check1(rt(&[2, 5], 17), |g, a| g.scale(a, -1.7));
    check1(rt(&[2, 5], 18), |g, a| g.add_scalar(a, 0.4));
    check1(rt_positive(&[2, 5], 19), |g, a| g.powf(a, 2.5));
}

#[test]
fn matmul_all_transpose_modes() {
    check2(rt(&[3, 4], 20), rt(&[4, 2], 21), |g, a, b| {
        g.matmul_t(a, b, false, false)
    });
    check2(rt(&[4, 3], 22), rt(&[4, 2], 23), |g, a, b| {
        g.matmul_t(a, b, true, false)
    });
    check2(rt(&[3, 4], 24), rt(&[2, 4], 25), |g, a, b| {
        g.matmul_t(a, b, false, true)
    });
    check2(rt(&[4, 3], 26), rt(&[2, 4], 27), |g, a, b| {
        g.matmul_t(a, b, true, true)
    });
    check1(rt(&[3, 5], 28), |g, a| g.transpose(a));
}

#[test]
fn conv_forward_and_adjoints() {
    // stride 1 with padding
    check2(rt(&[2, 3, 5, 5], 30), rt(&[4, 3, 3, 3], 31), |g, x, k| {
        g.conv2d(x, k, 1, 1)
    });
    // stride 2, kernel 4 (the discriminator's downsampling shape)
    check2(rt(&[2, 2, 8, 8], 32), rt(&[3, 2, 4, 4], 33), |g, x, k| {
        g.conv2d(x, k, 2, 1)
    });
    // adjoint ops are differentiable in their own right
    check2(rt(&[2, 4, 3, 3], 34), rt(&[4, 3, 3, 3], 35), |g, gy, k| {
        g.conv2d_bwd_input(gy, k, 1, 1, (3, 3))
    });
    check2(rt(&[2, 3, 5, 5], 36), rt(&[2, 4, 5, 5], 37), |g, x, gy| {
        g.conv2d_bwd_kernel(x, gy, 1, 1, (3, 3))
    });
}

#[test]
fn resampling() {
    check1(rt(&[2, 3, 4, 4], 40), |g, a| g.upsample2x(a));
    check1(rt(&[2, 3, 4, 4], 41), |g, a| g.downsample_sum2x(a));
}

#[test]
fn shape_ops() {
    check1(rt(&[2, 6], 50), |g, a| g.reshape(a, &[3, 4]));
    check2(rt(&[2, 3, 2, 2], 51), rt(&[2, 2, 2, 2], 52), |g, a, b| {
        g.concat_axis1(a, b)
    });
    check1(rt(&[2, 5, 2, 2], 53), |g, a| g.slice_axis1(a, 1, 3));
    check1(rt(&[2, 2], 54), |g, a| g.pad_axis1(a, 1, 2));
}

#[test]
fn reductions_and_broadcasts() {
    check1(rt(&[3, 4], 60), |g, a| g.sum_all(a));
    check1(rt(&[1], 61), |g, a| g.broadcast_fill(a, &[2, 3]));
    check1(rt(&[3, 4], 62), |g, a| g.sum_rows(a));
    check1(rt(&[4], 63), |g, a| g.broadcast_rows(a, 3));
    check1(rt(&[2, 3, 2, 2], 64), |g, a| g.sum_spatial(a));
    check1(rt(&[2, 3], 65), |g, a| g.broadcast_spatial(a, (2, 2)));
    check1(rt(&[3, 2, 2], 66), |g, a| g.sum_per_sample(a));
    check1(rt(&[3], 67), |g, a| g.broadcast_per_sample(a, &[2, 2]));
    check2(rt(&[3, 2, 2], 68), rt(&[3], 69), |g, a, v| {
        g.mul_per_sample(a, v)
    });
}

#[test]
fn channel_ops() {
    check2(rt(&[2, 3, 2, 2], 70), rt(&[3], 71), |g, x, b| {
        g.bias_add_chan(x, b)
    });
    check2(rt(&[2, 3, 2, 2], 72), rt(&[2, 3], 73), |g, x, s| {
        g.mul_chan(x, s)
    });
    check2(rt(&[2, 3, 2, 2], 74), rt(&[2, 3], 75), |g, x, t| {
        g.add_chan(x, t)
    });
    check2(rt(&[2, 3, 2, 2], 76), rt(&[2, 3, 2, 2], 77), |g, a, b| {
        g.dot_spatial(a, b)
    });
    check2(rt(&[3, 4], 78), rt(&[4], 79), |g, x, b| {
        g.add_row_broadcast(x, b)
    });
}

#[test]
fn gradient_of_gradient_through_conv_net() {
    // penalty = sum over batch of (|grad_x sum(conv(x,k) * conv(x,k))|^2)^(3)
    // checked w.r.t. the kernel: exercises the double-backprop path the
    // gradient penalty uses, conv adjoints included.
    let x = rt(&[2, 2, 4, 4], 80);
    let k = rt(&[2, 2, 3, 3], 81);
    gradcheck::check(&[k], 1e-5, |g, ids| {
        let kid = ids[0];
        let xid = g.variable(x.clone());
        let y = g.conv2d(xid, kid, 1, 1);
        let act = g.leaky_relu(y, 0.2);
        let sq = g.mul(act, act);
        let score = g.sum_all(sq);
        let gx = g.backward(score, &[xid])[0].expect("x gradient");
        let gx2 = g.mul(gx, gx);
        let per = g.sum_per_sample(gx2);
        let pow = g.powf(per, 3.0);
        g.mean_all(pow)
    })
    .unwrap();
}

#[test]
fn tanh_second_order_is_exact() {
    // d2/dx2 tanh = -2 tanh (1 - tanh^2); the op's vjp must stay a graph
    // expression for this to come out right.
    let mut g: Graph<f64> = Graph::new();
    let x = g.variable(Tensor::scalar(0.37));
    let y = g.tanh(x);
    let dy = g.backward(y, &[x])[0].unwrap();
    let d2y = g.backward(dy, &[x])[0].unwrap();
    let t = 0.37f64.tanh();
    let expect = -2.0 * t * (1.0 - t * t);
    assert!((g.value(d2y).item() - expect).abs() < 1e-12);
}
