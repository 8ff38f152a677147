//! The parallel and sequential kernel paths must agree bit-for-bit, and the
//! conv lowering must match a direct nested-loop convolution.

use fagan_tensor::{kernels, par, Tensor};
use proptest::prelude::*;

fn naive_conv2d(x: &Tensor<f32>, k: &Tensor<f32>, stride: usize, pad: usize) -> Tensor<f32> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    let (xd, kd) = (x.data(), k.data());
    let od = out.data_mut();
    for ni in 0..n {
        for oi in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = xd[((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = kd[((oi * c + ci) * kh + ky) * kw + kx];
                                acc += (xv as f64) * (kv as f64);
                            }
                        }
                    }
                    od[((ni * o + oi) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    out
}

fn arb_tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f32>> {
    let len: usize = shape.iter().product();
    prop::collection::vec(-1.0f32..1.0, len).prop_map(move |data| Tensor::new(&shape, data))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv2d_matches_naive(
        x in arb_tensor(vec![2, 3, 6, 6]),
        k in arb_tensor(vec![4, 3, 3, 3]),
        stride in 1usize..3,
        pad in 0usize..2,
    ) {
        let fast = kernels::conv2d(&x, &k, stride, pad);
        let slow = naive_conv2d(&x, &k, stride, pad);
        prop_assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            prop_assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise(
        x in arb_tensor(vec![3, 2, 8, 8]),
        k in arb_tensor(vec![4, 2, 4, 4]),
    ) {
        par::set_sequential(false);
        let fwd_par = kernels::conv2d(&x, &k, 2, 1);
        let gi_par = kernels::conv2d_bwd_input(&fwd_par, &k, 2, 1, (8, 8));
        let gk_par = kernels::conv2d_bwd_kernel(&x, &fwd_par, 2, 1, (4, 4));
        let up_par = kernels::upsample2x(&x);

        par::set_sequential(true);
        let fwd_seq = kernels::conv2d(&x, &k, 2, 1);
        let gi_seq = kernels::conv2d_bwd_input(&fwd_seq, &k, 2, 1, (8, 8));
        let gk_seq = kernels::conv2d_bwd_kernel(&x, &fwd_seq, 2, 1, (4, 4));
        let up_seq = kernels::upsample2x(&x);
        par::set_sequential(false);

        prop_assert!(fwd_par == fwd_seq);
        prop_assert!(gi_par == gi_seq);
        prop_assert!(gk_par == gk_seq);
        prop_assert!(up_par == up_seq);
    }
}

#[test]
fn adjoint_identity_conv() {
    // <gy, conv(x,k)> == <x, conv_bwd_input(gy,k)> == <k, conv_bwd_kernel(x,gy)>
    let x = Tensor::<f32>::from_fn(&[2, 3, 6, 6], |i| ((i * 37 % 101) as f32 / 50.5) - 1.0);
    let k = Tensor::<f32>::from_fn(&[4, 3, 3, 3], |i| ((i * 53 % 97) as f32 / 48.5) - 1.0);
    let y = kernels::conv2d(&x, &k, 2, 1);
    let gy = Tensor::<f32>::from_fn(y.shape(), |i| ((i * 29 % 89) as f32 / 44.5) - 1.0);
    let gx = kernels::conv2d_bwd_input(&gy, &k, 2, 1, (6, 6));
    let gk = kernels::conv2d_bwd_kernel(&x, &gy, 2, 1, (3, 3));
    let dot = |a: &Tensor<f32>, b: &Tensor<f32>| -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&p, &q)| p as f64 * q as f64)
            .sum()
    };
    let lhs = dot(&gy, &y);
    let mid = dot(&x, &gx);
    let rhs = dot(&k, &gk);
    assert!((lhs - mid).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {mid}");
    assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
}
