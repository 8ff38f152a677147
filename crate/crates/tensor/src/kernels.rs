//! Convolution, matmul and resampling kernels.
//!
//! Convolutions lower to im2col + GEMM per batch item; the batch loop runs
//! through [`crate::par`] so results are identical in parallel and
//! sequential mode. The three conv entry points (forward, input gradient,
//! kernel gradient) are closed under differentiation, which is what makes
//! second-order paths like gradient penalties possible in the graph.

use crate::elem::Elem;
use crate::par;
use crate::tensor::Tensor;

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= kernel,
        "conv kernel {} larger than padded input {}",
        kernel,
        input + 2 * pad
    );
    (input + 2 * pad - kernel) / stride + 1
}

/// Scatter one image into column-matrix layout: `cols[(c*kh+ky)*kw+kx, oy*ow+ox]`.
fn im2col<T: Elem>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    debug_assert_eq!(cols.len(), c * kh * kw * oh * ow);
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row_base = ((ci * kh + ky) * kw + kx) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut cols[row_base + oy * ow..row_base + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    // in-bounds ox span: 0 <= ox*stride + kx - pad < w
                    let (lo, hi) = ox_span(ow, w, kx, stride, pad);
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if stride == 1 {
                        let ix0 = (lo * stride + kx) as isize - pad as isize;
                        dst[lo..hi].copy_from_slice(&src_row[ix0 as usize..ix0 as usize + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            let ix = ox * stride + kx - pad;
                            dst[ox] = src_row[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into image layout.
fn col2im_add<T: Elem>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    x: &mut [T],
) {
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row_base = ((ci * kh + ky) * kw + kx) * (oh * ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row_base + oy * ow..row_base + (oy + 1) * ow];
                    let dst_row =
                        &mut x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    let (lo, hi) = ox_span(ow, w, kx, stride, pad);
                    for ox in lo..hi {
                        let ix = ox * stride + kx - pad;
                        dst_row[ix] += src[ox];
                    }
                }
            }
        }
    }
}

fn ox_span(ow: usize, w: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > kx {
        (pad - kx).div_ceil(stride)
    } else {
        0
    };
    let hi = if w + pad > kx {
        ((w + pad - kx - 1) / stride + 1).min(ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// `x: [N,C,H,W]`, `kernel: [O,C,KH,KW]` -> `[N,O,OH,OW]`.
pub fn conv2d<T: Elem>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
    let (n, c, h, w) = dims4(x, "conv2d input");
    let (o, kc, kh, kw) = dims4(kernel, "conv2d kernel");
    assert_eq!(c, kc, "conv2d channel mismatch: input {c}, kernel {kc}");
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let ckk = c * kh * kw;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    let xd = x.data();
    let kd = kernel.data();
    par::for_each_chunk_mut(out.data_mut(), o * oh * ow, |i, out_n| {
        let mut cols = vec![T::zero(); ckk * oh * ow];
        im2col(
            &xd[i * c * h * w..(i + 1) * c * h * w],
            (c, h, w),
            (kh, kw),
            stride,
            pad,
            (oh, ow),
            &mut cols,
        );
        unsafe {
            T::gemm(
                o,
                ckk,
                oh * ow,
                T::one(),
                kd.as_ptr(),
                ckk as isize,
                1,
                cols.as_ptr(),
                (oh * ow) as isize,
                1,
                T::zero(),
                out_n.as_mut_ptr(),
                (oh * ow) as isize,
                1,
            );
        }
    });
    out
}

/// Gradient of `conv2d` output w.r.t. its input (a transposed convolution).
pub fn conv2d_bwd_input<T: Elem>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
    in_hw: (usize, usize),
) -> Tensor<T> {
    let (n, o, oh, ow) = dims4(grad_out, "conv2d_bwd_input grad");
    let (ko, c, kh, kw) = dims4(kernel, "conv2d_bwd_input kernel");
    assert_eq!(o, ko, "output channel mismatch: grad {o}, kernel {ko}");
    let (h, w) = in_hw;
    assert_eq!(oh, conv_out_dim(h, kh, stride, pad), "grad height mismatch");
    assert_eq!(ow, conv_out_dim(w, kw, stride, pad), "grad width mismatch");
    let ckk = c * kh * kw;
    let mut gx = Tensor::zeros(&[n, c, h, w]);
    let gd = grad_out.data();
    let kd = kernel.data();
    par::for_each_chunk_mut(gx.data_mut(), c * h * w, |i, gx_n| {
        let mut gcols = vec![T::zero(); ckk * oh * ow];
        unsafe {
            // kernel viewed transposed: [ckk, o]
            T::gemm(
                ckk,
                o,
                oh * ow,
                T::one(),
                kd.as_ptr(),
                1,
                ckk as isize,
                gd[i * o * oh * ow..].as_ptr(),
                (oh * ow) as isize,
                1,
                T::zero(),
                gcols.as_mut_ptr(),
                (oh * ow) as isize,
                1,
            );
        }
        col2im_add(&gcols, (c, h, w), (kh, kw), stride, pad, (oh, ow), gx_n);
    });
    gx
}

/// Gradient of `conv2d` output w.r.t. its kernel.
pub fn conv2d_bwd_kernel<T: Elem>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    kernel_hw: (usize, usize),
) -> Tensor<T> {
    let (n, c, h, w) = dims4(x, "conv2d_bwd_kernel input");
    let (gn, o, oh, ow) = dims4(grad_out, "conv2d_bwd_kernel grad");
    assert_eq!(n, gn, "batch mismatch: input {n}, grad {gn}");
    let (kh, kw) = kernel_hw;
    assert_eq!(oh, conv_out_dim(h, kh, stride, pad), "grad height mismatch");
    assert_eq!(ow, conv_out_dim(w, kw, stride, pad), "grad width mismatch");
    let ckk = c * kh * kw;
    let xd = x.data();
    let gd = grad_out.data();
    let partials: Vec<Vec<T>> = par::map_collect(n, |i| {
        let mut cols = vec![T::zero(); ckk * oh * ow];
        im2col(
            &xd[i * c * h * w..(i + 1) * c * h * w],
            (c, h, w),
            (kh, kw),
            stride,
            pad,
            (oh, ow),
            &mut cols,
        );
        let mut partial = vec![T::zero(); o * ckk];
        unsafe {
            // cols viewed transposed: [oh*ow, ckk]
            T::gemm(
                o,
                oh * ow,
                ckk,
                T::one(),
                gd[i * o * oh * ow..].as_ptr(),
                (oh * ow) as isize,
                1,
                cols.as_ptr(),
                1,
                (oh * ow) as isize,
                T::zero(),
                partial.as_mut_ptr(),
                ckk as isize,
                1,
            );
        }
        partial
    });
    let mut gk = Tensor::zeros(&[o, c, kh, kw]);
    let gkd = gk.data_mut();
    for partial in &partials {
        for (dst, &src) in gkd.iter_mut().zip(partial) {
            *dst += src;
        }
    }
    gk
}

/// Plain row-major matmul `[m,k] @ [k,n] -> [m,n]`, with optional transposes
/// expressed through strides so no operand is materialized.
pub fn matmul<T: Elem>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
    let (ar, ac) = dims2(a, "matmul lhs");
    let (br, bc) = dims2(b, "matmul rhs");
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, kb, "matmul inner dim mismatch: {k} vs {kb}");
    let (rsa, csa) = if ta {
        (1, ac as isize)
    } else {
        (ac as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, bc as isize)
    } else {
        (bc as isize, 1)
    };
    let mut out = Tensor::zeros(&[m, n]);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            T::zero(),
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Nearest-neighbour 2x upsample of `[N,C,H,W]`.
pub fn upsample2x<T: Elem>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = dims4(x, "upsample2x input");
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let xd = x.data();
    par::for_each_chunk_mut(out.data_mut(), c * 4 * h * w, |i, out_n| {
        for ci in 0..c {
            for y in 0..h {
                let src = &xd[((i * c + ci) * h + y) * w..((i * c + ci) * h + y + 1) * w];
                for dy in 0..2 {
                    let row = &mut out_n[(ci * 2 * h + 2 * y + dy) * 2 * w..];
                    for x in 0..w {
                        row[2 * x] = src[x];
                        row[2 * x + 1] = src[x];
                    }
                }
            }
        }
    });
    out
}

/// Adjoint of [`upsample2x`]: sum each 2x2 block.
pub fn downsample_sum2x<T: Elem>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = dims4(x, "downsample_sum2x input");
    assert!(h % 2 == 0 && w % 2 == 0, "odd spatial dims {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let xd = x.data();
    par::for_each_chunk_mut(out.data_mut(), c * oh * ow, |i, out_n| {
        for ci in 0..c {
            for y in 0..oh {
                let top = &xd[((i * c + ci) * h + 2 * y) * w..];
                let bot = &xd[((i * c + ci) * h + 2 * y + 1) * w..];
                let dst = &mut out_n[(ci * oh + y) * ow..(ci * oh + y + 1) * ow];
                for x in 0..ow {
                    dst[x] = top[2 * x] + top[2 * x + 1] + bot[2 * x] + bot[2 * x + 1];
                }
            }
        }
    });
    out
}

pub fn dims4<T: Elem>(t: &Tensor<T>, what: &str) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "{what} must be rank 4, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

pub fn dims2<T: Elem>(t: &Tensor<T>, what: &str) -> (usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 2, "{what} must be rank 2, got {s:?}");
    (s[0], s[1])
}
