//! Layer kernels over single (C, H, W) samples.
//!
//! Convolution lowers to im2col followed by a dense matrix product; the
//! backward pass reuses the same lowering.

use super::tensor::Tensor;

/// Output extent of a sliding window along one axis.
pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// C = A * B (+ beta * C), where A is m x k and B is k x n, both row-major.
/// `a_t` / `b_t` read the operand as stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the row-major layouts of
    // A (m x k or its transpose), B (k x n or its transpose) and C (m x n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
}

fn im2col(input: &Tensor, g: ConvGeometry, out_h: usize, out_w: usize) -> Vec<f64> {
    let [c, h, w] = dims3(input);
    let (kh, kw) = g.kernel;
    let cols = out_h * out_w;
    let mut out = vec![0.0; c * kh * kw * cols];
    let src = input.data();
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ch * h + iy as usize) * w;
                    for ox in 0..out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * out_w + ox] = src[base + ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im(cols: &[f64], shape: [usize; 3], g: ConvGeometry, out_h: usize, out_w: usize) -> Tensor {
    let [c, h, w] = shape;
    let (kh, kw) = g.kernel;
    let n = out_h * out_w;
    let mut out = Tensor::zeros(&[c, h, w]);
    let dst = out.data_mut();
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ch * h + iy as usize) * w;
                    for ox in 0..out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[base + ix as usize] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn dims3(t: &Tensor) -> [usize; 3] {
    let s = t.shape();
    assert_eq!(s.len(), 3, "expected a (C, H, W) tensor, got {s:?}");
    [s[0], s[1], s[2]]
}

/// 2-D convolution (cross-correlation). `weight` is (O, C, kh, kw), `bias` is (O).
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, g: ConvGeometry) -> Tensor {
    let [c, h, w] = dims3(input);
    let o = weight.shape()[0];
    let oh = out_extent(h, g.kernel.0, g.stride, g.pad).expect("conv input smaller than kernel");
    let ow = out_extent(w, g.kernel.1, g.stride, g.pad).expect("conv input smaller than kernel");
    let k = c * g.kernel.0 * g.kernel.1;
    let n = oh * ow;
    let cols = im2col(input, g, oh, ow);
    let mut out = vec![0.0; o * n];
    for (oc, row) in out.chunks_mut(n).enumerate() {
        row.fill(bias.data()[oc]);
    }
    gemm(o, k, n, weight.data(), false, &cols, false, &mut out, 1.0);
    Tensor::new(vec![o, oh, ow], out).expect("conv output shape")
}

/// Gradients of a convolution: (d_input, d_weight, d_bias).
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    g: ConvGeometry,
) -> (Tensor, Tensor, Tensor) {
    let shape = dims3(input);
    let [o, oh, ow] = dims3(grad_out);
    let k = shape[0] * g.kernel.0 * g.kernel.1;
    let n = oh * ow;
    let cols = im2col(input, g, oh, ow);
    let dy = grad_out.data();

    let mut dw = vec![0.0; o * k];
    gemm(o, n, k, dy, false, &cols, true, &mut dw, 0.0);
    let db: Vec<f64> = dy.chunks(n).map(|r| r.iter().sum()).collect();

    let mut dcols = vec![0.0; k * n];
    gemm(k, o, n, weight.data(), true, dy, false, &mut dcols, 0.0);
    let dx = col2im(&dcols, shape, g, oh, ow);

    (
        dx,
        Tensor::new(weight.shape().to_vec(), dw).expect("dw shape"),
        Tensor::new(vec![o], db).expect("db shape"),
    )
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("relu grad shape")
}

/// Max pooling without padding. Ties go to the first element in scan order.
pub fn maxpool(input: &Tensor, kernel: (usize, usize), stride: usize) -> Tensor {
    maxpool_indexed(input, kernel, stride).0
}

fn maxpool_indexed(input: &Tensor, kernel: (usize, usize), stride: usize) -> (Tensor, Vec<usize>) {
    let [c, h, w] = dims3(input);
    let oh = out_extent(h, kernel.0, stride, 0).expect("pool input smaller than window");
    let ow = out_extent(w, kernel.1, stride, 0).expect("pool input smaller than window");
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ch * h + oy * stride) * w + ox * stride;
                for ky in 0..kernel.0 {
                    for kx in 0..kernel.1 {
                        let i = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    (Tensor::new(vec![c, oh, ow], out).expect("pool shape"), idx)
}

pub fn maxpool_backward(input: &Tensor, grad_out: &Tensor, kernel: (usize, usize), stride: usize) -> Tensor {
    let (_, idx) = maxpool_indexed(input, kernel, stride);
    let mut dx = Tensor::zeros(input.shape());
    let d = dx.data_mut();
    for (&i, &g) in idx.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    dx
}

/// Global average pooling: (C, H, W) -> (C).
pub fn gap(input: &Tensor) -> Tensor {
    let [c, h, w] = dims3(input);
    let plane = (h * w) as f64;
    let data = input
        .data()
        .chunks(h * w)
        .map(|p| p.iter().sum::<f64>() / plane)
        .collect();
    Tensor::new(vec![c], data).expect("gap shape")
}

pub fn gap_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let plane = input_shape[1] * input_shape[2];
    let scale = 1.0 / plane as f64;
    let mut data = Vec::with_capacity(input_shape[0] * plane);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat(g * scale).take(plane));
    }
    Tensor::new(input_shape.to_vec(), data).expect("gap grad shape")
}

/// y = W x + b with W (out, in).
pub fn fc(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let out_f = weight.shape()[0];
    let in_f = weight.shape()[1];
    let x = input.data();
    let data = (0..out_f)
        .map(|o| {
            let row = &weight.data()[o * in_f..(o + 1) * in_f];
            bias.data()[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect();
    Tensor::new(vec![out_f], data).expect("fc shape")
}

pub fn fc_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let out_f = weight.shape()[0];
    let in_f = weight.shape()[1];
    let x = input.data();
    let dy = grad_out.data();
    let mut dx = vec![0.0; in_f];
    let mut dw = vec![0.0; out_f * in_f];
    for o in 0..out_f {
        let row = &weight.data()[o * in_f..(o + 1) * in_f];
        for i in 0..in_f {
            dx[i] += row[i] * dy[o];
            dw[o * in_f + i] = dy[o] * x[i];
        }
    }
    (
        Tensor::new(input.shape().to_vec(), dx).expect("fc dx"),
        Tensor::new(vec![out_f, in_f], dw).expect("fc dw"),
        grad_out.clone(),
    )
}
