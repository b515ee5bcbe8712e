//! Layer primitives with explicit forward and backward passes.
//!
//! Convolution is evaluated as a matrix product over an im2col buffer; the
//! three convolution GEMMs (forward, kernel gradient, column gradient) go
//! through one checked wrapper around a blocked dgemm kernel. All reductions
//! run in a fixed order, so results are bit-stable across runs.

/// Output spatial extent of a strided convolution.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Row-major GEMM `C = alpha * A x B + beta * C` with explicit strides per
/// operand, so transposed views cost nothing. Panics if any stride/shape
/// combination would index out of bounds.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "A operand out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "B operand out of bounds");
    assert!(m * n <= c.len(), "C operand out of bounds");
    // Safety: the extents asserted above cover every index the kernel reads
    // or writes; the output slice is row-major contiguous.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `input` (channels x height x width) into a column matrix of
/// shape (channels * kernel^2) x (out_h * out_w); samples that fall outside
/// the padded input contribute zeros.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    input: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    col: &mut [f64],
) {
    let out_h = conv_out_extent(height, kernel, stride, pad);
    let out_w = conv_out_extent(width, kernel, stride, pad);
    let ohw = out_h * out_w;
    assert_eq!(input.len(), channels * height * width);
    assert_eq!(col.len(), channels * kernel * kernel * ohw);
    for c in 0..channels {
        let plane = &input[c * height * width..(c + 1) * height * width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= height as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * width..(iy as usize + 1) * width];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= width as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-adds column-matrix gradients back onto
/// the input gradient (which must be pre-zeroed by the caller).
#[allow(clippy::too_many_arguments)]
pub fn col2im_add(
    col: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    input_grad: &mut [f64],
) {
    let out_h = conv_out_extent(height, kernel, stride, pad);
    let out_w = conv_out_extent(width, kernel, stride, pad);
    let ohw = out_h * out_w;
    assert_eq!(input_grad.len(), channels * height * width);
    assert_eq!(col.len(), channels * kernel * kernel * ohw);
    for c in 0..channels {
        let plane = &mut input_grad[c * height * width..(c + 1) * height * width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &col[row * ohw..(row + 1) * ohw];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                    let src_row = &src[oy * out_w..(oy + 1) * out_w];
                    for (ox, s) in src_row.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < width as isize {
                            dst_row[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward on an unfolded input:
/// `out[oc][p] = sum_r kernel[oc][r] * col[r][p] + bias[oc]`.
pub fn conv_forward(
    col: &[f64],
    kernel: &[f64],
    bias: &[f64],
    out_channels: usize,
    patch_len: usize,
    positions: usize,
    out: &mut [f64],
) {
    gemm_strided(out_channels, patch_len, positions, kernel, patch_len, 1, col, positions, 1, 0.0, out);
    for (o, b) in bias.iter().enumerate() {
        for v in &mut out[o * positions..(o + 1) * positions] {
            *v += b;
        }
    }
}

/// Accumulates kernel and bias gradients:
/// `gkernel += gout x col^T`, `gbias[oc] += sum_p gout[oc][p]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_params(
    gout: &[f64],
    col: &[f64],
    out_channels: usize,
    patch_len: usize,
    positions: usize,
    gkernel: &mut [f64],
    gbias: &mut [f64],
) {
    gemm_strided(out_channels, positions, patch_len, gout, positions, 1, col, 1, positions, 1.0, gkernel);
    for (o, gb) in gbias.iter_mut().enumerate() {
        *gb += gout[o * positions..(o + 1) * positions].iter().sum::<f64>();
    }
}

/// Gradient with respect to the unfolded input: `gcol = kernel^T x gout`.
pub fn conv_backward_col(
    gout: &[f64],
    kernel: &[f64],
    out_channels: usize,
    patch_len: usize,
    positions: usize,
    gcol: &mut [f64],
) {
    gemm_strided(patch_len, out_channels, positions, kernel, 1, patch_len, gout, positions, 1, 0.0, gcol);
}

/// Elementwise tanh, in place.
pub fn tanh_inplace(buf: &mut [f64]) {
    for v in buf {
        *v = v.tanh();
    }
}

/// Backward through tanh given the forward *outputs* `y`:
/// `gx = gy * (1 - y^2)`, written over `gy`.
pub fn tanh_backward_inplace(y: &[f64], gy: &mut [f64]) {
    for (g, &yv) in gy.iter_mut().zip(y) {
        *g *= 1.0 - yv * yv;
    }
}

/// Global average pool over each channel plane of `hw` positions.
pub fn global_avg_pool(x: &[f64], channels: usize, hw: usize, out: &mut [f64]) {
    for c in 0..channels {
        out[c] = x[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64;
    }
}

/// Backward of the global average pool: spreads each channel gradient
/// uniformly over the plane (overwrites `gx`).
pub fn global_avg_pool_backward(gy: &[f64], channels: usize, hw: usize, gx: &mut [f64]) {
    for c in 0..channels {
        let g = gy[c] / hw as f64;
        gx[c * hw..(c + 1) * hw].fill(g);
    }
}

/// Dense layer forward: `y = W x + b` with `W` shaped (out, in) row-major.
pub fn dense_forward(x: &[f64], weight: &[f64], bias: &[f64], out_dim: usize, in_dim: usize, y: &mut [f64]) {
    for o in 0..out_dim {
        let row = &weight[o * in_dim..(o + 1) * in_dim];
        y[o] = bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

/// Dense layer backward: accumulates `gw += gy x^T`, `gb += gy`, and writes
/// `gx = W^T gy`.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f64],
    weight: &[f64],
    gy: &[f64],
    out_dim: usize,
    in_dim: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    gx: &mut [f64],
) {
    gx.fill(0.0);
    for o in 0..out_dim {
        let g = gy[o];
        gb[o] += g;
        let wrow = &weight[o * in_dim..(o + 1) * in_dim];
        let gwrow = &mut gw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            gwrow[i] += g * x[i];
            gx[i] += g * wrow[i];
        }
    }
}
