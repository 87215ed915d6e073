//! Per-sample kernels. Summation order is fixed, so every kernel is
//! bitwise deterministic.

/// Dot product with eight independent accumulators.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Unfolds a `[channels, side, side]` input into a `[channels * 9, side * side]`
/// patch matrix for a same-padded 3x3 convolution.
pub(crate) fn im2col(input: &[f64], channels: usize, side: usize, col: &mut Vec<f64>) {
    let n = side * side;
    col.clear();
    col.resize(channels * 9 * n, 0.0);
    for c in 0..channels {
        let plane = &input[c * n..(c + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(c * 9 + ky * 3 + kx) * n..][..n];
                for y in 0..side {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * side..][..side];
                    let dst = &mut row[y * side..][..side];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..side - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..side - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im(dcol: &[f64], channels: usize, side: usize, dinput: &mut [f64]) {
    let n = side * side;
    dinput.fill(0.0);
    for c in 0..channels {
        let plane = &mut dinput[c * n..(c + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[(c * 9 + ky * 3 + kx) * n..][..n];
                for y in 0..side {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * side..][..side];
                    let src = &row[y * side..][..side];
                    match kx {
                        0 => axpy(&mut dst[..side - 1], 1.0, &src[1..]),
                        1 => axpy(dst, 1.0, src),
                        _ => axpy(&mut dst[1..], 1.0, &src[..side - 1]),
                    }
                }
            }
        }
    }
}

/// `out[o, :] = bias[o] + sum_p w[o, p] * col[p, :]`
pub(crate) fn conv_forward(
    w: &[f64],
    bias: &[f64],
    col: &[f64],
    k: usize,
    n: usize,
    out: &mut Vec<f64>,
) {
    let cout = bias.len();
    out.clear();
    out.resize(cout * n, 0.0);
    for o in 0..cout {
        let orow = &mut out[o * n..][..n];
        orow.fill(bias[o]);
        let wrow = &w[o * k..][..k];
        for (p, &a) in wrow.iter().enumerate() {
            axpy(orow, a, &col[p * n..][..n]);
        }
    }
}

/// Accumulates weight and bias gradients; writes the patch-matrix gradient
/// into `dcol` when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    w: &[f64],
    col: &[f64],
    dout: &[f64],
    k: usize,
    n: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dcol: Option<&mut Vec<f64>>,
) {
    let cout = db.len();
    for o in 0..cout {
        let drow = &dout[o * n..][..n];
        db[o] += drow.iter().sum::<f64>();
        let dwrow = &mut dw[o * k..][..k];
        for (p, g) in dwrow.iter_mut().enumerate() {
            *g += dot(drow, &col[p * n..][..n]);
        }
    }
    if let Some(dcol) = dcol {
        dcol.clear();
        dcol.resize(k * n, 0.0);
        for o in 0..cout {
            let drow = &dout[o * n..][..n];
            for p in 0..k {
                axpy(&mut dcol[p * n..][..n], w[o * k + p], drow);
            }
        }
    }
}

/// 2x2 stride-2 max pool over `[channels, side, side]`. Records the flat input
/// index of each winner (first maximum on ties).
pub(crate) fn maxpool_forward(
    input: &[f64],
    channels: usize,
    side: usize,
    out: &mut Vec<f64>,
    argmax: &mut Vec<u32>,
) {
    let half = side / 2;
    out.clear();
    argmax.clear();
    out.reserve(channels * half * half);
    argmax.reserve(channels * half * half);
    for c in 0..channels {
        let base = c * side * side;
        for y in 0..half {
            for x in 0..half {
                let i0 = base + 2 * y * side + 2 * x;
                let mut best = i0;
                for i in [i0 + 1, i0 + side, i0 + side + 1] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                argmax.push(best as u32);
            }
        }
    }
}

pub(crate) fn maxpool_backward(dout: &[f64], argmax: &[u32], dinput: &mut [f64]) {
    dinput.fill(0.0);
    for (&g, &i) in dout.iter().zip(argmax) {
        dinput[i as usize] += g;
    }
}
