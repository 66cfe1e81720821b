//! Stride-1, zero-padded 2-D cross-correlation via row-blocked im2col + GEMM.

use super::Real;

/// Upper bound on im2col buffer elements; larger images are processed in
/// horizontal bands.
const MAX_COLS: usize = 1 << 22;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn band_rows(&self) -> usize {
        let per_row = self.patch() * self.width;
        (MAX_COLS / per_row.max(1)).clamp(1, self.height.max(1))
    }
}

/// Fills `cols` (`patch × rows*width`) for output rows `r0..r0+rows` of one image.
fn im2col<T: Real>(g: &ConvGeometry, image: &[T], r0: usize, rows: usize, cols: &mut [T]) {
    let (h, w, k, p) = (
        g.height as isize,
        g.width as isize,
        g.kernel,
        g.padding as isize,
    );
    let span = rows * g.width;
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * span..(row + 1) * span];
                for oy in 0..rows {
                    let iy = (r0 + oy) as isize + ky as isize - p;
                    let out = &mut dst[oy * g.width..(oy + 1) * g.width];
                    if iy < 0 || iy >= h {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let shift = kx as isize - p;
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = ox as isize + shift;
                        *o = if ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the input-gradient image (adjoint of [`im2col`]).
fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], r0: usize, rows: usize, image: &mut [T]) {
    let (h, w, k, p) = (
        g.height as isize,
        g.width as isize,
        g.kernel,
        g.padding as isize,
    );
    let span = rows * g.width;
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * span..(row + 1) * span];
                for oy in 0..rows {
                    let iy = (r0 + oy) as isize + ky as isize - p;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let shift = kx as isize - p;
                    for (ox, &v) in src[oy * g.width..(oy + 1) * g.width].iter().enumerate() {
                        let ix = ox as isize + shift;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    forward_banded(g, g.band_rows(), input, weight, bias)
}

fn forward_banded<T: Real>(
    g: &ConvGeometry,
    band: usize,
    input: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let hw = g.height * g.width;
    let patch = g.patch();
    let mut out = vec![T::zero(); g.batch * g.out_channels * hw];
    let mut cols = vec![T::zero(); patch * band * g.width];
    for n in 0..g.batch {
        let image = &input[n * g.in_channels * hw..(n + 1) * g.in_channels * hw];
        let dst = &mut out[n * g.out_channels * hw..(n + 1) * g.out_channels * hw];
        for (co, plane) in dst.chunks_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        let mut r0 = 0;
        while r0 < g.height {
            let rows = band.min(g.height - r0);
            let span = rows * g.width;
            im2col(g, image, r0, rows, &mut cols[..patch * span]);
            // SAFETY: weight is out_channels×patch, cols is patch×span, and the
            // destination band lies inside `dst` with row stride hw.
            unsafe {
                T::gemm(
                    g.out_channels,
                    patch,
                    span,
                    T::one(),
                    weight.as_ptr(),
                    patch as isize,
                    1,
                    cols.as_ptr(),
                    span as isize,
                    1,
                    T::one(),
                    dst.as_mut_ptr().add(r0 * g.width),
                    hw as isize,
                    1,
                );
            }
            r0 += rows;
        }
    }
    out
}

/// Gradients of a convolution with respect to input, weight and bias, given
/// the upstream gradient `grad_out`.
pub(crate) fn backward<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    backward_banded(g, g.band_rows(), input, weight, grad_out)
}

fn backward_banded<T: Real>(
    g: &ConvGeometry,
    band: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = g.height * g.width;
    let patch = g.patch();
    let mut grad_in = vec![T::zero(); input.len()];
    let mut grad_w = vec![T::zero(); weight.len()];
    let mut grad_b = vec![T::zero(); g.out_channels];
    let mut cols = vec![T::zero(); patch * band * g.width];
    let mut dcols = vec![T::zero(); patch * band * g.width];
    for n in 0..g.batch {
        let image = &input[n * g.in_channels * hw..(n + 1) * g.in_channels * hw];
        let gout = &grad_out[n * g.out_channels * hw..(n + 1) * g.out_channels * hw];
        let gin = &mut grad_in[n * g.in_channels * hw..(n + 1) * g.in_channels * hw];
        for (co, plane) in gout.chunks(hw).enumerate() {
            grad_b[co] = grad_b[co] + plane.iter().copied().sum::<T>();
        }
        let mut r0 = 0;
        while r0 < g.height {
            let rows = band.min(g.height - r0);
            let span = rows * g.width;
            im2col(g, image, r0, rows, &mut cols[..patch * span]);
            // SAFETY: shapes as in `forward`; the transposes are expressed
            // through swapped strides and no output aliases an input.
            unsafe {
                // dW[co, p] += sum_s dY[co, s] * cols[p, s]
                T::gemm(
                    g.out_channels,
                    span,
                    patch,
                    T::one(),
                    gout.as_ptr().add(r0 * g.width),
                    hw as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    span as isize,
                    T::one(),
                    grad_w.as_mut_ptr(),
                    patch as isize,
                    1,
                );
                // dcols[p, s] = sum_co W[co, p] * dY[co, s]
                T::gemm(
                    patch,
                    g.out_channels,
                    span,
                    T::one(),
                    weight.as_ptr(),
                    1,
                    patch as isize,
                    gout.as_ptr().add(r0 * g.width),
                    hw as isize,
                    1,
                    T::zero(),
                    dcols.as_mut_ptr(),
                    span as isize,
                    1,
                );
            }
            col2im(g, &dcols[..patch * span], r0, rows, gin);
            r0 += rows;
        }
    }
    (grad_in, grad_w, grad_b)
}
