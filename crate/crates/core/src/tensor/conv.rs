//! Same-padding, stride-1 convolution kernels over `[w, n, c]` states.
//!
//! Kernel banks are laid out `[k_w, k_h, c_in, c_out]`. Out-of-bounds taps
//! read as zero. The blocked path walks taps in the same order as the
//! reference loop nest and accumulates each output element over
//! `(u, v, c)` in identical order, so both paths agree bit-for-bit.

use super::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub width: usize,
    pub len: usize,
    pub kw: usize,
    pub kh: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvGeometry {
    fn tap_range(dim: usize, offset: isize) -> (usize, usize) {
        // valid output indices y with 0 <= y + offset < dim
        let lo = if offset < 0 { (-offset) as usize } else { 0 };
        let hi = if offset > 0 {
            dim.saturating_sub(offset as usize)
        } else {
            dim
        };
        (lo, hi.max(lo))
    }

    fn offset(k: usize, tap: usize) -> isize {
        tap as isize - (k / 2) as isize
    }
}

/// Straight loop nest; the oracle the blocked kernel is checked against.
pub fn conv_reference<T: Real>(g: &ConvGeometry, s: &[T], kernel: &[T], out: &mut [T]) {
    let ConvGeometry {
        width,
        len,
        kw,
        kh,
        c_in,
        c_out,
    } = *g;
    for x in 0..width {
        for y in 0..len {
            for i in 0..c_out {
                let mut acc = T::zero();
                for du in 0..kw {
                    let sx = x as isize + ConvGeometry::offset(kw, du);
                    if sx < 0 || sx >= width as isize {
                        continue;
                    }
                    for dv in 0..kh {
                        let sy = y as isize + ConvGeometry::offset(kh, dv);
                        if sy < 0 || sy >= len as isize {
                            continue;
                        }
                        let base = (sx as usize * len + sy as usize) * c_in;
                        for c in 0..c_in {
                            acc += s[base + c] * kernel[((du * kh + dv) * c_in + c) * c_out + i];
                        }
                    }
                }
                out[(x * len + y) * c_out + i] = acc;
            }
        }
    }
}

/// Blocked forward convolution. `out` must be zeroed by the caller.
pub fn conv_forward<T: Real>(g: &ConvGeometry, s: &[T], kernel: &[T], out: &mut [T]) {
    let tap_size = g.c_in * g.c_out;
    for du in 0..g.kw {
        let ou = ConvGeometry::offset(g.kw, du);
        let (x0, x1) = ConvGeometry::tap_range(g.width, ou);
        for dv in 0..g.kh {
            let ov = ConvGeometry::offset(g.kh, dv);
            let (y0, y1) = ConvGeometry::tap_range(g.len, ov);
            if y1 <= y0 {
                continue;
            }
            let tap = &kernel[(du * g.kh + dv) * tap_size..][..tap_size];
            for x in x0..x1 {
                let sx = (x as isize + ou) as usize;
                let sy0 = (y0 as isize + ov) as usize;
                let a = &s[(sx * g.len + sy0) * g.c_in..];
                let o = &mut out[(x * g.len + y0) * g.c_out..];
                gemm_acc(y1 - y0, g.c_in, g.c_out, a, g.c_in, 1, tap, g.c_out, o, g.c_out);
            }
        }
    }
}

/// Accumulates the input gradient of [`conv_forward`] into `ds`.
pub fn conv_backward_input<T: Real>(g: &ConvGeometry, dout: &[T], kernel: &[T], ds: &mut [T]) {
    let tap_size = g.c_in * g.c_out;
    let mut tap_t = vec![T::zero(); tap_size];
    for du in 0..g.kw {
        let ou = ConvGeometry::offset(g.kw, du);
        let (x0, x1) = ConvGeometry::tap_range(g.width, ou);
        for dv in 0..g.kh {
            let ov = ConvGeometry::offset(g.kh, dv);
            let (y0, y1) = ConvGeometry::tap_range(g.len, ov);
            if y1 <= y0 {
                continue;
            }
            let tap = &kernel[(du * g.kh + dv) * tap_size..][..tap_size];
            for c in 0..g.c_in {
                for i in 0..g.c_out {
                    tap_t[i * g.c_in + c] = tap[c * g.c_out + i];
                }
            }
            for x in x0..x1 {
                let sx = (x as isize + ou) as usize;
                let sy0 = (y0 as isize + ov) as usize;
                let a = &dout[(x * g.len + y0) * g.c_out..];
                let o = &mut ds[(sx * g.len + sy0) * g.c_in..];
                gemm_acc(y1 - y0, g.c_out, g.c_in, a, g.c_out, 1, &tap_t, g.c_in, o, g.c_in);
            }
        }
    }
}

/// Accumulates the kernel gradient of [`conv_forward`] into `dk`.
pub fn conv_backward_kernel<T: Real>(g: &ConvGeometry, s: &[T], dout: &[T], dk: &mut [T]) {
    let tap_size = g.c_in * g.c_out;
    for du in 0..g.kw {
        let ou = ConvGeometry::offset(g.kw, du);
        let (x0, x1) = ConvGeometry::tap_range(g.width, ou);
        for dv in 0..g.kh {
            let ov = ConvGeometry::offset(g.kh, dv);
            let (y0, y1) = ConvGeometry::tap_range(g.len, ov);
            if y1 <= y0 {
                continue;
            }
            let tap = &mut dk[(du * g.kh + dv) * tap_size..][..tap_size];
            for x in x0..x1 {
                let sx = (x as isize + ou) as usize;
                let sy0 = (y0 as isize + ov) as usize;
                let a = &s[(sx * g.len + sy0) * g.c_in..];
                let b = &dout[(x * g.len + y0) * g.c_out..];
                // dk[c, i] += sum_r s[r, c] * dout[r, i]
                gemm_acc(g.c_in, y1 - y0, g.c_out, a, 1, g.c_in, b, g.c_out, tap, g.c_out);
            }
        }
    }
}

const BLOCK_ROWS: usize = 4;
const BLOCK_COLS: usize = 8;

/// `out[r, j] += sum_k a[r, k] * b[k, j]` with explicit strides, summing over
/// `k` in ascending order for every output element.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn gemm_acc<T: Real>(
    rows: usize,
    depth: usize,
    cols: usize,
    a: &[T],
    a_rs: usize,
    a_cs: usize,
    b: &[T],
    b_rs: usize,
    out: &mut [T],
    out_rs: usize,
) {
    let mut r = 0;
    while r + BLOCK_ROWS <= rows {
        let mut j = 0;
        while j + BLOCK_COLS <= cols {
            let mut acc = [[T::zero(); BLOCK_COLS]; BLOCK_ROWS];
            for (rr, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(r + rr) * out_rs + j..][..BLOCK_COLS]);
            }
            for k in 0..depth {
                let brow: &[T; BLOCK_COLS] = b[k * b_rs + j..][..BLOCK_COLS]
                    .try_into()
                    .expect("block");
                for (rr, row) in acc.iter_mut().enumerate() {
                    let av = a[(r + rr) * a_rs + k * a_cs];
                    for jj in 0..BLOCK_COLS {
                        row[jj] += av * brow[jj];
                    }
                }
            }
            for (rr, row) in acc.iter().enumerate() {
                out[(r + rr) * out_rs + j..][..BLOCK_COLS].copy_from_slice(row);
            }
            j += BLOCK_COLS;
        }
        for rr in r..r + BLOCK_ROWS {
            gemm_row_tail(rr, j, depth, cols, a, a_rs, a_cs, b, b_rs, out, out_rs);
        }
        r += BLOCK_ROWS;
    }
    for rr in r..rows {
        let mut j = 0;
        while j + BLOCK_COLS <= cols {
            let mut acc = [T::zero(); BLOCK_COLS];
            acc.copy_from_slice(&out[rr * out_rs + j..][..BLOCK_COLS]);
            for k in 0..depth {
                let brow: &[T; BLOCK_COLS] = b[k * b_rs + j..][..BLOCK_COLS]
                    .try_into()
                    .expect("block");
                let av = a[rr * a_rs + k * a_cs];
                for jj in 0..BLOCK_COLS {
                    acc[jj] += av * brow[jj];
                }
            }
            out[rr * out_rs + j..][..BLOCK_COLS].copy_from_slice(&acc);
            j += BLOCK_COLS;
        }
        gemm_row_tail(rr, j, depth, cols, a, a_rs, a_cs, b, b_rs, out, out_rs);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm_row_tail<T: Real>(
    r: usize,
    j0: usize,
    depth: usize,
    cols: usize,
    a: &[T],
    a_rs: usize,
    a_cs: usize,
    b: &[T],
    b_rs: usize,
    out: &mut [T],
    out_rs: usize,
) {
    for j in j0..cols {
        let mut acc = out[r * out_rs + j];
        for k in 0..depth {
            acc += a[r * a_rs + k * a_cs] * b[k * b_rs + j];
        }
        out[r * out_rs + j] = acc;
    }
}
