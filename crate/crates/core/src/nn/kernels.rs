//! Raw compute kernels: im2col convolution on top of `sgemm`, pooling and
//! resampling. These operate on slices; autodiff bookkeeping lives in
//! [`super::graph`].

use super::Tensor;

/// `c = alpha·op(a)·op(b) + beta·c` for row-major operands, where `op(a)` is
/// `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    beta: f32,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the strided extents computed above.
    unsafe {
        matrixmultiply::sgemm(
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
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let p = g.col_cols();
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let p = g.col_cols();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward pass. When `keep_cols` is set, the per-sample im2col
/// buffers are returned for the backward pass.
pub(crate) fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    g: &ConvGeom,
    keep_cols: bool,
) -> (Tensor, Vec<f32>) {
    let n = x.batch();
    let (rows, p) = (g.col_rows(), g.col_cols());
    let mut out = Tensor::zeros([n, g.c_out, g.h_out, g.w_out]);
    let mut kept = if keep_cols && !g.is_pointwise() {
        vec![0f32; n * rows * p]
    } else {
        Vec::new()
    };
    let mut scratch = if !keep_cols && !g.is_pointwise() {
        vec![0f32; rows * p]
    } else {
        Vec::new()
    };
    for i in 0..n {
        let o = out.sample_mut(i);
        if let Some(b) = bias {
            for (co, &bv) in b.data().iter().enumerate() {
                o[co * p..(co + 1) * p].fill(bv);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        if g.is_pointwise() {
            gemm(g.c_out, rows, p, weight.data(), false, x.sample(i), false, o, beta);
        } else {
            let cols: &mut [f32] = if keep_cols {
                &mut kept[i * rows * p..(i + 1) * rows * p]
            } else {
                &mut scratch
            };
            im2col(x.sample(i), g, cols);
            gemm(g.c_out, rows, p, weight.data(), false, cols, false, o, beta);
        }
    }
    (out, kept)
}

/// Convolution backward pass. Returns `(dx, dw, db)`, each only when requested.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    cols: &[f32],
    g: &ConvGeom,
    dout: &Tensor,
    want: (bool, bool, bool),
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let n = x.batch();
    let (rows, p) = (g.col_rows(), g.col_cols());
    let mut dx = want.0.then(|| Tensor::zeros(x.shape()));
    let mut dw = want.1.then(|| Tensor::zeros(weight.shape()));
    let mut db = want.2.then(|| Tensor::zeros([g.c_out, 1, 1, 1]));
    let mut dcols = if want.0 && !g.is_pointwise() {
        vec![0f32; rows * p]
    } else {
        Vec::new()
    };
    for i in 0..n {
        let d = dout.sample(i);
        let col: &[f32] = if g.is_pointwise() {
            x.sample(i)
        } else {
            &cols[i * rows * p..(i + 1) * rows * p]
        };
        if let Some(dw) = dw.as_mut() {
            // dW (c_out × rows) += dout (c_out × p) · colsᵀ (p × rows)
            gemm(g.c_out, p, rows, d, false, col, true, dw.data_mut(), 1.0);
        }
        if let Some(db) = db.as_mut() {
            for (co, acc) in db.data_mut().iter_mut().enumerate() {
                *acc += d[co * p..(co + 1) * p].iter().sum::<f32>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            if g.is_pointwise() {
                gemm(rows, g.c_out, p, weight.data(), true, d, false, dx.sample_mut(i), 0.0);
            } else {
                gemm(rows, g.c_out, p, weight.data(), true, d, false, &mut dcols, 0.0);
                col2im(&dcols, g, dx.sample_mut(i));
            }
        }
    }
    (dx, dw, db)
}

/// Per-axis sparse resampling taps (`taps[out] = [(src, weight)]`).
pub type Taps = Vec<Vec<(usize, f32)>>;

pub(crate) fn resample_forward(x: &Tensor, rows: &Taps, cols: &Taps) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (rows.len(), cols.len());
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut tmp = vec![0f32; h * wo];
    for plane_idx in 0..n * c {
        let src = &x.data()[plane_idx * h * w..(plane_idx + 1) * h * w];
        for y in 0..h {
            let srow = &src[y * w..(y + 1) * w];
            for (ox, taps) in cols.iter().enumerate() {
                tmp[y * wo + ox] = taps.iter().map(|&(sx, wt)| wt * srow[sx]).sum();
            }
        }
        let dst = &mut out.data_mut()[plane_idx * ho * wo..(plane_idx + 1) * ho * wo];
        for (oy, taps) in rows.iter().enumerate() {
            let drow = &mut dst[oy * wo..(oy + 1) * wo];
            for &(sy, wt) in taps {
                for (d, s) in drow.iter_mut().zip(&tmp[sy * wo..(sy + 1) * wo]) {
                    *d += wt * s;
                }
            }
        }
    }
    out
}

pub(crate) fn resample_backward(dout: &Tensor, in_shape: [usize; 4], rows: &Taps, cols: &Taps) -> Tensor {
    let [n, c, h, w] = in_shape;
    let (ho, wo) = (rows.len(), cols.len());
    let mut dx = Tensor::zeros(in_shape);
    let mut tmp = vec![0f32; h * wo];
    for plane_idx in 0..n * c {
        tmp.fill(0.0);
        let d = &dout.data()[plane_idx * ho * wo..(plane_idx + 1) * ho * wo];
        for (oy, taps) in rows.iter().enumerate() {
            for &(sy, wt) in taps {
                for (t, g) in tmp[sy * wo..(sy + 1) * wo].iter_mut().zip(&d[oy * wo..(oy + 1) * wo]) {
                    *t += wt * g;
                }
            }
        }
        let dst = &mut dx.data_mut()[plane_idx * h * w..(plane_idx + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in cols.iter().enumerate() {
                let g = tmp[y * wo + ox];
                for &(sx, wt) in taps {
                    dst[y * w + sx] += wt * g;
                }
            }
        }
    }
    dx
}

pub fn area_taps_f32(n_in: usize, n_out: usize) -> Taps {
    crate::imaging::area_taps(n_in, n_out)
        .into_iter()
        .map(|t| t.into_iter().map(|(i, w)| (i, w as f32)).collect())
        .collect()
}

/// Bilinear taps matching the half-pixel-centre convention (`align_corners = false`).
pub fn bilinear_taps(n_in: usize, n_out: usize) -> Taps {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let f = (src - i0 as f64) as f32;
            if i0 == i1 || f == 0.0 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - f), (i1, f)]
            }
        })
        .collect()
}

pub(crate) fn upsample_nearest(x: &Tensor, f: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h * f, w * f);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            let srow = &src[(oy / f) * w..(oy / f + 1) * w];
            for (ox, d) in dst[oy * wo..(oy + 1) * wo].iter_mut().enumerate() {
                *d = srow[ox / f];
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest_backward(dout: &Tensor, f: usize) -> Tensor {
    let [n, c, ho, wo] = dout.shape();
    let (h, w) = (ho / f, wo / f);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for p in 0..n * c {
        let src = &dout.data()[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[(oy / f) * w + ox / f] += src[oy * wo + ox];
            }
        }
    }
    dx
}

/// 2×2 max pooling, stride 2, floor mode.
pub(crate) fn max_pool2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let (y, xx) = (2 * oy, 2 * ox);
                dst[oy * wo + ox] = src[y * w + xx]
                    .max(src[y * w + xx + 1])
                    .max(src[(y + 1) * w + xx])
                    .max(src[(y + 1) * w + xx + 1]);
            }
        }
    }
    out
}
