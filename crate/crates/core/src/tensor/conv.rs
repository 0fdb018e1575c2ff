//! Grouped 2-d convolution (im2col + gemm) and the 1-d cross-channel
//! convolution used by channel attention. Bias is added by the caller.

use super::{Arr, Var};
use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Ix2, Ix4, IxDyn};

pub fn conv2d_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= k, "kernel larger than padded input");
    (input + 2 * pad - k) / stride + 1
}

/// `(C·kh·kw, N·Ho·Wo)` patch matrix; out-of-bounds taps read as zero.
fn im2col(
    x: &ArrayView4<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut cols = Array2::<f64>::zeros((c * kh * kw, n * ho * wo));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let mut cols_row = cols.row_mut(row);
                for ni in 0..n {
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ni * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols_row[base + ox] = x[[ni, ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch-matrix gradients back to image
/// positions.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &ArrayView2<f64>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array4<f64> {
    let mut x = Array4::<f64>::zeros((n, c, h, w));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let cols_row = cols.row(row);
                for ni in 0..n {
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ni * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            x[[ni, ci, iy as usize, ix as usize]] += cols_row[base + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Forward pass shared by the op and its weight-gradient recomputation.
fn conv2d_forward(
    x: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Array4<f64> {
    let (n, cin, h, wd) = x.dim();
    let (cout, cg, kh, kw) = w.dim();
    assert_eq!(cin % groups, 0, "input channels not divisible by groups");
    assert_eq!(cout % groups, 0, "output channels not divisible by groups");
    assert_eq!(cg, cin / groups, "weight channel dim mismatch");
    let (ho, wo) = (
        conv2d_out_dim(h, kh, stride, pad),
        conv2d_out_dim(wd, kw, stride, pad),
    );
    let og = cout / groups;
    let mut out = Array4::<f64>::zeros((n, cout, ho, wo));
    for g in 0..groups {
        let xg = x.slice(ndarray::s![.., g * cg..(g + 1) * cg, .., ..]);
        let cols = im2col(&xg, kh, kw, stride, pad, ho, wo);
        let wg = w
            .slice(ndarray::s![g * og..(g + 1) * og, .., .., ..])
            .to_owned()
            .into_shape_with_order((og, cg * kh * kw))
            .unwrap();
        let prod = wg.dot(&cols); // (og, n*ho*wo)
        let prod = prod
            .into_shape_with_order((og, n, ho, wo))
            .unwrap()
            .permuted_axes([1, 0, 2, 3]);
        out.slice_mut(ndarray::s![.., g * og..(g + 1) * og, .., ..])
            .assign(&prod);
    }
    out
}

impl<'t> Var<'t> {
    /// Grouped 2-d convolution, NCHW. Weight layout `(Cout, Cin/g, kh, kw)`.
    /// No bias here — add it with a broadcast add so its gradient is trivial.
    pub fn conv2d(&self, weight: &Var<'t>, stride: usize, pad: usize, groups: usize) -> Var<'t> {
        self.same_tape(weight);
        let x = self.value();
        let w = weight.value();
        let xv = x.view().into_dimensionality::<Ix4>().expect("conv2d input NCHW");
        let wv = w.view().into_dimensionality::<Ix4>().expect("conv2d weight 4-d");
        let out = conv2d_forward(&xv, &wv, stride, pad, groups);
        let (i, j) = (self.index(), weight.index());
        let (xc, wc) = (x.clone(), w.clone());
        self.make(
            out.into_dyn(),
            Box::new(move |g, sink| {
                let xv = xc.view().into_dimensionality::<Ix4>().unwrap();
                let wv = wc.view().into_dimensionality::<Ix4>().unwrap();
                let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                let (n, cin, h, wd) = xv.dim();
                let (cout, cg, kh, kw) = wv.dim();
                let (_, _, ho, wo) = gv.dim();
                let og = cout / groups;
                let mut dx = Array4::<f64>::zeros((n, cin, h, wd));
                let mut dw = Array4::<f64>::zeros((cout, cg, kh, kw));
                for gi in 0..groups {
                    let xg = xv.slice(ndarray::s![.., gi * cg..(gi + 1) * cg, .., ..]);
                    // Patch matrix is recomputed rather than stored across the
                    // whole forward pass.
                    let cols = im2col(&xg, kh, kw, stride, pad, ho, wo);
                    let gg = gv
                        .slice(ndarray::s![.., gi * og..(gi + 1) * og, .., ..])
                        .permuted_axes([1, 0, 2, 3])
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((og, n * ho * wo))
                        .unwrap();
                    let dwg = gg.dot(&cols.t()); // (og, cg*kh*kw)
                    dw.slice_mut(ndarray::s![gi * og..(gi + 1) * og, .., .., ..])
                        .assign(&dwg.into_shape_with_order((og, cg, kh, kw)).unwrap());
                    let wg = wv
                        .slice(ndarray::s![gi * og..(gi + 1) * og, .., .., ..])
                        .to_owned()
                        .into_shape_with_order((og, cg * kh * kw))
                        .unwrap();
                    let dcols = wg.t().dot(&gg); // (cg*kh*kw, n*ho*wo)
                    let dxg = col2im(&dcols.view(), n, cg, h, wd, kh, kw, stride, pad, ho, wo);
                    dx.slice_mut(ndarray::s![.., gi * cg..(gi + 1) * cg, .., ..])
                        .assign(&dxg);
                }
                sink(i, dx.into_dyn());
                sink(j, dw.into_dyn());
            }),
        )
    }

    /// 1-d convolution across a length axis: input `(N, L)`, weight `(k,)`
    /// with odd `k`, zero padding `k/2`. Output `(N, L)`.
    pub fn conv1d_seq(&self, weight: &Var<'t>) -> Var<'t> {
        self.same_tape(weight);
        let x = self.value();
        let w = weight.value();
        let xv = x.view().into_dimensionality::<Ix2>().expect("conv1d input (N, L)");
        let k = w.len();
        assert_eq!(k % 2, 1, "conv1d kernel must be odd");
        let half = k / 2;
        let (n, l) = xv.dim();
        let wf: Vec<f64> = w.iter().copied().collect();
        let mut out = Array2::<f64>::zeros((n, l));
        for ni in 0..n {
            for idx in 0..l {
                let mut acc = 0.0;
                for (j, &wj) in wf.iter().enumerate() {
                    let p = idx as isize + j as isize - half as isize;
                    if p >= 0 && (p as usize) < l {
                        acc += wj * xv[[ni, p as usize]];
                    }
                }
                out[[ni, idx]] = acc;
            }
        }
        let (i, jw) = (self.index(), weight.index());
        let xc = x.clone();
        self.make(
            out.into_dyn(),
            Box::new(move |g, sink| {
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                let xv = xc.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = Array2::<f64>::zeros((n, l));
                let mut dw = vec![0.0; k];
                for ni in 0..n {
                    for idx in 0..l {
                        let go = gv[[ni, idx]];
                        if go == 0.0 {
                            continue;
                        }
                        for (j, &wj) in wf.iter().enumerate() {
                            let p = idx as isize + j as isize - half as isize;
                            if p >= 0 && (p as usize) < l {
                                dx[[ni, p as usize]] += wj * go;
                                dw[j] += xv[[ni, p as usize]] * go;
                            }
                        }
                    }
                }
                sink(i, dx.into_dyn());
                sink(jw, Arr::from_shape_vec(IxDyn(&[k]), dw).unwrap());
            }),
        )
    }
}
