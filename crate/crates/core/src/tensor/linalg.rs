//! Matrix products, softmax, and the shared normalization core behind the
//! layer / group normalization layers.

use super::{Arr, Var};
use ndarray::{Array2, Axis, Ix2, Ix3, IxDyn};

/// Mean over `axes` with those axes kept as size 1.
fn mean_keepdims(x: &Arr, axes: &[usize]) -> Arr {
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut v = x.clone();
    let mut n = 1.0;
    for &a in &sorted {
        n *= v.shape()[a] as f64;
        v = v.sum_axis(Axis(a)).insert_axis(Axis(a));
    }
    v / n
}

fn as2(x: &Arr) -> ndarray::ArrayView2<'_, f64> {
    x.view().into_dimensionality::<Ix2>().expect("expected 2-d")
}

impl<'t> Var<'t> {
    /// `(m, k) x (k, n) -> (m, n)`
    pub fn matmul(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let a = self.value();
        let b = other.value();
        let (av, bv) = (as2(&a), as2(&b));
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dims");
        let out = av.dot(&bv).into_dyn();
        let (i, j) = (self.index(), other.index());
        let (ac, bc) = (a.clone(), b.clone());
        self.make(
            out,
            Box::new(move |g, sink| {
                let gv = as2(g);
                sink(i, gv.dot(&as2(&bc).t()).into_dyn());
                sink(j, as2(&ac).t().dot(&gv).into_dyn());
            }),
        )
    }

    /// Batched `(B, m, k) x (B, k, n) -> (B, m, n)`
    pub fn bmm(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let a = self.value();
        let b = other.value();
        let av = a.view().into_dimensionality::<Ix3>().expect("bmm lhs 3-d");
        let bv = b.view().into_dimensionality::<Ix3>().expect("bmm rhs 3-d");
        let (bsz, m, k) = av.dim();
        let (b2, k2, n) = bv.dim();
        assert_eq!(bsz, b2, "bmm batch");
        assert_eq!(k, k2, "bmm inner dims");
        let mut out = ndarray::Array3::<f64>::zeros((bsz, m, n));
        for t in 0..bsz {
            out.index_axis_mut(Axis(0), t)
                .assign(&av.index_axis(Axis(0), t).dot(&bv.index_axis(Axis(0), t)));
        }
        let (i, j) = (self.index(), other.index());
        let (ac, bc) = (a.clone(), b.clone());
        self.make(
            out.into_dyn(),
            Box::new(move |g, sink| {
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                let av = ac.view().into_dimensionality::<Ix3>().unwrap();
                let bv = bc.view().into_dimensionality::<Ix3>().unwrap();
                let mut da = ndarray::Array3::<f64>::zeros(av.dim());
                let mut db = ndarray::Array3::<f64>::zeros(bv.dim());
                for t in 0..bsz {
                    let gt = gv.index_axis(Axis(0), t);
                    da.index_axis_mut(Axis(0), t)
                        .assign(&gt.dot(&bv.index_axis(Axis(0), t).t()));
                    db.index_axis_mut(Axis(0), t)
                        .assign(&av.index_axis(Axis(0), t).t().dot(&gt));
                }
                sink(i, da.into_dyn());
                sink(j, db.into_dyn());
            }),
        )
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax_lastdim(&self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let l = *shape.last().expect("softmax needs rank >= 1");
        let rows = x.len() / l;
        let flat = x
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(&[rows, l]))
            .unwrap();
        let mut out = Array2::<f64>::zeros((rows, l));
        for (r, row) in flat.axis_iter(Axis(0)).enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                out[[r, c]] = e;
                s += e;
            }
            for c in 0..l {
                out[[r, c]] /= s;
            }
        }
        let yc = out.clone();
        let i = self.index();
        let out_nd = out.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap();
        let shape2 = shape.clone();
        self.make(
            out_nd,
            Box::new(move |g, sink| {
                let gf = g
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order(IxDyn(&[rows, l]))
                    .unwrap();
                let mut dx = Array2::<f64>::zeros((rows, l));
                for r in 0..rows {
                    let mut dot = 0.0;
                    for c in 0..l {
                        dot += gf[[r, c]] * yc[[r, c]];
                    }
                    for c in 0..l {
                        dx[[r, c]] = yc[[r, c]] * (gf[[r, c]] - dot);
                    }
                }
                sink(
                    i,
                    dx.into_dyn().into_shape_with_order(IxDyn(&shape2)).unwrap(),
                );
            }),
        )
    }

    /// Zero-mean unit-variance normalization over `axes` (biased variance,
    /// `eps` inside the square root). Affine transforms are applied by the
    /// caller so this single backward serves both layer and group variants.
    pub fn normalize_axes(&self, axes: &[usize], eps: f64) -> Var<'t> {
        let x = self.value();
        let mu = mean_keepdims(&x, axes);
        let centered = &*x - &mu;
        let var = mean_keepdims(&(&centered * &centered), axes);
        let sigma = var.mapv(|v| (v + eps).sqrt());
        let xhat = &centered / &sigma;
        let axes = axes.to_vec();
        let (xh, sg) = (xhat.clone(), sigma);
        let i = self.index();
        self.make(
            xhat,
            Box::new(move |g, sink| {
                let gm = mean_keepdims(g, &axes);
                let gxm = mean_keepdims(&(g * &xh), &axes);
                let dx = (g - &gm - &(&xh * &gxm)) / &sg;
                sink(i, dx);
            }),
        )
    }
}
