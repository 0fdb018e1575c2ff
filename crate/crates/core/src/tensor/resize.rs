//! Differentiable resampling: fixed bilinear rescaling and gather-style
//! bilinear sampling at arbitrary (learned) coordinates.

use super::Var;
use ndarray::{Array4, Ix4};

/// Per-output-index source taps for half-pixel-aligned bilinear scaling:
/// `src = (dst + 0.5) * in/out - 0.5`, taps clamped to the valid range.
fn bilinear_taps(in_dim: usize, out_dim: usize) -> Vec<(usize, usize, f64)> {
    let ratio = in_dim as f64 / out_dim as f64;
    (0..out_dim)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let i0 = src.floor();
            let frac = src - i0;
            let a = (i0.max(0.0) as usize).min(in_dim - 1);
            let b = ((i0 + 1.0).max(0.0) as usize).min(in_dim - 1);
            (a, b, frac)
        })
        .collect()
}

impl<'t> Var<'t> {
    /// Bilinear NCHW rescale with half-pixel centers (no corner alignment).
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Var<'t> {
        let x = self.value();
        let xv = x.view().into_dimensionality::<Ix4>().expect("resize input NCHW");
        let (n, c, h, w) = xv.dim();
        if (h, w) == (out_h, out_w) {
            let i = self.index();
            return self.make((*x).clone(), Box::new(move |g, sink| sink(i, g.clone())));
        }
        let ys = bilinear_taps(h, out_h);
        let xs = bilinear_taps(w, out_w);
        let mut out = Array4::<f64>::zeros((n, c, out_h, out_w));
        for ni in 0..n {
            for ci in 0..c {
                for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let v = (1.0 - fy) * (1.0 - fx) * xv[[ni, ci, y0, x0]]
                            + (1.0 - fy) * fx * xv[[ni, ci, y0, x1]]
                            + fy * (1.0 - fx) * xv[[ni, ci, y1, x0]]
                            + fy * fx * xv[[ni, ci, y1, x1]];
                        out[[ni, ci, oy, ox]] = v;
                    }
                }
            }
        }
        let i = self.index();
        self.make(
            out.into_dyn(),
            Box::new(move |g, sink| {
                let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = Array4::<f64>::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                                let go = gv[[ni, ci, oy, ox]];
                                dx[[ni, ci, y0, x0]] += (1.0 - fy) * (1.0 - fx) * go;
                                dx[[ni, ci, y0, x1]] += (1.0 - fy) * fx * go;
                                dx[[ni, ci, y1, x0]] += fy * (1.0 - fx) * go;
                                dx[[ni, ci, y1, x1]] += fy * fx * go;
                            }
                        }
                    }
                }
                sink(i, dx.into_dyn());
            }),
        )
    }

    /// Samples `self` `(N, C, H, W)` at `grid` `(N, Ho, Wo, 2)` positions.
    /// Grid holds normalized `(x, y)` in `[-1, 1]` with half-pixel centers;
    /// out-of-range positions clamp to the border, where the coordinate
    /// gradient saturates to zero.
    pub fn grid_sample(&self, grid: &Var<'t>) -> Var<'t> {
        self.same_tape(grid);
        let x = self.value();
        let gr = grid.value();
        let xv = x.view().into_dimensionality::<Ix4>().expect("grid_sample input NCHW");
        let gv = gr.view().into_dimensionality::<Ix4>().expect("grid (N, Ho, Wo, 2)");
        let (n, c, h, w) = xv.dim();
        let (gn, oh, ow, two) = gv.dim();
        assert_eq!(gn, n, "grid batch mismatch");
        assert_eq!(two, 2, "grid last dim must be (x, y)");

        // Unnormalize with half-pixel centers, clamp to the image, split into
        // integer cell and fraction. `sat` marks clamped coordinates.
        let unproject = |gc: f64, size: usize| -> (usize, usize, f64, bool) {
            let raw = ((gc + 1.0) * size as f64 - 1.0) / 2.0;
            let sat = raw < 0.0 || raw > (size - 1) as f64;
            let pos = raw.clamp(0.0, (size - 1) as f64);
            let i0 = (pos.floor() as usize).min(size.saturating_sub(2));
            let frac = if size == 1 { 0.0 } else { pos - i0 as f64 };
            (i0, (i0 + 1).min(size - 1), frac, sat)
        };

        let mut out = Array4::<f64>::zeros((n, c, oh, ow));
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (x0, x1, fx, _) = unproject(gv[[ni, oy, ox, 0]], w);
                    let (y0, y1, fy, _) = unproject(gv[[ni, oy, ox, 1]], h);
                    for ci in 0..c {
                        out[[ni, ci, oy, ox]] = (1.0 - fy) * (1.0 - fx) * xv[[ni, ci, y0, x0]]
                            + (1.0 - fy) * fx * xv[[ni, ci, y0, x1]]
                            + fy * (1.0 - fx) * xv[[ni, ci, y1, x0]]
                            + fy * fx * xv[[ni, ci, y1, x1]];
                    }
                }
            }
        }
        let (i, j) = (self.index(), grid.index());
        let (xc, gc) = (x.clone(), gr.clone());
        self.make(
            out.into_dyn(),
            Box::new(move |g, sink| {
                let xv = xc.view().into_dimensionality::<Ix4>().unwrap();
                let gvv = gc.view().into_dimensionality::<Ix4>().unwrap();
                let gov = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = Array4::<f64>::zeros((n, c, h, w));
                let mut dgrid = Array4::<f64>::zeros((n, oh, ow, 2));
                for ni in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let (x0, x1, fx, sx) = unproject(gvv[[ni, oy, ox, 0]], w);
                            let (y0, y1, fy, sy) = unproject(gvv[[ni, oy, ox, 1]], h);
                            let (mut dfx, mut dfy) = (0.0, 0.0);
                            for ci in 0..c {
                                let go = gov[[ni, ci, oy, ox]];
                                let v00 = xv[[ni, ci, y0, x0]];
                                let v01 = xv[[ni, ci, y0, x1]];
                                let v10 = xv[[ni, ci, y1, x0]];
                                let v11 = xv[[ni, ci, y1, x1]];
                                dx[[ni, ci, y0, x0]] += (1.0 - fy) * (1.0 - fx) * go;
                                dx[[ni, ci, y0, x1]] += (1.0 - fy) * fx * go;
                                dx[[ni, ci, y1, x0]] += fy * (1.0 - fx) * go;
                                dx[[ni, ci, y1, x1]] += fy * fx * go;
                                dfx += go * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                                dfy += go * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                            }
                            if !sx {
                                dgrid[[ni, oy, ox, 0]] = dfx * w as f64 / 2.0;
                            }
                            if !sy {
                                dgrid[[ni, oy, ox, 1]] = dfy * h as f64 / 2.0;
                            }
                        }
                    }
                }
                sink(i, dx.into_dyn());
                sink(j, dgrid.into_dyn());
            }),
        )
    }
}
