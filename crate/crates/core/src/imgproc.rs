//! Classical image operations on plain arrays: resampling, smoothing,
//! gradient/edge extraction, morphology, and an exact Euclidean distance
//! transform that also reports which site each pixel is nearest to.
//!
//! Conventions, used consistently by the data tooling and losses:
//! - images are `Array2<f64>` in `[0, 1]` (or binary `{0, 1}` masks);
//! - all filters use zero padding, i.e. the world outside the frame is
//!   background — a mask touching the border therefore has an edge there.

use ndarray::Array2;

/// Per-output-index `(lo, hi, frac)` taps for half-pixel bilinear scaling.
fn taps(in_dim: usize, out_dim: usize) -> Vec<(usize, usize, f64)> {
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

pub fn resize_bilinear(x: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let (y0, y1, fy) = ys[oy];
        let (x0, x1, fx) = xs[ox];
        (1.0 - fy) * (1.0 - fx) * x[[y0, x0]]
            + (1.0 - fy) * fx * x[[y0, x1]]
            + fy * (1.0 - fx) * x[[y1, x0]]
            + fy * fx * x[[y1, x1]]
    })
}

/// Nearest-neighbor resize; keeps binary masks binary.
pub fn resize_nearest(x: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let sy = (((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).round().max(0.0) as usize)
            .min(h - 1);
        let sx = (((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).round().max(0.0) as usize)
            .min(w - 1);
        x[[sy, sx]]
    })
}

/// Odd-sized normalized Gaussian kernel.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(size % 2, 1, "kernel size must be odd");
    let half = (size / 2) as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian blur with zero padding.
pub fn gaussian_blur(x: &Array2<f64>, size: usize, sigma: f64) -> Array2<f64> {
    let k = gaussian_kernel(size, sigma);
    let half = (size / 2) as isize;
    let (h, w) = x.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let sx = xx as isize + j as isize - half;
                if sx >= 0 && (sx as usize) < w {
                    acc += kv * x[[y, sx as usize]];
                }
            }
            tmp[[y, xx]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let sy = y as isize + j as isize - half;
                if sy >= 0 && (sy as usize) < h {
                    acc += kv * tmp[[sy as usize, xx]];
                }
            }
            out[[y, xx]] = acc;
        }
    }
    out
}

/// 3x3 Sobel derivatives `(gx, gy)` with zero padding.
pub fn sobel_gradients(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = x.dim();
    let at = |y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            x[[y as usize, xx as usize]]
        }
    };
    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    for y in 0..h as isize {
        for xx in 0..w as isize {
            let (a, b, c) = (at(y - 1, xx - 1), at(y - 1, xx), at(y - 1, xx + 1));
            let (d, f) = (at(y, xx - 1), at(y, xx + 1));
            let (g, hh, i) = (at(y + 1, xx - 1), at(y + 1, xx), at(y + 1, xx + 1));
            gx[[y as usize, xx as usize]] = (c + 2.0 * f + i) - (a + 2.0 * d + g);
            gy[[y as usize, xx as usize]] = (g + 2.0 * hh + i) - (a + 2.0 * b + c);
        }
    }
    (gx, gy)
}

/// Classic edge detector: Gaussian smoothing, Sobel gradients, thin ridges by
/// comparing along the gradient direction, then keep weak responses only when
/// they connect (8-way) to a strong one. Thresholds apply to the magnitude
/// normalized by its maximum.
pub fn canny(x: &Array2<f64>, low: f64, high: f64) -> Array2<f64> {
    let (h, w) = x.dim();
    let smoothed = gaussian_blur(x, 7, 1.0);
    let (gx, gy) = sobel_gradients(&smoothed);
    let mut mag = Array2::<f64>::zeros((h, w));
    let mut peak = 0.0_f64;
    for y in 0..h {
        for xx in 0..w {
            let m = (gx[[y, xx]].powi(2) + gy[[y, xx]].powi(2)).sqrt();
            mag[[y, xx]] = m;
            peak = peak.max(m);
        }
    }
    if peak <= 0.0 {
        return Array2::zeros((h, w));
    }
    mag.mapv_inplace(|m| m / peak);

    let get = |m: &Array2<f64>, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            m[[y as usize, xx as usize]]
        }
    };
    // Quantized-direction non-maximum suppression.
    let mut thin = Array2::<f64>::zeros((h, w));
    for y in 0..h as isize {
        for xx in 0..w as isize {
            let m = mag[[y as usize, xx as usize]];
            if m <= 0.0 {
                continue;
            }
            let angle = gy[[y as usize, xx as usize]]
                .atan2(gx[[y as usize, xx as usize]])
                .to_degrees()
                .rem_euclid(180.0);
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            if m >= get(&mag, y + dy, xx + dx) && m >= get(&mag, y - dy, xx - dx) {
                thin[[y as usize, xx as usize]] = m;
            }
        }
    }

    // Double threshold + hysteresis from strong seeds.
    let mut out = Array2::<f64>::zeros((h, w));
    let mut stack = Vec::new();
    for y in 0..h {
        for xx in 0..w {
            if thin[[y, xx]] >= high {
                out[[y, xx]] = 1.0;
                stack.push((y, xx));
            }
        }
    }
    while let Some((y, xx)) = stack.pop() {
        for dy in -1_isize..=1 {
            for dx in -1_isize..=1 {
                let (ny, nx) = (y as isize + dy, xx as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                if out[[ny, nx]] == 0.0 && thin[[ny, nx]] >= low {
                    out[[ny, nx]] = 1.0;
                    stack.push((ny, nx));
                }
            }
        }
    }
    out
}

/// Exact Euclidean distance transform. For every pixel, the distance to the
/// nearest site (`mask > 0`) and that site's coordinates. Among equidistant
/// sites the winner is the one with the smaller column, then the smaller row.
/// Pixels see distance 0 at sites; with no sites at all, distances are
/// infinite and the site map is `None`.
pub fn edt(mask: &Array2<f64>) -> (Array2<f64>, Array2<Option<(usize, usize)>>) {
    let (h, w) = mask.dim();
    // Nearest site row within each column, per (row, col).
    let mut col_site: Vec<Vec<Option<usize>>> = vec![vec![None; w]; h];
    for x in 0..w {
        let sites: Vec<usize> = (0..h).filter(|&y| mask[[y, x]] > 0.0).collect();
        if sites.is_empty() {
            continue;
        }
        for y in 0..h {
            let mut best: Option<(usize, usize)> = None; // (dist, row)
            for &sy in &sites {
                let d = sy.abs_diff(y);
                let better = match best {
                    None => true,
                    // Equidistant pair within a column: keep the smaller row.
                    Some((bd, br)) => d < bd || (d == bd && sy < br),
                };
                if better {
                    best = Some((d, sy));
                }
            }
            col_site[y][x] = best.map(|(_, r)| r);
        }
    }
    let mut dist = Array2::<f64>::from_elem((h, w), f64::INFINITY);
    let mut site = Array2::<Option<(usize, usize)>>::from_elem((h, w), None);
    for y in 0..h {
        for x in 0..w {
            let mut best_d2 = u64::MAX;
            let mut best: Option<(usize, usize)> = None;
            // Ascending column scan keeps the smallest column on ties.
            for (sx, maybe_row) in col_site[y].iter().enumerate() {
                if let Some(sy) = maybe_row {
                    let dx = sx.abs_diff(x) as u64;
                    let dy = sy.abs_diff(y) as u64;
                    let d2 = dx * dx + dy * dy;
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = Some((*sy, sx));
                    }
                }
            }
            if let Some(s) = best {
                dist[[y, x]] = (best_d2 as f64).sqrt();
                site[[y, x]] = Some(s);
            }
        }
    }
    (dist, site)
}

/// Binary dilation by a Euclidean disk of the given radius.
pub fn dilate_disk(mask: &Array2<f64>, radius: f64) -> Array2<f64> {
    let (dist, _) = edt(mask);
    dist.mapv(|d| if d <= radius { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk_mask(h: usize, w: usize, cy: f64, cx: f64, r: f64) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(y, x)| {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            if d <= r {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn gaussian_kernel_normalized_and_symmetric() {
        let k = gaussian_kernel(7, 1.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert!((k[i] - k[6 - i]).abs() < 1e-15);
        }
        assert!(k[3] > k[2] && k[2] > k[1] && k[1] > k[0]);
    }

    #[test]
    fn sobel_on_horizontal_ramp() {
        // f(x) = x: gx = 8 in the interior (kernel weight sum), gy = 0.
        let x = Array2::from_shape_fn((7, 7), |(_, c)| c as f64);
        let (gx, gy) = sobel_gradients(&x);
        assert_eq!(gx[[3, 3]], 8.0);
        assert_eq!(gy[[3, 3]], 0.0);
    }

    #[test]
    fn edt_matches_bruteforce_with_tiebreak() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        for case in 0..40 {
            let (h, w) = (rng.random_range(1..10), rng.random_range(1..10));
            let density = rng.random_range(0.0..0.5);
            let mask =
                Array2::from_shape_fn((h, w), |_| if rng.random_bool(density) { 1.0 } else { 0.0 });
            let (dist, site) = edt(&mask);
            // Brute force with the same lexicographic (d^2, col, row) rule.
            for y in 0..h {
                for x in 0..w {
                    let mut best: Option<(u64, usize, usize)> = None;
                    for sy in 0..h {
                        for sx in 0..w {
                            if mask[[sy, sx]] <= 0.0 {
                                continue;
                            }
                            let dx = sx.abs_diff(x) as u64;
                            let dy = sy.abs_diff(y) as u64;
                            let key = (dx * dx + dy * dy, sx, sy);
                            if best.map_or(true, |b| key < b) {
                                best = Some(key);
                            }
                        }
                    }
                    match best {
                        None => {
                            assert!(dist[[y, x]].is_infinite(), "case {case}");
                            assert!(site[[y, x]].is_none());
                        }
                        Some((d2, sx, sy)) => {
                            assert!(
                                (dist[[y, x]] - (d2 as f64).sqrt()).abs() < 1e-12,
                                "case {case} at ({y}, {x})"
                            );
                            assert_eq!(site[[y, x]], Some((sy, sx)), "case {case} at ({y}, {x})");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dilate_disk_grows_a_point() {
        let mut m = Array2::<f64>::zeros((9, 9));
        m[[4, 4]] = 1.0;
        let d = dilate_disk(&m, 2.0);
        assert_eq!(d[[4, 4]], 1.0);
        assert_eq!(d[[4, 6]], 1.0); // distance 2
        assert_eq!(d[[3, 5]], 1.0); // distance sqrt(2)
        assert_eq!(d[[4, 7]], 0.0); // distance 3
        assert_eq!(d[[2, 6]], 0.0); // distance 2*sqrt(2) > 2
        let area: f64 = d.sum();
        assert_eq!(area, 13.0); // |{(dy,dx): dy^2+dx^2 <= 4}|
    }

    #[test]
    fn canny_rings_a_disk() {
        let mask = disk_mask(31, 31, 15.0, 15.0, 8.0);
        let edges = canny(&mask, 0.1, 0.2);
        assert!(edges.sum() > 0.0, "no edges found");
        // Every edge pixel sits near the true boundary (radius 8 +- 2.5).
        for y in 0..31 {
            for x in 0..31 {
                if edges[[y, x]] > 0.0 {
                    let d = ((y as f64 - 15.0).powi(2) + (x as f64 - 15.0).powi(2)).sqrt();
                    assert!((d - 8.0).abs() < 2.5, "stray edge at ({y}, {x}), d = {d}");
                }
            }
        }
        // The ring covers most directions: compare count to circumference.
        let count = edges.sum();
        assert!(count > 2.0 * std::f64::consts::PI * 8.0 * 0.6, "ring too sparse: {count}");
    }

    #[test]
    fn canny_marks_frame_border_for_full_mask() {
        // All-ones mask: with a zero-padded world, the frame boundary is an
        // edge and must be detected.
        let mask = Array2::<f64>::from_elem((17, 17), 1.0);
        let edges = canny(&mask, 0.1, 0.2);
        assert!(edges.sum() > 0.0, "full-frame mask produced no border edge");
        let border: f64 = (0..17)
            .flat_map(|i| [(0usize, i), (16, i), (i, 0), (i, 16)])
            .map(|(y, x)| edges[[y, x]])
            .sum();
        assert!(border > 0.0, "edges missed the frame border");
        // And a uniform zero mask produces nothing at all.
        assert_eq!(canny(&Array2::zeros((17, 17)), 0.1, 0.2).sum(), 0.0);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let x = Array2::<f64>::from_elem((5, 7), 0.4);
        let y = resize_bilinear(&x, 11, 3);
        assert!(y.iter().all(|&v| (v - 0.4).abs() < 1e-12));
        let z = resize_nearest(&x, 4, 4);
        assert!(z.iter().all(|&v| v == 0.4));
    }
}
