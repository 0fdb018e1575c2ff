//! Static report images drawn directly into pixel buffers: loss curves,
//! metric bars, and side-by-side qualitative panels.

use crate::data::save_rgb;
use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use std::path::Path;

const MARGIN: usize = 12;
const BG: [f64; 3] = [1.0, 1.0, 1.0];
const AXIS: [f64; 3] = [0.55, 0.55, 0.55];
const LINE: [f64; 3] = [0.12, 0.35, 0.80];
const BAR: [f64; 3] = [0.10, 0.55, 0.50];

fn canvas(width: usize, height: usize) -> Array3<f64> {
    let mut c = Array3::zeros((3, height, width));
    for ch in 0..3 {
        c.index_axis_mut(ndarray::Axis(0), ch).fill(BG[ch]);
    }
    c
}

fn put(c: &mut Array3<f64>, y: usize, x: usize, color: [f64; 3]) {
    if y < c.shape()[1] && x < c.shape()[2] {
        for ch in 0..3 {
            c[(ch, y, x)] = color[ch];
        }
    }
}

fn vline(c: &mut Array3<f64>, x: usize, y0: usize, y1: usize, color: [f64; 3]) {
    for y in y0.min(y1)..=y0.max(y1) {
        put(c, y, x, color);
    }
}

fn frame(c: &mut Array3<f64>) {
    let (h, w) = (c.shape()[1], c.shape()[2]);
    for x in MARGIN..w - MARGIN {
        put(c, h - MARGIN, x, AXIS);
    }
    for y in MARGIN..=h - MARGIN {
        put(c, y, MARGIN, AXIS);
    }
}

/// A polyline of `series` over its index, min-max scaled to the plot area.
pub fn line_plot(path: &Path, series: &[f64], width: usize, height: usize) -> Result<()> {
    if series.is_empty() {
        return Err(Error::data("cannot plot an empty series"));
    }
    if width <= 2 * MARGIN + 2 || height <= 2 * MARGIN + 2 {
        return Err(Error::config("plot dimensions too small"));
    }
    let finite: Vec<f64> = series.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut c = canvas(width, height);
    frame(&mut c);
    let plot_w = width - 2 * MARGIN - 1;
    let plot_h = height - 2 * MARGIN - 1;
    let y_of = |v: f64| -> usize {
        let t = ((v - lo) / span).clamp(0.0, 1.0);
        height - MARGIN - 1 - (t * plot_h as f64).round() as usize
    };
    let sample = |x: usize| -> f64 {
        if series.len() == 1 {
            return series[0];
        }
        let t = x as f64 / plot_w as f64 * (series.len() - 1) as f64;
        let i = (t.floor() as usize).min(series.len() - 2);
        let f = t - i as f64;
        series[i] * (1.0 - f) + series[i + 1] * f
    };
    let mut prev = y_of(sample(0));
    for x in 0..=plot_w {
        let v = sample(x);
        if !v.is_finite() {
            continue;
        }
        let y = y_of(v);
        vline(&mut c, MARGIN + x, prev, y, LINE);
        prev = y;
    }
    save_rgb(path, &c)
}

/// Labeled bars for values in [0, 1]; out-of-range values are clamped.
pub fn bar_chart(path: &Path, values: &[(String, f64)], width: usize, height: usize) -> Result<()> {
    if values.is_empty() {
        return Err(Error::data("cannot plot an empty bar set"));
    }
    if width <= 2 * MARGIN + 2 * values.len() || height <= 2 * MARGIN + 2 {
        return Err(Error::config("plot dimensions too small"));
    }
    let mut c = canvas(width, height);
    frame(&mut c);
    let plot_w = width - 2 * MARGIN - 1;
    let plot_h = height - 2 * MARGIN - 1;
    let slot = plot_w / values.len();
    let bar_w = (slot * 3 / 4).max(1);
    for (i, (_, v)) in values.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        let top = height - MARGIN - 1 - (v * plot_h as f64).round() as usize;
        let x0 = MARGIN + 1 + i * slot + (slot - bar_w) / 2;
        for x in x0..x0 + bar_w {
            vline(&mut c, x, top, height - MARGIN - 1, BAR);
        }
    }
    save_rgb(path, &c)
}

/// Converts a grayscale map into three identical channels.
pub fn gray_panel(map: &Array2<f64>) -> Array3<f64> {
    let (h, w) = map.dim();
    let mut out = Array3::zeros((3, h, w));
    for ch in 0..3 {
        out.index_axis_mut(ndarray::Axis(0), ch).assign(map);
    }
    out
}

/// Joins same-height panels horizontally with thin white separators.
pub fn side_by_side(panels: &[Array3<f64>]) -> Result<Array3<f64>> {
    if panels.is_empty() {
        return Err(Error::data("no panels to compose"));
    }
    let h = panels[0].shape()[1];
    for p in panels {
        if p.shape()[0] != 3 || p.shape()[1] != h {
            return Err(Error::shape("panels must be rgb with a common height"));
        }
    }
    let sep = 2;
    let total_w: usize =
        panels.iter().map(|p| p.shape()[2]).sum::<usize>() + sep * (panels.len() - 1);
    let mut out = canvas(total_w, h);
    let mut x = 0;
    for p in panels {
        let w = p.shape()[2];
        out.slice_mut(ndarray::s![.., .., x..x + w]).assign(p);
        x += w + sep;
    }
    Ok(out)
}
