//! Shape manipulation: reshape, permute, broadcast, concat, slicing, and the
//! sub-pixel rearrangement used by learned upsampling.

use super::{Arr, Var};
use ndarray::{Axis, IxDyn, Slice};

impl<'t> Var<'t> {
    pub fn reshape(&self, to: &[usize]) -> Var<'t> {
        let x = self.value();
        let from = x.shape().to_vec();
        assert_eq!(
            x.len(),
            to.iter().product::<usize>(),
            "reshape {:?} -> {:?}",
            from,
            to
        );
        let v = x
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(to))
            .unwrap();
        let i = self.index();
        self.make(
            v,
            Box::new(move |g, sink| {
                let gg = g
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order(IxDyn(&from))
                    .unwrap();
                sink(i, gg);
            }),
        )
    }

    pub fn permute(&self, axes: &[usize]) -> Var<'t> {
        let x = self.value();
        let v = x.view().permuted_axes(axes.to_vec()).to_owned();
        let mut inv = vec![0usize; axes.len()];
        for (k, &a) in axes.iter().enumerate() {
            inv[a] = k;
        }
        let i = self.index();
        self.make(
            v,
            Box::new(move |g, sink| {
                sink(i, g.view().permuted_axes(inv.clone()).to_owned());
            }),
        )
    }

    /// NumPy-style broadcast (align trailing dimensions). The backward pass
    /// sums over every stretched axis.
    pub fn broadcast_to(&self, to: &[usize]) -> Var<'t> {
        let x = self.value();
        let from = x.shape().to_vec();
        if from == to {
            // Still a node, so gradient bookkeeping stays uniform.
            let i = self.index();
            return self.make((*x).clone(), Box::new(move |g, sink| sink(i, g.clone())));
        }
        assert!(
            to.len() >= from.len(),
            "broadcast cannot drop dims: {from:?} -> {to:?}"
        );
        let lead = to.len() - from.len();
        let mut stretched = Vec::new(); // axes (in `to` coords) to sum with keepdims
        for (k, &d) in from.iter().enumerate() {
            let tk = lead + k;
            if d == 1 && to[tk] != 1 {
                stretched.push(tk);
            } else {
                assert_eq!(d, to[tk], "broadcast {from:?} -> {to:?}");
            }
        }
        let v = x
            .broadcast(IxDyn(to))
            .unwrap_or_else(|| panic!("broadcast {from:?} -> {to:?}"))
            .to_owned();
        let i = self.index();
        self.make(
            v,
            Box::new(move |g, sink| {
                let mut acc = g.clone();
                for a in (0..lead).rev() {
                    acc = acc.sum_axis(Axis(a));
                }
                for &a in stretched.iter().rev() {
                    let local = a - lead;
                    acc = acc.sum_axis(Axis(local)).insert_axis(Axis(local));
                }
                let acc = acc.into_shape_with_order(IxDyn(&from)).unwrap();
                sink(i, acc);
            }),
        )
    }

    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Var<'t> {
        let x = self.value();
        let in_shape = x.raw_dim();
        assert!(end <= x.shape()[axis] && start < end, "bad slice bounds");
        let v = x
            .slice_axis(Axis(axis), Slice::from(start..end))
            .to_owned();
        let i = self.index();
        self.make(
            v,
            Box::new(move |g, sink| {
                let mut dx = Arr::zeros(in_shape);
                dx.slice_axis_mut(Axis(axis), Slice::from(start..end))
                    .assign(g);
                sink(i, dx);
            }),
        )
    }

    /// `(N, C·r², H, W) -> (N, C, H·r, W·r)`, channel-major sub-pixel order.
    pub fn pixel_shuffle(&self, r: usize) -> Var<'t> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "pixel_shuffle expects NCHW");
        let (n, c2, h, w) = (s[0], s[1], s[2], s[3]);
        assert_eq!(c2 % (r * r), 0, "channels not divisible by r^2");
        let c = c2 / (r * r);
        self.reshape(&[n, c, r, r, h, w])
            .permute(&[0, 1, 4, 2, 5, 3])
            .reshape(&[n, c, h * r, w * r])
    }
}

/// Concatenate along `axis`. Free function because it takes many inputs.
pub fn concat<'t>(axis: usize, parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat of nothing");
    for p in &parts[1..] {
        parts[0].same_tape(p);
    }
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let out = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let idxs: Vec<usize> = parts.iter().map(|p| p.index()).collect();
    parts[0].make(
        out,
        Box::new(move |g, sink| {
            let mut off = 0;
            for (k, &sz) in sizes.iter().enumerate() {
                let piece = g
                    .slice_axis(Axis(axis), Slice::from(off..off + sz))
                    .to_owned();
                sink(idxs[k], piece);
                off += sz;
            }
        }),
    )
}
