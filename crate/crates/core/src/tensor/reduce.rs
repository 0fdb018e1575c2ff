//! Reductions. Whole-tensor reductions produce shape-`[1]` scalars.

use super::{Arr, Var};
use ndarray::{Axis, IxDyn};

/// Input shape with the reduced axes collapsed to size 1.
fn keepdims_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let mut s = shape.to_vec();
    for &a in axes {
        s[a] = 1;
    }
    s
}

impl<'t> Var<'t> {
    pub fn sum_all(&self) -> Var<'t> {
        let x = self.value();
        let shape = x.raw_dim();
        let i = self.index();
        self.make(
            Arr::from_elem(IxDyn(&[1]), x.sum()),
            Box::new(move |g, sink| {
                sink(i, Arr::from_elem(shape, *g.first().unwrap()));
            }),
        )
    }

    pub fn mean_all(&self) -> Var<'t> {
        let n = self.len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions when `keepdims`.
    pub fn sum_axes(&self, axes: &[usize], keepdims: bool) -> Var<'t> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let kshape = keepdims_shape(&in_shape, axes);
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut v = (*x).clone();
        for &a in sorted.iter().rev() {
            v = v.sum_axis(Axis(a));
        }
        if keepdims {
            v = v.into_shape_with_order(IxDyn(&kshape)).unwrap();
        }
        let i = self.index();
        self.make(
            v,
            Box::new(move |g, sink| {
                let gk = g
                    .view()
                    .into_shape_with_order(IxDyn(&kshape))
                    .unwrap()
                    .to_owned();
                let gb = gk.broadcast(IxDyn(&in_shape)).unwrap().to_owned();
                sink(i, gb);
            }),
        )
    }

    pub fn mean_axes(&self, axes: &[usize], keepdims: bool) -> Var<'t> {
        let shape = self.shape();
        let n: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes, keepdims).scale(1.0 / n as f64)
    }

    /// Maximum over one axis (kept as size 1). Ties send the gradient to the
    /// first maximal entry.
    pub fn max_axis(&self, axis: usize) -> Var<'t> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let ndim = in_shape.len();
        let lane = in_shape[axis];
        assert!(lane > 0, "max over empty axis");
        let mut perm: Vec<usize> = (0..ndim).filter(|&d| d != axis).collect();
        perm.push(axis);
        let outer: usize = perm[..ndim - 1].iter().map(|&d| in_shape[d]).product();
        let moved = x
            .view()
            .permuted_axes(perm.clone())
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&[outer, lane]))
            .unwrap();
        let mut vals = Vec::with_capacity(outer);
        let mut args = Vec::with_capacity(outer);
        for row in moved.axis_iter(Axis(0)) {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for (j, &v) in row.iter().enumerate() {
                if v > best {
                    best = v;
                    arg = j;
                }
            }
            vals.push(best);
            args.push(arg);
        }
        let kshape = keepdims_shape(&in_shape, &[axis]);
        let value = Arr::from_shape_vec(IxDyn(&kshape), vals).unwrap();
        let i = self.index();
        let perm_shape: Vec<usize> = perm.iter().map(|&d| in_shape[d]).collect();
        let mut inv = vec![0usize; ndim];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        self.make(
            value,
            Box::new(move |g, sink| {
                let gflat: Vec<f64> = g.iter().copied().collect();
                let mut dx = Arr::zeros(IxDyn(&[outer, lane]));
                for (o, &arg) in args.iter().enumerate() {
                    dx[[o, arg]] = gflat[o];
                }
                let dx = dx
                    .into_shape_with_order(IxDyn(&perm_shape))
                    .unwrap()
                    .permuted_axes(inv.clone())
                    .to_owned();
                sink(i, dx);
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::fd::fd_check;
    use super::super::Tape;

    #[test]
    fn reduction_grads() {
        let tol = 1e-6;
        assert!(fd_check(20, &[&[3, 4, 2]], |_, v| v[0].mul(&v[0]).sum_all()) < tol);
        assert!(fd_check(21, &[&[3, 4, 2]], |_, v| v[0].mul(&v[0]).mean_all()) < tol);
        assert!(
            fd_check(22, &[&[3, 4, 2]], |_, v| {
                v[0].mul(&v[0]).sum_axes(&[1], true).mean_all()
            }) < tol
        );
        assert!(
            fd_check(23, &[&[3, 4, 2]], |_, v| {
                v[0].mul(&v[0]).sum_axes(&[0, 2], false).mean_all()
            }) < tol
        );
        assert!(
            fd_check(24, &[&[3, 4, 2]], |_, v| {
                v[0].mul(&v[0]).mean_axes(&[0, 1], true).sum_all()
            }) < tol
        );
        // Random inputs have distinct entries, so max is differentiable here.
        assert!(
            fd_check(25, &[&[3, 5, 2]], |_, v| {
                v[0].max_axis(1).mul(&v[0].max_axis(1)).sum_all()
            }) < tol
        );
    }

    #[test]
    fn reduction_values() {
        let t = Tape::new();
        let x = t.constant(
            ndarray::arr3(&[[[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]]).into_dyn(),
        );
        assert_eq!(x.sum_all().item(), 36.0);
        assert_eq!(x.mean_all().item(), 4.5);
        let s = x.sum_axes(&[0], true);
        assert_eq!(s.shape(), vec![1, 2, 2]);
        assert_eq!(s.value().iter().copied().collect::<Vec<_>>(), vec![6.0, 8.0, 10.0, 12.0]);
        let m = x.max_axis(2);
        assert_eq!(m.shape(), vec![2, 2, 1]);
        assert_eq!(m.value().iter().copied().collect::<Vec<_>>(), vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn max_axis_tie_goes_to_first() {
        let t = Tape::new();
        t.retain_grads(true);
        let x = t.constant(ndarray::arr2(&[[2.0, 2.0, 1.0]]).into_dyn());
        let y = x.max_axis(1).sum_all();
        t.backward(y);
        let g = x.grad().unwrap();
        assert_eq!(g.iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
    }
}
