//! Central-difference gradient verification used across the test suite.
//!
//! Every differentiable op and every assembled module is validated by
//! comparing tape gradients against numeric differences of the forward pass.

use super::{Arr, Tape, Var};
use crate::params::ParamStore;
use ndarray::IxDyn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

/// Relative error with an absolute floor, so near-zero gradients are still
/// compared meaningfully without drowning in rounding noise.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-2)
}

/// Checks `f`'s gradients w.r.t. uniform(-1, 1) inputs of the given shapes.
/// Returns the worst relative error over all checked entries.
pub fn fd_check<F>(seed: u64, shapes: &[&[usize]], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Arr> = shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            Arr::from_shape_vec(IxDyn(s), data).unwrap()
        })
        .collect();
    fd_check_inputs(seed.wrapping_mul(0x9e37_79b9), &inputs, 100, f)
}

/// Same as [`fd_check`] but with caller-supplied input values (for ops that
/// need inputs in a particular range) and an explicit per-input sample cap.
pub fn fd_check_inputs<F>(seed: u64, inputs: &[Arr], max_per_input: usize, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        tape.retain_grads(true);
        let vars: Vec<Var> = inputs.iter().map(|a| tape.constant(a.clone())).collect();
        let y = f(&tape, &vars);
        assert_eq!(y.len(), 1, "fd_check target must be scalar");
        tape.backward(y);
        vars.iter()
            .zip(inputs)
            .map(|(v, a)| match v.grad() {
                Some(g) => g.iter().copied().collect(),
                None => vec![0.0; a.len()],
            })
            .collect()
    };

    let eval = |inputs: &[Arr]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.constant(a.clone())).collect();
        f(&tape, &vars).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for (i, base) in inputs.iter().enumerate() {
        let n = base.len();
        let picks: Vec<usize> = if n <= max_per_input {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_per_input).into_vec()
        };
        let flat: Vec<f64> = base.iter().copied().collect();
        for k in picks {
            let mut work = inputs.to_vec();
            let mut plus = flat.clone();
            plus[k] += EPS;
            work[i] = Arr::from_shape_vec(base.raw_dim(), plus).unwrap();
            let fp = eval(&work);
            let mut minus = flat.clone();
            minus[k] -= EPS;
            work[i] = Arr::from_shape_vec(base.raw_dim(), minus).unwrap();
            let fm = eval(&work);
            let numeric = (fp - fm) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic[i][k], numeric));
        }
    }
    worst
}

/// Gradient check for a loss defined over a parameter store: compares tape
/// gradients against central differences of individually perturbed parameter
/// entries (up to `max_per_param` random entries each).
pub fn fd_check_params<F>(store: &mut ParamStore, seed: u64, max_per_param: usize, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Var<'t>,
{
    store.zero_grads();
    {
        let tape = Tape::new();
        let y = f(&tape, store);
        assert_eq!(y.len(), 1, "fd_check target must be scalar");
        tape.backward(y);
        tape.accumulate_grads(store);
    }
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| match store.grad(id) {
            Some(g) => g.iter().copied().collect(),
            None => vec![0.0; store.value(id).len()],
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let picks: Vec<usize> = if n <= max_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_per_param).into_vec()
        };
        for k in picks {
            let orig = {
                let v = store.value_mut(id);
                let slice = v.as_slice_mut().expect("parameters are contiguous");
                let orig = slice[k];
                slice[k] = orig + EPS;
                orig
            };
            let fp = {
                let tape = Tape::new();
                f(&tape, store).item()
            };
            store.value_mut(id).as_slice_mut().unwrap()[k] = orig - EPS;
            let fm = {
                let tape = Tape::new();
                f(&tape, store).item()
            };
            store.value_mut(id).as_slice_mut().unwrap()[k] = orig;
            let numeric = (fp - fm) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic[id.index()][k], numeric));
        }
    }
    worst
}
