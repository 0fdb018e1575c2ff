//! Reverse-mode automatic differentiation over dynamic-rank `f64` arrays.
//!
//! A [`Tape`] records one forward pass as a topologically ordered list of
//! nodes; [`Tape::backward`] replays it in reverse, each node's backward
//! closure accumulating into the gradients of earlier nodes only. Values are
//! reference-counted so parameters and op inputs are shared, not copied.
//!
//! Scalars are represented as shape-`[1]` arrays throughout.

mod conv;
mod elementwise;
pub mod fd;
mod linalg;
mod reduce;
mod resize;
mod shape;

pub use conv::conv2d_out_dim;
pub use shape::concat;

use crate::params::{ParamId, ParamStore};
use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

pub type Arr = ArrayD<f64>;

/// Backward closure: receives the node's output gradient and a sink that
/// accumulates a gradient contribution into an earlier node by index.
type BackwardFn = Box<dyn FnOnce(&Arr, &mut dyn FnMut(usize, Arr))>;

struct Node {
    value: Rc<Arr>,
    grad: Option<Arr>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    /// One node per parameter per tape, so gradient accumulation is exact.
    param_memo: HashMap<usize, usize>,
    /// Keep every node's gradient after the sweep (finite-difference tests).
    retain: bool,
    ran_backward: bool,
}

#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// When enabled, intermediate gradients survive the backward sweep and
    /// can be read back through [`Var::grad`].
    pub fn retain_grads(&self, on: bool) {
        self.inner.borrow_mut().retain = on;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Arr, backward: Option<BackwardFn>, param: Option<ParamId>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            grad: None,
            backward,
            param,
        });
        inner.nodes.len() - 1
    }

    /// A leaf with no parameters behind it. Its gradient is still computed
    /// (and kept under `retain_grads`), which finite-difference checks use.
    pub fn constant(&self, value: Arr) -> Var<'_> {
        Var {
            tape: self,
            idx: self.push(value, None, None),
        }
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Arr::from_elem(IxDyn(&[1]), v))
    }

    /// Brings a stored parameter onto the tape. Repeated calls with the same
    /// id return the same node, so every use shares one gradient slot.
    pub fn param<'t>(&'t self, store: &ParamStore, id: ParamId) -> Var<'t> {
        if let Some(&idx) = self.inner.borrow().param_memo.get(&id.index()) {
            return Var { tape: self, idx };
        }
        let value = Rc::clone(store.value(id));
        let idx = {
            let mut inner = self.inner.borrow_mut();
            inner.nodes.push(Node {
                value,
                grad: None,
                backward: None,
                param: Some(id),
            });
            let idx = inner.nodes.len() - 1;
            inner.param_memo.insert(id.index(), idx);
            idx
        };
        Var { tape: self, idx }
    }

    /// Runs the reverse sweep from `root`, seeding with ones. One sweep per
    /// tape; gradients of parameter nodes are kept for
    /// [`Tape::accumulate_grads`].
    pub fn backward(&self, root: Var<'_>) {
        assert!(std::ptr::eq(root.tape, self), "var from a different tape");
        let mut inner = self.inner.borrow_mut();
        assert!(!inner.ran_backward, "backward already ran on this tape");
        inner.ran_backward = true;
        let retain = inner.retain;
        let seed = Arr::from_elem(inner.nodes[root.idx].value.raw_dim(), 1.0);
        inner.nodes[root.idx].grad = Some(seed);
        for i in (0..=root.idx).rev() {
            let (head, tail) = inner.nodes.split_at_mut(i);
            let node = &mut tail[0];
            if node.grad.is_none() {
                node.backward = None;
                continue;
            }
            if let Some(f) = node.backward.take() {
                let grad = node.grad.as_ref().unwrap();
                let mut sink = |pidx: usize, g: Arr| {
                    debug_assert!(pidx < i, "backward wrote to a non-parent node");
                    let parent = &mut head[pidx];
                    match &mut parent.grad {
                        Some(acc) => *acc += &g,
                        slot @ None => *slot = Some(g),
                    }
                };
                f(grad, &mut sink);
            }
            if !retain && node.param.is_none() {
                node.grad = None;
            }
        }
    }

    /// Moves parameter gradients off the tape into the store.
    pub fn accumulate_grads(&self, store: &mut ParamStore) {
        let mut inner = self.inner.borrow_mut();
        for node in inner.nodes.iter_mut() {
            if let (Some(id), Some(g)) = (node.param, node.grad.take()) {
                store.accumulate_grad(id, g);
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Arr> {
        Rc::clone(&self.tape.inner.borrow().nodes[self.idx].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.inner.borrow().nodes[self.idx].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The scalar payload of a shape-`[1]` value.
    pub fn item(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let v = &inner.nodes[self.idx].value;
        assert_eq!(v.len(), 1, "item() on non-scalar of shape {:?}", v.shape());
        *v.first().unwrap()
    }

    pub fn grad(&self) -> Option<Arr> {
        self.tape.inner.borrow().nodes[self.idx].grad.clone()
    }

    /// Same value, no gradient path.
    pub fn detach(&self) -> Var<'t> {
        let value = self.value();
        Var {
            tape: self.tape,
            idx: self.tape.push((*value).clone(), None, None),
        }
    }

    pub(crate) fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub(crate) fn index(&self) -> usize {
        self.idx
    }

    /// Pushes a child node onto this var's tape.
    pub(crate) fn make(&self, value: Arr, backward: BackwardFn) -> Var<'t> {
        Var {
            tape: self.tape,
            idx: self.tape.push(value, Some(backward), None),
        }
    }

    pub(crate) fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }
}
