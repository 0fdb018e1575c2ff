//! Named parameter storage shared by the model and the optimizer.
//!
//! Parameters are registered once at construction time in a deterministic
//! order; the integer id doubles as the optimizer-state slot. Names are
//! dotted paths (`"decoder.edge.eem0.project.weight"`), which lets ablation
//! tests and checkpoints reason about whole subtrees by prefix.

use ndarray::ArrayD;
use std::collections::BTreeMap;
use std::rc::Rc;

pub type Arr = ArrayD<f64>;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Rc<Arr>>,
    grads: Vec<Option<Arr>>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique dotted name. Duplicate names are a
    /// construction bug, not a runtime condition.
    pub fn add(&mut self, name: impl Into<String>, value: Arr) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name: {name}"
        );
        let id = self.names.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(Rc::new(value));
        self.grads.push(None);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.names.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Rc<Arr> {
        &self.values[id.0]
    }

    /// Mutable access for optimizer updates; copies only if a tape still
    /// holds the value.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Arr {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn grad(&self, id: ParamId) -> Option<&Arr> {
        self.grads[id.0].as_ref()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: Arr) {
        match &mut self.grads[id.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Ids whose dotted name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.by_name
            .range(prefix.to_string()..)
            .take_while(|(n, _)| n.starts_with(prefix))
            .map(|(_, &i)| ParamId(i))
            .collect()
    }

    /// Scalar counts grouped by the first `depth` dotted-name segments.
    /// Used by ablation tests to assert which subtrees exist.
    pub fn census(&self, depth: usize) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (name, &i) in &self.by_name {
            let key: Vec<&str> = name.split('.').take(depth).collect();
            *out.entry(key.join(".")).or_insert(0) += self.values[i].len();
        }
        out
    }

    /// Global L2 norm of all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in self.grads.iter().flatten() {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }

    /// Scales every gradient in place (gradient clipping).
    pub fn scale_grads(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }
}
