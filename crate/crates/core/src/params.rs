//! Named parameter storage and the per-forward binding context.

use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Tensor, Var};

/// Which of the three adversarial players owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Compression, frame selector and encoder.
    Summarizer,
    /// Decoder.
    Generator,
    Discriminator,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [Self::Summarizer, Self::Generator, Self::Discriminator];

    fn bit(self) -> u8 {
        match self {
            Self::Summarizer => 1,
            Self::Generator => 2,
            Self::Discriminator => 4,
        }
    }
}

/// Set of parameter groups that receive gradients in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const NONE: GroupSet = GroupSet(0);
    pub const ALL: GroupSet = GroupSet(7);

    pub fn only(group: ParamGroup) -> Self {
        GroupSet(group.bit())
    }

    pub fn contains(self, group: ParamGroup) -> bool {
        self.0 & group.bit() != 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            group,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform init in `[-1/√fan_in, 1/√fan_in]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, group, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn add_constant(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: &[usize],
        value: f64,
    ) -> ParamId {
        self.add(name, group, Tensor::full(shape, value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn ids_in(&self, group: ParamGroup) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.group == group).map(|(id, _)| id).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate_grads(&mut self, grads: &[(ParamId, Tensor)]) {
        for (id, g) in grads {
            let dst = self.params[id.0].grad.data_mut();
            dst.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
    }
}

/// A graph plus lazy binding of stored parameters as leaves. Parameters in a
/// trainable group become gradient-tracking leaves; the rest are constants.
pub struct Ctx<'s> {
    graph: Graph,
    store: &'s ParamStore,
    trainable: GroupSet,
    bound: Vec<Option<Var>>,
}

impl<'s> Ctx<'s> {
    pub fn new(store: &'s ParamStore, trainable: GroupSet) -> Self {
        Self::with_graph(Graph::new(), store, trainable)
    }

    pub fn with_graph(graph: Graph, store: &'s ParamStore, trainable: GroupSet) -> Self {
        Self {
            graph,
            store,
            trainable,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Leaf for parameter `id`, created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let param = self.store.get(id);
        let v = self
            .graph
            .leaf(param.value.clone(), self.trainable.contains(param.group));
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradients of every bound trainable parameter.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                self.graph.grad(v).map(|g| (ParamId(i), g))
            })
            .collect()
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }
}

impl Deref for Ctx<'_> {
    type Target = Graph;

    fn deref(&self) -> &Graph {
        &self.graph
    }
}

impl DerefMut for Ctx<'_> {
    fn deref_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }
}
