//! Reverse-mode differentiation over a linear record of operations.

use super::real::Real;
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &Tape<T>, &mut Grads<T>)>;

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    params: Vec<(usize, Var)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            params: Vec::new(),
        }
    }

    /// Records values only; no closures or caches are kept.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, false, None)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push_node(value, rg, None)
    }

    /// A leaf bound to parameter slot `index` of a parameter store.
    pub fn param(&mut self, index: usize, value: Tensor<T>) -> Var {
        let v = self.variable(value);
        self.params.push((index, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Whether an op over `inputs` needs a backward closure.
    pub(crate) fn tracks(&self, inputs: &[Var]) -> bool {
        self.grad_enabled && inputs.iter().any(|&v| self.requires_grad(v))
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        backward: BackwardFn<T>,
    ) -> Var {
        if self.tracks(inputs) {
            self.push_node(value, true, Some(backward))
        } else {
            self.push_node(value, false, None)
        }
    }

    fn push_node(
        &mut self,
        value: Tensor<T>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of `sum(seed ⊙ output)` with respect to every leaf.
    pub fn backward_with(&self, output: Var, seed: Tensor<T>) -> Grads<T> {
        assert_eq!(
            seed.shape(),
            self.value(output).shape(),
            "backward seed must match the output shape"
        );
        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
            requires: self.nodes.iter().map(|n| n.requires_grad).collect(),
            params: self.params.clone(),
        };
        if !self.requires_grad(output) {
            return grads;
        }
        grads.slots[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads.slots[i].take() else {
                continue;
            };
            match &self.nodes[i].backward {
                Some(f) => f(&g, self, &mut grads),
                None => grads.slots[i] = Some(g),
            }
        }
        grads
    }

    /// Gradients of a scalar output.
    pub fn backward(&self, output: Var) -> Grads<T> {
        let shape = self.value(output).shape().to_vec();
        assert_eq!(
            shape.iter().product::<usize>(),
            1,
            "backward needs a scalar output"
        );
        self.backward_with(output, Tensor::filled(&shape, T::one()))
    }
}

/// Accumulated leaf gradients from one backward pass.
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
    requires: Vec<bool>,
    params: Vec<(usize, Var)>,
}

impl<T: Real> Grads<T> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Mutable gradient buffer of `v`, zero-initialised on first use.
    pub(crate) fn slot(&mut self, tape: &Tape<T>, v: Var) -> &mut [T] {
        self.slots[v.0]
            .get_or_insert_with(|| Tensor::zeros(tape.value(v).shape()))
            .data_mut()
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots[v.0].as_ref()
    }

    /// `(parameter index, gradient)` for every parameter leaf that was reached.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|&(i, v)| self.slots[v.0].as_ref().map(|g| (i, g)))
    }
}
