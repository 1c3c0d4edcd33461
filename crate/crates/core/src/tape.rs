//! Reverse-mode autodiff over a per-step tape.
//!
//! A [`Tape`] records every op result as a node holding the value, the
//! parent ids and a backward closure. Nodes are appended in execution
//! order, so ids are already a topological order and the backward sweep is
//! a single descending-id pass. One tape serves one training step;
//! [`Tape::backward`] consumes it.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{CoreError, Result};
use crate::scalar::Elem;
use crate::tensor::Tensor;

/// Handle to a tape node. Plain index, only meaningful for the tape that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
}

impl Var {
    #[inline]
    pub fn id(self) -> usize {
        self.id
    }
}

/// Given the upstream gradient of the node's output, returns one gradient
/// buffer per parent, in parent order. Must not touch the tape.
pub type BackwardFn<E> = Box<dyn Fn(&[E]) -> Vec<Vec<E>>>;

struct Node<E: Elem> {
    value: Rc<Tensor<E>>,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn<E>>,
}

struct Inner<E: Elem> {
    nodes: Vec<Node<E>>,
    grad_enabled: bool,
    consumed: bool,
}

pub struct Tape<E: Elem> {
    inner: RefCell<Inner<E>>,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                grad_enabled: true,
                consumed: false,
            }),
        }
    }

    /// Trainable input: participates in backward unless created inside a
    /// no-grad scope.
    pub fn leaf(&self, value: Tensor<E>) -> Var {
        let grad = self.inner.borrow().grad_enabled;
        self.push_raw(Rc::new(value), grad, Vec::new(), None)
    }

    /// Value that never carries gradient.
    pub fn constant(&self, value: Tensor<E>) -> Var {
        self.push_raw(Rc::new(value), false, Vec::new(), None)
    }

    /// Constant sharing an existing buffer (used by [`Tape::detach`]).
    pub fn constant_rc(&self, value: Rc<Tensor<E>>) -> Var {
        self.push_raw(value, false, Vec::new(), None)
    }

    /// Stop-gradient: same value, no backward connection to its producer.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.constant_rc(value)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<E>> {
        Rc::clone(&self.inner.borrow().nodes[v.id].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().nodes[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.inner.borrow().nodes[v.id].requires_grad
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs `f` with gradient recording off; ops inside produce constants.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = {
            let mut inner = self.inner.borrow_mut();
            let prev = inner.grad_enabled;
            inner.grad_enabled = false;
            prev
        };
        let out = f();
        self.inner.borrow_mut().grad_enabled = prev;
        out
    }

    /// Records an op result. `backward` receives the upstream gradient and
    /// returns per-parent contributions; it is dropped (and never called)
    /// when no parent requires grad or recording is off.
    pub fn push(
        &self,
        value: Tensor<E>,
        parents: Vec<Var>,
        backward: impl Fn(&[E]) -> Vec<Vec<E>> + 'static,
    ) -> Result<Var> {
        self.push_shared(Rc::new(value), parents, backward)
    }

    /// Like [`Tape::push`] but the value arrives behind an `Rc`, so the
    /// backward closure can capture the output buffer without copying it
    /// (softmax, exp and friends differentiate through their own output).
    pub fn push_shared(
        &self,
        value: Rc<Tensor<E>>,
        parents: Vec<Var>,
        backward: impl Fn(&[E]) -> Vec<Vec<E>> + 'static,
    ) -> Result<Var> {
        {
            let inner = self.inner.borrow();
            if inner.consumed {
                return Err(CoreError::ConsumedTape);
            }
            #[cfg(debug_assertions)]
            if !value.data().iter().all(|v| v.is_finite()) {
                return Err(CoreError::Numeric(format!(
                    "non-finite value produced for node {} (shape {:?})",
                    inner.nodes.len(),
                    value.shape()
                )));
            }
        }
        let grad = {
            let inner = self.inner.borrow();
            inner.grad_enabled && parents.iter().any(|p| inner.nodes[p.id].requires_grad)
        };
        let bf: Option<BackwardFn<E>> = if grad { Some(Box::new(backward)) } else { None };
        Ok(self.push_raw(value, grad, parents, bf))
    }

    fn push_raw(
        &self,
        value: Rc<Tensor<E>>,
        requires_grad: bool,
        parents: Vec<Var>,
        backward: Option<BackwardFn<E>>,
    ) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            requires_grad,
            parents,
            backward,
        });
        Var { id }
    }

    /// Reverse sweep from a scalar root. Returns gradients for every node
    /// that still holds one afterwards: leaves keep theirs, interior
    /// gradients are dropped once propagated. Consumes the tape: no
    /// further ops or backward calls are accepted.
    pub fn backward(&self, root: Var) -> Result<Gradients<E>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(CoreError::ConsumedTape);
        }
        inner.consumed = true;
        let node = &inner.nodes[root.id];
        if node.value.numel() != 1 {
            return Err(CoreError::BadBackwardRoot(format!(
                "root has {} elements",
                node.value.numel()
            )));
        }
        if !node.requires_grad {
            return Err(CoreError::BadBackwardRoot(
                "root does not require grad (consumed/absent tape for this value)".into(),
            ));
        }

        let mut grads: Vec<Option<Vec<E>>> = (0..inner.nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(vec![E::one()]);

        for id in (0..=root.id).rev() {
            if grads[id].is_none() {
                continue;
            }
            let node = &inner.nodes[id];
            let Some(bf) = &node.backward else {
                continue; // leaf or constant: keep the gradient
            };
            let g = grads[id].take().expect("checked above");
            let parent_grads = bf(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                if !inner.nodes[p.id].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.len(), inner.nodes[p.id].value.numel());
                match &mut grads[p.id] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&pg) {
                            *a += *b;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
        }

        Ok(Gradients { grads })
    }
}

/// Gradient buffers keyed by node id, produced by [`Tape::backward`].
pub struct Gradients<E: Elem> {
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Elem> Gradients<E> {
    /// Gradient for `v`, if one was produced (absent means no path from the
    /// root reached it).
    pub fn get(&self, v: Var) -> Option<&[E]> {
        self.grads.get(v.id()).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<E>> {
        self.grads.get_mut(v.id()).and_then(|g| g.take())
    }
}
