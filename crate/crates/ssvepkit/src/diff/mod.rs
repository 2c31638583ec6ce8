//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Operations executed on a [`Graph`] are recorded in creation order;
//! [`Tensor::backward`] replays the tape in reverse and accumulates
//! gradients into every node on a path to the loss. The op set is exactly
//! what the decoding pipeline needs: elementwise arithmetic, matmul,
//! valid 2-D convolution, layer norm, ELU, softmax, cross-entropy,
//! average pooling and a differentiable FFT/IFFT pair.

mod adam;
mod check;
mod fft;
mod ops;

pub use adam::{adam_step, AdamState};
pub use check::finite_diff_check;
pub use fft::{
    dft_direct, fft_real, hermitian_residual, idft_direct, ifft_complex, ComplexSpectrum,
    SpectrumTensor,
};

use std::cell::RefCell;
use std::rc::Rc;

use crate::{Error, Result};

/// Gradient callback: receives the output node's gradient and the whole
/// tape so it can accumulate into the inputs.
pub(crate) type BackFn = Box<dyn Fn(&[f64], &mut GraphInner)>;

pub(crate) struct Node {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
    pub grad: Vec<f64>,
    pub back: Option<BackFn>,
}

#[derive(Default)]
pub(crate) struct GraphInner {
    pub nodes: Vec<Node>,
}

impl GraphInner {
    pub fn accum(&mut self, id: usize, contrib: &[f64]) {
        let g = &mut self.nodes[id].grad;
        debug_assert_eq!(g.len(), contrib.len());
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += ci;
        }
    }
}

/// The gradient tape. Cloning is shallow; all clones share one tape.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Create a leaf tensor.
    pub fn tensor(&self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(data, shape.to_vec(), None)
    }

    /// Create a scalar leaf.
    pub fn scalar(&self, v: f64) -> Tensor {
        self.tensor(vec![v], &[1])
    }

    pub(crate) fn push(&self, data: Vec<f64>, shape: Vec<usize>, back: Option<BackFn>) -> Tensor {
        let n = data.len();
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            data,
            shape,
            grad: vec![0.0; n],
            back,
        });
        Tensor {
            graph: self.clone(),
            id,
        }
    }

    /// Zero every gradient on the tape.
    pub fn zero_grads(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub(crate) fn with<R>(&self, f: impl FnOnce(&GraphInner) -> R) -> R {
        f(&self.inner.borrow())
    }

}

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone)]
pub struct Tensor {
    pub(crate) graph: Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}


impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        self.graph.with(|g| g.nodes[self.id].shape.clone())
    }

    pub fn data(&self) -> Vec<f64> {
        self.graph.with(|g| g.nodes[self.id].data.clone())
    }

    pub fn grad(&self) -> Vec<f64> {
        self.graph.with(|g| g.nodes[self.id].grad.clone())
    }

    pub fn len(&self) -> usize {
        self.graph.with(|g| g.nodes[self.id].data.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on non-scalar tensor");
        d[0]
    }

    /// New leaf with the same data, cut off from the tape.
    pub fn detach(&self) -> Tensor {
        let (data, shape) = self.graph.with(|g| {
            let n = &g.nodes[self.id];
            (n.data.clone(), n.shape.clone())
        });
        self.graph.push(data, shape, None)
    }

    /// Reverse pass from a scalar loss. Gradients accumulate; call
    /// [`Graph::zero_grads`] between passes for fresh values.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::numeric(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let mut inner = self.graph.inner.borrow_mut();
        // Propagate on clean grads, then fold previously accumulated
        // values back in, so repeated calls accumulate at every tensor
        // without double-counting through intermediates.
        let saved: Vec<Vec<f64>> = inner
            .nodes
            .iter_mut()
            .map(|n| std::mem::replace(&mut n.grad, vec![0.0; n.data.len()]))
            .collect();
        inner.nodes[self.id].grad[0] = 1.0;
        for id in (0..=self.id).rev() {
            let back = inner.nodes[id].back.take();
            if let Some(b) = &back {
                let g = inner.nodes[id].grad.clone();
                b(&g, &mut inner);
            }
            inner.nodes[id].back = back;
        }
        for (node, old) in inner.nodes.iter_mut().zip(saved) {
            for (g, o) in node.grad.iter_mut().zip(old) {
                *g += o;
            }
        }
        Ok(())
    }
}
