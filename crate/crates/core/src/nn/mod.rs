//! Minimal deterministic neural-network machinery.
//!
//! Everything runs in f64 on the CPU with explicit seeded initialization,
//! which keeps training bit-reproducible and makes finite-difference
//! gradient checks meaningful. Backbones are expressed as a flat DAG of
//! [`ops::Op`] nodes ([`graph::Graph`]); the dense classification head is a
//! fixed structure in the `model` module.

pub mod adam;
pub mod graph;
pub mod init;
pub mod loss;
pub mod ops;

use ndarray::{Array2, Array4};

/// Activations flowing through a graph: 2-D `[batch, features]` or 4-D
/// `[batch, channels, height, width]`.
#[derive(Debug, Clone)]
pub enum Tensor {
    T2(Array2<f64>),
    T4(Array4<f64>),
}

impl Tensor {
    pub fn as2(&self) -> &Array2<f64> {
        match self {
            Tensor::T2(a) => a,
            Tensor::T4(_) => panic!("expected 2-D tensor"),
        }
    }

    pub fn as4(&self) -> &Array4<f64> {
        match self {
            Tensor::T4(a) => a,
            Tensor::T2(_) => panic!("expected 4-D tensor"),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Tensor::T2(a) => a.len(),
            Tensor::T4(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A learnable tensor: value plus gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<D: ndarray::Dimension> {
    pub v: ndarray::Array<f64, D>,
    pub g: ndarray::Array<f64, D>,
}

impl<D: ndarray::Dimension> Param<D> {
    pub fn new(v: ndarray::Array<f64, D>) -> Self {
        let g = ndarray::Array::zeros(v.raw_dim());
        Param { v, g }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Visitor over (value, gradient) slices in a stable order. The optimizer,
/// gradient zeroing, parameter counting, and checkpointing all walk this.
pub trait VisitParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64]));
}

/// Total number of stored parameter values (including batch-norm moving
/// statistics, matching the usual "total params" convention).
pub fn param_count(model: &mut dyn VisitParams) -> usize {
    let mut n = 0;
    model.visit_params(&mut |_, v, _| n += v.len());
    n
}

pub fn zero_grads(model: &mut dyn VisitParams) {
    model.visit_params(&mut |_, _, g| g.fill(0.0));
}
