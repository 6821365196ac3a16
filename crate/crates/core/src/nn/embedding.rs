use rand::Rng;

use super::init::glorot_uniform;
use crate::error::{Error, Result};

/// Class embedding table, `num_classes x dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams {
    pub num_classes: usize,
    pub dim: usize,
    pub table: Vec<f64>,
}

impl EmbeddingParams {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        EmbeddingParams {
            num_classes,
            dim,
            table: vec![0.0; num_classes * dim],
        }
    }

    pub fn init<R: Rng + ?Sized>(num_classes: usize, dim: usize, rng: &mut R) -> Self {
        let mut e = Self::zeros(num_classes, dim);
        glorot_uniform(&mut e.table, num_classes, dim, rng);
        e
    }

    pub fn embed(&self, class: usize) -> Result<&[f64]> {
        embedding_row(&self.table, self.num_classes, self.dim, class)
    }
}

pub(crate) fn embedding_row(
    table: &[f64],
    num_classes: usize,
    dim: usize,
    class: usize,
) -> Result<&[f64]> {
    if class >= num_classes {
        return Err(Error::Index {
            what: "class",
            index: class,
            len: num_classes,
        });
    }
    Ok(&table[class * dim..(class + 1) * dim])
}

/// Adds `d_row` into the gradient row of `class`; other rows are untouched.
pub(crate) fn accumulate_row(grad: &mut [f64], dim: usize, class: usize, d_row: &[f64]) {
    grad[class * dim..(class + 1) * dim]
        .iter_mut()
        .zip(d_row)
        .for_each(|(g, d)| *g += d);
}
