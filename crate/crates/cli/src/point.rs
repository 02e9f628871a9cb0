use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use trcomp::{Shape, TrPoint, TrRank};

use crate::error::{CliError, Result};

/// JSON form of a TR point. Factor `k` is stored column-major as an
/// `n_k x (r_k r_{k+1})` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFile {
    pub shape: Vec<usize>,
    pub rank: Vec<usize>,
    pub factors: Vec<Vec<f64>>,
}

impl PointFile {
    pub fn from_point(p: &TrPoint) -> Self {
        PointFile {
            shape: p.shape().dims().to_vec(),
            rank: p.rank().ranks().to_vec(),
            factors: p.factors().iter().map(|w| w.as_slice().to_vec()).collect(),
        }
    }

    pub fn to_point(&self) -> Result<TrPoint> {
        let shape = Shape::new(self.shape.clone())?;
        let rank = TrRank::new(self.rank.clone())?;
        if self.factors.len() != shape.order() {
            return Err(CliError::Config(format!(
                "{} factors for an order-{} tensor",
                self.factors.len(),
                shape.order()
            )));
        }
        let mut factors = Vec::with_capacity(shape.order());
        for (k, v) in self.factors.iter().enumerate() {
            let rows = shape.dim(k);
            if v.len() % rows != 0 {
                return Err(CliError::Config(format!(
                    "factor {k} has {} entries, not a multiple of {rows}",
                    v.len()
                )));
            }
            factors.push(DMatrix::from_column_slice(rows, v.len() / rows, v));
        }
        Ok(TrPoint::new(shape, rank, factors)?)
    }
}
