use trcomp::{Shape, TrRank};

use crate::error::{CliError, Result};

/// Number of TR parameters, `sum_k r_k n_k r_{k+1}`.
pub fn param_count(shape: &Shape, rank: &TrRank) -> Result<u64> {
    if shape.order() != rank.order() {
        return Err(CliError::Config(format!(
            "rank of order {} for an order-{} tensor",
            rank.order(),
            shape.order()
        )));
    }
    Ok((0..shape.order())
        .map(|k| (rank.left(k) * shape.dim(k) * rank.right(k)) as u64)
        .sum())
}
