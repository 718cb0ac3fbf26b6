use super::tensor::{Mat, Scalar};

/// `weight * mean_over_rows(log(sum_v exp(logits[v]))^2)`, with the
/// log-sum-exp evaluated after subtracting the row maximum.
pub fn z_loss<T: Scalar>(logits: &Mat<T>, weight: f64) -> f64 {
    if logits.rows() == 0 {
        return 0.0;
    }
    let total: f64 = (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let max = row
                .iter()
                .map(|x| x.widen())
                .fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x.widen() - max).exp()).sum();
            let lse = max + sum.ln();
            lse * lse
        })
        .sum();
    weight * total / logits.rows() as f64
}

/// The same quantity without the max shift; overflows for large logits.
pub fn z_loss_naive<T: Scalar>(logits: &Mat<T>, weight: f64) -> f64 {
    if logits.rows() == 0 {
        return 0.0;
    }
    let total: f64 = (0..logits.rows())
        .map(|r| {
            let z: f64 = logits.row(r).iter().map(|x| x.widen().exp()).sum();
            z.ln().powi(2)
        })
        .sum();
    weight * total / logits.rows() as f64
}
