//! Softmax and categorical cross-entropy on one-hot targets.

use ndarray::Array2;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean negative log-likelihood of the target classes.
pub fn cross_entropy(probs: &Array2<f64>, targets: &[usize]) -> f64 {
    let n = targets.len() as f64;
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -probs[(i, t)].max(1e-300).ln())
        .sum::<f64>()
        / n
}

/// Gradient of mean cross-entropy w.r.t. the logits: (p - y) / N.
pub fn softmax_ce_grad(probs: &Array2<f64>, targets: &[usize]) -> Array2<f64> {
    let n = targets.len() as f64;
    let mut g = probs.clone();
    for (i, &t) in targets.iter().enumerate() {
        g[(i, t)] -= 1.0;
    }
    g.mapv_inplace(|v| v / n);
    g
}

/// Argmax with ties broken toward the lower class index.
pub fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let l = array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let p = softmax(&l);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_grad_matches_definition() {
        let l = array![[0.2, -0.4], [1.0, 1.0]];
        let p = softmax(&l);
        let g = softmax_ce_grad(&p, &[1, 0]);
        assert!((g[(0, 1)] - (p[(0, 1)] - 1.0) / 2.0).abs() < 1e-15);
        assert!((g[(0, 0)] - p[(0, 0)] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_to_lower_index() {
        let row = array![0.5, 0.5];
        assert_eq!(argmax_row(row.view()), 0);
    }
}
