use crate::error::{Error, Result};
use crate::tensor::Matrix;

const NORM_GUARD: f64 = 1e-12;

/// Pairwise `1 - cos(h_i, h_j)` between the rows of `h`.
pub fn cosine_distance_matrix(h: &Matrix) -> Matrix {
    let n = h.rows();
    let norms: Vec<f64> = (0..n)
        .map(|i| h.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = h.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum();
            let cos = dot / (norms[i] * norms[j]).max(NORM_GUARD);
            let d = (1.0 - cos).clamp(0.0, 2.0);
            out.row_mut(i)[j] = d;
            out.row_mut(j)[i] = d;
        }
    }
    out
}

/// Mean over rows of the average of the `k` smallest off-diagonal entries.
pub fn mean_knn_cosine(dist: &Matrix, k: usize) -> Result<f64> {
    let n = dist.rows();
    if dist.cols() != n {
        return Err(Error::Contract(format!("distance matrix is {}×{}", n, dist.cols())));
    }
    if k == 0 || n <= k {
        return Err(Error::Domain(format!(
            "{k} nearest neighbours need more than {k} rows, got {n}"
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist.row(i)[j]).collect();
        row.sort_by(f64::total_cmp);
        total += row[..k].iter().sum::<f64>() / k as f64;
    }
    Ok(total / n as f64)
}
