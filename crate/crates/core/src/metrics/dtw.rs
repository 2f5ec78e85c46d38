use crate::error::{Error, Result};

/// Dynamic time warping distance with absolute-difference cost:
/// `d[i][j] = |x_i - y_j| + min(d[i-1][j-1], d[i-1][j], d[i][j-1])`, borders
/// at infinity and `d[0][0] = 0`. `O(n·m)` time, `O(m)` memory.
pub fn dtw(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Domain("dtw needs two nonempty series".into()));
    }
    let m = y.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &xi in x {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (xi - y[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}
