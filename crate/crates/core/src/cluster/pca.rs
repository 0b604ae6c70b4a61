//! Principal-component projection for small point sets.
//!
//! Uses the cheaper of the two equivalent eigenproblems: the `d × d` scatter
//! matrix when `d ≤ n`, otherwise the `n × n` Gram matrix (typical for a few
//! dozen 768-dimensional sentence embeddings).

use super::ClusterError;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// `target_dim` unit directions in input space (zero rows for null directions).
    pub components: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalue carried by each component.
    pub variances: Vec<f64>,
    /// Projected coordinates, one row per input point.
    pub scores: Vec<Vec<f64>>,
}

impl Projection {
    /// Maps projected coordinates back to input space.
    pub fn reconstruct(&self, score: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (s, comp) in score.iter().zip(&self.components) {
            for (o, c) in out.iter_mut().zip(comp) {
                *o += s * c;
            }
        }
        out
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with eigenvectors as rows.
#[allow(clippy::needless_range_loop)]
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    // v[i][j]: component i of eigenvector j
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if scale == 0.0 {
        let vecs = (0..n)
            .map(|j| (0..n).map(|i| v[i][j]).collect())
            .collect();
        return (vec![0.0; n], vecs);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let values = order.iter().map(|&j| a[j][j]).collect();
    let vectors = order
        .iter()
        .map(|&j| {
            let mut col: Vec<f64> = (0..n).map(|i| v[i][j]).collect();
            orient(&mut col);
            col
        })
        .collect();
    (values, vectors)
}

/// Fixes the sign so the largest-magnitude entry is positive.
fn orient(vector: &mut [f64]) {
    let mut best = 0;
    for (i, x) in vector.iter().enumerate() {
        if x.abs() > vector[best].abs() + 1e-12 {
            best = i;
        }
    }
    if vector.get(best).is_some_and(|x| *x < 0.0) {
        for x in vector.iter_mut() {
            *x = -*x;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projects mean-centered `vectors` onto their top `target_dim` principal directions,
/// in decreasing order of variance.
pub fn reduce_dim(vectors: &[Vec<f64>], target_dim: usize) -> Result<Projection, ClusterError> {
    let n = vectors.len();
    if n < 2 {
        return Err(ClusterError::Precondition(format!(
            "dimensionality reduction needs at least 2 points, got {n}"
        )));
    }
    let d = vectors[0].len();
    super::check_matrix(vectors, d)?;
    if target_dim == 0 || target_dim > d {
        return Err(ClusterError::Precondition(format!(
            "target dimension {target_dim} not in 1..={d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let denom = (n - 1) as f64;

    let (components, variances, scores) = if d <= n {
        let scatter: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| centered.iter().map(|r| r[i] * r[j]).sum())
                    .collect()
            })
            .collect();
        let (values, vecs) = symmetric_eigen(&scatter);
        let components: Vec<Vec<f64>> = vecs.into_iter().take(target_dim).collect();
        let variances = values
            .iter()
            .take(target_dim)
            .map(|l| l.max(0.0) / denom)
            .collect();
        let scores = centered
            .iter()
            .map(|r| components.iter().map(|c| dot(r, c)).collect())
            .collect();
        (components, variances, scores)
    } else {
        let gram: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| dot(&centered[i], &centered[j])).collect())
            .collect();
        let (values, vecs) = symmetric_eigen(&gram);
        let tol = 1e-12 * values.first().copied().unwrap_or(0.0).abs().max(1e-300);
        let mut components = Vec::with_capacity(target_dim);
        let mut variances = Vec::with_capacity(target_dim);
        let mut scores = vec![vec![0.0; target_dim]; n];
        for (k, (lambda, u)) in values.iter().zip(&vecs).take(target_dim).enumerate() {
            if *lambda > tol {
                let root = lambda.sqrt();
                let mut comp = vec![0.0; d];
                for (ui, row) in u.iter().zip(&centered) {
                    for (c, x) in comp.iter_mut().zip(row) {
                        *c += ui * x;
                    }
                }
                for c in &mut comp {
                    *c /= root;
                }
                orient(&mut comp);
                for (i, row) in centered.iter().enumerate() {
                    scores[i][k] = dot(row, &comp);
                }
                components.push(comp);
                variances.push(lambda / denom);
            } else {
                components.push(vec![0.0; d]);
                variances.push(0.0);
            }
        }
        (components, variances, scores)
    };
    Ok(Projection {
        mean,
        components,
        variances,
        scores,
    })
}
