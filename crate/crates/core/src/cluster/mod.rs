//! Soft clustering of principle embeddings with a data-driven cluster count.
//!
//! Pipeline: PCA to a handful of dimensions, diagonal Gaussian mixtures for
//! K = 1..=K_max, BIC picks K, and every point joins each component whose
//! responsibility clears a threshold.

pub mod gmm;
pub mod pca;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::PrincipleCluster;

pub use gmm::{fit_best, fit_mixture, select_k, FitOptions, MixtureModel, Selection};
pub use pca::{reduce_dim, Projection};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("dimension mismatch: expected {expected}, found {found} at row {row}")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        row: usize,
    },
    #[error("non-finite value at row {0}")]
    NonFinite(usize),
    #[error("mixture fit failed: {0}")]
    Fit(String),
}

pub(crate) fn check_matrix(points: &[Vec<f64>], dim: usize) -> Result<(), ClusterError> {
    for (row, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(ClusterError::DimensionMismatch {
                expected: dim,
                found: p.len(),
                row,
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(ClusterError::NonFinite(row));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Upper bound on K; the effective bound is `min(k_max, n)`.
    pub k_max: usize,
    /// Responsibility needed for membership.
    pub tau: f64,
    /// PCA target; the effective target is `min(target_dim, n - 1, d)`.
    pub target_dim: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub var_floor: f64,
    pub min_support: f64,
    /// Fraction of total variance the reduced space must keep. Trailing
    /// directions beyond it are dropped, so near-constant noise directions
    /// cannot dominate the likelihood.
    pub variance_kept: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            k_max: 10,
            tau: 0.1,
            target_dim: 8,
            n_init: fit.n_init,
            max_iter: fit.max_iter,
            tol: fit.tol,
            var_floor: fit.var_floor,
            min_support: fit.min_support,
            variance_kept: 0.99,
        }
    }
}

impl ClusterConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            var_floor: self.var_floor,
            n_init: self.n_init,
            min_support: self.min_support,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    /// `points × K` posterior probabilities over the model's components.
    pub responsibilities: Vec<Vec<f64>>,
    /// Per point, indices into `components` (never empty).
    pub memberships: Vec<Vec<usize>>,
    /// Model component behind each surviving cluster, ascending.
    pub components: Vec<usize>,
}

impl SoftAssignment {
    pub fn cluster_count(&self) -> usize {
        self.components.len()
    }

    /// Member point indices of every surviving cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.components.len()];
        for (point, ms) in self.memberships.iter().enumerate() {
            for &c in ms {
                out[c].push(point);
            }
        }
        out
    }

    /// Debug dump: one row per point, one column per model component.
    pub fn responsibilities_csv(&self) -> String {
        let k = self.responsibilities.first().map_or(0, Vec::len);
        let mut out = String::from("point");
        for c in 0..k {
            out.push_str(&format!(",component_{c}"));
        }
        out.push_str(",memberships\n");
        for (i, row) in self.responsibilities.iter().enumerate() {
            out.push_str(&i.to_string());
            for r in row {
                out.push_str(&format!(",{r}"));
            }
            let ms: Vec<String> = self.memberships[i]
                .iter()
                .map(|m| self.components[*m].to_string())
                .collect();
            out.push_str(&format!(",{}\n", ms.join(" ")));
        }
        out
    }
}

/// Membership is every component with responsibility ≥ `tau`, or the argmax alone
/// when none clears it. Components left without members are dropped and the
/// remaining ones re-packed.
pub fn soft_assign(
    model: &MixtureModel,
    points: &[Vec<f64>],
    tau: f64,
) -> Result<SoftAssignment, ClusterError> {
    check_matrix(points, model.dim())?;
    let mut responsibilities = Vec::with_capacity(points.len());
    let mut raw_members = Vec::with_capacity(points.len());
    for p in points {
        let (resp, _) = model.posterior(p);
        let mut members: Vec<usize> = (0..model.k).filter(|&c| resp[c] >= tau).collect();
        if members.is_empty() {
            let arg = (0..model.k)
                .max_by(|&a, &b| resp[a].total_cmp(&resp[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            members.push(arg);
        }
        responsibilities.push(resp);
        raw_members.push(members);
    }
    let mut used = vec![false; model.k];
    for c in raw_members.iter().flatten() {
        used[*c] = true;
    }
    let components: Vec<usize> = (0..model.k).filter(|&c| used[c]).collect();
    let mut remap = vec![usize::MAX; model.k];
    for (packed, &c) in components.iter().enumerate() {
        remap[c] = packed;
    }
    let memberships = raw_members
        .into_iter()
        .map(|ms| ms.into_iter().map(|c| remap[c]).collect())
        .collect();
    Ok(SoftAssignment {
        responsibilities,
        memberships,
        components,
    })
}

/// Result of clustering with the intermediate artifacts kept for inspection.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub clusters: Vec<PrincipleCluster>,
    pub k_star: usize,
    pub reduced_dim: usize,
    pub assignment: Option<SoftAssignment>,
}

/// Smallest leading-component count whose variance reaches `fraction` of the
/// total; at least 1 and at most `variances.len()`.
pub fn explained_dims(vectors: &[Vec<f64>], variances: &[f64], fraction: f64) -> usize {
    let n = vectors.len();
    let d = vectors.first().map_or(0, Vec::len);
    let total: f64 = (0..d)
        .map(|j| {
            let mean = vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64;
            vectors.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / (n.max(2) - 1) as f64;
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in variances.iter().enumerate() {
        acc += v;
        if acc >= fraction * total {
            return i + 1;
        }
    }
    variances.len().max(1)
}

/// Clusters embedding vectors; every input index lands in at least one cluster.
pub fn cluster_principles(
    embeddings: &[Vec<f64>],
    config: &ClusterConfig,
    rng_seed: u64,
) -> Result<ClusterOutcome, ClusterError> {
    let n = embeddings.len();
    if n == 0 {
        return Err(ClusterError::Precondition("no principles to cluster".into()));
    }
    let d = embeddings[0].len();
    check_matrix(embeddings, d)?;
    if n == 1 {
        // Nothing to reduce; the lone point is its own centroid.
        return Ok(ClusterOutcome {
            clusters: vec![PrincipleCluster {
                member_indices: vec![0],
                centroid: embeddings[0].clone(),
            }],
            k_star: 1,
            reduced_dim: d,
            assignment: None,
        });
    }
    let target = config.target_dim.min(n - 1).min(d).max(1);
    let projection = reduce_dim(embeddings, target)?;
    let kept = explained_dims(embeddings, &projection.variances, config.variance_kept);
    let points: Vec<Vec<f64>> = projection
        .scores
        .into_iter()
        .map(|mut row| {
            row.truncate(kept);
            row
        })
        .collect();
    let k_max = config.k_max.min(n).max(1);
    let model = select_k(&points, k_max, rng_seed, &config.fit_options())?.into_best();
    let assignment = soft_assign(&model, &points, config.tau)?;
    let clusters = assignment
        .members()
        .into_iter()
        .zip(&assignment.components)
        .map(|(member_indices, &c)| PrincipleCluster {
            member_indices,
            centroid: model.means[c].clone(),
        })
        .collect();
    Ok(ClusterOutcome {
        clusters,
        k_star: model.k,
        reduced_dim: kept,
        assignment: Some(assignment),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_component_model() -> MixtureModel {
        MixtureModel {
            k: 2,
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            variances: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            log_likelihood: 0.0,
            bic: 0.0,
            iterations: 0,
            ll_trace: vec![],
            reinitialized: false,
        }
    }

    #[test]
    fn midpoint_splits_evenly() {
        let m = two_component_model();
        let a = soft_assign(&m, &[vec![0.0, 3.0]], 0.1).unwrap();
        assert!((a.responsibilities[0][0] - 0.5).abs() < 1e-9);
        assert!((a.responsibilities[0][1] - 0.5).abs() < 1e-9);
        assert_eq!(a.memberships[0], vec![0, 1]);
    }

    #[test]
    fn tau_one_gives_argmax_only() {
        let m = two_component_model();
        let pts = vec![vec![-0.3, 0.0], vec![0.2, 1.0], vec![0.0, 0.0]];
        let a = soft_assign(&m, &pts, 1.0).unwrap();
        assert!(a.memberships.iter().all(|ms| ms.len() == 1));
        assert_eq!(a.memberships[0], vec![0]);
        assert_eq!(a.memberships[1], vec![1]);
    }

    #[test]
    fn unused_components_are_dropped() {
        let m = two_component_model();
        let a = soft_assign(&m, &[vec![-5.0, 0.0], vec![-4.0, 0.0]], 0.1).unwrap();
        assert_eq!(a.components, vec![0]);
        assert_eq!(a.memberships, vec![vec![0], vec![0]]);
        assert!(a.responsibilities_csv().starts_with("point,component_0,component_1,memberships\n"));
    }

    #[test]
    fn dimension_mismatch() {
        let m = two_component_model();
        assert!(matches!(
            soft_assign(&m, &[vec![0.0]], 0.1),
            Err(ClusterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_principle_single_cluster() {
        let out = cluster_principles(&[vec![0.3, 0.1]], &ClusterConfig::default(), 1).unwrap();
        assert_eq!(out.clusters.len(), 1);
        assert_eq!(out.clusters[0].member_indices, vec![0]);
    }

    #[test]
    fn noise_directions_are_dropped() {
        // Three tight groups on the axes of 6-D space: two directions carry the spread.
        let mut pts = Vec::new();
        for axis in 0..3 {
            for j in 0..3 {
                let mut v = vec![0.0; 6];
                v[axis] = 4.0;
                v[3 + j] = 1e-3 * (axis as f64 + 1.0);
                pts.push(v);
            }
        }
        let proj = reduce_dim(&pts, 6).unwrap();
        assert_eq!(explained_dims(&pts, &proj.variances, 0.99), 2);
        assert_eq!(explained_dims(&pts, &proj.variances, 1.0), 6);
        let out = cluster_principles(&pts, &ClusterConfig::default(), 1).unwrap();
        assert_eq!(out.reduced_dim, 2);
        let mut groups: Vec<Vec<usize>> = out.clusters.iter().map(|c| c.member_indices.clone()).collect();
        groups.sort();
        assert_eq!(groups, vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]]);
    }

    #[test]
    fn identical_embeddings_one_cluster() {
        let pts = vec![vec![0.2, -0.4, 0.9]; 12];
        let out = cluster_principles(&pts, &ClusterConfig::default(), 5).unwrap();
        assert_eq!(out.k_star, 1);
        assert_eq!(out.clusters.len(), 1);
        assert_eq!(out.clusters[0].member_indices, (0..12).collect::<Vec<_>>());
    }
}
