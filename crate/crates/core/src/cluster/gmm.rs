//! Diagonal-covariance Gaussian mixtures fitted by EM, with BIC model selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_matrix, ClusterError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when the log-likelihood improves by less than this.
    pub tol: f64,
    pub var_floor: f64,
    /// Restarts per component count; the best likelihood is kept.
    pub n_init: usize,
    /// Smallest effective point count a component needs for its K to be
    /// selectable. Below it the component has collapsed onto a single point,
    /// where the variance floor alone inflates the likelihood.
    pub min_support: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            var_floor: 1e-6,
            n_init: 5,
            min_support: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal covariance per component, each entry ≥ the variance floor.
    pub variances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub bic: f64,
    pub iterations: usize,
    /// Log-likelihood before each M-step, then the final value.
    pub ll_trace: Vec<f64>,
    pub reinitialized: bool,
}

impl MixtureModel {
    /// Effective number of points behind each component.
    pub fn support(&self, n: usize) -> Vec<f64> {
        self.weights.iter().map(|w| w * n as f64).collect()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Free parameters: K means and K variances of dimension d, plus K-1 weights.
    pub fn parameter_count(k: usize, d: usize) -> usize {
        k * (2 * d + 1) - 1
    }

    /// `log(weight_k) + log N(x | mean_k, diag(var_k))` for every component.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let mut acc = self.weights[c].ln();
                for ((xi, mu), var) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                    let diff = xi - mu;
                    acc -= 0.5 * (LN_2PI + var.ln() + diff * diff / var);
                }
                acc
            })
            .collect()
    }

    /// Posterior component probabilities for one point, and its log density.
    pub fn posterior(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let lj = self.log_joint(x);
        let lse = log_sum_exp(&lj);
        (lj.iter().map(|l| (l - lse).exp()).collect(), lse)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn bic(log_likelihood: f64, k: usize, d: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + MixtureModel::parameter_count(k, d) as f64 * (n as f64).ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: the first center uniformly, then proportional to squared distance.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            if free.is_empty() {
                rng.gen_range(0..n)
            } else {
                free[rng.gen_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen
}

fn global_variance(points: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let n = points.len() as f64;
    let d = points[0].len();
    (0..d)
        .map(|j| {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n;
            var.max(floor)
        })
        .collect()
}

struct EStep {
    resp: Vec<Vec<f64>>,
    point_ll: Vec<f64>,
    total: f64,
}

fn e_step(model: &MixtureModel, points: &[Vec<f64>]) -> EStep {
    // Per-component constant term and inverse variances, computed once per pass.
    let consts: Vec<f64> = (0..model.k)
        .map(|c| {
            model.weights[c].ln()
                - 0.5 * model.variances[c].iter().map(|v| LN_2PI + v.ln()).sum::<f64>()
        })
        .collect();
    let inv: Vec<Vec<f64>> = model
        .variances
        .iter()
        .map(|vs| vs.iter().map(|v| 1.0 / v).collect())
        .collect();
    let mut resp = Vec::with_capacity(points.len());
    let mut point_ll = Vec::with_capacity(points.len());
    let mut total = 0.0;
    for p in points {
        let mut r: Vec<f64> = (0..model.k)
            .map(|c| {
                let quad: f64 = p
                    .iter()
                    .zip(&model.means[c])
                    .zip(&inv[c])
                    .map(|((x, m), iv)| (x - m) * (x - m) * iv)
                    .sum();
                consts[c] - 0.5 * quad
            })
            .collect();
        let ll = log_sum_exp(&r);
        for x in &mut r {
            *x = (*x - ll).exp();
        }
        total += ll;
        resp.push(r);
        point_ll.push(ll);
    }
    EStep {
        resp,
        point_ll,
        total,
    }
}

/// Returns the index of a component whose responsibility mass vanished, if any.
fn m_step(
    model: &mut MixtureModel,
    points: &[Vec<f64>],
    resp: &[Vec<f64>],
    floor: f64,
) -> Option<usize> {
    let n = points.len();
    let d = points[0].len();
    for c in 0..model.k {
        let nk: f64 = resp.iter().map(|r| r[c]).sum();
        if nk.is_nan() || nk <= 1e-10 {
            return Some(c);
        }
        let mut mean = vec![0.0; d];
        for (p, r) in points.iter().zip(resp) {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += r[c] * x;
            }
        }
        for m in &mut mean {
            *m /= nk;
        }
        let mut var = vec![0.0; d];
        for (p, r) in points.iter().zip(resp) {
            for ((v, x), m) in var.iter_mut().zip(p).zip(&mean) {
                *v += r[c] * (x - m) * (x - m);
            }
        }
        for v in &mut var {
            *v = (*v / nk).max(floor);
        }
        model.weights[c] = nk / n as f64;
        model.means[c] = mean;
        model.variances[c] = var;
    }
    None
}

/// One EM run for `k` components seeded from `rng_seed`.
pub fn fit_mixture(
    points: &[Vec<f64>],
    k: usize,
    rng_seed: u64,
    opts: &FitOptions,
) -> Result<MixtureModel, ClusterError> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(ClusterError::Precondition(format!(
            "cannot fit {k} components to {n} points"
        )));
    }
    let d = points[0].len();
    check_matrix(points, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let centers = seed_centers(points, k, &mut rng);
    let base_var = global_variance(points, opts.var_floor);
    let mut model = MixtureModel {
        k,
        weights: vec![1.0 / k as f64; k],
        means: centers.iter().map(|&i| points[i].clone()).collect(),
        variances: vec![base_var.clone(); k],
        log_likelihood: f64::NEG_INFINITY,
        bic: f64::INFINITY,
        iterations: 0,
        ll_trace: Vec::new(),
        reinitialized: false,
    };

    let mut previous: Option<f64> = None;
    let mut iterations = 0;
    let mut estep = e_step(&model, points);
    while iterations < opts.max_iter {
        let ll = estep.total;
        if !ll.is_finite() {
            return Err(ClusterError::Fit(format!("non-finite log-likelihood for K={k}")));
        }
        model.ll_trace.push(ll);
        if let Some(prev) = previous {
            // EM with a floored variance is still an exact M-step, so the
            // likelihood can only go up (up to rounding).
            if ll < prev - 1e-9 * prev.abs().max(1.0) {
                return Err(ClusterError::Fit(format!(
                    "log-likelihood decreased from {prev} to {ll} at K={k}"
                )));
            }
            if ll - prev < opts.tol {
                break;
            }
        }
        previous = Some(ll);
        if let Some(dead) = m_step(&mut model, points, &estep.resp, opts.var_floor) {
            if model.reinitialized {
                return Err(ClusterError::Fit(format!(
                    "component {dead} of K={k} collapsed twice"
                )));
            }
            // Move the dead component onto the worst-explained point.
            let worst = estep
                .point_ll
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            model.means[dead] = points[worst].clone();
            model.variances[dead] = base_var.clone();
            model.weights = vec![1.0 / k as f64; k];
            model.reinitialized = true;
            previous = None;
        }
        iterations += 1;
        estep = e_step(&model, points);
    }
    model.iterations = iterations;
    model.log_likelihood = estep.total;
    if model.ll_trace.last() != Some(&estep.total) {
        model.ll_trace.push(estep.total);
    }
    model.bic = bic(model.log_likelihood, k, d, n);
    Ok(model)
}

fn restart_seed(rng_seed: u64, k: usize, restart: usize) -> u64 {
    rng_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((k as u64) << 32 | restart as u64)
}

impl MixtureModel {
    /// True when every component carries at least `min_support` points.
    pub fn is_supported(&self, n: usize, min_support: f64) -> bool {
        self.k == 1 || self.support(n).iter().all(|s| *s >= min_support)
    }
}

/// Best of `opts.n_init` restarts by log-likelihood; earlier restarts win ties.
/// Restarts where every component meets `opts.min_support` are preferred, so a
/// collapsed fit only wins when no restart avoided collapsing.
pub fn fit_best(
    points: &[Vec<f64>],
    k: usize,
    rng_seed: u64,
    opts: &FitOptions,
) -> Result<MixtureModel, ClusterError> {
    let n = points.len();
    let mut best: Option<(bool, MixtureModel)> = None;
    for r in 0..opts.n_init.max(1) {
        let model = fit_mixture(points, k, restart_seed(rng_seed, k, r), opts)?;
        let supported = model.is_supported(n, opts.min_support);
        let better = match &best {
            None => true,
            Some((s, b)) => {
                (supported && !s) || (supported == *s && model.log_likelihood > b.log_likelihood)
            }
        };
        if better {
            best = Some((supported, model));
        }
    }
    Ok(best.expect("at least one restart").1)
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub k_star: usize,
    /// Fitted model for K = 1..=k_max, in order.
    pub models: Vec<MixtureModel>,
}

impl Selection {
    pub fn best(&self) -> &MixtureModel {
        &self.models[self.k_star - 1]
    }

    pub fn into_best(mut self) -> MixtureModel {
        self.models.swap_remove(self.k_star - 1)
    }
}

/// Fits K = 1..=k_max and returns the K with the lowest BIC (smaller K on ties).
/// Models with a component below `opts.min_support` points are reported but not selected.
pub fn select_k(
    points: &[Vec<f64>],
    k_max: usize,
    rng_seed: u64,
    opts: &FitOptions,
) -> Result<Selection, ClusterError> {
    if k_max == 0 || k_max > points.len() {
        return Err(ClusterError::Precondition(format!(
            "K_max = {k_max} must be in 1..={}",
            points.len()
        )));
    }
    // Independent fits; merged by K order so the result does not depend on scheduling.
    let fits: Vec<Result<MixtureModel, ClusterError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (1..=k_max)
            .map(|k| scope.spawn(move || fit_best(points, k, rng_seed, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fit thread panicked"))
            .collect()
    });
    let models = fits.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = points.len();
    let mut k_star = 1;
    for m in &models {
        if m.is_supported(n, opts.min_support) && m.bic < models[k_star - 1].bic {
            k_star = m.k;
        }
    }
    Ok(Selection { k_star, models })
}
