//! Exact t-SNE for 2-D feature visualization.
//!
//! Quadratic in the number of points, which is fine for the datasets this
//! pipeline produces (thousands of images). The implementation follows
//! the standard recipe: Gaussian input affinities tuned per point to a
//! target perplexity by bisection, symmetrized and floored; Student-t
//! output affinities; gradient descent with early exaggeration, momentum
//! switching and per-coordinate gains. The KL divergence against the true
//! (un-exaggerated) affinities is logged every 50 iterations so descent
//! is observable.

use super::FeatureRecord;
use crate::error::{Result, SfeError};
use crate::mat::Mat;
use crate::rng::{self, Prng};

const P_FLOOR: f64 = 1e-12;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: u32 = 250;
const MOMENTUM_EARLY: f64 = 0.5;
const MOMENTUM_LATE: f64 = 0.8;
const KL_EVERY: u32 = 50;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iters: u32,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneOptions {
    fn default() -> Self {
        TsneOptions { perplexity: 30.0, iters: 1000, learning_rate: 200.0, seed: 42 }
    }
}

impl TsneOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity > 0.0 && self.perplexity.is_finite()) {
            return Err(SfeError::Param(format!(
                "perplexity {} must be finite and > 0",
                self.perplexity
            )));
        }
        if self.iters == 0 {
            return Err(SfeError::Param("iters must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SfeError::Param(format!(
                "learning_rate {} must be finite and > 0",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A finished embedding with its optimization record.
#[derive(Clone, Debug)]
pub struct Projection2d {
    /// `(id, x, y)` per input record, in input order.
    pub points: Vec<(String, f64, f64)>,
    /// `(iteration, KL)` sampled every 50 iterations plus the final one,
    /// always against the true affinities.
    pub kl_trace: Vec<(u32, f64)>,
    pub final_kl: f64,
}

/// Squared Euclidean distances between all rows.
fn pairwise_sq(z: &Mat<f64>) -> Mat<f64> {
    let n = z.rows();
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for (&a, &b) in z.row(i).iter().zip(z.row(j)) {
                let diff = a - b;
                acc += diff * diff;
            }
            d[(i, j)] = acc;
            d[(j, i)] = acc;
        }
    }
    d
}

/// Conditional affinities for one point at a given precision, computed
/// stably by shifting with the smallest distance. Returns the row (over
/// all j, self position left at zero) and its entropy in nats.
fn row_affinities(dists: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let mut dmin = f64::INFINITY;
    for (j, &d) in dists.iter().enumerate() {
        if j != i {
            dmin = dmin.min(d);
        }
    }
    let mut sum = 0.0f64;
    let mut weighted = 0.0f64;
    for (j, &d) in dists.iter().enumerate() {
        if j == i {
            out[j] = 0.0;
            continue;
        }
        let shifted = d - dmin;
        let p = (-beta * shifted).exp();
        out[j] = p;
        sum += p;
        weighted += shifted * p;
    }
    // H = ln(sum) + beta * E[d - dmin]; invariant to the shift.
    let h = sum.ln() + beta * weighted / sum;
    for (j, v) in out.iter_mut().enumerate() {
        if j != i {
            *v /= sum;
        }
    }
    h
}

/// Bisect the per-point precision until the conditional entropy matches
/// `ln(perplexity)` within 1e-5, capped at 50 iterations (points whose
/// neighborhoods cannot reach the target keep the best effort).
fn calibrated_affinities(d: &Mat<f64>, perplexity: f64) -> Mat<f64> {
    let n = d.rows();
    let target = perplexity.ln();
    let mut p = Mat::zeros(n, n);
    let mut row = vec![0.0f64; n];
    for i in 0..n {
        let mut beta = 1.0f64;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        for _ in 0..50 {
            let h = row_affinities(d.row(i), i, beta, &mut row);
            let diff = h - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                // Too spread out: sharpen.
                beta_min = beta;
                beta = if beta_max.is_infinite() { beta * 2.0 } else { 0.5 * (beta + beta_max) };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() { beta * 0.5 } else { 0.5 * (beta + beta_min) };
            }
        }
        row_affinities(d.row(i), i, beta, &mut row);
        p.row_mut(i).copy_from_slice(&row);
    }
    p
}

/// KL(P || Q) over distinct pairs, both sides floored.
fn kl_divergence(p: &Mat<f64>, q: &Mat<f64>) -> f64 {
    let n = p.rows();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p[(i, j)].max(P_FLOOR);
            let qij = q[(i, j)].max(P_FLOOR);
            kl += pij * (pij / qij).ln();
        }
    }
    kl
}

/// Embed features into 2-D. Deterministic in (features, options).
pub fn project_2d(features: &[FeatureRecord], opts: &TsneOptions) -> Result<Projection2d> {
    opts.validate()?;
    let n = features.len();
    if n < 3 {
        return Err(SfeError::Protocol(format!(
            "2-D projection needs at least 3 points, got {n}"
        )));
    }
    let dim = features[0].z.len();
    for f in features {
        if f.z.len() != dim {
            return Err(SfeError::Structure(format!(
                "feature `{}` has {} dims, first has {dim}",
                f.id,
                f.z.len()
            )));
        }
        if !f.z.iter().all(|v| v.is_finite()) {
            return Err(SfeError::InvalidData(format!("feature `{}` is not finite", f.id)));
        }
    }

    let z = Mat::from_fn(n, dim, |r, c| features[r].z[c] as f64);
    let dists = pairwise_sq(&z);
    let cond = calibrated_affinities(&dists, opts.perplexity);

    // Symmetrize to joint affinities and floor.
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[(i, j)] = ((cond[(i, j)] + cond[(j, i)]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }

    let mut rng = Prng::from_tags(opts.seed, &[rng::tags::TSNE]);
    let mut y = Mat::from_fn(n, 2, |_, _| rng.gauss() * 1e-4);
    let mut inc: Mat<f64> = Mat::zeros(n, 2);
    let mut gains = Mat::filled(n, 2, 1.0f64);
    let mut num = Mat::zeros(n, n);
    let mut q = Mat::zeros(n, n);
    let mut grad = Mat::zeros(n, 2);
    let mut kl_trace = Vec::new();

    for iter in 0..opts.iters {
        // Student-t output affinities.
        let mut zsum = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[(i, 0)] - y[(j, 0)];
                let dy = y[(i, 1)] - y[(j, 1)];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[(i, j)] = v;
                num[(j, i)] = v;
                zsum += 2.0 * v;
            }
        }
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] = if i == j { 0.0 } else { (num[(i, j)] / zsum).max(P_FLOOR) };
            }
        }

        let exaggeration = if iter < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        for i in 0..n {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let coeff = (exaggeration * p[(i, j)] - q[(i, j)]) * num[(i, j)];
                gx += coeff * (y[(i, 0)] - y[(j, 0)]);
                gy += coeff * (y[(i, 1)] - y[(j, 1)]);
            }
            grad[(i, 0)] = 4.0 * gx;
            grad[(i, 1)] = 4.0 * gy;
        }

        let momentum = if iter < EXAGGERATION_ITERS { MOMENTUM_EARLY } else { MOMENTUM_LATE };
        for i in 0..n {
            for c in 0..2 {
                let g = grad[(i, c)];
                let same_direction = g.signum() == inc[(i, c)].signum();
                gains[(i, c)] = if same_direction {
                    (gains[(i, c)] * 0.8).max(0.01)
                } else {
                    gains[(i, c)] + 0.2
                };
                inc[(i, c)] = momentum * inc[(i, c)] - opts.learning_rate * gains[(i, c)] * g;
                y[(i, c)] += inc[(i, c)];
            }
        }
        // Keep the embedding centered.
        for c in 0..2 {
            let mean: f64 = (0..n).map(|i| y[(i, c)]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[(i, c)] -= mean;
            }
        }

        let iter_1 = iter + 1;
        if iter_1 % KL_EVERY == 0 || iter_1 == opts.iters {
            // Q for the trace must reflect the just-updated embedding.
            let mut zs = 0.0f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    let dx = y[(i, 0)] - y[(j, 0)];
                    let dy = y[(i, 1)] - y[(j, 1)];
                    let v = 1.0 / (1.0 + dx * dx + dy * dy);
                    num[(i, j)] = v;
                    num[(j, i)] = v;
                    zs += 2.0 * v;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    q[(i, j)] = if i == j { 0.0 } else { (num[(i, j)] / zs).max(P_FLOOR) };
                }
            }
            let kl = kl_divergence(&p, &q);
            if !kl.is_finite() {
                return Err(SfeError::Numerical {
                    context: format!("KL divergence at iteration {iter_1}"),
                });
            }
            if kl_trace.last().map(|&(it, _)| it) != Some(iter_1) {
                kl_trace.push((iter_1, kl));
            }
        }
    }

    if !y.is_finite() {
        return Err(SfeError::Numerical { context: "final 2-D embedding".into() });
    }
    let final_kl = kl_trace.last().map(|&(_, kl)| kl).expect("at least the final iteration");
    let points = features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.id.clone(), y[(i, 0)], y[(i, 1)]))
        .collect();
    Ok(Projection2d { points, kl_trace, final_kl })
}
