//! PCA baseline feature extractor.
//!
//! Images are log-normalized, bilinearly resized to a fixed square,
//! flattened and centered; features are the projection coefficients onto
//! the top principal directions. The eigenproblem is solved on the Gram
//! side (`N x N` for `N` samples), which keeps the desk-scale problem
//! tiny regardless of image resolution: if `X` is the centered `N x D`
//! data matrix and `X Xᵀ u = mu u`, the unit principal direction is
//! `v = Xᵀ u / sqrt(mu)` and the projection coefficients are simply
//! `X v = sqrt(mu) u` — one column per component.
//!
//! Top eigenpairs come from blocked subspace iteration with a
//! Rayleigh-Ritz finish; a full cyclic Jacobi eigensolver doubles as the
//! reference implementation for tests and small problems.

use super::FeatureRecord;
use crate::error::{Result, SfeError};
use crate::mat::Mat;
use crate::rng::Prng;
use crate::sar_data::{log_normalize, DatasetManifest};
use rayon::prelude::*;

/// Bilinear resize with align-corners semantics: output corners sample
/// input corners exactly, interior points interpolate.
pub fn bilinear_resize(src: &Mat<f32>, out_h: usize, out_w: usize) -> Result<Mat<f32>> {
    let (h, w) = src.shape();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(SfeError::Param("resize dimensions must be >= 1".into()));
    }
    let scale = |out_n: usize, n: usize, i: usize| -> f64 {
        if out_n == 1 {
            0.0
        } else {
            i as f64 * (n - 1) as f64 / (out_n - 1) as f64
        }
    };
    let mut out = Mat::zeros(out_h, out_w);
    for r in 0..out_h {
        let fr = scale(out_h, h, r);
        let r0 = fr.floor() as usize;
        let r1 = (r0 + 1).min(h - 1);
        let ar = fr - r0 as f64;
        for c in 0..out_w {
            let fc = scale(out_w, w, c);
            let c0 = fc.floor() as usize;
            let c1 = (c0 + 1).min(w - 1);
            let ac = fc - c0 as f64;
            let top = (1.0 - ac) * src[(r0, c0)] as f64 + ac * src[(r0, c1)] as f64;
            let bot = (1.0 - ac) * src[(r1, c0)] as f64 + ac * src[(r1, c1)] as f64;
            out[(r, c)] = ((1.0 - ar) * top + ar * bot) as f32;
        }
    }
    Ok(out)
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order with matching
/// eigenvector columns. Quadratic storage, cubic time — meant for small
/// matrices and as an oracle.
pub fn jacobi_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(SfeError::Structure(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    for r in 0..n {
        for c in 0..r {
            if (a[(r, c)] - a[(c, r)]).abs() > 1e-9 * a.max_abs().max(1.0) {
                return Err(SfeError::Structure(format!(
                    "matrix is not symmetric at ({r},{c})"
                )));
            }
        }
    }
    let mut m = a.clone();
    let mut v = Mat::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 });
    let frob: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1.0);
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for r in 0..n {
            for c in (r + 1)..n {
                off += m[(r, c)] * m[(r, c)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for i in 0..n {
                    let mip = m[(i, p)];
                    let miq = m[(i, q)];
                    m[(i, p)] = cos * mip - sin * miq;
                    m[(i, q)] = sin * mip + cos * miq;
                }
                for i in 0..n {
                    let mpi = m[(p, i)];
                    let mqi = m[(q, i)];
                    m[(p, i)] = cos * mpi - sin * mqi;
                    m[(q, i)] = sin * mpi + cos * mqi;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = cos * vip - sin * viq;
                    v[(i, q)] = sin * vip + cos * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).expect("finite eigenvalues"));
    let eigvals: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let eigvecs = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((eigvals, eigvecs))
}

/// Modified Gram-Schmidt, in place over columns. Columns that collapse to
/// (numerical) zero are replaced with zeros rather than renormalized.
fn orthonormalize_cols(b: &mut Mat<f64>) {
    let (n, m) = b.shape();
    for j in 0..m {
        for i in 0..j {
            let mut dot = 0.0;
            for r in 0..n {
                dot += b[(r, i)] * b[(r, j)];
            }
            for r in 0..n {
                b[(r, j)] -= dot * b[(r, i)];
            }
        }
        let mut norm = 0.0;
        for r in 0..n {
            norm += b[(r, j)] * b[(r, j)];
        }
        let norm = norm.sqrt();
        if norm > 1e-300 {
            for r in 0..n {
                b[(r, j)] /= norm;
            }
        } else {
            for r in 0..n {
                b[(r, j)] = 0.0;
            }
        }
    }
}

/// Top-`k` eigenpairs of a symmetric positive-semidefinite matrix by
/// subspace iteration with oversampling and a Rayleigh-Ritz finish.
/// Deterministic: the start block comes from a fixed internal stream.
fn symmetric_topk(a: &Mat<f64>, k: usize) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.rows();
    if k == 0 || k > n {
        return Err(SfeError::Param(format!("need 1 <= k <= {n}, got {k}")));
    }
    let block = (k + 10).min(n);
    let mut rng = Prng::new(0x5eed_9c4e_11d7_2b01);
    let mut b = Mat::from_fn(n, block, |_, _| rng.gauss());
    orthonormalize_cols(&mut b);
    let mut prev_ritz = vec![f64::INFINITY; block];
    for _iter in 0..1000 {
        let mut ab = a.matmul(&b);
        orthonormalize_cols(&mut ab);
        b = ab;
        // Ritz values on the diagonal of Bᵀ A B; converged when stable.
        let ab2 = a.matmul(&b);
        let mut ritz = vec![0.0f64; block];
        for (j, rz) in ritz.iter_mut().enumerate() {
            for r in 0..n {
                *rz += b[(r, j)] * ab2[(r, j)];
            }
        }
        let scale = ritz[0].abs().max(1.0);
        let worst = ritz
            .iter()
            .zip(&prev_ritz)
            .map(|(now, before)| (now - before).abs())
            .fold(0.0f64, f64::max);
        prev_ritz = ritz;
        if worst <= 1e-13 * scale {
            break;
        }
    }
    // Rayleigh-Ritz: solve the small projected problem exactly and rotate.
    let ab = a.matmul(&b);
    let small = b.matmul_tn(&ab); // Bᵀ A B, block x block
    let (vals, vecs) = jacobi_eigen(&small)?;
    let rotated = b.matmul(&vecs);
    let eigvals = vals[..k].to_vec();
    let eigvecs = Mat::from_fn(n, k, |r, c| rotated[(r, c)]);
    Ok((eigvals, eigvecs))
}

/// Principal-component projection of a raw (uncentered) data matrix:
/// center the rows, then return the `N x dim` coefficient matrix. A
/// direction whose variance is numerically zero yields a zero column.
pub fn pca_project(x: &Mat<f64>, dim: usize) -> Result<Mat<f64>> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(SfeError::Protocol(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    if dim == 0 || dim > n.min(d) {
        return Err(SfeError::Param(format!(
            "dim {dim} must lie in 1..=min(samples {n}, features {d})"
        )));
    }
    // Center.
    let mut xc = x.clone();
    for c in 0..d {
        let mut mean = 0.0;
        for r in 0..n {
            mean += xc[(r, c)];
        }
        mean /= n as f64;
        for r in 0..n {
            xc[(r, c)] -= mean;
        }
    }
    // Gram side: G = Xc Xcᵀ (N x N); coefficients are sqrt(mu) * u.
    let gram = xc.matmul_nt(&xc);
    let (mu, u) = symmetric_topk(&gram, dim)?;
    let floor = mu.first().copied().unwrap_or(0.0).max(0.0) * 1e-12;
    let mut scores = Mat::zeros(n, dim);
    for j in 0..dim {
        if mu[j] <= floor || mu[j] <= 0.0 {
            continue; // degenerate direction: keep the zero column
        }
        let s = mu[j].sqrt();
        for r in 0..n {
            scores[(r, j)] = s * u[(r, j)];
        }
    }
    Ok(scores)
}

/// The PCA feature extractor over a manifest: log-normalize, resize to
/// `resize x resize` (bilinear), flatten, project onto the top `dim`
/// principal directions of the whole dataset.
pub fn pca_baseline(
    manifest: &DatasetManifest,
    resize: u32,
    dim: u32,
) -> Result<Vec<FeatureRecord>> {
    if resize == 0 {
        return Err(SfeError::Param("resize must be >= 1".into()));
    }
    let n = manifest.len();
    if n < 2 {
        return Err(SfeError::Protocol(format!(
            "PCA baseline needs at least 2 samples, got {n}"
        )));
    }
    let side = resize as usize;
    let d = side * side;
    if dim == 0 || dim as usize > n.min(d) {
        return Err(SfeError::Param(format!(
            "dim {dim} must lie in 1..=min(samples {n}, pixels {d})"
        )));
    }
    // Per-image load/normalize/resize is independent; the indexed collect
    // keeps manifest order so results do not depend on the thread count.
    let rows: Vec<Vec<f64>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let slc = manifest.load_entry(entry)?;
            let amp = log_normalize(&slc)?;
            let resized = bilinear_resize(amp.data(), side, side)?;
            Ok(resized.as_slice().iter().map(|&v| v as f64).collect())
        })
        .collect::<Result<_>>()?;
    let mut x = Mat::zeros(n, d);
    for (i, row) in rows.into_iter().enumerate() {
        x.row_mut(i).copy_from_slice(&row);
    }
    let scores = pca_project(&x, dim as usize)?;
    Ok(manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            FeatureRecord::new(
                &e.id,
                e.label.clone(),
                scores.row(i).iter().map(|&v| v as f32).collect(),
            )
        })
        .collect())
}
