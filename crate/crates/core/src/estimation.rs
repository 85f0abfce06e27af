//! Least-squares inference on a single block.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlsError};
use crate::linalg::{self, psd_sqrt, quad_form, sym_pinv, PINV_REL_TOL};
use crate::pilot::VarianceConvention;
use crate::sampler::SlsBlock;
use crate::special::{chi2_quantile, normal_quantile};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockEstimate {
    pub beta_hat: DVector<f64>,
    /// `ΓᵀΓ` of the block design.
    pub gram: DMatrix<f64>,
    pub sigma_hat_sq: f64,
    pub block_len: usize,
    /// `tr(ΓᵀΓ) = Σ‖z_i‖²`.
    pub info_trace: f64,
    pub rank: usize,
    /// Rank-deficient Gram: `beta_hat` is the minimum-norm solution.
    pub degenerate: bool,
}

impl BlockEstimate {
    pub fn order(&self) -> usize {
        self.beta_hat.len()
    }
}

/// LS fit `(ΓᵀΓ)†Γᵀx` over the block's regression pairs.
pub fn block_ls(block: &SlsBlock, convention: VarianceConvention) -> BlockEstimate {
    let p = block.order;
    let v = &block.values;
    let mut gram = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for t in p..v.len() {
        for i in 0..p {
            let zi = v[t - 1 - i];
            xty[i] += zi * v[t];
            for j in 0..=i {
                gram[(i, j)] += zi * v[t - 1 - j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    let pinv = sym_pinv(&gram, PINV_REL_TOL);
    let beta_hat = &pinv.inverse * &xty;
    let rss: f64 = (p..v.len())
        .map(|t| {
            let fit: f64 = (0..p).map(|k| beta_hat[k] * v[t - 1 - k]).sum();
            (v[t] - fit).powi(2)
        })
        .sum();
    let rows = v.len().saturating_sub(p);
    BlockEstimate {
        sigma_hat_sq: convention.variance(rss, rows, p),
        info_trace: gram.trace(),
        block_len: rows,
        rank: pinv.rank,
        degenerate: pinv.rank < p,
        beta_hat,
        gram,
    }
}

fn diff(est: &BlockEstimate, beta: &[f64]) -> Result<DVector<f64>> {
    if beta.len() != est.order() {
        return Err(SlsError::config(format!(
            "coefficient vector of length {} against an order-{} estimate",
            beta.len(),
            est.order()
        )));
    }
    Ok(&est.beta_hat - DVector::from_column_slice(beta))
}

/// `(ΓᵀΓ)^{1/2}(β̂ − β)` with the symmetric PSD square root.
pub fn normalized_error(est: &BlockEstimate, beta_true: &[f64]) -> Result<DVector<f64>> {
    Ok(psd_sqrt(&est.gram) * diff(est, beta_true)?)
}

/// `(β̂ − β_ref)ᵀ ΓᵀΓ (β̂ − β_ref) / σ²`.
pub fn pivot_chi2(est: &BlockEstimate, beta_ref: &[f64], sigma_sq: f64) -> Result<f64> {
    if !(sigma_sq > 0.0) {
        return Err(SlsError::config(format!(
            "variance must be positive, got {sigma_sq}"
        )));
    }
    let d = diff(est, beta_ref)?;
    Ok(quad_form(&est.gram, &d).max(0.0) / sigma_sq)
}

/// Fixed-width ellipsoid `{β : (β − β̂)ᵀ ΓᵀΓ (β − β̂) ≤ d² tr(ΓᵀΓ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRegion {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub radius_sq: f64,
    pub level: f64,
}

impl ConfidenceRegion {
    pub fn contains(&self, beta: &[f64]) -> bool {
        if beta.len() != self.center.len() {
            return false;
        }
        let d = DVector::from_column_slice(beta) - &self.center;
        quad_form(&self.shape, &d) <= self.radius_sq
    }

    /// Half-lengths of the ellipsoid axes in coefficient space.
    pub fn semi_axes(&self) -> Vec<f64> {
        let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(&self.shape));
        eig.eigenvalues
            .iter()
            .map(|&l| {
                if l > 0.0 {
                    (self.radius_sq / l).sqrt()
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(SlsError::config(format!("alpha {alpha} outside (0, 1)")))
    }
}

pub fn confidence_region(est: &BlockEstimate, d: f64, alpha: f64) -> Result<ConfidenceRegion> {
    if !(d > 0.0) {
        return Err(SlsError::config(format!(
            "width d must be positive, got {d}"
        )));
    }
    check_alpha(alpha)?;
    Ok(ConfidenceRegion {
        center: est.beta_hat.clone(),
        shape: est.gram.clone(),
        radius_sq: d * d * est.info_trace,
        level: 1.0 - alpha,
    })
}

/// Information threshold `c = σ² a² / d²` with `P[χ²_p ≤ a²] = 1 − α`.
pub fn threshold_for_width(sigma_sq: f64, alpha: f64, d: f64, p: usize) -> Result<f64> {
    if !(sigma_sq > 0.0 && d > 0.0) || p == 0 {
        return Err(SlsError::config("sigma_sq, d and p must be positive"));
    }
    check_alpha(alpha)?;
    let a_sq = chi2_quantile(p as u32, 1.0 - alpha)?;
    Ok(sigma_sq * a_sq / (d * d))
}

/// AR(1) interval `β̂ ± c^{-1/2} σ Φ^{-1}(1 − α)`, approximate level `1 − 2α`.
pub fn ar1_interval(est: &BlockEstimate, c: f64, sigma: f64, alpha: f64) -> Result<(f64, f64)> {
    if est.order() != 1 {
        return Err(SlsError::config(format!(
            "AR(1) interval requested for an order-{} estimate",
            est.order()
        )));
    }
    if !(c > 0.0 && sigma > 0.0) {
        return Err(SlsError::config("c and sigma must be positive"));
    }
    check_alpha(alpha)?;
    let half = sigma * normal_quantile(1.0 - alpha)? / c.sqrt();
    let b = est.beta_hat[0];
    Ok((b - half, b + half))
}
