//! Pilot analysis: order selection by BIC, least-squares fit and the
//! plug-in precision matrix used for streaming leverage scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlsError};
use crate::linalg::{self, sym_pinv, PINV_REL_TOL};

/// Residual-variance denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// RSS / (rows − p); falls back to RSS / rows when rows ≤ p.
    #[default]
    Unbiased,
    /// RSS / rows.
    PerRow,
}

impl VarianceConvention {
    pub fn variance(self, rss: f64, rows: usize, p: usize) -> f64 {
        let denom = match self {
            VarianceConvention::Unbiased if rows > p => rows - p,
            _ => rows,
        };
        rss / denom.max(1) as f64
    }
}

/// Least-squares AR fit over a contiguous series.
#[derive(Debug, Clone)]
pub struct ArFit {
    pub beta: DVector<f64>,
    pub sigma_sq: f64,
    pub gram: DMatrix<f64>,
    pub rss: f64,
    pub rows: usize,
    pub rank: usize,
}

// Normal-equation accumulators for targets series[first..].
fn accumulate(series: &[f64], p: usize, first: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut gram = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for t in first..series.len() {
        for i in 0..p {
            let zi = series[t - 1 - i];
            xty[i] += zi * series[t];
            for j in 0..=i {
                gram[(i, j)] += zi * series[t - 1 - j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    (gram, xty)
}

fn residual_ss(series: &[f64], p: usize, first: usize, beta: &DVector<f64>) -> f64 {
    (first..series.len())
        .map(|t| {
            let fit: f64 = (0..p).map(|k| beta[k] * series[t - 1 - k]).sum();
            let r = series[t] - fit;
            r * r
        })
        .sum()
}

fn regress(series: &[f64], p: usize, first: usize, convention: VarianceConvention) -> ArFit {
    let (gram, xty) = accumulate(series, p, first);
    let pinv = sym_pinv(&gram, PINV_REL_TOL);
    let beta = &pinv.inverse * xty;
    let rss = residual_ss(series, p, first, &beta);
    let rows = series.len() - first;
    ArFit {
        sigma_sq: convention.variance(rss, rows, p),
        beta,
        gram,
        rss,
        rows,
        rank: pinv.rank,
    }
}

/// Fits AR(p) by least squares with the minimum-norm (pseudoinverse) solution.
pub fn fit_ar_ls(series: &[f64], p: usize, convention: VarianceConvention) -> Result<ArFit> {
    if p == 0 {
        return Err(SlsError::config("AR order must be at least 1"));
    }
    if series.len() <= p {
        return Err(SlsError::InsufficientData {
            needed: p,
            got: series.len(),
        });
    }
    Ok(regress(series, p, p, convention))
}

/// BIC score of each candidate order `1..=p_max`, all fitted on the common
/// target window `series[p_max..]`.
pub fn bic_scores(pilot: &[f64], p_max: usize) -> Result<Vec<f64>> {
    if p_max == 0 {
        return Err(SlsError::config("p_max must be at least 1"));
    }
    if p_max + 10 >= pilot.len() {
        return Err(SlsError::config(format!(
            "p_max {p_max} too large for a pilot of {} samples (need p_max < n0 - 10)",
            pilot.len()
        )));
    }
    let n_eff = (pilot.len() - p_max) as f64;
    let energy: f64 = pilot[p_max..].iter().map(|x| x * x).sum();
    // exact fits would otherwise give ln(0); flooring keeps ties resolvable
    let floor = (energy * 1e-24).max(f64::MIN_POSITIVE);
    Ok((1..=p_max)
        .map(|p| {
            let rss = regress(pilot, p, p_max, VarianceConvention::PerRow)
                .rss
                .max(floor);
            n_eff * (rss / n_eff).ln() + p as f64 * n_eff.ln()
        })
        .collect())
}

/// Order minimizing BIC; ties go to the smaller order.
pub fn select_order_bic(pilot: &[f64], p_max: usize) -> Result<usize> {
    let scores = bic_scores(pilot, p_max)?;
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = k;
        }
    }
    Ok(best + 1)
}

/// `(ΓᵀΓ)†` over the pilot regressors, symmetrized.
pub fn estimate_precision(pilot: &[f64], p: usize) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(SlsError::config("AR order must be at least 1"));
    }
    if pilot.len() <= p {
        return Err(SlsError::InsufficientData {
            needed: p,
            got: pilot.len(),
        });
    }
    let (gram, _) = accumulate(pilot, p, p);
    precision_from_gram(&gram)
}

fn precision_from_gram(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pinv = sym_pinv(gram, PINV_REL_TOL);
    let largest = pinv.eigenvalues.max();
    let smallest = pinv.eigenvalues.min();
    if pinv.rank < gram.nrows() || largest <= 0.0 {
        return Err(SlsError::DegeneratePilot {
            smallest_eigenvalue: smallest,
            largest_eigenvalue: largest,
        });
    }
    Ok(pinv.inverse)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotOptions {
    pub p_max: usize,
    /// Skip BIC and use this order.
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub convention: VarianceConvention,
}

impl PilotOptions {
    pub fn bic(p_max: usize) -> Self {
        Self {
            p_max,
            order: None,
            convention: VarianceConvention::default(),
        }
    }

    pub fn fixed(order: usize) -> Self {
        Self {
            p_max: order,
            order: Some(order),
            convention: VarianceConvention::default(),
        }
    }
}

/// Everything the online stage needs from the pilot segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PilotRepr", into = "PilotRepr")]
pub struct PilotModel {
    order: usize,
    precision: DMatrix<f64>,
    precision_flat: Vec<f64>,
    beta0: DVector<f64>,
    sigma0_sq: f64,
    n0: usize,
    start_rate: f64,
}

impl PilotModel {
    pub fn new(
        precision: DMatrix<f64>,
        beta0: DVector<f64>,
        sigma0_sq: f64,
        n0: usize,
        start_rate: f64,
    ) -> Result<Self> {
        let order = beta0.len();
        if order == 0 {
            return Err(SlsError::config("pilot order must be at least 1"));
        }
        if precision.nrows() != order || precision.ncols() != order {
            return Err(SlsError::config(format!(
                "precision is {}x{}, expected {order}x{order}",
                precision.nrows(),
                precision.ncols()
            )));
        }
        if n0 <= 10 * order {
            return Err(SlsError::config(format!(
                "pilot size {n0} must exceed 10 x order ({order})"
            )));
        }
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
            return Err(SlsError::config(format!(
                "pilot innovation variance must be positive, got {sigma0_sq}"
            )));
        }
        if precision.iter().chain(beta0.iter()).any(|v| !v.is_finite()) {
            return Err(SlsError::config("pilot contains non-finite entries"));
        }
        let precision = linalg::symmetrize(&precision);
        Ok(Self {
            order,
            precision_flat: linalg::to_row_major(&precision),
            precision,
            beta0,
            sigma0_sq,
            n0,
            start_rate: start_rate.clamp(0.0, 1.0),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Row-major precision, for the per-sample quadratic form.
    pub fn precision_row_major(&self) -> &[f64] {
        &self.precision_flat
    }

    pub fn beta0(&self) -> &DVector<f64> {
        &self.beta0
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    /// Mean of `min(h̃, 1)` over the pilot regressors; the default start
    /// probability of the uniform baseline.
    pub fn start_rate(&self) -> f64 {
        self.start_rate
    }

    /// Mean capped leverage over `pilot` with scores multiplied by `scale`.
    pub fn matched_start_rate(&self, pilot: &[f64], scale: f64) -> f64 {
        let p = self.order;
        if pilot.len() <= p {
            return 0.0;
        }
        let mut z = vec![0.0; p];
        let total: f64 = (p..pilot.len())
            .map(|t| {
                for k in 0..p {
                    z[k] = pilot[t - 1 - k];
                }
                (scale * linalg::quad_form_slice(&self.precision_flat, &z)).min(1.0)
            })
            .sum();
        total / (pilot.len() - p) as f64
    }
}

#[derive(Serialize, Deserialize)]
struct PilotRepr {
    order: usize,
    n0: usize,
    beta0: Vec<f64>,
    sigma0_sq: f64,
    precision: Vec<Vec<f64>>,
    start_rate: f64,
}

impl From<PilotModel> for PilotRepr {
    fn from(m: PilotModel) -> Self {
        PilotRepr {
            order: m.order,
            n0: m.n0,
            beta0: m.beta0.iter().copied().collect(),
            sigma0_sq: m.sigma0_sq,
            precision: linalg::to_rows(&m.precision),
            start_rate: m.start_rate,
        }
    }
}

impl TryFrom<PilotRepr> for PilotModel {
    type Error = SlsError;

    fn try_from(r: PilotRepr) -> Result<Self> {
        let precision = linalg::from_rows(&r.precision)
            .ok_or_else(|| SlsError::config("ragged precision matrix"))?;
        if r.order != r.beta0.len() {
            return Err(SlsError::config("pilot order does not match beta0 length"));
        }
        PilotModel::new(
            precision,
            DVector::from_vec(r.beta0),
            r.sigma0_sq,
            r.n0,
            r.start_rate,
        )
    }
}

/// Order selection, fit and precision estimate in one step.
pub fn build_pilot(pilot: &[f64], p_max: usize) -> Result<PilotModel> {
    build_pilot_with(pilot, &PilotOptions::bic(p_max))
}

pub fn build_pilot_with(pilot: &[f64], opts: &PilotOptions) -> Result<PilotModel> {
    let order = match opts.order {
        Some(p) => {
            if p == 0 {
                return Err(SlsError::config("pilot order must be at least 1"));
            }
            p
        }
        None => select_order_bic(pilot, opts.p_max)?,
    };
    if pilot.len() <= 10 * order {
        return Err(SlsError::config(format!(
            "pilot size {} must exceed 10 x order ({order})",
            pilot.len()
        )));
    }
    let fit = fit_ar_ls(pilot, order, opts.convention)?;
    let precision = precision_from_gram(&fit.gram)?;
    // the variance floor mirrors the BIC floor for noiseless pilots
    let energy: f64 = pilot.iter().map(|x| x * x).sum();
    let sigma0_sq = fit.sigma_sq.max(energy * 1e-24 / fit.rows as f64);
    let mut model = PilotModel::new(precision, fit.beta, sigma0_sq, pilot.len(), 0.0)?;
    model.start_rate = model.matched_start_rate(pilot, 1.0);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{simulate_ar, ArProcessSpec};

    #[test]
    fn one_point_exact_fit() {
        let fit = fit_ar_ls(&[1.0, 2.0], 1, VarianceConvention::Unbiased).unwrap();
        assert_eq!(fit.beta[0], 2.0);
        assert_eq!(fit.rss, 0.0);
        assert_eq!(fit.gram[(0, 0)], 1.0);
    }

    #[test]
    fn ar1_fit_within_three_standard_errors() {
        let spec = ArProcessSpec::gaussian(vec![0.5], 1.0, 21);
        let xs = simulate_ar(&spec, 10_000).unwrap();
        let fit = fit_ar_ls(&xs, 1, VarianceConvention::Unbiased).unwrap();
        // s.e. = sigma / sqrt(sum of squared regressors)
        let se = 1.0 / fit.gram[(0, 0)].sqrt();
        assert!((fit.beta[0] - 0.5).abs() < 3.0 * se);
        assert!((fit.sigma_sq - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_series_gives_zero_beta() {
        for p in 1..4 {
            let fit = fit_ar_ls(&[0.0; 50], p, VarianceConvention::Unbiased).unwrap();
            assert!(fit.beta.iter().all(|&b| b == 0.0));
            assert_eq!(fit.rank, 0);
        }
    }

    #[test]
    fn insufficient_series_is_rejected() {
        assert!(matches!(
            fit_ar_ls(&[1.0, 2.0], 2, VarianceConvention::Unbiased),
            Err(SlsError::InsufficientData { .. })
        ));
    }

    #[test]
    fn noiseless_recursion_is_recovered() {
        // X_i = 0.6 X_{i-1} - 0.3 X_{i-2} started from (1, 0.5)
        let mut xs = vec![1.0, 0.5];
        for i in 2..60 {
            let v = 0.6 * xs[i - 1] - 0.3 * xs[i - 2];
            xs.push(v);
        }
        let fit = fit_ar_ls(&xs, 2, VarianceConvention::Unbiased).unwrap();
        assert!((fit.beta[0] - 0.6).abs() < 1e-8);
        assert!((fit.beta[1] + 0.3).abs() < 1e-8);
        let energy: f64 = xs.iter().map(|x| x * x).sum();
        assert!(fit.rss < 1e-8 * energy);
    }

    #[test]
    fn bic_picks_one_for_noiseless_ar1() {
        let xs: Vec<f64> = (0..200).map(|i| 0.9f64.powi(i)).collect();
        assert_eq!(select_order_bic(&xs, 5).unwrap(), 1);
    }

    #[test]
    fn bic_rejects_large_pmax() {
        let xs = vec![1.0; 30];
        assert!(matches!(
            select_order_bic(&xs, 20),
            Err(SlsError::Config(_))
        ));
        assert!(select_order_bic(&xs, 0).is_err());
    }

    #[test]
    fn bic_recovers_ar2_over_seeds() {
        let hits = (0..100)
            .filter(|&s| {
                let spec = ArProcessSpec::gaussian(vec![0.75, -0.5], 1.0, 1000 + s);
                let xs = simulate_ar(&spec, 500).unwrap();
                select_order_bic(&xs, 6).unwrap() == 2
            })
            .count();
        assert!(hits >= 90, "hits {hits}");
    }

    #[test]
    fn bic_white_noise_returns_smallest_order() {
        let hits = (0..50)
            .filter(|&s| {
                let xs =
                    simulate_ar(&ArProcessSpec::gaussian(vec![0.0], 1.0, 77 + s), 500).unwrap();
                select_order_bic(&xs, 6).unwrap() == 1
            })
            .count();
        // parsimony at n0 = 500 leaves only a handful of over-fits
        assert!(hits >= 45, "hits {hits}");
    }

    #[test]
    fn scalar_precision_is_reciprocal() {
        // lag values 2 and 0 (regressors of the last two targets), sum of squares 4
        let omega = estimate_precision(&[2.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(omega[(0, 0)], 0.25);
    }

    #[test]
    fn white_noise_precision_is_scaled_identity() {
        let xs = simulate_ar(&ArProcessSpec::gaussian(vec![0.0], 1.0, 8), 10_000).unwrap();
        let omega = estimate_precision(&xs, 2).unwrap();
        let expect = 1.0 / 10_000.0;
        assert!((omega[(0, 0)] / expect - 1.0).abs() < 0.1);
        assert!((omega[(1, 1)] / expect - 1.0).abs() < 0.1);
        assert!(omega[(0, 1)].abs() < 0.1 * expect);
    }

    #[test]
    fn zero_pilot_is_degenerate() {
        assert!(matches!(
            estimate_precision(&[0.0; 100], 2),
            Err(SlsError::DegeneratePilot { .. })
        ));
        assert!(matches!(
            build_pilot(&[0.0; 100], 3),
            Err(SlsError::DegeneratePilot { .. })
        ));
    }

    #[test]
    fn precision_is_symmetric_psd() {
        let xs = simulate_ar(&ArProcessSpec::gaussian(vec![0.5, 0.2, -0.1], 1.0, 4), 2000).unwrap();
        let omega = estimate_precision(&xs, 3).unwrap();
        assert_eq!(omega, omega.transpose());
        let eig = nalgebra::SymmetricEigen::new(omega.clone()).eigenvalues;
        assert!(eig.min() >= -1e-10 * eig.max());
    }

    #[test]
    fn mean_pilot_leverage_is_order_over_rows() {
        let xs = simulate_ar(&ArProcessSpec::gaussian(vec![0.6, -0.2], 1.0, 9), 1000).unwrap();
        let model = build_pilot_with(&xs, &PilotOptions::fixed(2)).unwrap();
        let mean = model.matched_start_rate(&xs, 1.0);
        let expected = 2.0 / xs.len() as f64;
        assert!((mean / expected - 1.0).abs() < 0.15, "{mean} vs {expected}");
        assert_eq!(model.start_rate(), mean);
    }

    #[test]
    fn build_pilot_checks_size_margin() {
        let xs = simulate_ar(&ArProcessSpec::gaussian(vec![0.5], 1.0, 9), 15).unwrap();
        assert!(matches!(
            build_pilot_with(&xs, &PilotOptions::fixed(2)),
            Err(SlsError::Config(_))
        ));
    }

    #[test]
    fn pilot_json_round_trip() {
        let xs = simulate_ar(&ArProcessSpec::gaussian(vec![0.4, 0.1], 1.0, 2), 400).unwrap();
        let model = build_pilot(&xs, 4).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: PilotModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn per_row_convention() {
        assert_eq!(VarianceConvention::PerRow.variance(2.0, 2, 1), 1.0);
        assert_eq!(VarianceConvention::Unbiased.variance(2.0, 2, 1), 2.0);
        assert_eq!(VarianceConvention::Unbiased.variance(0.0, 1, 1), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn bic_is_scale_invariant(seed in 0u64..1000, scale in 1e-3f64..1e3) {
                let xs = simulate_ar(&ArProcessSpec::gaussian(vec![0.5, -0.3], 1.0, seed), 300).unwrap();
                let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
                prop_assert_eq!(select_order_bic(&xs, 5).unwrap(), select_order_bic(&scaled, 5).unwrap());
            }
        }
    }
}
