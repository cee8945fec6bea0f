//! Expectation-maximization imputation under a 24-dimensional Gaussian.
//! The E-step computes conditional expectations of the missing cells given
//! the observed cells (with conditional second moments folded into the
//! sufficient statistics); the M-step re-estimates the mean and covariance
//! from the completed statistics.

use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, cholesky_solve, min_eigenvalue};
use crate::{Result, Scalar};

use super::{
    check_multivariate_preconditions, missing_in_range_cells, result_from_cells, DayMatrix,
    ImputationResult, Treatment, HOURS_PER_DAY,
};

const D: usize = HOURS_PER_DAY;

/// Fitted Gaussian: mean, covariance, and the observed-data log-likelihood
/// trace of the EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmModel<S: Scalar> {
    pub mean: Vec<S>,
    pub covariance: Vec<S>,
    pub log_likelihood_trace: Vec<S>,
    pub ridge_floor_hits: usize,
}

struct RowView {
    observed: Vec<usize>,
    missing: Vec<usize>,
    obs_values: Vec<f64>,
}

fn row_view<S: Scalar>(matrix: &DayMatrix<S>, r: usize) -> RowView {
    let mut observed = Vec::new();
    let mut missing = Vec::new();
    let mut obs_values = Vec::new();
    for c in 0..D {
        match matrix.get(r, c) {
            Some(v) => {
                observed.push(c);
                obs_values.push(v.to_f64().expect("finite cell"));
            }
            None => missing.push(c),
        }
    }
    RowView {
        observed,
        missing,
        obs_values,
    }
}

/// Cholesky with escalating ridge; returns the factor.
fn chol_ridged(n: usize, a: &[f64]) -> Vec<f64> {
    if let Some(l) = cholesky(n, a) {
        return l;
    }
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let scale = (trace / n as f64).abs().max(1.0);
    let mut ridge = 1e-12 * scale;
    loop {
        let mut aa = a.to_vec();
        for i in 0..n {
            aa[i * n + i] += ridge;
        }
        if let Some(l) = cholesky(n, &aa) {
            return l;
        }
        ridge *= 10.0;
    }
}

struct EStep {
    sum: Vec<f64>,        // Σ x̂
    scatter: Vec<f64>,    // Σ (x̂ x̂ᵀ + cond-cov block)
    log_likelihood: f64,  // observed-data LL under the current parameters
    n_rows: usize,
}

fn e_step(matrix_rows: &[RowView], mean: &[f64], cov: &[f64]) -> EStep {
    let mut sum = vec![0.0; D];
    let mut scatter = vec![0.0; D * D];
    let mut ll = 0.0;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();

    for row in matrix_rows {
        let no = row.observed.len();
        let nm = row.missing.len();
        let mut xhat = vec![0.0; D];
        // conditional covariance contribution, full D×D, zero outside mm
        let mut cond = vec![0.0; D * D];

        if no == 0 {
            // fully unobserved row: prior mean and full covariance
            xhat.copy_from_slice(mean);
            cond.copy_from_slice(cov);
        } else {
            let mut sigma_oo = vec![0.0; no * no];
            for (a, &i) in row.observed.iter().enumerate() {
                for (b, &j) in row.observed.iter().enumerate() {
                    sigma_oo[a * no + b] = cov[i * D + j];
                }
            }
            let l = chol_ridged(no, &sigma_oo);
            let centered: Vec<f64> = row
                .obs_values
                .iter()
                .zip(&row.observed)
                .map(|(v, &i)| v - mean[i])
                .collect();
            let w = cholesky_solve(no, &l, &centered);

            let logdet: f64 = (0..no).map(|i| 2.0 * l[i * no + i].ln()).sum();
            let maha: f64 = centered.iter().zip(&w).map(|(c, w)| c * w).sum();
            ll += -0.5 * (no as f64 * ln_2pi + logdet + maha);

            for (a, &i) in row.observed.iter().enumerate() {
                xhat[i] = row.obs_values[a];
            }
            if nm > 0 {
                // B = Σ_oo⁻¹ Σ_om, one solve per missing column
                let mut b_cols = vec![vec![0.0; no]; nm];
                for (mcol, &j) in row.missing.iter().enumerate() {
                    let rhs: Vec<f64> =
                        row.observed.iter().map(|&i| cov[i * D + j]).collect();
                    b_cols[mcol] = cholesky_solve(no, &l, &rhs);
                }
                for (mcol, &j) in row.missing.iter().enumerate() {
                    let mut m = mean[j];
                    for (a, &i) in row.observed.iter().enumerate() {
                        let _ = i;
                        m += b_cols[mcol][a] * centered[a];
                    }
                    xhat[j] = m;
                }
                // cond[mm] = Σ_mm − Σ_mo B
                for (ma, &i) in row.missing.iter().enumerate() {
                    for (mb, &j) in row.missing.iter().enumerate() {
                        let mut v = cov[i * D + j];
                        for (a, &o) in row.observed.iter().enumerate() {
                            v -= cov[i * D + o] * b_cols[mb][a];
                        }
                        cond[i * D + j] = v;
                    }
                    let _ = ma;
                }
            }
        }

        for i in 0..D {
            sum[i] += xhat[i];
            for j in 0..D {
                scatter[i * D + j] += xhat[i] * xhat[j] + cond[i * D + j];
            }
        }
    }

    EStep {
        sum,
        scatter,
        log_likelihood: ll,
        n_rows: matrix_rows.len(),
    }
}

/// M-step with symmetrization and an eigenvalue ridge floor. Returns whether
/// the floor fired.
fn m_step(stats: &EStep, mean: &mut [f64], cov: &mut [f64]) -> bool {
    let n = stats.n_rows as f64;
    for i in 0..D {
        mean[i] = stats.sum[i] / n;
    }
    for i in 0..D {
        for j in 0..D {
            cov[i * D + j] = stats.scatter[i * D + j] / n - mean[i] * mean[j];
        }
    }
    for i in 0..D {
        for j in 0..i {
            let s = 0.5 * (cov[i * D + j] + cov[j * D + i]);
            cov[i * D + j] = s;
            cov[j * D + i] = s;
        }
    }
    apply_ridge_floor(cov)
}

fn apply_ridge_floor(cov: &mut [f64]) -> bool {
    let trace: f64 = (0..D).map(|i| cov[i * D + i]).sum();
    let floor = 1e-6 * trace / D as f64;
    if min_eigenvalue(D, cov) < floor {
        for i in 0..D {
            cov[i * D + i] += floor;
        }
        true
    } else {
        false
    }
}

/// Initial parameters from mean-filled data.
fn initial_params<S: Scalar>(matrix: &DayMatrix<S>) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let means = matrix.column_means()?;
    let mean: Vec<f64> = means.iter().map(|m| m.to_f64().unwrap()).collect();
    let n = matrix.rows() as f64;
    let mut cov = vec![0.0; D * D];
    for r in 0..matrix.rows() {
        let row: Vec<f64> = (0..D)
            .map(|c| {
                matrix
                    .get(r, c)
                    .map(|v| v.to_f64().unwrap())
                    .unwrap_or(mean[c])
            })
            .collect();
        for i in 0..D {
            for j in 0..D {
                cov[i * D + j] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    for v in cov.iter_mut() {
        *v /= n;
    }
    let hit = apply_ridge_floor(&mut cov);
    Ok((mean, cov, hit))
}

impl<S: Scalar> EmModel<S> {
    /// Fills the missing cells of a matrix with conditional means under this
    /// model. Returns the complete flattened cell array.
    pub fn conditional_fill(&self, matrix: &DayMatrix<S>) -> Vec<S> {
        let mean: Vec<f64> = self.mean.iter().map(|v| v.to_f64().unwrap()).collect();
        let cov: Vec<f64> = self.covariance.iter().map(|v| v.to_f64().unwrap()).collect();
        let mut cells = vec![S::zero(); matrix.rows() * D];
        for r in 0..matrix.rows() {
            let view = row_view(matrix, r);
            let no = view.observed.len();
            for (a, &i) in view.observed.iter().enumerate() {
                cells[r * D + i] = S::from_f64_lossy(view.obs_values[a]);
            }
            if view.missing.is_empty() {
                continue;
            }
            if no == 0 {
                for &j in &view.missing {
                    cells[r * D + j] = S::from_f64_lossy(mean[j]);
                }
                continue;
            }
            let mut sigma_oo = vec![0.0; no * no];
            for (a, &i) in view.observed.iter().enumerate() {
                for (b, &j) in view.observed.iter().enumerate() {
                    sigma_oo[a * no + b] = cov[i * D + j];
                }
            }
            let l = chol_ridged(no, &sigma_oo);
            let centered: Vec<f64> = view
                .obs_values
                .iter()
                .zip(&view.observed)
                .map(|(v, &i)| v - mean[i])
                .collect();
            let w = cholesky_solve(no, &l, &centered);
            for &j in &view.missing {
                let mut m = mean[j];
                for (a, &i) in view.observed.iter().enumerate() {
                    m += cov[j * D + i] * w[a];
                }
                cells[r * D + j] = S::from_f64_lossy(m);
            }
        }
        cells
    }

    /// Test-partition application: fill a new matrix with this train-fitted
    /// model.
    pub fn apply(&self, matrix: &DayMatrix<S>) -> ImputationResult<S> {
        let cells = self.conditional_fill(matrix);
        result_from_cells(matrix, &cells, Treatment::Em, 0, true, 0)
    }
}

/// EM imputation over a day matrix.
pub fn impute_em<S: Scalar>(
    matrix: &DayMatrix<S>,
    max_iters: usize,
    tol: f64,
) -> Result<(ImputationResult<S>, EmModel<S>)> {
    check_multivariate_preconditions(matrix)?;
    let (mut mean, mut cov, init_hit) = initial_params(matrix)?;
    let mut ridge_hits = usize::from(init_hit);

    let no_missing = missing_in_range_cells(matrix).is_empty();

    let rows: Vec<RowView> = (0..matrix.rows()).map(|r| row_view(matrix, r)).collect();

    let mut trace = Vec::new();
    let mut converged = no_missing;
    if !no_missing {
        for _iter in 0..max_iters {
            let stats = e_step(&rows, &mean, &cov);
            trace.push(stats.log_likelihood);
            if let [.., prev, last] = trace[..] {
                let denom = last.abs().max(1.0);
                if (last - prev).abs() / denom < tol {
                    converged = true;
                    break;
                }
            }
            if m_step(&stats, &mut mean, &mut cov) {
                ridge_hits += 1;
            }
        }
        // a stalled likelihood with the ridge floor repeatedly firing is a
        // non-convergence signal, not an exception
        if ridge_hits > 2 && !converged {
            converged = false;
        }
    }

    let model = EmModel {
        mean: mean.iter().map(|&v| S::from_f64_lossy(v)).collect(),
        covariance: cov.iter().map(|&v| S::from_f64_lossy(v)).collect(),
        log_likelihood_trace: trace.iter().map(|&v| S::from_f64_lossy(v)).collect(),
        ridge_floor_hits: ridge_hits,
    };
    let cells = model.conditional_fill(matrix);
    let mut result = result_from_cells(matrix, &cells, Treatment::Em, trace.len(), converged, 0);
    result.converged = converged;
    Ok((result, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::to_day_matrix;

    fn padded_two_col(rows: usize, f: impl Fn(usize) -> (Option<f64>, Option<f64>)) -> DayMatrix<f64> {
        // columns 0 and 1 carry signal, the rest are observed constants
        let mut vals = Vec::new();
        for r in 0..rows {
            let (a, b) = f(r);
            vals.push(a);
            vals.push(b);
            for c in 2..24 {
                vals.push(Some(5.0 + 0.1 * c as f64));
            }
        }
        to_day_matrix(&vals, 0)
    }

    #[test]
    fn complete_matrix_returns_input_and_sample_moments() {
        let m = padded_two_col(30, |r| (Some(r as f64), Some(2.0 * r as f64)));
        let (res, model) = impute_em(&m, 50, 1e-8).unwrap();
        assert!(res.filled_positions.is_empty());
        assert!(res.converged);
        // mean of column 0 over 0..30 is 14.5
        assert!((model.mean[0] - 14.5).abs() < 1e-9);
        assert!((model.mean[1] - 29.0).abs() < 1e-9);
        // covariance equals the MLE sample moment
        // ridge floor adds ~1e-6*trace/24 to the diagonal
        let var0: f64 = (0..30).map(|r| (r as f64 - 14.5).powi(2)).sum::<f64>() / 30.0;
        assert!((model.covariance[0] - var0).abs() < 1e-3);
    }

    #[test]
    fn linear_relation_recovered_by_conditional_mean() {
        // x2 = 2*x1 exactly; one x2 missing
        let m = padded_two_col(40, |r| {
            let x1 = 1.0 + r as f64 * 0.25;
            if r == 17 {
                (Some(x1), None)
            } else {
                (Some(x1), Some(2.0 * x1))
            }
        });
        let (res, _) = impute_em(&m, 200, 1e-12).unwrap();
        let x1 = 1.0 + 17.0 * 0.25;
        let idx = 17 * 24 + 1;
        assert!(
            (res.filled[idx] - 2.0 * x1).abs() < 1e-6,
            "filled {} expected {}",
            res.filled[idx],
            2.0 * x1
        );
    }

    #[test]
    fn precondition_violations_reported() {
        let m = padded_two_col(10, |r| (Some(r as f64), Some(r as f64)));
        assert!(impute_em(&m, 10, 1e-6).is_err());
    }

    #[test]
    fn present_values_pass_through_bitwise() {
        let m = padded_two_col(30, |r| {
            if r % 7 == 3 {
                (None, Some(0.1 + r as f64))
            } else {
                (Some(0.3 * r as f64 + 0.01), Some(0.1 + r as f64))
            }
        });
        let (res, _) = impute_em(&m, 50, 1e-8).unwrap();
        for i in 0..res.filled.len() {
            if !res.filled_positions.contains(&i) {
                let (r, c) = (i / 24, i % 24);
                assert_eq!(res.filled[i].to_bits(), m.get(r, c).unwrap().to_bits());
            }
        }
    }
}
