//! Chained-equations imputation: placeholder column means, then cyclic
//! deterministic linear regression of each incomplete column on the other 23,
//! with a small ridge on the normal equations.

use serde::{Deserialize, Serialize};

use crate::linalg::solve_spd_ridged;
use crate::{Result, Scalar};

use super::{
    check_multivariate_preconditions, missing_in_range_cells, result_from_cells, DayMatrix,
    ImputationResult, Treatment, HOURS_PER_DAY,
};

const D: usize = HOURS_PER_DAY;
const P: usize = D; // 23 predictors + intercept
const RIDGE: f64 = 1e-8;

/// Train-fitted MICE state: placeholder means and the last cycle's
/// per-column regression coefficients (23 slopes then the intercept).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiceModel<S: Scalar> {
    pub col_means: Vec<S>,
    pub coefficients: Vec<Option<Vec<S>>>,
    pub cycles: usize,
}

fn predictors(cells: &[f64], row: usize, target_col: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(P);
    for c in 0..D {
        if c != target_col {
            x.push(cells[row * D + c]);
        }
    }
    x.push(1.0); // intercept
    x
}

fn fit_column(
    cells: &[f64],
    observed_rows: &[usize],
    target_col: usize,
) -> Vec<f64> {
    // normal equations (XᵀX + λI) β = Xᵀy
    let mut xtx = vec![0.0; P * P];
    let mut xty = vec![0.0; P];
    for &r in observed_rows {
        let x = predictors(cells, r, target_col);
        let y = cells[r * D + target_col];
        for i in 0..P {
            xty[i] += x[i] * y;
            for j in 0..P {
                xtx[i * P + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..P {
        xtx[i * P + i] += RIDGE;
    }
    solve_spd_ridged(P, &xtx, &xty)
}

fn predict(coef: &[f64], cells: &[f64], row: usize, target_col: usize) -> f64 {
    let x = predictors(cells, row, target_col);
    x.iter().zip(coef).map(|(a, b)| a * b).sum()
}

/// Cyclic regression imputation with the stated number of cycles.
pub fn impute_mice<S: Scalar>(
    matrix: &DayMatrix<S>,
    cycles: usize,
) -> Result<(ImputationResult<S>, MiceModel<S>)> {
    check_multivariate_preconditions(matrix)?;
    let means = matrix.column_means()?;
    let means_f: Vec<f64> = means.iter().map(|m| m.to_f64().unwrap()).collect();

    let rows = matrix.rows();
    let mut cells = vec![0.0f64; rows * D];
    let mut missing_rows_per_col: Vec<Vec<usize>> = vec![Vec::new(); D];
    let mut observed_rows_per_col: Vec<Vec<usize>> = vec![Vec::new(); D];
    for r in 0..rows {
        for c in 0..D {
            match matrix.get(r, c) {
                Some(v) => {
                    cells[r * D + c] = v.to_f64().unwrap();
                    observed_rows_per_col[c].push(r);
                }
                None => {
                    cells[r * D + c] = means_f[c];
                    missing_rows_per_col[c].push(r);
                }
            }
        }
    }

    let mut coefficients: Vec<Option<Vec<S>>> = vec![None; D];
    let no_missing = missing_in_range_cells(matrix).is_empty()
        && missing_rows_per_col.iter().all(|v| v.is_empty());
    let effective_cycles = if no_missing { 0 } else { cycles };

    for _cycle in 0..effective_cycles {
        for col in 0..D {
            if missing_rows_per_col[col].is_empty() {
                continue;
            }
            let coef = fit_column(&cells, &observed_rows_per_col[col], col);
            for &r in &missing_rows_per_col[col] {
                cells[r * D + col] = predict(&coef, &cells, r, col);
            }
            coefficients[col] = Some(coef.iter().map(|&v| S::from_f64_lossy(v)).collect());
        }
    }

    let cells_s: Vec<S> = cells.iter().map(|&v| S::from_f64_lossy(v)).collect();
    let result = result_from_cells(
        matrix,
        &cells_s,
        Treatment::Mice,
        effective_cycles,
        true,
        0,
    );
    let model = MiceModel {
        col_means: means,
        coefficients,
        cycles,
    };
    Ok((result, model))
}

impl<S: Scalar> MiceModel<S> {
    /// Applies the train-fitted coefficients to a new matrix: mean
    /// placeholders, then the same number of cycles with frozen regressions.
    pub fn apply(&self, matrix: &DayMatrix<S>) -> ImputationResult<S> {
        let rows = matrix.rows();
        let means_f: Vec<f64> = self.col_means.iter().map(|m| m.to_f64().unwrap()).collect();
        let mut cells = vec![0.0f64; rows * D];
        let mut missing_rows_per_col: Vec<Vec<usize>> = vec![Vec::new(); D];
        for r in 0..rows {
            for c in 0..D {
                match matrix.get(r, c) {
                    Some(v) => cells[r * D + c] = v.to_f64().unwrap(),
                    None => {
                        cells[r * D + c] = means_f[c];
                        missing_rows_per_col[c].push(r);
                    }
                }
            }
        }
        for _cycle in 0..self.cycles {
            for col in 0..D {
                if missing_rows_per_col[col].is_empty() {
                    continue;
                }
                let coef: Vec<f64> = match &self.coefficients[col] {
                    Some(c) => c.iter().map(|v| v.to_f64().unwrap()).collect(),
                    None => continue, // column was complete at fit time: keep the mean
                };
                for &r in &missing_rows_per_col[col] {
                    cells[r * D + col] = predict(&coef, &cells, r, col);
                }
            }
        }
        let cells_s: Vec<S> = cells.iter().map(|&v| S::from_f64_lossy(v)).collect();
        result_from_cells(matrix, &cells_s, Treatment::Mice, self.cycles, true, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::to_day_matrix;

    fn matrix_with(f: impl Fn(usize, usize) -> Option<f64>, rows: usize) -> DayMatrix<f64> {
        let vals: Vec<Option<f64>> = (0..rows * 24).map(|i| f(i / 24, i % 24)).collect();
        to_day_matrix(&vals, 0)
    }

    #[test]
    fn complete_matrix_is_untouched() {
        let m = matrix_with(|r, c| Some(1.0 + r as f64 + 0.1 * c as f64), 30);
        let (res, _) = impute_mice(&m, 10).unwrap();
        assert!(res.filled_positions.is_empty());
        assert_eq!(res.iterations_used, 0);
    }

    #[test]
    fn exact_linear_relation_recovered() {
        // column 1 = 3*column 0 + 1, one cell missing
        let m = matrix_with(
            |r, c| match c {
                0 => Some(1.0 + 0.37 * r as f64),
                1 => {
                    if r == 11 {
                        None
                    } else {
                        Some(3.0 * (1.0 + 0.37 * r as f64) + 1.0)
                    }
                }
                _ => Some(2.0 + 0.05 * (c as f64) + 0.01 * (r as f64) * ((c % 3) as f64)),
            },
            40,
        );
        let (res, _) = impute_mice(&m, 3).unwrap();
        let expected = 3.0 * (1.0 + 0.37 * 11.0) + 1.0;
        let idx = 11 * 24 + 1;
        assert!(
            (res.filled[idx] - expected).abs() < 1e-6,
            "got {} want {}",
            res.filled[idx],
            expected
        );
    }

    #[test]
    fn apply_reuses_frozen_coefficients() {
        let m = matrix_with(
            |r, c| match c {
                0 => Some(1.0 + 0.5 * r as f64),
                1 => {
                    if r % 9 == 4 {
                        None
                    } else {
                        Some(2.0 * (1.0 + 0.5 * r as f64))
                    }
                }
                _ => Some(4.0 + 0.2 * c as f64),
            },
            45,
        );
        let (_, model) = impute_mice(&m, 5).unwrap();
        let test = matrix_with(
            |r, c| match c {
                0 => Some(10.0 + 0.5 * r as f64),
                1 => {
                    if r == 2 {
                        None
                    } else {
                        Some(2.0 * (10.0 + 0.5 * r as f64))
                    }
                }
                _ => Some(4.0 + 0.2 * c as f64),
            },
            30,
        );
        let res = model.apply(&test);
        let expected = 2.0 * (10.0 + 0.5 * 2.0);
        assert!((res.filled[2 * 24 + 1] - expected).abs() < 1e-4);
    }
}
