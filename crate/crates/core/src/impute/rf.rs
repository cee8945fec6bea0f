//! missForest-style iterative random-forest imputation: mean placeholders,
//! then per-column forests of bootstrap-sampled regression trees re-fit for
//! a few iterations until the imputed cells stop moving.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Result, Scalar};

use super::tree::{RegressionTree, TreeConfig};
use super::{
    check_multivariate_preconditions, missing_in_range_cells, result_from_cells, DayMatrix,
    ImputationResult, Treatment, HOURS_PER_DAY,
};

const D: usize = HOURS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfOptions {
    pub trees: usize,
    pub iters: usize,
    pub min_leaf: usize,
    /// Random feature subset size per split; ⌈√23⌉ = 5 by default.
    pub mtry: usize,
    pub max_depth: usize,
    /// Stop when the mean absolute change of imputed cells falls below this.
    pub change_tol: f64,
}

impl Default for RfOptions {
    fn default() -> Self {
        RfOptions {
            trees: 50,
            iters: 5,
            min_leaf: 5,
            mtry: 5,
            max_depth: 16,
            change_tol: 1e-4,
        }
    }
}

/// Train-fitted forests (last iteration) per incomplete column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel<S: Scalar> {
    pub col_means: Vec<S>,
    pub forests: Vec<Option<Vec<RegressionTree>>>,
    pub options: RfOptions,
    pub passes: usize,
}

/// Deterministic per-tree stream: splitmix of (seed, iter, col, tree).
fn tree_seed(seed: u64, iter: usize, col: usize, tree: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(1 + iter as u64))
        .wrapping_add(0xBF58_476D_1CE4_E5B9u64.wrapping_mul(1 + col as u64))
        .wrapping_add(0x94D0_49BB_1331_11EBu64.wrapping_mul(1 + tree as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn feature_row(cells: &[f64], row: usize, target_col: usize) -> Vec<f64> {
    (0..D)
        .filter(|&c| c != target_col)
        .map(|c| cells[row * D + c])
        .collect()
}

fn train_forest(
    cells: &[f64],
    observed_rows: &[usize],
    col: usize,
    opts: &RfOptions,
    seed: u64,
    iter: usize,
) -> Vec<RegressionTree> {
    let rows: Vec<Vec<f64>> = observed_rows
        .iter()
        .map(|&r| feature_row(cells, r, col))
        .collect();
    let targets: Vec<f64> = observed_rows.iter().map(|&r| cells[r * D + col]).collect();
    let cfg = TreeConfig {
        min_leaf: opts.min_leaf,
        mtry: opts.mtry,
        max_depth: opts.max_depth,
    };
    let n = rows.len();
    (0..opts.trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, iter, col, t));
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            RegressionTree::fit(&rows, &targets, &bootstrap, &cfg, &mut rng)
        })
        .collect()
}

fn forest_predict(forest: &[RegressionTree], row: &[f64]) -> f64 {
    forest.iter().map(|t| t.predict(row)).sum::<f64>() / forest.len() as f64
}

/// Iterative random-forest imputation with the default hyperparameters.
pub fn impute_rf<S: Scalar>(
    matrix: &DayMatrix<S>,
    trees: usize,
    iters: usize,
    seed: u64,
) -> Result<(ImputationResult<S>, RfModel<S>)> {
    let opts = RfOptions {
        trees,
        iters,
        ..RfOptions::default()
    };
    impute_rf_with(matrix, &opts, seed)
}

pub fn impute_rf_with<S: Scalar>(
    matrix: &DayMatrix<S>,
    opts: &RfOptions,
    seed: u64,
) -> Result<(ImputationResult<S>, RfModel<S>)> {
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

    let mut forests: Vec<Option<Vec<RegressionTree>>> = vec![None; D];
    let no_missing = missing_in_range_cells(matrix).is_empty()
        && missing_rows_per_col.iter().all(|v| v.is_empty());

    let mut iterations_used = 0usize;
    if !no_missing {
        for iter in 0..opts.iters {
            let mut total_change = 0.0f64;
            let mut n_imputed = 0usize;
            for col in 0..D {
                if missing_rows_per_col[col].is_empty() {
                    continue;
                }
                let forest =
                    train_forest(&cells, &observed_rows_per_col[col], col, opts, seed, iter);
                for &r in &missing_rows_per_col[col] {
                    let row = feature_row(&cells, r, col);
                    let new = forest_predict(&forest, &row);
                    total_change += (new - cells[r * D + col]).abs();
                    cells[r * D + col] = new;
                    n_imputed += 1;
                }
                forests[col] = Some(forest);
            }
            iterations_used = iter + 1;
            if total_change / (n_imputed.max(1) as f64) < opts.change_tol {
                break;
            }
        }
    }

    let cells_s: Vec<S> = cells.iter().map(|&v| S::from_f64_lossy(v)).collect();
    let result = result_from_cells(matrix, &cells_s, Treatment::Rf, iterations_used, true, 0);
    let model = RfModel {
        col_means: means,
        forests,
        options: *opts,
        passes: iterations_used.max(1),
    };
    Ok((result, model))
}

impl<S: Scalar> RfModel<S> {
    /// Applies the train-fitted forests to a new matrix: mean placeholders,
    /// then the same number of passes with frozen forests.
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
        for _pass in 0..self.passes {
            for col in 0..D {
                if missing_rows_per_col[col].is_empty() {
                    continue;
                }
                let Some(forest) = &self.forests[col] else {
                    continue; // column complete at fit time: keep the mean
                };
                for &r in &missing_rows_per_col[col] {
                    let row = feature_row(&cells, r, col);
                    cells[r * D + col] = forest_predict(forest, &row);
                }
            }
        }
        let cells_s: Vec<S> = cells.iter().map(|&v| S::from_f64_lossy(v)).collect();
        result_from_cells(matrix, &cells_s, Treatment::Rf, self.passes, true, 0)
    }
}
