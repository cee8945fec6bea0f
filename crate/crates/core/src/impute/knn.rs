//! K-nearest-neighbour imputation over the day matrix. Distances use
//! pairwise-available columns with an overlap rescaling of sqrt(24/#shared);
//! ties break toward the lower row index.

use crate::{Error, Result, Scalar};

use super::{result_from_cells, DayMatrix, ImputationResult, Treatment, HOURS_PER_DAY};

const D: usize = HOURS_PER_DAY;

/// Overlap-scaled Euclidean distance between two rows, or `None` when they
/// share no observed column.
fn row_distance<S: Scalar>(
    query: &DayMatrix<S>,
    qrow: usize,
    donors: &DayMatrix<S>,
    drow: usize,
) -> Option<f64> {
    let mut shared = 0usize;
    let mut sum = 0.0f64;
    for c in 0..D {
        if let (Some(a), Some(b)) = (query.get(qrow, c), donors.get(drow, c)) {
            let d = a.to_f64().unwrap() - b.to_f64().unwrap();
            sum += d * d;
            shared += 1;
        }
    }
    (shared > 0).then(|| (sum * (D as f64 / shared as f64)).sqrt())
}

fn fill_cell<S: Scalar>(
    query: &DayMatrix<S>,
    qrow: usize,
    col: usize,
    donors: &DayMatrix<S>,
    exclude_row: Option<usize>,
    k: usize,
) -> Result<(S, bool)> {
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for r in 0..donors.rows() {
        if Some(r) == exclude_row || !donors.observed(r, col) {
            continue;
        }
        if let Some(d) = row_distance(query, qrow, donors, r) {
            candidates.push((d, r));
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoObservedData(format!(
            "no KNN candidates for column {col}"
        )));
    }
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let fallback = candidates.len() < k;
    let chosen = &candidates[..k.min(candidates.len())];
    let sum: f64 = chosen
        .iter()
        .map(|&(_, r)| donors.get(r, col).unwrap().to_f64().unwrap())
        .sum();
    Ok((
        S::from_f64_lossy(sum / chosen.len() as f64),
        fallback,
    ))
}

fn knn_cells<S: Scalar>(
    query: &DayMatrix<S>,
    donors: &DayMatrix<S>,
    self_matrix: bool,
    k: usize,
) -> Result<(Vec<S>, usize)> {
    let mut cells = vec![S::zero(); query.rows() * D];
    let mut fallbacks = 0usize;
    for r in 0..query.rows() {
        for c in 0..D {
            match query.get(r, c) {
                Some(v) => cells[r * D + c] = v,
                None => {
                    let exclude = self_matrix.then_some(r);
                    let (v, fb) = fill_cell(query, r, c, donors, exclude, k)?;
                    cells[r * D + c] = v;
                    if fb {
                        fallbacks += 1;
                    }
                }
            }
        }
    }
    Ok((cells, fallbacks))
}

/// KNN imputation within one matrix; candidate rows for cell (i, j) are all
/// rows r != i observing column j.
pub fn impute_knn<S: Scalar>(matrix: &DayMatrix<S>, k: usize) -> Result<ImputationResult<S>> {
    assert!(k >= 1);
    let (cells, fallbacks) = knn_cells(matrix, matrix, true, k)?;
    Ok(result_from_cells(
        matrix,
        &cells,
        Treatment::Knn,
        0,
        true,
        fallbacks,
    ))
}

/// KNN imputation of `query` using a separate donor pool, for test-partition
/// application with train-only donors.
pub fn impute_knn_with_donors<S: Scalar>(
    query: &DayMatrix<S>,
    donors: &DayMatrix<S>,
    k: usize,
) -> Result<ImputationResult<S>> {
    assert!(k >= 1);
    let (cells, fallbacks) = knn_cells(query, donors, false, k)?;
    Ok(result_from_cells(
        query,
        &cells,
        Treatment::Knn,
        0,
        true,
        fallbacks,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::to_day_matrix;

    fn matrix(rows: Vec<Vec<Option<f64>>>) -> DayMatrix<f64> {
        let vals: Vec<Option<f64>> = rows.into_iter().flatten().collect();
        to_day_matrix(&vals, 0)
    }

    fn const_row(v: f64) -> Vec<Option<f64>> {
        vec![Some(v); 24]
    }

    #[test]
    fn identical_row_wins_with_k1() {
        let mut incomplete = const_row(7.0);
        incomplete[5] = None;
        let mut twin = const_row(7.0);
        twin[5] = Some(42.0);
        let far = const_row(100.0);
        let m = matrix(vec![incomplete, twin, far]);
        let res = impute_knn(&m, 1).unwrap();
        assert_eq!(res.filled[5], 42.0);
    }

    #[test]
    fn equidistant_ties_take_lowest_indices() {
        let mut incomplete = const_row(0.0);
        incomplete[0] = None;
        // all donors at identical distance, distinct fills
        let mut rows = vec![incomplete];
        for i in 0..6 {
            let mut r = const_row(0.0);
            r[0] = Some(10.0 + i as f64);
            r[1] = Some(3.0); // same offset for every donor
            rows.push(r);
        }
        let m = matrix(rows);
        let res = impute_knn(&m, 3).unwrap();
        // k lowest-indexed donors: rows 1..=3 -> fills 10, 11, 12
        assert_eq!(res.filled[0], 11.0);
    }

    #[test]
    fn fewer_than_k_candidates_falls_back() {
        let mut incomplete = const_row(1.0);
        incomplete[3] = None;
        let mut donor = const_row(1.2);
        donor[3] = Some(9.0);
        let m = matrix(vec![incomplete, donor]);
        let res = impute_knn(&m, 5).unwrap();
        assert_eq!(res.filled[3], 9.0);
        assert_eq!(res.fallback_count, 1);
    }
}
