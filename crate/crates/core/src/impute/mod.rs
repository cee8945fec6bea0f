//! Missing-data treatments: masking plus six imputation algorithms operating
//! on a days×24 reshaping of the hourly series (each day is one observation,
//! the 24 hourly values its variables).

use serde::{Deserialize, Serialize};

use crate::series::PredictionDataset;
use crate::{Error, Result, Scalar};

mod em;
mod knn;
mod mice;
mod rf;
pub(crate) mod tree;

pub use em::{impute_em, EmModel};
pub use knn::{impute_knn, impute_knn_with_donors};
pub use mice::{impute_mice, MiceModel};
pub use rf::{impute_rf, RfModel, RfOptions};

pub const HOURS_PER_DAY: usize = 24;

/// Missing-data treatment label. Ordering is the documented tie-break order
/// for grid evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Treatment {
    Masking,
    Mean,
    Median,
    Em,
    Mice,
    Knn,
    Rf,
}

impl Treatment {
    pub const ALL: [Treatment; 7] = [
        Treatment::Masking,
        Treatment::Mean,
        Treatment::Median,
        Treatment::Em,
        Treatment::Mice,
        Treatment::Knn,
        Treatment::Rf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Treatment::Masking => "masking",
            Treatment::Mean => "mean",
            Treatment::Median => "median",
            Treatment::Em => "em",
            Treatment::Mice => "mice",
            Treatment::Knn => "knn",
            Treatment::Rf => "rf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "masking" => Some(Treatment::Masking),
            "mean" => Some(Treatment::Mean),
            "median" => Some(Treatment::Median),
            "em" => Some(Treatment::Em),
            "mice" => Some(Treatment::Mice),
            "knn" => Some(Treatment::Knn),
            "rf" => Some(Treatment::Rf),
            _ => None,
        }
    }
}

impl std::fmt::Display for Treatment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// days×24 matrix view of an hourly sequence. Cells outside the original
/// sequence (leading offset and trailing padding) are flagged missing and
/// excluded from `filled_positions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMatrix<S: Scalar> {
    rows: usize,
    cells: Vec<Option<S>>,
    start_offset: usize,
    original_len: usize,
}

impl<S: Scalar> DayMatrix<S> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn original_len(&self) -> usize {
        self.original_len
    }

    pub fn start_offset(&self) -> usize {
        self.start_offset
    }

    pub fn get(&self, row: usize, col: usize) -> Option<S> {
        self.cells[row * HOURS_PER_DAY + col]
    }

    pub fn observed(&self, row: usize, col: usize) -> bool {
        self.cells[row * HOURS_PER_DAY + col].is_some()
    }

    /// True for cells that map back to a position of the source sequence.
    pub fn in_range(&self, row: usize, col: usize) -> bool {
        let idx = row * HOURS_PER_DAY + col;
        idx >= self.start_offset && idx < self.start_offset + self.original_len
    }

    /// Series position of a cell, if it is not padding.
    pub fn series_index(&self, row: usize, col: usize) -> Option<usize> {
        self.in_range(row, col)
            .then(|| row * HOURS_PER_DAY + col - self.start_offset)
    }

    pub fn observed_count_in_column(&self, col: usize) -> usize {
        (0..self.rows).filter(|&r| self.observed(r, col)).count()
    }

    /// Per-column mean of observed cells. Errors on an all-missing column.
    pub fn column_means(&self) -> Result<Vec<S>> {
        let mut means = Vec::with_capacity(HOURS_PER_DAY);
        for c in 0..HOURS_PER_DAY {
            let mut sum = S::zero();
            let mut n = 0usize;
            for r in 0..self.rows {
                if let Some(v) = self.get(r, c) {
                    sum = sum + v;
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::NoObservedData(format!(
                    "column {c} has no observed cells"
                )));
            }
            means.push(sum / S::from_f64_lossy(n as f64));
        }
        Ok(means)
    }
}

/// Reshapes an hourly sequence into a days×24 matrix. `start_hour_of_day`
/// positions the first value within its day.
pub fn to_day_matrix<S: Scalar>(values: &[Option<S>], start_hour_of_day: usize) -> DayMatrix<S> {
    assert!(start_hour_of_day < HOURS_PER_DAY);
    let total = start_hour_of_day + values.len();
    let rows = total.div_ceil(HOURS_PER_DAY);
    let mut cells = vec![None; rows * HOURS_PER_DAY];
    for (i, v) in values.iter().enumerate() {
        cells[start_hour_of_day + i] = *v;
    }
    DayMatrix {
        rows,
        cells,
        start_offset: start_hour_of_day,
        original_len: values.len(),
    }
}

/// Flattens a complete matrix back to the original sequence, dropping the
/// padding cells.
pub fn from_day_matrix<S: Scalar>(matrix: &DayMatrix<S>, original_len: usize) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(original_len);
    for i in 0..original_len {
        let idx = matrix.start_offset + i;
        match matrix.cells[idx] {
            Some(v) => out.push(v),
            None => return Err(Error::IncompleteMatrix),
        }
    }
    Ok(out)
}

/// Outcome of one imputation run over a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult<S: Scalar> {
    pub filled: Vec<S>,
    pub filled_positions: Vec<usize>,
    pub method: Treatment,
    pub iterations_used: usize,
    pub converged: bool,
    /// Positions filled by a degraded rule (e.g. KNN with fewer than k
    /// candidates).
    pub fallback_count: usize,
}

/// Replaces missing input positions with the masking value 0 while keeping
/// the presence mask so the network can skip masked steps. Targets are never
/// fabricated.
pub fn apply_masking<S: Scalar>(dataset: &PredictionDataset<S>) -> PredictionDataset<S> {
    let mut out = dataset.clone();
    for (v, &p) in out.inputs.iter_mut().zip(&out.input_mask) {
        if !p {
            *v = S::zero();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CentralStatistic {
    Mean,
    Median,
}

/// Mean or median imputation over a flat sequence.
pub fn impute_central<S: Scalar>(
    values: &[Option<S>],
    statistic: CentralStatistic,
) -> Result<ImputationResult<S>> {
    let observed: Vec<S> = values.iter().filter_map(|v| *v).collect();
    if observed.is_empty() {
        return Err(Error::NoObservedData("all values missing".into()));
    }
    let fill = match statistic {
        CentralStatistic::Mean => {
            observed.iter().copied().sum::<S>() / S::from_f64_lossy(observed.len() as f64)
        }
        CentralStatistic::Median => median(&observed),
    };
    let mut filled = Vec::with_capacity(values.len());
    let mut filled_positions = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(v) => filled.push(*v),
            None => {
                filled.push(fill);
                filled_positions.push(i);
            }
        }
    }
    Ok(ImputationResult {
        filled,
        filled_positions,
        method: match statistic {
            CentralStatistic::Mean => Treatment::Mean,
            CentralStatistic::Median => Treatment::Median,
        },
        iterations_used: 0,
        converged: true,
        fallback_count: 0,
    })
}

/// Midpoint-of-central-order-statistics median.
pub fn median<S: Scalar>(values: &[S]) -> S {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / S::from_f64_lossy(2.0)
    }
}

/// Shared precondition for the multivariate methods: enough partially
/// observed rows and no all-missing column.
pub(crate) fn check_multivariate_preconditions<S: Scalar>(matrix: &DayMatrix<S>) -> Result<()> {
    let usable_rows = (0..matrix.rows())
        .filter(|&r| (0..HOURS_PER_DAY).any(|c| matrix.observed(r, c)))
        .count();
    if usable_rows < 25 {
        return Err(Error::InsufficientData(format!(
            "need at least 25 rows with an observed cell, found {usable_rows}"
        )));
    }
    for c in 0..HOURS_PER_DAY {
        if matrix.observed_count_in_column(c) == 0 {
            return Err(Error::InsufficientData(format!(
                "column {c} is never observed"
            )));
        }
    }
    Ok(())
}

/// Missing cells of a matrix that map back to the source sequence.
pub(crate) fn missing_in_range_cells<S: Scalar>(matrix: &DayMatrix<S>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..matrix.rows() {
        for c in 0..HOURS_PER_DAY {
            if matrix.in_range(r, c) && !matrix.observed(r, c) {
                out.push((r, c));
            }
        }
    }
    out
}

/// Assembles an `ImputationResult` from a fully imputed cell array.
pub(crate) fn result_from_cells<S: Scalar>(
    matrix: &DayMatrix<S>,
    cells: &[S],
    method: Treatment,
    iterations_used: usize,
    converged: bool,
    fallback_count: usize,
) -> ImputationResult<S> {
    let mut filled = Vec::with_capacity(matrix.original_len());
    let mut filled_positions = Vec::new();
    for i in 0..matrix.original_len() {
        let idx = matrix.start_offset() + i;
        let (r, c) = (idx / HOURS_PER_DAY, idx % HOURS_PER_DAY);
        match matrix.get(r, c) {
            Some(v) => filled.push(v),
            None => {
                filled.push(cells[idx]);
                filled_positions.push(i);
            }
        }
    }
    ImputationResult {
        filled,
        filled_positions,
        method,
        iterations_used,
        converged,
        fallback_count,
    }
}
