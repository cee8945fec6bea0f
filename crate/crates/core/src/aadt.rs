//! Annual average daily traffic (AADT) derivation, accuracy scoring, the
//! 21-variant (3 cells × 7 treatments) comparison grid, and the multi-horizon
//! experiment.
//!
//! Actual AADT on gappy input is computed after median imputation of the
//! actuals; each scored year reports its own missing percentage so degraded
//! ground truth is visible.

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forecast::{predict, train, ForecastConfig};
use crate::impute::{impute_central, CentralStatistic, Treatment};
use crate::neural::CellKind;
use crate::series::{hours_in_year, year_of, year_start, HourlySeries};
use crate::{Error, Result, Scalar};

/// One calendar year of a complete hourly series, reduced to its AADT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearBlock<S: Scalar> {
    pub year: i32,
    pub n_days: u32,
    pub hourly_sum: S,
    pub aadt: S,
}

/// Calendar-year AADT of a complete series. The series must start at hour 0
/// of January 1 and cover whole years.
pub fn compute_aadt<S: Scalar>(series: &HourlySeries<S>) -> Result<Vec<YearBlock<S>>> {
    let start = series.start();
    let first_year = year_of(start);
    if start != year_start(first_year) {
        return Err(Error::PartialYear);
    }
    let mut blocks = Vec::new();
    let mut at = 0usize;
    let mut year = first_year;
    while at < series.len() {
        let hours = hours_in_year(year);
        if at + hours > series.len() {
            return Err(Error::PartialYear);
        }
        let mut sum = S::zero();
        for v in &series.values()[at..at + hours] {
            match v {
                Some(v) => sum = sum + *v,
                None => return Err(Error::IncompleteActuals { year }),
            }
        }
        let n_days = (hours / 24) as u32;
        blocks.push(YearBlock {
            year,
            n_days,
            hourly_sum: sum,
            aadt: sum / S::from_f64_lossy(n_days as f64),
        });
        at += hours;
        year += 1;
    }
    Ok(blocks)
}

/// `100 · (1 − |predicted − actual| / actual)`; 100 is exact agreement and
/// values below 0 mean the error exceeds the actual itself.
pub fn accuracy<S: Scalar>(predicted: S, actual: S) -> Result<S> {
    if actual <= S::zero() || !actual.is_finite() {
        return Err(Error::InvalidActual(actual.to_f64().unwrap_or(f64::NAN)));
    }
    let hundred = S::from_f64_lossy(100.0);
    Ok(hundred * (S::one() - (predicted - actual).abs() / actual))
}

/// One scored (variant, horizon, year) cell of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow<S: Scalar> {
    pub cell_kind: CellKind,
    pub treatment: Treatment,
    pub horizon_hours: usize,
    pub year: i32,
    pub predicted_aadt: S,
    pub actual_aadt: S,
    pub accuracy_pct: S,
    /// Missing percentage of the actuals in this year, before median repair.
    pub missing_pct: f64,
}

/// A variant or horizon that could not be scored, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub cell_kind: Option<CellKind>,
    pub treatment: Option<Treatment>,
    pub horizon_hours: usize,
    pub reason: String,
}

/// Winner of one (horizon, year) slice of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestVariant<S: Scalar> {
    pub horizon_hours: usize,
    pub year: i32,
    pub cell_kind: CellKind,
    pub treatment: Treatment,
    pub accuracy_pct: S,
}

/// Hourly value sequence kept for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries<S: Scalar> {
    pub label: String,
    pub start: NaiveDateTime,
    pub values: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport<S: Scalar> {
    pub station: String,
    pub seed: u64,
    /// Missing percentage of the whole input series.
    pub missing_pct: f64,
    pub base_config: ForecastConfig<S>,
    pub rows: Vec<GridRow<S>>,
    pub skips: Vec<SkipRecord>,
    pub best_per_year: Vec<BestVariant<S>>,
    pub trends: Vec<TrendSeries<S>>,
}

impl<S: Scalar> EvaluationReport<S> {
    pub fn to_json(&self) -> Result<String>
    where
        S: Serialize,
    {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self>
    where
        S: serde::de::DeserializeOwned,
    {
        serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// One row per variant × year × horizon, full numeric precision.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "station,cell,treatment,horizon_hours,year,predicted_aadt,actual_aadt,accuracy_pct,missing_pct,seed\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.station,
                r.cell_kind,
                r.treatment,
                r.horizon_hours,
                r.year,
                r.predicted_aadt,
                r.actual_aadt,
                r.accuracy_pct,
                r.missing_pct,
                self.seed
            ));
        }
        out
    }

    /// Two-column (timestamp, value) table for one stored trend.
    pub fn trend_csv(&self, label: &str) -> Option<String> {
        let t = self.trends.iter().find(|t| t.label == label)?;
        let mut out = String::from("timestamp,value\n");
        for (i, v) in t.values.iter().enumerate() {
            let ts = t.start + chrono::Duration::hours(i as i64);
            out.push_str(&format!("{},{}\n", ts.format("%Y-%m-%dT%H"), v));
        }
        Some(out)
    }
}

/// Actuals for the scored years: median-imputed values plus each year's raw
/// missing percentage.
struct ActualYears<S: Scalar> {
    aadt_by_year: Vec<(i32, S, f64)>, // (year, actual aadt, missing pct)
    trend: TrendSeries<S>,
}

fn actual_years<S: Scalar>(
    series: &HourlySeries<S>,
    test_years: &[i32],
) -> Result<ActualYears<S>> {
    let start = series.start();
    if start != year_start(year_of(start)) {
        return Err(Error::PartialYear);
    }
    let repaired = impute_central(series.values(), CentralStatistic::Median)?.filled;

    let mut aadt_by_year = Vec::with_capacity(test_years.len());
    let mut trend_values = Vec::new();
    let mut trend_start = None;
    for &year in test_years {
        let offset = (year_start(year) - start).num_hours();
        let hours = hours_in_year(year);
        if offset < 0 || offset as usize + hours > series.len() {
            return Err(Error::IncompleteActuals { year });
        }
        let offset = offset as usize;
        let missing = series.values()[offset..offset + hours]
            .iter()
            .filter(|v| v.is_none())
            .count();
        let sum: S = repaired[offset..offset + hours].iter().copied().sum();
        let n_days = (hours / 24) as u32;
        aadt_by_year.push((
            year,
            sum / S::from_f64_lossy(n_days as f64),
            100.0 * missing as f64 / hours as f64,
        ));
        if trend_start.is_none() {
            trend_start = Some(year_start(year));
        }
        trend_values.extend_from_slice(&repaired[offset..offset + hours]);
    }
    Ok(ActualYears {
        aadt_by_year,
        trend: TrendSeries {
            label: "actual".into(),
            start: trend_start.unwrap_or(start),
            values: trend_values,
        },
    })
}

/// Trains one variant, predicts, and extracts per-year predicted AADT plus
/// the predicted hourly trend over the scored years.
fn score_variant<S: Scalar>(
    series: &HourlySeries<S>,
    config: &ForecastConfig<S>,
    test_years: &[i32],
) -> Result<(Vec<(i32, S)>, TrendSeries<S>)> {
    let model = train(series, config)?;
    let predicted = predict(&model, series)?;
    let pred_start = predicted.start();

    let mut per_year = Vec::with_capacity(test_years.len());
    let mut trend_values = Vec::new();
    let mut trend_start = None;
    for &year in test_years {
        let offset = (year_start(year) - pred_start).num_hours();
        let hours = hours_in_year(year);
        if offset < 0 || offset as usize + hours > predicted.len() {
            return Err(Error::IncompleteActuals { year });
        }
        let offset = offset as usize;
        let vals = &predicted.values()[offset..offset + hours];
        let sum: S = vals.iter().map(|v| v.expect("predictions are complete")).sum();
        let n_days = (hours / 24) as u32;
        per_year.push((year, sum / S::from_f64_lossy(n_days as f64)));
        if trend_start.is_none() {
            trend_start = Some(year_start(year));
        }
        trend_values.extend(vals.iter().map(|v| v.unwrap()));
    }
    Ok((
        per_year,
        TrendSeries {
            label: format!("{}-{}-{}", config.cell_kind, config.treatment, config.horizon_hours),
            start: trend_start.unwrap_or(pred_start),
            values: trend_values,
        },
    ))
}

/// Hours from the start of the first test year to the series end. The test
/// years must be the trailing years of the series.
fn trailing_test_hours<S: Scalar>(series: &HourlySeries<S>, test_years: &[i32]) -> Result<usize> {
    let first = *test_years.first().ok_or_else(|| {
        Error::InvalidConfig("at least one test year is required".into())
    })?;
    for w in test_years.windows(2) {
        if w[1] != w[0] + 1 {
            return Err(Error::InvalidConfig(
                "test years must be consecutive and ascending".into(),
            ));
        }
    }
    let offset = (year_start(first) - series.start()).num_hours();
    if offset <= 0 {
        return Err(Error::InvalidConfig(format!(
            "test year {first} does not leave any training history"
        )));
    }
    let span: usize = test_years.iter().map(|&y| hours_in_year(y)).sum();
    if offset as usize + span != series.len() {
        return Err(Error::InvalidConfig(
            "test years must exactly cover the end of the series".into(),
        ));
    }
    Ok(series.len() - offset as usize)
}

fn best_per_slice<S: Scalar>(rows: &[GridRow<S>]) -> Vec<BestVariant<S>> {
    let mut slices: Vec<(usize, i32)> = rows
        .iter()
        .map(|r| (r.horizon_hours, r.year))
        .collect();
    slices.sort_unstable();
    slices.dedup();

    let cell_rank = |c: CellKind| CellKind::ALL.iter().position(|&k| k == c).unwrap();
    let mut best = Vec::new();
    for (horizon, year) in slices {
        let winner = rows
            .iter()
            .filter(|r| r.horizon_hours == horizon && r.year == year)
            .min_by(|a, b| {
                b.accuracy_pct
                    .partial_cmp(&a.accuracy_pct)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.treatment.cmp(&b.treatment))
                    .then(cell_rank(a.cell_kind).cmp(&cell_rank(b.cell_kind)))
            });
        if let Some(w) = winner {
            best.push(BestVariant {
                horizon_hours: horizon,
                year,
                cell_kind: w.cell_kind,
                treatment: w.treatment,
                accuracy_pct: w.accuracy_pct,
            });
        }
    }
    best
}

/// Runs all 21 (cell × treatment) variants from `base_config` with a shared
/// seed and scores the given trailing test years. Individual variant
/// failures become skip records instead of aborting the grid.
pub fn run_grid<S: Scalar>(
    series: &HourlySeries<S>,
    base_config: &ForecastConfig<S>,
    test_years: &[i32],
) -> Result<EvaluationReport<S>> {
    let test_hours = trailing_test_hours(series, test_years)?;
    let actuals = actual_years(series, test_years)?;

    let variants: Vec<(CellKind, Treatment)> = CellKind::ALL
        .iter()
        .flat_map(|&c| Treatment::ALL.iter().map(move |&t| (c, t)))
        .collect();

    let results: Vec<(
        (CellKind, Treatment),
        Result<(Vec<(i32, S)>, TrendSeries<S>)>,
    )> = variants
        .par_iter()
        .map(|&(cell, treatment)| {
            let config = ForecastConfig {
                cell_kind: cell,
                treatment,
                test_hours,
                ..base_config.clone()
            };
            ((cell, treatment), score_variant(series, &config, test_years))
        })
        .collect();

    let mut rows = Vec::new();
    let mut skips = Vec::new();
    let mut trends = vec![actuals.trend.clone()];
    for ((cell, treatment), result) in results {
        match result {
            Ok((per_year, trend)) => {
                for (year, predicted) in per_year {
                    let &(_, actual, missing_pct) = actuals
                        .aadt_by_year
                        .iter()
                        .find(|(y, _, _)| *y == year)
                        .expect("scored year present in actuals");
                    rows.push(GridRow {
                        cell_kind: cell,
                        treatment,
                        horizon_hours: base_config.horizon_hours,
                        year,
                        predicted_aadt: predicted,
                        actual_aadt: actual,
                        accuracy_pct: accuracy(predicted, actual)?,
                        missing_pct,
                    });
                }
                trends.push(trend);
            }
            Err(e) => skips.push(SkipRecord {
                cell_kind: Some(cell),
                treatment: Some(treatment),
                horizon_hours: base_config.horizon_hours,
                reason: e.to_string(),
            }),
        }
    }

    let best_per_year = best_per_slice(&rows);
    Ok(EvaluationReport {
        station: series.station_id().to_string(),
        seed: base_config.seed,
        missing_pct: 100.0 * series.missing_fraction(),
        base_config: base_config.clone(),
        rows,
        skips,
        best_per_year,
        trends,
    })
}

/// Repeats train/predict/score of the configured (cell, treatment) variant
/// across the given horizons. A horizon without enough history is skipped
/// with a recorded reason.
pub fn run_multi_horizon<S: Scalar>(
    series: &HourlySeries<S>,
    base_config: &ForecastConfig<S>,
    test_years: &[i32],
    horizons: &[usize],
) -> Result<EvaluationReport<S>> {
    let test_hours = trailing_test_hours(series, test_years)?;
    let actuals = actual_years(series, test_years)?;

    let mut rows = Vec::new();
    let mut skips = Vec::new();
    let mut trends = vec![actuals.trend.clone()];
    for &horizon in horizons {
        // need at least one training window after shift and split
        let feasible = horizon < series.len()
            && series.len() - horizon > test_hours
            && series.len() - horizon - test_hours >= base_config.window_length;
        if !feasible {
            skips.push(SkipRecord {
                cell_kind: Some(base_config.cell_kind),
                treatment: Some(base_config.treatment),
                horizon_hours: horizon,
                reason: format!(
                    "series of {} hours is too short for horizon {} with {} test hours",
                    series.len(),
                    horizon,
                    test_hours
                ),
            });
            continue;
        }
        let config = ForecastConfig {
            horizon_hours: horizon,
            test_hours,
            ..base_config.clone()
        };
        match score_variant(series, &config, test_years) {
            Ok((per_year, trend)) => {
                for (year, predicted) in per_year {
                    let &(_, actual, missing_pct) = actuals
                        .aadt_by_year
                        .iter()
                        .find(|(y, _, _)| *y == year)
                        .expect("scored year present in actuals");
                    rows.push(GridRow {
                        cell_kind: config.cell_kind,
                        treatment: config.treatment,
                        horizon_hours: horizon,
                        year,
                        predicted_aadt: predicted,
                        actual_aadt: actual,
                        accuracy_pct: accuracy(predicted, actual)?,
                        missing_pct,
                    });
                }
                trends.push(trend);
            }
            Err(e) => skips.push(SkipRecord {
                cell_kind: Some(base_config.cell_kind),
                treatment: Some(base_config.treatment),
                horizon_hours: horizon,
                reason: e.to_string(),
            }),
        }
    }

    let best_per_year = best_per_slice(&rows);
    Ok(EvaluationReport {
        station: series.station_id().to_string(),
        seed: base_config.seed,
        missing_pct: 100.0 * series.missing_fraction(),
        base_config: base_config.clone(),
        rows,
        skips,
        best_per_year,
        trends,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::FunctionalClass;

    fn flat_series(years: &[i32], value: f64) -> HourlySeries<f64> {
        let len: usize = years.iter().map(|&y| hours_in_year(y)).sum();
        HourlySeries::new(
            year_start(years[0]),
            vec![Some(value); len],
            "ATR-7",
            FunctionalClass::RuralInterstate,
        )
        .unwrap()
    }

    #[test]
    fn aadt_of_constant_years() {
        let s = flat_series(&[2015], 100.0);
        let blocks = compute_aadt(&s).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].n_days, 365);
        assert_eq!(blocks[0].aadt, 2400.0);

        let s = flat_series(&[2016], 1.0);
        let blocks = compute_aadt(&s).unwrap();
        assert_eq!(blocks[0].n_days, 366);
        assert_eq!(blocks[0].aadt, 24.0);
    }

    #[test]
    fn aadt_rejects_partial_year() {
        let s = HourlySeries::new(
            year_start(2015),
            vec![Some(1.0); 364 * 24],
            "ATR-7",
            FunctionalClass::Local,
        )
        .unwrap();
        assert!(matches!(compute_aadt(&s), Err(Error::PartialYear)));
    }

    #[test]
    fn aadt_rejects_missing_with_year() {
        let mut values = vec![Some(1.0); hours_in_year(2015) + hours_in_year(2016)];
        values[hours_in_year(2015) + 5] = None;
        let s = HourlySeries::new(year_start(2015), values, "ATR-7", FunctionalClass::Local)
            .unwrap();
        assert!(matches!(
            compute_aadt(&s),
            Err(Error::IncompleteActuals { year: 2016 })
        ));
    }

    #[test]
    fn aadt_is_linear_in_values() {
        let len = hours_in_year(2014);
        let values: Vec<Option<f64>> = (0..len).map(|i| Some(1.0 + (i % 24) as f64)).collect();
        let s = HourlySeries::new(year_start(2014), values.clone(), "a", FunctionalClass::Local)
            .unwrap();
        let scaled = HourlySeries::new(
            year_start(2014),
            values.iter().map(|v| v.map(|x| 3.0 * x)).collect(),
            "a",
            FunctionalClass::Local,
        )
        .unwrap();
        let a = compute_aadt(&s).unwrap()[0].aadt;
        let b = compute_aadt(&scaled).unwrap()[0].aadt;
        assert!((b - 3.0 * a).abs() < 1e-9);
    }

    #[test]
    fn accuracy_formula() {
        assert_eq!(accuracy(2400.0, 2400.0).unwrap(), 100.0);
        assert!((accuracy(0.985f64 * 2400.0, 2400.0).unwrap() - 98.5).abs() < 1e-9);
        assert!(accuracy(4800.0f64, 2400.0).unwrap().abs() < 1e-9);
        assert!(accuracy(10.0f64, 2.0).unwrap() < 0.0);
        assert!(matches!(accuracy(1.0, 0.0), Err(Error::InvalidActual(_))));
        assert!(matches!(accuracy(1.0, -5.0), Err(Error::InvalidActual(_))));
    }

    #[test]
    fn accuracy_scale_invariant() {
        let a: f64 = accuracy(90.0, 100.0).unwrap();
        let b = accuracy(90.0 * 7.5, 100.0 * 7.5).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn best_variant_hand_oracle() {
        let mk = |cell, treatment, acc: f64| GridRow::<f64> {
            cell_kind: cell,
            treatment,
            horizon_hours: 8760,
            year: 2016,
            predicted_aadt: 0.0,
            actual_aadt: 1.0,
            accuracy_pct: acc,
            missing_pct: 0.0,
        };
        // clear winner
        let rows = vec![
            mk(CellKind::SimpleRnn, Treatment::Mean, 97.0),
            mk(CellKind::Gru, Treatment::Knn, 99.0),
            mk(CellKind::Lstm, Treatment::Median, 98.0),
        ];
        let best = best_per_slice(&rows);
        assert_eq!(best[0].cell_kind, CellKind::Gru);
        assert_eq!(best[0].treatment, Treatment::Knn);

        // tie: treatment order wins first (Masking < Rf), then cell order
        let rows = vec![
            mk(CellKind::Lstm, Treatment::Rf, 99.0),
            mk(CellKind::Gru, Treatment::Masking, 99.0),
            mk(CellKind::SimpleRnn, Treatment::Masking, 99.0),
        ];
        let best = best_per_slice(&rows);
        assert_eq!(best[0].cell_kind, CellKind::SimpleRnn);
        assert_eq!(best[0].treatment, Treatment::Masking);
    }

    #[test]
    fn trailing_years_arithmetic() {
        let s = flat_series(&[2013, 2014, 2015, 2016], 10.0);
        assert_eq!(
            trailing_test_hours(&s, &[2015, 2016]).unwrap(),
            8760 + 8784
        );
        assert!(trailing_test_hours(&s, &[2014, 2016]).is_err());
        assert!(trailing_test_hours(&s, &[2016, 2015]).is_err());
        assert!(trailing_test_hours(&s, &[2013, 2014, 2015, 2016]).is_err());
    }

    #[test]
    fn actuals_use_median_repair_and_report_missing() {
        let mut values: Vec<Option<f64>> =
            vec![Some(100.0); hours_in_year(2014) + hours_in_year(2015)];
        // knock out 10% of 2015
        let offset = hours_in_year(2014);
        for i in 0..876 {
            values[offset + i * 10] = None;
        }
        let s = HourlySeries::new(year_start(2014), values, "a", FunctionalClass::Local)
            .unwrap();
        let a = actual_years(&s, &[2015]).unwrap();
        let (year, aadt, missing) = a.aadt_by_year[0];
        assert_eq!(year, 2015);
        assert_eq!(aadt, 2400.0); // median of a constant series is the constant
        assert!((missing - 10.0).abs() < 0.01);
    }
}
