//! Hourly time-series representation, forward-shift pairing, chronological
//! train/test split, and the log + min-max normalization.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Roadway functional group a count station belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FunctionalClass {
    RuralInterstate,
    UrbanInterstate,
    RuralArterial,
    UrbanArterial,
    RuralCollector,
    UrbanCollector,
    Local,
}

impl FunctionalClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ruralinterstate" | "rural_interstate" => Some(Self::RuralInterstate),
            "urbaninterstate" | "urban_interstate" => Some(Self::UrbanInterstate),
            "ruralarterial" | "rural_arterial" => Some(Self::RuralArterial),
            "urbanarterial" | "urban_arterial" => Some(Self::UrbanArterial),
            "ruralcollector" | "rural_collector" => Some(Self::RuralCollector),
            "urbancollector" | "urban_collector" => Some(Self::UrbanCollector),
            "local" => Some(Self::Local),
            _ => None,
        }
    }
}

/// Contiguous hourly volume sequence with in-place missing markers.
///
/// Positions are strictly consecutive hours starting at `start`; missingness
/// is encoded as `None`, never by omitting a position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlySeries<S: Scalar> {
    start: NaiveDateTime,
    values: Vec<Option<S>>,
    station_id: String,
    functional_class: FunctionalClass,
}

impl<S: Scalar> HourlySeries<S> {
    /// Validating constructor for ingested data. Present values must be
    /// finite and strictly positive; zero is reserved for the masking value.
    pub fn new(
        start: NaiveDateTime,
        values: Vec<Option<S>>,
        station_id: impl Into<String>,
        functional_class: FunctionalClass,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::MalformedSeries {
                line: 0,
                reason: "empty series".into(),
            });
        }
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = v {
                if !v.is_finite() || *v < S::zero() {
                    return Err(Error::NumericDomain(format!(
                        "non-finite or negative volume at hour index {i}"
                    )));
                }
                if *v == S::zero() {
                    return Err(Error::ZeroVolume { line: i + 2 });
                }
            }
        }
        Ok(Self {
            start,
            values,
            station_id: station_id.into(),
            functional_class,
        })
    }

    /// Constructor for model outputs, where clamped-to-zero predictions are
    /// legitimate and every value is present.
    pub fn from_predictions(
        start: NaiveDateTime,
        values: Vec<S>,
        station_id: impl Into<String>,
        functional_class: FunctionalClass,
    ) -> Self {
        Self {
            start,
            values: values.into_iter().map(Some).collect(),
            station_id: station_id.into(),
            functional_class,
        }
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn values(&self) -> &[Option<S>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    pub fn functional_class(&self) -> FunctionalClass {
        self.functional_class
    }

    pub fn timestamp_at(&self, index: usize) -> NaiveDateTime {
        self.start + Duration::hours(index as i64)
    }

    pub fn missing_fraction(&self) -> f64 {
        let missing = self.values.iter().filter(|v| v.is_none()).count();
        missing as f64 / self.values.len() as f64
    }
}

/// Aligned (input, target) pair produced by the forward shift, with parallel
/// presence masks. Absent positions hold a zero placeholder in the value
/// arrays; the masks are authoritative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDataset<S: Scalar> {
    pub inputs: Vec<S>,
    pub targets: Vec<S>,
    pub input_mask: Vec<bool>,
    pub target_mask: Vec<bool>,
    pub horizon_hours: usize,
}

impl<S: Scalar> PredictionDataset<S> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_at(&self, i: usize) -> Option<S> {
        self.input_mask[i].then(|| self.inputs[i])
    }

    pub fn target_at(&self, i: usize) -> Option<S> {
        self.target_mask[i].then(|| self.targets[i])
    }
}

/// Pairs each hour with the hour `horizon_hours` ahead of it. The original
/// series serves as the input and the shifted series as the target.
pub fn shift_pair<S: Scalar>(
    series: &HourlySeries<S>,
    horizon_hours: usize,
) -> Result<PredictionDataset<S>> {
    let len = series.len();
    if horizon_hours == 0 || horizon_hours >= len {
        return Err(Error::InvalidHorizon {
            horizon: horizon_hours,
            len,
        });
    }
    let paired = len - horizon_hours;
    let mut inputs = Vec::with_capacity(paired);
    let mut targets = Vec::with_capacity(paired);
    let mut input_mask = Vec::with_capacity(paired);
    let mut target_mask = Vec::with_capacity(paired);
    for i in 0..paired {
        let x = series.values()[i];
        let y = series.values()[i + horizon_hours];
        inputs.push(x.unwrap_or_else(S::zero));
        input_mask.push(x.is_some());
        targets.push(y.unwrap_or_else(S::zero));
        target_mask.push(y.is_some());
    }
    Ok(PredictionDataset {
        inputs,
        targets,
        input_mask,
        target_mask,
        horizon_hours,
    })
}

/// Chronological split: first `len - test_hours` positions train, the last
/// `test_hours` test. No shuffling.
pub fn split_train_test<S: Scalar>(
    dataset: &PredictionDataset<S>,
    test_hours: usize,
) -> Result<(PredictionDataset<S>, PredictionDataset<S>)> {
    let len = dataset.len();
    if test_hours == 0 || test_hours >= len {
        return Err(Error::InvalidSplit { test_hours, len });
    }
    let cut = len - test_hours;
    let slice = |lo: usize, hi: usize| PredictionDataset {
        inputs: dataset.inputs[lo..hi].to_vec(),
        targets: dataset.targets[lo..hi].to_vec(),
        input_mask: dataset.input_mask[lo..hi].to_vec(),
        target_mask: dataset.target_mask[lo..hi].to_vec(),
        horizon_hours: dataset.horizon_hours,
    };
    Ok((slice(0, cut), slice(cut, len)))
}

pub fn is_leap_year(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

pub fn hours_in_year(year: i32) -> usize {
    if is_leap_year(year) {
        366 * 24
    } else {
        365 * 24
    }
}

/// Total hours in the inclusive span of calendar years.
pub fn hours_in_span(start_year: i32, end_year: i32) -> usize {
    assert!(start_year <= end_year);
    (start_year..=end_year).map(hours_in_year).sum()
}

pub fn year_start(year: i32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(year, 1, 1)
        .expect("valid year")
        .and_hms_opt(0, 0, 0)
        .expect("midnight")
}

/// Calendar year of a timestamp.
pub fn year_of(ts: NaiveDateTime) -> i32 {
    ts.year()
}

/// Log + min-max normalization fitted on training-partition values only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams<S: Scalar> {
    pub log_applied: bool,
    pub x_min: S,
    pub x_max: S,
}

fn log1p<S: Scalar>(v: S) -> S {
    (S::one() + v).ln()
}

/// Fits min/max of `log(1 + v)` over present values.
pub fn fit_normalizer<S: Scalar>(values: &[S], present: &[bool]) -> Result<NormalizationParams<S>> {
    let mut min = S::infinity();
    let mut max = S::neg_infinity();
    let mut n = 0usize;
    for (v, &p) in values.iter().zip(present) {
        if p {
            let t = log1p(*v);
            if t < min {
                min = t;
            }
            if t > max {
                max = t;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateNormalizer("all values missing".into()));
    }
    if max <= min {
        return Err(Error::DegenerateNormalizer(
            "constant series: x_max equals x_min".into(),
        ));
    }
    Ok(NormalizationParams {
        log_applied: true,
        x_min: min,
        x_max: max,
    })
}

impl<S: Scalar> NormalizationParams<S> {
    /// `(log(1+v) - x_min) / (x_max - x_min)`. Values beyond the training
    /// range map outside [0, 1] and are not clipped.
    pub fn transform(&self, value: S) -> Result<S> {
        if !value.is_finite() || value < S::zero() {
            return Err(Error::NumericDomain(format!(
                "transform input must be finite and non-negative, got {value}"
            )));
        }
        let t = if self.log_applied { log1p(value) } else { value };
        Ok((t - self.x_min) / (self.x_max - self.x_min))
    }

    /// Transform of a value already in log space.
    pub fn scale_log(&self, log_value: S) -> S {
        (log_value - self.x_min) / (self.x_max - self.x_min)
    }

    pub fn inverse_transform(&self, value: S) -> Result<S> {
        if !value.is_finite() {
            return Err(Error::NumericDomain(format!(
                "inverse_transform input must be finite, got {value}"
            )));
        }
        let t = value * (self.x_max - self.x_min) + self.x_min;
        Ok(if self.log_applied {
            t.exp() - S::one()
        } else {
            t
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<Option<f64>>) -> HourlySeries<f64> {
        HourlySeries::new(
            year_start(2008),
            values,
            "ATR-1",
            FunctionalClass::RuralInterstate,
        )
        .unwrap()
    }

    #[test]
    fn decade_span_hour_counts() {
        assert_eq!(hours_in_span(2008, 2017), 87672);
        assert_eq!(hours_in_span(2016, 2017), 17544);
        assert_eq!(hours_in_span(2015, 2015), 8760);
    }

    #[test]
    fn shift_pair_definition() {
        let s = series((1..=5).map(|v| Some(v as f64)).collect());
        let ds = shift_pair(&s, 2).unwrap();
        assert_eq!(ds.inputs, vec![1.0, 2.0, 3.0]);
        assert_eq!(ds.targets, vec![3.0, 4.0, 5.0]);
        assert_eq!(ds.len(), 3);
    }

    #[test]
    fn shift_pair_rejects_horizon_at_length() {
        let s = series((1..=10).map(|v| Some(v as f64)).collect());
        assert!(matches!(
            shift_pair(&s, 10),
            Err(Error::InvalidHorizon { .. })
        ));
    }

    #[test]
    fn shift_preserves_missingness() {
        let s = series(vec![Some(1.0), None, Some(3.0), Some(4.0), None]);
        let ds = shift_pair(&s, 2).unwrap();
        assert_eq!(ds.input_mask, vec![true, false, true]);
        assert_eq!(ds.target_mask, vec![true, true, false]);
    }

    #[test]
    fn split_is_chronological() {
        let s = series((1..=12).map(|v| Some(v as f64)).collect());
        let ds = shift_pair(&s, 2).unwrap();
        let (train, test) = split_train_test(&ds, 4).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(test.len(), 4);
        assert_eq!(train.inputs, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(test.inputs, vec![7.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn split_rejects_full_length() {
        let s = series((1..=102).map(|v| Some(v as f64)).collect());
        let ds = shift_pair(&s, 2).unwrap();
        assert!(matches!(
            split_train_test(&ds, 100),
            Err(Error::InvalidSplit { .. })
        ));
    }

    #[test]
    fn zero_volume_rejected_at_ingestion() {
        let r = HourlySeries::new(
            year_start(2008),
            vec![Some(1.0), Some(0.0)],
            "ATR-1",
            FunctionalClass::Local,
        );
        assert!(matches!(r, Err(Error::ZeroVolume { .. })));
    }

    #[test]
    fn normalizer_endpoints() {
        let vals = vec![1.0, std::f64::consts::E - 1.0];
        let p = fit_normalizer(&vals, &[true, true]).unwrap();
        assert!((p.x_min - 2f64.ln()).abs() < 1e-12);
        assert!((p.x_max - 1.0).abs() < 1e-12);
        assert!((p.transform((p.x_min.exp()) - 1.0).unwrap()).abs() < 1e-12);
        assert!((p.transform((p.x_max.exp()) - 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalizer_degenerate_inputs() {
        assert!(matches!(
            fit_normalizer::<f64>(&[0.0, 0.0], &[false, false]),
            Err(Error::DegenerateNormalizer(_))
        ));
        assert!(matches!(
            fit_normalizer(&[99.0, 99.0, 99.0], &[true, true, true]),
            Err(Error::DegenerateNormalizer(_))
        ));
    }

    #[test]
    fn transform_round_trip() {
        let p = fit_normalizer(&[10.0, 5000.0], &[true, true]).unwrap();
        let v: f64 = 137.0;
        let rt = p.inverse_transform(p.transform(v).unwrap()).unwrap();
        assert!((rt - v).abs() / v < 1e-9);
    }

    #[test]
    fn decade_shift_split_arithmetic() {
        let n = hours_in_span(2008, 2017);
        assert_eq!(n, 87672);
        let s = series((0..n).map(|i| Some(1.0 + (i % 7) as f64)).collect());
        let ds = shift_pair(&s, 8760).unwrap();
        assert_eq!(ds.len(), 78912);
        let (train, _) = split_train_test(&ds, 17544).unwrap();
        assert_eq!(train.len(), 61368);
    }
}
