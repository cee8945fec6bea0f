//! CSV ingestion and emission for hourly series, flat key=value config
//! parsing, and the on-disk model file format.
//!
//! Series schema: header `timestamp,volume`; timestamps at hour resolution
//! (`2008-01-01T00`), strictly consecutive; `NaN` (any case) or an empty
//! cell marks a missing hour.

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::forecast::{ForecastConfig, TrainedModel};
use crate::series::{FunctionalClass, HourlySeries};
use crate::synth::{EventSpike, GapModel, SyntheticSpec};
use crate::{Error, Result, Scalar};

/// Parses an hour-resolution timestamp; `2008-01-01T00`, with an optional
/// `:00` or `:00:00` tail.
fn parse_hour_timestamp(s: &str) -> Option<NaiveDateTime> {
    let (date, time) = s.split_once('T')?;
    let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
    let mut parts = time.split(':');
    let hour: u32 = parts.next()?.parse().ok()?;
    for tail in parts {
        if tail.parse::<u32>().ok()? != 0 {
            return None; // sub-hour resolution is not supported
        }
    }
    date.and_hms_opt(hour, 0, 0)
}

fn is_missing_cell(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("nan")
}

/// Parses the series schema from text. Line numbers in errors are 1-based
/// file lines (the header is line 1).
pub fn parse_series_str<S: Scalar>(
    content: &str,
    station_id: &str,
    functional_class: FunctionalClass,
) -> Result<HourlySeries<S>> {
    let mut lines = content.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
    if header != "timestamp,volume" {
        return Err(Error::MalformedSeries {
            line: 1,
            reason: "expected header `timestamp,volume`".into(),
        });
    }

    let mut start: Option<NaiveDateTime> = None;
    let mut values: Vec<Option<S>> = Vec::new();
    for (i, raw) in lines {
        let line = i + 1; // enumerate is 0-based
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let (ts_str, vol_str) = row.split_once(',').ok_or(Error::MalformedSeries {
            line,
            reason: "expected two comma-separated fields".into(),
        })?;
        let ts = parse_hour_timestamp(ts_str.trim()).ok_or(Error::MalformedSeries {
            line,
            reason: format!("unparseable hour timestamp `{}`", ts_str.trim()),
        })?;
        match start {
            None => {
                if ts.minute() != 0 || ts.second() != 0 {
                    return Err(Error::MalformedSeries {
                        line,
                        reason: "timestamps must be at hour resolution".into(),
                    });
                }
                start = Some(ts);
            }
            Some(s0) => {
                let expected = s0 + chrono::Duration::hours(values.len() as i64);
                if ts != expected {
                    return Err(Error::MalformedSeries {
                        line,
                        reason: format!(
                            "timestamps must be strictly consecutive: expected {}, found {}",
                            expected.format("%Y-%m-%dT%H"),
                            ts.format("%Y-%m-%dT%H")
                        ),
                    });
                }
            }
        }
        let vol_str = vol_str.trim();
        if is_missing_cell(vol_str) {
            values.push(None);
        } else {
            let v: f64 = vol_str.parse().map_err(|_| Error::MalformedSeries {
                line,
                reason: format!("unparseable volume `{vol_str}`"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::MalformedSeries {
                    line,
                    reason: "volume must be non-negative and finite".into(),
                });
            }
            if v == 0.0 {
                return Err(Error::ZeroVolume { line });
            }
            values.push(Some(S::from_f64_lossy(v)));
        }
    }

    let start = start.ok_or(Error::MalformedSeries {
        line: 1,
        reason: "no data rows".into(),
    })?;
    HourlySeries::new(start, values, station_id, functional_class)
}

/// Reads and parses a series file; the station id is the file stem.
pub fn parse_csv<S: Scalar>(path: &std::path::Path) -> Result<HourlySeries<S>> {
    let content = std::fs::read_to_string(path)?;
    let station = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("station");
    parse_series_str(&content, station, FunctionalClass::UrbanArterial)
}

/// Emits the series schema. Present values print in shortest round-trip
/// form, missing hours as `NaN`; `parse(write(s))` reproduces `s` bitwise.
pub fn write_series_str<S: Scalar>(series: &HourlySeries<S>) -> String {
    let mut out = String::from("timestamp,volume\n");
    for (i, v) in series.values().iter().enumerate() {
        let ts = series.timestamp_at(i).format("%Y-%m-%dT%H");
        match v {
            Some(v) => out.push_str(&format!("{ts},{v}\n")),
            None => out.push_str(&format!("{ts},NaN\n")),
        }
    }
    out
}

pub fn write_csv<S: Scalar>(series: &HourlySeries<S>, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, write_series_str(series))?;
    Ok(())
}

/// Splits flat `key = value` config text into pairs; `#` starts a comment.
fn key_value_pairs(content: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected `key = value`", i + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value `{value}` for {key}")))
}

/// Applies flat key=value overrides (field names of [`ForecastConfig`]) on
/// top of a base config.
pub fn parse_forecast_config<S: Scalar>(
    content: &str,
    base: &ForecastConfig<S>,
) -> Result<ForecastConfig<S>> {
    let mut cfg = base.clone();
    for (k, v) in key_value_pairs(content)? {
        match k.as_str() {
            "cell_kind" => {
                cfg.cell_kind = crate::neural::CellKind::parse(&v)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown cell kind `{v}`")))?;
            }
            "treatment" => {
                cfg.treatment = crate::impute::Treatment::parse(&v)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown treatment `{v}`")))?;
            }
            "horizon_hours" => cfg.horizon_hours = parse_num(&k, &v)?,
            "hidden_size" => cfg.hidden_size = parse_num(&k, &v)?,
            "window_length" => cfg.window_length = parse_num(&k, &v)?,
            "window_stride" => cfg.window_stride = parse_num(&k, &v)?,
            "epochs" => cfg.epochs = parse_num(&k, &v)?,
            "batch_size" => cfg.batch_size = parse_num(&k, &v)?,
            "learning_rate" => cfg.learning_rate = S::from_f64_lossy(parse_num::<f64>(&k, &v)?),
            "test_hours" => cfg.test_hours = parse_num(&k, &v)?,
            "seed" => cfg.seed = parse_num(&k, &v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key `{k}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a synthetic-series spec from flat key=value text. Event spikes use
/// repeated `event_spike = day,multiplier,duration_hours` lines; the gap
/// model is `mcar` or `burst:<mean hours>`.
pub fn parse_synthetic_spec(content: &str) -> Result<SyntheticSpec> {
    let mut spec = SyntheticSpec::default();
    spec.event_spikes.clear();
    for (k, v) in key_value_pairs(content)? {
        match k.as_str() {
            "start_year" => spec.start_year = parse_num(&k, &v)?,
            "years" => spec.years = parse_num(&k, &v)?,
            "base_volume" => spec.base_volume = parse_num(&k, &v)?,
            "daily_amplitude" => spec.daily_amplitude = parse_num(&k, &v)?,
            "weekly_amplitude" => spec.weekly_amplitude = parse_num(&k, &v)?,
            "yearly_amplitude" => spec.yearly_amplitude = parse_num(&k, &v)?,
            "growth_rate" => spec.growth_rate = parse_num(&k, &v)?,
            "noise_std" => spec.noise_std = parse_num(&k, &v)?,
            "missing_rate" => spec.missing_rate = parse_num(&k, &v)?,
            "seed" => spec.seed = parse_num(&k, &v)?,
            "gap_model" => {
                spec.gap_model = if v.eq_ignore_ascii_case("mcar") {
                    GapModel::Mcar
                } else if let Some(mean) = v.strip_prefix("burst:") {
                    GapModel::Burst {
                        mean_length_hours: parse_num(&k, mean)?,
                    }
                } else {
                    return Err(Error::InvalidConfig(format!(
                        "gap_model must be `mcar` or `burst:<mean hours>`, got `{v}`"
                    )));
                };
            }
            "event_spike" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::InvalidConfig(
                        "event_spike expects `day,multiplier,duration_hours`".into(),
                    ));
                }
                spec.event_spikes.push(EventSpike {
                    day_of_year: parse_num(&k, parts[0])?,
                    multiplier: parse_num(&k, parts[1])?,
                    duration_hours: parse_num(&k, parts[2])?,
                });
            }
            _ => return Err(Error::InvalidConfig(format!("unknown spec key `{k}`"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub const MODEL_FILE_VERSION: u32 = 1;

/// On-disk trained-model document: versioned JSON wrapping the full trained
/// state (weights, normalizer, fitted treatment, config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile<S: Scalar> {
    pub format_version: u32,
    pub model: TrainedModel<S>,
}

impl<S: Scalar + Serialize + serde::de::DeserializeOwned> ModelFile<S> {
    pub fn save(model: &TrainedModel<S>, path: &std::path::Path) -> Result<()> {
        let doc = ModelFile {
            format_version: MODEL_FILE_VERSION,
            model: model.clone(),
        };
        let json =
            serde_json::to_string(&doc).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<TrainedModel<S>> {
        let content = std::fs::read_to_string(path)?;
        let doc: ModelFile<S> =
            serde_json::from_str(&content).map_err(|e| Error::Serialization(e.to_string()))?;
        if doc.format_version != MODEL_FILE_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        Ok(doc.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::year_start;
    use crate::synth::generate_synthetic;

    fn parse(content: &str) -> Result<HourlySeries<f64>> {
        parse_series_str(content, "t", FunctionalClass::Local)
    }

    #[test]
    fn two_line_example() {
        let s = parse("timestamp,volume\n2008-01-01T00,120\n2008-01-01T01,NaN\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.start(), year_start(2008));
        assert_eq!(s.values()[0], Some(120.0));
        assert_eq!(s.values()[1], None);
    }

    #[test]
    fn skipped_hour_names_line() {
        let r = parse("timestamp,volume\n2008-01-01T00,120\n2008-01-01T02,130\n");
        match r {
            Err(Error::MalformedSeries { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_volume_names_line() {
        let r = parse("timestamp,volume\n2008-01-01T00,120\n2008-01-01T01,0\n");
        assert!(matches!(r, Err(Error::ZeroVolume { line: 3 })));
    }

    #[test]
    fn missing_cell_variants() {
        let s = parse("timestamp,volume\n2008-01-01T00,nan\n2008-01-01T01,\n2008-01-01T02,NAN\n")
            .unwrap();
        assert!(s.values().iter().all(|v| v.is_none()));
    }

    #[test]
    fn bad_header_rejected() {
        assert!(matches!(
            parse("time,volume\n2008-01-01T00,1\n"),
            Err(Error::MalformedSeries { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip_is_bitwise() {
        let spec = SyntheticSpec {
            years: 1,
            missing_rate: 0.05,
            ..SyntheticSpec::default()
        };
        let (series, _) = generate_synthetic::<f64>(&spec).unwrap();
        let text = write_series_str(&series);
        let back = parse_series_str::<f64>(&text, series.station_id(), series.functional_class())
            .unwrap();
        assert_eq!(series, back);
    }

    #[test]
    fn forecast_config_overrides() {
        let base = ForecastConfig::<f64>::default();
        let cfg = parse_forecast_config(
            "cell_kind = gru\ntreatment = knn  # nearest neighbours\nepochs = 3\nlearning_rate = 0.01\n",
            &base,
        )
        .unwrap();
        assert_eq!(cfg.cell_kind, crate::neural::CellKind::Gru);
        assert_eq!(cfg.treatment, crate::impute::Treatment::Knn);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.hidden_size, base.hidden_size);
        assert!(matches!(
            parse_forecast_config("bogus = 1\n", &base),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn synthetic_spec_parsing() {
        let spec = parse_synthetic_spec(
            "years = 2\nbase_volume = 800\ngap_model = burst:12\nevent_spike = 180,1.5,48\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(spec.years, 2);
        assert_eq!(spec.base_volume, 800.0);
        assert!(matches!(
            spec.gap_model,
            GapModel::Burst { mean_length_hours } if mean_length_hours == 12.0
        ));
        assert_eq!(spec.event_spikes.len(), 1);
        assert_eq!(spec.seed, 9);
        assert!(parse_synthetic_spec("missing_rate = 0.9\n").is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let spec = SyntheticSpec {
            years: 3,
            start_year: 2013,
            missing_rate: 0.02,
            ..SyntheticSpec::default()
        };
        let (series, _) = generate_synthetic::<f64>(&spec).unwrap();
        let config = ForecastConfig {
            hidden_size: 4,
            epochs: 1,
            window_length: 168,
            window_stride: 336,
            test_hours: 8760,
            ..ForecastConfig::<f64>::default()
        };
        let model = crate::forecast::train(&series, &config).unwrap();
        let dir = std::env::temp_dir().join("trafficast-model-file-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        ModelFile::save(&model, &path).unwrap();
        let back = ModelFile::<f64>::load(&path).unwrap();
        assert_eq!(model, back);
        std::fs::remove_file(&path).ok();
    }
}
