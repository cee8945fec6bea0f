//! Training pipeline: forward shift, chronological split, missing-data
//! treatment, log + min-max normalization, sliding windows, and the epoch
//! loop; plus year-ahead prediction with denormalization.
//!
//! Imputation runs in log space before min-max fitting so the normalizer
//! sees a complete training set; masking instead fills 0 after scaling (the
//! scaled minimum) and relies on skip-update semantics. Test-partition
//! treatment always reuses statistics fitted on the training partition.

use chrono::{Duration, Timelike};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::impute::{
    apply_masking, impute_central, impute_em, impute_knn_with_donors, impute_mice, impute_rf,
    to_day_matrix, CentralStatistic, DayMatrix, EmModel, MiceModel, RfModel, Treatment,
};
use crate::neural::{
    adam_step, backward, forward, init_params, AdamState, CellKind, ModelParams,
};
use crate::series::{
    shift_pair, split_train_test, HourlySeries, NormalizationParams, PredictionDataset,
};
use crate::{Error, Result, Scalar};

/// Full configuration of one (cell, treatment) variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig<S: Scalar> {
    pub cell_kind: CellKind,
    pub treatment: Treatment,
    pub horizon_hours: usize,
    pub hidden_size: usize,
    pub window_length: usize,
    pub window_stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: S,
    /// Chronological holdout excluded from every fit; 0 disables the split.
    pub test_hours: usize,
    pub seed: u64,
}

impl<S: Scalar> Default for ForecastConfig<S> {
    fn default() -> Self {
        ForecastConfig {
            cell_kind: CellKind::Lstm,
            treatment: Treatment::Median,
            horizon_hours: 8760,
            hidden_size: 64,
            window_length: 168,
            window_stride: 24,
            epochs: 10,
            batch_size: 8,
            learning_rate: S::from_f64_lossy(0.001),
            test_hours: 17544,
            seed: 0,
        }
    }
}

impl<S: Scalar> ForecastConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0
            || self.window_stride == 0
            || self.epochs == 0
            || self.batch_size == 0
            || self.hidden_size == 0
            || self.horizon_hours == 0
        {
            return Err(Error::InvalidConfig(
                "window, stride, epochs, batch, hidden, horizon must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Train-fitted treatment state, enough to repair unseen inputs without
/// touching held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedTreatment<S: Scalar> {
    Masking,
    /// Fill value in log space.
    Central {
        statistic: CentralStatistic,
        fill_log: S,
    },
    Em(EmModel<S>),
    Mice(MiceModel<S>),
    Knn { donors: DayMatrix<S>, k: usize },
    Rf(RfModel<S>),
}

/// Result of `train`: weights, normalizer, fitted treatment, and the
/// per-epoch loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<S: Scalar> {
    pub params: ModelParams<S>,
    pub normalizer: NormalizationParams<S>,
    pub config: ForecastConfig<S>,
    pub training_loss_trace: Vec<S>,
    pub treatment: FittedTreatment<S>,
    pub station_id: String,
    /// Number of windows skipped for contributing no loss terms.
    pub empty_loss_windows: usize,
}

/// One training window: aligned input/target slices with masks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow<S: Scalar> {
    pub start: usize,
    pub inputs: Vec<S>,
    pub input_mask: Vec<bool>,
    pub targets: Vec<S>,
    pub target_mask: Vec<bool>,
}

/// Windows starting at 0, stride, 2·stride, …; the final partial window is
/// dropped.
pub fn make_windows<S: Scalar>(
    dataset: &PredictionDataset<S>,
    window_length: usize,
    stride: usize,
) -> Result<Vec<TrainingWindow<S>>> {
    let len = dataset.len();
    if window_length > len {
        return Err(Error::InvalidWindow {
            window: window_length,
            len,
        });
    }
    let mut out = Vec::new();
    let mut start = 0usize;
    while start + window_length <= len {
        out.push(TrainingWindow {
            start,
            inputs: dataset.inputs[start..start + window_length].to_vec(),
            input_mask: dataset.input_mask[start..start + window_length].to_vec(),
            targets: dataset.targets[start..start + window_length].to_vec(),
            target_mask: dataset.target_mask[start..start + window_length].to_vec(),
        });
        start += stride;
    }
    Ok(out)
}

fn log1p<S: Scalar>(v: S) -> S {
    (S::one() + v).ln()
}

/// Min/max over log-space values restricted to present positions.
fn fit_normalizer_log<S: Scalar>(
    values_log: &[S],
    present: &[bool],
) -> Result<NormalizationParams<S>> {
    let mut min = S::infinity();
    let mut max = S::neg_infinity();
    let mut n = 0usize;
    for (v, &p) in values_log.iter().zip(present) {
        if p {
            min = min.min(*v);
            max = max.max(*v);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateNormalizer("all values missing".into()));
    }
    if max <= min {
        return Err(Error::DegenerateNormalizer("constant series".into()));
    }
    Ok(NormalizationParams {
        log_applied: true,
        x_min: min,
        x_max: max,
    })
}

/// Treatment + normalization of the training partition. Returns the
/// network-ready dataset, the fitted normalizer, and the fitted treatment.
fn prepare_training<S: Scalar>(
    train: &PredictionDataset<S>,
    config: &ForecastConfig<S>,
    start_hour_of_day: usize,
) -> Result<(PredictionDataset<S>, NormalizationParams<S>, FittedTreatment<S>)> {
    // log space first
    let log_inputs: Vec<S> = train
        .inputs
        .iter()
        .zip(&train.input_mask)
        .map(|(v, &p)| if p { log1p(*v) } else { S::zero() })
        .collect();

    let (completed_log, net_mask, fitted): (Vec<S>, Vec<bool>, FittedTreatment<S>) =
        match config.treatment {
            Treatment::Masking => (
                log_inputs.clone(),
                train.input_mask.clone(),
                FittedTreatment::Masking,
            ),
            Treatment::Mean | Treatment::Median => {
                let statistic = if config.treatment == Treatment::Mean {
                    CentralStatistic::Mean
                } else {
                    CentralStatistic::Median
                };
                let optional: Vec<Option<S>> = log_inputs
                    .iter()
                    .zip(&train.input_mask)
                    .map(|(v, &p)| p.then(|| *v))
                    .collect();
                let res = impute_central(&optional, statistic)?;
                let fill_log = res
                    .filled_positions
                    .first()
                    .map(|&i| res.filled[i])
                    .unwrap_or_else(|| match statistic {
                        CentralStatistic::Mean => {
                            res.filled.iter().copied().sum::<S>()
                                / S::from_f64_lossy(res.filled.len() as f64)
                        }
                        CentralStatistic::Median => crate::impute::median(&res.filled),
                    });
                (
                    res.filled,
                    vec![true; train.len()],
                    FittedTreatment::Central {
                        statistic,
                        fill_log,
                    },
                )
            }
            Treatment::Em | Treatment::Mice | Treatment::Knn | Treatment::Rf => {
                let optional: Vec<Option<S>> = log_inputs
                    .iter()
                    .zip(&train.input_mask)
                    .map(|(v, &p)| p.then(|| *v))
                    .collect();
                let matrix = to_day_matrix(&optional, start_hour_of_day);
                let (filled, fitted) = match config.treatment {
                    Treatment::Em => {
                        let (res, model) = impute_em(&matrix, 100, 1e-6)?;
                        (res.filled, FittedTreatment::Em(model))
                    }
                    Treatment::Mice => {
                        let (res, model) = impute_mice(&matrix, 10)?;
                        (res.filled, FittedTreatment::Mice(model))
                    }
                    Treatment::Knn => {
                        let res = crate::impute::impute_knn(&matrix, 5)?;
                        (
                            res.filled,
                            FittedTreatment::Knn {
                                donors: matrix,
                                k: 5,
                            },
                        )
                    }
                    Treatment::Rf => {
                        let (res, model) = impute_rf(&matrix, 50, 5, config.seed)?;
                        (res.filled, FittedTreatment::Rf(model))
                    }
                    _ => unreachable!(),
                };
                (filled, vec![true; train.len()], fitted)
            }
        };

    let normalizer = fit_normalizer_log(&completed_log, &net_mask)?;

    let inputs: Vec<S> = completed_log
        .iter()
        .zip(&net_mask)
        .map(|(v, &p)| {
            if p {
                normalizer.scale_log(*v)
            } else {
                S::zero()
            }
        })
        .collect();
    let targets: Vec<S> = train
        .targets
        .iter()
        .zip(&train.target_mask)
        .map(|(v, &p)| {
            if p {
                normalizer.scale_log(log1p(*v))
            } else {
                S::zero()
            }
        })
        .collect();

    let mut prepared = PredictionDataset {
        inputs,
        targets,
        input_mask: net_mask,
        target_mask: train.target_mask.clone(),
        horizon_hours: train.horizon_hours,
    };
    if config.treatment == Treatment::Masking {
        prepared = apply_masking(&prepared);
    }
    Ok((prepared, normalizer, fitted))
}

/// Applies the train-fitted treatment and normalizer to an unseen input
/// sequence, producing network-ready values and the skip mask.
fn prepare_inputs<S: Scalar>(
    model: &TrainedModel<S>,
    values: &[Option<S>],
    start_hour_of_day: usize,
) -> Result<(Vec<S>, Vec<bool>)> {
    let log_values: Vec<Option<S>> = values.iter().map(|v| v.map(log1p)).collect();
    let normalizer = &model.normalizer;
    match &model.treatment {
        FittedTreatment::Masking => {
            let inputs = log_values
                .iter()
                .map(|v| v.map(|l| normalizer.scale_log(l)).unwrap_or_else(S::zero))
                .collect();
            Ok((inputs, values.iter().map(|v| v.is_some()).collect()))
        }
        FittedTreatment::Central { fill_log, .. } => {
            let inputs = log_values
                .iter()
                .map(|v| normalizer.scale_log(v.unwrap_or(*fill_log)))
                .collect();
            Ok((inputs, vec![true; values.len()]))
        }
        treatment => {
            let matrix = to_day_matrix(&log_values, start_hour_of_day);
            let filled = match treatment {
                FittedTreatment::Em(m) => m.apply(&matrix).filled,
                FittedTreatment::Mice(m) => m.apply(&matrix).filled,
                FittedTreatment::Rf(m) => m.apply(&matrix).filled,
                FittedTreatment::Knn { donors, k } => {
                    impute_knn_with_donors(&matrix, donors, *k)?.filled
                }
                _ => unreachable!(),
            };
            let inputs = filled.iter().map(|l| normalizer.scale_log(*l)).collect();
            Ok((inputs, vec![true; values.len()]))
        }
    }
}

/// Trains one variant end to end. Deterministic for a fixed config.
pub fn train<S: Scalar>(
    series: &HourlySeries<S>,
    config: &ForecastConfig<S>,
) -> Result<TrainedModel<S>> {
    config.validate()?;
    let dataset = shift_pair(series, config.horizon_hours)?;
    let train_part = if config.test_hours > 0 {
        split_train_test(&dataset, config.test_hours)?.0
    } else {
        dataset
    };
    let start_hour = series.start().hour() as usize;
    let (prepared, normalizer, fitted) = prepare_training(&train_part, config, start_hour)?;

    let windows = make_windows(&prepared, config.window_length, config.window_stride)?;
    let mut params = init_params(config.cell_kind, config.hidden_size, config.seed);
    let mut adam = AdamState::new(params.param_count(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED_0001));

    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut empty_loss_windows = 0usize;
    let mut order: Vec<usize> = (0..windows.len()).collect();

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = S::zero();
        let mut epoch_terms = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grad_sum: Option<ModelParams<S>> = None;
            let mut contributing = 0usize;
            for &wi in batch {
                let w = &windows[wi];
                match backward(&params, &w.inputs, &w.input_mask, &w.targets, &w.target_mask) {
                    Ok((loss, _, grads)) => {
                        epoch_loss = epoch_loss + loss;
                        epoch_terms += 1;
                        contributing += 1;
                        match grad_sum.as_mut() {
                            Some(sum) => sum.add_in_place(&grads),
                            None => grad_sum = Some(grads),
                        }
                    }
                    Err(Error::EmptyLoss) => empty_loss_windows += 1,
                    Err(e) => return Err(e),
                }
            }
            if let Some(mut grads) = grad_sum {
                grads.scale_in_place(S::one() / S::from_f64_lossy(contributing as f64));
                adam_step(&mut params, &grads, &mut adam);
            }
        }
        if epoch_terms == 0 {
            return Err(Error::EmptyLoss);
        }
        loss_trace.push(epoch_loss / S::from_f64_lossy(epoch_terms as f64));
    }

    Ok(TrainedModel {
        params,
        normalizer,
        config: config.clone(),
        training_loss_trace: loss_trace,
        treatment: fitted,
        station_id: series.station_id().to_string(),
        empty_loss_windows,
    })
}

/// Predicts raw volumes at horizon offset for every hour of `input_series`.
/// Stateless windows of the configured length; output timestamps are input
/// timestamps shifted by the horizon; predictions are clamped at 0.
pub fn predict<S: Scalar>(
    model: &TrainedModel<S>,
    input_series: &HourlySeries<S>,
) -> Result<HourlySeries<S>> {
    if input_series.station_id() != model.station_id {
        return Err(Error::ModelMismatch(format!(
            "model was fitted on station {} but input is station {}",
            model.station_id,
            input_series.station_id()
        )));
    }
    let start_hour = input_series.start().hour() as usize;
    let (inputs, mask) = prepare_inputs(model, input_series.values(), start_hour)?;

    let w = model.config.window_length;
    let mut preds: Vec<Option<S>> = Vec::with_capacity(inputs.len());
    let mut at = 0usize;
    while at < inputs.len() {
        let end = (at + w).min(inputs.len());
        let chunk = forward(&model.params, &inputs[at..end], &mask[at..end])?;
        preds.extend(chunk);
        at = end;
    }

    // carry predictions across masked steps so the output series is complete
    let mut last: Option<S> = preds.iter().flatten().copied().next();
    let Some(mut carried) = last.take() else {
        return Err(Error::NoObservedData(
            "every input step was masked".into(),
        ));
    };
    let mut raw = Vec::with_capacity(preds.len());
    for p in &preds {
        if let Some(p) = p {
            carried = *p;
        }
        let v = model.normalizer.inverse_transform(carried)?;
        raw.push(v.max(S::zero()));
    }

    Ok(HourlySeries::from_predictions(
        input_series.start() + Duration::hours(model.config.horizon_hours as i64),
        raw,
        input_series.station_id(),
        input_series.functional_class(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{year_start, FunctionalClass};
    use crate::synth::{generate_synthetic, GapModel, SyntheticSpec};

    fn quick_config() -> ForecastConfig<f64> {
        ForecastConfig {
            cell_kind: CellKind::Lstm,
            treatment: Treatment::Median,
            horizon_hours: 8760,
            hidden_size: 8,
            window_length: 168,
            window_stride: 168,
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.005,
            test_hours: 8760,
            seed: 42,
        }
    }

    fn synth_series(years: u32, missing_rate: f64, seed: u64) -> HourlySeries<f64> {
        let spec = SyntheticSpec {
            start_year: 2011,
            years,
            base_volume: 500.0,
            daily_amplitude: 0.3,
            weekly_amplitude: 0.05,
            yearly_amplitude: 0.15,
            growth_rate: 0.02,
            noise_std: 0.02,
            event_spikes: vec![],
            missing_rate,
            gap_model: GapModel::Mcar,
            seed,
        };
        generate_synthetic(&spec).unwrap().0
    }

    #[test]
    fn window_construction() {
        let mk = |len: usize| PredictionDataset::<f64> {
            inputs: vec![1.0; len],
            targets: vec![1.0; len],
            input_mask: vec![true; len],
            target_mask: vec![true; len],
            horizon_hours: 1,
        };
        let ws = make_windows(&mk(100), 30, 30).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[2].start, 60);
        let ws = make_windows(&mk(100), 100, 1).unwrap();
        assert_eq!(ws.len(), 1);
        assert!(matches!(
            make_windows(&mk(10), 20, 1),
            Err(Error::InvalidWindow { .. })
        ));
    }

    #[test]
    fn smoke_train_and_predict() {
        let series = synth_series(3, 0.02, 1);
        let model = train(&series, &quick_config()).unwrap();
        assert!(model.training_loss_trace.iter().all(|l| l.is_finite()));
        let out = predict(&model, &series).unwrap();
        assert_eq!(out.len(), series.len());
        assert!(out.values().iter().all(|v| v.unwrap() >= 0.0));
        assert_eq!(
            out.start(),
            series.start() + Duration::hours(8760)
        );
    }

    #[test]
    fn training_is_deterministic() {
        let series = synth_series(3, 0.02, 2);
        let cfg = quick_config();
        let a = train(&series, &cfg).unwrap();
        let b = train(&series, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.training_loss_trace, b.training_loss_trace);
    }

    #[test]
    fn treatments_identical_on_gap_free_series() {
        let series = synth_series(3, 0.0, 3);
        let mut reference: Option<Vec<f64>> = None;
        for treatment in Treatment::ALL {
            let cfg = ForecastConfig {
                treatment,
                ..quick_config()
            };
            let dataset = shift_pair(&series, cfg.horizon_hours).unwrap();
            let (train_part, _) = split_train_test(&dataset, cfg.test_hours).unwrap();
            let (prepared, _, _) = prepare_training(&train_part, &cfg, 0).unwrap();
            match &reference {
                None => reference = Some(prepared.inputs.clone()),
                Some(r) => {
                    assert_eq!(r, &prepared.inputs, "treatment {treatment}");
                    assert!(prepared.input_mask.iter().all(|&m| m));
                }
            }
        }
    }

    #[test]
    fn test_partition_cannot_leak_into_training() {
        // poison the last test_hours values with extreme magnitudes and
        // verify identical trained weights
        let series = synth_series(3, 0.02, 4);
        let cfg = quick_config();
        let baseline = train(&series, &cfg).unwrap();

        let n = series.len();
        let poisoned_from = n - cfg.test_hours;
        let values: Vec<Option<f64>> = series
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if i >= poisoned_from {
                    v.map(|x| x * 1e6)
                } else {
                    *v
                }
            })
            .collect();
        let poisoned = HourlySeries::new(
            year_start(2011),
            values,
            series.station_id(),
            FunctionalClass::RuralInterstate,
        )
        .unwrap();
        let after = train(&poisoned, &cfg).unwrap();
        assert_eq!(baseline.params, after.params);
    }

    #[test]
    fn predict_rejects_station_mismatch() {
        let series = synth_series(3, 0.0, 5);
        let model = train(&series, &quick_config()).unwrap();
        let other = HourlySeries::new(
            series.start(),
            series.values().to_vec(),
            "other-station",
            FunctionalClass::Local,
        )
        .unwrap();
        assert!(matches!(
            predict(&model, &other),
            Err(Error::ModelMismatch(_))
        ));
    }

    #[test]
    fn constant_head_predicts_constant() {
        let series = synth_series(3, 0.0, 6);
        let mut model = train(&series, &quick_config()).unwrap();
        model.params = ModelParams::zeros(model.config.cell_kind, model.config.hidden_size);
        model.params.dense_bias = 0.5;
        let out = predict(&model, &series).unwrap();
        let expect = model.normalizer.inverse_transform(0.5).unwrap();
        for v in out.values() {
            assert!((v.unwrap() - expect).abs() < 1e-9);
        }
    }
}
