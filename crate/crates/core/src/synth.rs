//! Seeded synthetic hourly traffic generator: multiplicative seasonal
//! profile (daily, weekly, yearly), compound annual growth, event spikes,
//! log-normal noise, and missing-value injection. Returns both the gappy and
//! the complete series so imputation error is measurable against ground
//! truth.

use chrono::{Datelike, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::series::{hours_in_span, year_start, FunctionalClass, HourlySeries};
use crate::{Error, Result, Scalar};

/// A short multiplicative surge, e.g. a holiday weekend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpike {
    /// 1-based day of year the spike starts (applied every generated year).
    pub day_of_year: u32,
    pub multiplier: f64,
    pub duration_hours: usize,
}

/// How missing hours are injected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GapModel {
    /// Each hour is dropped independently with probability `missing_rate`.
    Mcar,
    /// Contiguous outages with geometric length of the given mean; gap
    /// starts are spaced so the long-run missing fraction matches
    /// `missing_rate`.
    Burst { mean_length_hours: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub start_year: i32,
    pub years: u32,
    /// Mean vehicles per hour before seasonal modulation.
    pub base_volume: f64,
    /// Fractions of base for the three seasonal components.
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    pub yearly_amplitude: f64,
    /// Compound annual growth, fraction per year.
    pub growth_rate: f64,
    /// Standard deviation of the log-normal noise exponent.
    pub noise_std: f64,
    pub event_spikes: Vec<EventSpike>,
    /// Target fraction of missing hours, in [0, 0.5].
    pub missing_rate: f64,
    pub gap_model: GapModel,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            start_year: 2011,
            years: 5,
            base_volume: 500.0,
            daily_amplitude: 0.3,
            weekly_amplitude: 0.1,
            yearly_amplitude: 0.15,
            growth_rate: 0.02,
            noise_std: 0.05,
            event_spikes: Vec::new(),
            missing_rate: 0.03,
            gap_model: GapModel::Mcar,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.years == 0 {
            return Err(Error::InvalidConfig("years must be positive".into()));
        }
        if self.base_volume <= 0.0 || !self.base_volume.is_finite() {
            return Err(Error::InvalidConfig(
                "base_volume must be a positive finite number".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.missing_rate) {
            return Err(Error::InvalidConfig(
                "missing_rate must lie in [0, 0.5]".into(),
            ));
        }
        if self.noise_std < 0.0 {
            return Err(Error::InvalidConfig("noise_std must be non-negative".into()));
        }
        if let GapModel::Burst { mean_length_hours } = self.gap_model {
            if mean_length_hours < 1.0 {
                return Err(Error::InvalidConfig(
                    "burst mean length must be at least one hour".into(),
                ));
            }
        }
        Ok(())
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Deterministic per seed. Returns `(gappy, complete)`; the two agree at
/// every non-missing position.
pub fn generate_synthetic<S: Scalar>(
    spec: &SyntheticSpec,
) -> Result<(HourlySeries<S>, HourlySeries<S>)> {
    spec.validate()?;
    let start = year_start(spec.start_year);
    let end_year = spec.start_year + spec.years as i32 - 1;
    let len = hours_in_span(spec.start_year, end_year);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut complete = Vec::with_capacity(len);
    for t in 0..len {
        let ts = start + chrono::Duration::hours(t as i64);
        let hod = ts.hour() as f64;
        let dow = ts.weekday().num_days_from_monday() as f64;
        let doy = ts.ordinal() as f64;

        let daily = spec.daily_amplitude * (std::f64::consts::TAU * (hod - 5.0) / 24.0).sin();
        let weekly = spec.weekly_amplitude * if dow < 5.0 { 1.0 } else { -1.0 };
        let yearly = spec.yearly_amplitude * (std::f64::consts::TAU * (doy - 80.0) / 365.25).sin();
        let growth = (1.0 + spec.growth_rate).powf(t as f64 / 8760.0);

        let mut event = 1.0;
        for spike in &spec.event_spikes {
            let spike_start = (spike.day_of_year.saturating_sub(1)) as f64 * 24.0;
            let hour_in_year = ((doy - 1.0) * 24.0) + hod;
            if hour_in_year >= spike_start
                && hour_in_year < spike_start + spike.duration_hours as f64
            {
                event *= spike.multiplier;
            }
        }

        let noise = if spec.noise_std > 0.0 {
            (spec.noise_std * standard_normal(&mut rng)).exp()
        } else {
            1.0
        };

        let v = spec.base_volume * growth * (1.0 + daily + weekly + yearly) * event * noise;
        complete.push(v.max(1.0));
    }

    // missing injection, hard-capped at missing_rate + 1%
    let cap = ((spec.missing_rate + 0.01) * len as f64).floor() as usize;
    let mut missing = vec![false; len];
    let mut dropped = 0usize;
    match spec.gap_model {
        GapModel::Mcar => {
            for slot in missing.iter_mut() {
                if dropped >= cap {
                    break;
                }
                if rng.gen_bool(spec.missing_rate) {
                    *slot = true;
                    dropped += 1;
                }
            }
        }
        GapModel::Burst { mean_length_hours } => {
            let start_prob = (spec.missing_rate / mean_length_hours).min(1.0);
            let mut t = 0usize;
            while t < len && dropped < cap {
                if rng.gen_bool(start_prob) {
                    // geometric length with the requested mean
                    let mut gap = 1usize;
                    while gap as f64 / mean_length_hours < 50.0
                        && rng.gen_bool(1.0 - 1.0 / mean_length_hours)
                    {
                        gap += 1;
                    }
                    for i in t..(t + gap).min(len) {
                        if dropped >= cap {
                            break;
                        }
                        if !missing[i] {
                            missing[i] = true;
                            dropped += 1;
                        }
                    }
                    t += gap;
                } else {
                    t += 1;
                }
            }
        }
    }

    let station = format!("synthetic-{}", spec.seed);
    let complete_vals: Vec<Option<S>> = complete
        .iter()
        .map(|&v| Some(S::from_f64_lossy(v)))
        .collect();
    let gappy_vals: Vec<Option<S>> = complete
        .iter()
        .zip(&missing)
        .map(|(&v, &m)| (!m).then(|| S::from_f64_lossy(v)))
        .collect();
    let class = FunctionalClass::UrbanArterial;
    let gappy = HourlySeries::new(start, gappy_vals, station.clone(), class)?;
    let complete = HourlySeries::new(start, complete_vals, station, class)?;
    Ok((gappy, complete))
}
