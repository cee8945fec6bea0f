//! Command-line surface for the traffic-volume forecasting engine: ingest,
//! synthesize, impute, train, predict, evaluate, grid, gradcheck.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trafficast_core::aadt::{accuracy, run_grid, run_multi_horizon};
use trafficast_core::csvio::{
    parse_csv, parse_forecast_config, parse_synthetic_spec, write_csv, ModelFile,
};
use trafficast_core::forecast::{predict, train};
use trafficast_core::impute::{
    impute_central, impute_em, impute_knn, impute_mice, impute_rf, to_day_matrix,
    CentralStatistic, ImputationResult, Treatment,
};
use trafficast_core::neural::{gradient_check, init_params, CellKind};
use trafficast_core::series::{
    hours_in_year, year_of, year_start, HourlySeries, PredictionDataset,
};
use trafficast_core::synth::generate_synthetic;
use trafficast_core::{Error as CoreError, ForecastConfig64, HourlySeries64};

#[derive(Parser)]
#[command(
    name = "trafficast",
    about = "Year-ahead traffic volume forecasting from permanent count station data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Recurrent cell: simple_rnn, gru, or lstm
    #[arg(long)]
    cell: Option<String>,
    /// Missing-data treatment: masking, mean, median, em, mice, knn, rf
    #[arg(long)]
    treatment: Option<String>,
    /// Forecast horizon in years (1, 2, or 3)
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
    horizon_years: Option<u32>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Window length in hours
    #[arg(long)]
    window: Option<usize>,
    /// Window stride in hours
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Chronological holdout in hours excluded from every fit
    #[arg(long)]
    test_hours: Option<usize>,
    /// Flat key=value config file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
}

impl TrainFlags {
    fn build(&self) -> Result<ForecastConfig64> {
        let mut cfg = ForecastConfig64::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            cfg = parse_forecast_config(&text, &cfg)?;
        }
        if let Some(c) = &self.cell {
            cfg.cell_kind = CellKind::parse(c)
                .ok_or_else(|| CoreError::InvalidConfig(format!("unknown cell kind `{c}`")))?;
        }
        if let Some(t) = &self.treatment {
            cfg.treatment = Treatment::parse(t)
                .ok_or_else(|| CoreError::InvalidConfig(format!("unknown treatment `{t}`")))?;
        }
        if let Some(y) = self.horizon_years {
            cfg.horizon_hours = y as usize * 8760;
        }
        if let Some(v) = self.hidden {
            cfg.hidden_size = v;
        }
        if let Some(v) = self.window {
            cfg.window_length = v;
        }
        if let Some(v) = self.stride {
            cfg.window_stride = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.test_hours {
            cfg.test_hours = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a series file and summarize it
    Ingest { csv: PathBuf },
    /// Generate paired gappy/complete synthetic series
    Synth { spec: PathBuf, out: PathBuf },
    /// Run one imputation method over a series file
    Impute {
        #[arg(long)]
        method: String,
        /// Ground-truth complete series; enables RMSE reporting
        #[arg(long)]
        truth: Option<PathBuf>,
        input: PathBuf,
        out: PathBuf,
    },
    /// Train one (cell, treatment) variant and save the model
    Train {
        #[command(flatten)]
        flags: TrainFlags,
        csv: PathBuf,
        model_out: PathBuf,
    },
    /// Emit the (timestamp, predicted volume) table for a saved model
    Predict {
        model: PathBuf,
        csv: PathBuf,
        out: PathBuf,
    },
    /// Per-year AADT accuracy of a saved model against actuals
    Evaluate { model: PathBuf, csv: PathBuf },
    /// Run the 21-variant comparison grid and report the best per year
    Grid {
        #[command(flatten)]
        flags: TrainFlags,
        /// Trailing calendar years to score, e.g. `2016,2017`; default is
        /// the final two years of the series
        #[arg(long)]
        test_years: Option<String>,
        /// Run the single configured variant at 1/2/3-year horizons instead
        /// of the full grid
        #[arg(long)]
        multi_horizon: bool,
        /// Worker threads for parallel trainings (default: available cores)
        #[arg(long)]
        jobs: Option<usize>,
        /// Structured report output path (JSON)
        #[arg(long)]
        report: Option<PathBuf>,
        /// Tabular report output path (CSV)
        #[arg(long)]
        report_csv: Option<PathBuf>,
        csv: PathBuf,
    },
    /// Finite-difference check of the analytic gradients
    Gradcheck {
        /// Check a single cell kind instead of all three
        #[arg(long)]
        cell: Option<String>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output exits 0
            if e.use_stderr() {
                eprintln!("{}", serde_json::json!({ "error": e.to_string().lines().next().unwrap_or("usage error"), "exit_code": 1 }));
                std::process::exit(1);
            }
            let _ = e.print();
            std::process::exit(0);
        }
    };
    if let Err(err) = run(cli) {
        let code = err
            .downcast_ref::<CoreError>()
            .map(|e| e.exit_code())
            .unwrap_or(2);
        eprintln!(
            "{}",
            serde_json::json!({ "error": format!("{err:#}"), "exit_code": code })
        );
        std::process::exit(code);
    }
}

fn load_series(path: &PathBuf) -> Result<HourlySeries64> {
    parse_csv(path).with_context(|| format!("reading series {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { csv } => ingest(&csv),
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Impute {
            method,
            truth,
            input,
            out,
        } => impute(&method, truth.as_ref(), &input, &out),
        Command::Train {
            flags,
            csv,
            model_out,
        } => train_cmd(&flags, &csv, &model_out),
        Command::Predict { model, csv, out } => predict_cmd(&model, &csv, &out),
        Command::Evaluate { model, csv } => evaluate_cmd(&model, &csv),
        Command::Grid {
            flags,
            test_years,
            multi_horizon,
            jobs,
            report,
            report_csv,
            csv,
        } => grid_cmd(
            &flags,
            test_years.as_deref(),
            multi_horizon,
            jobs,
            report.as_ref(),
            report_csv.as_ref(),
            &csv,
        ),
        Command::Gradcheck { cell } => gradcheck_cmd(cell.as_deref()),
    }
}

fn ingest(csv: &PathBuf) -> Result<()> {
    let series = load_series(csv)?;
    let end = series.timestamp_at(series.len() - 1);
    println!("station:    {}", series.station_id());
    println!("hours:      {}", series.len());
    println!(
        "span:       {} .. {}",
        series.start().format("%Y-%m-%dT%H"),
        end.format("%Y-%m-%dT%H")
    );
    println!("missing:    {:.2}%", 100.0 * series.missing_fraction());
    Ok(())
}

fn synth(spec_path: &PathBuf, out: &PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("reading spec {}", spec_path.display()))?;
    let spec = parse_synthetic_spec(&text)?;
    let (gappy, complete) = generate_synthetic::<f64>(&spec)?;
    write_csv(&gappy, out)?;
    let complete_path = out.with_extension("complete.csv");
    write_csv(&complete, &complete_path)?;
    println!("wrote {} ({} hours, {:.2}% missing)", out.display(), gappy.len(), 100.0 * gappy.missing_fraction());
    println!("wrote {} (ground truth)", complete_path.display());
    Ok(())
}

fn run_imputation(
    series: &HourlySeries64,
    method: Treatment,
    seed: u64,
) -> Result<ImputationResult<f64>> {
    let res = match method {
        Treatment::Masking => bail!(CoreError::InvalidConfig(
            "masking is a training-time treatment and produces no filled file; choose an imputation method".into()
        )),
        Treatment::Mean => impute_central(series.values(), CentralStatistic::Mean)?,
        Treatment::Median => impute_central(series.values(), CentralStatistic::Median)?,
        method => {
            let matrix = to_day_matrix(
                series.values(),
                chrono::Timelike::hour(&series.start()) as usize,
            );
            match method {
                Treatment::Em => impute_em(&matrix, 100, 1e-6)?.0,
                Treatment::Mice => impute_mice(&matrix, 10)?.0,
                Treatment::Knn => impute_knn(&matrix, 5)?,
                Treatment::Rf => impute_rf(&matrix, 50, 5, seed)?.0,
                _ => unreachable!(),
            }
        }
    };
    Ok(res)
}

fn impute(method: &str, truth: Option<&PathBuf>, input: &PathBuf, out: &PathBuf) -> Result<()> {
    let method = Treatment::parse(method)
        .ok_or_else(|| CoreError::InvalidConfig(format!("unknown treatment `{method}`")))?;
    let series = load_series(input)?;
    let res = run_imputation(&series, method, 0)?;

    let filled_series = HourlySeries::from_predictions(
        series.start(),
        res.filled.clone(),
        series.station_id(),
        series.functional_class(),
    );
    write_csv(&filled_series, out)?;

    println!("method:     {method}");
    println!("filled:     {} of {} hours", res.filled_positions.len(), series.len());
    if res.fallback_count > 0 {
        println!("fallbacks:  {}", res.fallback_count);
    }
    if let Some(truth_path) = truth {
        let truth = load_series(truth_path)?;
        if truth.len() != series.len() || truth.start() != series.start() {
            bail!(CoreError::InvalidConfig(
                "ground-truth series does not align with the input".into()
            ));
        }
        let mut sq = 0.0f64;
        let mut n = 0usize;
        for &i in &res.filled_positions {
            if let Some(t) = truth.values()[i] {
                let d = res.filled[i] - t;
                sq += d * d;
                n += 1;
            }
        }
        if n > 0 {
            println!("rmse:       {:.4} over {} filled hours", (sq / n as f64).sqrt(), n);
        } else {
            println!("rmse:       n/a (no filled position has ground truth)");
        }
    }
    Ok(())
}

fn train_cmd(flags: &TrainFlags, csv: &PathBuf, model_out: &PathBuf) -> Result<()> {
    let cfg = flags.build()?;
    let series = load_series(csv)?;
    let model = train(&series, &cfg)?;
    ModelFile::save(&model, model_out)?;
    println!(
        "trained {}-{} (hidden {}, horizon {} h) on {} hours",
        cfg.cell_kind, cfg.treatment, cfg.hidden_size, cfg.horizon_hours, series.len()
    );
    for (i, loss) in model.training_loss_trace.iter().enumerate() {
        println!("epoch {:>3}: loss {loss:.6}", i + 1);
    }
    println!("saved {}", model_out.display());
    Ok(())
}

fn predict_cmd(model_path: &PathBuf, csv: &PathBuf, out: &PathBuf) -> Result<()> {
    let model = ModelFile::<f64>::load(model_path)?;
    let series = load_series(csv)?;
    let predicted = predict(&model, &series)?;
    write_csv(&predicted, out)?;
    println!(
        "wrote {} ({} hours, {} .. {})",
        out.display(),
        predicted.len(),
        predicted.start().format("%Y-%m-%dT%H"),
        predicted
            .timestamp_at(predicted.len() - 1)
            .format("%Y-%m-%dT%H")
    );
    Ok(())
}

fn evaluate_cmd(model_path: &PathBuf, csv: &PathBuf) -> Result<()> {
    let model = ModelFile::<f64>::load(model_path)?;
    let series = load_series(csv)?;
    let predicted = predict(&model, &series)?;

    // actuals repaired by median so gappy years remain scorable
    let repaired = impute_central(series.values(), CentralStatistic::Median)?.filled;

    // calendar years fully covered by both predictions and actuals
    let mut printed = 0usize;
    println!("year    predicted_aadt    actual_aadt    accuracy");
    let first_year = year_of(series.start()).max(year_of(predicted.start())) + 1;
    let last_ts = series.timestamp_at(series.len() - 1);
    for year in first_year..=year_of(last_ts) {
        let ys = year_start(year);
        let hours = hours_in_year(year);
        let a_off = (ys - series.start()).num_hours();
        let p_off = (ys - predicted.start()).num_hours();
        if a_off < 0
            || p_off < 0
            || a_off as usize + hours > series.len()
            || p_off as usize + hours > predicted.len()
        {
            continue;
        }
        let n_days = (hours / 24) as f64;
        let actual: f64 =
            repaired[a_off as usize..a_off as usize + hours].iter().sum::<f64>() / n_days;
        let predicted_aadt: f64 = predicted.values()
            [p_off as usize..p_off as usize + hours]
            .iter()
            .map(|v| v.unwrap())
            .sum::<f64>()
            / n_days;
        let acc = accuracy(predicted_aadt, actual)?;
        println!("{year}    {predicted_aadt:>14.2}    {actual:>11.2}    {acc:>7.2}%");
        printed += 1;
    }
    if printed == 0 {
        bail!(CoreError::InvalidConfig(
            "no calendar year is fully covered by both predictions and actuals".into()
        ));
    }
    Ok(())
}

fn default_test_years(series: &HourlySeries64) -> Vec<i32> {
    let last = year_of(series.timestamp_at(series.len() - 1));
    let first = year_of(series.start());
    if last - first >= 2 {
        vec![last - 1, last]
    } else {
        vec![last]
    }
}

fn grid_cmd(
    flags: &TrainFlags,
    test_years: Option<&str>,
    multi_horizon: bool,
    jobs: Option<usize>,
    report: Option<&PathBuf>,
    report_csv: Option<&PathBuf>,
    csv: &PathBuf,
) -> Result<()> {
    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| anyhow!("setting worker threads: {e}"))?;
    }
    let cfg = flags.build()?;
    let series = load_series(csv)?;
    let years: Vec<i32> = match test_years {
        Some(spec) => spec
            .split(',')
            .map(|y| {
                y.trim()
                    .parse()
                    .map_err(|_| anyhow!(CoreError::InvalidConfig(format!("invalid year `{y}`"))))
            })
            .collect::<Result<_>>()?,
        None => default_test_years(&series),
    };

    let out = if multi_horizon {
        run_multi_horizon(&series, &cfg, &years, &[8760, 17520, 26280])?
    } else {
        run_grid(&series, &cfg, &years)?
    };

    println!(
        "scored {} rows over years {:?} ({} skipped)",
        out.rows.len(),
        years,
        out.skips.len()
    );
    for skip in &out.skips {
        println!(
            "skip: {}-{} horizon {}: {}",
            skip.cell_kind.map(|c| c.name()).unwrap_or("-"),
            skip.treatment.map(|t| t.name()).unwrap_or("-"),
            skip.horizon_hours,
            skip.reason
        );
    }
    for best in &out.best_per_year {
        println!(
            "best {} @ {} h: {}-{} ({:.2}%)",
            best.year, best.horizon_hours, best.cell_kind, best.treatment, best.accuracy_pct
        );
    }
    if let Some(path) = report {
        std::fs::write(path, out.to_json()?)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = report_csv {
        std::fs::write(path, out.to_csv_string())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn gradcheck_cmd(cell: Option<&str>) -> Result<()> {
    let cells: Vec<CellKind> = match cell {
        Some(c) => vec![CellKind::parse(c)
            .ok_or_else(|| CoreError::InvalidConfig(format!("unknown cell kind `{c}`")))?],
        None => CellKind::ALL.to_vec(),
    };
    let mut all_pass = true;
    for cell in cells {
        let params = init_params::<f64>(cell, 6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let len = 20usize;
        let ds = random_sequence(&mut rng, len);
        let report = gradient_check(
            &params,
            &ds.inputs,
            &ds.input_mask,
            &ds.targets,
            &ds.target_mask,
            1e-5,
            1e-4,
        )?;
        let worst = report
            .blocks
            .iter()
            .map(|b| b.max_relative_error)
            .fold(0.0f64, f64::max);
        println!(
            "{}: {} (max relative error {worst:.2e})",
            cell.name(),
            if report.pass { "PASS" } else { "FAIL" }
        );
        for block in report.blocks.iter().filter(|b| !b.pass) {
            println!("  block {}: {:.2e}", block.name, block.max_relative_error);
        }
        all_pass &= report.pass;
    }
    if !all_pass {
        bail!(CoreError::NumericDomain(
            "analytic gradients disagree with finite differences".into()
        ));
    }
    Ok(())
}

fn random_sequence(rng: &mut ChaCha8Rng, len: usize) -> PredictionDataset<f64> {
    use rand::Rng;
    PredictionDataset {
        inputs: (0..len).map(|_| rng.gen_range(0.0..1.0)).collect(),
        targets: (0..len).map(|_| rng.gen_range(0.0..1.0)).collect(),
        input_mask: (0..len).map(|i| i % 7 != 3).collect(),
        target_mask: (0..len).map(|i| i % 5 != 2).collect(),
        horizon_hours: 1,
    }
}
