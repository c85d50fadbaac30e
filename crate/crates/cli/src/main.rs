//! `mvlatent`: synthetic data, training, prediction and evaluation studies.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use mvlatent::baselines::{BaselineKind, BaselineParams};
use mvlatent::data::{
    load_dataset, load_features, split, table2_schema, write_dataset, PreprocessMode, ViewSchema,
};
use mvlatent::eval::{
    self, kfold_lambda_select, latent_vs_original, per_view_study, projection_2d,
    projection_plot_points, ratio_sweep, run_experiment, write_lambda_table_csv, write_plot_csv,
    write_predictions_csv, write_reports_csv, write_sweep_csv, write_traces_csv, EvalReport,
    FeatureScaling, Method, SweepOutcome,
};
use mvlatent::persist;
use mvlatent::pipeline::{
    train_pipeline, train_pipeline_with_traces, ClassifierInput, PipelineConfig, Prediction,
};
use mvlatent::synth::{synth_generate, SynthSpec};
use mvlatent::{Error, Matrix};

#[derive(Parser)]
#[command(
    name = "mvlatent",
    version,
    about = "Multi-view latent representation diagnosis pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic multi-view dataset (view CSVs, labels, manifest).
    Synth(SynthArgs),
    /// Train the pipeline on a manifest and write the model file.
    Train(TrainArgs),
    /// Predict labels for the subjects of a manifest with a saved model.
    Predict(PredictArgs),
    /// Run an evaluation study and write its CSV reports.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    #[value(name = "tableII")]
    TableII,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of views (must match the preset when one is given).
    #[arg(long)]
    views: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Feature count of every view when no preset is given.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    view_dim: u64,
    /// Subjects per class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    /// Noise standard deviation in every view.
    #[arg(long, default_value_t = 3.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    shared_factors: usize,
    #[arg(long, default_value_t = 0.0)]
    shared_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    scale_decades: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preprocess {
    Standardize,
    Normalize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierInputArg {
    Regressed,
    Codes,
}

/// Pipeline settings shared by `train` and `eval`; flags override the
/// config file.
#[derive(Args)]
struct PipelineArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preprocess: Option<Preprocess>,
    /// Latent dimension.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: Option<u64>,
    /// Balance weight of the structured loss.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Representation-learning epochs.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    regressor_epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    classifier_epochs: Option<u64>,
    #[arg(long, value_enum)]
    classifier_input: Option<ClassifierInputArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Comma-separated balance weights chosen by stratified k-fold CV.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Folds for the balance-weight search.
    #[arg(long)]
    cv: Option<usize>,
    /// Model file to write.
    #[arg(long, default_value = "model.bin")]
    out: PathBuf,
    /// Directory for loss traces and the CV table.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Predictions CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Study {
    Experiment,
    Preprocess,
    PerView,
    Latent,
    Ratio,
    Projection,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    study: Study,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Repeated trials per method.
    #[arg(long)]
    trials: Option<usize>,
    /// Training ratios in percent: `a:b`, `a:b:step` or `x,y,z`.
    #[arg(long, default_value = "2:80")]
    ratios: String,
    /// Held-out fraction of the ratio sweep.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Contents of a `--config` file.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    pipeline: PipelineConfig,
    lambda_grid: Option<Vec<f64>>,
    cv: Option<usize>,
    trials: Option<usize>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    /// Divergence is a training error; everything else traces back to the
    /// input data, whichever stage reported it.
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_training_failure() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn synth(a: SynthArgs) -> CliResult {
    let schema = match a.preset {
        Some(Preset::TableII) => {
            let schema = table2_schema();
            if a.views.is_some_and(|v| v != schema.len()) {
                return Err(usage(format!(
                    "the tableII preset has {} views",
                    schema.len()
                )));
            }
            schema
        }
        None => {
            let v = a.views.ok_or_else(|| usage("give --views or --preset"))?;
            if v == 0 {
                return Err(usage("--views must be at least 1"));
            }
            (1..=v)
                .map(|i| ViewSchema::new(format!("view{i}"), a.view_dim as usize))
                .collect()
        }
    };
    let mut spec = SynthSpec::new(a.n as usize, schema, a.separation, a.noise, a.seed);
    spec.shared_factors = a.shared_factors;
    spec.shared_scale = a.shared_scale;
    spec.scale_decades = a.scale_decades;
    let data = synth_generate(&spec).map_err(|e| usage(e.to_string()))?;
    let manifest = write_dataset(&data, &a.out)?;
    println!(
        "wrote {} subjects in {} views; manifest {}",
        data.len(),
        data.n_views(),
        manifest.display()
    );
    Ok(())
}

fn read_run_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn pipeline_config(args: &PipelineArgs, mut cfg: PipelineConfig) -> CliResult<PipelineConfig> {
    if let Some(p) = args.preprocess {
        cfg.preprocess = match p {
            Preprocess::Standardize => PreprocessMode::Standardize,
            Preprocess::Normalize => PreprocessMode::Normalize,
        };
    }
    let r = &mut cfg.representation;
    if let Some(d) = args.d {
        r.latent_dim = d as usize;
    }
    if let Some(l) = args.lambda {
        r.lambda = l;
    }
    if let Some(m) = args.margin {
        r.structured.margin = m;
    }
    if let Some(e) = args.epochs {
        r.epochs = e as usize;
    }
    if let Some(e) = args.regressor_epochs {
        cfg.regressor.epochs = e as usize;
    }
    if let Some(e) = args.classifier_epochs {
        cfg.classifier.epochs = e as usize;
    }
    if let Some(i) = args.classifier_input {
        cfg.classifier.input = match i {
            ClassifierInputArg::Regressed => ClassifierInput::Regressed,
            ClassifierInputArg::Codes => ClassifierInput::Codes,
        };
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> CliResult {
    let file = read_run_config(a.pipeline.config.as_deref())?;
    let mut cfg = pipeline_config(&a.pipeline, file.pipeline)?;
    let grid = a.lambda_grid.or(file.lambda_grid);
    let folds = a.cv.or(file.cv).unwrap_or(5);
    let data = load_dataset(&a.manifest)?;

    if let Some(grid) = grid {
        let sel = kfold_lambda_select(&data, &grid, folds, &cfg)?;
        if !sel.table.is_empty() {
            println!("lambda  {:>8}  folds", "mean acc");
            for s in &sel.table {
                let folds: Vec<String> =
                    s.fold_accuracy.iter().map(|a| format!("{a:.3}")).collect();
                println!(
                    "{:<6}  {:>8.4}  {}",
                    num(s.lambda),
                    s.mean_accuracy,
                    folds.join(" ")
                );
            }
            if let Some(dir) = &a.report_dir {
                fs::create_dir_all(dir).map_err(Error::Io)?;
                write_lambda_table_csv(&dir.join("lambda_cv.csv"), &sel.table)?;
            }
        }
        println!("selected lambda {}", num(sel.best));
        cfg.representation.lambda = sel.best;
    }

    let (pipe, traces) = train_pipeline_with_traces(&data, &cfg)?;
    persist::save(&pipe, &a.out)?;
    if let Some(dir) = &a.report_dir {
        write_traces_csv(dir, &traces)?;
    }
    let preds = pipe.predict_dataset(&data)?;
    let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    println!(
        "trained on {} subjects (d={}, lambda={}); training accuracy {:.4}; model written to {}",
        data.len(),
        cfg.representation.latent_dim,
        num(cfg.representation.lambda),
        eval::accuracy(&labels, data.labels())?,
        a.out.display()
    );
    Ok(())
}

/// Plain decimals for everyday magnitudes, scientific notation otherwise.
fn num(x: f64) -> String {
    if x == 0.0 || (1e-3..1e6).contains(&x.abs()) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn predict(a: PredictArgs) -> CliResult {
    let pipe = persist::load(&a.model)?;
    let loaded = load_features(&a.manifest)?;
    let schema: Vec<ViewSchema> = loaded.views.iter().map(|v| v.schema.clone()).collect();
    pipe.check_dataset_schema(&schema)?;
    let preds = (0..loaded.subject_ids.len())
        .map(|i| {
            let rows: Vec<&[f64]> = loaded.views.iter().map(|v| v.features.row(i)).collect();
            pipe.predict(&rows).map(|(p, _)| p)
        })
        .collect::<Result<Vec<Prediction>, Error>>()?;
    write_predictions_csv(&a.out, &loaded.subject_ids, &preds)?;
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    if let Some(labels) = &loaded.labels {
        let predicted: Vec<u8> = preds.iter().map(|p| p.label).collect();
        println!("accuracy {:.4}", eval::accuracy(&predicted, labels)?);
    }
    Ok(())
}

/// Parses `a:b` (a standard grid clipped to the range), `a:b:step` or a
/// comma list; values are percentages.
fn parse_ratios(spec: &str) -> CliResult<Vec<f64>> {
    const GRID: [f64; 10] = [2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0];
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("invalid ratio '{s}' in '{spec}'")))
    };
    let percents: Vec<f64> = if spec.contains(':') {
        let parts: Vec<f64> = spec.split(':').map(num).collect::<CliResult<_>>()?;
        match parts[..] {
            [lo, hi] => {
                let mut v: Vec<f64> = GRID.into_iter().filter(|p| *p > lo && *p < hi).collect();
                v.insert(0, lo);
                if hi > lo {
                    v.push(hi);
                }
                v
            }
            [lo, hi, step] if step > 0.0 => {
                let n = ((hi - lo) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| lo + i as f64 * step).collect()
            }
            _ => {
                return Err(usage(format!(
                    "ratio range '{spec}' must be a:b or a:b:step"
                )))
            }
        }
    } else {
        spec.split(',').map(num).collect::<CliResult<_>>()?
    };
    if let Some(bad) = percents.iter().find(|p| !(**p > 0.0 && **p < 100.0)) {
        return Err(usage(format!("ratio {bad}% is not between 0 and 100")));
    }
    Ok(percents.iter().map(|p| p / 100.0).collect())
}

fn print_report(r: &EvalReport) {
    let fmt = |s: Option<eval::Summary>| {
        s.map_or("n/a".to_string(), |s| {
            format!("{:.4} ± {:.4}", s.mean, s.std)
        })
    };
    println!(
        "{:<22} {:<14} ACC {}  SEN {}  SPC {}",
        r.descriptor.method,
        r.descriptor.feature_set,
        fmt(Some(r.acc)),
        fmt(r.sen),
        fmt(r.spc)
    );
}

fn baseline_methods(scaling: FeatureScaling) -> Vec<Method> {
    BaselineKind::ALL
        .into_iter()
        .map(|kind| Method::Baseline {
            kind,
            params: BaselineParams::default(),
            scaling,
        })
        .collect()
}

fn evaluate(a: EvalArgs) -> CliResult {
    let file = read_run_config(a.pipeline.config.as_deref())?;
    let cfg = pipeline_config(&a.pipeline, file.pipeline)?;
    let trials = a.trials.or(file.trials).unwrap_or(10);
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let ratios = if a.study == Study::Ratio {
        parse_ratios(&a.ratios)?
    } else {
        Vec::new()
    };
    let data = load_dataset(&a.manifest)?;
    fs::create_dir_all(&a.out_dir).map_err(Error::Io)?;
    let out = |name: &str| a.out_dir.join(name);
    let seed = cfg.seed;

    match a.study {
        Study::Experiment => {
            let r = run_experiment(&data, &Method::Pipeline(cfg), trials, seed)?;
            print_report(&r);
            write_reports_csv(&out("experiment.csv"), &[&r])?;
        }
        Study::Preprocess => {
            let mut reports = Vec::new();
            for scaling in FeatureScaling::ALL {
                for m in baseline_methods(scaling) {
                    let r = run_experiment(&data, &m, trials, seed)?;
                    print_report(&r);
                    reports.push(r);
                }
            }
            write_reports_csv(&out("preprocess.csv"), &reports.iter().collect::<Vec<_>>())?;
        }
        Study::PerView => {
            let mut methods = baseline_methods(FeatureScaling::Standardized);
            methods.push(Method::Pipeline(cfg));
            let study = per_view_study(&data, &methods, trials, seed)?;
            let reports: Vec<&EvalReport> = study.iter().flat_map(|s| &s.reports).collect();
            reports.iter().for_each(|r| print_report(r));
            write_reports_csv(&out("per_view.csv"), &reports)?;
        }
        Study::Latent => {
            let cmp = latent_vs_original(
                &data,
                &cfg,
                &BaselineKind::ALL,
                &BaselineParams::default(),
                trials,
                seed,
            )?;
            let reports: Vec<&EvalReport> =
                cmp.iter().flat_map(|c| [&c.original, &c.latent]).collect();
            reports.iter().for_each(|r| print_report(r));
            write_reports_csv(&out("latent.csv"), &reports)?;
        }
        Study::Ratio => {
            let sweep = ratio_sweep(&data, &cfg, &ratios, a.test_fraction, seed, trials)?;
            for p in &sweep.points {
                match &p.outcome {
                    SweepOutcome::Evaluated(r) => {
                        println!(
                            "ratio {:<5} n_train {:<5} ACC {:.4} ± {:.4}",
                            p.ratio,
                            p.train_ids.len(),
                            r.acc.mean,
                            r.acc.std
                        )
                    }
                    SweepOutcome::Skipped(reason) => {
                        println!("ratio {:<5} skipped: {reason}", p.ratio)
                    }
                }
            }
            write_sweep_csv(&out("ratio.csv"), &sweep)?;
            write_plot_csv(&out("ratio_plot.csv"), &eval::sweep_plot_points(&sweep))?;
        }
        Study::Projection => {
            let (train, test) = split(&data, eval::TRAIN_FRACTION, seed)?;
            let pipe = train_pipeline(&train, &cfg)?;
            let labels: Vec<u8> = train
                .labels()
                .iter()
                .chain(test.labels())
                .copied()
                .collect();
            let stack = |a: Matrix, b: Matrix| -> Result<Matrix, Error> {
                let rows: Vec<&[f64]> = a.row_iter().chain(b.row_iter()).collect();
                Matrix::from_rows(&rows)
            };
            let latent = stack(pipe.embed_dataset(&train)?, pipe.embed_dataset(&test)?)?;
            let (tr, te) = FeatureScaling::Standardized.apply(&train, &test)?;
            let original = stack(tr.concatenated_features(), te.concatenated_features())?;
            for (name, points) in [
                ("projection_latent.csv", latent),
                ("projection_original.csv", original),
            ] {
                let coords = projection_2d(&points)?;
                write_plot_csv(
                    &out(name),
                    &projection_plot_points(&coords, &labels, train.len())?,
                )?;
            }
            println!(
                "projected {} train and {} test subjects",
                train.len(),
                test.len()
            );
        }
    }
    println!("reports written to {}", a.out_dir.display());
    Ok(())
}
