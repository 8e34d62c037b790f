//! `lama`: fit, predict and inspect column types from the command line.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lama_core::autotyping::infer_feature_kind;
use lama_core::data::{build_dataset, infer_task_kind, read_csv, read_csv_table, Dataset, DatasetOptions};
use lama_core::orchestrator::{fit_preset, predict_automl, utilized_fit, AutoMLModel};
use lama_core::validation::{make_folds, CvScheme};
use lama_core::{LamaError, TaskKind, TimeBudget};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "lama", version, about = "Tabular AutoML")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.lama and report.json.
    Fit {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Time budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the column typing decisions as JSON.
    InferTypes {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        target: String,
    },
}

/// A failed command: exit status and message.
struct Failure {
    code: u8,
    message: String,
}

impl From<LamaError> for Failure {
    fn from(e: LamaError) -> Self {
        let code = if e.is_data_error() {
            2
        } else if e.is_config_error() {
            3
        } else {
            1
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("LAMA_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure {
        code: 3,
        message: format!("LAMA_THREADS must be a positive integer, got {v:?}"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure {
            code: 1,
            message: e.to_string(),
        })
}

fn load_dataset(train: &Path, target: &str, cfg: &RunConfig) -> Result<Dataset, Failure> {
    let raw = read_csv(train, target)?;
    let kind = match cfg.task {
        Some(k) => k,
        None => infer_task_kind(raw.column(target).expect("read_csv checked the target")),
    };
    let options = DatasetOptions {
        hints: cfg.hints.clone(),
        k_folds: cfg.preset.cv.as_ref().map(|c| c.k),
        metric: cfg.metric,
    };
    Ok(build_dataset(&raw, target, kind, &options)?)
}

fn missing(what: &str) -> Failure {
    Failure {
        code: 3,
        message: format!("{what} is required (flag or config)"),
    }
}

fn cmd_fit(
    train: Option<PathBuf>,
    target: Option<String>,
    config: Option<PathBuf>,
    budget: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = match &config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(b) = budget {
        cfg.preset.budget_seconds = b;
    }
    let train = train.or(cfg.train.clone()).ok_or_else(|| missing("--train"))?;
    let target = target.or(cfg.target.clone()).ok_or_else(|| missing("--target"))?;
    let out = out.or(cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let dataset = load_dataset(&train, &target, &cfg)?;
    cfg.preset.validate(&dataset.task())?;

    let model = match cfg.seeds.as_deref() {
        Some(seeds) if seeds.len() > 1 => utilized_fit(
            &dataset,
            std::slice::from_ref(&cfg.preset),
            &[seeds.to_vec()],
            &TimeBudget::from_secs_f64(cfg.preset.budget_seconds),
        )?,
        Some([seed]) => fit_preset(&dataset, &cfg.preset.with_seed(*seed))?,
        _ => fit_preset(&dataset, &cfg.preset)?,
    };
    fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    model.save(out.join("model.lama"))?;
    let report = serde_json::to_string_pretty(&model.report()).map_err(|e| io_failure(&out, e))?;
    let report_path = out.join("report.json");
    fs::write(&report_path, report).map_err(|e| io_failure(&report_path, e))?;
    log::info!("OOF {} = {:.6}", model.task.metric, model.oof_score);
    Ok(())
}

fn prediction_header(model: &AutoMLModel) -> Vec<String> {
    let mut header = vec!["row".to_string()];
    match model.task.kind {
        TaskKind::Binary => header.push("p".into()),
        TaskKind::Regression => header.push("value".into()),
        TaskKind::Multiclass => header.extend(model.classes.iter().map(|c| format!("p_{c}"))),
    }
    header
}

fn cmd_predict(model_path: &Path, data: &Path, out: &Path) -> Result<(), Failure> {
    let model = AutoMLModel::load(model_path)?;
    let raw = read_csv_table(data)?;
    let pred = predict_automl(&model, &raw)?;
    let mut w = csv::Writer::from_path(out).map_err(|e| io_failure(out, e))?;
    w.write_record(prediction_header(&model)).map_err(|e| io_failure(out, e))?;
    for (i, row) in pred.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| io_failure(out, e))?;
    }
    w.flush().map_err(|e| io_failure(out, e))?;
    Ok(())
}

fn cmd_infer_types(train: &Path, target: &str) -> Result<(), Failure> {
    let cfg = RunConfig::default();
    let dataset = load_dataset(train, target, &cfg)?;
    let scheme = CvScheme::default_for(dataset.task().kind, cfg.preset.seed);
    let folds = make_folds(&scheme, &dataset)?;
    let report = infer_feature_kind(&dataset, &folds, &cfg.preset.typing)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| io_failure(train, e))?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Fit {
            train,
            target,
            config,
            budget,
            out,
        } => cmd_fit(train, target, config, budget, out),
        Command::Predict { model, data, out } => cmd_predict(&model, &data, &out),
        Command::InferTypes { train, target } => cmd_infer_types(&train, &target),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("lama: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
