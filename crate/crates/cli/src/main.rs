//! `ccalign`: batch front end for the transfer-learning pipeline.
//!
//! Verbs: `synth` writes a synthetic dataset pair, `run` executes one
//! experiment, `grid` executes many and aggregates, `report` summarizes an
//! output directory. Exit codes: 0 ok, 1 partial grid failure, 2
//! config/input error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ccalign_core::data::{save_csv, synth_generate, SynthConfig};
use ccalign_core::eval::{Baseline, EvalSettings};
use ccalign_core::kernel::KernelSpec;
use ccalign_core::pipeline::{
    exit_code, parse_accuracy_csv, parse_divergence_csv, run_experiment, run_grid,
    ExperimentConfig, GridReport,
};
use ccalign_core::Error;

#[derive(Parser)]
#[command(name = "ccalign", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic heterogeneous dataset pair as two CSV files
    Synth(SynthArgs),
    /// Run the configured baselines on one dataset pair
    Run(RunArgs),
    /// Run several experiments and aggregate one accuracy matrix
    Grid(GridArgs),
    /// Summarize the reports in an output directory
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, env = "CCATL_N_SOURCE", default_value_t = 725)]
    n_source: usize,
    #[arg(long, env = "CCATL_N_TARGET", default_value_t = 280)]
    n_target: usize,
    #[arg(long, default_value_t = 12)]
    d_common: usize,
    #[arg(long, default_value_t = 4)]
    d_source_only: usize,
    #[arg(long, default_value_t = 4)]
    d_target_only: usize,
    #[arg(long, default_value_t = 0.15)]
    missing_rate: f64,
    #[arg(long, default_value_t = 3)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    label_noise: f64,
    #[arg(long, env = "CCATL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "CCATL_OUT")]
    out: PathBuf,
    #[arg(long, env = "CCATL_NA_TOKEN", default_value = "NA")]
    na_token: String,
}

/// Hyperparameter flags shared by `run` and `grid`; unset flags defer to the
/// config file, which defers to the built-in defaults.
#[derive(Args, Clone)]
struct Overrides {
    #[arg(long, env = "CCATL_SOURCE")]
    source: Option<PathBuf>,
    #[arg(long, env = "CCATL_TARGET")]
    target: Option<PathBuf>,
    #[arg(long, env = "CCATL_LABEL_COL")]
    label_col: Option<String>,
    #[arg(long, env = "CCATL_NA_TOKEN")]
    na_token: Option<String>,
    /// Comma-separated subset of Original,ZPC,IMC,ZPCCA,IMCCA,ZPKCCA,IMKCCA,ZPDCCA,IMDCCA
    #[arg(long, env = "CCATL_BASELINES")]
    baselines: Option<String>,
    #[arg(long, env = "CCATL_K_IMPUTE")]
    k_impute: Option<usize>,
    #[arg(long, env = "CCATL_K_CLASSIFY")]
    k_classify: Option<usize>,
    #[arg(long, env = "CCATL_RHO")]
    rho: Option<f64>,
    #[arg(long, env = "CCATL_KAPPA")]
    kappa: Option<f64>,
    /// "linear", "rbf" (median-heuristic bandwidth), or "rbf:<gamma>"
    #[arg(long, env = "CCATL_KERNEL")]
    kernel: Option<String>,
    #[arg(long, env = "CCATL_DCCA_EPOCHS")]
    dcca_epochs: Option<usize>,
    #[arg(long, env = "CCATL_DCCA_LR")]
    dcca_lr: Option<f64>,
    /// Comma-separated hidden widths, e.g. "512,512,512"
    #[arg(long, env = "CCATL_DCCA_WIDTHS")]
    dcca_widths: Option<String>,
    #[arg(long, env = "CCATL_LATENT_DIM")]
    latent_dim: Option<usize>,
    #[arg(long, env = "CCATL_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "CCATL_OUT")]
    out: Option<PathBuf>,
    /// Allow a target with more rows than the source
    #[arg(long, env = "CCATL_FORCE")]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (TOML); flags override its values
    #[arg(long, env = "CCATL_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    transfer_id: Option<String>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GridArgs {
    /// Grid config file (TOML with one [[experiments]] table per pair)
    #[arg(long, env = "CCATL_CONFIG")]
    config: PathBuf,
    #[arg(long, env = "CCATL_JOBS", default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a previous run
    #[arg(long, env = "CCATL_OUT")]
    out: PathBuf,
}

fn parse_kernel_flag(s: &str) -> Result<KernelSpec, Error> {
    match s {
        "linear" => Ok(KernelSpec::Linear),
        "rbf" => Err(Error::InvalidConfig(
            "bare 'rbf' keeps the per-fold median heuristic; leave --kernel unset instead"
                .to_string(),
        )),
        other => other
            .strip_prefix("rbf:")
            .and_then(|g| g.parse::<f64>().ok())
            .map(|gamma| KernelSpec::Rbf { gamma })
            .ok_or_else(|| Error::InvalidConfig(format!("unknown kernel '{other}'"))),
    }
}

fn parse_baselines(s: &str) -> Result<Vec<Baseline>, Error> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Baseline::ALL.to_vec());
    }
    s.split(',').map(|b| Baseline::parse(b.trim())).collect()
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<(), Error> {
    if let Some(p) = &o.source {
        cfg.source_path = Some(p.clone());
        cfg.synth = None;
    }
    if let Some(p) = &o.target {
        cfg.target_path = Some(p.clone());
        cfg.synth = None;
    }
    if let Some(v) = &o.label_col {
        cfg.label_column = v.clone();
    }
    if let Some(v) = &o.na_token {
        cfg.na_token = v.clone();
    }
    if let Some(v) = &o.baselines {
        cfg.baselines = parse_baselines(v)?;
    }
    if let Some(v) = o.k_impute {
        cfg.settings.k_impute = v;
    }
    if let Some(v) = o.k_classify {
        cfg.settings.k_classify = v;
    }
    if let Some(v) = o.rho {
        cfg.settings.rho = v;
    }
    if let Some(v) = o.kappa {
        cfg.settings.kappa = v;
    }
    if let Some(v) = &o.kernel {
        cfg.settings.kernel = Some(parse_kernel_flag(v)?);
    }
    if let Some(v) = o.dcca_epochs {
        cfg.settings.dcca.epochs = v;
    }
    if let Some(v) = o.dcca_lr {
        cfg.settings.dcca.learning_rate = v;
    }
    if let Some(v) = &o.dcca_widths {
        cfg.settings.dcca.hidden_widths = v
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("bad width '{w}'")))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = o.latent_dim {
        cfg.settings.latent_dim = Some(v);
    }
    if let Some(v) = o.seed {
        cfg.settings.seed = v;
    }
    if let Some(p) = &o.out {
        cfg.out_dir = p.clone();
    }
    if o.force {
        cfg.force = true;
    }
    Ok(())
}

fn base_config(transfer_id: String, out_dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        transfer_id,
        source_path: None,
        target_path: None,
        synth: None,
        label_column: ccalign_core::data::DEFAULT_LABEL_COLUMN.to_string(),
        na_token: ccalign_core::data::DEFAULT_NA_TOKEN.to_string(),
        baselines: Baseline::ALL.to_vec(),
        settings: EvalSettings::default(),
        out_dir,
        force: false,
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Error> {
    let cfg = SynthConfig {
        n_source: a.n_source,
        n_target: a.n_target,
        d_common: a.d_common,
        d_source_only: a.d_source_only,
        d_target_only: a.d_target_only,
        missing_rate: a.missing_rate,
        latent_dim: a.latent_dim,
        label_noise: a.label_noise,
        seed: a.seed,
    };
    let (source, target) = synth_generate(&cfg)?;
    std::fs::create_dir_all(&a.out)?;
    save_csv(&source, &a.out.join("source.csv"), &a.na_token)?;
    save_csv(&target, &a.out.join("target.csv"), &a.na_token)?;
    println!(
        "wrote {} source rows and {} target rows to {}",
        source.nrows(),
        target.nrows(),
        a.out.display()
    );
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::from_toml_str(&std::fs::read_to_string(path)?)?,
        None => base_config(
            a.transfer_id.clone().unwrap_or_else(|| "run".to_string()),
            PathBuf::from("ccalign-out"),
        ),
    };
    if let Some(id) = &a.transfer_id {
        cfg.transfer_id = id.clone();
    }
    apply_overrides(&mut cfg, &a.overrides)?;
    let out = run_experiment(&cfg)?;
    for r in &out.results {
        println!(
            "{:10} {:.4} ± {:.4}",
            r.baseline, r.mean_accuracy, r.std_dev
        );
    }
    println!("reports written to {}", out.out_dir.display());
    Ok(())
}

#[derive(serde::Deserialize)]
struct GridFile {
    experiments: Vec<ExperimentConfig>,
}

fn cmd_grid(a: &GridArgs) -> Result<GridReport, Error> {
    let text = std::fs::read_to_string(&a.config)?;
    let file: GridFile =
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("grid config: {e}")))?;
    if file.experiments.is_empty() {
        return Err(Error::InvalidConfig("grid has no experiments".to_string()));
    }
    let mut configs = file.experiments;
    for cfg in &mut configs {
        apply_overrides(cfg, &a.overrides)?;
        cfg.validate()?;
    }
    let out_dir = a
        .overrides
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("ccalign-grid"));
    std::fs::create_dir_all(&out_dir)?;

    let report = run_grid(&configs, a.jobs);
    let baselines: Vec<Baseline> = configs[0].baselines.clone();
    let matrix = report.accuracy_matrix_csv(&baselines);
    std::fs::write(out_dir.join("grid_accuracy.csv"), &matrix)?;
    std::fs::write(
        out_dir.join("grid_divergence.csv"),
        ccalign_core::pipeline::divergence_csv(&report.divergences),
    )?;
    print!("{matrix}");
    for (id, msg) in &report.failures {
        eprintln!("FAILED {id}: {msg}");
    }
    Ok(report)
}

fn cmd_report(a: &ReportArgs) -> Result<(), Error> {
    let acc_path = a.out.join("accuracy.csv");
    let results = parse_accuracy_csv(&std::fs::read_to_string(&acc_path)?)?;
    println!("accuracy ({} baselines)", results.len());
    for r in &results {
        let folds: Vec<String> = r
            .fold_accuracies
            .iter()
            .map(|f| format!("{f:.3}"))
            .collect();
        println!(
            "  {:10} {:.4} ± {:.4}  folds [{}]  seed {}",
            r.baseline,
            r.mean_accuracy,
            r.std_dev,
            folds.join(" "),
            r.seed
        );
    }
    let div_path = a.out.join("divergence.csv");
    if div_path.exists() {
        let rows = parse_divergence_csv(&std::fs::read_to_string(&div_path)?)?;
        if !rows.is_empty() {
            println!("divergence");
            for (id, baseline, r) in &rows {
                println!(
                    "  {id} {baseline:8} {:8} mmd {:.4}  proxy_a {:.4}  coral {:.4e}",
                    r.stage.to_string(),
                    r.mmd,
                    r.proxy_a,
                    r.coral
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<u8, Error> = match &cli.cmd {
        Cmd::Synth(a) => cmd_synth(a).map(|()| 0),
        Cmd::Run(a) => cmd_run(a).map(|()| 0),
        Cmd::Grid(a) => cmd_grid(a).map(|r| u8::from(!r.failures.is_empty())),
        Cmd::Report(a) => cmd_report(a).map(|()| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            // machine-readable error record on stderr
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string(), "exit_code": exit_code(&e) })
            );
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
