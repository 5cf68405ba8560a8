//! Batch experiment pipeline: configuration, the nine-baseline run over one
//! dataset pair, divergence reporting, grid aggregation, and reproducible
//! run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cca::{default_latent_dim, fit_linear_cca, transform_linear, CcaModel, View};
use crate::data::{
    load_csv, normalize, numerical_rank, partition_features, synth_generate, Dataset,
    SynthConfig, DEFAULT_LABEL_COLUMN, DEFAULT_NA_TOKEN,
};
use crate::dcca::{train_dcca, DccaModel, DccaTrainConfig};
use crate::divergence::{divergence_report, DivergenceReport, Stage};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_baseline, leakage_audit, Baseline, CcaVariant, EvalResult, EvalSettings,
};
use crate::impute::{cross_transfer_impute, harmonize_common_coding, unify, UnifiedPair};
use crate::kcca::{fit_kernel_cca, transform_kernel, KccaModel};
use crate::kernel::{median_heuristic_gamma, KernelSpec};
use crate::pairing::{nearest_pairing, PairedViews};

/// One experiment: a dataset pair (files or synthetic), the baselines to run,
/// and every hyperparameter. The serialized form is the run manifest, which
/// alone reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub transfer_id: String,
    #[serde(default)]
    pub source_path: Option<PathBuf>,
    #[serde(default)]
    pub target_path: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_na_token")]
    pub na_token: String,
    #[serde(default = "all_baselines")]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub settings: EvalSettings,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub force: bool,
}

fn default_label_column() -> String {
    DEFAULT_LABEL_COLUMN.to_string()
}

fn default_na_token() -> String {
    DEFAULT_NA_TOKEN.to_string()
}

fn all_baselines() -> Vec<Baseline> {
    Baseline::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.baselines.is_empty() {
            return Err(Error::InvalidConfig("no baselines selected".to_string()));
        }
        match (&self.synth, &self.source_path, &self.target_path) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => Ok(()),
            _ => Err(Error::InvalidConfig(
                "specify either synth or both source_path and target_path".to_string(),
            )),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        if let Some(synth) = &self.synth {
            return synth_generate(synth);
        }
        let load = |path: &Path| {
            if !path.exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("input file not found: {}", path.display()),
                )));
            }
            load_csv(path, &self.label_column, &self.na_token, None)
        };
        let source = load(self.source_path.as_ref().unwrap())?;
        let target = load(self.target_path.as_ref().unwrap())?;
        if target.nrows() > source.nrows() && !self.force {
            return Err(Error::SourceSmallerThanTarget {
                source_rows: source.nrows(),
                target_rows: target.nrows(),
            });
        }
        Ok((source, target))
    }
}

/// Exit code convention: 0 ok, 1 partial grid failure, 2 config/input error,
/// 3 numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::Csv(_)
        | Error::MissingLabelColumn(_)
        | Error::BadLabel { .. }
        | Error::MissingLabel(_)
        | Error::EmptyFeature(_)
        | Error::DuplicateFeature(_)
        | Error::NoCommonFeatures
        | Error::SourceSmallerThanTarget { .. }
        | Error::TooFewRows { .. }
        | Error::InvalidConfig(_)
        | Error::Serde(_) => 2,
        Error::NotPositiveDefinite(_)
        | Error::DegenerateView(_)
        | Error::NonFinite(_)
        | Error::TrainingDiverged(_)
        | Error::RankTooLarge { .. }
        | Error::DimensionMismatch { .. }
        | Error::SupervisedPairingInfeasible { .. } => 3,
    }
}

/// A latent model fitted on the full paired data (no cross-validation),
/// kept for serialization and divergence reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Unified,
    Linear(CcaModel),
    Kernel(KccaModel),
    Deep(DccaModel),
}

impl FittedModel {
    pub fn transform(&self, rows: &DMatrix<f64>, view: View) -> Result<DMatrix<f64>> {
        match self {
            FittedModel::Unified => Ok(rows.clone()),
            FittedModel::Linear(m) => transform_linear(m, rows, view),
            FittedModel::Kernel(m) => transform_kernel(m, rows, view),
            FittedModel::Deep(m) => m.transform(rows, view),
        }
    }
}

/// Full-data transfer fit for one baseline: the shared pre-latent pipeline
/// plus the baseline's latent model.
pub struct TransferFit {
    pub unified: UnifiedPair,
    pub paired: PairedViews,
    pub model: FittedModel,
}

/// Runs the non-CV pipeline on the complete pair: harmonize → normalize →
/// cross-transfer impute → unify → supervised pairing → latent fit.
pub fn fit_transfer(
    source: &Dataset,
    target: &Dataset,
    baseline: Baseline,
    settings: &EvalSettings,
) -> Result<TransferFit> {
    let part = partition_features(source, target)?;
    let mut src = source.clone();
    let mut tgt = target.clone();
    harmonize_common_coding(&mut src, &mut tgt, &part)?;
    let (src_n, _) = normalize(&src)?;
    let (tgt_n, _) = normalize(&tgt)?;
    let (src_i, tgt_i) = cross_transfer_impute(&src_n, &tgt_n, &part, settings.k_impute, true)?;
    let unified = unify(&src_i, &tgt_i, &part, baseline.unify_mode(settings.k_impute))?;
    let paired = nearest_pairing(&unified, true)?;
    let r = settings.latent_dim.unwrap_or_else(|| {
        default_latent_dim(numerical_rank(&unified.source), numerical_rank(&unified.target))
    });
    let model = match baseline.variant() {
        CcaVariant::None => FittedModel::Unified,
        CcaVariant::Linear => FittedModel::Linear(fit_linear_cca(&paired, r, settings.rho)?),
        CcaVariant::Kernel => {
            let kernel = settings
                .kernel
                .unwrap_or_else(|| KernelSpec::Rbf {
                    gamma: median_heuristic_gamma(&stack_views(&paired)),
                });
            FittedModel::Kernel(fit_kernel_cca(&paired, r, kernel, settings.kappa)?)
        }
        CcaVariant::Deep => {
            let cfg = DccaTrainConfig {
                seed: settings.seed,
                latent_dim: r,
                ..settings.dcca.clone()
            };
            FittedModel::Deep(train_dcca(&paired, &cfg)?)
        }
    };
    Ok(TransferFit { unified, paired, model })
}

fn stack_views(p: &PairedViews) -> DMatrix<f64> {
    let m = p.source_rows.nrows();
    DMatrix::from_fn(2 * m, p.source_rows.ncols(), |i, j| {
        if i < m {
            p.source_rows[(i, j)]
        } else {
            p.target_rows[(i - m, j)]
        }
    })
}

/// Pre- and post-projection divergence of the paired training views.
pub fn transfer_divergence(
    fit: &TransferFit,
    kernel: &KernelSpec,
    seed: u64,
) -> Result<(DivergenceReport, DivergenceReport)> {
    let pre = divergence_report(
        &fit.paired.source_rows,
        &fit.paired.target_rows,
        Stage::PreCca,
        kernel,
        seed,
    )?;
    let ls = fit.model.transform(&fit.paired.source_rows, View::Source)?;
    let lt = fit.model.transform(&fit.paired.target_rows, View::Target)?;
    let post = divergence_report(&ls, &lt, Stage::PostCca, kernel, seed)?;
    Ok((pre, post))
}

// ---------------------------------------------------------------------------
// CSV round-trips
// ---------------------------------------------------------------------------

pub const ACCURACY_HEADER: &str = "baseline,mean_accuracy,std_dev,fold_accuracies,seed";
pub const DIVERGENCE_HEADER: &str = "transfer_id,baseline,stage,mmd,proxy_a,coral,kernel";

pub fn accuracy_csv(results: &[EvalResult]) -> String {
    let mut out = String::from(ACCURACY_HEADER);
    out.push('\n');
    for r in results {
        let folds: Vec<String> = r.fold_accuracies.iter().map(|a| a.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.baseline,
            r.mean_accuracy,
            r.std_dev,
            folds.join(";"),
            r.seed
        ));
    }
    out
}

pub fn parse_accuracy_csv(text: &str) -> Result<Vec<EvalResult>> {
    let bad = |line: &str| Error::Serde(format!("bad accuracy row: {line}"));
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(line));
        }
        let folds = fields[3]
            .split(';')
            .map(|f| f.parse::<f64>().map_err(|_| bad(line)))
            .collect::<Result<Vec<f64>>>()?;
        out.push(EvalResult {
            baseline: fields[0].to_string(),
            mean_accuracy: fields[1].parse().map_err(|_| bad(line))?,
            std_dev: fields[2].parse().map_err(|_| bad(line))?,
            fold_accuracies: folds,
            seed: fields[4].parse().map_err(|_| bad(line))?,
        });
    }
    Ok(out)
}

fn kernel_token(k: &KernelSpec) -> String {
    match k {
        KernelSpec::Linear => "linear".to_string(),
        KernelSpec::Rbf { gamma } => format!("rbf:{gamma}"),
    }
}

fn parse_kernel_token(s: &str) -> Result<KernelSpec> {
    if s == "linear" {
        return Ok(KernelSpec::Linear);
    }
    if let Some(g) = s.strip_prefix("rbf:") {
        return Ok(KernelSpec::Rbf {
            gamma: g
                .parse()
                .map_err(|_| Error::Serde(format!("bad kernel token: {s}")))?,
        });
    }
    Err(Error::Serde(format!("bad kernel token: {s}")))
}

pub fn divergence_csv(rows: &[(String, String, DivergenceReport)]) -> String {
    let mut out = String::from(DIVERGENCE_HEADER);
    out.push('\n');
    for (transfer_id, baseline, r) in rows {
        out.push_str(&format!(
            "{},{}\n",
            r.csv_row(transfer_id, baseline),
            kernel_token(&r.kernel)
        ));
    }
    out
}

pub fn parse_divergence_csv(text: &str) -> Result<Vec<(String, String, DivergenceReport)>> {
    let bad = |line: &str| Error::Serde(format!("bad divergence row: {line}"));
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(line));
        }
        let stage = match fields[2] {
            "pre_cca" => Stage::PreCca,
            "post_cca" => Stage::PostCca,
            _ => return Err(bad(line)),
        };
        out.push((
            fields[0].to_string(),
            fields[1].to_string(),
            DivergenceReport {
                mmd: fields[3].parse().map_err(|_| bad(line))?,
                proxy_a: fields[4].parse().map_err(|_| bad(line))?,
                coral: fields[5].parse().map_err(|_| bad(line))?,
                stage,
                kernel: parse_kernel_token(fields[6])?,
            },
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Run execution
// ---------------------------------------------------------------------------

/// Temp-then-rename so concurrent grid cells and interrupted runs never leave
/// a half-written report behind.
fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub transfer_id: String,
    pub results: Vec<EvalResult>,
    pub divergences: Vec<(String, String, DivergenceReport)>,
    pub out_dir: PathBuf,
}

/// Runs every configured baseline: cross-validated accuracy with leakage
/// audit, full-data divergence pre/post projection for CCA baselines, then
/// writes accuracy CSV, divergence CSV, pairing audit, serialized models,
/// and the run manifest into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (source, target) = cfg.load_datasets()?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let mut results = Vec::new();
    let mut divergences = Vec::new();
    let mut pairing_rows = String::from("baseline,source_id,target_id,distance\n");
    for &baseline in &cfg.baselines {
        let (result, log) = evaluate_baseline(&source, &target, baseline, &cfg.settings)?;
        let violations = leakage_audit(&log);
        if !violations.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "leakage audit failed for {baseline}: {}",
                violations.join("; ")
            )));
        }
        results.push(result);

        if baseline == Baseline::Original {
            continue;
        }
        let fit = fit_transfer(&source, &target, baseline, &cfg.settings)?;
        for p in &fit.paired.pair_index {
            pairing_rows.push_str(&format!(
                "{},{},{},{}\n",
                baseline, p.source_id, p.target_id, p.distance
            ));
        }
        if baseline.variant() != CcaVariant::None {
            let kernel = cfg.settings.kernel.unwrap_or_else(|| KernelSpec::Rbf {
                gamma: median_heuristic_gamma(&stack_views(&fit.paired)),
            });
            let (pre, post) = transfer_divergence(&fit, &kernel, cfg.settings.seed)?;
            divergences.push((cfg.transfer_id.clone(), baseline.name().to_string(), pre));
            divergences.push((cfg.transfer_id.clone(), baseline.name().to_string(), post));
            let model_json = serde_json::to_string_pretty(&fit.model)?;
            write_atomic(
                &cfg.out_dir.join(format!("{}_model.json", baseline.name())),
                &model_json,
            )?;
        }
    }

    write_atomic(&cfg.out_dir.join("accuracy.csv"), &accuracy_csv(&results))?;
    write_atomic(
        &cfg.out_dir.join("divergence.csv"),
        &divergence_csv(&divergences),
    )?;
    write_atomic(&cfg.out_dir.join("pairing_audit.csv"), &pairing_rows)?;
    let manifest = serde_json::to_string_pretty(&serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    }))?;
    write_atomic(&cfg.out_dir.join("manifest.json"), &manifest)?;

    Ok(RunOutput {
        transfer_id: cfg.transfer_id.clone(),
        results,
        divergences,
        out_dir: cfg.out_dir.clone(),
    })
}

/// Re-executes the experiment recorded in a manifest file.
pub fn run_from_manifest(path: &Path) -> Result<RunOutput> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let cfg: ExperimentConfig = serde_json::from_value(
        value
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Serde("manifest has no config".to_string()))?,
    )?;
    run_experiment(&cfg)
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    /// transfer_id → baseline → "mean±std", or "ERROR: …" for a failed row.
    pub accuracy_matrix: Vec<(String, BTreeMap<String, String>)>,
    pub divergences: Vec<(String, String, DivergenceReport)>,
    pub failures: Vec<(String, String)>,
}

fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.4}±{:.4}", mean, std)
}

/// Runs every config (in parallel up to `jobs`), aggregates one accuracy
/// matrix with an Average row over the successful rows, and keeps going past
/// per-cell failures.
pub fn run_grid(configs: &[ExperimentConfig], jobs: usize) -> GridReport {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    let outcomes: Vec<(String, Result<RunOutput>)> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| (cfg.transfer_id.clone(), run_experiment(cfg)))
            .collect()
    });

    let mut accuracy_matrix = Vec::new();
    let mut divergences = Vec::new();
    let mut failures = Vec::new();
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for (transfer_id, outcome) in outcomes {
        match outcome {
            Ok(out) => {
                let mut row = BTreeMap::new();
                for r in &out.results {
                    row.insert(r.baseline.clone(), format_cell(r.mean_accuracy, r.std_dev));
                    let entry = sums.entry(r.baseline.clone()).or_insert((0.0, 0.0, 0));
                    entry.0 += r.mean_accuracy;
                    entry.1 += r.std_dev;
                    entry.2 += 1;
                }
                accuracy_matrix.push((transfer_id, row));
                divergences.extend(out.divergences);
            }
            Err(e) => {
                let msg = e.to_string();
                accuracy_matrix.push((
                    transfer_id.clone(),
                    BTreeMap::from([("ERROR".to_string(), msg.clone())]),
                ));
                failures.push((transfer_id, msg));
            }
        }
    }
    if !sums.is_empty() {
        let average: BTreeMap<String, String> = sums
            .into_iter()
            .map(|(b, (mean, std, n))| (b, format_cell(mean / n as f64, std / n as f64)))
            .collect();
        accuracy_matrix.push(("Average".to_string(), average));
    }
    GridReport {
        accuracy_matrix,
        divergences,
        failures,
    }
}

impl GridReport {
    pub fn accuracy_matrix_csv(&self, baselines: &[Baseline]) -> String {
        let mut out = String::from("transfer_id");
        for b in baselines {
            out.push(',');
            out.push_str(b.name());
        }
        out.push('\n');
        for (transfer_id, row) in &self.accuracy_matrix {
            out.push_str(transfer_id);
            if let Some(err) = row.get("ERROR") {
                for _ in baselines {
                    out.push_str(",ERROR");
                }
                out.push_str(&format!("  # {err}"));
            } else {
                for b in baselines {
                    out.push(',');
                    out.push_str(row.get(b.name()).map(String::as_str).unwrap_or(""));
                }
            }
            out.push('\n');
        }
        out
    }
}
