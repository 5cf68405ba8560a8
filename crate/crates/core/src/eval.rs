//! Classification-transfer evaluation: kNN classification in original or
//! latent space, stratified k-fold cross-validation, and the per-fold
//! transfer pipeline with a leakage audit trail.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cca::{default_latent_dim, fit_linear_cca, transform_linear, View};
use crate::data::{
    normalize, numerical_rank, partition_features, Dataset, Normalizer,
};
use crate::dcca::{train_dcca, DccaTrainConfig};
use crate::error::{Error, Result};
use crate::impute::{
    cross_transfer_impute, harmonize_common_coding, impute_from_donors, knn_impute, unify,
    unify_new_target_rows, ImputeMode,
};
use crate::kcca::{fit_kernel_cca, transform_kernel};
use crate::kernel::{median_heuristic_gamma, KernelSpec};
use crate::pairing::nearest_pairing;

/// The nine evaluation pipelines: ZP*/IM* pick the zero-pad or kNNI
/// feature-creation step, the suffix picks the latent model (none, linear,
/// kernel, or deep CCA); Original uses the target alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Baseline {
    Original,
    Zpc,
    Imc,
    Zpcca,
    Imcca,
    Zpkcca,
    Imkcca,
    Zpdcca,
    Imdcca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcaVariant {
    None,
    Linear,
    Kernel,
    Deep,
}

impl Baseline {
    pub const ALL: [Baseline; 9] = [
        Baseline::Original,
        Baseline::Zpc,
        Baseline::Imc,
        Baseline::Zpcca,
        Baseline::Imcca,
        Baseline::Zpkcca,
        Baseline::Imkcca,
        Baseline::Zpdcca,
        Baseline::Imdcca,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Original => "Original",
            Baseline::Zpc => "ZPC",
            Baseline::Imc => "IMC",
            Baseline::Zpcca => "ZPCCA",
            Baseline::Imcca => "IMCCA",
            Baseline::Zpkcca => "ZPKCCA",
            Baseline::Imkcca => "IMKCCA",
            Baseline::Zpdcca => "ZPDCCA",
            Baseline::Imdcca => "IMDCCA",
        }
    }

    pub fn parse(s: &str) -> Result<Baseline> {
        Baseline::ALL
            .iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown baseline '{s}'")))
    }

    pub fn unify_mode(&self, k: usize) -> ImputeMode {
        match self {
            Baseline::Zpc | Baseline::Zpcca | Baseline::Zpkcca | Baseline::Zpdcca => {
                ImputeMode::ZeroPad
            }
            _ => ImputeMode::Knni { k },
        }
    }

    pub fn variant(&self) -> CcaVariant {
        match self {
            Baseline::Original | Baseline::Zpc | Baseline::Imc => CcaVariant::None,
            Baseline::Zpcca | Baseline::Imcca => CcaVariant::Linear,
            Baseline::Zpkcca | Baseline::Imkcca => CcaVariant::Kernel,
            Baseline::Zpdcca | Baseline::Imdcca => CcaVariant::Deep,
        }
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters shared by every baseline run. `kernel: None` selects an
/// RBF kernel with the median-heuristic bandwidth recomputed per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub k_impute: usize,
    pub k_classify: usize,
    pub rho: f64,
    pub kappa: f64,
    pub kernel: Option<KernelSpec>,
    pub dcca: DccaTrainConfig,
    pub latent_dim: Option<usize>,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k_impute: 5,
            k_classify: 1,
            rho: 1e-4,
            kappa: 1e-3,
            kernel: None,
            dcca: DccaTrainConfig::default(),
            latent_dim: None,
            n_folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub baseline: String,
    pub mean_accuracy: f64,
    pub std_dev: f64,
    pub fold_accuracies: Vec<f64>,
    pub seed: u64,
}

/// Which target rows each fitting stage consumed, recorded per fold so the
/// leakage audit can intersect them with the fold's held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldLog {
    pub fold: usize,
    pub test_rows: BTreeSet<usize>,
    pub consumed: BTreeMap<String, BTreeSet<usize>>,
}

pub type ConsumedLog = Vec<FoldLog>;

/// Returns one violation message per (fold, stage) whose consumed-row set
/// intersects that fold's held-out rows; an empty vector means no leakage.
pub fn leakage_audit(log: &ConsumedLog) -> Vec<String> {
    let mut violations = Vec::new();
    for fold in log {
        for (stage, consumed) in &fold.consumed {
            let overlap: Vec<usize> =
                consumed.intersection(&fold.test_rows).copied().collect();
            if !overlap.is_empty() {
                violations.push(format!(
                    "fold {}: stage '{}' consumed held-out rows {:?}",
                    fold.fold, stage, overlap
                ));
            }
        }
    }
    violations
}

/// Euclidean k-nearest-neighbor vote. Distance ties go to the smaller train
/// index; vote ties to the smaller label.
pub fn knn_classify(
    train_x: &DMatrix<f64>,
    train_y: &[u8],
    test_x: &DMatrix<f64>,
    k: usize,
) -> Result<Vec<u8>> {
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train_x.ncols(),
            got: test_x.ncols(),
        });
    }
    if train_x.nrows() == 0 || train_x.nrows() != train_y.len() {
        return Err(Error::TooFewRows { need: 1, got: 0 });
    }
    let k = k.max(1).min(train_x.nrows());
    let mut predictions = Vec::with_capacity(test_x.nrows());
    for i in 0..test_x.nrows() {
        let mut ranked: Vec<(f64, usize)> = (0..train_x.nrows())
            .map(|r| ((test_x.row(i) - train_x.row(r)).norm(), r))
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<u8, usize> = BTreeMap::new();
        for &(_, r) in ranked.iter().take(k) {
            *votes.entry(train_y[r]).or_insert(0) += 1;
        }
        // BTreeMap iterates labels ascending, so ties resolve to the smaller
        let winner = votes
            .iter()
            .max_by_key(|(label, count)| (**count, std::cmp::Reverse(**label)))
            .map(|(label, _)| *label)
            .unwrap();
        predictions.push(winner);
    }
    Ok(predictions)
}

/// Deterministic stratified folds: each class's indices are shuffled once and
/// dealt round-robin, keeping per-fold class proportions within one instance
/// of the global proportions.
pub fn stratified_folds(
    labels: &[u8],
    n_folds: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if n_folds < 2 {
        return Err(Error::InvalidConfig("need at least 2 folds".to_string()));
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    for ids in by_class.values() {
        if ids.len() < n_folds {
            return Err(Error::TooFewRows {
                need: n_folds,
                got: ids.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_sets: Vec<Vec<usize>> = vec![Vec::new(); n_folds];
    for ids in by_class.values_mut() {
        ids.shuffle(&mut rng);
        for (pos, &id) in ids.iter().enumerate() {
            test_sets[pos % n_folds].push(id);
        }
    }
    let mut folds = Vec::with_capacity(n_folds);
    for test in &mut test_sets {
        test.sort_unstable();
        let in_test: BTreeSet<usize> = test.iter().copied().collect();
        let train: Vec<usize> = (0..labels.len()).filter(|i| !in_test.contains(i)).collect();
        folds.push((train, test.clone()));
    }
    Ok(folds)
}

fn record(consumed: &mut BTreeMap<String, BTreeSet<usize>>, stage: &str, rows: &[usize]) {
    consumed
        .entry(stage.to_string())
        .or_default()
        .extend(rows.iter().copied());
}

fn accuracy(predicted: &[u8], actual: &[u8]) -> f64 {
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    hits as f64 / actual.len() as f64
}

/// Target-only fold: normalize and impute on the training rows, fill the
/// held-out rows from training donors, classify in feature space.
fn run_fold_original(
    target: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    s: &EvalSettings,
    consumed: &mut BTreeMap<String, BTreeSet<usize>>,
) -> Result<f64> {
    let t_train = target.select_rows(train_idx);
    let t_test = target.select_rows(test_idx);
    let norm = Normalizer::fit(&t_train)?;
    record(consumed, "normalize", train_idx);
    let t_train_n = norm.apply(&t_train)?;
    let t_test_n = norm.apply(&t_test)?;
    let t_train_i = knn_impute(&t_train_n, s.k_impute)?;
    let t_test_i = impute_from_donors(&t_test_n, &t_train_i, s.k_impute)?;
    record(consumed, "imputation", train_idx);
    let predicted = knn_classify(
        &t_train_i.values,
        &t_train_i.labels,
        &t_test_i.values,
        s.k_classify,
    )?;
    record(consumed, "classifier_train", train_idx);
    Ok(accuracy(&predicted, &t_test_i.labels))
}

/// One transfer fold: the full pipeline is fitted with the held-out target
/// rows excluded, which are then mapped into the unified (and, per variant,
/// latent) space and classified against the training-fold representation.
#[allow(clippy::too_many_arguments)]
fn run_fold_transfer(
    source: &Dataset,
    target: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    baseline: Baseline,
    s: &EvalSettings,
    fold_seed: u64,
    consumed: &mut BTreeMap<String, BTreeSet<usize>>,
) -> Result<f64> {
    let part = partition_features(source, target)?;
    let mut src = source.clone();
    let mut tgt = target.clone();
    // pure per-value recode from level metadata; uses no row statistics
    harmonize_common_coding(&mut src, &mut tgt, &part)?;
    let t_train = tgt.select_rows(train_idx);
    let t_test = tgt.select_rows(test_idx);

    let (src_n, _) = normalize(&src)?;
    let t_norm = Normalizer::fit(&t_train)?;
    record(consumed, "normalize", train_idx);
    let t_train_n = t_norm.apply(&t_train)?;
    let t_test_n = t_norm.apply(&t_test)?;

    let (src_i, t_train_i) =
        cross_transfer_impute(&src_n, &t_train_n, &part, s.k_impute, true)?;
    record(consumed, "cross_impute", train_idx);

    let mode = baseline.unify_mode(s.k_impute);
    let u = unify(&src_i, &t_train_i, &part, mode)?;
    record(consumed, "unify", train_idx);
    let test_u = unify_new_target_rows(&t_test_n, &u, mode, s.k_impute)?;

    let paired = nearest_pairing(&u, true)?;
    record(consumed, "pairing", train_idx);

    let r = s
        .latent_dim
        .unwrap_or_else(|| default_latent_dim(numerical_rank(&u.source), numerical_rank(&u.target)));

    let (train_x, test_x) = match baseline.variant() {
        CcaVariant::None => (u.target.values.clone(), test_u.values.clone()),
        CcaVariant::Linear => {
            let model = fit_linear_cca(&paired, r, s.rho)?;
            record(consumed, "cca_fit", train_idx);
            (
                transform_linear(&model, &u.target.values, View::Target)?,
                transform_linear(&model, &test_u.values, View::Target)?,
            )
        }
        CcaVariant::Kernel => {
            let kernel = match &s.kernel {
                Some(k) => *k,
                None => {
                    let stacked = DMatrix::from_fn(
                        paired.len() * 2,
                        paired.source_rows.ncols(),
                        |i, j| {
                            if i < paired.len() {
                                paired.source_rows[(i, j)]
                            } else {
                                paired.target_rows[(i - paired.len(), j)]
                            }
                        },
                    );
                    KernelSpec::Rbf {
                        gamma: median_heuristic_gamma(&stacked),
                    }
                }
            };
            let model = fit_kernel_cca(&paired, r, kernel, s.kappa)?;
            record(consumed, "cca_fit", train_idx);
            (
                transform_kernel(&model, &u.target.values, View::Target)?,
                transform_kernel(&model, &test_u.values, View::Target)?,
            )
        }
        CcaVariant::Deep => {
            let cfg = DccaTrainConfig {
                seed: fold_seed,
                latent_dim: r,
                ..s.dcca.clone()
            };
            let model = train_dcca(&paired, &cfg)?;
            record(consumed, "cca_fit", train_idx);
            (
                model.transform(&u.target.values, View::Target)?,
                model.transform(&test_u.values, View::Target)?,
            )
        }
    };

    let predicted = knn_classify(&train_x, &u.target.labels, &test_x, s.k_classify)?;
    record(consumed, "classifier_train", train_idx);
    Ok(accuracy(&predicted, &t_test.labels))
}

/// Stratified cross-validation of one baseline: every fold re-fits the whole
/// pipeline without its held-out rows. Returns the accuracy summary and the
/// per-fold consumed-row log for the leakage audit.
pub fn evaluate_baseline(
    source: &Dataset,
    target: &Dataset,
    baseline: Baseline,
    settings: &EvalSettings,
) -> Result<(EvalResult, ConsumedLog)> {
    let folds = stratified_folds(&target.labels, settings.n_folds, settings.seed)?;
    let mut fold_accuracies = Vec::with_capacity(folds.len());
    let mut log = Vec::with_capacity(folds.len());
    for (f, (train_idx, test_idx)) in folds.iter().enumerate() {
        let mut consumed = BTreeMap::new();
        let fold_seed = settings.seed + f as u64;
        let acc = match baseline {
            Baseline::Original => {
                run_fold_original(target, train_idx, test_idx, settings, &mut consumed)?
            }
            _ => run_fold_transfer(
                source,
                target,
                train_idx,
                test_idx,
                baseline,
                settings,
                fold_seed,
                &mut consumed,
            )?,
        };
        fold_accuracies.push(acc);
        log.push(FoldLog {
            fold: f,
            test_rows: test_idx.iter().copied().collect(),
            consumed,
        });
    }
    let n = fold_accuracies.len() as f64;
    let mean = fold_accuracies.iter().sum::<f64>() / n;
    let var = fold_accuracies
        .iter()
        .map(|a| (a - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    Ok((
        EvalResult {
            baseline: baseline.name().to_string(),
            mean_accuracy: mean,
            std_dev: var.sqrt(),
            fold_accuracies,
            seed: settings.seed,
        },
        log,
    ))
}
