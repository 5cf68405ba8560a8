//! Tabular data model: CSV ingestion, normalization, feature-space
//! partitioning, rank computation and synthetic benchmark generation.
//!
//! A [`Dataset`] is a dense numeric matrix with an explicit missingness
//! mask. Categorical values are stored as integer codes assigned in
//! first-appearance order; the original string levels are retained in the
//! feature metadata so CSV round-trips are lossless.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distinct-value threshold for inferring a numerical column without a schema.
const NUMERIC_DISTINCT_THRESHOLD: usize = 10;

/// Relative singular-value cutoff for [`numerical_rank`].
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// String levels in first-appearance order; the stored code of a value
    /// is its index in this list.
    Categorical { levels: Vec<String> },
    /// Observed range, derived only from non-missing entries.
    Numerical { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureMeta {
    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    /// Span used by the HEOM distance: observed max−min for numericals,
    /// number-of-levels−1 for categoricals.
    pub fn range(&self) -> f64 {
        match &self.kind {
            FeatureKind::Categorical { levels } => levels.len().saturating_sub(1) as f64,
            FeatureKind::Numerical { min, max } => max - min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// N×d value matrix. Cells flagged in `missing` carry no meaning.
    pub values: DMatrix<f64>,
    pub missing: DMatrix<bool>,
    /// Binary labels, never missing.
    pub labels: Vec<u8>,
    pub features: Vec<FeatureMeta>,
    pub label_name: String,
}

impl Dataset {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn is_complete(&self) -> bool {
        !self.missing.iter().any(|&m| m)
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = self.missing.len();
        if total == 0 {
            return 0.0;
        }
        self.missing.iter().filter(|&&m| m).count() as f64 / total as f64
    }

    /// Keep only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let d = self.ncols();
        let values = DMatrix::from_fn(rows.len(), d, |i, j| self.values[(rows[i], j)]);
        let missing = DMatrix::from_fn(rows.len(), d, |i, j| self.missing[(rows[i], j)]);
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        Dataset {
            values,
            missing,
            labels,
            features: self.features.clone(),
            label_name: self.label_name.clone(),
        }
    }

    /// Keep only the given feature columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        let n = self.nrows();
        let values = DMatrix::from_fn(n, cols.len(), |i, j| self.values[(i, cols[j])]);
        let missing = DMatrix::from_fn(n, cols.len(), |i, j| self.missing[(i, cols[j])]);
        Dataset {
            values,
            missing,
            labels: self.labels.clone(),
            features: cols.iter().map(|&c| self.features[c].clone()).collect(),
            label_name: self.label_name.clone(),
        }
    }
}

/// Disjoint split of two feature spaces by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePartition {
    pub common: Vec<String>,
    pub source_only: Vec<String>,
    pub target_only: Vec<String>,
    /// common (source order), then source-only, then target-only.
    pub unified: Vec<String>,
}

impl FeaturePartition {
    /// Column indices of `names` within `d`, erroring on absent names.
    pub fn indices_in(d: &Dataset, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                d.feature_index(n)
                    .ok_or_else(|| Error::InvalidConfig(format!("feature '{n}' not in dataset")))
            })
            .collect()
    }
}

pub fn partition_features(source: &Dataset, target: &Dataset) -> Result<FeaturePartition> {
    let target_names: BTreeSet<&str> = target.features.iter().map(|f| f.name.as_str()).collect();
    let source_names: BTreeSet<&str> = source.features.iter().map(|f| f.name.as_str()).collect();

    let common: Vec<String> = source
        .features
        .iter()
        .filter(|f| target_names.contains(f.name.as_str()))
        .map(|f| f.name.clone())
        .collect();
    if common.is_empty() {
        return Err(Error::NoCommonFeatures);
    }
    let source_only: Vec<String> = source
        .features
        .iter()
        .filter(|f| !target_names.contains(f.name.as_str()))
        .map(|f| f.name.clone())
        .collect();
    let target_only: Vec<String> = target
        .features
        .iter()
        .filter(|f| !source_names.contains(f.name.as_str()))
        .map(|f| f.name.clone())
        .collect();

    let mut unified = common.clone();
    unified.extend(source_only.iter().cloned());
    unified.extend(target_only.iter().cloned());
    Ok(FeaturePartition {
        common,
        source_only,
        target_only,
        unified,
    })
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

pub const DEFAULT_NA_TOKEN: &str = "NA";
pub const DEFAULT_LABEL_COLUMN: &str = "Amen_ST12";

pub fn load_csv(
    path: &Path,
    label_column: &str,
    na_token: &str,
    schema: Option<&[FeatureMeta]>,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_pos = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;

    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_pos)
        .map(|(_, h)| h.clone())
        .collect();
    {
        let mut seen = BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateFeature(name.clone()));
            }
        }
    }

    let mut cells: Vec<Vec<Option<String>>> = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(feature_names.len());
        for (i, field) in record.iter().enumerate() {
            if i == label_pos {
                if field == na_token {
                    return Err(Error::MissingLabel(row_idx));
                }
                let value: f64 = field.trim().parse().map_err(|_| Error::BadLabel {
                    row: row_idx,
                    value: field.to_string(),
                })?;
                if value == 0.0 {
                    labels.push(0);
                } else if value == 1.0 {
                    labels.push(1);
                } else {
                    return Err(Error::BadLabel {
                        row: row_idx,
                        value: field.to_string(),
                    });
                }
            } else {
                row.push(if field == na_token {
                    None
                } else {
                    Some(field.to_string())
                });
            }
        }
        cells.push(row);
    }
    let n = cells.len();
    if n == 0 {
        return Err(Error::TooFewRows { need: 1, got: 0 });
    }

    let d = feature_names.len();
    let mut values = DMatrix::zeros(n, d);
    let mut missing = DMatrix::from_element(n, d, false);
    let mut features = Vec::with_capacity(d);

    for j in 0..d {
        let observed: Vec<(usize, &str)> = (0..n)
            .filter_map(|i| cells[i][j].as_deref().map(|s| (i, s)))
            .collect();
        if observed.is_empty() {
            return Err(Error::EmptyFeature(feature_names[j].clone()));
        }
        let schema_kind = schema.and_then(|s| {
            s.iter()
                .find(|f| f.name == feature_names[j])
                .map(|f| f.kind.clone())
        });
        let numeric = match &schema_kind {
            Some(FeatureKind::Numerical { .. }) => true,
            Some(FeatureKind::Categorical { .. }) => false,
            None => {
                let all_parse = observed.iter().all(|(_, s)| s.trim().parse::<f64>().is_ok());
                let distinct: BTreeSet<&str> = observed.iter().map(|&(_, s)| s).collect();
                all_parse && distinct.len() > NUMERIC_DISTINCT_THRESHOLD
            }
        };
        if numeric {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for i in 0..n {
                match cells[i][j].as_deref() {
                    Some(s) => {
                        let v: f64 = s.trim().parse().map_err(|_| {
                            Error::InvalidConfig(format!(
                                "non-numeric value '{s}' in numerical column '{}'",
                                feature_names[j]
                            ))
                        })?;
                        values[(i, j)] = v;
                        min = min.min(v);
                        max = max.max(v);
                    }
                    None => missing[(i, j)] = true,
                }
            }
            features.push(FeatureMeta {
                name: feature_names[j].clone(),
                kind: FeatureKind::Numerical { min, max },
            });
        } else {
            let mut levels: Vec<String> = match schema_kind {
                Some(FeatureKind::Categorical { levels }) => levels,
                _ => Vec::new(),
            };
            for i in 0..n {
                match cells[i][j].as_deref() {
                    Some(s) => {
                        let code = match levels.iter().position(|l| l == s) {
                            Some(c) => c,
                            None => {
                                levels.push(s.to_string());
                                levels.len() - 1
                            }
                        };
                        values[(i, j)] = code as f64;
                    }
                    None => missing[(i, j)] = true,
                }
            }
            features.push(FeatureMeta {
                name: feature_names[j].clone(),
                kind: FeatureKind::Categorical { levels },
            });
        }
    }

    Ok(Dataset {
        values,
        missing,
        labels,
        features,
        label_name: label_column.to_string(),
    })
}

/// Mirrors [`load_csv`] bit-exactly: feature columns in order, label last.
pub fn save_csv(d: &Dataset, path: &Path, na_token: &str) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_path(path)?;
    let mut header: Vec<&str> = d.features.iter().map(|f| f.name.as_str()).collect();
    header.push(&d.label_name);
    writer.write_record(&header)?;
    for i in 0..d.nrows() {
        let mut record: Vec<String> = Vec::with_capacity(d.ncols() + 1);
        for j in 0..d.ncols() {
            if d.missing[(i, j)] {
                record.push(na_token.to_string());
            } else {
                match &d.features[j].kind {
                    FeatureKind::Categorical { levels } => {
                        record.push(levels[d.values[(i, j)] as usize].clone());
                    }
                    FeatureKind::Numerical { .. } => {
                        record.push(format!("{}", d.values[(i, j)]));
                    }
                }
            }
        }
        record.push(format!("{}", d.labels[i]));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-feature affine scale `(x - offset) / denom`, with `denom == 0`
/// meaning the feature is constant and maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub scales: Vec<(f64, f64)>,
}

impl Normalizer {
    /// Fits min-max scales from the observed entries of `d` so that every
    /// observed cell of `d` lands in [0,1]. Categorical codes are scaled by
    /// 1/(|levels|−1); a single-level categorical maps to 0.
    pub fn fit(d: &Dataset) -> Result<Normalizer> {
        let mut scales = Vec::with_capacity(d.ncols());
        for j in 0..d.ncols() {
            match &d.features[j].kind {
                FeatureKind::Categorical { levels } => {
                    scales.push((0.0, levels.len().saturating_sub(1) as f64));
                }
                FeatureKind::Numerical { .. } => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    let mut seen = false;
                    for i in 0..d.nrows() {
                        if !d.missing[(i, j)] {
                            min = min.min(d.values[(i, j)]);
                            max = max.max(d.values[(i, j)]);
                            seen = true;
                        }
                    }
                    if !seen {
                        return Err(Error::EmptyFeature(d.features[j].name.clone()));
                    }
                    scales.push((min, max - min));
                }
            }
        }
        Ok(Normalizer { scales })
    }

    /// Applies recorded scales; the mask is untouched. Metadata ranges are
    /// rewritten in the scaled coordinates so HEOM keeps working downstream.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if self.scales.len() != d.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.scales.len(),
                got: d.ncols(),
            });
        }
        let mut out = d.clone();
        for j in 0..d.ncols() {
            let (offset, denom) = self.scales[j];
            for i in 0..d.nrows() {
                if !out.missing[(i, j)] {
                    out.values[(i, j)] = if denom > 0.0 {
                        (out.values[(i, j)] - offset) / denom
                    } else {
                        0.0
                    };
                }
            }
            if let FeatureKind::Numerical { min, max } = &mut out.features[j].kind {
                if denom > 0.0 {
                    *min = (*min - offset) / denom;
                    *max = (*max - offset) / denom;
                } else {
                    *min = 0.0;
                    *max = 0.0;
                }
            }
        }
        Ok(out)
    }
}

/// Fit-and-apply on the same data.
pub fn normalize(d: &Dataset) -> Result<(Dataset, Normalizer)> {
    let norm = Normalizer::fit(d)?;
    Ok((norm.apply(d)?, norm))
}

// ---------------------------------------------------------------------------
// Rank
// ---------------------------------------------------------------------------

/// Count of singular values above `RANK_TOLERANCE · σ_max`. The dataset must
/// be fully imputed.
pub fn numerical_rank(d: &Dataset) -> usize {
    debug_assert!(d.is_complete());
    let svd = d.values.clone().svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * sigma_max)
        .count()
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Synthetic heterogeneous dataset pair. Defaults mimic a mid-size track
/// pair: 725/280 instances at roughly 10–20% missingness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub d_common: usize,
    pub d_source_only: usize,
    pub d_target_only: usize,
    pub missing_rate: f64,
    pub latent_dim: usize,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_source: 725,
            n_target: 280,
            d_common: 12,
            d_source_only: 4,
            d_target_only: 4,
            missing_rate: 0.15,
            latent_dim: 3,
            label_noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_source < self.n_target || self.n_target < 2 {
            return Err(Error::InvalidConfig(
                "need n_source >= n_target >= 2".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidConfig("missing_rate must be in [0,1)".to_string()));
        }
        if self.d_common == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "d_common and latent_dim must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple and portable.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Observation noise on common features; small so the shared latent stays
/// recoverable.
const SYNTH_COMMON_NOISE: f64 = 0.1;

/// Both datasets' common features are noisy linear images of a shared latent
/// factor; domain-specific features mix an independent per-domain latent with
/// noise. The label is the sign of a fixed functional of the shared latent,
/// flipped with probability `label_noise`. Cells are masked MCAR.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let k = cfg.latent_dim;
    let loading_common: Vec<Vec<f64>> = (0..cfg.d_common)
        .map(|_| (0..k).map(|_| standard_normal(&mut rng)).collect())
        .collect();
    let label_weights: Vec<f64> = (0..k).map(|_| standard_normal(&mut rng)).collect();

    let build = |n: usize,
                     d_specific: usize,
                     prefix: &str,
                     rng: &mut ChaCha8Rng|
     -> Dataset {
        let loading_specific: Vec<Vec<f64>> = (0..d_specific)
            .map(|_| (0..k).map(|_| standard_normal(rng)).collect())
            .collect();
        let d_total = cfg.d_common + d_specific;
        let mut values = DMatrix::zeros(n, d_total);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let z: Vec<f64> = (0..k).map(|_| standard_normal(rng)).collect();
            let u: Vec<f64> = (0..k).map(|_| standard_normal(rng)).collect();
            for j in 0..cfg.d_common {
                let signal: f64 = loading_common[j].iter().zip(&z).map(|(a, b)| a * b).sum();
                values[(i, j)] = signal + SYNTH_COMMON_NOISE * standard_normal(rng);
            }
            for j in 0..d_specific {
                let signal: f64 = loading_specific[j].iter().zip(&u).map(|(a, b)| a * b).sum();
                values[(i, cfg.d_common + j)] = signal + standard_normal(rng);
            }
            let score: f64 = label_weights.iter().zip(&z).map(|(a, b)| a * b).sum();
            let mut label = u8::from(score > 0.0);
            if rng.gen::<f64>() < cfg.label_noise {
                label = 1 - label;
            }
            labels.push(label);
        }
        let mut missing = DMatrix::from_element(n, d_total, false);
        if cfg.missing_rate > 0.0 {
            for i in 0..n {
                for j in 0..d_total {
                    if rng.gen::<f64>() < cfg.missing_rate {
                        missing[(i, j)] = true;
                    }
                }
            }
            // every feature needs at least one observation
            for j in 0..d_total {
                if (0..n).all(|i| missing[(i, j)]) {
                    missing[(0, j)] = false;
                }
            }
        }
        let features = (0..d_total)
            .map(|j| {
                let name = if j < cfg.d_common {
                    format!("c{j}")
                } else {
                    format!("{prefix}{}", j - cfg.d_common)
                };
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for i in 0..n {
                    if !missing[(i, j)] {
                        min = min.min(values[(i, j)]);
                        max = max.max(values[(i, j)]);
                    }
                }
                FeatureMeta {
                    name,
                    kind: FeatureKind::Numerical { min, max },
                }
            })
            .collect();
        Dataset {
            values,
            missing,
            labels,
            features,
            label_name: "label".to_string(),
        }
    };

    let source = build(cfg.n_source, cfg.d_source_only, "s", &mut rng);
    let target = build(cfg.n_target, cfg.d_target_only, "t", &mut rng);
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_marks_na_cells() {
        // shaped like a five-instance sample with an NA-coded missing marker
        let f = write_temp(
            "ID,Age,Smoking,ER,TT,Amen_ST12\n\
             1,47.39,0,1,1,1\n\
             2,33.45,1,1,NA,1\n\
             3,52.20,0,1,NA,1\n\
             4,52.35,0,0,NA,1\n\
             5,50.40,0,NA,1,0\n",
        );
        let d = load_csv(f.path(), "Amen_ST12", "NA", None).unwrap();
        assert_eq!(d.nrows(), 5);
        assert_eq!(d.ncols(), 5);
        assert_eq!(d.labels, vec![1, 1, 1, 1, 0]);
        let tt = d.feature_index("TT").unwrap();
        let er = d.feature_index("ER").unwrap();
        assert!(d.missing[(1, tt)] && d.missing[(2, tt)] && d.missing[(3, tt)]);
        assert!(d.missing[(4, er)]);
        assert_eq!(d.missing.iter().filter(|&&m| m).count(), 4);
    }

    #[test]
    fn load_csv_no_na_means_empty_mask() {
        let f = write_temp("a,b,y\n1,2,0\n3,4,1\n");
        let d = load_csv(f.path(), "y", "NA", None).unwrap();
        assert!(d.is_complete());
    }

    #[test]
    fn categorical_codes_in_first_appearance_order() {
        let f = write_temp("ER,y\n1,0\nNA,1\n0,0\n");
        let d = load_csv(f.path(), "y", "NA", None).unwrap();
        assert!(d.features[0].is_categorical());
        // "1" appears first -> code 0; "0" -> code 1
        assert_eq!(d.values[(0, 0)], 0.0);
        assert_eq!(d.values[(2, 0)], 1.0);
        assert!(d.missing[(1, 0)]);
    }

    #[test]
    fn load_rejects_missing_label_column_and_bad_labels() {
        let f = write_temp("a,y\n1,0\n");
        assert!(matches!(
            load_csv(f.path(), "nope", "NA", None),
            Err(Error::MissingLabelColumn(_))
        ));
        let f = write_temp("a,y\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "y", "NA", None),
            Err(Error::BadLabel { .. })
        ));
    }

    #[test]
    fn load_rejects_fully_missing_feature() {
        let f = write_temp("a,y\nNA,0\nNA,1\n");
        assert!(matches!(
            load_csv(f.path(), "y", "NA", None),
            Err(Error::EmptyFeature(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let (source, _) = synth_generate(&SynthConfig {
            n_source: 20,
            n_target: 10,
            missing_rate: 0.2,
            ..SynthConfig::default()
        })
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_csv(&source, f.path(), "NA").unwrap();
        let schema: Vec<FeatureMeta> = source.features.clone();
        let back = load_csv(f.path(), "label", "NA", Some(&schema)).unwrap();
        assert_eq!(back.labels, source.labels);
        assert_eq!(back.missing, source.missing);
        for i in 0..source.nrows() {
            for j in 0..source.ncols() {
                if !source.missing[(i, j)] {
                    assert_eq!(back.values[(i, j)].to_bits(), source.values[(i, j)].to_bits());
                }
            }
        }
    }

    #[test]
    fn normalize_min_max_endpoints() {
        let f = write_temp("x,y\n0,0\n5,1\n10,0\n");
        let schema = vec![FeatureMeta {
            name: "x".to_string(),
            kind: FeatureKind::Numerical { min: 0.0, max: 0.0 },
        }];
        let d = load_csv(f.path(), "y", "NA", Some(&schema)).unwrap();
        let (nd, _) = normalize(&d).unwrap();
        assert_eq!(nd.values[(0, 0)], 0.0);
        assert_eq!(nd.values[(1, 0)], 0.5);
        assert_eq!(nd.values[(2, 0)], 1.0);
    }

    #[test]
    fn normalize_is_idempotent_and_unit_interval() {
        let (source, _) = synth_generate(&SynthConfig {
            n_source: 30,
            n_target: 10,
            missing_rate: 0.1,
            ..SynthConfig::default()
        })
        .unwrap();
        let (n1, _) = normalize(&source).unwrap();
        for i in 0..n1.nrows() {
            for j in 0..n1.ncols() {
                if !n1.missing[(i, j)] {
                    assert!((0.0..=1.0).contains(&n1.values[(i, j)]));
                }
            }
        }
        let (n2, _) = normalize(&n1).unwrap();
        for (a, b) in n1.values.iter().zip(n2.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_observed_age_column() {
        let ages = [47.39, 33.45, 52.20, 52.35, 50.40];
        let body: String = ages.iter().map(|a| format!("{a},1\n")).collect();
        let f = write_temp(&format!("Age,y\n{body}"));
        let schema = vec![FeatureMeta {
            name: "Age".to_string(),
            kind: FeatureKind::Numerical { min: 0.0, max: 0.0 },
        }];
        let d = load_csv(f.path(), "y", "NA", Some(&schema)).unwrap();
        let (nd, _) = normalize(&d).unwrap();
        let (min, max) = (33.45, 52.35);
        for (i, a) in ages.iter().enumerate() {
            assert!((nd.values[(i, 0)] - (a - min) / (max - min)).abs() < 1e-12);
        }
        assert_eq!(nd.values[(1, 0)], 0.0);
        assert_eq!(nd.values[(3, 0)], 1.0);
    }

    fn named(names: &[&str]) -> Dataset {
        let n = 2;
        let d = names.len();
        Dataset {
            values: DMatrix::zeros(n, d),
            missing: DMatrix::from_element(n, d, false),
            labels: vec![0, 1],
            features: names
                .iter()
                .map(|&name| FeatureMeta {
                    name: name.to_string(),
                    kind: FeatureKind::Numerical { min: 0.0, max: 1.0 },
                })
                .collect(),
            label_name: "y".to_string(),
        }
    }

    #[test]
    fn partition_set_algebra() {
        let s = named(&["a", "b", "c"]);
        let t = named(&["b", "c", "d"]);
        let p = partition_features(&s, &t).unwrap();
        assert_eq!(p.common, vec!["b", "c"]);
        assert_eq!(p.source_only, vec!["a"]);
        assert_eq!(p.target_only, vec!["d"]);
        assert_eq!(p.unified, vec!["b", "c", "a", "d"]);
    }

    #[test]
    fn partition_identical_spaces() {
        let s = named(&["a", "b"]);
        let p = partition_features(&s, &s.clone()).unwrap();
        assert!(p.source_only.is_empty() && p.target_only.is_empty());
        assert_eq!(p.common, vec!["a", "b"]);
    }

    #[test]
    fn partition_rejects_disjoint_spaces() {
        let s = named(&["a"]);
        let t = named(&["b"]);
        assert!(matches!(
            partition_features(&s, &t),
            Err(Error::NoCommonFeatures)
        ));
    }

    #[test]
    fn rank_of_identity_and_duplicated_column() {
        let mut d = named(&["a", "b", "c"]);
        d.values = DMatrix::identity(3, 3);
        d.missing = DMatrix::from_element(3, 3, false);
        d.labels = vec![0, 1, 0];
        assert_eq!(numerical_rank(&d), 3);
        // duplicate a column
        for i in 0..3 {
            d.values[(i, 2)] = d.values[(i, 1)];
        }
        assert_eq!(numerical_rank(&d), 2);
    }

    #[test]
    fn rank_of_random_tall_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut d = named(&["a", "b", "c", "d"]);
        d.values = DMatrix::from_fn(10, 4, |_, _| standard_normal(&mut rng));
        d.missing = DMatrix::from_element(10, 4, false);
        d.labels = vec![0; 10];
        assert_eq!(numerical_rank(&d), 4);
        assert!(numerical_rank(&d) <= 4);
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig {
            n_source: 50,
            n_target: 20,
            ..SynthConfig::default()
        };
        let (s1, t1) = synth_generate(&cfg).unwrap();
        let (s2, t2) = synth_generate(&cfg).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn synth_missing_rate_controls_mask() {
        let cfg = SynthConfig {
            n_source: 100,
            n_target: 100,
            d_common: 10,
            d_source_only: 0,
            d_target_only: 0,
            missing_rate: 0.0,
            ..SynthConfig::default()
        };
        let (s, _) = synth_generate(&cfg).unwrap();
        assert!(s.is_complete());
        let cfg = SynthConfig {
            missing_rate: 0.2,
            ..cfg
        };
        let (s, _) = synth_generate(&cfg).unwrap();
        // binomial concentration: 1000 cells, rate 0.2
        assert!((s.missing_fraction() - 0.2).abs() < 0.05);
    }

    #[test]
    fn synth_label_balance_without_noise() {
        let cfg = SynthConfig {
            n_source: 400,
            n_target: 200,
            label_noise: 0.0,
            ..SynthConfig::default()
        };
        let (s, t) = synth_generate(&cfg).unwrap();
        for d in [&s, &t] {
            let frac = d.labels.iter().filter(|&&l| l == 1).count() as f64 / d.nrows() as f64;
            assert!((frac - 0.5).abs() < 0.1, "class fraction {frac}");
        }
    }
}
