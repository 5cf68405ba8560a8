//! HEOM-distance kNN imputation, cross-transfer imputation on the common
//! feature block, and feature-creation imputation (zero padding or kNNI)
//! producing unified feature representations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, FeatureMeta, FeaturePartition};
use crate::error::{Error, Result};

/// How the totally-missing cross block (F_S in the target, F_T in the
/// source) is completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImputeMode {
    ZeroPad,
    Knni { k: usize },
}

/// Row-aligned source/target datasets over the unified feature space, with
/// no masked cells left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedPair {
    pub source: Dataset,
    pub target: Dataset,
    pub partition: FeaturePartition,
}

/// Heterogeneous Euclidean-overlap metric between two rows over the same
/// feature list. Per feature: 1 if either value is missing; 0/1 overlap for
/// categoricals; range-normalized absolute difference for numericals (a
/// zero-range feature contributes 0 when equal, 1 otherwise).
pub fn heom_distance(
    a: &[f64],
    a_missing: &[bool],
    b: &[f64],
    b_missing: &[bool],
    features: &[FeatureMeta],
) -> Result<f64> {
    if a.len() != features.len() || b.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: a.len().max(b.len()),
        });
    }
    let mut sum = 0.0;
    for j in 0..features.len() {
        let dj = if a_missing[j] || b_missing[j] {
            1.0
        } else if features[j].is_categorical() {
            f64::from(a[j] != b[j])
        } else {
            let range = features[j].range();
            if range > 0.0 {
                ((a[j] - b[j]).abs() / range).min(1.0)
            } else {
                f64::from(a[j] != b[j])
            }
        };
        sum += dj * dj;
    }
    Ok(sum.sqrt())
}

fn row_slice(values: &DMatrix<f64>, missing: &DMatrix<bool>, i: usize, cols: &[usize]) -> (Vec<f64>, Vec<bool>) {
    let v = cols.iter().map(|&c| values[(i, c)]).collect();
    let m = cols.iter().map(|&c| missing[(i, c)]).collect();
    (v, m)
}

/// Donor values aggregated per the fill feature's kind: mean for numericals,
/// mode for categoricals (mode ties broken by the smaller code).
fn aggregate(donor_values: &[f64], meta: &FeatureMeta) -> f64 {
    debug_assert!(!donor_values.is_empty());
    if meta.is_categorical() {
        let mut counts: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
        for &v in donor_values {
            *counts.entry(v.to_bits()).or_insert(0) += 1;
        }
        let mut best = (0usize, f64::INFINITY);
        for (&bits, &count) in &counts {
            let code = f64::from_bits(bits);
            if count > best.0 || (count == best.0 && code < best.1) {
                best = (count, code);
            }
        }
        best.1
    } else {
        donor_values.iter().sum::<f64>() / donor_values.len() as f64
    }
}

/// Fills the masked `fill_map` cells of the given `rows` of `queries`.
///
/// Matching distance is HEOM over `query_match_cols` against each donor
/// row's `donor_match_cols` (same feature metas, supplied as `match_metas`).
/// Per cell, eligible donors are those observing the donor-side column;
/// the `k` nearest (ties by smaller donor row index) are aggregated.
/// Returns the donor row indices consulted across all fills.
#[allow(clippy::too_many_arguments)]
fn knn_fill(
    queries: &mut Dataset,
    rows: &[usize],
    query_match_cols: &[usize],
    donors: &Dataset,
    donor_match_cols: &[usize],
    match_metas: &[FeatureMeta],
    fill_map: &[(usize, usize)],
    k: usize,
    skip_self: bool,
) -> Result<()> {
    let k = k.max(1);
    for &i in rows {
        let needs: Vec<&(usize, usize)> = fill_map
            .iter()
            .filter(|(qc, _)| queries.missing[(i, *qc)])
            .collect();
        if needs.is_empty() {
            continue;
        }
        let (qv, qm) = row_slice(&queries.values, &queries.missing, i, query_match_cols);
        let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(donors.nrows());
        for r in 0..donors.nrows() {
            if skip_self && r == i {
                continue;
            }
            let (dv, dm) = row_slice(&donors.values, &donors.missing, r, donor_match_cols);
            let dist = heom_distance(&qv, &qm, &dv, &dm, match_metas)?;
            ranked.push((dist, r));
        }
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &&(qc, dc) in &needs {
            let mut donor_values = Vec::with_capacity(k);
            for &(_, r) in &ranked {
                if !donors.missing[(r, dc)] {
                    donor_values.push(donors.values[(r, dc)]);
                    if donor_values.len() == k {
                        break;
                    }
                }
            }
            if donor_values.is_empty() {
                return Err(Error::EmptyFeature(donors.features[dc].name.clone()));
            }
            queries.values[(i, qc)] = aggregate(&donor_values, &queries.features[qc]);
            queries.missing[(i, qc)] = false;
        }
    }
    Ok(())
}

/// Within-dataset kNN imputation; observed cells are never altered and the
/// output mask is empty. A donor pool smaller than `k` falls back to all
/// eligible donors.
pub fn knn_impute(d: &Dataset, k: usize) -> Result<Dataset> {
    let mut out = d.clone();
    let all_cols: Vec<usize> = (0..d.ncols()).collect();
    let fill_map: Vec<(usize, usize)> = all_cols.iter().map(|&c| (c, c)).collect();
    let rows: Vec<usize> = (0..d.nrows()).collect();
    knn_fill(
        &mut out,
        &rows,
        &all_cols,
        d,
        &all_cols,
        &d.features,
        &fill_map,
        k,
        true,
    )?;
    Ok(out)
}

/// Fills the masked cells of `queries` using `donors` only (all columns,
/// matching over the full shared feature list). Used on held-out rows so
/// test folds never donate to themselves.
pub fn impute_from_donors(queries: &Dataset, donors: &Dataset, k: usize) -> Result<Dataset> {
    let mut out = queries.clone();
    let all_cols: Vec<usize> = (0..queries.ncols()).collect();
    let fill_map: Vec<(usize, usize)> = all_cols.iter().map(|&c| (c, c)).collect();
    let rows: Vec<usize> = (0..queries.nrows()).collect();
    knn_fill(
        &mut out,
        &rows,
        &all_cols,
        donors,
        &all_cols,
        &donors.features,
        &fill_map,
        k,
        false,
    )?;
    Ok(out)
}

/// Merged feature metadata for a feature shared by both domains, so HEOM
/// ranges cover the pooled data.
fn merge_meta(a: &FeatureMeta, b: &FeatureMeta) -> FeatureMeta {
    match (&a.kind, &b.kind) {
        (
            FeatureKind::Numerical { min: amin, max: amax },
            FeatureKind::Numerical { min: bmin, max: bmax },
        ) => FeatureMeta {
            name: a.name.clone(),
            kind: FeatureKind::Numerical {
                min: amin.min(*bmin),
                max: amax.max(*bmax),
            },
        },
        _ => a.clone(),
    }
}

/// Re-codes the target's common categorical columns onto the source's
/// codebook (extending it with levels only the target saw), so codes agree
/// across domains before any pooled distance computation.
pub fn harmonize_common_coding(
    source: &mut Dataset,
    target: &mut Dataset,
    part: &FeaturePartition,
) -> Result<()> {
    for name in &part.common {
        let sj = source.feature_index(name).unwrap();
        let tj = target.feature_index(name).unwrap();
        let source_levels = match &source.features[sj].kind {
            FeatureKind::Categorical { levels } => levels.clone(),
            FeatureKind::Numerical { .. } => continue,
        };
        let target_levels = match &target.features[tj].kind {
            FeatureKind::Categorical { levels } => levels.clone(),
            FeatureKind::Numerical { .. } => {
                return Err(Error::InvalidConfig(format!(
                    "feature '{name}' is categorical in source but numerical in target"
                )))
            }
        };
        let mut merged = source_levels.clone();
        let recode: Vec<usize> = target_levels
            .iter()
            .map(|lvl| match merged.iter().position(|m| m == lvl) {
                Some(c) => c,
                None => {
                    merged.push(lvl.clone());
                    merged.len() - 1
                }
            })
            .collect();
        for i in 0..target.nrows() {
            if !target.missing[(i, tj)] {
                target.values[(i, tj)] = recode[target.values[(i, tj)] as usize] as f64;
            }
        }
        source.features[sj].kind = FeatureKind::Categorical { levels: merged.clone() };
        target.features[tj].kind = FeatureKind::Categorical { levels: merged };
    }
    Ok(())
}

/// Cross-transfer imputation: the row-stacked union of both datasets
/// restricted to the common block is kNN-imputed, with donors drawn from
/// either domain (or the own domain only when `cross_domain` is false),
/// then split back. Domain-specific columns are untouched.
pub fn cross_transfer_impute(
    source: &Dataset,
    target: &Dataset,
    part: &FeaturePartition,
    k: usize,
    cross_domain: bool,
) -> Result<(Dataset, Dataset)> {
    if part.common.is_empty() {
        return Err(Error::NoCommonFeatures);
    }
    let idx_s = FeaturePartition::indices_in(source, &part.common)?;
    let idx_t = FeaturePartition::indices_in(target, &part.common)?;

    let metas: Vec<FeatureMeta> = idx_s
        .iter()
        .zip(idx_t.iter())
        .map(|(&sj, &tj)| merge_meta(&source.features[sj], &target.features[tj]))
        .collect();

    let n = source.nrows();
    let m = target.nrows();
    let d = part.common.len();
    let mut stacked = Dataset {
        values: DMatrix::from_fn(n + m, d, |i, j| {
            if i < n {
                source.values[(i, idx_s[j])]
            } else {
                target.values[(i - n, idx_t[j])]
            }
        }),
        missing: DMatrix::from_fn(n + m, d, |i, j| {
            if i < n {
                source.missing[(i, idx_s[j])]
            } else {
                target.missing[(i - n, idx_t[j])]
            }
        }),
        labels: vec![0; n + m],
        features: metas,
        label_name: source.label_name.clone(),
    };

    if cross_domain {
        stacked = knn_impute(&stacked, k)?;
    } else {
        let source_part = stacked.select_rows(&(0..n).collect::<Vec<_>>());
        let target_part = stacked.select_rows(&(n..n + m).collect::<Vec<_>>());
        let source_filled = knn_impute(&source_part, k)?;
        let target_filled = knn_impute(&target_part, k)?;
        for j in 0..d {
            for i in 0..n {
                stacked.values[(i, j)] = source_filled.values[(i, j)];
                stacked.missing[(i, j)] = false;
            }
            for i in 0..m {
                stacked.values[(n + i, j)] = target_filled.values[(i, j)];
                stacked.missing[(n + i, j)] = false;
            }
        }
    }

    let mut out_source = source.clone();
    let mut out_target = target.clone();
    for j in 0..d {
        for i in 0..n {
            out_source.values[(i, idx_s[j])] = stacked.values[(i, j)];
            out_source.missing[(i, idx_s[j])] = false;
        }
        for i in 0..m {
            out_target.values[(i, idx_t[j])] = stacked.values[(n + i, j)];
            out_target.missing[(i, idx_t[j])] = false;
        }
    }
    Ok((out_source, out_target))
}

/// Re-indexes one dataset onto the unified feature order, leaving the
/// columns the domain never observed fully masked.
fn reindex_unified(d: &Dataset, unified_metas: &[FeatureMeta]) -> Dataset {
    let n = d.nrows();
    let cols: Vec<Option<usize>> = unified_metas
        .iter()
        .map(|meta| d.feature_index(&meta.name))
        .collect();
    let values = DMatrix::from_fn(n, unified_metas.len(), |i, j| match cols[j] {
        Some(c) => d.values[(i, c)],
        None => 0.0,
    });
    let missing = DMatrix::from_fn(n, unified_metas.len(), |i, j| match cols[j] {
        Some(c) => d.missing[(i, c)],
        None => true,
    });
    Dataset {
        values,
        missing,
        labels: d.labels.clone(),
        features: unified_metas.to_vec(),
        label_name: d.label_name.clone(),
    }
}

/// Completes both datasets onto the unified feature space. Requires the
/// common block to be complete (cross-transfer imputation already applied).
///
/// ZeroPad writes 0 into every still-missing cell of the domain-specific
/// columns. Knni first finishes each domain's own scattered missing cells
/// within-domain, then fills the totally-missing cross block from the other
/// domain's rows, matching on the common block via HEOM.
pub fn unify(
    source: &Dataset,
    target: &Dataset,
    part: &FeaturePartition,
    mode: ImputeMode,
) -> Result<UnifiedPair> {
    let idx_s = FeaturePartition::indices_in(source, &part.common)?;
    let idx_t = FeaturePartition::indices_in(target, &part.common)?;
    for (&sj, &tj) in idx_s.iter().zip(idx_t.iter()) {
        for i in 0..source.nrows() {
            if source.missing[(i, sj)] {
                return Err(Error::InvalidConfig(
                    "common block of source still has missing cells; run cross_transfer_impute first"
                        .to_string(),
                ));
            }
        }
        for i in 0..target.nrows() {
            if target.missing[(i, tj)] {
                return Err(Error::InvalidConfig(
                    "common block of target still has missing cells; run cross_transfer_impute first"
                        .to_string(),
                ));
            }
        }
    }

    // shared metadata over F_U: merged for common, owner's for specific
    let unified_metas: Vec<FeatureMeta> = part
        .unified
        .iter()
        .map(|name| {
            match (source.feature_index(name), target.feature_index(name)) {
                (Some(sj), Some(tj)) => merge_meta(&source.features[sj], &target.features[tj]),
                (Some(sj), None) => source.features[sj].clone(),
                (None, Some(tj)) => target.features[tj].clone(),
                (None, None) => unreachable!("unified name missing from both datasets"),
            }
        })
        .collect();

    let mut u_source = reindex_unified(source, &unified_metas);
    let mut u_target = reindex_unified(target, &unified_metas);

    let common_cols: Vec<usize> = (0..part.common.len()).collect();
    let source_only_cols: Vec<usize> =
        (part.common.len()..part.common.len() + part.source_only.len()).collect();
    let target_only_cols: Vec<usize> = (part.common.len() + part.source_only.len()
        ..part.unified.len())
        .collect();

    match mode {
        ImputeMode::ZeroPad => {
            for d in [&mut u_source, &mut u_target] {
                for j in 0..d.ncols() {
                    for i in 0..d.nrows() {
                        if d.missing[(i, j)] {
                            d.values[(i, j)] = 0.0;
                            d.missing[(i, j)] = false;
                        }
                    }
                }
            }
        }
        ImputeMode::Knni { k } => {
            // finish each domain's own scattered missing cells first
            let fill_own = |d: &mut Dataset, own_cols: &[usize]| -> Result<()> {
                let rows: Vec<usize> = (0..d.nrows()).collect();
                let donors = d.clone();
                let fill_map: Vec<(usize, usize)> = own_cols.iter().map(|&c| (c, c)).collect();
                let match_cols: Vec<usize> = common_cols
                    .iter()
                    .chain(own_cols.iter())
                    .copied()
                    .collect();
                let match_metas: Vec<FeatureMeta> =
                    match_cols.iter().map(|&c| donors.features[c].clone()).collect();
                knn_fill(
                    d,
                    &rows,
                    &match_cols,
                    &donors,
                    &match_cols,
                    &match_metas,
                    &fill_map,
                    k,
                    true,
                )
            };
            fill_own(&mut u_source, &source_only_cols)?;
            fill_own(&mut u_target, &target_only_cols)?;

            // cross blocks: donors are the other domain's rows, matched on F_C
            let match_metas: Vec<FeatureMeta> = common_cols
                .iter()
                .map(|&c| unified_metas[c].clone())
                .collect();
            let donors_for_source = u_target.clone();
            let rows: Vec<usize> = (0..u_source.nrows()).collect();
            let fill_map: Vec<(usize, usize)> =
                target_only_cols.iter().map(|&c| (c, c)).collect();
            knn_fill(
                &mut u_source,
                &rows,
                &common_cols,
                &donors_for_source,
                &common_cols,
                &match_metas,
                &fill_map,
                k,
                false,
            )?;
            let donors_for_target = u_source.clone();
            let rows: Vec<usize> = (0..u_target.nrows()).collect();
            let fill_map: Vec<(usize, usize)> =
                source_only_cols.iter().map(|&c| (c, c)).collect();
            knn_fill(
                &mut u_target,
                &rows,
                &common_cols,
                &donors_for_target,
                &common_cols,
                &match_metas,
                &fill_map,
                k,
                false,
            )?;
        }
    }

    debug_assert!(u_source.is_complete() && u_target.is_complete());
    Ok(UnifiedPair {
        source: u_source,
        target: u_target,
        partition: part.clone(),
    })
}

fn vstack(a: &Dataset, b: &Dataset) -> Dataset {
    let n = a.nrows();
    Dataset {
        values: DMatrix::from_fn(n + b.nrows(), a.ncols(), |i, j| {
            if i < n { a.values[(i, j)] } else { b.values[(i - n, j)] }
        }),
        missing: DMatrix::from_fn(n + b.nrows(), a.ncols(), |i, j| {
            if i < n { a.missing[(i, j)] } else { b.missing[(i - n, j)] }
        }),
        labels: a.labels.iter().chain(b.labels.iter()).copied().collect(),
        features: a.features.clone(),
        label_name: a.label_name.clone(),
    }
}

/// Maps held-out target-side rows onto the unified space of an already-built
/// `UnifiedPair`, consuming only its rows as donors (so held-out rows never
/// donate to themselves).
///
/// Missing common-block cells are kNN-filled from the pooled source+target
/// rows matched on F_C, mirroring cross-transfer imputation. The remainder
/// follows `mode`: ZeroPad zeroes everything still masked; Knni fills the
/// rows' own F_T cells from the target rows and the F_S block from the
/// source rows.
pub fn unify_new_target_rows(
    rows: &Dataset,
    u: &UnifiedPair,
    mode: ImputeMode,
    k_common: usize,
) -> Result<Dataset> {
    let part = &u.partition;
    let mut out = reindex_unified(rows, &u.source.features);
    let all: Vec<usize> = (0..out.nrows()).collect();

    let common_cols: Vec<usize> = (0..part.common.len()).collect();
    let source_only_cols: Vec<usize> =
        (part.common.len()..part.common.len() + part.source_only.len()).collect();
    let target_only_cols: Vec<usize> =
        (part.common.len() + part.source_only.len()..part.unified.len()).collect();

    let common_metas: Vec<FeatureMeta> =
        common_cols.iter().map(|&c| u.source.features[c].clone()).collect();
    let pooled = vstack(&u.source, &u.target);
    let fill_common: Vec<(usize, usize)> = common_cols.iter().map(|&c| (c, c)).collect();
    knn_fill(
        &mut out,
        &all,
        &common_cols,
        &pooled,
        &common_cols,
        &common_metas,
        &fill_common,
        k_common,
        false,
    )?;

    match mode {
        ImputeMode::ZeroPad => {
            for j in 0..out.ncols() {
                for i in 0..out.nrows() {
                    if out.missing[(i, j)] {
                        out.values[(i, j)] = 0.0;
                        out.missing[(i, j)] = false;
                    }
                }
            }
        }
        ImputeMode::Knni { k } => {
            let match_cols: Vec<usize> = common_cols
                .iter()
                .chain(target_only_cols.iter())
                .copied()
                .collect();
            let match_metas: Vec<FeatureMeta> =
                match_cols.iter().map(|&c| u.target.features[c].clone()).collect();
            let fill_map: Vec<(usize, usize)> =
                target_only_cols.iter().map(|&c| (c, c)).collect();
            knn_fill(
                &mut out,
                &all,
                &match_cols,
                &u.target,
                &match_cols,
                &match_metas,
                &fill_map,
                k,
                false,
            )?;
            let fill_map: Vec<(usize, usize)> =
                source_only_cols.iter().map(|&c| (c, c)).collect();
            knn_fill(
                &mut out,
                &all,
                &common_cols,
                &u.source,
                &common_cols,
                &common_metas,
                &fill_map,
                k,
                false,
            )?;
        }
    }

    debug_assert!(out.is_complete());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::partition_features;

    fn num_meta(name: &str, min: f64, max: f64) -> FeatureMeta {
        FeatureMeta {
            name: name.to_string(),
            kind: FeatureKind::Numerical { min, max },
        }
    }

    fn cat_meta(name: &str, n_levels: usize) -> FeatureMeta {
        FeatureMeta {
            name: name.to_string(),
            kind: FeatureKind::Categorical {
                levels: (0..n_levels).map(|i| i.to_string()).collect(),
            },
        }
    }

    fn dataset(rows: &[&[f64]], missing: &[&[bool]], features: Vec<FeatureMeta>) -> Dataset {
        let n = rows.len();
        let d = features.len();
        Dataset {
            values: DMatrix::from_fn(n, d, |i, j| rows[i][j]),
            missing: DMatrix::from_fn(n, d, |i, j| missing[i][j]),
            labels: vec![0; n],
            features,
            label_name: "y".to_string(),
        }
    }

    #[test]
    fn heom_identity_and_overlap() {
        let metas = vec![num_meta("a", 0.0, 10.0), cat_meta("b", 3)];
        let d = heom_distance(
            &[1.0, 2.0],
            &[false, false],
            &[1.0, 2.0],
            &[false, false],
            &metas,
        )
        .unwrap();
        assert_eq!(d, 0.0);

        let metas = vec![cat_meta("b", 3)];
        let d = heom_distance(&[0.0], &[false], &[2.0], &[false], &metas).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn heom_hand_computed_mixed_case() {
        // ranges 10 and 4, diffs 2 and 2, second value of b missing
        let metas = vec![num_meta("a", 0.0, 10.0), num_meta("b", 0.0, 4.0)];
        let d = heom_distance(
            &[3.0, 1.0],
            &[false, false],
            &[5.0, 3.0],
            &[false, true],
            &metas,
        )
        .unwrap();
        let expected = (0.2f64 * 0.2 + 1.0).sqrt();
        assert!((d - expected).abs() < 1e-12);
        assert!((d - 1.0198).abs() < 1e-3);
    }

    #[test]
    fn heom_symmetry_and_bound() {
        let metas = vec![num_meta("a", 0.0, 1.0), cat_meta("b", 2), num_meta("c", 0.0, 5.0)];
        let a = [0.2, 1.0, 4.0];
        let am = [false, false, true];
        let b = [0.9, 0.0, 2.0];
        let bm = [false, false, false];
        let d1 = heom_distance(&a, &am, &b, &bm, &metas).unwrap();
        let d2 = heom_distance(&b, &bm, &a, &am, &metas).unwrap();
        assert_eq!(d1, d2);
        assert!(d1 <= (metas.len() as f64).sqrt());
    }

    #[test]
    fn knn_impute_complete_dataset_unchanged() {
        let d = dataset(
            &[&[1.0, 2.0], &[3.0, 4.0]],
            &[&[false, false], &[false, false]],
            vec![num_meta("a", 1.0, 3.0), num_meta("b", 2.0, 4.0)],
        );
        let out = knn_impute(&d, 3).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn knn_impute_k1_copies_nearest_donor() {
        // row 2 is missing b; row 0 is much closer than row 1 on a
        let d = dataset(
            &[&[0.0, 5.0], &[10.0, 9.0], &[0.5, 0.0]],
            &[
                &[false, false],
                &[false, false],
                &[false, true],
            ],
            vec![num_meta("a", 0.0, 10.0), num_meta("b", 0.0, 9.0)],
        );
        let out = knn_impute(&d, 1).unwrap();
        assert_eq!(out.values[(2, 1)], 5.0);
        assert!(out.is_complete());
    }

    #[test]
    fn knn_impute_k2_matches_brute_force() {
        let d = dataset(
            &[
                &[0.0, 1.0, 3.0],
                &[0.1, 2.0, 4.0],
                &[0.2, 3.0, 8.0],
                &[0.9, 0.0, 0.0],
            ],
            &[
                &[false, false, true],
                &[false, false, false],
                &[false, false, false],
                &[false, false, false],
            ],
            vec![
                num_meta("a", 0.0, 0.9),
                num_meta("b", 0.0, 3.0),
                num_meta("c", 0.0, 8.0),
            ],
        );
        // brute force: HEOM of row 0 to each donor over all three features
        let metas = &d.features;
        let q: Vec<f64> = (0..3).map(|j| d.values[(0, j)]).collect();
        let qm = vec![false, false, true];
        let mut ranked: Vec<(f64, usize)> = (1..4)
            .map(|r| {
                let rv: Vec<f64> = (0..3).map(|j| d.values[(r, j)]).collect();
                (
                    heom_distance(&q, &qm, &rv, &[false, false, false], metas).unwrap(),
                    r,
                )
            })
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let expected = (d.values[(ranked[0].1, 2)] + d.values[(ranked[1].1, 2)]) / 2.0;
        let out = knn_impute(&d, 2).unwrap();
        assert_eq!(out.values[(0, 2)], expected);
    }

    #[test]
    fn knn_impute_never_alters_observed_cells() {
        let (d, _) = crate::data::synth_generate(&crate::data::SynthConfig {
            n_source: 40,
            n_target: 10,
            missing_rate: 0.25,
            ..Default::default()
        })
        .unwrap();
        let out = knn_impute(&d, 5).unwrap();
        assert!(out.is_complete());
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                if !d.missing[(i, j)] {
                    assert_eq!(out.values[(i, j)], d.values[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn knn_impute_identical_donors_is_k_independent() {
        let d = dataset(
            &[&[0.0, 7.0], &[0.1, 7.0], &[0.2, 7.0], &[0.3, 0.0]],
            &[
                &[false, false],
                &[false, false],
                &[false, false],
                &[false, true],
            ],
            vec![num_meta("a", 0.0, 0.3), num_meta("b", 0.0, 7.0)],
        );
        for k in 1..=3 {
            let out = knn_impute(&d, k).unwrap();
            assert_eq!(out.values[(3, 1)], 7.0);
        }
    }

    #[test]
    fn categorical_mode_with_tie_takes_smaller_code() {
        let d = dataset(
            &[&[0.0, 1.0], &[0.1, 2.0], &[0.2, 2.0], &[0.3, 1.0], &[0.05, 0.0]],
            &[
                &[false, false],
                &[false, false],
                &[false, false],
                &[false, false],
                &[false, true],
            ],
            vec![num_meta("a", 0.0, 0.3), cat_meta("b", 3)],
        );
        let out = knn_impute(&d, 4).unwrap();
        // donors contribute codes {1,2,2,1}: tie between 1 and 2 -> 1
        assert_eq!(out.values[(4, 1)], 1.0);
    }

    fn hetero_pair() -> (Dataset, Dataset) {
        // source features {c0, c1, s0}; target features {c0, c1, t0}
        let source = dataset(
            &[&[0.0, 0.0, 5.0], &[1.0, 1.0, 6.0], &[0.5, 0.4, 7.0]],
            &[
                &[false, false, false],
                &[false, false, false],
                &[false, false, false],
            ],
            vec![
                num_meta("c0", 0.0, 1.0),
                num_meta("c1", 0.0, 1.0),
                num_meta("s0", 5.0, 7.0),
            ],
        );
        let target = dataset(
            &[&[0.05, 0.0, 9.0], &[0.9, 1.0, 8.0]],
            &[
                &[false, true, false],
                &[false, false, false],
            ],
            vec![
                num_meta("c0", 0.0, 1.0),
                num_meta("c1", 0.0, 1.0),
                num_meta("t0", 8.0, 9.0),
            ],
        );
        (source, target)
    }

    #[test]
    fn cross_transfer_fills_from_nearest_cross_domain_donor() {
        let (source, target) = hetero_pair();
        let part = partition_features(&source, &target).unwrap();
        let (s2, t2) = cross_transfer_impute(&source, &target, &part, 1, true).unwrap();
        // target row 0 is missing c1; its nearest donor on c0 is source row 0
        assert_eq!(t2.values[(0, 1)], 0.0);
        assert_eq!(s2.values, source.values);
        // specific columns untouched
        assert_eq!(t2.values[(0, 2)], 9.0);
    }

    #[test]
    fn cross_transfer_noop_when_common_complete() {
        let (source, mut target) = hetero_pair();
        target.missing[(0, 1)] = false;
        target.values[(0, 1)] = 0.3;
        let part = partition_features(&source, &target).unwrap();
        let (s2, t2) = cross_transfer_impute(&source, &target, &part, 2, true).unwrap();
        assert_eq!(s2.values, source.values);
        assert_eq!(t2.values, target.values);
    }

    #[test]
    fn cross_transfer_mirrored_symmetric_fill() {
        let features = vec![num_meta("c0", 0.0, 1.0), num_meta("c1", 0.0, 1.0)];
        let source = dataset(
            &[&[0.2, 0.0], &[0.7, 0.7]],
            &[&[false, true], &[false, false]],
            features.clone(),
        );
        let target = dataset(
            &[&[0.2, 0.0], &[0.7, 0.7]],
            &[&[false, true], &[false, false]],
            features,
        );
        let part = partition_features(&source, &target).unwrap();
        let (s2, t2) = cross_transfer_impute(&source, &target, &part, 1, true).unwrap();
        assert_eq!(s2.values[(0, 1)], t2.values[(0, 1)]);
    }

    #[test]
    fn unify_identity_when_spaces_match() {
        let features = vec![num_meta("c0", 0.0, 1.0), num_meta("c1", 0.0, 1.0)];
        let source = dataset(
            &[&[0.2, 0.1], &[0.7, 0.9]],
            &[&[false, false], &[false, false]],
            features.clone(),
        );
        let target = dataset(&[&[0.3, 0.4]], &[&[false, false]], features);
        let part = partition_features(&source, &target).unwrap();
        let u = unify(&source, &target, &part, ImputeMode::ZeroPad).unwrap();
        assert_eq!(u.source.values, source.values);
        assert_eq!(u.target.values, target.values);
    }

    #[test]
    fn unify_zero_pad_cross_block_is_zero() {
        let (source, target) = hetero_pair();
        let part = partition_features(&source, &target).unwrap();
        let (s2, t2) = cross_transfer_impute(&source, &target, &part, 1, true).unwrap();
        let u = unify(&s2, &t2, &part, ImputeMode::ZeroPad).unwrap();
        assert_eq!(u.source.ncols(), 4);
        assert_eq!(u.target.ncols(), 4);
        assert_eq!(u.source.features, u.target.features);
        // source's t0 column (last) is all zero
        for i in 0..u.source.nrows() {
            assert_eq!(u.source.values[(i, 3)], 0.0);
        }
        // target's s0 column (index 2) is all zero
        for i in 0..u.target.nrows() {
            assert_eq!(u.target.values[(i, 2)], 0.0);
        }
        // own blocks preserved
        assert_eq!(u.source.values[(0, 2)], 5.0);
        assert_eq!(u.target.values[(1, 3)], 8.0);
        assert!(u.source.is_complete() && u.target.is_complete());
    }

    #[test]
    fn unify_knni_k1_copies_common_nearest_cross_row() {
        let (source, target) = hetero_pair();
        let part = partition_features(&source, &target).unwrap();
        let (s2, t2) = cross_transfer_impute(&source, &target, &part, 1, true).unwrap();
        let u = unify(&s2, &t2, &part, ImputeMode::Knni { k: 1 }).unwrap();
        // brute force: for each target row, the F_C-nearest source row donates s0
        let metas = vec![u.source.features[0].clone(), u.source.features[1].clone()];
        for ti in 0..u.target.nrows() {
            let q = [u.target.values[(ti, 0)], u.target.values[(ti, 1)]];
            let mut best = (f64::INFINITY, usize::MAX);
            for si in 0..u.source.nrows() {
                let r = [u.source.values[(si, 0)], u.source.values[(si, 1)]];
                let dist =
                    heom_distance(&q, &[false, false], &r, &[false, false], &metas).unwrap();
                if dist < best.0 {
                    best = (dist, si);
                }
            }
            assert_eq!(u.target.values[(ti, 2)], u.source.values[(best.1, 2)]);
        }
        assert!(u.source.is_complete() && u.target.is_complete());
    }
}
