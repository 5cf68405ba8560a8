//! Greedy nearest-pairing of target rows to distinct source rows, optionally
//! constrained within label classes.
//!
//! Each round, every unpaired target nominates its nearest unpaired source.
//! Targets whose nominations are all distinct are matched; when several
//! targets contend for one source the smaller distance wins (ties by smaller
//! target index) and the losers defer to the next round.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impute::UnifiedPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub source_id: usize,
    pub target_id: usize,
    pub distance: f64,
}

/// Row-aligned paired views over the unified feature space. Row i of
/// `source_rows` and `target_rows` is a matched pair carrying `labels[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedViews {
    pub source_rows: DMatrix<f64>,
    pub target_rows: DMatrix<f64>,
    pub labels: Vec<u8>,
    pub pair_index: Vec<PairRecord>,
}

impl PairedViews {
    pub fn len(&self) -> usize {
        self.pair_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_index.is_empty()
    }
}

/// Entry (i, j) is the Euclidean distance between source row i and target
/// row j over the unified feature space.
pub fn distance_matrix(u: &UnifiedPair) -> DMatrix<f64> {
    let n = u.source.nrows();
    let m = u.target.nrows();
    let d = u.source.ncols();
    DMatrix::from_fn(n, m, |i, j| {
        (0..d)
            .map(|c| (u.source.values[(i, c)] - u.target.values[(j, c)]).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}

/// Runs the round procedure on index subsets of a precomputed distance
/// matrix, returning (source_id, target_id, distance) triples.
fn pair_subset(dist: &DMatrix<f64>, sources: &[usize], targets: &[usize]) -> Vec<PairRecord> {
    let mut free_sources: Vec<usize> = sources.to_vec();
    let mut free_targets: Vec<usize> = targets.to_vec();
    let mut pairs = Vec::with_capacity(targets.len());

    while !free_targets.is_empty() {
        // each unpaired target nominates its nearest unpaired source
        let mut nominations: Vec<(usize, usize, f64)> = Vec::with_capacity(free_targets.len());
        for &t in &free_targets {
            let mut best = (f64::INFINITY, usize::MAX);
            for &s in &free_sources {
                let d = dist[(s, t)];
                if d < best.0 || (d == best.0 && s < best.1) {
                    best = (d, s);
                }
            }
            nominations.push((t, best.1, best.0));
        }
        // contention: per source, the (distance, target index)-smallest wins
        let mut winners: std::collections::BTreeMap<usize, (f64, usize)> =
            std::collections::BTreeMap::new();
        for &(t, s, d) in &nominations {
            match winners.get(&s) {
                Some(&(bd, bt)) if (bd, bt) <= (d, t) => {}
                _ => {
                    winners.insert(s, (d, t));
                }
            }
        }
        for (&s, &(d, t)) in &winners {
            pairs.push(PairRecord {
                source_id: s,
                target_id: t,
                distance: d,
            });
            free_sources.retain(|&x| x != s);
            free_targets.retain(|&x| x != t);
        }
    }
    pairs
}

/// Pairs every target row with a distinct nearest source row. When
/// `supervised`, pairing runs independently within each label class.
/// Output pairs are sorted by target row id; the procedure is deterministic.
pub fn nearest_pairing(u: &UnifiedPair, supervised: bool) -> Result<PairedViews> {
    let n = u.source.nrows();
    let m = u.target.nrows();
    if m == 0 {
        return Err(Error::TooFewRows { need: 1, got: 0 });
    }
    if m > n {
        return Err(Error::SourceSmallerThanTarget {
            source_rows: n,
            target_rows: m,
        });
    }
    let dist = distance_matrix(u);

    let mut pairs = if supervised {
        let mut all = Vec::with_capacity(m);
        for label in [0u8, 1u8] {
            let sources: Vec<usize> = (0..n).filter(|&i| u.source.labels[i] == label).collect();
            let targets: Vec<usize> = (0..m).filter(|&j| u.target.labels[j] == label).collect();
            if targets.is_empty() {
                continue;
            }
            if sources.len() < targets.len() {
                return Err(Error::SupervisedPairingInfeasible {
                    label,
                    source_rows: sources.len(),
                    target_rows: targets.len(),
                });
            }
            all.extend(pair_subset(&dist, &sources, &targets));
        }
        all
    } else {
        let sources: Vec<usize> = (0..n).collect();
        let targets: Vec<usize> = (0..m).collect();
        pair_subset(&dist, &sources, &targets)
    };
    pairs.sort_by_key(|p| p.target_id);

    let d = u.source.ncols();
    let source_rows = DMatrix::from_fn(m, d, |i, j| u.source.values[(pairs[i].source_id, j)]);
    let target_rows = DMatrix::from_fn(m, d, |i, j| u.target.values[(pairs[i].target_id, j)]);
    let labels = pairs
        .iter()
        .map(|p| u.target.labels[p.target_id])
        .collect();
    Ok(PairedViews {
        source_rows,
        target_rows,
        labels,
        pair_index: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, FeatureKind, FeatureMeta, FeaturePartition};

    fn unified(source: &[&[f64]], s_labels: &[u8], target: &[&[f64]], t_labels: &[u8]) -> UnifiedPair {
        let d = source[0].len();
        let features: Vec<FeatureMeta> = (0..d)
            .map(|j| FeatureMeta {
                name: format!("f{j}"),
                kind: FeatureKind::Numerical { min: 0.0, max: 1.0 },
            })
            .collect();
        let mk = |rows: &[&[f64]], labels: &[u8]| Dataset {
            values: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
            missing: DMatrix::from_element(rows.len(), d, false),
            labels: labels.to_vec(),
            features: features.clone(),
            label_name: "y".to_string(),
        };
        UnifiedPair {
            source: mk(source, s_labels),
            target: mk(target, t_labels),
            partition: FeaturePartition {
                common: features.iter().map(|f| f.name.clone()).collect(),
                source_only: vec![],
                target_only: vec![],
                unified: features.iter().map(|f| f.name.clone()).collect(),
            },
        }
    }

    #[test]
    fn distance_matrix_three_four_five() {
        let u = unified(&[&[0.0, 0.0]], &[0], &[&[3.0, 4.0]], &[0]);
        let dm = distance_matrix(&u);
        assert_eq!(dm[(0, 0)], 5.0);
    }

    #[test]
    fn distance_matrix_matches_per_pair_norm() {
        let u = unified(
            &[&[0.1, 0.2], &[0.5, 0.9], &[1.0, 0.0]],
            &[0, 0, 0],
            &[&[0.3, 0.3], &[0.8, 0.8]],
            &[0, 0],
        );
        let dm = distance_matrix(&u);
        for i in 0..3 {
            for j in 0..2 {
                let direct = ((u.source.values[(i, 0)] - u.target.values[(j, 0)]).powi(2)
                    + (u.source.values[(i, 1)] - u.target.values[(j, 1)]).powi(2))
                .sqrt();
                assert!((dm[(i, j)] - direct).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn exact_copy_pairs_at_distance_zero() {
        let u = unified(
            &[&[0.1, 0.1], &[0.5, 0.5], &[0.9, 0.9]],
            &[0, 0, 0],
            &[&[0.5, 0.5], &[0.9, 0.9]],
            &[0, 0],
        );
        let p = nearest_pairing(&u, false).unwrap();
        assert_eq!(p.len(), 2);
        for rec in &p.pair_index {
            assert_eq!(rec.distance, 0.0);
        }
        assert_eq!(p.pair_index[0].source_id, 1);
        assert_eq!(p.pair_index[1].source_id, 2);
    }

    #[test]
    fn single_pair_case() {
        let u = unified(&[&[0.3]], &[1], &[&[0.9]], &[1]);
        let p = nearest_pairing(&u, true).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.pair_index[0].source_id, 0);
    }

    #[test]
    fn conflict_resolution_hand_trace() {
        // sources {0, 10, 11}, targets {10.2, 10.6}: both targets' nearest is
        // source 10; target 0 wins at distance 0.2, target 1 defers to 11
        let u = unified(
            &[&[0.0], &[10.0], &[11.0]],
            &[0, 0, 0],
            &[&[10.2], &[10.6]],
            &[0, 0],
        );
        let p = nearest_pairing(&u, false).unwrap();
        assert_eq!(p.pair_index[0].source_id, 1);
        assert_eq!(p.pair_index[0].target_id, 0);
        assert_eq!(p.pair_index[1].source_id, 2);
        assert_eq!(p.pair_index[1].target_id, 1);
        assert!((p.pair_index[1].distance - 0.4).abs() < 1e-12);
    }

    #[test]
    fn supervised_never_pairs_across_labels() {
        let u = unified(
            &[&[0.0], &[0.1], &[0.9], &[1.0]],
            &[0, 1, 0, 1],
            &[&[0.05], &[0.95]],
            &[1, 0],
        );
        let p = nearest_pairing(&u, true).unwrap();
        for (i, rec) in p.pair_index.iter().enumerate() {
            assert_eq!(
                u.source.labels[rec.source_id],
                u.target.labels[rec.target_id]
            );
            assert_eq!(p.labels[i], u.target.labels[rec.target_id]);
        }
    }

    #[test]
    fn supervised_infeasible_class_is_rejected() {
        let u = unified(&[&[0.0], &[0.5]], &[0, 0], &[&[0.1], &[0.2]], &[0, 1]);
        assert!(matches!(
            nearest_pairing(&u, true),
            Err(Error::SupervisedPairingInfeasible { label: 1, .. })
        ));
    }

    #[test]
    fn more_targets_than_sources_is_rejected() {
        let u = unified(&[&[0.0]], &[0], &[&[0.1], &[0.2]], &[0, 0]);
        assert!(matches!(
            nearest_pairing(&u, false),
            Err(Error::SourceSmallerThanTarget { .. })
        ));
    }

    #[test]
    fn pairing_is_injective_and_covers_targets() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let source: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let target: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let s_refs: Vec<&[f64]> = source.iter().map(|v| v.as_slice()).collect();
        let t_refs: Vec<&[f64]> = target.iter().map(|v| v.as_slice()).collect();
        let u = unified(&s_refs, &[0; 30], &t_refs, &[0; 12]);
        let p = nearest_pairing(&u, false).unwrap();
        assert_eq!(p.len(), 12);
        let sources: std::collections::BTreeSet<_> =
            p.pair_index.iter().map(|r| r.source_id).collect();
        assert_eq!(sources.len(), 12);
        let targets: std::collections::BTreeSet<_> =
            p.pair_index.iter().map(|r| r.target_id).collect();
        assert_eq!(targets, (0..12).collect());
    }
}
