//! Candidate curation: deduplication, uncertainty filtering and capping.

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::committee::{
    classify_in_domain, committee_stats_batch, EnsemblePredictor, UncertaintyThreshold,
};
use crate::error::{Error, Result};
use crate::potentials::Configuration;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    /// Per-atom root mean square deviation over 3-D coordinates, no alignment.
    Rmsd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub distance_threshold: f64,
    pub uncertainty_percentile: f64,
    pub max_new: usize,
    pub distance_kind: DistanceKind,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            distance_threshold: 0.02,
            uncertainty_percentile: 80.0,
            max_new: 20,
            distance_kind: DistanceKind::Euclidean,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0) {
            return Err(Error::Config("distance_threshold must be positive".into()));
        }
        if !(self.uncertainty_percentile > 0.0 && self.uncertainty_percentile <= 100.0) {
            return Err(Error::Config("uncertainty_percentile must lie in (0, 100]".into()));
        }
        if self.max_new < 1 {
            return Err(Error::Config("max_new must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64], kind: DistanceKind) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    match kind {
        DistanceKind::Euclidean => ss.sqrt(),
        DistanceKind::Rmsd => (ss / (a.len() / 3) as f64).sqrt(),
    }
}

pub fn distance_matrix(points: &[&Configuration], kind: DistanceKind) -> Result<Array2<f64>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Input("distance matrix of no points".into()));
    }
    let d = points[0].dim();
    if points.iter().any(|p| p.dim() != d) {
        return Err(Error::Input("points have different dimensions".into()));
    }
    if kind == DistanceKind::Rmsd && (!d.is_multiple_of(3) || d == 0) {
        return Err(Error::Input(format!("rmsd needs 3-D atoms, got {d} coordinates")));
    }
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = distance(&points[i].coords, &points[j].coords, kind);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    Ok(m)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage cluster labels cut at `threshold`; clusters are numbered by
/// their lowest member index.
pub fn cluster_labels(dist: &Array2<f64>, threshold: f64) -> Vec<usize> {
    let n = dist.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if dist[[i, j]] < threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    roots
        .iter()
        .map(|&r| {
            if ids[r] == usize::MAX {
                ids[r] = next;
                next += 1;
            }
            ids[r]
        })
        .collect()
}

/// Highest-scoring member of every cluster (ties to the lowest index), ascending.
pub fn cluster_representatives(dist: &Array2<f64>, threshold: f64, scores: &[f64]) -> Vec<usize> {
    let labels = cluster_labels(dist, threshold);
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let mut best: Vec<Option<usize>> = vec![None; n_clusters];
    for (i, &c) in labels.iter().enumerate() {
        match best[c] {
            Some(b) if scores[b] >= scores[i] => {}
            _ => best[c] = Some(i),
        }
    }
    let mut reps: Vec<usize> = best.into_iter().flatten().collect();
    reps.sort_unstable();
    reps
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub cluster_id: usize,
    pub representative: bool,
    pub variance: f64,
    pub passed_filter: bool,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionOutcome {
    /// Indices into the candidate list, ascending.
    pub selected: Vec<usize>,
    pub report: Vec<ReportRow>,
}

impl SelectionOutcome {
    /// CSV `candidate_id,cluster_id,representative,variance,passed_filter,selected`.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("candidate_id,cluster_id,representative,variance,passed_filter,selected\n");
        for (i, r) in self.report.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{:e},{},{}\n",
                r.cluster_id, r.representative, r.variance, r.passed_filter, r.selected
            ));
        }
        out
    }
}

/// Dedup by clustering (score = adversarial loss), keep candidates whose
/// variance is not in-domain, then subsample uniformly to `max_new`.
pub fn select_informative<E: EnsemblePredictor + ?Sized>(
    candidates: &[&Configuration],
    scores: &[f64],
    ens: &E,
    thr: &UncertaintyThreshold,
    cfg: &SelectionConfig,
    rng: &mut Rng,
) -> Result<SelectionOutcome> {
    cfg.validate()?;
    if candidates.len() != scores.len() {
        return Err(Error::Input("one score per candidate required".into()));
    }
    if candidates.is_empty() {
        return Ok(SelectionOutcome {
            selected: vec![],
            report: vec![],
        });
    }
    let dist = distance_matrix(candidates, cfg.distance_kind)?;
    let labels = cluster_labels(&dist, cfg.distance_threshold);
    let reps = cluster_representatives(&dist, cfg.distance_threshold, scores);
    let variances: Vec<f64> = committee_stats_batch(ens, candidates)?
        .iter()
        .map(|s| s.variance(thr.source))
        .collect();
    let passed: Vec<usize> = reps
        .iter()
        .copied()
        .filter(|&i| !classify_in_domain(variances[i], thr))
        .collect();
    let selected = if passed.len() > cfg.max_new {
        let mut picked: Vec<usize> = index::sample(rng, passed.len(), cfg.max_new)
            .into_iter()
            .map(|k| passed[k])
            .collect();
        picked.sort_unstable();
        picked
    } else {
        passed.clone()
    };
    let report = (0..candidates.len())
        .map(|i| ReportRow {
            cluster_id: labels[i],
            representative: reps.binary_search(&i).is_ok(),
            variance: variances[i],
            passed_filter: passed.binary_search(&i).is_ok(),
            selected: selected.binary_search(&i).is_ok(),
        })
        .collect();
    Ok(SelectionOutcome { selected, report })
}
