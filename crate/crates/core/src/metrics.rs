//! Stability of explanations across repetitions.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::{lime_explain, slime_explain, ExplainerConfig, Explanation, Method};
use crate::lars::{
    default_feature_names, lars_lasso_path, standardize_with, AlwaysProceed, DesignMatrix, Scaling,
    SolverOptions,
};
use crate::model::BlackBox;
use crate::rng::{split_seed, standard_normal_row};
use crate::sampling::InstanceSpec;

/// `|A ∩ B| / |A ∪ B|`, with `J(∅, ∅) = 1`.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn top_set(run: &[String], k: usize) -> BTreeSet<&str> {
    run.iter().take(k).map(String::as_str).collect()
}

/// Key used in ordering histograms: `(a, b, c)`.
pub fn ordering_key(features: &[String]) -> String {
    format!("({})", features.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionScore {
    pub position: usize,
    pub avg_jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub positions: Vec<PositionScore>,
    /// Runs that entered the report.
    pub reps: usize,
    /// `per_pair[k-1][i][j]`: Jaccard of the top-k sets of runs `i` and `j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_pair: Option<Vec<Vec<Vec<f64>>>>,
    pub ordering_histogram: BTreeMap<String, usize>,
    /// Some requested repetitions failed and were left out.
    pub incomplete: bool,
    pub failed: usize,
}

impl StabilityReport {
    pub fn values(&self) -> Vec<f64> {
        self.positions.iter().map(|p| p.avg_jaccard).collect()
    }
}

/// Mean pairwise Jaccard of top-k sets for `k = 1..=positions`.
pub fn positionwise_stability(runs: &[Vec<String>], positions: usize) -> Result<StabilityReport> {
    positionwise_stability_with(runs, positions, false)
}

pub fn positionwise_stability_with(
    runs: &[Vec<String>],
    positions: usize,
    keep_pairs: bool,
) -> Result<StabilityReport> {
    if runs.len() < 2 {
        return Err(Error::validation(format!(
            "stability needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    if positions == 0 {
        return Err(Error::validation("need at least one position"));
    }
    if let Some((i, run)) = runs.iter().enumerate().find(|(_, r)| r.len() < positions) {
        return Err(Error::validation(format!(
            "run {i} has {} features, need {positions}",
            run.len()
        )));
    }
    let m = runs.len();
    let pair_count = (m * (m - 1) / 2) as f64;
    let mut scores = Vec::with_capacity(positions);
    let mut per_pair = Vec::new();
    for k in 1..=positions {
        let sets: Vec<_> = runs.iter().map(|r| top_set(r, k)).collect();
        let mut matrix = vec![vec![1.0; m]; if keep_pairs { m } else { 0 }];
        let mut total = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                let v = jaccard(&sets[i], &sets[j]);
                total += v;
                if keep_pairs {
                    matrix[i][j] = v;
                    matrix[j][i] = v;
                }
            }
        }
        scores.push(PositionScore {
            position: k,
            avg_jaccard: total / pair_count,
        });
        if keep_pairs {
            per_pair.push(matrix);
        }
    }
    let mut ordering_histogram = BTreeMap::new();
    for run in runs {
        *ordering_histogram
            .entry(ordering_key(&run[..positions]))
            .or_insert(0) += 1;
    }
    Ok(StabilityReport {
        positions: scores,
        reps: m,
        per_pair: keep_pairs.then_some(per_pair),
        ordering_histogram,
        incomplete: false,
        failed: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub rep: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub method: Method,
    pub report: StabilityReport,
    pub repetitions: Vec<Repetition>,
}

/// Run `method` `reps` times with seeds `split_seed(base_seed, i)` on up to
/// `workers` threads. Failed runs are recorded and left out of the report.
pub fn repeat_explanations(
    model: &dyn BlackBox,
    instance: &InstanceSpec,
    method: Method,
    config: &ExplainerConfig,
    reps: usize,
    base_seed: u64,
    workers: usize,
) -> Result<BenchOutcome> {
    let seeds: Vec<u64> = (0..reps).map(|i| split_seed(base_seed, i as u64)).collect();
    repeat_with_seeds(model, instance, method, config, &seeds, workers)
}

/// As [`repeat_explanations`] with explicit per-repetition seeds.
pub fn repeat_with_seeds(
    model: &dyn BlackBox,
    instance: &InstanceSpec,
    method: Method,
    config: &ExplainerConfig,
    seeds: &[u64],
    workers: usize,
) -> Result<BenchOutcome> {
    if seeds.len() < 2 {
        return Err(Error::validation(format!(
            "need at least 2 repetitions, got {}",
            seeds.len()
        )));
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))?;
    let repetitions: Vec<Repetition> = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(rep, &seed)| {
                let cfg = ExplainerConfig { seed, ..config.clone() };
                let result = match method {
                    Method::Lime => lime_explain(model, instance, &cfg),
                    Method::Slime => slime_explain(model, instance, &cfg),
                };
                match result {
                    Ok(e) => Repetition { rep, seed, explanation: Some(e), error: None },
                    Err(e) => Repetition { rep, seed, explanation: None, error: Some(e.to_string()) },
                }
            })
            .collect()
    });
    let runs: Vec<Vec<String>> = repetitions
        .iter()
        .filter_map(|r| r.explanation.as_ref().map(Explanation::feature_names))
        .collect();
    let failed = repetitions.len() - runs.len();
    let positions = config.k.min(instance.dim());
    let mut report = positionwise_stability(&runs, positions)?;
    report.failed = failed;
    report.incomplete = failed > 0;
    Ok(BenchOutcome {
        method,
        report,
        repetitions,
    })
}

pub fn write_positions_csv(report: &StabilityReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["position", "avg_jaccard"])?;
    for p in &report.positions {
        w.write_record([p.position.to_string(), p.avg_jaccard.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Markdown table with one column per labelled report.
pub fn positions_markdown(columns: &[(&str, &StabilityReport)]) -> String {
    let mut out = String::from("| Position |");
    for (label, _) in columns {
        out.push_str(&format!(" {label} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(columns.len()));
    out.push('\n');
    let rows = columns.iter().map(|(_, r)| r.positions.len()).max().unwrap_or(0);
    for i in 0..rows {
        out.push_str(&format!("| {} |", i + 1));
        for (_, r) in columns {
            match r.positions.get(i) {
                Some(p) => out.push_str(&format!(" {:.3} |", p.avg_jaccard)),
                None => out.push_str(" |"),
            }
        }
        out.push('\n');
    }
    out
}

/// One JSON object per repetition.
pub fn write_repetitions_jsonl(repetitions: &[Repetition], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in repetitions {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingOutcome {
    pub runs: usize,
    pub ordering_histogram: BTreeMap<String, usize>,
    /// How often each feature entered first.
    pub first_entry: BTreeMap<String, usize>,
}

impl OrderingOutcome {
    pub fn frequency(&self, order: &[&str]) -> f64 {
        let key = format!("({})", order.join(", "));
        self.ordering_histogram.get(&key).copied().unwrap_or(0) as f64 / self.runs as f64
    }
}

/// Entry orders of the unweighted LASSO path on noise-free linear data.
///
/// Each run draws `n` i.i.d. standard-normal rows (seed `split_seed(seed, run)`)
/// and records the order in which the features first enter.
pub fn lasso_ordering_experiment(
    coefficients: &[f64],
    n: usize,
    runs: usize,
    seed: u64,
    scaling: Scaling,
) -> Result<OrderingOutcome> {
    let p = coefficients.len();
    if p == 0 {
        return Err(Error::validation("need at least one coefficient"));
    }
    if n < p + 1 {
        return Err(Error::validation(format!("n = {n} must be at least p + 1 = {}", p + 1)));
    }
    if runs == 0 {
        return Err(Error::validation("need at least one run"));
    }
    let names = default_feature_names(p);
    let orders: Vec<Vec<String>> = (0..runs)
        .into_par_iter()
        .map(|r| -> Result<Vec<String>> {
            let run_seed = split_seed(seed, r as u64);
            let mut x = DMatrix::zeros(n, p);
            let mut z = vec![0.0; p];
            for i in 0..n {
                standard_normal_row(run_seed, i as u64, &mut z);
                for j in 0..p {
                    x[(i, j)] = z[j];
                }
            }
            let y: Vec<f64> = (x.clone() * DVector::from_column_slice(coefficients))
                .iter()
                .copied()
                .collect();
            let design = DesignMatrix::new(x, names.clone())?;
            let std = standardize_with(&design, &vec![1.0; n], scaling)?;
            let response = std.transform_response(&y)?;
            let path = lars_lasso_path(
                &std,
                &response,
                std.cols(),
                &SolverOptions::default(),
                &mut AlwaysProceed,
            )?;
            Ok(path
                .entry_order()
                .into_iter()
                .map(|j| names[std.original_index(j)].clone())
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut ordering_histogram = BTreeMap::new();
    let mut first_entry = BTreeMap::new();
    for order in &orders {
        *ordering_histogram.entry(ordering_key(order)).or_insert(0) += 1;
        if let Some(first) = order.first() {
            *first_entry.entry(first.clone()).or_insert(0) += 1;
        }
    }
    Ok(OrderingOutcome {
        runs,
        ordering_histogram,
        first_entry,
    })
}
