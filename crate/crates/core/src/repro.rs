//! Canned stability experiments with pass/fail checks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::explainer::{ExplainerConfig, Method};
use crate::lars::Scaling;
use crate::metrics::{lasso_ordering_experiment, positions_markdown, repeat_explanations, BenchOutcome, OrderingOutcome};
use crate::model::ModelHandle;
use crate::sampling::InstanceSpec;

pub const MARS_INSTANCE: [f64; 5] = [0.51, 0.49, 0.5, 0.5, 0.5];
/// Standard deviation of a U[0, 1] feature.
pub const MARS_SCALE: f64 = 0.288_675_134_594_812_9;
pub const MARS_REPS: usize = 20;
pub const MARS_BASE_SEED: u64 = 0;
pub const MARS_SLIME_FLOOR: f64 = 0.95;
pub const MARS_LIME_CEILING: f64 = 0.95;

pub const ORDERING_COEFFICIENTS: [f64; 3] = [1.0, 0.75, 0.7];
pub const ORDERING_N: usize = 1000;
pub const ORDERING_RUNS: usize = 500;
pub const ORDERING_SEED: u64 = 0;
pub const ORDERING_BAND: (f64, f64) = (0.12, 0.28);

pub const EXPERIMENTS: [&str; 2] = ["mars", "lasso-ordering"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

#[derive(Debug, Clone)]
pub struct ReproOutcome {
    pub name: String,
    pub checks: Vec<Check>,
    /// Human-readable result table.
    pub report: String,
}

impl ReproOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn mars_instance() -> InstanceSpec {
    InstanceSpec::with_scales(MARS_INSTANCE.to_vec(), vec![MARS_SCALE; 5]).expect("valid instance")
}

pub fn mars_config() -> ExplainerConfig {
    ExplainerConfig {
        n0: 1000,
        n_max: 10_000,
        alpha: 0.05,
        k: 5,
        seed: MARS_BASE_SEED,
        ..Default::default()
    }
}

pub struct MarsExperiment {
    pub lime: BenchOutcome,
    pub slime: BenchOutcome,
}

pub fn run_mars(workers: usize) -> Result<MarsExperiment> {
    let instance = mars_instance();
    let config = mars_config();
    let lime = repeat_explanations(&ModelHandle::Mars, &instance, Method::Lime, &config, MARS_REPS, MARS_BASE_SEED, workers)?;
    let slime = repeat_explanations(&ModelHandle::Mars, &instance, Method::Slime, &config, MARS_REPS, MARS_BASE_SEED, workers)?;
    Ok(MarsExperiment { lime, slime })
}

fn fmt_values(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

pub fn mars_checks(exp: &MarsExperiment) -> Vec<Check> {
    let slime = exp.slime.report.values();
    let lime = exp.lime.report.values();
    let slime_ok = slime.len() == 5 && slime.iter().all(|v| *v >= MARS_SLIME_FLOOR) && !exp.slime.report.incomplete;
    let lime_ok = lime.len() == 5 && (lime[1] <= MARS_LIME_CEILING || lime[3] <= MARS_LIME_CEILING);
    vec![
        Check {
            name: "mars s-lime stability".into(),
            passed: slime_ok,
            detail: format!("avg Jaccard [{}], need >= {MARS_SLIME_FLOOR} everywhere", fmt_values(&slime)),
        },
        Check {
            name: "mars lime instability".into(),
            passed: lime_ok,
            detail: format!(
                "avg Jaccard [{}], need position 2 or 4 <= {MARS_LIME_CEILING}",
                fmt_values(&lime)
            ),
        },
    ]
}

pub fn run_ordering() -> Result<OrderingOutcome> {
    lasso_ordering_experiment(&ORDERING_COEFFICIENTS, ORDERING_N, ORDERING_RUNS, ORDERING_SEED, Scaling::Center)
}

pub fn ordering_checks(out: &OrderingOutcome) -> Vec<Check> {
    let freq = out.frequency(&["x1", "x3", "x2"]);
    let first = out.first_entry.get("x1").copied().unwrap_or(0);
    vec![
        Check {
            name: "lasso ordering (x1, x3, x2) frequency".into(),
            passed: (ORDERING_BAND.0..=ORDERING_BAND.1).contains(&freq),
            detail: format!("{freq:.3}, need [{}, {}]", ORDERING_BAND.0, ORDERING_BAND.1),
        },
        Check {
            name: "lasso ordering x1 first".into(),
            passed: first == out.runs,
            detail: format!("{first}/{} runs", out.runs),
        },
    ]
}

fn ordering_table(out: &OrderingOutcome) -> String {
    let mut s = String::from("| Entry order | Frequency |\n|---|---|\n");
    for (k, v) in &out.ordering_histogram {
        s.push_str(&format!("| {k} | {:.3} |\n", *v as f64 / out.runs as f64));
    }
    s
}

/// Run a named experiment; unknown names are a validation error.
pub fn run_experiment(name: &str, workers: usize) -> Result<ReproOutcome> {
    match name {
        "mars" => {
            let exp = run_mars(workers)?;
            let report = positions_markdown(&[("LIME", &exp.lime.report), ("S-LIME", &exp.slime.report)]);
            Ok(ReproOutcome { name: name.into(), checks: mars_checks(&exp), report })
        }
        "lasso-ordering" => {
            let out = run_ordering()?;
            Ok(ReproOutcome { name: name.into(), checks: ordering_checks(&out), report: ordering_table(&out) })
        }
        other => Err(Error::validation(format!(
            "unknown experiment '{other}' (expected one of: {})",
            EXPERIMENTS.join(", ")
        ))),
    }
}
