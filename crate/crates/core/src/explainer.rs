//! k-LASSO explanations with and without entry testing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lars::{
    lars_lasso_path, refit_least_squares, standardize, AlwaysProceed, DesignMatrix, EntryContext,
    EntryDecision, EntryObserver, PathState, SolverOptions,
};
use crate::model::BlackBox;
use crate::rng::split_seed;
use crate::sampling::{InstanceSpec, Neighborhood, PerturbationDataset};
use crate::stability::{
    bonferroni_entry_test, entry_test_with, product_covariance, ProductCovariance, TestDecision,
    DEFAULT_GROWTH_FACTOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lime,
    Slime,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Lime => "LIME",
            Method::Slime => "S-LIME",
        })
    }
}

/// What happens to the neighborhood when more samples are needed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regeneration {
    /// Keep the existing rows and draw only the new ones.
    #[default]
    Reuse,
    /// Draw a completely new neighborhood from a derived seed.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    /// Initial sample size (the fixed sample size for LIME).
    pub n0: usize,
    pub alpha: f64,
    /// Features to select.
    pub k: usize,
    pub n_max: usize,
    /// Defaults to `0.75 * sqrt(p)`.
    pub kernel_width: Option<f64>,
    /// Test the top candidate against all remaining candidates.
    pub multiple_testing: bool,
    pub growth_factor: f64,
    pub seed: u64,
    pub regeneration: Regeneration,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            n0: 1000,
            alpha: 0.05,
            k: 5,
            n_max: 10_000,
            kernel_width: None,
            multiple_testing: false,
            growth_factor: DEFAULT_GROWTH_FACTOR,
            seed: 0,
            regeneration: Regeneration::Reuse,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if self.n0 < self.k + 2 {
            return Err(Error::validation(format!(
                "n0 = {} must be at least k + 2 = {}",
                self.n0,
                self.k + 2
            )));
        }
        if self.n_max < self.n0 {
            return Err(Error::validation(format!(
                "n_max = {} is below n0 = {}",
                self.n_max, self.n0
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::validation(format!(
                "alpha must be in (0, 0.5), got {}",
                self.alpha
            )));
        }
        if !(self.growth_factor >= 2.0 && self.growth_factor.is_finite()) {
            return Err(Error::validation(format!(
                "growth factor must be at least 2, got {}",
                self.growth_factor
            )));
        }
        if let Some(w) = self.kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::validation(format!("kernel width must be positive, got {w}")));
            }
        }
        Ok(())
    }

    fn neighborhood(&self, instance: &InstanceSpec) -> Result<Neighborhood> {
        let width = self
            .kernel_width
            .unwrap_or_else(|| instance.default_kernel_width());
        Neighborhood::new(instance.clone(), width, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub name: String,
    /// Column index in the instance.
    pub index: usize,
    /// Weighted least-squares coefficient on the original feature scale.
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub method: Method,
    /// Features in the order they entered the path.
    pub selected: Vec<SelectedFeature>,
    pub intercept: f64,
    pub final_n: usize,
    /// The sample-size cap was hit and the last pass ran untested.
    pub capped: bool,
    pub test_trace: Vec<TestDecision>,
    pub seed: u64,
    /// Number of path runs.
    pub iterations: usize,
}

impl Explanation {
    pub fn feature_names(&self) -> Vec<String> {
        self.selected.iter().map(|f| f.name.clone()).collect()
    }
}

struct PathFit {
    path: PathState,
    selected: Vec<usize>,
}

fn fit_path(
    data: &PerturbationDataset,
    instance: &InstanceSpec,
    k: usize,
    observer: &mut dyn EntryObserver,
) -> Result<(DesignMatrix, PathFit)> {
    let design = DesignMatrix::new(data.x.clone(), instance.feature_names.clone())?;
    let std = standardize(&design, &data.weights)?;
    let y = std.transform_response(&data.y)?;
    let max_active = k.min(std.cols()).min(data.n().saturating_sub(1));
    if max_active == 0 {
        return Err(Error::Degenerate(
            "no feature varies over the neighborhood".into(),
        ));
    }
    let path = lars_lasso_path(&std, &y, max_active, &SolverOptions::default(), observer)?;
    let selected = path
        .active_set
        .iter()
        .map(|&j| std.original_index(j))
        .collect();
    Ok((design, PathFit { path, selected }))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    method: Method,
    design: &DesignMatrix,
    data: &PerturbationDataset,
    fit: PathFit,
    capped: bool,
    test_trace: Vec<TestDecision>,
    seed: u64,
    iterations: usize,
) -> Result<Explanation> {
    let (coefficients, intercept) = if fit.selected.is_empty() {
        let wsum: f64 = data.weights.iter().sum();
        let mean = data.y.iter().zip(&data.weights).map(|(y, w)| y * w).sum::<f64>() / wsum;
        (Vec::new(), mean)
    } else {
        let refit = refit_least_squares(design, &data.y, &data.weights, &fit.selected)?;
        (refit.coefficients, refit.intercept)
    };
    let selected = fit
        .selected
        .iter()
        .zip(coefficients)
        .map(|(&index, coefficient)| SelectedFeature {
            name: design.column_names()[index].clone(),
            index,
            coefficient,
        })
        .collect();
    Ok(Explanation {
        method,
        selected,
        intercept,
        final_n: data.n(),
        capped,
        test_trace,
        seed,
        iterations,
    })
}

/// LIME with k-LASSO at a fixed sample size `config.n0`.
pub fn lime_explain(model: &dyn BlackBox, instance: &InstanceSpec, config: &ExplainerConfig) -> Result<Explanation> {
    config.validate()?;
    check_arity(model, instance)?;
    let neigh = config.neighborhood(instance)?;
    let data = neigh.generate(model, config.n0)?;
    let (design, fit) = fit_path(&data, instance, config.k, &mut AlwaysProceed)?;
    finish(Method::Lime, &design, &data, fit, false, Vec::new(), config.seed, 1)
}

fn check_arity(model: &dyn BlackBox, instance: &InstanceSpec) -> Result<()> {
    if model.input_dim() != instance.dim() {
        return Err(Error::validation(format!(
            "model takes {} features, instance has {}",
            model.input_dim(),
            instance.dim()
        )));
    }
    Ok(())
}

/// Tests every entry while fewer than `k` features are active.
struct EntryGate {
    alpha: f64,
    growth_factor: f64,
    multiple_testing: bool,
    trace: Vec<TestDecision>,
    wanted_n: Option<usize>,
}

fn signed_column(ctx: &EntryContext<'_>, feature: usize, correlation: f64) -> Vec<f64> {
    let sign = if correlation < 0.0 { -1.0 } else { 1.0 };
    ctx.design.column(feature).iter().map(|v| sign * v).collect()
}

impl EntryObserver for EntryGate {
    fn before_entry(&mut self, ctx: &EntryContext<'_>) -> EntryDecision {
        if ctx.candidates.len() < 2 {
            return EntryDecision::Proceed;
        }
        let residual = ctx.residual.as_slice();
        let top = ctx.candidates[0];
        let top_col = signed_column(ctx, top.feature, top.correlation);
        let rivals = if self.multiple_testing {
            &ctx.candidates[1..]
        } else {
            &ctx.candidates[1..2]
        };
        let covs: Vec<ProductCovariance> = rivals
            .iter()
            .map(|c| {
                let col = signed_column(ctx, c.feature, c.correlation);
                product_covariance(residual, &top_col, &col).expect("columns share the residual length")
            })
            .collect();
        let (mut decision, rival) = if self.multiple_testing {
            let (d, worst) = bonferroni_entry_test(&covs, self.alpha, self.growth_factor)
                .expect("at least one rival");
            (d, rivals[worst])
        } else {
            (entry_test_with(&covs[0], self.alpha, self.growth_factor), rivals[0])
        };
        let names = ctx.design.names();
        decision.compared = Some((names[top.feature].clone(), names[rival.feature].clone()));
        decision.step = Some(ctx.step);
        let significant = decision.significant;
        let wanted = decision.recommended_n;
        self.trace.push(decision);
        if significant {
            EntryDecision::Proceed
        } else {
            self.wanted_n = Some(wanted);
            EntryDecision::Abort
        }
    }
}

/// LIME whose entries are gated by the CLT entry test, growing the
/// neighborhood until every test passes or `n_max` is reached.
pub fn slime_explain(model: &dyn BlackBox, instance: &InstanceSpec, config: &ExplainerConfig) -> Result<Explanation> {
    config.validate()?;
    check_arity(model, instance)?;
    let neigh = config.neighborhood(instance)?;
    let mut trace = Vec::new();
    let mut n = config.n0;
    let mut iterations = 0usize;

    let abort = |source: Error, n: usize, trace: &[TestDecision]| Error::Aborted {
        source: Box::new(source),
        n,
        trace: trace.to_vec(),
    };

    let mut data = neigh.generate(model, n).map_err(|e| abort(e, n, &trace))?;
    loop {
        iterations += 1;
        let mut gate = EntryGate {
            alpha: config.alpha,
            growth_factor: config.growth_factor,
            multiple_testing: config.multiple_testing,
            trace: std::mem::take(&mut trace),
            wanted_n: None,
        };
        let result = fit_path(&data, instance, config.k, &mut gate);
        trace = gate.trace;
        let (design, fit) = result.map_err(|e| abort(e, n, &trace))?;
        let Some(wanted) = gate.wanted_n.filter(|_| fit.path.aborted) else {
            return finish(Method::Slime, &design, &data, fit, false, trace, config.seed, iterations);
        };

        if wanted > config.n_max {
            if n < config.n_max {
                data = grow(&neigh, model, config, data, config.n_max, iterations)
                    .map_err(|e| abort(e, config.n_max, &trace))?;
            }
            iterations += 1;
            let (design, fit) = fit_path(&data, instance, config.k, &mut AlwaysProceed)
                .map_err(|e| abort(e, config.n_max, &trace))?;
            return finish(Method::Slime, &design, &data, fit, true, trace, config.seed, iterations);
        }
        n = wanted;
        data = grow(&neigh, model, config, data, n, iterations).map_err(|e| abort(e, n, &trace))?;
    }
}

fn grow(
    neigh: &Neighborhood,
    model: &dyn BlackBox,
    config: &ExplainerConfig,
    data: PerturbationDataset,
    new_n: usize,
    iteration: usize,
) -> Result<PerturbationDataset> {
    match config.regeneration {
        Regeneration::Reuse => run_with_reuse(neigh, model, &data, new_n),
        Regeneration::Fresh => {
            let fresh = Neighborhood {
                seed: split_seed(config.seed, iteration as u64),
                ..neigh.clone()
            };
            fresh.generate(model, new_n)
        }
    }
}

/// Extend `previous` to `new_n` rows; only the new rows are sent to the model.
pub fn run_with_reuse(
    neigh: &Neighborhood,
    model: &dyn BlackBox,
    previous: &PerturbationDataset,
    new_n: usize,
) -> Result<PerturbationDataset> {
    let old_n = previous.n();
    if new_n <= old_n {
        return Err(Error::validation(format!(
            "cannot extend {old_n} rows to {new_n}"
        )));
    }
    if previous.seed != neigh.seed
        || previous.kernel_width != neigh.kernel_width
        || previous.x.ncols() != neigh.instance.dim()
    {
        return Err(Error::validation(
            "dataset was not drawn from this neighborhood (seed lineage mismatch)",
        ));
    }
    let (extra_x, extra_y, extra_w) = neigh.sample(model, old_n, new_n)?;
    let p = previous.x.ncols();
    let mut x = DMatrix::zeros(new_n, p);
    x.rows_mut(0, old_n).copy_from(&previous.x);
    x.rows_mut(old_n, new_n - old_n).copy_from(&extra_x);
    let mut y = previous.y.clone();
    y.extend(extra_y);
    let mut weights = previous.weights.clone();
    weights.extend(extra_w);
    Ok(PerturbationDataset {
        x,
        y,
        weights,
        seed: previous.seed,
        kernel_width: previous.kernel_width,
    })
}
