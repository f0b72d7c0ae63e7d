//! Weighted least angle regression with the LASSO drop modification.
//!
//! Rows are folded with `sqrt(w_i)` before centering and scaling, so every
//! inner product on a [`StandardizedDesign`] is a weighted inner product on
//! the original data. The path solver works on that scale and reports an
//! event before each variable entry, which is where the entry test hooks in.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw design, `n` rows by `p` named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if values.nrows() < 2 || values.ncols() < 1 {
            return Err(Error::validation(format!(
                "design needs at least 2 rows and 1 column, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if column_names.len() != values.ncols() {
            return Err(Error::validation(format!(
                "{} column names for {} columns",
                column_names.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("design contains non-finite values"));
        }
        Ok(Self {
            values,
            column_names,
        })
    }

    /// Columns named `x1..xp`.
    pub fn with_default_names(values: DMatrix<f64>) -> Result<Self> {
        let names = default_feature_names(values.ncols());
        Self::new(values, names)
    }

    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>) -> Result<Self> {
        let p = column_names.len();
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::validation(format!("row {i} does not have {p} values")));
        }
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(values, column_names)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }
}

pub fn default_feature_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// How columns are scaled after weighted centering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// Divide every column by its norm (the usual LARS convention).
    #[default]
    UnitNorm,
    /// Keep the centered columns on their own scale. The path then solves
    /// the LASSO on the raw features.
    Center,
}

/// Design after the `sqrt(w)` fold, weighted centering and scaling.
#[derive(Debug, Clone)]
pub struct StandardizedDesign {
    base: DMatrix<f64>,
    retained: Vec<usize>,
    names: Vec<String>,
    col_means: Vec<f64>,
    col_norms: Vec<f64>,
    dropped_cols: Vec<String>,
    sqrt_weights: DVector<f64>,
    weight_sum: f64,
    scaling: Scaling,
}

impl StandardizedDesign {
    pub fn rows(&self) -> usize {
        self.base.nrows()
    }

    /// Number of retained columns.
    pub fn cols(&self) -> usize {
        self.base.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn column(&self, j: usize) -> nalgebra::DVectorView<'_, f64> {
        self.base.column(j)
    }

    /// Original column index of retained column `j`.
    pub fn original_index(&self, j: usize) -> usize {
        self.retained[j]
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    /// Names of the retained columns.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Weighted means removed from the retained columns.
    pub fn col_means(&self) -> &[f64] {
        &self.col_means
    }

    /// Norms divided out of the retained columns (all 1 under [`Scaling::Center`]).
    pub fn col_norms(&self) -> &[f64] {
        &self.col_norms
    }

    pub fn dropped_cols(&self) -> &[String] {
        &self.dropped_cols
    }

    pub fn sqrt_weights(&self) -> &DVector<f64> {
        &self.sqrt_weights
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    /// Apply the same fold to a response: `sqrt(w_i) * (y_i - weighted mean)`.
    pub fn transform_response(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.rows() {
            return Err(Error::validation(format!(
                "response has {} values, design has {} rows",
                y.len(),
                self.rows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("response contains non-finite values"));
        }
        let mean = y
            .iter()
            .zip(self.sqrt_weights.iter())
            .map(|(v, s)| v * s * s)
            .sum::<f64>()
            / self.weight_sum;
        Ok(DVector::from_iterator(
            y.len(),
            y.iter()
                .zip(self.sqrt_weights.iter())
                .map(|(v, s)| s * (v - mean)),
        ))
    }

    /// Map standardized coefficients back to the original feature scale.
    pub fn to_original_scale(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter()
            .zip(&self.col_norms)
            .map(|(b, norm)| b / norm)
            .collect()
    }
}

pub fn standardize(design: &DesignMatrix, weights: &[f64]) -> Result<StandardizedDesign> {
    standardize_with(design, weights, Scaling::UnitNorm)
}

pub fn standardize_with(
    design: &DesignMatrix,
    weights: &[f64],
    scaling: Scaling,
) -> Result<StandardizedDesign> {
    let n = design.rows();
    if weights.len() != n {
        return Err(Error::validation(format!(
            "{} weights for {} rows",
            weights.len(),
            n
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::validation("weights must be finite and non-negative"));
    }
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if positive < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 positive weights, got {positive}"
        )));
    }
    let weight_sum: f64 = weights.iter().sum();
    let sqrt_weights = DVector::from_iterator(n, weights.iter().map(|w| w.sqrt()));

    let x = design.values();
    let mut retained = Vec::new();
    let mut names = Vec::new();
    let mut col_means = Vec::new();
    let mut col_norms = Vec::new();
    let mut dropped_cols = Vec::new();
    let mut columns: Vec<DVector<f64>> = Vec::new();

    for j in 0..design.cols() {
        let col = x.column(j);
        let mean = col.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / weight_sum;
        let folded = DVector::from_iterator(
            n,
            col.iter()
                .zip(sqrt_weights.iter())
                .map(|(v, s)| s * (v - mean)),
        );
        let norm = folded.norm();
        let raw_scale: f64 = col
            .iter()
            .zip(sqrt_weights.iter())
            .map(|(v, s)| (v * s).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm < 1e-12 * (1.0 + raw_scale) {
            dropped_cols.push(design.column_names()[j].clone());
            continue;
        }
        let (col, divisor) = match scaling {
            Scaling::UnitNorm => (folded / norm, norm),
            Scaling::Center => (folded, 1.0),
        };
        retained.push(j);
        names.push(design.column_names()[j].clone());
        col_means.push(mean);
        col_norms.push(divisor);
        columns.push(col);
    }

    let base = if columns.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&columns)
    };

    Ok(StandardizedDesign {
        base,
        retained,
        names,
        col_means,
        col_norms,
        dropped_cols,
        sqrt_weights,
        weight_sum,
        scaling,
    })
}

/// `(1/n) <residual, column_j>` for every retained column.
pub fn correlations(residual: &DVector<f64>, design: &StandardizedDesign) -> Result<Vec<f64>> {
    if residual.len() != design.rows() {
        return Err(Error::validation(format!(
            "residual has {} entries, design has {} rows",
            residual.len(),
            design.rows()
        )));
    }
    let n = design.rows() as f64;
    Ok((0..design.cols())
        .map(|j| design.column(j).dot(residual) / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Drop a variable whose coefficient crosses zero. Off gives plain LARS.
    pub lasso: bool,
    /// Stop once the common absolute inner product falls below this.
    pub zero_tolerance: f64,
    /// Relative pivot threshold for declaring the active Gram matrix singular.
    pub singular_tolerance: f64,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            lasso: true,
            zero_tolerance: 1e-12,
            singular_tolerance: 1e-12,
            max_steps: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryEvent {
    pub step: usize,
    /// Retained column index.
    pub feature: usize,
    /// Signed correlation `(1/n) <r, x>` at entry.
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropEvent {
    pub step: usize,
    pub feature: usize,
}

/// Path state at the end of a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Breakpoint {
    pub step: usize,
    /// Common absolute inner product `|<x_j, r>|` of the active set.
    ///
    /// The coefficients at this breakpoint minimize
    /// `0.5 * ||y - X b||^2 + lambda * ||b||_1`.
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub active: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    /// Retained column indices in the order they (last) entered.
    pub active_set: Vec<usize>,
    pub beta: Vec<f64>,
    pub residual: DVector<f64>,
    pub entry_events: Vec<EntryEvent>,
    pub drop_events: Vec<DropEvent>,
    pub breakpoints: Vec<Breakpoint>,
    /// The observer stopped the path before an entry.
    pub aborted: bool,
}

impl PathState {
    /// Features ordered by first entry, ignoring re-entries.
    pub fn entry_order(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        for e in &self.entry_events {
            if !seen.contains(&e.feature) {
                seen.push(e.feature);
            }
        }
        seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub feature: usize,
    pub correlation: f64,
}

/// What the observer sees right before a variable enters.
pub struct EntryContext<'a> {
    pub step: usize,
    pub design: &'a StandardizedDesign,
    pub residual: &'a DVector<f64>,
    pub active: &'a [usize],
    /// Inactive features; the one about to enter is first, the rest follow
    /// by decreasing absolute correlation.
    pub candidates: &'a [Candidate],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryDecision {
    Proceed,
    Abort,
}

pub trait EntryObserver {
    fn before_entry(&mut self, ctx: &EntryContext<'_>) -> EntryDecision;
}

impl<F> EntryObserver for F
where
    F: FnMut(&EntryContext<'_>) -> EntryDecision,
{
    fn before_entry(&mut self, ctx: &EntryContext<'_>) -> EntryDecision {
        self(ctx)
    }
}

/// Observer that never intervenes.
pub struct AlwaysProceed;

impl EntryObserver for AlwaysProceed {
    fn before_entry(&mut self, _ctx: &EntryContext<'_>) -> EntryDecision {
        EntryDecision::Proceed
    }
}

/// Compute the LARS / LASSO path until `max_active` features are active.
///
/// When `max_active` equals the number of retained columns the path runs to
/// the full least-squares fit; otherwise it stops as soon as the
/// `max_active`-th feature enters (with a zero coefficient).
pub fn lars_lasso_path(
    design: &StandardizedDesign,
    response: &DVector<f64>,
    max_active: usize,
    options: &SolverOptions,
    observer: &mut dyn EntryObserver,
) -> Result<PathState> {
    let n = design.rows();
    let p = design.cols();
    if response.len() != n {
        return Err(Error::validation(format!(
            "response has {} entries, design has {} rows",
            response.len(),
            n
        )));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("response contains non-finite values"));
    }
    let limit = p.min(n.saturating_sub(1));
    if max_active == 0 || max_active > limit {
        return Err(Error::validation(format!(
            "max_active must be in 1..={limit}, got {max_active}"
        )));
    }

    let x = design.matrix();
    let nf = n as f64;
    let mut beta = vec![0.0; p];
    let mut active: Vec<usize> = Vec::new();
    let mut residual = response.clone();
    let mut inner = x.tr_mul(&residual);
    let mut state = PathState {
        active_set: Vec::new(),
        beta: beta.clone(),
        residual: residual.clone(),
        entry_events: Vec::new(),
        drop_events: Vec::new(),
        breakpoints: vec![Breakpoint {
            step: 0,
            lambda: max_abs(inner.iter().copied()),
            beta: beta.clone(),
            active: Vec::new(),
        }],
        aborted: false,
    };
    if state.breakpoints[0].lambda <= options.zero_tolerance {
        return Ok(state);
    }
    let lambda0 = state.breakpoints[0].lambda;

    let mut pending = Some(argmax_abs(&inner, |_| true));
    let mut just_dropped: Option<usize> = None;
    let mut step = 0usize;

    loop {
        if let Some(j) = pending.take() {
            let candidates = rank_candidates(&inner, &active, j, nf);
            let ctx = EntryContext {
                step,
                design,
                residual: &residual,
                active: &active,
                candidates: &candidates,
            };
            if observer.before_entry(&ctx) == EntryDecision::Abort {
                state.aborted = true;
                break;
            }
            active.push(j);
            state.entry_events.push(EntryEvent {
                step,
                feature: j,
                correlation: inner[j] / nf,
            });
            if active.len() >= max_active && active.len() < p {
                break;
            }
        }
        if step >= options.max_steps {
            break;
        }

        let common = max_abs(active.iter().map(|&j| inner[j]));
        if common <= options.zero_tolerance {
            break;
        }
        let signs: Vec<f64> = active.iter().map(|&j| inner[j].signum()).collect();
        let direction = equiangular_direction(design, &active, &signs, options)?;
        let mut u = DVector::zeros(n);
        for (&j, d) in active.iter().zip(&direction) {
            u.axpy(*d, &x.column(j), 1.0);
        }

        let mut gamma = common;
        let mut event = Event::LeastSquares;
        for k in 0..p {
            if active.contains(&k) {
                continue;
            }
            // A feature dropped at the last breakpoint is still tied with the
            // active set; only a genuinely later re-entry counts.
            let floor = if Some(k) == just_dropped { 1e-9 * common } else { 0.0 };
            let a = x.column(k).dot(&u);
            for (num, den) in [(common - inner[k], 1.0 - a), (common + inner[k], 1.0 + a)] {
                if den > 1e-10 {
                    let g = num / den;
                    if g > floor && g < gamma {
                        gamma = g;
                        event = Event::Enter(k);
                    }
                }
            }
        }
        // An entry at the very end of the segment is rounding noise around
        // the least-squares fit, not a real breakpoint.
        if matches!(event, Event::Enter(_)) && common - gamma <= 1e-10 * lambda0 {
            gamma = common;
            event = Event::LeastSquares;
        }
        if options.lasso {
            for (pos, (&j, d)) in active.iter().zip(&direction).enumerate() {
                if *d != 0.0 {
                    let g = -beta[j] / d;
                    if g > 0.0 && g < gamma {
                        gamma = g;
                        event = Event::Drop(pos);
                    }
                }
            }
        }

        for (&j, d) in active.iter().zip(&direction) {
            beta[j] += gamma * d;
        }
        step += 1;
        just_dropped = None;
        match event {
            Event::Enter(k) => pending = Some(k),
            Event::Drop(pos) => {
                let j = active.remove(pos);
                beta[j] = 0.0;
                state.drop_events.push(DropEvent { step, feature: j });
                just_dropped = Some(j);
            }
            Event::LeastSquares => {}
        }

        residual = response - x * DVector::from_column_slice(&beta);
        inner = x.tr_mul(&residual);
        state.breakpoints.push(Breakpoint {
            step,
            lambda: (common - gamma).max(0.0),
            beta: beta.clone(),
            active: active.clone(),
        });
        if matches!(event, Event::LeastSquares) {
            break;
        }
    }

    state.active_set = active;
    state.beta = beta;
    state.residual = residual;
    Ok(state)
}

enum Event {
    Enter(usize),
    Drop(usize),
    LeastSquares,
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |m, v| m.max(v.abs()))
}

/// Index of the largest `|v|`, lowest index on ties.
fn argmax_abs(values: &DVector<f64>, allowed: impl Fn(usize) -> bool) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for (j, v) in values.iter().enumerate() {
        if allowed(j) && v.abs() > best_val {
            best = j;
            best_val = v.abs();
        }
    }
    best
}

fn rank_candidates(inner: &DVector<f64>, active: &[usize], entering: usize, n: f64) -> Vec<Candidate> {
    let mut rest: Vec<usize> = (0..inner.len())
        .filter(|k| *k != entering && !active.contains(k))
        .collect();
    rest.sort_by(|a, b| {
        inner[*b]
            .abs()
            .partial_cmp(&inner[*a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    std::iter::once(entering)
        .chain(rest)
        .map(|k| Candidate {
            feature: k,
            correlation: inner[k] / n,
        })
        .collect()
}

/// Solve `G d = s` over the active columns, where `G` is their Gram matrix.
fn equiangular_direction(
    design: &StandardizedDesign,
    active: &[usize],
    signs: &[f64],
    options: &SolverOptions,
) -> Result<Vec<f64>> {
    let x = design.matrix();
    let m = active.len();
    let gram = DMatrix::from_fn(m, m, |a, b| x.column(active[a]).dot(&x.column(active[b])));
    let singular = || Error::Singular {
        features: active.iter().map(|&j| design.names()[j].clone()).collect(),
    };
    let chol = gram.clone().cholesky().ok_or_else(singular)?;
    let l = chol.l_dirty();
    for i in 0..m {
        if l[(i, i)].powi(2) < options.singular_tolerance * gram[(i, i)] {
            return Err(singular());
        }
    }
    let d = chol.solve(&DVector::from_column_slice(signs));
    Ok(d.iter().copied().collect())
}

/// Weighted least-squares fit with intercept on the original feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

/// Weighted OLS of `response` on the `selected` columns of `design`.
pub fn refit_least_squares(
    design: &DesignMatrix,
    response: &[f64],
    weights: &[f64],
    selected: &[usize],
) -> Result<Refit> {
    let n = design.rows();
    if selected.is_empty() {
        return Err(Error::validation("refit needs at least one selected feature"));
    }
    if let Some(j) = selected.iter().find(|&&j| j >= design.cols()) {
        return Err(Error::validation(format!("selected column {j} out of range")));
    }
    if response.len() != n || weights.len() != n {
        return Err(Error::validation("response and weights must match the design rows"));
    }
    let weight_sum: f64 = weights.iter().sum();
    if weight_sum.is_nan() || weight_sum <= 0.0 {
        return Err(Error::Degenerate("weights sum to zero".into()));
    }
    let x = design.values();
    let means: Vec<f64> = selected
        .iter()
        .map(|&j| x.column(j).iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / weight_sum)
        .collect();
    let y_mean = response.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / weight_sum;

    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(n, selected.len(), |i, c| sw[i] * (x[(i, selected[c])] - means[c]));
    let b = DVector::from_fn(n, |i, _| sw[i] * (response[i] - y_mean));

    let singular = || Error::Singular {
        features: selected
            .iter()
            .map(|&j| design.column_names()[j].clone())
            .collect(),
    };
    if n < selected.len() {
        return Err(singular());
    }
    let col_norms: Vec<f64> = (0..selected.len()).map(|c| a.column(c).norm()).collect();
    let qr = a.qr();
    let r = qr.r();
    for c in 0..selected.len() {
        if r[(c, c)].abs() <= 1e-10 * col_norms[c].max(f64::MIN_POSITIVE) {
            return Err(singular());
        }
    }
    let qtb = qr.q().tr_mul(&b);
    let coef = r.solve_upper_triangular(&qtb).ok_or_else(singular)?;
    let coefficients: Vec<f64> = coef.iter().copied().collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok(Refit {
        coefficients,
        intercept,
    })
}
