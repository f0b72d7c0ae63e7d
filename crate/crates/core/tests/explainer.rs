use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use slime_core::explainer::{
    lime_explain, run_with_reuse, slime_explain, ExplainerConfig, Explanation, Regeneration,
};
use slime_core::lars::{refit_least_squares, DesignMatrix};
use slime_core::model::{BlackBox, ModelFailure, ModelHandle};
use slime_core::repro::{mars_config, mars_instance};
use slime_core::sampling::{kernel_weights, InstanceSpec, Neighborhood};
use slime_core::Error;

struct Counting<M> {
    inner: M,
    rows: AtomicUsize,
}

impl<M: BlackBox> Counting<M> {
    fn new(inner: M) -> Self {
        Self { inner, rows: AtomicUsize::new(0) }
    }
    fn rows(&self) -> usize {
        self.rows.load(Ordering::SeqCst)
    }
}

impl<M: BlackBox> BlackBox for Counting<M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn predict_batch(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>, ModelFailure> {
        self.rows.fetch_add(rows.nrows(), Ordering::SeqCst);
        self.inner.predict_batch(rows)
    }
}

fn names(e: &Explanation) -> Vec<String> {
    e.feature_names()
}

#[test]
fn single_linear_feature_recovers_its_slope() {
    let inst = InstanceSpec::with_scales(vec![0.3, -1.0, 2.0], vec![1e-3; 3]).unwrap();
    let model = ModelHandle::linear(vec![1.0, 0.0, 0.0], 0.0).unwrap();
    let cfg = ExplainerConfig { k: 1, n0: 100, n_max: 200, ..Default::default() };
    let e = lime_explain(&model, &inst, &cfg).unwrap();
    assert_eq!(names(&e), vec!["x1"]);
    assert!((e.selected[0].coefficient - 1.0).abs() < 1e-6);
    assert!(e.test_trace.is_empty());
}

#[test]
fn all_features_refit_is_weighted_ols() {
    let inst = InstanceSpec::with_unit_scales(vec![0.1, 0.2, 0.3]).unwrap();
    let model = ModelHandle::expression("x1 * x2 + sin(x3) + 0.5 * x1", 3).unwrap();
    let cfg = ExplainerConfig { k: 3, n0: 300, n_max: 300, seed: 4, ..Default::default() };
    let e = lime_explain(&model, &inst, &cfg).unwrap();

    // Normal equations on [1, X] with the same neighborhood.
    let neigh = Neighborhood::new(inst.clone(), inst.default_kernel_width(), 4).unwrap();
    let data = neigh.generate(&model, 300).unwrap();
    let design = DMatrix::from_fn(300, 4, |i, j| if j == 0 { 1.0 } else { data.x[(i, j - 1)] });
    let w = DMatrix::from_diagonal(&DVector::from_vec(data.weights.clone()));
    let lhs = design.transpose() * &w * &design;
    let rhs = design.transpose() * &w * DVector::from_vec(data.y.clone());
    let theta = lhs.lu().solve(&rhs).unwrap();
    assert!((e.intercept - theta[0]).abs() < 1e-8);
    for f in &e.selected {
        assert!((f.coefficient - theta[f.index + 1]).abs() < 1e-8, "{}", f.name);
    }
}

#[test]
fn explanations_are_reproducible() {
    let inst = mars_instance();
    let cfg = ExplainerConfig { n0: 500, n_max: 4000, seed: 99, ..mars_config() };
    assert_eq!(lime_explain(&ModelHandle::Mars, &inst, &cfg).unwrap(), lime_explain(&ModelHandle::Mars, &inst, &cfg).unwrap());
    assert_eq!(slime_explain(&ModelHandle::Mars, &inst, &cfg).unwrap(), slime_explain(&ModelHandle::Mars, &inst, &cfg).unwrap());
}

#[test]
fn separated_linear_effects_pass_every_test() {
    let inst = InstanceSpec::with_unit_scales(vec![0.0; 3]).unwrap();
    let model = ModelHandle::linear(vec![10.0, 1.0, 0.1], 0.0).unwrap();
    let mut clean = 0;
    for seed in 0..20 {
        let cfg = ExplainerConfig { k: 3, n0: 200, n_max: 2000, seed, ..Default::default() };
        let e = slime_explain(&model, &inst, &cfg).unwrap();
        assert_eq!(names(&e), vec!["x1", "x2", "x3"], "seed {seed}");
        assert!(!e.capped);
        if e.final_n == 200 && e.test_trace.iter().all(|d| d.significant) {
            clean += 1;
        }
    }
    assert!(clean >= 18, "{clean}/20 runs passed at n0");
}

#[test]
fn exact_tie_hits_the_cap() {
    let inst = InstanceSpec::with_unit_scales(vec![0.0; 2]).unwrap();
    let model = ModelHandle::linear(vec![1.0, 1.0], 0.0).unwrap();
    let mut capped = 0;
    for seed in 0..20 {
        let cfg = ExplainerConfig { k: 2, n0: 250, n_max: 1000, seed, ..Default::default() };
        let e = slime_explain(&model, &inst, &cfg).unwrap();
        if e.capped {
            assert_eq!(e.final_n, 1000);
            capped += 1;
        }
    }
    assert!(capped >= 18, "capped {capped}/20");
}

#[test]
fn uncapped_runs_have_significant_tests_at_every_tested_entry() {
    let inst = mars_instance();
    for seed in 0..6 {
        let cfg = ExplainerConfig { k: 3, seed, ..mars_config() };
        let e = slime_explain(&ModelHandle::Mars, &inst, &cfg).unwrap();
        let last: Vec<_> = e.test_trace.iter().filter(|d| d.n == e.final_n).collect();
        if !e.capped {
            assert!(last.iter().all(|d| d.significant));
            assert_eq!(last.len(), e.selected.len().min(4));
        } else {
            assert_eq!(e.final_n, cfg.n_max);
        }
    }
}

#[test]
fn loop_terminates_within_the_growth_bound() {
    let inst = InstanceSpec::with_unit_scales(vec![0.0; 3]).unwrap();
    let model = ModelHandle::linear(vec![1.0, 1.0, 1.0], 0.0).unwrap();
    for (seed, regeneration) in [(0, Regeneration::Reuse), (1, Regeneration::Fresh)] {
        let cfg = ExplainerConfig { k: 3, n0: 100, n_max: 100_000, seed, regeneration, ..Default::default() };
        let e = slime_explain(&model, &inst, &cfg).unwrap();
        // Every restart at least doubles n in the worst case allowed by the config.
        let bound = ((cfg.n_max as f64 / cfg.n0 as f64).ln() / 2f64.ln()).ceil() as usize + 2;
        assert!(e.iterations <= bound, "{} iterations", e.iterations);
        let ns: Vec<usize> = e.test_trace.iter().map(|d| d.n).collect();
        assert!(ns.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn passing_tests_reduce_to_lime() {
    let inst = InstanceSpec::with_unit_scales(vec![0.0; 4]).unwrap();
    let model = ModelHandle::linear(vec![8.0, -4.0, 2.0, 1.0], 3.0).unwrap();
    let cfg = ExplainerConfig { k: 4, n0: 2000, n_max: 2000, seed: 12, ..Default::default() };
    let s = slime_explain(&model, &inst, &cfg).unwrap();
    assert!(!s.capped && s.test_trace.iter().all(|d| d.significant));
    let l = lime_explain(&model, &inst, &cfg).unwrap();
    assert_eq!(s.selected, l.selected);
    assert_eq!(s.intercept, l.intercept);
}

#[test]
fn refit_coefficients_are_a_local_minimum() {
    let inst = mars_instance();
    let cfg = ExplainerConfig { n0: 800, n_max: 800, seed: 3, ..mars_config() };
    let e = lime_explain(&ModelHandle::Mars, &inst, &cfg).unwrap();
    let neigh = Neighborhood::new(inst.clone(), inst.default_kernel_width(), 3).unwrap();
    let data = neigh.generate(&ModelHandle::Mars, 800).unwrap();
    let loss = |coefs: &[f64], b0: f64| -> f64 {
        (0..800)
            .map(|i| {
                let fit = b0 + e.selected.iter().zip(coefs).map(|(f, c)| c * data.x[(i, f.index)]).sum::<f64>();
                data.weights[i] * (data.y[i] - fit).powi(2)
            })
            .sum()
    };
    let coefs: Vec<f64> = e.selected.iter().map(|f| f.coefficient).collect();
    let base = loss(&coefs, e.intercept);
    for j in 0..coefs.len() {
        for delta in [-1e-4, 1e-4] {
            let mut c = coefs.clone();
            c[j] += delta;
            assert!(loss(&c, e.intercept) >= base);
        }
    }
}

#[test]
fn order_is_invariant_to_feature_rescaling() {
    let base = mars_instance();
    let cfg = ExplainerConfig { n0: 1000, n_max: 1000, seed: 8, ..mars_config() };
    let e = lime_explain(&ModelHandle::Mars, &base, &cfg).unwrap();
    // Measure x4 in different units; the model sees the same point.
    let factor = 250.0;
    let model = ModelHandle::expression("10*sin(pi*x1*x2) + 20*(x3 - 0.05)^2 + 5.2*(x4/250) + 5*x5", 5).unwrap();
    let mut values = base.values.clone();
    let mut scales = base.feature_scales.clone();
    values[3] *= factor;
    scales[3] *= factor;
    let rescaled = InstanceSpec::with_scales(values, scales).unwrap();
    let f = lime_explain(&model, &rescaled, &cfg).unwrap();
    assert_eq!(names(&e), names(&f));
    assert!((e.selected.iter().find(|s| s.index == 3).unwrap().coefficient
        - factor * f.selected.iter().find(|s| s.index == 3).unwrap().coefficient)
        .abs()
        < 1e-6);
}

#[test]
fn reuse_queries_only_new_rows() {
    let inst = mars_instance();
    let model = Counting::new(ModelHandle::Mars);
    let neigh = Neighborhood::new(inst, 1.0, 21).unwrap();
    let small = neigh.generate(&model, 1000).unwrap();
    assert_eq!(model.rows(), 1000);
    let big = run_with_reuse(&neigh, &model, &small, 3819).unwrap();
    assert_eq!(model.rows(), 1000 + 2819);
    assert_eq!(big.x.rows(0, 1000).into_owned(), small.x);
    assert_eq!(&big.y[..1000], &small.y[..]);
    assert_eq!(&big.weights[..1000], &small.weights[..]);
    let one_more = run_with_reuse(&neigh, &model, &big, 3820).unwrap();
    assert_eq!(model.rows(), 3820);
    assert_eq!(one_more.n(), 3820);
}

#[test]
fn chained_extension_equals_direct_draw() {
    let inst = InstanceSpec::with_unit_scales(vec![1.0, 2.0]).unwrap();
    let model = ModelHandle::linear(vec![1.0, -1.0], 0.5).unwrap();
    let neigh = Neighborhood::new(inst.clone(), 0.9, 5).unwrap();
    let a = neigh.generate(&model, 100).unwrap();
    let b = run_with_reuse(&neigh, &model, &a, 250).unwrap();
    let c = run_with_reuse(&neigh, &model, &b, 600).unwrap();
    assert_eq!(c, neigh.generate(&model, 600).unwrap());
    assert_eq!(c.weights, kernel_weights(&c.x, &inst, 0.9).unwrap());
}

#[test]
fn slime_with_reuse_never_requeries_rows() {
    let inst = InstanceSpec::with_unit_scales(vec![0.0; 2]).unwrap();
    let model = Counting::new(ModelHandle::linear(vec![1.0, 1.0], 0.0).unwrap());
    let cfg = ExplainerConfig { k: 2, n0: 200, n_max: 3000, seed: 1, ..Default::default() };
    let e = slime_explain(&model, &inst, &cfg).unwrap();
    assert_eq!(model.rows(), e.final_n);
}

struct FailsAfter {
    limit: usize,
    seen: AtomicUsize,
}

impl BlackBox for FailsAfter {
    fn input_dim(&self) -> usize {
        2
    }
    fn predict_batch(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>, ModelFailure> {
        if self.seen.fetch_add(rows.nrows(), Ordering::SeqCst) >= self.limit {
            return Err(ModelFailure::new("model went away"));
        }
        Ok(rows.row_iter().map(|r| r[0] + r[1]).collect())
    }
}

#[test]
fn model_failure_mid_loop_keeps_the_trace() {
    let inst = InstanceSpec::with_unit_scales(vec![0.0; 2]).unwrap();
    let model = ModelHandle::custom(Arc::new(FailsAfter { limit: 300, seen: AtomicUsize::new(0) }));
    let cfg = ExplainerConfig { k: 2, n0: 300, n_max: 5000, seed: 2, ..Default::default() };
    match slime_explain(&model, &inst, &cfg) {
        Err(Error::Aborted { source, trace, n }) => {
            assert!(source.is_model_query());
            assert!(!trace.is_empty());
            assert!(n > 300);
        }
        other => panic!("expected an aborted run, got {other:?}"),
    }
}

#[test]
fn multiple_testing_variant_runs() {
    let inst = InstanceSpec::with_unit_scales(vec![0.0; 4]).unwrap();
    let model = ModelHandle::linear(vec![6.0, 3.0, 1.5, 0.75], 0.0).unwrap();
    let cfg = ExplainerConfig { k: 3, n0: 300, n_max: 20_000, multiple_testing: true, seed: 6, ..Default::default() };
    let e = slime_explain(&model, &inst, &cfg).unwrap();
    assert_eq!(names(&e), vec!["x1", "x2", "x3"]);
    assert!(e.test_trace.iter().any(|d| d.compared.is_some()));
}

/// Weighted least-squares slopes on a very large neighborhood; the local
/// linear effect each explanation estimates.
fn oracle_local_slopes(inst: &InstanceSpec, n: usize) -> Vec<f64> {
    let neigh = Neighborhood::new(inst.clone(), inst.default_kernel_width(), 12_345).unwrap();
    let data = neigh.generate(&ModelHandle::Mars, n).unwrap();
    let design = DesignMatrix::with_default_names(data.x.clone()).unwrap();
    refit_least_squares(&design, &data.y, &data.weights, &[0, 1, 2, 3, 4]).unwrap().coefficients
}

#[test]
fn mars_order_follows_local_effect_sizes() {
    let inst = mars_instance();
    let slopes = oracle_local_slopes(&inst, 400_000);
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|a, b| slopes[*b].abs().partial_cmp(&slopes[*a].abs()).unwrap());
    let oracle: Vec<String> = order.iter().map(|j| format!("x{}", j + 1)).collect();
    assert_eq!(oracle, vec!["x3", "x2", "x1", "x4", "x5"], "slopes {slopes:?}");

    // x1, x2 and x3 are well ahead of x4 and x5.
    let e = slime_explain(&ModelHandle::Mars, &inst, &mars_config()).unwrap();
    let mut top3 = names(&e)[..3].to_vec();
    top3.sort();
    assert_eq!(top3, vec!["x1", "x2", "x3"]);
}
