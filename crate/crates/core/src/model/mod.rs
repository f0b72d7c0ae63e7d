//! Black-box models.

mod expr;
mod external;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use expr::{Expr, Func, Op};
pub use external::{
    decode_request, decode_response, encode_request, encode_response, BatchFileModel,
    ExternalCommand, SubprocessModel,
};

/// Rows per request sent to a model.
pub const MAX_BATCH_ROWS: usize = 1000;

/// Why a single batch failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFailure {
    pub message: String,
    pub excerpt: Option<String>,
}

impl ModelFailure {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            excerpt: None,
        }
    }
}

/// Anything that maps rows of features to one real response each.
///
/// Classifiers should return the probability of the positive class.
pub trait BlackBox: Send + Sync {
    fn input_dim(&self) -> usize;

    /// Predict a batch of at most [`MAX_BATCH_ROWS`] rows.
    fn predict_batch(&self, rows: &DMatrix<f64>) -> std::result::Result<Vec<f64>, ModelFailure>;
}

/// `10 sin(pi x1 x2) + 20 (x3 - 0.05)^2 + 5.2 x4 + 5 x5`
pub fn eval_mars(x: &[f64]) -> Result<f64> {
    if x.len() != 5 {
        return Err(Error::validation(format!(
            "MARS function takes 5 inputs, got {}",
            x.len()
        )));
    }
    Ok(mars(x))
}

fn mars(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.05).powi(2) + 5.2 * x[3] + 5.0 * x[4]
}

pub fn eval_linear(coefficients: &[f64], intercept: f64, x: &[f64]) -> Result<f64> {
    if coefficients.len() != x.len() {
        return Err(Error::validation(format!(
            "linear model has {} coefficients, input has {} values",
            coefficients.len(),
            x.len()
        )));
    }
    Ok(linear(coefficients, intercept, x))
}

fn linear(coefficients: &[f64], intercept: f64, x: &[f64]) -> f64 {
    coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + intercept
}

pub enum ModelHandle {
    Mars,
    Linear {
        coefficients: Vec<f64>,
        intercept: f64,
    },
    Expression {
        expr: Expr,
        source: String,
        input_dim: usize,
    },
    Subprocess(SubprocessModel),
    BatchFile(BatchFileModel),
    Custom(Arc<dyn BlackBox>),
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelHandle::Mars => f.write_str("Mars"),
            ModelHandle::Linear {
                coefficients,
                intercept,
            } => f
                .debug_struct("Linear")
                .field("coefficients", coefficients)
                .field("intercept", intercept)
                .finish(),
            ModelHandle::Expression { source, .. } => f.debug_tuple("Expression").field(source).finish(),
            ModelHandle::Subprocess(m) => m.fmt(f),
            ModelHandle::BatchFile(m) => m.fmt(f),
            ModelHandle::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl ModelHandle {
    pub fn linear(coefficients: Vec<f64>, intercept: f64) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().chain([&intercept]).any(|c| !c.is_finite()) {
            return Err(Error::validation(
                "linear model needs at least one finite coefficient",
            ));
        }
        Ok(ModelHandle::Linear {
            coefficients,
            intercept,
        })
    }

    /// Parse `source`; `input_dim` must cover every feature it mentions.
    pub fn expression(source: &str, input_dim: usize) -> Result<Self> {
        let expr = Expr::parse(source)?;
        if expr.arity() > input_dim {
            return Err(Error::validation(format!(
                "expression uses x{} but inputs have {input_dim} features",
                expr.arity()
            )));
        }
        Ok(ModelHandle::Expression {
            expr,
            source: source.to_string(),
            input_dim,
        })
    }

    pub fn custom(model: Arc<dyn BlackBox>) -> Self {
        ModelHandle::Custom(model)
    }
}

impl BlackBox for ModelHandle {
    fn input_dim(&self) -> usize {
        match self {
            ModelHandle::Mars => 5,
            ModelHandle::Linear { coefficients, .. } => coefficients.len(),
            ModelHandle::Expression { input_dim, .. } => *input_dim,
            ModelHandle::Subprocess(m) => m.input_dim(),
            ModelHandle::BatchFile(m) => m.input_dim(),
            ModelHandle::Custom(m) => m.input_dim(),
        }
    }

    fn predict_batch(&self, rows: &DMatrix<f64>) -> std::result::Result<Vec<f64>, ModelFailure> {
        let eval_rows = |f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> {
            let mut buf = vec![0.0; rows.ncols()];
            rows.row_iter()
                .map(|r| {
                    for (b, v) in buf.iter_mut().zip(r.iter()) {
                        *b = *v;
                    }
                    f(&buf)
                })
                .collect()
        };
        match self {
            ModelHandle::Mars => Ok(eval_rows(&mars)),
            ModelHandle::Linear {
                coefficients,
                intercept,
            } => Ok(eval_rows(&|x| linear(coefficients, *intercept, x))),
            ModelHandle::Expression { expr, .. } => Ok(eval_rows(&|x| expr.eval(x))),
            ModelHandle::Subprocess(m) => m.predict_batch(rows),
            ModelHandle::BatchFile(m) => m.predict_batch(rows),
            ModelHandle::Custom(m) => m.predict_batch(rows),
        }
    }
}

/// Evaluate `model` on every row of `x`, in order, in batches of
/// [`MAX_BATCH_ROWS`].
pub fn query_model(model: &dyn BlackBox, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.input_dim() {
        return Err(Error::validation(format!(
            "model expects {} features, got {}",
            model.input_dim(),
            x.ncols()
        )));
    }
    let mut out = Vec::with_capacity(x.nrows());
    let mut start = 0;
    let mut batch = 0;
    while start < x.nrows() {
        let len = MAX_BATCH_ROWS.min(x.nrows() - start);
        let rows = x.rows(start, len).into_owned();
        let preds = model.predict_batch(&rows).map_err(|f| Error::ModelQuery {
            batch,
            message: f.message,
            excerpt: f.excerpt,
        })?;
        if preds.len() != len {
            return Err(Error::ModelQuery {
                batch,
                message: format!("expected {len} predictions, got {}", preds.len()),
                excerpt: None,
            });
        }
        if let Some(i) = preds.iter().position(|v| !v.is_finite()) {
            return Err(Error::ModelQuery {
                batch,
                message: format!("non-finite prediction {} for row {}", preds[i], start + i),
                excerpt: None,
            });
        }
        out.extend(preds);
        start += len;
        batch += 1;
    }
    Ok(out)
}
