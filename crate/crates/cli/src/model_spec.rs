//! `--model` strings.

use std::path::PathBuf;

use slime_core::model::{BatchFileModel, ExternalCommand, SubprocessModel};
use slime_core::{Error, ModelHandle, Result};

/// Parsed model plus anything that must outlive it.
pub struct LoadedModel {
    pub handle: ModelHandle,
    _scratch: Option<tempfile::TempDir>,
}

/// Accepted forms:
///
/// ```text
/// builtin:mars
/// builtin:linear:c1,c2,...[@intercept]
/// expr:<expression over x1..xp>
/// exec:<shell command>     line-delimited JSON over stdin/stdout
/// batch:<shell command>    CSV request/response files
/// ```
pub fn load_model(spec: &str, feature_names: &[String]) -> Result<LoadedModel> {
    let dim = feature_names.len();
    let plain = |handle| Ok(LoadedModel { handle, _scratch: None });
    if spec == "builtin:mars" {
        return plain(ModelHandle::Mars);
    }
    if let Some(rest) = spec.strip_prefix("builtin:linear:") {
        let (coefs, intercept) = match rest.split_once('@') {
            Some((c, b)) => (c, parse_number(b, "intercept")?),
            None => (rest, 0.0),
        };
        return plain(ModelHandle::linear(parse_list(coefs, "coefficient")?, intercept)?);
    }
    if let Some(src) = spec.strip_prefix("expr:") {
        return plain(ModelHandle::expression(src, dim)?);
    }
    if let Some(cmd) = spec.strip_prefix("exec:") {
        if cmd.trim().is_empty() {
            return Err(Error::validation("exec: needs a command"));
        }
        return plain(ModelHandle::Subprocess(SubprocessModel::new(ExternalCommand::shell(cmd), dim)));
    }
    if let Some(cmd) = spec.strip_prefix("batch:") {
        if cmd.trim().is_empty() {
            return Err(Error::validation("batch: needs a command"));
        }
        let dir = tempfile::tempdir()?;
        let request: PathBuf = dir.path().join("request.csv");
        let response: PathBuf = dir.path().join("response.csv");
        let model = BatchFileModel::new(ExternalCommand::shell(cmd), request, response, feature_names.to_vec());
        return Ok(LoadedModel {
            handle: ModelHandle::BatchFile(model),
            _scratch: Some(dir),
        });
    }
    Err(Error::validation(format!(
        "unknown model '{spec}' (expected builtin:mars, builtin:linear:..., expr:..., exec:... or batch:...)"
    )))
}

pub fn parse_number(text: &str, what: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::validation(format!("{what} '{}' is not a number", text.trim())))?;
    if !v.is_finite() {
        return Err(Error::validation(format!("{what} must be finite")));
    }
    Ok(v)
}

/// Comma-separated numbers.
pub fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Err(Error::validation(format!("empty {what} list")));
    }
    text.split(',').map(|t| parse_number(t, what)).collect()
}
