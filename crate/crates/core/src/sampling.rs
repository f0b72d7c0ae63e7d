//! Perturbation neighborhoods around an instance.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lars::default_feature_names;
use crate::model::{query_model, BlackBox};
use crate::rng::standard_normal_row;

/// The point being explained, with per-feature perturbation scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub values: Vec<f64>,
    pub feature_names: Vec<String>,
    pub feature_scales: Vec<f64>,
}

impl InstanceSpec {
    pub fn new(values: Vec<f64>, feature_names: Vec<String>, feature_scales: Vec<f64>) -> Result<Self> {
        let p = values.len();
        if p == 0 {
            return Err(Error::validation("instance has no features"));
        }
        if feature_names.len() != p || feature_scales.len() != p {
            return Err(Error::validation(format!(
                "instance has {p} values, {} names and {} scales",
                feature_names.len(),
                feature_scales.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("instance values must be finite"));
        }
        if feature_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::validation("feature scales must be finite and positive"));
        }
        Ok(Self {
            values,
            feature_names,
            feature_scales,
        })
    }

    /// Features `x1..xp`, all scales 1.
    pub fn with_unit_scales(values: Vec<f64>) -> Result<Self> {
        let p = values.len();
        Self::new(values, default_feature_names(p), vec![1.0; p])
    }

    pub fn with_scales(values: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        let p = values.len();
        Self::new(values, default_feature_names(p), scales)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `0.75 * sqrt(p)` on the scale-normalized distance.
    pub fn default_kernel_width(&self) -> f64 {
        0.75 * (self.dim() as f64).sqrt()
    }
}

/// Synthetic samples, black-box responses and kernel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub kernel_width: f64,
}

impl PerturbationDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Rows `start..end` of the Gaussian neighborhood for `seed`.
pub fn gaussian_rows(instance: &InstanceSpec, seed: u64, start: usize, end: usize) -> DMatrix<f64> {
    let p = instance.dim();
    let mut z = vec![0.0; p];
    let mut out = DMatrix::zeros(end.saturating_sub(start), p);
    for (i, t) in (start..end).enumerate() {
        standard_normal_row(seed, t as u64, &mut z);
        for j in 0..p {
            out[(i, j)] = instance.values[j] + instance.feature_scales[j] * z[j];
        }
    }
    out
}

/// `n` rows of `instance + scales * z`, `z` standard normal.
///
/// Row `t` depends only on `(seed, t)`, so a larger `n` extends a smaller one.
pub fn gaussian_perturb(instance: &InstanceSpec, n: usize, seed: u64) -> DMatrix<f64> {
    gaussian_rows(instance, seed, 0, n)
}

/// `exp(-d^2 / width^2)` with `d` the scale-normalized distance to the instance.
pub fn kernel_weights(x: &DMatrix<f64>, instance: &InstanceSpec, width: f64) -> Result<Vec<f64>> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::validation(format!("kernel width must be positive, got {width}")));
    }
    if x.ncols() != instance.dim() {
        return Err(Error::validation(format!(
            "rows have {} features, instance has {}",
            x.ncols(),
            instance.dim()
        )));
    }
    let w2 = width * width;
    Ok(x.row_iter()
        .map(|row| {
            let d2: f64 = row
                .iter()
                .zip(&instance.values)
                .zip(&instance.feature_scales)
                .map(|((v, c), s)| ((v - c) / s).powi(2))
                .sum();
            (-d2 / w2).exp().max(f64::MIN_POSITIVE)
        })
        .collect())
}

/// Seeded neighborhood generator around one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub instance: InstanceSpec,
    pub kernel_width: f64,
    pub seed: u64,
}

impl Neighborhood {
    pub fn new(instance: InstanceSpec, kernel_width: f64, seed: u64) -> Result<Self> {
        if !(kernel_width.is_finite() && kernel_width > 0.0) {
            return Err(Error::validation(format!(
                "kernel width must be positive, got {kernel_width}"
            )));
        }
        Ok(Self {
            instance,
            kernel_width,
            seed,
        })
    }

    /// Rows `start..end` with their weights and responses.
    pub fn sample(&self, model: &dyn BlackBox, start: usize, end: usize) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
        let x = gaussian_rows(&self.instance, self.seed, start, end);
        let weights = kernel_weights(&x, &self.instance, self.kernel_width)?;
        let y = query_model(model, &x)?;
        Ok((x, y, weights))
    }

    pub fn generate(&self, model: &dyn BlackBox, n: usize) -> Result<PerturbationDataset> {
        if n == 0 {
            return Err(Error::validation("need at least one perturbation"));
        }
        let (x, y, weights) = self.sample(model, 0, n)?;
        Ok(PerturbationDataset {
            x,
            y,
            weights,
            seed: self.seed,
            kernel_width: self.kernel_width,
        })
    }
}

/// Sample standard deviation of each column; zero-variance columns get 1.
pub fn estimate_scales(background: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = background.nrows();
    if n < 2 {
        return Err(Error::validation("background data needs at least 2 rows"));
    }
    Ok(background
        .column_iter()
        .map(|col| {
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect())
}

/// Read a background CSV: header row, one numeric feature per column.
pub fn read_background_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let names: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != names.len() {
            return Err(Error::validation(format!(
                "background row {} has {} fields, header has {}",
                i + 1,
                record.len(),
                names.len()
            )));
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::validation(format!("background row {}: '{field}' is not a number", i + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((names.clone(), DMatrix::from_row_slice(rows, names.len(), &values)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance() -> InstanceSpec {
        InstanceSpec::with_scales(vec![0.5, -2.0, 3.0], vec![0.2, 1.0, 4.0]).unwrap()
    }

    #[test]
    fn tiny_scales_collapse_onto_instance() {
        let inst = InstanceSpec::with_scales(vec![1.0, 2.0], vec![1e-300, 1e-300]).unwrap();
        let x = gaussian_perturb(&inst, 50, 3);
        for row in x.row_iter() {
            assert_eq!(row[0], 1.0);
            assert_eq!(row[1], 2.0);
        }
    }

    #[test]
    fn prefix_property() {
        let a = gaussian_perturb(&instance(), 100, 9);
        let b = gaussian_perturb(&instance(), 250, 9);
        assert_eq!(a, b.rows(0, 100).into_owned());
        assert_eq!(gaussian_rows(&instance(), 9, 100, 250), b.rows(100, 150).into_owned());
    }

    #[test]
    fn sample_mean_is_near_instance() {
        let inst = instance();
        let n = 100_000;
        let x = gaussian_perturb(&inst, n, 1);
        for j in 0..3 {
            let mean = x.column(j).mean();
            let bound = 4.0 * inst.feature_scales[j] / (n as f64).sqrt();
            assert!((mean - inst.values[j]).abs() < bound, "feature {j}: {mean}");
        }
    }

    #[test]
    fn kernel_weight_values() {
        let inst = instance();
        let width = 1.3;
        let x = DMatrix::from_row_slice(
            3,
            3,
            &[
                0.5, -2.0, 3.0, // the instance itself
                0.5 + 0.2 * width, -2.0, 3.0, // distance exactly `width`
                0.9, -1.5, 0.0,
            ],
        );
        let w = kernel_weights(&x, &inst, width).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (-1.0f64).exp()).abs() < 1e-15);
        let d2 = (0.4f64 / 0.2).powi(2) + 0.5f64.powi(2) + (3.0f64 / 4.0).powi(2);
        assert!((w[2] - (-d2 / (width * width)).exp()).abs() < 1e-15);
        assert!(kernel_weights(&x, &inst, 0.0).is_err());
    }

    #[test]
    fn instance_validation() {
        assert!(InstanceSpec::with_scales(vec![1.0], vec![0.0]).is_err());
        assert!(InstanceSpec::with_scales(vec![f64::NAN], vec![1.0]).is_err());
        assert!(InstanceSpec::with_scales(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(InstanceSpec::with_unit_scales(vec![]).is_err());
    }

    #[test]
    fn scales_from_background() {
        let bg = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
        let s = estimate_scales(&bg).unwrap();
        assert!((s[0] - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s[1], 1.0);
    }

    #[test]
    fn background_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bg.csv");
        std::fs::write(&path, "a,b\n1.5,2\n-0.5,4e-1\n").unwrap();
        let (names, x) = read_background_csv(&path).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(x, DMatrix::from_row_slice(2, 2, &[1.5, 2.0, -0.5, 0.4]));
        std::fs::write(&path, "a,b\n1.5,x\n").unwrap();
        assert!(read_background_csv(&path).is_err());
    }
}
