//! Expected-cost surrogates: a linear model fitted by least squares and a
//! ReLU network trained with Adam. Both map the flattened plan `x` to the
//! expected production cost.

mod linear;
mod mlp;

pub use linear::{fit_linear, LinearSurrogate};
pub use mlp::{
    fit_mlp, grad_check, grad_check_with, Dense, GradCheckReport, MlpSurrogate, TrainConfig, TrainingCurve,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::labeling::LabeledSample;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Per-coordinate affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Fits on `rows`; coordinates with zero spread get unit scale.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut scale = vec![0.0; dim];
        for r in rows {
            for j in 0..dim {
                scale[j] += (r[j] - mean[j]).powi(2);
            }
        }
        for (s, m) in scale.iter_mut().zip(&mean) {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12 * m.abs().max(1.0)) {
                *s = 1.0;
            }
        }
        Scaler { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Scaler { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| x * s + m).collect()
    }
}

/// Labeled plans with a train/validation split and scalers fitted on the
/// training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub x_scaler: Scaler,
    pub y_scaler: Scaler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    All,
}

impl Dataset {
    /// Shuffles row indices with `seed` and holds out `val_fraction` of them.
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, val_fraction: f64, seed: u64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dataset(format!("{} inputs but {} targets", x.len(), y.len())));
        }
        if x.len() < 2 {
            return Err(Error::Dataset(format!("need at least 2 rows, got {}", x.len())));
        }
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Dataset(format!("validation fraction {val_fraction} outside [0, 1)")));
        }
        let dim = x[0].len();
        for (k, row) in x.iter().enumerate() {
            check_dim(dim, row.len())?;
            if row.iter().any(|v| !v.is_finite()) || !y[k].is_finite() {
                return Err(Error::Dataset(format!("row {k} has non-finite entries")));
            }
        }
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((x.len() as f64) * val_fraction).round() as usize;
        let n_val = n_val.min(x.len() - 1);
        let validation = idx[..n_val].to_vec();
        let train = idx[n_val..].to_vec();
        Self::with_split(x, y, train, validation)
    }

    pub fn with_split(x: Vec<Vec<f64>>, y: Vec<f64>, train: Vec<usize>, validation: Vec<usize>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        let mut seen = vec![false; x.len()];
        for &i in train.iter().chain(&validation) {
            if i >= x.len() || seen[i] {
                return Err(Error::Dataset(format!("split index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        let rows: Vec<&[f64]> = train.iter().map(|&i| x[i].as_slice()).collect();
        let x_scaler = Scaler::fit(&rows);
        let targets: Vec<[f64; 1]> = train.iter().map(|&i| [y[i]]).collect();
        let y_rows: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
        let y_scaler = Scaler::fit(&y_rows);
        Ok(Dataset { x, y, train, validation, x_scaler, y_scaler })
    }

    pub fn from_labels(labels: &[LabeledSample], val_fraction: f64, seed: u64) -> Result<Self> {
        let x = labels.iter().map(|l| l.plan.x.clone()).collect();
        let y = labels.iter().map(|l| l.label).collect();
        Self::new(x, y, val_fraction, seed)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x_scaler.dim()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Validation => self.validation.clone(),
            Split::All => (0..self.len()).collect(),
        }
    }

    pub fn scaled_x(&self, i: usize) -> Vec<f64> {
        self.x_scaler.apply(&self.x[i])
    }

    pub fn scaled_y(&self, i: usize) -> f64 {
        (self.y[i] - self.y_scaler.mean[0]) / self.y_scaler.scale[0]
    }
}

/// Either surrogate, as stored in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surrogate {
    Linear(LinearSurrogate),
    Mlp(MlpSurrogate),
}

impl Surrogate {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Surrogate::Linear(m) => m.predict(x),
            Surrogate::Mlp(m) => m.predict(x),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Surrogate::Linear(m) => m.beta.len(),
            Surrogate::Mlp(m) => m.input.dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Surrogate::Linear(_) => "linear",
            Surrogate::Mlp(_) => "mlp",
        }
    }
}

/// Versioned JSON model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub model: Surrogate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingCurve>,
}

impl ModelFile {
    pub fn new(model: Surrogate, training: Option<TrainingCurve>) -> Self {
        ModelFile { format_version: MODEL_FORMAT_VERSION, model, training }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format { what: "model".into(), message: e.to_string() })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Format { what: "model".into(), message: e.to_string() })?;
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format {
                what: "model".into(),
                message: format!("unsupported format version {}", f.format_version),
            });
        }
        Ok(f)
    }
}

/// Mean absolute percentage error over a split, in percent.
pub fn mape(predict: impl Fn(&[f64]) -> Result<f64>, data: &Dataset, split: Split) -> Result<f64> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::Dataset("cannot compute MAPE on an empty split".into()));
    }
    let mut total = 0.0;
    for &i in &idx {
        let y = data.y[i];
        if y == 0.0 {
            return Err(Error::Dataset(format!("row {i} has a zero target")));
        }
        total += ((predict(&data.x[i])? - y) / y).abs();
    }
    Ok(100.0 * total / idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let x: Vec<Vec<f64>> = (0..n).map(|k| vec![k as f64, 1.0, (k * k) as f64]).collect();
        let y: Vec<f64> = (0..n).map(|k| 10.0 + k as f64).collect();
        Dataset::new(x, y, 0.2, 4).unwrap()
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let d = toy(25);
        assert_eq!(d.validation.len(), 5);
        let mut all: Vec<usize> = d.train.iter().chain(&d.validation).copied().collect();
        all.sort();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn scaler_round_trip_and_constant_columns() {
        let d = toy(30);
        assert_eq!(d.x_scaler.scale[1], 1.0);
        for row in &d.x {
            let back = d.x_scaler.invert(&d.x_scaler.apply(row));
            for (a, b) in back.iter().zip(row) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
        let m: f64 = d.train.iter().map(|&i| d.scaled_y(i)).sum::<f64>() / d.train.len() as f64;
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn mape_values() {
        let d = toy(10);
        assert_eq!(mape(|x| Ok(10.0 + x[0]), &d, Split::All).unwrap(), 0.0);
        let m = mape(|x| Ok(1.1 * (10.0 + x[0])), &d, Split::All).unwrap();
        assert!((m - 10.0).abs() < 1e-9);
        // Targets 10, 20, 40 against predictions 11, 18, 40: (10% + 10% + 0%) / 3.
        let d3 = Dataset::with_split(vec![vec![0.0], vec![1.0], vec![2.0]], vec![10.0, 20.0, 40.0], vec![0, 1, 2], vec![])
            .unwrap();
        let preds = [11.0, 18.0, 40.0];
        let m = mape(|x| Ok(preds[x[0] as usize]), &d3, Split::Train).unwrap();
        assert!((m - 20.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bad_datasets_rejected() {
        assert!(Dataset::new(vec![vec![1.0]], vec![1.0], 0.2, 0).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![2.0]], vec![1.0], 0.2, 0).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![f64::NAN]], vec![1.0, 2.0], 0.2, 0).is_err());
        let d = Dataset::with_split(vec![vec![1.0], vec![2.0]], vec![0.0, 1.0], vec![0, 1], vec![]).unwrap();
        assert!(mape(|_| Ok(1.0), &d, Split::Train).is_err());
    }
}
