use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Scaler};
use crate::error::{check_dim, Error, Result};

/// Fully connected layer; `weights[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { weights: vec![vec![0.0; inputs]; outputs], bias: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, |r| r.len())
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn apply(&self, h: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.bias).map(|(w, b)| w.iter().zip(h).map(|(a, v)| a * v).sum::<f64>() + b).collect()
    }

    fn num_params(&self) -> usize {
        self.outputs() * (self.inputs() + 1)
    }

    fn param_mut(&mut self, k: usize) -> &mut f64 {
        let n_in = self.inputs();
        let n_w = self.outputs() * n_in;
        if k < n_w {
            &mut self.weights[k / n_in][k % n_in]
        } else {
            &mut self.bias[k - n_w]
        }
    }
}

/// ReLU network with an input standardizer and a linear scalar output in
/// original cost units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSurrogate {
    pub hidden: Vec<usize>,
    pub input: Scaler,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
}

impl MlpSurrogate {
    /// He-uniform weights, zero biases.
    pub fn init(input: Scaler, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![input.dim()];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0].max(1) as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                for row in &mut d.weights {
                    for v in row {
                        *v = rng.random_range(-limit..=limit);
                    }
                }
                d
            })
            .collect();
        MlpSurrogate { hidden: hidden.to_vec(), input, layers }
    }

    pub fn dim(&self) -> usize {
        self.input.dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let n = layer.num_params();
            if k < n {
                return layer.param_mut(k);
            }
            k -= n;
        }
        panic!("parameter index out of range");
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            for row in &l.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Pre-activations of every layer (the last is the output).
    pub fn preactivations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.dim(), x.len())?;
        let mut h = self.input.apply(x);
        let mut out = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            if k + 1 < self.layers.len() {
                h = z.iter().map(|v| v.max(0.0)).collect();
            }
            out.push(z);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.preactivations(x)?.last().map_or(0.0, |z| z[0]))
    }

    /// Multiplies the output by `scale` and adds `shift`.
    fn fold_output(&mut self, shift: f64, scale: f64) {
        let out = self.layers.last_mut().expect("output layer");
        for w in &mut out.weights[0] {
            *w *= scale;
        }
        out.bias[0] = out.bias[0] * scale + shift;
    }
}

struct Cache {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn forward(net: &MlpSurrogate, x: &[f64]) -> Cache {
    let mut h = net.input.apply(x);
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut pre = Vec::with_capacity(net.layers.len());
    for (k, layer) in net.layers.iter().enumerate() {
        let z = layer.apply(&h);
        let next = if k + 1 < net.layers.len() { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
        inputs.push(std::mem::replace(&mut h, next));
        pre.push(z);
    }
    Cache { inputs, pre }
}

/// Mean squared error over `(xs, ys)` and its gradient with respect to every
/// parameter, flattened in [`MlpSurrogate::params`] order.
fn loss_and_grad(net: &MlpSurrogate, xs: &[&[f64]], ys: &[f64]) -> (f64, Vec<f64>) {
    let b = xs.len() as f64;
    let mut grads: Vec<Dense> = net.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect();
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let c = forward(net, x);
        let f = c.pre.last().unwrap()[0];
        let r = f - y;
        loss += r * r / b;
        let mut delta = vec![2.0 * r / b];
        for k in (0..net.layers.len()).rev() {
            let g = &mut grads[k];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                for (gw, h) in g.weights[o].iter_mut().zip(&c.inputs[k]) {
                    *gw += d * h;
                }
            }
            if k == 0 {
                break;
            }
            let layer = &net.layers[k];
            let prev = &c.pre[k - 1];
            delta = (0..layer.inputs())
                .map(|i| {
                    if prev[i] > 0.0 {
                        delta.iter().enumerate().map(|(o, d)| d * layer.weights[o][i]).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }
    let flat = MlpSurrogate { hidden: net.hidden.clone(), input: net.input.clone(), layers: grads }.params();
    (loss, flat)
}

fn mse(net: &MlpSurrogate, xs: &[&[f64]], ys: &[f64]) -> f64 {
    let b = xs.len() as f64;
    xs.iter().zip(ys).map(|(x, y)| (net.predict(x).unwrap_or(f64::NAN) - y).powi(2) / b).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![16, 8],
            max_epochs: 500,
            patience: 20,
            learning_rate: 5e-5,
            weight_decay: 1e-5,
            batch_size: 64,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("train config: {m}")));
        if self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden widths must be positive".into());
        }
        if self.patience == 0 || self.batch_size == 0 {
            return bad("patience and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad(format!("learning rate {} / weight decay {}", self.learning_rate, self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("validation fraction {}", self.val_fraction));
        }
        Ok(())
    }
}

/// Per-epoch losses on standardized targets. Entry 0 is the initialization.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub early_stopped: bool,
    /// Not serialized, so model files stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains on the training split with Adam and early stopping on the
/// validation split, then folds the target scaler into the output layer.
pub fn fit_mlp(data: &Dataset, cfg: &TrainConfig) -> Result<(MlpSurrogate, TrainingCurve)> {
    cfg.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::Training("both the training and validation splits must be nonempty".into()));
    }
    let start = Instant::now();
    let mut net = MlpSurrogate::init(data.x_scaler.clone(), &cfg.hidden, cfg.seed);
    let tx: Vec<&[f64]> = data.train.iter().map(|&i| data.x[i].as_slice()).collect();
    let ty: Vec<f64> = data.train.iter().map(|&i| data.scaled_y(i)).collect();
    let vx: Vec<&[f64]> = data.validation.iter().map(|&i| data.x[i].as_slice()).collect();
    let vy: Vec<f64> = data.validation.iter().map(|&i| data.scaled_y(i)).collect();

    let mut curve = TrainingCurve { train_loss: vec![mse(&net, &tx, &ty)], val_loss: vec![mse(&net, &vx, &vy)], ..Default::default() };
    let mut best = net.clone();
    let mut best_val = curve.val_loss[0];
    let np = net.num_params();
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..tx.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| tx[i]).collect();
            let by: Vec<f64> = batch.iter().map(|&i| ty[i]).collect();
            let (_, grad) = loss_and_grad(&net, &bx, &by);
            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step);
            let c2 = 1.0 - ADAM_BETA2.powi(step);
            let theta = net.params();
            for k in 0..np {
                let g = grad[k] + cfg.weight_decay * theta[k];
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
                *net.param_mut(k) -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
        }
        let (tl, vl) = (mse(&net, &tx, &ty), mse(&net, &vx, &vy));
        if !tl.is_finite() || !vl.is_finite() {
            return Err(Error::Training(format!("non-finite loss at epoch {epoch} (train {tl}, validation {vl})")));
        }
        curve.train_loss.push(tl);
        curve.val_loss.push(vl);
        curve.epochs_run = epoch;
        if vl < best_val {
            best_val = vl;
            best = net.clone();
            curve.best_epoch = epoch;
        } else if epoch - curve.best_epoch >= cfg.patience {
            curve.early_stopped = true;
            break;
        }
    }
    best.fold_output(data.y_scaler.mean[0], data.y_scaler.scale[0]);
    curve.wall_time_s = start.elapsed().as_secs_f64();
    Ok((best, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub params_checked: usize,
    pub points: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Moves `x` off ReLU kinks: nudges coordinates until every hidden
/// pre-activation has magnitude at least `1e-5`.
fn off_kink(model: &MlpSurrogate, x: &[f64]) -> Result<Vec<f64>> {
    let mut x = x.to_vec();
    for attempt in 0..64 {
        let pre = model.preactivations(&x)?;
        let hidden = &pre[..pre.len() - 1];
        if hidden.iter().flatten().all(|z| z.abs() >= 1e-5) {
            return Ok(x);
        }
        let j = attempt % x.len().max(1);
        x[j] += 1e-3 * model.input.scale[j] * (1.0 + attempt as f64 / 8.0);
    }
    Err(Error::Training("could not move the probe point off ReLU kinks".into()))
}

/// Compares the analytic gradient of the MSE over `(xs, ys)` with central
/// finite differences (step `1e-5` relative to each parameter).
pub fn grad_check(model: &MlpSurrogate, xs: &[Vec<f64>], ys: &[f64], tolerance: f64) -> Result<GradCheckReport> {
    grad_check_with(model, xs, ys, tolerance, None)
}

/// [`grad_check`] with the analytic gradient of parameter `corrupt`
/// doubled, as a negative control.
pub fn grad_check_with(
    model: &MlpSurrogate,
    xs: &[Vec<f64>],
    ys: &[f64],
    tolerance: f64,
    corrupt: Option<usize>,
) -> Result<GradCheckReport> {
    check_dim(xs.len(), ys.len())?;
    let pts = xs.iter().map(|x| off_kink(model, x)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
    let (loss, mut grad) = loss_and_grad(model, &refs, ys);
    if let Some(k) = corrupt {
        grad[k] *= 2.0;
    }
    let theta = model.params();
    let floor = 1e-10 * loss.abs().max(1.0);
    let mut probe = model.clone();
    let (mut worst, mut worst_param) = (0.0f64, 0);
    for k in 0..theta.len() {
        let h = 1e-5 * theta[k].abs().max(1.0);
        *probe.param_mut(k) = theta[k] + h;
        let up = mse(&probe, &refs, ys);
        *probe.param_mut(k) = theta[k] - h;
        let down = mse(&probe, &refs, ys);
        *probe.param_mut(k) = theta[k];
        let fd = (up - down) / (2.0 * h);
        let err = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(floor);
        if err > worst {
            worst = err;
            worst_param = k;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_param,
        params_checked: theta.len(),
        points: pts.len(),
        tolerance,
        passed: worst <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{mape, Split};

    fn line_data(n: usize) -> Dataset {
        let x: Vec<Vec<f64>> = (0..n).map(|k| vec![k as f64 / n as f64]).collect();
        let y = x.iter().map(|r| 2.0 * r[0] + 3.0).collect();
        Dataset::new(x, y, 0.2, 5).unwrap()
    }

    #[test]
    fn hand_built_network() {
        // h1 = relu(x - 1), h2 = relu(-x + 2), out = 2 h1 + 3 h2 + 1.
        let net = MlpSurrogate {
            hidden: vec![2],
            input: Scaler::identity(1),
            layers: vec![
                Dense { weights: vec![vec![1.0], vec![-1.0]], bias: vec![-1.0, 2.0] },
                Dense { weights: vec![vec![2.0, 3.0]], bias: vec![1.0] },
            ],
        };
        assert_eq!(net.predict(&[0.0]).unwrap(), 7.0);
        assert_eq!(net.predict(&[1.5]).unwrap(), 1.0 + 1.0 + 1.5);
        assert_eq!(net.predict(&[3.0]).unwrap(), 5.0);
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut net = MlpSurrogate::init(Scaler::identity(3), &[16, 8], 1);
        for l in &mut net.layers {
            l.weights.iter_mut().flatten().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        net.fold_output(42.0, 10.0);
        assert_eq!(net.predict(&[1.0, 2.0, 3.0]).unwrap(), 42.0);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let d = line_data(30);
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let (m, curve) = fit_mlp(&d, &cfg).unwrap();
        let mut init = MlpSurrogate::init(d.x_scaler.clone(), &cfg.hidden, cfg.seed);
        init.fold_output(d.y_scaler.mean[0], d.y_scaler.scale[0]);
        assert_eq!(m, init);
        assert_eq!(curve.best_epoch, 0);
    }

    #[test]
    fn deterministic_given_seed() {
        let d = line_data(40);
        let cfg = TrainConfig { max_epochs: 20, ..TrainConfig::default() };
        let (m1, c1) = fit_mlp(&d, &cfg).unwrap();
        let (m2, c2) = fit_mlp(&d, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(c1.val_loss, c2.val_loss);
    }

    #[test]
    fn learns_a_line() {
        let d = line_data(200);
        let (m, curve) = fit_mlp(&d, &TrainConfig::default()).unwrap();
        let err = mape(|x| m.predict(x), &d, Split::Validation).unwrap();
        assert!(err < 2.0, "validation MAPE {err}%");
        let min = curve.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(curve.val_loss[curve.best_epoch], min);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = MlpSurrogate::init(Scaler::identity(4), &[16, 8], 0);
        let xs: Vec<Vec<f64>> = (0..5).map(|k| (0..4).map(|j| ((k * 4 + j) as f64 * 0.37).sin()).collect()).collect();
        let ys: Vec<f64> = (0..5).map(|k| k as f64 - 2.0).collect();
        let r = grad_check(&net, &xs, &ys, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
        let last = net.num_params() - 1;
        let bad = grad_check_with(&net, &xs, &ys, 1e-4, Some(last)).unwrap();
        assert!(!bad.passed);
        assert_eq!(bad.worst_param, last);
    }

    #[test]
    fn output_layer_only_is_exact() {
        let net = MlpSurrogate {
            hidden: vec![],
            input: Scaler::identity(2),
            layers: vec![Dense { weights: vec![vec![0.5, -1.0]], bias: vec![0.25] }],
        };
        let r = grad_check(&net, &[vec![1.0, 2.0], vec![-3.0, 0.5]], &[1.0, 0.0], 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn affine_within_activation_region() {
        let net = MlpSurrogate::init(Scaler::identity(3), &[16, 8], 3);
        let a = [0.3, -0.2, 0.1];
        let d = [1e-6, 2e-6, -1e-6];
        let p = |t: f64| net.predict(&[a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]]).unwrap();
        let (f0, f1, f2) = (p(0.0), p(1.0), p(2.0));
        assert!((f2 - 2.0 * f1 + f0).abs() < 1e-12);
    }
}
