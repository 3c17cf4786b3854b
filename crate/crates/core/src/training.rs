//! Minibatch training of the model on the logistic loss, optionally
//! regularized by a fairness surrogate:
//! `min (1/n) sum_i l(f(x_i), y_i) + lambda * phi(f)`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::ndcore::{logistic_loss, loss_score_derivative, Architecture, ModelParams, ModelSnapshot};
use crate::pipeline::{accuracy, fairness_violation};
use crate::surrogates::SurrogateSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    /// Plain gradient descent, `theta -= lr * grad`.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Examples per minibatch; 0 means full batch.
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Weights are drawn from `U[-s, s]` with `s = init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
    /// Hidden width; 0 trains the affine model.
    pub hidden: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 50,
            batch_size: 256,
            lambda: 1.0,
            seed: 0,
            init_scale: 1.0,
            hidden: 64,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be >= 0 and finite"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam_beta", "moment decay must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be >= 0 and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss at the end of the epoch.
    pub loss: f64,
    /// Surrogate value on the training set, when a spec was given.
    pub surrogate: Option<f64>,
    pub test_acc: Option<f64>,
    pub dp_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        fn opt(v: Option<f64>) -> String {
            v.map(fmt_f64).unwrap_or_default()
        }
        writeln!(w, "epoch,loss,surrogate,test_acc,dp_violation")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.loss),
                opt(r.surrogate),
                opt(r.test_acc),
                opt(r.dp_violation)
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Fresh model for `d` inputs and `h` hidden units (`h = 0` gives the affine model).
pub fn init_model(d: usize, h: usize, cfg: &TrainConfig) -> Result<ModelSnapshot> {
    if d == 0 {
        return Err(Error::invalid("input dimension must be at least 1"));
    }
    let arch = Architecture::from_dims(d, h);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::zeros(arch);
    let mut draw = |values: &mut [f64], fan_in: usize| {
        let s = cfg.init_scale / (fan_in as f64).sqrt();
        for v in values {
            *v = if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
        }
    };
    let values = params.as_mut_slice();
    match arch {
        Architecture::Affine { d } => draw(&mut values[..d], d),
        Architecture::Mlp { d, h } => {
            draw(&mut values[..h * d], d);
            draw(&mut values[h * d + h..h * d + 2 * h], h);
        }
    }
    Ok(ModelSnapshot::new(params, "init"))
}

/// Trains from [`init_model`] and returns the final snapshot with its log.
///
/// The surrogate's signs are re-resolved at the current parameters at the
/// start of every epoch. `eval` feeds the accuracy and violation columns of
/// the log.
pub fn train(
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    spec: Option<&SurrogateSpec>,
) -> Result<(ModelSnapshot, TrainLog)> {
    cfg.validate()?;
    let init = init_model(data.dim(), cfg.hidden, cfg)?;
    train_from(init, data, eval, cfg, spec)
}

/// Like [`train`], starting from the given parameters.
pub fn train_from(
    init: ModelSnapshot,
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    spec: Option<&SurrogateSpec>,
) -> Result<(ModelSnapshot, TrainLog)> {
    cfg.validate()?;
    if init.input_dim() != data.dim() {
        return Err(Error::Shape {
            what: "dataset features",
            expected: init.input_dim(),
            got: data.dim(),
        });
    }
    if let Some(e) = eval {
        if e.dim() != data.dim() {
            return Err(Error::Shape {
                what: "evaluation features",
                expected: data.dim(),
                got: e.dim(),
            });
        }
    }
    let n = data.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut params = init.params().clone();
    let p = params.len();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(p);
    let mut grad = vec![0.0; p];
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let resolved = match spec {
            Some(s) => Some(s.resolve(&ModelSnapshot::new(params.clone(), ""), data)?),
            None => None,
        };
        order.shuffle(&mut shuffle_rng);
        for (b, chunk) in order.chunks(batch).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_obj = 0.0;
            for &i in chunk {
                let x = data.row(i);
                let (y, z) = (data.label(i), data.group(i));
                let f = params.eval(x);
                let mut scale = loss_score_derivative(f, y);
                batch_obj += logistic_loss(f, y);
                if let Some(r) = &resolved {
                    scale += cfg.lambda * r.per_instance_coeff(z, y, f)?;
                    batch_obj += cfg.lambda * r.instance_term(z, y, f)?;
                }
                params.accumulate_output_gradient(x, scale / chunk.len() as f64, &mut grad);
            }
            if !batch_obj.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.step(params.as_mut_slice(), &grad, cfg),
                Optimizer::Sgd => {
                    for (v, g) in params.as_mut_slice().iter_mut().zip(&grad) {
                        *v -= cfg.learning_rate * g;
                    }
                }
            }
        }
        let snapshot = ModelSnapshot::new(params.clone(), format!("epoch-{}", epoch + 1));
        log.epochs.push(epoch_record(epoch + 1, &snapshot, data, eval, spec)?);
    }
    let tag = format!("epoch-{}", cfg.epochs);
    Ok((ModelSnapshot::new(params, tag), log))
}

/// `(1/n) sum_i l(f_i, y_i) + lambda * phi(f)` with the surrogate resolved at `snapshot`.
pub fn objective(snapshot: &ModelSnapshot, data: &Dataset, lambda: f64, spec: Option<&SurrogateSpec>) -> Result<f64> {
    let loss = mean_loss(snapshot, data);
    match spec {
        Some(s) => Ok(loss + lambda * s.resolve(snapshot, data)?.surrogate_value(snapshot, data)?),
        None => Ok(loss),
    }
}

fn mean_loss(snapshot: &ModelSnapshot, data: &Dataset) -> f64 {
    let total: f64 = (0..data.len())
        .map(|i| logistic_loss(snapshot.params().eval(data.row(i)), data.label(i)))
        .sum();
    total / data.len() as f64
}

fn epoch_record(
    epoch: usize,
    snapshot: &ModelSnapshot,
    data: &Dataset,
    eval: Option<&Dataset>,
    spec: Option<&SurrogateSpec>,
) -> Result<EpochRecord> {
    let surrogate = match spec {
        Some(s) => Some(s.resolve(snapshot, data)?.surrogate_value(snapshot, data)?),
        None => None,
    };
    let (test_acc, dp_violation) = match eval {
        Some(e) => (Some(accuracy(snapshot, e)?), fairness_violation(snapshot, e).ok()),
        None => (None, None),
    };
    Ok(EpochRecord {
        epoch,
        loss: mean_loss(snapshot, data),
        surrogate,
        test_acc,
        dp_violation,
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(p: usize) -> Self {
        Self {
            m: vec![0.0; p],
            v: vec![0.0; p],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}
