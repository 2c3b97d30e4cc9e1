//! Additive triple loss and mini-batch SGD with momentum.
//!
//! For a triple `(s1, s2, s3)` the loss is `(len1 - O(s2) - O(s3))^2 + λ ||W||^2`,
//! so the network never sees `s1` directly: it is trained to make its outputs
//! on the two pieces add up to the length of the whole. A batch loss is the
//! mean over its triples; since the penalty does not depend on the triple it
//! enters the batch objective exactly once.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGrads, ParamKind, ParamStore, Tape, Tensor, Var};
use crate::config::parse_value;
use crate::datagen::{DatasetSplits, ExampleTriple};
use crate::error::{Error, Result};
use crate::models::{self, bind, Bound, Model, ModelConfig, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Coefficient of the in-loss L2 penalty.
    pub lambda: f64,
    pub rng_seed: u64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(kind: ModelKind) -> Self {
        TrainConfig {
            batch_size: 200,
            epochs: 100,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            lambda: 0.01,
            rng_seed: 0,
            model: ModelConfig::new(kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        let nonneg = [self.learning_rate, self.momentum, self.weight_decay, self.lambda];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) || self.learning_rate == 0.0 {
            return Err(Error::invalid(
                "learning rate must be positive; momentum, weight decay and lambda non-negative",
            ));
        }
        self.model.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "seed" | "rng_seed" => self.rng_seed = parse_value(key, value)?,
            "model" => self.model.kind = parse_value(key, value)?,
            "channels" | "conv_channels" => self.model.conv_channels = parse_value(key, value)?,
            "lstm_hidden" => self.model.lstm_hidden = parse_value(key, value)?,
            "fc_hidden" => self.model.fc_hidden = parse_value(key, value)?,
            "center_input" => self.model.center_input = parse_value(key, value)?,
            "input_scale" => self.model.input_scale = parse_value(key, value)?,
            _ => return Err(Error::invalid(format!("unknown training setting {key:?}"))),
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model = {}", self.model.kind)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "momentum = {}", self.momentum)?;
        writeln!(f, "weight_decay = {}", self.weight_decay)?;
        writeln!(f, "lambda = {}", self.lambda)?;
        writeln!(f, "seed = {}", self.rng_seed)?;
        writeln!(f, "points = {}", self.model.n_points)?;
        writeln!(f, "conv_channels = {}", self.model.conv_channels)?;
        writeln!(f, "lstm_hidden = {}", self.model.lstm_hidden)?;
        writeln!(f, "fc_hidden = {}", self.model.fc_hidden)?;
        writeln!(f, "center_input = {}", self.model.center_input)?;
        write!(f, "input_scale = {}", self.model.input_scale)
    }
}

/// Momentum buffers, one per parameter, starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: Vec<Tensor>,
}

impl SgdState {
    pub fn new(store: &ParamStore) -> Self {
        SgdState {
            velocity: store.params().iter().map(|p| p.value.zeros_like()).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for SgdParams {
    fn from(c: &TrainConfig) -> Self {
        SgdParams {
            learning_rate: c.learning_rate,
            momentum: c.momentum,
            weight_decay: c.weight_decay,
        }
    }
}

/// `g' = g + wd θ` (weights only), `v = μ v + g'`, `θ -= η v`.
pub fn sgd_step(store: &mut ParamStore, grads: &ParamGrads, state: &mut SgdState, opt: SgdParams) -> Result<()> {
    if grads.tensors().len() != store.len() || state.velocity.len() != store.len() {
        return Err(Error::invalid("optimizer state does not match parameters"));
    }
    for ((p, g), v) in store.params_mut().iter_mut().zip(grads.tensors()).zip(&mut state.velocity) {
        if g.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(Error::invalid(format!("shape mismatch for {}", p.name)));
        }
        let decay = if p.kind == ParamKind::Weight { opt.weight_decay } else { 0.0 };
        for ((theta, gi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let g_eff = gi + decay * *theta;
            *vi = opt.momentum * *vi + g_eff;
            *theta -= opt.learning_rate * *vi;
        }
    }
    Ok(())
}

/// `(len1 - O(s2) - O(s3))^2` on `tape`, as a `[1]` node.
pub fn additive_residual_loss(tape: &mut Tape, model: &ModelConfig, bound: &Bound, triple: &ExampleTriple) -> Result<Var> {
    let o2 = models::forward(tape, model, bound, &triple.s2)?;
    let o3 = models::forward(tape, model, bound, &triple.s3)?;
    let sum = tape.add(o2, o3)?;
    let target = tape.constant(Tensor::scalar(triple.len1));
    tape.mse(sum, target)
}

/// Data term of the triple loss and its gradient.
pub fn triple_data_loss(model: &ModelConfig, store: &ParamStore, triple: &ExampleTriple) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, model, store)?;
    let loss = additive_residual_loss(&mut tape, model, &bound, triple)?;
    Ok((tape.value(loss).item(), tape.gradients(loss, store)?))
}

/// Full triple loss `J_k` including the penalty, with its gradient.
pub fn triple_loss_with_grads(
    model: &ModelConfig,
    store: &ParamStore,
    triple: &ExampleTriple,
    lambda: f64,
) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, model, store)?;
    let data = additive_residual_loss(&mut tape, model, &bound, triple)?;
    let l2 = tape.l2_penalty(store);
    let penalty = tape.scale(l2, lambda);
    let loss = tape.add(data, penalty)?;
    Ok((tape.value(loss).item(), tape.gradients(loss, store)?))
}

pub fn triple_loss(model: &ModelConfig, store: &ParamStore, triple: &ExampleTriple, lambda: f64) -> Result<f64> {
    let o2 = models::predict(model, store, &triple.s2)?;
    let o3 = models::predict(model, store, &triple.s3)?;
    let r = triple.len1 - o2 - o3;
    Ok(r * r + lambda * store.weight_sq_norm())
}

/// Mean of `J_k` over `batch` and its gradient.
///
/// Per-triple gradients may be computed in parallel; they are summed in batch
/// order so the result does not depend on the thread count.
pub fn batch_loss(
    model: &ModelConfig,
    store: &ParamStore,
    batch: &[&ExampleTriple],
    lambda: f64,
) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let parts: Vec<(f64, ParamGrads)> = batch
        .par_iter()
        .map(|t| triple_data_loss(model, store, t))
        .collect::<Result<_>>()?;
    let mut total = store.zero_grads();
    let mut data_sum = 0.0;
    for (loss, g) in &parts {
        data_sum += loss;
        total.add_assign(g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    if lambda != 0.0 {
        for (i, p) in store.params().iter().enumerate() {
            if p.kind == ParamKind::Weight {
                let dst = total.tensor_mut(i).data_mut();
                for (d, w) in dst.iter_mut().zip(p.value.data()) {
                    *d += 2.0 * lambda * w;
                }
            }
        }
    }
    Ok((data_sum * inv + lambda * store.weight_sq_norm(), total))
}

/// Mean `J_k` (penalty included) over `triples`.
pub fn mean_triple_loss(model: &ModelConfig, store: &ParamStore, triples: &[ExampleTriple], lambda: f64) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::invalid("no triples to evaluate"));
    }
    let losses: Vec<f64> = triples
        .par_iter()
        .map(|t| triple_loss(model, store, t, 0.0))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / triples.len() as f64 + lambda * store.weight_sq_norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub model: Option<ModelKind>,
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch,train_loss,test_loss,seconds")?;
        for r in &self.records {
            let test = r.test_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{:.3}", r.epoch, r.train_loss, test, r.seconds)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Trains from a seeded initialization on `data.train`, recording the mean
/// train batch loss and the test loss after every epoch.
pub fn train<F>(data: &DatasetSplits, config: &TrainConfig, on_epoch: F) -> Result<(Model, TrainLog)>
where
    F: FnMut(&EpochRecord),
{
    let model = Model::init(config.model.clone(), config.rng_seed)?;
    train_from(model, &data.train, &data.test, config, on_epoch)
}

pub fn train_from<F>(
    mut model: Model,
    train_set: &[ExampleTriple],
    test_set: &[ExampleTriple],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Model, TrainLog)>
where
    F: FnMut(&EpochRecord),
{
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if config.batch_size > train_set.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds training set size {}",
            config.batch_size,
            train_set.len()
        )));
    }
    let opt = SgdParams::from(config);
    let mut state = SgdState::new(&model.params);
    let mut log = TrainLog {
        model: Some(config.model.kind),
        records: Vec::with_capacity(config.epochs),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut epoch_rng(config.rng_seed, epoch));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&ExampleTriple> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_loss(&model.config, &model.params, &batch, config.lambda)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    loss,
                });
            }
            sgd_step(&mut model.params, &grads, &mut state, opt)?;
            if !model.params.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    loss: f64::NAN,
                });
            }
            loss_sum += loss;
            batches += 1;
        }
        let test_loss = if test_set.is_empty() {
            None
        } else {
            Some(mean_triple_loss(&model.config, &model.params, test_set, config.lambda)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            test_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Origin;
    use crate::geometry::{sample, AnalyticSine, Isometry};

    fn one_param(v: f64, kind: ParamKind) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", kind, Tensor::scalar(v)).unwrap();
        s
    }

    fn grads(g: f64) -> ParamGrads {
        let mut out = one_param(0.0, ParamKind::Weight).zero_grads();
        out.tensor_mut(0).data_mut()[0] = g;
        out
    }

    #[test]
    fn momentum_steps() {
        let mut s = one_param(1.0, ParamKind::Weight);
        let mut st = SgdState::new(&s);
        let opt = SgdParams {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut s, &grads(0.5), &mut st, opt).unwrap();
        assert!((st.velocity()[0].item() - 0.5).abs() < 1e-15);
        assert!((s.params()[0].value.item() - 0.95).abs() < 1e-15);
        sgd_step(&mut s, &grads(0.0), &mut st, opt).unwrap();
        assert!((st.velocity()[0].item() - 0.45).abs() < 1e-15);
        assert!((s.params()[0].value.item() - 0.905).abs() < 1e-15);
    }

    #[test]
    fn pure_weight_decay() {
        let opt = SgdParams {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.1,
        };
        let mut s = one_param(1.0, ParamKind::Weight);
        let mut st = SgdState::new(&s);
        sgd_step(&mut s, &grads(0.0), &mut st, opt).unwrap();
        assert!((s.params()[0].value.item() - 0.99).abs() < 1e-15);

        let mut b = one_param(1.0, ParamKind::Bias);
        let mut st = SgdState::new(&b);
        sgd_step(&mut b, &grads(0.0), &mut st, opt).unwrap();
        assert_eq!(b.params()[0].value.item(), 1.0);
    }

    fn line_triple(len: f64, cut: f64) -> ExampleTriple {
        let line = AnalyticSine::new(0.0, 0.0, Isometry::identity(), (0.0, len)).unwrap();
        crate::datagen::triple_with_cut(&line, 200, cut, Origin { seed: 0, index: 0 }).unwrap()
    }

    /// fc2 bias only: O(s) = c for every curve.
    fn constant_model(c: f64) -> (ModelConfig, ParamStore) {
        let cfg = ModelConfig::new(ModelKind::ArcLengthNet);
        let mut s = models::init(&cfg, 0).unwrap();
        for p in s.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        s.get_mut("fc2.bias").unwrap().value.data_mut()[0] = c;
        (cfg, s)
    }

    #[test]
    fn triple_loss_hand_value() {
        // O(s2) = O(s3) = 2.25 makes len1 - O2 - O3 = 5 - 4.5 = 0.5
        let (cfg, s) = constant_model(2.25);
        let t = line_triple(5.0, 2.0);
        assert!((triple_loss(&cfg, &s, &t, 0.0).unwrap() - 0.25).abs() < 1e-12);
        let (v, _) = triple_loss_with_grads(&cfg, &s, &t, 0.0).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn triple_loss_penalty_only() {
        let (cfg, mut s) = constant_model(2.5);
        s.get_mut("fc2.weight").unwrap().value.data_mut()[..2].copy_from_slice(&[3.0, 4.0]);
        let t = line_triple(5.0, 2.5);
        // fc1 output is zero, so fc2 weights do not change the prediction
        let v = triple_loss(&cfg, &s, &t, 0.01).unwrap();
        assert!((v - 0.25).abs() < 1e-12, "{v}");
    }

    #[test]
    fn batch_gradient_is_mean_plus_penalty() {
        let cfg = ModelConfig::new(ModelKind::ArcLengthNet);
        let s = models::init(&cfg, 4).unwrap();
        let a = line_triple(4.0, 1.0);
        let b = line_triple(6.0, 3.5);
        let (loss, g) = batch_loss(&cfg, &s, &[&a, &b], 0.01).unwrap();
        let (la, ga) = triple_loss_with_grads(&cfg, &s, &a, 0.01).unwrap();
        let (lb, gb) = triple_loss_with_grads(&cfg, &s, &b, 0.01).unwrap();
        assert!((loss - 0.5 * (la + lb)).abs() <= 1e-12 * loss.abs());
        let mut sum = ga.clone();
        sum.add_assign(&gb);
        for (x, y) in g.flatten().iter().zip(sum.flatten()) {
            assert!((x - 0.5 * y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} {y}");
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = TrainConfig::new(ModelKind::ArcLengthNet);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(ModelKind::ArcLengthNet);
        assert!(c.set("optimizer", "adam").is_err());
        c.set("model", "lstm").unwrap();
        assert_eq!(c.model.kind, ModelKind::LstmNet);
    }

    #[test]
    fn csv_header() {
        let log = TrainLog {
            model: Some(ModelKind::ArcLengthNet),
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 2.5,
                test_loss: Some(3.0),
                seconds: 0.25,
            }],
        };
        let mut out = Vec::new();
        log.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,train_loss,test_loss,seconds\n1,2.5,3,0.250\n");
    }

    #[test]
    fn sample_helper_is_consistent() {
        let t = line_triple(3.0, 1.0);
        let line = AnalyticSine::new(0.0, 0.0, Isometry::identity(), (0.0, 3.0)).unwrap();
        assert_eq!(t.s1, sample(&line, 200).unwrap());
    }
}
