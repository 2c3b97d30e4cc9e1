//! The two length regressors.
//!
//! Both read a curve as a `2 x N` tensor (row 0 the x coordinates, row 1 the
//! y coordinates) and output one scalar:
//!
//! - `ArcLengthNet`: conv1d (kernel 3, valid) -> flatten -> fc(10) -> ReLU -> fc(1)
//! - `LstmNet`: LSTM over the N points (hidden 4) -> concat of all hidden
//!   states -> fc(10) -> ReLU -> fc(1)
//!
//! By default the curve is translated so its centroid sits at the origin
//! before encoding; see [`ModelConfig::center_input`].

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamKind, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::SampledCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    ArcLengthNet,
    LstmNet,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::ArcLengthNet => "arclengthnet",
            ModelKind::LstmNet => "lstm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arclengthnet" | "arclength" | "cnn" => Ok(ModelKind::ArcLengthNet),
            "lstm" | "lstmnet" => Ok(ModelKind::LstmNet),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub n_points: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub lstm_hidden: usize,
    pub fc_hidden: usize,
    /// Subtract the curve centroid before the first layer. Without it, raw
    /// coordinates several units from the origin make SGD at lr 1e-3 diverge.
    pub center_input: bool,
    /// Factor applied to the (centred) coordinates before the first layer.
    #[serde(default = "unit_scale")]
    pub input_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            n_points: 200,
            conv_channels: 8,
            conv_kernel: 3,
            lstm_hidden: 4,
            fc_hidden: 10,
            center_input: true,
            input_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::invalid("input_scale must be positive"));
        }
        if self.n_points < 2 || self.fc_hidden == 0 {
            return Err(Error::invalid("model needs n_points >= 2 and fc_hidden > 0"));
        }
        match self.kind {
            ModelKind::ArcLengthNet => {
                if self.conv_channels == 0 || self.conv_kernel == 0 || self.conv_kernel > self.n_points {
                    return Err(Error::invalid("bad convolution settings"));
                }
            }
            ModelKind::LstmNet => {
                if self.lstm_hidden == 0 {
                    return Err(Error::invalid("lstm_hidden must be positive"));
                }
            }
        }
        Ok(())
    }

    /// `(name, shape, kind)` for every tensor, in store order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>, ParamKind)> {
        use ParamKind::{Bias, Weight};
        let head_in = match self.kind {
            ModelKind::ArcLengthNet => self.conv_channels * (self.n_points - self.conv_kernel + 1),
            ModelKind::LstmNet => self.lstm_hidden * self.n_points,
        };
        let mut out = match self.kind {
            ModelKind::ArcLengthNet => vec![
                ("conv.weight", vec![self.conv_channels, 2, self.conv_kernel], Weight),
                ("conv.bias", vec![self.conv_channels], Bias),
            ],
            ModelKind::LstmNet => vec![
                ("lstm.weight_ih", vec![4 * self.lstm_hidden, 2], Weight),
                ("lstm.weight_hh", vec![4 * self.lstm_hidden, self.lstm_hidden], Weight),
                ("lstm.bias", vec![4 * self.lstm_hidden], Bias),
            ],
        };
        out.extend([
            ("fc1.weight", vec![self.fc_hidden, head_in], Weight),
            ("fc1.bias", vec![self.fc_hidden], Bias),
            ("fc2.weight", vec![1, self.fc_hidden], Weight),
            ("fc2.bias", vec![1], Bias),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in the product of
/// all but the leading dimension; biases zero.
pub fn init(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, kind) in config.layout() {
        let n: usize = shape.iter().product();
        let data = match kind {
            ParamKind::Bias => vec![0.0; n],
            ParamKind::Weight => {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (1.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        store.insert(name, kind, Tensor::new(&shape, data)?)?;
    }
    Ok(store)
}

/// Parameters of one model registered on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

/// Registers the store's parameters on `tape`, checking them against `config`.
pub fn bind(tape: &mut Tape, config: &ModelConfig, store: &ParamStore) -> Result<Bound> {
    let vars = config
        .layout()
        .into_iter()
        .map(|(name, shape, _)| {
            let var = tape.param(store, name)?;
            if tape.value(var).shape() != shape.as_slice() {
                return Err(Error::invalid(format!(
                    "parameter {name} has shape {:?}, model expects {shape:?}",
                    tape.value(var).shape()
                )));
            }
            Ok(var)
        })
        .collect::<Result<_>>()?;
    Ok(Bound { vars })
}

/// The `2 x N` input tensor for `curve`.
pub fn encode_curve(config: &ModelConfig, curve: &SampledCurve) -> Result<Tensor> {
    let n = config.n_points;
    if curve.len() != n {
        return Err(Error::invalid(format!(
            "model expects {n}-point curves, got {}",
            curve.len()
        )));
    }
    let shift = if config.center_input {
        curve.centroid()
    } else {
        crate::geometry::Point2::ORIGIN
    };
    let mut data = Vec::with_capacity(2 * n);
    let k = config.input_scale;
    data.extend(curve.xs().map(|x| (x - shift.x) * k));
    data.extend(curve.ys().map(|y| (y - shift.y) * k));
    Tensor::new(&[2, n], data)
}

/// Builds the forward graph for one curve and returns the `[1]` prediction node.
pub fn forward(tape: &mut Tape, config: &ModelConfig, bound: &Bound, curve: &SampledCurve) -> Result<Var> {
    let input = encode_curve(config, curve)?;
    let v = &bound.vars;
    let (features, head) = match config.kind {
        ModelKind::ArcLengthNet => {
            let x = tape.constant(input);
            let conv = tape.conv1d(x, v[0], v[1])?;
            (tape.flatten(conv), &v[2..])
        }
        ModelKind::LstmNet => {
            let hd = config.lstm_hidden;
            let n = config.n_points;
            let mut h = tape.constant(Tensor::zeros(&[hd]));
            let mut c = tape.constant(Tensor::zeros(&[hd]));
            let mut hidden = Vec::with_capacity(n);
            let coords = input.data();
            for t in 0..n {
                let x = tape.constant(Tensor::vector(vec![coords[t], coords[n + t]]));
                (h, c) = tape.lstm_cell(x, h, c, v[0], v[1], v[2])?;
                hidden.push(h);
            }
            (tape.concat(&hidden)?, &v[3..])
        }
    };
    let fc1 = tape.affine(features, head[0], head[1])?;
    let act = tape.relu(fc1);
    tape.affine(act, head[2], head[3])
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        bind(&mut Tape::new(), &config, &params)?;
        Ok(Model { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn predict(&self, curve: &SampledCurve) -> Result<f64> {
        predict(&self.config, &self.params, curve)
    }
}

pub fn predict(config: &ModelConfig, store: &ParamStore, curve: &SampledCurve) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, config, store)?;
    let out = forward(&mut tape, config, &bound, curve)?;
    Ok(tape.value(out).item())
}

pub fn forward_arclengthnet(store: &ParamStore, curve: &SampledCurve) -> Result<f64> {
    predict(&ModelConfig::new(ModelKind::ArcLengthNet), store, curve)
}

pub fn forward_lstmnet(store: &ParamStore, curve: &SampledCurve) -> Result<f64> {
    predict(&ModelConfig::new(ModelKind::LstmNet), store, curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Hash of the dataset spec the parameters were trained on.
    pub data_spec_hash: String,
}

pub fn save_checkpoint(path: &Path, model: &Model, data_spec_hash: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, data_spec_hash)?;
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model, data_spec_hash: &str) -> Result<()> {
    let meta = CheckpointMeta {
        model: model.config.clone(),
        data_spec_hash: data_spec_hash.to_string(),
    };
    model.params.write(w, &meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    let (params, meta): (ParamStore, CheckpointMeta) = ParamStore::read(&bytes)?;
    let model = Model::new(meta.model.clone(), params).map_err(|e| Error::malformed(e.to_string()))?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample, AnalyticSine, Isometry, Point2};

    fn curve(seed: f64) -> SampledCurve {
        let sine = AnalyticSine::new(1.0 + seed, seed, Isometry::new(seed, Point2::new(seed, -1.0)), (0.0, 5.0)).unwrap();
        sample(&sine, 200).unwrap()
    }

    fn zeroed(kind: ModelKind) -> ParamStore {
        let mut s = init(&ModelConfig::new(kind), 0).unwrap();
        for p in s.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        s
    }

    #[test]
    fn parameter_counts_are_frozen() {
        assert_eq!(ModelConfig::new(ModelKind::ArcLengthNet).param_count(), 15_917);
        assert_eq!(ModelConfig::new(ModelKind::LstmNet).param_count(), 8_133);
        let s = init(&ModelConfig::new(ModelKind::LstmNet), 1).unwrap();
        assert_eq!(s.num_scalars(), 8_133);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::new(ModelKind::ArcLengthNet);
        assert_eq!(init(&cfg, 5).unwrap(), init(&cfg, 5).unwrap());
        assert_ne!(init(&cfg, 5).unwrap(), init(&cfg, 6).unwrap());
    }

    #[test]
    fn init_bounds() {
        let s = init(&ModelConfig::new(ModelKind::ArcLengthNet), 3).unwrap();
        let fc2 = &s.get("fc2.weight").unwrap().value;
        assert!(fc2.data().iter().all(|v| v.abs() <= 0.3163));
        assert!(s.get("fc1.bias").unwrap().value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_predict_zero() {
        for kind in [ModelKind::ArcLengthNet, ModelKind::LstmNet] {
            let s = zeroed(kind);
            let cfg = ModelConfig::new(kind);
            assert_eq!(predict(&cfg, &s, &curve(0.3)).unwrap(), 0.0);
        }
    }

    #[test]
    fn constant_path() {
        let mut s = zeroed(ModelKind::ArcLengthNet);
        s.get_mut("fc1.bias").unwrap().value.data_mut()[0] = 1.0;
        s.get_mut("fc2.weight").unwrap().value.data_mut()[0] = 7.0;
        for k in [0.1, 0.7, 1.9] {
            assert_eq!(forward_arclengthnet(&s, &curve(k)).unwrap(), 7.0);
        }
    }

    #[test]
    fn wrong_length_rejected() {
        let s = init(&ModelConfig::new(ModelKind::ArcLengthNet), 0).unwrap();
        let short = SampledCurve::from_coords(&[0.0, 1.0, 2.0], &[0.0; 3]).unwrap();
        assert!(matches!(forward_arclengthnet(&s, &short), Err(Error::InvalidArgument(_))));
        let s = init(&ModelConfig::new(ModelKind::LstmNet), 0).unwrap();
        assert!(forward_lstmnet(&s, &short).is_err());
    }

    #[test]
    fn lstm_sees_order() {
        let s = init(&ModelConfig::new(ModelKind::LstmNet), 11).unwrap();
        let c = curve(0.4);
        let mut rev = c.points().to_vec();
        rev.reverse();
        let r = SampledCurve::new(rev).unwrap();
        assert_ne!(forward_lstmnet(&s, &c).unwrap(), forward_lstmnet(&s, &r).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = Model::init(ModelConfig::new(ModelKind::LstmNet), 2).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, "abc").unwrap();
        let (params, meta): (ParamStore, CheckpointMeta) = ParamStore::read(&buf).unwrap();
        assert_eq!(params, model.params);
        assert_eq!(meta.model, model.config);
        assert_eq!(meta.data_spec_hash, "abc");
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("lstm".parse::<ModelKind>().unwrap(), ModelKind::LstmNet);
        assert_eq!("ArcLengthNet".parse::<ModelKind>().unwrap(), ModelKind::ArcLengthNet);
        assert!("mlp".parse::<ModelKind>().is_err());
    }
}
