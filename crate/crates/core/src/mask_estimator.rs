//! Recurrent mask estimator: log-magnitude features of one channel in,
//! three sigmoid masks per speaker out. Built entirely from tape primitives
//! so the training loss can reach every parameter.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::beamforming::MaskSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub num_speakers: usize,
    pub num_bins: usize,
    pub recurrent_layers: usize,
    pub hidden_units: usize,
    pub bidirectional: bool,
    /// Fixed at 2: one width-preserving layer, one expansion layer.
    pub projection_layers: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            num_speakers: 2,
            num_bins: 129,
            recurrent_layers: 1,
            hidden_units: 64,
            bidirectional: true,
            projection_layers: 2,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0
            || self.num_bins == 0
            || self.recurrent_layers == 0
            || self.hidden_units == 0
        {
            return Err(Error::Config(
                "net config dimensions must all be nonzero".into(),
            ));
        }
        if self.projection_layers != 2 {
            return Err(Error::Config(
                "projection_layers is fixed at 2 in this architecture".into(),
            ));
        }
        Ok(())
    }

    /// Width of the second projection: `F · 3 · I`.
    pub fn output_width(&self) -> usize {
        self.num_bins * 3 * self.num_speakers
    }

    fn recurrent_width(&self) -> usize {
        self.hidden_units * if self.bidirectional { 2 } else { 1 }
    }

    fn directions(&self) -> &'static [&'static str] {
        if self.bidirectional {
            &["fwd", "bwd"]
        } else {
            &["fwd"]
        }
    }

    /// (name, shape, fan_in) of every parameter, fixed order.
    fn parameter_plan(&self) -> Vec<(String, Vec<usize>, usize)> {
        let h = self.hidden_units;
        let mut plan = Vec::new();
        let mut in_width = self.num_bins;
        for layer in 0..self.recurrent_layers {
            for dir in self.directions() {
                plan.push((format!("lstm{layer}.{dir}.w_ih"), vec![4 * h, in_width], in_width));
                plan.push((format!("lstm{layer}.{dir}.w_hh"), vec![4 * h, h], h));
                plan.push((format!("lstm{layer}.{dir}.bias"), vec![4 * h], h));
            }
            in_width = self.recurrent_width();
        }
        let w1 = self.recurrent_width();
        plan.push(("proj1.weight".into(), vec![w1, w1], w1));
        plan.push(("proj1.bias".into(), vec![w1], w1));
        plan.push(("proj2.weight".into(), vec![self.output_width(), w1], w1));
        plan.push(("proj2.bias".into(), vec![self.output_width()], w1));
        plan
    }
}

/// Named parameter arrays. Map order is the deterministic checkpoint and
/// update order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    arrays: BTreeMap<String, ArrayD<f64>>,
}

impl Parameters {
    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.arrays.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.arrays.iter_mut()
    }

    pub fn from_map(arrays: BTreeMap<String, ArrayD<f64>>) -> Self {
        Parameters { arrays }
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    /// Attach every parameter to a tape as a trainable leaf.
    pub fn attach(&self, tape: &Tape) -> AttachedParams {
        AttachedParams {
            tensors: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Wrap every parameter as a constant (inference path).
    pub fn attach_const(&self) -> AttachedParams {
        AttachedParams {
            tensors: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::constant(v.clone())))
                .collect(),
        }
    }
}

/// Parameters bound to tensors (leaves or constants) for one forward pass.
pub struct AttachedParams {
    tensors: BTreeMap<String, Tensor>,
}

impl AttachedParams {
    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        AttachedParams { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }
}

/// Uniform init scaled by 1/sqrt(fan_in), reproducible from the seed.
pub fn init_params(config: &NetConfig) -> Result<Parameters> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut arrays = BTreeMap::new();
    for (name, shape, fan_in) in config.parameter_plan() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let arr = ArrayD::from_shape_fn(IxDyn(&shape), |_| rng.gen_range(-bound..bound));
        arrays.insert(name, arr);
    }
    Ok(Parameters { arrays })
}

/// Per-bin mean/variance normalization of the log features over the
/// utterance, applied before the network.
pub fn normalize_features(features: &Array2<f64>) -> Array2<f64> {
    let t = features.nrows().max(1) as f64;
    let mut out = features.clone();
    for f in 0..features.ncols() {
        let col = features.column(f);
        let mean = col.sum() / t;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t;
        let std = var.sqrt() + 1e-8;
        for v in out.column_mut(f) {
            *v = (*v - mean) / std;
        }
    }
    out
}

struct LstmDirection<'a> {
    w_ih_t: Tensor,
    w_hh_t: Tensor,
    bias: &'a Tensor,
}

fn run_direction(
    x: &Tensor,
    dir: &LstmDirection,
    hidden: usize,
    frames: usize,
    reverse: bool,
) -> Result<Vec<Tensor>> {
    let pre = x.matmul(&dir.w_ih_t)?;
    let mut h = Tensor::constant(ArrayD::zeros(IxDyn(&[1, hidden])));
    let mut c = Tensor::constant(ArrayD::zeros(IxDyn(&[1, hidden])));
    let mut outputs = vec![None; frames];
    let order: Vec<usize> = if reverse {
        (0..frames).rev().collect()
    } else {
        (0..frames).collect()
    };
    for t in order {
        let gates = pre
            .slice2(t..t + 1, 0..4 * hidden)?
            .add(&h.matmul(&dir.w_hh_t)?)?
            .add(dir.bias)?;
        let i_gate = gates.slice2(0..1, 0..hidden)?.sigmoid();
        let f_gate = gates.slice2(0..1, hidden..2 * hidden)?.sigmoid();
        let g_gate = gates.slice2(0..1, 2 * hidden..3 * hidden)?.tanh();
        let o_gate = gates.slice2(0..1, 3 * hidden..4 * hidden)?.sigmoid();
        c = f_gate.mul(&c)?.add(&i_gate.mul(&g_gate)?)?;
        h = o_gate.mul(&c.tanh())?;
        outputs[t] = Some(h.clone());
    }
    Ok(outputs.into_iter().map(|o| o.unwrap()).collect())
}

/// Run the recurrent stack and projections; returns three masks per speaker
/// with values strictly in (0, 1).
pub fn forward(
    config: &NetConfig,
    params: &AttachedParams,
    features: &Array2<f64>,
) -> Result<MaskSet> {
    config.validate()?;
    if features.ncols() != config.num_bins {
        return Err(Error::ShapeMismatch {
            op: "mask_forward",
            lhs: vec![features.nrows(), config.num_bins],
            rhs: vec![features.nrows(), features.ncols()],
        });
    }
    let frames = features.nrows();
    let h = config.hidden_units;
    let mut x = Tensor::constant(features.clone().into_dyn());

    for layer in 0..config.recurrent_layers {
        let mut direction_outputs = Vec::new();
        for (d, dir_name) in config.directions().iter().enumerate() {
            let dir = LstmDirection {
                w_ih_t: params.get(&format!("lstm{layer}.{dir_name}.w_ih"))?.transpose()?,
                w_hh_t: params.get(&format!("lstm{layer}.{dir_name}.w_hh"))?.transpose()?,
                bias: params.get(&format!("lstm{layer}.{dir_name}.bias"))?,
            };
            let hs = run_direction(&x, &dir, h, frames, d == 1)?;
            direction_outputs.push(Tensor::concat(&hs, 0)?);
        }
        x = if direction_outputs.len() == 2 {
            Tensor::concat(&direction_outputs, 1)?
        } else {
            direction_outputs.pop().unwrap()
        };
    }

    let y = x
        .matmul(&params.get("proj1.weight")?.transpose()?)?
        .add(params.get("proj1.bias")?)?
        .tanh();
    let z = y
        .matmul(&params.get("proj2.weight")?.transpose()?)?
        .add(params.get("proj2.bias")?)?
        .sigmoid();

    // column layout: (kind·I + speaker)·F + bin
    let (f_bins, speakers) = (config.num_bins, config.num_speakers);
    let mut kinds: [Vec<Tensor>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (k, bucket) in kinds.iter_mut().enumerate() {
        for i in 0..speakers {
            let start = (k * speakers + i) * f_bins;
            bucket.push(z.slice2(0..frames, start..start + f_bins)?);
        }
    }
    MaskSet::new(kinds)
}
