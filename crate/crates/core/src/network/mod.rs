//! Stacked LSTM car-following network with a scalar acceleration head.
//!
//! All trainable values live in one flat vector (`theta`) so the optimizer and
//! the finite-difference oracle can treat them uniformly. [`Layout`] maps
//! named blocks onto that vector:
//!
//! * per layer `l`: `W_l` with shape `(4 H_l) x (in_l + H_l)` in row-major
//!   order, gate rows ordered input, forget, candidate, output; then `b_l`
//!   with `4 H_l` entries in the same gate order;
//! * head: `w` with `H_last` entries, then a scalar bias.

mod backward;
mod gradcheck;
mod io;
mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::ObservationFeatures;

pub use backward::{backward_rollout, GradientTape, Gradients, TapeStep};
pub use gradcheck::{finite_difference_gradient, gradient_check, BlockError, GradCheckConfig, GradCheckReport};
pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use optim::{optimizer_update, AdamConfig, OptimizerKind, OptimizerState};

/// Number of observation features fed to the first layer.
pub const INPUT_DIM: usize = 3;

/// Hidden widths of the stacked layers used in the experiments.
pub const DEFAULT_HIDDEN: [usize; 3] = [10, 10, 5];

/// Z-score constants applied to raw observations before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: [f64; INPUT_DIM],
    pub std: [f64; INPUT_DIM],
}

impl Default for FeatureNorm {
    fn default() -> Self {
        Self {
            mean: [0.0; INPUT_DIM],
            std: [1.0; INPUT_DIM],
        }
    }
}

impl FeatureNorm {
    /// Mean and population standard deviation of each feature. A feature with
    /// zero spread keeps std 1 so normalization stays defined.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a ObservationFeatures>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; INPUT_DIM];
        let mut sum_sq = [0.0; INPUT_DIM];
        for s in samples {
            for (j, value) in s.as_array().into_iter().enumerate() {
                sum[j] += value;
                sum_sq[j] += value * value;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Data("cannot fit feature normalization on zero samples".into()));
        }
        let mut norm = FeatureNorm::default();
        for j in 0..INPUT_DIM {
            let mean = sum[j] / n as f64;
            let var = (sum_sq[j] / n as f64 - mean * mean).max(0.0);
            norm.mean[j] = mean;
            norm.std[j] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(norm)
    }

    pub fn apply(&self, obs: &ObservationFeatures) -> [f64; INPUT_DIM] {
        let raw = obs.as_array();
        std::array::from_fn(|j| (raw[j] - self.mean[j]) / self.std[j])
    }

    fn validate(&self) -> Result<()> {
        let finite = self.mean.iter().chain(&self.std).all(|v| v.is_finite());
        if !finite || self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config(
                "normalization constants must be finite with std > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A contiguous named slice of `theta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Offsets of every layer's weights inside `theta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    hidden: Vec<usize>,
    /// `(w_offset, b_offset, in_dim, hidden)` per layer.
    layers: Vec<(usize, usize, usize, usize)>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    pub fn new(hidden: &[usize]) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!("invalid hidden layer sizes {hidden:?}")));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut offset = 0;
        let mut in_dim = INPUT_DIM;
        for &h in hidden {
            let w = offset;
            let b = w + 4 * h * (in_dim + h);
            offset = b + 4 * h;
            layers.push((w, b, in_dim, h));
            in_dim = h;
        }
        let head_w = offset;
        let head_b = head_w + in_dim;
        Ok(Self {
            hidden: hidden.to_vec(),
            layers,
            head_w,
            head_b,
            total: head_b + 1,
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        for (l, &(w, b, in_dim, h)) in self.layers.iter().enumerate() {
            out.push(Block {
                name: format!("lstm{l}.weight"),
                offset: w,
                len: 4 * h * (in_dim + h),
            });
            out.push(Block {
                name: format!("lstm{l}.bias"),
                offset: b,
                len: 4 * h,
            });
        }
        out.push(Block {
            name: "head.weight".into(),
            offset: self.head_w,
            len: self.head_b - self.head_w,
        });
        out.push(Block {
            name: "head.bias".into(),
            offset: self.head_b,
            len: 1,
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct NetworkParams {
    layout: Layout,
    theta: Vec<f64>,
    pub norm: FeatureNorm,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    hidden: Vec<usize>,
    norm: FeatureNorm,
    theta: Vec<f64>,
}

impl TryFrom<ParamsRepr> for NetworkParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        NetworkParams::from_theta(&r.hidden, r.theta, r.norm)
    }
}

impl From<NetworkParams> for ParamsRepr {
    fn from(p: NetworkParams) -> Self {
        ParamsRepr {
            hidden: p.layout.hidden,
            norm: p.norm,
            theta: p.theta,
        }
    }
}

impl NetworkParams {
    /// Every weight and bias zero, identity normalization.
    pub fn zeros(hidden: &[usize]) -> Self {
        let layout = Layout::new(hidden).expect("valid hidden sizes");
        let theta = vec![0.0; layout.len()];
        Self {
            layout,
            theta,
            norm: FeatureNorm::default(),
        }
    }

    pub fn from_theta(hidden: &[usize], theta: Vec<f64>, norm: FeatureNorm) -> Result<Self> {
        let layout = Layout::new(hidden)?;
        if theta.len() != layout.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters for layers {hidden:?}, got {}",
                layout.len(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("network parameters"));
        }
        norm.validate()?;
        Ok(Self { layout, theta, norm })
    }

    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases
    /// except the forget gate (1.0).
    pub fn init(hidden: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros_checked(hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(w, b, in_dim, h) in &params.layout.layers.clone() {
            let fan_in = in_dim + h;
            let r = 1.0 / (fan_in as f64).sqrt();
            for v in &mut params.theta[w..w + 4 * h * fan_in] {
                *v = rng.random_range(-r..=r);
            }
            for v in &mut params.theta[b + h..b + 2 * h] {
                *v = 1.0;
            }
        }
        let (hw, hb) = (params.layout.head_w, params.layout.head_b);
        let r = 1.0 / ((hb - hw) as f64).sqrt();
        for v in &mut params.theta[hw..hb] {
            *v = rng.random_range(-r..=r);
        }
        Ok(params)
    }

    fn zeros_checked(hidden: &[usize]) -> Result<Self> {
        Layout::new(hidden)?;
        Ok(Self::zeros(hidden))
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        self.layout.hidden()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn with_norm(mut self, norm: FeatureNorm) -> Self {
        self.norm = norm;
        self
    }
}

/// Network with the experiment architecture (10, 10, 5).
pub fn init_params(seed: u64) -> NetworkParams {
    NetworkParams::init(&DEFAULT_HIDDEN, seed).expect("default architecture is valid")
}

/// Hidden and cell vectors of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmMemory {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmMemory {
    pub fn zeros(hidden: &[usize]) -> Self {
        Self {
            h: hidden.iter().map(|&n| vec![0.0; n]).collect(),
            c: hidden.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn matches(&self, hidden: &[usize]) -> bool {
        self.h.len() == hidden.len()
            && self.c.len() == hidden.len()
            && self.h.iter().zip(hidden).all(|(v, &n)| v.len() == n)
            && self.c.iter().zip(hidden).all(|(v, &n)| v.len() == n)
    }
}

/// Activations of one layer at one step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerTrace {
    /// `[x; h_prev]`.
    pub concat: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StepTrace {
    pub layers: Vec<LayerTrace>,
    /// Hidden vector of the top layer, input of the head.
    pub top_h: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Runs the stack on an already-normalized input. Returns the acceleration,
/// the next memory and the full activation trace.
pub(crate) fn forward_traced(
    params: &NetworkParams,
    input: &[f64; INPUT_DIM],
    mem: &LstmMemory,
) -> Result<(f64, LstmMemory, StepTrace)> {
    let hidden = params.hidden_sizes();
    if !mem.matches(hidden) {
        return Err(Error::Shape(format!("memory does not match network layers {hidden:?}")));
    }
    let theta = &params.theta;
    let mut next = LstmMemory {
        h: Vec::with_capacity(hidden.len()),
        c: Vec::with_capacity(hidden.len()),
    };
    let mut layers = Vec::with_capacity(hidden.len());
    let mut x: Vec<f64> = input.to_vec();

    for (l, &(w_off, b_off, in_dim, h)) in params.layout.layers.iter().enumerate() {
        let cols = in_dim + h;
        let mut concat = Vec::with_capacity(cols);
        concat.extend_from_slice(&x);
        concat.extend_from_slice(&mem.h[l]);

        let mut z = theta[b_off..b_off + 4 * h].to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            let row = &theta[w_off + r * cols..w_off + (r + 1) * cols];
            *zr += row.iter().zip(&concat).map(|(w, v)| w * v).sum::<f64>();
        }

        let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..h).map(|k| f[k] * mem.c[l][k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h_out: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();

        layers.push(LayerTrace {
            concat,
            c_prev: mem.c[l].clone(),
            i,
            f,
            g,
            o,
            tanh_c,
        });
        next.c.push(c);
        next.h.push(h_out.clone());
        x = h_out;
    }

    let (hw, hb) = (params.layout.head_w, params.layout.head_b);
    let accel = theta[hb] + theta[hw..hb].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
    if !accel.is_finite() {
        return Err(Error::non_finite("network output"));
    }
    Ok((accel, next, StepTrace { layers, top_h: x }))
}

/// One decision of the LSTM car-following function: normalize, run the
/// stacked cells, apply the linear head.
pub fn forward_step(params: &NetworkParams, obs: &ObservationFeatures, mem: &LstmMemory) -> Result<(f64, LstmMemory)> {
    let input = params.norm.apply(obs);
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("network input"));
    }
    forward_traced(params, &input, mem).map(|(a, m, _)| (a, m))
}
