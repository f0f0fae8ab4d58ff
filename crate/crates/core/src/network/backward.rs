//! Reverse-mode gradients through one recorded rollout.
//!
//! Each recorded step produced an acceleration `a`, and from it a position
//! `x' = x + (v + a dt) dt`. The base state `(x, v)` is treated as constant:
//! it is either observed data or a generated state fed back as input, and fed
//! back states do not carry gradient. Gradient therefore reaches `theta`
//! through `dx'/da` inside each step and through the hidden/cell recurrence
//! across steps.

use super::{NetworkParams, StepTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TapeStep {
    pub(crate) trace: StepTrace,
    /// Sensitivity of the produced position to the step's acceleration:
    /// `dt²`, or 0 when the velocity clamp engaged.
    pub(crate) dx_da: f64,
}

/// Activations of one forward rollout, one entry per decision step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientTape {
    steps: Vec<TapeStep>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, trace: StepTrace, dx_da: f64) {
        self.steps.push(TapeStep { trace, dx_da });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Gradient with the same flat layout as [`NetworkParams::theta`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Exact gradient of `sum_t loss_grads[t] * x'_t` with respect to `theta`,
/// where `x'_t` is the position produced by step `t` of the taped rollout.
///
/// Passing `dL/dx'_t` for each step yields `dL/dtheta`.
pub fn backward_rollout(params: &NetworkParams, tape: &GradientTape, loss_grads: &[f64]) -> Result<Gradients> {
    if loss_grads.len() != tape.len() {
        return Err(Error::Shape(format!(
            "tape has {} steps but {} loss gradients were given",
            tape.len(),
            loss_grads.len()
        )));
    }
    let layout = params.layout();
    let hidden = layout.hidden();
    for step in &tape.steps {
        if step.trace.layers.len() != hidden.len() || step.trace.layers.iter().zip(hidden).any(|(t, &h)| t.i.len() != h)
        {
            return Err(Error::Shape("tape was recorded with a different architecture".into()));
        }
    }

    let theta = params.theta();
    let mut grad = vec![0.0; layout.len()];
    let n_layers = hidden.len();
    let mut dh_next: Vec<Vec<f64>> = hidden.iter().map(|&h| vec![0.0; h]).collect();
    let mut dc_next: Vec<Vec<f64>> = hidden.iter().map(|&h| vec![0.0; h]).collect();
    let (hw, hb) = (layout.head_w, layout.head_b);

    for (step, &dl_dx) in tape.steps.iter().zip(loss_grads).rev() {
        let da = dl_dx * step.dx_da;

        for (k, &h) in step.trace.top_h.iter().enumerate() {
            grad[hw + k] += da * h;
        }
        grad[hb] += da;
        let mut dh_above: Vec<f64> = theta[hw..hb].iter().map(|w| da * w).collect();

        for l in (0..n_layers).rev() {
            let (w_off, b_off, in_dim, h) = layout.layers[l];
            let cols = in_dim + h;
            let tr = &step.trace.layers[l];

            let mut dz = vec![0.0; 4 * h];
            for k in 0..h {
                let dh = dh_above[k] + dh_next[l][k];
                let d_o = dh * tr.tanh_c[k];
                let dc = dh * tr.o[k] * (1.0 - tr.tanh_c[k] * tr.tanh_c[k]) + dc_next[l][k];
                let d_i = dc * tr.g[k];
                let d_g = dc * tr.i[k];
                let d_f = dc * tr.c_prev[k];
                dc_next[l][k] = dc * tr.f[k];
                dz[k] = d_i * tr.i[k] * (1.0 - tr.i[k]);
                dz[h + k] = d_f * tr.f[k] * (1.0 - tr.f[k]);
                dz[2 * h + k] = d_g * (1.0 - tr.g[k] * tr.g[k]);
                dz[3 * h + k] = d_o * tr.o[k] * (1.0 - tr.o[k]);
            }

            let mut d_concat = vec![0.0; cols];
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                grad[b_off + r] += dzr;
                let row = w_off + r * cols;
                for c in 0..cols {
                    grad[row + c] += dzr * tr.concat[c];
                    d_concat[c] += dzr * theta[row + c];
                }
            }
            dh_next[l] = d_concat[in_dim..].to_vec();
            // Layer 0 input is observation data; its gradient is dropped.
            dh_above = d_concat[..in_dim].to_vec();
        }
    }

    let grads = Gradients { values: grad };
    if !grads.is_finite() {
        return Err(Error::non_finite("backward pass"));
    }
    Ok(grads)
}
