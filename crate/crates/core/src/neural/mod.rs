//! From-scratch recurrent cells (simple RNN, GRU, LSTM) with a one-neuron
//! dense head, MAE loss with target masking, backpropagation through time,
//! the Adam optimizer, and a finite-difference gradient checker.
//!
//! Gate order is fixed for serialization stability: GRU stores update,
//! reset, candidate; LSTM stores input, forget, cell, output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::orthonormalize_rows;
use crate::{Error, Result, Scalar};

mod bptt;

pub use bptt::{backward, cell_step, forward, forward_states, mae_loss, CellState};

/// Repeater-block transfer function selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    SimpleRnn,
    Gru,
    Lstm,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::SimpleRnn, CellKind::Gru, CellKind::Lstm];

    pub fn gate_count(&self) -> usize {
        match self {
            CellKind::SimpleRnn => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CellKind::SimpleRnn => "simple",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" | "rnn" | "simplernn" | "simple_rnn" => Some(CellKind::SimpleRnn),
            "gru" => Some(CellKind::Gru),
            "lstm" => Some(CellKind::Lstm),
            _ => None,
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One gate's weights: input column `w_x` (H), recurrent matrix `w_h`
/// (H×H, row-major), bias `b` (H).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWeights<S: Scalar> {
    pub w_x: Vec<S>,
    pub w_h: Vec<S>,
    pub b: Vec<S>,
}

impl<S: Scalar> GateWeights<S> {
    fn zeros(hidden: usize) -> Self {
        GateWeights {
            w_x: vec![S::zero(); hidden],
            w_h: vec![S::zero(); hidden * hidden],
            b: vec![S::zero(); hidden],
        }
    }
}

/// Trainable state: gate weights in the documented order plus the dense
/// head. Doubles as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<S: Scalar> {
    pub cell_kind: CellKind,
    pub hidden_size: usize,
    pub gates: Vec<GateWeights<S>>,
    pub dense_weight: Vec<S>,
    pub dense_bias: S,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(cell_kind: CellKind, hidden_size: usize) -> Self {
        ModelParams {
            cell_kind,
            hidden_size,
            gates: (0..cell_kind.gate_count())
                .map(|_| GateWeights::zeros(hidden_size))
                .collect(),
            dense_weight: vec![S::zero(); hidden_size],
            dense_bias: S::zero(),
        }
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_size;
        self.gates.len() * (h + h * h + h) + h + 1
    }

    /// Flat view in the documented order: per gate w_x, w_h, b; then
    /// dense_weight, dense_bias.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for g in &self.gates {
            out.extend_from_slice(&g.w_x);
            out.extend_from_slice(&g.w_h);
            out.extend_from_slice(&g.b);
        }
        out.extend_from_slice(&self.dense_weight);
        out.push(self.dense_bias);
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[S]) {
        assert_eq!(flat.len(), self.param_count());
        let mut at = 0usize;
        let take = |dst: &mut [S], at: &mut usize| {
            dst.copy_from_slice(&flat[*at..*at + dst.len()]);
            *at += dst.len();
        };
        for g in &mut self.gates {
            take(&mut g.w_x, &mut at);
            take(&mut g.w_h, &mut at);
            take(&mut g.b, &mut at);
        }
        take(&mut self.dense_weight, &mut at);
        self.dense_bias = flat[at];
    }

    /// Named flat index ranges, for per-block gradient-check reporting.
    pub fn block_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let h = self.hidden_size;
        let gate_names: &[&str] = match self.cell_kind {
            CellKind::SimpleRnn => &[""],
            CellKind::Gru => &["update.", "reset.", "candidate."],
            CellKind::Lstm => &["input.", "forget.", "cell.", "output."],
        };
        let mut out = Vec::new();
        let mut at = 0usize;
        for name in gate_names {
            out.push((format!("{name}w_x"), at..at + h));
            at += h;
            out.push((format!("{name}w_h"), at..at + h * h));
            at += h * h;
            out.push((format!("{name}b"), at..at + h));
            at += h;
        }
        out.push(("dense_weight".into(), at..at + h));
        at += h;
        out.push(("dense_bias".into(), at..at + 1));
        out
    }

    pub fn scale_in_place(&mut self, factor: S) {
        for g in &mut self.gates {
            for v in g.w_x.iter_mut().chain(g.w_h.iter_mut()).chain(g.b.iter_mut()) {
                *v = *v * factor;
            }
        }
        for v in self.dense_weight.iter_mut() {
            *v = *v * factor;
        }
        self.dense_bias = self.dense_bias * factor;
    }

    pub fn add_in_place(&mut self, other: &ModelParams<S>) {
        let mut flat = self.flatten();
        for (a, b) in flat.iter_mut().zip(other.flatten()) {
            *a = *a + b;
        }
        self.assign_from_flat(&flat);
    }
}

/// Glorot-uniform input/dense weights, orthogonal recurrent weights, zero
/// biases except the LSTM forget-gate bias of 1.
pub fn init_params<S: Scalar>(cell_kind: CellKind, hidden_size: usize, seed: u64) -> ModelParams<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = hidden_size;
    let mut params = ModelParams::zeros(cell_kind, h);
    let limit_in = (6.0 / (1.0 + h as f64)).sqrt();
    for (gi, gate) in params.gates.iter_mut().enumerate() {
        for v in gate.w_x.iter_mut() {
            *v = S::from_f64_lossy(rng.gen_range(-limit_in..limit_in));
        }
        let mut ortho = vec![S::zero(); h * h];
        for v in ortho.iter_mut() {
            // Box-Muller standard normal
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            *v = S::from_f64_lossy(
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos(),
            );
        }
        orthonormalize_rows(h, &mut ortho);
        gate.w_h = ortho;
        if cell_kind == CellKind::Lstm && gi == 1 {
            gate.b = vec![S::one(); h]; // forget gate
        }
    }
    let limit_dense = (6.0 / (h as f64 + 1.0)).sqrt();
    for v in params.dense_weight.iter_mut() {
        *v = S::from_f64_lossy(rng.gen_range(-limit_dense..limit_dense));
    }
    params
}

/// Adam state over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<S: Scalar> {
    pub step_count: u64,
    pub first_moment: Vec<S>,
    pub second_moment: Vec<S>,
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(param_count: usize, learning_rate: S) -> Self {
        AdamState {
            step_count: 0,
            first_moment: vec![S::zero(); param_count],
            second_moment: vec![S::zero(); param_count],
            learning_rate,
            beta1: S::from_f64_lossy(0.9),
            beta2: S::from_f64_lossy(0.999),
            epsilon: S::from_f64_lossy(1e-8),
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step<S: Scalar>(
    params: &mut ModelParams<S>,
    gradients: &ModelParams<S>,
    state: &mut AdamState<S>,
) {
    let mut flat = params.flatten();
    let grad = gradients.flatten();
    assert_eq!(flat.len(), grad.len());
    assert_eq!(flat.len(), state.first_moment.len());
    state.step_count += 1;
    let t = state.step_count as i32;
    let one = S::one();
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);
    for i in 0..flat.len() {
        let g = grad[i];
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (one - state.beta1) * g;
        state.second_moment[i] =
            state.beta2 * state.second_moment[i] + (one - state.beta2) * g * g;
        let m_hat = state.first_moment[i] / bc1;
        let v_hat = state.second_moment[i] / bc2;
        flat[i] = flat[i] - state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    params.assign_from_flat(&flat);
}

/// Per-block outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckBlock {
    pub name: String,
    pub max_relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<GradCheckBlock>,
    pub pass: bool,
}

/// Compares analytic BPTT gradients against central finite differences.
pub fn gradient_check<S: Scalar>(
    params: &ModelParams<S>,
    inputs: &[S],
    input_mask: &[bool],
    targets: &[S],
    target_mask: &[bool],
    fd_step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, _, grads) = backward(params, inputs, input_mask, targets, target_mask)?;
    let analytic = grads.flatten();
    let base = params.flatten();
    let mut numeric = vec![0.0f64; base.len()];
    let mut probe = params.clone();
    for i in 0..base.len() {
        let mut flat = base.clone();
        flat[i] = base[i] + S::from_f64_lossy(fd_step);
        probe.assign_from_flat(&flat);
        let preds = forward(&probe, inputs, input_mask)?;
        let (lp, _) = mae_loss(&preds, targets, target_mask)?;
        flat[i] = base[i] - S::from_f64_lossy(fd_step);
        probe.assign_from_flat(&flat);
        let preds = forward(&probe, inputs, input_mask)?;
        let (lm, _) = mae_loss(&preds, targets, target_mask)?;
        numeric[i] = (lp.to_f64().unwrap() - lm.to_f64().unwrap()) / (2.0 * fd_step);
    }
    let mut blocks = Vec::new();
    let mut all_pass = true;
    for (name, range) in params.block_ranges() {
        let mut max_rel = 0.0f64;
        for i in range {
            let a = analytic[i].to_f64().unwrap();
            let n = numeric[i];
            let denom = a.abs().max(n.abs()).max(1e-6);
            max_rel = max_rel.max((a - n).abs() / denom);
        }
        let pass = max_rel < tolerance;
        all_pass &= pass;
        blocks.push(GradCheckBlock {
            name,
            max_relative_error: max_rel,
            pass,
        });
    }
    Ok(GradCheckReport {
        blocks,
        pass: all_pass,
    })
}

/// Serialized model record: parameters plus the normalization constants
/// needed at inference time. Version-tagged for format stability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord<S: Scalar> {
    pub format_version: u32,
    pub params: ModelParams<S>,
    pub normalizer: crate::series::NormalizationParams<S>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl<S: Scalar + Serialize + serde::de::DeserializeOwned> ModelRecord<S> {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let record: Self =
            serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        if record.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format version {}",
                record.format_version
            )));
        }
        Ok(record)
    }
}
