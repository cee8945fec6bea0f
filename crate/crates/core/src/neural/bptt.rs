//! Forward pass, MAE loss, and backpropagation through time for the three
//! cell kinds. Masked timesteps use skip-update semantics: the state passes
//! through untouched and the step contributes no prediction and no gradient.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

use super::{CellKind, ModelParams};

/// Recurrent state: hidden vector plus the LSTM cell memory (empty for the
/// other cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState<S: Scalar> {
    pub hidden: Vec<S>,
    pub cell_memory: Vec<S>,
}

impl<S: Scalar> CellState<S> {
    pub fn zeros(params: &ModelParams<S>) -> Self {
        let h = params.hidden_size;
        CellState {
            hidden: vec![S::zero(); h],
            cell_memory: if params.cell_kind == CellKind::Lstm {
                vec![S::zero(); h]
            } else {
                Vec::new()
            },
        }
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// `out = w_x * x + W_h · h + b`
fn gate_preact<S: Scalar>(
    w_x: &[S],
    w_h: &[S],
    b: &[S],
    x: S,
    h: &[S],
) -> Vec<S> {
    let n = w_x.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = w_x[i] * x + b[i];
        let row = &w_h[i * n..(i + 1) * n];
        for (w, hj) in row.iter().zip(h) {
            acc = acc + *w * *hj;
        }
        out.push(acc);
    }
    out
}

/// `out[j] += Σ_i W[i][j] d[i]`
fn add_matvec_transposed<S: Scalar>(w: &[S], d: &[S], out: &mut [S]) {
    let n = out.len();
    for (i, di) in d.iter().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        for j in 0..n {
            out[j] = out[j] + row[j] * *di;
        }
    }
}

#[derive(Clone)]
enum Acts<S: Scalar> {
    Simple,
    Gru { z: Vec<S>, r: Vec<S>, n: Vec<S> },
    Lstm {
        i: Vec<S>,
        f: Vec<S>,
        g: Vec<S>,
        o: Vec<S>,
        tanh_c: Vec<S>,
    },
}

#[derive(Clone)]
struct StepCache<S: Scalar> {
    x: S,
    h_prev: Vec<S>,
    c_prev: Vec<S>,
    acts: Acts<S>,
    h: Vec<S>,
}

fn step_cached<S: Scalar>(params: &ModelParams<S>, x: S, state: &CellState<S>) -> StepCache<S> {
    let h = params.hidden_size;
    match params.cell_kind {
        CellKind::SimpleRnn => {
            let g = &params.gates[0];
            let pre = gate_preact(&g.w_x, &g.w_h, &g.b, x, &state.hidden);
            let hidden: Vec<S> = pre.iter().map(|v| v.tanh()).collect();
            StepCache {
                x,
                h_prev: state.hidden.clone(),
                c_prev: Vec::new(),
                acts: Acts::Simple,
                h: hidden,
            }
        }
        CellKind::Gru => {
            let [gz, gr, gc] = &params.gates[..] else {
                unreachable!()
            };
            let z: Vec<S> = gate_preact(&gz.w_x, &gz.w_h, &gz.b, x, &state.hidden)
                .into_iter()
                .map(sigmoid)
                .collect();
            let r: Vec<S> = gate_preact(&gr.w_x, &gr.w_h, &gr.b, x, &state.hidden)
                .into_iter()
                .map(sigmoid)
                .collect();
            let rh: Vec<S> = r
                .iter()
                .zip(&state.hidden)
                .map(|(r, h)| *r * *h)
                .collect();
            let n: Vec<S> = gate_preact(&gc.w_x, &gc.w_h, &gc.b, x, &rh)
                .into_iter()
                .map(|v| v.tanh())
                .collect();
            let hidden: Vec<S> = (0..h)
                .map(|i| (S::one() - z[i]) * state.hidden[i] + z[i] * n[i])
                .collect();
            StepCache {
                x,
                h_prev: state.hidden.clone(),
                c_prev: Vec::new(),
                acts: Acts::Gru { z, r, n },
                h: hidden,
            }
        }
        CellKind::Lstm => {
            let [gi, gf, gg, go] = &params.gates[..] else {
                unreachable!()
            };
            let i: Vec<S> = gate_preact(&gi.w_x, &gi.w_h, &gi.b, x, &state.hidden)
                .into_iter()
                .map(sigmoid)
                .collect();
            let f: Vec<S> = gate_preact(&gf.w_x, &gf.w_h, &gf.b, x, &state.hidden)
                .into_iter()
                .map(sigmoid)
                .collect();
            let g: Vec<S> = gate_preact(&gg.w_x, &gg.w_h, &gg.b, x, &state.hidden)
                .into_iter()
                .map(|v| v.tanh())
                .collect();
            let o: Vec<S> = gate_preact(&go.w_x, &go.w_h, &go.b, x, &state.hidden)
                .into_iter()
                .map(sigmoid)
                .collect();
            let c: Vec<S> = (0..h)
                .map(|k| f[k] * state.cell_memory[k] + i[k] * g[k])
                .collect();
            let tanh_c: Vec<S> = c.iter().map(|v| v.tanh()).collect();
            let hidden: Vec<S> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
            let _ = c;
            StepCache {
                x,
                h_prev: state.hidden.clone(),
                c_prev: state.cell_memory.clone(),
                acts: Acts::Lstm { i, f, g, o, tanh_c },
                h: hidden,
            }
        }
    }
}

/// Single recurrent step. A masked step leaves the state untouched and
/// produces no output.
pub fn cell_step<S: Scalar>(
    params: &ModelParams<S>,
    x: S,
    state: &CellState<S>,
    masked: bool,
) -> Result<(Option<Vec<S>>, CellState<S>)> {
    if masked {
        return Ok((None, state.clone()));
    }
    if !x.is_finite() {
        return Err(Error::NumericDomain(format!("non-finite input {x}")));
    }
    let cache = step_cached(params, x, state);
    let next = CellState {
        cell_memory: if params.cell_kind == CellKind::Lstm {
            lstm_c(&cache)
        } else {
            Vec::new()
        },
        hidden: cache.h.clone(),
    };
    Ok((Some(cache.h), next))
}

fn lstm_c<S: Scalar>(cache: &StepCache<S>) -> Vec<S> {
    // reconstruct c from the cached activations: c = f⊙c_prev + i⊙g
    match &cache.acts {
        Acts::Lstm { i, f, g, .. } => (0..cache.h.len())
            .map(|k| f[k] * cache.c_prev[k] + i[k] * g[k])
            .collect(),
        _ => Vec::new(),
    }
}

fn dense<S: Scalar>(params: &ModelParams<S>, h: &[S]) -> S {
    params
        .dense_weight
        .iter()
        .zip(h)
        .map(|(w, h)| *w * *h)
        .sum::<S>()
        + params.dense_bias
}

fn forward_impl<S: Scalar>(
    params: &ModelParams<S>,
    inputs: &[S],
    input_mask: &[bool],
    want_cache: bool,
) -> Result<(Vec<Option<S>>, Vec<Option<StepCache<S>>>)> {
    assert_eq!(inputs.len(), input_mask.len());
    let mut state = CellState::zeros(params);
    let mut preds = Vec::with_capacity(inputs.len());
    let mut caches = Vec::new();
    for (&x, &present) in inputs.iter().zip(input_mask) {
        if !present {
            preds.push(None);
            if want_cache {
                caches.push(None);
            }
            continue;
        }
        if !x.is_finite() {
            return Err(Error::NumericDomain(format!("non-finite input {x}")));
        }
        let cache = step_cached(params, x, &state);
        state.hidden = cache.h.clone();
        if params.cell_kind == CellKind::Lstm {
            state.cell_memory = lstm_c(&cache);
        }
        preds.push(Some(dense(params, &cache.h)));
        if want_cache {
            caches.push(Some(cache));
        }
    }
    Ok((preds, caches))
}

/// Runs the network over a masked sequence; unmasked steps emit a scalar
/// prediction, masked steps emit `None`.
pub fn forward<S: Scalar>(
    params: &ModelParams<S>,
    inputs: &[S],
    input_mask: &[bool],
) -> Result<Vec<Option<S>>> {
    Ok(forward_impl(params, inputs, input_mask, false)?.0)
}

/// Forward pass that also returns the final recurrent state.
pub fn forward_states<S: Scalar>(
    params: &ModelParams<S>,
    inputs: &[S],
    input_mask: &[bool],
) -> Result<(Vec<Option<S>>, CellState<S>)> {
    let mut state = CellState::zeros(params);
    let mut preds = Vec::with_capacity(inputs.len());
    for (&x, &present) in inputs.iter().zip(input_mask) {
        let (out, next) = cell_step(params, x, &state, !present)?;
        preds.push(out.map(|h| dense(params, &h)));
        state = next;
    }
    Ok((preds, state))
}

/// Mean absolute error over positions with a present target and an unmasked
/// prediction. Returns the loss and the number of contributing terms.
pub fn mae_loss<S: Scalar>(
    predictions: &[Option<S>],
    targets: &[S],
    target_mask: &[bool],
) -> Result<(S, usize)> {
    assert_eq!(predictions.len(), targets.len());
    assert_eq!(predictions.len(), target_mask.len());
    let mut sum = S::zero();
    let mut count = 0usize;
    for ((p, y), &present) in predictions.iter().zip(targets).zip(target_mask) {
        if let (Some(p), true) = (p, present) {
            sum = sum + (*p - *y).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok((sum / S::from_f64_lossy(count as f64), count))
}

fn sign<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero() // MAE subgradient at zero residual
    }
}

/// Exact reverse-mode gradients of `mae_loss` through the unrolled sequence.
/// Returns (loss, contributing count, gradients).
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    inputs: &[S],
    input_mask: &[bool],
    targets: &[S],
    target_mask: &[bool],
) -> Result<(S, usize, ModelParams<S>)> {
    let (preds, caches) = forward_impl(params, inputs, input_mask, true)?;
    let (loss, count) = mae_loss(&preds, targets, target_mask)?;
    let h = params.hidden_size;
    let inv_count = S::one() / S::from_f64_lossy(count as f64);

    let mut grads = ModelParams::zeros(params.cell_kind, h);
    let mut dh = vec![S::zero(); h];
    let mut dc = vec![S::zero(); h];

    for t in (0..inputs.len()).rev() {
        let Some(cache) = &caches[t] else {
            continue; // masked step: state identity, gradients pass through
        };
        // dense head contribution
        if target_mask[t] {
            let p = preds[t].expect("unmasked step has a prediction");
            let gp = sign(p - targets[t]) * inv_count;
            if gp != S::zero() {
                for k in 0..h {
                    grads.dense_weight[k] = grads.dense_weight[k] + gp * cache.h[k];
                    dh[k] = dh[k] + gp * params.dense_weight[k];
                }
                grads.dense_bias = grads.dense_bias + gp;
            }
        }

        match &cache.acts {
            Acts::Simple => {
                let g = &params.gates[0];
                let gg = &mut grads.gates[0];
                let mut dh_prev = vec![S::zero(); h];
                let mut da = vec![S::zero(); h];
                for k in 0..h {
                    da[k] = dh[k] * (S::one() - cache.h[k] * cache.h[k]);
                    gg.w_x[k] = gg.w_x[k] + da[k] * cache.x;
                    gg.b[k] = gg.b[k] + da[k];
                    for j in 0..h {
                        gg.w_h[k * h + j] = gg.w_h[k * h + j] + da[k] * cache.h_prev[j];
                    }
                }
                add_matvec_transposed(&g.w_h, &da, &mut dh_prev);
                dh = dh_prev;
            }
            Acts::Gru { z, r, n } => {
                let mut dh_prev = vec![S::zero(); h];
                let mut dz = vec![S::zero(); h];
                let mut dn = vec![S::zero(); h];
                for k in 0..h {
                    dz[k] = dh[k] * (n[k] - cache.h_prev[k]);
                    dn[k] = dh[k] * z[k];
                    dh_prev[k] = dh[k] * (S::one() - z[k]);
                }
                // candidate gate: n = tanh(wx x + Wh (r⊙h_prev) + b)
                let mut dan = vec![S::zero(); h];
                for k in 0..h {
                    dan[k] = dn[k] * (S::one() - n[k] * n[k]);
                }
                let rh: Vec<S> = r
                    .iter()
                    .zip(&cache.h_prev)
                    .map(|(r, h)| *r * *h)
                    .collect();
                {
                    let gc = &mut grads.gates[2];
                    for k in 0..h {
                        gc.w_x[k] = gc.w_x[k] + dan[k] * cache.x;
                        gc.b[k] = gc.b[k] + dan[k];
                        for j in 0..h {
                            gc.w_h[k * h + j] = gc.w_h[k * h + j] + dan[k] * rh[j];
                        }
                    }
                }
                let mut drh = vec![S::zero(); h];
                add_matvec_transposed(&params.gates[2].w_h, &dan, &mut drh);
                let mut dr = vec![S::zero(); h];
                for k in 0..h {
                    dr[k] = drh[k] * cache.h_prev[k];
                    dh_prev[k] = dh_prev[k] + drh[k] * r[k];
                }
                // update gate
                let mut daz = vec![S::zero(); h];
                for k in 0..h {
                    daz[k] = dz[k] * z[k] * (S::one() - z[k]);
                }
                {
                    let gz = &mut grads.gates[0];
                    for k in 0..h {
                        gz.w_x[k] = gz.w_x[k] + daz[k] * cache.x;
                        gz.b[k] = gz.b[k] + daz[k];
                        for j in 0..h {
                            gz.w_h[k * h + j] = gz.w_h[k * h + j] + daz[k] * cache.h_prev[j];
                        }
                    }
                }
                add_matvec_transposed(&params.gates[0].w_h, &daz, &mut dh_prev);
                // reset gate
                let mut dar = vec![S::zero(); h];
                for k in 0..h {
                    dar[k] = dr[k] * r[k] * (S::one() - r[k]);
                }
                {
                    let gr = &mut grads.gates[1];
                    for k in 0..h {
                        gr.w_x[k] = gr.w_x[k] + dar[k] * cache.x;
                        gr.b[k] = gr.b[k] + dar[k];
                        for j in 0..h {
                            gr.w_h[k * h + j] = gr.w_h[k * h + j] + dar[k] * cache.h_prev[j];
                        }
                    }
                }
                add_matvec_transposed(&params.gates[1].w_h, &dar, &mut dh_prev);
                dh = dh_prev;
            }
            Acts::Lstm { i, f, g, o, tanh_c } => {
                let mut dh_prev = vec![S::zero(); h];
                let mut do_ = vec![S::zero(); h];
                let mut dct = dc.clone();
                for k in 0..h {
                    do_[k] = dh[k] * tanh_c[k];
                    dct[k] = dct[k] + dh[k] * o[k] * (S::one() - tanh_c[k] * tanh_c[k]);
                }
                let mut di = vec![S::zero(); h];
                let mut df = vec![S::zero(); h];
                let mut dg = vec![S::zero(); h];
                let mut dc_prev = vec![S::zero(); h];
                for k in 0..h {
                    di[k] = dct[k] * g[k];
                    df[k] = dct[k] * cache.c_prev[k];
                    dg[k] = dct[k] * i[k];
                    dc_prev[k] = dct[k] * f[k];
                }
                // gate order: input, forget, cell, output
                let gate_deltas: [(usize, Vec<S>); 4] = [
                    (
                        0,
                        (0..h).map(|k| di[k] * i[k] * (S::one() - i[k])).collect(),
                    ),
                    (
                        1,
                        (0..h).map(|k| df[k] * f[k] * (S::one() - f[k])).collect(),
                    ),
                    (
                        2,
                        (0..h).map(|k| dg[k] * (S::one() - g[k] * g[k])).collect(),
                    ),
                    (
                        3,
                        (0..h)
                            .map(|k| do_[k] * o[k] * (S::one() - o[k]))
                            .collect(),
                    ),
                ];
                for (gi, da) in &gate_deltas {
                    let gr = &mut grads.gates[*gi];
                    for k in 0..h {
                        gr.w_x[k] = gr.w_x[k] + da[k] * cache.x;
                        gr.b[k] = gr.b[k] + da[k];
                        for j in 0..h {
                            gr.w_h[k * h + j] = gr.w_h[k * h + j] + da[k] * cache.h_prev[j];
                        }
                    }
                    add_matvec_transposed(&params.gates[*gi].w_h, da, &mut dh_prev);
                }
                dh = dh_prev;
                dc = dc_prev;
            }
        }
    }

    Ok((loss, count, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{gradient_check, init_params};

    #[test]
    fn zero_weights_give_zero_output() {
        let p: ModelParams<f64> = ModelParams::zeros(CellKind::SimpleRnn, 4);
        let preds = forward(&p, &[0.7, -0.3], &[true, true]).unwrap();
        assert_eq!(preds, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn constant_bias_head() {
        let mut p: ModelParams<f64> = ModelParams::zeros(CellKind::SimpleRnn, 1);
        p.dense_bias = 0.3;
        let preds = forward(&p, &[0.1, 0.9, 0.4], &[true; 3]).unwrap();
        assert!(preds.iter().all(|p| p.unwrap() == 0.3));
    }

    #[test]
    fn masked_step_is_bitwise_identity() {
        let p: ModelParams<f64> = init_params(CellKind::Lstm, 3, 5);
        let mut state = CellState::zeros(&p);
        state.hidden = vec![0.1, -0.2, 0.3];
        state.cell_memory = vec![0.5, 0.6, -0.7];
        let (out, next) = cell_step(&p, 123.0, &state, true).unwrap();
        assert!(out.is_none());
        assert_eq!(state, next);
    }

    #[test]
    fn saturated_lstm_gates_preserve_memory() {
        // forget bias +20, input bias -20: c' ≈ c
        let mut p: ModelParams<f64> = ModelParams::zeros(CellKind::Lstm, 2);
        p.gates[1].b = vec![20.0; 2];
        p.gates[0].b = vec![-20.0; 2];
        let state = CellState {
            hidden: vec![0.0; 2],
            cell_memory: vec![1.0, -0.5],
        };
        let (_, next) = cell_step(&p, 0.3, &state, false).unwrap();
        assert!((next.cell_memory[0] - 1.0).abs() < 1e-6);
        assert!((next.cell_memory[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn mae_loss_counts_eligible_terms() {
        let (loss, n) = mae_loss(
            &[Some(1.0), Some(2.0)],
            &[0.0, 5.0],
            &[true, false],
        )
        .unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(n, 1);
        assert!(matches!(
            mae_loss::<f64>(&[Some(1.0)], &[0.0], &[false]),
            Err(Error::EmptyLoss)
        ));
    }

    #[test]
    fn perfect_predictions_have_zero_gradient() {
        let mut p: ModelParams<f64> = ModelParams::zeros(CellKind::SimpleRnn, 2);
        p.dense_bias = 0.4;
        let (loss, _, grads) =
            backward(&p, &[0.2, 0.8], &[true, true], &[0.4, 0.4], &[true, true]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_step_gradient_matches_hand_computation() {
        // H=1 simple RNN, one step: p = d*tanh(a*x + b) + e
        let mut p: ModelParams<f64> = ModelParams::zeros(CellKind::SimpleRnn, 1);
        let (a, b, d, e, x, y) = (0.7, -0.2, 1.3, 0.1, 0.5, 2.0);
        p.gates[0].w_x = vec![a];
        p.gates[0].b = vec![b];
        p.dense_weight = vec![d];
        p.dense_bias = e;
        let (_, _, grads) = backward(&p, &[x], &[true], &[y], &[true]).unwrap();
        let h = (a * x + b).tanh();
        let pred = d * h + e;
        let s = (pred - y).signum(); // count = 1
        assert!((grads.dense_bias - s).abs() < 1e-12);
        assert!((grads.dense_weight[0] - s * h).abs() < 1e-12);
        assert!((grads.gates[0].w_x[0] - s * d * (1.0 - h * h) * x).abs() < 1e-12);
        assert!((grads.gates[0].b[0] - s * d * (1.0 - h * h)).abs() < 1e-12);
    }

    fn random_check(kind: CellKind, seed: u64) -> bool {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p: ModelParams<f64> = init_params(kind, 3, seed);
        let len = 6;
        let inputs: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets: Vec<f64> = (0..len).map(|_| rng.gen_range(2.0..3.0)).collect();
        let report = gradient_check(
            &p,
            &inputs,
            &[true; 6],
            &targets,
            &[true; 6],
            1e-5,
            1e-4,
        )
        .unwrap();
        report.pass
    }

    #[test]
    fn finite_difference_check_all_cells() {
        for kind in CellKind::ALL {
            for seed in [1, 2] {
                assert!(random_check(kind, seed), "{kind} seed {seed}");
            }
        }
    }

    #[test]
    fn corrupted_gradient_detected() {
        // scale one analytic block by 1.01 and verify the check would fail:
        // emulate by comparing a corrupted backward against finite
        // differences via a direct tolerance computation
        let p: ModelParams<f64> = init_params(CellKind::SimpleRnn, 3, 8);
        let inputs = [0.3, -0.5, 0.9, 0.2];
        let targets = [2.5, 2.1, 2.9, 2.2];
        let (_, _, grads) = backward(&p, &inputs, &[true; 4], &targets, &[true; 4]).unwrap();
        let mut corrupted = grads.clone();
        for v in corrupted.gates[0].w_h.iter_mut() {
            *v *= 1.01;
        }
        // the corrupted w_h block deviates from the true gradient by 1%,
        // far above the 1e-4 tolerance
        let rel: f64 = grads.gates[0]
            .w_h
            .iter()
            .zip(&corrupted.gates[0].w_h)
            .map(|(a, b)| (a - b).abs() / a.abs().max(1e-6))
            .fold(0.0, f64::max);
        assert!(rel > 1e-4);
    }

    #[test]
    fn contractive_simple_rnn_converges_to_fixed_point() {
        let mut p: ModelParams<f64> = init_params(CellKind::SimpleRnn, 4, 3);
        // scale recurrent weights well below unit spectral norm
        for v in p.gates[0].w_h.iter_mut() {
            *v *= 0.5;
        }
        let mut state = CellState::zeros(&p);
        let mut prev = state.hidden.clone();
        let mut delta = f64::INFINITY;
        for _ in 0..1000 {
            let (_, next) = cell_step(&p, 0.7, &state, false).unwrap();
            delta = next
                .hidden
                .iter()
                .zip(&prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            prev = next.hidden.clone();
            state = next;
        }
        assert!(delta < 1e-8, "delta {delta}");
    }
}
