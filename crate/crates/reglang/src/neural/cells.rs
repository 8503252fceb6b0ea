//! Cell forward passes with cached traces and the matching BPTT backward.
//!
//! Hot-loop linear algebra uses fixed four-lane accumulation so results are
//! bit-deterministic while still vectorizing. The per-symbol input
//! projections `W_x·E[v] + b` are precomputed once per sequence (the vocab
//! is tiny), which roughly halves the per-step work.

use super::{CellKind, NeuralError, RecurrentClassifier};
use ndarray::{Array1, Array2};

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut rest = 0.0;
    for i in 4 * chunks..a.len() {
        rest += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest
}

#[inline]
pub(crate) fn axpy(out: &mut [f64], s: f64, a: &[f64]) {
    debug_assert_eq!(out.len(), a.len());
    for (o, &v) in out.iter_mut().zip(a) {
        *o += s * v;
    }
}

/// `out += M·v` where `m` is `out.len()` rows of `cols` values.
#[inline]
pub(crate) fn matvec_add(out: &mut [f64], m: &[f64], cols: usize, v: &[f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&m[i * cols..(i + 1) * cols], v);
    }
}

/// `out += Mᵀ·v`, accumulated row by row so access stays contiguous.
#[inline]
pub(crate) fn matvec_t_add(out: &mut [f64], m: &[f64], cols: usize, v: &[f64]) {
    for (i, &s) in v.iter().enumerate() {
        if s != 0.0 {
            axpy(out, s, &m[i * cols..(i + 1) * cols]);
        }
    }
}

/// `m += u ⊗ v`.
#[inline]
pub(crate) fn outer_add(m: &mut [f64], cols: usize, u: &[f64], v: &[f64]) {
    for (i, &s) in u.iter().enumerate() {
        if s != 0.0 {
            axpy(&mut m[i * cols..(i + 1) * cols], s, v);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Everything the backward pass needs from one sequence's forward run.
pub(crate) struct Trace {
    pub xs: Vec<usize>,
    /// (T+1) × H; row 0 is the zero initial state.
    pub hiddens: Array2<f64>,
    /// T × (g·H) activated gate values (LSTM `[i f g o]`, GRU `[r z n]`,
    /// RNN the tanh output again).
    pub gates: Array2<f64>,
    /// LSTM only: (T+1) × H cell states, row 0 zero.
    pub cells: Option<Array2<f64>>,
    /// LSTM only: T × H `tanh(c_t)`.
    pub tanh_c: Option<Array2<f64>>,
    /// GRU only: T × H `r ⊙ h_prev`.
    pub rh: Option<Array2<f64>>,
}

/// Public forward outputs: label probability, optional head logits, and the
/// per-step hidden states `h_1..h_T`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub p_label: f64,
    pub label_logit: f64,
    /// T × n_states; row `t-1` holds the prediction of the state reached
    /// after consuming symbol `t` (so the last row predicts the final state).
    pub state_logits: Option<Array2<f64>>,
    pub count_logits: Option<Array1<f64>>,
    /// T × H.
    pub hiddens: Array2<f64>,
}

pub(crate) fn forward_trace(
    model: &RecurrentClassifier,
    xs: &[usize],
) -> Result<Trace, NeuralError> {
    if xs.is_empty() {
        return Err(NeuralError::EmptyInput);
    }
    let config = &model.config;
    let vocab = config.vocab_size;
    if let Some(&bad) = xs.iter().find(|&&v| v >= vocab) {
        return Err(NeuralError::SymbolOutOfRange {
            index: bad,
            vocab,
        });
    }
    let params = &model.params;
    let h = config.hidden_dim;
    let g = config.cell.gates();
    let gh = g * h;
    let t_len = xs.len();

    // Input projections per symbol value, bias folded in.
    let mut proj_in = Array2::<f64>::zeros((vocab, gh));
    {
        let w_in = params.w_input.as_slice().unwrap();
        let emb = params.embedding.as_slice().unwrap();
        let e_dim = config.embed_dim;
        for v in 0..vocab {
            let row = &mut proj_in.as_slice_mut().unwrap()[v * gh..(v + 1) * gh];
            row.copy_from_slice(params.bias.as_slice().unwrap());
            matvec_add(row, w_in, e_dim, &emb[v * e_dim..(v + 1) * e_dim]);
        }
    }

    let mut hiddens = Array2::<f64>::zeros((t_len + 1, h));
    let mut gates = Array2::<f64>::zeros((t_len, gh));
    let mut cells = (config.cell == CellKind::Lstm).then(|| Array2::<f64>::zeros((t_len + 1, h)));
    let mut tanh_c = (config.cell == CellKind::Lstm).then(|| Array2::<f64>::zeros((t_len, h)));
    let mut rh = (config.cell == CellKind::Gru).then(|| Array2::<f64>::zeros((t_len, h)));

    let w_h = params.w_hidden.as_slice().unwrap();
    let mut a = vec![0.0f64; gh];
    for (s, &v) in xs.iter().enumerate() {
        a.copy_from_slice(&proj_in.as_slice().unwrap()[v * gh..(v + 1) * gh]);
        // split borrows: rows s (previous) and s+1 (next) of hiddens
        let (prev_rows, next_rows) = hiddens.view_mut().split_at(ndarray::Axis(0), s + 1);
        let h_prev = prev_rows.row(s);
        let h_prev = h_prev.as_slice().unwrap();
        let mut h_next_row = next_rows;
        let h_next = h_next_row.row_mut(0);
        let h_next = h_next.into_slice().unwrap();
        match config.cell {
            CellKind::Rnn => {
                matvec_add(&mut a, w_h, h, h_prev);
                for i in 0..h {
                    h_next[i] = a[i].tanh();
                }
                gates.row_mut(s).as_slice_mut().unwrap().copy_from_slice(h_next);
            }
            CellKind::Lstm => {
                matvec_add(&mut a, w_h, h, h_prev);
                let gate_row = gates.row_mut(s).into_slice().unwrap();
                for i in 0..h {
                    gate_row[i] = sigmoid(a[i]); // input gate
                    gate_row[h + i] = sigmoid(a[h + i]); // forget gate
                    gate_row[2 * h + i] = a[2 * h + i].tanh(); // candidate
                    gate_row[3 * h + i] = sigmoid(a[3 * h + i]); // output gate
                }
                let cells_arr = cells.as_mut().unwrap();
                let (c_prev_rows, c_next_rows) =
                    cells_arr.view_mut().split_at(ndarray::Axis(0), s + 1);
                let c_prev = c_prev_rows.row(s);
                let c_prev = c_prev.as_slice().unwrap();
                let mut c_next_row = c_next_rows;
                let c_next = c_next_row.row_mut(0);
                let c_next = c_next.into_slice().unwrap();
                let tc_row = tanh_c.as_mut().unwrap().row_mut(s).into_slice().unwrap();
                for i in 0..h {
                    c_next[i] =
                        gate_row[h + i] * c_prev[i] + gate_row[i] * gate_row[2 * h + i];
                    tc_row[i] = c_next[i].tanh();
                    h_next[i] = gate_row[3 * h + i] * tc_row[i];
                }
            }
            CellKind::Gru => {
                matvec_add(&mut a[..2 * h], &w_h[..2 * h * h], h, h_prev);
                let gate_row = gates.row_mut(s).into_slice().unwrap();
                let rh_row = rh.as_mut().unwrap().row_mut(s).into_slice().unwrap();
                for i in 0..h {
                    gate_row[i] = sigmoid(a[i]); // reset gate
                    gate_row[h + i] = sigmoid(a[h + i]); // update gate
                    rh_row[i] = gate_row[i] * h_prev[i];
                }
                matvec_add(&mut a[2 * h..], &w_h[2 * h * h..], h, rh_row);
                for i in 0..h {
                    gate_row[2 * h + i] = a[2 * h + i].tanh(); // candidate
                    h_next[i] = (1.0 - gate_row[h + i]) * gate_row[2 * h + i]
                        + gate_row[h + i] * h_prev[i];
                }
            }
        }
    }

    Ok(Trace {
        xs: xs.to_vec(),
        hiddens,
        gates,
        cells,
        tanh_c,
        rh,
    })
}

/// Backpropagates through the recurrence. `dh_extern` is `(T+1) × H` with
/// row `t` holding the loss gradient flowing directly into `h_t` from the
/// heads (row 0 ignored). Accumulates into `grads`.
pub(crate) fn backward_cell(
    model: &RecurrentClassifier,
    trace: &Trace,
    dh_extern: &Array2<f64>,
    grads: &mut super::Tensors,
) {
    let config = &model.config;
    let h = config.hidden_dim;
    let g = config.cell.gates();
    let gh = g * h;
    let t_len = trace.xs.len();
    let vocab = config.vocab_size;
    let w_h = model.params.w_hidden.as_slice().unwrap();
    let gw_h = grads.w_hidden.as_slice_mut().unwrap();
    let gb = grads.bias.as_slice_mut().unwrap();

    // Accumulated gate-preactivation gradients per input symbol value; the
    // input-side weight/embedding gradients fall out of these after the loop.
    let mut da_sum = vec![0.0f64; vocab * gh];
    let mut dh = vec![0.0f64; h];
    let mut dc = vec![0.0f64; h];
    let mut da = vec![0.0f64; gh];

    for s in (0..t_len).rev() {
        let ext = dh_extern.row(s + 1);
        let ext = ext.as_slice().unwrap();
        for i in 0..h {
            dh[i] += ext[i];
        }
        let h_prev = trace.hiddens.row(s);
        let h_prev = h_prev.as_slice().unwrap();
        let gate_row = trace.gates.row(s);
        let gate_row = gate_row.as_slice().unwrap();
        match config.cell {
            CellKind::Rnn => {
                for i in 0..h {
                    let hv = gate_row[i];
                    da[i] = dh[i] * (1.0 - hv * hv);
                }
                for v in dh.iter_mut() {
                    *v = 0.0;
                }
                matvec_t_add(&mut dh, w_h, h, &da);
                outer_add(gw_h, h, &da, h_prev);
            }
            CellKind::Lstm => {
                let c_prev = trace.cells.as_ref().unwrap().row(s);
                let c_prev = c_prev.as_slice().unwrap();
                let tc = trace.tanh_c.as_ref().unwrap().row(s);
                let tc = tc.as_slice().unwrap();
                for i in 0..h {
                    let gi = gate_row[i];
                    let gf = gate_row[h + i];
                    let gg = gate_row[2 * h + i];
                    let go = gate_row[3 * h + i];
                    let d_o = dh[i] * tc[i];
                    let dci = dc[i] + dh[i] * go * (1.0 - tc[i] * tc[i]);
                    da[i] = dci * gg * gi * (1.0 - gi); // input gate
                    da[h + i] = dci * c_prev[i] * gf * (1.0 - gf); // forget gate
                    da[2 * h + i] = dci * gi * (1.0 - gg * gg); // candidate
                    da[3 * h + i] = d_o * go * (1.0 - go); // output gate
                    dc[i] = dci * gf;
                }
                for v in dh.iter_mut() {
                    *v = 0.0;
                }
                matvec_t_add(&mut dh, w_h, h, &da);
                outer_add(gw_h, h, &da, h_prev);
            }
            CellKind::Gru => {
                let rh_row = trace.rh.as_ref().unwrap().row(s);
                let rh_row = rh_row.as_slice().unwrap();
                // gradient through h = (1-z)·n + z·h_prev
                let mut dn = vec![0.0f64; h];
                let mut dh_prev = vec![0.0f64; h];
                for i in 0..h {
                    let r = gate_row[i];
                    let z = gate_row[h + i];
                    let n = gate_row[2 * h + i];
                    dn[i] = dh[i] * (1.0 - z);
                    let dz = dh[i] * (h_prev[i] - n);
                    da[h + i] = dz * z * (1.0 - z);
                    da[2 * h + i] = dn[i] * (1.0 - n * n);
                    dh_prev[i] = dh[i] * z;
                    let _ = r;
                }
                // through the candidate's recurrent term W_n·(r⊙h_prev)
                let mut drh = vec![0.0f64; h];
                matvec_t_add(&mut drh, &w_h[2 * h * h..], h, &da[2 * h..]);
                for i in 0..h {
                    let r = gate_row[i];
                    let dr = drh[i] * h_prev[i];
                    da[i] = dr * r * (1.0 - r);
                    dh_prev[i] += drh[i] * r;
                }
                matvec_t_add(&mut dh_prev, &w_h[..2 * h * h], h, &da[..2 * h]);
                outer_add(&mut gw_h[..2 * h * h], h, &da[..2 * h], h_prev);
                outer_add(&mut gw_h[2 * h * h..], h, &da[2 * h..], rh_row);
                dh.copy_from_slice(&dh_prev);
            }
        }
        let v = trace.xs[s];
        axpy(&mut da_sum[v * gh..(v + 1) * gh], 1.0, &da);
        axpy(gb, 1.0, &da);
    }

    // Input-side gradients from the pooled per-symbol preactivation sums.
    let w_in = model.params.w_input.as_slice().unwrap();
    let gw_in = grads.w_input.as_slice_mut().unwrap();
    let emb = model.params.embedding.as_slice().unwrap();
    let g_emb = grads.embedding.as_slice_mut().unwrap();
    let e_dim = config.embed_dim;
    for v in 0..vocab {
        let dsum = &da_sum[v * gh..(v + 1) * gh];
        if dsum.iter().all(|&x| x == 0.0) {
            continue;
        }
        outer_add(gw_in, e_dim, dsum, &emb[v * e_dim..(v + 1) * e_dim]);
        matvec_t_add(&mut g_emb[v * e_dim..(v + 1) * e_dim], w_in, e_dim, dsum);
    }
}
