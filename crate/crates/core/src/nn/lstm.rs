use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::{LayerSlots, ModelError, ModelTopology, ParamVector, Result};

/// Anything that maps a batch of normalized input windows to normalized predictions.
pub trait Predictor {
    fn predict_batch(&self, inputs: &[&[f64]]) -> Vec<Vec<f64>>;
}

impl Predictor for ParamVector {
    fn predict_batch(&self, inputs: &[&[f64]]) -> Vec<Vec<f64>> {
        predict_many(self, inputs).expect("window length checked by caller")
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// tanh through one `expm1`; noticeably cheaper than libm's `tanh` and accurate near zero.
#[inline]
fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp_m1();
    (-e / (2.0 + e)).copysign(x)
}

fn view<'a>(values: &'a [f64], at: usize, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), &values[at..at + rows * cols]).expect("layout")
}

fn view_mut<'a>(values: &'a mut [f64], at: usize, rows: usize, cols: usize) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut values[at..at + rows * cols]).expect("layout")
}

/// Activations of one layer over a whole batch; row `t * batch + b` is sample `b` at step `t`.
struct LayerTrace {
    /// Layer input, `(T*B, in)`.
    x: Array2<f64>,
    /// Hidden states with a leading zero block: rows `(t+1)*B..` hold h_t.
    h: Array2<f64>,
    /// Cell states laid out like `h`.
    c: Array2<f64>,
    /// tanh of the cell states, `(T*B, h)`.
    tanh_c: Array2<f64>,
    /// Gate activations `[i | f | g | o]`, `(T*B, 4h)`.
    gates: Array2<f64>,
}

fn layer_forward(params: &[f64], slots: &LayerSlots, x: Array2<f64>, steps: usize, batch: usize) -> LayerTrace {
    let hd = slots.hidden;
    let w_in = view(params, slots.w_in, 4 * hd, slots.input_size);
    let w_rec = view(params, slots.w_rec, 4 * hd, hd);
    let bias = &params[slots.bias..slots.bias + 4 * hd];

    let mut gates = Array2::<f64>::zeros((steps * batch, 4 * hd));
    for mut row in gates.rows_mut() {
        row.as_slice_mut().unwrap().copy_from_slice(bias);
    }
    general_mat_mul(1.0, &x, &w_in.t(), 1.0, &mut gates);

    let mut h = Array2::<f64>::zeros(((steps + 1) * batch, hd));
    let mut c = Array2::<f64>::zeros(((steps + 1) * batch, hd));
    let mut tanh_c = Array2::<f64>::zeros((steps * batch, hd));
    for t in 0..steps {
        let rows = t * batch..(t + 1) * batch;
        {
            let h_prev = h.slice(s![rows.clone(), ..]);
            let mut z = gates.slice_mut(s![rows.clone(), ..]);
            general_mat_mul(1.0, &h_prev, &w_rec.t(), 1.0, &mut z);
        }
        let z = gates.slice_mut(s![rows.clone(), ..]).into_slice().unwrap();
        let (c_prev, mut c_next) = c.view_mut().split_at(Axis(0), (t + 1) * batch);
        let c_prev = c_prev.slice_move(s![t * batch.., ..]).into_slice().unwrap();
        let c_next = c_next.slice_mut(s![..batch, ..]).into_slice().unwrap();
        let h_next = h.slice_mut(s![(t + 1) * batch..(t + 2) * batch, ..]).into_slice().unwrap();
        let tc = tanh_c.slice_mut(s![rows.clone(), ..]).into_slice().unwrap();
        for b in 0..batch {
            let zb = &mut z[b * 4 * hd..(b + 1) * 4 * hd];
            for j in 0..hd {
                let i_g = sigmoid(zb[j]);
                let f_g = sigmoid(zb[hd + j]);
                let g_g = tanh(zb[2 * hd + j]);
                let o_g = sigmoid(zb[3 * hd + j]);
                zb[j] = i_g;
                zb[hd + j] = f_g;
                zb[2 * hd + j] = g_g;
                zb[3 * hd + j] = o_g;
                let cell = f_g * c_prev[b * hd + j] + i_g * g_g;
                let cell_act = tanh(cell);
                c_next[b * hd + j] = cell;
                tc[b * hd + j] = cell_act;
                h_next[b * hd + j] = o_g * cell_act;
            }
        }
    }
    LayerTrace {
        x,
        h,
        c,
        tanh_c,
        gates,
    }
}

/// Packs windows into the time-major `(T*B, in)` layout.
fn pack_inputs(topology: &ModelTopology, inputs: &[&[f64]]) -> Result<Array2<f64>> {
    let batch = inputs.len();
    let width = topology.input_size;
    let mut x = Array2::<f64>::zeros((topology.lookback * batch, width));
    for (b, window) in inputs.iter().enumerate() {
        if window.len() != topology.window_len() {
            return Err(ModelError::WindowLength {
                expected: topology.window_len(),
                got: window.len(),
            });
        }
        for t in 0..topology.lookback {
            x.row_mut(t * batch + b)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&window[t * width..(t + 1) * width]);
        }
    }
    Ok(x)
}

fn run_forward(params: &ParamVector, inputs: &[&[f64]]) -> Result<(Array2<f64>, Vec<LayerTrace>)> {
    let topology = params.topology();
    let layout = topology.layout();
    let steps = topology.lookback;
    let batch = inputs.len();
    let mut x = pack_inputs(topology, inputs)?;
    let mut traces = Vec::with_capacity(layout.layers.len());
    for slots in &layout.layers {
        let trace = layer_forward(params.values(), slots, x, steps, batch);
        x = trace.h.slice(s![batch.., ..]).to_owned();
        traces.push(trace);
    }
    let top = traces.last().expect("at least one layer");
    let last_h = top.h.slice(s![steps * batch.., ..]);
    let hidden = last_h.ncols();
    let head_w = view(params.values(), layout.head_w, topology.output_size, hidden);
    let head_b = &params.values()[layout.head_b..layout.total];
    let mut out = Array2::<f64>::zeros((batch, topology.output_size));
    for mut row in out.rows_mut() {
        row.as_slice_mut().unwrap().copy_from_slice(head_b);
    }
    general_mat_mul(1.0, &last_h, &head_w.t(), 1.0, &mut out);
    Ok((out, traces))
}

/// Predicts one window; zero initial state, linear head on the last top-layer hidden state.
pub fn forward(params: &ParamVector, window: &[f64]) -> Result<Vec<f64>> {
    let (out, _) = run_forward(params, &[window])?;
    Ok(out.row(0).to_vec())
}

/// Batched prediction, chunked to bound memory.
pub fn predict_many<W: AsRef<[f64]>>(params: &ParamVector, inputs: &[W]) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&[f64]> = inputs.iter().map(|w| w.as_ref()).collect();
    let mut result = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(256) {
        let (out, _) = run_forward(params, chunk)?;
        result.extend(out.rows().into_iter().map(|r| r.to_vec()));
    }
    Ok(result)
}

/// Mean wall time of one single-window prediction over `repeats` calls, after one warm-up.
pub fn mean_inference_latency(params: &ParamVector, window: &[f64], repeats: usize) -> Result<std::time::Duration> {
    forward(params, window)?;
    let repeats = repeats.max(1);
    let start = std::time::Instant::now();
    for _ in 0..repeats {
        std::hint::black_box(forward(params, std::hint::black_box(window))?);
    }
    Ok(start.elapsed() / repeats as u32)
}

/// Mean squared error over batch and horizon, and its exact gradient via BPTT.
pub fn loss_and_gradient<W: AsRef<[f64]>, Y: AsRef<[f64]>>(
    params: &ParamVector,
    inputs: &[W],
    targets: &[Y],
) -> Result<(f64, Vec<f64>)> {
    if inputs.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if inputs.len() != targets.len() {
        return Err(ModelError::DimensionMismatch {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    let topology = params.topology();
    let out_size = topology.output_size;
    for y in targets {
        if y.as_ref().len() != out_size {
            return Err(ModelError::TargetLength {
                expected: out_size,
                got: y.as_ref().len(),
            });
        }
    }
    let refs: Vec<&[f64]> = inputs.iter().map(|w| w.as_ref()).collect();
    let (out, traces) = run_forward(params, &refs)?;
    let layout = topology.layout();
    let steps = topology.lookback;
    let batch = refs.len();
    let scale = 1.0 / (batch * out_size) as f64;

    let mut loss = 0.0;
    let mut d_out = Array2::<f64>::zeros((batch, out_size));
    for (b, y) in targets.iter().enumerate() {
        for (k, &target) in y.as_ref().iter().enumerate() {
            let err = out[[b, k]] - target;
            loss += err * err;
            d_out[[b, k]] = 2.0 * err * scale;
        }
    }
    loss *= scale;

    let p = params.values();
    let mut grad = vec![0.0; p.len()];
    let top = traces.last().unwrap();
    let top_hidden = top.h.ncols();
    let last_h = top.h.slice(s![steps * batch.., ..]);
    general_mat_mul(
        1.0,
        &d_out.t(),
        &last_h,
        0.0,
        &mut view_mut(&mut grad, layout.head_w, out_size, top_hidden),
    );
    for (k, g) in grad[layout.head_b..layout.total].iter_mut().enumerate() {
        *g = d_out.column(k).sum();
    }

    // upstream gradient w.r.t. the current layer's outputs at every step
    let mut d_h_seq = Array2::<f64>::zeros((steps * batch, top_hidden));
    {
        let head_w = view(p, layout.head_w, out_size, top_hidden);
        let mut last = d_h_seq.slice_mut(s![(steps - 1) * batch.., ..]);
        general_mat_mul(1.0, &d_out, &head_w, 0.0, &mut last);
    }
    for (slots, trace) in layout.layers.iter().zip(&traces).rev() {
        d_h_seq = layer_backward(p, &mut grad, slots, trace, &d_h_seq, steps, batch);
    }
    Ok((loss, grad))
}

/// Accumulates this layer's parameter gradients and returns the gradient w.r.t. its inputs.
fn layer_backward(
    params: &[f64],
    grad: &mut [f64],
    slots: &LayerSlots,
    trace: &LayerTrace,
    d_h_seq: &Array2<f64>,
    steps: usize,
    batch: usize,
) -> Array2<f64> {
    let hd = slots.hidden;
    let w_in = view(params, slots.w_in, 4 * hd, slots.input_size);
    let w_rec = view(params, slots.w_rec, 4 * hd, hd);

    let mut dz_all = Array2::<f64>::zeros((steps * batch, 4 * hd));
    let mut dh_next = Array2::<f64>::zeros((batch, hd));
    let mut dc_next = vec![0.0; batch * hd];
    for t in (0..steps).rev() {
        let rows = t * batch..(t + 1) * batch;
        let gates = trace.gates.slice(s![rows.clone(), ..]);
        let gates = gates.as_slice().unwrap();
        let c_prev = trace.c.slice(s![t * batch..(t + 1) * batch, ..]);
        let c_prev = c_prev.as_slice().unwrap();
        let tanh_c = trace.tanh_c.slice(s![rows.clone(), ..]);
        let tanh_c = tanh_c.as_slice().unwrap();
        let d_up = d_h_seq.slice(s![rows.clone(), ..]);
        let d_up = d_up.as_slice().unwrap();
        let dh_rec = dh_next.as_slice().unwrap();
        let mut dz_t = dz_all.slice_mut(s![rows.clone(), ..]);
        let dz = dz_t.as_slice_mut().unwrap();
        for b in 0..batch {
            let g = &gates[b * 4 * hd..(b + 1) * 4 * hd];
            let d = &mut dz[b * 4 * hd..(b + 1) * 4 * hd];
            for j in 0..hd {
                let idx = b * hd + j;
                let (i_g, f_g, g_g, o_g) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let dh = d_up[idx] + dh_rec[idx];
                let tc = tanh_c[idx];
                let dc = dc_next[idx] + dh * o_g * (1.0 - tc * tc);
                d[j] = dc * g_g * i_g * (1.0 - i_g);
                d[hd + j] = dc * c_prev[idx] * f_g * (1.0 - f_g);
                d[2 * hd + j] = dc * i_g * (1.0 - g_g * g_g);
                d[3 * hd + j] = dh * tc * o_g * (1.0 - o_g);
                dc_next[idx] = dc * f_g;
            }
        }
        let dz_view = dz_all.slice(s![rows, ..]);
        general_mat_mul(1.0, &dz_view, &w_rec, 0.0, &mut dh_next);
    }

    general_mat_mul(
        1.0,
        &dz_all.t(),
        &trace.x,
        0.0,
        &mut view_mut(grad, slots.w_in, 4 * hd, slots.input_size),
    );
    let h_prev = trace.h.slice(s![..steps * batch, ..]);
    general_mat_mul(
        1.0,
        &dz_all.t(),
        &h_prev,
        0.0,
        &mut view_mut(grad, slots.w_rec, 4 * hd, hd),
    );
    let db = dz_all.sum_axis(Axis(0));
    grad[slots.bias..slots.bias + 4 * hd].copy_from_slice(db.as_slice().unwrap());

    let mut dx = Array2::<f64>::zeros((steps * batch, slots.input_size));
    general_mat_mul(1.0, &dz_all, &w_in, 0.0, &mut dx);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    fn tiny() -> ModelTopology {
        ModelTopology {
            input_size: 1,
            hidden_sizes: vec![2],
            output_size: 1,
            lookback: 1,
        }
    }

    #[test]
    fn fast_tanh_matches_libm() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.005;
            assert!((tanh(x) - x.tanh()).abs() <= 4.0 * f64::EPSILON * x.tanh().abs().max(1e-300) + 1e-300);
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(800.0), 1.0);
        assert_eq!(tanh(-800.0), -1.0);
    }

    #[test]
    fn zero_params_predict_zero() {
        let p = ParamVector::zeros(ModelTopology::model2()).unwrap();
        let out = forward(&p, &[0.3; 15]).unwrap();
        assert_eq!(out, vec![0.0; 5]);
    }

    #[test]
    fn one_hand_computed_step() {
        // layout for {1,[2],1}: w_in (8x1), w_rec (8x2), bias (8), head_w (1x2), head_b (1)
        let mut v = vec![0.0; tiny().param_count()];
        assert_eq!(v.len(), 8 + 16 + 8 + 2 + 1);
        let w_in = [0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8];
        v[..8].copy_from_slice(&w_in);
        let bias = [0.01, 0.02, 1.0, 1.0, -0.1, 0.2, 0.05, -0.05];
        v[24..32].copy_from_slice(&bias);
        v[32] = 1.5;
        v[33] = -2.0;
        v[34] = 0.25;
        let p = ParamVector::new(tiny(), v).unwrap();
        let x = 0.5;
        // h_prev = c_prev = 0, so only input weights and biases matter
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let unit = |k: usize| {
            let i = sig(w_in[k] * x + bias[k]);
            let g = (w_in[4 + k] * x + bias[4 + k]).tanh();
            let o = sig(w_in[6 + k] * x + bias[6 + k]);
            o * (i * g).tanh()
        };
        let expected = 1.5 * unit(0) - 2.0 * unit(1) + 0.25;
        let got = forward(&p, &[x]).unwrap();
        assert!((got[0] - expected).abs() < 1e-15, "{} vs {}", got[0], expected);
        // spot values of the same step computed by hand
        assert!((unit(0) - 0.045_814_702_211).abs() < 1e-11);
        assert!((unit(1) + 0.028_043_389_909).abs() < 1e-11);
    }

    #[test]
    fn shapes_and_errors() {
        let p = init_params(&ModelTopology::model2().with_hidden(vec![6, 6]), 1).unwrap();
        assert_eq!(forward(&p, &[0.1; 15]).unwrap().len(), 5);
        assert!(matches!(
            forward(&p, &[0.1; 14]),
            Err(ModelError::WindowLength { expected: 15, got: 14 })
        ));
        let empty: [&[f64]; 0] = [];
        assert!(matches!(
            loss_and_gradient(&p, &empty, &empty),
            Err(ModelError::EmptyBatch)
        ));
        assert!(matches!(
            loss_and_gradient(&p, &[[0.1; 15]], &[[0.0; 4]]),
            Err(ModelError::TargetLength { .. })
        ));
    }

    #[test]
    fn batch_matches_single_predictions() {
        let t = ModelTopology {
            input_size: 1,
            hidden_sizes: vec![5, 3],
            output_size: 2,
            lookback: 4,
        };
        let p = init_params(&t, 9).unwrap();
        let windows = [[0.1, 0.2, 0.3, 0.4], [0.9, 0.1, 0.5, 0.0], [0.0; 4]];
        let many = predict_many(&p, &windows).unwrap();
        for (w, m) in windows.iter().zip(&many) {
            let one = forward(&p, w).unwrap();
            for (a, b) in one.iter().zip(m) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let t = ModelTopology {
            input_size: 1,
            hidden_sizes: vec![3],
            output_size: 2,
            lookback: 3,
        };
        let p = init_params(&t, 5).unwrap();
        let inputs = [[0.2, 0.4, 0.1], [0.7, 0.7, 0.3]];
        let targets = predict_many(&p, &inputs).unwrap();
        let (loss, grad) = loss_and_gradient(&p, &inputs, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_mean_loss_and_gradient() {
        let t = ModelTopology {
            input_size: 1,
            hidden_sizes: vec![4, 4],
            output_size: 1,
            lookback: 6,
        };
        let p = init_params(&t, 21).unwrap();
        let inputs = vec![
            vec![0.1, 0.3, 0.2, 0.5, 0.4, 0.6],
            vec![0.9, 0.8, 0.6, 0.4, 0.3, 0.1],
        ];
        let targets = vec![vec![0.7], vec![0.05]];
        let (l1, g1) = loss_and_gradient(&p, &inputs, &targets).unwrap();
        let inputs2: Vec<_> = inputs.iter().chain(&inputs).cloned().collect();
        let targets2: Vec<_> = targets.iter().chain(&targets).cloned().collect();
        let (l2, g2) = loss_and_gradient(&p, &inputs2, &targets2).unwrap();
        assert!((l1 - l2).abs() <= 1e-15 * l1.abs().max(1.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-3));
        }
    }
}
