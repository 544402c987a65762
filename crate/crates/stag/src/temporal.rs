//! Short-time recurrent encoder: consumes the K grid representations of
//! one interval and emits the final output o_K, with exact
//! backpropagation through time.
//!
//! Default cell is a vanilla tanh recurrence with o_k = c_k. An LSTM cell
//! sits behind the same step interface as an optional configuration value;
//! its weight matrices stack the four gates (i, f, g, o) row-wise.

use rand::Rng;

use crate::error::{Result, StagError};
use crate::mat::{axpy, Mat};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CellKind {
    Tanh,
    Lstm,
}

impl CellKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::Tanh => "tanh",
            CellKind::Lstm => "lstm",
        }
    }

    pub fn from_str(s: &str) -> Option<CellKind> {
        match s {
            "tanh" => Some(CellKind::Tanh),
            "lstm" => Some(CellKind::Lstm),
            _ => None,
        }
    }

    fn gate_rows(&self, hidden: usize) -> usize {
        match self {
            CellKind::Tanh => hidden,
            CellKind::Lstm => 4 * hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// gate_rows x input_dim.
    pub w_in: Mat,
    /// gate_rows x hidden_dim.
    pub w_rec: Mat,
    /// gate_rows.
    pub b: Vec<f64>,
}

impl RnnParams {
    /// W_in, W_rec ~ uniform(-a, a) with a = 1/sqrt(fan_in); b = 0.
    pub fn init(cell: CellKind, input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let rows = cell.gate_rows(hidden_dim);
        let mut rng = crate::seeds::rng(seed, "rnn-init");
        let a_in = 1.0 / (input_dim as f64).sqrt();
        let w_in = Mat::from_fn(rows, input_dim, |_, _| rng.random_range(-a_in..a_in));
        let a_rec = 1.0 / (hidden_dim as f64).sqrt();
        let w_rec = Mat::from_fn(rows, hidden_dim, |_, _| rng.random_range(-a_rec..a_rec));
        RnnParams {
            cell,
            input_dim,
            hidden_dim,
            w_in,
            w_rec,
            b: vec![0.0; rows],
        }
    }

    pub fn zeros(cell: CellKind, input_dim: usize, hidden_dim: usize) -> Self {
        let rows = cell.gate_rows(hidden_dim);
        RnnParams {
            cell,
            input_dim,
            hidden_dim,
            w_in: Mat::zeros(rows, input_dim),
            w_rec: Mat::zeros(rows, hidden_dim),
            b: vec![0.0; rows],
        }
    }

    fn check(&self) -> Result<()> {
        let rows = self.cell.gate_rows(self.hidden_dim);
        if self.w_in.rows() != rows
            || self.w_in.cols() != self.input_dim
            || self.w_rec.rows() != rows
            || self.w_rec.cols() != self.hidden_dim
            || self.b.len() != rows
        {
            return Err(StagError::InvalidLength(
                "rnn parameter shapes inconsistent with dims".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.w_in.data().len() + self.w_rec.data().len() + self.b.len()
    }
}

/// Recurrent state. `c` is the cell state; `h` is the emitted output,
/// which mirrors `c` for the tanh cell. Initial state is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl RnnState {
    pub fn zero(hidden_dim: usize) -> Self {
        RnnState {
            c: vec![0.0; hidden_dim],
            h: vec![0.0; hidden_dim],
        }
    }
}

#[derive(Clone, Debug)]
struct StepRecord {
    input: Vec<f64>,
    c_prev: Vec<f64>,
    h_prev: Vec<f64>,
    /// Post-activation cell state.
    c: Vec<f64>,
    /// LSTM only: gate activations i, f, g, o and tanh(c).
    gates: Option<LstmGates>,
}

#[derive(Clone, Debug)]
struct LstmGates {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Forward record sufficient for exact BPTT.
#[derive(Clone, Debug)]
pub struct RnnTape {
    steps: Vec<StepRecord>,
    hidden_dim: usize,
    input_dim: usize,
    cell: CellKind,
}

impl RnnTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn step_record(y: &[f64], state: &RnnState, p: &RnnParams) -> Result<(Vec<f64>, RnnState, StepRecord)> {
    p.check()?;
    if y.len() != p.input_dim {
        return Err(StagError::InvalidLength(format!(
            "rnn_step input dim {} does not match {}",
            y.len(),
            p.input_dim
        )));
    }
    if state.c.len() != p.hidden_dim || state.h.len() != p.hidden_dim {
        return Err(StagError::InvalidLength(format!(
            "rnn_step state dim {} does not match {}",
            state.c.len(),
            p.hidden_dim
        )));
    }
    let h = p.hidden_dim;
    let mut z = p.w_in.matvec(y);
    let rec = p.w_rec.matvec(&state.h);
    for (zi, (ri, bi)) in z.iter_mut().zip(rec.iter().zip(&p.b)) {
        *zi += ri + bi;
    }
    match p.cell {
        CellKind::Tanh => {
            let c: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
            let record = StepRecord {
                input: y.to_vec(),
                c_prev: state.c.clone(),
                h_prev: state.h.clone(),
                c: c.clone(),
                gates: None,
            };
            let next = RnnState {
                c: c.clone(),
                h: c.clone(),
            };
            Ok((c, next, record))
        }
        CellKind::Lstm => {
            let i: Vec<f64> = z[0..h].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * h..4 * h].iter().map(|&v| sigmoid(v)).collect();
            let c: Vec<f64> = (0..h)
                .map(|j| f[j] * state.c[j] + i[j] * g[j])
                .collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let out: Vec<f64> = (0..h).map(|j| o[j] * tanh_c[j]).collect();
            let record = StepRecord {
                input: y.to_vec(),
                c_prev: state.c.clone(),
                h_prev: state.h.clone(),
                c: c.clone(),
                gates: Some(LstmGates {
                    i,
                    f,
                    g,
                    o,
                    tanh_c,
                }),
            };
            let next = RnnState {
                c,
                h: out.clone(),
            };
            Ok((out, next, record))
        }
    }
}

/// One recurrence step: o_k, c_k = f(y_k, c_{k-1}).
pub fn rnn_step(y: &[f64], state: &RnnState, p: &RnnParams) -> Result<(Vec<f64>, RnnState)> {
    let (out, next, _) = step_record(y, state, p)?;
    Ok((out, next))
}

/// Iterate from the zero state; returns o_K and the tape for BPTT.
pub fn rnn_forward<S: AsRef<[f64]>>(grids: &[S], p: &RnnParams) -> Result<(Vec<f64>, RnnTape)> {
    if grids.is_empty() {
        return Err(StagError::EmptyInput("rnn_forward needs at least one grid"));
    }
    let mut state = RnnState::zero(p.hidden_dim);
    let mut steps = Vec::with_capacity(grids.len());
    let mut out = Vec::new();
    for y in grids {
        let (o, next, record) = step_record(y.as_ref(), &state, p)?;
        out = o;
        state = next;
        steps.push(record);
    }
    Ok((
        out,
        RnnTape {
            steps,
            hidden_dim: p.hidden_dim,
            input_dim: p.input_dim,
            cell: p.cell,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct RnnGrads {
    pub w_in: Mat,
    pub w_rec: Mat,
    pub b: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
}

/// Exact reverse-mode gradients of <grad_out, o_K> over parameters and
/// every input grid.
pub fn rnn_backward(tape: &RnnTape, p: &RnnParams, grad_out: &[f64]) -> Result<RnnGrads> {
    p.check()?;
    if tape.cell != p.cell || tape.hidden_dim != p.hidden_dim || tape.input_dim != p.input_dim {
        return Err(StagError::InvalidLength(
            "rnn_backward tape does not match parameters".into(),
        ));
    }
    if grad_out.len() != p.hidden_dim {
        return Err(StagError::InvalidLength(format!(
            "rnn_backward cotangent dim {} does not match hidden dim {}",
            grad_out.len(),
            p.hidden_dim
        )));
    }
    let h = p.hidden_dim;
    let rows = p.cell.gate_rows(h);
    let mut g_w_in = Mat::zeros(rows, p.input_dim);
    let mut g_w_rec = Mat::zeros(rows, h);
    let mut g_b = vec![0.0; rows];
    let mut g_inputs = vec![vec![0.0; p.input_dim]; tape.steps.len()];

    // Cotangents flowing into the step outputs.
    let mut g_h = grad_out.to_vec();
    let mut g_c = vec![0.0; h];

    for (k, rec) in tape.steps.iter().enumerate().rev() {
        match p.cell {
            CellKind::Tanh => {
                // h_k = c_k = tanh(z_k); fold both cotangents into z.
                let mut g_z = vec![0.0; h];
                for j in 0..h {
                    let total = g_h[j] + g_c[j];
                    g_z[j] = total * (1.0 - rec.c[j] * rec.c[j]);
                }
                g_w_in.add_outer(&g_z, &rec.input, 1.0);
                g_w_rec.add_outer(&g_z, &rec.h_prev, 1.0);
                axpy(&mut g_b, 1.0, &g_z);
                g_inputs[k] = p.w_in.matvec_t(&g_z);
                g_h = p.w_rec.matvec_t(&g_z);
                g_c = vec![0.0; h];
            }
            CellKind::Lstm => {
                let gates = rec.gates.as_ref().expect("lstm tape record");
                let mut g_z = vec![0.0; 4 * h];
                let mut g_c_prev = vec![0.0; h];
                for j in 0..h {
                    // h = o * tanh(c)
                    let go = g_h[j] * gates.tanh_c[j];
                    let gc_total =
                        g_c[j] + g_h[j] * gates.o[j] * (1.0 - gates.tanh_c[j] * gates.tanh_c[j]);
                    // c = f*c_prev + i*g
                    let gi = gc_total * gates.g[j];
                    let gf = gc_total * rec.c_prev[j];
                    let gg = gc_total * gates.i[j];
                    g_c_prev[j] = gc_total * gates.f[j];
                    g_z[j] = gi * gates.i[j] * (1.0 - gates.i[j]);
                    g_z[h + j] = gf * gates.f[j] * (1.0 - gates.f[j]);
                    g_z[2 * h + j] = gg * (1.0 - gates.g[j] * gates.g[j]);
                    g_z[3 * h + j] = go * gates.o[j] * (1.0 - gates.o[j]);
                }
                g_w_in.add_outer(&g_z, &rec.input, 1.0);
                g_w_rec.add_outer(&g_z, &rec.h_prev, 1.0);
                axpy(&mut g_b, 1.0, &g_z);
                g_inputs[k] = p.w_in.matvec_t(&g_z);
                g_h = p.w_rec.matvec_t(&g_z);
                g_c = g_c_prev;
            }
        }
    }

    Ok(RnnGrads {
        w_in: g_w_in,
        w_rec: g_w_rec,
        b: g_b,
        inputs: g_inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::dot;
    use rand::Rng;

    fn random_params(cell: CellKind, d: usize, h: usize, seed: u64) -> RnnParams {
        RnnParams::init(cell, d, h, seed)
    }

    fn random_grids(k: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::seeds::rng(seed, "rnn-grids");
        (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_parameters_emit_zero() {
        let p = RnnParams::zeros(CellKind::Tanh, 3, 4);
        let (o, _) = rnn_step(&[0.3, -0.7, 2.0], &RnnState::zero(4), &p).unwrap();
        assert!(o.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_hand_value() {
        let mut p = RnnParams::zeros(CellKind::Tanh, 1, 1);
        *p.w_in.at_mut(0, 0) = 1.0;
        let (o, _) = rnn_step(&[0.5], &RnnState::zero(1), &p).unwrap();
        assert!((o[0] - 0.46212).abs() < 5e-6);
        assert!((o[0] - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn bias_only_cell_ignores_input() {
        let mut p = RnnParams::zeros(CellKind::Tanh, 2, 3);
        p.b = vec![0.2, -1.0, 0.7];
        let (o1, _) = rnn_step(&[5.0, -3.0], &RnnState::zero(3), &p).unwrap();
        let (o2, _) = rnn_step(&[-9.0, 0.1], &RnnState::zero(3), &p).unwrap();
        assert_eq!(o1, o2);
        for (a, b) in o1.iter().zip(&p.b) {
            assert!((a - b.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_reduces_to_step_at_k1_and_zero_fixed_point() {
        let p = random_params(CellKind::Tanh, 3, 5, 1);
        let grids = random_grids(1, 3, 2);
        let (o, _) = rnn_forward(&grids, &p).unwrap();
        let (o_step, _) = rnn_step(&grids[0], &RnnState::zero(5), &p).unwrap();
        assert_eq!(o, o_step);

        let mut zb = p.clone();
        zb.b = vec![0.0; 5];
        let zeros = vec![vec![0.0; 3]; 6];
        let (o, _) = rnn_forward(&zeros, &zb).unwrap();
        assert!(o.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn order_sensitivity() {
        for cell in [CellKind::Tanh, CellKind::Lstm] {
            let p = random_params(cell, 4, 6, 3);
            let grids = random_grids(5, 4, 4);
            let mut reversed = grids.clone();
            reversed.reverse();
            let (a, _) = rnn_forward(&grids, &p).unwrap();
            let (b, _) = rnn_forward(&reversed, &p).unwrap();
            let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!(diff > 1e-6, "{cell:?} insensitive to order");
        }
    }

    #[test]
    fn outputs_strictly_inside_unit_box_and_deterministic() {
        let p = random_params(CellKind::Tanh, 4, 6, 5);
        let grids = random_grids(7, 4, 6);
        let (o1, _) = rnn_forward(&grids, &p).unwrap();
        let (o2, _) = rnn_forward(&grids, &p).unwrap();
        assert_eq!(o1, o2);
        assert!(o1.iter().all(|&v| v.abs() < 1.0));
    }

    #[test]
    fn zero_cotangent_and_dead_path_gradients() {
        let p = random_params(CellKind::Tanh, 3, 4, 7);
        let grids = random_grids(1, 3, 8);
        let (_, tape) = rnn_forward(&grids, &p).unwrap();
        let g = rnn_backward(&tape, &p, &[0.0; 4]).unwrap();
        assert!(g.w_in.data().iter().all(|&v| v == 0.0));
        assert!(g.b.iter().all(|&v| v == 0.0));
        // K = 1 starts from c_0 = 0, so W_rec never touches the output.
        let g = rnn_backward(&tape, &p, &[1.0, -2.0, 0.5, 0.3]).unwrap();
        assert!(g.w_rec.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for (cell, seed) in [(CellKind::Tanh, 10u64), (CellKind::Lstm, 11)] {
            let d = 6;
            let h = 4;
            let k = 5;
            let p = random_params(cell, d, h, seed);
            let grids = random_grids(k, d, seed + 100);
            let mut rng = crate::seeds::rng(seed + 200, "rnn-cotangent");
            let g: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, tape) = rnn_forward(&grids, &p).unwrap();
            let grads = rnn_backward(&tape, &p, &g).unwrap();
            let step = 1e-5;
            let eval = |p: &RnnParams, grids: &[Vec<f64>]| -> f64 {
                dot(&rnn_forward(grids, p).unwrap().0, &g)
            };

            let rows = p.w_in.rows();
            for r in 0..rows {
                for c in 0..d {
                    let mut pp = p.clone();
                    *pp.w_in.at_mut(r, c) += step;
                    let mut pm = p.clone();
                    *pm.w_in.at_mut(r, c) -= step;
                    let num = (eval(&pp, &grids) - eval(&pm, &grids)) / (2.0 * step);
                    let ana = grads.w_in.at(r, c);
                    let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
                    assert!(rel < 1e-4, "{cell:?} w_in[{r}][{c}]: {ana} vs {num}");
                }
                for c in 0..h {
                    let mut pp = p.clone();
                    *pp.w_rec.at_mut(r, c) += step;
                    let mut pm = p.clone();
                    *pm.w_rec.at_mut(r, c) -= step;
                    let num = (eval(&pp, &grids) - eval(&pm, &grids)) / (2.0 * step);
                    let ana = grads.w_rec.at(r, c);
                    let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
                    assert!(rel < 1e-4, "{cell:?} w_rec[{r}][{c}]: {ana} vs {num}");
                }
                let mut pp = p.clone();
                pp.b[r] += step;
                let mut pm = p.clone();
                pm.b[r] -= step;
                let num = (eval(&pp, &grids) - eval(&pm, &grids)) / (2.0 * step);
                let ana = grads.b[r];
                let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
                assert!(rel < 1e-4, "{cell:?} b[{r}]: {ana} vs {num}");
            }
            for t in 0..k {
                for c in 0..d {
                    let mut gp = grids.clone();
                    gp[t][c] += step;
                    let mut gm = grids.clone();
                    gm[t][c] -= step;
                    let num = (eval(&p, &gp) - eval(&p, &gm)) / (2.0 * step);
                    let ana = grads.inputs[t][c];
                    let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
                    assert!(rel < 1e-4, "{cell:?} input[{t}][{c}]: {ana} vs {num}");
                }
            }
        }
    }

    #[test]
    fn dimension_mismatches_error() {
        let p = random_params(CellKind::Tanh, 3, 4, 12);
        assert!(matches!(
            rnn_step(&[1.0, 2.0], &RnnState::zero(4), &p),
            Err(StagError::InvalidLength(_))
        ));
        assert!(matches!(
            rnn_step(&[1.0, 2.0, 3.0], &RnnState::zero(3), &p),
            Err(StagError::InvalidLength(_))
        ));
        assert!(matches!(
            rnn_forward::<Vec<f64>>(&[], &p),
            Err(StagError::EmptyInput(_))
        ));
        let (_, tape) = rnn_forward(&random_grids(2, 3, 1), &p).unwrap();
        assert!(matches!(
            rnn_backward(&tape, &p, &[1.0; 3]),
            Err(StagError::InvalidLength(_))
        ));
        let other = random_params(CellKind::Lstm, 3, 4, 13);
        assert!(matches!(
            rnn_backward(&tape, &other, &[1.0; 4]),
            Err(StagError::InvalidLength(_))
        ));
    }
}
