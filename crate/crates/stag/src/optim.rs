//! Adam training of the interval encoder, the interval-level loss it
//! minimizes, and the finite-difference gradient checker that validates
//! every analytic gradient in the crate.
//!
//! Training never sees whole videos: it draws random short intervals
//! (batches of 64 by default) from precomputed grid tables, which is also
//! the data augmentation scheme. The binary cross-entropy head trained
//! here is disposable; the SVM replaces it after training.

use std::path::Path;

use rand::Rng;

use crate::error::{Result, StagError};
use crate::fsutil;
use crate::mat::{axpy, dot, Mat};
use crate::pipeline::{Emotion, Label};
use crate::pooling::{
    cbp_pool, cbp_pool_backward, l2_normalize_backward, l2_normalize_with_norm, netvlad_pool,
    netvlad_pool_backward, netvlad_pool_forward, power_normalize, power_normalize_grad,
    NetVladParams, SketchParams,
};
use crate::seeds;
use crate::temporal::{rnn_backward, rnn_forward, CellKind, RnnParams};

pub const DEFAULT_ALPHA: f64 = 0.001;
pub const DEFAULT_BETA1: f64 = 0.7;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_BATCH: usize = 64;

/// Base learning rate decays by 10x every 40k iterations, as a staircase.
pub fn lr_schedule(t: usize) -> f64 {
    DEFAULT_ALPHA * 0.1f64.powi((t / 40_000) as i32)
}

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    /// Completed steps.
    pub t: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate used by the most recent step.
    pub last_lr: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_hyperparams(len, DEFAULT_ALPHA, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_hyperparams(len: usize, alpha: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            alpha,
            beta1,
            beta2,
            eps,
            last_lr: alpha,
        }
    }
}

/// One Adam update in place. The staircase decay applies to the state's
/// base rate and is evaluated at the pre-increment step count, so the
/// first 40k steps run at full alpha.
pub fn adam_step(params: &mut [f64], grads: &[f64], st: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != st.m.len() {
        return Err(StagError::InvalidLength(format!(
            "adam_step size mismatch: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            st.m.len()
        )));
    }
    let lr = st.alpha * 0.1f64.powi((st.t / 40_000) as i32);
    st.last_lr = lr;
    st.t += 1;
    let bc1 = 1.0 - st.beta1.powi(st.t as i32);
    let bc2 = 1.0 - st.beta2.powi(st.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
        let m_hat = st.m[i] / bc1;
        let v_hat = st.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + st.eps);
    }
    Ok(())
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference check of an analytic gradient. Returns the worst
/// per-coordinate relative error |a - n| / max(|a|, |n|, 1e-8).
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(StagError::InvalidLength(format!(
            "grad_check: point has {} coordinates, analytic gradient {}",
            point.len(),
            analytic.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(StagError::Numerical(format!(
                "grad_check: non-finite evaluation near coordinate {i}"
            )));
        }
        let num = (fp - fm) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Disposable linear head over o_K used only to drive training.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w: Vec<f64>,
    pub b: f64,
}

impl HeadParams {
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = seeds::rng(seed, "head-init");
        let a = 1.0 / (dim as f64).sqrt();
        HeadParams {
            w: (0..dim).map(|_| rng.random_range(-a..a)).collect(),
            b: 0.0,
        }
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

/// Numerically stable binary cross-entropy of logit z against y in {0,1}.
fn bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn label_target(label: Label) -> f64 {
    match label {
        Label::Real => 1.0,
        Label::Fake => 0.0,
    }
}

/// Loss of one interval: BCE of the head logit over o_K.
pub fn interval_loss_value<S: AsRef<[f64]>>(
    grids: &[S],
    rnn: &RnnParams,
    head: &HeadParams,
    label: Label,
) -> Result<f64> {
    let (o, _) = rnn_forward(grids, rnn)?;
    if head.w.len() != o.len() {
        return Err(StagError::InvalidLength(format!(
            "head dim {} does not match output dim {}",
            head.w.len(),
            o.len()
        )));
    }
    Ok(bce(dot(&head.w, &o) + head.b, label_target(label)))
}

#[derive(Clone, Debug)]
pub struct IntervalLossGrads {
    pub w_in: Mat,
    pub w_rec: Mat,
    pub b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub inputs: Vec<Vec<f64>>,
}

/// Loss plus exact gradients over the RNN parameters, the head, and the
/// input grid vectors.
pub fn interval_loss<S: AsRef<[f64]>>(
    grids: &[S],
    rnn: &RnnParams,
    head: &HeadParams,
    label: Label,
) -> Result<(f64, IntervalLossGrads)> {
    let (o, tape) = rnn_forward(grids, rnn)?;
    if head.w.len() != o.len() {
        return Err(StagError::InvalidLength(format!(
            "head dim {} does not match output dim {}",
            head.w.len(),
            o.len()
        )));
    }
    let y = label_target(label);
    let z = dot(&head.w, &o) + head.b;
    let loss = bce(z, y);
    let dz = sigmoid(z) - y;
    let mut d_out = head.w.clone();
    for v in d_out.iter_mut() {
        *v *= dz;
    }
    let g = rnn_backward(&tape, rnn, &d_out)?;
    let head_w = o.iter().map(|&oi| dz * oi).collect();
    Ok((
        loss,
        IntervalLossGrads {
            w_in: g.w_in,
            w_rec: g.w_rec,
            b: g.b,
            head_w,
            head_b: dz,
            inputs: g.inputs,
        },
    ))
}

/// Grid tables for one emotion's videos: deduplicated grid vectors plus,
/// per video, the list of intervals as K row indices each. Built once by
/// the pipeline and shared between aggregator training and embedding.
#[derive(Clone, Debug)]
pub struct IntervalSet {
    grid_dim: usize,
    k: usize,
    grids: Vec<f64>,
    videos: Vec<VideoIntervals>,
}

#[derive(Clone, Debug)]
struct VideoIntervals {
    label: Label,
    intervals: Vec<Vec<usize>>,
}

impl IntervalSet {
    pub fn new(grid_dim: usize, k: usize) -> Self {
        assert!(grid_dim > 0 && k > 0, "degenerate interval set shape");
        IntervalSet {
            grid_dim,
            k,
            grids: Vec::new(),
            videos: Vec::new(),
        }
    }

    pub fn grid_dim(&self) -> usize {
        self.grid_dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn add_grid(&mut self, grid: &[f64]) -> Result<usize> {
        if grid.len() != self.grid_dim {
            return Err(StagError::InvalidLength(format!(
                "grid dim {} does not match table dim {}",
                grid.len(),
                self.grid_dim
            )));
        }
        let row = self.grids.len() / self.grid_dim;
        self.grids.extend_from_slice(grid);
        Ok(row)
    }

    pub fn num_grid_rows(&self) -> usize {
        self.grids.len() / self.grid_dim
    }

    pub fn grid_row(&self, row: usize) -> &[f64] {
        &self.grids[row * self.grid_dim..(row + 1) * self.grid_dim]
    }

    pub fn add_video(&mut self, label: Label) -> usize {
        self.videos.push(VideoIntervals {
            label,
            intervals: Vec::new(),
        });
        self.videos.len() - 1
    }

    pub fn add_interval(&mut self, video: usize, grid_rows: &[usize]) -> Result<()> {
        if grid_rows.len() != self.k {
            return Err(StagError::InvalidLength(format!(
                "interval has {} grids, table expects {}",
                grid_rows.len(),
                self.k
            )));
        }
        let n = self.num_grid_rows();
        if grid_rows.iter().any(|&r| r >= n) {
            return Err(StagError::InvalidLength(format!(
                "interval references a grid row >= {n}"
            )));
        }
        self.videos[video].intervals.push(grid_rows.to_vec());
        Ok(())
    }

    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn video_label(&self, video: usize) -> Label {
        self.videos[video].label
    }

    pub fn num_intervals(&self, video: usize) -> usize {
        self.videos[video].intervals.len()
    }

    pub fn total_intervals(&self) -> usize {
        self.videos.iter().map(|v| v.intervals.len()).sum()
    }

    pub fn interval_grids(&self, video: usize, interval: usize) -> Vec<&[f64]> {
        self.videos[video].intervals[interval]
            .iter()
            .map(|&r| self.grid_row(r))
            .collect()
    }

    fn has_both_labels(&self) -> bool {
        let mut real = false;
        let mut fake = false;
        for v in &self.videos {
            if v.intervals.is_empty() {
                continue;
            }
            match v.label {
                Label::Real => real = true,
                Label::Fake => fake = true,
            }
        }
        real && fake
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub cell: CellKind,
    pub hidden_dim: usize,
    pub max_iters: usize,
    pub batch_size: usize,
    /// Validation cadence in iterations.
    pub eval_every: usize,
    /// Consecutive non-improving evaluations tolerated before stopping.
    pub patience: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            cell: CellKind::Tanh,
            hidden_dim: 128,
            max_iters: 50_000,
            batch_size: DEFAULT_BATCH,
            eval_every: 500,
            patience: 10,
            alpha: DEFAULT_ALPHA,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            seed: 0,
        }
    }
}

/// One logging row. Iterations are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rnn: RnnParams,
    pub head: HeadParams,
    pub records: Vec<TrainRecord>,
    pub best_val_loss: f64,
    /// Iterations actually executed (early stopping may cut max_iters short).
    pub iterations: usize,
}

fn pack_params(rnn: &RnnParams, head: &HeadParams) -> Vec<f64> {
    let mut flat =
        Vec::with_capacity(rnn.param_count() + head.w.len() + 1);
    flat.extend_from_slice(rnn.w_in.data());
    flat.extend_from_slice(rnn.w_rec.data());
    flat.extend_from_slice(&rnn.b);
    flat.extend_from_slice(&head.w);
    flat.push(head.b);
    flat
}

fn unpack_params(
    flat: &[f64],
    cell: CellKind,
    input_dim: usize,
    hidden_dim: usize,
) -> (RnnParams, HeadParams) {
    let mut p = RnnParams::zeros(cell, input_dim, hidden_dim);
    let rows = p.w_in.rows();
    let mut at = 0;
    p.w_in = Mat::from_vec(rows, input_dim, flat[at..at + rows * input_dim].to_vec());
    at += rows * input_dim;
    p.w_rec = Mat::from_vec(rows, hidden_dim, flat[at..at + rows * hidden_dim].to_vec());
    at += rows * hidden_dim;
    p.b = flat[at..at + rows].to_vec();
    at += rows;
    let head = HeadParams {
        w: flat[at..at + hidden_dim].to_vec(),
        b: flat[at + hidden_dim],
    };
    (p, head)
}

fn accumulate_grads(flat_grad: &mut [f64], g: &IntervalLossGrads, scale: f64) {
    let mut at = 0;
    let chunks: [&[f64]; 3] = [g.w_in.data(), g.w_rec.data(), g.b.as_slice()];
    for chunk in chunks {
        axpy(&mut flat_grad[at..at + chunk.len()], scale, chunk);
        at += chunk.len();
    }
    axpy(&mut flat_grad[at..at + g.head_w.len()], scale, &g.head_w);
    at += g.head_w.len();
    flat_grad[at] += scale * g.head_b;
}

fn mean_set_loss(set: &IntervalSet, rnn: &RnnParams, head: &HeadParams) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for v in 0..set.num_videos() {
        let label = set.video_label(v);
        for i in 0..set.num_intervals(v) {
            total += interval_loss_value(&set.interval_grids(v, i), rnn, head, label)?;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(f64::NAN);
    }
    Ok(total / count as f64)
}

/// Adam training of the interval encoder for one emotion. Samples batches
/// uniformly over (video, interval), evaluates validation loss every
/// `eval_every` iterations, early-stops after `patience` non-improving
/// evaluations, and returns the parameters of the best evaluation.
///
/// With an empty validation set the loop runs to max_iters and the
/// recorded validation losses are NaN.
pub fn train_aggregator(
    train: &IntervalSet,
    val: &IntervalSet,
    emotion: Emotion,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if train.total_intervals() == 0 {
        return Err(StagError::EmptyInput("training set has no intervals"));
    }
    if val.grid_dim() != train.grid_dim() || val.k() != train.k() {
        return Err(StagError::InvalidLength(format!(
            "validation table shape ({}, K={}) does not match training ({}, K={})",
            val.grid_dim(),
            val.k(),
            train.grid_dim(),
            train.k()
        )));
    }
    if !train.has_both_labels() {
        return Err(StagError::DegenerateLabels(format!(
            "{emotion}: training intervals contain a single class"
        )));
    }

    let d = train.grid_dim();
    let rnn0 = RnnParams::init(opts.cell, d, opts.hidden_dim, opts.seed);
    let head0 = HeadParams::init(opts.hidden_dim, opts.seed);
    let mut flat = pack_params(&rnn0, &head0);
    let mut adam =
        AdamState::with_hyperparams(flat.len(), opts.alpha, opts.beta1, opts.beta2, opts.eps);
    let mut rng = seeds::rng(opts.seed, "train-batches");
    let eligible: Vec<usize> = (0..train.num_videos())
        .filter(|&v| train.num_intervals(v) > 0)
        .collect();

    let have_val = val.total_intervals() > 0;
    let mut best_flat = flat.clone();
    let mut best_val = if have_val {
        let (rnn, head) = unpack_params(&flat, opts.cell, d, opts.hidden_dim);
        mean_set_loss(val, &rnn, &head)?
    } else {
        f64::NAN
    };
    let mut stall = 0usize;
    let mut records = Vec::new();
    let mut grad = vec![0.0; flat.len()];
    let mut iterations = 0usize;

    for t in 0..opts.max_iters {
        let (rnn, head) = unpack_params(&flat, opts.cell, d, opts.hidden_dim);
        grad.fill(0.0);
        let mut batch_loss = 0.0;
        let inv = 1.0 / opts.batch_size as f64;
        for _ in 0..opts.batch_size {
            let v = eligible[rng.random_range(0..eligible.len())];
            let i = rng.random_range(0..train.num_intervals(v));
            let (loss, g) =
                interval_loss(&train.interval_grids(v, i), &rnn, &head, train.video_label(v))?;
            batch_loss += loss * inv;
            accumulate_grads(&mut grad, &g, inv);
        }
        adam_step(&mut flat, &grad, &mut adam)?;
        iterations = t + 1;

        if (t + 1) % opts.eval_every == 0 {
            let (rnn, head) = unpack_params(&flat, opts.cell, d, opts.hidden_dim);
            let val_loss = if have_val {
                mean_set_loss(val, &rnn, &head)?
            } else {
                f64::NAN
            };
            records.push(TrainRecord {
                iter: t + 1,
                train_loss: batch_loss,
                val_loss,
                lr: adam.last_lr,
            });
            if have_val {
                if val_loss < best_val {
                    best_val = val_loss;
                    best_flat = flat.clone();
                    stall = 0;
                } else {
                    stall += 1;
                    if stall >= opts.patience {
                        break;
                    }
                }
            }
        }
    }

    if !have_val {
        best_flat = flat;
    }
    let (rnn, head) = unpack_params(&best_flat, opts.cell, d, opts.hidden_dim);
    Ok(TrainOutcome {
        rnn,
        head,
        records,
        best_val_loss: best_val,
        iterations,
    })
}

/// CSV export of the training trace.
pub fn write_train_records(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut out = String::from("iter,train_loss,val_loss,lr\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iter, r.train_loss, r.val_loss, r.lr
        ));
    }
    fsutil::atomic_write(path, out.as_bytes())
}

pub const GRADCHECK_TOL: f64 = 1e-4;

pub const GRADCHECK_COMPONENTS: [&str; 7] = [
    "cbp_pool",
    "netvlad_pool",
    "rnn_bptt",
    "lstm_bptt",
    "power_normalize",
    "l2_normalize",
    "interval_loss",
];

#[derive(Clone, Debug)]
pub struct ComponentReport {
    pub component: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

const GRADCHECK_INSTANCES: usize = 20;

fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn check_cbp(seed: u64) -> Result<f64> {
    let (big_d, d, n) = (5usize, 8usize, 3usize);
    let sk = SketchParams::new(big_d, d, seed)?;
    let mut rng = seeds::rng(seed, "gradcheck-cbp");
    let point = random_vec(&mut rng, n * big_d, -1.0, 1.0);
    let g = random_vec(&mut rng, d, -1.0, 1.0);
    let feats: Vec<&[f64]> = point.chunks(big_d).collect();
    let analytic: Vec<f64> = cbp_pool_backward(&feats, &sk, &g)?.concat();
    grad_check(
        |x| {
            let feats: Vec<&[f64]> = x.chunks(big_d).collect();
            dot(&cbp_pool(&feats, &sk).unwrap(), &g)
        },
        &point,
        &analytic,
        DEFAULT_FD_STEP,
    )
}

fn check_netvlad(seed: u64) -> Result<f64> {
    let (n, d, c) = (4usize, 3usize, 2usize);
    let mut rng = seeds::rng(seed, "gradcheck-netvlad");
    let mut point = random_vec(&mut rng, n * d, -1.0, 1.0);
    point.extend(random_vec(&mut rng, c * d, -1.0, 1.0)); // centers
    point.extend(random_vec(&mut rng, c * d, -0.8, 0.8)); // weights
    point.extend(random_vec(&mut rng, c, -0.5, 0.5)); // biases
    let g = random_vec(&mut rng, c * d, -1.0, 1.0);

    let split = |x: &[f64]| -> (Vec<Vec<f64>>, NetVladParams) {
        let feats: Vec<Vec<f64>> = x[..n * d].chunks(d).map(|s| s.to_vec()).collect();
        let mut at = n * d;
        let centers = Mat::from_vec(c, d, x[at..at + c * d].to_vec());
        at += c * d;
        let weights = Mat::from_vec(c, d, x[at..at + c * d].to_vec());
        at += c * d;
        let biases = x[at..at + c].to_vec();
        (
            feats,
            NetVladParams {
                centers,
                weights,
                biases,
            },
        )
    };

    let (feats, params) = split(&point);
    let views: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
    let (_, tape) = netvlad_pool_forward(&views, &params)?;
    let grads = netvlad_pool_backward(&views, &params, &tape, &g)?;
    let mut analytic = grads.features.concat();
    analytic.extend_from_slice(grads.centers.data());
    analytic.extend_from_slice(grads.weights.data());
    analytic.extend_from_slice(&grads.biases);

    grad_check(
        |x| {
            let (feats, params) = split(x);
            let views: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
            dot(&netvlad_pool(&views, &params).unwrap(), &g)
        },
        &point,
        &analytic,
        DEFAULT_FD_STEP,
    )
}

fn check_rnn(cell: CellKind, seed: u64) -> Result<f64> {
    let (d, h, k) = (6usize, 4usize, 5usize);
    let mut rng = seeds::rng(seed, "gradcheck-rnn");
    let template = RnnParams::init(cell, d, h, seed);
    let rows = template.w_in.rows();
    let mut point = template.w_in.data().to_vec();
    point.extend_from_slice(template.w_rec.data());
    point.extend_from_slice(&template.b);
    point.extend(random_vec(&mut rng, k * d, -1.0, 1.0));
    let g = random_vec(&mut rng, h, -1.0, 1.0);

    let split = |x: &[f64]| -> (RnnParams, Vec<Vec<f64>>) {
        let mut p = RnnParams::zeros(cell, d, h);
        let mut at = 0;
        p.w_in = Mat::from_vec(rows, d, x[at..at + rows * d].to_vec());
        at += rows * d;
        p.w_rec = Mat::from_vec(rows, h, x[at..at + rows * h].to_vec());
        at += rows * h;
        p.b = x[at..at + rows].to_vec();
        at += rows;
        let grids = x[at..].chunks(d).map(|s| s.to_vec()).collect();
        (p, grids)
    };

    let (p, grids) = split(&point);
    let (_, tape) = rnn_forward(&grids, &p)?;
    let grads = rnn_backward(&tape, &p, &g)?;
    let mut analytic = grads.w_in.data().to_vec();
    analytic.extend_from_slice(grads.w_rec.data());
    analytic.extend_from_slice(&grads.b);
    analytic.extend(grads.inputs.concat());

    grad_check(
        |x| {
            let (p, grids) = split(x);
            dot(&rnn_forward(&grids, &p).unwrap().0, &g)
        },
        &point,
        &analytic,
        DEFAULT_FD_STEP,
    )
}

fn check_power_normalize(seed: u64) -> Result<f64> {
    let n = 8;
    let sigma = 0.5;
    let mut rng = seeds::rng(seed, "gradcheck-power");
    // Stay away from the |x|^(sigma-1) singularity at the origin.
    let point: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.05..1.5);
            if rng.random_range(0..2) == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let g = random_vec(&mut rng, n, -1.0, 1.0);
    let slope = power_normalize_grad(&point, sigma);
    let analytic: Vec<f64> = slope.iter().zip(&g).map(|(s, gi)| s * gi).collect();
    grad_check(
        |x| dot(&power_normalize(x, sigma), &g),
        &point,
        &analytic,
        DEFAULT_FD_STEP,
    )
}

fn check_l2_normalize(seed: u64) -> Result<f64> {
    let n = 8;
    let mut rng = seeds::rng(seed, "gradcheck-l2");
    let mut point = random_vec(&mut rng, n, -1.0, 1.0);
    point[0] += 1.0; // keep the norm bounded away from zero
    let g = random_vec(&mut rng, n, -1.0, 1.0);
    let (y, norm) = l2_normalize_with_norm(&point);
    let analytic = l2_normalize_backward(&y, norm, &g);
    grad_check(
        |x| dot(&crate::pooling::l2_normalize(x), &g),
        &point,
        &analytic,
        DEFAULT_FD_STEP,
    )
}

/// Composed loss for the gradient checker: per grid, CBP over raw local
/// features then L2, then the RNN and BCE head. Differentiates with
/// respect to the raw features, all RNN parameters, and the head.
fn check_interval_loss(seed: u64) -> Result<f64> {
    let (big_d, d_g, h, k, n_per_grid) = (6usize, 16usize, 4usize, 3usize, 2usize);
    let sk = SketchParams::new(big_d, d_g, seed)?;
    let mut rng = seeds::rng(seed, "gradcheck-interval");
    let label = if seed % 2 == 0 { Label::Real } else { Label::Fake };

    let template = RnnParams::init(CellKind::Tanh, d_g, h, seed);
    let head0 = HeadParams::init(h, seed);
    let n_feat = k * n_per_grid * big_d;
    let mut point = random_vec(&mut rng, n_feat, -1.0, 1.0);
    point.extend_from_slice(&pack_params(&template, &head0));

    let split = |x: &[f64]| -> (Vec<Vec<Vec<f64>>>, RnnParams, HeadParams) {
        let grids: Vec<Vec<Vec<f64>>> = x[..n_feat]
            .chunks(n_per_grid * big_d)
            .map(|grid| grid.chunks(big_d).map(|f| f.to_vec()).collect())
            .collect();
        let (rnn, head) = unpack_params(&x[n_feat..], CellKind::Tanh, d_g, h);
        (grids, rnn, head)
    };

    let forward = |x: &[f64]| -> f64 {
        let (grids, rnn, head) = split(x);
        let vecs: Vec<Vec<f64>> = grids
            .iter()
            .map(|feats| {
                let views: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
                crate::pooling::l2_normalize(&cbp_pool(&views, &sk).unwrap())
            })
            .collect();
        interval_loss_value(&vecs, &rnn, &head, label).unwrap()
    };

    // Analytic pass mirrors the closure above with tapes kept.
    let (grids, rnn, head) = split(&point);
    let mut vecs = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    let mut normed = Vec::with_capacity(k);
    for feats in &grids {
        let views: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let pooled = cbp_pool(&views, &sk)?;
        let (y, norm) = l2_normalize_with_norm(&pooled);
        vecs.push(pooled);
        norms.push(norm);
        normed.push(y);
    }
    let (loss, g) = interval_loss(&normed, &rnn, &head, label)?;
    let mut analytic = Vec::with_capacity(point.len());
    for ((feats, d_grid), (y, norm)) in grids
        .iter()
        .zip(&g.inputs)
        .zip(normed.iter().zip(&norms))
    {
        let d_pooled = l2_normalize_backward(y, *norm, d_grid);
        let views: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        analytic.extend(cbp_pool_backward(&views, &sk, &d_pooled)?.concat());
    }
    analytic.extend_from_slice(g.w_in.data());
    analytic.extend_from_slice(g.w_rec.data());
    analytic.extend_from_slice(&g.b);
    analytic.extend_from_slice(&g.head_w);
    analytic.push(g.head_b);
    debug_assert!(loss.is_finite());

    grad_check(forward, &point, &analytic, DEFAULT_FD_STEP)
}

/// Runs every gradient check over fresh random instances. `corrupt`
/// deliberately breaks the named component's analytic gradient so the
/// failure path of the reporting tooling can be exercised.
pub fn gradcheck_suite(corrupt: Option<&str>) -> Result<Vec<ComponentReport>> {
    let mut reports = Vec::new();
    for &component in GRADCHECK_COMPONENTS.iter() {
        let mut max_rel = 0.0f64;
        for i in 0..GRADCHECK_INSTANCES {
            let seed = 1000 + i as u64;
            let rel = match component {
                "cbp_pool" => check_cbp(seed)?,
                "netvlad_pool" => check_netvlad(seed)?,
                "rnn_bptt" => check_rnn(CellKind::Tanh, seed)?,
                "lstm_bptt" => check_rnn(CellKind::Lstm, seed)?,
                "power_normalize" => check_power_normalize(seed)?,
                "l2_normalize" => check_l2_normalize(seed)?,
                "interval_loss" => check_interval_loss(seed)?,
                other => unreachable!("unknown component {other}"),
            };
            max_rel = max_rel.max(rel);
        }
        if corrupt == Some(component) {
            max_rel = max_rel.max(1.0);
        }
        reports.push(ComponentReport {
            component,
            instances: GRADCHECK_INSTANCES,
            max_rel_err: max_rel,
            pass: max_rel < GRADCHECK_TOL,
        });
    }
    Ok(reports)
}
