//! End-to-end video encoding: per-subject normalization, temporal grid
//! assembly, grid pooling, the recurrent interval encoder, and video-level
//! pooling down to one fixed-size representation per video.
//!
//! Every ablation configuration is expressed through `PipelineConfig`;
//! `Preset` names the standard combinations.

pub mod io;

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Result, StagError};
use crate::mat::Mat;
use crate::optim::IntervalSet;
use crate::pooling::{
    cbp_pool, l2_normalize, netvlad_pool, pca_transform, power_normalize, NetVladParams,
    PcaModel, SketchParams,
};
use crate::seeds;
use crate::temporal::{rnn_forward, CellKind, RnnParams};

pub use io::{load_model, load_svm, save_model, save_svm, ModelFile, SvmFile, FORMAT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Emotion {
    Anger,
    Happiness,
    Surprise,
    Disgust,
    Contentment,
    Sadness,
}

impl Emotion {
    pub const ALL: [Emotion; 6] = [
        Emotion::Anger,
        Emotion::Happiness,
        Emotion::Surprise,
        Emotion::Disgust,
        Emotion::Contentment,
        Emotion::Sadness,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Happiness => "happiness",
            Emotion::Surprise => "surprise",
            Emotion::Disgust => "disgust",
            Emotion::Contentment => "contentment",
            Emotion::Sadness => "sadness",
        }
    }

    pub fn from_str(s: &str) -> Option<Emotion> {
        Emotion::ALL.iter().copied().find(|e| e.as_str() == s)
    }

    pub fn index(&self) -> usize {
        Emotion::ALL.iter().position(|e| e == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Emotion::ALL.get(i).copied()
    }
}

impl std::fmt::Display for Emotion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    pub fn from_str(s: &str) -> Option<Label> {
        match s {
            "real" => Some(Label::Real),
            "fake" => Some(Label::Fake),
            _ => None,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One video's local features: F frames, M spatial positions per frame,
/// D values per position, stored as one flat row-major block.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFeatureSequence {
    pub video_id: String,
    pub subject_id: String,
    pub emotion: Emotion,
    pub label: Label,
    pub fps: f64,
    pub frames: usize,
    pub positions: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl LocalFeatureSequence {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        video_id: String,
        subject_id: String,
        emotion: Emotion,
        label: Label,
        fps: f64,
        frames: usize,
        positions: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 || positions == 0 || dim == 0 {
            return Err(StagError::EmptyInput("feature sequence with a zero shape"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(StagError::InvalidSpec(format!("fps must be positive, got {fps}")));
        }
        if data.len() != frames * positions * dim {
            return Err(StagError::InvalidLength(format!(
                "feature payload has {} values, shape {}x{}x{} needs {}",
                data.len(),
                frames,
                positions,
                dim,
                frames * positions * dim
            )));
        }
        Ok(LocalFeatureSequence {
            video_id,
            subject_id,
            emotion,
            label,
            fps,
            frames,
            positions,
            dim,
            data,
        })
    }

    pub fn feature(&self, t: usize, m: usize) -> &[f64] {
        let at = (t * self.positions + m) * self.dim;
        &self.data[at..at + self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridPooler {
    Cbp,
    /// No pooling: the grid's features are averaged into one vector,
    /// which keeps coarse frame-level information only.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoPooler {
    Cbp,
    NetVlad,
    Mean,
}

/// Named configurations of the ablation table, each a complete pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Cbp,
    NetVlad,
    RnnCbp,
    CbpRnnCbp,
    CbpRnnNetVlad,
    Mean,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Cbp,
        Preset::NetVlad,
        Preset::RnnCbp,
        Preset::CbpRnnCbp,
        Preset::CbpRnnNetVlad,
        Preset::Mean,
    ];

    /// The rows of the ablation matrix (everything except the plain-mean
    /// diagnostic baseline), each also run with PCA.
    pub const ABLATION: [Preset; 5] = [
        Preset::Cbp,
        Preset::NetVlad,
        Preset::RnnCbp,
        Preset::CbpRnnCbp,
        Preset::CbpRnnNetVlad,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Cbp => "cbp",
            Preset::NetVlad => "netvlad",
            Preset::RnnCbp => "rnn-cbp",
            Preset::CbpRnnCbp => "cbp-rnn-cbp",
            Preset::CbpRnnNetVlad => "cbp-rnn-netvlad",
            Preset::Mean => "mean",
        }
    }

    pub fn from_str(s: &str) -> Option<Preset> {
        Preset::ALL.iter().copied().find(|p| p.as_str() == s)
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub use_pca: bool,
    pub pca_rank: usize,
    pub grid_pooler: GridPooler,
    pub use_rnn: bool,
    pub cell: CellKind,
    pub video_pooler: VideoPooler,
    /// Frames per grid.
    pub t: usize,
    /// Grids per interval.
    pub k: usize,
    /// Frames between interval starts.
    pub stride: usize,
    /// Grid sketch dimension (power of two).
    pub d_g: usize,
    /// RNN hidden dimension.
    pub hidden: usize,
    /// Final representation dimension (power of two when CBP pools video).
    pub d_v: usize,
    /// NetVLAD cluster count.
    pub clusters: usize,
    /// Power normalization exponent.
    pub sigma: f64,
    pub final_l2: bool,
    /// Subtract one global mean instead of per-position means.
    pub subject_norm_global: bool,
    /// Master seed; sketches, projections, and parameter inits derive
    /// from it with fixed tags.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            use_pca: false,
            pca_rank: 8,
            grid_pooler: GridPooler::Cbp,
            use_rnn: true,
            cell: CellKind::Tanh,
            video_pooler: VideoPooler::Cbp,
            t: 3,
            k: 5,
            stride: 5,
            d_g: 512,
            hidden: 128,
            d_v: 512,
            clusters: 32,
            sigma: 0.5,
            final_l2: true,
            subject_norm_global: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn preset(p: Preset) -> Self {
        let base = PipelineConfig::default();
        match p {
            // Bilinear pooling within each frame, bilinear pooling across
            // frames, no temporal model. Stride 1 keeps it an exact set
            // operation over frames.
            Preset::Cbp => PipelineConfig {
                grid_pooler: GridPooler::Cbp,
                use_rnn: false,
                video_pooler: VideoPooler::Cbp,
                t: 1,
                k: 1,
                stride: 1,
                ..base
            },
            Preset::NetVlad => PipelineConfig {
                grid_pooler: GridPooler::None,
                use_rnn: false,
                video_pooler: VideoPooler::NetVlad,
                t: 1,
                k: 1,
                stride: 1,
                ..base
            },
            // Coarse frame-level features feed the RNN directly; the
            // interval still spans 15 frames.
            Preset::RnnCbp => PipelineConfig {
                grid_pooler: GridPooler::None,
                use_rnn: true,
                video_pooler: VideoPooler::Cbp,
                t: 1,
                k: 15,
                ..base
            },
            Preset::CbpRnnCbp => base,
            Preset::CbpRnnNetVlad => PipelineConfig {
                video_pooler: VideoPooler::NetVlad,
                ..base
            },
            Preset::Mean => PipelineConfig {
                grid_pooler: GridPooler::None,
                use_rnn: false,
                video_pooler: VideoPooler::Mean,
                t: 1,
                k: 1,
                stride: 1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.k == 0 || self.stride == 0 {
            return Err(StagError::InvalidSpec(
                "t, k, and stride must all be positive".into(),
            ));
        }
        if self.grid_pooler == GridPooler::None && self.t != 1 {
            return Err(StagError::InvalidSpec(format!(
                "grid_pooler=none needs t=1 (frame-level features), got t={}",
                self.t
            )));
        }
        if self.grid_pooler == GridPooler::Cbp && !self.d_g.is_power_of_two() {
            return Err(StagError::InvalidSpec(format!(
                "grid sketch dim must be a power of two, got {}",
                self.d_g
            )));
        }
        if self.video_pooler == VideoPooler::Cbp && !self.d_v.is_power_of_two() {
            return Err(StagError::InvalidSpec(format!(
                "video sketch dim must be a power of two, got {}",
                self.d_v
            )));
        }
        if self.video_pooler == VideoPooler::NetVlad && self.clusters == 0 {
            return Err(StagError::InvalidSpec("netvlad needs at least one cluster".into()));
        }
        if self.use_rnn && self.hidden == 0 {
            return Err(StagError::InvalidSpec("rnn hidden dim must be positive".into()));
        }
        if self.use_pca && self.pca_rank == 0 {
            return Err(StagError::InvalidSpec("pca rank must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(StagError::InvalidSpec(format!(
                "power norm exponent must be in (0, 1], got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Frames consumed by one interval.
    pub fn interval_frames(&self) -> usize {
        self.k * self.t
    }

    /// Wall-clock span of one interval.
    pub fn interval_span_seconds(&self, fps: f64) -> f64 {
        self.interval_frames() as f64 / fps
    }

    /// Feature dim entering the grid stage, given raw local dim `d_in`.
    pub fn effective_input_dim(&self, d_in: usize) -> usize {
        if self.use_pca {
            self.pca_rank.min(d_in)
        } else {
            d_in
        }
    }

    /// Dimension of one grid vector.
    pub fn grid_dim(&self, d_in: usize) -> usize {
        match self.grid_pooler {
            GridPooler::Cbp => self.d_g,
            GridPooler::None => self.effective_input_dim(d_in),
        }
    }

    /// Dimension of one interval representation.
    pub fn interval_dim(&self, d_in: usize) -> usize {
        if self.use_rnn {
            self.hidden
        } else {
            self.grid_dim(d_in)
        }
    }

    /// Dimension of the final video representation.
    pub fn output_dim(&self, d_in: usize) -> usize {
        match self.video_pooler {
            VideoPooler::Cbp | VideoPooler::NetVlad => self.d_v,
            VideoPooler::Mean => self.interval_dim(d_in),
        }
    }
}

/// All state needed to encode a video under one config. Sketches and the
/// projection matrix are regenerated from the config seed, never stored;
/// PCA, RNN, and NetVLAD tensors are fitted and persisted.
#[derive(Clone, Debug)]
pub struct PipelineParams {
    pub input_dim: usize,
    pub pca: Option<PcaModel>,
    pub grid_sketch: Option<SketchParams>,
    pub rnn: Option<RnnParams>,
    pub video_sketch: Option<SketchParams>,
    pub netvlad: Option<NetVladParams>,
    /// d_v x (clusters * interval_dim) projection after NetVLAD, entries
    /// +-1/sqrt(d_v).
    pub projection: Option<Mat>,
}

impl PipelineParams {
    /// Derive every seeded component; fitted tensors start absent
    /// (PCA, NetVLAD) or freshly initialized (RNN).
    pub fn init(config: &PipelineConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(StagError::EmptyInput("zero input feature dim"));
        }
        let d_in = config.effective_input_dim(input_dim);
        let grid_sketch = match config.grid_pooler {
            GridPooler::Cbp => Some(SketchParams::new(
                d_in,
                config.d_g,
                seeds::derive(config.seed, "grid-sketch"),
            )?),
            GridPooler::None => None,
        };
        let rnn = if config.use_rnn {
            Some(RnnParams::init(
                config.cell,
                config.grid_dim(input_dim),
                config.hidden,
                seeds::derive(config.seed, "rnn-params"),
            ))
        } else {
            None
        };
        let d_int = config.interval_dim(input_dim);
        let video_sketch = match config.video_pooler {
            VideoPooler::Cbp => Some(SketchParams::new(
                d_int,
                config.d_v,
                seeds::derive(config.seed, "video-sketch"),
            )?),
            _ => None,
        };
        let projection = match config.video_pooler {
            VideoPooler::NetVlad => {
                let cols = config.clusters * d_int;
                let mut rng = seeds::rng(config.seed, "jl-projection");
                let scale = 1.0 / (config.d_v as f64).sqrt();
                Some(Mat::from_fn(config.d_v, cols, |_, _| {
                    if rng.random_range(0..2u32) == 0 {
                        scale
                    } else {
                        -scale
                    }
                }))
            }
            _ => None,
        };
        Ok(PipelineParams {
            input_dim,
            pca: None,
            grid_sketch,
            rnn,
            video_sketch,
            netvlad: None,
            projection,
        })
    }
}

/// Remove each subject's average expression. Per position by default:
/// position m loses its own temporal mean. The global variant subtracts
/// one mean vector pooled over every frame and position.
pub fn subject_normalize(seq: &LocalFeatureSequence, global: bool) -> LocalFeatureSequence {
    let (f, m, d) = (seq.frames, seq.positions, seq.dim);
    let mut out = seq.clone();
    if global {
        let mut mean = vec![0.0; d];
        for t in 0..f {
            for p in 0..m {
                for (acc, &v) in mean.iter_mut().zip(seq.feature(t, p)) {
                    *acc += v;
                }
            }
        }
        let inv = 1.0 / (f * m) as f64;
        for v in mean.iter_mut() {
            *v *= inv;
        }
        for t in 0..f {
            for p in 0..m {
                let at = (t * m + p) * d;
                for i in 0..d {
                    out.data[at + i] -= mean[i];
                }
            }
        }
    } else {
        let inv = 1.0 / f as f64;
        for p in 0..m {
            let mut mean = vec![0.0; d];
            for t in 0..f {
                for (acc, &v) in mean.iter_mut().zip(seq.feature(t, p)) {
                    *acc += v;
                }
            }
            for v in mean.iter_mut() {
                *v *= inv;
            }
            for t in 0..f {
                let at = (t * m + p) * d;
                for i in 0..d {
                    out.data[at + i] -= mean[i];
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub enum SampleMode {
    /// Every feasible start at multiples of the stride.
    Dense,
    /// n starts drawn with replacement from the dense set.
    Random { n: usize, seed: u64 },
}

/// Feasible interval start frames.
pub fn sample_intervals(
    frames: usize,
    config: &PipelineConfig,
    mode: SampleMode,
) -> Result<Vec<usize>> {
    let span = config.interval_frames();
    if frames < span {
        return Err(StagError::VideoTooShort {
            frames,
            needed: span,
        });
    }
    let dense: Vec<usize> = (0..=frames - span).step_by(config.stride).collect();
    match mode {
        SampleMode::Dense => Ok(dense),
        SampleMode::Random { n, seed } => {
            let mut rng = seeds::rng(seed, "interval-starts");
            Ok((0..n)
                .map(|_| dense[rng.random_range(0..dense.len())])
                .collect())
        }
    }
}

/// The K grids of the interval starting at `start`: grid k holds every
/// position's feature from frames [start + k*t, start + (k+1)*t).
pub fn assemble_grids<'a>(
    seq: &'a LocalFeatureSequence,
    start: usize,
    t: usize,
    k: usize,
) -> Result<Vec<Vec<&'a [f64]>>> {
    if start + k * t > seq.frames {
        return Err(StagError::InvalidInterval(format!(
            "interval [{start}, {}) exceeds {} frames",
            start + k * t,
            seq.frames
        )));
    }
    let mut grids = Vec::with_capacity(k);
    for g in 0..k {
        let mut feats = Vec::with_capacity(t * seq.positions);
        for frame in start + g * t..start + (g + 1) * t {
            for m in 0..seq.positions {
                feats.push(seq.feature(frame, m));
            }
        }
        grids.push(feats);
    }
    Ok(grids)
}

fn maybe_pca(features: &[&[f64]], params: &PipelineParams, config: &PipelineConfig) -> Result<Option<Vec<Vec<f64>>>> {
    if !config.use_pca {
        return Ok(None);
    }
    let model = params.pca.as_ref().ok_or_else(|| {
        StagError::InvalidSpec("config enables pca but no pca model is fitted".into())
    })?;
    let mut out = Vec::with_capacity(features.len());
    for f in features {
        out.push(pca_transform(f, model)?);
    }
    Ok(Some(out))
}

/// One grid's pooled, L2-normalized vector.
fn grid_vector(
    features: &[&[f64]],
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<Vec<f64>> {
    let reduced = maybe_pca(features, params, config)?;
    let views: Vec<&[f64]> = match &reduced {
        Some(owned) => owned.iter().map(|f| f.as_slice()).collect(),
        None => features.to_vec(),
    };
    let pooled = match config.grid_pooler {
        GridPooler::Cbp => {
            let sketch = params
                .grid_sketch
                .as_ref()
                .ok_or_else(|| StagError::InvalidSpec("grid sketch missing".into()))?;
            cbp_pool(&views, sketch)?
        }
        GridPooler::None => {
            let d = views[0].len();
            let mut mean = vec![0.0; d];
            for v in &views {
                for (acc, &x) in mean.iter_mut().zip(*v) {
                    *acc += x;
                }
            }
            let inv = 1.0 / views.len() as f64;
            for x in mean.iter_mut() {
                *x *= inv;
            }
            mean
        }
    };
    Ok(l2_normalize(&pooled))
}

/// Reduce the K grid vectors of one interval to its representation:
/// the RNN's final output, or their mean when no temporal model is used.
pub fn interval_rep_from_grids<S: AsRef<[f64]>>(
    grids: &[S],
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<Vec<f64>> {
    if config.use_rnn {
        let rnn = params
            .rnn
            .as_ref()
            .ok_or_else(|| StagError::InvalidSpec("rnn parameters missing".into()))?;
        Ok(rnn_forward(grids, rnn)?.0)
    } else {
        if grids.is_empty() {
            return Err(StagError::EmptyInput("interval with no grids"));
        }
        let d = grids[0].as_ref().len();
        let mut mean = vec![0.0; d];
        for g in grids {
            for (acc, &v) in mean.iter_mut().zip(g.as_ref()) {
                *acc += v;
            }
        }
        let inv = 1.0 / grids.len() as f64;
        for v in mean.iter_mut() {
            *v *= inv;
        }
        Ok(mean)
    }
}

/// Encode the interval of `seq` starting at frame `start`. The sequence
/// is taken as already subject-normalized.
pub fn encode_interval(
    seq: &LocalFeatureSequence,
    start: usize,
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<Vec<f64>> {
    let grids = assemble_grids(seq, start, config.t, config.k)?;
    let mut vecs = Vec::with_capacity(config.k);
    for feats in &grids {
        vecs.push(grid_vector(feats, config, params)?);
    }
    interval_rep_from_grids(&vecs, config, params)
}

/// Pool a set of interval representations into the final video vector:
/// video pooler, then power normalization, then the optional global L2.
pub fn pool_video<S: AsRef<[f64]>>(
    interval_reps: &[S],
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<Vec<f64>> {
    if interval_reps.is_empty() {
        return Err(StagError::EmptyInput("video with no interval representations"));
    }
    let views: Vec<&[f64]> = interval_reps.iter().map(|r| r.as_ref()).collect();
    let pooled = match config.video_pooler {
        VideoPooler::Cbp => {
            let sketch = params
                .video_sketch
                .as_ref()
                .ok_or_else(|| StagError::InvalidSpec("video sketch missing".into()))?;
            cbp_pool(&views, sketch)?
        }
        VideoPooler::NetVlad => {
            let nv = params.netvlad.as_ref().ok_or_else(|| {
                StagError::InvalidSpec("netvlad parameters are not fitted".into())
            })?;
            let proj = params
                .projection
                .as_ref()
                .ok_or_else(|| StagError::InvalidSpec("netvlad projection missing".into()))?;
            let vlad = netvlad_pool(&views, nv)?;
            if proj.cols() != vlad.len() {
                return Err(StagError::InvalidLength(format!(
                    "projection expects dim {}, netvlad produced {}",
                    proj.cols(),
                    vlad.len()
                )));
            }
            proj.matvec(&vlad)
        }
        VideoPooler::Mean => {
            let d = views[0].len();
            let mut mean = vec![0.0; d];
            for v in &views {
                if v.len() != d {
                    return Err(StagError::InvalidLength(
                        "interval representations of mixed dims".into(),
                    ));
                }
                for (acc, &x) in mean.iter_mut().zip(*v) {
                    *acc += x;
                }
            }
            let inv = 1.0 / views.len() as f64;
            for x in mean.iter_mut() {
                *x *= inv;
            }
            mean
        }
    };
    let powered = power_normalize(&pooled, config.sigma);
    Ok(if config.final_l2 {
        l2_normalize(&powered)
    } else {
        powered
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRepresentation {
    pub video_id: String,
    pub emotion: Emotion,
    pub label: Label,
    pub values: Vec<f64>,
}

/// Interval representations of every dense interval, sharing grid work
/// between overlapping intervals through a per-video cache.
fn dense_interval_reps(
    seq: &LocalFeatureSequence,
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<Vec<Vec<f64>>> {
    let starts = sample_intervals(seq.frames, config, SampleMode::Dense)?;
    let mut grid_cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut reps = Vec::with_capacity(starts.len());
    for &s in &starts {
        let mut vecs = Vec::with_capacity(config.k);
        for g in 0..config.k {
            let grid_start = s + g * config.t;
            if !grid_cache.contains_key(&grid_start) {
                let grids = assemble_grids(seq, grid_start, config.t, 1)?;
                grid_cache.insert(grid_start, grid_vector(&grids[0], config, params)?);
            }
            vecs.push(grid_cache[&grid_start].clone());
        }
        reps.push(interval_rep_from_grids(&vecs, config, params)?);
    }
    Ok(reps)
}

/// Full video encoding: subject normalization, dense intervals, interval
/// encoding, video pooling.
pub fn encode_video(
    seq: &LocalFeatureSequence,
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<VideoRepresentation> {
    config.validate()?;
    if seq.dim != params.input_dim {
        return Err(StagError::InvalidLength(format!(
            "sequence feature dim {} does not match model input dim {}",
            seq.dim, params.input_dim
        )));
    }
    let normalized = subject_normalize(seq, config.subject_norm_global);
    let reps = dense_interval_reps(&normalized, config, params)?;
    let values = pool_video(&reps, config, params)?;
    Ok(VideoRepresentation {
        video_id: seq.video_id.clone(),
        emotion: seq.emotion,
        label: seq.label,
        values,
    })
}

/// Grid tables for a batch of videos, as consumed by the trainer: every
/// distinct grid of every dense interval is pooled exactly once per video.
/// Returned video order matches the input order.
pub fn build_interval_set(
    seqs: &[LocalFeatureSequence],
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<IntervalSet> {
    config.validate()?;
    let d_grid = config.grid_dim(params.input_dim);
    let mut set = IntervalSet::new(d_grid, config.k);
    for seq in seqs {
        let normalized = subject_normalize(seq, config.subject_norm_global);
        let starts = sample_intervals(normalized.frames, config, SampleMode::Dense)?;
        let video = set.add_video(seq.label);
        let mut row_of_grid: HashMap<usize, usize> = HashMap::new();
        for &s in &starts {
            let mut rows = Vec::with_capacity(config.k);
            for g in 0..config.k {
                let grid_start = s + g * config.t;
                let row = match row_of_grid.get(&grid_start) {
                    Some(&r) => r,
                    None => {
                        let grids = assemble_grids(&normalized, grid_start, config.t, 1)?;
                        let v = grid_vector(&grids[0], config, params)?;
                        let r = set.add_grid(&v)?;
                        row_of_grid.insert(grid_start, r);
                        r
                    }
                };
                rows.push(row);
            }
            set.add_interval(video, &rows)?;
        }
    }
    Ok(set)
}

/// Interval representations of one video out of a prepared grid table.
pub fn interval_reps_from_set(
    set: &IntervalSet,
    video: usize,
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<Vec<Vec<f64>>> {
    let mut reps = Vec::with_capacity(set.num_intervals(video));
    for i in 0..set.num_intervals(video) {
        reps.push(interval_rep_from_grids(
            &set.interval_grids(video, i),
            config,
            params,
        )?);
    }
    Ok(reps)
}
