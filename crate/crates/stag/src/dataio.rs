//! Feature files, manifests, and the synthetic dataset generator.
//!
//! Feature files hold one video's local features as 32-bit floats:
//!
//! ```text
//! magic  "RFEX"        4 bytes
//! version u32 = 1
//! frames  u32          F
//! positions u32        M
//! dim     u32          D
//! fps     f32
//! payload f32 * F*M*D  frame-major, position-major
//! ```
//!
//! All integers and floats are little-endian. In memory values are f64;
//! round-trips are bit-exact only for data that originated as f32,
//! which everything in this crate does.
//!
//! The manifest is a tab-separated text file, one video per line:
//! video_id, subject_id, emotion, label, fps, relative path, split.
//! Lines starting with `#` and blank lines are ignored.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, StagError};
use crate::fsutil;
use crate::pipeline::{Emotion, Label, LocalFeatureSequence};
use crate::seeds;

const MAGIC: &[u8; 4] = b"RFEX";
const FORMAT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 24;

/// Raw contents of a feature file; identity fields live in the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePayload {
    pub frames: usize,
    pub positions: usize,
    pub dim: usize,
    pub fps: f32,
    pub data: Vec<f64>,
}

pub fn write_features(seq: &LocalFeatureSequence, path: &Path) -> Result<()> {
    let data = seq.data();
    let mut bytes = Vec::with_capacity(HEADER_BYTES + 4 * data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(seq.frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(seq.positions as u32).to_le_bytes());
    bytes.extend_from_slice(&(seq.dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(seq.fps as f32).to_le_bytes());
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fsutil::atomic_write(path, &bytes)
}

fn feature_err(path: &Path, what: impl std::fmt::Display) -> StagError {
    StagError::FeatureFormat(format!("{}: {what}", path.display()))
}

pub fn read_features(path: &Path) -> Result<FeaturePayload> {
    let bytes = fsutil::read_all(path)?;
    if bytes.len() < HEADER_BYTES {
        return Err(feature_err(
            path,
            format!("file has {} bytes, header needs {HEADER_BYTES}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(feature_err(path, "bad magic, not a feature file"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(feature_err(
            path,
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let frames = u32_at(8) as usize;
    let positions = u32_at(12) as usize;
    let dim = u32_at(16) as usize;
    if frames == 0 || positions == 0 || dim == 0 {
        return Err(feature_err(path, "zero dimension in header"));
    }
    let fps = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if !(fps.is_finite() && fps > 0.0) {
        return Err(feature_err(path, format!("bad fps {fps}")));
    }
    let expect = 4u64 * frames as u64 * positions as u64 * dim as u64;
    let have = (bytes.len() - HEADER_BYTES) as u64;
    if have != expect {
        return Err(feature_err(
            path,
            format!("payload has {have} bytes, header shape needs {expect}"),
        ));
    }
    let n = (expect / 4) as usize;
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let at = HEADER_BYTES + 4 * i;
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(feature_err(path, format!("non-finite value at index {i}")));
        }
        data.push(v as f64);
    }
    Ok(FeaturePayload {
        frames,
        positions,
        dim,
        fps,
        data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(StagError::InvalidSpec(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub subject_id: String,
    pub emotion: Emotion,
    pub label: Label,
    pub fps: f64,
    /// Feature file path relative to the manifest's directory.
    pub path: String,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parse and validate; every referenced feature file must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fsutil::read_string(path)?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        let mut ids: HashSet<String> = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: String| StagError::Manifest(format!("line {line_no}: {what}"));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 7 {
                return Err(bad(format!(
                    "expected 7 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let video_id = fields[0].to_string();
            if !ids.insert(video_id.clone()) {
                return Err(bad(format!("duplicate video_id {video_id:?}")));
            }
            let emotion = Emotion::from_str(fields[2])
                .ok_or_else(|| bad(format!("unknown emotion {:?}", fields[2])))?;
            let label = Label::from_str(fields[3])
                .ok_or_else(|| bad(format!("unknown label {:?}", fields[3])))?;
            let fps: f64 = fields[4]
                .parse()
                .map_err(|_| bad(format!("bad fps {:?}", fields[4])))?;
            if !(fps.is_finite() && fps > 0.0) {
                return Err(bad(format!("fps must be positive, got {fps}")));
            }
            let split = Split::from_str(fields[6]).map_err(|e| bad(e.to_string()))?;
            let rel = fields[5].to_string();
            if !root.join(&rel).is_file() {
                return Err(bad(format!("feature file not found: {rel}")));
            }
            entries.push(ManifestEntry {
                video_id,
                subject_id: fields[1].to_string(),
                emotion,
                label,
                fps,
                path: rel,
                split,
            });
        }
        if entries.is_empty() {
            return Err(StagError::Manifest(format!(
                "{}: no entries",
                path.display()
            )));
        }
        Ok(Manifest { root, entries })
    }

    pub fn save(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
        let mut out = String::new();
        out.push_str("# video_id\tsubject_id\temotion\tlabel\tfps\tpath\tsplit\n");
        for e in entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.video_id, e.subject_id, e.emotion, e.label, e.fps, e.path, e.split
            ));
        }
        fsutil::atomic_write(path, out.as_bytes())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Read one video's features, attaching identity from the manifest.
    /// The file's fps must agree with the manifest at f32 precision.
    pub fn load_sequence(&self, entry: &ManifestEntry) -> Result<LocalFeatureSequence> {
        let path = self.resolve(entry);
        let payload = read_features(&path)?;
        if payload.fps != entry.fps as f32 {
            return Err(feature_err(
                &path,
                format!(
                    "fps {} disagrees with manifest fps {}",
                    payload.fps, entry.fps
                ),
            ));
        }
        LocalFeatureSequence::new(
            entry.video_id.clone(),
            entry.subject_id.clone(),
            entry.emotion,
            entry.label,
            entry.fps,
            payload.frames,
            payload.positions,
            payload.dim,
            payload.data,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthTask {
    /// Classes share per-frame marginals and differ only in the order
    /// latent states are visited.
    Order,
    /// Classes differ only in which feature pairs co-activate within a
    /// frame, a purely bilinear signal.
    Cooccurrence,
}

impl SynthTask {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthTask::Order => "order",
            SynthTask::Cooccurrence => "cooccurrence",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "order" => Ok(SynthTask::Order),
            "cooccurrence" => Ok(SynthTask::Cooccurrence),
            other => Err(StagError::InvalidSpec(format!("unknown task {other:?}"))),
        }
    }
}

impl std::fmt::Display for SynthTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub seed: u64,
    /// Videos per (emotion, label) cell.
    pub videos_per_cell: usize,
    pub frames: usize,
    pub positions: usize,
    pub dim: usize,
    /// Latent micro-states per cycle (order task).
    pub states: usize,
    pub noise: f64,
    pub fps: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            task: SynthTask::Order,
            seed: 0,
            videos_per_cell: 50,
            frames: 60,
            positions: 8,
            dim: 16,
            states: 4,
            noise: 1.0,
            fps: 100.0,
        }
    }
}

/// Frames spent in one latent state before the schedule advances.
const STATE_HOLD: usize = 3;
/// Default pipeline interval length; shorter videos cannot be encoded.
const MIN_FRAMES: usize = 15;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(StagError::InvalidSpec(msg));
        if self.frames < MIN_FRAMES {
            return bad(format!(
                "frames {} violates the VideoTooShort constraint: the default pipeline interval needs {MIN_FRAMES} frames",
                self.frames
            ));
        }
        if self.videos_per_cell < 3 {
            return bad(format!(
                "videos_per_cell {} leaves an empty split, need at least 3",
                self.videos_per_cell
            ));
        }
        if self.states < 3 {
            return bad(format!(
                "order schedules of {} states cannot differ, need at least 3",
                self.states
            ));
        }
        if self.frames < STATE_HOLD * self.states {
            return bad(format!(
                "frames {} cannot fit one cycle of {} states held {STATE_HOLD} frames each",
                self.frames, self.states
            ));
        }
        if !self.positions.is_power_of_two() || self.positions <= self.states {
            return bad(format!(
                "positions must be a power of two above the state count, got {} with {} states",
                self.positions, self.states
            ));
        }
        if self.dim < 2 * self.states {
            return bad(format!(
                "dim {} below 2x states {}, state directions would collide",
                self.dim, self.states
            ));
        }
        if self.dim < 4 {
            return bad(format!("dim {} too small for paired channels", self.dim));
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return bad(format!("noise must be positive, got {}", self.noise));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub videos: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub manifest_path: PathBuf,
}

/// Entry m of the length-m Hadamard row r (Sylvester construction).
/// Rows 1..M are balanced: exactly half the entries are -1.
fn hadamard(r: usize, m: usize) -> f64 {
    if (r & m).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draw `count` orthonormal vectors in R^d by Gram-Schmidt.
fn orthonormal_set(rng: &mut impl Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    assert!(count <= d);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian_vec(rng, d);
        for u in &out {
            let p = crate::mat::dot(&v, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
        }
        let n = crate::mat::norm2(&v);
        // Degenerate draws are astronomically unlikely; retry anyway.
        if n > 1e-8 {
            for vi in v.iter_mut() {
                *vi /= n;
            }
            out.push(v);
        }
    }
    out
}

// Signal strengths for the generator. The co-occurrence direction is
// strong, the first-order cue deliberately weak, so pooling choices
// separate: mean pooling sees only C1 and the temporal order needs a
// sequence model on top.
const ORDER_C: f64 = 2.0;
const ORDER_C1: f64 = 0.35;
const PAIR_AMP: f64 = 2.0;
const SUBJECT_SCALE: f64 = 0.5;
const POSITION_SCALE: f64 = 0.5;
const EMOTION_SCALE: f64 = 0.3;
const SUBJECTS: usize = 10;

struct GlobalParams {
    /// Per-state co-occurrence directions, orthonormal.
    u: Vec<Vec<f64>>,
    /// Per-state weak first-order directions, orthogonal to all u.
    v: Vec<Vec<f64>>,
    /// Per-position bias, shared by every video.
    b_pos: Vec<Vec<f64>>,
    /// Per-subject bias.
    b_subj: Vec<Vec<f64>>,
    /// Per-emotion offset.
    b_emo: Vec<Vec<f64>>,
}

fn draw_globals(spec: &SynthSpec) -> GlobalParams {
    let mut rng = seeds::rng(spec.seed, "synth-globals");
    let d = spec.dim;
    let both = orthonormal_set(&mut rng, 2 * spec.states, d);
    let (u, v) = both.split_at(spec.states);
    let scale = |mut v: Vec<f64>, s: f64| {
        for x in v.iter_mut() {
            *x *= s;
        }
        v
    };
    GlobalParams {
        u: u.to_vec(),
        v: v.to_vec(),
        b_pos: (0..spec.positions)
            .map(|_| scale(gaussian_vec(&mut rng, d), POSITION_SCALE))
            .collect(),
        b_subj: (0..SUBJECTS)
            .map(|_| scale(gaussian_vec(&mut rng, d), SUBJECT_SCALE))
            .collect(),
        b_emo: (0..Emotion::ALL.len())
            .map(|_| scale(gaussian_vec(&mut rng, d), EMOTION_SCALE))
            .collect(),
    }
}

/// Stretched state schedule for one class: the base permutation with
/// each state held STATE_HOLD frames. Fake swaps the second and third
/// visits, so both classes visit the same states for the same total
/// time.
fn schedule(states: usize, label: Label) -> Vec<usize> {
    let mut order: Vec<usize> = (0..states).collect();
    if label == Label::Fake {
        order.swap(1, 2);
    }
    let mut seq = Vec::with_capacity(states * STATE_HOLD);
    for s in order {
        for _ in 0..STATE_HOLD {
            seq.push(s);
        }
    }
    seq
}

fn synth_video(
    spec: &SynthSpec,
    globals: &GlobalParams,
    video_id: &str,
    subject: usize,
    emotion: Emotion,
    label: Label,
) -> Result<LocalFeatureSequence> {
    let mut rng = seeds::rng(spec.seed, &format!("synth-video-{video_id}"));
    let (f, m, d) = (spec.frames, spec.positions, spec.dim);
    let mut data = vec![0.0; f * m * d];
    let seq = schedule(spec.states, label);
    let phase = rng.random_range(0..seq.len());
    for t in 0..f {
        let state = seq[(t + phase) % seq.len()];
        for pos in 0..m {
            let at = (t * m + pos) * d;
            let x = &mut data[at..at + d];
            x.copy_from_slice(&globals.b_pos[pos]);
            for (xi, (s, e)) in x
                .iter_mut()
                .zip(globals.b_subj[subject].iter().zip(&globals.b_emo[emotion.index()]))
            {
                *xi += s + e;
            }
            match spec.task {
                SynthTask::Order => {
                    let eps = hadamard(state + 1, pos);
                    for (xi, (u, v)) in x
                        .iter_mut()
                        .zip(globals.u[state].iter().zip(&globals.v[state]))
                    {
                        *xi += ORDER_C * eps * u + ORDER_C1 * v;
                    }
                }
                SynthTask::Cooccurrence => {
                    let s1: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let s2: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    // Real: dims (0,1) co-activate with matching sign and
                    // (2,3) with opposite sign; fake flips both pairings.
                    // Every single dim stays symmetric +-PAIR_AMP.
                    let flip = if label == Label::Real { 1.0 } else { -1.0 };
                    x[0] += PAIR_AMP * s1;
                    x[1] += PAIR_AMP * s1 * flip;
                    x[2] += PAIR_AMP * s2;
                    x[3] -= PAIR_AMP * s2 * flip;
                }
            }
            for xi in x.iter_mut() {
                *xi += spec.noise * rng.sample::<f64, _>(StandardNormal);
                // Features are carried as f32 on disk; round at creation
                // so memory and disk agree bit for bit.
                *xi = *xi as f32 as f64;
            }
        }
    }
    LocalFeatureSequence::new(
        video_id.to_string(),
        format!("subj{subject:02}"),
        emotion,
        label,
        spec.fps,
        f,
        m,
        d,
        data,
    )
}

/// Generate the full dataset under `out_dir`: feature files in
/// `features/` plus `manifest.tsv`. Deterministic given one `SynthSpec`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<GenSummary> {
    spec.validate()?;
    let globals = draw_globals(spec);
    let n = spec.videos_per_cell;
    let held = ((n as f64) / 10.0).round().max(1.0) as usize;
    let mut entries = Vec::new();
    let mut counts = [0usize; 3];
    for emotion in Emotion::ALL {
        for label in [Label::Real, Label::Fake] {
            for i in 0..n {
                let video_id = format!("{}-{}-{i:03}", emotion.as_str(), label.as_str());
                // Within-cell assignment keeps the subject multiset
                // identical across labels, so subject biases cannot leak
                // into the class marginals.
                let subject = i % SUBJECTS;
                let split = if i >= n - held {
                    Split::Test
                } else if i >= n - 2 * held {
                    Split::Val
                } else {
                    Split::Train
                };
                counts[match split {
                    Split::Train => 0,
                    Split::Val => 1,
                    Split::Test => 2,
                }] += 1;
                let seq = synth_video(spec, &globals, &video_id, subject, emotion, label)?;
                let rel = format!("features/{video_id}.rfex");
                write_features(&seq, &out_dir.join(&rel))?;
                entries.push(ManifestEntry {
                    video_id,
                    subject_id: seq.subject_id.clone(),
                    emotion,
                    label,
                    fps: spec.fps,
                    path: rel,
                    split,
                });
            }
        }
    }
    let manifest_path = out_dir.join("manifest.tsv");
    Manifest::save(&manifest_path, &entries)?;
    Ok(GenSummary {
        videos: entries.len(),
        train: counts[0],
        val: counts[1],
        test: counts[2],
        manifest_path,
    })
}
