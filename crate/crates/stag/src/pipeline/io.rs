//! Binary container for trained models. One format, two kinds: the
//! pipeline model (config plus fitted tensors) and the per-emotion SVM.
//!
//! Layout, all little-endian:
//!   magic "STAG", format version u32, kind u8,
//!   kind-specific config block,
//!   tensor count u32, then per tensor: name length u32, name bytes,
//!   rank u32, one u32 per dim, then the f64 payload.
//!
//! Pipeline config block field order: emotion u8, input_dim u32,
//! use_pca u8, pca_rank u32, grid_pooler u8, use_rnn u8, cell u8,
//! video_pooler u8, t u32, k u32, stride u32, d_g u32, hidden u32,
//! d_v u32, clusters u32, sigma f64, final_l2 u8, subject_norm_global u8,
//! seed u64. SVM block: emotion u8, dim u32, c f64.
//!
//! Seeded components (count sketches, the NetVLAD projection) are never
//! stored; they are regenerated from the persisted seed on load.

use std::path::Path;

use crate::classify::SvmModel;
use crate::error::{Result, StagError};
use crate::fsutil;
use crate::mat::Mat;
use crate::pipeline::{
    Emotion, GridPooler, PipelineConfig, PipelineParams, VideoPooler,
};
use crate::pooling::{NetVladParams, PcaModel};
use crate::temporal::CellKind;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"STAG";
const KIND_PIPELINE: u8 = 1;
const KIND_SVM: u8 = 2;

#[derive(Clone, Debug)]
pub struct ModelFile {
    pub emotion: Emotion,
    pub config: PipelineConfig,
    pub params: PipelineParams,
}

#[derive(Clone, Debug)]
pub struct SvmFile {
    pub emotion: Emotion,
    pub model: SvmModel,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f64]) {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    push_u32(out, dims.len() as u32);
    for &d in dims {
        push_u32(out, d as u32);
    }
    for &v in data {
        push_f64(out, v);
    }
}

fn bool_byte(b: bool) -> u8 {
    if b {
        1
    } else {
        0
    }
}

fn grid_pooler_byte(g: GridPooler) -> u8 {
    match g {
        GridPooler::Cbp => 0,
        GridPooler::None => 1,
    }
}

fn video_pooler_byte(v: VideoPooler) -> u8 {
    match v {
        VideoPooler::Cbp => 0,
        VideoPooler::NetVlad => 1,
        VideoPooler::Mean => 2,
    }
}

fn cell_byte(c: CellKind) -> u8 {
    match c {
        CellKind::Tanh => 0,
        CellKind::Lstm => 1,
    }
}

pub fn save_model(
    path: &Path,
    emotion: Emotion,
    config: &PipelineConfig,
    params: &PipelineParams,
) -> Result<()> {
    config.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    out.push(KIND_PIPELINE);
    out.push(emotion.index() as u8);
    push_u32(&mut out, params.input_dim as u32);
    out.push(bool_byte(config.use_pca));
    push_u32(&mut out, config.pca_rank as u32);
    out.push(grid_pooler_byte(config.grid_pooler));
    out.push(bool_byte(config.use_rnn));
    out.push(cell_byte(config.cell));
    out.push(video_pooler_byte(config.video_pooler));
    for v in [
        config.t,
        config.k,
        config.stride,
        config.d_g,
        config.hidden,
        config.d_v,
        config.clusters,
    ] {
        push_u32(&mut out, v as u32);
    }
    push_f64(&mut out, config.sigma);
    out.push(bool_byte(config.final_l2));
    out.push(bool_byte(config.subject_norm_global));
    push_u64(&mut out, config.seed);

    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    if let Some(pca) = &params.pca {
        tensors.push(("pca.mean".into(), vec![pca.mean.len()], pca.mean.clone()));
        tensors.push((
            "pca.basis".into(),
            vec![pca.basis.rows(), pca.basis.cols()],
            pca.basis.data().to_vec(),
        ));
    }
    if let Some(rnn) = &params.rnn {
        tensors.push((
            "rnn.w_in".into(),
            vec![rnn.w_in.rows(), rnn.w_in.cols()],
            rnn.w_in.data().to_vec(),
        ));
        tensors.push((
            "rnn.w_rec".into(),
            vec![rnn.w_rec.rows(), rnn.w_rec.cols()],
            rnn.w_rec.data().to_vec(),
        ));
        tensors.push(("rnn.b".into(), vec![rnn.b.len()], rnn.b.clone()));
    }
    if let Some(nv) = &params.netvlad {
        tensors.push((
            "netvlad.centers".into(),
            vec![nv.centers.rows(), nv.centers.cols()],
            nv.centers.data().to_vec(),
        ));
        tensors.push((
            "netvlad.weights".into(),
            vec![nv.weights.rows(), nv.weights.cols()],
            nv.weights.data().to_vec(),
        ));
        tensors.push(("netvlad.biases".into(), vec![nv.biases.len()], nv.biases.clone()));
    }
    push_u32(&mut out, tensors.len() as u32);
    for (name, dims, data) in &tensors {
        push_tensor(&mut out, name, dims, data);
    }
    fsutil::atomic_write(path, &out)
}

pub fn save_svm(path: &Path, emotion: Emotion, model: &SvmModel) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    out.push(KIND_SVM);
    out.push(emotion.index() as u8);
    push_u32(&mut out, model.weights.len() as u32);
    push_f64(&mut out, model.c);
    push_u32(&mut out, 2);
    push_tensor(&mut out, "svm.weights", &[model.weights.len()], &model.weights);
    push_tensor(&mut out, "svm.bias", &[1], &[model.bias]);
    fsutil::atomic_write(path, &out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &Path) -> Self {
        Reader {
            buf,
            at: 0,
            path: path.display().to_string(),
        }
    }

    fn fail(&self, what: &str) -> StagError {
        StagError::ModelFormat(format!("{}: {} at byte {}", self.path, what, self.at))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(self.fail("truncated file"));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.buf.len() {
            return Err(StagError::ModelFormat(format!(
                "{}: {} trailing bytes after payload",
                self.path,
                self.buf.len() - self.at
            )));
        }
        Ok(())
    }

    fn header(&mut self, expected_kind: u8) -> Result<()> {
        let magic = self.take(4)?;
        if magic != MAGIC {
            return Err(StagError::ModelFormat(format!(
                "{}: bad magic {:?}",
                self.path, magic
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(StagError::ModelFormat(format!(
                "{}: unsupported format version {} (supported: {})",
                self.path, version, FORMAT_VERSION
            )));
        }
        let kind = self.u8()?;
        if kind != expected_kind {
            return Err(StagError::ModelFormat(format!(
                "{}: wrong payload kind {} (expected {})",
                self.path, kind, expected_kind
            )));
        }
        Ok(())
    }

    fn emotion(&mut self) -> Result<Emotion> {
        let b = self.u8()?;
        Emotion::from_index(b as usize).ok_or_else(|| self.fail("unknown emotion code"))
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let name_len = self.u32()? as usize;
        if name_len > 256 {
            return Err(self.fail("unreasonable tensor name length"));
        }
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| self.fail("tensor name is not utf-8"))?
            .to_string();
        let rank = self.u32()? as usize;
        if rank > 4 {
            return Err(self.fail("unreasonable tensor rank"));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        if len.checked_mul(8).map(|b| self.at + b > self.buf.len()).unwrap_or(true) {
            return Err(self.fail("tensor payload exceeds file size"));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let v = self.f64()?;
            if !v.is_finite() {
                return Err(self.fail(&format!("non-finite value in tensor {name}")));
            }
            data.push(v);
        }
        Ok((name, dims, data))
    }
}

fn tensor_map(r: &mut Reader) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let count = r.u32()? as usize;
    if count > 64 {
        return Err(r.fail("unreasonable tensor count"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(r.tensor()?);
    }
    Ok(out)
}

fn take_tensor(
    tensors: &mut Vec<(String, Vec<usize>, Vec<f64>)>,
    name: &str,
    dims: &[usize],
    path: &str,
) -> Result<Vec<f64>> {
    let idx = tensors.iter().position(|(n, _, _)| n == name).ok_or_else(|| {
        StagError::ModelFormat(format!("{path}: missing tensor {name}"))
    })?;
    let (_, got_dims, data) = tensors.remove(idx);
    if got_dims != dims {
        return Err(StagError::ModelFormat(format!(
            "{path}: tensor {name} has shape {got_dims:?}, expected {dims:?}"
        )));
    }
    Ok(data)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let buf = fsutil::read_all(path)?;
    let mut r = Reader::new(&buf, path);
    r.header(KIND_PIPELINE)?;
    let emotion = r.emotion()?;
    let input_dim = r.u32()? as usize;
    let use_pca = r.u8()? != 0;
    let pca_rank = r.u32()? as usize;
    let grid_pooler = match r.u8()? {
        0 => GridPooler::Cbp,
        1 => GridPooler::None,
        _ => return Err(r.fail("unknown grid pooler code")),
    };
    let use_rnn = r.u8()? != 0;
    let cell = match r.u8()? {
        0 => CellKind::Tanh,
        1 => CellKind::Lstm,
        _ => return Err(r.fail("unknown cell code")),
    };
    let video_pooler = match r.u8()? {
        0 => VideoPooler::Cbp,
        1 => VideoPooler::NetVlad,
        2 => VideoPooler::Mean,
        _ => return Err(r.fail("unknown video pooler code")),
    };
    let t = r.u32()? as usize;
    let k = r.u32()? as usize;
    let stride = r.u32()? as usize;
    let d_g = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let d_v = r.u32()? as usize;
    let clusters = r.u32()? as usize;
    let sigma = r.f64()?;
    let final_l2 = r.u8()? != 0;
    let subject_norm_global = r.u8()? != 0;
    let seed = r.u64()?;
    let config = PipelineConfig {
        use_pca,
        pca_rank,
        grid_pooler,
        use_rnn,
        cell,
        video_pooler,
        t,
        k,
        stride,
        d_g,
        hidden,
        d_v,
        clusters,
        sigma,
        final_l2,
        subject_norm_global,
        seed,
    };
    config
        .validate()
        .map_err(|e| StagError::ModelFormat(format!("{}: invalid config: {e}", r.path)))?;

    let mut tensors = tensor_map(&mut r)?;
    r.finish()?;
    let path_str = r.path.clone();

    let mut params = PipelineParams::init(&config, input_dim)?;
    if use_pca {
        let mean = take_tensor(&mut tensors, "pca.mean", &[input_dim], &path_str)?;
        let basis = take_tensor(
            &mut tensors,
            "pca.basis",
            &[input_dim, config.pca_rank],
            &path_str,
        )?;
        params.pca = Some(PcaModel {
            mean,
            basis: Mat::from_vec(input_dim, config.pca_rank, basis),
            r: config.pca_rank,
        });
    }
    if use_rnn {
        let rnn = params.rnn.as_mut().expect("rnn params exist when use_rnn");
        let rows = rnn.w_in.rows();
        let d_grid = rnn.input_dim;
        let w_in = take_tensor(&mut tensors, "rnn.w_in", &[rows, d_grid], &path_str)?;
        let w_rec = take_tensor(&mut tensors, "rnn.w_rec", &[rows, hidden], &path_str)?;
        let b = take_tensor(&mut tensors, "rnn.b", &[rows], &path_str)?;
        rnn.w_in = Mat::from_vec(rows, d_grid, w_in);
        rnn.w_rec = Mat::from_vec(rows, hidden, w_rec);
        rnn.b = b;
    }
    if video_pooler == VideoPooler::NetVlad {
        let d_int = config.interval_dim(input_dim);
        let centers = take_tensor(&mut tensors, "netvlad.centers", &[clusters, d_int], &path_str)?;
        let weights = take_tensor(&mut tensors, "netvlad.weights", &[clusters, d_int], &path_str)?;
        let biases = take_tensor(&mut tensors, "netvlad.biases", &[clusters], &path_str)?;
        params.netvlad = Some(NetVladParams {
            centers: Mat::from_vec(clusters, d_int, centers),
            weights: Mat::from_vec(clusters, d_int, weights),
            biases,
        });
    }
    if let Some((name, _, _)) = tensors.first() {
        return Err(StagError::ModelFormat(format!(
            "{path_str}: unexpected tensor {name}"
        )));
    }
    Ok(ModelFile {
        emotion,
        config,
        params,
    })
}

pub fn load_svm(path: &Path) -> Result<SvmFile> {
    let buf = fsutil::read_all(path)?;
    let mut r = Reader::new(&buf, path);
    r.header(KIND_SVM)?;
    let emotion = r.emotion()?;
    let dim = r.u32()? as usize;
    let c = r.f64()?;
    if !(c.is_finite() && c > 0.0) {
        return Err(r.fail("svm cost must be positive"));
    }
    let mut tensors = tensor_map(&mut r)?;
    r.finish()?;
    let path_str = r.path.clone();
    let weights = take_tensor(&mut tensors, "svm.weights", &[dim], &path_str)?;
    let bias = take_tensor(&mut tensors, "svm.bias", &[1], &path_str)?[0];
    if let Some((name, _, _)) = tensors.first() {
        return Err(StagError::ModelFormat(format!(
            "{path_str}: unexpected tensor {name}"
        )));
    }
    Ok(SvmFile {
        emotion,
        model: SvmModel { weights, bias, c },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{encode_video, Label, LocalFeatureSequence};
    use crate::pooling::pca_fit;
    use rand::Rng;

    fn fixture() -> (PipelineConfig, PipelineParams, LocalFeatureSequence) {
        let config = PipelineConfig {
            use_pca: true,
            pca_rank: 3,
            video_pooler: VideoPooler::NetVlad,
            clusters: 2,
            d_g: 16,
            hidden: 6,
            d_v: 32,
            seed: 42,
            ..PipelineConfig::default()
        };
        let mut params = PipelineParams::init(&config, 5).unwrap();
        let mut rng = crate::seeds::rng(7, "io-fixture");
        let samples: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let views: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
        params.pca = Some(pca_fit(&views, 3).unwrap());
        let d_int = config.interval_dim(5);
        params.netvlad = Some(NetVladParams {
            centers: Mat::from_fn(2, d_int, |_, _| rng.random_range(-1.0..1.0)),
            weights: Mat::from_fn(2, d_int, |_, _| rng.random_range(-1.0..1.0)),
            biases: vec![0.1, -0.2],
        });
        let data: Vec<f64> = (0..20 * 3 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seq = LocalFeatureSequence::new(
            "vid-1".into(),
            "subj-1".into(),
            Emotion::Surprise,
            Label::Fake,
            100.0,
            20,
            3,
            5,
            data,
        )
        .unwrap();
        (config, params, seq)
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let (config, params, seq) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.stag");
        save_model(&path, Emotion::Surprise, &config, &params).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.emotion, Emotion::Surprise);
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.params.input_dim, 5);
        let (a, b) = (&params, &loaded.params);
        assert_eq!(a.pca.as_ref().unwrap().mean, b.pca.as_ref().unwrap().mean);
        assert_eq!(
            a.pca.as_ref().unwrap().basis,
            b.pca.as_ref().unwrap().basis
        );
        assert_eq!(a.rnn.as_ref().unwrap(), b.rnn.as_ref().unwrap());
        assert_eq!(a.netvlad.as_ref().unwrap(), b.netvlad.as_ref().unwrap());
        // Regenerated seeded parts drive identical encodings.
        let before = encode_video(&seq, &config, &params).unwrap();
        let after = encode_video(&seq, &loaded.config, &loaded.params).unwrap();
        assert_eq!(before.values, after.values);
    }

    #[test]
    fn save_is_deterministic() {
        let (config, params, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.stag");
        let p2 = dir.path().join("b.stag");
        save_model(&p1, Emotion::Anger, &config, &params).unwrap();
        save_model(&p2, Emotion::Anger, &config, &params).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_and_trailing_bytes_are_detected() {
        let (config, params, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.stag");
        save_model(&path, Emotion::Anger, &config, &params).unwrap();
        let full = std::fs::read(&path).unwrap();

        for cut in [3, 8, 9, 20, full.len() / 2, full.len() - 1] {
            let broken = dir.path().join("broken.stag");
            std::fs::write(&broken, &full[..cut]).unwrap();
            assert!(
                matches!(load_model(&broken), Err(StagError::ModelFormat(_))),
                "cut at {cut} not detected"
            );
        }

        let mut padded = full.clone();
        padded.extend_from_slice(&[0u8; 7]);
        let trailing = dir.path().join("trailing.stag");
        std::fs::write(&trailing, &padded).unwrap();
        match load_model(&trailing) {
            Err(StagError::ModelFormat(msg)) => assert!(msg.contains("trailing"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_are_named() {
        let (config, params, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.stag");
        save_model(&path, Emotion::Anger, &config, &params).unwrap();
        let full = std::fs::read(&path).unwrap();

        let mut bad = full.clone();
        bad[0] = b'X';
        std::fs::write(dir.path().join("magic.stag"), &bad).unwrap();
        match load_model(&dir.path().join("magic.stag")) {
            Err(StagError::ModelFormat(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }

        let mut bumped = full.clone();
        bumped[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(dir.path().join("version.stag"), &bumped).unwrap();
        match load_model(&dir.path().join("version.stag")) {
            Err(StagError::ModelFormat(msg)) => {
                assert!(msg.contains('9') && msg.contains('1'), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut wrong_kind = full.clone();
        wrong_kind[8] = KIND_SVM;
        std::fs::write(dir.path().join("kind.stag"), &wrong_kind).unwrap();
        assert!(matches!(
            load_model(&dir.path().join("kind.stag")),
            Err(StagError::ModelFormat(_))
        ));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let (config, params, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.stag");
        save_model(&path, Emotion::Anger, &config, &params).unwrap();
        let mut full = std::fs::read(&path).unwrap();
        let n = full.len();
        full[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, &full).unwrap();
        match load_model(&path) {
            Err(StagError::ModelFormat(msg)) => assert!(msg.contains("non-finite"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn svm_round_trip() {
        let model = SvmModel {
            weights: vec![0.25, -1.5, 3.0],
            bias: -0.75,
            c: 1.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("svm.stag");
        save_svm(&path, Emotion::Contentment, &model).unwrap();
        let loaded = load_svm(&path).unwrap();
        assert_eq!(loaded.emotion, Emotion::Contentment);
        assert_eq!(loaded.model.weights, model.weights);
        assert_eq!(loaded.model.bias, model.bias);
        assert_eq!(loaded.model.c, model.c);
        // A pipeline model is not an SVM file.
        let (config, params, _) = fixture();
        let mp = dir.path().join("model.stag");
        save_model(&mp, Emotion::Anger, &config, &params).unwrap();
        assert!(matches!(load_svm(&mp), Err(StagError::ModelFormat(_))));
    }
}
