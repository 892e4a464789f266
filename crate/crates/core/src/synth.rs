//! Synthetic articulated motion and the stand-in frame feature encoder.
//!
//! Each sequence draws per-parameter trajectories as sums of sinusoids
//! around a per-sequence offset, poses the toy body model with them and
//! encodes every frame's joints through a fixed random affine map followed
//! by `tanh`. All randomness is seeded, so outputs are pure functions of the
//! configuration and seeds.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::body::{ToyBodyModel, POSE_DIM, SHAPE_DIM, THETA_DIM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Joint coordinates are divided by this before encoding (mm).
pub const ENCODER_INPUT_SCALE: f64 = 200.0;
/// Post-`tanh` gain of the encoder.
pub const ENCODER_GAIN: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seq_len: usize,
    pub joints: usize,
    pub vertices: usize,
    pub n_harmonics: usize,
    /// Bound on pose and shape parameter magnitudes.
    pub amplitude: f64,
    /// Largest allowed joint displacement between consecutive frames (mm).
    pub continuity_bound: f64,
    pub channels: usize,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
    pub fps: f64,
    pub body_seed: u64,
    pub encoder_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seq_len: 16,
            joints: 14,
            vertices: 50,
            n_harmonics: 3,
            amplitude: 0.6,
            continuity_bound: 25.0,
            channels: 64,
            noise: 0.01,
            fps: 30.0,
            body_seed: crate::body::DEFAULT_BODY_SEED,
            encoder_seed: 0xE7C0_DE00,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ints = [self.seq_len, self.joints, self.vertices, self.n_harmonics, self.channels];
        if ints.contains(&0) || self.joints < 3 {
            return Err(Error::contract("synth config", "sizes must be positive and joints ≥ 3"));
        }
        let reals = [self.amplitude, self.continuity_bound, self.noise, self.fps];
        if reals.iter().any(|x| !x.is_finite() || *x < 0.0) || self.continuity_bound == 0.0 || self.fps == 0.0 {
            return Err(Error::contract(
                "synth config",
                "amplitude and noise must be ≥ 0; continuity bound and fps > 0",
            ));
        }
        Ok(())
    }
}

/// Disjoint seed ranges for the dataset splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    /// Held-out ground-truth motion shown to the discriminator as "real".
    Motion,
}

impl Split {
    /// Seed of sequence `index` in this split.
    pub fn sequence_seed(self, base: u64, index: u64) -> u64 {
        let range = match self {
            Split::Train => 0u64,
            Split::Val => 1,
            Split::Motion => 2,
        };
        base.wrapping_add(range << 40).wrapping_add(index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    /// `T×85`.
    pub gt_params: Tensor,
    /// `T×J×3` in mm.
    pub joints3d: Tensor,
    /// `T×V×3` in mm.
    pub vertices: Tensor,
    pub fps: f64,
}

impl SkeletonSequence {
    pub fn seq_len(&self) -> usize {
        self.gt_params.rows()
    }

    /// Largest joint displacement between consecutive frames.
    pub fn max_joint_step(&self) -> f64 {
        let d = self.joints3d.dims();
        let width = d[1] * 3;
        let data = self.joints3d.data();
        let mut worst: f64 = 0.0;
        for t in 1..d[0] {
            for j in 0..d[1] {
                let a = &data[(t - 1) * width + 3 * j..(t - 1) * width + 3 * j + 3];
                let b = &data[t * width + 3 * j..t * width + 3 * j + 3];
                let dist = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                worst = worst.max(dist);
            }
        }
        worst
    }
}

/// Holds the body model and encoder shared by all sequences of a config.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    cfg: SynthConfig,
    body: ToyBodyModel,
    /// `3J×C`.
    enc_w: Tensor,
    enc_b: Tensor,
}

fn poses_to_points(params: &Tensor, rest: &Tensor, pose_b: &Tensor, shape_b: &Tensor) -> Result<Tensor> {
    let t = params.rows();
    let mut pose = Vec::with_capacity(t * POSE_DIM);
    let mut shape = Vec::with_capacity(t * SHAPE_DIM);
    for r in 0..t {
        let row = params.row(r);
        pose.extend_from_slice(&row[..POSE_DIM]);
        shape.extend_from_slice(&row[POSE_DIM..POSE_DIM + SHAPE_DIM]);
    }
    let pose = Tensor::new(vec![t, POSE_DIM], pose)?;
    let shape = Tensor::new(vec![t, SHAPE_DIM], shape)?;
    let mut out = pose.matmul(pose_b)?;
    out.add_assign(&shape.matmul(shape_b)?);
    let w = out.cols();
    for r in 0..t {
        for (o, x) in out.data_mut()[r * w..(r + 1) * w].iter_mut().zip(rest.data()) {
            *o += x;
        }
    }
    out.reshape(&[t, w / 3, 3])
}

impl Synthesizer {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let body = ToyBodyModel::generate(cfg.joints, cfg.vertices, cfg.body_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.encoder_seed);
        let fan_in = cfg.joints * 3;
        let std = 1.0 / (fan_in as f64).sqrt();
        let enc_w = Tensor::new(
            vec![fan_in, cfg.channels],
            (0..fan_in * cfg.channels).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
        )?;
        let enc_b = Tensor::uniform(&[cfg.channels], 0.5, &mut rng);
        Ok(Synthesizer {
            cfg: cfg.clone(),
            body,
            enc_w,
            enc_b,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn body(&self) -> &ToyBodyModel {
        &self.body
    }

    /// Upper bound `L` with `‖f(a) − f(b)‖ ≤ L·‖a − b‖` for noise-free
    /// features of flattened joint vectors `a`, `b` (Frobenius norm of the
    /// encoder matrix times gain over input scale; `tanh` is 1-Lipschitz).
    pub fn lipschitz_bound(&self) -> f64 {
        let frob = self.enc_w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        ENCODER_GAIN * frob / ENCODER_INPUT_SCALE
    }

    pub fn generate(&self, seed: u64) -> Result<SkeletonSequence> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_len = cfg.seq_len;
        let amp = cfg.amplitude;

        let mut offset = [0.0; POSE_DIM];
        for o in offset.iter_mut() {
            *o = 0.5 * amp * rng.gen_range(-1.0..=1.0);
        }
        // Motion part of each pose parameter, scaled later to honor the continuity bound.
        let mut motion = vec![0.0; t_len * POSE_DIM];
        let freqs: Vec<f64> = (1..=cfg.n_harmonics).map(|h| h as f64 * rng.gen_range(0.25..1.0)).collect();
        for i in 0..POSE_DIM {
            for &f in &freqs {
                let a = amp * rng.gen_range(0.0..0.5) / cfg.n_harmonics as f64;
                let phase = rng.gen_range(0.0..2.0 * PI);
                for t in 0..t_len {
                    motion[t * POSE_DIM + i] += a * (2.0 * PI * f * t as f64 / cfg.fps + phase).sin();
                }
            }
        }
        let shape: Vec<f64> = (0..SHAPE_DIM).map(|_| amp * rng.gen_range(-1.0..=1.0)).collect();
        let camera = [
            1e-3 * rng.gen_range(0.8..1.2),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        ];

        let build = |scale: f64| -> Result<Tensor> {
            let mut data = Vec::with_capacity(t_len * THETA_DIM);
            for t in 0..t_len {
                for i in 0..POSE_DIM {
                    data.push(offset[i] + scale * motion[t * POSE_DIM + i]);
                }
                data.extend_from_slice(&shape);
                data.extend_from_slice(&camera);
            }
            Tensor::new(vec![t_len, THETA_DIM], data)
        };
        let mut params = build(1.0)?;
        let mut seq = self.pose(params.clone(), cfg.fps)?;
        let step = seq.max_joint_step();
        if step > cfg.continuity_bound {
            // Joints are linear in pose, so scaling the motion scales every step.
            params = build(0.999 * cfg.continuity_bound / step)?;
            seq = self.pose(params, cfg.fps)?;
        }
        debug_assert!(seq.max_joint_step() <= cfg.continuity_bound);
        Ok(seq)
    }

    fn pose(&self, params: Tensor, fps: f64) -> Result<SkeletonSequence> {
        let b = &self.body;
        let joints3d = poses_to_points(&params, &b.rest_joints, &b.pose_basis, &b.shape_basis)?;
        let vertices = poses_to_points(&params, &b.rest_vertices, &b.vertex_pose_basis, &b.vertex_shape_basis)?;
        Ok(SkeletonSequence {
            gt_params: params,
            joints3d,
            vertices,
            fps,
        })
    }

    /// Noise-free features of flattened joint rows (`T×3J` → `T×C`).
    pub fn encode_clean(&self, joints_flat: &Tensor) -> Result<Tensor> {
        let scaled = joints_flat.map(|x| x / ENCODER_INPUT_SCALE);
        let mut pre = scaled.matmul(&self.enc_w)?;
        let c = pre.cols();
        for r in 0..pre.rows() {
            for (x, b) in pre.data_mut()[r * c..(r + 1) * c].iter_mut().zip(self.enc_b.data()) {
                *x = ENCODER_GAIN * (*x + b).tanh();
            }
        }
        Ok(pre)
    }

    pub fn encode(&self, seq: &SkeletonSequence, seed: u64) -> Result<Tensor> {
        let t = seq.seq_len();
        let flat = seq.joints3d.reshape(&[t, self.cfg.joints * 3])?;
        let mut feats = self.encode_clean(&flat)?;
        if self.cfg.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for x in feats.data_mut() {
                *x += self.cfg.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(feats)
    }

    /// Generated and encoded sequence for `seed`.
    pub fn record(&self, seed: u64) -> Result<Record> {
        let seq = self.generate(seed)?;
        let features = self.encode(&seq, seed ^ 0x0F_EA7E)?;
        Ok(Record {
            gt_params: seq.gt_params,
            joints3d: seq.joints3d,
            vertices: seq.vertices,
            features,
        })
    }

    pub fn records(&self, split: Split, base_seed: u64, n: usize) -> Result<Vec<Record>> {
        (0..n as u64)
            .map(|i| self.record(split.sequence_seed(base_seed, i)).map(|r| r.quantized()))
            .collect()
    }
}

pub fn generate_sequence(cfg: &SynthConfig, seed: u64) -> Result<SkeletonSequence> {
    Synthesizer::new(cfg)?.generate(seed)
}

pub fn encode_features(seq: &SkeletonSequence, cfg: &SynthConfig, seed: u64) -> Result<Tensor> {
    Synthesizer::new(cfg)?.encode(seq, seed)
}

/// One dataset sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub gt_params: Tensor,
    pub joints3d: Tensor,
    pub vertices: Tensor,
    pub features: Tensor,
}

impl Record {
    pub fn seq_len(&self) -> usize {
        self.gt_params.rows()
    }

    pub fn num_joints(&self) -> usize {
        self.joints3d.dims()[1]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// Values rounded to what the dataset file stores.
    pub fn quantized(&self) -> Record {
        let q = |t: &Tensor| t.map(|x| x as f32 as f64);
        Record {
            gt_params: q(&self.gt_params),
            joints3d: q(&self.joints3d),
            vertices: q(&self.vertices),
            features: q(&self.features),
        }
    }

    /// Pose columns as a `T×72` tensor.
    pub fn pose_sequence(&self) -> Tensor {
        let t = self.seq_len();
        let data = (0..t).flat_map(|r| self.gt_params.row(r)[..POSE_DIM].to_vec()).collect();
        Tensor::new(vec![t, POSE_DIM], data).expect("pose block")
    }
}

pub const DATASET_MAGIC: &[u8; 4] = b"MSYN";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetSummary {
    pub records: usize,
    pub bytes: u64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, t: &Tensor) {
    for &x in t.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn encode_dataset(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    put_u32(&mut out, records.len())?;
    for r in records {
        for v in [r.seq_len(), r.num_joints(), r.num_vertices(), r.channels()] {
            put_u32(&mut out, v)?;
        }
        put_f32s(&mut out, &r.gt_params);
        put_f32s(&mut out, &r.joints3d);
        put_f32s(&mut out, &r.vertices);
        put_f32s(&mut out, &r.features);
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!("file ends inside {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, dims: Vec<usize>, what: &str) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let bytes = self.take(n * 4, what)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Tensor::new(dims, data).map_err(|_| Error::Corrupt(format!("zero extent in {what}")))
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<Vec<Record>> {
    if buf.len() < 4 || &buf[..4] != DATASET_MAGIC {
        return Err(Error::Format("missing MSYN magic".into()));
    }
    let mut cur = Cursor { buf, pos: 4 };
    let version = cur.u32("header")?;
    if version != DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let count = cur.u32("header")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let t = cur.u32("record header")? as usize;
        let j = cur.u32("record header")? as usize;
        let v = cur.u32("record header")? as usize;
        let c = cur.u32("record header")? as usize;
        records.push(Record {
            gt_params: cur.f32s(vec![t, THETA_DIM], "gt_params")?,
            joints3d: cur.f32s(vec![t, j, 3], "joints3d")?,
            vertices: cur.f32s(vec![t, v, 3], "vertices")?,
            features: cur.f32s(vec![t, c], "features")?,
        });
    }
    if cur.pos != buf.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    Ok(records)
}

pub fn write_dataset(path: &Path, records: &[Record]) -> Result<DatasetSummary> {
    let bytes = encode_dataset(records)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(DatasetSummary {
        records: records.len(),
        bytes: bytes.len() as u64,
    })
}

pub fn read_dataset(path: &Path) -> Result<Vec<Record>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    decode_dataset(&buf)
}

/// Generates `n` sequences of `split` and writes them to `path`.
pub fn make_dataset(cfg: &SynthConfig, n: usize, seed: u64, split: Split, path: &Path) -> Result<DatasetSummary> {
    let synth = Synthesizer::new(cfg)?;
    let records = synth.records(split, seed, n)?;
    write_dataset(path, &records)
}
