//! Named-tensor checkpoint files.
//!
//! Layout: magic `MPSN`, `u32` version, `u32` tensor count, then per tensor a
//! `u32` name length, the UTF-8 name, `u32` rank, `u32` dims and the values
//! as little-endian `f32`. All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::body::ToyBodyModel;
use crate::error::{Error, Result};
use crate::hafi::{HafiConfig, HafiWeights};
use crate::losses::DiscriminatorWeights;
use crate::model::{Model, ModelConfig};
use crate::moca::{MocaMode, MocaWeights};
use crate::body::RegressorWeights;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MPSN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor)>;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, tensors.len())?;
    for (name, t) in tensors {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &d in t.dims() {
            put_u32(&mut out, d)?;
        }
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(buf: &[u8]) -> Result<NamedTensors> {
    if buf.len() < 4 || &buf[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing MPSN magic".into()));
    }
    let mut pos = 4;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if buf.len() - pos < n {
            return Err(Error::Corrupt(format!("file ends inside {what}")));
        }
        pos += n;
        Ok(&buf[pos - n..pos])
    };
    let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
    let version = u32_of(take(4, "header")?) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = u32_of(take(4, "header")?);
    let mut out = Vec::with_capacity(count.min(1 << 12));
    for _ in 0..count {
        let len = u32_of(take(4, "tensor name")?);
        let name = String::from_utf8(take(len, "tensor name")?.to_vec())
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = u32_of(take(4, "tensor rank")?);
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(u32_of(take(4, "tensor dims")?));
        }
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Corrupt(format!("dims of {name} overflow")))?;
        let data = take(n, "tensor data")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(dims, data).map_err(|_| Error::Corrupt(format!("tensor {name} has a zero extent")))?;
        out.push((name, t));
    }
    if pos != buf.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", buf.len() - pos)));
    }
    Ok(out)
}

/// Writes to a sibling temporary file first so a failed save never leaves
/// a half-written checkpoint under `path`.
pub fn save_tensors(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode_tensors(tensors)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<NamedTensors> {
    decode_tensors(&fs::read(path)?)
}

/// Pops tensors by name from a loaded collection.
pub struct TensorStore {
    items: NamedTensors,
}

impl TensorStore {
    pub fn new(items: NamedTensors) -> Self {
        TensorStore { items }
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        let i = self
            .items
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
        Ok(self.items.remove(i).1)
    }

    pub fn has(&self, name: &str) -> bool {
        self.items.iter().any(|(n, _)| n == name)
    }

    /// Fills `targets` in order from tensors named `prefix.<name>`.
    pub fn fill(&mut self, prefix: &str, names: Vec<String>, targets: Vec<&mut Tensor>) -> Result<()> {
        for (name, slot) in names.into_iter().zip(targets) {
            let full = format!("{prefix}.{name}");
            let t = self.take(&full)?;
            if t.dims() != slot.dims() {
                return Err(Error::Format(format!(
                    "{full} has dims {:?}, config expects {:?}",
                    t.dims(),
                    slot.dims()
                )));
            }
            *slot = t;
        }
        Ok(())
    }

    pub fn remaining(&self) -> Vec<&str> {
        self.items.iter().map(|(n, _)| n.as_str()).collect()
    }
}

const META_LEN: usize = 14;

fn encode_config(cfg: &ModelConfig) -> Tensor {
    let (k, resize, h1, h2) = match &cfg.hafi {
        Some(h) => (h.frames_per_group, h.resize_dim, h.hidden[0], h.hidden[1]),
        None => (0, 0, 0, 0),
    };
    let v = [
        cfg.channels,
        cfg.seq_len,
        cfg.reduction,
        cfg.mode.code() as usize,
        cfg.detach_nssm as usize,
        k,
        resize,
        h1,
        h2,
        cfg.n_iter,
        cfg.regressor_hidden,
        cfg.disc_hidden[0],
        cfg.disc_hidden[1],
        cfg.joints * 100_000 + cfg.vertices,
    ];
    Tensor::vector(v.iter().map(|&x| x as f64).collect())
}

fn decode_config(t: &Tensor) -> Result<ModelConfig> {
    if t.len() != META_LEN || t.data().iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
        return Err(Error::Corrupt("model metadata is malformed".into()));
    }
    let v: Vec<usize> = t.data().iter().map(|&x| x as usize).collect();
    let mode = MocaMode::from_code(v[3] as u32).ok_or_else(|| Error::Corrupt(format!("unknown mode code {}", v[3])))?;
    let hafi = (v[5] != 0).then(|| HafiConfig {
        frames_per_group: v[5],
        resize_dim: v[6],
        hidden: [v[7], v[8]],
    });
    let cfg = ModelConfig {
        channels: v[0],
        seq_len: v[1],
        reduction: v[2],
        mode,
        detach_nssm: v[4] != 0,
        hafi,
        n_iter: v[9],
        regressor_hidden: v[10],
        disc_hidden: [v[11], v[12]],
        joints: v[13] / 100_000,
        vertices: v[13] % 100_000,
        body_seed: crate::body::DEFAULT_BODY_SEED,
    };
    cfg.validate().map_err(|e| Error::Corrupt(format!("model metadata: {e}")))?;
    Ok(cfg)
}

fn push_prefixed(out: &mut NamedTensors, prefix: &str, named: Vec<(String, &Tensor)>) {
    out.extend(named.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t.clone())));
}

/// Model config, weights and body model constants as named tensors.
pub fn model_tensors(model: &Model) -> NamedTensors {
    let mut out = vec![("meta.model".to_string(), encode_config(&model.cfg))];
    push_prefixed(&mut out, "gen", model.generator_named());
    push_prefixed(&mut out, "disc", model.disc.named());
    push_prefixed(&mut out, "body", model.body.named());
    out
}

/// Rebuilds a model, consuming its tensors from `store`.
pub fn model_from_store(store: &mut TensorStore) -> Result<Model> {
    let cfg = decode_config(&store.take("meta.model")?)?;
    // Shapes come from a fresh zero-filled model; values from the store.
    let moca = MocaWeights::init(&cfg.moca(), &mut ZeroRng)?;
    let hafi = match &cfg.hafi {
        Some(h) => Some(HafiWeights::init(cfg.channels, h, &mut ZeroRng)?),
        None => None,
    };
    let regressor = RegressorWeights::init(cfg.channels, cfg.regressor_hidden, &mut ZeroRng);
    let disc = DiscriminatorWeights::init(cfg.seq_len, cfg.disc_hidden, &mut ZeroRng);
    let body_names: Vec<String> = ["rest_joints", "rest_vertices", "pose_basis", "shape_basis", "vertex_pose_basis", "vertex_shape_basis"]
        .iter()
        .map(|n| format!("body.{n}"))
        .collect();
    let mut body_tensors = Vec::with_capacity(body_names.len());
    for n in &body_names {
        body_tensors.push(store.take(n)?);
    }
    let body = ToyBodyModel::from_tensors(body_tensors).map_err(|e| Error::Corrupt(format!("body model: {e}")))?;
    if body.num_joints() != cfg.joints || body.num_vertices() != cfg.vertices {
        return Err(Error::Corrupt("body model size differs from metadata".into()));
    }
    let mut model = Model {
        cfg,
        moca,
        hafi,
        regressor,
        disc,
        body,
    };
    let names: Vec<String> = model.generator_named().into_iter().map(|(n, _)| n).collect();
    store.fill("gen", names, model.generator_tensors_mut())?;
    let names: Vec<String> = model.disc.named().into_iter().map(|(n, _)| n).collect();
    store.fill("disc", names, model.disc.tensors_mut())?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    save_tensors(path, &model_tensors(model))
}

/// Loads the model part of a checkpoint; optimizer state is ignored.
pub fn load_model(path: &Path) -> Result<Model> {
    let mut store = TensorStore::new(load_tensors(path)?);
    model_from_store(&mut store)
}

/// Source of zeros for shape-only initialization.
struct ZeroRng;

impl rand::RngCore for ZeroRng {
    fn next_u32(&mut self) -> u32 {
        0
    }
    fn next_u64(&mut self) -> u64 {
        0
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        dest.fill(0);
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        dest.fill(0);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_small() {
        let ts = vec![
            ("a".to_string(), Tensor::vector(vec![1.0, -2.5, 1e-3])),
            ("b.c".to_string(), Tensor::zeros(&[2, 3, 1])),
        ];
        let back = decode_tensors(&encode_tensors(&ts).unwrap()).unwrap();
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1.data(), &[1.0, -2.5, 1e-3f32 as f64]);
        assert_eq!(back[1].1.dims(), &[2, 3, 1]);
    }

    #[test]
    fn header_errors() {
        let bytes = encode_tensors(&[("x".to_string(), Tensor::scalar(1.0))]).unwrap();
        let mut bad = bytes.clone();
        bad[1] = 0;
        assert!(matches!(decode_tensors(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        let err = decode_tensors(&bad).unwrap_err();
        assert!(err.to_string().contains('2') && err.to_string().contains('1'));
        assert!(matches!(decode_tensors(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
    }
}
