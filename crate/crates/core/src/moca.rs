//! Motion continuity attention.
//!
//! Two T×T maps are built from a feature sequence `X`:
//!
//! * the normalized self-similarity matrix `softmax_rows(X·Xᵀ)`, computed on
//!   the raw features, and
//! * the non-local attention map `softmax_rows(θ(X)·φ(X)ᵀ)` over learned
//!   projections.
//!
//! A learned 1×1 blend (`rho`) of the two maps followed by another row
//! softmax gives the MoCA map `M`. The module output is
//! `Z = (M · g(X)) · W_z + b_z + X`, which reduces to the identity while
//! `W_z` and `b_z` are zero.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{softmax_rows, Graph, Var};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MocaMode {
    /// NSSM and attention map fused through `rho`.
    Moca,
    /// Plain non-local block.
    NonlocalOnly,
    /// The NSSM alone aggregates values.
    NssmOnly,
}

impl MocaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MocaMode::Moca => "MOCA",
            MocaMode::NonlocalOnly => "NONLOCAL_ONLY",
            MocaMode::NssmOnly => "NSSM_ONLY",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            MocaMode::Moca => 0,
            MocaMode::NonlocalOnly => 1,
            MocaMode::NssmOnly => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(MocaMode::Moca),
            1 => Some(MocaMode::NonlocalOnly),
            2 => Some(MocaMode::NssmOnly),
            _ => None,
        }
    }
}

impl fmt::Display for MocaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MocaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "MOCA" => Ok(MocaMode::Moca),
            "NONLOCAL_ONLY" | "NONLOCAL" => Ok(MocaMode::NonlocalOnly),
            "NSSM_ONLY" | "NSSM" => Ok(MocaMode::NssmOnly),
            other => Err(format!("unknown attention mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MocaConfig {
    pub channels: usize,
    /// Channel reduction ratio `m` inside the projections.
    pub reduction: usize,
    pub mode: MocaMode,
    /// Stop gradients from flowing into `X` through the NSSM branch.
    pub detach_nssm: bool,
    /// Bias terms on the θ, φ and g projections.
    pub proj_bias: bool,
}

impl MocaConfig {
    pub fn new(channels: usize, reduction: usize, mode: MocaMode) -> Self {
        MocaConfig {
            channels,
            reduction,
            mode,
            detach_nssm: false,
            proj_bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.reduction == 0 || self.channels % self.reduction != 0 {
            return Err(Error::contract(
                "moca config",
                format!(
                    "channels {} must be a positive multiple of reduction ratio {}",
                    self.channels, self.reduction
                ),
            ));
        }
        Ok(())
    }

    pub fn reduced(&self) -> usize {
        self.channels / self.reduction
    }
}

/// A T×T row-stochastic map.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap(Tensor);

impl AttentionMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 || values.rows() != values.cols() {
            return Err(Error::contract("attention map", format!("not square: {:?}", values.dims())));
        }
        Ok(AttentionMap(values))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_inner(self) -> Tensor {
        self.0
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    /// Largest deviation of any row sum from one.
    pub fn row_sum_error(&self) -> f64 {
        (0..self.size())
            .map(|r| (self.0.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MocaWeights {
    pub w_theta: Tensor,
    pub w_phi: Tensor,
    pub w_g: Tensor,
    pub w_z: Tensor,
    pub b_z: Tensor,
    pub rho_w: Tensor,
    pub rho_b: Tensor,
    pub b_theta: Option<Tensor>,
    pub b_phi: Option<Tensor>,
    pub b_g: Option<Tensor>,
}

impl MocaWeights {
    /// Projections uniform in `±1/√C`, zero output projection, and an even
    /// `rho` blend.
    pub fn init<R: Rng + ?Sized>(cfg: &MocaConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (c, r) = (cfg.channels, cfg.reduced());
        let bound = 1.0 / (c as f64).sqrt();
        let w_theta = Tensor::uniform(&[c, r], bound, rng);
        let w_phi = Tensor::uniform(&[c, r], bound, rng);
        let w_g = Tensor::uniform(&[c, r], bound, rng);
        let bias = |on: bool| on.then(|| Tensor::zeros(&[r]));
        Ok(MocaWeights {
            w_theta,
            w_phi,
            w_g,
            w_z: Tensor::zeros(&[r, c]),
            b_z: Tensor::zeros(&[c]),
            rho_w: Tensor::vector(vec![0.5, 0.5]),
            rho_b: Tensor::vector(vec![0.0]),
            b_theta: bias(cfg.proj_bias),
            b_phi: bias(cfg.proj_bias),
            b_g: bias(cfg.proj_bias),
        })
    }

    pub fn check(&self, cfg: &MocaConfig) -> Result<()> {
        cfg.validate()?;
        let (c, r) = (cfg.channels, cfg.reduced());
        let expect = [
            ("w_theta", &self.w_theta, vec![c, r]),
            ("w_phi", &self.w_phi, vec![c, r]),
            ("w_g", &self.w_g, vec![c, r]),
            ("w_z", &self.w_z, vec![r, c]),
        ];
        for (name, t, dims) in expect {
            if t.dims() != dims.as_slice() {
                return Err(Error::contract(
                    "moca weights",
                    format!("{name} has dims {:?}, expected {dims:?}", t.dims()),
                ));
            }
        }
        if self.b_z.len() != c || self.rho_w.len() != 2 || self.rho_b.len() != 1 {
            return Err(Error::contract("moca weights", "bad bias or rho shape"));
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> MocaVars {
        let opt = |g: &mut Graph, t: &Option<Tensor>| t.as_ref().map(|t| g.param(t.clone()));
        MocaVars {
            w_theta: g.param(self.w_theta.clone()),
            w_phi: g.param(self.w_phi.clone()),
            w_g: g.param(self.w_g.clone()),
            w_z: g.param(self.w_z.clone()),
            b_z: g.param(self.b_z.clone()),
            rho_w: g.param(self.rho_w.clone()),
            rho_b: g.param(self.rho_b.clone()),
            b_theta: opt(g, &self.b_theta),
            b_phi: opt(g, &self.b_phi),
            b_g: opt(g, &self.b_g),
        }
    }
}

impl ParamSet for MocaWeights {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("w_theta".to_string(), &self.w_theta),
            ("w_phi".to_string(), &self.w_phi),
            ("w_g".to_string(), &self.w_g),
            ("w_z".to_string(), &self.w_z),
            ("b_z".to_string(), &self.b_z),
            ("rho_w".to_string(), &self.rho_w),
            ("rho_b".to_string(), &self.rho_b),
        ];
        for (name, t) in [("b_theta", &self.b_theta), ("b_phi", &self.b_phi), ("b_g", &self.b_g)] {
            if let Some(t) = t {
                out.push((name.to_string(), t));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.w_theta,
            &mut self.w_phi,
            &mut self.w_g,
            &mut self.w_z,
            &mut self.b_z,
            &mut self.rho_w,
            &mut self.rho_b,
        ];
        for t in [&mut self.b_theta, &mut self.b_phi, &mut self.b_g].into_iter().flatten() {
            out.push(t);
        }
        out
    }
}

/// [`MocaWeights`] bound to graph leaves.
#[derive(Clone, Debug)]
pub struct MocaVars {
    pub w_theta: Var,
    pub w_phi: Var,
    pub w_g: Var,
    pub w_z: Var,
    pub b_z: Var,
    pub rho_w: Var,
    pub rho_b: Var,
    pub b_theta: Option<Var>,
    pub b_phi: Option<Var>,
    pub b_g: Option<Var>,
}

impl MocaVars {
    /// Same order as [`ParamSet::tensors_mut`] on the source weights.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![
            self.w_theta,
            self.w_phi,
            self.w_g,
            self.w_z,
            self.b_z,
            self.rho_w,
            self.rho_b,
        ];
        out.extend([self.b_theta, self.b_phi, self.b_g].into_iter().flatten());
        out
    }
}

/// Maps produced during one forward pass; absent entries were not computed
/// in the configured mode.
#[derive(Clone, Copy, Debug)]
pub struct MocaTrace {
    pub nssm: Option<Var>,
    pub attention: Option<Var>,
    pub moca: Option<Var>,
    /// The map that actually aggregated the values.
    pub used: Var,
}

pub fn nssm_on(g: &mut Graph, x: Var) -> Result<Var> {
    let logits = g.matmul_t(x, x)?;
    Ok(g.softmax_rows(logits))
}

pub fn attention_on(g: &mut Graph, x: Var, w: &MocaVars) -> Result<Var> {
    let theta = g.linear(x, w.w_theta, w.b_theta)?;
    let phi = g.linear(x, w.w_phi, w.b_phi)?;
    let logits = g.matmul_t(theta, phi)?;
    Ok(g.softmax_rows(logits))
}

pub fn fuse_on(g: &mut Graph, nssm: Var, attention: Var, rho_w: Var, rho_b: Var) -> Result<Var> {
    let logits = g.pointwise_mix(&[nssm, attention], rho_w, rho_b)?;
    Ok(g.softmax_rows(logits))
}

/// Full module on one `T×C` sequence.
pub fn forward_on(g: &mut Graph, x: Var, w: &MocaVars, cfg: &MocaConfig) -> Result<(Var, MocaTrace)> {
    cfg.validate()?;
    let xd = g.value(x).dims().to_vec();
    if xd.len() != 2 || xd[1] != cfg.channels {
        return Err(Error::contract(
            "moca_forward",
            format!("input dims {xd:?} do not match {} channels", cfg.channels),
        ));
    }
    let nssm_input = if cfg.detach_nssm { g.detach(x) } else { x };
    let mut trace = MocaTrace {
        nssm: None,
        attention: None,
        moca: None,
        used: x,
    };
    trace.used = match cfg.mode {
        MocaMode::Moca => {
            let n = nssm_on(g, nssm_input)?;
            let a = attention_on(g, x, w)?;
            let m = fuse_on(g, n, a, w.rho_w, w.rho_b)?;
            trace.nssm = Some(n);
            trace.attention = Some(a);
            trace.moca = Some(m);
            m
        }
        MocaMode::NonlocalOnly => {
            let a = attention_on(g, x, w)?;
            trace.attention = Some(a);
            a
        }
        MocaMode::NssmOnly => {
            let n = nssm_on(g, nssm_input)?;
            trace.nssm = Some(n);
            n
        }
    };
    let values = g.linear(x, w.w_g, w.b_g)?;
    let y = g.matmul(trace.used, values)?;
    let back = g.linear(y, w.w_z, Some(w.b_z))?;
    let z = g.add(back, x)?;
    Ok((z, trace))
}

pub fn nssm(x: &Tensor) -> Result<AttentionMap> {
    if x.rank() != 2 {
        return Err(Error::contract("nssm", format!("expected T×C, got {:?}", x.dims())));
    }
    let logits = x.matmul(&x.transpose())?;
    AttentionMap::new(softmax_rows(&logits))
}

pub fn pairwise_attention(x: &Tensor, w: &MocaWeights) -> Result<AttentionMap> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = w.bind(&mut g);
    let a = attention_on(&mut g, xv, &wv)?;
    AttentionMap::new(g.value(a).clone())
}

pub fn fuse_maps(nssm: &AttentionMap, attn: &AttentionMap, rho_w: [f64; 2], rho_b: f64) -> Result<AttentionMap> {
    if nssm.values().dims() != attn.values().dims() {
        return Err(Error::contract(
            "fuse_maps",
            format!("{:?} vs {:?}", nssm.values().dims(), attn.values().dims()),
        ));
    }
    let mut g = Graph::new();
    let n = g.constant(nssm.values().clone());
    let a = g.constant(attn.values().clone());
    let w = g.constant(Tensor::vector(rho_w.to_vec()));
    let b = g.constant(Tensor::vector(vec![rho_b]));
    let m = fuse_on(&mut g, n, a, w, b)?;
    AttentionMap::new(g.value(m).clone())
}

pub fn moca_forward(x: &Tensor, w: &MocaWeights, cfg: &MocaConfig) -> Result<Tensor> {
    w.check(cfg)?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = w.bind(&mut g);
    let (z, _) = forward_on(&mut g, xv, &wv, cfg)?;
    Ok(g.value(z).clone())
}

/// The three maps for one sequence, for inspection and export. Maps not used
/// by the configured mode are still computed from the current weights.
pub fn all_maps(x: &Tensor, w: &MocaWeights) -> Result<(AttentionMap, AttentionMap, AttentionMap)> {
    let n = nssm(x)?;
    let a = pairwise_attention(x, w)?;
    let rw = [w.rho_w.data()[0], w.rho_w.data()[1]];
    let m = fuse_maps(&n, &a, rw, w.rho_b.data()[0])?;
    Ok((n, a, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weights(cfg: &MocaConfig, seed: u64) -> MocaWeights {
        MocaWeights::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn nssm_examples() {
        let x = Tensor::from_rows(&vec![vec![0.3, -1.0, 2.0]; 5]);
        let n = nssm(&x).unwrap();
        assert!(n.values().data().iter().all(|&v| (v - 0.2).abs() < 1e-15));

        let one = nssm(&Tensor::from_rows(&[vec![4.0, 1.0]])).unwrap();
        assert_eq!(one.values().data(), &[1.0]);

        let eye = nssm(&Tensor::identity(2)).unwrap();
        let d = eye.values().data();
        assert!((d[0] - 0.7310586).abs() < 1e-7 && (d[3] - 0.7310586).abs() < 1e-7);
        assert!((d[1] - 0.2689414).abs() < 1e-7 && (d[2] - 0.2689414).abs() < 1e-7);
    }

    #[test]
    fn attention_examples() {
        let cfg = MocaConfig::new(4, 2, MocaMode::NonlocalOnly);
        let mut w = weights(&cfg, 1);
        w.w_theta = Tensor::zeros(&[4, 2]);
        w.w_phi = Tensor::zeros(&[4, 2]);
        let x = Tensor::uniform(&[3, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let a = pairwise_attention(&x, &w).unwrap();
        assert!(a.values().data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let single = pairwise_attention(&Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]), &weights(&cfg, 2)).unwrap();
        assert_eq!(single.values().data(), &[1.0]);

        let cfg1 = MocaConfig::new(2, 1, MocaMode::NonlocalOnly);
        let mut w1 = weights(&cfg1, 3);
        w1.w_theta = Tensor::identity(2);
        w1.w_phi = Tensor::identity(2);
        let x = Tensor::identity(2);
        assert_eq!(pairwise_attention(&x, &w1).unwrap(), nssm(&x).unwrap());
    }

    #[test]
    fn fuse_examples() {
        let n = nssm(&Tensor::identity(2)).unwrap();
        let uniform = AttentionMap::new(Tensor::filled(&[2, 2], 0.5)).unwrap();

        let m = fuse_maps(&n, &n, [0.0, 0.0], 3.7).unwrap();
        assert!(m.values().data().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let m = fuse_maps(&uniform, &n, [1.0, 0.0], 0.0).unwrap();
        assert!(m.values().data().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let m = fuse_maps(&uniform, &n, [0.0, 1.0], 0.0).unwrap();
        assert!((m.values().get(0, 0) - 0.6136).abs() < 1e-4);
        assert!((m.values().get(0, 1) - 0.3864).abs() < 1e-4);

        let small = AttentionMap::new(Tensor::filled(&[1, 1], 1.0)).unwrap();
        assert!(matches!(fuse_maps(&small, &n, [1.0, 1.0], 0.0), Err(Error::Contract { .. })));
    }

    #[test]
    fn zero_output_projection_is_identity() {
        for mode in [MocaMode::Moca, MocaMode::NonlocalOnly, MocaMode::NssmOnly] {
            let cfg = MocaConfig::new(8, 2, mode);
            let w = weights(&cfg, 4);
            let x = Tensor::uniform(&[6, 8], 2.0, &mut ChaCha8Rng::seed_from_u64(5));
            let z = moca_forward(&x, &w, &cfg).unwrap();
            assert_eq!(z, x);
        }
    }

    #[test]
    fn single_frame_output() {
        let cfg = MocaConfig::new(4, 2, MocaMode::Moca);
        let mut w = weights(&cfg, 6);
        w.w_z = Tensor::uniform(&[2, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(7));
        let x = Tensor::from_rows(&[vec![0.5, -1.0, 0.25, 2.0]]);
        let z = moca_forward(&x, &w, &cfg).unwrap();
        let expected = x.matmul(&w.w_g).unwrap().matmul(&w.w_z).unwrap();
        for i in 0..4 {
            assert!((z.data()[i] - x.data()[i] - expected.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn config_and_shape_errors() {
        let bad = MocaConfig::new(6, 4, MocaMode::Moca);
        assert!(bad.validate().is_err());
        let cfg = MocaConfig::new(4, 2, MocaMode::Moca);
        let w = weights(&cfg, 8);
        assert!(moca_forward(&Tensor::zeros(&[3, 5]), &w, &cfg).is_err());
    }

    #[test]
    fn mode_parse_roundtrip() {
        for mode in [MocaMode::Moca, MocaMode::NonlocalOnly, MocaMode::NssmOnly] {
            assert_eq!(mode.as_str().parse::<MocaMode>().unwrap(), mode);
            assert_eq!(MocaMode::from_code(mode.code()), Some(mode));
        }
        assert!("attention".parse::<MocaMode>().is_err());
    }
}
