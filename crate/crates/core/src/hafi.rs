//! Hierarchical attentive feature integration.
//!
//! Each frame is refined from a window of `k²` neighboring frames split into
//! `k` consecutive, non-overlapping groups of `k`. A shared resize layer and a
//! small attention MLP score the members of each group; the weighted sums of
//! the original features form the next level, which is scored and summed the
//! same way to give the refined feature.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct HafiConfig {
    /// Frames per group `k`; the window spans `k²` frames.
    pub frames_per_group: usize,
    /// Width of the shared resize layer.
    pub resize_dim: usize,
    /// Hidden widths of the three-layer attention MLP.
    pub hidden: [usize; 2],
}

impl HafiConfig {
    pub fn new(frames_per_group: usize, resize_dim: usize) -> Self {
        HafiConfig {
            frames_per_group,
            resize_dim,
            hidden: [256, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.frames_per_group) {
            return Err(Error::contract(
                "hafi config",
                format!("frames_per_group must be 2, 3 or 4, got {}", self.frames_per_group),
            ));
        }
        if self.resize_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::contract("hafi config", "layer widths must be positive"));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.frames_per_group * self.frames_per_group
    }
}

/// Frame indices feeding the refinement of frame `t`, clamped to `[0, T-1]`.
///
/// Odd `k` gives a symmetric window of `(k²−1)/2` frames on each side; even
/// `k` takes one more future frame than past frames.
pub fn window_indices(t: usize, seq_len: usize, k: usize) -> Vec<usize> {
    let len = k * k;
    let past = (len - 1) / 2;
    let last = seq_len as isize - 1;
    (0..len)
        .map(|i| (t as isize - past as isize + i as isize).clamp(0, last) as usize)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HafiWeights {
    pub resize_w: Tensor,
    pub resize_b: Tensor,
    /// `(weight, bias)` for the three MLP layers.
    pub mlp: [(Tensor, Tensor); 3],
}

impl HafiWeights {
    pub fn init<R: Rng + ?Sized>(channels: usize, cfg: &HafiConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.frames_per_group;
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (Tensor::uniform(&[fan_in, fan_out], bound, rng), Tensor::zeros(&[fan_out]))
        };
        let (resize_w, resize_b) = layer(channels, cfg.resize_dim);
        let l1 = layer(k * cfg.resize_dim, cfg.hidden[0]);
        let l2 = layer(cfg.hidden[0], cfg.hidden[1]);
        let l3 = layer(cfg.hidden[1], k);
        Ok(HafiWeights {
            resize_w,
            resize_b,
            mlp: [l1, l2, l3],
        })
    }

    pub fn channels(&self) -> usize {
        self.resize_w.rows()
    }

    pub fn frames_per_group(&self) -> usize {
        self.mlp[2].0.cols()
    }

    pub fn bind(&self, g: &mut Graph) -> HafiVars {
        let resize_w = g.param(self.resize_w.clone());
        let resize_b = g.param(self.resize_b.clone());
        let mlp = self.mlp.each_ref().map(|(w, b)| (g.param(w.clone()), g.param(b.clone())));
        HafiVars {
            resize_w,
            resize_b,
            mlp,
        }
    }
}

impl ParamSet for HafiWeights {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("resize_w".to_string(), &self.resize_w),
            ("resize_b".to_string(), &self.resize_b),
        ];
        for (i, (w, b)) in self.mlp.iter().enumerate() {
            out.push((format!("mlp{i}_w"), w));
            out.push((format!("mlp{i}_b"), b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.resize_w, &mut self.resize_b];
        for (w, b) in self.mlp.iter_mut() {
            out.push(w);
            out.push(b);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct HafiVars {
    pub resize_w: Var,
    pub resize_b: Var,
    pub mlp: [(Var, Var); 3],
}

impl HafiVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.resize_w, self.resize_b];
        for (w, b) in self.mlp {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Attention vectors computed while refining.
#[derive(Clone, Copy, Debug)]
pub struct HafiTrace {
    /// One row of `k` weights per bottom-level group.
    pub bottom: Var,
    /// One row of `k` weights per refined frame.
    pub top: Var,
}

fn attention_logits(g: &mut Graph, concat: Var, w: &HafiVars) -> Result<Var> {
    let h1 = g.linear(concat, w.mlp[0].0, Some(w.mlp[0].1))?;
    let h1 = g.tanh(h1);
    let h2 = g.linear(h1, w.mlp[1].0, Some(w.mlp[1].1))?;
    let h2 = g.tanh(h2);
    g.linear(h2, w.mlp[2].0, Some(w.mlp[2].1))
}

/// Scores consecutive groups of `k` rows in `feats` and returns their
/// attention-weighted sums together with the attention rows.
fn attend_groups(g: &mut Graph, feats: Var, k: usize, w: &HafiVars) -> Result<(Var, Var)> {
    let n = g.value(feats).rows() / k;
    let resized = g.linear(feats, w.resize_w, Some(w.resize_b))?;
    let r = g.value(resized).cols();
    let concat = g.reshape(resized, &[n, k * r])?;
    let logits = attention_logits(g, concat, w)?;
    let att = g.softmax_rows(logits);
    let out = g.group_combine(att, feats)?;
    Ok((out, att))
}

/// Refines the rows listed in `targets` of a stack of sequences.
///
/// `z` holds `B·T` rows, sequence after sequence; window indices never cross
/// sequence boundaries. Output row `i` is the refined feature of
/// `targets[i]`.
pub fn refine_rows_on(
    g: &mut Graph,
    z: Var,
    seq_len: usize,
    targets: &[usize],
    w: &HafiVars,
    k: usize,
) -> Result<(Var, HafiTrace)> {
    let rows = g.value(z).rows();
    if seq_len == 0 || rows % seq_len != 0 {
        return Err(Error::contract(
            "hafi_refine",
            format!("{rows} rows do not split into sequences of {seq_len}"),
        ));
    }
    if g.value(w.mlp[2].0).cols() != k {
        return Err(Error::contract("hafi_refine", "attention width differs from frames_per_group"));
    }
    let mut index = Vec::with_capacity(targets.len() * k * k);
    for &row in targets {
        if row >= rows {
            return Err(Error::contract("hafi_refine", format!("frame {row} of {rows}")));
        }
        let base = row - row % seq_len;
        index.extend(window_indices(row % seq_len, seq_len, k).into_iter().map(|i| base + i));
    }
    let window = g.gather_rows(z, &index)?;
    let (groups, bottom) = attend_groups(g, window, k, w)?;
    let (refined, top) = attend_groups(g, groups, k, w)?;
    Ok((refined, HafiTrace { bottom, top }))
}

pub fn refine_all_on(g: &mut Graph, z: Var, seq_len: usize, w: &HafiVars, k: usize) -> Result<(Var, HafiTrace)> {
    let rows = g.value(z).rows();
    let targets: Vec<usize> = (0..rows).collect();
    refine_rows_on(g, z, seq_len, &targets, w, k)
}

/// Attention-weighted sum of one group of `k` features (`k×C`).
pub fn group_attend(group: &Tensor, w: &HafiWeights) -> Result<(Tensor, Vec<f64>)> {
    let k = w.frames_per_group();
    if group.rank() != 2 || group.rows() != k || group.cols() != w.channels() {
        return Err(Error::contract(
            "group_attend",
            format!("expected {k}×{} features, got {:?}", w.channels(), group.dims()),
        ));
    }
    let mut g = Graph::new();
    let feats = g.constant(group.clone());
    let wv = w.bind(&mut g);
    let (out, att) = attend_groups(&mut g, feats, k, &wv)?;
    let flat = g.value(out).reshape(&[w.channels()])?;
    Ok((flat, g.value(att).data().to_vec()))
}

fn check_input(z: &Tensor, w: &HafiWeights, cfg: &HafiConfig) -> Result<()> {
    cfg.validate()?;
    if z.rank() != 2 || z.cols() != w.channels() {
        return Err(Error::contract(
            "hafi_refine",
            format!("sequence dims {:?} vs {} channels", z.dims(), w.channels()),
        ));
    }
    if w.frames_per_group() != cfg.frames_per_group {
        return Err(Error::contract("hafi_refine", "weights built for a different group size"));
    }
    Ok(())
}

/// Refined feature of frame `t` of a single `T×C` sequence.
pub fn hafi_refine(z: &Tensor, t: usize, w: &HafiWeights, cfg: &HafiConfig) -> Result<Tensor> {
    check_input(z, w, cfg)?;
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let wv = w.bind(&mut g);
    let (out, _) = refine_rows_on(&mut g, zv, z.rows(), &[t], &wv, cfg.frames_per_group)?;
    g.value(out).reshape(&[z.cols()])
}

pub fn hafi_refine_all(z: &Tensor, w: &HafiWeights, cfg: &HafiConfig) -> Result<Tensor> {
    check_input(z, w, cfg)?;
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let wv = w.bind(&mut g);
    let (out, _) = refine_all_on(&mut g, zv, z.rows(), &wv, cfg.frames_per_group)?;
    Ok(g.value(out).clone())
}
