//! Supervised L2 objectives and the least-squares adversarial motion loss.
//!
//! Every MSE term averages over all of its elements (frames × joints ×
//! coordinates).

use rand::Rng;

use crate::body::POSE_DIM;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_params: f64,
    pub w_3d: f64,
    pub w_2d: f64,
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_params: 1.0,
            w_3d: 1.0,
            w_2d: 1.0,
            w_adv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_params, self.w_3d, self.w_2d, self.w_adv];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::contract("loss weights", format!("must be finite and nonnegative: {all:?}")));
        }
        Ok(())
    }
}

/// Per-frame predictions or targets, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTargets {
    /// `N×85`.
    pub theta: Tensor,
    /// `N×3J`.
    pub joints3d: Tensor,
    /// `N×2J`.
    pub joints2d: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct FrameVars {
    pub theta: Var,
    pub joints3d: Var,
    pub joints2d: Var,
}

impl FrameTargets {
    pub fn bind_constant(&self, g: &mut Graph) -> FrameVars {
        FrameVars {
            theta: g.constant(self.theta.clone()),
            joints3d: g.constant(self.joints3d.clone()),
            joints2d: g.constant(self.joints2d.clone()),
        }
    }
}

/// Graph handles for the weighted total and each enabled term.
#[derive(Clone, Copy, Debug)]
pub struct SupervisedVars {
    pub total: Var,
    pub params: Option<Var>,
    pub joints3d: Option<Var>,
    pub joints2d: Option<Var>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub params: f64,
    pub joints3d: f64,
    pub joints2d: f64,
}

/// `w_params·MSE(Θ) + w_3d·MSE(joints3d) + w_2d·MSE(joints2d)`. Terms with
/// zero weight are left off the graph.
pub fn supervised_on(g: &mut Graph, pred: &FrameVars, gt: &FrameVars, lw: &LossWeights) -> Result<SupervisedVars> {
    lw.validate()?;
    let term = |g: &mut Graph, w: f64, a: Var, b: Var| -> Result<Option<(Var, Var)>> {
        if w == 0.0 {
            return Ok(None);
        }
        let mse = g.mse(a, b)?;
        Ok(Some((mse, g.scale(mse, w))))
    };
    let params = term(g, lw.w_params, pred.theta, gt.theta)?;
    let j3 = term(g, lw.w_3d, pred.joints3d, gt.joints3d)?;
    let j2 = term(g, lw.w_2d, pred.joints2d, gt.joints2d)?;
    let mut total: Option<Var> = None;
    for (_, weighted) in [params, j3, j2].into_iter().flatten() {
        total = Some(match total {
            Some(t) => g.add(t, weighted)?,
            None => weighted,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0)),
    };
    Ok(SupervisedVars {
        total,
        params: params.map(|p| p.0),
        joints3d: j3.map(|p| p.0),
        joints2d: j2.map(|p| p.0),
    })
}

pub fn loss_supervised(pred: &FrameTargets, gt: &FrameTargets, lw: &LossWeights) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let p = pred.bind_constant(&mut g);
    let t = gt.bind_constant(&mut g);
    let v = supervised_on(&mut g, &p, &t, lw)?;
    let read = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0]);
    Ok(LossBreakdown {
        total: g.value(v.total).data()[0],
        params: read(v.params),
        joints3d: read(v.joints3d),
        joints2d: read(v.joints2d),
    })
}

/// Motion discriminator: flattened `T×72` pose sequence → hidden → hidden →
/// scalar score, with tanh activations.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorWeights {
    pub layers: [(Tensor, Tensor); 3],
}

impl DiscriminatorWeights {
    pub fn init<R: Rng + ?Sized>(seq_len: usize, hidden: [usize; 2], rng: &mut R) -> Self {
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (Tensor::uniform(&[fan_in, fan_out], bound, rng), Tensor::zeros(&[fan_out]))
        };
        DiscriminatorWeights {
            layers: [
                layer(seq_len * POSE_DIM, hidden[0]),
                layer(hidden[0], hidden[1]),
                layer(hidden[1], 1),
            ],
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].0.rows()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> DiscVars {
        let mut leaf = |t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        DiscVars {
            layers: self.layers.each_ref().map(|(w, b)| (leaf(w), leaf(b))),
        }
    }
}

impl ParamSet for DiscriminatorWeights {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push((format!("fc{i}_w"), w));
            out.push((format!("fc{i}_b"), b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.layers.iter_mut() {
            out.push(w);
            out.push(b);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct DiscVars {
    pub layers: [(Var, Var); 3],
}

impl DiscVars {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Scores `B` flattened pose sequences (`B×(T·72)`), returning `B×1`.
pub fn discriminate_on(g: &mut Graph, poses: Var, w: &DiscVars) -> Result<Var> {
    let h = g.linear(poses, w.layers[0].0, Some(w.layers[0].1))?;
    let h = g.tanh(h);
    let h = g.linear(h, w.layers[1].0, Some(w.layers[1].1))?;
    let h = g.tanh(h);
    g.linear(h, w.layers[2].0, Some(w.layers[2].1))
}

/// `E[(D(fake) − 1)²]`.
pub fn generator_loss_on(g: &mut Graph, d_fake: Var) -> Var {
    let shifted = g.offset(d_fake, -1.0);
    let sq = g.square(shifted);
    g.mean(sq)
}

/// `E[(D(real) − 1)²] + E[D(fake)²]`.
pub fn discriminator_loss_on(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = generator_loss_on(g, d_real);
    let sq = g.square(d_fake);
    let fake = g.mean(sq);
    g.add(real, fake)
}

/// Stacks `T×72` pose sequences into `B×(T·72)` rows.
pub fn stack_pose_sequences(seqs: &[Tensor], width: usize) -> Result<Tensor> {
    if seqs.is_empty() {
        return Err(Error::contract("adversarial_losses", "empty batch"));
    }
    let mut data = Vec::with_capacity(seqs.len() * width);
    for s in seqs {
        if s.len() != width {
            return Err(Error::contract(
                "adversarial_losses",
                format!("pose sequence of {} values, discriminator takes {width}", s.len()),
            ));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(vec![seqs.len(), width], data)
}

/// `(generator loss, discriminator loss)` on batches of `T×72` pose sequences.
pub fn adversarial_losses(disc: &DiscriminatorWeights, real: &[Tensor], fake: &[Tensor]) -> Result<(f64, f64)> {
    let width = disc.input_width();
    let real = stack_pose_sequences(real, width)?;
    let fake = stack_pose_sequences(fake, width)?;
    let mut g = Graph::new();
    let w = disc.bind(&mut g, false);
    let r = g.constant(real);
    let f = g.constant(fake);
    let dr = discriminate_on(&mut g, r, &w)?;
    let df = discriminate_on(&mut g, f, &w)?;
    let gen = generator_loss_on(&mut g, df);
    let dis = discriminator_loss_on(&mut g, dr, df)?;
    Ok((g.value(gen).data()[0], g.value(dis).data()[0]))
}
