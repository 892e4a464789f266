//! The full per-sequence pipeline: temporal attention, optional hierarchical
//! refinement, iterative regression and the toy body model.

use rand::Rng;

use crate::body::{body_on, regress_on, BodyOutput, BodyVars, RegressorVars, RegressorWeights, ToyBodyModel, POSE_DIM};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::hafi::{refine_all_on, HafiConfig, HafiTrace, HafiVars, HafiWeights};
use crate::losses::DiscriminatorWeights;
use crate::metrics::{EvalReport, MetricAccumulator};
use crate::moca::{all_maps, forward_on, AttentionMap, MocaConfig, MocaMode, MocaTrace, MocaVars, MocaWeights};
use crate::params::ParamSet;
use crate::synth::Record;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub seq_len: usize,
    pub reduction: usize,
    pub mode: MocaMode,
    pub detach_nssm: bool,
    pub hafi: Option<HafiConfig>,
    pub n_iter: usize,
    pub regressor_hidden: usize,
    pub disc_hidden: [usize; 2],
    pub joints: usize,
    pub vertices: usize,
    pub body_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 64,
            seq_len: 16,
            reduction: 2,
            mode: MocaMode::Moca,
            detach_nssm: false,
            hafi: Some(HafiConfig::new(3, 32)),
            n_iter: 3,
            regressor_hidden: 1024,
            disc_hidden: [1024, 256],
            joints: 14,
            vertices: 50,
            body_seed: crate::body::DEFAULT_BODY_SEED,
        }
    }
}

impl ModelConfig {
    pub fn moca(&self) -> MocaConfig {
        MocaConfig {
            detach_nssm: self.detach_nssm,
            ..MocaConfig::new(self.channels, self.reduction, self.mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.moca().validate()?;
        if let Some(h) = &self.hafi {
            h.validate()?;
        }
        if self.seq_len == 0 || self.regressor_hidden == 0 || self.disc_hidden.contains(&0) {
            return Err(Error::contract("model config", "seq_len and hidden widths must be positive"));
        }
        if self.joints < 3 || self.vertices == 0 {
            return Err(Error::contract("model config", "need at least 3 joints and 1 vertex"));
        }
        Ok(())
    }
}

/// Generator weights, discriminator weights and body model constants.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub moca: MocaWeights,
    pub hafi: Option<HafiWeights>,
    pub regressor: RegressorWeights,
    pub disc: DiscriminatorWeights,
    pub body: ToyBodyModel,
}

/// Generator parameters bound to a graph.
#[derive(Clone, Debug)]
pub struct GeneratorVars {
    pub moca: MocaVars,
    pub hafi: Option<HafiVars>,
    pub regressor: RegressorVars,
    pub body: BodyVars,
}

impl GeneratorVars {
    /// Same order as [`Model::generator_tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.moca.vars();
        if let Some(h) = &self.hafi {
            out.extend(h.vars());
        }
        out.extend(self.regressor.vars());
        out
    }
}

/// Graph handles of one batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// `B·T×85`, sequence after sequence.
    pub theta: Var,
    pub body: BodyOutput,
    /// Per-sequence attention traces.
    pub maps: Vec<MocaTrace>,
    pub hafi: Option<HafiTrace>,
}

/// Predictions for one sequence in plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePrediction {
    /// `T×85`.
    pub theta: Tensor,
    /// `T×J×3`.
    pub joints3d: Tensor,
    /// `T×V×3`.
    pub vertices: Tensor,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let moca = MocaWeights::init(&cfg.moca(), rng)?;
        let hafi = match &cfg.hafi {
            Some(h) => Some(HafiWeights::init(cfg.channels, h, rng)?),
            None => None,
        };
        let regressor = RegressorWeights::init(cfg.channels, cfg.regressor_hidden, rng);
        let disc = DiscriminatorWeights::init(cfg.seq_len, cfg.disc_hidden, rng);
        let body = ToyBodyModel::generate(cfg.joints, cfg.vertices, cfg.body_seed)?;
        Ok(Model {
            cfg: cfg.clone(),
            moca,
            hafi,
            regressor,
            disc,
            body,
        })
    }

    pub fn generator_named(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("moca", self.moca.named());
        if let Some(h) = &self.hafi {
            out.extend(prefixed("hafi", h.named()));
        }
        out.extend(prefixed("regressor", self.regressor.named()));
        out
    }

    pub fn generator_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.moca.tensors_mut();
        if let Some(h) = &mut self.hafi {
            out.extend(h.tensors_mut());
        }
        out.extend(self.regressor.tensors_mut());
        out
    }

    pub fn generator_count(&self) -> usize {
        self.generator_named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind_generator(&self, g: &mut Graph) -> GeneratorVars {
        GeneratorVars {
            moca: self.moca.bind(g),
            hafi: self.hafi.as_ref().map(|h| h.bind(g)),
            regressor: self.regressor.bind(g),
            body: self.body.bind(g),
        }
    }

    fn check_features(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.cfg.channels || x.rows() == 0 {
            return Err(Error::contract(
                "model forward",
                format!("features {:?} do not match {} channels", x.dims(), self.cfg.channels),
            ));
        }
        Ok(())
    }

    /// Runs `B` equal-length sequences through the generator.
    pub fn forward_batch_on(
        &self,
        g: &mut Graph,
        vars: &GeneratorVars,
        feats: &[Var],
        with_vertices: bool,
    ) -> Result<BatchOutput> {
        let Some(&first) = feats.first() else {
            return Err(Error::contract("model forward", "empty batch"));
        };
        let seq_len = g.value(first).rows();
        let moca_cfg = self.cfg.moca();
        let mut temporal = Vec::with_capacity(feats.len());
        let mut maps = Vec::with_capacity(feats.len());
        for &x in feats {
            self.check_features(g.value(x))?;
            if g.value(x).rows() != seq_len {
                return Err(Error::contract("model forward", "sequences in a batch differ in length"));
            }
            let (z, trace) = forward_on(g, x, &vars.moca, &moca_cfg)?;
            temporal.push(z);
            maps.push(trace);
        }
        let z = if temporal.len() == 1 { temporal[0] } else { g.concat_rows(&temporal)? };
        let (refined, hafi) = match (&vars.hafi, &self.cfg.hafi) {
            (Some(hv), Some(hc)) => {
                let (r, tr) = refine_all_on(g, z, seq_len, hv, hc.frames_per_group)?;
                (r, Some(tr))
            }
            _ => (z, None),
        };
        let theta = regress_on(g, refined, &vars.regressor, self.cfg.n_iter)?;
        let body = body_on(g, theta, &vars.body, with_vertices)?;
        Ok(BatchOutput {
            theta,
            body,
            maps,
            hafi,
        })
    }

    /// Inference on plain feature sequences of equal length.
    pub fn predict(&self, feats: &[&Tensor]) -> Result<Vec<SequencePrediction>> {
        let mut g = Graph::new();
        let vars = self.bind_generator(&mut g);
        let xs: Vec<Var> = feats.iter().map(|x| g.constant((*x).clone())).collect();
        let out = self.forward_batch_on(&mut g, &vars, &xs, true)?;
        let t = feats[0].rows();
        let (nj, nv) = (self.cfg.joints, self.cfg.vertices);
        let take = |v: Var, width: usize, b: usize| -> Tensor {
            let data = g.value(v).data()[b * t * width..(b + 1) * t * width].to_vec();
            Tensor::new(vec![t, width], data).expect("batch slice")
        };
        Ok((0..feats.len())
            .map(|b| SequencePrediction {
                theta: take(out.theta, crate::body::THETA_DIM, b),
                joints3d: take(out.body.joints, 3 * nj, b).reshape(&[t, nj, 3]).expect("joints"),
                vertices: take(out.body.vertices, 3 * nv, b).reshape(&[t, nv, 3]).expect("vertices"),
            })
            .collect())
    }

    /// Validation metrics over `records`, predicted `chunk` sequences at a time.
    pub fn evaluate(&self, records: &[Record], chunk: usize) -> Result<EvalReport> {
        let mut acc = MetricAccumulator::default();
        for part in records.chunks(chunk.max(1)) {
            let feats: Vec<&Tensor> = part.iter().map(|r| &r.features).collect();
            let preds = self.predict(&feats)?;
            for (p, r) in preds.iter().zip(part) {
                acc.add_sequence(&p.joints3d, &r.joints3d, &p.vertices, &r.vertices)?;
            }
        }
        Ok(acc.report())
    }

    /// NSSM, attention map and MoCA map of one feature sequence.
    pub fn maps(&self, features: &Tensor) -> Result<(AttentionMap, AttentionMap, AttentionMap)> {
        self.check_features(features)?;
        all_maps(features, &self.moca)
    }
}

fn prefixed<'a>(p: &str, v: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    v.into_iter().map(|(n, t)| (format!("{p}.{n}"), t)).collect()
}

/// Pose columns of `B·T×85` rows regrouped into `B×(T·72)` for the
/// discriminator.
pub fn pose_rows_on(g: &mut Graph, theta: Var, batch: usize) -> Result<Var> {
    let pose = g.slice_cols(theta, 0, POSE_DIM)?;
    let n = g.value(pose).len();
    if batch == 0 || n % batch != 0 {
        return Err(Error::contract("pose_rows", format!("{n} values do not split into {batch} sequences")));
    }
    g.reshape(pose, &[batch, n / batch])
}
