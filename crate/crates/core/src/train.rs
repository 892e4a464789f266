//! Adam, the plateau learning-rate rule and the adversarial training loop.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{model_from_store, model_tensors, save_tensors, NamedTensors, TensorStore};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{discriminate_on, discriminator_loss_on, generator_loss_on, supervised_on, FrameVars, LossWeights};
use crate::metrics::EvalReport;
use crate::model::{pose_rows_on, Model, ModelConfig};
use crate::params::ParamSet;
use crate::synth::Record;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimState {
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.dims())).collect();
        OptimState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.dims() != g.dims() || p.dims() != m.dims() {
            return Err(Error::contract(
                "adam_step",
                format!("param {:?} vs grad {:?}", p.dims(), g.dims()),
            ));
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let (pd, gd) = (p.data_mut(), g.data());
        for i in 0..pd.len() {
            let mi = &mut m.data_mut()[i];
            *mi = b1 * *mi + (1.0 - b1) * gd[i];
            let vi = &mut v.data_mut()[i];
            *vi = b2 * *vi + (1.0 - b2) * gd[i] * gd[i];
            let mhat = m.data()[i] / c1;
            let vhat = v.data()[i] / c2;
            pd[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Reduce-on-plateau rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau {
            patience: 5,
            factor: 10.0,
        }
    }
}

/// Returns the new stagnation counter and learning rate. Lower metrics are
/// better; `best` is the best value before `current`.
pub fn lr_schedule_step(best: f64, current: f64, counter: usize, lr: f64, rule: &Plateau) -> (usize, f64) {
    if current < best {
        return (0, lr);
    }
    let counter = counter + 1;
    if counter >= rule.patience {
        (0, lr / rule.factor)
    } else {
        (counter, lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub disc_lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub plateau: Plateau,
    pub loss: LossWeights,
    /// Seeds weight init, shuffling and real-motion sampling.
    pub seed: u64,
    /// Global gradient norm cap for the generator; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Sequences per chunk during validation.
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            disc_lr: 1e-4,
            batch: 8,
            epochs: 5,
            plateau: Plateau::default(),
            loss: LossWeights::default(),
            seed: 0,
            clip_norm: None,
            eval_chunk: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let rates_ok = [self.lr, self.disc_lr].iter().all(|r| r.is_finite() && *r > 0.0);
        if !rates_ok || self.batch == 0 || self.epochs == 0 || self.plateau.patience == 0 || self.eval_chunk == 0 {
            return Err(Error::contract("train config", "rates, batch, epochs and patience must be positive"));
        }
        if !(self.plateau.factor > 1.0) {
            return Err(Error::contract("train config", "lr decay factor must exceed 1"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::contract("train config", "clip norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: EvalReport,
}

impl EpochLog {
    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.lr, self.train_loss, self.val.mpjpe, self.val.pa_mpjpe, self.val.mpvpe, self.val.acc_err
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Validation metrics of the untrained model.
    pub initial: EvalReport,
    /// Mean training loss over the training set, before any update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn csv(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            let _ = writeln!(s, "{}", e.csv());
        }
        s
    }
}

/// Everything the loop mutates, saved in each checkpoint.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub gen_opt: OptimState,
    pub disc_opt: OptimState,
    pub rng: ChaCha8Rng,
    pub best: f64,
    pub stagnant: usize,
    pub epoch: usize,
}

fn check_records(cfg: &ModelConfig, records: &[Record], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Format(format!("{what} set is empty")));
    }
    for r in records {
        if r.seq_len() != cfg.seq_len || r.channels() != cfg.channels || r.num_joints() != cfg.joints || r.num_vertices() != cfg.vertices
        {
            return Err(Error::Format(format!(
                "{what} record (T={}, C={}, J={}, V={}) does not match model (T={}, C={}, J={}, V={})",
                r.seq_len(),
                r.channels(),
                r.num_joints(),
                r.num_vertices(),
                cfg.seq_len,
                cfg.channels,
                cfg.joints,
                cfg.vertices
            )));
        }
    }
    Ok(())
}

fn stack(rows: Vec<&Tensor>, width: usize) -> Tensor {
    let n: usize = rows.iter().map(|t| t.len()).sum();
    let mut data = Vec::with_capacity(n);
    for t in rows {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![n / width, width], data).expect("stacked rows")
}

fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
}

impl Trainer {
    pub fn new(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::init(model_cfg, &mut rng)?;
        let gen_opt = OptimState::new(cfg.lr, model.generator_named().into_iter().map(|(_, t)| t));
        let disc_opt = OptimState::new(cfg.disc_lr, model.disc.named().into_iter().map(|(_, t)| t));
        Ok(Trainer {
            model,
            gen_opt,
            disc_opt,
            rng,
            best: f64::INFINITY,
            stagnant: 0,
            epoch: 0,
        })
    }

    /// Builds the generator objective for a batch; returns the graph, the
    /// total loss, the predicted parameters and the generator leaves.
    fn generator_graph(&self, batch: &[&Record], lw: &LossWeights) -> Result<(Graph, Var, Var, Vec<Var>)> {
        let m = &self.model;
        let mut g = Graph::new();
        let vars = m.bind_generator(&mut g);
        let feats: Vec<Var> = batch.iter().map(|r| g.constant(r.features.clone())).collect();
        let out = m.forward_batch_on(&mut g, &vars, &feats, false)?;
        let nj = m.cfg.joints;
        let theta_gt = g.constant(stack(batch.iter().map(|r| &r.gt_params).collect(), crate::body::THETA_DIM));
        let joints_gt = stack(batch.iter().map(|r| &r.joints3d).collect(), 3 * nj);
        let j2_gt = project_rows(&joints_gt, &g.value(theta_gt).clone(), nj);
        let gt = FrameVars {
            theta: theta_gt,
            joints3d: g.constant(joints_gt),
            joints2d: g.constant(j2_gt),
        };
        let pred = FrameVars {
            theta: out.theta,
            joints3d: out.body.joints,
            joints2d: out.body.joints2d,
        };
        let sup = supervised_on(&mut g, &pred, &gt, lw)?;
        let mut total = sup.total;
        if lw.w_adv > 0.0 {
            let dv = m.disc.bind(&mut g, false);
            let fake = pose_rows_on(&mut g, out.theta, batch.len())?;
            let score = discriminate_on(&mut g, fake, &dv)?;
            let adv = generator_loss_on(&mut g, score);
            let adv = g.scale(adv, lw.w_adv);
            total = g.add(total, adv)?;
        }
        Ok((g, total, out.theta, vars.vars()))
    }

    /// Generator loss of a batch without updating anything.
    pub fn batch_loss(&self, batch: &[&Record], lw: &LossWeights) -> Result<f64> {
        let (g, total, _, _) = self.generator_graph(batch, lw)?;
        Ok(g.value(total).data()[0])
    }

    /// Mean generator loss over the training set in batch-sized chunks,
    /// without updating anything.
    pub fn dataset_loss(&self, train: &[Record], cfg: &TrainConfig) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for chunk in train.chunks(cfg.batch.max(1)) {
            let batch: Vec<&Record> = chunk.iter().collect();
            sum += self.batch_loss(&batch, &cfg.loss)?;
            n += 1;
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    /// One generator update followed, when the adversarial term is on, by
    /// one discriminator update. Returns the generator loss before the update.
    pub fn step(&mut self, batch: &[&Record], motion: &[Tensor], cfg: &TrainConfig) -> Result<f64> {
        let (g, total, theta, leaves) = self.generator_graph(batch, &cfg.loss)?;
        let loss = g.value(total).data()[0];
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("generator loss {loss} at epoch {}", self.epoch + 1)));
        }
        let mut grads = g.backward(total)?;
        let mut gs: Vec<Tensor> = leaves.iter().map(|&v| grads.take(v)).collect();
        if let Some(cap) = cfg.clip_norm {
            let norm = global_norm(&gs);
            if norm > cap {
                for t in &mut gs {
                    *t = t.map(|x| x * cap / norm);
                }
            }
        }
        let fake_theta = (cfg.loss.w_adv > 0.0).then(|| g.value(theta).clone());
        drop(g);
        adam_step(&mut self.model.generator_tensors_mut(), &gs, &mut self.gen_opt)?;
        if let Some(fake) = fake_theta {
            self.disc_step(fake, motion, batch.len())?;
        }
        Ok(loss)
    }

    fn disc_step(&mut self, fake_theta: Tensor, motion: &[Tensor], batch: usize) -> Result<()> {
        if motion.is_empty() {
            return Err(Error::contract("train", "adversarial loss enabled without real motion"));
        }
        let real: Vec<&Tensor> = (0..batch).map(|_| &motion[self.rng.gen_range(0..motion.len())]).collect();
        let width = self.model.disc.input_width();
        let real = stack(real, width);
        let mut g = Graph::new();
        let dv = self.model.disc.bind(&mut g, true);
        let fake = g.constant(fake_theta);
        let fake = pose_rows_on(&mut g, fake, batch)?;
        let r = g.constant(real);
        let dr = discriminate_on(&mut g, r, &dv)?;
        let df = discriminate_on(&mut g, fake, &dv)?;
        let loss = discriminator_loss_on(&mut g, dr, df)?;
        if !g.value(loss).is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss at epoch {}", self.epoch + 1)));
        }
        let mut grads = g.backward(loss)?;
        let gs: Vec<Tensor> = dv.vars().iter().map(|&v| grads.take(v)).collect();
        adam_step(&mut self.model.disc.tensors_mut(), &gs, &mut self.disc_opt)
    }

    /// Runs one epoch and returns the mean generator loss.
    pub fn run_epoch(&mut self, train: &[Record], motion: &[Tensor], cfg: &TrainConfig) -> Result<f64> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = 0.0;
        let mut n = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Record> = chunk.iter().map(|&i| &train[i]).collect();
            sum += self.step(&batch, motion, cfg)?;
            n += 1;
        }
        self.epoch += 1;
        Ok(sum / n as f64)
    }

    /// Applies the plateau rule to both learning rates.
    pub fn observe(&mut self, val_metric: f64, rule: &Plateau) {
        let (counter, lr) = lr_schedule_step(self.best, val_metric, self.stagnant, self.gen_opt.lr, rule);
        if lr != self.gen_opt.lr {
            self.disc_opt.lr /= rule.factor;
        }
        self.gen_opt.lr = lr;
        self.stagnant = counter;
        self.best = self.best.min(val_metric);
    }

    pub fn tensors(&self) -> NamedTensors {
        let mut out = model_tensors(&self.model);
        let names: Vec<String> = self.model.generator_named().into_iter().map(|(n, _)| n).collect();
        push_optim(&mut out, "optim.gen", &names, &self.gen_opt);
        let names: Vec<String> = self.model.disc.named().into_iter().map(|(n, _)| n).collect();
        push_optim(&mut out, "optim.disc", &names, &self.disc_opt);
        out.push((
            "train.state".to_string(),
            Tensor::vector(vec![self.epoch as f64, self.stagnant as f64, self.best.min(f32::MAX as f64)]),
        ));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(path, &self.tensors())
    }

    /// Restores model and optimizer state from checkpoint tensors. The
    /// shuffling stream restarts from `seed`.
    pub fn from_tensors(items: NamedTensors, seed: u64) -> Result<Self> {
        let mut store = TensorStore::new(items);
        let model = model_from_store(&mut store)?;
        let names: Vec<String> = model.generator_named().into_iter().map(|(n, _)| n).collect();
        let gen_opt = take_optim(&mut store, "optim.gen", &names, model.generator_named().into_iter().map(|(_, t)| t))?;
        let names: Vec<String> = model.disc.named().into_iter().map(|(n, _)| n).collect();
        let disc_opt = take_optim(&mut store, "optim.disc", &names, model.disc.named().into_iter().map(|(_, t)| t))?;
        let st = store.take("train.state")?;
        if st.len() != 3 {
            return Err(Error::Corrupt("train.state must hold 3 values".into()));
        }
        Ok(Trainer {
            model,
            gen_opt,
            disc_opt,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: st.data()[0] as usize,
            stagnant: st.data()[1] as usize,
            best: st.data()[2],
        })
    }
}

/// Weak-perspective projections of flattened joint rows with each row's camera.
fn project_rows(joints: &Tensor, theta: &Tensor, nj: usize) -> Tensor {
    let n = joints.rows();
    let mut data = Vec::with_capacity(n * 2 * nj);
    for r in 0..n {
        let cam = &theta.row(r)[crate::body::POSE_DIM + crate::body::SHAPE_DIM..];
        let jr = joints.row(r);
        for j in 0..nj {
            data.push(cam[0] * jr[3 * j] + cam[1]);
            data.push(cam[0] * jr[3 * j + 1] + cam[2]);
        }
    }
    Tensor::new(vec![n, 2 * nj], data).expect("projection rows")
}

fn push_optim(out: &mut NamedTensors, prefix: &str, names: &[String], st: &OptimState) {
    for (n, m) in names.iter().zip(&st.m) {
        out.push((format!("{prefix}.m.{n}"), m.clone()));
    }
    for (n, v) in names.iter().zip(&st.v) {
        out.push((format!("{prefix}.v.{n}"), v.clone()));
    }
    out.push((format!("{prefix}.hyper"), Tensor::vector(vec![st.lr, st.step as f64])));
}

fn take_optim<'a>(
    store: &mut TensorStore,
    prefix: &str,
    names: &[String],
    params: impl IntoIterator<Item = &'a Tensor>,
) -> Result<OptimState> {
    let mut st = OptimState::new(0.0, params);
    store.fill(&format!("{prefix}.m"), names.to_vec(), st.m.iter_mut().collect())?;
    store.fill(&format!("{prefix}.v"), names.to_vec(), st.v.iter_mut().collect())?;
    let h = store.take(&format!("{prefix}.hyper"))?;
    if h.len() != 2 {
        return Err(Error::Corrupt(format!("{prefix}.hyper must hold 2 values")));
    }
    st.lr = h.data()[0];
    st.step = h.data()[1] as u64;
    Ok(st)
}

/// Seeded training run. Writes `ckpt_epoch_NNN.mpsn` after every epoch,
/// `final.mpsn` at the end and `report.csv` with one line per epoch.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[Record],
    val_set: &[Record],
    motion: &[Tensor],
    out_dir: Option<&Path>,
) -> Result<(Trainer, TrainReport)> {
    check_records(model_cfg, train_set, "training")?;
    check_records(model_cfg, val_set, "validation")?;
    let mut trainer = Trainer::new(model_cfg, cfg)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let initial = trainer.model.evaluate(val_set, cfg.eval_chunk)?;
    let initial_loss = trainer.dataset_loss(train_set, cfg)?;
    let mut report = TrainReport {
        initial,
        initial_loss,
        epochs: Vec::new(),
        checkpoints: Vec::new(),
    };
    for _ in 0..cfg.epochs {
        let lr = trainer.gen_opt.lr;
        let train_loss = trainer.run_epoch(train_set, motion, cfg)?;
        if !trainer.model.generator_named().iter().all(|(_, t)| t.is_finite()) {
            return Err(Error::NonFinite(format!("generator weights after epoch {}", trainer.epoch)));
        }
        let val = trainer.model.evaluate(val_set, cfg.eval_chunk)?;
        if !val.mpjpe.is_finite() {
            return Err(Error::NonFinite(format!("validation MPJPE after epoch {}", trainer.epoch)));
        }
        trainer.observe(val.mpjpe, &cfg.plateau);
        let log = EpochLog {
            epoch: trainer.epoch,
            lr,
            train_loss,
            val,
        };
        if let Some(dir) = out_dir {
            let path = dir.join(format!("ckpt_epoch_{:03}.mpsn", trainer.epoch));
            trainer.save(&path)?;
            report.checkpoints.push(path);
            fs::write(dir.join("report.csv"), {
                let mut s = report.csv();
                s.push_str(&log.csv());
                s.push('\n');
                s
            })?;
        }
        report.epochs.push(log);
    }
    if let Some(dir) = out_dir {
        trainer.save(&dir.join("final.mpsn"))?;
    }
    Ok((trainer, report))
}
