//! Central-difference checks of every learnable path at small shapes.

use motion_attn::body::{body_on, regress_on, RegressorVars, RegressorWeights, ToyBodyModel};
use motion_attn::gradcheck::{grad_check, GradReport};
use motion_attn::graph::{Graph, Var};
use motion_attn::hafi::{refine_all_on, HafiConfig, HafiVars, HafiWeights};
use motion_attn::losses::{
    discriminate_on, discriminator_loss_on, generator_loss_on, supervised_on, DiscVars, DiscriminatorWeights,
    FrameTargets, FrameVars, LossWeights,
};
use motion_attn::model::{Model, ModelConfig};
use motion_attn::moca::{forward_on, MocaConfig, MocaMode, MocaVars, MocaWeights};
use motion_attn::params::ParamSet;
use motion_attn::tensor::Tensor;
use motion_attn::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct CheckLine {
    pub name: String,
    pub seed: u64,
    pub worst: f64,
    pub pass: bool,
}

impl CheckLine {
    fn new(name: String, seed: u64, r: &GradReport) -> Self {
        CheckLine {
            name,
            seed,
            worst: r.worst(),
            pass: r.pass,
        }
    }

    pub fn render(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        format!("{},seed={},max_rel_err={:.3e},{verdict}", self.name, self.seed, self.worst)
    }
}

fn target_mse(g: &mut Graph, out: Var, target: &Tensor) -> Result<Var> {
    let t = g.constant(target.clone());
    g.mse(out, t)
}

fn moca_vars(v: &[Var], biases: Option<&[Var]>) -> MocaVars {
    MocaVars {
        w_theta: v[0],
        w_phi: v[1],
        w_g: v[2],
        w_z: v[3],
        b_z: v[4],
        rho_w: v[5],
        rho_b: v[6],
        b_theta: biases.map(|b| b[0]),
        b_phi: biases.map(|b| b[1]),
        b_g: biases.map(|b| b[2]),
    }
}

fn hafi_vars(v: &[Var]) -> HafiVars {
    HafiVars {
        resize_w: v[0],
        resize_b: v[1],
        mlp: [(v[2], v[3]), (v[4], v[5]), (v[6], v[7])],
    }
}

fn check_moca(mode: MocaMode, proj_bias: bool, seed: u64, h: f64, tol: f64) -> Result<GradReport> {
    let cfg = MocaConfig {
        proj_bias,
        ..MocaConfig::new(6, 2, mode)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = MocaWeights::init(&cfg, &mut rng)?;
    // Nonzero output weights so the attention path carries gradient.
    w.w_z = Tensor::uniform(w.w_z.dims(), 0.5, &mut rng);
    w.rho_w = Tensor::uniform(&[2], 1.0, &mut rng);
    w.rho_b = Tensor::uniform(&[1], 1.0, &mut rng);
    let mut params: Vec<Tensor> = w.named().into_iter().map(|(_, t)| t.map(|x| x + 0.05)).collect();
    params.push(Tensor::uniform(&[5, 6], 1.0, &mut rng));
    let target = Tensor::uniform(&[5, 6], 1.0, &mut rng);
    let x_at = params.len() - 1;
    grad_check(
        |g, v| {
            let vars = moca_vars(v, proj_bias.then(|| &v[7..10]));
            let (z, _) = forward_on(g, v[x_at], &vars, &cfg)?;
            target_mse(g, z, &target)
        },
        &params,
        h,
        tol,
    )
}

fn check_hafi(k: usize, seed: u64, h: f64, tol: f64) -> Result<GradReport> {
    let cfg = HafiConfig {
        hidden: [5, 4],
        ..HafiConfig::new(k, 3)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = HafiWeights::init(4, &cfg, &mut rng)?;
    let mut params: Vec<Tensor> = w.named().into_iter().map(|(_, t)| t.map(|x| 2.0 * x)).collect();
    params[1] = Tensor::uniform(params[1].dims(), 0.3, &mut rng);
    params.push(Tensor::uniform(&[7, 4], 1.0, &mut rng));
    let target = Tensor::uniform(&[7, 4], 1.0, &mut rng);
    grad_check(
        |g, v| {
            let (out, _) = refine_all_on(g, v[8], 7, &hafi_vars(v), k)?;
            target_mse(g, out, &target)
        },
        &params,
        h,
        tol,
    )
}

fn check_regressor(n_iter: usize, seed: u64, h: f64, tol: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = RegressorWeights::init(4, 8, &mut rng);
    let mut params: Vec<Tensor> = w.named().into_iter().map(|(_, t)| t.clone()).collect();
    params[4] = Tensor::uniform(params[4].dims(), 0.3, &mut rng);
    params[6] = Tensor::uniform(&[85], 0.5, &mut rng);
    params.push(Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let target = Tensor::uniform(&[3, 85], 1.0, &mut rng);
    grad_check(
        |g, v| {
            let rv = RegressorVars {
                layers: [(v[0], v[1]), (v[2], v[3]), (v[4], v[5])],
                mean_theta: v[6],
            };
            let theta = regress_on(g, v[7], &rv, n_iter)?;
            target_mse(g, theta, &target)
        },
        &params,
        h,
        tol,
    )
}

fn check_supervised(seed: u64, h: f64, tol: f64) -> Result<GradReport> {
    let m = ToyBodyModel::generate(4, 6, 5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = Tensor::uniform(&[3, 85], 0.5, &mut rng);
    let gt = FrameTargets {
        theta: Tensor::uniform(&[3, 85], 0.5, &mut rng),
        joints3d: Tensor::uniform(&[3, 12], 50.0, &mut rng),
        joints2d: Tensor::uniform(&[3, 8], 1.0, &mut rng),
    };
    let lw = LossWeights {
        w_params: 1.0,
        w_3d: 1e-3,
        w_2d: 2.0,
        w_adv: 0.0,
    };
    grad_check(
        |g, v| {
            let bv = m.bind(g);
            let out = body_on(g, v[0], &bv, false)?;
            let pred = FrameVars {
                theta: v[0],
                joints3d: out.joints,
                joints2d: out.joints2d,
            };
            let t = gt.bind_constant(g);
            Ok(supervised_on(g, &pred, &t, &lw)?.total)
        },
        &[theta],
        h,
        tol,
    )
}

fn check_adversarial(generator_side: bool, seed: u64, h: f64, tol: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = DiscriminatorWeights::init(2, [6, 4], &mut rng);
    let mut params: Vec<Tensor> = d.named().into_iter().map(|(_, t)| t.clone()).collect();
    params.push(Tensor::uniform(&[3, 144], 0.3, &mut rng));
    params.push(Tensor::uniform(&[3, 144], 0.3, &mut rng));
    grad_check(
        |g, v| {
            let w = DiscVars {
                layers: [(v[0], v[1]), (v[2], v[3]), (v[4], v[5])],
            };
            let df = discriminate_on(g, v[7], &w)?;
            if generator_side {
                Ok(generator_loss_on(g, df))
            } else {
                let dr = discriminate_on(g, v[6], &w)?;
                discriminator_loss_on(g, dr, df)
            }
        },
        &params,
        h,
        tol,
    )
}

fn check_pipeline(mode: MocaMode, k: usize, seed: u64, h: f64, tol: f64) -> Result<GradReport> {
    let cfg = ModelConfig {
        channels: 4,
        seq_len: 5,
        mode,
        hafi: Some(HafiConfig {
            hidden: [4, 3],
            ..HafiConfig::new(k, 3)
        }),
        regressor_hidden: 6,
        disc_hidden: [4, 3],
        joints: 3,
        vertices: 4,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(&cfg, &mut rng)?;
    for t in model.generator_tensors_mut() {
        *t = Tensor::uniform(t.dims(), 0.4, &mut rng);
    }
    let params: Vec<Tensor> = model.generator_named().into_iter().map(|(_, t)| t.clone()).collect();
    let feats = [Tensor::uniform(&[5, 4], 1.0, &mut rng), Tensor::uniform(&[5, 4], 1.0, &mut rng)];
    let target = Tensor::uniform(&[10, 9], 0.3, &mut rng);
    grad_check(
        |g, v| {
            let mut gv = model.bind_generator(g);
            gv.moca = moca_vars(&v[..7], None);
            gv.hafi = Some(hafi_vars(&v[7..15]));
            gv.regressor = RegressorVars {
                layers: [(v[15], v[16]), (v[17], v[18]), (v[19], v[20])],
                mean_theta: v[21],
            };
            let xs: Vec<Var> = feats.iter().map(|f| g.constant(f.clone())).collect();
            let out = model.forward_batch_on(g, &gv, &xs, false)?;
            let scaled = g.scale(out.body.joints, 1e-2);
            target_mse(g, scaled, &target)
        },
        &params,
        h,
        tol,
    )
}

/// Runs every check for each seed. `mode` and `k` select the pipeline
/// configuration; MoCA and HAFI are additionally checked in all modes and
/// group sizes.
pub fn run_suite(seeds: &[u64], mode: MocaMode, k: usize, n_iter: usize, h: f64, tol: f64) -> Result<Vec<CheckLine>> {
    let mut lines = Vec::new();
    for &seed in seeds {
        for m in [MocaMode::Moca, MocaMode::NonlocalOnly, MocaMode::NssmOnly] {
            for bias in [false, true] {
                let r = check_moca(m, bias, seed, h, tol)?;
                lines.push(CheckLine::new(format!("moca[{m},bias={bias}]"), seed, &r));
            }
        }
        for kk in 2..=4 {
            lines.push(CheckLine::new(format!("hafi[k={kk}]"), seed, &check_hafi(kk, seed, h, tol)?));
        }
        lines.push(CheckLine::new(format!("regressor[n_iter={n_iter}]"), seed, &check_regressor(n_iter, seed, h, tol)?));
        lines.push(CheckLine::new("supervised_loss".into(), seed, &check_supervised(seed, h, tol)?));
        lines.push(CheckLine::new("discriminator_loss".into(), seed, &check_adversarial(false, seed, h, tol)?));
        lines.push(CheckLine::new("generator_adv_loss".into(), seed, &check_adversarial(true, seed, h, tol)?));
        lines.push(CheckLine::new(format!("pipeline[{mode},k={k}]"), seed, &check_pipeline(mode, k, seed, h, tol)?));
    }
    Ok(lines)
}
