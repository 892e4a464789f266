//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Run alone with `cargo test -p motion-attn-cli --test acceptance`; pass a
//! criterion number (e.g. `-- 8`) to run a single one.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{brute_nonlocal, brute_pa_frame, perm_rows, points};
use motion_attn::checkpoint::{load_model, save_model};
use motion_attn::graph::Graph;
use motion_attn::hafi::{hafi_refine_all, refine_all_on, window_indices, HafiConfig, HafiWeights};
use motion_attn::metrics::{acc_err, mpjpe, pa_mpjpe};
use motion_attn::model::{Model, ModelConfig};
use motion_attn::moca::{all_maps, moca_forward, MocaConfig, MocaMode, MocaWeights};
use motion_attn::params::ParamSet;
use motion_attn::synth::{make_dataset, Split, SynthConfig, Synthesizer};
use motion_attn::tensor::Tensor;
use motion_attn::train::{train, TrainConfig};
use motion_attn_cli::config::RunConfig;
use motion_attn_cli::gradsuite::run_suite;
use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

// Tolerances and bounds, as stated by the criteria.
const IDENTITY_TOL: f64 = 1e-12;
const STOCHASTIC_TOL: f64 = 1e-12;
const MAP_SEEDS: u64 = 50;
const BRUTE_TOL: f64 = 1e-10;
const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-5;
const GRAD_SEEDS: [u64; 5] = [11, 22, 33, 44, 55];
const HAFI_TOL: f64 = 1e-12;
const PA_INVARIANCE_TOL: f64 = 1e-8;
const ACC_TOL: f64 = 1e-10;
const PA_ORACLE_TOL: f64 = 1e-3;
const PA_ORACLE_CASES: u64 = 20;
const PUBLISHED_TOTAL: f64 = 39.63e6;
const COUNT_REL_TOL: f64 = 0.10;
const TRAIN_SEQS: usize = 500;
const VAL_SEQS: usize = 100;
const TRAIN_SEEDS: [u64; 3] = [0, 1, 2];
const MPJPE_DROP: f64 = 0.30;
const SEEDS_NEEDED: usize = 2;
const CSV_ROW_TOL: f64 = 1e-9;

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    /// Whole-criterion runtime bound, if any.
    limit: Option<Duration>,
    check: Check,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn c1_identity_at_init() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        for mode in [MocaMode::Moca, MocaMode::NonlocalOnly, MocaMode::NssmOnly] {
            for t in [1, 8, 16] {
                let mut r = rng(seed);
                let cfg = MocaConfig::new(16, 2, mode);
                let w = MocaWeights::init(&cfg, &mut r).map_err(|e| e.to_string())?;
                ensure(w.w_z.max_abs() == 0.0, || "W_z is not zero at init".into())?;
                let x = Tensor::uniform(&[t, 16], 3.0, &mut r);
                let z = moca_forward(&x, &w, &cfg).map_err(|e| e.to_string())?;
                worst = worst.max(z.max_abs_diff(&x));
            }
        }
    }
    ensure(worst < IDENTITY_TOL, || format!("max deviation {worst:e}"))?;
    Ok(format!("max |Z-X| = {worst:.1e} over 180 cases"))
}

fn c2_map_invariants() -> Result<String, String> {
    let (mut row_err, mut perm_err): (f64, f64) = (0.0, 0.0);
    for seed in 0..MAP_SEEDS {
        let mut r = rng(1000 + seed);
        let cfg = MocaConfig::new(16, 2, MocaMode::Moca);
        let mut w = MocaWeights::init(&cfg, &mut r).map_err(|e| e.to_string())?;
        w.rho_w = Tensor::uniform(&[2], 2.0, &mut r);
        w.rho_b = Tensor::uniform(&[1], 1.0, &mut r);
        let x = Tensor::uniform(&[8, 16], 1.0, &mut r);
        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut r);
        let (n, a, m) = all_maps(&x, &w).map_err(|e| e.to_string())?;
        let (pn, pa, pm) = all_maps(&perm_rows(&x, &perm), &w).map_err(|e| e.to_string())?;
        for (map, pmap) in [(&n, &pn), (&a, &pa), (&m, &pm)] {
            ensure(map.values().data().iter().all(|&v| v >= 0.0), || "negative map entry".into())?;
            row_err = row_err.max(map.row_sum_error()).max(pmap.row_sum_error());
            for i in 0..8 {
                for j in 0..8 {
                    perm_err = perm_err.max((pmap.values().get(i, j) - map.values().get(perm[i], perm[j])).abs());
                }
            }
        }
    }
    ensure(row_err < STOCHASTIC_TOL, || format!("row sum error {row_err:e}"))?;
    ensure(perm_err < STOCHASTIC_TOL, || format!("equivariance error {perm_err:e}"))?;
    Ok(format!("{MAP_SEEDS} inputs x 3 maps; row err {row_err:.1e}, perm err {perm_err:.1e}"))
}

fn c3_brute_force_attention() -> Result<String, String> {
    let cfg = MocaConfig::new(16, 2, MocaMode::NonlocalOnly);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut r = rng(seed);
        let mut w = MocaWeights::init(&cfg, &mut r).map_err(|e| e.to_string())?;
        w.w_z = Tensor::uniform(w.w_z.dims(), 0.5, &mut r);
        w.b_z = Tensor::uniform(w.b_z.dims(), 0.5, &mut r);
        let x = Tensor::uniform(&[8, 16], 1.0, &mut r);
        let fast = moca_forward(&x, &w, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max(fast.max_abs_diff(&brute_nonlocal(&x, &w)));
    }
    ensure(worst < BRUTE_TOL, || format!("max deviation {worst:e}"))?;
    Ok(format!("10 seeded 8x16 inputs; max deviation {worst:.1e}"))
}

fn c4_gradient_checks() -> Result<String, String> {
    let lines = run_suite(&GRAD_SEEDS, MocaMode::Moca, 3, 3, GRAD_H, GRAD_TOL).map_err(|e| e.to_string())?;
    let worst = lines.iter().fold(0.0f64, |m, l| m.max(l.worst));
    let failed: Vec<String> = lines.iter().filter(|l| !l.pass).map(|l| l.render()).collect();
    ensure(failed.is_empty(), || failed.join("; "))?;
    Ok(format!("{} checks on {} seeds; worst rel err {worst:.1e}", lines.len(), GRAD_SEEDS.len()))
}

fn c5_hafi_algebra() -> Result<String, String> {
    let expect_clamp = [
        (3, 0, vec![0, 0, 0, 0, 0, 1, 2, 3, 4]),
        (3, 15, vec![11, 12, 13, 14, 15, 15, 15, 15, 15]),
        (2, 0, vec![0, 0, 1, 2]),
        (2, 15, vec![14, 15, 15, 15]),
        (4, 0, vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8]),
    ];
    for (k, t, want) in &expect_clamp {
        let got = window_indices(*t, 16, *k);
        ensure(&got == want, || format!("k={k} t={t}: window {got:?}"))?;
    }
    let (mut mean_err, mut sum_err): (f64, f64) = (0.0, 0.0);
    for k in 2..=4 {
        let cfg = HafiConfig {
            hidden: [8, 6],
            ..HafiConfig::new(k, 4)
        };
        let mut r = rng(50 + k as u64);
        let z = Tensor::uniform(&[16, 5], 1.0, &mut r);

        let mut uniform = HafiWeights::init(5, &cfg, &mut r).map_err(|e| e.to_string())?;
        for (w, b) in uniform.mlp.iter_mut() {
            *w = Tensor::zeros(w.dims());
            *b = Tensor::zeros(b.dims());
        }
        let out = hafi_refine_all(&z, &uniform, &cfg).map_err(|e| e.to_string())?;
        for t in 0..16 {
            let idx = window_indices(t, 16, k);
            for c in 0..5 {
                let mean = idx.iter().map(|&i| z.get(i, c)).sum::<f64>() / idx.len() as f64;
                mean_err = mean_err.max((out.get(t, c) - mean).abs());
            }
        }

        let trained = HafiWeights::init(5, &cfg, &mut r).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let wv = trained.bind(&mut g);
        let (_, trace) = refine_all_on(&mut g, zv, 16, &wv, k).map_err(|e| e.to_string())?;
        for att in [trace.bottom, trace.top] {
            let a = g.value(att);
            for i in 0..a.rows() {
                sum_err = sum_err.max((a.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }

        let single = Tensor::uniform(&[1, 5], 1.0, &mut r);
        let same = hafi_refine_all(&single, &trained, &cfg).map_err(|e| e.to_string())?;
        ensure(same.max_abs_diff(&single) < HAFI_TOL, || format!("k={k}: T=1 output differs from input"))?;
    }
    ensure(mean_err < HAFI_TOL, || format!("uniform refinement vs window mean {mean_err:e}"))?;
    ensure(sum_err < HAFI_TOL, || format!("attention sum error {sum_err:e}"))?;
    Ok(format!("k=2,3,4; window-mean err {mean_err:.1e}, attention sum err {sum_err:.1e}, clamped windows as specified"))
}

fn c6_metrics() -> Result<String, String> {
    let (mut pa_inv, mut tr_inv, mut acc, mut oracle): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..20 {
        let mut r = rng(200 + seed);
        let gt = Tensor::uniform(&[4, 8, 3], 100.0, &mut r);
        let pred = gt.zip_map(&Tensor::uniform(&[4, 8, 3], 15.0, &mut r), |a, b| a + b).map_err(|e| e.to_string())?;
        let shift = Vector3::new(r.gen_range(-500.0..500.0), r.gen_range(-500.0..500.0), r.gen_range(-500.0..500.0));
        let translated =
            Tensor::new(pred.dims().to_vec(), pred.data().iter().enumerate().map(|(i, x)| x + shift[i % 3]).collect())
                .map_err(|e| e.to_string())?;
        tr_inv = tr_inv.max((mpjpe(&translated, &gt).unwrap() - mpjpe(&pred, &gt).unwrap()).abs());

        let mut moved = Vec::new();
        for f in 0..4 {
            let rot = Rotation3::from_scaled_axis(Vector3::new(r.gen(), r.gen(), r.gen()) * 3.0);
            let s = r.gen_range(0.2..5.0);
            let t = Vector3::new(r.gen(), r.gen(), r.gen()) * 300.0;
            for p in &points(&pred)[f * 8..(f + 1) * 8] {
                let q = s * (rot * p) + t;
                moved.extend([q.x, q.y, q.z]);
            }
        }
        let moved = Tensor::new(pred.dims().to_vec(), moved).map_err(|e| e.to_string())?;
        pa_inv = pa_inv.max((pa_mpjpe(&moved, &gt).unwrap() - pa_mpjpe(&pred, &gt).unwrap()).abs());
    }
    ensure(pa_inv < PA_INVARIANCE_TOL, || format!("PA-MPJPE similarity invariance {pa_inv:e}"))?;
    ensure(tr_inv < PA_INVARIANCE_TOL, || format!("MPJPE translation invariance {tr_inv:e}"))?;

    let gt = Tensor::uniform(&[10, 5, 3], 50.0, &mut rng(9));
    for c in [0.3, -1.7, 4.0] {
        let u = Vector3::new(1.0, 2.0, -2.0) / 3.0;
        let mut pred = gt.clone();
        for t in 0..10 {
            for j in 0..5 {
                for k in 0..3 {
                    pred.data_mut()[(t * 5 + j) * 3 + k] += c * (t * t) as f64 * u[k];
                }
            }
        }
        acc = acc.max((acc_err(&pred, &gt).unwrap() - 2.0 * f64::abs(c)).abs());
    }
    ensure(acc < ACC_TOL, || format!("ACC-ERR closed form error {acc:e}"))?;

    for seed in 0..PA_ORACLE_CASES {
        let mut r = rng(100 + seed);
        let gt = Tensor::uniform(&[1, 8, 3], 100.0, &mut r);
        let noise = Tensor::uniform(&[1, 8, 3], 20.0, &mut r);
        let rot = Rotation3::from_scaled_axis(Vector3::new(r.gen(), r.gen(), r.gen()) * 2.0);
        let pts: Vec<Vector3<f64>> =
            points(&gt).iter().zip(points(&noise)).map(|(p, n)| 1.3 * (rot * (p + n)) + Vector3::new(5.0, -7.0, 3.0)).collect();
        let pred = Tensor::new(vec![1, 8, 3], pts.iter().flat_map(|p| [p.x, p.y, p.z]).collect()).map_err(|e| e.to_string())?;
        oracle = oracle.max((pa_mpjpe(&pred, &gt).unwrap() - brute_pa_frame(&pts, &points(&gt))).abs());
    }
    ensure(oracle < PA_ORACLE_TOL, || format!("PA-MPJPE vs brute-force alignment {oracle:e}"))?;
    Ok(format!(
        "PA inv {pa_inv:.1e}, translation inv {tr_inv:.1e}, ACC-ERR closed form {acc:.1e}, PA oracle {oracle:.1e} on {PA_ORACLE_CASES} cases"
    ))
}

fn c7_parameter_count() -> Result<String, String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = motion_attn_cli::run(["motion-attn", "count-params", "--full-scale"], &mut out, &mut err);
    ensure(code == 0, || format!("exit {code}: {}", String::from_utf8_lossy(&err)))?;
    let text = String::from_utf8_lossy(&out).into_owned();
    let total: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("total,"))
        .ok_or("no total line")?
        .parse()
        .map_err(|e| format!("total: {e}"))?;
    let assumptions = text.lines().filter(|l| l.starts_with("# ")).count();
    ensure(assumptions >= 4, || format!("only {assumptions} assumption lines"))?;
    let rel = (total - PUBLISHED_TOTAL).abs() / PUBLISHED_TOTAL;
    ensure(rel < COUNT_REL_TOL, || format!("total {total} is {:.1}% off", rel * 100.0))?;
    Ok(format!("total {total} vs 39.63M ({:.2}% off), {assumptions} assumptions printed", rel * 100.0))
}

fn c8_desk_training() -> Result<String, String> {
    let cfg = RunConfig::default();
    let synth = Synthesizer::new(&cfg.synth_config()).map_err(|e| e.to_string())?;
    let data_seed = cfg.data.seed;
    let train_set = synth.records(Split::Train, data_seed, TRAIN_SEQS).map_err(|e| e.to_string())?;
    let val_set = synth.records(Split::Val, data_seed, VAL_SEQS).map_err(|e| e.to_string())?;
    let motion: Vec<Tensor> = synth
        .records(Split::Motion, data_seed, cfg.data.n_motion)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|r| r.pose_sequence())
        .collect();
    let full = cfg.model_config().map_err(|e| e.to_string())?;
    ensure(full.mode == MocaMode::Moca && full.hafi.is_some(), || "default model is not MOCA+HAFI".into())?;
    ensure(full.seq_len == 16 && full.channels == 64, || "default model is not T=16, C=64".into())?;
    let baseline = ModelConfig {
        mode: MocaMode::NonlocalOnly,
        ..full.clone()
    };
    let limit = Duration::from_secs(600);
    let mut details = Vec::new();
    let mut good = 0;
    for seed in TRAIN_SEEDS {
        let tc = TrainConfig {
            seed,
            ..cfg.train_config()
        };
        let run = |model: &ModelConfig| -> Result<(f64, f64, f64, Duration), String> {
            let start = Instant::now();
            let (_, report) = train(model, &tc, &train_set, &val_set, &motion, None).map_err(|e| e.to_string())?;
            let elapsed = start.elapsed();
            let last = &report.epochs.last().ok_or("no epochs")?.val;
            Ok((report.initial.mpjpe, last.mpjpe, last.acc_err, elapsed))
        };
        let (init, mpjpe_full, acc_full, t_full) = run(&full)?;
        let (_, _, acc_base, t_base) = run(&baseline)?;
        ensure(t_full < limit && t_base < limit, || format!("seed {seed}: run took {t_full:?} / {t_base:?}"))?;
        let drop = 1.0 - mpjpe_full / init;
        let a = drop >= MPJPE_DROP;
        let b = acc_full <= acc_base;
        if a && b {
            good += 1;
        }
        details.push(format!(
            "seed {seed}: MPJPE {init:.2}->{mpjpe_full:.2} (-{:.1}%, {}), ACC-ERR {acc_full:.5} vs NONLOCAL_ONLY {acc_base:.5} ({}), {:.0}s+{:.0}s",
            drop * 100.0,
            if a { "a ok" } else { "a FAIL" },
            if b { "b ok" } else { "b FAIL" },
            t_full.as_secs_f64(),
            t_base.as_secs_f64()
        ));
    }
    let summary = format!("{good}/3 seeds satisfy (a) and (b) [{}]", details.join("; "));
    ensure(good >= SEEDS_NEEDED, || summary.clone())?;
    Ok(summary)
}

fn small_configs() -> (ModelConfig, SynthConfig) {
    let synth = SynthConfig {
        seq_len: 8,
        channels: 16,
        vertices: 20,
        ..SynthConfig::default()
    };
    let model = ModelConfig {
        channels: 16,
        seq_len: 8,
        hafi: Some(HafiConfig {
            hidden: [16, 8],
            ..HafiConfig::new(3, 8)
        }),
        regressor_hidden: 64,
        disc_hidden: [32, 16],
        vertices: 20,
        ..ModelConfig::default()
    };
    (model, synth)
}

fn digest(p: &Path) -> Result<Vec<u8>, String> {
    Ok(Sha256::digest(std::fs::read(p).map_err(|e| e.to_string())?).to_vec())
}

fn c9_determinism() -> Result<String, String> {
    let (mc, sc) = small_configs();
    let s = Synthesizer::new(&sc).map_err(|e| e.to_string())?;
    let tr = s.records(Split::Train, 4, 24).map_err(|e| e.to_string())?;
    let va = s.records(Split::Val, 4, 8).map_err(|e| e.to_string())?;
    let mo: Vec<Tensor> = s.records(Split::Motion, 4, 16).map_err(|e| e.to_string())?.iter().map(|r| r.pose_sequence()).collect();
    let tc = TrainConfig {
        lr: 1e-3,
        disc_lr: 1e-3,
        epochs: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let mut trained = Vec::new();
    for d in &dirs {
        trained.push(train(&mc, &tc, &tr, &va, &mo, Some(d.path())).map_err(|e| e.to_string())?.0);
    }
    let files = ["ckpt_epoch_001.mpsn", "ckpt_epoch_002.mpsn", "final.mpsn", "report.csv"];
    for f in files {
        ensure(digest(&dirs[0].path().join(f))? == digest(&dirs[1].path().join(f))?, || format!("{f} differs between runs"))?;
    }

    let loaded = load_model(&dirs[0].path().join("final.mpsn")).map_err(|e| e.to_string())?;
    for ((name, a), (_, b)) in trained[0].model.generator_named().iter().zip(loaded.generator_named()) {
        ensure(a.map(|x| x as f32 as f64).data() == b.data(), || format!("{name} not exact at f32"))?;
    }
    for ((name, a), (_, b)) in trained[0].model.disc.named().iter().zip(loaded.disc.named()) {
        ensure(a.map(|x| x as f32 as f64).data() == b.data(), || format!("{name} not exact at f32"))?;
    }
    let resaved = dirs[0].path().join("resaved.mpsn");
    save_model(&resaved, &loaded).map_err(|e| e.to_string())?;
    let reloaded = load_model(&resaved).map_err(|e| e.to_string())?;
    ensure(reloaded.generator_named() == loaded.generator_named(), || "second roundtrip changed weights".into())?;

    let a = dirs[0].path().join("a.msyn");
    let b = dirs[1].path().join("b.msyn");
    make_dataset(&SynthConfig::default(), 50, 17, Split::Train, &a).map_err(|e| e.to_string())?;
    make_dataset(&SynthConfig::default(), 50, 17, Split::Train, &b).map_err(|e| e.to_string())?;
    ensure(digest(&a)? == digest(&b)?, || "dataset files differ".into())?;
    Ok("checkpoints and report hash-identical across 2 runs; f32 roundtrip exact; dataset bytes stable".into())
}

fn c10_export_contract() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    std::fs::write(
        dir.path().join("c.toml"),
        "[model]\nchannels = 16\nseq_len = 8\nvertices = 20\n[model.hafi]\nresize_dim = 8\nhidden = [16, 8]\n[model.regressor]\nhidden = 32\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg = RunConfig::load(&dir.path().join("c.toml")).map_err(|e| e.to_string())?;
    let mut model = Model::init(&cfg.model_config().map_err(|e| e.to_string())?, &mut rng(3)).map_err(|e| e.to_string())?;
    model.moca.rho_w = Tensor::vector(vec![0.7, 1.3]);
    save_model(&dir.path().join("m.mpsn"), &model).map_err(|e| e.to_string())?;

    let (mut out, mut err) = (Vec::new(), Vec::new());
    let gen = ["motion-attn", "gen-data", "--config", &p("c.toml"), "--out", &p("d.msyn"), "--split", "val", "--n", "3"];
    ensure(motion_attn_cli::run(gen, &mut out, &mut err) == 0, || String::from_utf8_lossy(&err).into_owned())?;
    let export = ["motion-attn", "export-maps", "--checkpoint", &p("m.mpsn"), "--data", &p("d.msyn"), "--index", "1", "--out", &p("maps")];
    ensure(motion_attn_cli::run(export, &mut out, &mut err) == 0, || String::from_utf8_lossy(&err).into_owned())?;

    let t = 8;
    let mut worst: f64 = 0.0;
    for name in ["nssm", "attention", "moca"] {
        let csv = std::fs::read_to_string(dir.path().join("maps").join(format!("{name}.csv"))).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .map(|l| l.split(',').map(|v| v.parse::<f64>().map_err(|e| e.to_string())).collect())
            .collect::<Result<_, _>>()?;
        ensure(rows.len() == t && rows.iter().all(|r| r.len() == t), || format!("{name}.csv is not {t}x{t}"))?;
        for r in &rows {
            ensure(r.iter().all(|&v| v >= 0.0), || format!("{name}.csv has a negative entry"))?;
            worst = worst.max((r.iter().sum::<f64>() - 1.0).abs());
        }
        let pgm = std::fs::read(dir.path().join("maps").join(format!("{name}.pgm"))).map_err(|e| e.to_string())?;
        let text = String::from_utf8_lossy(&pgm);
        let header: Vec<&str> = text.split_ascii_whitespace().take(4).collect();
        ensure(header == ["P5", "8", "8", "255"], || format!("{name}.pgm header {header:?}"))?;
        ensure(pgm.len() == "P5\n8 8\n255\n".len() + t * t, || format!("{name}.pgm payload size"))?;
    }
    ensure(worst < CSV_ROW_TOL, || format!("row sum error {worst:e}"))?;
    Ok(format!("3 maps re-parse as 8x8 row-stochastic (err {worst:.1e}); P5 headers 8x8"))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "identity at init", limit: Some(Duration::from_secs(1)), check: c1_identity_at_init },
        Criterion { id: 2, name: "map invariants", limit: Some(Duration::from_secs(10)), check: c2_map_invariants },
        Criterion { id: 3, name: "brute-force attention oracle", limit: Some(Duration::from_secs(5)), check: c3_brute_force_attention },
        Criterion { id: 4, name: "gradient checks", limit: Some(Duration::from_secs(120)), check: c4_gradient_checks },
        Criterion { id: 5, name: "HAFI algebra", limit: None, check: c5_hafi_algebra },
        Criterion { id: 6, name: "metric correctness", limit: None, check: c6_metrics },
        Criterion { id: 7, name: "parameter accounting", limit: Some(Duration::from_secs(1)), check: c7_parameter_count },
        // The bound applies per training run and is enforced inside the check.
        Criterion { id: 8, name: "desk-scale training", limit: None, check: c8_desk_training },
        Criterion { id: 9, name: "determinism and persistence", limit: None, check: c9_determinism },
        Criterion { id: 10, name: "export contract", limit: None, check: c10_export_contract },
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (r, _) => r,
        };
        let (verdict, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {verdict} {} ({:.2?}): {detail}", c.id, c.name, elapsed);
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
