use motion_attn::synth::{make_dataset, read_dataset, write_dataset, Split, SynthConfig, Synthesizer};
use motion_attn::tensor::Tensor;
use motion_attn::Error;
use sha2::{Digest, Sha256};

fn hash(path: &std::path::Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn dataset_files_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let a = dir.path().join("a.msyn");
    let b = dir.path().join("b.msyn");
    let sa = make_dataset(&cfg, 12, 99, Split::Train, &a).unwrap();
    make_dataset(&cfg, 12, 99, Split::Train, &b).unwrap();
    assert_eq!(sa.records, 12);
    assert_eq!(hash(&a), hash(&b));
    make_dataset(&cfg, 12, 100, Split::Train, &b).unwrap();
    assert_ne!(hash(&a), hash(&b));
}

#[test]
fn roundtrip_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let s = Synthesizer::new(&cfg).unwrap();
    let records = s.records(Split::Val, 5, 3).unwrap();
    let p = dir.path().join("d.msyn");
    write_dataset(&p, &records).unwrap();
    assert_eq!(read_dataset(&p).unwrap(), records);

    let empty = dir.path().join("e.msyn");
    let summary = make_dataset(&cfg, 0, 1, Split::Train, &empty).unwrap();
    assert_eq!(summary.records, 0);
    assert!(std::fs::read(&empty).unwrap().starts_with(b"MSYN"));
    assert!(read_dataset(&empty).unwrap().is_empty());
}

#[test]
fn unwritable_path_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("missing").join("d.msyn");
    let err = make_dataset(&SynthConfig::default(), 1, 1, Split::Train, &p).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}

#[test]
fn continuity_bound_holds() {
    for bound in [2.0, 25.0] {
        let cfg = SynthConfig {
            continuity_bound: bound,
            amplitude: 1.5,
            ..SynthConfig::default()
        };
        let s = Synthesizer::new(&cfg).unwrap();
        for seed in 0..100 {
            let seq = s.generate(seed).unwrap();
            assert!(seq.max_joint_step() <= bound, "seed {seed}: {}", seq.max_joint_step());
        }
    }
}

#[test]
fn encoder_respects_lipschitz_bound() {
    let cfg = SynthConfig::default();
    let s = Synthesizer::new(&cfg).unwrap();
    let l = s.lipschitz_bound();
    let width = cfg.joints * 3;
    for seed in 0..20 {
        let a = s.generate(seed).unwrap().joints3d.reshape(&[cfg.seq_len, width]).unwrap();
        let b = s.generate(seed + 1000).unwrap().joints3d.reshape(&[cfg.seq_len, width]).unwrap();
        let (fa, fb) = (s.encode_clean(&a).unwrap(), s.encode_clean(&b).unwrap());
        for t in 0..cfg.seq_len {
            let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let pose_d = dist(a.row(t), b.row(t));
            let feat_d = dist(fa.row(t), fb.row(t));
            assert!(feat_d <= l * pose_d + 1e-12, "{feat_d} > {l}·{pose_d}");
            // Consecutive frames of one sequence stay close too.
            if t > 0 {
                assert!(dist(fa.row(t), fa.row(t - 1)) <= l * dist(a.row(t), a.row(t - 1)) + 1e-12);
            }
        }
    }
}

#[test]
fn splits_never_share_sequences() {
    let cfg = SynthConfig {
        seq_len: 4,
        ..SynthConfig::default()
    };
    let s = Synthesizer::new(&cfg).unwrap();
    let train = s.records(Split::Train, 3, 30).unwrap();
    let val = s.records(Split::Val, 3, 30).unwrap();
    let motion = s.records(Split::Motion, 3, 30).unwrap();
    for r in &train {
        assert!(!val.contains(r) && !motion.contains(r));
    }
}

#[test]
fn features_shape_for_any_joint_count() {
    for joints in [3, 9, 24] {
        let cfg = SynthConfig {
            joints,
            ..SynthConfig::default()
        };
        let r = Synthesizer::new(&cfg).unwrap().record(0).unwrap();
        assert_eq!(r.features.dims(), &[16, 64]);
        assert_eq!(r.joints3d.dims(), &[16, joints, 3]);
        assert!(r.features.is_finite());
        let _: &Tensor = &r.vertices;
    }
}
