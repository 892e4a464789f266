//! Closed-form parameter counts from configured shapes.

use crate::body::THETA_DIM;
use crate::model::ModelConfig;

/// ResNet-50 with its classification layer; stands in for the frame
/// feature extractor, which this crate does not implement.
pub const BACKBONE_PARAMS: usize = 25_557_032;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub backbone: usize,
    pub moca: usize,
    pub hafi: usize,
    pub regressor: usize,
    /// Training-only; not part of [`ParamCounts::total`].
    pub discriminator: usize,
}

impl ParamCounts {
    /// Inference network: backbone, attention, refinement and regressor.
    pub fn total(&self) -> usize {
        self.backbone + self.moca + self.hafi + self.regressor
    }
}

pub fn count_params(cfg: &ModelConfig) -> ParamCounts {
    let c = cfg.channels;
    let r = cfg.moca().reduced();
    let moca = 3 * c * r + r * c + c + 2 + 1;
    let hafi = cfg.hafi.as_ref().map_or(0, |h| {
        let (k, cr) = (h.frames_per_group, h.resize_dim);
        let [h1, h2] = h.hidden;
        (c * cr + cr) + (k * cr * h1 + h1) + (h1 * h2 + h2) + (h2 * k + k)
    });
    let hid = cfg.regressor_hidden;
    let regressor = ((c + THETA_DIM) * hid + hid) + (hid * hid + hid) + (hid * THETA_DIM + THETA_DIM) + THETA_DIM;
    let [d1, d2] = cfg.disc_hidden;
    let discriminator = (cfg.seq_len * 72 * d1 + d1) + (d1 * d2 + d2) + (d2 + 1);
    ParamCounts {
        backbone: BACKBONE_PARAMS,
        moca,
        hafi,
        regressor,
        discriminator,
    }
}

/// Human-readable counting conventions for `cfg`.
pub fn assumptions(cfg: &ModelConfig) -> Vec<String> {
    let mut out = vec![
        format!("backbone: fixed ResNet-50 constant {BACKBONE_PARAMS} (includes its 1000-way fc layer)"),
        format!(
            "moca: theta/phi/g projections {}x{} without bias; W_z {}x{} with bias; 1x1 recalibration 2 weights + 1 bias",
            cfg.channels,
            cfg.moca().reduced(),
            cfg.moca().reduced(),
            cfg.channels
        ),
    ];
    match &cfg.hafi {
        Some(h) => out.push(format!(
            "hafi: one shared resize {}->{} with bias; one attention MLP {}->{}->{}->{} with biases, shared by every group and both levels",
            cfg.channels,
            h.resize_dim,
            h.frames_per_group * h.resize_dim,
            h.hidden[0],
            h.hidden[1],
            h.frames_per_group
        )),
        None => out.push("hafi: disabled".to_string()),
    }
    out.push(format!(
        "regressor: {}->{}->{}->{} with biases, plus a learnable {}-value initial estimate",
        cfg.channels + THETA_DIM,
        cfg.regressor_hidden,
        cfg.regressor_hidden,
        THETA_DIM,
        THETA_DIM
    ));
    out.push("discriminator: counted separately, excluded from the total".to_string());
    out
}

/// Shapes matching the published network: 2048 channels, reduction 2,
/// k = 3 with a 256-wide resize, 1024-wide regressor.
pub fn full_scale() -> ModelConfig {
    ModelConfig {
        channels: 2048,
        seq_len: 16,
        reduction: 2,
        hafi: Some(crate::hafi::HafiConfig::new(3, 256)),
        regressor_hidden: 1024,
        ..ModelConfig::default()
    }
}
