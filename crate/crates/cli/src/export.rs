//! Attention map export as CSV and binary PGM.

use std::fs;
use std::path::{Path, PathBuf};

use motion_attn::tensor::Tensor;
use motion_attn::Result;

/// One row per map row, values in shortest round-trip decimal form.
pub fn map_csv(map: &Tensor) -> String {
    let mut s = String::new();
    for r in 0..map.rows() {
        let row: Vec<String> = map.row(r).iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Min-max scaled 8-bit `P5` image; a constant map becomes all zeros.
pub fn map_pgm(map: &Tensor) -> Vec<u8> {
    let (h, w) = (map.rows(), map.cols());
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

/// Writes `<name>.csv` and `<name>.pgm` for each map and returns the paths.
pub fn write_maps(dir: &Path, maps: &[(&str, &Tensor)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, map) in maps {
        let csv = dir.join(format!("{name}.csv"));
        fs::write(&csv, map_csv(map))?;
        let pgm = dir.join(format!("{name}.pgm"));
        fs::write(&pgm, map_pgm(map))?;
        written.extend([csv, pgm]);
    }
    Ok(written)
}
