//! Pose evaluation metrics. Inputs are `T×J×3` (or `T×V×3`) tensors in
//! millimeters; joint 0 is the pelvis.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `x ↦ s·R·x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Sum of squared distances between transformed `src` and `dst`.
    pub fn residual(&self, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
        src.iter().zip(dst).map(|(p, g)| (self.apply(p) - g).norm_squared()).sum()
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares similarity transform taking `src` onto `dst`.
///
/// Centers both sets, takes the SVD of the cross-covariance and flips the
/// weakest singular direction if needed so the rotation is proper.
pub fn procrustes_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(Error::contract(
            "procrustes_align",
            format!("{} source vs {} target points", src.len(), dst.len()),
        ));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {}", src.len())));
    }
    let mu_s = centroid(src);
    let mu_d = centroid(dst);
    let var_s: f64 = src.iter().map(|p| (p - mu_s).norm_squared()).sum();
    if !(var_s > 1e-20 * src.len() as f64) {
        return Err(Error::Degenerate("source points are coincident".into()));
    }
    let mut cov = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        cov += (q - mu_d) * (p - mu_s).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // Singular values come back sorted in decreasing order.
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let signs = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * signs * v_t;
    let trace = svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2];
    let scale = trace / var_s;
    let translation = mu_d - scale * (rotation * mu_s);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Splits a `T×K×3` tensor (or `T×3K`) into per-frame point lists.
pub fn frames_of(t: &Tensor) -> Result<Vec<Vec<Vector3<f64>>>> {
    let dims = t.dims();
    let (frames, width) = match dims {
        [f, k, 3] => (*f, *k * 3),
        [f, w] if w % 3 == 0 => (*f, *w),
        _ => return Err(Error::contract("metric", format!("expected T×K×3 points, got {dims:?}"))),
    };
    Ok((0..frames)
        .map(|f| {
            t.data()[f * width..(f + 1) * width]
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect()
        })
        .collect())
}

fn paired(pred: &Tensor, gt: &Tensor, op: &'static str) -> Result<(Vec<Vec<Vector3<f64>>>, Vec<Vec<Vector3<f64>>>)> {
    if pred.dims() != gt.dims() {
        return Err(Error::contract(op, format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    Ok((frames_of(pred)?, frames_of(gt)?))
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

/// Sum over frames of the per-frame mean joint error after moving the
/// predicted pelvis onto the true pelvis.
pub(crate) fn mpjpe_sum(pred: &Tensor, gt: &Tensor) -> Result<(f64, usize)> {
    let (p, g) = paired(pred, gt, "mpjpe")?;
    let total = p
        .iter()
        .zip(&g)
        .map(|(pf, gf)| {
            let shift = gf[0] - pf[0];
            let moved: Vec<_> = pf.iter().map(|x| x + shift).collect();
            mean_distance(&moved, gf)
        })
        .sum();
    Ok((total, p.len()))
}

pub(crate) fn pa_mpjpe_sum(pred: &Tensor, gt: &Tensor) -> Result<(f64, usize)> {
    let (p, g) = paired(pred, gt, "pa_mpjpe")?;
    let mut total = 0.0;
    for (pf, gf) in p.iter().zip(&g) {
        let tf = procrustes_align(pf, gf)?;
        let aligned: Vec<_> = pf.iter().map(|x| tf.apply(x)).collect();
        total += mean_distance(&aligned, gf);
    }
    Ok((total, p.len()))
}

pub(crate) fn mpvpe_sum(pred: &Tensor, gt: &Tensor) -> Result<(f64, usize)> {
    let (p, g) = paired(pred, gt, "mpvpe")?;
    let total = p.iter().zip(&g).map(|(pf, gf)| mean_distance(pf, gf)).sum();
    Ok((total, p.len()))
}

pub(crate) fn acc_err_sum(pred: &Tensor, gt: &Tensor) -> Result<(f64, usize)> {
    let (p, g) = paired(pred, gt, "acc_err")?;
    if p.len() < 3 {
        return Err(Error::contract("acc_err", format!("need at least 3 frames, got {}", p.len())));
    }
    let accel = |s: &[Vec<Vector3<f64>>], t: usize, j: usize| s[t + 1][j] - 2.0 * s[t][j] + s[t - 1][j];
    let mut total = 0.0;
    for t in 1..p.len() - 1 {
        let frame: f64 = (0..p[t].len())
            .map(|j| (accel(&p, t, j) - accel(&g, t, j)).norm())
            .sum();
        total += frame / p[t].len() as f64;
    }
    Ok((total, p.len() - 2))
}

fn mean_of((total, n): (f64, usize)) -> f64 {
    total / n as f64
}

/// Mean per-joint position error after pelvis alignment.
pub fn mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    mpjpe_sum(pred, gt).map(mean_of)
}

/// Mean per-joint error after per-frame Procrustes alignment.
pub fn pa_mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    pa_mpjpe_sum(pred, gt).map(mean_of)
}

/// Mean per-vertex error, no alignment.
pub fn mpvpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    mpvpe_sum(pred, gt).map(mean_of)
}

/// Mean norm of the difference between second temporal differences, in
/// mm per frame².
pub fn acc_err(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    acc_err_sum(pred, gt).map(mean_of)
}

/// Frame-weighted accumulation of the four metrics over many sequences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    sums: [f64; 4],
    counts: [usize; 4],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpvpe: f64,
    pub acc_err: f64,
    /// Frames behind the first three metrics.
    pub frames: usize,
    /// Inner frames behind ACC-ERR.
    pub accel_frames: usize,
}

impl MetricAccumulator {
    pub fn add_sequence(&mut self, pred_j: &Tensor, gt_j: &Tensor, pred_v: &Tensor, gt_v: &Tensor) -> Result<()> {
        let parts = [
            mpjpe_sum(pred_j, gt_j)?,
            pa_mpjpe_sum(pred_j, gt_j)?,
            mpvpe_sum(pred_v, gt_v)?,
            acc_err_sum(pred_j, gt_j)?,
        ];
        for (i, (s, n)) in parts.into_iter().enumerate() {
            self.sums[i] += s;
            self.counts[i] += n;
        }
        Ok(())
    }

    pub fn report(&self) -> EvalReport {
        let avg = |i: usize| if self.counts[i] == 0 { f64::NAN } else { self.sums[i] / self.counts[i] as f64 };
        EvalReport {
            mpjpe: avg(0),
            pa_mpjpe: avg(1),
            mpvpe: avg(2),
            acc_err: avg(3),
            frames: self.counts[0],
            accel_frames: self.counts[3],
        }
    }
}

impl EvalReport {
    /// `NAME,value,count` lines in a fixed order.
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("MPJPE,{:.6},{}", self.mpjpe, self.frames),
            format!("PA-MPJPE,{:.6},{}", self.pa_mpjpe, self.frames),
            format!("MPVPE,{:.6},{}", self.mpvpe, self.frames),
            format!("ACC-ERR,{:.6},{}", self.acc_err, self.accel_frames),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: &[Vec<[f64; 3]>]) -> Tensor {
        let k = frames[0].len();
        let data = frames.iter().flatten().flatten().copied().collect();
        Tensor::new(vec![frames.len(), k, 3], data).unwrap()
    }

    #[test]
    fn mpjpe_hand_case() {
        let gt = seq(&[vec![[0.0; 3], [10.0, 0.0, 0.0]]]);
        let pred = seq(&[vec![[0.0; 3], [13.0, 4.0, 0.0]]]);
        assert!((mpjpe(&pred, &gt).unwrap() - 2.5).abs() < 1e-12);
        let moved = seq(&[vec![[5.0, -2.0, 1.0], [18.0, 2.0, 1.0]]]);
        assert!((mpjpe(&moved, &gt).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn mpvpe_cases() {
        let gt = seq(&[vec![[0.0; 3], [1.0, 2.0, 3.0], [4.0, 4.0, 4.0], [-1.0, 0.0, 2.0]]]);
        let up = Tensor::new(gt.dims().to_vec(), gt.data().iter().enumerate().map(|(i, x)| if i % 3 == 2 { x + 2.0 } else { *x }).collect()).unwrap();
        assert!((mpvpe(&up, &gt).unwrap() - 2.0).abs() < 1e-12);
        let mut half = gt.clone();
        half.data_mut()[0] += 1.0;
        half.data_mut()[4] -= 1.0;
        assert!((mpvpe(&half, &gt).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn acc_err_quadratic_offset() {
        let c = -0.75;
        let u = Vector3::new(2.0, -1.0, 2.0) / 3.0;
        let base: Vec<Vec<[f64; 3]>> = (0..6)
            .map(|t| vec![[t as f64, 1.0, 0.5 * t as f64], [0.0, (t * t) as f64, 3.0]])
            .collect();
        let offset: Vec<Vec<[f64; 3]>> = base
            .iter()
            .enumerate()
            .map(|(t, f)| {
                f.iter()
                    .map(|p| {
                        let d = c * (t * t) as f64 * u;
                        [p[0] + d.x, p[1] + d.y, p[2] + d.z]
                    })
                    .collect()
            })
            .collect();
        let v = acc_err(&seq(&offset), &seq(&base)).unwrap();
        assert!((v - 2.0 * c.abs()).abs() < 1e-10);
        assert!(matches!(acc_err(&seq(&base[..2]), &seq(&base[..2])), Err(Error::Contract { .. })));
    }

    #[test]
    fn procrustes_identity_and_errors() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
        ];
        let tf = procrustes_align(&pts, &pts).unwrap();
        assert!((tf.scale - 1.0).abs() < 1e-12);
        assert!((tf.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(tf.translation.norm() < 1e-12);
        assert!(matches!(procrustes_align(&pts[..2], &pts[..2]), Err(Error::Degenerate(_))));
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert!(matches!(procrustes_align(&same, &pts), Err(Error::Degenerate(_))));
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::zeros(&[3, 2, 3]);
        let b = Tensor::zeros(&[3, 3, 3]);
        assert!(mpjpe(&a, &b).is_err());
        assert!(mpvpe(&a, &b).is_err());
    }
}
