//! Per-frame parameter regression and the linear toy body model.
//!
//! The 85-wide parameter vector is laid out as 72 pose values, 10 shape
//! values and a weak-perspective camera `(s, tx, ty)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const POSE_DIM: usize = 72;
pub const SHAPE_DIM: usize = 10;
pub const CAM_DIM: usize = 3;
pub const THETA_DIM: usize = POSE_DIM + SHAPE_DIM + CAM_DIM;

/// Seed for the default toy body model constants.
pub const DEFAULT_BODY_SEED: u64 = 0x705E_B0D1;

#[derive(Clone, Debug, PartialEq)]
pub struct BodyParams {
    pub pose: Vec<f64>,
    pub shape: Vec<f64>,
    /// `(s, tx, ty)`.
    pub camera: [f64; 3],
}

impl BodyParams {
    pub fn zeros() -> Self {
        BodyParams {
            pose: vec![0.0; POSE_DIM],
            shape: vec![0.0; SHAPE_DIM],
            camera: [0.0; 3],
        }
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        if theta.len() != THETA_DIM {
            return Err(Error::contract(
                "body params",
                format!("expected {THETA_DIM} values, got {}", theta.len()),
            ));
        }
        Ok(BodyParams {
            pose: theta[..POSE_DIM].to_vec(),
            shape: theta[POSE_DIM..POSE_DIM + SHAPE_DIM].to_vec(),
            camera: [theta[82], theta[83], theta[84]],
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(THETA_DIM);
        v.extend_from_slice(&self.pose);
        v.extend_from_slice(&self.shape);
        v.extend_from_slice(&self.camera);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorWeights {
    /// Two hidden layers and the output layer, as `(weight, bias)`.
    pub layers: [(Tensor, Tensor); 3],
    pub mean_theta: Tensor,
}

impl RegressorWeights {
    /// Glorot-uniform hidden layers; the output layer is scaled down by 100
    /// so early iterations stay close to `mean_theta`.
    pub fn init<R: Rng + ?Sized>(channels: usize, hidden: usize, rng: &mut R) -> Self {
        let mut layer = |fan_in: usize, fan_out: usize, gain: f64| {
            let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            (Tensor::uniform(&[fan_in, fan_out], bound, rng), Tensor::zeros(&[fan_out]))
        };
        let l1 = layer(channels + THETA_DIM, hidden, 1.0);
        let l2 = layer(hidden, hidden, 1.0);
        let l3 = layer(hidden, THETA_DIM, 0.01);
        RegressorWeights {
            layers: [l1, l2, l3],
            mean_theta: Tensor::zeros(&[THETA_DIM]),
        }
    }

    pub fn channels(&self) -> usize {
        self.layers[0].0.rows() - THETA_DIM
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].0.cols()
    }

    pub fn bind(&self, g: &mut Graph) -> RegressorVars {
        RegressorVars {
            layers: self.layers.each_ref().map(|(w, b)| (g.param(w.clone()), g.param(b.clone()))),
            mean_theta: g.param(self.mean_theta.clone()),
        }
    }
}

impl ParamSet for RegressorWeights {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push((format!("fc{i}_w"), w));
            out.push((format!("fc{i}_b"), b));
        }
        out.push(("mean_theta".to_string(), &self.mean_theta));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.layers.iter_mut() {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.mean_theta);
        out
    }
}

#[derive(Clone, Debug)]
pub struct RegressorVars {
    pub layers: [(Var, Var); 3],
    pub mean_theta: Var,
}

impl RegressorVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (w, b) in self.layers {
            out.push(w);
            out.push(b);
        }
        out.push(self.mean_theta);
        out
    }
}

/// Iterative error feedback on every row of `z` (`N×C`), returning `N×85`.
pub fn regress_on(g: &mut Graph, z: Var, w: &RegressorVars, n_iter: usize) -> Result<Var> {
    let n = g.value(z).rows();
    let expected = g.value(w.layers[0].0).rows();
    if g.value(z).cols() + THETA_DIM != expected {
        return Err(Error::contract(
            "regress_iterative",
            format!("feature width {} plus {THETA_DIM} != input width {expected}", g.value(z).cols()),
        ));
    }
    let zeros = g.constant(Tensor::zeros(&[n, THETA_DIM]));
    let mut theta = g.add_bias(zeros, w.mean_theta)?;
    for _ in 0..n_iter {
        let input = g.concat_cols(&[z, theta])?;
        let h = g.linear(input, w.layers[0].0, Some(w.layers[0].1))?;
        let h = g.tanh(h);
        let h = g.linear(h, w.layers[1].0, Some(w.layers[1].1))?;
        let h = g.tanh(h);
        let delta = g.linear(h, w.layers[2].0, Some(w.layers[2].1))?;
        theta = g.add(theta, delta)?;
    }
    Ok(theta)
}

pub fn regress_iterative(z: &[f64], w: &RegressorWeights, n_iter: usize) -> Result<BodyParams> {
    let mut g = Graph::new();
    let zv = g.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
    let wv = w.bind(&mut g);
    let theta = regress_on(&mut g, zv, &wv, n_iter)?;
    BodyParams::from_slice(g.value(theta).data())
}

/// Linear stand-in for a parametric body mesh.
///
/// `joints = J0 + pose·pose_basis + shape·shape_basis`, and the same for
/// vertices with their own bases. Bases are stored with one row per input
/// parameter, so row `i` of `pose_basis` is the flattened `J×3` displacement
/// caused by a unit change of pose value `i`. Joint 0 is the pelvis and is
/// fixed at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyBodyModel {
    pub rest_joints: Tensor,
    pub rest_vertices: Tensor,
    pub pose_basis: Tensor,
    pub shape_basis: Tensor,
    pub vertex_pose_basis: Tensor,
    pub vertex_shape_basis: Tensor,
}

impl ToyBodyModel {
    /// Deterministic constants for `joints` joints and `vertices` vertices.
    ///
    /// Joints form a binary tree rooted at the pelvis with bone lengths in
    /// 100–250 mm. Pose moves non-pelvis joints by about 25 mm per unit,
    /// shape by about 10 mm per unit. Each vertex rides on joint `v mod J`
    /// with a perturbed copy of that joint's bases.
    pub fn generate(joints: usize, vertices: usize, seed: u64) -> Result<Self> {
        if joints < 3 || vertices == 0 {
            return Err(Error::contract("toy body model", "need at least 3 joints and 1 vertex"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);

        let mut rest = vec![0.0; joints * 3];
        for j in 1..joints {
            let parent = (j - 1) / 2;
            let dir: [f64; 3] = [normal(1.0), normal(1.0), normal(0.5)];
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-6);
            let len = 175.0 + normal(35.0).clamp(-75.0, 75.0);
            for a in 0..3 {
                rest[j * 3 + a] = rest[parent * 3 + a] + len * dir[a] / norm;
            }
        }
        let mut basis = |rows: usize, scale: f64| {
            let mut b = Tensor::zeros(&[rows, joints * 3]);
            for r in 0..rows {
                for c in 3..joints * 3 {
                    b.set(r, c, normal(scale));
                }
            }
            b
        };
        let pose_basis = basis(POSE_DIM, 25.0);
        let shape_basis = basis(SHAPE_DIM, 10.0);

        let mut rest_v = vec![0.0; vertices * 3];
        let mut vpose = Tensor::zeros(&[POSE_DIM, vertices * 3]);
        let mut vshape = Tensor::zeros(&[SHAPE_DIM, vertices * 3]);
        for v in 0..vertices {
            let j = v % joints;
            for a in 0..3 {
                rest_v[v * 3 + a] = rest[j * 3 + a] + normal(40.0);
                for r in 0..POSE_DIM {
                    vpose.set(r, v * 3 + a, pose_basis.get(r, j * 3 + a) + normal(5.0));
                }
                for r in 0..SHAPE_DIM {
                    vshape.set(r, v * 3 + a, shape_basis.get(r, j * 3 + a) + normal(2.0));
                }
            }
        }
        Ok(ToyBodyModel {
            rest_joints: Tensor::new(vec![1, joints * 3], rest)?,
            rest_vertices: Tensor::new(vec![1, vertices * 3], rest_v)?,
            pose_basis,
            shape_basis,
            vertex_pose_basis: vpose,
            vertex_shape_basis: vshape,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.rest_joints.len() / 3
    }

    pub fn num_vertices(&self) -> usize {
        self.rest_vertices.len() / 3
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("rest_joints".into(), &self.rest_joints),
            ("rest_vertices".into(), &self.rest_vertices),
            ("pose_basis".into(), &self.pose_basis),
            ("shape_basis".into(), &self.shape_basis),
            ("vertex_pose_basis".into(), &self.vertex_pose_basis),
            ("vertex_shape_basis".into(), &self.vertex_shape_basis),
        ]
    }

    /// Rebuilds from tensors in [`ToyBodyModel::named`] order.
    pub fn from_tensors(mut ts: Vec<Tensor>) -> Result<Self> {
        if ts.len() != 6 {
            return Err(Error::Format("toy body model needs six tensors".into()));
        }
        let vertex_shape_basis = ts.pop().unwrap();
        let vertex_pose_basis = ts.pop().unwrap();
        let shape_basis = ts.pop().unwrap();
        let pose_basis = ts.pop().unwrap();
        let rest_vertices = ts.pop().unwrap();
        let rest_joints = ts.pop().unwrap();
        let (j3, v3) = (rest_joints.len(), rest_vertices.len());
        let ok = j3 % 3 == 0
            && v3 % 3 == 0
            && pose_basis.dims() == [POSE_DIM, j3]
            && shape_basis.dims() == [SHAPE_DIM, j3]
            && vertex_pose_basis.dims() == [POSE_DIM, v3]
            && vertex_shape_basis.dims() == [SHAPE_DIM, v3];
        if !ok {
            return Err(Error::Format("inconsistent toy body model shapes".into()));
        }
        Ok(ToyBodyModel {
            rest_joints: rest_joints.reshape(&[1, j3])?,
            rest_vertices: rest_vertices.reshape(&[1, v3])?,
            pose_basis,
            shape_basis,
            vertex_pose_basis,
            vertex_shape_basis,
        })
    }

    pub fn bind(&self, g: &mut Graph) -> BodyVars {
        BodyVars {
            rest_joints: g.constant(self.rest_joints.clone().reshape(&[self.rest_joints.len()]).unwrap()),
            rest_vertices: g.constant(self.rest_vertices.reshape(&[self.rest_vertices.len()]).unwrap()),
            pose_basis: g.constant(self.pose_basis.clone()),
            shape_basis: g.constant(self.shape_basis.clone()),
            vertex_pose_basis: g.constant(self.vertex_pose_basis.clone()),
            vertex_shape_basis: g.constant(self.vertex_shape_basis.clone()),
        }
    }
}

/// Body model constants on a graph; never trained.
#[derive(Clone, Copy, Debug)]
pub struct BodyVars {
    rest_joints: Var,
    rest_vertices: Var,
    pose_basis: Var,
    shape_basis: Var,
    vertex_pose_basis: Var,
    vertex_shape_basis: Var,
}

/// Output of the body model on a batch of parameter rows.
#[derive(Clone, Copy, Debug)]
pub struct BodyOutput {
    /// `N×3J` flattened joints.
    pub joints: Var,
    /// `N×3V` flattened vertices.
    pub vertices: Var,
    /// `N×2J` weak-perspective projections.
    pub joints2d: Var,
}

/// Pose, shape and camera column blocks of an `N×85` parameter matrix.
pub fn split_theta(g: &mut Graph, theta: Var) -> Result<(Var, Var, Var)> {
    let pose = g.slice_cols(theta, 0, POSE_DIM)?;
    let shape = g.slice_cols(theta, POSE_DIM, POSE_DIM + SHAPE_DIM)?;
    let cam = g.slice_cols(theta, POSE_DIM + SHAPE_DIM, THETA_DIM)?;
    Ok((pose, shape, cam))
}

pub fn body_on(g: &mut Graph, theta: Var, m: &BodyVars, with_vertices: bool) -> Result<BodyOutput> {
    let (pose, shape, cam) = split_theta(g, theta)?;
    let deform = |g: &mut Graph, rest: Var, pb: Var, sb: Var| -> Result<Var> {
        let a = g.matmul(pose, pb)?;
        let b = g.matmul(shape, sb)?;
        let d = g.add(a, b)?;
        g.add_bias(d, rest)
    };
    let joints = deform(g, m.rest_joints, m.pose_basis, m.shape_basis)?;
    let vertices = if with_vertices {
        deform(g, m.rest_vertices, m.vertex_pose_basis, m.vertex_shape_basis)?
    } else {
        joints
    };
    let joints2d = g.weak_perspective(joints, cam)?;
    Ok(BodyOutput {
        joints,
        vertices,
        joints2d,
    })
}

/// Joints `J×3` and vertices `V×3` for one parameter set. The camera is
/// ignored.
pub fn toy_body_model(p: &BodyParams, m: &ToyBodyModel) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let theta = g.constant(Tensor::new(vec![1, THETA_DIM], p.to_vec())?);
    let mv = m.bind(&mut g);
    let out = body_on(&mut g, theta, &mv, true)?;
    let joints = g.value(out.joints).reshape(&[m.num_joints(), 3])?;
    let vertices = g.value(out.vertices).reshape(&[m.num_vertices(), 3])?;
    Ok((joints, vertices))
}

/// `(u, v) = (s·x + tx, s·y + ty)` for every joint of a `J×3` array.
pub fn project_weak_perspective(joints3d: &Tensor, camera: [f64; 3]) -> Result<Tensor> {
    if joints3d.rank() != 2 || joints3d.cols() != 3 {
        return Err(Error::contract("project", format!("expected J×3, got {:?}", joints3d.dims())));
    }
    let [s, tx, ty] = camera;
    let data = (0..joints3d.rows())
        .flat_map(|j| [s * joints3d.get(j, 0) + tx, s * joints3d.get(j, 1) + ty])
        .collect();
    Tensor::new(vec![joints3d.rows(), 2], data)
}
