//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's numerical kernels; everything is
//! explicit loops over plain slices.

#![allow(dead_code)]

use motion_attn::moca::MocaWeights;
use motion_attn::tensor::Tensor;
use nalgebra::{Rotation3, Vector3};

fn softmax_in_place(row: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &x in row.iter() {
        if x > max {
            max = x;
        }
    }
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn project(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Vec<Vec<f64>> {
    let (t, c) = (x.dims()[0], x.dims()[1]);
    let r = w.dims()[1];
    let mut out = vec![vec![0.0; r]; t];
    for i in 0..t {
        for k in 0..r {
            let mut s = b.map_or(0.0, |b| b.data()[k]);
            for j in 0..c {
                s += x.data()[i * c + j] * w.data()[j * r + k];
            }
            out[i][k] = s;
        }
    }
    out
}

/// Non-local block on one sequence written as nested loops:
/// `z_i = Σ_r (Σ_j a_ij g_jr) W_z[r,:] + b_z + x_i`.
pub fn brute_nonlocal(x: &Tensor, w: &MocaWeights) -> Tensor {
    let (t, c) = (x.dims()[0], x.dims()[1]);
    let theta = project(x, &w.w_theta, w.b_theta.as_ref());
    let phi = project(x, &w.w_phi, w.b_phi.as_ref());
    let g = project(x, &w.w_g, w.b_g.as_ref());
    let r = theta[0].len();
    let mut out = vec![0.0; t * c];
    for i in 0..t {
        let mut a = vec![0.0; t];
        for j in 0..t {
            for k in 0..r {
                a[j] += theta[i][k] * phi[j][k];
            }
        }
        softmax_in_place(&mut a);
        let mut y = vec![0.0; r];
        for j in 0..t {
            for k in 0..r {
                y[k] += a[j] * g[j][k];
            }
        }
        for col in 0..c {
            let mut s = w.b_z.data()[col] + x.data()[i * c + col];
            for k in 0..r {
                s += y[k] * w.w_z.data()[k * c + col];
            }
            out[i * c + col] = s;
        }
    }
    Tensor::new(vec![t, c], out).unwrap()
}

/// Row softmax of `XXᵀ` by loops.
pub fn brute_nssm(x: &Tensor) -> Vec<Vec<f64>> {
    let (t, c) = (x.dims()[0], x.dims()[1]);
    (0..t)
        .map(|i| {
            let mut row: Vec<f64> = (0..t)
                .map(|j| (0..c).map(|k| x.data()[i * c + k] * x.data()[j * c + k]).sum())
                .collect();
            softmax_in_place(&mut row);
            row
        })
        .collect()
}

fn sq_residual(r: &Rotation3<f64>, p: &[Vector3<f64>], g: &[Vector3<f64>]) -> (f64, f64, Vector3<f64>) {
    let n = p.len() as f64;
    let pm = p.iter().sum::<Vector3<f64>>() / n;
    let gm = g.iter().sum::<Vector3<f64>>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in p.iter().zip(g) {
        let ra = r * (a - pm);
        num += ra.dot(&(b - gm));
        den += (a - pm).norm_squared();
    }
    let s = (num / den).max(0.0);
    let t = gm - s * (r * pm);
    let res = p.iter().zip(g).map(|(a, b)| (s * (r * a) + t - b).norm_squared()).sum();
    (res, s, t)
}

/// Mean aligned joint error with the similarity found by a rotation grid
/// search followed by shrinking-step local search. Scale and translation
/// are solved in closed form for each candidate rotation.
pub fn brute_pa_frame(p: &[Vector3<f64>], g: &[Vector3<f64>]) -> f64 {
    use std::f64::consts::PI;
    let steps = 12;
    let mut best = (f64::INFINITY, Rotation3::identity());
    for a in 0..steps {
        for b in 0..steps / 2 {
            for c in 0..steps {
                let r = Rotation3::from_euler_angles(
                    2.0 * PI * a as f64 / steps as f64,
                    PI * (b as f64 + 0.5) / (steps / 2) as f64 - PI / 2.0,
                    2.0 * PI * c as f64 / steps as f64,
                );
                let res = sq_residual(&r, p, g).0;
                if res < best.0 {
                    best = (res, r);
                }
            }
        }
    }
    let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
    let mut step = 0.2;
    while step > 1e-10 {
        let mut improved = false;
        for axis in &axes {
            for sign in [1.0, -1.0] {
                let cand = best.1 * Rotation3::from_scaled_axis(axis * (sign * step));
                let res = sq_residual(&cand, p, g).0;
                if res < best.0 {
                    best = (res, cand);
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let (_, s, t) = sq_residual(&best.1, p, g);
    p.iter().zip(g).map(|(a, b)| (s * (best.1 * a) + t - b).norm()).sum::<f64>() / p.len() as f64
}

/// Scalar Adam recurrence, written out from the update rule.
pub fn hand_adam(mut p: f64, grads: &[f64], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v) = (0.0, 0.0);
    let mut trace = Vec::new();
    for (i, g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        p -= lr * mh / (vh.sqrt() + eps);
        trace.push(p);
    }
    trace
}

pub fn points(t: &Tensor) -> Vec<Vector3<f64>> {
    t.data().chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

pub fn perm_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let c = x.dims()[1];
    let data = perm.iter().flat_map(|&i| x.data()[i * c..(i + 1) * c].to_vec()).collect();
    Tensor::new(x.dims().to_vec(), data).unwrap()
}
