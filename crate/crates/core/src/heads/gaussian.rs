//! Gaussian mixture head.
//!
//! Component densities are evaluated at the real-valued centers of every
//! cell, mixed by softmax weights, and renormalized over the grid. Each
//! component's covariance is `L Lᵀ` with `L` lower triangular and a
//! softplus-positive diagonal.
//!
//! Parameter block per component: `[weight logit, mean (d), L packed
//! row-major lower triangle (d(d+1)/2)]`.

use std::f64::consts::PI;

use super::HeadSpec;
use crate::math::{log_softmax_into, logsumexp, sigmoid, softplus};

const DIAG_FLOOR: f64 = 1e-3;

pub(super) fn cell_centers(spec: &HeadSpec) -> Vec<f64> {
    let shape = &spec.shape;
    let d = shape.ndim();
    let mut centers = Vec::with_capacity(shape.total() * d);
    let mut coord = vec![0; d];
    for i in 0..shape.total() {
        shape.unflatten_into(i, &mut coord);
        centers.extend(coord.iter().zip(&spec.embedding).map(|(&c, e)| e.center(c)));
    }
    centers
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

struct Component {
    log_w: f64,
    mean: Vec<f64>,
    /// Dense lower-triangular factor, row-major d×d.
    chol: Vec<f64>,
    log_norm: f64,
}

struct Mixture {
    d: usize,
    components: Vec<Component>,
}

impl Mixture {
    fn unpack(spec: &HeadSpec, params: &[f64]) -> Self {
        let d = spec.shape.ndim();
        let block = 1 + d + d * (d + 1) / 2;
        let m = spec.components;
        let logits: Vec<f64> = (0..m).map(|c| params[c * block]).collect();
        let mut log_w = vec![0.0; m];
        log_softmax_into(&logits, &mut log_w);
        let components = (0..m)
            .map(|c| {
                let p = &params[c * block..(c + 1) * block];
                let mean = p[1..1 + d].to_vec();
                let packed = &p[1 + d..];
                let mut chol = vec![0.0; d * d];
                let mut log_det = 0.0;
                for i in 0..d {
                    for j in 0..i {
                        chol[i * d + j] = packed[tri(i, j)];
                    }
                    let diag = softplus(packed[tri(i, i)]) + DIAG_FLOOR;
                    chol[i * d + i] = diag;
                    log_det += diag.ln();
                }
                Component {
                    log_w: log_w[c],
                    mean,
                    chol,
                    log_norm: -log_det - 0.5 * d as f64 * (2.0 * PI).ln(),
                }
            })
            .collect();
        Mixture { d, components }
    }

    /// `u = L⁻¹ (x − μ)`; returns the component log-density.
    #[inline]
    fn log_density(&self, c: usize, x: &[f64], u: &mut [f64]) -> f64 {
        let comp = &self.components[c];
        let d = self.d;
        let mut sq = 0.0;
        for i in 0..d {
            let mut acc = x[i] - comp.mean[i];
            for k in 0..i {
                acc -= comp.chol[i * d + k] * u[k];
            }
            u[i] = acc / comp.chol[i * d + i];
            sq += u[i] * u[i];
        }
        comp.log_norm - 0.5 * sq
    }

    /// `v = L⁻ᵀ u`.
    #[inline]
    fn back_solve(&self, c: usize, u: &[f64], v: &mut [f64]) {
        let comp = &self.components[c];
        let d = self.d;
        for i in (0..d).rev() {
            let mut acc = u[i];
            for k in i + 1..d {
                acc -= comp.chol[k * d + i] * v[k];
            }
            v[i] = acc / comp.chol[i * d + i];
        }
    }

    /// Unnormalized per-cell log mixture density.
    fn cell_log_density(&self, centers: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut u = vec![0.0; d];
        let mut terms = vec![0.0; self.components.len()];
        centers
            .chunks_exact(d)
            .map(|x| {
                for (c, t) in terms.iter_mut().enumerate() {
                    *t = self.components[c].log_w + self.log_density(c, x, &mut u);
                }
                logsumexp(&terms)
            })
            .collect()
    }
}

pub(super) fn log_prob(spec: &HeadSpec, centers: &[f64], params: &[f64], y: usize) -> f64 {
    let g = Mixture::unpack(spec, params).cell_log_density(centers);
    g[y] - logsumexp(&g)
}

pub(super) fn full(spec: &HeadSpec, centers: &[f64], params: &[f64]) -> Vec<f64> {
    let g = Mixture::unpack(spec, params).cell_log_density(centers);
    let z = logsumexp(&g);
    g.iter().map(|v| (v - z).exp()).collect()
}

pub(super) fn add_grad(
    spec: &HeadSpec,
    centers: &[f64],
    params: &[f64],
    y: usize,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let mix = Mixture::unpack(spec, params);
    let d = mix.d;
    let m = mix.components.len();
    let block = 1 + d + d * (d + 1) / 2;
    let n = centers.len() / d;

    // Responsibilities r_c(j) and whitened residuals per cell, kept for the
    // gradient pass.
    let mut resp = vec![0.0; n * m];
    let mut whitened = vec![0.0; n * m * d];
    let mut g = vec![0.0; n];
    for (j, x) in centers.chunks_exact(d).enumerate() {
        let row = &mut resp[j * m..(j + 1) * m];
        let mut max = f64::NEG_INFINITY;
        for (c, t) in row.iter_mut().enumerate() {
            let u = &mut whitened[(j * m + c) * d..(j * m + c + 1) * d];
            *t = mix.components[c].log_w + mix.log_density(c, x, u);
            max = max.max(*t);
        }
        let mut sum = 0.0;
        for t in row.iter_mut() {
            *t = (*t - max).exp();
            sum += *t;
        }
        row.iter_mut().for_each(|t| *t /= sum);
        g[j] = max + sum.ln();
    }
    let z = logsumexp(&g);

    // ∂ log p(y) = ∂ g(y) − Σ_j p_j ∂ g(j); per (component, cell) weight
    // ω = r_c(j) ([j = y] − p_j) with r_c(j) the responsibility.
    let mut local = vec![0.0; m * block];
    let mut omega_total = vec![0.0; m];
    let mut v = vec![0.0; d];
    for j in 0..n {
        let p_j = (g[j] - z).exp();
        let outer = if j == y { 1.0 - p_j } else { -p_j };
        for c in 0..m {
            let w = resp[j * m + c] * outer;
            if w == 0.0 {
                continue;
            }
            let u = &whitened[(j * m + c) * d..(j * m + c + 1) * d];
            omega_total[c] += w;
            mix.back_solve(c, u, &mut v);
            let base = c * block;
            for i in 0..d {
                local[base + 1 + i] += w * v[i];
                for k in 0..=i {
                    local[base + 1 + d + tri(i, k)] += w * v[i] * u[k];
                }
            }
        }
    }
    let omega_sum: f64 = omega_total.iter().sum();
    for c in 0..m {
        let base = c * block;
        let comp = &mix.components[c];
        local[base] = omega_total[c] - comp.log_w.exp() * omega_sum;
        for i in 0..d {
            let idx = base + 1 + d + tri(i, i);
            // −log L_ii term, then the softplus chain rule on the raw value.
            let dl = local[idx] - omega_total[c] / comp.chol[i * d + i];
            local[idx] = dl * sigmoid(params[idx]);
        }
    }
    for (g, l) in grad.iter_mut().zip(&local) {
        *g += scale * l;
    }
    g[y] - z
}
