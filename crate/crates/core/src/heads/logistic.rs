//! Discretized logistic mixture head.
//!
//! Per dimension, the mass of bin `j` under one component is
//! `σ((e⁺ − μ)/s) − σ((e⁻ − μ)/s)` where `e±` are the bin edges halfway
//! between centers. The first bin's lower edge and the last bin's upper edge
//! extend to ∓∞, so each component's per-dimension masses sum to one and the
//! tails are absorbed by the boundary bins. Multi-dimensional components are
//! products over dimensions.
//!
//! Parameter block per component: `[weight logit, locations (d), raw scales
//! (d)]` with `s = softplus(raw) + 1e-3`.

use super::HeadSpec;
use crate::math::{log_sigmoid, log_softmax_into, logsumexp, sigmoid, softplus};

const SCALE_FLOOR: f64 = 1e-3;

/// Log-mass of one bin plus its derivatives w.r.t. location and scale.
struct BinTerm {
    log_mass: f64,
    d_loc: f64,
    d_scale: f64,
}

fn bin_term(spec: &HeadSpec, dim: usize, bin: usize, loc: f64, scale: f64, with_grad: bool) -> BinTerm {
    let size = spec.shape.dims()[dim];
    let emb = spec.embedding[dim];
    let half = 0.5 * emb.step;
    let center = emb.center(bin);
    let t_hi = (bin + 1 < size).then(|| (center + half - loc) / scale);
    let t_lo = (bin > 0).then(|| (center - half - loc) / scale);

    let log_mass = match (t_lo, t_hi) {
        (None, None) => 0.0,
        (None, Some(hi)) => log_sigmoid(hi),
        (Some(lo), None) => log_sigmoid(-lo),
        // σ(a) − σ(b) = σ(a) σ(−b) (1 − e^{b−a})
        (Some(lo), Some(hi)) => log_sigmoid(hi) + log_sigmoid(-lo) + (-(lo - hi).exp_m1()).ln(),
    };
    if !with_grad {
        return BinTerm {
            log_mass,
            d_loc: 0.0,
            d_scale: 0.0,
        };
    }
    // ∂ log m / ∂t at each finite edge: ±σ'(t) / m.
    let density = |t: f64| (log_sigmoid(t) + log_sigmoid(-t) - log_mass).exp();
    let (mut d_loc, mut d_scale) = (0.0, 0.0);
    if let Some(hi) = t_hi {
        let dh = density(hi);
        d_loc -= dh / scale;
        d_scale -= dh * hi / scale;
    }
    if let Some(lo) = t_lo {
        let dl = -density(lo);
        d_loc -= dl / scale;
        d_scale -= dl * lo / scale;
    }
    BinTerm {
        log_mass,
        d_loc,
        d_scale,
    }
}

struct Layout {
    d: usize,
    block: usize,
    log_w: Vec<f64>,
}

impl Layout {
    fn new(spec: &HeadSpec, params: &[f64]) -> Self {
        let d = spec.shape.ndim();
        let block = 1 + 2 * d;
        let logits: Vec<f64> = (0..spec.components).map(|c| params[c * block]).collect();
        let mut log_w = vec![0.0; spec.components];
        log_softmax_into(&logits, &mut log_w);
        Layout { d, block, log_w }
    }

    fn loc(&self, params: &[f64], c: usize, dim: usize) -> f64 {
        params[c * self.block + 1 + dim]
    }

    fn raw_scale(&self, params: &[f64], c: usize, dim: usize) -> f64 {
        params[c * self.block + 1 + self.d + dim]
    }

    fn scale(&self, params: &[f64], c: usize, dim: usize) -> f64 {
        softplus(self.raw_scale(params, c, dim)) + SCALE_FLOOR
    }
}

pub(super) fn log_prob(spec: &HeadSpec, params: &[f64], y: usize) -> f64 {
    let lay = Layout::new(spec, params);
    let coord = spec.shape.unflatten(y);
    let terms: Vec<f64> = (0..spec.components)
        .map(|c| {
            lay.log_w[c]
                + (0..lay.d)
                    .map(|dim| {
                        let (loc, s) = (lay.loc(params, c, dim), lay.scale(params, c, dim));
                        bin_term(spec, dim, coord[dim], loc, s, false).log_mass
                    })
                    .sum::<f64>()
        })
        .collect();
    logsumexp(&terms)
}

pub(super) fn full(spec: &HeadSpec, params: &[f64]) -> Vec<f64> {
    let lay = Layout::new(spec, params);
    let dims = spec.shape.dims();
    // tables[c][dim][bin]
    let tables: Vec<Vec<Vec<f64>>> = (0..spec.components)
        .map(|c| {
            (0..lay.d)
                .map(|dim| {
                    let (loc, s) = (lay.loc(params, c, dim), lay.scale(params, c, dim));
                    (0..dims[dim])
                        .map(|b| bin_term(spec, dim, b, loc, s, false).log_mass)
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut coord = vec![0; lay.d];
    let mut terms = vec![0.0; spec.components];
    (0..spec.shape.total())
        .map(|i| {
            spec.shape.unflatten_into(i, &mut coord);
            for (c, t) in terms.iter_mut().enumerate() {
                *t = lay.log_w[c]
                    + coord
                        .iter()
                        .enumerate()
                        .map(|(dim, &b)| tables[c][dim][b])
                        .sum::<f64>();
            }
            logsumexp(&terms).exp()
        })
        .collect()
}

pub(super) fn add_grad(spec: &HeadSpec, params: &[f64], y: usize, scale: f64, grad: &mut [f64]) -> f64 {
    let lay = Layout::new(spec, params);
    let coord = spec.shape.unflatten(y);
    let m = spec.components;
    let mut per_comp: Vec<Vec<BinTerm>> = Vec::with_capacity(m);
    let mut terms = vec![0.0; m];
    for c in 0..m {
        let bins: Vec<BinTerm> = (0..lay.d)
            .map(|dim| {
                let (loc, s) = (lay.loc(params, c, dim), lay.scale(params, c, dim));
                bin_term(spec, dim, coord[dim], loc, s, true)
            })
            .collect();
        terms[c] = lay.log_w[c] + bins.iter().map(|b| b.log_mass).sum::<f64>();
        per_comp.push(bins);
    }
    let log_p = logsumexp(&terms);
    for c in 0..m {
        let resp = (terms[c] - log_p).exp();
        let base = c * lay.block;
        grad[base] += scale * (resp - lay.log_w[c].exp());
        for (dim, b) in per_comp[c].iter().enumerate() {
            grad[base + 1 + dim] += scale * resp * b.d_loc;
            let ds_draw = sigmoid(lay.raw_scale(params, c, dim));
            grad[base + 1 + lay.d + dim] += scale * resp * b.d_scale * ds_draw;
        }
    }
    log_p
}
