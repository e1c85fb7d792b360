use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense network layout: rectifier on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    /// Layer widths including input and output, e.g. `[p, 256, 128, 64, out]`.
    pub sizes: Vec<usize>,
    /// Dropout keep-probability on hidden activations (1 disables dropout).
    pub keep_prob: f64,
    pub weight_decay: f64,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        MlpSpec {
            sizes,
            keep_prob: 1.0,
            weight_decay: 0.0,
        }
    }

    pub fn with_dropout(mut self, keep_prob: f64) -> Self {
        self.keep_prob = keep_prob;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn input(&self) -> usize {
        self.sizes[0]
    }

    pub fn output(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::config(format!(
                "network needs at least input and output layers of positive width, got {:?}",
                self.sizes
            )));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::config(format!(
                "dropout keep-probability must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    /// Offset of the row-major `fan_out × fan_in` weight block.
    w: usize,
    b: usize,
}

/// Dense network with all parameters in one flat vector.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
    layers: Vec<LayerSlot>,
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (after dropout for hidden inputs).
    inputs: Vec<Vec<f64>>,
    /// Rectifier outputs of hidden layers, before dropout.
    hidden: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit: 0 or 1/keep.
    masks: Vec<Vec<f64>>,
}

impl Mlp {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.sizes.len() - 1);
        let mut offset = 0;
        for pair in spec.sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            layers.push(LayerSlot {
                fan_in,
                fan_out,
                w: offset,
                b: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        let mut params = vec![0.0; offset];
        for l in &layers {
            let limit = 1.0 / (l.fan_in as f64).sqrt();
            for w in &mut params[l.w..l.b] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Mlp {
            spec,
            params,
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `true` for weights, `false` for biases.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for l in &self.layers {
            mask[l.w..l.b].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    /// Sets layer `index`'s weights (row-major `fan_out × fan_in`) and biases.
    pub fn set_layer(&mut self, index: usize, weights: &[f64], bias: &[f64]) -> Result<()> {
        let l = *self
            .layers
            .get(index)
            .ok_or_else(|| Error::domain(format!("no layer {index}")))?;
        if weights.len() != l.fan_in * l.fan_out || bias.len() != l.fan_out {
            return Err(Error::domain("layer parameter shape mismatch"));
        }
        self.params[l.w..l.b].copy_from_slice(weights);
        self.params[l.b..l.b + l.fan_out].copy_from_slice(bias);
        Ok(())
    }

    fn affine(&self, l: &LayerSlot, input: &[f64], out: &mut [f64]) {
        let w = &self.params[l.w..l.b];
        let b = &self.params[l.b..l.b + l.fan_out];
        for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(l.fan_in).zip(b)) {
            *o = bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
        }
    }

    /// Forward pass without keeping activations (always eval mode).
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; l.fan_out];
            self.affine(l, &current, &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            current = out;
        }
        Ok(current)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input() {
            return Err(Error::domain(format!(
                "network expects {} inputs, got {}",
                self.spec.input(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let depth = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(depth),
            hidden: Vec::with_capacity(depth - 1),
            masks: Vec::with_capacity(depth - 1),
        };
        let mut current = x.to_vec();
        let dropout = mode == Mode::Train && self.spec.keep_prob < 1.0;
        let keep = self.spec.keep_prob;
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; l.fan_out];
            self.affine(l, &current, &mut out);
            cache.inputs.push(current);
            if i + 1 == depth {
                return Ok((out, cache));
            }
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            let mask: Vec<f64> = if dropout {
                (0..l.fan_out)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            } else {
                vec![1.0; l.fan_out]
            };
            current = out.iter().zip(&mask).map(|(a, m)| a * m).collect();
            cache.hidden.push(out);
            cache.masks.push(mask);
        }
        unreachable!("network has at least one layer")
    }

    /// Adds `∂(upstream · output) / ∂params` into `grads`.
    pub fn accumulate_backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        if upstream.len() != self.spec.output() || grads.len() != self.params.len() {
            return Err(Error::domain("backward shape mismatch"));
        }
        let mut delta = upstream.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let w = &self.params[l.w..l.b];
            for (o, &dz) in delta.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                grads[l.b + o] += dz;
                let row = &mut grads[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += dz * x;
                }
            }
            if i == 0 {
                break;
            }
            // Gradient w.r.t. this layer's input, then back through dropout and
            // the rectifier of the previous hidden layer.
            let mut prev = vec![0.0; l.fan_in];
            for (o, &dz) in delta.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                for (p, a) in prev.iter_mut().zip(&w[o * l.fan_in..(o + 1) * l.fan_in]) {
                    *p += dz * a;
                }
            }
            let hidden = &cache.hidden[i - 1];
            let mask = &cache.masks[i - 1];
            for ((p, h), m) in prev.iter_mut().zip(hidden).zip(mask) {
                if *h <= 0.0 {
                    *p = 0.0;
                } else {
                    *p *= m;
                }
            }
            delta = prev;
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.params.len()];
        self.accumulate_backward(cache, upstream, &mut grads)?;
        Ok(grads)
    }
}
