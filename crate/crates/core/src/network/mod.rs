//! Fully connected network mapping (t*, x*, y*) to (T*, u*, v*, p*).
//!
//! Hidden layers use swish; the output layer is affine. Parameters live in
//! one flat buffer (per layer: row-major weights, then biases) so the
//! optimizer and the checkpoint format can treat them as a single vector.

pub mod batch;
mod checkpoint;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::difftape::{Input, Jet2, Tape, Var};
use crate::error::{Error, Result};

pub use checkpoint::{
    encode, load_checkpoint, save_checkpoint, Checkpoint, OptimizerMoments, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

/// Network input arity: (t*, x*, y*).
pub const INPUTS: usize = 3;
/// Network output arity: (T*, u*, v*, p*).
pub const OUTPUTS: usize = 4;

/// Offsets of one layer's weights and biases inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpan {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub biases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    /// Applied as `scale * raw + offset` to each raw (t*, x*, y*) input.
    pub input_scale: [f64; 3],
    pub input_offset: [f64; 3],
    pub seed: u64,
    #[serde(skip)]
    flat: Vec<f64>,
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Shape("need at least an input and an output layer".into()));
    }
    if layer_sizes[0] != INPUTS {
        return Err(Error::Shape(format!("first layer size {} != 3", layer_sizes[0])));
    }
    if *layer_sizes.last().unwrap() != OUTPUTS {
        return Err(Error::Shape(format!(
            "last layer size {} != 4",
            layer_sizes.last().unwrap()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Shape("layer sizes must be positive".into()));
    }
    Ok(())
}

/// `[3, width × depth, 4]`
pub fn architecture(hidden_layers: usize, width: usize) -> Vec<usize> {
    let mut sizes = vec![INPUTS];
    sizes.extend(std::iter::repeat(width).take(hidden_layers));
    sizes.push(OUTPUTS);
    sizes
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases, identity input map.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            flat.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)));
            flat.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            input_scale: [1.0; 3],
            input_offset: [0.0; 3],
            seed,
            flat,
        })
    }

    /// Builds a network from explicit values.
    pub fn from_flat(layer_sizes: &[usize], flat: Vec<f64>) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let expected = count_params(layer_sizes);
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "{} parameter values for an architecture needing {expected}",
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::RejectedInput("non-finite parameter value".into()));
        }
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            input_scale: [1.0; 3],
            input_offset: [0.0; 3],
            seed: 0,
            flat,
        })
    }

    /// Sets the input map so that the box `lo..hi` lands on `[-1, 1]^3`.
    pub fn with_input_box(mut self, lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        for k in 0..3 {
            let span = hi[k] - lo[k];
            if !(span > 0.0) || !span.is_finite() {
                return Err(Error::Domain(format!("empty input range on axis {k}")));
            }
            self.input_scale[k] = 2.0 / span;
            self.input_offset[k] = -(hi[k] + lo[k]) / span;
        }
        Ok(self)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn n_params(&self) -> usize {
        self.flat.len()
    }

    pub fn span(&self, layer: usize) -> LayerSpan {
        let mut off = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            if l == layer {
                return LayerSpan { fan_in, fan_out, weights: off, biases: off + fan_in * fan_out };
            }
            off += fan_in * fan_out + fan_out;
        }
        panic!("layer {layer} out of range");
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = self.span(layer);
        &self.flat[s.weights..s.biases]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let s = self.span(layer);
        &self.flat[s.biases..s.biases + s.fan_out]
    }

    fn check_point(point: [f64; 3]) -> Result<()> {
        if point.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::RejectedInput(format!("non-finite point {point:?}")))
        }
    }

    /// Network outputs (T*, u*, v*, p*) at one point.
    pub fn forward(&self, point: [f64; 3]) -> Result<[f64; 4]> {
        Self::check_point(point)?;
        let mut z: Vec<f64> =
            (0..3).map(|k| self.input_scale[k] * point[k] + self.input_offset[k]).collect();
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let s = self.span(l);
            let w = &self.flat[s.weights..s.biases];
            let b = &self.flat[s.biases..s.biases + s.fan_out];
            let mut next = Vec::with_capacity(s.fan_out);
            for i in 0..s.fan_out {
                let row = &w[i * s.fan_in..(i + 1) * s.fan_in];
                let mut acc = 0.0;
                for (wij, zj) in row.iter().zip(&z) {
                    acc += wij * zj;
                }
                acc += b[i];
                next.push(if l < last { crate::activation::swish(acc) } else { acc });
            }
            z = next;
        }
        Ok([z[0], z[1], z[2], z[3]])
    }

    /// Outputs with their order-2 jets in the raw inputs.
    pub fn forward_jet(&self, point: [f64; 3]) -> Result<NetOutputJet> {
        Self::check_point(point)?;
        let seeds = [Input::T, Input::X, Input::Y];
        let mut z: Vec<Jet2<f64>> = (0..3)
            .map(|k| {
                let mut j = Jet2::seed(seeds[k], point[k]).scale(self.input_scale[k]);
                j.v = self.input_scale[k] * point[k] + self.input_offset[k];
                j
            })
            .collect();
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let s = self.span(l);
            let w = &self.flat[s.weights..s.biases];
            let b = &self.flat[s.biases..s.biases + s.fan_out];
            let mut next = Vec::with_capacity(s.fan_out);
            for i in 0..s.fan_out {
                let row = &w[i * s.fan_in..(i + 1) * s.fan_in];
                let mut acc = Jet2::constant(0.0);
                for (wij, zj) in row.iter().zip(&z) {
                    acc.v += wij * zj.v;
                    acc.d_t += wij * zj.d_t;
                    acc.d_x += wij * zj.d_x;
                    acc.d_y += wij * zj.d_y;
                    acc.d_xx += wij * zj.d_xx;
                    acc.d_yy += wij * zj.d_yy;
                }
                acc.v += b[i];
                next.push(if l < last { acc.swish() } else { acc });
            }
            z = next;
        }
        Ok(NetOutputJet { temp: z[0], u: z[1], v: z[2], p: z[3] })
    }

    /// Registers every parameter as a leaf on `tape`, in flat order.
    pub fn leaves_on(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.flat.iter().map(|&p| tape.leaf(p)).collect()
    }

    /// Records `forward_jet` on a tape whose parameter leaves are `leaves`.
    pub fn record_forward_jet(
        &self,
        tape: &mut Tape,
        leaves: &[Var],
        point: [f64; 3],
    ) -> Result<NetOutputJet<Var>> {
        Self::check_point(point)?;
        if leaves.len() != self.flat.len() {
            return Err(Error::Shape("leaf count does not match parameter count".into()));
        }
        let seeds = [Input::T, Input::X, Input::Y];
        let mut z = Vec::with_capacity(3);
        for k in 0..3 {
            let seed = tape.seed_input(seeds[k], point[k])?;
            let mut j = Jet2::from_components([seed.v; 6]);
            for (dst, src) in [
                (&mut j.v, seed.v),
                (&mut j.d_t, seed.d_t),
                (&mut j.d_x, seed.d_x),
                (&mut j.d_y, seed.d_y),
                (&mut j.d_xx, seed.d_xx),
                (&mut j.d_yy, seed.d_yy),
            ] {
                *dst = tape.scale(src, self.input_scale[k])?;
            }
            let off = tape.constant(self.input_offset[k]);
            j.v = tape.add(j.v, off)?;
            z.push(j);
        }
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let s = self.span(l);
            let mut next = Vec::with_capacity(s.fan_out);
            for i in 0..s.fan_out {
                let row = &leaves[s.weights + i * s.fan_in..s.weights + (i + 1) * s.fan_in];
                let bias = leaves[s.biases + i];
                let mut comps = [bias; 6];
                for (k, c) in comps.iter_mut().enumerate() {
                    let pairs: Vec<(Var, Var)> =
                        row.iter().zip(&z).map(|(&w, zj)| (w, zj.components()[k])).collect();
                    *c = tape.dot(&pairs, if k == 0 { Some(bias) } else { None })?;
                }
                let acc = Jet2::from_components(comps);
                next.push(if l < last { tape.jet_swish(&acc)? } else { acc });
            }
            z = next;
        }
        Ok(NetOutputJet { temp: z[0], u: z[1], v: z[2], p: z[3] })
    }
}

pub fn count_params(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// One jet per output channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetOutputJet<S = f64> {
    pub temp: Jet2<S>,
    pub u: Jet2<S>,
    pub v: Jet2<S>,
    pub p: Jet2<S>,
}

impl<S: Copy> NetOutputJet<S> {
    pub fn channels(&self) -> [Jet2<S>; 4] {
        [self.temp, self.u, self.v, self.p]
    }
}
