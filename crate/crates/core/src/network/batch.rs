//! Batched forward/reverse evaluation used by the trainer.
//!
//! Activations are stored as `width × (components · points)` row-major
//! blocks, one contiguous block of `points` values per jet component
//! (value, d/dt, d/dx, d/dy, d²/dx², d²/dy²), so each dense layer is a
//! single matrix product over every component at once. The reverse pass
//! differentiates the jet propagation itself; it computes the same
//! gradients as recording [`MlpParams::record_forward_jet`] on a tape.

use super::{MlpParams, OUTPUTS};
use crate::activation::swish_all;

/// Jet component block indices.
pub const V: usize = 0;
pub const DT: usize = 1;
pub const DX: usize = 2;
pub const DY: usize = 3;
pub const DXX: usize = 4;
pub const DYY: usize = 5;

/// How many components to propagate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Values only.
    Values,
    /// Full order-2 jets.
    Jets,
}

impl Mode {
    pub fn components(self) -> usize {
        match self {
            Mode::Values => 1,
            Mode::Jets => 6,
        }
    }
}

/// Cached forward state for one batch; reused across iterations.
#[derive(Debug, Default)]
pub struct BatchPass {
    ncomp: usize,
    n: usize,
    /// z[0] is the mapped input, z[l] the activation after layer l, and the
    /// last entry holds the affine outputs.
    z: Vec<Vec<f64>>,
    /// Hidden pre-activations, a[l] feeding z[l + 1].
    a: Vec<Vec<f64>>,
    scratch: Vec<f64>,
    grad_cur: Vec<f64>,
}

#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl BatchPass {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> usize {
        self.ncomp
    }

    /// Output block for `channel` (0 = T, 1 = u, 2 = v, 3 = p) and jet
    /// component `comp`.
    pub fn output(&self, channel: usize, comp: usize) -> &[f64] {
        let c = self.ncomp * self.n;
        let out = self.z.last().expect("forward not run");
        &out[channel * c + comp * self.n..channel * c + (comp + 1) * self.n]
    }

    pub fn forward(&mut self, params: &MlpParams, points: &[[f64; 3]], mode: Mode) {
        let ncomp = mode.components();
        let n = points.len();
        let c = ncomp * n;
        let layers = params.n_layers();
        self.ncomp = ncomp;
        self.n = n;
        self.z.resize_with(layers + 1, Vec::new);
        self.a.resize_with(layers.saturating_sub(1), Vec::new);

        let z0 = &mut self.z[0];
        z0.clear();
        z0.resize(3 * c, 0.0);
        for k in 0..3 {
            let row = &mut z0[k * c..(k + 1) * c];
            let (s, o) = (params.input_scale[k], params.input_offset[k]);
            for (dst, p) in row[..n].iter_mut().zip(points) {
                *dst = s * p[k] + o;
            }
            if ncomp == 6 {
                let blk = [DT, DX, DY][k];
                row[blk * n..(blk + 1) * n].fill(s);
            }
        }

        for l in 0..layers {
            let span = params.span(l);
            let w = &params.flat()[span.weights..span.biases];
            let b = &params.flat()[span.biases..span.biases + span.fan_out];
            let hidden = l + 1 < layers;
            let mut pre = if hidden { std::mem::take(&mut self.a[l]) } else { std::mem::take(&mut self.z[l + 1]) };
            pre.clear();
            pre.resize(span.fan_out * c, 0.0);
            gemm(span.fan_out, span.fan_in, c, w, (span.fan_in, 1), &self.z[l], (c, 1), 0.0, &mut pre);
            for i in 0..span.fan_out {
                for v in &mut pre[i * c..i * c + n] {
                    *v += b[i];
                }
            }
            if hidden {
                let out = &mut self.z[l + 1];
                out.clear();
                out.resize(span.fan_out * c, 0.0);
                for i in 0..span.fan_out {
                    swish_rows(&pre[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c], n, ncomp);
                }
                self.a[l] = pre;
            } else {
                self.z[l + 1] = pre;
            }
        }
    }

    /// Accumulates into `grad` (flat parameter layout) the gradient of a
    /// scalar whose derivative with respect to each output block is given
    /// in `d_out` (`4 × components · points`, same layout as the outputs).
    pub fn backward(&mut self, params: &MlpParams, d_out: &[f64], grad: &mut [f64]) {
        let (n, ncomp) = (self.n, self.ncomp);
        let c = ncomp * n;
        assert_eq!(d_out.len(), OUTPUTS * c, "output gradient shape");
        assert_eq!(grad.len(), params.n_params());
        let layers = params.n_layers();
        let mut g = std::mem::take(&mut self.grad_cur);
        g.clear();
        g.extend_from_slice(d_out);
        let mut gz = std::mem::take(&mut self.scratch);
        for l in (0..layers).rev() {
            let span = params.span(l);
            let zin = &self.z[l];
            {
                let gw = &mut grad[span.weights..span.biases];
                gemm(span.fan_out, c, span.fan_in, &g, (c, 1), zin, (1, c), 1.0, gw);
            }
            for i in 0..span.fan_out {
                grad[span.biases + i] += g[i * c..i * c + n].iter().sum::<f64>();
            }
            if l == 0 {
                break;
            }
            let w = &params.flat()[span.weights..span.biases];
            gz.clear();
            gz.resize(span.fan_in * c, 0.0);
            gemm(span.fan_in, span.fan_out, c, w, (1, span.fan_in), &g, (c, 1), 0.0, &mut gz);
            let pre = &self.a[l - 1];
            g.clear();
            g.resize(span.fan_in * c, 0.0);
            for i in 0..span.fan_in {
                let r = i * c..(i + 1) * c;
                swish_rows_backward(&pre[r.clone()], &gz[r.clone()], &mut g[r], n, ncomp);
            }
        }
        self.grad_cur = g;
        self.scratch = gz;
    }
}

fn swish_rows(a: &[f64], z: &mut [f64], n: usize, ncomp: usize) {
    if ncomp == 1 {
        for (zv, &av) in z.iter_mut().zip(a) {
            *zv = swish_all(av)[0];
        }
        return;
    }
    for p in 0..n {
        let [s, s1, s2, _] = swish_all(a[p]);
        let (ax, ay) = (a[DX * n + p], a[DY * n + p]);
        z[p] = s;
        z[DT * n + p] = s1 * a[DT * n + p];
        z[DX * n + p] = s1 * ax;
        z[DY * n + p] = s1 * ay;
        z[DXX * n + p] = s2 * ax * ax + s1 * a[DXX * n + p];
        z[DYY * n + p] = s2 * ay * ay + s1 * a[DYY * n + p];
    }
}

fn swish_rows_backward(a: &[f64], gz: &[f64], ga: &mut [f64], n: usize, ncomp: usize) {
    if ncomp == 1 {
        for p in 0..n {
            ga[p] = gz[p] * swish_all(a[p])[1];
        }
        return;
    }
    for p in 0..n {
        let [_, s1, s2, s3] = swish_all(a[p]);
        let (at, ax, ay) = (a[DT * n + p], a[DX * n + p], a[DY * n + p]);
        let (axx, ayy) = (a[DXX * n + p], a[DYY * n + p]);
        let (gv, gt, gx, gy) = (gz[p], gz[DT * n + p], gz[DX * n + p], gz[DY * n + p]);
        let (gxx, gyy) = (gz[DXX * n + p], gz[DYY * n + p]);
        ga[p] = gv * s1
            + (gt * at + gx * ax + gy * ay) * s2
            + gxx * (s3 * ax * ax + s2 * axx)
            + gyy * (s3 * ay * ay + s2 * ayy);
        ga[DT * n + p] = gt * s1;
        ga[DX * n + p] = gx * s1 + 2.0 * gxx * s2 * ax;
        ga[DY * n + p] = gy * s1 + 2.0 * gyy * s2 * ay;
        ga[DXX * n + p] = gxx * s1;
        ga[DYY * n + p] = gyy * s1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::difftape::Tape;
    use crate::network::architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (MlpParams, Vec<[f64; 3]>) {
        let p = MlpParams::init(&architecture(3, 7), seed)
            .unwrap()
            .with_input_box([0.0, -0.5, -0.5], [4.0, 0.5, 0.0])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let pts = (0..13)
            .map(|_| [rng.gen_range(0.0..4.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.0)])
            .collect();
        (p, pts)
    }

    #[test]
    fn batched_jets_match_scalar_jets() {
        let (p, pts) = setup(1);
        let mut pass = BatchPass::new();
        pass.forward(&p, &pts, Mode::Jets);
        for (i, pt) in pts.iter().enumerate() {
            let j = p.forward_jet(*pt).unwrap();
            for (ch, jet) in j.channels().iter().enumerate() {
                for (comp, want) in jet.components().iter().enumerate() {
                    let got = pass.output(ch, comp)[i];
                    assert!((got - want).abs() <= 1e-13 * (1.0 + want.abs()), "{ch} {comp}");
                }
            }
        }
        pass.forward(&p, &pts, Mode::Values);
        for (i, pt) in pts.iter().enumerate() {
            let f = p.forward(*pt).unwrap();
            for ch in 0..4 {
                assert!((pass.output(ch, V)[i] - f[ch]).abs() <= 1e-13 * (1.0 + f[ch].abs()));
            }
        }
    }

    #[test]
    fn backward_matches_tape_for_random_cotangent() {
        let (p, pts) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for mode in [Mode::Values, Mode::Jets] {
            let mut pass = BatchPass::new();
            pass.forward(&p, &pts, mode);
            let nc = mode.components();
            let cot: Vec<f64> = (0..4 * nc * pts.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut grad = vec![0.0; p.n_params()];
            pass.backward(&p, &cot, &mut grad);

            let mut tape = Tape::new();
            let leaves = p.leaves_on(&mut tape).unwrap();
            let mut terms = Vec::new();
            for (i, pt) in pts.iter().enumerate() {
                let out = p.record_forward_jet(&mut tape, &leaves, *pt).unwrap();
                for (ch, jet) in out.channels().iter().enumerate() {
                    for (comp, var) in jet.components().iter().enumerate().take(nc) {
                        let w = tape.constant(cot[ch * nc * pts.len() + comp * pts.len() + i]);
                        terms.push((w, *var));
                    }
                }
            }
            let total = tape.dot(&terms, None).unwrap();
            let want = tape.backward(total, &leaves).unwrap();
            for (g, w) in grad.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-11 * (1.0 + w.abs()), "{mode:?}: {g} vs {w}");
            }
        }
    }
}
