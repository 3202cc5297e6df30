use rand::Rng;

use crate::error::{Error, Result};

/// How to initialize the final layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputInit {
    /// Same fan-in uniform rule as the hidden layers.
    FanIn,
    /// Uniform in `±limit`.
    Uniform(f64),
    Zero,
}

/// Fully connected network with tanh hidden activations and a linear output.
///
/// All parameters live in one flat vector. Layer `l` contributes an
/// `in × out` row-major weight block followed by `out` biases, so
/// `y = x·W + b` for a row vector `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations cached by a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    rows: usize,
    dims: Vec<usize>,
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`Mlp::params`]; empty when not requested.
    pub params: Vec<f64>,
    /// `rows × input_dim`.
    pub input: Vec<f64>,
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// `c = alpha·op(a)·op(b) + beta·c` on row-major buffers, with transposes
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches for the
    // given dims and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(dims: &[usize], output_init: OutputInit, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("invalid layer dims {dims:?}")));
        }
        let mut params = Vec::with_capacity(param_count(dims));
        let n_layers = dims.len() - 1;
        for (l, w) in dims.windows(2).enumerate() {
            let limit = match (l + 1 == n_layers, output_init) {
                (true, OutputInit::Zero) => 0.0,
                (true, OutputInit::Uniform(s)) => s,
                _ => 1.0 / (w[0] as f64).sqrt(),
            };
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(if limit > 0.0 { rng.random_range(-limit..limit) } else { 0.0 });
            }
        }
        Ok(Self { dims: dims.to_vec(), params })
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("invalid layer dims {dims:?}")));
        }
        if params.len() != param_count(dims) {
            return Err(Error::Shape(format!(
                "expected {} parameters for {dims:?}, got {}",
                param_count(dims),
                params.len()
            )));
        }
        Ok(Self { dims: dims.to_vec(), params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, in, out)
        let mut off = 0;
        self.dims.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    /// Batched forward pass over `rows` inputs stored row-major.
    pub fn forward(&self, input: &[f64], rows: usize) -> Result<Tape> {
        if input.len() != rows * self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} is not {rows} × {}",
                input.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        for (l, (off, din, dout)) in self.layers().enumerate() {
            let w = &self.params[off..off + din * dout];
            let b = &self.params[off + din * dout..off + din * dout + dout];
            let mut out = Vec::with_capacity(rows * dout);
            for _ in 0..rows {
                out.extend_from_slice(b);
            }
            gemm(rows, din, dout, &acts[l], false, w, false, 1.0, &mut out);
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        Ok(Tape { rows, dims: self.dims.clone(), acts })
    }

    /// Single-input forward pass without caching.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} does not match {}",
                x.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.dims.len() - 1;
        let mut cur = x.to_vec();
        for (l, (off, din, dout)) in self.layers().enumerate() {
            let w = &self.params[off..off + din * dout];
            let mut next = self.params[off + din * dout..off + din * dout + dout].to_vec();
            for (i, &xi) in cur.iter().enumerate() {
                let row = &w[i * dout..(i + 1) * dout];
                for (n, &wv) in next.iter_mut().zip(row) {
                    *n += xi * wv;
                }
            }
            if l + 1 < n_layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Reverse-mode gradients of `Σ grad_out ⊙ output` through the pass
    /// recorded in `tape`. Parameter gradients are skipped when
    /// `want_params` is false.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], want_params: bool) -> Result<Gradients> {
        if tape.dims != self.dims || tape.acts.len() != self.dims.len() {
            return Err(Error::Usage("tape was not recorded by a forward pass of this network".into()));
        }
        let rows = tape.rows;
        if grad_out.len() != rows * self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient length {} is not {rows} × {}",
                grad_out.len(),
                self.output_dim()
            )));
        }
        let layers: Vec<_> = self.layers().collect();
        let n_layers = layers.len();
        let mut pgrad = if want_params { vec![0.0; self.params.len()] } else { Vec::new() };
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (off, din, dout) = layers[l];
            if l + 1 < n_layers {
                // tanh' = 1 − h²
                for (d, h) in delta.iter_mut().zip(&tape.acts[l + 1]) {
                    *d *= 1.0 - h * h;
                }
            }
            if want_params {
                let (gw, gb) = pgrad[off..off + din * dout + dout].split_at_mut(din * dout);
                gemm(din, rows, dout, &tape.acts[l], true, &delta, false, 0.0, gw);
                for r in 0..rows {
                    for (g, d) in gb.iter_mut().zip(&delta[r * dout..(r + 1) * dout]) {
                        *g += d;
                    }
                }
            }
            let w = &self.params[off..off + din * dout];
            let mut prev = vec![0.0; rows * din];
            gemm(rows, dout, din, &delta, false, w, true, 0.0, &mut prev);
            delta = prev;
        }
        Ok(Gradients { params: pgrad, input: delta })
    }

    /// `self ← rho·self + (1 − rho)·source`.
    pub fn polyak_from(&mut self, source: &Mlp, rho: f64) {
        debug_assert_eq!(self.dims, source.dims);
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = rho * *t + (1.0 - rho) * s;
        }
    }
}

/// Split an actor output row into `(mean, clamped log-std, clamp active)`.
pub fn actor_head(out: &[f64]) -> (f64, f64, bool) {
    use super::gaussian::{LOG_STD_MAX, LOG_STD_MIN};
    let raw = out[1];
    let clamped = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
    (out[0], clamped, clamped != raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line reimplementation: explicit triple loops, no gemm.
    fn oracle_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let dims = net.dims();
        let p = net.params();
        let mut off = 0;
        let mut cur = x.to_vec();
        for l in 0..dims.len() - 1 {
            let (din, dout) = (dims[l], dims[l + 1]);
            let mut next = vec![0.0; dout];
            for o in 0..dout {
                let mut acc = p[off + din * dout + o];
                for i in 0..din {
                    acc += cur[i] * p[off + i * dout + o];
                }
                next[o] = if l + 2 < dims.len() { acc.tanh() } else { acc };
            }
            off += din * dout + dout;
            cur = next;
        }
        cur
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[15, 64, 64, 2], OutputInit::Zero, &mut rng).unwrap();
        net.params_mut().iter_mut().for_each(|v| *v = 0.0);
        let out = net.forward_one(&random_input(&mut rng, 15)).unwrap();
        let (mean, log_std, clamped) = actor_head(&out);
        assert_eq!((mean, log_std, clamped), (0.0, 0.0, false));
    }

    #[test]
    fn forward_matches_oracle_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dims in [vec![15, 64, 64, 2], vec![16, 64, 64, 1], vec![3, 5, 4]] {
            let net = Mlp::new(&dims, OutputInit::FanIn, &mut rng).unwrap();
            let rows = 7;
            let x = random_input(&mut rng, rows * dims[0]);
            let tape = net.forward(&x, rows).unwrap();
            let again = net.forward(&x, rows).unwrap();
            assert_eq!(tape.output(), again.output());
            let dout = net.output_dim();
            for r in 0..rows {
                let row = &x[r * dims[0]..(r + 1) * dims[0]];
                let expect = oracle_forward(&net, row);
                let single = net.forward_one(row).unwrap();
                for o in 0..dout {
                    assert!((tape.output()[r * dout + o] - expect[o]).abs() < 1e-12);
                    assert!((single[o] - expect[o]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn default_parameter_count() {
        // 15·64+64 + 64·64+64 + 64·2+2
        assert_eq!(param_count(&[15, 64, 64, 2]), 1024 + 4160 + 130);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[15, 64, 64, 2], OutputInit::FanIn, &mut rng).unwrap();
        assert_eq!(net.params().len(), 5314);
    }

    #[test]
    fn backward_zero_upstream_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[6, 8, 8, 2], OutputInit::FanIn, &mut rng).unwrap();
        let rows = 4;
        let x = random_input(&mut rng, rows * 6);
        let tape = net.forward(&x, rows).unwrap();
        let zero = net.backward(&tape, &vec![0.0; rows * 2], true).unwrap();
        assert!(zero.params.iter().chain(&zero.input).all(|&v| v == 0.0));

        let g1 = random_input(&mut rng, rows * 2);
        let g2 = random_input(&mut rng, rows * 2);
        let g12: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        let b1 = net.backward(&tape, &g1, true).unwrap();
        let b2 = net.backward(&tape, &g2, true).unwrap();
        let b12 = net.backward(&tape, &g12, true).unwrap();
        for i in 0..b12.params.len() {
            assert!((b12.params[i] - b1.params[i] - b2.params[i]).abs() < 1e-12);
        }
        for i in 0..b12.input.len() {
            assert!((b12.input[i] - b1.input[i] - b2.input[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_leaves_parameters_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[4, 8, 1], OutputInit::FanIn, &mut rng).unwrap();
        let before = net.clone();
        let tape = net.forward(&random_input(&mut rng, 12), 3).unwrap();
        net.backward(&tape, &[1.0, -2.0, 0.5], true).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn shape_and_usage_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[4, 8, 1], OutputInit::FanIn, &mut rng).unwrap();
        let other = Mlp::new(&[4, 6, 1], OutputInit::FanIn, &mut rng).unwrap();
        assert!(matches!(net.forward(&[0.0; 3], 1), Err(Error::Shape(_))));
        assert!(matches!(net.forward_one(&[0.0; 5]), Err(Error::Shape(_))));
        let tape = other.forward(&[0.0; 4], 1).unwrap();
        assert!(matches!(net.backward(&tape, &[1.0], true), Err(Error::Usage(_))));
        assert!(Mlp::from_params(&[4, 8, 1], vec![0.0; 3]).is_err());
    }

    #[test]
    fn polyak_moves_geometrically() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let online = Mlp::new(&[3, 4, 1], OutputInit::FanIn, &mut rng).unwrap();
        let mut target = Mlp::new(&[3, 4, 1], OutputInit::FanIn, &mut rng).unwrap();
        let gap0: Vec<f64> = target.params().iter().zip(online.params()).map(|(t, o)| t - o).collect();
        let k = 50;
        for _ in 0..k {
            target.polyak_from(&online, 0.995);
        }
        let factor = 0.995f64.powi(k);
        for (i, (t, o)) in target.params().iter().zip(online.params()).enumerate() {
            assert!(((t - o) - factor * gap0[i]).abs() < 1e-12);
        }
    }
}
