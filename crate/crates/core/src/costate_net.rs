//! Feed-forward costate estimator `p = mu(x, u; theta)` with hand-derived
//! Jacobians.
//!
//! `theta` is packed as `[W1 (h x in, row-major) | c1 (h) | W2 (n x h, row-major) | c2 (n)]`
//! where `in = n + d_u` and the network input is `z = (x, u)`.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::state_model::{Activation, Vector};

pub type Matrix = DMatrix<f64>;

/// Anything that maps a state (and optionally an input sample) to a costate
/// estimate and exposes its Jacobians.
pub trait CostateEstimator {
    fn state_dim(&self) -> usize;
    fn num_params(&self) -> usize;
    fn params(&self) -> &Vector;
    fn set_params(&mut self, theta: Vector) -> Result<()>;

    fn forward(&self, x: &Vector, u: &[f64]) -> Result<Vector>;
    /// `d mu / d x`, `n x n`.
    fn jacobian_x(&self, x: &Vector, u: &[f64]) -> Result<Matrix>;
    /// `d mu / d theta`, `n x M`.
    fn jacobian_theta(&self, x: &Vector, u: &[f64]) -> Result<Matrix>;
}

/// Shape of the one-hidden-layer costate net.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostateArch {
    pub state_dim: usize,
    /// Width of the input-signal slice fed alongside the state (0 = state only).
    pub signal_dim: usize,
    pub hidden_width: usize,
    pub hidden: Activation,
}

impl CostateArch {
    pub fn input_dim(&self) -> usize {
        self.state_dim + self.signal_dim
    }

    pub fn num_params(&self) -> usize {
        let h = self.hidden_width;
        h * self.input_dim() + h + self.state_dim * h + self.state_dim
    }

    fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.hidden_width == 0 {
            return Err(Error::Config(
                "costate net needs positive state_dim and hidden_width".into(),
            ));
        }
        Ok(())
    }
}

/// Unpacked parameters of the costate net.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateParams {
    pub w1: Matrix,
    pub c1: Vector,
    pub w2: Matrix,
    pub c2: Vector,
}

impl CostateParams {
    pub fn unpack(arch: &CostateArch, theta: &[f64]) -> Result<Self> {
        check_len("costate theta", arch.num_params(), theta.len())?;
        let (h, i, n) = (arch.hidden_width, arch.input_dim(), arch.state_dim);
        let (w1, rest) = theta.split_at(h * i);
        let (c1, rest) = rest.split_at(h);
        let (w2, c2) = rest.split_at(n * h);
        Ok(Self {
            w1: Matrix::from_row_slice(h, i, w1),
            c1: Vector::from_column_slice(c1),
            w2: Matrix::from_row_slice(n, h, w2),
            c2: Vector::from_column_slice(c2),
        })
    }

    pub fn pack(&self) -> Vector {
        let row_major = |m: &Matrix| m.transpose().as_slice().to_vec();
        let mut v = row_major(&self.w1);
        v.extend_from_slice(self.c1.as_slice());
        v.extend(row_major(&self.w2));
        v.extend_from_slice(self.c2.as_slice());
        Vector::from_vec(v)
    }
}

/// How the costate net is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostateInit {
    /// Multiplier on `1/sqrt(fan_in)` for the uniform range.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub zero_biases: bool,
}

fn one() -> f64 {
    1.0
}

impl Default for CostateInit {
    fn default() -> Self {
        Self {
            scale: 1.0,
            zero_biases: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostateNet {
    arch: CostateArch,
    theta: Vector,
}

struct Hidden {
    z: Vec<f64>,
    pre: Vector,
    act: Vector,
    deriv: Vector,
}

impl CostateNet {
    pub fn new(arch: CostateArch, theta: Vector) -> Result<Self> {
        arch.validate()?;
        check_len("costate theta", arch.num_params(), theta.len())?;
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: CostateArch) -> Result<Self> {
        Self::new(arch, Vector::zeros(arch.num_params()))
    }

    /// Uniform `[-s, s]` per layer with `s = scale / sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(arch: CostateArch, init: CostateInit, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (h, i, n) = (arch.hidden_width, arch.input_dim(), arch.state_dim);
        let s1 = init.scale / (i.max(1) as f64).sqrt();
        let s2 = init.scale / (h as f64).sqrt();
        let mut sample = |s: f64, len: usize, zero: bool| -> Vec<f64> {
            (0..len)
                .map(|_| if zero || s == 0.0 { 0.0 } else { rng.gen_range(-s..=s) })
                .collect()
        };
        let mut theta = sample(s1, h * i, false);
        theta.extend(sample(s1, h, init.zero_biases));
        theta.extend(sample(s2, n * h, false));
        theta.extend(sample(s2, n, init.zero_biases));
        Self::new(arch, Vector::from_vec(theta))
    }

    pub fn arch(&self) -> &CostateArch {
        &self.arch
    }

    pub fn unpack(&self) -> CostateParams {
        CostateParams::unpack(&self.arch, self.theta.as_slice())
            .expect("theta length is checked on construction")
    }

    fn input(&self, x: &Vector, u: &[f64]) -> Result<Vec<f64>> {
        check_len("costate input x", self.arch.state_dim, x.len())?;
        let mut z = x.as_slice().to_vec();
        if self.arch.signal_dim > 0 {
            check_len("costate input u", self.arch.signal_dim, u.len())?;
            z.extend_from_slice(u);
        }
        Ok(z)
    }

    fn hidden(&self, params: &CostateParams, x: &Vector, u: &[f64]) -> Result<Hidden> {
        let z = self.input(x, u)?;
        let pre = &params.w1 * Vector::from_column_slice(&z) + &params.c1;
        let act = pre.map(|a| self.arch.hidden.eval(a));
        let deriv = pre.map(|a| self.arch.hidden.derivative(a));
        Ok(Hidden { z, pre, act, deriv })
    }

    /// Hidden pre-activations; used to keep relu Jacobian checks off kinks.
    pub fn pre_activations(&self, x: &Vector, u: &[f64]) -> Result<Vector> {
        Ok(self.hidden(&self.unpack(), x, u)?.pre)
    }

    /// Writes theta as one value per line under a layout header.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let a = &self.arch;
        writeln!(
            out,
            "# costate-theta v1 state_dim={} signal_dim={} hidden_width={} hidden={}",
            a.state_dim,
            a.signal_dim,
            a.hidden_width,
            a.hidden.name()
        )?;
        for v in self.theta.iter() {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_snapshot(f)
    }

    pub fn read_snapshot<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty theta snapshot".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("#") || fields.next() != Some("costate-theta") || fields.next() != Some("v1") {
            return Err(Error::Config(format!("unrecognised snapshot header `{header}`")));
        }
        let mut state_dim = None;
        let mut signal_dim = None;
        let mut hidden_width = None;
        let mut hidden = None;
        for kv in fields {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad header field `{kv}`")))?;
            let parse = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad header value `{kv}`")))
            };
            match k {
                "state_dim" => state_dim = Some(parse(v)?),
                "signal_dim" => signal_dim = Some(parse(v)?),
                "hidden_width" => hidden_width = Some(parse(v)?),
                "hidden" => hidden = Some(v.parse::<Activation>()?),
                _ => return Err(Error::Config(format!("unknown header field `{k}`"))),
            }
        }
        let missing = || Error::Config("incomplete snapshot header".into());
        let arch = CostateArch {
            state_dim: state_dim.ok_or_else(missing)?,
            signal_dim: signal_dim.ok_or_else(missing)?,
            hidden_width: hidden_width.ok_or_else(missing)?,
            hidden: hidden.ok_or_else(missing)?,
        };
        let mut theta = Vec::with_capacity(arch.num_params());
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            theta.push(
                t.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad theta value `{t}`")))?,
            );
        }
        Self::new(arch, Vector::from_vec(theta))
    }
}

impl CostateEstimator for CostateNet {
    fn state_dim(&self) -> usize {
        self.arch.state_dim
    }

    fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    fn params(&self) -> &Vector {
        &self.theta
    }

    fn set_params(&mut self, theta: Vector) -> Result<()> {
        check_len("costate theta", self.arch.num_params(), theta.len())?;
        self.theta = theta;
        Ok(())
    }

    fn forward(&self, x: &Vector, u: &[f64]) -> Result<Vector> {
        let params = self.unpack();
        let hid = self.hidden(&params, x, u)?;
        Ok(&params.w2 * &hid.act + &params.c2)
    }

    fn jacobian_x(&self, x: &Vector, u: &[f64]) -> Result<Matrix> {
        let params = self.unpack();
        let hid = self.hidden(&params, x, u)?;
        let n = self.arch.state_dim;
        // W2 * diag(sigma') * W1[:, :n]
        let mut scaled = params.w1.columns(0, n).into_owned();
        for (mut row, d) in scaled.row_iter_mut().zip(hid.deriv.iter()) {
            row *= *d;
        }
        Ok(&params.w2 * scaled)
    }

    fn jacobian_theta(&self, x: &Vector, u: &[f64]) -> Result<Matrix> {
        let params = self.unpack();
        let hid = self.hidden(&params, x, u)?;
        let (h, i, n) = (self.arch.hidden_width, self.arch.input_dim(), self.arch.state_dim);
        let mut jac = Matrix::zeros(n, self.arch.num_params());
        let c1_off = h * i;
        let w2_off = c1_off + h;
        let c2_off = w2_off + n * h;
        for o in 0..n {
            for k in 0..h {
                // d p_o / d c1_k = W2[o,k] sigma'(a_k)
                let back = params.w2[(o, k)] * hid.deriv[k];
                if back != 0.0 {
                    for (j, zj) in hid.z.iter().enumerate() {
                        jac[(o, k * i + j)] = back * zj;
                    }
                    jac[(o, c1_off + k)] = back;
                }
                jac[(o, w2_off + o * h + k)] = hid.act[k];
            }
            jac[(o, c2_off + o)] = 1.0;
        }
        Ok(jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch(n: usize, d: usize, h: usize, act: Activation) -> CostateArch {
        CostateArch {
            state_dim: n,
            signal_dim: d,
            hidden_width: h,
            hidden: act,
        }
    }

    #[test]
    fn param_count() {
        let a = arch(8, 0, 20, Activation::Relu);
        assert_eq!(a.num_params(), 20 * 8 + 20 + 8 * 20 + 8);
        let b = arch(10, 1, 20, Activation::Tanh);
        assert_eq!(b.num_params(), 20 * 11 + 20 + 10 * 20 + 10);
    }

    #[test]
    fn zero_theta_gives_zero_costate_and_jacobians() {
        let net = CostateNet::zeros(arch(3, 0, 4, Activation::Tanh)).unwrap();
        let x = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        assert_eq!(net.forward(&x, &[]).unwrap(), Vector::zeros(3));
        assert_eq!(net.jacobian_x(&x, &[]).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn scalar_composition_by_hand() {
        // W1 = 2, c1 = 0, W2 = 3, c2 = 1
        let net = CostateNet::new(
            arch(1, 0, 1, Activation::Linear),
            Vector::from_vec(vec![2.0, 0.0, 3.0, 1.0]),
        )
        .unwrap();
        let p = net.forward(&Vector::from_vec(vec![0.5]), &[]).unwrap();
        assert_eq!(p[0], 4.0);
    }

    #[test]
    fn linear_hidden_jacobian_is_w2_w1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = arch(3, 2, 5, Activation::Linear);
        let net = CostateNet::random(a, CostateInit::default(), &mut rng).unwrap();
        let p = net.unpack();
        let expected = &p.w2 * p.w1.columns(0, 3);
        for x in [[0.1, 0.2, 0.3], [-4.0, 1.0, 9.0]] {
            let j = net.jacobian_x(&Vector::from_row_slice(&x), &[0.5, -0.5]).unwrap();
            assert_relative_eq!(j, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn output_bias_block_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = arch(4, 0, 6, Activation::Tanh);
        let net = CostateNet::random(a, CostateInit::default(), &mut rng).unwrap();
        let j = net
            .jacobian_theta(&Vector::from_vec(vec![0.1, 0.2, -0.3, 0.4]), &[])
            .unwrap();
        let off = a.num_params() - 4;
        assert_eq!(j.columns(off, 4).into_owned(), Matrix::identity(4, 4));
    }

    #[test]
    fn zero_input_tanh_kills_w2_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = arch(3, 0, 5, Activation::Tanh);
        let init = CostateInit {
            scale: 1.0,
            zero_biases: true,
        };
        let net = CostateNet::random(a, init, &mut rng).unwrap();
        let j = net.jacobian_theta(&Vector::zeros(3), &[]).unwrap();
        let w2_off = 5 * 3 + 5;
        assert!(j.columns(w2_off, 3 * 5).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_signal_is_required_when_fed() {
        let net = CostateNet::zeros(arch(2, 1, 3, Activation::Tanh)).unwrap();
        let x = Vector::zeros(2);
        assert!(net.forward(&x, &[]).is_err());
        assert!(net.forward(&x, &[0.2]).is_ok());
        assert!(net.forward(&Vector::zeros(3), &[0.2]).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = CostateNet::random(arch(3, 1, 4, Activation::Relu), CostateInit::default(), &mut rng)
            .unwrap();
        let mut buf = Vec::new();
        net.write_snapshot(&mut buf).unwrap();
        assert!(buf.starts_with(b"# costate-theta v1 "));
        let back = CostateNet::read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, net);
        assert!(CostateNet::read_snapshot(&b"garbage\n1.0\n"[..]).is_err());
    }

    #[test]
    fn init_range_respects_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = arch(8, 0, 20, Activation::Relu);
        let net = CostateNet::random(a, CostateInit::default(), &mut rng).unwrap();
        let p = net.unpack();
        let s1 = 1.0 / 8f64.sqrt();
        let s2 = 1.0 / 20f64.sqrt();
        assert!(p.w1.iter().all(|v| v.abs() <= s1));
        assert!(p.w2.iter().all(|v| v.abs() <= s2));
    }
}
