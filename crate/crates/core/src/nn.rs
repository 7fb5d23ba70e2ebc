//! Pointwise networks shared by the operator models.

use crate::autodiff::{Param, Tape, Var};
use crate::error::{Error, Result};
use crate::noise::NoiseRng;
use crate::tensor::{GridFunction, C64};

/// Parameter slots of an affine channel map `W x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub w: usize,
    pub b: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Affine {
    /// Appends `name.w` (cout x cin) and `name.b` with entries uniform in
    /// `(-1/sqrt(cin), 1/sqrt(cin))`.
    pub fn init(params: &mut Vec<Param>, name: &str, cin: usize, cout: usize, rng: &mut NoiseRng) -> Self {
        let bound = 1.0 / (cin as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| bound * (2.0 * rng.uniform() - 1.0)).collect() };
        let w = GridFunction::real(&[cout, cin], draw(cout * cin)).expect("finite init");
        let b = GridFunction::real(&[cout], draw(cout)).expect("finite init");
        params.push(Param::new(format!("{name}.w"), w));
        params.push(Param::new(format!("{name}.b"), b));
        Self {
            w: params.len() - 2,
            b: params.len() - 1,
            cin,
            cout,
        }
    }

    /// Looks up `name.w` / `name.b` in a parameter list.
    pub fn find(params: &[Param], name: &str) -> Result<Self> {
        let w = index_of(params, &format!("{name}.w"))?;
        let b = index_of(params, &format!("{name}.b"))?;
        let shape = params[w].value.shape();
        if shape.len() != 2 || params[b].value.shape() != [shape[0]] {
            return Err(Error::Format(format!("parameter {name} has inconsistent shapes")));
        }
        Ok(Self {
            w,
            b,
            cin: shape[1],
            cout: shape[0],
        })
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        tape.channel_linear(x, vars[self.w], Some(vars[self.b]))
    }

    /// Direct evaluation on one channel vector.
    pub fn eval_point(&self, params: &[Param], x: &[f64]) -> Vec<f64> {
        let (w, b) = (params[self.w].value.re(), params[self.b].value.re());
        (0..self.cout)
            .map(|o| b[o] + (0..self.cin).map(|i| w[o * self.cin + i] * x[i]).sum::<f64>())
            .collect()
    }
}

/// Two affine maps with a tanh in between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TwoLayer {
    pub first: Affine,
    pub second: Affine,
}

impl TwoLayer {
    pub fn init(params: &mut Vec<Param>, name: &str, cin: usize, width: usize, cout: usize, rng: &mut NoiseRng) -> Self {
        Self {
            first: Affine::init(params, &format!("{name}.0"), cin, width, rng),
            second: Affine::init(params, &format!("{name}.1"), width, cout, rng),
        }
    }

    pub fn find(params: &[Param], name: &str) -> Result<Self> {
        Ok(Self {
            first: Affine::find(params, &format!("{name}.0"))?,
            second: Affine::find(params, &format!("{name}.1"))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let h = self.first.apply(tape, vars, x)?;
        let h = tape.tanh(h)?;
        self.second.apply(tape, vars, h)
    }

    pub fn eval_point(&self, params: &[Param], x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.first.eval_point(params, x).iter().map(|v| v.tanh()).collect();
        self.second.eval_point(params, &h)
    }
}

/// Complex kernel of shape `(modes..., d, d)` with entries
/// `scale * (u1 + i u2)`, `u ~ U(0, 1)`.
pub fn init_kernel(modes: &[usize], d: usize, rng: &mut NoiseRng) -> GridFunction {
    let mut shape = modes.to_vec();
    shape.extend([d, d]);
    let n: usize = shape.iter().product();
    let scale = 1.0 / (d * d) as f64;
    let data = (0..n)
        .map(|_| C64::new(rng.uniform(), rng.uniform()) * scale)
        .collect();
    GridFunction::complex(&shape, data).expect("finite init")
}

pub fn index_of(params: &[Param], name: &str) -> Result<usize> {
    params
        .iter()
        .position(|p| p.name == name)
        .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
}

/// Records every parameter on the tape; `vars[i]` belongs to `params[i]`.
pub fn bind(tape: &mut Tape, params: &[Param]) -> Vec<Var> {
    params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect()
}

/// Largest singular value of a complex `d x d` matrix (row-major), by power
/// iteration on `A^H A`.
pub fn spectral_norm(a: &[C64], d: usize) -> f64 {
    let mut v = vec![C64::new(1.0, 0.0); d];
    let mut sigma2 = 0.0;
    for _ in 0..200 {
        let av: Vec<C64> = (0..d).map(|i| (0..d).map(|j| a[i * d + j] * v[j]).sum()).collect();
        let w: Vec<C64> = (0..d).map(|j| (0..d).map(|i| a[i * d + j].conj() * av[i]).sum()).collect();
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let vn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        sigma2 = norm / vn;
        v = w.iter().map(|z| z / norm).collect();
    }
    sigma2.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_pointwise_evaluation() {
        let mut params = Vec::new();
        let mut rng = NoiseRng::new(1, 0);
        let net = TwoLayer::init(&mut params, "f", 3, 5, 2, &mut rng);
        let x = GridFunction::from_fn(&[2, 3, 4], |i| (i[0] + 2 * i[1]) as f64 * 0.1 - 0.3 * i[2] as f64);
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &params);
        let xv = tape.constant(x.clone());
        let y = net.apply(&mut tape, &vars, xv).unwrap();
        let y = tape.value(y);
        for b in 0..2 {
            for p in 0..4 {
                let point: Vec<f64> = (0..3).map(|c| x.re()[(b * 3 + c) * 4 + p]).collect();
                let expect = net.eval_point(&params, &point);
                for o in 0..2 {
                    assert!((y.re()[(b * 2 + o) * 4 + p] - expect[o]).abs() < 1e-14);
                }
            }
        }
        assert_eq!(TwoLayer::find(&params, "f").unwrap(), net);
    }

    #[test]
    fn spectral_norm_of_diagonal_and_rotation() {
        let d = vec![C64::new(0.0, 3.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0)];
        assert!((spectral_norm(&d, 2) - 3.0).abs() < 1e-10);
        let (c, s) = (0.6, 0.8);
        let r = vec![C64::new(c, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0), C64::new(c, 0.0)];
        assert!((spectral_norm(&r, 2) - 1.0).abs() < 1e-10);
    }
}
