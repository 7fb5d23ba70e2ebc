//! Dynamic Phi^4_1 on the unit circle,
//! `du = (Laplacian u + 3u - u^3) dt + u dW`, with Ito multiplicative noise.
//!
//! Space uses the 3-point periodic finite-difference Laplacian. Each step
//! applies the explicit drift and noise increment, then propagates with the
//! exact exponential of the discrete Laplacian (diagonal in Fourier space):
//!
//! `u_{n+1} = exp(dt L_h) (u_n + dt f(u_n) + u_n dW_n)`
//!
//! The linear part is unconditionally stable, so `dt = 1e-3` on 128 points
//! is fine even though `dt / dx^2 > 16`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoisePath, NoiseRng};
use crate::tensor::fft::transform_axis;
use crate::tensor::{GridFunction, C64};

/// Reaction term of the equation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drift {
    /// `3u - u^3`
    #[default]
    Phi4,
    /// No reaction; leaves the stochastic heat equation.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Phi41Config {
    pub n_x: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Add the random perturbation `eta` to `x(1 - x)`.
    pub vary_u0: bool,
    pub eta_lambda: f64,
    pub drift: Drift,
    pub seed: u64,
    pub samples: usize,
}

impl Default for Phi41Config {
    fn default() -> Self {
        Self {
            n_x: 128,
            dt: 1e-3,
            t_end: 0.05,
            vary_u0: false,
            eta_lambda: 2.0,
            drift: Drift::Phi4,
            seed: 0,
            samples: 1000,
        }
    }
}

impl Phi41Config {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x < 4 {
            return Err(Error::Config(format!("n_x = {} must be at least 4", self.n_x)));
        }
        if !(self.dt > 0.0 && self.t_end > 0.0) {
            return Err(Error::Config("dt and t_end must be positive".into()));
        }
        let steps = self.t_end / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Config(format!(
                "t_end = {} is not a whole number of steps of {}",
                self.t_end, self.dt
            )));
        }
        Ok(())
    }

    /// Grid points `x_j = j / n_x` on the unit circle.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| j as f64 / self.n_x as f64).collect()
    }

    /// `x (1 - x)` on the grid. The endpoint kink is kept on the torus.
    pub fn base_u0(&self) -> Vec<f64> {
        self.grid().iter().map(|x| x * (1.0 - x)).collect()
    }
}

/// Random smooth perturbation
/// `0.1 * sum_{k=-10}^{10} a_k / (1 + k^2) * sin(k pi (x - 0.5) / lambda)`
/// evaluated at `xs` with `a_k ~ N(0, 1)`. Returns the field and the `a_k`.
pub fn eta_from_coefficients(coeffs: &[f64; 21], lambda: f64, xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            (-10i32..=10)
                .zip(coeffs)
                .map(|(k, a)| {
                    let k = k as f64;
                    0.1 * a / (1.0 + k * k) * (k * PI * (x - 0.5) / lambda).sin()
                })
                .sum()
        })
        .collect()
}

/// Draws the 21 coefficients from `NoiseRng(seed, stream)` and evaluates eta.
pub fn sample_eta(seed: u64, stream: u64, lambda: f64, xs: &[f64]) -> (GridFunction, [f64; 21]) {
    let mut rng = NoiseRng::new(seed, stream);
    let mut coeffs = [0.0; 21];
    coeffs.iter_mut().for_each(|a| *a = rng.normal());
    let data = eta_from_coefficients(&coeffs, lambda, xs);
    (
        GridFunction::real(&[xs.len()], data).expect("finite eta"),
        coeffs,
    )
}

/// Symbol of `exp(dt L_h)` for the periodic 3-point Laplacian.
fn propagator(n: usize, dt: f64) -> Vec<f64> {
    let h2 = (1.0 / n as f64).powi(2);
    (0..n)
        .map(|k| {
            let s = (PI * k as f64 / n as f64).sin();
            (-dt * 4.0 * s * s / h2).exp()
        })
        .collect()
}

/// Integrates one trajectory per noise sample. `u0` is `(batch, n_x)` or a
/// single `(n_x)` profile shared by the batch. Output has shape
/// `(batch, steps + 1, n_x)` and includes the initial condition.
pub fn solve_phi41(cfg: &Phi41Config, u0: &GridFunction, noise: &NoisePath) -> Result<GridFunction> {
    cfg.validate()?;
    let n = cfg.n_x;
    let steps = cfg.steps();
    if noise.kind != NoiseKind::White || noise.spatial_shape() != [n] || noise.steps() != steps {
        return Err(Error::Shape(format!(
            "noise {:?} ({}) does not match {} steps on {} points",
            noise.increments.shape(),
            noise.kind.label(),
            steps,
            n
        )));
    }
    if (noise.dt - cfg.dt).abs() > 1e-15 * cfg.dt.max(1.0) {
        return Err(Error::Shape(format!("noise dt {} differs from solver dt {}", noise.dt, cfg.dt)));
    }
    let batch = noise.batch();
    let shared = u0.shape() == [n];
    if !shared && u0.shape() != [batch, n] {
        return Err(Error::Shape(format!("initial condition {:?} for batch {batch}", u0.shape())));
    }
    let prop = propagator(n, cfg.dt);
    let mut out = Vec::with_capacity(batch * (steps + 1) * n);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for b in 0..batch {
        let mut u: Vec<f64> = if shared {
            u0.re().to_vec()
        } else {
            u0.re()[b * n..(b + 1) * n].to_vec()
        };
        out.extend_from_slice(&u);
        let dw = noise.sample(b);
        for step in 0..steps {
            let inc = &dw[step * n..(step + 1) * n];
            for (j, z) in buf.iter_mut().enumerate() {
                let v = u[j];
                let reaction = match cfg.drift {
                    Drift::Phi4 => 3.0 * v - v * v * v,
                    Drift::None => 0.0,
                };
                *z = C64::new(v + cfg.dt * reaction + v * inc[j], 0.0);
            }
            transform_axis(&mut buf, &[n], 0, false);
            buf.iter_mut().zip(&prop).for_each(|(z, p)| *z *= p);
            transform_axis(&mut buf, &[n], 0, true);
            for (v, z) in u.iter_mut().zip(&buf) {
                *v = z.re * scale;
            }
            if let Some(bad) = u.iter().find(|v| !v.is_finite() || v.abs() > 1e6) {
                return Err(Error::Diverged {
                    step: step + 1,
                    reason: format!("sample {b}: |u| reached {bad}"),
                });
            }
            out.extend_from_slice(&u);
        }
    }
    GridFunction::real(&[batch, steps + 1, n], out)
}
