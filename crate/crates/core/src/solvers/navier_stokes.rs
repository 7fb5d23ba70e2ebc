//! Vorticity form of 2-D incompressible Navier-Stokes on the unit torus,
//!
//! `dw = (nu Laplacian w - u . grad w + f) dt + sigma dW`,
//!
//! with `u = grad^perp psi` and `-Laplacian psi = w`. Pseudo-spectral in
//! space, Crank-Nicolson on the viscous term and explicit on the rest:
//!
//! `w_k <- (dt (f_k - N_k) + sigma dW_k + (1 - dt nu 2 pi^2 |k|^2) w_k)
//!        / (1 + dt nu 2 pi^2 |k|^2)`
//!
//! where `N_k` is the dealiased transform of `u . grad w`. Wavenumbers are
//! integers; the physical wavenumber is `2 pi k`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoisePath, NoiseRng};
use crate::tensor::fft::{mode_number, transform_axis};
use crate::tensor::{GridFunction, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsConfig {
    /// Points per side of the square grid.
    pub n: usize,
    pub dt: f64,
    pub nu: f64,
    /// Noise amplitude; ignored by deterministic runs.
    pub sigma: f64,
    /// Q-Wiener decay rate.
    pub alpha: f64,
    /// Include `f(x) = 0.1 (sin 2 pi (x+y) + cos 2 pi (x+y))`.
    pub forcing: bool,
    /// Solver steps per trajectory.
    pub steps: usize,
    /// Keep every `record_every`-th state.
    pub record_every: usize,
    pub trajectories: usize,
    /// Window length in recorded states; 0 keeps whole trajectories.
    pub window: usize,
    pub windows_per_trajectory: usize,
    pub seed: u64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            n: 64,
            dt: 1e-3,
            nu: 1e-4,
            sigma: 0.05,
            alpha: 0.005,
            forcing: true,
            steps: 15_000,
            record_every: 1,
            trajectories: 10,
            window: 500,
            windows_per_trajectory: 200,
            seed: 0,
        }
    }
}

impl NsConfig {
    /// Deterministic setting: `nu = 1e-5`, `T = 20`, one snapshot per
    /// unit time, 1000 trajectories.
    pub fn deterministic() -> Self {
        Self {
            dt: 1e-4,
            nu: 1e-5,
            sigma: 0.0,
            steps: 200_000,
            record_every: 10_000,
            trajectories: 1000,
            window: 0,
            windows_per_trajectory: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::Config(format!("grid size {} must be at least 4", self.n)));
        }
        if !(self.nu > 0.0 && self.dt > 0.0) {
            return Err(Error::Config("nu and dt must be positive".into()));
        }
        if self.steps == 0 || self.record_every == 0 || !self.steps.is_multiple_of(self.record_every) {
            return Err(Error::Config(format!(
                "steps {} must be a positive multiple of record_every {}",
                self.steps, self.record_every
            )));
        }
        if self.window > self.recorded_steps() {
            return Err(Error::Config(format!(
                "window {} exceeds the {} recorded steps",
                self.window,
                self.recorded_steps()
            )));
        }
        Ok(())
    }

    /// Number of recorded intervals; the trajectory holds one more state.
    pub fn recorded_steps(&self) -> usize {
        self.steps / self.record_every
    }
}

/// `f(x, y) = 0.1 (sin 2 pi (x + y) + cos 2 pi (x + y))` on the grid.
pub fn forcing_field(n: usize) -> Vec<f64> {
    (0..n * n)
        .map(|j| {
            let s = 2.0 * PI * ((j / n) as f64 + (j % n) as f64) / n as f64;
            0.1 * (s.sin() + s.cos())
        })
        .collect()
}

/// Covariance eigenvalue `3^{3/2} (4 pi^2 |k|^2 + 49)^{-3}` of the initial
/// vorticity law.
pub fn initial_eigenvalue(k1: i64, k2: i64) -> f64 {
    let k2sum = (k1 * k1 + k2 * k2) as f64;
    3f64.powf(1.5) * (4.0 * PI * PI * k2sum + 49.0).powi(-3)
}

/// Mean-free Gaussian field `w0 = sum_k sqrt(lambda_k) z_k e^{2 pi i k.x}`
/// with Hermitian-symmetrized standard complex `z_k`.
pub fn sample_initial_vorticity(seed: u64, stream: u64, n: usize) -> GridFunction {
    let slab = n * n;
    let mut rng = NoiseRng::new(seed, stream);
    let raw: Vec<C64> = (0..slab)
        .map(|j| {
            let s = initial_eigenvalue(mode_number(j / n, n), mode_number(j % n, n)).sqrt();
            C64::new(rng.normal(), rng.normal()) * s
        })
        .collect();
    let mut sym: Vec<C64> = (0..slab)
        .map(|j| {
            let neg = ((n - j / n) % n) * n + (n - j % n) % n;
            (raw[j] + raw[neg].conj()) * 0.5
        })
        .collect();
    sym[0] = C64::new(0.0, 0.0);
    transform_axis(&mut sym, &[n, n], 0, true);
    transform_axis(&mut sym, &[n, n], 1, true);
    GridFunction::real(&[n, n], sym.iter().map(|z| z.re).collect()).expect("finite field")
}

fn fft2(buf: &mut [C64], n: usize, inverse: bool) {
    transform_axis(buf, &[n, n], 0, inverse);
    transform_axis(buf, &[n, n], 1, inverse);
    if inverse {
        let s = 1.0 / (n * n) as f64;
        buf.iter_mut().for_each(|z| *z *= s);
    }
}

struct Spectral {
    n: usize,
    kx: Vec<f64>,
    ky: Vec<f64>,
    /// `1 / (4 pi^2 |k|^2)`, zero at the mean mode.
    inv_lap: Vec<f64>,
    keep: Vec<bool>,
    implicit: Vec<f64>,
    explicit: Vec<f64>,
}

impl Spectral {
    fn new(n: usize, nu: f64, dt: f64) -> Self {
        let slab = n * n;
        let (mut kx, mut ky) = (vec![0.0; slab], vec![0.0; slab]);
        let (mut inv_lap, mut keep) = (vec![0.0; slab], vec![false; slab]);
        let (mut implicit, mut explicit) = (vec![0.0; slab], vec![0.0; slab]);
        let cut = n as f64 / 3.0;
        for j in 0..slab {
            let (a, b) = (mode_number(j / n, n), mode_number(j % n, n));
            // derivative symbols vanish on the Nyquist line
            let nyq = |m: i64| n.is_multiple_of(2) && m == -(n as i64) / 2;
            kx[j] = if nyq(a) { 0.0 } else { 2.0 * PI * a as f64 };
            ky[j] = if nyq(b) { 0.0 } else { 2.0 * PI * b as f64 };
            let lap = 4.0 * PI * PI * (a * a + b * b) as f64;
            inv_lap[j] = if j == 0 { 0.0 } else { 1.0 / lap };
            keep[j] = (a.abs() as f64) <= cut && (b.abs() as f64) <= cut;
            implicit[j] = 1.0 / (1.0 + 0.5 * dt * nu * lap);
            explicit[j] = 1.0 - 0.5 * dt * nu * lap;
        }
        Self { n, kx, ky, inv_lap, keep, implicit, explicit }
    }

    /// Dealiased transform of `u . grad w` given `w_hat`.
    fn advection(&self, w_hat: &[C64], work: &mut [Vec<C64>; 4]) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        for j in 0..w_hat.len() {
            let psi = w_hat[j] * self.inv_lap[j];
            work[0][j] = i * self.ky[j] * psi;
            work[1][j] = -i * self.kx[j] * psi;
            work[2][j] = i * self.kx[j] * w_hat[j];
            work[3][j] = i * self.ky[j] * w_hat[j];
        }
        for w in work.iter_mut() {
            fft2(w, self.n, true);
        }
        let mut prod: Vec<C64> = (0..w_hat.len())
            .map(|j| C64::new(work[0][j].re * work[2][j].re + work[1][j].re * work[3][j].re, 0.0))
            .collect();
        fft2(&mut prod, self.n, false);
        for (p, &k) in prod.iter_mut().zip(&self.keep) {
            if !k {
                *p = C64::new(0.0, 0.0);
            }
        }
        prod[0] = C64::new(0.0, 0.0);
        prod
    }
}

/// Integrates each initial vorticity in `w0` (`(batch, n, n)` or `(n, n)`).
/// `noise` must be a Q-Wiener path with `cfg.steps` increments per sample,
/// or `None` for a deterministic run. Returns `(batch, recorded + 1, n, n)`.
pub fn solve_ns_vorticity(
    cfg: &NsConfig,
    w0: &GridFunction,
    noise: Option<&NoisePath>,
) -> Result<GridFunction> {
    cfg.validate()?;
    let n = cfg.n;
    let slab = n * n;
    let batch = match w0.shape() {
        [a, b] if *a == n && *b == n => 1,
        [bt, a, b] if *a == n && *b == n => *bt,
        s => return Err(Error::Shape(format!("initial vorticity {s:?} on a {n}x{n} grid"))),
    };
    if let Some(p) = noise {
        let ok = matches!(p.kind, NoiseKind::QWiener { .. })
            && p.batch() == batch
            && p.steps() == cfg.steps
            && p.spatial_shape() == [n, n]
            && (p.dt - cfg.dt).abs() <= 1e-15 * cfg.dt.max(1.0);
        if !ok {
            return Err(Error::Shape(format!(
                "noise {:?} ({}, dt {}) does not match {batch} x {} steps on {n}x{n}",
                p.increments.shape(),
                p.kind.label(),
                p.dt,
                cfg.steps
            )));
        }
    }
    let sp = Spectral::new(n, cfg.nu, cfg.dt);
    let mut f_hat: Vec<C64> = if cfg.forcing {
        forcing_field(n).into_iter().map(|v| C64::new(v, 0.0)).collect()
    } else {
        vec![C64::new(0.0, 0.0); slab]
    };
    fft2(&mut f_hat, n, false);
    f_hat[0] = C64::new(0.0, 0.0);

    let saved = cfg.recorded_steps() + 1;
    let mut out = Vec::with_capacity(batch * saved * slab);
    let mut work: [Vec<C64>; 4] = std::array::from_fn(|_| vec![C64::new(0.0, 0.0); slab]);
    let mut dw_hat = vec![C64::new(0.0, 0.0); slab];
    let mut phys = vec![C64::new(0.0, 0.0); slab];
    for b in 0..batch {
        let start = &w0.re()[b * slab..(b + 1) * slab];
        out.extend_from_slice(start);
        let mut w_hat: Vec<C64> = start.iter().map(|&v| C64::new(v, 0.0)).collect();
        fft2(&mut w_hat, n, false);
        for step in 0..cfg.steps {
            let adv = sp.advection(&w_hat, &mut work);
            let stochastic = match noise {
                Some(p) => {
                    let inc = &p.sample(b)[step * slab..(step + 1) * slab];
                    dw_hat.iter_mut().zip(inc).for_each(|(z, &v)| *z = C64::new(v, 0.0));
                    fft2(&mut dw_hat, n, false);
                    dw_hat[0] = C64::new(0.0, 0.0);
                    true
                }
                None => false,
            };
            for j in 1..slab {
                let mut num = (f_hat[j] - adv[j]) * cfg.dt + w_hat[j] * sp.explicit[j];
                if stochastic {
                    num += dw_hat[j] * cfg.sigma;
                }
                w_hat[j] = num * sp.implicit[j];
            }
            if (step + 1) % cfg.record_every == 0 {
                phys.copy_from_slice(&w_hat);
                fft2(&mut phys, n, true);
                if let Some(bad) = phys.iter().map(|z| z.re).find(|v| !v.is_finite() || v.abs() > 1e6) {
                    return Err(Error::Diverged {
                        step: step + 1,
                        reason: format!("trajectory {b}: |w| reached {bad}"),
                    });
                }
                out.extend(phys.iter().map(|z| z.re));
            }
        }
    }
    GridFunction::real(&[batch, saved, n, n], out)
}
