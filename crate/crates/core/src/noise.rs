//! Driving noises: space-time white noise and a spatially coloured
//! Q-Wiener process on the 2-torus.
//!
//! All randomness comes from [`NoiseRng`]: ChaCha20 keyed by the 64-bit seed
//! (little-endian in the first key bytes, zero elsewhere) with the sample
//! index as stream id, and Box-Muller for normals. The identifier
//! [`RNG_ALGORITHM`] is written into dataset headers.

use std::f64::consts::PI;

use rand_chacha::ChaCha20Rng;
use rand_core::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::tensor::fft::{mode_number, transform_axis};
use crate::tensor::{AxisKind, GridFunction, C64};

/// Name of the generator recorded alongside seeds.
pub const RNG_ALGORITHM: &str = "chacha20-le64key-boxmuller";

/// Counter-based normal generator. One independent stream per sample.
#[derive(Clone, Debug)]
pub struct NoiseRng {
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl NoiseRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner, spare: None }
    }

    /// Uniform on `(0, 1]` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let theta = 2.0 * PI * self.uniform();
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    White,
    QWiener { alpha: f64 },
}

impl NoiseKind {
    pub fn label(&self) -> String {
        match self {
            NoiseKind::White => "white".to_string(),
            NoiseKind::QWiener { alpha } => format!("q_wiener({alpha})"),
        }
    }
}

/// Sampled noise increments of shape `(batch, time_steps, space...)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub increments: GridFunction,
    pub dt: f64,
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoisePath {
    pub fn batch(&self) -> usize {
        self.increments.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.increments.shape()[1]
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.increments.shape()[2..]
    }

    /// Increments of batch entry `b`, shape `(time_steps, space...)`.
    pub fn sample(&self, b: usize) -> &[f64] {
        let per: usize = self.increments.shape()[1..].iter().product();
        &self.increments.re()[b * per..(b + 1) * per]
    }

    /// Grid-scale rate `dW / dt` laid out as a one-channel model field
    /// `(batch, 1, time_steps + 1, space...)`. Increment `i` covers
    /// `[t_i, t_{i+1})`, so the final time slot is zero.
    pub fn rate_field(&self) -> GridFunction {
        let (b, steps) = (self.batch(), self.steps());
        let slab: usize = self.spatial_shape().iter().product();
        let mut data = vec![0.0; b * (steps + 1) * slab];
        for bi in 0..b {
            let src = self.sample(bi);
            let dst = &mut data[bi * (steps + 1) * slab..];
            for (d, s) in dst[..steps * slab].iter_mut().zip(src) {
                *d = s / self.dt;
            }
        }
        GridFunction::field(
            b,
            1,
            steps + 1,
            self.spatial_shape(),
            self.dt * (steps + 1) as f64,
            data,
        )
        .expect("finite increments")
    }
}

fn check_dims(batch: usize, steps: usize, spatial: &[usize], dt: f64) -> Result<()> {
    if batch == 0 || steps == 0 || spatial.is_empty() || spatial.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "noise dimensions must be positive: batch {batch}, steps {steps}, space {spatial:?}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

fn increment_grid(batch: usize, steps: usize, spatial: &[usize], dt: f64, extents: &[f64], data: Vec<f64>) -> Result<GridFunction> {
    let mut shape = vec![batch, steps];
    shape.extend_from_slice(spatial);
    let mut kinds = vec![AxisKind::Batch, AxisKind::Time];
    kinds.extend(std::iter::repeat_n(AxisKind::Space, spatial.len()));
    let mut ext = vec![1.0, dt * steps as f64];
    ext.extend_from_slice(extents);
    GridFunction::real(&shape, data)?.with_axes(&kinds, &ext)
}

/// Space-time white noise: every cell increment is an independent
/// `N(0, dt / cell_volume)` draw, with `cell_volume` the product of grid
/// spacings `extent / n`.
pub fn sample_white_noise(
    seed: u64,
    batch: usize,
    time_steps: usize,
    dt: f64,
    spatial_shape: &[usize],
    extents: &[f64],
) -> Result<NoisePath> {
    sample_white_noise_from(seed, 0, batch, time_steps, dt, spatial_shape, extents)
}

/// [`sample_white_noise`] with batch entry `b` drawn from stream
/// `first_stream + b`.
pub fn sample_white_noise_from(
    seed: u64,
    first_stream: u64,
    batch: usize,
    time_steps: usize,
    dt: f64,
    spatial_shape: &[usize],
    extents: &[f64],
) -> Result<NoisePath> {
    check_dims(batch, time_steps, spatial_shape, dt)?;
    if extents.len() != spatial_shape.len() {
        return Err(Error::InvalidArgument("one extent per spatial axis required".into()));
    }
    let cell: f64 = extents.iter().zip(spatial_shape).map(|(e, &n)| e / n as f64).product();
    let sd = (dt / cell).sqrt();
    let per: usize = time_steps * spatial_shape.iter().product::<usize>();
    let mut data = Vec::with_capacity(batch * per);
    for b in 0..batch {
        let mut rng = NoiseRng::new(seed, first_stream + b as u64);
        data.extend((0..per).map(|_| sd * rng.normal()));
    }
    Ok(NoisePath {
        increments: increment_grid(batch, time_steps, spatial_shape, dt, extents, data)?,
        dt,
        kind: NoiseKind::White,
        seed,
    })
}

/// Eigenvalue `q_k = exp(-alpha |k|^2)` of the covariance operator, with
/// `|k|` the integer mode radius `sqrt(k1^2 + k2^2)`. Against a physical
/// wavenumber `2 pi k` this is `exp(-alpha c |2 pi k|^2)` with
/// `c = 1 / (4 pi^2)`. This is the one place the normalization lives.
pub fn q_eigenvalue(alpha: f64, k1: i64, k2: i64) -> f64 {
    (-alpha * (k1 * k1 + k2 * k2) as f64).exp()
}

/// Q-Wiener increments on the unit 2-torus: per step, complex Gaussian
/// coefficients `sqrt(dt q_k) z_k` with `z_k ~ CN(0, 2)` are Hermitian
/// symmetrized, the mean mode is zeroed, and the field is synthesized as
/// `sum_k c_k exp(2 pi i <k, x>)`.
pub fn sample_q_wiener(
    seed: u64,
    batch: usize,
    time_steps: usize,
    dt: f64,
    grid: [usize; 2],
    alpha: f64,
) -> Result<NoisePath> {
    sample_q_wiener_from(seed, 0, batch, time_steps, dt, grid, alpha)
}

/// [`sample_q_wiener`] with batch entry `b` drawn from stream
/// `first_stream + b`.
pub fn sample_q_wiener_from(
    seed: u64,
    first_stream: u64,
    batch: usize,
    time_steps: usize,
    dt: f64,
    grid: [usize; 2],
    alpha: f64,
) -> Result<NoisePath> {
    check_dims(batch, time_steps, &grid, dt)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let [n1, n2] = grid;
    let slab = n1 * n2;
    let sqrt_q: Vec<f64> = (0..slab)
        .map(|j| (dt * q_eigenvalue(alpha, mode_number(j / n2, n1), mode_number(j % n2, n2))).sqrt())
        .collect();
    // index of -k for every k
    let neg: Vec<usize> = (0..slab)
        .map(|j| ((n1 - j / n2) % n1) * n2 + (n2 - j % n2) % n2)
        .collect();
    let mut data = Vec::with_capacity(batch * time_steps * slab);
    let mut raw = vec![C64::new(0.0, 0.0); slab];
    let mut sym = vec![C64::new(0.0, 0.0); slab];
    for b in 0..batch {
        let mut rng = NoiseRng::new(seed, first_stream + b as u64);
        for _ in 0..time_steps {
            for (j, z) in raw.iter_mut().enumerate() {
                *z = C64::new(rng.normal(), rng.normal()) * sqrt_q[j];
            }
            for j in 0..slab {
                sym[j] = (raw[j] + raw[neg[j]].conj()) * 0.5;
            }
            sym[0] = C64::new(0.0, 0.0);
            transform_axis(&mut sym, &[n1, n2], 0, true);
            transform_axis(&mut sym, &[n1, n2], 1, true);
            let residue = sym.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
            debug_assert!(residue < 1e-12, "imaginary residue {residue}");
            data.extend(sym.iter().map(|z| z.re));
        }
    }
    Ok(NoisePath {
        increments: increment_grid(batch, time_steps, &grid, dt, &[1.0, 1.0], data)?,
        dt,
        kind: NoiseKind::QWiener { alpha },
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fft::dft;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn white_noise_moments() {
        // 10 x 1000 x 100 = 10^6 cells
        let dt = 1e-3;
        let p = sample_white_noise(7, 10, 1000, dt, &[100], &[1.0]).unwrap();
        let target = dt / (1.0 / 100.0);
        let (m, v) = mean_var(p.increments.re());
        assert!(m.abs() < 4.0 * target.sqrt() / 1e3, "mean {m}");
        let ratio = v / target;
        assert!((0.99..=1.01).contains(&ratio), "variance ratio {ratio}");
    }

    #[test]
    fn white_noise_is_reproducible_and_rejects_empty_axes() {
        let a = sample_white_noise(3, 2, 5, 0.1, &[8], &[1.0]).unwrap();
        let b = sample_white_noise(3, 2, 5, 0.1, &[8], &[1.0]).unwrap();
        assert_eq!(a, b);
        let c = sample_white_noise(4, 2, 5, 0.1, &[8], &[1.0]).unwrap();
        assert_ne!(a.increments, c.increments);
        assert!(sample_white_noise(3, 0, 5, 0.1, &[8], &[1.0]).is_err());
        assert!(sample_white_noise(3, 1, 5, 0.1, &[0], &[1.0]).is_err());
        assert!(sample_white_noise(3, 1, 5, 0.0, &[8], &[1.0]).is_err());
    }

    #[test]
    fn doubling_dt_doubles_variance() {
        let a = sample_white_noise(11, 4, 500, 1e-3, &[64], &[1.0]).unwrap();
        let b = sample_white_noise(12, 4, 500, 2e-3, &[64], &[1.0]).unwrap();
        let r = mean_var(b.increments.re()).1 / mean_var(a.increments.re()).1;
        assert!((r - 2.0).abs() < 0.04, "ratio {r}");
    }

    #[test]
    fn batch_entries_are_uncorrelated() {
        let p = sample_white_noise(5, 2, 200, 1e-2, &[50], &[1.0]).unwrap();
        let (a, b) = (p.sample(0), p.sample(1));
        let n = a.len() as f64;
        let corr = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
            / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|y| y * y).sum::<f64>()).sqrt();
        assert!(corr.abs() < 4.0 / n.sqrt(), "corr {corr}");
    }

    #[test]
    fn q_wiener_rejects_bad_alpha() {
        assert!(sample_q_wiener(1, 1, 1, 1e-3, [8, 8], 0.0).is_err());
        assert!(sample_q_wiener(1, 1, 1, 1e-3, [8, 8], -1.0).is_err());
    }

    #[test]
    fn q_wiener_fields_are_mean_free_and_finite() {
        let p = sample_q_wiener(2, 1, 3, 1e-3, [64, 64], 0.005).unwrap();
        assert!(p.increments.check_finite("q-wiener").is_ok());
        for step in p.sample(0).chunks(64 * 64) {
            let mean = step.iter().sum::<f64>() / step.len() as f64;
            assert!(mean.abs() < 1e-15, "mean {mean}");
        }
    }

    #[test]
    fn q_wiener_mode_variance_ratio() {
        // Monte Carlo over 10^4 draws of an 8x8 field with a large alpha.
        let alpha = 0.25;
        let p = sample_q_wiener(9, 1, 10_000, 1.0, [8, 8], alpha).unwrap();
        let (mut v1, mut v3) = (0.0, 0.0);
        for step in p.sample(0).chunks(64) {
            let g = GridFunction::real(&[8, 8], step.to_vec()).unwrap();
            let s = dft(&g, &[0, 1]).unwrap();
            v1 += s.cx()[8].norm_sqr();
            v3 += s.cx()[3 * 8].norm_sqr();
        }
        let ratio = v3 / v1;
        let expect = (-alpha * 8.0).exp();
        assert!((ratio / expect - 1.0).abs() < 0.05, "ratio {ratio} vs {expect}");
    }

    #[test]
    fn rate_field_layout() {
        let p = sample_white_noise(1, 2, 3, 0.5, &[4], &[1.0]).unwrap();
        let r = p.rate_field();
        assert_eq!(r.shape(), &[2, 1, 4, 4]);
        assert_eq!(r.re()[4], p.sample(0)[4] / 0.5);
        assert!(r.re()[12..16].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stream_offsets_select_batch_entries() {
        let all = sample_white_noise(2, 3, 4, 0.1, &[8], &[1.0]).unwrap();
        let last = sample_white_noise_from(2, 2, 1, 4, 0.1, &[8], &[1.0]).unwrap();
        assert_eq!(all.sample(2), last.sample(0));
        let all = sample_q_wiener(2, 3, 2, 0.1, [8, 8], 0.1).unwrap();
        let mid = sample_q_wiener_from(2, 1, 1, 2, 0.1, [8, 8], 0.1).unwrap();
        assert_eq!(all.sample(1), mid.sample(0));
    }
}
