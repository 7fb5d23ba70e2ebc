//! Discrete Fourier transforms over selected axes of a [`GridFunction`].
//!
//! Conventions, used consistently by every caller in the crate:
//!
//! * forward: `g[k] = sum_x f[x] exp(-2 pi i x k / N)` (no normalization)
//! * inverse: `f[x] = (1/N) sum_k g[k] exp(+2 pi i x k / N)`
//! * index `j` of a length-`N` spectrum holds mode `k = j` for
//!   `j < ceil(N/2)` and `k = j - N` otherwise.
//!
//! Any length is supported; plans come from `rustfft`, which switches to
//! mixed-radix or Bluestein algorithms as the length requires.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::{AxisKind, GridFunction, Scalars, C64};
use crate::error::{Error, Result};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

pub(crate) fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let (planner, cache) = &mut *p.borrow_mut();
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Signed mode number stored at spectrum index `j` of a length-`n` axis.
pub fn mode_number(j: usize, n: usize) -> i64 {
    if j < n.div_ceil(2) {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Full-spectrum index of compact index `j` when `cutoff` modes are kept on
/// each side of a length-`n` axis.
pub(crate) fn retained_index(j: usize, cutoff: usize, n: usize) -> usize {
    if j < cutoff {
        j
    } else {
        n - 2 * cutoff + j
    }
}

/// Unnormalized transform of a row-major buffer along one axis.
pub(crate) fn transform_axis(buf: &mut [C64], shape: &[usize], axis: usize, inverse: bool) {
    let n = shape[axis];
    if n <= 1 || buf.is_empty() {
        return;
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let fft = plan(n, inverse);
    if inner == 1 {
        fft.process(buf);
        return;
    }
    let block = n * inner;
    let mut scratch = vec![C64::new(0.0, 0.0); block];
    for chunk in buf.chunks_exact_mut(block) {
        for j in 0..n {
            for i in 0..inner {
                scratch[i * n + j] = chunk[j * inner + i];
            }
        }
        fft.process(&mut scratch);
        for j in 0..n {
            for i in 0..inner {
                chunk[j * inner + i] = scratch[i * n + j];
            }
        }
    }
}

fn validate_axes(f: &GridFunction, axes: &[usize]) -> Result<()> {
    for (i, &a) in axes.iter().enumerate() {
        if a >= f.rank() {
            return Err(Error::InvalidAxis {
                axis: a,
                rank: f.rank(),
            });
        }
        if axes[..i].contains(&a) {
            return Err(Error::InvalidArgument(format!("axis {a} listed twice")));
        }
        if f.shape()[a] == 0 {
            return Err(Error::Shape(format!("axis {a} has length zero")));
        }
    }
    Ok(())
}

/// Forward DFT over `axes`; other axes are untouched. Always returns a
/// complex grid function.
pub fn dft(f: &GridFunction, axes: &[usize]) -> Result<GridFunction> {
    validate_axes(f, axes)?;
    f.check_finite("dft input")?;
    let mut out = f.to_complex();
    let shape = out.shape().to_vec();
    for &a in axes {
        transform_axis(out.cx_mut(), &shape, a, false);
    }
    Ok(out)
}

/// Inverse DFT over `axes` with `1/N` per transformed axis, so that
/// `idft(dft(f)) == f`.
pub fn idft(g: &GridFunction, axes: &[usize]) -> Result<GridFunction> {
    validate_axes(g, axes)?;
    g.check_finite("idft input")?;
    let mut out = g.to_complex();
    let shape = out.shape().to_vec();
    let mut norm = 1.0;
    for &a in axes {
        transform_axis(out.cx_mut(), &shape, a, true);
        norm *= shape[a] as f64;
    }
    let scale = 1.0 / norm;
    out.cx_mut().iter_mut().for_each(|z| *z *= scale);
    Ok(out)
}

/// Integer mode numbers and angular factors `2 pi k / extent` per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    pub modes: Vec<Vec<i64>>,
    pub angular: Vec<Vec<f64>>,
}

impl FrequencyGrid {
    pub fn new(lens: &[usize], extents: &[f64]) -> Self {
        let modes: Vec<Vec<i64>> = lens
            .iter()
            .map(|&n| (0..n).map(|j| mode_number(j, n)).collect())
            .collect();
        let angular = modes
            .iter()
            .zip(extents)
            .map(|(ks, &e)| ks.iter().map(|&k| 2.0 * PI * k as f64 / e).collect())
            .collect();
        Self { modes, angular }
    }
}

fn check_cutoffs(g: &GridFunction, axes: &[usize], cutoffs: &[usize]) -> Result<()> {
    if axes.len() != cutoffs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} axes but {} cutoffs",
            axes.len(),
            cutoffs.len()
        )));
    }
    validate_axes(g, axes)?;
    for (&a, &c) in axes.iter().zip(cutoffs) {
        let len = g.shape()[a];
        if 2 * c > len {
            return Err(Error::Cutoff {
                axis: a,
                cutoff: c,
                len,
            });
        }
    }
    Ok(())
}

/// Keeps the `2 * cutoff` lowest modes on each listed axis (first `cutoff`
/// and last `cutoff` entries in FFT ordering) and drops the rest, returning
/// the compact block.
pub fn truncate_modes(g: &GridFunction, axes: &[usize], cutoffs: &[usize]) -> Result<GridFunction> {
    check_cutoffs(g, axes, cutoffs)?;
    let src_shape = g.shape().to_vec();
    let mut dst_shape = src_shape.clone();
    for (&a, &c) in axes.iter().zip(cutoffs) {
        dst_shape[a] = 2 * c;
    }
    let map = |d: &[usize]| -> Vec<usize> {
        let mut s = d.to_vec();
        for (&a, &c) in axes.iter().zip(cutoffs) {
            s[a] = retained_index(d[a], c, src_shape[a]);
        }
        s
    };
    let src = g.to_complex();
    let src_strides = super::strides(&src_shape);
    let out = gather(&dst_shape, |d| {
        let s = map(d);
        src.cx()[s.iter().zip(&src_strides).map(|(i, st)| i * st).sum::<usize>()]
    });
    Ok(GridFunction {
        data: Scalars::Complex(out),
        shape: dst_shape,
        kinds: g.kinds.clone(),
        extents: g.extents.clone(),
    })
}

/// Embeds a compact block of retained modes into spectra of length
/// `targets` along `axes`, zero elsewhere. Coefficients are copied as-is:
/// resampling through `idft` therefore needs a factor `target / source`
/// per padded axis.
pub fn pad_modes(block: &GridFunction, axes: &[usize], targets: &[usize]) -> Result<GridFunction> {
    if axes.len() != targets.len() {
        return Err(Error::InvalidArgument("axes and targets differ in length".into()));
    }
    validate_axes(block, axes)?;
    let src_shape = block.shape().to_vec();
    let mut dst_shape = src_shape.clone();
    let mut cutoffs = Vec::with_capacity(axes.len());
    for (&a, &t) in axes.iter().zip(targets) {
        let m = src_shape[a];
        if !m.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "retained block has odd length {m} on axis {a}"
            )));
        }
        if m > t {
            return Err(Error::Cutoff {
                axis: a,
                cutoff: m / 2,
                len: t,
            });
        }
        dst_shape[a] = t;
        cutoffs.push(m / 2);
    }
    let src = block.to_complex();
    let dst_strides = super::strides(&dst_shape);
    let mut out = vec![C64::new(0.0, 0.0); dst_shape.iter().product()];
    let mut idx = vec![0usize; src_shape.len()];
    for &v in src.cx() {
        let mut off = 0;
        for ax in 0..idx.len() {
            let mut i = idx[ax];
            if let Some(p) = axes.iter().position(|&a| a == ax) {
                i = retained_index(i, cutoffs[p], dst_shape[ax]);
            }
            off += i * dst_strides[ax];
        }
        out[off] = v;
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < src_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(GridFunction {
        data: Scalars::Complex(out),
        shape: dst_shape,
        kinds: block.kinds.clone(),
        extents: block.extents.clone(),
    })
}

fn gather(shape: &[usize], mut f: impl FnMut(&[usize]) -> C64) -> Vec<C64> {
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f(&idx));
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

/// Fourier derivative multiplier `i 2 pi k / extent` for a length-`n` axis;
/// the Nyquist entry of an even-length axis is zero.
pub fn derivative_multiplier(n: usize, extent: f64) -> Vec<C64> {
    (0..n)
        .map(|j| {
            if n.is_multiple_of(2) && j == n / 2 {
                C64::new(0.0, 0.0)
            } else {
                C64::new(0.0, 2.0 * PI * mode_number(j, n) as f64 / extent)
            }
        })
        .collect()
}

/// Applies a per-mode multiplier along `axis` in place (spectral domain).
pub(crate) fn scale_along_axis(buf: &mut [C64], shape: &[usize], axis: usize, mult: &[C64]) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    for chunk in buf.chunks_exact_mut(n * inner) {
        for (j, m) in mult.iter().enumerate() {
            for z in &mut chunk[j * inner..(j + 1) * inner] {
                *z *= m;
            }
        }
    }
}

/// Derivative along a periodic spatial axis, `idft(i 2 pi k / L * dft(u))`.
/// Real input yields real output; the discarded imaginary residue is below
/// rounding level.
pub fn spectral_derivative(u: &GridFunction, axis: usize) -> Result<GridFunction> {
    if axis >= u.rank() {
        return Err(Error::InvalidAxis {
            axis,
            rank: u.rank(),
        });
    }
    if u.kinds()[axis] != AxisKind::Space {
        return Err(Error::NotSpatial { axis });
    }
    u.check_finite("spectral_derivative input")?;
    let shape = u.shape().to_vec();
    let mult = derivative_multiplier(shape[axis], u.extents()[axis]);
    let mut buf = u.to_complex();
    transform_axis(buf.cx_mut(), &shape, axis, false);
    scale_along_axis(buf.cx_mut(), &shape, axis, &mult);
    transform_axis(buf.cx_mut(), &shape, axis, true);
    let scale = 1.0 / shape[axis] as f64;
    buf.cx_mut().iter_mut().for_each(|z| *z *= scale);
    if u.is_complex() {
        Ok(buf)
    } else {
        Ok(buf.real_part().0)
    }
}
