//! Reference solvers that produce training data.

pub mod navier_stokes;
pub mod phi41;

pub use navier_stokes::{sample_initial_vorticity, solve_ns_vorticity, NsConfig};
pub use phi41::{sample_eta, solve_phi41, Drift, Phi41Config};

use crate::error::{Error, Result};
use crate::tensor::GridFunction;

/// Strided subsampling of the trailing `axes` by `factor`. Keeps every
/// `factor`-th point starting at index 0; no filtering.
pub fn downsample(u: &GridFunction, axes: &[usize], factor: usize) -> Result<GridFunction> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be positive".into()));
    }
    for &a in axes {
        if a >= u.rank() {
            return Err(Error::InvalidAxis { axis: a, rank: u.rank() });
        }
        if !u.shape()[a].is_multiple_of(factor) {
            return Err(Error::Shape(format!(
                "axis {a} of length {} is not divisible by {factor}",
                u.shape()[a]
            )));
        }
    }
    let mut shape = u.shape().to_vec();
    for &a in axes {
        shape[a] /= factor;
    }
    let step = |idx: &[usize]| -> Vec<usize> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| if axes.contains(&a) { i * factor } else { i })
            .collect()
    };
    let data = GridFunction::from_fn(&shape, |idx| u.re()[u.offset(&step(idx))]).into_real();
    let out = GridFunction::real(&shape, data)?;
    out.with_axes(u.kinds(), u.extents())
}

/// Start indices of `per_trajectory` windows of `window` steps spread
/// evenly over a trajectory of `len` steps: `floor(j (len - window) / (P - 1))`.
pub fn window_starts(len: usize, window: usize, per_trajectory: usize) -> Result<Vec<usize>> {
    if window == 0 || window > len || per_trajectory == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot place {per_trajectory} windows of {window} steps in {len}"
        )));
    }
    if per_trajectory == 1 {
        return Ok(vec![0]);
    }
    let span = len - window;
    Ok((0..per_trajectory)
        .map(|j| j * span / (per_trajectory - 1))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fft::{dft, idft, pad_modes, truncate_modes};
    use crate::tensor::AxisKind;
    use std::f64::consts::PI;

    fn field64() -> GridFunction {
        GridFunction::from_fn(&[2, 64, 64], |i| {
            let (x, y) = (i[1] as f64 / 64.0, i[2] as f64 / 64.0);
            i[0] as f64 + (2.0 * PI * x).sin() * (6.0 * PI * y).cos() + (10.0 * PI * (x + y)).sin()
        })
    }

    #[test]
    fn factor_one_is_identity() {
        let u = field64();
        assert_eq!(downsample(&u, &[1, 2], 1).unwrap(), u);
    }

    #[test]
    fn corners_survive() {
        let u = field64();
        let d = downsample(&u, &[1, 2], 4).unwrap();
        assert_eq!(d.shape(), &[2, 16, 16]);
        for b in 0..2 {
            assert_eq!(d.re()[d.offset(&[b, 0, 0])], u.re()[u.offset(&[b, 0, 0])]);
            assert_eq!(d.re()[d.offset(&[b, 15, 15])], u.re()[u.offset(&[b, 60, 60])]);
            assert_eq!(d.re()[d.offset(&[b, 15, 0])], u.re()[u.offset(&[b, 60, 0])]);
        }
    }

    #[test]
    fn indivisible_rejected() {
        assert!(matches!(downsample(&field64(), &[1], 5), Err(Error::Shape(_))));
    }

    #[test]
    fn subsampling_vs_spectral_truncation() {
        // Mode 5 in y aliases onto mode -3 on a 8-point grid; truncation
        // to |k| < 4 removes it instead. The two coarse fields differ by
        // exactly the aliased component.
        let u = GridFunction::from_fn(&[32, 32], |i| {
            let (x, y) = (i[0] as f64 / 32.0, i[1] as f64 / 32.0);
            (2.0 * PI * x).cos() + 0.5 * (2.0 * PI * 5.0 * y).cos()
        });
        let strided = downsample(&u, &[0, 1], 4).unwrap();
        let g = dft(&u, &[0, 1]).unwrap();
        let mut block = truncate_modes(&g, &[0, 1], &[4, 4]).unwrap();
        block.cx_mut().iter_mut().for_each(|z| *z /= 16.0);
        let trig = idft(&pad_modes(&block, &[0, 1], &[8, 8]).unwrap(), &[0, 1]).unwrap();
        let mut max = 0.0f64;
        for i in 0..8 {
            for j in 0..8 {
                let y = j as f64 / 8.0;
                let aliased = 0.5 * (2.0 * PI * 5.0 * y).cos();
                let diff = strided.re()[i * 8 + j] - trig.cx()[i * 8 + j].re;
                assert!((diff - aliased).abs() < 1e-12);
                max = max.max(diff.abs());
            }
        }
        assert!((max - 0.5).abs() < 1e-12);
    }

    #[test]
    fn metadata_preserved() {
        let u = GridFunction::zeros(&[4, 8])
            .with_axes(&[AxisKind::Time, AxisKind::Space], &[0.5, 1.0])
            .unwrap();
        let d = downsample(&u, &[1], 2).unwrap();
        assert_eq!(d.kinds(), u.kinds());
        assert_eq!(d.extents(), u.extents());
    }

    #[test]
    fn paper_windows_give_two_thousand_pairs() {
        let starts = window_starts(15_000, 500, 200).unwrap();
        assert_eq!(starts.len() * 10, 2000);
        assert_eq!(starts[0], 0);
        assert_eq!(*starts.last().unwrap(), 14_500);
        assert!(starts.windows(2).all(|w| w[0] < w[1]));
    }
}
