//! Deterministic random fixtures for unit tests.

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

use crate::tensor::fft::{idft, pad_modes};
use crate::tensor::{GridFunction, C64};

pub(crate) struct Fixture(ChaCha8Rng);

impl Fixture {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `[-1, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    pub fn real(&mut self, shape: &[usize]) -> GridFunction {
        let n = shape.iter().product();
        GridFunction::real(shape, (0..n).map(|_| self.uniform()).collect()).unwrap()
    }

    pub fn complex(&mut self, shape: &[usize]) -> GridFunction {
        let n = shape.iter().product();
        GridFunction::complex(shape, (0..n).map(|_| C64::new(self.uniform(), self.uniform())).collect())
            .unwrap()
    }
}

/// `kappa = idft(pad(K))` on the full grid, shape `(grid..., d, d)`.
pub fn kernel_in_space(kernel: &GridFunction, grid: &[usize]) -> GridFunction {
    let axes: Vec<usize> = (0..grid.len()).collect();
    idft(&pad_modes(kernel, &axes, grid).unwrap(), &axes).unwrap()
}

/// Direct circular convolution `Re sum_s kappa(x - s) v(s)` of a real
/// `(batch, d, grid...)` field, with `grid` flattened row-major.
pub fn direct_conv(kappa: &GridFunction, v: &GridFunction, grid: &[usize]) -> Vec<f64> {
    let (batch, d) = (v.shape()[0], v.shape()[1]);
    let n: usize = grid.iter().product();
    let unravel = |mut i: usize| -> Vec<usize> {
        let mut idx = vec![0; grid.len()];
        for a in (0..grid.len()).rev() {
            idx[a] = i % grid[a];
            i /= grid[a];
        }
        idx
    };
    let ravel = |idx: &[usize]| idx.iter().zip(grid).fold(0, |acc, (&i, &g)| acc * g + i);
    let mut out = vec![0.0; batch * d * n];
    for b in 0..batch {
        for x in 0..n {
            let xi = unravel(x);
            for s in 0..n {
                let si = unravel(s);
                let diff: Vec<usize> = xi.iter().zip(&si).zip(grid).map(|((a, c), g)| (a + g - c) % g).collect();
                let kk = &kappa.cx()[ravel(&diff) * d * d..(ravel(&diff) + 1) * d * d];
                for o in 0..d {
                    let mut acc = 0.0;
                    for i in 0..d {
                        acc += kk[o * d + i].re * v.re()[(b * d + i) * n + s];
                    }
                    out[(b * d + o) * n + x] += acc;
                }
            }
        }
    }
    out
}
