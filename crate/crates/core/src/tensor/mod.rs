//! Dense real and complex arrays sampled on uniform periodic grids.
//!
//! A [`GridFunction`] is a row-major buffer plus a shape and, per axis, a
//! role ([`AxisKind`]) and a physical extent. Model fields use the layout
//! `(batch, channels, time, space...)`; spatial axes are periodic and the
//! grid spacing along an axis is `extent / len`.
//!
//! Fourier transforms live in [`fft`]: the forward DFT is unnormalized
//! (`sum_x f(x) e^{-2 pi i x k / N}`), the inverse carries the `1/N` factor.

pub mod fft;

use crate::error::{Error, Result};

pub use rustfft::num_complex::Complex;

/// Complex scalar used throughout the crate.
pub type C64 = Complex<f64>;

/// Role of an axis. Only [`AxisKind::Space`] axes are periodic in the sense
/// required by [`fft::spectral_derivative`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisKind {
    Batch,
    Channel,
    Time,
    Space,
    Other,
}

/// Scalar storage. Complex values are `(re, im)` pairs laid out contiguously.
#[derive(Clone, Debug, PartialEq)]
pub enum Scalars {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl Scalars {
    pub fn len(&self) -> usize {
        match self {
            Scalars::Real(v) => v.len(),
            Scalars::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    shape: Vec<usize>,
    data: Scalars,
    kinds: Vec<AxisKind>,
    extents: Vec<f64>,
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} holds {expected} scalars but buffer has {len}"
        )));
    }
    Ok(())
}

fn check_finite_real(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            what: what.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

fn check_finite_complex(what: &str, v: &[C64]) -> Result<()> {
    match v.iter().position(|x| !(x.re.is_finite() && x.im.is_finite())) {
        Some(index) => Err(Error::NonFinite {
            what: what.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

impl GridFunction {
    /// Real array with every axis tagged [`AxisKind::Other`] and extent 1.
    pub fn real(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_len(shape, data.len())?;
        check_finite_real("real buffer", &data)?;
        Ok(Self::from_parts(shape.to_vec(), Scalars::Real(data)))
    }

    pub fn complex(shape: &[usize], data: Vec<C64>) -> Result<Self> {
        check_len(shape, data.len())?;
        check_finite_complex("complex buffer", &data)?;
        Ok(Self::from_parts(shape.to_vec(), Scalars::Complex(data)))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), Scalars::Real(vec![0.0; n]))
    }

    pub fn complex_zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), Scalars::Complex(vec![C64::new(0.0, 0.0); n]))
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self::from_parts(shape.to_vec(), Scalars::Real(data))
    }

    /// Builds without validation; callers guarantee the length invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Scalars) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let rank = shape.len();
        Self {
            shape,
            data,
            kinds: vec![AxisKind::Other; rank],
            extents: vec![1.0; rank],
        }
    }

    /// A model field of layout `(batch, channels, time, space...)` on the unit
    /// torus, with time extent `t_extent`.
    pub fn field(
        batch: usize,
        channels: usize,
        time: usize,
        space: &[usize],
        t_extent: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        let mut shape = vec![batch, channels, time];
        shape.extend_from_slice(space);
        let mut kinds = vec![AxisKind::Batch, AxisKind::Channel, AxisKind::Time];
        kinds.extend(std::iter::repeat_n(AxisKind::Space, space.len()));
        let mut extents = vec![1.0, 1.0, t_extent];
        extents.extend(std::iter::repeat_n(1.0, space.len()));
        Self::real(&shape, data)?.with_axes(&kinds, &extents)
    }

    /// Replaces axis roles and extents.
    pub fn with_axes(mut self, kinds: &[AxisKind], extents: &[f64]) -> Result<Self> {
        if kinds.len() != self.rank() || extents.len() != self.rank() {
            return Err(Error::Shape(format!(
                "axis metadata of length {}/{} for rank {}",
                kinds.len(),
                extents.len(),
                self.rank()
            )));
        }
        if let Some(e) = extents.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidArgument(format!("axis extent {e} must be positive")));
        }
        self.kinds = kinds.to_vec();
        self.extents = extents.to_vec();
        Ok(self)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn kinds(&self) -> &[AxisKind] {
        &self.kinds
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    /// Grid spacing `extent / len` along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        self.extents[axis] / self.shape[axis] as f64
    }

    pub fn is_complex(&self) -> bool {
        matches!(self.data, Scalars::Complex(_))
    }

    pub fn scalars(&self) -> &Scalars {
        &self.data
    }

    /// Real buffer. Panics on a complex grid function.
    pub fn re(&self) -> &[f64] {
        match &self.data {
            Scalars::Real(v) => v,
            Scalars::Complex(_) => panic!("expected a real grid function"),
        }
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        match &mut self.data {
            Scalars::Real(v) => v,
            Scalars::Complex(_) => panic!("expected a real grid function"),
        }
    }

    /// Complex buffer. Panics on a real grid function.
    pub fn cx(&self) -> &[C64] {
        match &self.data {
            Scalars::Complex(v) => v,
            Scalars::Real(_) => panic!("expected a complex grid function"),
        }
    }

    pub fn cx_mut(&mut self) -> &mut [C64] {
        match &mut self.data {
            Scalars::Complex(v) => v,
            Scalars::Real(_) => panic!("expected a complex grid function"),
        }
    }

    pub fn into_real(self) -> Vec<f64> {
        match self.data {
            Scalars::Real(v) => v,
            Scalars::Complex(_) => panic!("expected a real grid function"),
        }
    }

    pub fn into_complex(self) -> Vec<C64> {
        match self.data {
            Scalars::Complex(v) => v,
            Scalars::Real(v) => v.into_iter().map(|x| C64::new(x, 0.0)).collect(),
        }
    }

    /// Complex copy (real data gets a zero imaginary part).
    pub fn to_complex(&self) -> GridFunction {
        let data = match &self.data {
            Scalars::Complex(v) => v.clone(),
            Scalars::Real(v) => v.iter().map(|&x| C64::new(x, 0.0)).collect(),
        };
        GridFunction {
            shape: self.shape.clone(),
            data: Scalars::Complex(data),
            kinds: self.kinds.clone(),
            extents: self.extents.clone(),
        }
    }

    /// Real part, along with the largest discarded imaginary magnitude.
    pub fn real_part(&self) -> (GridFunction, f64) {
        let (data, residue) = match &self.data {
            Scalars::Real(v) => (v.clone(), 0.0),
            Scalars::Complex(v) => (
                v.iter().map(|z| z.re).collect(),
                v.iter().fold(0.0f64, |m, z| m.max(z.im.abs())),
            ),
        };
        (
            GridFunction {
                shape: self.shape.clone(),
                data: Scalars::Real(data),
                kinds: self.kinds.clone(),
                extents: self.extents.clone(),
            },
            residue,
        )
    }

    /// Same metadata, new buffer of equal length.
    pub(crate) fn with_data(&self, data: Scalars) -> GridFunction {
        assert_eq!(data.len(), self.len());
        GridFunction {
            shape: self.shape.clone(),
            data,
            kinds: self.kinds.clone(),
            extents: self.extents.clone(),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_len(shape, self.len())?;
        self.shape = shape.to_vec();
        self.kinds = vec![AxisKind::Other; shape.len()];
        self.extents = vec![1.0; shape.len()];
        Ok(self)
    }

    /// Errors if any scalar is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match &self.data {
            Scalars::Real(v) => check_finite_real(what, v),
            Scalars::Complex(v) => check_finite_complex(what, v),
        }
    }

    /// Euclidean norm of the flattened buffer.
    pub fn norm(&self) -> f64 {
        match &self.data {
            Scalars::Real(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Scalars::Complex(v) => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        let a = self.to_complex();
        let b = other.to_complex();
        a.cx()
            .iter()
            .zip(b.cx())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).norm()))
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Selects index `i` along axis 0.
    pub fn slice0(&self, i: usize) -> GridFunction {
        let inner: usize = self.shape[1..].iter().product();
        let data = match &self.data {
            Scalars::Real(v) => Scalars::Real(v[i * inner..(i + 1) * inner].to_vec()),
            Scalars::Complex(v) => Scalars::Complex(v[i * inner..(i + 1) * inner].to_vec()),
        };
        GridFunction {
            shape: self.shape[1..].to_vec(),
            data,
            kinds: self.kinds[1..].to_vec(),
            extents: self.extents[1..].to_vec(),
        }
    }

    /// Stacks equally shaped grid functions along a new leading axis.
    pub fn stack(items: &[GridFunction], kind: AxisKind) -> Result<GridFunction> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero grid functions".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut kinds = vec![kind];
        kinds.extend_from_slice(&first.kinds);
        let mut extents = vec![1.0];
        extents.extend_from_slice(&first.extents);
        for it in items {
            if it.shape != first.shape || it.is_complex() != first.is_complex() {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    it.shape, first.shape
                )));
            }
        }
        let data = if first.is_complex() {
            Scalars::Complex(items.iter().flat_map(|g| g.cx().iter().copied()).collect())
        } else {
            Scalars::Real(items.iter().flat_map(|g| g.re().iter().copied()).collect())
        };
        Ok(GridFunction {
            shape,
            data,
            kinds,
            extents,
        })
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
