//! Tape-based reverse-mode differentiation over grid functions.
//!
//! Values are computed eagerly when an op is recorded; [`Tape::backward`]
//! walks the tape in reverse and applies each op's pullback.
//!
//! Cotangents of complex nodes use the real-gradient convention
//! `dL/dRe + i dL/dIm`. When gradients are accumulated into a complex
//! [`Param`], they are halved, so `Param::grad` holds the conjugate
//! Wirtinger derivative `dL/d conj(p)` and `p - lr * grad` is a descent step.
//! For `L = |w|^2` this gives `grad = w`.

mod check;
pub(crate) mod kernels;

pub use check::{grad_check, GradCheck};

use crate::error::{Error, Result};
use crate::tensor::fft;
use crate::tensor::{GridFunction, Scalars, C64};
use kernels::Block;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learnable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: GridFunction,
    pub grad: GridFunction,
}

impl Param {
    pub fn new(name: impl Into<String>, value: GridFunction) -> Self {
        let grad = if value.is_complex() {
            GridFunction::complex_zeros(value.shape())
        } else {
            GridFunction::zeros(value.shape())
        };
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    /// Clears the accumulated gradient. Gradients are never reset implicitly.
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            g if g.is_complex() => g.cx_mut().fill(C64::new(0.0, 0.0)),
            g => g.re_mut().fill(0.0),
        }
    }

    /// Number of stored scalars (a complex entry counts once).
    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    ChannelLinear { x: Var, w: Var, b: Option<Var> },
    ChannelBias { x: Var, b: Var },
    Concat(Vec<Var>),
    FieldMatVec { g: Var, xi: Var },
    ToComplex(Var),
    RealPart(Var),
    Dft { x: Var, axes: Vec<usize> },
    Idft { x: Var, axes: Vec<usize> },
    Truncate { x: Var, axes: Vec<usize>, lens: Vec<usize> },
    Pad { x: Var, axes: Vec<usize>, cutoffs: Vec<usize> },
    ModeMatVec { x: Var, k: Var },
    Derivative { x: Var, axis: usize },
    SpectralConv { x: Var, k: Var, block: Block, xh: Vec<C64> },
    MaskTime0(Var),
    Sum(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: GridFunction,
    op: Op,
    requires_grad: bool,
}

/// Records primal values and the ops that produced them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Cotangents of every node reached by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<GridFunction>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    /// Cotangent of the parameter node `v`, if it was reached. Cotangents of
    /// intermediate nodes are released during the sweep.
    pub fn get(&self, v: Var) -> Option<&GridFunction> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradients of every parameter node into `params[id].grad`.
    /// Complex gradients are halved (conjugate Wirtinger convention).
    pub fn accumulate_into(&self, params: &mut [Param]) -> Result<()> {
        for &(id, v) in &self.params {
            let Some(g) = self.get(v) else { continue };
            let p = params.get_mut(id).ok_or_else(|| {
                Error::InvalidArgument(format!("parameter index {id} out of range"))
            })?;
            if p.grad.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    p.name,
                    p.grad.shape()
                )));
            }
            if p.grad.is_complex() {
                for (a, b) in p.grad.cx_mut().iter_mut().zip(g.cx()) {
                    *a += b * 0.5;
                }
            } else {
                for (a, b) in p.grad.re_mut().iter_mut().zip(g.re()) {
                    *a += b;
                }
            }
        }
        Ok(())
    }
}

fn same_shape(a: &GridFunction, b: &GridFunction, what: &str) -> Result<()> {
    if a.shape() != b.shape() || a.is_complex() != b.is_complex() {
        return Err(Error::Shape(format!(
            "{what}: {:?}{} vs {:?}{}",
            a.shape(),
            if a.is_complex() { " (complex)" } else { "" },
            b.shape(),
            if b.is_complex() { " (complex)" } else { "" },
        )));
    }
    Ok(())
}

fn zip_map(a: &GridFunction, b: &GridFunction, fr: fn(f64, f64) -> f64, fc: fn(C64, C64) -> C64) -> GridFunction {
    match (a.scalars(), b.scalars()) {
        (Scalars::Real(x), Scalars::Real(y)) => {
            a.with_data(Scalars::Real(x.iter().zip(y).map(|(p, q)| fr(*p, *q)).collect()))
        }
        (Scalars::Complex(x), Scalars::Complex(y)) => {
            a.with_data(Scalars::Complex(x.iter().zip(y).map(|(p, q)| fc(*p, *q)).collect()))
        }
        _ => unreachable!("kinds checked by caller"),
    }
}

fn scaled(a: &GridFunction, s: f64) -> GridFunction {
    match a.scalars() {
        Scalars::Real(x) => a.with_data(Scalars::Real(x.iter().map(|v| v * s).collect())),
        Scalars::Complex(x) => a.with_data(Scalars::Complex(x.iter().map(|v| v * s).collect())),
    }
}

/// `(batch, channels, rest)` view of a grid function of rank >= 2.
fn bcp(v: &GridFunction) -> Result<(usize, usize, usize)> {
    if v.rank() < 2 {
        return Err(Error::Shape(format!(
            "expected (batch, channels, ...) layout, got {:?}",
            v.shape()
        )));
    }
    Ok((v.shape()[0], v.shape()[1], v.shape()[2..].iter().product()))
}

fn with_channels(x: &GridFunction, c: usize, data: Scalars) -> GridFunction {
    let mut shape = x.shape().to_vec();
    shape[1] = c;
    let out = GridFunction::from_parts(shape, data);
    out.with_axes(x.kinds(), x.extents()).expect("rank preserved")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &GridFunction {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: GridFunction, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: GridFunction) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records a copy of a parameter's value; `index` is the slot its
    /// gradient is accumulated into by [`Gradients::accumulate_into`].
    pub fn param(&mut self, index: usize, p: &Param) -> Var {
        self.push(p.value.clone(), Op::Param(index), true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product (real or complex).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = scaled(self.value(a), s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_complex() {
            return Err(Error::Shape("tanh expects a real input".into()));
        }
        let v = x.with_data(Scalars::Real(x.re().iter().map(|v| v.tanh()).collect()));
        let rg = self.rg(a);
        Ok(self.push(v, Op::Tanh(a), rg))
    }

    /// Affine map over the channel axis: `y[b,o,..] = sum_i w[o,i] x[b,i,..] + bias[o]`
    /// with `w: (cout, cin)` and `bias: (cout)`.
    pub fn channel_linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, cin, p) = bcp(self.value(x))?;
        let wv = self.value(w);
        if wv.rank() != 2 || wv.shape()[1] != cin || wv.is_complex() || self.value(x).is_complex() {
            return Err(Error::Shape(format!(
                "channel_linear: weight {:?} against {cin} input channels",
                wv.shape()
            )));
        }
        let cout = wv.shape()[0];
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::Shape(format!(
                    "channel_linear: bias {:?} for {cout} outputs",
                    self.value(b).shape()
                )));
            }
        }
        let data = kernels::channel_linear(
            self.value(x).re(),
            wv.re(),
            b.map(|b| self.value(b).re()),
            batch,
            cin,
            cout,
            p,
        );
        let v = with_channels(self.value(x), cout, Scalars::Real(data));
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(v, Op::ChannelLinear { x, w, b }, rg))
    }

    /// Adds `b[c]` to every entry of channel `c`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (batch, c, p) = bcp(self.value(x))?;
        if self.value(b).shape() != [c] || self.value(x).is_complex() {
            return Err(Error::Shape(format!(
                "channel_bias: bias {:?} for {c} channels",
                self.value(b).shape()
            )));
        }
        let bias = self.value(b).re();
        let mut data = self.value(x).re().to_vec();
        for bi in 0..batch {
            for ci in 0..c {
                let off = (bi * c + ci) * p;
                data[off..off + p].iter_mut().for_each(|v| *v += bias[ci]);
            }
        }
        let v = self.value(x).with_data(Scalars::Real(data));
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(v, Op::ChannelBias { x, b }, rg))
    }

    /// Concatenates real inputs along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero inputs".into()))?;
        let (batch, _, p) = bcp(self.value(first))?;
        let tail = self.value(first).shape()[2..].to_vec();
        let mut total = 0;
        for &v in parts {
            let val = self.value(v);
            if val.rank() < 2 || val.shape()[0] != batch || val.shape()[2..] != tail[..] || val.is_complex() {
                return Err(Error::Shape(format!(
                    "concat_channels: {:?} does not match {:?}",
                    val.shape(),
                    self.value(first).shape()
                )));
            }
            total += val.shape()[1];
        }
        let mut data = Vec::with_capacity(batch * total * p);
        for b in 0..batch {
            for &v in parts {
                let val = self.value(v);
                let c = val.shape()[1];
                data.extend_from_slice(&val.re()[b * c * p..(b + 1) * c * p]);
            }
        }
        let v = with_channels(self.value(first), total, Scalars::Real(data));
        let rg = parts.iter().any(|&v| self.rg(v));
        Ok(self.push(v, Op::Concat(parts.to_vec()), rg))
    }

    /// Pointwise matrix-vector product: `g: (batch, dh * dxi, ...)` holds a
    /// `dh x dxi` matrix per grid point (row-major), `xi: (batch, dxi, ...)`.
    pub fn field_matvec(&mut self, g: Var, xi: Var) -> Result<Var> {
        let (batch, gc, p) = bcp(self.value(g))?;
        let (xb, dxi, xp) = bcp(self.value(xi))?;
        if xb != batch || xp != p || dxi == 0 || gc % dxi != 0 || self.value(g).shape()[2..] != self.value(xi).shape()[2..] {
            return Err(Error::Shape(format!(
                "field_matvec: {:?} against noise {:?}",
                self.value(g).shape(),
                self.value(xi).shape()
            )));
        }
        let dh = gc / dxi;
        let (gv, xv) = (self.value(g).re(), self.value(xi).re());
        let mut data = vec![0.0; batch * dh * p];
        for b in 0..batch {
            for o in 0..dh {
                let out = &mut data[(b * dh + o) * p..(b * dh + o + 1) * p];
                for j in 0..dxi {
                    let grow = &gv[(b * gc + o * dxi + j) * p..(b * gc + o * dxi + j + 1) * p];
                    let xrow = &xv[(b * dxi + j) * p..(b * dxi + j + 1) * p];
                    for ((y, a), c) in out.iter_mut().zip(grow).zip(xrow) {
                        *y += a * c;
                    }
                }
            }
        }
        let v = with_channels(self.value(g), dh, Scalars::Real(data));
        let rg = self.rg(g) || self.rg(xi);
        Ok(self.push(v, Op::FieldMatVec { g, xi }, rg))
    }

    pub fn to_complex(&mut self, x: Var) -> Var {
        let v = self.value(x).to_complex();
        let rg = self.rg(x);
        self.push(v, Op::ToComplex(x), rg)
    }

    pub fn real_part(&mut self, x: Var) -> Var {
        let v = self.value(x).real_part().0;
        let rg = self.rg(x);
        self.push(v, Op::RealPart(x), rg)
    }

    pub fn dft(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = fft::dft(self.value(x), axes)?;
        let rg = self.rg(x);
        let x = if self.value(x).is_complex() { x } else { self.to_complex(x) };
        Ok(self.push(v, Op::Dft { x, axes: axes.to_vec() }, rg))
    }

    pub fn idft(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = fft::idft(self.value(x), axes)?;
        let rg = self.rg(x);
        let x = if self.value(x).is_complex() { x } else { self.to_complex(x) };
        Ok(self.push(v, Op::Idft { x, axes: axes.to_vec() }, rg))
    }

    pub fn truncate_modes(&mut self, x: Var, axes: &[usize], cutoffs: &[usize]) -> Result<Var> {
        let lens = axes.iter().map(|&a| self.value(x).shape().get(a).copied().unwrap_or(0)).collect();
        let v = fft::truncate_modes(self.value(x), axes, cutoffs)?;
        let rg = self.rg(x);
        let x = if self.value(x).is_complex() { x } else { self.to_complex(x) };
        Ok(self.push(v, Op::Truncate { x, axes: axes.to_vec(), lens }, rg))
    }

    pub fn pad_modes(&mut self, x: Var, axes: &[usize], targets: &[usize]) -> Result<Var> {
        let v = fft::pad_modes(self.value(x), axes, targets)?;
        let cutoffs = axes.iter().map(|&a| self.value(x).shape()[a] / 2).collect();
        let rg = self.rg(x);
        let x = if self.value(x).is_complex() { x } else { self.to_complex(x) };
        Ok(self.push(v, Op::Pad { x, axes: axes.to_vec(), cutoffs }, rg))
    }

    /// Per-mode complex matrix-vector product: `x: (batch, cin, modes...)`,
    /// `k: (modes..., cout, cin)` gives `(batch, cout, modes...)`.
    pub fn mode_matvec(&mut self, x: Var, k: Var) -> Result<Var> {
        let xv = self.value(x);
        let kv = self.value(k);
        let (batch, cin, m) = bcp(xv)?;
        let modes = &xv.shape()[2..];
        let kr = kv.rank();
        if !xv.is_complex() || !kv.is_complex() || kr != modes.len() + 2 || &kv.shape()[..kr - 2] != modes || kv.shape()[kr - 1] != cin {
            return Err(Error::Shape(format!(
                "mode_matvec: input {:?} against kernel {:?}",
                xv.shape(),
                kv.shape()
            )));
        }
        let cout = kv.shape()[kr - 2];
        let (xs, ks) = (xv.cx(), kv.cx());
        let mut data = vec![C64::new(0.0, 0.0); batch * cout * m];
        for b in 0..batch {
            for j in 0..m {
                let kk = &ks[j * cout * cin..(j + 1) * cout * cin];
                for o in 0..cout {
                    data[(b * cout + o) * m + j] = (0..cin).map(|i| kk[o * cin + i] * xs[(b * cin + i) * m + j]).sum();
                }
            }
        }
        let v = with_channels(xv, cout, Scalars::Complex(data));
        let rg = self.rg(x) || self.rg(k);
        Ok(self.push(v, Op::ModeMatVec { x, k }, rg))
    }

    /// Fourier derivative of a real field along a periodic spatial axis.
    pub fn spectral_derivative(&mut self, x: Var, axis: usize) -> Result<Var> {
        if self.value(x).is_complex() {
            return Err(Error::Shape("spectral_derivative expects a real input".into()));
        }
        let v = fft::spectral_derivative(self.value(x), axis)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Derivative { x, axis }, rg))
    }

    /// Fused space-time spectral convolution
    /// `Re(idft(pad(K . truncate(dft(x)))))` over the time and spatial axes of
    /// `x: (batch, cin, time, space...)`. The kernel has shape
    /// `(2*ct, 2*cs..., cout, cin)` and its leading dimensions set the cutoffs.
    pub fn spectral_conv(&mut self, x: Var, k: Var) -> Result<Var> {
        let xv = self.value(x);
        let kv = self.value(k);
        let (batch, cin, _) = bcp(xv)?;
        let grid = xv.shape()[2..].to_vec();
        let kr = kv.rank();
        if xv.is_complex() || !kv.is_complex() || grid.is_empty() || kr != grid.len() + 2 || kv.shape()[kr - 1] != cin {
            return Err(Error::Shape(format!(
                "spectral_conv: input {:?} against kernel {:?}",
                xv.shape(),
                kv.shape()
            )));
        }
        let mut cutoffs = Vec::with_capacity(grid.len());
        for (a, (&n, &m)) in grid.iter().zip(kv.shape()).enumerate() {
            if m % 2 != 0 {
                return Err(Error::Shape(format!("kernel mode axis {a} has odd length {m}")));
            }
            if m > n {
                return Err(Error::Cutoff {
                    axis: a + 2,
                    cutoff: m / 2,
                    len: n,
                });
            }
            cutoffs.push(m / 2);
        }
        let cout = kv.shape()[kr - 2];
        let block = Block { grid, cutoffs };
        let (data, xh) = kernels::spectral_conv(xv.re(), kv.cx(), &block, batch, cin, cout);
        let v = with_channels(xv, cout, Scalars::Real(data));
        let rg = self.rg(x) || self.rg(k);
        Ok(self.push(v, Op::SpectralConv { x, k, block, xh }, rg))
    }

    /// Keeps the `t = 0` slice of `(batch, channels, time, ...)` and zeroes
    /// the rest.
    pub fn mask_time0(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() < 3 || xv.is_complex() {
            return Err(Error::Shape(format!("mask_time0 needs (batch, channels, time, ...), got {:?}", xv.shape())));
        }
        let v = xv.with_data(Scalars::Real(mask_t0(xv.re(), xv.shape())));
        let rg = self.rg(x);
        Ok(self.push(v, Op::MaskTime0(x), rg))
    }

    /// Sum of all entries, as a real scalar of shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_complex() {
            return Err(Error::Shape("sum expects a real input".into()));
        }
        let s = xv.re().iter().sum::<f64>();
        let rg = self.rg(x);
        Ok(self.push(GridFunction::from_parts(vec![1], Scalars::Real(vec![s])), Op::Sum(x), rg))
    }

    /// `sum |x|^2` as a real scalar of shape `[1]`.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = match self.value(x).scalars() {
            Scalars::Real(v) => v.iter().map(|a| a * a).sum::<f64>(),
            Scalars::Complex(v) => v.iter().map(|a| a.norm_sqr()).sum::<f64>(),
        };
        let rg = self.rg(x);
        self.push(GridFunction::from_parts(vec![1], Scalars::Real(vec![s])), Op::SumSquares(x), rg)
    }

    /// Reverse sweep from a real scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 || lv.is_complex() {
            return Err(Error::Shape(format!(
                "backward needs a real scalar loss, got shape {:?}{}",
                lv.shape(),
                if lv.is_complex() { " (complex)" } else { "" }
            )));
        }
        let mut grads: Vec<Option<GridFunction>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(lv.with_data(Scalars::Real(vec![1.0])));
        let mut params = Vec::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if let Op::Param(id) = node.op {
                if grads[i].is_some() {
                    params.push((id, Var(i)));
                }
                continue;
            }
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.pullback(i, &g, &mut grads)?;
        }
        params.reverse();
        Ok(Gradients { grads, params })
    }

    fn acc(&self, grads: &mut [Option<GridFunction>], v: Var, g: GridFunction) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            slot @ None => *slot = Some(g),
            Some(acc) => match (acc.scalars(), g.scalars()) {
                (Scalars::Real(_), Scalars::Real(b)) => {
                    acc.re_mut().iter_mut().zip(b).for_each(|(a, b)| *a += b)
                }
                (Scalars::Complex(_), Scalars::Complex(b)) => {
                    acc.cx_mut().iter_mut().zip(b).for_each(|(a, b)| *a += b)
                }
                _ => unreachable!("cotangent kind mismatch"),
            },
        }
    }

    fn pullback(&self, i: usize, g: &GridFunction, grads: &mut [Option<GridFunction>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, scaled(g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.acc(grads, *a, zip_map(g, bv, |x, y| x * y, |x, y| x * y.conj()));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, zip_map(g, av, |x, y| x * y, |x, y| x * y.conj()));
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, scaled(g, *s)),
            Op::Tanh(a) => {
                let y = node.value.re();
                let data = g.re().iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.acc(grads, *a, g.with_data(Scalars::Real(data)));
            }
            Op::ChannelLinear { x, w, b } => {
                let xv = self.value(*x);
                let (batch, cin, p) = bcp(xv)?;
                let cout = node.value.shape()[1];
                let mut gw = self.rg(*w).then(|| vec![0.0; cout * cin]);
                let mut gb = b.filter(|b| self.rg(*b)).map(|_| vec![0.0; cout]);
                let gx = kernels::channel_linear_backward(
                    g.re(),
                    xv.re(),
                    self.value(*w).re(),
                    batch,
                    cin,
                    cout,
                    p,
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                    self.rg(*x),
                );
                if let Some(gw) = gw {
                    self.acc(grads, *w, self.value(*w).with_data(Scalars::Real(gw)));
                }
                if let (Some(gb), Some(b)) = (gb, b) {
                    self.acc(grads, *b, self.value(*b).with_data(Scalars::Real(gb)));
                }
                if let Some(gx) = gx {
                    self.acc(grads, *x, xv.with_data(Scalars::Real(gx)));
                }
            }
            Op::ChannelBias { x, b } => {
                let (batch, c, p) = bcp(g)?;
                if self.rg(*b) {
                    let mut gb = vec![0.0; c];
                    for bi in 0..batch {
                        for (ci, acc) in gb.iter_mut().enumerate() {
                            *acc += g.re()[(bi * c + ci) * p..(bi * c + ci + 1) * p].iter().sum::<f64>();
                        }
                    }
                    self.acc(grads, *b, self.value(*b).with_data(Scalars::Real(gb)));
                }
                self.acc(grads, *x, g.clone());
            }
            Op::Concat(parts) => {
                let (batch, total, p) = bcp(g)?;
                let mut start = 0;
                for &v in parts {
                    let val = self.value(v);
                    let c = val.shape()[1];
                    if self.rg(v) {
                        let mut data = Vec::with_capacity(batch * c * p);
                        for b in 0..batch {
                            let off = (b * total + start) * p;
                            data.extend_from_slice(&g.re()[off..off + c * p]);
                        }
                        self.acc(grads, v, val.with_data(Scalars::Real(data)));
                    }
                    start += c;
                }
            }
            Op::FieldMatVec { g: gm, xi } => {
                let (batch, gc, p) = bcp(self.value(*gm))?;
                let dxi = self.value(*xi).shape()[1];
                let dh = gc / dxi;
                let (gv, xv, up) = (self.value(*gm).re(), self.value(*xi).re(), g.re());
                if self.rg(*gm) {
                    let mut out = vec![0.0; batch * gc * p];
                    for b in 0..batch {
                        for o in 0..dh {
                            for j in 0..dxi {
                                let dst = &mut out[(b * gc + o * dxi + j) * p..(b * gc + o * dxi + j + 1) * p];
                                let u = &up[(b * dh + o) * p..(b * dh + o + 1) * p];
                                let x = &xv[(b * dxi + j) * p..(b * dxi + j + 1) * p];
                                for ((d, u), x) in dst.iter_mut().zip(u).zip(x) {
                                    *d = u * x;
                                }
                            }
                        }
                    }
                    self.acc(grads, *gm, self.value(*gm).with_data(Scalars::Real(out)));
                }
                if self.rg(*xi) {
                    let mut out = vec![0.0; batch * dxi * p];
                    for b in 0..batch {
                        for j in 0..dxi {
                            let dst = &mut out[(b * dxi + j) * p..(b * dxi + j + 1) * p];
                            for o in 0..dh {
                                let u = &up[(b * dh + o) * p..(b * dh + o + 1) * p];
                                let a = &gv[(b * gc + o * dxi + j) * p..(b * gc + o * dxi + j + 1) * p];
                                for ((d, u), a) in dst.iter_mut().zip(u).zip(a) {
                                    *d += u * a;
                                }
                            }
                        }
                    }
                    self.acc(grads, *xi, self.value(*xi).with_data(Scalars::Real(out)));
                }
            }
            Op::ToComplex(x) => self.acc(grads, *x, g.real_part().0),
            Op::RealPart(x) => self.acc(grads, *x, g.to_complex()),
            Op::Dft { x, axes } => {
                // dft^H = N * idft
                let n: usize = axes.iter().map(|&a| g.shape()[a]).product();
                let back = fft::idft(g, axes)?;
                self.acc(grads, *x, scaled(&back, n as f64));
            }
            Op::Idft { x, axes } => {
                let n: usize = axes.iter().map(|&a| g.shape()[a]).product();
                let back = fft::dft(g, axes)?;
                self.acc(grads, *x, scaled(&back, 1.0 / n as f64));
            }
            Op::Truncate { x, axes, lens } => {
                self.acc(grads, *x, fft::pad_modes(g, axes, lens)?);
            }
            Op::Pad { x, axes, cutoffs } => {
                self.acc(grads, *x, fft::truncate_modes(g, axes, cutoffs)?);
            }
            Op::ModeMatVec { x, k } => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let (batch, cin, m) = bcp(xv)?;
                let cout = g.shape()[1];
                let (xs, ks, gs) = (xv.cx(), kv.cx(), g.cx());
                if self.rg(*x) {
                    let mut gx = vec![C64::new(0.0, 0.0); batch * cin * m];
                    for b in 0..batch {
                        for j in 0..m {
                            let kk = &ks[j * cout * cin..(j + 1) * cout * cin];
                            for i in 0..cin {
                                gx[(b * cin + i) * m + j] =
                                    (0..cout).map(|o| kk[o * cin + i].conj() * gs[(b * cout + o) * m + j]).sum();
                            }
                        }
                    }
                    self.acc(grads, *x, xv.with_data(Scalars::Complex(gx)));
                }
                if self.rg(*k) {
                    let mut gk = vec![C64::new(0.0, 0.0); ks.len()];
                    for b in 0..batch {
                        for j in 0..m {
                            for o in 0..cout {
                                let go = gs[(b * cout + o) * m + j];
                                for i in 0..cin {
                                    gk[(j * cout + o) * cin + i] += go * xs[(b * cin + i) * m + j].conj();
                                }
                            }
                        }
                    }
                    self.acc(grads, *k, kv.with_data(Scalars::Complex(gk)));
                }
            }
            Op::Derivative { x, axis } => {
                // The Fourier derivative is real skew-adjoint.
                let d = fft::spectral_derivative(g, *axis)?;
                self.acc(grads, *x, scaled(&d, -1.0));
            }
            Op::SpectralConv { x, k, block, xh } => {
                let (batch, cin, _) = bcp(self.value(*x))?;
                let cout = g.shape()[1];
                let kv = self.value(*k);
                let mut gk = self.rg(*k).then(|| vec![C64::new(0.0, 0.0); kv.len()]);
                let gx = kernels::spectral_conv_backward(
                    g.re(),
                    xh,
                    kv.cx(),
                    block,
                    batch,
                    cin,
                    cout,
                    gk.as_deref_mut(),
                    self.rg(*x),
                );
                if let Some(gk) = gk {
                    self.acc(grads, *k, kv.with_data(Scalars::Complex(gk)));
                }
                if let Some(gx) = gx {
                    self.acc(grads, *x, self.value(*x).with_data(Scalars::Real(gx)));
                }
            }
            Op::MaskTime0(x) => {
                self.acc(grads, *x, g.with_data(Scalars::Real(mask_t0(g.re(), g.shape()))));
            }
            Op::Sum(x) => {
                let s = g.re()[0];
                let xv = self.value(*x);
                self.acc(grads, *x, xv.with_data(Scalars::Real(vec![s; xv.len()])));
            }
            Op::SumSquares(x) => {
                let s = 2.0 * g.re()[0];
                self.acc(grads, *x, scaled(self.value(*x), s));
            }
        }
        Ok(())
    }
}

fn mask_t0(v: &[f64], shape: &[usize]) -> Vec<f64> {
    let slab: usize = shape[3..].iter().product();
    let per_channel = shape[2] * slab;
    let mut out = vec![0.0; v.len()];
    for (o, i) in out.chunks_exact_mut(per_channel).zip(v.chunks_exact(per_channel)) {
        o[..slab].copy_from_slice(&i[..slab]);
    }
    out
}

#[cfg(test)]
mod tests;
