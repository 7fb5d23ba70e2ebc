//! Neural SPDE: lift, Picard iteration of the learned mild-solution map,
//! projection.
//!
//! With `z^0 = L(u_in)` and `z0 = z^0(t = 0)` the iteration is
//!
//! `z^{i+1} = C + S_K z0 + K * H(z^i, xi)`
//!
//! where `K *` is the space-time spectral convolution with the retained
//! kernel `K`, `S_K z0` its action on the initial state and
//! `H(z) = F([z, dz]) + G([z, dz]) xi`. Because `S_K z0` equals the
//! convolution of `K` with `z0` placed at `t = 0`, each step runs a single
//! fused convolution of `delta_0 z0 + H`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{bind, init_kernel, spectral_norm, Affine, TwoLayer};
use crate::noise::NoiseRng;
use crate::tensor::fft::{dft, idft, pad_modes, retained_index};
use crate::tensor::{GridFunction, C64};

/// Inputs of an operator model on a `(batch, channels, time, space...)` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Inputs {
    /// Initial condition broadcast over time, `(batch, d_u, time, space...)`.
    pub u_in: GridFunction,
    /// Noise rate `dW/dt`, `(batch, d_xi, time, space...)`.
    pub xi_dot: Option<GridFunction>,
}

impl Inputs {
    pub fn batch(&self) -> usize {
        self.u_in.shape()[0]
    }

    pub fn grid(&self) -> &[usize] {
        &self.u_in.shape()[2..]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NspdeConfig {
    pub d_u: usize,
    pub d_xi: usize,
    pub d_h: usize,
    /// Hidden width of the F and G networks.
    pub width: usize,
    pub time_modes: usize,
    /// Cutoff per spatial axis; its length fixes the spatial dimension.
    pub space_modes: Vec<usize>,
    /// Picard iterations M.
    pub depth: usize,
    /// Drop G (the `u0 -> u` task, where the noise is not observed).
    pub noise_branch: bool,
    /// Grid `(time, space...)` the model was trained on; empty if unknown.
    pub trained_grid: Vec<usize>,
    pub seed: u64,
}

impl Default for NspdeConfig {
    fn default() -> Self {
        Self {
            d_u: 1,
            d_xi: 1,
            d_h: 16,
            width: 16,
            time_modes: 32,
            space_modes: vec![32],
            depth: 4,
            noise_branch: true,
            trained_grid: Vec::new(),
            seed: 0,
        }
    }
}

impl NspdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("Picard depth must be at least 1".into()));
        }
        if self.d_u == 0 || self.d_h == 0 || self.width == 0 || self.d_xi == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.space_modes.is_empty() || self.time_modes == 0 || self.space_modes.contains(&0) {
            return Err(Error::Config("mode cutoffs must be positive".into()));
        }
        Ok(())
    }

    /// Clamps the cutoffs to what a `(time, space...)` grid can hold.
    pub fn fit_to_grid(mut self, grid: &[usize]) -> Result<Self> {
        if grid.len() != self.space_modes.len() + 1 {
            return Err(Error::Shape(format!(
                "grid {grid:?} has the wrong number of axes for {} spatial cutoffs",
                self.space_modes.len()
            )));
        }
        self.time_modes = self.time_modes.min(grid[0] / 2);
        for (c, &n) in self.space_modes.iter_mut().zip(&grid[1..]) {
            *c = (*c).min(n / 2);
        }
        self.trained_grid = grid.to_vec();
        Ok(self)
    }

    pub fn kernel_modes(&self) -> Vec<usize> {
        std::iter::once(self.time_modes)
            .chain(self.space_modes.iter().copied())
            .map(|c| 2 * c)
            .collect()
    }
}

/// Picard iterate and residual history.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointState {
    pub iterate: GridFunction,
    pub index: usize,
    /// `||z^{i+1} - z^i||` for every iteration.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NspdeModel {
    pub config: NspdeConfig,
    pub params: Vec<Param>,
    pub lift: Affine,
    pub proj: TwoLayer,
    pub f: TwoLayer,
    pub g: Option<TwoLayer>,
    pub kernel: usize,
    pub bias: usize,
}

impl NspdeModel {
    pub fn new(config: NspdeConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.space_modes.len();
        let mut rng = NoiseRng::new(c.seed, 0x6e_7370_6465);
        let mut params = Vec::new();
        let lift = Affine::init(&mut params, "lift", c.d_u, c.d_h, &mut rng);
        let proj = TwoLayer::init(&mut params, "proj", c.d_h, c.d_h, c.d_u, &mut rng);
        let feat = c.d_h * (d + 1);
        let f = TwoLayer::init(&mut params, "f", feat, c.width, c.d_h, &mut rng);
        let g = c
            .noise_branch
            .then(|| TwoLayer::init(&mut params, "g", feat, c.width, c.d_h * c.d_xi, &mut rng));
        params.push(Param::new("kernel", init_kernel(&c.kernel_modes(), c.d_h, &mut rng)));
        let kernel = params.len() - 1;
        params.push(Param::new("bias", GridFunction::zeros(&[c.d_h])));
        let bias = params.len() - 1;
        Ok(Self {
            config,
            params,
            lift,
            proj,
            f,
            g,
            kernel,
            bias,
        })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_params(config: NspdeConfig, params: Vec<Param>) -> Result<Self> {
        let mut model = Self::new(config)?;
        if params.len() != model.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (have, want) in params.iter().zip(&model.params) {
            if have.name != want.name || have.value.shape() != want.value.shape() || have.value.is_complex() != want.value.is_complex() {
                return Err(Error::Format(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    have.name,
                    have.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn spatial_dims(&self) -> usize {
        self.config.space_modes.len()
    }

    /// Gain `alpha` of the derivative features per spatial axis,
    /// `1 / (2 pi c)` for cutoff `c`: the highest retained mode enters F and
    /// G with unit weight, whatever the grid.
    pub fn derivative_scales(&self) -> Vec<f64> {
        self.config
            .space_modes
            .iter()
            .map(|&c| 1.0 / (2.0 * std::f64::consts::PI * c as f64))
            .collect()
    }

    /// Complex entries of the kernel tensor.
    pub fn kernel_param_count(&self) -> usize {
        self.params[self.kernel].numel()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel() * if p.value.is_complex() { 2 } else { 1 }).sum()
    }

    /// Largest per-mode operator norm `max_w ||K_w||_2`.
    pub fn kernel_spectral_norm(&self) -> f64 {
        let d = self.config.d_h;
        self.params[self.kernel]
            .value
            .cx()
            .chunks(d * d)
            .map(|m| spectral_norm(m, d))
            .fold(0.0, f64::max)
    }

    /// Rescales the kernel so that [`Self::kernel_spectral_norm`] equals `rho`.
    pub fn rescale_kernel(&mut self, rho: f64) {
        let s = rho / self.kernel_spectral_norm();
        self.params[self.kernel].value.cx_mut().iter_mut().for_each(|z| *z *= s);
    }

    /// Upper bound on the Lipschitz constant (in the grid 2-norm) of
    /// `z -> H(z)` on a spatial grid `space` with `|xi_dot| <= max_xi`:
    /// `(Lip F + Lip G max_xi) * sqrt(1 + sum_a (2 pi k_a)^2)` with `k_a`
    /// the largest non-Nyquist mode of axis `a`.
    pub fn vector_field_lipschitz(&self, space: &[usize], max_xi: f64) -> f64 {
        let lip = |net: &TwoLayer| {
            let norm = |a: &Affine| {
                let w: Vec<C64> = self.params[a.w].value.re().iter().map(|&v| C64::new(v, 0.0)).collect();
                let d = a.cin.max(a.cout);
                let mut sq = vec![C64::new(0.0, 0.0); d * d];
                for o in 0..a.cout {
                    for i in 0..a.cin {
                        sq[o * d + i] = w[o * a.cin + i];
                    }
                }
                spectral_norm(&sq, d)
            };
            norm(&net.first) * norm(&net.second)
        };
        let gain: f64 = space
            .iter()
            .zip(self.derivative_scales())
            .map(|(&n, alpha)| (alpha * 2.0 * std::f64::consts::PI * ((n - 1) / 2) as f64).powi(2))
            .sum::<f64>();
        let g = self.g.as_ref().map_or(0.0, |g| lip(g) * max_xi);
        (lip(&self.f) + g) * (1.0 + gain).sqrt()
    }

    /// Multiplies the output layers of F and G by `factor`.
    pub fn scale_vector_fields(&mut self, factor: f64) {
        let mut layers = vec![self.f.second];
        layers.extend(self.g.map(|g| g.second));
        for a in layers {
            for idx in [a.w, a.b] {
                self.params[idx].value.re_mut().iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn check_inputs(&self, input: &Inputs) -> Result<()> {
        let c = &self.config;
        let u = input.u_in.shape();
        if u.len() != 3 + self.spatial_dims() || u[1] != c.d_u {
            return Err(Error::Shape(format!(
                "u_in {u:?} is not (batch, {}, time, {} spatial axes)",
                c.d_u,
                self.spatial_dims()
            )));
        }
        match (&input.xi_dot, c.noise_branch) {
            (Some(x), true) => {
                let s = x.shape();
                if s.len() != u.len() || s[0] != u[0] || s[1] != c.d_xi || s[2..] != u[2..] {
                    return Err(Error::Shape(format!("noise {s:?} does not match u_in {u:?}")));
                }
            }
            (None, true) => return Err(Error::InvalidArgument("model needs the noise input".into())),
            _ => {}
        }
        Ok(())
    }

    /// `H(z) = F([z, alpha dz]) + G([z, alpha dz]) xi`; `xi` is ignored
    /// without the noise branch.
    pub fn build_h(&self, tape: &mut Tape, vars: &[Var], z: Var, xi: Option<Var>) -> Result<Var> {
        let mut parts = vec![z];
        for (a, alpha) in self.derivative_scales().into_iter().enumerate() {
            let dz = tape.spectral_derivative(z, 3 + a)?;
            parts.push(tape.scale(dz, alpha));
        }
        let feats = tape.concat_channels(&parts)?;
        let f = self.f.apply(tape, vars, feats)?;
        match (&self.g, xi) {
            (Some(g), Some(xi)) => {
                let gm = g.apply(tape, vars, feats)?;
                let gx = tape.field_matvec(gm, xi)?;
                tape.add(f, gx)
            }
            _ => Ok(f),
        }
    }

    /// One application of the learned map. `delta` is the lifted initial
    /// state masked to `t = 0`.
    pub fn picard_step(&self, tape: &mut Tape, vars: &[Var], z: Var, delta: Var, xi: Option<Var>) -> Result<Var> {
        let h = self.build_h(tape, vars, z, xi)?;
        let src = tape.add(delta, h)?;
        let conv = tape.spectral_conv(src, vars[self.kernel])?;
        tape.channel_bias(conv, vars[self.bias])
    }

    /// Records the full forward pass and returns the output node with the
    /// final Picard state.
    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &[Var], input: &Inputs) -> Result<(Var, FixedPointState)> {
        self.check_inputs(input)?;
        let u = tape.constant(input.u_in.clone());
        let xi = match (&input.xi_dot, self.config.noise_branch) {
            (Some(x), true) => Some(tape.constant(x.clone())),
            _ => None,
        };
        let z0 = self.lift.apply(tape, vars, u)?;
        let delta = tape.mask_time0(z0)?;
        let mut z = z0;
        let mut residuals = Vec::with_capacity(self.config.depth);
        for _ in 0..self.config.depth {
            let next = self.picard_step(tape, vars, z, delta, xi)?;
            let (a, b) = (tape.value(next).re(), tape.value(z).re());
            residuals.push(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
            z = next;
        }
        let state = FixedPointState {
            iterate: tape.value(z).clone(),
            index: self.config.depth,
            residuals,
        };
        let out = self.proj.apply(tape, vars, z)?;
        Ok((out, state))
    }

    pub fn forward(&self, input: &Inputs) -> Result<GridFunction> {
        Ok(self.forward_with_state(input)?.0)
    }

    pub fn forward_with_state(&self, input: &Inputs) -> Result<(GridFunction, FixedPointState)> {
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &self.params);
        let (out, state) = self.forward_on_tape(&mut tape, &vars, input)?;
        Ok((tape.value(out).clone(), state))
    }

    /// Zero-shot evaluation on a grid at least as fine as the training grid.
    pub fn superresolve_eval(&self, input: &Inputs) -> Result<GridFunction> {
        let grid = input.grid();
        let trained = &self.config.trained_grid;
        if !trained.is_empty() && (trained.len() != grid.len() || grid.iter().zip(trained).any(|(g, t)| g < t)) {
            return Err(Error::Shape(format!(
                "grid {grid:?} is coarser than the training grid {trained:?}"
            )));
        }
        self.forward(input)
    }
}

/// Action of the kernel on an initial state without a time axis:
/// inverse time-DFT of `K` onto `time_len` points (zero padded), then a
/// `d_h x d_h` product per retained spatial mode, then the inverse spatial
/// DFT. `kernel: (2 ct, 2 cs..., d_h, d_h)`, `z0: (batch, d_h, space...)`,
/// result `(batch, d_h, time_len, space...)`.
pub fn semigroup_on_initial(kernel: &GridFunction, z0: &GridFunction, time_len: usize) -> Result<GridFunction> {
    let kr = kernel.rank();
    let zs = z0.shape();
    if !kernel.is_complex() || kr < 3 || zs.len() != kr - 1 || kernel.shape()[kr - 1] != zs[1] || kernel.shape()[kr - 2] != zs[1] {
        return Err(Error::Shape(format!(
            "kernel {:?} against initial state {zs:?}",
            kernel.shape()
        )));
    }
    let dh = zs[1];
    let batch = zs[0];
    let space = &zs[2..];
    let d = space.len();
    let kt = idft(&pad_modes(kernel, &[0], &[time_len])?, &[0])?;
    let space_axes: Vec<usize> = (2..2 + d).collect();
    let zh = dft(z0, &space_axes)?;
    let cut: Vec<usize> = kernel.shape()[1..1 + d].iter().map(|m| m / 2).collect();
    for (a, (&c, &n)) in cut.iter().zip(space).enumerate() {
        if 2 * c > n {
            return Err(Error::Cutoff { axis: a + 2, cutoff: c, len: n });
        }
    }
    let compact: Vec<usize> = cut.iter().map(|c| 2 * c).collect();
    let n_modes: usize = compact.iter().product();
    let slab: usize = space.iter().product();
    let full_of: Vec<usize> = (0..n_modes)
        .map(|j| {
            let mut rem = j;
            let mut off = 0;
            let mut stride = slab;
            for a in 0..d {
                let inner: usize = compact[a + 1..].iter().product();
                let ja = rem / inner;
                rem %= inner;
                stride /= space[a];
                off += retained_index(ja, cut[a], space[a]) * stride;
            }
            off
        })
        .collect();
    let (kc, zc) = (kt.cx(), zh.cx());
    let mut spec = vec![C64::new(0.0, 0.0); batch * dh * time_len * slab];
    for b in 0..batch {
        for t in 0..time_len {
            for (j, &full) in full_of.iter().enumerate() {
                let m = &kc[(t * n_modes + j) * dh * dh..(t * n_modes + j + 1) * dh * dh];
                for o in 0..dh {
                    let v: C64 = (0..dh).map(|i| m[o * dh + i] * zc[(b * dh + i) * slab + full]).sum();
                    spec[((b * dh + o) * time_len + t) * slab + full] = v;
                }
            }
        }
    }
    let mut shape = vec![batch, dh, time_len];
    shape.extend_from_slice(space);
    let spec = GridFunction::complex(&shape, spec)?;
    let axes: Vec<usize> = (3..3 + d).collect();
    let (out, _) = idft(&spec, &axes)?.real_part();
    Ok(out)
}
