//! Fourier Neural Operator baseline.
//!
//! `z^0 = L([v, coords])`, `z^k = tanh(A_k z^{k-1} + b_k + K_k * z^{k-1})`,
//! output `P(z^n)`. Every layer owns its kernel.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{bind, init_kernel, Affine, TwoLayer};
use crate::noise::NoiseRng;
use crate::tensor::GridFunction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FnoConfig {
    /// Channels of the input field (`u0` broadcast over time, or the noise).
    pub d_in: usize,
    pub d_out: usize,
    pub d_h: usize,
    pub time_modes: usize,
    pub space_modes: Vec<usize>,
    pub layers: usize,
    /// Append normalized `(t, x...)` coordinates to the lift input.
    pub coords: bool,
    pub trained_grid: Vec<usize>,
    pub seed: u64,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self {
            d_in: 1,
            d_out: 1,
            d_h: 16,
            time_modes: 32,
            space_modes: vec![32],
            layers: 4,
            coords: true,
            trained_grid: Vec::new(),
            seed: 0,
        }
    }
}

impl FnoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 || self.d_h == 0 {
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

    fn lift_inputs(&self) -> usize {
        self.d_in + if self.coords { 1 + self.space_modes.len() } else { 0 }
    }
}

/// Parameter slots of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FnoLayer {
    pub local: Affine,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FnoModel {
    pub config: FnoConfig,
    pub params: Vec<Param>,
    pub lift: Affine,
    pub layers: Vec<FnoLayer>,
    pub proj: TwoLayer,
}

/// `tanh(A z + b + Re idft(K . dft(z)))` on `(batch, d_h, time, space...)`.
pub fn fno_layer(tape: &mut Tape, vars: &[Var], z: Var, layer: &FnoLayer) -> Result<Var> {
    let local = layer.local.apply(tape, vars, z)?;
    let conv = tape.spectral_conv(z, vars[layer.kernel])?;
    let s = tape.add(local, conv)?;
    tape.tanh(s)
}

/// Normalized grid coordinates `(t / T, x_a / N_a)` as `1 + d` channels.
pub fn coordinate_channels(batch: usize, grid: &[usize]) -> GridFunction {
    let mut shape = vec![batch, grid.len()];
    shape.extend_from_slice(grid);
    GridFunction::from_fn(&shape, |i| i[2 + i[1]] as f64 / grid[i[1]] as f64)
}

impl FnoModel {
    pub fn new(config: FnoConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = NoiseRng::new(c.seed, 0x66_6e6f);
        let mut params = Vec::new();
        let lift = Affine::init(&mut params, "lift", c.lift_inputs(), c.d_h, &mut rng);
        let mut layers = Vec::with_capacity(c.layers);
        for k in 0..c.layers {
            let local = Affine::init(&mut params, &format!("layer{k}.local"), c.d_h, c.d_h, &mut rng);
            params.push(Param::new(
                format!("layer{k}.kernel"),
                init_kernel(&c.kernel_modes(), c.d_h, &mut rng),
            ));
            layers.push(FnoLayer {
                local,
                kernel: params.len() - 1,
            });
        }
        let proj = TwoLayer::init(&mut params, "proj", c.d_h, c.d_h, c.d_out, &mut rng);
        Ok(Self {
            config,
            params,
            lift,
            layers,
            proj,
        })
    }

    pub fn from_params(config: FnoConfig, params: Vec<Param>) -> Result<Self> {
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

    /// Complex entries over all layer kernels.
    pub fn kernel_param_count(&self) -> usize {
        self.layers.iter().map(|l| self.params[l.kernel].numel()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel() * if p.value.is_complex() { 2 } else { 1 }).sum()
    }

    pub fn check_input(&self, v: &GridFunction) -> Result<()> {
        let s = v.shape();
        if s.len() != 3 + self.config.space_modes.len() || s[1] != self.config.d_in {
            return Err(Error::Shape(format!(
                "input {s:?} is not (batch, {}, time, {} spatial axes)",
                self.config.d_in,
                self.config.space_modes.len()
            )));
        }
        Ok(())
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &[Var], input: &GridFunction) -> Result<Var> {
        self.check_input(input)?;
        let mut x = tape.constant(input.clone());
        if self.config.coords {
            let coords = tape.constant(coordinate_channels(input.shape()[0], &input.shape()[2..]));
            x = tape.concat_channels(&[x, coords])?;
        }
        let mut z = self.lift.apply(tape, vars, x)?;
        for layer in &self.layers {
            z = fno_layer(tape, vars, z, layer)?;
        }
        self.proj.apply(tape, vars, z)
    }

    pub fn forward(&self, input: &GridFunction) -> Result<GridFunction> {
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &self.params);
        let out = self.forward_on_tape(&mut tape, &vars, input)?;
        Ok(tape.value(out).clone())
    }

    pub fn superresolve_eval(&self, input: &GridFunction) -> Result<GridFunction> {
        let grid = &input.shape()[2..];
        let trained = &self.config.trained_grid;
        if !trained.is_empty() && (trained.len() != grid.len() || grid.iter().zip(trained).any(|(g, t)| g < t)) {
            return Err(Error::Shape(format!(
                "grid {grid:?} is coarser than the training grid {trained:?}"
            )));
        }
        self.forward(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nspde::{NspdeConfig, NspdeModel};
    use crate::testutil::{direct_conv, kernel_in_space, Fixture};

    fn config(d_h: usize, ct: usize, cs: &[usize], layers: usize, coords: bool) -> FnoConfig {
        FnoConfig {
            d_in: 1,
            d_out: 1,
            d_h,
            time_modes: ct,
            space_modes: cs.to_vec(),
            layers,
            coords,
            trained_grid: Vec::new(),
            seed: 5,
        }
    }

    fn layer_out(model: &FnoModel, z: &GridFunction, k: usize) -> GridFunction {
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &model.params);
        let zv = tape.constant(z.clone());
        let out = fno_layer(&mut tape, &vars, zv, &model.layers[k]).unwrap();
        tape.value(out).clone()
    }

    fn zero_local(model: &mut FnoModel, k: usize) {
        let l = model.layers[k].local;
        model.params[l.w].value.re_mut().fill(0.0);
        model.params[l.b].value.re_mut().fill(0.0);
    }

    /// Cyclic shift of every grid axis of `(batch, c, grid...)`.
    fn shift(v: &GridFunction, by: &[usize]) -> GridFunction {
        let s = v.shape().to_vec();
        GridFunction::from_fn(&s, |i| {
            let mut j = i.to_vec();
            for (a, &d) in by.iter().enumerate() {
                j[2 + a] = (i[2 + a] + s[2 + a] - d) % s[2 + a];
            }
            v.re()[v.offset(&j)]
        })
    }

    #[test]
    fn zero_layer_gives_zero() {
        let mut model = FnoModel::new(config(3, 2, &[2], 1, false)).unwrap();
        zero_local(&mut model, 0);
        let k = model.layers[0].kernel;
        model.params[k].value.cx_mut().iter_mut().for_each(|z| *z = 0.0.into());
        let z = Fixture::new(1).real(&[2, 3, 4, 8]);
        assert!(layer_out(&model, &z, 0).re().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_kernel_is_pointwise() {
        let mut model = FnoModel::new(config(3, 2, &[2], 1, false)).unwrap();
        let k = model.layers[0].kernel;
        model.params[k].value.cx_mut().iter_mut().for_each(|z| *z = 0.0.into());
        let z = Fixture::new(2).real(&[2, 3, 4, 8]);
        let out = layer_out(&model, &z, 0);
        let local = model.layers[0].local;
        for b in 0..2 {
            for p in 0..32 {
                let point: Vec<f64> = (0..3).map(|c| z.re()[(b * 3 + c) * 32 + p]).collect();
                let expect = local.eval_point(&model.params, &point);
                for o in 0..3 {
                    assert!((out.re()[(b * 3 + o) * 32 + p] - expect[o].tanh()).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn spectral_term_matches_direct_convolution() {
        let grid = [4, 8, 8];
        let mut model = FnoModel::new(config(2, 1, &[2, 3], 1, false)).unwrap();
        zero_local(&mut model, 0);
        let z = Fixture::new(3).real(&[2, 2, 4, 8, 8]);
        let kappa = kernel_in_space(&model.params[model.layers[0].kernel].value, &grid);
        let expect = direct_conv(&kappa, &z, &grid);
        let out = layer_out(&model, &z, 0);
        for (a, b) in out.re().iter().zip(&expect) {
            assert!((a - b.tanh()).abs() < 1e-10, "{a} vs {}", b.tanh());
        }
    }

    #[test]
    fn no_layers_is_projection_of_lift() {
        let model = FnoModel::new(config(3, 2, &[2], 0, false)).unwrap();
        let v = Fixture::new(4).real(&[2, 1, 4, 8]);
        let out = model.forward(&v).unwrap();
        for p in 0..64 {
            let (b, q) = (p / 32, p % 32);
            let z = model.lift.eval_point(&model.params, &[v.re()[p]]);
            let y = model.proj.eval_point(&model.params, &z);
            assert!((out.re()[b * 32 + q] - y[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn pointwise_model_commutes_with_shifts() {
        let mut model = FnoModel::new(config(3, 2, &[2], 4, false)).unwrap();
        for l in model.layers.clone() {
            model.params[l.kernel].value.cx_mut().iter_mut().for_each(|z| *z = 0.0.into());
        }
        let v = Fixture::new(5).real(&[1, 1, 6, 10]);
        let a = shift(&model.forward(&v).unwrap(), &[2, 3]);
        let b = model.forward(&shift(&v, &[2, 3])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn full_model_commutes_with_shifts() {
        let model = FnoModel::new(config(4, 2, &[3], 4, false)).unwrap();
        let v = Fixture::new(6).real(&[2, 1, 8, 12]);
        let a = shift(&model.forward(&v).unwrap(), &[3, 5]);
        let b = model.forward(&shift(&v, &[3, 5])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn coordinates_break_shift_equivariance() {
        let model = FnoModel::new(config(4, 2, &[3], 2, true)).unwrap();
        let v = Fixture::new(7).real(&[1, 1, 8, 12]);
        let a = shift(&model.forward(&v).unwrap(), &[3, 5]);
        let b = model.forward(&shift(&v, &[3, 5])).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn paper_grid_shapes() {
        let cfg = FnoConfig::default().fit_to_grid(&[51, 128]).unwrap();
        assert_eq!((cfg.time_modes, cfg.space_modes[0]), (25, 32));
        let model = FnoModel::new(cfg).unwrap();
        assert_eq!(model.layers.len(), 4);
        let v = Fixture::new(8).real(&[2, 1, 51, 128]);
        assert_eq!(model.forward(&v).unwrap().shape(), &[2, 1, 51, 128]);
        assert!(model.forward(&Fixture::new(8).real(&[2, 2, 51, 128])).is_err());
    }

    #[test]
    fn layers_do_not_share_kernels() {
        let model = FnoModel::new(config(2, 2, &[2], 4, true)).unwrap();
        let ks: Vec<usize> = model.layers.iter().map(|l| l.kernel).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(ks[i], ks[j]);
                assert_ne!(model.params[ks[i]].value, model.params[ks[j]].value);
            }
        }
    }

    #[test]
    fn kernel_count_is_four_times_nspde() {
        let nspde = NspdeModel::new(NspdeConfig::default()).unwrap();
        let fno = FnoModel::new(FnoConfig::default()).unwrap();
        let ratio = fno.kernel_param_count() as f64 / nspde.kernel_param_count() as f64;
        assert!((ratio / 4.0 - 1.0).abs() <= 0.1, "ratio {ratio}");
    }

    #[test]
    fn parameters_round_trip_through_from_params() {
        let model = FnoModel::new(config(2, 2, &[2], 3, true)).unwrap();
        let again = FnoModel::from_params(model.config.clone(), model.params.clone()).unwrap();
        assert_eq!(again, model);
        let mut bad = model.params.clone();
        bad.pop();
        assert!(FnoModel::from_params(model.config.clone(), bad).is_err());
    }

    #[test]
    fn superresolution_rejects_coarser_grids() {
        let model = FnoModel::new(config(2, 2, &[2], 1, true).fit_to_grid(&[8, 16]).unwrap()).unwrap();
        assert!(model.superresolve_eval(&GridFunction::zeros(&[1, 1, 8, 8])).is_err());
        assert!(model.superresolve_eval(&GridFunction::zeros(&[1, 1, 16, 32])).is_ok());
    }
}
