//! Losses, Adam, the step schedule, splits and the training loop.

use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Tape, Var};
use crate::dataset::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::fno::{FnoConfig, FnoModel};
use crate::nn::bind;
use crate::nspde::{Inputs, NspdeConfig, NspdeModel};
use crate::tensor::GridFunction;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// `u0 -> u`
    U0,
    /// `xi -> u`
    #[default]
    Xi,
    /// `(u0, xi) -> u`
    U0xi,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::U0 => "u0",
            Task::Xi => "xi",
            Task::U0xi => "u0xi",
        }
    }

    pub fn uses_noise(self) -> bool {
        self != Task::U0
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u0" => Ok(Task::U0),
            "xi" => Ok(Task::Xi),
            "u0xi" => Ok(Task::U0xi),
            _ => Err(Error::InvalidArgument(format!("unknown task {s:?} (u0, xi, u0xi)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Nspde,
    Fno,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Nspde => "nspde",
            ModelKind::Fno => "fno",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nspde" => Ok(ModelKind::Nspde),
            "fno" => Ok(ModelKind::Fno),
            _ => Err(Error::InvalidArgument(format!("unknown model {s:?} (nspde, fno)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub halve_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub task: Task,
    pub model: ModelKind,
    /// Training samples; defaults to everything not held out.
    pub train_n: Option<usize>,
    /// Held-out samples; defaults to 20% of the dataset.
    pub test_n: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-3,
            halve_every: 100,
            batch_size: 20,
            seed: 0,
            task: Task::Xi,
            model: ModelKind::Nspde,
            train_n: None,
            test_n: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if self.halve_every == 0 || self.batch_size == 0 {
            return Err(Error::Config("halve_every and batch_size must be positive".into()));
        }
        if self.model == ModelKind::Fno && self.task == Task::U0xi {
            return Err(Error::InvalidArgument(
                "the FNO takes a single input field and cannot consume the (u0, xi) pair".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate used during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.halve_every) as i32)
    }

    /// `(train, test)` sizes for a dataset of `n` samples.
    pub fn split_sizes(&self, n: usize) -> Result<(usize, usize)> {
        let test = self.test_n.unwrap_or((n as f64 * 0.2).round() as usize);
        let train = self.train_n.unwrap_or(n.saturating_sub(test));
        if train == 0 || train + test > n {
            return Err(Error::Config(format!(
                "cannot take {train} training and {test} test samples from {n}"
            )));
        }
        Ok((train, test))
    }
}

/// Mean over the batch of the grid sum of squared errors.
pub fn l2_loss(pred: &GridFunction, target: &GridFunction) -> Result<f64> {
    check_pair(pred, target)?;
    let b = pred.shape()[0];
    let s: f64 = pred.re().iter().zip(target.re()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / b as f64)
}

/// Mean over the batch of `||pred - target|| / ||target||`.
pub fn relative_l2(pred: &GridFunction, target: &GridFunction) -> Result<f64> {
    check_pair(pred, target)?;
    let b = pred.shape()[0];
    let per = pred.len() / b;
    let total: f64 = pred
        .re()
        .chunks(per)
        .zip(target.re().chunks(per))
        .map(|(p, t)| {
            let num: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
            let den: f64 = t.iter().map(|a| a * a).sum();
            (num / den).sqrt()
        })
        .sum();
    Ok(total / b as f64)
}

fn check_pair(pred: &GridFunction, target: &GridFunction) -> Result<()> {
    if pred.shape() != target.shape() || pred.is_complex() || target.is_complex() || pred.rank() == 0 || pred.shape()[0] == 0 {
        return Err(Error::Shape(format!(
            "prediction {:?} against target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Adam with bias correction. Complex entries are two independent real
/// components whose gradients are `2 Re g` and `2 Im g` (see
/// [`crate::autodiff::Gradients::accumulate_into`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn components(p: &Param) -> usize {
    p.value.len() * if p.value.is_complex() { 2 } else { 1 }
}

impl Adam {
    pub fn new(params: &[Param]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: params.iter().map(|p| vec![0.0; components(p)]).collect(),
            v: params.iter().map(|p| vec![0.0; components(p)]).collect(),
        }
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn step(&mut self, params: &mut [Param], lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut update = |i: usize, g: f64| -> f64 {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps)
            };
            if p.value.is_complex() {
                let grad = p.grad.cx().to_vec();
                for (i, (z, g)) in p.value.cx_mut().iter_mut().zip(grad).enumerate() {
                    z.re -= update(2 * i, 2.0 * g.re);
                    z.im -= update(2 * i + 1, 2.0 * g.im);
                }
            } else {
                let grad = p.grad.re().to_vec();
                for (i, (w, g)) in p.value.re_mut().iter_mut().zip(grad).enumerate() {
                    *w -= update(i, g);
                }
            }
        }
    }
}

/// Disjoint `(train, test)` index sets drawn by a seeded shuffle.
pub fn split(n: usize, train_n: usize, test_n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if train_n + test_n > n {
        return Err(Error::InvalidArgument(format!(
            "split of {train_n} + {test_n} from {n} samples"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx[train_n..train_n + test_n].to_vec();
    idx.truncate(train_n);
    Ok((idx, test))
}

/// Model-ready tensors for a set of samples, all `(batch, 1, time, space...)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub u_in: GridFunction,
    pub xi_dot: Option<GridFunction>,
    pub target: GridFunction,
}

/// Broadcasts `u_in` over time and turns increments into the rate `dW/dt`
/// (the final time slot is zero).
pub fn make_batch(data: &Dataset, indices: &[usize], task: Task) -> Result<Batch> {
    let m = &data.meta;
    let (t, slab) = (m.time_points, m.slab());
    let t_extent = m.dt * t as f64;
    let b = indices.len();
    if let Some(&i) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::InvalidArgument(format!("sample {i} of {}", data.len())));
    }
    if task.uses_noise() && m.noise_steps + 1 != t {
        return Err(Error::InvalidArgument(format!(
            "task {} needs noise increments, dataset {} has none",
            task.label(),
            m.equation
        )));
    }
    let mut u = Vec::with_capacity(b * t * slab);
    let mut target = Vec::with_capacity(b * t * slab);
    let mut xi = Vec::with_capacity(if task.uses_noise() { b * t * slab } else { 0 });
    for &i in indices {
        let u0 = &data.u_in.re()[i * slab..(i + 1) * slab];
        for _ in 0..t {
            u.extend_from_slice(u0);
        }
        target.extend_from_slice(&data.u_out.re()[i * t * slab..(i + 1) * t * slab]);
        if task.uses_noise() {
            let inc = &data.xi.re()[i * (t - 1) * slab..(i + 1) * (t - 1) * slab];
            xi.extend(inc.iter().map(|v| v / m.dt));
            xi.extend(std::iter::repeat_n(0.0, slab));
        }
    }
    let field = |d| GridFunction::field(b, 1, t, &m.space, t_extent, d);
    Ok(Batch {
        u_in: field(u)?,
        xi_dot: if task.uses_noise() { Some(field(xi)?) } else { None },
        target: field(target)?,
    })
}

/// Either operator, bound to the task it is trained for.
#[derive(Clone, Debug, PartialEq)]
pub enum OperatorModel {
    Nspde(NspdeModel),
    Fno(FnoModel),
}

fn widen(modes: &mut Vec<usize>, dims: usize) {
    if modes.len() == 1 && dims > 1 {
        *modes = vec![modes[0]; dims];
    }
}

impl OperatorModel {
    /// Builds a fresh model for `task` on the dataset grid. Cutoffs are
    /// clamped to the grid; a single spatial cutoff applies to every axis.
    pub fn build(kind: ModelKind, task: Task, mut nspde: NspdeConfig, mut fno: FnoConfig, meta: &DatasetMeta) -> Result<Self> {
        let mut grid = vec![meta.time_points];
        grid.extend_from_slice(&meta.space);
        let dims = meta.space.len();
        match kind {
            ModelKind::Nspde => {
                nspde.d_u = 1;
                nspde.d_xi = 1;
                nspde.noise_branch = task.uses_noise();
                widen(&mut nspde.space_modes, dims);
                Ok(OperatorModel::Nspde(NspdeModel::new(nspde.fit_to_grid(&grid)?)?))
            }
            ModelKind::Fno => {
                if task == Task::U0xi {
                    return Err(Error::InvalidArgument(
                        "the FNO takes a single input field and cannot consume the (u0, xi) pair".into(),
                    ));
                }
                fno.d_in = 1;
                fno.d_out = 1;
                widen(&mut fno.space_modes, dims);
                Ok(OperatorModel::Fno(FnoModel::new(fno.fit_to_grid(&grid)?)?))
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            OperatorModel::Nspde(_) => ModelKind::Nspde,
            OperatorModel::Fno(_) => ModelKind::Fno,
        }
    }

    pub fn params(&self) -> &[Param] {
        match self {
            OperatorModel::Nspde(m) => &m.params,
            OperatorModel::Fno(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        match self {
            OperatorModel::Nspde(m) => &mut m.params,
            OperatorModel::Fno(m) => &mut m.params,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            OperatorModel::Nspde(m) => m.param_count(),
            OperatorModel::Fno(m) => m.param_count(),
        }
    }

    pub fn trained_grid(&self) -> &[usize] {
        match self {
            OperatorModel::Nspde(m) => &m.config.trained_grid,
            OperatorModel::Fno(m) => &m.config.trained_grid,
        }
    }

    /// The task the model consumes inputs for. An FNO input is ambiguous
    /// between `u0` and `xi`, so it is passed in.
    fn inputs(&self, batch: &Batch, task: Task) -> Result<Inputs> {
        let xi_dot = if task.uses_noise() {
            Some(batch.xi_dot.clone().ok_or_else(|| Error::InvalidArgument("batch has no noise".into()))?)
        } else {
            None
        };
        Ok(Inputs {
            u_in: batch.u_in.clone(),
            xi_dot,
        })
    }

    fn fno_input(batch: &Batch, task: Task) -> Result<GridFunction> {
        match task {
            Task::U0 => Ok(batch.u_in.clone()),
            Task::Xi => batch.xi_dot.clone().ok_or_else(|| Error::InvalidArgument("batch has no noise".into())),
            Task::U0xi => Err(Error::InvalidArgument(
                "the FNO takes a single input field and cannot consume the (u0, xi) pair".into(),
            )),
        }
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &[Var], batch: &Batch, task: Task) -> Result<Var> {
        match self {
            OperatorModel::Nspde(m) => Ok(m.forward_on_tape(tape, vars, &self.inputs(batch, task)?)?.0),
            OperatorModel::Fno(m) => m.forward_on_tape(tape, vars, &Self::fno_input(batch, task)?),
        }
    }

    /// Forward pass; `superres` routes through the zero-shot entry points,
    /// which reject grids coarser than the training grid.
    pub fn predict(&self, batch: &Batch, task: Task, superres: bool) -> Result<GridFunction> {
        match (self, superres) {
            (OperatorModel::Nspde(m), true) => m.superresolve_eval(&self.inputs(batch, task)?),
            (OperatorModel::Nspde(m), false) => m.forward(&self.inputs(batch, task)?),
            (OperatorModel::Fno(m), true) => m.superresolve_eval(&Self::fno_input(batch, task)?),
            (OperatorModel::Fno(m), false) => m.forward(&Self::fno_input(batch, task)?),
        }
    }
}

/// Mean relative L2 error of `model` over `indices`, evaluated in batches.
pub fn evaluate(model: &OperatorModel, data: &Dataset, indices: &[usize], task: Task, batch_size: usize, superres: bool) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("evaluation on zero samples".into()));
    }
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = make_batch(data, chunk, task)?;
        let pred = model.predict(&batch, task, superres)?;
        total += relative_l2(&pred, &batch.target)? * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

fn batch_loss(model: &OperatorModel, data: &Dataset, chunk: &[usize], task: Task) -> Result<f64> {
    let batch = make_batch(data, chunk, task)?;
    let pred = model.predict(&batch, task, false)?;
    l2_loss(&pred, &batch.target)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_rel_l2: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub model: ModelKind,
    pub task: Task,
    pub train_n: usize,
    pub test_n: usize,
    pub param_count: usize,
    /// Row 0 holds the initial errors.
    pub records: Vec<EpochRecord>,
}

impl Metrics {
    /// Deterministic CSV without wall-clock time.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# model={} task={} train_n={} test_n={} params={}\nepoch,lr,train_loss,test_rel_l2\n",
            self.model.label(),
            self.task.label(),
            self.train_n,
            self.test_n,
            self.param_count
        );
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, r.test_rel_l2));
        }
        s
    }

    /// Wall-clock seconds per epoch.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for r in &self.records {
            s.push_str(&format!("{},{:.3}\n", r.epoch, r.seconds));
        }
        s
    }

    pub fn final_test_error(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.test_rel_l2)
    }
}

/// Trains `model` in place. `on_epoch` sees every record as it is produced.
pub fn train(cfg: &TrainConfig, model: &mut OperatorModel, data: &Dataset, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<Metrics> {
    cfg.validate()?;
    if model.kind() != cfg.model {
        return Err(Error::InvalidArgument(format!(
            "config asks for {} but the model is {}",
            cfg.model.label(),
            model.kind().label()
        )));
    }
    let (train_n, test_n) = cfg.split_sizes(data.len())?;
    if test_n == 0 {
        return Err(Error::Config("at least one test sample is required".into()));
    }
    let (train_idx, test_idx) = split(data.len(), train_n, test_n, cfg.seed)?;
    let mut metrics = Metrics {
        model: cfg.model,
        task: cfg.task,
        train_n,
        test_n,
        param_count: model.param_count(),
        records: Vec::with_capacity(cfg.epochs + 1),
    };
    let clock = Instant::now();
    let mut initial = 0.0;
    for chunk in train_idx.chunks(cfg.batch_size) {
        initial += batch_loss(model, data, chunk, cfg.task)? * chunk.len() as f64;
    }
    let record = EpochRecord {
        epoch: 0,
        lr: cfg.lr_at(0),
        train_loss: initial / train_n as f64,
        test_rel_l2: evaluate(model, data, &test_idx, cfg.task, cfg.batch_size, false)?,
        seconds: clock.elapsed().as_secs_f64(),
    };
    on_epoch(&record);
    metrics.records.push(record);

    let mut adam = Adam::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x74_7261_696e);
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.epochs {
        let clock = Instant::now();
        let lr = cfg.lr_at(epoch - 1);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(data, chunk, cfg.task)?;
            let mut tape = Tape::new();
            let vars = bind(&mut tape, model.params());
            let pred = model.forward_on_tape(&mut tape, &vars, &batch, cfg.task)?;
            let target = tape.constant(batch.target.clone());
            let diff = tape.sub(pred, target)?;
            let ss = tape.sum_squares(diff);
            let loss = tape.scale(ss, 1.0 / chunk.len() as f64);
            let value = tape.value(loss).re()[0];
            if !value.is_finite() {
                return Err(Error::NanLoss { epoch });
            }
            let grads = tape.backward(loss)?;
            drop(vars);
            let params = model.params_mut();
            params.iter_mut().for_each(Param::zero_grad);
            grads.accumulate_into(params)?;
            adam.step(params, lr);
            total += value * chunk.len() as f64;
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: total / train_n as f64,
            test_rel_l2: evaluate(model, data, &test_idx, cfg.task, cfg.batch_size, false)?,
            seconds: clock.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        metrics.records.push(record);
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests;
