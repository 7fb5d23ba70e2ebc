//! In-memory datasets of `(u_in, noise increments, u_out)` triples and the
//! generators that fill them from the reference solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{sample_q_wiener_from, sample_white_noise_from, NoiseKind, RNG_ALGORITHM};
use crate::solvers::{downsample, sample_eta, sample_initial_vorticity, solve_ns_vorticity, solve_phi41, window_starts};
use crate::solvers::{NsConfig, Phi41Config};
use crate::tensor::GridFunction;

/// Streams of the initial-condition draws sit above the noise streams.
const INITIAL_STREAM: u64 = 1 << 32;
/// Samples solved together by the Phi^4_1 generator.
const PHI41_CHUNK: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    /// `phi41`, `ns2d` or `ns2d-det`.
    pub equation: String,
    pub space: Vec<usize>,
    /// Recorded states per sample, including the initial one.
    pub time_points: usize,
    /// Noise increments per sample; zero for noise-free data.
    pub noise_steps: usize,
    /// Spacing of the recorded states.
    pub dt: f64,
    pub t_end: f64,
    pub noise_kind: String,
    pub noise_seed: u64,
    pub rng: String,
    pub samples: usize,
    /// Generator configuration as key = value pairs.
    pub solver: toml::Table,
}

impl DatasetMeta {
    pub fn slab(&self) -> usize {
        self.space.iter().product()
    }

    /// Scalars per sample in `(u_in, xi, u_out)`.
    pub fn sample_lens(&self) -> [usize; 3] {
        let s = self.slab();
        [s, self.noise_steps * s, self.time_points * s]
    }

    pub fn validate(&self) -> Result<()> {
        if self.space.is_empty() || self.space.contains(&0) || self.time_points == 0 {
            return Err(Error::Format(format!(
                "empty grid: space {:?}, {} time points",
                self.space, self.time_points
            )));
        }
        if self.noise_steps != 0 && self.noise_steps + 1 != self.time_points {
            return Err(Error::Format(format!(
                "{} noise steps for {} time points",
                self.noise_steps, self.time_points
            )));
        }
        Ok(())
    }
}

/// One training triple, each array flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(space...)`
    pub u_in: Vec<f64>,
    /// `(noise_steps, space...)`
    pub xi: Vec<f64>,
    /// `(time_points, space...)`
    pub u_out: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// `(N, space...)`
    pub u_in: GridFunction,
    /// `(N, noise_steps, space...)`
    pub xi: GridFunction,
    /// `(N, time_points, space...)`
    pub u_out: GridFunction,
}

fn stacked(n: usize, lead: Option<usize>, space: &[usize], data: Vec<f64>) -> Result<GridFunction> {
    let mut shape = vec![n];
    shape.extend(lead);
    shape.extend_from_slice(space);
    GridFunction::real(&shape, data)
}

impl Dataset {
    pub fn from_samples(mut meta: DatasetMeta, samples: Vec<Sample>) -> Result<Self> {
        meta.validate()?;
        let lens = meta.sample_lens();
        let n = samples.len();
        let mut parts = [Vec::new(), Vec::new(), Vec::new()];
        for (i, s) in samples.into_iter().enumerate() {
            for (k, (part, arr)) in parts.iter_mut().zip([s.u_in, s.xi, s.u_out]).enumerate() {
                if arr.len() != lens[k] {
                    return Err(Error::Shape(format!(
                        "sample {i}: array {k} holds {} values, expected {}",
                        arr.len(),
                        lens[k]
                    )));
                }
                part.extend(arr);
            }
        }
        meta.samples = n;
        let [u, x, o] = parts;
        Ok(Self {
            u_in: stacked(n, None, &meta.space, u)?,
            xi: stacked(n, Some(meta.noise_steps), &meta.space, x)?,
            u_out: stacked(n, Some(meta.time_points), &meta.space, o)?,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.samples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> Sample {
        let [a, b, c] = self.meta.sample_lens();
        Sample {
            u_in: self.u_in.re()[i * a..(i + 1) * a].to_vec(),
            xi: self.xi.re()[i * b..(i + 1) * b].to_vec(),
            u_out: self.u_out.re()[i * c..(i + 1) * c].to_vec(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!("sample {i} of {}", self.len())));
        }
        Self::from_samples(self.meta.clone(), indices.iter().map(|&i| self.sample(i)).collect())
    }

    /// Keeps every `factor`-th point of each spatial axis.
    pub fn downsample_space(&self, factor: usize) -> Result<Self> {
        let d = self.meta.space.len();
        let mut meta = self.meta.clone();
        let u_in = downsample(&self.u_in, &(1..1 + d).collect::<Vec<_>>(), factor)?;
        let tail: Vec<usize> = (2..2 + d).collect();
        let xi = downsample(&self.xi, &tail, factor)?;
        let u_out = downsample(&self.u_out, &tail, factor)?;
        meta.space = u_in.shape()[1..].to_vec();
        Ok(Self { meta, u_in, xi, u_out })
    }
}

/// Data source described by a solver configuration.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    Phi41(Phi41Config),
    /// Navier-Stokes; noise-free when `sigma == 0`.
    Ns(NsConfig),
}

fn table<T: Serialize>(cfg: &T) -> toml::Table {
    toml::Table::try_from(cfg).expect("configs serialize to tables")
}

impl Generator {
    pub fn validate(&self) -> Result<()> {
        match self {
            Generator::Phi41(c) => {
                c.validate()?;
                if c.samples == 0 {
                    return Err(Error::Config("samples must be positive".into()));
                }
            }
            Generator::Ns(c) => {
                c.validate()?;
                if c.trajectories == 0 || (c.window > 0 && c.windows_per_trajectory == 0) {
                    return Err(Error::Config("trajectories and windows must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> Result<DatasetMeta> {
        self.validate()?;
        Ok(match self {
            Generator::Phi41(c) => DatasetMeta {
                equation: "phi41".into(),
                space: vec![c.n_x],
                time_points: c.steps() + 1,
                noise_steps: c.steps(),
                dt: c.dt,
                t_end: c.t_end,
                noise_kind: NoiseKind::White.label(),
                noise_seed: c.seed,
                rng: RNG_ALGORITHM.into(),
                samples: c.samples,
                solver: table(c),
            },
            Generator::Ns(c) => {
                let noisy = c.sigma != 0.0;
                let (states, count) = if c.window == 0 {
                    (c.recorded_steps(), c.trajectories)
                } else {
                    (c.window, c.trajectories * c.windows_per_trajectory)
                };
                let dt = c.dt * c.record_every as f64;
                DatasetMeta {
                    equation: if noisy { "ns2d" } else { "ns2d-det" }.into(),
                    space: vec![c.n, c.n],
                    time_points: states + 1,
                    noise_steps: if noisy { states } else { 0 },
                    dt,
                    t_end: dt * states as f64,
                    noise_kind: if noisy {
                        NoiseKind::QWiener { alpha: c.alpha }.label()
                    } else {
                        "none".into()
                    },
                    noise_seed: c.seed,
                    rng: RNG_ALGORITHM.into(),
                    samples: count,
                    solver: table(c),
                }
            }
        })
    }

    /// Produces the samples in order, handing each to `sink`.
    pub fn run(&self, sink: &mut dyn FnMut(Sample) -> Result<()>) -> Result<()> {
        self.validate()?;
        match self {
            Generator::Phi41(c) => run_phi41(c, sink),
            Generator::Ns(c) => run_ns(c, sink),
        }
    }

    pub fn collect(&self) -> Result<Dataset> {
        let meta = self.meta()?;
        let mut samples = Vec::with_capacity(meta.samples);
        self.run(&mut |s| {
            samples.push(s);
            Ok(())
        })?;
        Dataset::from_samples(meta, samples)
    }
}

fn run_phi41(c: &Phi41Config, sink: &mut dyn FnMut(Sample) -> Result<()>) -> Result<()> {
    let n = c.n_x;
    let steps = c.steps();
    let xs = c.grid();
    let base = c.base_u0();
    let mut start = 0;
    while start < c.samples {
        let count = PHI41_CHUNK.min(c.samples - start);
        let noise = sample_white_noise_from(c.seed, start as u64, count, steps, c.dt, &[n], &[1.0])?;
        let mut u0 = Vec::with_capacity(count * n);
        for i in start..start + count {
            if c.vary_u0 {
                let (eta, _) = sample_eta(c.seed, INITIAL_STREAM + i as u64, c.eta_lambda, &xs);
                u0.extend(base.iter().zip(eta.re()).map(|(a, b)| a + b));
            } else {
                u0.extend_from_slice(&base);
            }
        }
        let u0 = GridFunction::real(&[count, n], u0)?;
        let u = solve_phi41(c, &u0, &noise)?;
        let per = (steps + 1) * n;
        for b in 0..count {
            sink(Sample {
                u_in: u0.re()[b * n..(b + 1) * n].to_vec(),
                xi: noise.sample(b).to_vec(),
                u_out: u.re()[b * per..(b + 1) * per].to_vec(),
            })?;
        }
        start += count;
    }
    Ok(())
}

fn run_ns(c: &NsConfig, sink: &mut dyn FnMut(Sample) -> Result<()>) -> Result<()> {
    let slab = c.n * c.n;
    let noisy = c.sigma != 0.0;
    let recorded = c.recorded_steps();
    for j in 0..c.trajectories {
        let w0 = sample_initial_vorticity(c.seed, INITIAL_STREAM + j as u64, c.n);
        let noise = if noisy {
            Some(sample_q_wiener_from(c.seed, j as u64, 1, c.steps, c.dt, [c.n, c.n], c.alpha)?)
        } else {
            None
        };
        let w = solve_ns_vorticity(c, &w0, noise.as_ref())?;
        // increments summed over each recorded interval
        let dw: Vec<f64> = match &noise {
            Some(p) => {
                let raw = p.sample(0);
                let mut out = vec![0.0; recorded * slab];
                for (s, chunk) in raw.chunks(slab).enumerate() {
                    let dst = &mut out[(s / c.record_every) * slab..][..slab];
                    dst.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                }
                out
            }
            None => Vec::new(),
        };
        let states = w.re();
        let (starts, len) = if c.window == 0 {
            (vec![0], recorded)
        } else {
            (window_starts(recorded, c.window, c.windows_per_trajectory)?, c.window)
        };
        for s in starts {
            sink(Sample {
                u_in: states[s * slab..(s + 1) * slab].to_vec(),
                xi: if noisy { dw[s * slab..(s + len) * slab].to_vec() } else { Vec::new() },
                u_out: states[s * slab..(s + len + 1) * slab].to_vec(),
            })?;
        }
    }
    Ok(())
}
