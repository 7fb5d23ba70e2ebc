//! Binary dataset and checkpoint files, TOML run configurations and the
//! small text outputs of a training run.
//!
//! All binary numbers are little-endian. A dataset file is
//!
//! ```text
//! "NSPD1" | version u16 | meta_len u32 | meta (TOML) | records...
//! record = 3 x (rank u32 | dims u64 x rank | f64 x prod(dims))
//! ```
//!
//! with one record `(u_in, xi, u_out)` per sample.

use crate::autodiff::Param;
use crate::dataset::{Dataset, DatasetMeta, Sample};
use crate::fno::{FnoConfig, FnoModel};
use crate::nspde::{NspdeConfig, NspdeModel};
use crate::solvers::{NsConfig, Phi41Config};
use crate::tensor::{GridFunction, C64};
use crate::training::{OperatorModel, Task, TrainConfig};
use crate::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const DATASET_MAGIC: &[u8; 5] = b"NSPD1";
pub const DATASET_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"NSPC1";
pub const CHECKPOINT_VERSION: u16 = 1;

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes `bytes` through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn put_array(out: &mut Vec<u8>, dims: &[usize], data: &[f64]) {
    out.extend((dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend((d as u64).to_le_bytes());
    }
    for v in data {
        out.extend(v.to_le_bytes());
    }
}

fn array_bytes(dims: &[usize]) -> u64 {
    4 + 8 * dims.len() as u64 + 8 * dims.iter().product::<usize>() as u64
}

/// Little-endian cursor over an in-memory file.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: (self.pos + n) as u64,
            actual: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn text(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()? as usize;
        if rank > 16 {
            return Err(Error::Format(format!("array rank {rank}")));
        }
        (0..rank).map(|_| Ok(self.u64()? as usize)).collect()
    }

    fn header(&mut self, magic: &[u8], version: u16, what: &str) -> Result<()> {
        if self.bytes.len() < magic.len() || &self.bytes[..magic.len()] != magic {
            return Err(Error::Format(format!("not a {what} file (bad magic)")));
        }
        self.pos = magic.len();
        let v = self.u16()?;
        if v != version {
            return Err(Error::Format(format!("{what} version {v}, this build reads {version}")));
        }
        Ok(())
    }
}

fn meta_header(meta: &DatasetMeta) -> Result<Vec<u8>> {
    let text = toml::to_string(meta).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let mut out = Vec::with_capacity(11 + text.len());
    out.extend(DATASET_MAGIC);
    out.extend(DATASET_VERSION.to_le_bytes());
    out.extend((text.len() as u32).to_le_bytes());
    out.extend(text.as_bytes());
    Ok(out)
}

fn record_dims(meta: &DatasetMeta) -> [Vec<usize>; 3] {
    let with = |lead: usize| {
        let mut d = vec![lead];
        d.extend_from_slice(&meta.space);
        d
    };
    [meta.space.clone(), with(meta.noise_steps), with(meta.time_points)]
}

fn record_len(meta: &DatasetMeta) -> u64 {
    record_dims(meta).iter().map(|d| array_bytes(d)).sum()
}

fn encode_sample(meta: &DatasetMeta, s: &Sample, out: &mut Vec<u8>) -> Result<()> {
    for (dims, data) in record_dims(meta).iter().zip([&s.u_in, &s.xi, &s.u_out]) {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!("sample array of {} values for dims {dims:?}", data.len())));
        }
        put_array(out, dims, data);
    }
    Ok(())
}

/// Streams samples to disk. The file appears at its final path only after
/// [`DatasetWriter::finish`] has seen exactly `meta.samples` samples.
pub struct DatasetWriter {
    meta: DatasetMeta,
    path: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
    written: usize,
    buf: Vec<u8>,
}

impl DatasetWriter {
    pub fn create(path: impl AsRef<Path>, meta: &DatasetMeta) -> Result<Self> {
        meta.validate()?;
        let path = path.as_ref().to_path_buf();
        let tmp = tmp_path(&path);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&meta_header(meta)?).map_err(|e| Error::io(&tmp, e))?;
        Ok(Self {
            meta: meta.clone(),
            path,
            tmp,
            out,
            written: 0,
            buf: Vec::new(),
        })
    }

    pub fn push(&mut self, sample: &Sample) -> Result<()> {
        if self.written == self.meta.samples {
            return Err(Error::InvalidArgument(format!("more than {} samples", self.meta.samples)));
        }
        self.buf.clear();
        encode_sample(&self.meta, sample, &mut self.buf)?;
        self.out.write_all(&self.buf).map_err(|e| Error::io(&self.tmp, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.meta.samples {
            let _ = std::fs::remove_file(&self.tmp);
            return Err(Error::InvalidArgument(format!(
                "wrote {} of {} declared samples",
                self.written, self.meta.samples
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.tmp, e))?;
        std::fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut w = DatasetWriter::create(path, &data.meta)?;
    for i in 0..data.len() {
        w.push(&data.sample(i))?;
    }
    w.finish()
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&read_all(path.as_ref())?)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.header(DATASET_MAGIC, DATASET_VERSION, "dataset")?;
    let len = cur.u32()? as usize;
    let meta: DatasetMeta =
        toml::from_str(cur.text(len, "metadata")?).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    meta.validate()?;
    let expected = cur.pos as u64 + meta.samples as u64 * record_len(&meta);
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Error::Format(format!("{} trailing bytes", actual - expected)));
    }
    let dims = record_dims(&meta);
    let mut samples = Vec::with_capacity(meta.samples);
    for i in 0..meta.samples {
        let mut arrays = Vec::with_capacity(3);
        for want in &dims {
            let got = cur.dims()?;
            if &got != want {
                return Err(Error::Format(format!("sample {i}: dims {got:?}, metadata says {want:?}")));
            }
            arrays.push(cur.f64s(want.iter().product())?);
        }
        let [u_in, xi, u_out]: [Vec<f64>; 3] = arrays.try_into().unwrap();
        samples.push(Sample { u_in, xi, u_out });
    }
    Dataset::from_samples(meta, samples)
}

/// Header of a checkpoint, stored as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    model: String,
    task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nspde: Option<NspdeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fno: Option<FnoConfig>,
}

/// A trained model together with the task it was trained for.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: OperatorModel,
    pub task: Task,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let (tag, nspde, fno) = match &self.model {
            OperatorModel::Nspde(m) => ("NSPDE1", Some(m.config.clone()), None),
            OperatorModel::Fno(m) => ("FNO1", None, Some(m.config.clone())),
        };
        let header = CheckpointHeader {
            model: tag.into(),
            task: self.task,
            nspde,
            fno,
        };
        let text = toml::to_string(&header).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut out = Vec::new();
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend((text.len() as u32).to_le_bytes());
        out.extend(text.as_bytes());
        let params = self.model.params();
        out.extend((params.len() as u32).to_le_bytes());
        for p in params {
            out.extend((p.name.len() as u16).to_le_bytes());
            out.extend(p.name.as_bytes());
            let complex = p.value.is_complex();
            out.push(complex as u8);
            if complex {
                let flat: Vec<f64> = p.value.cx().iter().flat_map(|z| [z.re, z.im]).collect();
                let mut dims = p.value.shape().to_vec();
                dims.push(2);
                put_array(&mut out, &dims, &flat);
            } else {
                put_array(&mut out, p.value.shape(), p.value.re());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        cur.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
        let len = cur.u32()? as usize;
        let header: CheckpointHeader = toml::from_str(cur.text(len, "checkpoint header")?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let count = cur.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let n = cur.u16()? as usize;
            let name = cur.text(n, "parameter name")?.to_string();
            let complex = match cur.u8()? {
                0 => false,
                1 => true,
                f => return Err(Error::Format(format!("parameter {name}: kind flag {f}"))),
            };
            let mut dims = cur.dims()?;
            let data = cur.f64s(dims.iter().product())?;
            let value = if complex {
                if dims.pop() != Some(2) {
                    return Err(Error::Format(format!("parameter {name}: complex array without a pair axis")));
                }
                GridFunction::complex(&dims, data.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())?
            } else {
                GridFunction::real(&dims, data)?
            };
            params.push(Param::new(name, value));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        let model = match (header.model.as_str(), header.nspde, header.fno) {
            ("NSPDE1", Some(c), None) => OperatorModel::Nspde(NspdeModel::from_params(c, params)?),
            ("FNO1", None, Some(c)) => OperatorModel::Fno(FnoModel::from_params(c, params)?),
            (tag, ..) => return Err(Error::Format(format!("checkpoint model tag {tag:?} with mismatched config"))),
        };
        Ok(Self {
            model,
            task: header.task,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_all(path.as_ref())?)
    }
}

/// A run configuration file. Every section is optional; keys inside a
/// section override the defaults of the matching config type and unknown
/// keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub phi41: Option<toml::Table>,
    #[serde(default)]
    pub ns: Option<toml::Table>,
    #[serde(default)]
    pub train: Option<toml::Table>,
    #[serde(default)]
    pub nspde: Option<toml::Table>,
    #[serde(default)]
    pub fno: Option<toml::Table>,
}

fn overlay<T: Serialize + DeserializeOwned>(section: &str, base: T, keys: Option<&toml::Table>) -> Result<T> {
    let Some(keys) = keys else { return Ok(base) };
    let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(format!("[{section}]: {e}")))?;
    // unknown keys are caught by deny_unknown_fields on the target type
    table.extend(keys.iter().map(|(k, v)| (k.clone(), v.clone())));
    table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[{section}]: {}", e.message())))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn phi41(&self) -> Result<Phi41Config> {
        overlay("phi41", Phi41Config::default(), self.phi41.as_ref())
    }

    /// Navier-Stokes settings on top of `base`, which selects the stochastic
    /// or the deterministic preset.
    pub fn ns(&self, base: NsConfig) -> Result<NsConfig> {
        overlay("ns", base, self.ns.as_ref())
    }

    pub fn train(&self) -> Result<TrainConfig> {
        overlay("train", TrainConfig::default(), self.train.as_ref())
    }

    pub fn nspde(&self) -> Result<NspdeConfig> {
        overlay("nspde", NspdeConfig::default(), self.nspde.as_ref())
    }

    pub fn fno(&self) -> Result<FnoConfig> {
        overlay("fno", FnoConfig::default(), self.fno.as_ref())
    }
}
