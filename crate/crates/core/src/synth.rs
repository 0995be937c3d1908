//! Synthetic gradients and the raw gradient file format.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 8] = b"DYNQGRAD";
pub const RAW_HEADER_BYTES: usize = 12;

/// Default log-spread of super-group scales for locality gradients.
pub const DEFAULT_SIGMA_LOG: f64 = 4.0;
/// Default overall scale of locality gradients. Keeps partial sums of the
/// widest super-groups well inside the binary16 range used for scales.
pub const DEFAULT_LOCALITY_SCALE: f64 = 1e-6;
/// Default log-spread of group scales within a super-group.
pub const DEFAULT_GROUP_SIGMA_LOG: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    #[default]
    IidGaussian,
    Locality,
    File,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid-gaussian" | "iid" => Ok(Self::IidGaussian),
            "locality" => Ok(Self::Locality),
            "file" => Ok(Self::File),
            other => Err(Error::Config(format!("unknown generator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub d: usize,
    pub seed: u64,
    /// Standard deviation of the log of per-super-group scales.
    pub sigma_log: f64,
    /// Multiplier on every entry; defaults to 1 for iid and
    /// [`DEFAULT_LOCALITY_SCALE`] for locality gradients.
    pub scale: Option<f64>,
    /// Entries sharing one scale in locality gradients.
    pub super_group_size: usize,
    /// Standard deviation of the log of an extra per-group factor inside
    /// each super-group.
    pub group_sigma_log: f64,
    pub group_size: usize,
    /// Raw gradient file; `{rank}` is replaced by the worker rank.
    pub path: Option<PathBuf>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::IidGaussian,
            d: 1 << 16,
            seed: 0,
            sigma_log: DEFAULT_SIGMA_LOG,
            scale: None,
            super_group_size: 256,
            group_sigma_log: DEFAULT_GROUP_SIGMA_LOG,
            group_size: 16,
            path: None,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            GeneratorKind::File => {
                if self.path.is_none() {
                    return Err(Error::Config("file generator needs a path".into()));
                }
            }
            _ => {
                if self.d == 0 {
                    return Err(Error::Config("gradient length must be positive".into()));
                }
                if !(self.sigma_log >= 0.0) || !self.sigma_log.is_finite() {
                    return Err(Error::Config(format!("sigma_log {} must be non-negative", self.sigma_log)));
                }
                if let Some(s) = self.scale {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Config(format!("scale {s} must be positive")));
                    }
                }
                if self.super_group_size == 0 || self.group_size == 0 || !self.super_group_size.is_multiple_of(self.group_size) {
                    return Err(Error::Config("group size must be positive and divide the super-group size".into()));
                }
                if !(self.group_sigma_log >= 0.0) || !self.group_sigma_log.is_finite() {
                    return Err(Error::Config(format!("group_sigma_log {} must be non-negative", self.group_sigma_log)));
                }
            }
        }
        Ok(())
    }

    fn effective_scale(&self) -> f64 {
        self.scale.unwrap_or(match self.kind {
            GeneratorKind::Locality => DEFAULT_LOCALITY_SCALE,
            _ => 1.0,
        })
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream reserved for the shared super-group scales; ranks use their own index.
const SCALE_STREAM: u64 = u64::MAX;

/// Gradient of worker `rank`. Locality gradients share their super-group
/// scales across ranks so the aggregated norms keep the same skew.
pub fn generate(spec: &GeneratorSpec, rank: usize) -> Result<Vec<f32>> {
    spec.validate()?;
    if spec.kind == GeneratorKind::File {
        let template = spec.path.as_ref().expect("validated").to_string_lossy().into_owned();
        return load_raw(template.replace("{rank}", &rank.to_string()));
    }
    let scale = spec.effective_scale();
    let small = spec.group_size;
    let per_sg = spec.super_group_size / small;
    let num_groups = spec.d.div_ceil(small);
    let sigmas: Vec<f64> = if spec.kind == GeneratorKind::Locality {
        let mut rng = stream(spec.seed, SCALE_STREAM);
        let mut sg_sigma = 0.0;
        (0..num_groups)
            .map(|t| {
                if t % per_sg == 0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sg_sigma = scale * (spec.sigma_log * z).exp();
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                sg_sigma * (spec.group_sigma_log * z).exp()
            })
            .collect()
    } else {
        vec![scale; num_groups]
    };
    let mut rng = stream(spec.seed, rank as u64);
    Ok((0..spec.d)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (sigmas[k / small] * z) as f32
        })
        .collect())
}

pub fn generate_workers(spec: &GeneratorSpec, n: usize) -> Result<Vec<Vec<f32>>> {
    (0..n).map(|rank| generate(spec, rank)).collect()
}

pub fn write_raw<W: Write>(mut out: W, g: &[f32]) -> Result<()> {
    if g.is_empty() {
        return Err(Error::InvalidArgument("cannot store an empty gradient".into()));
    }
    let d = u32::try_from(g.len()).map_err(|_| Error::InvalidArgument("gradient too long for the raw format".into()))?;
    let mut buf = Vec::with_capacity(RAW_HEADER_BYTES + 4 * g.len());
    buf.extend_from_slice(RAW_MAGIC);
    buf.extend_from_slice(&d.to_le_bytes());
    for x in g {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_raw<R: Read>(mut input: R) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse_raw(&bytes)
}

pub fn parse_raw(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() < RAW_HEADER_BYTES {
        return Err(Error::Malformed(format!(
            "raw gradient needs a {RAW_HEADER_BYTES}-byte header, got {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..8] != RAW_MAGIC {
        return Err(Error::Malformed("bad magic, not a raw gradient file".into()));
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if d == 0 {
        return Err(Error::Malformed("raw gradient has length 0".into()));
    }
    let expected = RAW_HEADER_BYTES + 4 * d;
    if bytes.len() != expected {
        return Err(Error::Malformed(format!(
            "raw gradient of length {d} needs {expected} bytes, got {}",
            bytes.len()
        )));
    }
    Ok(bytes[RAW_HEADER_BYTES..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

pub fn save_raw(path: impl AsRef<Path>, g: &[f32]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_raw(std::io::BufWriter::new(file), g)
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_raw(&bytes)
}
