//! Super-group statistics, normalization and the locality analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomness::{permutation_at, Purpose, RandomKey, SharedSeed};

/// Group size `s` and super-group size `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupLayout {
    pub group_size: usize,
    pub super_group_size: usize,
}

impl GroupLayout {
    pub fn new(group_size: usize, super_group_size: usize) -> Result<Self> {
        let layout = Self {
            group_size,
            super_group_size,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 || self.super_group_size == 0 {
            return Err(Error::InvalidArgument("group sizes must be positive".into()));
        }
        if !self.super_group_size.is_multiple_of(self.group_size) {
            return Err(Error::InvalidArgument(format!(
                "super-group size {} is not a multiple of group size {}",
                self.super_group_size, self.group_size
            )));
        }
        Ok(())
    }

    pub fn groups_per_super_group(&self) -> usize {
        self.super_group_size / self.group_size
    }

    /// Smallest multiple of `S` holding `len` entries.
    pub fn padded_len(&self, len: usize) -> usize {
        len.div_ceil(self.super_group_size) * self.super_group_size
    }
}

impl Default for GroupLayout {
    fn default() -> Self {
        Self {
            group_size: 16,
            super_group_size: 256,
        }
    }
}

/// Mean and summed squared norm of one super-group, as carried by the
/// uncompressed 32-bit statistics all-reduce.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SuperGroupStats {
    pub mean: f32,
    pub sq_norm: f32,
}

/// A gradient zero-padded to a whole number of super-groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientView {
    data: Vec<f32>,
    len: usize,
    layout: GroupLayout,
}

impl GradientView {
    pub fn new(values: Vec<f32>, layout: GroupLayout) -> Result<Self> {
        layout.validate()?;
        let len = values.len();
        let mut data = values;
        data.resize(layout.padded_len(len), 0.0);
        Ok(Self { data, len, layout })
    }

    /// Wraps an already padded buffer whose logical length is `len`.
    pub fn from_padded(data: Vec<f32>, len: usize, layout: GroupLayout) -> Result<Self> {
        layout.validate()?;
        if data.len() != layout.padded_len(len) {
            return Err(Error::LengthMismatch {
                expected: layout.padded_len(len),
                actual: data.len(),
            });
        }
        Ok(Self { data, len, layout })
    }

    /// Logical length `d`, excluding padding.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn padded_len(&self) -> usize {
        self.data.len()
    }

    pub fn layout(&self) -> GroupLayout {
        self.layout
    }

    pub fn num_super_groups(&self) -> usize {
        self.data.len() / self.layout.super_group_size
    }

    /// Padded data, including trailing pad entries.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn values(&self) -> &[f32] {
        &self.data[..self.len]
    }

    pub fn super_group(&self, j: usize) -> &[f32] {
        let s = self.layout.super_group_size;
        &self.data[j * s..(j + 1) * s]
    }

    pub fn into_padded(self) -> Vec<f32> {
        self.data
    }
}

pub fn compute_stats(g: &GradientView) -> Vec<SuperGroupStats> {
    let s = g.layout.super_group_size;
    g.data
        .chunks_exact(s)
        .map(|sg| {
            let (sum, sq) = sg.iter().fold((0.0f64, 0.0f64), |(a, b), &x| {
                let x = x as f64;
                (a + x, b + x * x)
            });
            SuperGroupStats {
                mean: (sum / s as f64) as f32,
                sq_norm: sq as f32,
            }
        })
        .collect()
}

/// Exact all-reduce of per-worker statistics: worker means are averaged and
/// squared norms summed.
pub fn reduce_stats(per_worker: &[Vec<SuperGroupStats>]) -> Result<Vec<SuperGroupStats>> {
    let first = per_worker
        .first()
        .ok_or_else(|| Error::InvalidArgument("no worker statistics".into()))?;
    for w in per_worker {
        if w.len() != first.len() {
            return Err(Error::LengthMismatch {
                expected: first.len(),
                actual: w.len(),
            });
        }
    }
    let n = per_worker.len() as f64;
    Ok((0..first.len())
        .map(|j| {
            let (mean, sq) = per_worker.iter().fold((0.0f64, 0.0f64), |(m, f), w| {
                (m + w[j].mean as f64, f + w[j].sq_norm as f64)
            });
            SuperGroupStats {
                mean: (mean / n) as f32,
                sq_norm: sq as f32,
            }
        })
        .collect())
}

fn check_stats_len(g: &GradientView, global: &[SuperGroupStats]) -> Result<()> {
    if global.len() != g.num_super_groups() {
        return Err(Error::LengthMismatch {
            expected: g.num_super_groups(),
            actual: global.len(),
        });
    }
    Ok(())
}

/// Subtracts the global mean of each super-group, padding included.
pub fn normalize(g: &GradientView, global: &[SuperGroupStats]) -> Result<GradientView> {
    check_stats_len(g, global)?;
    let s = g.layout.super_group_size;
    let mut data = g.data.clone();
    for (sg, st) in data.chunks_exact_mut(s).zip(global) {
        for x in sg {
            *x -= st.mean;
        }
    }
    Ok(GradientView {
        data,
        len: g.len,
        layout: g.layout,
    })
}

/// Adds back `n * mean` per super-group and strips padding, turning an
/// aggregated normalized sum into an estimate of the sum of the raw gradients.
pub fn denormalize(aggregated: &GradientView, global: &[SuperGroupStats], n: usize) -> Result<Vec<f32>> {
    check_stats_len(aggregated, global)?;
    let s = aggregated.layout.super_group_size;
    let mut out = Vec::with_capacity(aggregated.len);
    for (sg, st) in aggregated.data.chunks_exact(s).zip(global) {
        let shift = n as f64 * st.mean as f64;
        out.extend(sg.iter().map(|&y| (y as f64 + shift) as f32));
    }
    out.truncate(aggregated.len);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Group,
    SuperGroup,
}

/// Sorted per-block l2 norms, optionally after a keyed shuffle of the
/// logical entries.
pub fn locality_cdf(g: &GradientView, granularity: Granularity, shuffle: bool, seed: SharedSeed) -> Result<Vec<f64>> {
    let block = match granularity {
        Granularity::Group => g.layout.group_size,
        Granularity::SuperGroup => g.layout.super_group_size,
    };
    let mut data = g.data.clone();
    if shuffle && g.len > 1 {
        let perm = permutation_at(seed, RandomKey::new(Purpose::Shuffle, 0, 0, 0), g.len)?;
        for (dst, &src) in data.iter_mut().zip(&perm) {
            *dst = g.data[src];
        }
    }
    let mut norms: Vec<f64> = data
        .chunks(block)
        .map(|b| b.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt())
        .collect();
    norms.sort_by(f64::total_cmp);
    Ok(norms)
}
