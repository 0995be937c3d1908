//! Per-super-group bitwidth allocation under a global bit budget.
//!
//! Super-group `j` with aggregated squared norm `F_j` gets width `b` when
//! `F_j` lies in `[T_{a,b}, T_{b,c})` for consecutive widths `a < b < c`.
//! Adjacent thresholds are tied together by equating the per-bit benefit
//! `T_{a,b} (4^{b-a} - 1) / (4^b (b - a))` of lowering each of them, which
//! leaves one free parameter that is searched to meet the budget.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::codec::ScaleMode;
use crate::error::{Error, Result};
use crate::stats::GroupLayout;

/// Widths the allocation mathematics understands.
pub const ALLOCATABLE_WIDTHS: [u32; 5] = [1, 2, 4, 8, 16];

/// Widths used by the fast allocator and the default configuration.
pub const DEFAULT_WIDTHS: [u32; 3] = [2, 4, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Total budget `b` in bits per coordinate, scale metadata included.
    pub bits_per_coordinate: f64,
    pub layout: GroupLayout,
    /// Allowed widths, strictly increasing.
    pub widths: Vec<u32>,
    pub scale_mode: ScaleMode,
}

impl BudgetSpec {
    pub fn new(bits_per_coordinate: f64, layout: GroupLayout) -> Self {
        Self {
            bits_per_coordinate,
            layout,
            widths: DEFAULT_WIDTHS.to_vec(),
            scale_mode: ScaleMode::Hierarchical,
        }
    }

    pub fn min_width(&self) -> u32 {
        self.widths[0]
    }

    pub fn max_width(&self) -> u32 {
        *self.widths.last().expect("validated non-empty")
    }

    fn validate_widths(&self) -> Result<()> {
        validate_width_set(&self.widths)
    }

    /// Scale metadata per coordinate: one 8-bit code per group plus a 16-bit
    /// super-group scale, or one 16-bit scale per group without hierarchy.
    pub fn scale_overhead(&self) -> f64 {
        let s = self.layout.group_size as f64;
        let big = self.layout.super_group_size as f64;
        match self.scale_mode {
            ScaleMode::Hierarchical => 8.0 / s + 16.0 / big,
            ScaleMode::Direct => 16.0 / s,
        }
    }
}

fn validate_width_set(widths: &[u32]) -> Result<()> {
    if widths.is_empty() {
        return Err(Error::InvalidArgument("empty width set".into()));
    }
    if widths.iter().any(|w| !ALLOCATABLE_WIDTHS.contains(w)) {
        return Err(Error::InvalidArgument(format!(
            "widths {widths:?} must be drawn from {ALLOCATABLE_WIDTHS:?}"
        )));
    }
    if widths.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidArgument(format!(
            "widths {widths:?} must be strictly increasing"
        )));
    }
    Ok(())
}

/// Payload budget `b - overhead` in bits per coordinate.
pub fn payload_budget(spec: &BudgetSpec) -> Result<f64> {
    spec.layout.validate()?;
    spec.validate_widths()?;
    let budget = spec.bits_per_coordinate - spec.scale_overhead();
    if !(budget > spec.min_width() as f64) {
        return Err(Error::BudgetInfeasible {
            payload_budget: budget,
            min_width: spec.min_width(),
        });
    }
    Ok(budget)
}

/// Exact coefficient `(4^{b-a} - 1) / (4^b (b - a))`.
pub fn benefit_coefficient(a: u32, b: u32) -> Result<Ratio<u128>> {
    if a >= b {
        return Err(Error::InvalidArgument(format!("per-bit benefit needs a < b, got {a} >= {b}")));
    }
    if b > 30 {
        return Err(Error::InvalidArgument(format!("width {b} too large")));
    }
    let gain = (1u128 << (2 * (b - a))) - 1;
    let cost = (1u128 << (2 * b)) * (b - a) as u128;
    Ok(Ratio::new(gain, cost))
}

/// Per-bit benefit of lowering threshold `T_{a,b}` past one super-group.
pub fn per_bit_benefit(threshold: f64, a: u32, b: u32) -> Result<f64> {
    let c = benefit_coefficient(a, b)?;
    Ok(threshold * (*c.numer() as f64 / *c.denom() as f64))
}

/// Ratios `T_{w_i, w_{i+1}} / T_{w_{i+1}, w_{i+2}}` equalising the per-bit
/// benefit of adjacent thresholds.
pub fn threshold_ratios(widths: &[u32]) -> Result<Vec<Ratio<u128>>> {
    validate_width_set(widths)?;
    widths
        .windows(3)
        .map(|w| Ok(benefit_coefficient(w[1], w[2])? / benefit_coefficient(w[0], w[1])?))
        .collect()
}

/// Threshold multipliers relative to the lowest threshold: `T_i = base * c_i`.
fn threshold_multipliers(widths: &[u32]) -> Result<Vec<f64>> {
    let ratios = threshold_ratios(widths)?;
    let mut out = Vec::with_capacity(widths.len().saturating_sub(1));
    if widths.len() >= 2 {
        out.push(1.0);
        for r in ratios {
            let prev = *out.last().unwrap();
            out.push(prev * (*r.denom() as f64) / (*r.numer() as f64));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitAllocation {
    pub widths: Vec<u32>,
    /// `permutation[k]` is the original index of the super-group placed at
    /// position `k` after sorting by width.
    pub permutation: Vec<usize>,
    pub payload_bits: u64,
    /// Lowest threshold chosen by the general allocator.
    pub threshold_base: Option<f64>,
    /// Offset chosen by the fast allocator.
    pub u: Option<f64>,
}

impl BitAllocation {
    fn from_widths(widths: Vec<u32>, spec: &BudgetSpec) -> Self {
        let payload_bits = payload_of(&widths, spec.layout.super_group_size);
        let permutation = build_permutation(&widths);
        Self {
            widths,
            permutation,
            payload_bits,
            threshold_base: None,
            u: None,
        }
    }
}

fn payload_of(widths: &[u32], super_group_size: usize) -> u64 {
    widths.iter().map(|&w| w as u64).sum::<u64>() * super_group_size as u64
}

/// Payload budget in bits for `num_super_groups` super-groups.
pub fn budget_bits(spec: &BudgetSpec, num_super_groups: usize) -> Result<f64> {
    let b = payload_budget(spec)?;
    Ok((num_super_groups * spec.layout.super_group_size) as f64 * b)
}

fn check_norms(f: &[f32]) -> Result<()> {
    if let Some(bad) = f.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("squared norm {bad} is not a finite non-negative value")));
    }
    Ok(())
}

/// Threshold search over the one-parameter family fixed by
/// [`threshold_ratios`], choosing the largest payload within the budget.
pub fn allocate_general(f: &[f32], spec: &BudgetSpec) -> Result<BitAllocation> {
    check_norms(f)?;
    let budget = budget_bits(spec, f.len())?;
    let mults = threshold_multipliers(&spec.widths)?;
    let big = spec.layout.super_group_size;

    // keys[j][i] = F_j / c_i; super-group j clears threshold i iff keys[j][i] >= base
    let keys: Vec<Vec<f64>> = f
        .iter()
        .map(|&x| mults.iter().map(|&c| x as f64 / c).collect())
        .collect();
    let widths_at = |base: f64| -> Vec<u32> {
        keys.iter()
            .map(|k| spec.widths[k.iter().take_while(|&&v| v >= base).count()])
            .collect()
    };

    let mut candidates: Vec<f64> = keys.iter().flatten().copied().filter(|&v| v > 0.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // payload is non-increasing in base; find the first feasible candidate
    let (mut lo, mut hi) = (0usize, candidates.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if payload_of(&widths_at(candidates[mid]), big) as f64 <= budget {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let base = match candidates.get(lo) {
        Some(&b) => b,
        // above every key: everything sits at the minimum width
        None => candidates.last().map_or(f64::INFINITY, |&b| b * 2.0),
    };
    let mut widths = if base.is_finite() {
        widths_at(base)
    } else {
        vec![spec.min_width(); f.len()]
    };
    fill_slack(f, &mut widths, spec, budget)?;
    let mut alloc = BitAllocation::from_widths(widths, spec);
    alloc.threshold_base = Some(base);
    debug_assert!(alloc.payload_bits as f64 <= budget);
    Ok(alloc)
}

/// Spends leftover budget on single upgrades, largest norm first within a
/// width, until no upgrade fits. Equal norms are upgraded together.
fn fill_slack(f: &[f32], widths: &mut [u32], spec: &BudgetSpec, budget: f64) -> Result<()> {
    let big = spec.layout.super_group_size as u64;
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[b].total_cmp(&f[a]));
    let mut payload = payload_of(widths, spec.layout.super_group_size);
    loop {
        let slack = budget - payload as f64;
        let mut best: Option<(f64, usize, usize, u32)> = None;
        let mut p = 0;
        while p < order.len() {
            let w = widths[order[p]];
            let mut q = p + 1;
            while q < order.len() && widths[order[q]] == w {
                q += 1;
            }
            // block p..q holds width w; its head tie class is the candidate
            if let Some(i) = spec.widths.iter().position(|&x| x == w).filter(|&i| i + 1 < spec.widths.len()) {
                let next = spec.widths[i + 1];
                let head = f[order[p]];
                let ties = order[p..q].iter().take_while(|&&j| f[j] == head).count();
                let cost = ties as u64 * (next - w) as u64 * big;
                let gain = per_bit_benefit(head as f64, w, next)?;
                if head > 0.0 && cost as f64 <= slack && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, p, ties, next));
                }
            }
            p = q;
        }
        match best {
            Some((_, p, ties, next)) => {
                for &j in &order[p..p + ties] {
                    payload += (next - widths[j]) as u64 * big;
                    widths[j] = next;
                }
            }
            None => return Ok(()),
        }
    }
}

/// Slope of `z_j = slope * log2(F_j) + u`, placing the 2/4 and 4/8 boundaries
/// (`z = 4` and `z = 8`) a factor `512/17` apart in `F`.
pub fn fast_slope() -> f64 {
    4.0 / (512.0f64 / 17.0).log2()
}

/// `z_j` for a given offset; `F_j = 0` maps to negative infinity.
pub fn fast_score(f: f32, u: f64) -> f64 {
    if f > 0.0 {
        fast_slope() * (f as f64).log2() + u
    } else {
        f64::NEG_INFINITY
    }
}

/// Width from a score: 2 below 4, 4 in `[4, 8)`, 8 from 8 up.
pub fn width_from_score(z: f64) -> u32 {
    if z >= 8.0 {
        8
    } else if z >= 4.0 {
        4
    } else {
        2
    }
}

fn fast_widths(logs: &[f64], u: f64) -> Vec<u32> {
    logs.iter().map(|&l| width_from_score(l + u)).collect()
}

fn check_fast_spec(spec: &BudgetSpec) -> Result<()> {
    if spec.widths != DEFAULT_WIDTHS {
        return Err(Error::InvalidArgument(format!(
            "fast allocation requires widths {DEFAULT_WIDTHS:?}, got {:?}",
            spec.widths
        )));
    }
    Ok(())
}

const FAST_U_RANGE: f64 = 1e6;
const FAST_ITERATIONS: usize = 96;

/// Closed-form allocation `q_j = 2^clamp([1,3], floor(log2 z_j))` with the
/// offset `u` found by bisection so the payload fits the budget.
pub fn allocate_fast(f: &[f32], spec: &BudgetSpec) -> Result<BitAllocation> {
    check_fast_spec(spec)?;
    check_norms(f)?;
    let budget = budget_bits(spec, f.len())?;
    let big = spec.layout.super_group_size;
    let logs: Vec<f64> = f.iter().map(|&x| fast_score(x, 0.0)).collect();
    let fits = |u: f64| payload_of(&fast_widths(&logs, u), big) as f64 <= budget;

    let (mut lo, mut hi) = (-FAST_U_RANGE, FAST_U_RANGE);
    let u = if fits(hi) {
        hi
    } else {
        for _ in 0..FAST_ITERATIONS {
            let mid = lo + (hi - lo) / 2.0;
            if mid <= lo || mid >= hi {
                break;
            }
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let mut alloc = BitAllocation::from_widths(fast_widths(&logs, u), spec);
    alloc.u = Some(u);
    Ok(alloc)
}

/// Fast allocator that carries `u` across rounds and nudges it once per call
/// instead of bisecting from scratch. A nudge that would break the budget is
/// walked back with a doubling step, so every returned allocation fits.
#[derive(Debug, Clone, PartialEq)]
pub struct StatefulFastAllocator {
    pub u: f64,
    pub step: f64,
}

impl StatefulFastAllocator {
    pub fn new(initial_u: f64, step: f64) -> Self {
        Self { u: initial_u, step }
    }

    pub fn allocate(&mut self, f: &[f32], spec: &BudgetSpec) -> Result<BitAllocation> {
        check_fast_spec(spec)?;
        check_norms(f)?;
        let budget = budget_bits(spec, f.len())?;
        let big = spec.layout.super_group_size;
        let logs: Vec<f64> = f.iter().map(|&x| fast_score(x, 0.0)).collect();
        let fits = |u: f64| payload_of(&fast_widths(&logs, u), big) as f64 <= budget;

        if fits(self.u) {
            if fits(self.u + self.step) {
                self.u += self.step;
            }
        } else {
            let mut step = self.step;
            while !fits(self.u) {
                self.u -= step;
                step *= 2.0;
                if self.u < -FAST_U_RANGE {
                    self.u = -FAST_U_RANGE;
                    break;
                }
            }
        }
        let mut alloc = BitAllocation::from_widths(fast_widths(&logs, self.u), spec);
        alloc.u = Some(self.u);
        Ok(alloc)
    }
}

/// Every super-group at one width; errors if that exceeds the budget.
pub fn allocate_fixed(num_super_groups: usize, width: u32, spec: &BudgetSpec) -> Result<BitAllocation> {
    if !spec.widths.contains(&width) {
        return Err(Error::InvalidArgument(format!(
            "fixed width {width} not in {:?}",
            spec.widths
        )));
    }
    let budget = budget_bits(spec, num_super_groups)?;
    let alloc = BitAllocation::from_widths(vec![width; num_super_groups], spec);
    if alloc.payload_bits as f64 > budget {
        return Err(Error::BudgetInfeasible {
            payload_budget: payload_budget(spec)?,
            min_width: width,
        });
    }
    Ok(alloc)
}

/// Stable order of super-groups by width, widest first.
pub fn build_permutation(widths: &[u32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..widths.len()).collect();
    order.sort_by(|&a, &b| widths[b].cmp(&widths[a]));
    order
}

/// Places block `permutation[k]` of `data` at position `k`.
pub fn apply_permutation<T: Copy>(data: &[T], block: usize, permutation: &[usize]) -> Result<Vec<T>> {
    check_blocks(data.len(), block, permutation.len())?;
    let mut out = Vec::with_capacity(data.len());
    for &src in permutation {
        out.extend_from_slice(&data[src * block..(src + 1) * block]);
    }
    Ok(out)
}

/// Undoes [`apply_permutation`].
pub fn invert_permutation<T: Copy + Default>(data: &[T], block: usize, permutation: &[usize]) -> Result<Vec<T>> {
    check_blocks(data.len(), block, permutation.len())?;
    let mut out = vec![T::default(); data.len()];
    for (k, &dst) in permutation.iter().enumerate() {
        out[dst * block..(dst + 1) * block].copy_from_slice(&data[k * block..(k + 1) * block]);
    }
    Ok(out)
}

fn check_blocks(len: usize, block: usize, blocks: usize) -> Result<()> {
    if block * blocks != len {
        return Err(Error::LengthMismatch {
            expected: block * blocks,
            actual: len,
        });
    }
    Ok(())
}
