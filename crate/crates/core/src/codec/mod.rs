//! Bit-exact super-group and chunk compression.
//!
//! A super-group of `S` entries at width `w` in `{2, 4, 8}` is sent as a
//! binary16 super-group scale, `S/s` 8-bit group-scale codes and `S` packed
//! `w`-bit fields (index in the low `w - 1` bits, sign in the top bit). Group
//! scales and entries are both stochastically rounded, with independent keyed
//! randomness, so every decoded entry is an unbiased estimate of its input.
//! Width 16 stores raw binary16 entries. The byte layout is documented in
//! `FORMAT.md` at the repository root.

mod chunk;
mod pack;

pub use chunk::{
    compress_chunk, compressed_size_bits, decompress_accumulate, decompress_accumulate_recompress,
    decompress_chunk, parse_chunk, supergroup_size_bits, ChunkCodec, ChunkHeader, CompressedChunk,
    DynamiqCodec, LosslessCodec, WireBreakdown, CHUNK_HEADER_BITS, CHUNK_HEADER_BYTES,
    LOSSLESS_HEADER_BYTES,
};

use half::f16;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, CodebookSet};
use crate::error::{Error, Result};
use crate::randomness::{correlated_unchecked, uniform_lane, Purpose, RandomKey, SharedSeed};
use crate::stats::GroupLayout;

use pack::{field, pack_fields, packed_len};

/// Widths the codec can encode.
pub const CODEC_WIDTHS: [u32; 4] = [2, 4, 8, 16];

/// How group scales travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    /// 8-bit codes relative to one binary16 super-group scale.
    #[default]
    Hierarchical,
    /// One binary16 scale per group.
    Direct,
}

/// Everything sender and receiver must agree on besides the widths.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    pub layout: GroupLayout,
    pub scale_mode: ScaleMode,
    pub codebooks: CodebookSet,
    pub correlated: bool,
}

impl CodecParams {
    pub fn new(layout: GroupLayout, scale_mode: ScaleMode, codebooks: CodebookSet, correlated: bool) -> Result<Self> {
        layout.validate()?;
        if !layout.super_group_size.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "super-group size {} must be a multiple of 4 for byte-aligned packing",
                layout.super_group_size
            )));
        }
        if layout.groups_per_super_group() > u32::MAX as usize || layout.super_group_size > u32::MAX as usize {
            return Err(Error::InvalidArgument("super-group too large".into()));
        }
        Ok(Self {
            layout,
            scale_mode,
            codebooks,
            correlated,
        })
    }

    /// Default non-uniform hierarchical codec with correlated rounding.
    pub fn standard(layout: GroupLayout) -> Result<Self> {
        Self::new(layout, ScaleMode::Hierarchical, CodebookSet::non_uniform()?, true)
    }

    fn codebook(&self, width: u32) -> Result<&Codebook> {
        self.codebooks.get(width).ok_or(Error::UnsupportedBitwidth(width))
    }
}

/// Randomness coordinates of one compression event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopContext {
    pub seed: SharedSeed,
    pub chunk: u32,
    /// Position of this compression among the chunk's compressions.
    pub hop_slot: u32,
    /// Number of compressions on the chunk's aggregation path.
    pub n_slots: u32,
}

impl HopContext {
    pub fn new(seed: SharedSeed, chunk: u32, hop_slot: u32, n_slots: u32) -> Result<Self> {
        let ctx = Self {
            seed,
            chunk,
            hop_slot,
            n_slots,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    fn validate(&self) -> Result<()> {
        if self.n_slots == 0 || self.hop_slot >= self.n_slots {
            return Err(Error::InvalidArgument(format!(
                "hop slot {} out of range for {} slots",
                self.hop_slot, self.n_slots
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_codec_width(width: u32) -> Result<()> {
    if CODEC_WIDTHS.contains(&width) {
        Ok(())
    } else {
        Err(Error::UnsupportedBitwidth(width))
    }
}

/// Smallest binary16 value not below `x` (`x` finite and non-negative).
pub fn f16_round_up(x: f32) -> Result<f16> {
    if !(x >= 0.0) || !x.is_finite() || x > f16::MAX.to_f32() {
        return Err(Error::ScaleOverflow(x));
    }
    let h = f16::from_f32(x);
    if h.to_f32() >= x {
        Ok(h)
    } else {
        Ok(f16::from_bits(h.to_bits() + 1))
    }
}

/// Group scales of a compressed super-group.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupScales {
    Hierarchical { sg_scale: f16, codes: Vec<u8> },
    Direct(Vec<f16>),
    /// Width 16 carries no scales.
    None,
}

/// Parsed form of one super-group on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSuperGroup {
    pub width: u32,
    pub scales: GroupScales,
    /// Packed fields for widths 2/4/8, little-endian binary16 entries for 16.
    pub payload: Vec<u8>,
}

impl CompressedSuperGroup {
    /// Index and sign of entry `k` (widths 2, 4, 8).
    pub fn entry(&self, k: usize) -> (usize, bool) {
        let f = field(&self.payload, k, self.width);
        let idx = f & ((1u8 << (self.width - 1)) - 1);
        (idx as usize, f >> (self.width - 1) == 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out);
        out
    }

    pub(crate) fn write_to(&self, out: &mut Vec<u8>) {
        match &self.scales {
            GroupScales::Hierarchical { sg_scale, codes } => {
                out.extend_from_slice(&sg_scale.to_le_bytes());
                out.extend_from_slice(codes);
            }
            GroupScales::Direct(scales) => {
                for s in scales {
                    out.extend_from_slice(&s.to_le_bytes());
                }
            }
            GroupScales::None => {}
        }
        out.extend_from_slice(&self.payload);
    }

    /// Parses exactly one super-group of `width` from `bytes`.
    pub fn parse(bytes: &[u8], width: u32, params: &CodecParams) -> Result<Self> {
        let expected = supergroup_bytes(width, params)?;
        if bytes.len() != expected {
            return Err(Error::Malformed(format!(
                "super-group of width {width} needs {expected} bytes, got {}",
                bytes.len()
            )));
        }
        validate_supergroup(bytes, width, params)?;
        let layout = params.layout;
        let groups = layout.groups_per_super_group();
        let (scales, payload) = if width == 16 {
            (GroupScales::None, bytes.to_vec())
        } else {
            match params.scale_mode {
                ScaleMode::Hierarchical => (
                    GroupScales::Hierarchical {
                        sg_scale: read_f16(bytes, 0),
                        codes: bytes[2..2 + groups].to_vec(),
                    },
                    bytes[2 + groups..].to_vec(),
                ),
                ScaleMode::Direct => (
                    GroupScales::Direct((0..groups).map(|t| read_f16(bytes, 2 * t)).collect()),
                    bytes[2 * groups..].to_vec(),
                ),
            }
        };
        Ok(Self {
            width,
            scales,
            payload,
        })
    }
}

#[inline]
fn read_f16(bytes: &[u8], at: usize) -> f16 {
    f16::from_le_bytes([bytes[at], bytes[at + 1]])
}

/// Wire size of one super-group in bytes.
pub(crate) fn supergroup_bytes(width: u32, params: &CodecParams) -> Result<usize> {
    check_codec_width(width)?;
    let big = params.layout.super_group_size;
    let groups = params.layout.groups_per_super_group();
    Ok(match (width, params.scale_mode) {
        (16, _) => 2 * big,
        (w, ScaleMode::Hierarchical) => 2 + groups + packed_len(big, w),
        (w, ScaleMode::Direct) => 2 * groups + packed_len(big, w),
    })
}

fn is_valid_scale(h: f16) -> bool {
    h.is_finite() && !h.is_sign_negative()
}

/// Structural checks on a super-group of the right length.
fn validate_supergroup(bytes: &[u8], width: u32, params: &CodecParams) -> Result<()> {
    let big = params.layout.super_group_size;
    let s = params.layout.group_size;
    let groups = params.layout.groups_per_super_group();
    if width == 16 {
        for k in 0..big {
            if !read_f16(bytes, 2 * k).is_finite() {
                return Err(Error::Malformed(format!("non-finite raw entry {k}")));
            }
        }
        return Ok(());
    }
    let index_mask = (1u8 << (width - 1)) - 1;
    match params.scale_mode {
        ScaleMode::Hierarchical => {
            let sg_scale = read_f16(bytes, 0);
            if !is_valid_scale(sg_scale) {
                return Err(Error::Malformed(format!("invalid super-group scale bits {:#06x}", sg_scale.to_bits())));
            }
            if sg_scale.to_f32() == 0.0 {
                let payload = &bytes[2 + groups..];
                if bytes[2..2 + groups].iter().any(|&c| c != 0)
                    || (0..big).any(|k| field(payload, k, width) & index_mask != 0)
                {
                    return Err(Error::Malformed("zero super-group scale with non-zero codes".into()));
                }
            }
        }
        ScaleMode::Direct => {
            let payload = &bytes[2 * groups..];
            for t in 0..groups {
                let sc = read_f16(bytes, 2 * t);
                if !is_valid_scale(sc) {
                    return Err(Error::Malformed(format!("invalid group scale {t}")));
                }
                if sc.to_f32() == 0.0 && (t * s..(t + 1) * s).any(|k| field(payload, k, width) & index_mask != 0) {
                    return Err(Error::Malformed(format!("zero scale with non-zero indices in group {t}")));
                }
            }
        }
    }
    Ok(())
}

#[inline]
fn entry_uniform(params: &CodecParams, ctx: &HopContext, key: &RandomKey) -> f64 {
    if params.correlated && ctx.n_slots > 1 {
        correlated_unchecked(&ctx.seed, key, ctx.hop_slot as usize, ctx.n_slots as usize)
    } else {
        uniform_lane(&ctx.seed, key, ctx.hop_slot)
    }
}

/// Stochastically rounds `v` in `[0, 1]` onto `codebook` using the uniform
/// draw `u`: rounds up with probability `(v - lo) / (hi - lo)`.
#[inline]
pub fn stochastic_index(codebook: &Codebook, v: f32, u: f64) -> usize {
    let (lo, hi) = codebook.bracket_unchecked(v);
    if lo == hi {
        return lo;
    }
    let q = codebook.values();
    let p = (v - q[lo]) / (q[hi] - q[lo]);
    if u < p as f64 {
        hi
    } else {
        lo
    }
}

fn check_values(values: &[f32]) -> Result<()> {
    if let Some(x) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite input value {x}")));
    }
    Ok(())
}

/// Encodes one super-group, appending its wire bytes to `out`.
pub(crate) fn encode_supergroup(
    values: &[f32],
    width: u32,
    params: &CodecParams,
    sg_index: u32,
    ctx: &HopContext,
    out: &mut Vec<u8>,
    fields: &mut Vec<u8>,
) -> Result<()> {
    let layout = params.layout;
    if values.len() != layout.super_group_size {
        return Err(Error::LengthMismatch {
            expected: layout.super_group_size,
            actual: values.len(),
        });
    }
    check_codec_width(width)?;
    check_values(values)?;

    if width == 16 {
        for &x in values {
            let h = f16::from_f32(x);
            if h.is_infinite() {
                return Err(Error::ScaleOverflow(x));
            }
            out.extend_from_slice(&h.to_le_bytes());
        }
        return Ok(());
    }

    let codebook = params.codebook(width)?;
    let s = layout.group_size;
    let sign_bit = 1u8 << (width - 1);
    fields.clear();

    let sg_scale = match params.scale_mode {
        ScaleMode::Hierarchical => {
            let amax = values.iter().fold(0.0f32, |a, x| a.max(x.abs()));
            let sg_scale = f16_round_up(amax)?;
            out.extend_from_slice(&sg_scale.to_le_bytes());
            Some(sg_scale.to_f32())
        }
        ScaleMode::Direct => None,
    };

    for (t, group) in values.chunks_exact(s).enumerate() {
        let m = group.iter().fold(0.0f32, |a, x| a.max(x.abs()));
        // divisor the entries are normalized by: the true max under hierarchical
        // scales, the stored binary16 scale otherwise
        let norm = match sg_scale {
            Some(sf) => {
                let code = if m == 0.0 {
                    0u8
                } else {
                    let target = m * 255.0 / sf;
                    let floor = target.floor();
                    let key = RandomKey::new(Purpose::ScaleQuant, ctx.chunk, sg_index, t as u32);
                    let up = uniform_lane(&ctx.seed, &key, ctx.hop_slot) < (target - floor) as f64;
                    (floor as u32 + up as u32).min(255) as u8
                };
                out.push(code);
                m
            }
            None => {
                let sc = f16_round_up(m)?;
                out.extend_from_slice(&sc.to_le_bytes());
                sc.to_f32()
            }
        };
        for (i, &x) in group.iter().enumerate() {
            if norm == 0.0 {
                fields.push(0);
                continue;
            }
            let k = (t * s + i) as u32;
            let v = (x.abs() / norm).min(1.0);
            let key = RandomKey::new(Purpose::EntryQuant, ctx.chunk, sg_index, k);
            let idx = stochastic_index(codebook, v, entry_uniform(params, ctx, &key)) as u8;
            fields.push(if x < 0.0 { idx | sign_bit } else { idx });
        }
    }
    pack_fields(fields, width, out);
    Ok(())
}

/// Decodes one super-group of known width from exactly its wire bytes, either
/// overwriting `out` or adding into it.
pub(crate) fn decode_supergroup(
    bytes: &[u8],
    width: u32,
    params: &CodecParams,
    out: &mut [f32],
    accumulate: bool,
) -> Result<()> {
    let big = params.layout.super_group_size;
    debug_assert_eq!(out.len(), big);
    let put = |slot: &mut f32, v: f32| {
        if accumulate {
            *slot += v
        } else {
            *slot = v
        }
    };
    if width == 16 {
        for (k, slot) in out.iter_mut().enumerate() {
            put(slot, read_f16(bytes, 2 * k).to_f32());
        }
        return Ok(());
    }
    let q = params.codebook(width)?.values();
    let s = params.layout.group_size;
    let groups = params.layout.groups_per_super_group();
    let index_mask = (1u8 << (width - 1)) - 1;
    let (payload, scale_of): (&[u8], Box<dyn Fn(usize) -> f32 + '_>) = match params.scale_mode {
        ScaleMode::Hierarchical => {
            let sf = read_f16(bytes, 0).to_f32();
            let codes = &bytes[2..2 + groups];
            (&bytes[2 + groups..], Box::new(move |t| codes[t] as f32 * sf / 255.0))
        }
        ScaleMode::Direct => (&bytes[2 * groups..], Box::new(move |t| read_f16(bytes, 2 * t).to_f32())),
    };
    for (t, group) in out.chunks_exact_mut(s).enumerate() {
        let sf_g = scale_of(t);
        for (i, slot) in group.iter_mut().enumerate() {
            let f = field(payload, t * s + i, width);
            let idx = (f & index_mask) as usize;
            if idx >= q.len() {
                return Err(Error::Malformed(format!("index {idx} out of range")));
            }
            let mag = q[idx] * sf_g;
            put(slot, if f >> (width - 1) == 1 { -mag } else { mag });
        }
    }
    Ok(())
}

/// Compresses one super-group of `S` values.
pub fn compress_supergroup(
    values: &[f32],
    width: u32,
    params: &CodecParams,
    sg_index: u32,
    ctx: &HopContext,
) -> Result<CompressedSuperGroup> {
    ctx.validate()?;
    let mut bytes = Vec::with_capacity(supergroup_bytes(width, params)?);
    encode_supergroup(values, width, params, sg_index, ctx, &mut bytes, &mut Vec::new())?;
    CompressedSuperGroup::parse(&bytes, width, params)
}

pub fn decompress_supergroup(c: &CompressedSuperGroup, params: &CodecParams) -> Result<Vec<f32>> {
    let bytes = c.to_bytes();
    // re-validate: the struct fields are public
    let parsed = CompressedSuperGroup::parse(&bytes, c.width, params)?;
    debug_assert_eq!(&parsed, c);
    let mut out = vec![0.0f32; params.layout.super_group_size];
    decode_supergroup(&bytes, c.width, params, &mut out, false)?;
    Ok(out)
}
