//! Chunk framing and the fused chunk kernels.

use super::{
    check_codec_width, decode_supergroup, encode_supergroup, supergroup_bytes, CodecParams, CompressedSuperGroup,
    HopContext, ScaleMode,
};
use crate::error::{Error, Result};
use crate::stats::GroupLayout;

pub const CHUNK_HEADER_BYTES: usize = 24;
pub const CHUNK_HEADER_BITS: u64 = CHUNK_HEADER_BYTES as u64 * 8;
pub const LOSSLESS_HEADER_BYTES: usize = 8;

/// Order of the run-length fields in the header.
const HEADER_WIDTH_ORDER: [u32; 4] = [8, 4, 2, 16];
/// Order super-groups appear in the body.
const BODY_WIDTH_ORDER: [u32; 4] = [16, 8, 4, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkHeader {
    pub chunk_index: u32,
    pub super_groups: u32,
    pub count8: u32,
    pub count4: u32,
    pub count2: u32,
    pub count16: u32,
}

impl ChunkHeader {
    pub fn from_widths(chunk_index: u32, widths: &[u32]) -> Result<Self> {
        check_width_order(widths)?;
        let count = |w: u32| widths.iter().filter(|&&x| x == w).count() as u32;
        Ok(Self {
            chunk_index,
            super_groups: widths.len() as u32,
            count8: count(8),
            count4: count(4),
            count2: count(2),
            count16: count(16),
        })
    }

    fn count(&self, width: u32) -> u32 {
        match width {
            16 => self.count16,
            8 => self.count8,
            4 => self.count4,
            _ => self.count2,
        }
    }

    /// Per-super-group widths in body order.
    pub fn widths(&self) -> Vec<u32> {
        BODY_WIDTH_ORDER
            .iter()
            .flat_map(|&w| std::iter::repeat_n(w, self.count(w) as usize))
            .collect()
    }

    pub fn to_bytes(&self) -> [u8; CHUNK_HEADER_BYTES] {
        let mut out = [0u8; CHUNK_HEADER_BYTES];
        let fields = [
            self.chunk_index,
            self.super_groups,
            self.count8,
            self.count4,
            self.count2,
            self.count16,
        ];
        for (slot, f) in out.chunks_exact_mut(4).zip(fields) {
            slot.copy_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHUNK_HEADER_BYTES {
            return Err(Error::Malformed(format!("chunk shorter than its {CHUNK_HEADER_BYTES}-byte header")));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let header = Self {
            chunk_index: word(0),
            super_groups: word(1),
            count8: word(2),
            count4: word(3),
            count2: word(4),
            count16: word(5),
        };
        let total: u64 = HEADER_WIDTH_ORDER.iter().map(|&w| header.count(w) as u64).sum();
        if total != header.super_groups as u64 {
            return Err(Error::Malformed(format!(
                "width counts sum to {total}, header says {}",
                header.super_groups
            )));
        }
        Ok(header)
    }

    /// Exact byte length of header plus body.
    pub fn wire_len(&self, params: &CodecParams) -> Result<u64> {
        let mut len = CHUNK_HEADER_BYTES as u64;
        for w in BODY_WIDTH_ORDER {
            len += self.count(w) as u64 * supergroup_bytes(w, params)? as u64;
        }
        Ok(len)
    }
}

fn check_width_order(widths: &[u32]) -> Result<()> {
    for &w in widths {
        check_codec_width(w)?;
    }
    if widths.windows(2).any(|p| p[0] < p[1]) {
        return Err(Error::InvalidArgument("chunk widths must be non-increasing".into()));
    }
    if widths.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("too many super-groups in a chunk".into()));
    }
    Ok(())
}

/// Wire bits of one super-group.
pub fn supergroup_size_bits(width: u32, layout: GroupLayout, scale_mode: ScaleMode) -> Result<u64> {
    check_codec_width(width)?;
    let big = layout.super_group_size as u64;
    let groups = layout.groups_per_super_group() as u64;
    Ok(match (width, scale_mode) {
        (16, _) => 16 * big,
        (w, ScaleMode::Hierarchical) => 16 + 8 * groups + w as u64 * big,
        (w, ScaleMode::Direct) => 16 * groups + w as u64 * big,
    })
}

/// Wire bits of one chunk holding super-groups of the given widths.
pub fn compressed_size_bits(widths: &[u32], layout: GroupLayout, scale_mode: ScaleMode) -> Result<u64> {
    let mut bits = CHUNK_HEADER_BITS;
    for &w in widths {
        bits += supergroup_size_bits(w, layout, scale_mode)?;
    }
    Ok(bits)
}

/// Parsed chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedChunk {
    pub header: ChunkHeader,
    pub super_groups: Vec<CompressedSuperGroup>,
}

impl CompressedChunk {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes().to_vec();
        for sg in &self.super_groups {
            sg.write_to(&mut out);
        }
        out
    }
}

/// Super-group byte ranges of a validated chunk.
fn body_slices<'a>(bytes: &'a [u8], header: &ChunkHeader, params: &CodecParams) -> Result<Vec<(u32, &'a [u8])>> {
    let expected = header.wire_len(params)?;
    if bytes.len() as u64 != expected {
        return Err(Error::Malformed(format!(
            "chunk {} is {} bytes, header implies {expected}",
            header.chunk_index,
            bytes.len()
        )));
    }
    let mut at = CHUNK_HEADER_BYTES;
    let mut out = Vec::with_capacity(header.super_groups as usize);
    for w in header.widths() {
        let len = supergroup_bytes(w, params)?;
        out.push((w, &bytes[at..at + len]));
        at += len;
    }
    Ok(out)
}

pub fn parse_chunk(bytes: &[u8], params: &CodecParams) -> Result<CompressedChunk> {
    let header = ChunkHeader::parse(bytes)?;
    let super_groups = body_slices(bytes, &header, params)?
        .into_iter()
        .map(|(w, b)| CompressedSuperGroup::parse(b, w, params))
        .collect::<Result<_>>()?;
    Ok(CompressedChunk { header, super_groups })
}

/// Compresses a chunk whose super-groups have non-increasing `widths`.
pub fn compress_chunk(values: &[f32], widths: &[u32], params: &CodecParams, ctx: &HopContext) -> Result<Vec<u8>> {
    ctx.validate()?;
    let header = ChunkHeader::from_widths(ctx.chunk, widths)?;
    let big = params.layout.super_group_size;
    if values.len() != widths.len() * big {
        return Err(Error::LengthMismatch {
            expected: widths.len() * big,
            actual: values.len(),
        });
    }
    let mut out = Vec::with_capacity(header.wire_len(params)? as usize);
    out.extend_from_slice(&header.to_bytes());
    let mut fields = Vec::with_capacity(big);
    for (j, (sg, &w)) in values.chunks_exact(big).zip(widths).enumerate() {
        encode_supergroup(sg, w, params, j as u32, ctx, &mut out, &mut fields)?;
    }
    Ok(out)
}

fn decode_chunk_into(bytes: &[u8], params: &CodecParams, out: &mut [f32], accumulate: bool) -> Result<ChunkHeader> {
    let header = ChunkHeader::parse(bytes)?;
    let slices = body_slices(bytes, &header, params)?;
    let big = params.layout.super_group_size;
    if out.len() != slices.len() * big {
        return Err(Error::LengthMismatch {
            expected: slices.len() * big,
            actual: out.len(),
        });
    }
    for ((w, sg), dst) in slices.into_iter().zip(out.chunks_exact_mut(big)) {
        super::validate_supergroup(sg, w, params)?;
        decode_supergroup(sg, w, params, dst, accumulate)?;
    }
    Ok(header)
}

pub fn decompress_chunk(bytes: &[u8], params: &CodecParams) -> Result<(ChunkHeader, Vec<f32>)> {
    let header = ChunkHeader::parse(bytes)?;
    let mut out = vec![0.0f32; header.super_groups as usize * params.layout.super_group_size];
    decode_chunk_into(bytes, params, &mut out, false)?;
    Ok((header, out))
}

/// `acc += decompress(bytes)` in one pass.
pub fn decompress_accumulate(bytes: &[u8], acc: &mut [f32], params: &CodecParams) -> Result<()> {
    decode_chunk_into(bytes, params, acc, true).map(|_| ())
}

/// `compress(decompress(bytes) + local)` one super-group at a time.
pub fn decompress_accumulate_recompress(
    bytes: &[u8],
    local: &[f32],
    widths: &[u32],
    params: &CodecParams,
    ctx: &HopContext,
) -> Result<Vec<u8>> {
    ctx.validate()?;
    let header = ChunkHeader::parse(bytes)?;
    if header.widths() != widths {
        return Err(Error::WidthMismatch {
            chunk: header.chunk_index,
        });
    }
    if header.chunk_index != ctx.chunk {
        return Err(Error::Malformed(format!(
            "received chunk {} while reducing chunk {}",
            header.chunk_index, ctx.chunk
        )));
    }
    let big = params.layout.super_group_size;
    if local.len() != widths.len() * big {
        return Err(Error::LengthMismatch {
            expected: widths.len() * big,
            actual: local.len(),
        });
    }
    let slices = body_slices(bytes, &header, params)?;
    let mut out = Vec::with_capacity(bytes.len());
    out.extend_from_slice(&header.to_bytes());
    let mut sum = vec![0.0f32; big];
    let mut fields = Vec::with_capacity(big);
    for (j, ((w, sg), mine)) in slices.into_iter().zip(local.chunks_exact(big)).enumerate() {
        super::validate_supergroup(sg, w, params)?;
        decode_supergroup(sg, w, params, &mut sum, false)?;
        for (s, &x) in sum.iter_mut().zip(mine) {
            *s += x;
        }
        encode_supergroup(&sum, w, params, j as u32, ctx, &mut out, &mut fields)?;
    }
    Ok(out)
}

/// Where the bits of a message went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WireBreakdown {
    pub header_bits: u64,
    pub scale_bits: u64,
    pub payload_bits: u64,
    pub entries: u64,
}

impl WireBreakdown {
    pub fn total_bits(&self) -> u64 {
        self.header_bits + self.scale_bits + self.payload_bits
    }
}

impl std::ops::AddAssign for WireBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.header_bits += o.header_bits;
        self.scale_bits += o.scale_bits;
        self.payload_bits += o.payload_bits;
        self.entries += o.entries;
    }
}

/// The chunk-level kernels an aggregation schedule runs at every hop.
pub trait ChunkCodec: Send + Sync {
    fn compress(&self, values: &[f32], widths: &[u32], ctx: &HopContext) -> Result<Vec<u8>>;
    fn decompress_accumulate(&self, bytes: &[u8], acc: &mut [f32]) -> Result<()>;
    fn decompress_accumulate_recompress(
        &self,
        bytes: &[u8],
        local: &[f32],
        widths: &[u32],
        ctx: &HopContext,
    ) -> Result<Vec<u8>>;
    fn breakdown(&self, bytes: &[u8]) -> Result<WireBreakdown>;

    fn decompress(&self, bytes: &[u8], len: usize) -> Result<Vec<f32>> {
        let mut out = vec![0.0f32; len];
        self.decompress_accumulate(bytes, &mut out)?;
        Ok(out)
    }
}

/// The quantizing codec.
#[derive(Debug, Clone)]
pub struct DynamiqCodec {
    pub params: CodecParams,
}

impl DynamiqCodec {
    pub fn new(params: CodecParams) -> Self {
        Self { params }
    }
}

impl ChunkCodec for DynamiqCodec {
    fn compress(&self, values: &[f32], widths: &[u32], ctx: &HopContext) -> Result<Vec<u8>> {
        compress_chunk(values, widths, &self.params, ctx)
    }

    fn decompress_accumulate(&self, bytes: &[u8], acc: &mut [f32]) -> Result<()> {
        decompress_accumulate(bytes, acc, &self.params)
    }

    fn decompress_accumulate_recompress(
        &self,
        bytes: &[u8],
        local: &[f32],
        widths: &[u32],
        ctx: &HopContext,
    ) -> Result<Vec<u8>> {
        decompress_accumulate_recompress(bytes, local, widths, &self.params, ctx)
    }

    fn breakdown(&self, bytes: &[u8]) -> Result<WireBreakdown> {
        let header = ChunkHeader::parse(bytes)?;
        let layout = self.params.layout;
        let groups = layout.groups_per_super_group() as u64;
        let big = layout.super_group_size as u64;
        let mut b = WireBreakdown {
            header_bits: CHUNK_HEADER_BITS,
            ..Default::default()
        };
        for w in header.widths() {
            b.entries += big;
            b.payload_bits += w as u64 * big;
            b.scale_bits += match (w, self.params.scale_mode) {
                (16, _) => 0,
                (_, ScaleMode::Hierarchical) => 16 + 8 * groups,
                (_, ScaleMode::Direct) => 16 * groups,
            };
        }
        Ok(b)
    }
}

/// Full-precision reference codec: every message is the raw `f32` chunk.
#[derive(Debug, Clone, Copy, Default)]
pub struct LosslessCodec;

impl LosslessCodec {
    fn parse(bytes: &[u8]) -> Result<(u32, &[u8])> {
        if bytes.len() < LOSSLESS_HEADER_BYTES {
            return Err(Error::Malformed("lossless chunk shorter than its header".into()));
        }
        let chunk = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[LOSSLESS_HEADER_BYTES..];
        if body.len() != count * 4 {
            return Err(Error::Malformed(format!("lossless chunk {chunk} body length mismatch")));
        }
        Ok((chunk, body))
    }
}

impl ChunkCodec for LosslessCodec {
    fn compress(&self, values: &[f32], _widths: &[u32], ctx: &HopContext) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(LOSSLESS_HEADER_BYTES + 4 * values.len());
        out.extend_from_slice(&ctx.chunk.to_le_bytes());
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    fn decompress_accumulate(&self, bytes: &[u8], acc: &mut [f32]) -> Result<()> {
        let (_, body) = Self::parse(bytes)?;
        if body.len() != acc.len() * 4 {
            return Err(Error::LengthMismatch {
                expected: acc.len(),
                actual: body.len() / 4,
            });
        }
        for (a, b) in acc.iter_mut().zip(body.chunks_exact(4)) {
            *a += f32::from_le_bytes(b.try_into().unwrap());
        }
        Ok(())
    }

    fn decompress_accumulate_recompress(
        &self,
        bytes: &[u8],
        local: &[f32],
        widths: &[u32],
        ctx: &HopContext,
    ) -> Result<Vec<u8>> {
        let mut sum = local.to_vec();
        self.decompress_accumulate(bytes, &mut sum)?;
        self.compress(&sum, widths, ctx)
    }

    fn breakdown(&self, bytes: &[u8]) -> Result<WireBreakdown> {
        let (_, body) = Self::parse(bytes)?;
        Ok(WireBreakdown {
            header_bits: LOSSLESS_HEADER_BYTES as u64 * 8,
            scale_bits: 0,
            payload_bits: body.len() as u64 * 8,
            entries: body.len() as u64 / 4,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::CodebookSet;
    use crate::randomness::SharedSeed;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(mode: ScaleMode) -> CodecParams {
        CodecParams::new(GroupLayout::new(16, 256).unwrap(), mode, CodebookSet::non_uniform().unwrap(), true).unwrap()
    }

    fn ctx(seed: u64, chunk: u32, slot: u32) -> HopContext {
        HopContext::new(SharedSeed::new(seed, 0), chunk, slot, 4).unwrap()
    }

    fn random_chunk(rng: &mut ChaCha8Rng, sgs: usize) -> Vec<f32> {
        (0..sgs * 256).map(|_| rng.gen_range(-2.0f32..2.0)).collect()
    }

    #[test]
    fn size_examples() {
        let layout = GroupLayout::new(16, 256).unwrap();
        assert_eq!(supergroup_size_bits(4, layout, ScaleMode::Hierarchical).unwrap(), 1168);
        assert_eq!(supergroup_size_bits(16, layout, ScaleMode::Hierarchical).unwrap(), 4096);
        assert_eq!(compressed_size_bits(&[], layout, ScaleMode::Hierarchical).unwrap(), CHUNK_HEADER_BITS);
        assert_eq!(
            compressed_size_bits(&[4], layout, ScaleMode::Hierarchical).unwrap(),
            CHUNK_HEADER_BITS + 1168
        );
    }

    #[test]
    fn wire_length_matches_size_formula() {
        let p = params(ScaleMode::Hierarchical);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let widths = [16, 8, 8, 4, 2, 2];
        let v = random_chunk(&mut rng, widths.len());
        let bytes = compress_chunk(&v, &widths, &p, &ctx(1, 7, 0)).unwrap();
        assert_eq!(bytes.len() as u64 * 8, compressed_size_bits(&widths, p.layout, p.scale_mode).unwrap());
        let header = ChunkHeader::parse(&bytes).unwrap();
        assert_eq!(header.chunk_index, 7);
        assert_eq!((header.count16, header.count8, header.count4, header.count2), (1, 2, 1, 2));
        assert_eq!(header.widths(), widths);
    }

    #[test]
    fn rejects_unsorted_widths() {
        let p = params(ScaleMode::Hierarchical);
        assert!(compress_chunk(&[0.0; 512], &[2, 4], &p, &ctx(1, 0, 0)).is_err());
    }

    #[test]
    fn accumulate_is_linear_and_matches_unfused() {
        let p = params(ScaleMode::Hierarchical);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let widths = [8, 4, 2];
        let v = random_chunk(&mut rng, 3);
        let bytes = compress_chunk(&v, &widths, &p, &ctx(3, 0, 1)).unwrap();
        let (_, dec) = decompress_chunk(&bytes, &p).unwrap();
        let mut acc = vec![0.0f32; v.len()];
        decompress_accumulate(&bytes, &mut acc, &p).unwrap();
        assert_eq!(acc, dec);
        decompress_accumulate(&bytes, &mut acc, &p).unwrap();
        for (a, d) in acc.iter().zip(&dec) {
            assert!((a - 2.0 * d).abs() <= 1e-6);
        }
        let base = random_chunk(&mut rng, 3);
        let mut fused = base.clone();
        decompress_accumulate(&bytes, &mut fused, &p).unwrap();
        for ((f, b), d) in fused.iter().zip(&base).zip(&dec) {
            assert!((f - (b + d)).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_chunk_recompresses_to_zero() {
        let p = params(ScaleMode::Hierarchical);
        let widths = [4, 4];
        let zeros = vec![0.0f32; 512];
        let c = compress_chunk(&zeros, &widths, &p, &ctx(1, 0, 0)).unwrap();
        let out = decompress_accumulate_recompress(&c, &zeros, &widths, &p, &ctx(1, 0, 1)).unwrap();
        assert_eq!(out, c);
        assert!(out[CHUNK_HEADER_BYTES..].iter().all(|&b| b == 0));
    }

    #[test]
    fn recompress_rejects_width_mismatch() {
        let p = params(ScaleMode::Hierarchical);
        let v = vec![0.5f32; 512];
        let c = compress_chunk(&v, &[4, 4], &p, &ctx(1, 0, 0)).unwrap();
        assert_eq!(
            decompress_accumulate_recompress(&c, &v, &[8, 4], &p, &ctx(1, 0, 1)),
            Err(Error::WidthMismatch { chunk: 0 })
        );
    }

    #[test]
    fn lossless_round_trip() {
        let codec = LosslessCodec;
        let v = vec![1.5f32, -2.25, 3.0];
        let bytes = codec.compress(&v, &[], &ctx(1, 2, 0)).unwrap();
        assert_eq!(codec.decompress(&bytes, 3).unwrap(), v);
        let sum = codec.decompress_accumulate_recompress(&bytes, &v, &[], &ctx(1, 2, 1)).unwrap();
        assert_eq!(codec.decompress(&sum, 3).unwrap(), vec![3.0, -4.5, 6.0]);
        assert_eq!(codec.breakdown(&bytes).unwrap().entries, 3);
        assert!(codec.decompress(&bytes[..10], 3).is_err());
    }

    fn width_vec() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(prop::sample::select(vec![2u32, 4, 8, 16]), 0..5).prop_map(|mut w| {
            w.sort_unstable_by(|a, b| b.cmp(a));
            w
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fused_matches_unfused(
            seed in any::<u64>(),
            widths in width_vec(),
            hier in any::<bool>(),
            slot in 0u32..4,
        ) {
            let p = params(if hier { ScaleMode::Hierarchical } else { ScaleMode::Direct });
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_chunk(&mut rng, widths.len());
            let b = random_chunk(&mut rng, widths.len());
            let incoming = compress_chunk(&a, &widths, &p, &ctx(seed, 3, slot)).unwrap();
            let hop = ctx(seed ^ 1, 3, (slot + 1) % 4);
            let fused = decompress_accumulate_recompress(&incoming, &b, &widths, &p, &hop).unwrap();
            let (_, mut sum) = decompress_chunk(&incoming, &p).unwrap();
            for (s, x) in sum.iter_mut().zip(&b) {
                *s += x;
            }
            let unfused = compress_chunk(&sum, &widths, &p, &hop).unwrap();
            prop_assert_eq!(fused, unfused);
        }

        #[test]
        fn parse_serialize_round_trip(seed in any::<u64>(), widths in width_vec(), hier in any::<bool>()) {
            let p = params(if hier { ScaleMode::Hierarchical } else { ScaleMode::Direct });
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_chunk(&mut rng, widths.len());
            let bytes = compress_chunk(&v, &widths, &p, &ctx(seed, 0, 0)).unwrap();
            let parsed = parse_chunk(&bytes, &p).unwrap();
            prop_assert_eq!(parsed.to_bytes(), bytes);
        }

        /// Random byte flips either fail to parse or parse to a buffer that
        /// re-serializes to exactly the same bytes and decodes to finite values.
        #[test]
        fn fuzzed_buffers_never_misparse(seed in any::<u64>(), flips in prop::collection::vec((any::<usize>(), any::<u8>()), 1..8), truncate in any::<bool>()) {
            let p = params(ScaleMode::Hierarchical);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let widths = [16, 8, 4, 2];
            let v = random_chunk(&mut rng, 4);
            let mut bytes = compress_chunk(&v, &widths, &p, &ctx(seed, 0, 0)).unwrap();
            for (at, x) in flips {
                let i = at % bytes.len();
                bytes[i] ^= x;
            }
            if truncate {
                bytes.pop();
            }
            match parse_chunk(&bytes, &p) {
                Ok(parsed) => {
                    prop_assert_eq!(parsed.to_bytes(), bytes.clone());
                    let (_, dec) = decompress_chunk(&bytes, &p).unwrap();
                    prop_assert!(dec.iter().all(|x| x.is_finite()));
                }
                Err(e) => {
                    prop_assert!(decompress_chunk(&bytes, &p).is_err());
                    prop_assert!(matches!(e, Error::Malformed(_)));
                }
            }
        }
    }
}
