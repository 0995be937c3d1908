//! LSB-first packing of fixed-width fields whose width divides 8.

/// Appends `fields`, each `width` bits wide, to `out`.
pub(crate) fn pack_fields(fields: &[u8], width: u32, out: &mut Vec<u8>) {
    debug_assert!(matches!(width, 2 | 4 | 8));
    if width == 8 {
        out.extend_from_slice(fields);
        return;
    }
    let per_byte = (8 / width) as usize;
    for chunk in fields.chunks(per_byte) {
        let mut byte = 0u8;
        for (i, &f) in chunk.iter().enumerate() {
            debug_assert!((f as u32) < (1 << width));
            byte |= f << (i as u32 * width);
        }
        out.push(byte);
    }
}

/// Field `k` of a packed buffer.
#[inline]
pub(crate) fn field(bytes: &[u8], k: usize, width: u32) -> u8 {
    match width {
        8 => bytes[k],
        4 => (bytes[k >> 1] >> ((k & 1) * 4)) & 0x0f,
        2 => (bytes[k >> 2] >> ((k & 3) * 2)) & 0x03,
        _ => unreachable!("unsupported packed width {width}"),
    }
}

/// Bytes needed for `count` fields of `width` bits.
pub(crate) fn packed_len(count: usize, width: u32) -> usize {
    (count * width as usize).div_ceil(8)
}
