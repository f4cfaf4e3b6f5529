//! Transform-union files: an 8-byte magic, then `u32` version, `K` and patch
//! side, then `K` row-major `f64` matrices of size `side²×side²`, all little
//! endian.

use std::fs;
use std::path::Path;

use ctrecon_core::sparsity::{Transform, TransformUnion};

use crate::error::{CliError, Result};

pub const UNION_MAGIC: [u8; 8] = *b"CTRUNION";
pub const UNION_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_union(union: &TransformUnion) -> Vec<u8> {
    let d = union.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * union.k() * d * d);
    out.extend_from_slice(&UNION_MAGIC);
    out.extend_from_slice(&UNION_VERSION.to_le_bytes());
    out.extend_from_slice(&(union.k() as u32).to_le_bytes());
    out.extend_from_slice(&(union.side as u32).to_le_bytes());
    for t in &union.transforms {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_union(bytes: &[u8]) -> std::result::Result<TransformUnion, String> {
    if bytes.len() < HEADER_LEN {
        return Err("file is shorter than the union header".into());
    }
    if bytes[..8] != UNION_MAGIC {
        return Err("not a transform-union file (bad magic)".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice")) as usize;
    if word(8) != UNION_VERSION as usize {
        return Err(format!("unsupported union version {}", word(8)));
    }
    let (k, side) = (word(12), word(16));
    let d = side * side;
    if k == 0 || side == 0 {
        return Err(format!("invalid union header K = {k}, side = {side}"));
    }
    if bytes.len() - HEADER_LEN != 8 * k * d * d {
        return Err(format!(
            "payload is {} bytes, expected {}",
            bytes.len() - HEADER_LEN,
            8 * k * d * d
        ));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let transforms = values
        .chunks_exact(d * d)
        .map(|m| Transform::new(d, m.to_vec()))
        .collect::<ctrecon_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    TransformUnion::new(side, transforms).map_err(|e| e.to_string())
}

pub fn write_union(path: &Path, union: &TransformUnion) -> Result<()> {
    if union.side * union.side != union.dim() {
        return Err(CliError::format(path, "only square-patch unions can be stored"));
    }
    fs::write(path, encode_union(union)).map_err(|e| CliError::io(path, e))
}

pub fn read_union(path: &Path) -> Result<TransformUnion> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_union(&bytes).map_err(|m| CliError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_union_round_trips_bit_exactly() {
        let mut union = TransformUnion::dct(4, 3);
        union.transforms[1].data[5] = 0.1 + 0.2;
        let bytes = encode_union(&union);
        assert_eq!(bytes.len(), 20 + 3 * 16 * 16 * 8);
        assert_eq!(bytes[12..16], 3u32.to_le_bytes());
        assert_eq!(bytes[16..20], 4u32.to_le_bytes());
        assert_eq!(decode_union(&bytes).unwrap(), union);
    }

    #[test]
    fn singular_or_truncated_unions_are_rejected() {
        let union = TransformUnion::dct(2, 1);
        let bytes = encode_union(&union);
        assert!(decode_union(&bytes[..bytes.len() - 8]).is_err());
        let mut zero = bytes[..20].to_vec();
        zero.extend(std::iter::repeat_n(0u8, 16 * 8));
        assert!(decode_union(&zero).is_err());
    }
}
