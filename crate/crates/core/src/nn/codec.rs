//! Parameter file format.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "PCGPARAM"
//!      8     4  format version (1)
//!     12     4  input_size
//!     16     4  output_size
//!     20     4  lookback
//!     24     4  number of LSTM layers (1..=8)
//!     28    32  hidden sizes, 8 slots, unused slots zero
//!     60     4  parameter count
//!     64   4*n  parameters as f32, canonical layout
//! ```
//! Every integer and float is little-endian. The header is always 64 bytes.

use std::fs;
use std::path::Path;

use super::{ModelError, ModelTopology, ParamVector, Result};

pub const MAGIC: [u8; 8] = *b"PCGPARAM";
pub const HEADER_BYTES: usize = 64;
pub const MAX_LAYERS: usize = 8;
const VERSION: u32 = 1;

/// Serializes to the wire format; values are rounded to f32.
pub fn encode_params(params: &ParamVector) -> Vec<u8> {
    let t = params.topology();
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * params.len());
    out.extend_from_slice(&MAGIC);
    for word in [
        VERSION,
        t.input_size as u32,
        t.output_size as u32,
        t.lookback as u32,
        t.hidden_sizes.len() as u32,
    ] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for slot in 0..MAX_LAYERS {
        let h = t.hidden_sizes.get(slot).copied().unwrap_or(0) as u32;
        out.extend_from_slice(&h.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_BYTES);
    for &v in params.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamVector> {
    let bad = |m: &str| ModelError::Format(m.to_string());
    if bytes.len() < HEADER_BYTES {
        return Err(bad("truncated header"));
    }
    if bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let n_layers = word(4);
    if n_layers == 0 || n_layers > MAX_LAYERS {
        return Err(bad("bad layer count"));
    }
    let topology = ModelTopology {
        input_size: word(1),
        output_size: word(2),
        lookback: word(3),
        hidden_sizes: (0..n_layers).map(|i| word(5 + i)).collect(),
    };
    topology.validate()?;
    let count = word(13);
    if count != topology.param_count() {
        return Err(bad("parameter count does not match topology"));
    }
    let body = &bytes[HEADER_BYTES..];
    if body.len() != 4 * count {
        return Err(bad("body length does not match parameter count"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ParamVector::new(topology, values)
}

pub fn save_params(path: &Path, params: &ParamVector) -> Result<()> {
    fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamVector> {
    decode_params(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let p = init_params(&ModelTopology::model2().with_hidden(vec![3, 2]), 4).unwrap();
        let bytes = encode_params(&p);
        assert_eq!(bytes.len(), HEADER_BYTES + 4 * p.len());
        assert_eq!(&bytes[..8], b"PCGPARAM");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[32..36].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[36..40].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[60..64].try_into().unwrap()) as usize, p.len());
    }

    #[test]
    fn rejects_corrupt_files() {
        let p = init_params(&ModelTopology::model1().with_hidden(vec![2]), 4).unwrap();
        let bytes = encode_params(&p);
        assert!(decode_params(&bytes[..10]).is_err());
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_params(&wrong).is_err());
        let mut wrong = bytes;
        wrong[28] = 3;
        assert!(decode_params(&wrong).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(hidden in proptest::collection::vec(1usize..6, 1..4),
                                   out in 1usize..4, seed in any::<u64>()) {
            let t = ModelTopology { input_size: 1, hidden_sizes: hidden, output_size: out, lookback: 3 };
            let p = init_params(&t, seed).unwrap();
            let bytes = encode_params(&p);
            let q = decode_params(&bytes).unwrap();
            // once on the f32 grid, values and bytes survive further round trips unchanged
            prop_assert_eq!(encode_params(&q), bytes.clone());
            prop_assert_eq!(decode_params(&encode_params(&q)).unwrap(), q.clone());
            for (a, b) in p.values().iter().zip(q.values()) {
                prop_assert_eq!(*b, *a as f32 as f64);
            }
        }
    }
}
