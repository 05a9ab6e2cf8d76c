//! Serialized container for one coded tensor.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VRBS"
//! 4       2     format version (1)
//! 6       1     rank
//! 7       4*r   dims, u32 each
//! ..      8     quantization step, f64 bits
//! ..      4     payload length in bytes
//! ..      n     range coder payload
//! ```

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"VRBS";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub shape: Vec<usize>,
    pub delta: f64,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn total_bits(&self) -> usize {
        self.payload.len() * 8
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.shape.len() > u8::MAX as usize {
            return Err(Error::format("bitstream", "rank exceeds 255"));
        }
        let mut out = Vec::with_capacity(23 + 4 * self.shape.len() + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            let d = u32::try_from(d)
                .map_err(|_| Error::format("bitstream", format!("dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.delta.to_le_bytes());
        let plen = u32::try_from(self.payload.len())
            .map_err(|_| Error::format("bitstream", "payload exceeds u32 length"))?;
        out.extend_from_slice(&plen.to_le_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::format("bitstream", "truncated"))?;
            let s = &bytes[*pos..end];
            *pos = end;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(Error::format("bitstream", "bad magic"));
        }
        let ver = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        if ver != VERSION {
            return Err(Error::format(
                "bitstream",
                format!("unsupported version {ver}"),
            ));
        }
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
            shape.push(d as usize);
        }
        let delta = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::format(
                "bitstream",
                format!("invalid quantization step {delta}"),
            ));
        }
        let plen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let payload = take(&mut pos, plen)?.to_vec();
        if pos != bytes.len() {
            return Err(Error::format(
                "bitstream",
                format!("{} trailing bytes", bytes.len() - pos),
            ));
        }
        Ok(Bitstream {
            shape,
            delta,
            payload,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bitstream {
        Bitstream {
            shape: vec![4, 16],
            delta: 0.75,
            payload: vec![0xde, 0xad, 0xbe, 0xef, 0x01],
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let bs = sample();
        let bytes = bs.to_bytes().unwrap();
        assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), bs);
    }

    #[test]
    fn layout_is_pinned() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"VRBS");
        assert_eq!(u16::from_le_bytes(bytes[4..6].try_into().unwrap()), 1);
        assert_eq!(bytes[6], 2);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[11..15].try_into().unwrap()), 16);
        assert_eq!(f64::from_le_bytes(bytes[15..23].try_into().unwrap()), 0.75);
        assert_eq!(u32::from_le_bytes(bytes[23..27].try_into().unwrap()), 5);
        assert_eq!(&bytes[27..], &[0xde, 0xad, 0xbe, 0xef, 0x01]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let good = sample().to_bytes().unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(Bitstream::from_bytes(&bad_magic).is_err());

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(Bitstream::from_bytes(&bad_version).is_err());

        assert!(Bitstream::from_bytes(&good[..good.len() - 1]).is_err());
        assert!(Bitstream::from_bytes(&good[..10]).is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(Bitstream::from_bytes(&trailing).is_err());

        let mut bad_delta = good;
        bad_delta[15..23].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(Bitstream::from_bytes(&bad_delta).is_err());
    }

    #[test]
    fn scalar_rank_zero_stream_is_legal() {
        let bs = Bitstream {
            shape: vec![],
            delta: 1.0,
            payload: vec![],
        };
        let bytes = bs.to_bytes().unwrap();
        assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), bs);
    }
}
