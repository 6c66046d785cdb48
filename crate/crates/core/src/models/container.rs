//! `PINSMODL` parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "PINSMODL" | version u16 | entry count u32
//! per entry:
//!   name length u16 | name bytes (UTF-8) | prunable u8 | layer_index u16
//!   rank u8 | dims u32 x rank | values f32 x numel | mask bits (LSB first,
//!   ceil(numel / 8) bytes, padding bits zero)
//! ```

use std::path::Path;

use super::registry::{ParamEntry, ParamRegistry};
use crate::autograd::Tensor;
use crate::error::{PinsError, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"PINSMODL";
pub const MODEL_VERSION: u16 = 1;

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn encode_registry(reg: &ParamRegistry) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(reg.len() as u32).to_le_bytes());
    for (name, e) in reg.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| PinsError::Config(format!("parameter name too long: {name}")))?;
        let layer = u16::try_from(e.layer_index)
            .map_err(|_| PinsError::Config(format!("layer index too large for {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::from(e.prunable));
        out.extend_from_slice(&layer.to_le_bytes());
        out.push(e.tensor.rank() as u8);
        for &d in e.tensor.shape() {
            let d = u32::try_from(d)
                .map_err(|_| PinsError::Config(format!("dimension too large for {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&pack_bits(&e.mask));
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(PinsError::Format {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_registry(buf: &[u8]) -> Result<ParamRegistry> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MODEL_MAGIC {
        return Err(PinsError::Format {
            offset: 0,
            reason: "bad magic, expected PINSMODL".into(),
        });
    }
    let at = r.pos;
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(PinsError::Format {
            offset: at,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("entry count")?;
    let mut reg = ParamRegistry::new();
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| PinsError::Format {
                offset: at,
                reason: "name is not UTF-8".into(),
            })?
            .to_string();
        let prunable = match r.u8("prunable flag")? {
            0 => false,
            1 => true,
            other => {
                return Err(PinsError::Format {
                    offset: r.pos - 1,
                    reason: format!("prunable flag must be 0 or 1, got {other}"),
                })
            }
        };
        let layer_index = r.u16("layer index")? as usize;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| PinsError::Format {
            offset: at,
            reason: e.to_string(),
        })?;
        let mask_at = r.pos;
        let bits = r.take(numel.div_ceil(8), "mask")?;
        let mask: Vec<bool> = (0..numel).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        if pack_bits(&mask) != bits {
            return Err(PinsError::Format {
                offset: mask_at,
                reason: "non-zero mask padding bits".into(),
            });
        }
        reg.insert_entry(
            name,
            ParamEntry {
                tensor,
                prunable,
                layer_index,
                mask,
            },
        )
        .map_err(|e| PinsError::Format {
            offset: at,
            reason: e.to_string(),
        })?;
    }
    if r.pos != buf.len() {
        return Err(PinsError::Format {
            offset: r.pos,
            reason: "trailing bytes".into(),
        });
    }
    Ok(reg)
}

pub fn save_registry(reg: &ParamRegistry, path: &Path) -> Result<()> {
    std::fs::write(path, encode_registry(reg)?).map_err(|e| PinsError::io(path, e))
}

pub fn load_registry(path: &Path) -> Result<ParamRegistry> {
    let bytes = std::fs::read(path).map_err(|e| PinsError::io(path, e))?;
    decode_registry(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        reg.insert(
            "w",
            Tensor::new(vec![3, 3], (0..9).map(|i| i as f32 - 4.0).collect()).unwrap(),
            true,
            0,
        )
        .unwrap();
        reg.insert("b", Tensor::new(vec![3], vec![0.5, 0.0, -0.5]).unwrap(), false, 0)
            .unwrap();
        reg.get_mut("w").unwrap().mask[4] = false;
        reg
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let reg = sample();
        let bytes = encode_registry(&reg).unwrap();
        let back = decode_registry(&bytes).unwrap();
        assert_eq!(back, reg);
        assert_eq!(encode_registry(&back).unwrap(), bytes);
    }

    #[test]
    fn layout_size() {
        let bytes = encode_registry(&sample()).unwrap();
        // header 14; "w": 2+1+1+2+1+8+36+2; "b": 2+1+1+2+1+4+12+1
        assert_eq!(bytes.len(), 14 + 53 + 24);
    }

    #[test]
    fn truncation_and_magic_errors() {
        let bytes = encode_registry(&sample()).unwrap();
        for cut in [0, 5, 13, 20, bytes.len() - 1] {
            assert!(matches!(
                decode_registry(&bytes[..cut]),
                Err(PinsError::Format { .. })
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_registry(&bad),
            Err(PinsError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn pack_bits_lsb_first() {
        assert_eq!(pack_bits(&[true, false, true]), vec![0b101]);
        assert_eq!(pack_bits(&[false; 9]), vec![0, 0]);
    }
}
