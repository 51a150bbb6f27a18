//! RRLM binary model checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! | field            | type                         |
//! |------------------|------------------------------|
//! | magic            | `b"RRLM"`                    |
//! | version          | u32 (= 1)                    |
//! | input_channels   | u32                          |
//! | input_height     | u32                          |
//! | input_width      | u32                          |
//! | num_blocks       | u32                          |
//! | block_widths     | u32 x num_blocks             |
//! | gamma            | u32                          |
//! | num_classes      | u32                          |
//! | seed             | u64                          |
//! | value_count      | u64                          |
//! | values           | f64 x value_count            |
//!
//! `values` holds every parameter tensor in declaration order (see
//! [`EncoderParams::tensors`]). Nothing may follow the last value.

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RRLM";
pub const VERSION: u32 = 1;

pub fn encode(cfg: &EncoderConfig, params: &EncoderParams) -> Result<Vec<u8>> {
    params.check_shapes(cfg)?;
    let count = params.num_values();
    let mut out = Vec::with_capacity(64 + 4 * cfg.block_widths.len() + 8 * count);
    out.extend_from_slice(MAGIC);
    let u32_of = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::invalid(format!("{what} does not fit in u32")))
    };
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (v, what) in [
        (cfg.input_channels, "input_channels"),
        (cfg.input_height, "input_height"),
        (cfg.input_width, "input_width"),
        (cfg.block_widths.len(), "num_blocks"),
    ] {
        out.extend_from_slice(&u32_of(v, what)?.to_le_bytes());
    }
    for &b in &cfg.block_widths {
        out.extend_from_slice(&u32_of(b, "block width")?.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(cfg.gamma, "gamma")?.to_le_bytes());
    out.extend_from_slice(&u32_of(cfg.num_classes, "num_classes")?.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for (_, t) in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
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
            return Err(Error::format(0, format!("truncated checkpoint while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parameter count implied by a config, or `None` on overflow.
fn expected_values(cfg: &EncoderConfig) -> Option<usize> {
    let mut total = 0usize;
    let mut cin = cfg.input_channels;
    for &cout in &cfg.block_widths {
        total = total.checked_add(cout.checked_mul(cin)?.checked_mul(9)?.checked_add(cout)?)?;
        cin = cout;
    }
    let c2 = cfg.num_classes.checked_mul(cfg.num_classes)?;
    let desc = cin.checked_mul(cfg.gamma)?.checked_add(cfg.gamma)?;
    let head = cfg.gamma.checked_mul(c2)?.checked_add(c2)?;
    total.checked_add(desc)?.checked_add(head)
}

pub fn decode(bytes: &[u8]) -> Result<(EncoderConfig, EncoderParams)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected RRLM"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::format(0, format!("unsupported checkpoint version {version}")));
    }
    let input_channels = r.u32("input_channels")?;
    let input_height = r.u32("input_height")?;
    let input_width = r.u32("input_width")?;
    let num_blocks = r.u32("num_blocks")?;
    if num_blocks > r.remaining() / 4 {
        return Err(Error::format(0, "truncated checkpoint while reading block widths"));
    }
    let block_widths = (0..num_blocks)
        .map(|_| r.u32("block width"))
        .collect::<Result<Vec<_>>>()?;
    let gamma = r.u32("gamma")?;
    let num_classes = r.u32("num_classes")?;
    let seed = r.u64("seed")?;
    let cfg = EncoderConfig {
        input_channels,
        input_height,
        input_width,
        block_widths,
        gamma,
        num_classes,
        seed,
    };
    cfg.validate()
        .map_err(|e| Error::format(0, format!("invalid encoder config: {e}")))?;

    let count = r.u64("value count")?;
    let expect = expected_values(&cfg)
        .ok_or_else(|| Error::format(0, "encoder config too large"))?;
    if count != expect as u64 {
        return Err(Error::format(
            0,
            format!("value count {count} does not match config ({expect})"),
        ));
    }
    if r.remaining() != expect.saturating_mul(8) {
        return Err(Error::format(
            0,
            format!("expected {} bytes of parameters, found {}", expect * 8, r.remaining()),
        ));
    }
    let mut params = EncoderParams::zeros(&cfg)?;
    for (name, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(r.take(8, &name)?.try_into().expect("8 bytes"));
        }
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            input_channels: 3,
            input_height: 8,
            input_width: 8,
            block_widths: vec![4, 5],
            gamma: 6,
            num_classes: 3,
            seed: 99,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = cfg();
        let mut p = init_params(&c).unwrap();
        p.head.bias[0] = -0.0;
        p.head.bias[1] = f64::MIN_POSITIVE / 3.0;
        let bytes = encode(&c, &p).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        let (c2, p2) = decode(&bytes).unwrap();
        assert_eq!(c2, c);
        for ((_, a), (_, b)) in p.tensors().iter().zip(p2.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode(&c2, &p2).unwrap(), bytes);
        assert_eq!(expected_values(&c), Some(p.num_values()));
    }

    #[test]
    fn rejects_corruption() {
        let c = cfg();
        let bytes = encode(&c, &init_params(&c).unwrap()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
        let mut version = bytes.clone();
        version[4] = 2;
        assert!(decode(&version).is_err());
        // Huge block count must not allocate.
        let mut blocks = bytes.clone();
        blocks[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode(&blocks).is_err());
        assert!(decode(b"").is_err());
    }
}
