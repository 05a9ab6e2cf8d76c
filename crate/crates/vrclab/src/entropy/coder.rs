//! Carry-less range coder plus the per-element adaptive alphabets that feed
//! it.
//!
//! The coder works on 32-bit state with byte renormalization; carries are
//! avoided by shrinking the range to the next 2^16 boundary instead of
//! propagating. Frequency tables always total 2^16, so a symbol lookup is one
//! divide and one multiply.
//!
//! Each tensor element gets its own alphabet of 2K+1 bins centered on the
//! model mean, K derived from the model scale. The two extreme symbols fold
//! in the tails; landing on one is followed by the excess index distance in
//! LEB128 bytes, coded under a uniform byte table. Encoder and decoder derive
//! identical alphabets from the shared model state, so nothing about the
//! layout is stored in the stream.

use crate::error::{Error, Result};
use crate::quant::IntTensor;

use super::{Bitstream, Dist};

const TOP: u32 = 1 << 24;
const BOT: u32 = 1 << 16;

/// Cumulative frequencies over a symbol alphabet; totals exactly 2^16 and
/// every symbol has nonzero mass.
#[derive(Debug, Clone)]
pub struct FreqTable {
    cum: Vec<u32>,
}

impl FreqTable {
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let n = masses.len();
        if n == 0 || n as u32 > BOT {
            return Err(Error::invalid(
                "freq_table",
                format!("alphabet of {n} symbols cannot fill a 16-bit table"),
            ));
        }
        let mut total_mass = 0.0;
        for &m in masses {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::invalid("freq_table", format!("mass {m}")));
            }
            total_mass += m;
        }
        if total_mass <= 0.0 {
            return Err(Error::invalid("freq_table", "all masses are zero"));
        }

        let ideal: Vec<f64> = masses
            .iter()
            .map(|&m| m / total_mass * BOT as f64)
            .collect();
        let mut freq: Vec<u32> = ideal.iter().map(|&x| (x.floor() as u32).max(1)).collect();
        let mut sum: i64 = freq.iter().map(|&f| f as i64).sum();

        // largest-remainder top-up, then shave the biggest overshoots
        if sum < BOT as i64 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                let ra = ideal[a] - ideal[a].floor();
                let rb = ideal[b] - ideal[b].floor();
                rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
            });
            let mut i = 0;
            while sum < BOT as i64 {
                freq[order[i % n]] += 1;
                sum += 1;
                i += 1;
            }
        }
        while sum > BOT as i64 {
            let mut best = usize::MAX;
            let mut best_over = f64::NEG_INFINITY;
            for e in 0..n {
                if freq[e] > 1 {
                    let over = freq[e] as f64 - ideal[e];
                    if over > best_over {
                        best_over = over;
                        best = e;
                    }
                }
            }
            debug_assert!(best != usize::MAX);
            freq[best] -= 1;
            sum -= 1;
        }

        let mut cum = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freq {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, BOT);
        Ok(FreqTable { cum })
    }

    /// 256 symbols of 256 each; used for escape bytes.
    pub fn uniform_bytes() -> Self {
        FreqTable {
            cum: (0..=256u32).map(|i| i * 256).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self, s: usize) -> (u32, u32) {
        (self.cum[s], self.cum[s + 1] - self.cum[s])
    }

    /// Symbol whose cumulative span contains `v` < 2^16.
    pub fn find(&self, v: u32) -> usize {
        debug_assert!(v < BOT);
        // cum is strictly increasing; partition_point gives the first index
        // with cum > v, symbol is one before it
        self.cum.partition_point(|&c| c <= v) - 1
    }
}

pub struct RangeEncoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, table: &FreqTable, sym: usize) {
        let (cum, freq) = table.span(sym);
        debug_assert!(freq > 0);
        let r = self.range / BOT;
        self.low = self.low.wrapping_add(r * cum);
        self.range = r * freq;
        self.normalize();
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                // force the range to the next 2^16 boundary instead of
                // carrying; never zero here because the top bytes differ
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

pub struct RangeDecoder<'a> {
    buf: &'a [u8],
    pos: usize,
    low: u32,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            buf,
            pos: 0,
            low: 0,
            range: u32::MAX,
            code: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        // reads past the end mirror the encoder's implicit zero tail
        let b = self.buf.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode(&mut self, table: &FreqTable) -> usize {
        let r = self.range / BOT;
        let v = (self.code.wrapping_sub(self.low) / r).min(BOT - 1);
        let sym = table.find(v);
        let (cum, freq) = table.span(sym);
        self.low = self.low.wrapping_add(r * cum);
        self.range = r * freq;
        self.normalize();
        sym
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.low <<= 8;
            self.range <<= 8;
        }
    }
}

/// Alphabet geometry for one element: symbols index bins
/// [center-k, center+k], with the outermost two acting as escapes.
struct Alphabet {
    center: i64,
    k: i64,
    table: FreqTable,
}

fn build_alphabet(dist: &Dist, e: usize, channels: usize, delta: f64) -> Result<Alphabet> {
    let center = dist.alphabet_center(e, channels, delta);
    let k = dist.alphabet_halfwidth(e, channels, delta);
    let n = (2 * k + 1) as usize;
    let (loc, scale) = dist.params(e, channels);
    let mut masses = Vec::with_capacity(n);
    for i in 0..n {
        let q = center - k + i as i64;
        let m = if i == 0 {
            // everything at or below the lower extreme's upper edge
            let hi = ((q as f64 + 0.5) * delta - loc) / scale;
            dist.tail_mass(hi)
        } else if i == n - 1 {
            let lo = ((q as f64 - 0.5) * delta - loc) / scale;
            dist.tail_mass(-lo)
        } else {
            dist.bin_mass(e, channels, q, delta)
        };
        masses.push(m);
    }
    Ok(Alphabet {
        center,
        k,
        table: FreqTable::from_masses(&masses)?,
    })
}

fn write_leb128(enc: &mut RangeEncoder, bytes_table: &FreqTable, mut v: u64) {
    loop {
        let mut b = (v & 0x7f) as u8;
        v >>= 7;
        if v != 0 {
            b |= 0x80;
        }
        enc.encode(bytes_table, b as usize);
        if v == 0 {
            break;
        }
    }
}

fn read_leb128(dec: &mut RangeDecoder, bytes_table: &FreqTable) -> Result<u64> {
    let mut v = 0u64;
    let mut shift = 0u32;
    loop {
        let b = dec.decode(bytes_table) as u64;
        if shift >= 63 && b > 1 {
            return Err(Error::format("bitstream", "escape run overflows"));
        }
        v |= (b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
        shift += 7;
    }
}

/// Code an index tensor against the model into a self-describing stream.
pub fn encode_symbols(q: &IntTensor, dist: Dist, delta: f64) -> Result<Bitstream> {
    super::check_delta("encode_symbols", delta)?;
    dist.check_shape("encode_symbols", q.shape())?;
    let channels = *q.shape().last().unwrap_or(&1);
    let bytes_table = FreqTable::uniform_bytes();
    let mut enc = RangeEncoder::new();
    for (e, &qv) in q.data().iter().enumerate() {
        let a = build_alphabet(&dist, e, channels, delta)?;
        let lo = a.center - a.k;
        let hi = a.center + a.k;
        if qv <= lo {
            enc.encode(&a.table, 0);
            write_leb128(&mut enc, &bytes_table, (lo - qv) as u64);
        } else if qv >= hi {
            enc.encode(&a.table, (2 * a.k) as usize);
            write_leb128(&mut enc, &bytes_table, (qv - hi) as u64);
        } else {
            enc.encode(&a.table, (qv - lo) as usize);
        }
    }
    Ok(Bitstream {
        shape: q.shape().to_vec(),
        delta,
        payload: enc.finish(),
    })
}

/// Inverse of [`encode_symbols`]; the model and step must match the ones the
/// stream was produced under.
pub fn decode_symbols(bs: &Bitstream, dist: Dist, delta: f64) -> Result<IntTensor> {
    super::check_delta("decode_symbols", delta)?;
    if bs.delta != delta {
        return Err(Error::format(
            "bitstream",
            format!("stream was coded at step {} but {} was supplied", bs.delta, delta),
        ));
    }
    dist.check_shape("decode_symbols", &bs.shape)?;
    let channels = *bs.shape.last().unwrap_or(&1);
    let n = bs.shape.iter().product::<usize>();
    let bytes_table = FreqTable::uniform_bytes();
    let mut dec = RangeDecoder::new(&bs.payload);
    let mut data = Vec::with_capacity(n);
    for e in 0..n {
        let a = build_alphabet(&dist, e, channels, delta)?;
        let sym = dec.decode(&a.table) as i64;
        let lo = a.center - a.k;
        let q = if sym == 0 {
            let excess = read_leb128(&mut dec, &bytes_table)? as i64;
            lo - excess
        } else if sym == 2 * a.k {
            let excess = read_leb128(&mut dec, &bytes_table)? as i64;
            a.center + a.k + excess
        } else {
            lo + sym
        };
        data.push(q);
    }
    IntTensor::new(bs.shape.clone(), data)
}
