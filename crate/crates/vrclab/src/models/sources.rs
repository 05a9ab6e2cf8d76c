//! Synthetic data the toy codecs train on, plus the on-disk sample
//! container.
//!
//! The AR(1) source draws a per-sample amplitude from a log-uniform range,
//! which is what spreads the latent scales across the regimes the offset and
//! hyper-step networks have to cover.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Ar1 {
        dim: usize,
        rho: f64,
        amp_lo: f64,
        amp_hi: f64,
    },
    Patches {
        size: usize,
    },
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SourceConfig::Ar1 {
                dim,
                rho,
                amp_lo,
                amp_hi,
            } => {
                if dim == 0 {
                    return Err(Error::Config("ar1 source needs dim >= 1".into()));
                }
                if !(rho.abs() < 1.0) {
                    return Err(Error::Config(format!("ar1 rho {rho} outside (-1, 1)")));
                }
                if !(amp_lo > 0.0 && amp_hi >= amp_lo) || !amp_hi.is_finite() {
                    return Err(Error::Config(format!(
                        "ar1 amplitude range [{amp_lo}, {amp_hi}] invalid"
                    )));
                }
            }
            SourceConfig::Patches { size } => {
                if size == 0 {
                    return Err(Error::Config("patch source needs size >= 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match *self {
            SourceConfig::Ar1 { dim, .. } => dim,
            SourceConfig::Patches { size } => size * size,
        }
    }

    /// One batch, rows are samples.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Tensor> {
        self.validate()?;
        if batch == 0 {
            return Err(Error::invalid("source_sample", "empty batch"));
        }
        match *self {
            SourceConfig::Ar1 {
                dim,
                rho,
                amp_lo,
                amp_hi,
            } => {
                let innov = (1.0 - rho * rho).sqrt();
                let mut data = Vec::with_capacity(batch * dim);
                for _ in 0..batch {
                    let amp = (rng.gen_range(amp_lo.ln()..=amp_hi.ln())).exp();
                    let mut prev: f64 = rng.sample::<f64, _>(StandardNormal);
                    data.push(amp * prev);
                    for _ in 1..dim {
                        let e: f64 = rng.sample(StandardNormal);
                        prev = rho * prev + innov * e;
                        data.push(amp * prev);
                    }
                }
                Tensor::new(vec![batch, dim], data)
            }
            SourceConfig::Patches { size } => {
                let dim = size * size;
                let mut data = Vec::with_capacity(batch * dim);
                for _ in 0..batch {
                    // gradient + oriented sinusoid + soft edge, kept in [0, 1]
                    let gr = rng.gen_range(-0.5..0.5);
                    let gc = rng.gen_range(-0.5..0.5);
                    let freq = rng.gen_range(0.5..2.5);
                    let angle = rng.gen_range(0.0..std::f64::consts::PI);
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    let sin_amp = rng.gen_range(0.0..0.25);
                    let edge_pos = rng.gen_range(0.0..size as f64);
                    let edge_amp = rng.gen_range(-0.25..0.25);
                    let noise_amp = rng.gen_range(0.0..0.02);
                    let (ca, sa) = (angle.cos(), angle.sin());
                    for r in 0..size {
                        for c in 0..size {
                            let (rf, cf) = (r as f64 / size as f64, c as f64 / size as f64);
                            let u = (r as f64 * ca + c as f64 * sa) * freq
                                * std::f64::consts::TAU
                                / size as f64;
                            let edge = 1.0 / (1.0 + (-(c as f64 - edge_pos) * 2.0).exp());
                            let n: f64 = rng.sample::<f64, _>(StandardNormal);
                            let v = 0.5
                                + gr * (rf - 0.5)
                                + gc * (cf - 0.5)
                                + sin_amp * (u + phase).sin()
                                + edge_amp * (edge - 0.5)
                                + noise_amp * n;
                            data.push(v.clamp(0.0, 1.0));
                        }
                    }
                }
                Tensor::new(vec![batch, dim], data)
            }
        }
    }
}

/// Sample container: u32 LE dimension, u32 LE count, then count*dimension
/// f64 LE values row-major.
pub fn write_samples(path: &Path, x: &Tensor) -> Result<()> {
    if x.rank() != 2 {
        return Err(Error::invalid(
            "write_samples",
            format!("rank {} tensor, expected rows x dim", x.rank()),
        ));
    }
    let (count, dim) = (x.shape()[0], x.shape()[1]);
    let dim32 = u32::try_from(dim)
        .map_err(|_| Error::format("samples", format!("dimension {dim} too large")))?;
    let count32 = u32::try_from(count)
        .map_err(|_| Error::format("samples", format!("count {count} too large")))?;
    let mut bytes = Vec::with_capacity(8 + x.numel() * 8);
    bytes.extend_from_slice(&dim32.to_le_bytes());
    bytes.extend_from_slice(&count32.to_le_bytes());
    for &v in x.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format("samples", "truncated header"));
    }
    let dim = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let need = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| Error::format("samples", "size overflow"))?;
    if bytes.len() != need {
        return Err(Error::format(
            "samples",
            format!("{} bytes, header implies {need}", bytes.len()),
        ));
    }
    if dim == 0 || count == 0 {
        return Err(Error::format("samples", "empty dimensions"));
    }
    let data = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let t = Tensor::new(vec![count, dim], data)?;
    t.validate_finite("sample file")?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng as _;
    use rand_chacha::ChaCha8Rng;

    fn ar1() -> SourceConfig {
        SourceConfig::Ar1 {
            dim: 16,
            rho: 0.9,
            amp_lo: 0.5,
            amp_hi: 12.0,
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(SourceConfig::Ar1 { dim: 0, rho: 0.5, amp_lo: 1.0, amp_hi: 2.0 }
            .validate()
            .is_err());
        assert!(SourceConfig::Ar1 { dim: 4, rho: 1.0, amp_lo: 1.0, amp_hi: 2.0 }
            .validate()
            .is_err());
        assert!(SourceConfig::Ar1 { dim: 4, rho: 0.5, amp_lo: 0.0, amp_hi: 2.0 }
            .validate()
            .is_err());
        assert!(SourceConfig::Ar1 { dim: 4, rho: 0.5, amp_lo: 3.0, amp_hi: 2.0 }
            .validate()
            .is_err());
        assert!(SourceConfig::Patches { size: 0 }.validate().is_err());
        assert!(ar1().sample(0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn ar1_neighbor_correlation_tracks_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = ar1().sample(4000, &mut rng).unwrap();
        let (b, d) = (x.shape()[0], x.shape()[1]);
        // normalize each row by its own scale before pooling
        let (mut num, mut den) = (0.0, 0.0);
        for r in 0..b {
            let row = &x.data()[r * d..(r + 1) * d];
            for t in 1..d {
                num += row[t] * row[t - 1];
                den += row[t - 1] * row[t - 1];
            }
        }
        let rho_hat = num / den;
        assert!((rho_hat - 0.9).abs() < 0.03, "rho_hat = {rho_hat}");
    }

    #[test]
    fn ar1_amplitudes_span_the_configured_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = ar1().sample(2000, &mut rng).unwrap();
        let d = x.shape()[1];
        let rms: Vec<f64> = (0..2000)
            .map(|r| {
                let row = &x.data()[r * d..(r + 1) * d];
                (row.iter().map(|v| v * v).sum::<f64>() / d as f64).sqrt()
            })
            .collect();
        let lo = rms.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rms.iter().cloned().fold(0.0, f64::max);
        assert!(lo < 1.0, "smallest row rms {lo}");
        assert!(hi > 6.0, "largest row rms {hi}");
    }

    #[test]
    fn patches_are_unit_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src = SourceConfig::Patches { size: 8 };
        let x = src.sample(64, &mut rng).unwrap();
        assert_eq!(x.shape(), &[64, 64]);
        assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // patches are not all flat
        let spread = x.data().iter().cloned().fold(0.0f64, f64::max)
            - x.data().iter().cloned().fold(1.0f64, f64::min);
        assert!(spread > 0.2);
    }

    #[test]
    fn sampling_is_reproducible_by_seed() {
        let a = ar1().sample(8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = ar1().sample(8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn sample_file_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.samples");
        let x = ar1().sample(5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        write_samples(&path, &x).unwrap();
        let back = read_samples(&path).unwrap();
        assert_eq!(back.shape(), x.shape());
        assert_eq!(back.data(), x.data());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_samples(&path).is_err());

        assert!(write_samples(&path, &Tensor::from_vec(vec![1.0])).is_err());
    }
}
