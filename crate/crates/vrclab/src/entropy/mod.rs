//! Probability models over quantization indices, the bit estimate they
//! induce, and the range coder that realizes it.
//!
//! Bin masses are CDF differences at the bin edges; everything downstream
//! (rate estimates, coder frequency tables) derives from the same masses, so
//! the estimate and the actual stream length can only drift apart through
//! 16-bit frequency quantization and the coder's constant flush cost.

mod bitstream;
mod coder;

pub use bitstream::Bitstream;
pub use coder::{decode_symbols, encode_symbols, FreqTable, RangeDecoder, RangeEncoder};

use crate::error::{Error, Result};
use crate::gradcore::num::{sigmoid, std_normal_cdf, LN_2};
use crate::gradcore::{Graph, Tensor, Var};
use crate::quant::IntTensor;

/// Scale floor applied before any CDF evaluation.
pub const SIGMA_MIN: f64 = 1e-4;

/// Probability floor: 2^-32.
pub const P_MIN: f64 = 1.0 / 4_294_967_296.0;

/// Conditional Gaussian with per-element mean and scale.
#[derive(Debug, Clone)]
pub struct GaussianCond {
    mu: Tensor,
    sigma: Tensor,
}

impl GaussianCond {
    /// Scales are clamped to [`SIGMA_MIN`] on construction.
    pub fn new(mu: Tensor, sigma: Tensor) -> Result<Self> {
        if mu.shape() != sigma.shape() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_cond",
                lhs: mu.shape().to_vec(),
                rhs: sigma.shape().to_vec(),
            });
        }
        mu.validate_finite("gaussian_cond mu")?;
        sigma.validate_finite("gaussian_cond sigma")?;
        Ok(GaussianCond {
            mu,
            sigma: sigma.map(|s| s.max(SIGMA_MIN)),
        })
    }

    pub fn zero_mean(sigma: Tensor) -> Result<Self> {
        let mu = Tensor::zeros(sigma.shape());
        Self::new(mu, sigma)
    }

    pub fn shape(&self) -> &[usize] {
        self.mu.shape()
    }

    pub fn mu(&self, e: usize) -> f64 {
        self.mu.data()[e]
    }

    pub fn sigma(&self, e: usize) -> f64 {
        self.sigma.data()[e]
    }
}

/// Fully factorized per-channel logistic; channel is the last axis of the
/// indexed tensor. Location and scale are the trainable state, held here as
/// plain values for coding and evaluation.
#[derive(Debug, Clone)]
pub struct FactorizedLogistic {
    loc: Vec<f64>,
    scale: Vec<f64>,
}

impl FactorizedLogistic {
    pub fn new(loc: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if loc.is_empty() || loc.len() != scale.len() {
            return Err(Error::invalid(
                "factorized_logistic",
                format!("{} locations vs {} scales", loc.len(), scale.len()),
            ));
        }
        if loc.iter().chain(&scale).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("factorized_logistic parameters"));
        }
        Ok(FactorizedLogistic {
            loc,
            scale: scale.into_iter().map(|s| s.max(SIGMA_MIN)).collect(),
        })
    }

    pub fn channels(&self) -> usize {
        self.loc.len()
    }

    pub fn loc(&self, c: usize) -> f64 {
        self.loc[c]
    }

    pub fn scale(&self, c: usize) -> f64 {
        self.scale[c]
    }
}

/// A per-element scalar distribution an index tensor is coded against.
#[derive(Debug, Clone, Copy)]
pub enum Dist<'a> {
    Gaussian(&'a GaussianCond),
    Factorized(&'a FactorizedLogistic),
}

/// Interval mass between standardized edges a < b, arranged to avoid
/// cancellation when both edges sit in the upper tail.
fn interval_mass(cdf: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if a > 0.0 {
        cdf(-a) - cdf(-b)
    } else {
        cdf(b) - cdf(a)
    }
}

impl<'a> Dist<'a> {
    fn check_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        match self {
            Dist::Gaussian(gc) => {
                if gc.shape() != shape {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: gc.shape().to_vec(),
                        rhs: shape.to_vec(),
                    });
                }
            }
            Dist::Factorized(f) => {
                let c = *shape.last().unwrap_or(&0);
                if c != f.channels() {
                    return Err(Error::ChannelMismatch {
                        op,
                        expected: f.channels(),
                        got: c,
                    });
                }
            }
        }
        Ok(())
    }

    /// (location, scale, CDF kind) for element `e` of a tensor with `channels`
    /// trailing-axis size.
    fn params(&self, e: usize, channels: usize) -> (f64, f64) {
        match self {
            Dist::Gaussian(gc) => (gc.mu(e), gc.sigma(e)),
            Dist::Factorized(f) => {
                let c = e % channels;
                (f.loc(c), f.scale(c))
            }
        }
    }

    fn cdf_std(&self, x: f64) -> f64 {
        match self {
            Dist::Gaussian(_) => std_normal_cdf(x),
            Dist::Factorized(_) => sigmoid(x),
        }
    }

    /// Unfloored mass of bin `q` at step `delta` for element `e`.
    pub(crate) fn bin_mass(&self, e: usize, channels: usize, q: i64, delta: f64) -> f64 {
        let (loc, scale) = self.params(e, channels);
        let lo = ((q as f64 - 0.5) * delta - loc) / scale;
        let hi = ((q as f64 + 0.5) * delta - loc) / scale;
        interval_mass(|x| self.cdf_std(x), lo, hi)
    }

    /// Mass of the lower tail up to the standardized point, used for the
    /// folded extreme symbols of a coder alphabet.
    pub(crate) fn tail_mass(&self, x_std: f64) -> f64 {
        if x_std > 0.0 {
            1.0 - self.cdf_std(-x_std)
        } else {
            self.cdf_std(x_std)
        }
    }

    /// Half-width of the coder alphabet for element `e`, a deterministic
    /// function of the model parameters so encoder and decoder agree.
    pub(crate) fn alphabet_halfwidth(&self, e: usize, channels: usize, delta: f64) -> i64 {
        let (_, scale) = self.params(e, channels);
        let spread = match self {
            Dist::Gaussian(_) => 4.0 * scale / delta,
            // logistic tails are heavier; e^-10 past the edge
            Dist::Factorized(_) => 10.0 * scale / delta,
        };
        (spread.ceil() as i64 + 2).clamp(2, 4096)
    }

    pub(crate) fn alphabet_center(&self, e: usize, channels: usize, delta: f64) -> i64 {
        let (loc, _) = self.params(e, channels);
        (loc / delta).round_ties_even() as i64
    }
}

fn check_delta(op: &'static str, delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(op, format!("step size {delta} must be positive and finite")));
    }
    Ok(())
}

/// Per-element probability of the observed bins, floored at [`P_MIN`].
pub fn bin_probability(dist: Dist, q: &IntTensor, delta: f64) -> Result<Tensor> {
    check_delta("bin_probability", delta)?;
    dist.check_shape("bin_probability", q.shape())?;
    let channels = *q.shape().last().unwrap_or(&1);
    let data = q
        .data()
        .iter()
        .enumerate()
        .map(|(e, &qv)| dist.bin_mass(e, channels, qv, delta).max(P_MIN))
        .collect();
    Tensor::new(q.shape().to_vec(), data)
}

/// Total code length estimate in bits: sum of -log2 p.
pub fn rate_bits_value(p: &Tensor) -> Result<f64> {
    for &v in p.data() {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::invalid(
                "rate_bits",
                format!("probability {v} outside (0, 1]"),
            ));
        }
    }
    Ok(p.data().iter().map(|&v| -v.ln() / LN_2).sum())
}

/// Differentiable estimate over integer bins given model state on the tape.
pub fn estimated_bits(dist: Dist, q: &IntTensor, delta: f64) -> Result<f64> {
    rate_bits_value(&bin_probability(dist, q, delta)?)
}

// Tape-side builders used by the training forward pass.

/// p = Phi((c + d/2) / sigma) - Phi((c - d/2) / sigma), floored at P_MIN.
/// `center` is the mean-removed latent proxy; evaluated at a hard-rounded
/// center this equals the exact bin mass.
pub fn gaussian_bin_prob(g: &mut Graph, center: Var, sigma: Var, delta: Var) -> Result<Var> {
    let half = g.scale(delta, 0.5)?;
    let hi = g.add(center, half)?;
    let lo = g.sub(center, half)?;
    let hi_std = g.div(hi, sigma)?;
    let lo_std = g.div(lo, sigma)?;
    let cdf_hi = g.normal_cdf(hi_std)?;
    let cdf_lo = g.normal_cdf(lo_std)?;
    let p = g.sub(cdf_hi, cdf_lo)?;
    g.clamp_min(p, P_MIN)
}

/// Logistic counterpart for the hyper latent.
pub fn logistic_bin_prob(
    g: &mut Graph,
    center: Var,
    loc: Var,
    scale: Var,
    delta: Var,
) -> Result<Var> {
    let half = g.scale(delta, 0.5)?;
    let hi = g.add(center, half)?;
    let lo = g.sub(center, half)?;
    let hi_c = g.sub(hi, loc)?;
    let lo_c = g.sub(lo, loc)?;
    let hi_std = g.div(hi_c, scale)?;
    let lo_std = g.div(lo_c, scale)?;
    let cdf_hi = g.sigmoid(hi_std)?;
    let cdf_lo = g.sigmoid(lo_std)?;
    let p = g.sub(cdf_hi, cdf_lo)?;
    g.clamp_min(p, P_MIN)
}

/// Differentiable total bits: reduce_sum(-log2 p).
pub fn rate_bits(g: &mut Graph, p: Var) -> Result<Var> {
    let lp = g.log(p)?;
    let bits = g.scale(lp, -1.0 / LN_2)?;
    g.reduce_sum(bits)
}

pub fn bits_csv_header() -> &'static str {
    "delta,estimated_bits,actual_bits"
}

pub fn bits_csv_line(delta: f64, estimated: f64, actual: f64) -> String {
    format!("{delta},{estimated},{actual}")
}
