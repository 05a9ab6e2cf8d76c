//! Quantization schemes and their training-time relaxations.
//!
//! Three hard quantizers (uniform step, per-channel gains, uniform with
//! reconstruction offsets) plus the two differentiable proxies used during
//! training, and the numeric oracle for the MSE-optimal reconstruction
//! offset inside one bin.

use crate::error::{Error, Result};
use crate::gradcore::num::{std_normal_cdf, std_normal_pdf};
use crate::gradcore::{Graph, Tensor, Var};
use rand::Rng;

/// Integer quantization indices with the same row-major layout as [`Tensor`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor {
    shape: Vec<usize>,
    data: Vec<i64>,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i64>) -> Result<Self> {
        if crate::gradcore::numel_of(&shape) != data.len() {
            return Err(Error::invalid(
                "int_tensor",
                format!("shape {:?} does not match {} elements", shape, data.len()),
            ));
        }
        Ok(IntTensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

fn check_delta(op: &'static str, delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(op, format!("step size {delta} must be positive and finite")));
    }
    Ok(())
}

/// q = round(y / delta), ties to even.
pub fn quantize_uniform(y: &Tensor, delta: f64) -> Result<IntTensor> {
    check_delta("quantize_uniform", delta)?;
    y.validate_finite("quantize_uniform input")?;
    let mut data = Vec::with_capacity(y.numel());
    for &v in y.data() {
        let scaled = (v / delta).round_ties_even();
        if scaled.abs() >= 9.0e18 {
            return Err(Error::invalid(
                "quantize_uniform",
                format!("index {scaled:.3e} overflows i64"),
            ));
        }
        data.push(scaled as i64);
    }
    IntTensor::new(y.shape().to_vec(), data)
}

/// y_hat = q * delta.
pub fn dequantize_uniform(q: &IntTensor, delta: f64) -> Result<Tensor> {
    check_delta("dequantize_uniform", delta)?;
    Tensor::new(
        q.shape().to_vec(),
        q.data().iter().map(|&v| v as f64 * delta).collect(),
    )
}

/// How the reconstruction offset enters for nonzero bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetForm {
    /// y_hat = (q - sign(q) * delta_off) * delta: the offset always pulls the
    /// reconstruction toward zero. Default.
    TowardZero,
    /// y_hat = (q + delta_off) * delta for every nonzero bin. Agrees with
    /// `TowardZero` on negative bins and pushes away from zero on positive
    /// ones; kept selectable for comparison.
    Additive,
}

impl Default for OffsetForm {
    fn default() -> Self {
        OffsetForm::TowardZero
    }
}

fn check_offsets(op: &'static str, offsets: &Tensor) -> Result<()> {
    for &d in offsets.data() {
        if !(0.0..0.5).contains(&d) {
            return Err(Error::invalid(op, format!("offset {d} outside [0, 0.5)")));
        }
    }
    Ok(())
}

/// Offset reconstruction. The zero bin always decodes to exactly 0.
pub fn dequantize_with_offset(
    q: &IntTensor,
    delta: f64,
    offsets: &Tensor,
    form: OffsetForm,
) -> Result<Tensor> {
    check_delta("dequantize_with_offset", delta)?;
    check_offsets("dequantize_with_offset", offsets)?;
    let off = offsets.broadcast_to(q.shape())?;
    let data = q
        .data()
        .iter()
        .zip(off.data())
        .map(|(&qv, &d)| {
            if qv == 0 {
                0.0
            } else {
                let adj = match form {
                    OffsetForm::TowardZero => qv as f64 - (qv.signum() as f64) * d,
                    OffsetForm::Additive => qv as f64 + d,
                };
                adj * delta
            }
        })
        .collect();
    Tensor::new(q.shape().to_vec(), data)
}

/// Per-channel quantization and reconstruction gains; channel is the last
/// axis of the quantized tensor.
#[derive(Debug, Clone)]
pub struct GainQuantizerSpec {
    gains: Vec<f64>,
    recon_gains: Vec<f64>,
}

impl GainQuantizerSpec {
    pub fn new(gains: Vec<f64>, recon_gains: Vec<f64>) -> Result<Self> {
        if gains.is_empty() || gains.len() != recon_gains.len() {
            return Err(Error::invalid(
                "gain_spec",
                format!("{} gains vs {} reconstruction gains", gains.len(), recon_gains.len()),
            ));
        }
        if gains
            .iter()
            .chain(&recon_gains)
            .any(|&g| !(g > 0.0) || !g.is_finite())
        {
            return Err(Error::invalid("gain_spec", "gains must be positive and finite"));
        }
        Ok(GainQuantizerSpec { gains, recon_gains })
    }

    /// Gains 1/delta with reconstruction gains delta: the configuration under
    /// which the gain scheme collapses to the uniform quantizer.
    pub fn uniform_equivalent(delta: f64, channels: usize) -> Result<Self> {
        check_delta("gain_spec", delta)?;
        Self::new(vec![1.0 / delta; channels], vec![delta; channels])
    }

    pub fn channels(&self) -> usize {
        self.gains.len()
    }
}

#[derive(Debug, Clone)]
pub struct GainQuantOutput {
    pub indices: IntTensor,
    pub reconstruction: Tensor,
}

/// q = round(y * G_c), y_hat = q * G'_c with c the last-axis channel.
pub fn quantize_gain(y: &Tensor, spec: &GainQuantizerSpec) -> Result<GainQuantOutput> {
    y.validate_finite("quantize_gain input")?;
    let channels = *y.shape().last().ok_or_else(|| {
        Error::invalid("quantize_gain", "input must have at least one axis")
    })?;
    if channels != spec.channels() {
        return Err(Error::ChannelMismatch {
            op: "quantize_gain",
            expected: spec.channels(),
            got: channels,
        });
    }
    let mut indices = Vec::with_capacity(y.numel());
    let mut recon = Vec::with_capacity(y.numel());
    for (i, &v) in y.data().iter().enumerate() {
        let c = i % channels;
        let scaled = (v * spec.gains[c]).round_ties_even();
        if scaled.abs() >= 9.0e18 {
            return Err(Error::invalid(
                "quantize_gain",
                format!("index {scaled:.3e} overflows i64"),
            ));
        }
        indices.push(scaled as i64);
        recon.push(scaled * spec.recon_gains[c]);
    }
    Ok(GainQuantOutput {
        indices: IntTensor::new(y.shape().to_vec(), indices)?,
        reconstruction: Tensor::new(y.shape().to_vec(), recon)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMode {
    /// Additive uniform noise of one step width: y + delta * u, u in [-1/2, 1/2).
    Noise,
    /// Hard rounding with a straight-through gradient.
    Ste,
}

/// y + delta * u on the tape. `unit_noise` must match y's shape with entries
/// in [-1/2, 1/2); delta may be a trainable scalar leaf, in which case it
/// receives gradient u per element.
pub fn proxy_noise(g: &mut Graph, y: Var, delta: Var, unit_noise: &Tensor) -> Result<Var> {
    if unit_noise.shape() != g.shape_of(y)? {
        return Err(Error::ShapeMismatch {
            op: "proxy_noise",
            lhs: g.shape_of(y)?.to_vec(),
            rhs: unit_noise.shape().to_vec(),
        });
    }
    if unit_noise.data().iter().any(|&u| !(-0.5..0.5).contains(&u)) {
        return Err(Error::invalid("proxy_noise", "unit noise outside [-1/2, 1/2)"));
    }
    let u = g.constant(unit_noise.clone())?;
    let term = g.mul(u, delta)?;
    g.add(y, term)
}

/// round(y / delta) * delta with straight-through rounding.
pub fn proxy_ste(g: &mut Graph, y: Var, delta: Var) -> Result<Var> {
    let scaled = g.div(y, delta)?;
    let rounded = g.round_ste(scaled)?;
    g.mul(rounded, delta)
}

/// Straight-through rounding with reconstruction offsets folded in. The
/// offsets enter only on nonzero bins; sign and zero masks are taken from the
/// rounded forward value and treated as constants by the backward pass.
pub fn proxy_ste_offset(
    g: &mut Graph,
    y: Var,
    delta: Var,
    offsets: Var,
    form: OffsetForm,
) -> Result<Var> {
    let scaled = g.div(y, delta)?;
    let rounded = g.round_ste(scaled)?;
    let factor = {
        let rv = g.value(rounded)?;
        rv.map(|q| {
            if q == 0.0 {
                0.0
            } else {
                match form {
                    OffsetForm::TowardZero => q.signum(),
                    OffsetForm::Additive => -1.0,
                }
            }
        })
    };
    check_offsets("proxy_ste_offset", g.value(offsets)?)?;
    let factor = g.constant(factor)?;
    let term = g.mul(offsets, factor)?;
    let adjusted = g.sub(rounded, term)?;
    g.mul(adjusted, delta)
}

/// Spec-facing proxy entry point with a fixed scalar step. Noise mode draws
/// its unit noise from `rng`, so a fixed seed reproduces the pass exactly.
pub fn train_proxy(
    g: &mut Graph,
    y: Var,
    delta: f64,
    mode: ProxyMode,
    rng: &mut impl Rng,
) -> Result<Var> {
    check_delta("train_proxy", delta)?;
    let d = g.scalar(delta)?;
    match mode {
        ProxyMode::Ste => proxy_ste(g, y, d),
        ProxyMode::Noise => {
            let shape = g.shape_of(y)?.to_vec();
            let noise = Tensor::new(
                shape.clone(),
                (0..crate::gradcore::numel_of(&shape))
                    .map(|_| rng.gen::<f64>() - 0.5)
                    .collect(),
            )?;
            proxy_noise(g, y, d, &noise)
        }
    }
}

// Centroid offset oracle.

const SIMPSON_TOL: f64 = 1e-12;
const SIMPSON_MAX_DEPTH: u32 = 60;

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        m: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, lm, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, rm, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, m, b, fa, fm, fb, whole, tol, SIMPSON_MAX_DEPTH)
}

/// MSE-optimal reconstruction offset for bin `q` of a zero-mean normal with
/// std `sigma` quantized at step `delta`.
///
/// Computed by adaptive Simpson integration of the bin mass and first moment
/// in a normalized coordinate, so accuracy is relative to the bin mass rather
/// than absolute in the raw density. The zero bin reconstructs to zero with
/// no offset, so the oracle returns 0 there by convention.
pub fn centroid_offset_oracle(sigma: f64, delta: f64, q: i64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(
            "centroid_offset_oracle",
            format!("sigma {sigma} must be positive and finite"),
        ));
    }
    check_delta("centroid_offset_oracle", delta)?;
    if q == 0 {
        return Ok(0.0);
    }
    let qa = q.abs() as f64;
    // Left bin edge in units of sigma; density is maximal there, so the
    // normalized integrand r(u) = pdf(a + u*delta) / pdf(a) stays in (0, 1].
    let a = (qa - 0.5) * delta;
    let k1 = a * delta / (sigma * sigma);
    let k2 = delta * delta / (2.0 * sigma * sigma);
    let r = move |u: f64| (-(k1 * u + k2 * u * u)).exp();
    let i0 = adaptive_simpson(&r, 0.0, 1.0, SIMPSON_TOL);
    let i1 = adaptive_simpson(&move |u: f64| u * r(u), 0.0, 1.0, SIMPSON_TOL);
    let mass = std_normal_pdf(a / sigma) / sigma * delta * i0;
    if !(mass > 1e-300) {
        return Err(Error::invalid(
            "centroid_offset_oracle",
            format!("bin {q} mass {mass:.3e} is numerically zero"),
        ));
    }
    Ok(0.5 - i1 / i0)
}

/// Closed-form centroid offset via the normal CDF/pdf, used as the
/// independent cross-check of the integration route in tests.
pub fn centroid_offset_closed_form(sigma: f64, delta: f64, q: i64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("centroid_offset_closed_form", "sigma must be positive"));
    }
    check_delta("centroid_offset_closed_form", delta)?;
    if q == 0 {
        return Ok(0.0);
    }
    let qa = q.abs() as f64;
    let alpha = (qa - 0.5) * delta / sigma;
    let beta = (qa + 0.5) * delta / sigma;
    // complementary form: both edges are nonnegative, so the upper-tail
    // difference avoids cancellation between CDF values near 1
    let mass = std_normal_cdf(-alpha) - std_normal_cdf(-beta);
    if !(mass > 1e-300) {
        return Err(Error::invalid("centroid_offset_closed_form", "bin mass underflow"));
    }
    let centroid = sigma * (std_normal_pdf(alpha) - std_normal_pdf(beta)) / mass;
    Ok(qa - centroid / delta)
}
