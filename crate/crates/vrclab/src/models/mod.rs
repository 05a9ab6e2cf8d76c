//! Toy end-to-end compressors: analysis/synthesis transforms, the hyper
//! path that predicts the entropy model, and the two step-size-conditioned
//! networks, all over one tagged parameter store.
//!
//! The hyper-analysis consumes the squared latent. For the linear family
//! that makes a single linear layer enough to carry per-sample energy, so
//! the scale head can calibrate exactly; the MLP family keeps the same hyper
//! wiring and gets its nonlinearity from the transforms.

pub mod nets;
pub mod params;
pub mod sources;

use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::{
    self, bin_probability, decode_symbols, encode_symbols, estimated_bits, gaussian_bin_prob,
    logistic_bin_prob, rate_bits, Bitstream, Dist, FactorizedLogistic, GaussianCond, SIGMA_MIN,
};
use crate::error::{Error, Result};
use crate::gradcore::num;
use crate::gradcore::{Graph, Tensor, Var};
use crate::quant::{
    dequantize_uniform, dequantize_with_offset, proxy_noise, proxy_ste, proxy_ste_offset,
    quantize_uniform, IntTensor, OffsetForm, ProxyMode,
};

pub use params::{Bound, ParamStore, ParamTag};
pub use sources::SourceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hyper_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_true")]
    pub hyper_mean: bool,
    #[serde(default)]
    pub gain_mode: bool,
    #[serde(default = "default_sweep_lo")]
    pub sweep_lo: f64,
    #[serde(default = "default_sweep_hi")]
    pub sweep_hi: f64,
    pub seed: u64,
}

fn default_hidden() -> usize {
    32
}
fn default_true() -> bool {
    true
}
fn default_sweep_lo() -> f64 {
    1.0
}
fn default_sweep_hi() -> f64 {
    10.0
}

impl ModelConfig {
    pub fn linear_default(seed: u64) -> Self {
        ModelConfig {
            family: Family::Linear,
            input_dim: 16,
            latent_dim: 16,
            hyper_dim: 4,
            hidden_dim: default_hidden(),
            hyper_mean: true,
            gain_mode: false,
            sweep_lo: default_sweep_lo(),
            sweep_hi: default_sweep_hi(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hyper_dim == 0 {
            return Err(Error::Config("model dimensions must be nonzero".into()));
        }
        if self.family == Family::Mlp && self.hidden_dim == 0 {
            return Err(Error::Config("mlp family needs hidden_dim >= 1".into()));
        }
        if !(self.sweep_lo > 0.0 && self.sweep_hi >= self.sweep_lo) {
            return Err(Error::Config(format!(
                "sweep range [{}, {}] invalid",
                self.sweep_lo, self.sweep_hi
            )));
        }
        Ok(())
    }
}

/// One operating point: 1-based index, its loss weight, and its schedule
/// step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub index: usize,
    pub lambda: f64,
    pub delta: f64,
}

impl RatePoint {
    pub fn new(index: usize, lambda: f64, delta: f64) -> Result<Self> {
        if index == 0 {
            return Err(Error::invalid("rate_point", "index is 1-based"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() || !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::invalid(
                "rate_point",
                format!("lambda {lambda}, delta {delta}"),
            ));
        }
        Ok(RatePoint {
            index,
            lambda,
            delta,
        })
    }
}

/// Step sizes from loss weights: delta_i = sqrt(lambda_N / lambda_i), so the
/// highest-weight point runs at step 1.
pub fn delta_schedule(lambdas: &[f64]) -> Result<Vec<f64>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("delta_schedule", "no lambdas"));
    }
    let last = *lambdas.last().unwrap();
    for &l in lambdas {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::invalid("delta_schedule", format!("lambda {l}")));
        }
        if l > last {
            return Err(Error::invalid(
                "delta_schedule",
                "last lambda must be the maximum",
            ));
        }
    }
    Ok(lambdas.iter().map(|&l| (last / l).sqrt()).collect())
}

pub fn rate_points(lambdas: &[f64]) -> Result<Vec<RatePoint>> {
    let deltas = delta_schedule(lambdas)?;
    lambdas
        .iter()
        .zip(&deltas)
        .enumerate()
        .map(|(i, (&l, &d))| RatePoint::new(i + 1, l, d))
        .collect()
}

/// 10 log10(1/mse) for unit-peak signals.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainFlags {
    #[serde(default)]
    pub qr_offsets: bool,
    #[serde(default)]
    pub vr_hyper: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub rate: ProxyMode,
    pub distortion: ProxyMode,
    #[serde(default)]
    pub offset_form: OffsetForm,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            rate: ProxyMode::Noise,
            distortion: ProxyMode::Ste,
            offset_form: OffsetForm::default(),
        }
    }
}

/// Unit noises for one step, shared across rate points so per-point losses
/// are comparable within the step.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub latent_rate: Tensor,
    pub latent_dist: Tensor,
    pub hyper: Tensor,
}

impl NoiseDraw {
    pub fn draw(batch: usize, latent_dim: usize, hyper_dim: usize, rng: &mut impl rand::Rng) -> Self {
        let mut unit = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap()
        };
        NoiseDraw {
            latent_rate: unit(vec![batch, latent_dim]),
            latent_dist: unit(vec![batch, latent_dim]),
            hyper: unit(vec![batch, hyper_dim]),
        }
    }
}

/// Differentiable outputs of one training forward.
pub struct ForwardParts {
    pub loss: Var,
    pub rate_bpd: Var,
    pub distortion: Var,
    pub bits_latent: Var,
    pub bits_hyper: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct CodecMetrics {
    pub bits_latent: f64,
    pub bits_hyper: f64,
    pub est_bits_latent: f64,
    pub est_bits_hyper: f64,
    pub mse: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct CompressOutput {
    pub latent: Bitstream,
    pub hyper: Bitstream,
    pub reconstruction: Tensor,
    pub metrics: CodecMetrics,
}

#[derive(Debug, Clone)]
pub struct CodecModel {
    pub cfg: ModelConfig,
    pub lambdas: Vec<f64>,
    pub params: ParamStore,
}

impl CodecModel {
    pub fn new(cfg: ModelConfig, lambdas: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if lambdas.is_empty() {
            return Err(Error::Config("at least one lambda required".into()));
        }
        for w in lambdas.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Config(format!(
                    "lambdas must increase strictly ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("lambdas must be positive and finite".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let (d, m, k, h) = (cfg.input_dim, cfg.latent_dim, cfg.hyper_dim, cfg.hidden_dim);

        let xavier = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, gain: f64| {
            let s = gain * (6.0 / (rows + cols) as f64).sqrt();
            Tensor::new(
                vec![rows, cols],
                (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect(),
            )
            .unwrap()
        };

        match cfg.family {
            Family::Linear => {
                let ga = if d == m {
                    Tensor::identity(d)
                } else {
                    xavier(&mut rng, d, m, 1.0)
                };
                let gs = if d == m {
                    Tensor::identity(m)
                } else {
                    xavier(&mut rng, m, d, 1.0)
                };
                params.insert("theta.ga.w", ga)?;
                params.insert("theta.gs.w", gs)?;
            }
            Family::Mlp => {
                nets::init_mlp(&mut params, "theta.ga", &[d, h, m], &mut rng, 0.0)?;
                nets::init_mlp(&mut params, "theta.gs", &[m, h, d], &mut rng, 0.0)?;
            }
        }

        params.insert("theta.ha.w", xavier(&mut rng, m, k, 0.5))?;
        if cfg.hyper_mean {
            params.insert("theta.hs_mu.w", xavier(&mut rng, k, m, 0.1))?;
        }
        params.insert("theta.hs_sigma.w", xavier(&mut rng, k, m, 0.1))?;
        params.insert("theta.hs_sigma.b", Tensor::full(vec![m], 1.0))?;

        params.insert("theta.fz.loc", Tensor::zeros(&[k]))?;
        params.insert(
            "theta.fz.scale",
            Tensor::full(vec![k], (std::f64::consts::E - 1.0).ln()),
        )?;

        nets::init_offset_net(&mut params, &mut rng)?;
        nets::init_deltaz_net(&mut params, &mut rng)?;

        let deltas = delta_schedule(&lambdas)?;
        for (i, &delta) in deltas.iter().enumerate() {
            let name = format!("phi{}.delta", i + 1);
            params.insert(&name, Tensor::scalar(delta))?;
            params.set_trainable(&name, false)?;
            if cfg.gain_mode {
                params.insert(
                    &format!("phi{}.gain", i + 1),
                    Tensor::full(vec![m], 1.0 / delta),
                )?;
                params.insert(
                    &format!("phi{}.recon_gain", i + 1),
                    Tensor::full(vec![m], delta),
                )?;
            }
        }
        params.validate_partition(lambdas.len())?;
        Ok(CodecModel {
            cfg,
            lambdas,
            params,
        })
    }

    pub fn num_rates(&self) -> usize {
        self.lambdas.len()
    }

    pub fn rate_points(&self) -> Result<Vec<RatePoint>> {
        rate_points(&self.lambdas)
    }

    fn analysis_graph(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        match self.cfg.family {
            Family::Linear => g.matmul(x, bound.var("theta.ga.w")?),
            Family::Mlp => nets::mlp_graph(
                g,
                bound,
                "theta.ga",
                &[self.cfg.input_dim, self.cfg.hidden_dim, self.cfg.latent_dim],
                x,
            ),
        }
    }

    fn synthesis_graph(&self, g: &mut Graph, bound: &Bound, y: Var) -> Result<Var> {
        match self.cfg.family {
            Family::Linear => g.matmul(y, bound.var("theta.gs.w")?),
            Family::Mlp => nets::mlp_graph(
                g,
                bound,
                "theta.gs",
                &[self.cfg.latent_dim, self.cfg.hidden_dim, self.cfg.input_dim],
                y,
            ),
        }
    }

    fn analysis_value(&self, x: &Tensor) -> Result<Tensor> {
        match self.cfg.family {
            Family::Linear => x.matmul(self.params.get("theta.ga.w")?),
            Family::Mlp => nets::mlp_value(
                &self.params,
                "theta.ga",
                &[self.cfg.input_dim, self.cfg.hidden_dim, self.cfg.latent_dim],
                x,
            ),
        }
    }

    fn synthesis_value(&self, y: &Tensor) -> Result<Tensor> {
        match self.cfg.family {
            Family::Linear => y.matmul(self.params.get("theta.gs.w")?),
            Family::Mlp => nets::mlp_value(
                &self.params,
                "theta.gs",
                &[self.cfg.latent_dim, self.cfg.hidden_dim, self.cfg.input_dim],
                y,
            ),
        }
    }

    fn check_input(&self, op: &'static str, x: &Tensor) -> Result<usize> {
        if x.rank() != 2 || x.shape()[1] != self.cfg.input_dim {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![x.shape().first().copied().unwrap_or(0), self.cfg.input_dim],
                rhs: x.shape().to_vec(),
            });
        }
        x.validate_finite("model input")?;
        Ok(x.shape()[0])
    }

    /// Factorized hyper model over current parameter values.
    fn factorized(&self) -> Result<FactorizedLogistic> {
        let loc = self.params.get("theta.fz.loc")?.data().to_vec();
        let scale = self
            .params
            .get("theta.fz.scale")?
            .data()
            .iter()
            .map(|&v| num::softplus(v))
            .collect();
        FactorizedLogistic::new(loc, scale)
    }

    /// One differentiable rate-distortion evaluation at rate point `rp`.
    ///
    /// The step size is read from the bound `phi<i>.delta` leaf so a
    /// trainable step receives its gradient. Offsets only enter through the
    /// straight-through distortion path; the noise proxy has no rounding for
    /// them to correct.
    pub fn forward_train(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: &Tensor,
        rp: &RatePoint,
        flags: TrainFlags,
        proxies: ProxyConfig,
        noise: &NoiseDraw,
    ) -> Result<ForwardParts> {
        let batch = self.check_input("forward_train", x)?;
        if rp.index == 0 || rp.index > self.num_rates() {
            return Err(Error::invalid(
                "forward_train",
                format!("rate index {} of {}", rp.index, self.num_rates()),
            ));
        }
        if !(rp.delta > 0.0) {
            return Err(Error::invalid("forward_train", "rate point delta must be positive"));
        }
        if self.cfg.gain_mode && flags.qr_offsets {
            return Err(Error::invalid(
                "forward_train",
                "reconstruction offsets are not defined for the gain quantizer",
            ));
        }
        let (m, k) = (self.cfg.latent_dim, self.cfg.hyper_dim);

        let xv = g.constant(x.clone())?;
        let y = self.analysis_graph(g, bound, xv)?;
        g.value(y)?.validate_finite("analysis output")?;

        let y2 = g.square(y)?;
        let z = g.matmul(y2, bound.var("theta.ha.w")?)?;
        g.value(z)?.validate_finite("hyper-analysis output")?;

        let delta_var = bound.var(&format!("phi{}.delta", rp.index))?;
        let delta_now = g.value(delta_var)?.data()[0];
        if !(delta_now > 0.0) || !delta_now.is_finite() {
            return Err(Error::invalid(
                "forward_train",
                format!("live step size {delta_now} for rate {}", rp.index),
            ));
        }

        let delta_z = if flags.vr_hyper {
            nets::deltaz_net_graph(g, bound, delta_var)?
        } else {
            g.scalar(1.0)?
        };

        let z_tilde = match proxies.rate {
            ProxyMode::Noise => proxy_noise(g, z, delta_z, &noise.hyper)?,
            ProxyMode::Ste => proxy_ste(g, z, delta_z)?,
        };
        let loc = bound.var("theta.fz.loc")?;
        let scale_sp = g.softplus(bound.var("theta.fz.scale")?)?;
        let scale = g.clamp_min(scale_sp, SIGMA_MIN)?;
        let p_z = logistic_bin_prob(g, z_tilde, loc, scale, delta_z)?;
        let bits_hyper = rate_bits(g, p_z)?;

        let mu = if self.cfg.hyper_mean {
            g.matmul(z_tilde, bound.var("theta.hs_mu.w")?)?
        } else {
            g.constant(Tensor::zeros(&[batch, m]))?
        };
        let s_raw = g.affine(
            z_tilde,
            bound.var("theta.hs_sigma.w")?,
            bound.var("theta.hs_sigma.b")?,
        )?;
        g.value(s_raw)?.validate_finite("scale head output")?;
        let s_floor = g.clamp_min(s_raw, SIGMA_MIN * SIGMA_MIN)?;
        let sigma = g.sqrt(s_floor)?;

        let r = g.sub(y, mu)?;

        // rate and distortion proxies around the latent residual
        let (r_rate, p_lat, r_hat) = if self.cfg.gain_mode {
            let gain = bound.var(&format!("phi{}.gain", rp.index))?;
            let recon = bound.var(&format!("phi{}.recon_gain", rp.index))?;
            for name in ["gain", "recon_gain"] {
                let v = g.value(bound.var(&format!("phi{}.{name}", rp.index))?)?;
                if v.data().iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                    return Err(Error::invalid("forward_train", format!("nonpositive {name}")));
                }
            }
            let ones = g.constant(Tensor::full(vec![m], 1.0))?;
            let delta_eq = g.div(ones, gain)?;
            let r_rate = match proxies.rate {
                ProxyMode::Noise => proxy_noise(g, r, delta_eq, &noise.latent_rate)?,
                ProxyMode::Ste => {
                    let scaled = g.mul(r, gain)?;
                    let rounded = g.round_ste(scaled)?;
                    g.mul(rounded, delta_eq)?
                }
            };
            let p_lat = gaussian_bin_prob(g, r_rate, sigma, delta_eq)?;
            let r_hat = match proxies.distortion {
                ProxyMode::Noise => proxy_noise(g, r, delta_eq, &noise.latent_dist)?,
                ProxyMode::Ste => {
                    let scaled = g.mul(r, gain)?;
                    let rounded = g.round_ste(scaled)?;
                    g.mul(rounded, recon)?
                }
            };
            (r_rate, p_lat, r_hat)
        } else {
            let r_rate = match proxies.rate {
                ProxyMode::Noise => proxy_noise(g, r, delta_var, &noise.latent_rate)?,
                ProxyMode::Ste => proxy_ste(g, r, delta_var)?,
            };
            let p_lat = gaussian_bin_prob(g, r_rate, sigma, delta_var)?;
            let r_hat = match proxies.distortion {
                ProxyMode::Noise => proxy_noise(g, r, delta_var, &noise.latent_dist)?,
                ProxyMode::Ste => {
                    if flags.qr_offsets {
                        let offsets = nets::offset_net_graph(g, bound, sigma, delta_var)?;
                        proxy_ste_offset(g, r, delta_var, offsets, proxies.offset_form)?
                    } else {
                        proxy_ste(g, r, delta_var)?
                    }
                }
            };
            (r_rate, p_lat, r_hat)
        };
        let _ = r_rate;
        let bits_latent = rate_bits(g, p_lat)?;

        let y_hat = g.add(mu, r_hat)?;
        let x_hat = self.synthesis_graph(g, bound, y_hat)?;
        g.value(x_hat)?.validate_finite("synthesis output")?;

        let err = g.sub(xv, x_hat)?;
        let sq = g.square(err)?;
        let distortion = g.reduce_mean(sq)?;

        let bits_total = g.add(bits_latent, bits_hyper)?;
        let rate_bpd = g.scale(bits_total, 1.0 / (batch * self.cfg.input_dim) as f64)?;
        let weighted = g.scale(distortion, rp.lambda)?;
        let loss = g.add(rate_bpd, weighted)?;
        let _ = k;

        Ok(ForwardParts {
            loss,
            rate_bpd,
            distortion,
            bits_latent,
            bits_hyper,
        })
    }

    fn sigma_mu_from_zhat(&self, z_hat: &Tensor, batch: usize) -> Result<(Tensor, Tensor)> {
        let mu = if self.cfg.hyper_mean {
            z_hat.matmul(self.params.get("theta.hs_mu.w")?)?
        } else {
            Tensor::zeros(&[batch, self.cfg.latent_dim])
        };
        let s_raw = z_hat.affine(
            self.params.get("theta.hs_sigma.w")?,
            self.params.get("theta.hs_sigma.b")?,
        )?;
        let sigma = s_raw.map(|v| v.max(SIGMA_MIN * SIGMA_MIN).sqrt());
        Ok((mu, sigma))
    }

    fn reconstruct_value(
        &self,
        q: &IntTensor,
        mu: &Tensor,
        sigma: &Tensor,
        delta: f64,
        flags: TrainFlags,
        form: OffsetForm,
    ) -> Result<Tensor> {
        let offsets = if flags.qr_offsets {
            nets::offset_net_value(&self.params, sigma, delta)?
        } else {
            Tensor::zeros(sigma.shape())
        };
        let r_hat = dequantize_with_offset(q, &offsets, delta, form)?;
        let y_hat = mu.add(&r_hat)?;
        self.synthesis_value(&y_hat)
    }

    fn check_sweep_delta(&self, op: &'static str, delta: f64) -> Result<()> {
        // half a decade of grace on each side of the configured range
        let lo = self.cfg.sweep_lo * 0.5;
        let hi = self.cfg.sweep_hi * 2.0;
        if !(delta >= lo && delta <= hi) || !delta.is_finite() {
            return Err(Error::invalid(
                op,
                format!("step {delta} outside usable range [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }

    /// Hard-quantized coding pass at an arbitrary step size.
    pub fn compress(
        &self,
        x: &Tensor,
        delta: f64,
        flags: TrainFlags,
        form: OffsetForm,
    ) -> Result<CompressOutput> {
        let batch = self.check_input("compress", x)?;
        self.check_sweep_delta("compress", delta)?;
        if self.cfg.gain_mode {
            return Err(Error::invalid(
                "compress",
                "gain-mode models are train-time baselines without a coding path",
            ));
        }
        let y = self.analysis_value(x)?;
        let z = y.map(|v| v * v).matmul(self.params.get("theta.ha.w")?)?;

        let delta_z = if flags.vr_hyper {
            nets::deltaz_net_value(&self.params, delta)?
        } else {
            1.0
        };
        let q_z = quantize_uniform(&z, delta_z)?;
        let z_hat = dequantize_uniform(&q_z, delta_z)?;
        let fz = self.factorized()?;
        let hyper = encode_symbols(&q_z, Dist::Factorized(&fz), delta_z)?;
        let est_bits_hyper = estimated_bits(Dist::Factorized(&fz), &q_z, delta_z)?;

        let (mu, sigma) = self.sigma_mu_from_zhat(&z_hat, batch)?;
        let r = y.sub(&mu)?;
        let q = quantize_uniform(&r, delta)?;
        let gc = GaussianCond::zero_mean(sigma.clone())?;
        let latent = encode_symbols(&q, Dist::Gaussian(&gc), delta)?;
        let est_bits_latent = estimated_bits(Dist::Gaussian(&gc), &q, delta)?;

        let reconstruction = self.reconstruct_value(&q, &mu, &sigma, delta, flags, form)?;
        let errs = x.sub(&reconstruction)?;
        let mse = errs.map(|v| v * v).reduce_mean().scalar_value()?;

        Ok(CompressOutput {
            metrics: CodecMetrics {
                bits_latent: (latent.payload.len() * 8) as f64,
                bits_hyper: (hyper.payload.len() * 8) as f64,
                est_bits_latent,
                est_bits_hyper,
                mse,
                psnr: psnr(mse),
            },
            latent,
            hyper,
            reconstruction,
        })
    }

    /// Exact inverse of [`CodecModel::compress`] given the same model,
    /// flags, form, and step size.
    pub fn decompress(
        &self,
        latent: &Bitstream,
        hyper: &Bitstream,
        delta: f64,
        flags: TrainFlags,
        form: OffsetForm,
    ) -> Result<Tensor> {
        self.check_sweep_delta("decompress", delta)?;
        if self.cfg.gain_mode {
            return Err(Error::invalid(
                "decompress",
                "gain-mode models are train-time baselines without a coding path",
            ));
        }
        let (m, k) = (self.cfg.latent_dim, self.cfg.hyper_dim);
        if hyper.shape.len() != 2 || hyper.shape[1] != k {
            return Err(Error::format(
                "bitstream",
                format!("hyper stream shape {:?} vs hyper dim {k}", hyper.shape),
            ));
        }
        let batch = hyper.shape[0];
        if latent.shape != vec![batch, m] {
            return Err(Error::format(
                "bitstream",
                format!(
                    "latent stream shape {:?} vs expected [{batch}, {m}]",
                    latent.shape
                ),
            ));
        }
        let delta_z = if flags.vr_hyper {
            nets::deltaz_net_value(&self.params, delta)?
        } else {
            1.0
        };
        let fz = self.factorized()?;
        let q_z = decode_symbols(hyper, Dist::Factorized(&fz), delta_z)?;
        let z_hat = dequantize_uniform(&q_z, delta_z)?;
        let (mu, sigma) = self.sigma_mu_from_zhat(&z_hat, batch)?;
        let gc = GaussianCond::zero_mean(sigma.clone())?;
        let q = decode_symbols(latent, Dist::Gaussian(&gc), delta)?;
        self.reconstruct_value(&q, &mu, &sigma, delta, flags, form)
    }

    /// Estimate of the coded size of `x` at a step size without running the
    /// coder; same model state as [`CodecModel::compress`].
    pub fn estimate_bits(&self, x: &Tensor, delta: f64, flags: TrainFlags) -> Result<(f64, f64)> {
        let batch = self.check_input("estimate_bits", x)?;
        self.check_sweep_delta("estimate_bits", delta)?;
        let y = self.analysis_value(x)?;
        let z = y.map(|v| v * v).matmul(self.params.get("theta.ha.w")?)?;
        let delta_z = if flags.vr_hyper {
            nets::deltaz_net_value(&self.params, delta)?
        } else {
            1.0
        };
        let q_z = quantize_uniform(&z, delta_z)?;
        let fz = self.factorized()?;
        let est_hyper = estimated_bits(Dist::Factorized(&fz), &q_z, delta_z)?;
        let z_hat = dequantize_uniform(&q_z, delta_z)?;
        let (mu, sigma) = self.sigma_mu_from_zhat(&z_hat, batch)?;
        let r = y.sub(&mu)?;
        let q = quantize_uniform(&r, delta)?;
        let gc = GaussianCond::zero_mean(sigma)?;
        let est_latent = estimated_bits(Dist::Gaussian(&gc), &q, delta)?;
        Ok((est_latent, est_hyper))
    }
}
