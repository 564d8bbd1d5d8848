//! Full model assembly: shallow feature extractor, a stack of multi-scale
//! residual blocks with interleaved convolutions, the output module with
//! its global residual, and the reverse-diffusion refinement stage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{CwaConfig, Msrb};
use crate::diffusion::{
    make_schedule, reverse_chain, DenoiserNet, DiffusionConfig, NoiseSchedule, VarianceMode,
};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Parameter};
use crate::scalar::Scalar;
use crate::tensor::ops::add;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub n_msrb: usize,
    /// One extra 3x3 conv after every this many blocks.
    pub conv_every: usize,
    pub cwa: CwaConfig,
    pub diffusion: DiffusionConfig,
    /// Zero-init the opm and the CWA terminal convs so the untrained model
    /// starts at the identity (with T = 0) instead of amplifying noise.
    pub zero_init_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_channels(32)
    }
}

impl ModelConfig {
    pub fn with_channels(base_channels: usize) -> Self {
        ModelConfig {
            base_channels,
            n_msrb: 6,
            conv_every: 2,
            cwa: CwaConfig::new(base_channels),
            diffusion: DiffusionConfig::default(),
            zero_init_residual: true,
        }
    }

    /// Small configuration sized for CPU experiments and tests.
    pub fn desk() -> Self {
        let mut cfg = ModelConfig::with_channels(8);
        cfg.diffusion.denoiser_width = 8;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_msrb == 0 {
            return Err(Error::InvalidArgument("n_msrb must be >= 1".into()));
        }
        if self.conv_every == 0 {
            return Err(Error::InvalidArgument("conv_every must be >= 1".into()));
        }
        if self.base_channels < 4 || self.base_channels % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "base_channels must be even and >= 4, got {}",
                self.base_channels
            )));
        }
        if self.cwa.channels != self.base_channels {
            return Err(Error::InvalidArgument(format!(
                "cwa channels {} do not match base_channels {}",
                self.cwa.channels, self.base_channels
            )));
        }
        self.cwa.validate()
    }

    /// Flat key=value serialization, one pair per line, keys sorted as
    /// written here. Used by checkpoints and the command line.
    pub fn to_text(&self) -> String {
        let variance = match self.diffusion.variance_mode {
            VarianceMode::FixedBeta => "fixed-beta",
            VarianceMode::FixedBetaTilde => "fixed-beta-tilde",
        };
        format!(
            "base_channels={}\nn_msrb={}\nconv_every={}\nzero_init_residual={}\n\
             cwa.identity_channels={}\ncwa.curve_order={}\ncwa.sa_kernel={}\n\
             cwa.additive_curve={}\ncwa.use_wavelet={}\ncwa.use_curve={}\n\
             diffusion.steps={}\ndiffusion.beta_start={}\ndiffusion.beta_end={}\n\
             diffusion.denoiser_width={}\ndiffusion.variance_mode={}\ndiffusion.stochastic={}\n",
            self.base_channels,
            self.n_msrb,
            self.conv_every,
            self.zero_init_residual,
            self.cwa.identity_channels,
            self.cwa.curve_order,
            self.cwa.sa_kernel,
            self.cwa.additive_curve,
            self.cwa.use_wavelet,
            self.cwa.use_curve,
            self.diffusion.steps,
            self.diffusion.beta_start,
            self.diffusion.beta_end,
            self.diffusion.denoiser_width,
            variance,
            self.diffusion.stochastic,
        )
    }

    /// Parses `key=value` lines on top of the defaults. Blank lines and
    /// `#` comments are skipped; unknown keys are errors so typos surface
    /// instead of silently training the wrong model.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            cfg.apply_kv(key.trim(), value.trim())?;
        }
        cfg.cwa.channels = cfg.base_channels;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value.parse().map_err(|_| {
                Error::InvalidArgument(format!("bad value {value:?} for key {key:?}"))
            })
        }
        match key {
            "base_channels" => {
                self.base_channels = parse(key, value)?;
                self.cwa.channels = self.base_channels;
                self.cwa.identity_channels = self.base_channels / 2;
            }
            "n_msrb" => self.n_msrb = parse(key, value)?,
            "conv_every" => self.conv_every = parse(key, value)?,
            "zero_init_residual" => self.zero_init_residual = parse(key, value)?,
            "cwa.identity_channels" => self.cwa.identity_channels = parse(key, value)?,
            "cwa.curve_order" => self.cwa.curve_order = parse(key, value)?,
            "cwa.sa_kernel" => self.cwa.sa_kernel = parse(key, value)?,
            "cwa.additive_curve" => self.cwa.additive_curve = parse(key, value)?,
            "cwa.use_wavelet" => self.cwa.use_wavelet = parse(key, value)?,
            "cwa.use_curve" => self.cwa.use_curve = parse(key, value)?,
            "diffusion.steps" => self.diffusion.steps = parse(key, value)?,
            "diffusion.beta_start" => self.diffusion.beta_start = parse(key, value)?,
            "diffusion.beta_end" => self.diffusion.beta_end = parse(key, value)?,
            "diffusion.denoiser_width" => self.diffusion.denoiser_width = parse(key, value)?,
            "diffusion.variance_mode" => {
                self.diffusion.variance_mode = match value {
                    "fixed-beta" => VarianceMode::FixedBeta,
                    "fixed-beta-tilde" => VarianceMode::FixedBetaTilde,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown variance_mode {other:?}"
                        )))
                    }
                }
            }
            "diffusion.stochastic" => self.diffusion.stochastic = parse(key, value)?,
            other => {
                return Err(Error::InvalidArgument(format!("unknown config key {other:?}")))
            }
        }
        Ok(())
    }
}

/// How the forward pass treats gradients and noise injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Gradients recorded; noise per the diffusion config.
    Train,
    /// No gradients; noise forced on.
    EvalStochastic,
    /// No gradients; noise forced off.
    EvalDeterministic,
}

pub struct LLCapsModel<T: Scalar> {
    pub cfg: ModelConfig,
    pub sfe: Conv2d<T>,
    pub msrbs: Vec<Msrb<T>>,
    pub inter_convs: Vec<Conv2d<T>>,
    pub opm: Conv2d<T>,
    pub denoiser: DenoiserNet<T>,
    pub schedule: NoiseSchedule,
}

impl<T: Scalar> std::fmt::Debug for LLCapsModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LLCapsModel")
            .field("cfg", &self.cfg)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

impl<T: Scalar> LLCapsModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.base_channels;
        let sfe = Conv2d::new(3, c, 3, rng);
        let msrbs = (0..cfg.n_msrb)
            .map(|_| Msrb::new(cfg.cwa.clone(), cfg.zero_init_residual, rng))
            .collect::<Result<Vec<_>>>()?;
        let inter_convs = (0..cfg.n_msrb / cfg.conv_every)
            .map(|_| Conv2d::new(c, c, 3, rng))
            .collect();
        let opm = if cfg.zero_init_residual {
            Conv2d::zeroed(c, 3, 3)
        } else {
            Conv2d::new(c, 3, 3, rng)
        };
        let denoiser = DenoiserNet::new(cfg.diffusion.denoiser_width, cfg.zero_init_residual, rng)?;
        let schedule = make_schedule(&cfg.diffusion)?;
        Ok(LLCapsModel {
            cfg,
            sfe,
            msrbs,
            inter_convs,
            opm,
            denoiser,
            schedule,
        })
    }

    pub fn from_seed(cfg: ModelConfig, seed: u64) -> Result<Self> {
        LLCapsModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// The CNN branch: sfe, the MSRB stack with an extra conv after every
    /// `conv_every` blocks, then opm plus the global residual.
    pub fn cnn_branch_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.c != 3 || s.h % 4 != 0 || s.w % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "input must be Nx3xHxW with H, W divisible by 4, got {s}"
            )));
        }
        let mut h = self.sfe.forward(x)?;
        for (i, msrb) in self.msrbs.iter().enumerate() {
            h = msrb.forward(&h)?;
            if (i + 1) % self.cfg.conv_every == 0 {
                if let Some(conv) = self.inter_convs.get(i / self.cfg.conv_every) {
                    h = conv.forward(&h)?;
                }
            }
        }
        add(&self.opm.forward(&h)?, x)
    }

    /// Shallow output refined through the reverse-diffusion chain.
    pub fn llcaps_forward(&self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        let run = |stochastic: bool| -> Result<Tensor<T>> {
            let shallow = self.cnn_branch_forward(x)?;
            reverse_chain(
                &shallow,
                &self.denoiser,
                &self.schedule,
                self.cfg.diffusion.variance_mode,
                stochastic,
                seed,
            )
        };
        match mode {
            Mode::Train => run(self.cfg.diffusion.stochastic),
            Mode::EvalStochastic => no_grad(|| run(true)),
            Mode::EvalDeterministic => no_grad(|| run(false)),
        }
    }

    /// Every learnable tensor in a fixed, documented order.
    pub fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        self.sfe.collect("sfe", &mut out);
        for (i, msrb) in self.msrbs.iter().enumerate() {
            msrb.collect(&format!("msrb{i}"), &mut out);
        }
        for (i, conv) in self.inter_convs.iter().enumerate() {
            conv.collect(&format!("inter{i}"), &mut out);
        }
        self.opm.collect("opm", &mut out);
        self.denoiser.collect("denoiser", &mut out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.tensor.shape().count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, separated_tensor, CheckCfg};
    use crate::tensor::ops::{mul, sum_all};
    use crate::tensor::Shape;
    use std::collections::HashSet;

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::desk();
        cfg.n_msrb = 2;
        cfg.diffusion.steps = 2;
        cfg.diffusion.denoiser_width = 4;
        cfg
    }

    #[test]
    fn config_text_round_trips() {
        let mut cfg = tiny_cfg();
        cfg.cwa.curve_order = 3;
        cfg.cwa.use_wavelet = false;
        cfg.diffusion.variance_mode = VarianceMode::FixedBetaTilde;
        cfg.diffusion.stochastic = true;
        cfg.diffusion.beta_start = 1e-4;
        let text = cfg.to_text();
        let back = ModelConfig::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.base_channels, 8);
        assert_eq!(back.cwa.curve_order, 3);
        assert!(!back.cwa.use_wavelet);
        assert_eq!(back.diffusion.variance_mode, VarianceMode::FixedBetaTilde);
        assert!((back.diffusion.beta_start - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn config_text_rejects_unknown_keys_and_bad_values() {
        assert!(ModelConfig::from_text("no_such_key=3\n").is_err());
        assert!(ModelConfig::from_text("n_msrb=banana\n").is_err());
        assert!(ModelConfig::from_text("just a line\n").is_err());
        // Comments and blanks are fine.
        let cfg = ModelConfig::from_text("# comment\n\nn_msrb=4\n").unwrap();
        assert_eq!(cfg.n_msrb, 4);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ModelConfig::desk();
        cfg.n_msrb = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk();
        cfg.base_channels = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk();
        cfg.cwa.channels = 16;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn output_shape_matches_input_shape() {
        let model = LLCapsModel::<f32>::from_seed(ModelConfig::desk(), 1).unwrap();
        let x = Tensor::full(Shape::new(2, 3, 32, 32), 0.25);
        let y = model.cnn_branch_forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        let full = model.llcaps_forward(&x, Mode::EvalDeterministic, 0).unwrap();
        assert_eq!(full.shape(), x.shape());
    }

    #[test]
    fn bad_input_shapes_are_rejected() {
        let model = LLCapsModel::<f32>::from_seed(tiny_cfg(), 1).unwrap();
        assert!(model.cnn_branch_forward(&Tensor::zeros(Shape::new(1, 1, 8, 8))).is_err());
        assert!(model.cnn_branch_forward(&Tensor::zeros(Shape::new(1, 3, 6, 8))).is_err());
    }

    #[test]
    fn zero_initialized_residuals_make_the_model_an_identity() {
        let mut cfg = tiny_cfg();
        cfg.zero_init_residual = true;
        cfg.diffusion.steps = 0;
        let model = LLCapsModel::<f32>::from_seed(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f32> = (0..3 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Tensor::from_vec(Shape::new(1, 3, 8, 8), data.clone()).unwrap();
        let shallow = model.cnn_branch_forward(&x).unwrap();
        assert_eq!(shallow.to_vec(), data, "opm residual must pass the input through");
        let y = model.llcaps_forward(&x, Mode::EvalDeterministic, 0).unwrap();
        assert_eq!(y.to_vec(), data, "empty chain must not touch the image");
    }

    #[test]
    fn t_zero_chain_returns_the_shallow_output() {
        let mut cfg = tiny_cfg();
        cfg.zero_init_residual = false;
        cfg.diffusion.steps = 0;
        let model = LLCapsModel::<f32>::from_seed(cfg, 5).unwrap();
        let x = Tensor::full(Shape::new(1, 3, 8, 8), 0.4);
        let shallow = model.cnn_branch_forward(&x).unwrap();
        let y = model.llcaps_forward(&x, Mode::EvalDeterministic, 0).unwrap();
        assert_eq!(y.to_vec(), shallow.to_vec());
    }

    #[test]
    fn eval_runs_are_deterministic_given_seed() {
        let mut cfg = tiny_cfg();
        cfg.diffusion.stochastic = true;
        let model = LLCapsModel::<f32>::from_seed(cfg, 6).unwrap();
        let x = Tensor::full(Shape::new(1, 3, 8, 8), 0.3);
        let a = model.llcaps_forward(&x, Mode::EvalDeterministic, 1).unwrap();
        let b = model.llcaps_forward(&x, Mode::EvalDeterministic, 2).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
        let s1 = model.llcaps_forward(&x, Mode::EvalStochastic, 7).unwrap();
        let s2 = model.llcaps_forward(&x, Mode::EvalStochastic, 7).unwrap();
        assert_eq!(s1.to_vec(), s2.to_vec());
        let s3 = model.llcaps_forward(&x, Mode::EvalStochastic, 8).unwrap();
        assert_ne!(s1.to_vec(), s3.to_vec());
    }

    #[test]
    fn eval_modes_do_not_record_gradients() {
        let model = LLCapsModel::<f32>::from_seed(tiny_cfg(), 7).unwrap();
        let x = Tensor::full(Shape::new(1, 3, 8, 8), 0.2);
        let y = model.llcaps_forward(&x, Mode::EvalDeterministic, 0).unwrap();
        assert!(y.is_leaf(), "eval output must be detached from any tape");
    }

    #[test]
    fn parameter_names_are_unique_and_structured() {
        let model = LLCapsModel::<f32>::from_seed(ModelConfig::desk(), 8).unwrap();
        let params = model.parameters();
        let names: HashSet<&str> = params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names.len(), params.len(), "duplicate parameter names");
        for expected in [
            "sfe.weight",
            "msrb3.cwa0.selector.conv1.weight",
            "msrb5.skff.branch1.bias",
            "inter2.weight",
            "opm.bias",
            "denoiser.conv2.weight",
            "denoiser.act.slope",
        ] {
            assert!(names.contains(expected), "missing parameter {expected}");
        }
        assert!(!names.contains("inter3.weight"), "6 blocks at conv_every=2 give 3 inter convs");
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        // Independent count from layer shapes for C=8, n_msrb=6, order=4,
        // sa_kernel=7, denoiser width 8.
        let cfg = ModelConfig::desk();
        let model = LLCapsModel::<f32>::from_seed(cfg.clone(), 9).unwrap();

        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let c = cfg.base_channels;
        let inner = 4 * (c - c / 2);
        let reduced = (c / 4).max(4);
        let selector = 2 * conv(inner, inner, 3) + inner;
        let sa = conv(2, 1, cfg.cwa.sa_kernel);
        let curve = cfg.cwa.curve_order * 2 * conv(inner, inner, 3);
        let fuse = conv(2 * inner, inner, 1);
        let out = conv(c, c, 3);
        let cwa = selector + sa + curve + fuse + out;
        let skff = conv(c, reduced, 1) + 2 * conv(reduced, c, 1);
        let msrb = 2 * cwa + skff;
        let w = cfg.diffusion.denoiser_width;
        let denoiser = conv(3, w, 3) + conv(w, w, 3) + w + conv(w, 3, 3);
        let expected = conv(3, c, 3)
            + cfg.n_msrb * msrb
            + (cfg.n_msrb / cfg.conv_every) * conv(c, c, 3)
            + conv(c, 3, 3)
            + denoiser;

        assert_eq!(model.parameter_count(), expected);
    }

    #[test]
    fn train_backward_reaches_cnn_and_denoiser_parameters() {
        let mut cfg = tiny_cfg();
        cfg.zero_init_residual = false;
        let model = LLCapsModel::<f64>::from_seed(cfg, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = separated_tensor(&mut rng, Shape::new(1, 3, 8, 8), 0.0, 1.0);
        let mask = separated_tensor(&mut rng, Shape::new(1, 3, 8, 8), -1.0, 1.0);
        let params = model.parameters();
        for p in &params {
            p.tensor.zero_grad();
        }
        let y = model.llcaps_forward(&x, Mode::Train, 0).unwrap();
        sum_all(&mul(&y, &mask).unwrap()).unwrap().backward().unwrap();
        for p in &params {
            let g = p.tensor.grad().expect("missing grad");
            assert!(g.iter().any(|&v| v != 0.0), "dead parameter {}", p.name);
        }
    }

    #[test]
    fn full_model_gradient_check() {
        let mut cfg = tiny_cfg();
        cfg.n_msrb = 1;
        cfg.diffusion.steps = 1;
        cfg.zero_init_residual = false;
        cfg.cwa.curve_order = 2;
        let model = LLCapsModel::<f64>::from_seed(cfg, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = separated_tensor(&mut rng, Shape::new(1, 3, 8, 8), 0.0, 1.0).with_grad();
        let mask = separated_tensor(&mut rng, Shape::new(1, 3, 8, 8), -1.0, 1.0);
        let mut params = vec![Parameter::new("x", x.clone())];
        params.extend(model.parameters());
        let f = move || sum_all(&mul(&model.llcaps_forward(&x, Mode::Train, 0)?, &mask)?);
        let cfg = CheckCfg {
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            max_coords: 4,
            ..CheckCfg::default()
        };
        let report = check_gradients(f, &params, &cfg).unwrap();
        assert!(report.ok(), "model gradcheck: {:?}", report.failures);
    }
}
