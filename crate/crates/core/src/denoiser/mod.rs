//! Denoisers used as the pseudo-contractive prior, their slice-wise
//! application to order-N tensors, and empirical checks of the
//! pseudo-contraction and cocoercivity inequalities.

pub mod bridge;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{gaussian_tensor, seeded_rng};
use crate::tensor::RealTensor;

pub use bridge::BridgeClient;

/// How an order-N tensor is cut into `h x w x c` images.
///
/// With `n3` equal to 1 or 3 (Case 1), each image is `X(:, :, :, i4, ...)`.
/// Otherwise (Case 2) a singleton third mode is inserted, so each image is a
/// single-channel `X(:, :, i3, i4, ...)`. In row-major storage the inserted
/// mode does not move any entry, so both cases read image `s` at offsets
/// `((i * w + j) * c + ch) * slices + s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceLayout {
    /// 1 or 2.
    pub case: u8,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub slices: usize,
}

impl SliceLayout {
    pub fn resolve(shape: &[usize]) -> Result<Self> {
        if shape.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "denoising needs a tensor of rank >= 3, got shape {shape:?}"
            )));
        }
        let (height, width, n3) = (shape[0], shape[1], shape[2]);
        let total: usize = shape.iter().product();
        let (case, channels) = if n3 == 1 || n3 == 3 { (1, n3) } else { (2, 1) };
        Ok(SliceLayout { case, height, width, channels, slices: total / (height * width * channels) })
    }

    /// Shape after the Case 2 expansion (unchanged for Case 1).
    pub fn effective_shape(&self, shape: &[usize]) -> Vec<usize> {
        if self.case == 1 {
            shape.to_vec()
        } else {
            let mut s = vec![shape[0], shape[1], 1];
            s.extend_from_slice(&shape[2..]);
            s
        }
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Copies image `s` out as a row-major `[h][w][c]` buffer.
    pub fn extract(&self, data: &[f64], s: usize, out: &mut [f64]) {
        for (p, v) in out.iter_mut().enumerate() {
            *v = data[p * self.slices + s];
        }
    }

    pub fn scatter(&self, image: &[f64], s: usize, data: &mut [f64]) {
        for (p, &v) in image.iter().enumerate() {
            data[p * self.slices + s] = v;
        }
    }
}

/// An operator `D_sigma` acting on `h x w x c` images (`c` = 1 or 3).
pub trait Denoiser: Send {
    fn name(&self) -> String;

    /// The pseudo-contraction constant this denoiser claims.
    fn declared_k(&self) -> f64;

    /// Denoises one row-major `[h][w][c]` image.
    fn denoise_image(&self, image: &[f64], dims: [usize; 3], sigma: f64) -> Result<Vec<f64>>;

    /// Applies the denoiser slice by slice to a whole tensor.
    fn denoise(&self, x: &RealTensor, sigma: f64) -> Result<RealTensor> {
        check_sigma(sigma)?;
        let layout = SliceLayout::resolve(x.shape())?;
        let dims = [layout.height, layout.width, layout.channels];
        let mut out = RealTensor::zeros(x.shape())?;
        let mut image = vec![0.0; layout.image_len()];
        for s in 0..layout.slices {
            layout.extract(x.data(), s, &mut image);
            let denoised = self.denoise_image(&image, dims, sigma)?;
            if denoised.len() != image.len() {
                return Err(Error::Numerical(format!(
                    "{} returned {} values for a {}-value image",
                    self.name(),
                    denoised.len(),
                    image.len()
                )));
            }
            layout.scatter(&denoised, s, out.data_mut());
        }
        Ok(out)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("denoising strength must be positive, got {sigma}")));
    }
    Ok(())
}

/// `D(X) = X`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Denoiser for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn declared_k(&self) -> f64 {
        0.0
    }

    fn denoise_image(&self, image: &[f64], _dims: [usize; 3], sigma: f64) -> Result<Vec<f64>> {
        check_sigma(sigma)?;
        Ok(image.to_vec())
    }

    fn denoise(&self, x: &RealTensor, sigma: f64) -> Result<RealTensor> {
        check_sigma(sigma)?;
        SliceLayout::resolve(x.shape())?;
        Ok(x.clone())
    }
}

/// Separable truncated Gaussian blur over the two image axes, per channel,
/// with half-sample symmetric (reflecting) boundaries.
///
/// The blur is symmetric with absolute row sums equal to one, so it is
/// nonexpansive and pseudo-contractive with `k = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianConv {
    kernel_sigma: f64,
    radius: Option<usize>,
    sigma_scale: Option<f64>,
    declared_k: f64,
}

impl GaussianConv {
    /// `radius` defaults to `ceil(3 * kernel_sigma)`.
    pub fn new(kernel_sigma: f64, radius: Option<usize>) -> Result<Self> {
        if !(kernel_sigma > 0.0 && kernel_sigma.is_finite()) {
            return Err(Error::Config(format!("kernel_sigma must be positive, got {kernel_sigma}")));
        }
        if radius == Some(0) {
            return Err(Error::Config("kernel radius must be >= 1".into()));
        }
        Ok(GaussianConv { kernel_sigma, radius, sigma_scale: None, declared_k: 0.0 })
    }

    /// Ties the kernel width to the denoising strength:
    /// `kernel_sigma = scale * sigma` on every call.
    pub fn with_sigma_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("sigma_scale must be positive, got {scale}")));
        }
        self.sigma_scale = Some(scale);
        Ok(self)
    }

    /// Declares a larger `k` than the default 0 (a weaker claim).
    pub fn with_declared_k(mut self, k: f64) -> Result<Self> {
        check_k(k)?;
        self.declared_k = k;
        Ok(self)
    }

    /// Normalized taps for offsets `-r..=r`.
    pub fn kernel(&self, sigma: f64) -> Vec<f64> {
        let s = match self.sigma_scale {
            Some(scale) => scale * sigma,
            None => self.kernel_sigma,
        };
        let r = self.radius.unwrap_or_else(|| (3.0 * s).ceil().max(1.0) as usize);
        let taps: Vec<f64> = (-(r as i64)..=r as i64)
            .map(|j| (-(j * j) as f64 / (2.0 * s * s)).exp())
            .collect();
        let total: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / total).collect()
    }

    /// 1-D blur of `n` values spaced `stride` apart starting at `start`.
    fn blur_line(kernel: &[f64], src: &[f64], dst: &mut [f64], start: usize, n: usize, stride: usize) {
        let r = (kernel.len() / 2) as i64;
        for i in 0..n {
            let mut acc = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let k = reflect(i as i64 + t as i64 - r, n);
                acc += w * src[start + k * stride];
            }
            dst[start + i * stride] = acc;
        }
    }
}

/// Half-sample symmetric index: `-1 -> 0`, `n -> n-1`, repeated as needed.
fn reflect(i: i64, n: usize) -> usize {
    let period = 2 * n as i64;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

impl Denoiser for GaussianConv {
    fn name(&self) -> String {
        format!("gaussian_conv(sigma={})", self.kernel_sigma)
    }

    fn declared_k(&self) -> f64 {
        self.declared_k
    }

    fn denoise_image(&self, image: &[f64], dims: [usize; 3], sigma: f64) -> Result<Vec<f64>> {
        check_sigma(sigma)?;
        let [h, w, c] = dims;
        let kernel = self.kernel(sigma);
        let mut tmp = vec![0.0; image.len()];
        for i in 0..h {
            for ch in 0..c {
                Self::blur_line(&kernel, image, &mut tmp, i * w * c + ch, w, c);
            }
        }
        let mut out = vec![0.0; image.len()];
        for j in 0..w {
            for ch in 0..c {
                Self::blur_line(&kernel, &tmp, &mut out, j * c + ch, h, w * c);
            }
        }
        Ok(out)
    }
}

/// A scalar multiple `D(X) = factor * X`; expansive for `factor > 1`.
/// Useful as a negative control for the pseudo-contraction check.
#[derive(Clone, Copy, Debug)]
pub struct Scaling {
    pub factor: f64,
    pub declared_k: f64,
}

impl Denoiser for Scaling {
    fn name(&self) -> String {
        format!("scaling({})", self.factor)
    }

    fn declared_k(&self) -> f64 {
        self.declared_k
    }

    fn denoise_image(&self, image: &[f64], _dims: [usize; 3], _sigma: f64) -> Result<Vec<f64>> {
        Ok(image.iter().map(|v| v * self.factor).collect())
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::Config(format!("declared_k must lie in [0, 1], got {k}")));
    }
    Ok(())
}

/// `alpha (X - D_sigma(X))`.
pub fn residual_operator(d: &dyn Denoiser, x: &RealTensor, sigma: f64, alpha: f64) -> Result<RealTensor> {
    let mut r = x.clone();
    r -= &d.denoise(x, sigma)?;
    Ok(r.scaled(alpha))
}

/// Outcome of sampling an operator inequality on random pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs / rhs` over the trials (at most 1 when nothing is violated).
    pub max_ratio: f64,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Absolute slack allowed on each sampled inequality, relative to its scale.
pub const CHECK_TOL: f64 = 1e-9;

fn sample_pairs(
    trials: usize,
    shape: &[usize],
    seed: u64,
    mut check: impl FnMut(&RealTensor, &RealTensor) -> Result<(f64, f64)>,
) -> Result<InequalityReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut report = InequalityReport { trials, violations: 0, max_ratio: 0.0 };
    for _ in 0..trials {
        let x = gaussian_tensor(shape, &mut rng)?;
        let y = gaussian_tensor(shape, &mut rng)?;
        let (lhs, rhs) = check(&x, &y)?;
        if lhs > rhs + CHECK_TOL * rhs.abs().max(1.0) {
            report.violations += 1;
        }
        let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
        report.max_ratio = report.max_ratio.max(ratio);
    }
    Ok(report)
}

/// Samples `||Dx - Dy||^2 <= ||x - y||^2 + k ||(I - D)x - (I - D)y||^2`
/// on pairs of standard normal tensors.
pub fn check_spc(
    d: &dyn Denoiser,
    sigma: f64,
    k: f64,
    trials: usize,
    shape: &[usize],
    seed: u64,
) -> Result<InequalityReport> {
    sample_pairs(trials, shape, seed, |x, y| {
        let dx = d.denoise(x, sigma)?;
        let dy = d.denoise(y, sigma)?;
        let diff = x - y;
        let ddiff = &dx - &dy;
        let rdiff = &diff - &ddiff;
        Ok((ddiff.frob_sq(), diff.frob_sq() + k * rdiff.frob_sq()))
    })
}

/// Samples the cocoercivity inequality
/// `beta ||Cx - Cy||^2 <= <Cx - Cy, x - y>` for `C = alpha (I - D)`.
pub fn check_cocoercive(
    d: &dyn Denoiser,
    sigma: f64,
    alpha: f64,
    beta: f64,
    trials: usize,
    shape: &[usize],
    seed: u64,
) -> Result<InequalityReport> {
    sample_pairs(trials, shape, seed, |x, y| {
        let cdiff = &residual_operator(d, x, sigma, alpha)? - &residual_operator(d, y, sigma, alpha)?;
        Ok((beta * cdiff.frob_sq(), cdiff.inner(&(x - y))?))
    })
}

/// Denoiser selection as it appears in a run configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserConfig {
    #[default]
    Identity,
    GaussianConv {
        kernel_sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_scale: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        declared_k: Option<f64>,
    },
    Bridge {
        endpoint: String,
        /// When given, must match what the server declares.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        declared_k: Option<f64>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    60
}

impl DenoiserConfig {
    /// Checks parameters without opening any connection.
    pub fn validate(&self) -> Result<()> {
        match self {
            DenoiserConfig::Identity => Ok(()),
            DenoiserConfig::GaussianConv { .. } => self.build_local().map(|_| ()),
            DenoiserConfig::Bridge { endpoint, declared_k, timeout_secs } => {
                if endpoint.is_empty() {
                    return Err(Error::Config("bridge endpoint is empty".into()));
                }
                if *timeout_secs == 0 {
                    return Err(Error::Config("bridge timeout must be >= 1 second".into()));
                }
                declared_k.map_or(Ok(()), check_k)
            }
        }
    }

    /// The `k` this configuration promises before any handshake. For the
    /// bridge without an explicit value this is the pretrained-weights
    /// default of 0.9.
    pub fn declared_k(&self) -> f64 {
        match self {
            DenoiserConfig::Identity => 0.0,
            DenoiserConfig::GaussianConv { declared_k, .. } => declared_k.unwrap_or(0.0),
            DenoiserConfig::Bridge { declared_k, .. } => declared_k.unwrap_or(bridge::DEFAULT_DECLARED_K),
        }
    }

    fn build_local(&self) -> Result<Box<dyn Denoiser>> {
        match self {
            DenoiserConfig::Identity => Ok(Box::new(Identity)),
            DenoiserConfig::GaussianConv { kernel_sigma, radius, sigma_scale, declared_k } => {
                let mut g = GaussianConv::new(*kernel_sigma, *radius)?;
                if let Some(s) = sigma_scale {
                    g = g.with_sigma_scale(*s)?;
                }
                if let Some(k) = declared_k {
                    g = g.with_declared_k(*k)?;
                }
                Ok(Box::new(g))
            }
            DenoiserConfig::Bridge { .. } => Err(Error::Config("bridge denoisers need a connection".into())),
        }
    }

    /// Instantiates the denoiser; the bridge variant connects and performs
    /// the handshake.
    pub fn build(&self) -> Result<Box<dyn Denoiser>> {
        self.validate()?;
        match self {
            DenoiserConfig::Bridge { endpoint, declared_k, timeout_secs } => {
                let client = BridgeClient::connect(endpoint, std::time::Duration::from_secs(*timeout_secs))?;
                if let Some(k) = declared_k {
                    if (client.capabilities().declared_k - k).abs() > 1e-12 {
                        return Err(Error::Config(format!(
                            "bridge declares k = {} but the configuration expects {k}",
                            client.capabilities().declared_k
                        )));
                    }
                }
                Ok(Box::new(client))
            }
            _ => self.build_local(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn layout_cases() {
        let l = SliceLayout::resolve(&[4, 5, 3, 2]).unwrap();
        assert_eq!((l.case, l.channels, l.slices), (1, 3, 2));
        let l = SliceLayout::resolve(&[4, 5, 1, 6]).unwrap();
        assert_eq!((l.case, l.channels, l.slices), (1, 1, 6));
        let l = SliceLayout::resolve(&[4, 5, 31]).unwrap();
        assert_eq!((l.case, l.channels, l.slices), (2, 1, 31));
        assert_eq!(l.effective_shape(&[4, 5, 31]), vec![4, 5, 1, 31]);
        let l = SliceLayout::resolve(&[4, 5, 4, 2]).unwrap();
        assert_eq!((l.case, l.channels, l.slices), (2, 1, 8));
        assert!(SliceLayout::resolve(&[4, 5]).is_err());
    }

    #[test]
    fn slices_follow_the_expanded_shape() {
        let x = random_tensor(&[3, 2, 4, 2], 0);
        let layout = SliceLayout::resolve(x.shape()).unwrap();
        let expanded = x.clone().reshape(layout.effective_shape(x.shape())).unwrap();
        let mut image = vec![0.0; layout.image_len()];
        for k in 0..4 {
            for r in 0..2 {
                layout.extract(x.data(), k * 2 + r, &mut image);
                for i in 0..3 {
                    for j in 0..2 {
                        assert_eq!(image[i * 2 + j], *expanded.get(&[i, j, 0, k, r]));
                    }
                }
            }
        }
        assert_eq!(expanded.frob(), x.frob());
    }

    #[test]
    fn color_slices_keep_channels_together() {
        let x = random_tensor(&[2, 2, 3, 2], 1);
        let layout = SliceLayout::resolve(x.shape()).unwrap();
        let mut image = vec![0.0; layout.image_len()];
        layout.extract(x.data(), 1, &mut image);
        assert_eq!(image[(2 * 3) + 2], *x.get(&[1, 0, 2, 1]));
    }

    #[test]
    fn identity_and_constant_inputs() {
        let x = random_tensor(&[4, 4, 1, 3], 2);
        assert_eq!(Identity.denoise(&x, 0.3).unwrap(), x);
        let c = RealTensor::filled(&[6, 5, 3], 0.7).unwrap();
        let g = GaussianConv::new(1.5, None).unwrap();
        assert!(g.denoise(&c, 0.3).unwrap().dist(&c) < 1e-14);
        assert!(Identity.denoise(&x, 0.0).is_err());
    }

    #[test]
    fn gaussian_kernel_is_normalized() {
        let g = GaussianConv::new(1.5, None).unwrap();
        let k = g.kernel(0.3);
        assert_eq!(k.len(), 2 * 5 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((0..k.len()).all(|i| k[i] == k[k.len() - 1 - i]));
        let scaled = GaussianConv::new(1.0, None).unwrap().with_sigma_scale(10.0).unwrap();
        assert_eq!(scaled.kernel(0.2).len(), 2 * 6 + 1);
    }

    #[test]
    fn delta_image_reproduces_kernel() {
        let g = GaussianConv::new(1.5, Some(4)).unwrap();
        let (h, w) = (13, 13);
        let mut img = vec![0.0; h * w];
        img[6 * w + 6] = 1.0;
        let out = g.denoise_image(&img, [h, w, 1], 0.1).unwrap();
        // direct oracle: the unnormalized 2-D Gaussian restricted to the
        // 9x9 window, divided by its sum
        let raw = |d: i64| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp();
        let norm: f64 = (-4..=4).map(raw).sum::<f64>().powi(2);
        for i in 0..h {
            for j in 0..w {
                let (di, dj) = (i as i64 - 6, j as i64 - 6);
                let expect = if di.abs() <= 4 && dj.abs() <= 4 { raw(di) * raw(dj) / norm } else { 0.0 };
                assert!((out[i * w + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(9, 4), 1);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn gaussian_is_linear_and_symmetric() {
        let g = GaussianConv::new(1.2, None).unwrap();
        let x = random_tensor(&[7, 5, 3], 3);
        let y = random_tensor(&[7, 5, 3], 4);
        let lhs = g.denoise(&(&x.scaled(2.0) + &y.scaled(-3.0)), 0.5).unwrap();
        let rhs = &g.denoise(&x, 0.5).unwrap().scaled(2.0) + &g.denoise(&y, 0.5).unwrap().scaled(-3.0);
        assert!(lhs.dist(&rhs) < 1e-12);
        let a = g.denoise(&x, 0.5).unwrap().inner(&y).unwrap();
        let b = x.inner(&g.denoise(&y, 0.5).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn residual_operator_examples() {
        let x = random_tensor(&[4, 4, 1, 2], 5);
        assert_eq!(residual_operator(&Identity, &x, 0.2, 3.0).unwrap().max_abs(), 0.0);
        let g = GaussianConv::new(1.0, None).unwrap();
        let c = RealTensor::filled(&[4, 4, 1, 2], 2.0).unwrap();
        assert!(residual_operator(&g, &c, 0.2, 1.0).unwrap().max_abs() < 1e-14);
        let one = residual_operator(&g, &x, 0.2, 1.0).unwrap();
        let two = residual_operator(&g, &x, 0.2, 2.0).unwrap();
        assert_eq!(two, one.scaled(2.0));
    }

    #[test]
    fn spc_checks() {
        let shape = [8, 8, 1, 2];
        assert!(check_spc(&Identity, 0.1, 0.5, 50, &shape, 1).unwrap().passed());
        let g = GaussianConv::new(1.5, None).unwrap();
        let report = check_spc(&g, 0.1, 0.0, 200, &shape, 2).unwrap();
        assert!(report.passed() && report.max_ratio <= 1.0, "{report:?}");
        let doubling = Scaling { factor: 2.0, declared_k: 0.9 };
        let report = check_spc(&doubling, 0.1, 0.9, 20, &shape, 3).unwrap();
        assert_eq!(report.violations, 20);
        assert!((report.max_ratio - 4.0 / 1.9).abs() < 1e-12);
        assert!(check_spc(&Identity, 0.1, 0.0, 0, &shape, 1).is_err());
    }

    #[test]
    fn cocoercivity_of_residual() {
        let g = GaussianConv::new(1.5, None).unwrap();
        let alpha = 0.5;
        let beta = (1.0 - g.declared_k()) / (2.0 * alpha);
        let report = check_cocoercive(&g, 0.1, alpha, beta, 200, &[8, 8, 3], 4).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg: DenoiserConfig = serde_json::from_str(r#"{"kind":"gaussian_conv","kernel_sigma":1.5}"#).unwrap();
        assert_eq!(cfg.declared_k(), 0.0);
        assert!(cfg.build().is_ok());
        let back: DenoiserConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let bad: DenoiserConfig = serde_json::from_str(r#"{"kind":"gaussian_conv","kernel_sigma":-1}"#).unwrap();
        assert!(matches!(bad.build(), Err(Error::Config(_))));
        let bridge: DenoiserConfig = serde_json::from_str(r#"{"kind":"bridge","endpoint":"127.0.0.1:1"}"#).unwrap();
        assert_eq!(bridge.declared_k(), 0.9);
        assert!(bridge.validate().is_ok());
        let k: DenoiserConfig =
            serde_json::from_str(r#"{"kind":"gaussian_conv","kernel_sigma":1.0,"declared_k":1.5}"#).unwrap();
        assert!(k.validate().is_err());
    }
}
