//! Sampling masks and recovery metrics.
//!
//! PSNR and SSIM are computed per slice along the last mode and averaged
//! (MPSNR, MSSIM). SSIM inside a slice is the mean over its 2-D
//! `n1 x n2` bands. MAPE and RMSE are computed over a selected set of
//! entries, normally the unobserved ones.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::seeded_rng;
use crate::tensor::{RealTensor, Tensor};

/// PSNR reported for a slice reconstructed exactly.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Entry `i` is observed iff the `i`-th draw (storage order) of a
/// ChaCha8 stream seeded with `seed` is below `sr`.
pub fn bernoulli_mask(shape: &[usize], sr: f64, seed: u64) -> Result<Tensor<bool>> {
    if !(0.0..=1.0).contains(&sr) {
        return Err(Error::InvalidArgument(format!("sampling rate must lie in [0, 1], got {sr}")));
    }
    let mut rng = seeded_rng(seed);
    Tensor::from_fn(shape, |_| rng.random::<f64>() < sr)
}

fn check_same(a: &RealTensor, b: &RealTensor) -> Result<()> {
    a.same_shape(b)?;
    if a.rank() < 2 {
        return Err(Error::InvalidArgument(format!("metrics need rank >= 2, got shape {:?}", a.shape())));
    }
    Ok(())
}

/// Splits a tensor into its last-mode slices (each returned contiguous in
/// row-major order of the remaining modes).
fn last_mode_slices(a: &RealTensor) -> Vec<Vec<f64>> {
    let last = *a.shape().last().unwrap();
    let per = a.len() / last;
    (0..last)
        .map(|s| (0..per).map(|p| a.data()[p * last + s]).collect())
        .collect()
}

pub fn psnr_slice(est: &[f64], reference: &[f64], peak: f64) -> f64 {
    let mse = est.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / est.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Per-slice PSNR along the last mode.
pub fn psnr_per_slice(est: &RealTensor, reference: &RealTensor, peak: f64) -> Result<Vec<f64>> {
    check_same(est, reference)?;
    Ok(last_mode_slices(est)
        .iter()
        .zip(last_mode_slices(reference))
        .map(|(e, r)| psnr_slice(e, &r, peak))
        .collect())
}

pub fn mpsnr(est: &RealTensor, reference: &RealTensor, peak: f64) -> Result<f64> {
    Ok(mean(&psnr_per_slice(est, reference, peak)?))
}

/// Per-slice SSIM along the last mode, each the mean over the slice's
/// `n1 x n2` bands.
pub fn ssim_per_slice(est: &RealTensor, reference: &RealTensor, peak: f64) -> Result<Vec<f64>> {
    check_same(est, reference)?;
    let (h, w) = (est.shape()[0], est.shape()[1]);
    let rank = est.rank();
    // bands inside one slice: modes 3..N-1 (none for rank <= 3 beyond the slice itself)
    let bands = if rank <= 2 { 1 } else { est.len() / (h * w * est.shape()[rank - 1]) };
    let window = gaussian_window(h, w);
    Ok(last_mode_slices(est)
        .iter()
        .zip(last_mode_slices(reference))
        .map(|(e, r)| {
            let total: f64 = (0..bands)
                .map(|b| {
                    let pick = |v: &[f64]| -> Vec<f64> { (0..h * w).map(|p| v[p * bands + b]).collect() };
                    ssim_2d(&pick(e), &pick(&r), h, w, &window, peak)
                })
                .sum();
            total / bands as f64
        })
        .collect())
}

pub fn mssim(est: &RealTensor, reference: &RealTensor, peak: f64) -> Result<f64> {
    Ok(mean(&ssim_per_slice(est, reference, peak)?))
}

/// Normalized 2-D Gaussian window, shrunk (to an odd size) for images
/// smaller than [`SSIM_WINDOW`].
fn gaussian_window(h: usize, w: usize) -> Vec<Vec<f64>> {
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size.is_multiple_of(2) {
        size -= 1;
    }
    let r = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    g.iter().map(|a| g.iter().map(|b| a * b / total).collect()).collect()
}

/// Mean SSIM map over all window positions fully inside the image.
fn ssim_2d(x: &[f64], y: &[f64], h: usize, w: usize, window: &[Vec<f64>], peak: f64) -> f64 {
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let size = window.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=h - size {
        for j0 in 0..=w - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (di, row) in window.iter().enumerate() {
                for (dj, &g) in row.iter().enumerate() {
                    let p = (i0 + di) * w + j0 + dj;
                    mx += g * x[p];
                    my += g * y[p];
                    sxx += g * x[p] * x[p];
                    syy += g * y[p] * y[p];
                    sxy += g * x[p] * y[p];
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Entries selected by `eval` (all entries when `None`).
fn selected<'a>(
    truth: &'a RealTensor,
    est: &'a RealTensor,
    eval: Option<&'a Tensor<bool>>,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    truth.same_shape(est)?;
    if let Some(m) = eval {
        truth.same_shape(m)?;
    }
    Ok(truth
        .data()
        .iter()
        .zip(est.data())
        .enumerate()
        .filter(move |(i, _)| eval.is_none_or(|m| m.data()[*i]))
        .map(|(_, (&t, &e))| (t, e)))
}

/// Mean absolute percentage error in percent. Entries whose truth is zero
/// are skipped; the second value counts them.
pub fn mape(truth: &RealTensor, est: &RealTensor, eval: Option<&Tensor<bool>>) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut zeros = 0usize;
    for (t, e) in selected(truth, est, eval)? {
        if t == 0.0 {
            zeros += 1;
        } else {
            total += ((t - e) / t).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("MAPE has no entries with nonzero truth to evaluate".into()));
    }
    Ok((100.0 * total / n as f64, zeros))
}

pub fn rmse(truth: &RealTensor, est: &RealTensor, eval: Option<&Tensor<bool>>) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for (t, e) in selected(truth, est, eval)? {
        total += (t - e).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("RMSE evaluation set is empty".into()));
    }
    Ok((total / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// PSNR/SSIM over full slices, plus MAPE/RMSE on the unobserved entries.
    Images,
    /// MAPE/RMSE on the unobserved entries only.
    Traffic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: MetricMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mpsnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mssim: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub psnr_per_slice: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ssim_per_slice: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    /// Entries entering MAPE/RMSE.
    pub evaluated_entries: usize,
    /// Entries skipped by MAPE because their truth is zero.
    pub mape_zero_truth_skipped: usize,
}

impl MetricReport {
    /// `observed`, when given, is the sampling mask; MAPE/RMSE then use
    /// its complement (all entries otherwise).
    pub fn compute(
        mode: MetricMode,
        truth: &RealTensor,
        est: &RealTensor,
        observed: Option<&Tensor<bool>>,
        peak: f64,
    ) -> Result<Self> {
        check_same(truth, est)?;
        let eval = observed.map(|m| m.map(|&o| !o));
        let evaluated_entries = eval.as_ref().map_or(truth.len(), |m| m.data().iter().filter(|&&b| b).count());
        let mut report = MetricReport {
            mode,
            mpsnr: None,
            mssim: None,
            psnr_per_slice: Vec::new(),
            ssim_per_slice: Vec::new(),
            mape: None,
            rmse: None,
            evaluated_entries,
            mape_zero_truth_skipped: 0,
        };
        if mode == MetricMode::Images {
            report.psnr_per_slice = psnr_per_slice(est, truth, peak)?;
            report.ssim_per_slice = ssim_per_slice(est, truth, peak)?;
            report.mpsnr = Some(mean(&report.psnr_per_slice));
            report.mssim = Some(mean(&report.ssim_per_slice));
        }
        if evaluated_entries > 0 {
            report.rmse = Some(rmse(truth, est, eval.as_ref())?);
            match mape(truth, est, eval.as_ref()) {
                Ok((m, zeros)) => {
                    report.mape = Some(m);
                    report.mape_zero_truth_skipped = zeros;
                }
                Err(_) if mode == MetricMode::Images => {}
                Err(e) => return Err(e),
            }
        } else if mode == MetricMode::Traffic {
            return Err(Error::InvalidArgument("no unobserved entries to evaluate".into()));
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn mask_extremes_and_density() {
        assert!(bernoulli_mask(&[4, 5, 6], 1.0, 1).unwrap().data().iter().all(|&b| b));
        assert!(bernoulli_mask(&[4, 5, 6], 0.0, 1).unwrap().data().iter().all(|&b| !b));
        let m = bernoulli_mask(&[100, 100, 100], 0.3, 42).unwrap();
        let density = m.data().iter().filter(|&&b| b).count() as f64 / 1e6;
        assert!((density - 0.3).abs() <= 0.002, "{density}");
        assert!(bernoulli_mask(&[2, 2], 1.5, 0).is_err());
    }

    #[test]
    fn mask_reproducibility() {
        let a = bernoulli_mask(&[10, 10, 4], 0.5, 7).unwrap();
        assert_eq!(a, bernoulli_mask(&[10, 10, 4], 0.5, 7).unwrap());
        assert_ne!(a, bernoulli_mask(&[10, 10, 4], 0.5, 8).unwrap());
    }

    #[test]
    fn psnr_examples() {
        let r = random_tensor(&[4, 4, 2], 0);
        assert_eq!(psnr_per_slice(&r, &r, 1.0).unwrap(), vec![PSNR_CAP_DB; 2]);
        assert!((psnr_slice(&[0.1, 0.1], &[0.0, 0.0], 1.0) - 20.0).abs() < 1e-12);
        // slices with MSE 1e-2 and 1e-4 give 20 and 40 dB
        let truth = RealTensor::zeros(&[1, 2, 2]).unwrap();
        let est = RealTensor::from_vec(vec![1, 2, 2], vec![0.1, 0.01, 0.1, 0.01]).unwrap();
        let per = psnr_per_slice(&est, &truth, 1.0).unwrap();
        assert!((per[0] - 20.0).abs() < 1e-12 && (per[1] - 40.0).abs() < 1e-12);
        assert!((mpsnr(&est, &truth, 1.0).unwrap() - 30.0).abs() < 1e-12);
        assert!(mpsnr(&est, &random_tensor(&[2, 2, 2], 0), 1.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let mut last = f64::INFINITY;
        for e in [1e-3, 1e-2, 0.1, 0.5] {
            let p = psnr_slice(&[e], &[0.0], 1.0);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_properties() {
        let a = random_tensor(&[16, 16, 3, 2], 1);
        let b = random_tensor(&[16, 16, 3, 2], 2);
        assert!((mssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let ab = mssim(&a, &b, 1.0).unwrap();
        assert!((ab - mssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        assert!((-1.0..0.5).contains(&ab));
        // small images shrink the window instead of failing
        let small = random_tensor(&[6, 8, 2], 3);
        assert!((mssim(&small, &small, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_direct_formula_on_a_window_sized_image() {
        let x = random_tensor(&[11, 11, 1], 4);
        let y = random_tensor(&[11, 11, 1], 5);
        let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let gs: f64 = g.iter().sum();
        let wgt = |p: usize| g[p / 11] * g[p % 11] / (gs * gs);
        let m = |v: &[f64]| (0..121).map(|p| wgt(p) * v[p]).sum::<f64>();
        let (mx, my) = (m(x.data()), m(y.data()));
        let c = |u: &[f64], v: &[f64], mu: f64, mv: f64| (0..121).map(|p| wgt(p) * (u[p] - mu) * (v[p] - mv)).sum::<f64>();
        let (vx, vy, cxy) = (c(x.data(), x.data(), mx, mx), c(y.data(), y.data(), my, my), c(x.data(), y.data(), mx, my));
        let (c1, c2) = (1e-4, 9e-4);
        let expect = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        assert!((mssim(&x, &y, 1.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn mape_rmse_examples() {
        let t = RealTensor::from_vec(vec![1, 1], vec![100.0]).unwrap();
        let e = RealTensor::from_vec(vec![1, 1], vec![90.0]).unwrap();
        assert!((mape(&t, &e, None).unwrap().0 - 10.0).abs() < 1e-12);
        assert!((rmse(&t, &e, None).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&t, &t, None).unwrap().0, 0.0);
        assert_eq!(rmse(&t, &t, None).unwrap(), 0.0);
        let t = RealTensor::from_vec(vec![1, 2], vec![2.0, 4.0]).unwrap();
        let e = RealTensor::from_vec(vec![1, 2], vec![1.0, 6.0]).unwrap();
        assert!((mape(&t, &e, None).unwrap().0 - 50.0).abs() < 1e-12);
        assert!((rmse(&t, &e, None).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mape_skips_zero_truth_and_respects_mask() {
        let t = RealTensor::from_vec(vec![1, 3], vec![0.0, 2.0, 4.0]).unwrap();
        let e = RealTensor::from_vec(vec![1, 3], vec![5.0, 1.0, 4.0]).unwrap();
        assert_eq!(mape(&t, &e, None).unwrap(), (25.0, 1));
        let sel = Tensor::from_vec(vec![1, 3], vec![false, true, false]).unwrap();
        assert_eq!(mape(&t, &e, Some(&sel)).unwrap(), (50.0, 0));
        assert!((rmse(&t, &e, Some(&sel)).unwrap() - 1.0).abs() < 1e-12);
        let none = Tensor::filled(&[1, 3], false).unwrap();
        assert!(rmse(&t, &e, Some(&none)).is_err());
    }

    #[test]
    fn permutation_invariance() {
        let t = RealTensor::from_vec(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let e = RealTensor::from_vec(vec![1, 4], vec![1.5, 1.0, 3.5, 2.0]).unwrap();
        let tp = RealTensor::from_vec(vec![1, 4], vec![4.0, 3.0, 1.0, 2.0]).unwrap();
        let ep = RealTensor::from_vec(vec![1, 4], vec![2.0, 3.5, 1.5, 1.0]).unwrap();
        assert!((mape(&t, &e, None).unwrap().0 - mape(&tp, &ep, None).unwrap().0).abs() < 1e-12);
        assert!((rmse(&t, &e, None).unwrap() - rmse(&tp, &ep, None).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn report_modes() {
        let truth = random_tensor(&[12, 12, 1, 3], 6).map(|v| 1.0 + v.abs());
        let est = truth.map(|v| v * 1.01);
        let mask = bernoulli_mask(truth.shape(), 0.5, 1).unwrap();
        let r = MetricReport::compute(MetricMode::Images, &truth, &est, Some(&mask), 1.0).unwrap();
        assert_eq!(r.psnr_per_slice.len(), 3);
        assert!(r.mpsnr.is_some() && r.mssim.is_some());
        assert!((r.mape.unwrap() - 1.0).abs() < 1e-9);
        let r = MetricReport::compute(MetricMode::Traffic, &truth, &est, Some(&mask), 1.0).unwrap();
        assert!(r.mpsnr.is_none());
        assert_eq!(r.evaluated_entries, mask.data().iter().filter(|&&b| !b).count());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"mode\":\"traffic\""));
    }
}
