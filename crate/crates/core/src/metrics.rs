//! Image-quality metrics inside a mask, and the paired t-test.

use crate::error::{Error, Result};
use crate::imaging::{Mask, RealImage};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(test: &RealImage, reference: &RealImage, mask: &Mask) -> Result<()> {
    test.ensure_same_dims(reference)?;
    if mask.dims() != test.dims() {
        return Err(Error::dims(test.dims(), mask.dims()));
    }
    Ok(())
}

/// Largest reference value inside the mask; must be positive.
pub fn masked_peak(reference: &RealImage, mask: &Mask) -> Result<f64> {
    let peak = mask
        .indices()
        .map(|v| reference.data()[v])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ZeroPeak);
    }
    Ok(peak)
}

/// `10 log10(peak^2 / MSE)` over the mask, with `peak` the masked maximum of
/// `reference`. Identical images give `f64::INFINITY`.
pub fn psnr(test: &RealImage, reference: &RealImage, mask: &Mask) -> Result<f64> {
    check(test, reference, mask)?;
    let peak = masked_peak(reference, mask)?;
    let mse = mask
        .indices()
        .map(|v| (test.data()[v] - reference.data()[v]).powi(2))
        .sum::<f64>()
        / mask.count() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean local SSIM over windows centred on masked voxels, dynamic range the
/// masked peak of `reference`.
pub fn ssim(test: &RealImage, reference: &RealImage, mask: &Mask) -> Result<f64> {
    check(test, reference, mask)?;
    let range = masked_peak(reference, mask)?;
    ssim_with_range(test, reference, mask, range)
}

/// SSIM with an explicit dynamic range; symmetric in its image arguments.
///
/// An 11x11 Gaussian window (sigma 1.5) is truncated at the image border and
/// renormalized over the voxels that remain.
pub fn ssim_with_range(a: &RealImage, b: &RealImage, mask: &Mask, range: f64) -> Result<f64> {
    check(a, b, mask)?;
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "SSIM dynamic range must be positive, got {range}"
        )));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let half = (SSIM_WINDOW / 2) as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|d| (-(d * d) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let (h, w) = a.dims();
    let (da, db) = (a.data(), b.data());
    let mut total = 0.0;
    for v in mask.indices() {
        let (r, c) = ((v / w) as isize, (v % w) as isize);
        let (mut sw, mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for dy in -half..=half {
            let y = r + dy;
            if y < 0 || y >= h as isize {
                continue;
            }
            for dx in -half..=half {
                let x = c + dx;
                if x < 0 || x >= w as isize {
                    continue;
                }
                let wt = kernel[(dy + half) as usize] * kernel[(dx + half) as usize];
                let i = y as usize * w + x as usize;
                let (pa, pb) = (da[i], db[i]);
                sw += wt;
                ma += wt * pa;
                mb += wt * pb;
                aa += wt * pa * pa;
                bb += wt * pb * pb;
                ab += wt * pa * pb;
            }
        }
        let (ma, mb) = (ma / sw, mb / sw);
        let va = (aa / sw - ma * ma).max(0.0);
        let vb = (bb / sw - mb * mb).max(0.0);
        let cov = ab / sw - ma * mb;
        total +=
            (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mask.count() as f64)
}

/// Two-sided paired t-test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
}

/// Paired t-test on `a - b`, p-value from the Student-t CDF with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let t = mean / (var / nf).sqrt();
    let dof = n - 1;
    let nu = dof as f64;
    let p = regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t))?;
    Ok(TTest {
        t,
        p: p.min(1.0),
        dof,
    })
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::InvalidArgument(format!(
        "incomplete beta did not converge for a={a}, b={b}, x={x}"
    )))
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!(
            "incomplete beta out of domain: a={a}, b={b}, x={x}"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The fraction converges fast for x < (a + 1) / (a + b + 2); use symmetry otherwise.
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_continued_fraction(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_continued_fraction(b, a, 1.0 - x)? / b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Per-image pSNR and SSIM with their aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn evaluate(tests: &[RealImage], references: &[RealImage], masks: &[Mask]) -> Result<Self> {
        if tests.len() != references.len() || tests.len() != masks.len() {
            return Err(Error::dims(tests.len(), (references.len(), masks.len())));
        }
        if tests.is_empty() {
            return Err(Error::InvalidArgument("no images to evaluate".into()));
        }
        let mut report = Self {
            psnr: Vec::with_capacity(tests.len()),
            ssim: Vec::with_capacity(tests.len()),
        };
        for ((t, r), m) in tests.iter().zip(references).zip(masks) {
            report.psnr.push(psnr(t, r, m)?);
            report.ssim.push(ssim(t, r, m)?);
        }
        Ok(report)
    }

    pub fn psnr_summary(&self) -> Summary {
        Summary::of(&self.psnr)
    }

    pub fn ssim_summary(&self) -> Summary {
        Summary::of(&self.ssim)
    }
}
