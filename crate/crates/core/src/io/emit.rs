//! PGM previews and CSV tables.
//!
//! A preview is lossy and derived; it is never read back, and writing one
//! leaves the source image untouched.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{Mask, RealImage};
use crate::metrics::{MetricReport, Summary, TTest};
use crate::training::TrainLog;

/// Binary P5 bytes, min-max scaled over the masked voxels. Voxels outside
/// the mask are clamped to the same range. A constant image maps to 0.
pub fn pgm_bytes(image: &RealImage, mask: &Mask) -> Result<Vec<u8>> {
    if image.dims() != mask.dims() {
        return Err(Error::dims(image.dims(), mask.dims()));
    }
    let (lo, hi) = mask
        .indices()
        .map(|i| image.data()[i])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return Err(Error::EmptyMask);
    }
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| {
        if span > 0.0 {
            (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &RealImage, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pgm_bytes(image, mask)?).map_err(|e| Error::io(path, e))
}

fn cell(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

/// `image,psnr_db,ssim` rows followed by `mean` and `std` rows.
pub fn metric_report_csv(report: &MetricReport) -> String {
    let mut s = String::from("image,psnr_db,ssim\n");
    for (i, (p, q)) in report.psnr.iter().zip(&report.ssim).enumerate() {
        let _ = writeln!(s, "{i},{},{}", cell(*p), cell(*q));
    }
    let (p, q) = (Summary::of(&report.psnr), Summary::of(&report.ssim));
    let _ = writeln!(s, "mean,{},{}", cell(p.mean), cell(q.mean));
    let _ = writeln!(s, "std,{},{}", cell(p.std), cell(q.std));
    s
}

/// `metric,t,p,dof`; a `None` test (zero-variance differences) prints `nan`.
pub fn t_test_csv(rows: &[(&str, Option<TTest>)]) -> String {
    let mut s = String::from("metric,t,p,dof\n");
    for (name, test) in rows {
        match test {
            Some(t) => {
                let _ = writeln!(s, "{name},{},{},{}", cell(t.t), cell(t.p), t.dof);
            }
            None => {
                let _ = writeln!(s, "{name},nan,nan,nan");
            }
        }
    }
    s
}

/// `epoch,mean_loss,learning_rate,validation_psnr_db`. Wall time is left out
/// so that repeated runs write identical files.
pub fn train_log_csv(log: &TrainLog) -> String {
    let mut s = String::from("epoch,mean_loss,learning_rate,validation_psnr_db\n");
    for e in &log.epochs {
        let val = e.validation_psnr.map(cell).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{val}",
            e.epoch,
            cell(e.mean_loss),
            cell(e.learning_rate)
        );
    }
    s
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
