//! Paddle-cycle length from the lift channel.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleConfig {
    /// Search band (Hz); drift below the lower edge is removed first.
    pub band: [f64; 2],
    /// Minimum signal duration (s).
    pub min_duration: f64,
    /// Smallest in-band single-sided amplitude accepted as a cycle.
    pub amplitude_floor: f64,
    /// Frequency used for H when no cycle was ever detected.
    pub fallback_frequency: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            band: [0.1, 5.0],
            min_duration: 2.0,
            amplitude_floor: 1e-6,
            fallback_frequency: 0.45,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleEstimate {
    pub f_star: f64,
    /// Even number of control steps per cycle.
    pub h: usize,
    pub bin: usize,
    pub amplitude: f64,
}

/// `⌊x⌋` rounded down to the nearest even integer, at least 2.
pub fn even_floor(x: f64) -> usize {
    let n = x.floor().max(0.0) as usize;
    (n - n % 2).max(2)
}

pub fn cycle_length(f_s: f64, f: f64) -> usize {
    even_floor(f_s / f)
}

/// H to use when detection fails: the last valid one, else the fallback band centre.
pub fn fallback_cycle_length(f_s: f64, last: Option<usize>, cfg: &CycleConfig) -> usize {
    last.unwrap_or_else(|| cycle_length(f_s, cfg.fallback_frequency))
}

/// Removes the least-squares quadratic trend (orthogonal polynomial projection).
pub fn detrend_quadratic(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let t: Vec<f64> = (0..n).map(|i| i as f64 / n.max(1) as f64 - 0.5).collect();
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0; n], t.clone(), t.iter().map(|v| v * v).collect()];
    for i in 0..basis.len() {
        for j in 0..i {
            let num: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
            let den: f64 = basis[j].iter().map(|b| b * b).sum();
            let bj = basis[j].clone();
            for (a, b) in basis[i].iter_mut().zip(bj) {
                *a -= num / den * b;
            }
        }
    }
    let mut out = x.to_vec();
    for b in &basis {
        let den: f64 = b.iter().map(|v| v * v).sum();
        if den < 1e-300 {
            continue;
        }
        let c = x.iter().zip(b).map(|(a, v)| a * v).sum::<f64>() / den;
        for (o, v) in out.iter_mut().zip(b) {
            *o -= c * v;
        }
    }
    out
}

/// In-band DFT bin range `[lo, hi]` for a length-`n` signal.
pub fn band_bins(n: usize, f_s: f64, band: [f64; 2]) -> (usize, usize) {
    let df = f_s / n as f64;
    let lo = ((band[0] / df) - 1e-9).ceil().max(1.0) as usize;
    let hi = ((band[1] / df) + 1e-9).floor().min((n / 2) as f64) as usize;
    (lo, hi)
}

/// Dominant in-band frequency of `signal` (sampled at `f_s`) and the
/// corresponding even cycle length.
pub fn detect_cycle(signal: &[f64], f_s: f64, cfg: &CycleConfig) -> Result<CycleEstimate> {
    if !(f_s > 10.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate {f_s} Hz must exceed 10 Hz"
        )));
    }
    let need = (cfg.min_duration * f_s).ceil() as usize;
    if signal.len() < need.max(4) {
        return Err(Error::SignalTooShort {
            got: signal.len(),
            need: need.max(4),
        });
    }
    if !signal.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("lift signal"));
    }
    let n = signal.len();
    let x = detrend_quadratic(signal);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (lo, hi) = band_bins(n, f_s, cfg.band);
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in buf.iter().enumerate().take(hi + 1).skip(lo) {
        let m = c.norm();
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((k, m));
        }
    }
    let (bin, mag) = best.ok_or(Error::NoDominantFrequency)?;
    let amplitude = 2.0 * mag / n as f64;
    if !(amplitude > cfg.amplitude_floor) {
        return Err(Error::NoDominantFrequency);
    }
    let f_star = bin as f64 * f_s / n as f64;
    Ok(CycleEstimate {
        f_star,
        h: cycle_length(f_s, f_star),
        bin,
        amplitude,
    })
}
