//! Radial profiles of the 2-D Fourier magnitude and KL divergence between them.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{PromptSample, CHANNELS};
use crate::error::{Error, Result};

/// Smoothing added to every bin before normalization, and to both sides of a KL.
pub const SPECTRUM_EPS: f64 = 1e-12;

/// Probability-normalized radial average of the centred Fourier magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    pub radial_bins: Vec<f64>,
}

impl SpectrumProfile {
    /// Wraps an existing distribution; entries must be non-negative and sum to 1.
    pub fn new(radial_bins: Vec<f64>) -> Result<Self> {
        if radial_bins.is_empty() {
            return Err(Error::EmptyInput("spectrum profile has no bins"));
        }
        if let Some(i) = radial_bins.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "bin {i} = {} is not a probability",
                radial_bins[i]
            )));
        }
        let total: f64 = radial_bins.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "bins sum to {total}, not 1"
            )));
        }
        Ok(SpectrumProfile { radial_bins })
    }

    pub fn len(&self) -> usize {
        self.radial_bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radial_bins.is_empty()
    }
}

fn fft_2d(plane: &[f32], height: usize, width: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(f64::from(v), 0.0)).collect();
    planner.plan_fft_forward(width).process(&mut buf);
    let col_fft = planner.plan_fft_forward(height);
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
    buf
}

/// Radial profile of an arbitrary channel-major `channels × height × width` tensor.
///
/// Magnitudes are averaged over channels, binned by rounded distance from the
/// centred DC term into ⌊min(h, w)/2⌋ bins (corners beyond that are dropped),
/// averaged within each bin, smoothed and normalized to sum 1.
pub fn radial_spectrum(data: &[f32], channels: usize, height: usize, width: usize) -> Result<SpectrumProfile> {
    if channels == 0 || height.min(width) < 2 {
        return Err(Error::ShapeMismatch(format!(
            "cannot profile a {channels}x{height}x{width} tensor"
        )));
    }
    if data.len() != channels * height * width {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {channels}x{height}x{width} tensor",
            data.len()
        )));
    }
    let plane = height * width;
    let mut planner = FftPlanner::new();
    let mut magnitude = vec![0.0f64; plane];
    for c in 0..channels {
        let spectrum = fft_2d(&data[c * plane..(c + 1) * plane], height, width, &mut planner);
        for (acc, z) in magnitude.iter_mut().zip(&spectrum) {
            *acc += z.norm();
        }
    }

    let bins = height.min(width) / 2;
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let mut sums = vec![0.0f64; bins];
    let mut counts = vec![0usize; bins];
    for ky in 0..height {
        // position after fftshift
        let sy = ((ky + height / 2) % height) as f64 - cy;
        for kx in 0..width {
            let sx = ((kx + width / 2) % width) as f64 - cx;
            let r = (sy * sy + sx * sx).sqrt().round() as usize;
            if r < bins {
                sums[r] += magnitude[ky * width + kx] / channels as f64;
                counts[r] += 1;
            }
        }
    }
    let averaged: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / c as f64 + SPECTRUM_EPS)
        .collect();
    let total: f64 = averaged.iter().sum();
    Ok(SpectrumProfile {
        radial_bins: averaged.iter().map(|v| v / total).collect(),
    })
}

pub fn spectrum_profile(prompt: &PromptSample) -> SpectrumProfile {
    let spec = prompt.spec();
    radial_spectrum(prompt.delta(), CHANNELS, spec.height, spec.width)
        .expect("validated prompts always have a profile")
}

/// KL(p ‖ q) in nats, after ε-smoothing both sides identically.
pub fn spectrum_kl(p: &SpectrumProfile, q: &SpectrumProfile) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::BinMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let norm = 1.0 + p.len() as f64 * SPECTRUM_EPS;
    let kl: f64 = p
        .radial_bins
        .iter()
        .zip(&q.radial_bins)
        .map(|(&pi, &qi)| {
            let (ps, qs) = ((pi + SPECTRUM_EPS) / norm, (qi + SPECTRUM_EPS) / norm);
            ps * (ps / qs).ln()
        })
        .sum();
    Ok(kl.max(0.0))
}

/// Which way round to compare a simulated prompt with a trained one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(simulated ‖ trained).
    #[default]
    SimulatedToTrained,
    /// KL(trained ‖ simulated).
    TrainedToSimulated,
}

pub fn prompt_kl(simulated: &PromptSample, trained: &PromptSample, direction: KlDirection) -> Result<f64> {
    let (s, t) = (spectrum_profile(simulated), spectrum_profile(trained));
    match direction {
        KlDirection::SimulatedToTrained => spectrum_kl(&s, &t),
        KlDirection::TrainedToSimulated => spectrum_kl(&t, &s),
    }
}
