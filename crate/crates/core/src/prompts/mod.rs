//! Training-free approximations of frame-shaped visual prompts.
//!
//! A prompt is a 3 × h × w tensor (channel-major) supported on the border ring
//! of width `frame`; the interior, where the resized image sits, is zero.

mod format;
mod spectrum;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::PromptTag;

pub use format::{decode_prompt, encode_prompt, load_prompt, write_prompt, PST_MAGIC, PST_VERSION};
pub use spectrum::{prompt_kl, radial_spectrum, spectrum_kl, spectrum_profile};
pub use spectrum::{KlDirection, SpectrumProfile, SPECTRUM_EPS};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub height: usize,
    pub width: usize,
    pub frame: usize,
}

impl PromptSpec {
    pub fn new(height: usize, width: usize, frame: usize) -> Result<Self> {
        let spec = PromptSpec {
            height,
            width,
            frame,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame == 0 || 2 * self.frame >= self.height.min(self.width) {
            return Err(Error::InvalidSpec(format!(
                "frame {} does not fit a {}x{} image (need 0 < 2*frame < min(h, w))",
                self.frame, self.height, self.width
            )));
        }
        Ok(())
    }

    /// Number of tensor entries, 3·h·w.
    pub fn len(&self) -> usize {
        CHANNELS * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn in_frame(&self, y: usize, x: usize) -> bool {
        let p = self.frame;
        y < p || y >= self.height - p || x < p || x >= self.width - p
    }

    /// Support mask over the flat channel-major tensor.
    pub fn mask(&self) -> Vec<bool> {
        let plane: Vec<bool> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (y, x)))
            .map(|(y, x)| self.in_frame(y, x))
            .collect();
        plane.repeat(CHANNELS)
    }

    /// Flat indices of the frame ring, in tensor order.
    pub fn ring_indices(&self) -> Vec<usize> {
        self.mask()
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gaussian,
    Gradient,
    MiniFt1,
    MiniFt5,
    Trained,
}

impl Provenance {
    pub fn code(self) -> u8 {
        self.tag().code()
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match PromptTag::from_code(code)? {
            PromptTag::None => return None,
            PromptTag::Gaussian => Provenance::Gaussian,
            PromptTag::Gradient => Provenance::Gradient,
            PromptTag::MiniFt1 => Provenance::MiniFt1,
            PromptTag::MiniFt5 => Provenance::MiniFt5,
            PromptTag::Trained => Provenance::Trained,
        })
    }

    /// Tag carried by feature sets extracted under this prompt.
    pub fn tag(self) -> PromptTag {
        match self {
            Provenance::Gaussian => PromptTag::Gaussian,
            Provenance::Gradient => PromptTag::Gradient,
            Provenance::MiniFt1 => PromptTag::MiniFt1,
            Provenance::MiniFt5 => PromptTag::MiniFt5,
            Provenance::Trained => PromptTag::Trained,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSample {
    spec: PromptSpec,
    delta: Vec<f32>,
    pub provenance: Provenance,
    pub gamma: Option<f64>,
    pub seed: Option<i64>,
}

impl PromptSample {
    /// Checks shape, finiteness, the [0, 1] range and the ring support.
    pub fn new(
        spec: PromptSpec,
        delta: Vec<f32>,
        provenance: Provenance,
        gamma: Option<f64>,
        seed: Option<i64>,
    ) -> Result<Self> {
        spec.validate()?;
        if delta.len() != spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} prompt values for a 3x{}x{} tensor",
                delta.len(),
                spec.height,
                spec.width
            )));
        }
        if let Some(g) = gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidParameter(format!("gamma = {g} must be positive")));
            }
        }
        if let Some(index) = delta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        if let Some(index) = delta.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "prompt value {} at {index} is outside [0, 1]",
                delta[index]
            )));
        }
        if let Some(index) = spec
            .mask()
            .iter()
            .zip(&delta)
            .position(|(&inside, &v)| !inside && v != 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "prompt value at {index} lies inside the image area"
            )));
        }
        Ok(PromptSample {
            spec,
            delta,
            provenance,
            gamma,
            seed,
        })
    }

    pub fn spec(&self) -> &PromptSpec {
        &self.spec
    }

    /// Channel-major 3 × h × w values.
    pub fn delta(&self) -> &[f32] {
        &self.delta
    }
}

/// Unclamped N(0, gamma) draws for each ring entry, in tensor order.
pub fn gaussian_ring_draws(spec: &PromptSpec, gamma: f64, seed: i64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} must be positive"
        )));
    }
    let normal = Normal::new(0.0, gamma.sqrt())
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let ring = spec.ring_indices().len();
    Ok((0..ring).map(|_| normal.sample(&mut rng)).collect())
}

/// Isotropic Gaussian prompt: ring entries ~ N(0, gamma), clamped to [0, 1].
pub fn gaussian_prompt(spec: &PromptSpec, gamma: f64, seed: i64) -> Result<PromptSample> {
    let draws = gaussian_ring_draws(spec, gamma, seed)?;
    let mut delta = vec![0.0f32; spec.len()];
    for (i, v) in spec.ring_indices().into_iter().zip(draws) {
        delta[i] = v.clamp(0.0, 1.0) as f32;
    }
    PromptSample::new(*spec, delta, Provenance::Gaussian, Some(gamma), Some(seed))
}

/// Minimizer of δᵀg over the box δ ∈ [0, 1]^d: 1 where g < 0, else 0.
pub fn linearized_argmin(grads: &[f32]) -> Vec<f32> {
    grads
        .iter()
        .map(|&g| if g < 0.0 { 1.0 } else { 0.0 })
        .collect()
}

/// First-order prompt from pixel gradients of the loss, restricted to the ring.
pub fn gradient_prompt(spec: &PromptSpec, grads: &[f32]) -> Result<PromptSample> {
    spec.validate()?;
    if grads.len() != spec.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient values for a 3x{}x{} prompt",
            grads.len(),
            spec.height,
            spec.width
        )));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let mut delta = linearized_argmin(grads);
    for (v, inside) in delta.iter_mut().zip(spec.mask()) {
        if !inside {
            *v = 0.0;
        }
    }
    PromptSample::new(*spec, delta, Provenance::Gradient, None, None)
}
