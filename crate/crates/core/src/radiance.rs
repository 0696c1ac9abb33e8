//! Gray-body imaging chain and synthetic infrared scenes.
//!
//! Object radiance `ε·B(λ,T)` is attenuated by the atmosphere
//! (`τ·L + L_path`), integrated against the sensor response over the band,
//! and mapped to gray levels by a monotone operator. Gaussian noise is added
//! in gray units after the operator.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BoundingBox, ClassId, GrayImage};

/// Planck constant (J·s).
const H: f64 = 6.626_070_15e-34;
/// Speed of light (m/s).
const C: f64 = 299_792_458.0;
/// Boltzmann constant (J/K).
const KB: f64 = 1.380_649e-23;

/// Blackbody spectral radiance in W·m⁻²·sr⁻¹·µm⁻¹ at wavelength `lambda_um`
/// (micrometers) and temperature `t` (kelvin).
pub fn planck_radiance(lambda_um: f64, t: f64) -> Result<f64> {
    if !(lambda_um > 0.0 && t > 0.0) {
        return Err(Error::domain(format!(
            "Planck radiance needs positive wavelength and temperature, got {lambda_um} µm, {t} K"
        )));
    }
    let lambda = lambda_um * 1e-6;
    let per_metre = 2.0 * H * C * C / lambda.powi(5) / (H * C / (lambda * KB * t)).exp_m1();
    Ok(per_metre * 1e-6)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    pub emissivity: f64,
    /// Kelvin.
    pub temperature: f64,
    #[serde(default = "one")]
    pub transmittance: f64,
    #[serde(default)]
    pub path_radiance: f64,
}

fn one() -> f64 {
    1.0
}

impl SpectralParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.emissivity > 0.0 && self.emissivity <= 1.0) {
            return Err(Error::domain(format!(
                "emissivity {} outside (0, 1]",
                self.emissivity
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::domain(format!(
                "temperature {} K is not positive",
                self.temperature
            )));
        }
        if !(self.transmittance >= 0.0 && self.path_radiance >= 0.0) {
            return Err(Error::domain(
                "transmittance and path radiance must be nonnegative",
            ));
        }
        Ok(())
    }
}

/// At-sensor radiance `τ·L_obj + L_path`.
pub fn sensor_radiance(l_obj: f64, params: &SpectralParams) -> f64 {
    params.transmittance * l_obj + params.path_radiance
}

/// Integration band with a sensor response tabulated on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    /// Micrometers.
    pub lambda_min: f64,
    /// Micrometers.
    pub lambda_max: f64,
    /// `S(λ)` at `grid_points` evenly spaced wavelengths, endpoints included.
    pub response: Vec<f64>,
}

impl Default for BandSpec {
    /// 8–14 µm, flat response, 121 grid points.
    fn default() -> Self {
        Self::flat(8.0, 14.0, 121)
    }
}

impl BandSpec {
    pub fn flat(lambda_min: f64, lambda_max: f64, grid_points: usize) -> Self {
        Self {
            lambda_min,
            lambda_max,
            response: vec![1.0; grid_points],
        }
    }

    pub fn grid_points(&self) -> usize {
        self.response.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_points() < 2 {
            return Err(Error::domain(format!(
                "band needs at least 2 grid points, got {}",
                self.grid_points()
            )));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max) {
            return Err(Error::domain(format!(
                "band [{}, {}] µm is not a positive interval",
                self.lambda_min, self.lambda_max
            )));
        }
        if self.response.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::domain(
                "band response must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.lambda_max - self.lambda_min) / (self.grid_points() - 1) as f64
    }

    pub fn wavelength(&self, i: usize) -> f64 {
        self.lambda_min + self.step() * i as f64
    }

    /// Same band on a grid with half the step; new midpoints interpolate
    /// the response linearly.
    pub fn refined(&self) -> Self {
        let mut response = Vec::with_capacity(2 * self.grid_points() - 1);
        for pair in self.response.windows(2) {
            response.push(pair[0]);
            response.push(0.5 * (pair[0] + pair[1]));
        }
        response.extend(self.response.last());
        Self { response, ..*self }
    }
}

/// Trapezoidal integral of `S(λ)·(τ·ε·B(λ,T) + L_path)` over the band.
pub fn band_radiance(params: &SpectralParams, band: &BandSpec) -> Result<f64> {
    band.validate()?;
    params.validate()?;
    let n = band.grid_points();
    let mut acc = 0.0;
    for (i, &s) in band.response.iter().enumerate() {
        let l_obj = params.emissivity * planck_radiance(band.wavelength(i), params.temperature)?;
        let f = s * sensor_radiance(l_obj, params);
        acc += if i == 0 || i == n - 1 { 0.5 * f } else { f };
    }
    Ok(acc * band.step())
}

/// Affine map of the radiance window `[radiance_lo, radiance_hi]` onto
/// `[0, 1]`, clipped outside the window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagingOperator {
    pub radiance_lo: f64,
    pub radiance_hi: f64,
}

impl ImagingOperator {
    pub fn validate(&self) -> Result<()> {
        if !(self.radiance_lo.is_finite()
            && self.radiance_hi.is_finite()
            && self.radiance_lo < self.radiance_hi)
        {
            return Err(Error::domain(format!(
                "imaging window [{}, {}] is empty",
                self.radiance_lo, self.radiance_hi
            )));
        }
        Ok(())
    }

    pub fn apply(&self, radiance: f64) -> f64 {
        ((radiance - self.radiance_lo) / (self.radiance_hi - self.radiance_lo)).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneClass {
    pub class_id: ClassId,
    #[serde(default)]
    pub name: Option<String>,
    pub params: SpectralParams,
    /// `[x, y, w, h]` in pixels.
    pub boxes: Vec<[u32; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: SpectralParams,
    pub classes: Vec<SceneClass>,
    #[serde(default)]
    pub noise_sigma: f64,
    pub imaging: ImagingOperator,
    #[serde(default)]
    pub band: BandSpec,
    #[serde(default)]
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScene {
    pub image: GrayImage,
    pub annotations: Vec<BoundingBox>,
    pub class_names: BTreeMap<ClassId, String>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("scene must have positive width and height"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::domain(format!(
                "noise_sigma {} must be nonnegative",
                self.noise_sigma
            )));
        }
        self.background.validate()?;
        self.imaging.validate()?;
        self.band.validate()?;
        for class in &self.classes {
            if class.class_id.is_background() {
                return Err(Error::domain("scene class uses reserved id 0"));
            }
            class.params.validate()?;
            for &[x, y, w, h] in &class.boxes {
                let b = BoundingBox::new(x, y, w, h, class.class_id);
                if !b.fits(self.width, self.height) {
                    return Err(Error::domain(format!(
                        "box [{x}, {y}, {w}, {h}] of class {} does not fit a {}x{} scene",
                        class.class_id, self.width, self.height
                    )));
                }
            }
        }
        Ok(())
    }

    /// Noise-free gray level of the background and of each class.
    pub fn clean_grays(&self) -> Result<(f64, Vec<f64>)> {
        let bg = self
            .imaging
            .apply(band_radiance(&self.background, &self.band)?);
        let classes = self
            .classes
            .iter()
            .map(|c| Ok(self.imaging.apply(band_radiance(&c.params, &self.band)?)))
            .collect::<Result<_>>()?;
        Ok((bg, classes))
    }
}

/// Renders the scene; later classes paint over earlier ones where boxes
/// overlap. Identical specs (including `rng_seed`) give identical images.
pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let (bg_gray, class_grays) = spec.clean_grays()?;

    let mut pixels = vec![bg_gray; spec.width * spec.height];
    let mut annotations = Vec::new();
    for (class, &gray) in spec.classes.iter().zip(&class_grays) {
        for &[x, y, w, h] in &class.boxes {
            for row in y as usize..(y + h) as usize {
                let start = row * spec.width;
                pixels[start + x as usize..start + (x + w) as usize].fill(gray);
            }
            annotations.push(BoundingBox::new(x, y, w, h, class.class_id));
        }
    }

    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::domain(e.to_string()))?;
        for p in &mut pixels {
            *p = (*p + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    let class_names = spec
        .classes
        .iter()
        .map(|c| {
            let name = c
                .name
                .clone()
                .unwrap_or_else(|| format!("class_{}", c.class_id));
            (c.class_id, name)
        })
        .collect();
    Ok(RenderedScene {
        image: GrayImage::new(spec.width, spec.height, pixels, 8)?,
        annotations,
        class_names,
    })
}
