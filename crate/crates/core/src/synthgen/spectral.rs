//! Spectral response model: Gaussian bandpass filters, triangular RGB
//! sensitivities and piecewise-linear reflectance curves.

use serde::{Deserialize, Serialize};

use super::SynthError;

pub const SPECTRUM_MIN_NM: f64 = 400.0;
pub const SPECTRUM_MAX_NM: f64 = 700.0;

/// Bandpass filter with a Gaussian transmission profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBand {
    pub center_nm: f64,
    pub fwhm_nm: f64,
}

impl SpectralBand {
    /// The 660 nm / 60 nm FWHM narrowband filter.
    pub const BP660: SpectralBand = SpectralBand {
        center_nm: 660.0,
        fwhm_nm: 60.0,
    };

    pub fn new(center_nm: f64, fwhm_nm: f64) -> Result<Self, SynthError> {
        let band = Self { center_nm, fwhm_nm };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.fwhm_nm > 0.0) || !self.fwhm_nm.is_finite() || !self.center_nm.is_finite() {
            return Err(SynthError::InvalidBand(format!(
                "center {} nm, fwhm {} nm",
                self.center_nm, self.fwhm_nm
            )));
        }
        Ok(())
    }
}

impl Default for SpectralBand {
    fn default() -> Self {
        Self::BP660
    }
}

/// Peak-normalized Gaussian transmission; exactly 0.5 at `center ± fwhm/2`.
pub fn band_transmission(band: &SpectralBand, lambda_nm: f64) -> Result<f64, SynthError> {
    band.validate()?;
    Ok(gaussian(band, lambda_nm))
}

#[inline]
fn gaussian(band: &SpectralBand, lambda_nm: f64) -> f64 {
    let d = (lambda_nm - band.center_nm) / band.fwhm_nm;
    (-4.0 * std::f64::consts::LN_2 * d * d).exp()
}

/// Camera color channels, modeled as triangular sensitivities with a
/// 150 nm base width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisibleChannel {
    Red,
    Green,
    Blue,
}

impl VisibleChannel {
    pub const RGB: [VisibleChannel; 3] = [VisibleChannel::Red, VisibleChannel::Green, VisibleChannel::Blue];
    const HALF_BASE_NM: f64 = 75.0;

    pub fn peak_nm(self) -> f64 {
        match self {
            VisibleChannel::Red => 600.0,
            VisibleChannel::Green => 550.0,
            VisibleChannel::Blue => 450.0,
        }
    }

    pub fn sensitivity(self, lambda_nm: f64) -> f64 {
        (1.0 - (lambda_nm - self.peak_nm()).abs() / Self::HALF_BASE_NM).max(0.0)
    }
}

/// Anything a sensor pixel integrates reflectance against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralChannel {
    Band(SpectralBand),
    Visible(VisibleChannel),
}

impl SpectralChannel {
    fn weight(&self, lambda_nm: f64) -> f64 {
        match self {
            SpectralChannel::Band(b) => gaussian(b, lambda_nm),
            SpectralChannel::Visible(c) => c.sensitivity(lambda_nm),
        }
    }
}

/// Piecewise-linear reflectance over wavelength, constant beyond the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectanceCurve {
    samples: Vec<(f64, f64)>,
}

impl ReflectanceCurve {
    /// Wavelengths must be strictly increasing; reflectances are clamped to
    /// `[0, 1]`.
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, SynthError> {
        if samples.is_empty() {
            return Err(SynthError::InvalidCurve("no samples".into()));
        }
        if samples.iter().any(|(l, r)| !l.is_finite() || !r.is_finite()) {
            return Err(SynthError::InvalidCurve("non-finite sample".into()));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SynthError::InvalidCurve("wavelengths must be strictly increasing".into()));
        }
        Ok(Self {
            samples: samples.into_iter().map(|(l, r)| (l, r.clamp(0.0, 1.0))).collect(),
        })
    }

    pub fn constant(r: f64) -> Self {
        Self::new(vec![(SPECTRUM_MIN_NM, r), (SPECTRUM_MAX_NM, r)]).expect("constant curve is valid")
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn eval(&self, lambda_nm: f64) -> f64 {
        let s = &self.samples;
        if lambda_nm <= s[0].0 {
            return s[0].1;
        }
        if lambda_nm >= s[s.len() - 1].0 {
            return s[s.len() - 1].1;
        }
        let i = s.partition_point(|&(l, _)| l <= lambda_nm);
        let (l0, r0) = s[i - 1];
        let (l1, r1) = s[i];
        r0 + (r1 - r0) * (lambda_nm - l0) / (l1 - l0)
    }

    /// Pointwise blend `(1 - t) * self + t * other`, sampled on the union of
    /// both breakpoint sets (exact for piecewise-linear inputs).
    pub fn blend(&self, other: &ReflectanceCurve, t: f64) -> ReflectanceCurve {
        let mut knots: Vec<f64> = self.samples.iter().chain(&other.samples).map(|s| s.0).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let samples = knots
            .into_iter()
            .map(|l| (l, (1.0 - t) * self.eval(l) + t * other.eval(l)))
            .collect();
        ReflectanceCurve::new(samples).expect("blend of valid curves is valid")
    }
}

/// Normalized trapezoid integral of `curve × weight` over 400–700 nm on a
/// 1 nm grid.
pub fn sample_intensity(curve: &ReflectanceCurve, channel: &SpectralChannel) -> f64 {
    let steps = (SPECTRUM_MAX_NM - SPECTRUM_MIN_NM) as usize;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=steps {
        let lambda = SPECTRUM_MIN_NM + i as f64;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        let t = channel.weight(lambda) * w;
        num += curve.eval(lambda) * t;
        den += t;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
