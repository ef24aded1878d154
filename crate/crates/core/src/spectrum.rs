//! One-sided DFT magnitude spectra, dominant-mode extraction and
//! modulation-sideband detection.
//!
//! Magnitudes are scaled `2/n` on interior bins and `1/n` at DC and (for
//! even `n`) Nyquist, so a sinusoid of amplitude `A` sitting exactly on a bin
//! reports magnitude `A`. No window is applied by default because captures
//! hold an integer number of cycles; [`Window::Hann`] is available for
//! inputs that do not.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitted::{reconstruct, FittedModel};
use crate::waveform::{differential_waveform, TimeGrid, Waveform};

/// Default lower frequency cut for [`dominant_frequency`]; skips DC and the
/// fundamental residue left in differential waveforms.
pub const DEFAULT_EXCLUDE_BELOW_HZ: f64 = 90.0;
/// Default peak significance threshold relative to the spectrum maximum.
pub const DEFAULT_MIN_REL_MAGNITUDE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Rectangular,
    /// Periodic Hann window; magnitudes are divided by its coherent gain
    /// (0.5) so on-bin tone amplitudes are preserved.
    Hann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    magnitudes: Vec<f64>,
    bin_width_hz: f64,
    source_len: usize,
}

impl Spectrum {
    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    /// Bin spacing, `sample_rate / n`.
    pub fn bin_width_hz(&self) -> f64 {
        self.bin_width_hz
    }

    /// Number of time samples the spectrum was computed from.
    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width_hz
    }

    pub fn freq_axis(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.frequency(k)).collect()
    }

    fn peak(&self, bin: usize) -> Peak {
        Peak {
            frequency_hz: self.frequency(bin),
            magnitude: self.magnitudes[bin],
            bin,
        }
    }

    /// Signal energy `Σ x²` recovered from the magnitudes by undoing the
    /// one-sided scaling (Parseval). Only meaningful for rectangular spectra.
    pub fn energy(&self) -> f64 {
        let n = self.source_len as f64;
        let last = self.len() - 1;
        let has_nyquist = self.source_len % 2 == 0;
        self.magnitudes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if k == 0 || (k == last && has_nyquist) {
                    n * m * m
                } else {
                    n * m * m / 2.0
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub frequency_hz: f64,
    pub magnitude: f64,
    pub bin: usize,
}

/// Peaks sorted by magnitude, largest first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet(pub Vec<Peak>);

impl PeakSet {
    pub fn peaks(&self) -> &[Peak] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Two peaks placed symmetrically (within one bin) about a carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandPair {
    pub lower: Peak,
    pub upper: Peak,
    /// Half the distance between the two peaks.
    pub f_sideband_hz: f64,
}

/// One-sided magnitude spectrum of `w`.
pub fn dft_magnitude(w: &Waveform) -> Spectrum {
    dft_magnitude_windowed(w, Window::Rectangular)
}

pub fn dft_magnitude_windowed(w: &Waveform, window: Window) -> Spectrum {
    magnitude_spectrum(w.samples(), w.spec().sample_rate_hz(), window)
}

/// Spectrum of raw samples at `sample_rate_hz`. Needs at least two samples.
pub fn magnitude_spectrum(samples: &[f64], sample_rate_hz: f64, window: Window) -> Spectrum {
    let n = samples.len();
    assert!(n >= 2, "a spectrum needs at least two samples");
    let (weights, gain) = match window {
        Window::Rectangular => (None, 1.0),
        Window::Hann => {
            let w: Vec<f64> = (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
                .collect();
            let gain = w.iter().sum::<f64>() / n as f64;
            (Some(w), gain)
        }
    };
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(k, &x)| Complex::new(weights.as_ref().map_or(x, |w| x * w[k]), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let magnitudes = buf[..=half]
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let edge = k == 0 || (n % 2 == 0 && k == half);
            let scale = if edge { 1.0 } else { 2.0 } / (n as f64 * gain);
            z.norm() * scale
        })
        .collect();
    Spectrum {
        magnitudes,
        bin_width_hz: sample_rate_hz / n as f64,
        source_len: n,
    }
}

/// Largest bin at or above `exclude_below_hz`. Ties go to the lower bin.
pub fn dominant_frequency(s: &Spectrum, exclude_below_hz: f64) -> Result<Peak> {
    let first = (0..s.len()).find(|&k| s.frequency(k) >= exclude_below_hz).ok_or_else(|| {
        Error::invalid(format!(
            "every bin lies below the {exclude_below_hz} Hz exclusion (top bin {} Hz)",
            s.frequency(s.len() - 1)
        ))
    })?;
    let best = (first..s.len()).fold(first, |best, k| {
        if s.magnitudes[k] > s.magnitudes[best] {
            k
        } else {
            best
        }
    });
    Ok(s.peak(best))
}

/// Local maxima with magnitude at least `min_rel_magnitude` × the global
/// maximum. A plateau reports its first bin.
pub fn find_peaks(s: &Spectrum, min_rel_magnitude: f64) -> PeakSet {
    let m = &s.magnitudes;
    let global = m.iter().cloned().fold(0.0, f64::max);
    if global == 0.0 {
        return PeakSet::default();
    }
    let floor = min_rel_magnitude * global;
    let mut peaks: Vec<Peak> = (0..m.len())
        .filter(|&k| {
            let left = k == 0 || m[k] > m[k - 1];
            let right = k + 1 == m.len() || m[k] >= m[k + 1];
            left && right && m[k] >= floor && m[k] > 0.0
        })
        .map(|k| s.peak(k))
        .collect();
    peaks.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.bin.cmp(&b.bin)));
    PeakSet(peaks)
}

/// Significant peaks paired symmetrically about `carrier_hz`, strongest
/// pairs first. Each peak is used at most once; no pair is not an error.
pub fn detect_sidebands(s: &Spectrum, carrier_hz: f64, min_rel_magnitude: f64) -> Vec<SidebandPair> {
    let peaks = find_peaks(s, min_rel_magnitude);
    let tol = s.bin_width_hz;
    let (below, above): (Vec<Peak>, Vec<Peak>) = peaks
        .0
        .iter()
        .filter(|p| p.frequency_hz != carrier_hz)
        .partition(|p| p.frequency_hz < carrier_hz);
    let mut used = vec![false; above.len()];
    let mut pairs = Vec::new();
    for lower in below {
        let partner = above.iter().enumerate().find(|(j, upper)| {
            !used[*j] && ((lower.frequency_hz + upper.frequency_hz) / 2.0 - carrier_hz).abs() <= tol
        });
        if let Some((j, &upper)) = partner {
            used[j] = true;
            pairs.push(SidebandPair {
                lower,
                upper,
                f_sideband_hz: (upper.frequency_hz - lower.frequency_hz) / 2.0,
            });
        }
    }
    pairs.sort_by(|a, b| {
        let ma = a.lower.magnitude + a.upper.magnitude;
        let mb = b.lower.magnitude + b.upper.magnitude;
        mb.total_cmp(&ma).then(a.lower.bin.cmp(&b.lower.bin))
    });
    pairs
}

/// Energy-normalized binwise error between two magnitude spectra, in percent
/// of the reference spectrum's energy.
pub fn spectral_nmse_percent(reference: &Spectrum, other: &Spectrum) -> Result<f64> {
    if reference.len() != other.len() {
        return Err(Error::Dimension {
            field: "spectrum bins".into(),
            expected: reference.len(),
            found: other.len(),
        });
    }
    let energy: f64 = reference.magnitudes.iter().map(|m| m * m).sum();
    if energy == 0.0 {
        return Err(Error::UndefinedMetric(
            "reference spectrum has zero energy".into(),
        ));
    }
    let err: f64 = reference
        .magnitudes
        .iter()
        .zip(&other.magnitudes)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(100.0 * err / energy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub exclude_below_hz: f64,
    /// Carrier for sideband detection; `None` skips it.
    pub carrier_hz: Option<f64>,
    pub min_rel_magnitude: f64,
    pub window: Window,
    /// Analyze differential waveforms built from this many pre-event cycles.
    pub pre_event_cycles: Option<usize>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            exclude_below_hz: DEFAULT_EXCLUDE_BELOW_HZ,
            carrier_hz: None,
            min_rel_magnitude: DEFAULT_MIN_REL_MAGNITUDE,
            window: Window::Rectangular,
            pre_event_cycles: None,
        }
    }
}

/// Peak findings for one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFindings {
    pub dominant: Peak,
    pub sidebands: Option<Vec<SidebandPair>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub label: String,
    pub raw: Spectrum,
    pub model: Spectrum,
    pub raw_findings: SpectralFindings,
    pub model_findings: SpectralFindings,
    pub spectral_nmse_percent: f64,
}

impl SpectrumReport {
    /// Signed bin distance between the model's and the raw dominant peaks.
    pub fn dominant_bin_offset(&self) -> i64 {
        self.model_findings.dominant.bin as i64 - self.raw_findings.dominant.bin as i64
    }
}

fn findings(s: &Spectrum, opts: &ReportOptions) -> Result<SpectralFindings> {
    Ok(SpectralFindings {
        dominant: dominant_frequency(s, opts.exclude_below_hz)?,
        sidebands: opts
            .carrier_hz
            .map(|c| detect_sidebands(s, c, opts.min_rel_magnitude)),
    })
}

/// Compares a raw channel with a reconstruction of the same length.
pub fn compare_spectra(raw: &Waveform, recon: &Waveform, opts: &ReportOptions) -> Result<SpectrumReport> {
    if raw.len() != recon.len() {
        return Err(Error::Dimension {
            field: "reconstruction samples".into(),
            expected: raw.len(),
            found: recon.len(),
        });
    }
    let (raw, recon) = match opts.pre_event_cycles {
        Some(c) => (differential_waveform(raw, c)?, differential_waveform(recon, c)?),
        None => (raw.clone(), recon.clone()),
    };
    let rs = dft_magnitude_windowed(&raw, opts.window);
    let ms = dft_magnitude_windowed(&recon, opts.window);
    Ok(SpectrumReport {
        label: raw.label().to_string(),
        raw_findings: findings(&rs, opts)?,
        model_findings: findings(&ms, opts)?,
        spectral_nmse_percent: spectral_nmse_percent(&rs, &ms)?,
        raw: rs,
        model: ms,
    })
}

/// Reconstructs the model on `grid` and compares the output channel with the
/// raw channel's label (or the only output) against `raw`.
pub fn spectrum_report(
    raw: &Waveform,
    fitted: &FittedModel,
    grid: &TimeGrid,
    opts: &ReportOptions,
) -> Result<SpectrumReport> {
    let recon = reconstruct(fitted, grid)?;
    let channel = match recon.channel(raw.label()) {
        Some(ch) => ch,
        None if recon.n_channels() == 1 => &recon.channels()[0],
        None => {
            return Err(Error::invalid(format!(
                "model has no output channel `{}` (outputs: {})",
                raw.label(),
                recon.labels().join(", ")
            )))
        }
    };
    compare_spectra(raw, channel, opts)
}

/// Two-column `frequency_hz magnitude` text for plotting.
pub fn format_spectrum(s: &Spectrum) -> String {
    let mut out = String::from("# frequency_hz magnitude\n");
    for (k, m) in s.magnitudes.iter().enumerate() {
        let _ = writeln!(out, "{:?} {:?}", s.frequency(k), m);
    }
    out
}

pub fn save_spectrum(s: &Spectrum, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_spectrum(s))?;
    Ok(())
}
