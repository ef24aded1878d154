//! Sampled waveform captures: data model, capture-file I/O, time
//! normalization, differential extraction and the NMSE metric.
//!
//! Capture files are UTF-8 text. Header lines start with `#` and carry
//! `key = value` pairs; data rows are comma-separated, one row per sample
//! instant, one column per channel:
//!
//! ```text
//! # system_freq_hz = 60
//! # samples_per_cycle = 128
//! # labels = v_A,v_B,v_C
//! # units = V,V,V
//! 0.0,-339.4112549695428,339.41125496954277
//! ...
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling geometry of a capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSamplingSpec")]
pub struct SamplingSpec {
    system_freq_hz: f64,
    samples_per_cycle: usize,
}

#[derive(Deserialize)]
struct RawSamplingSpec {
    system_freq_hz: f64,
    samples_per_cycle: usize,
}

impl TryFrom<RawSamplingSpec> for SamplingSpec {
    type Error = Error;

    fn try_from(raw: RawSamplingSpec) -> Result<Self> {
        SamplingSpec::new(raw.system_freq_hz, raw.samples_per_cycle)
    }
}

impl SamplingSpec {
    pub fn new(system_freq_hz: f64, samples_per_cycle: usize) -> Result<Self> {
        if !(system_freq_hz.is_finite() && system_freq_hz > 0.0) {
            return Err(Error::invalid(format!(
                "system frequency must be positive, got {system_freq_hz}"
            )));
        }
        if samples_per_cycle < 2 {
            return Err(Error::invalid(format!(
                "samples_per_cycle must be at least 2, got {samples_per_cycle}"
            )));
        }
        Ok(Self {
            system_freq_hz,
            samples_per_cycle,
        })
    }

    pub fn system_freq_hz(&self) -> f64 {
        self.system_freq_hz
    }

    pub fn samples_per_cycle(&self) -> usize {
        self.samples_per_cycle
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.system_freq_hz * self.samples_per_cycle as f64
    }
}

impl Default for SamplingSpec {
    /// 60 Hz, 128 samples per cycle.
    fn default() -> Self {
        Self {
            system_freq_hz: 60.0,
            samples_per_cycle: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "V")]
    Volts,
    #[serde(rename = "A")]
    Amperes,
}

impl Unit {
    /// `i_*` labels are currents, everything else is treated as a voltage.
    pub fn guess_from_label(label: &str) -> Unit {
        if label.starts_with('i') || label.starts_with('I') {
            Unit::Amperes
        } else {
            Unit::Volts
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Volts => "V",
            Unit::Amperes => "A",
        })
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "V" | "v" | "volts" => Ok(Unit::Volts),
            "A" | "a" | "amperes" | "amps" => Ok(Unit::Amperes),
            other => Err(Error::invalid(format!("unknown unit `{other}`"))),
        }
    }
}

/// One uniformly sampled channel. Holds at least one full cycle of finite
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    spec: SamplingSpec,
    label: String,
    unit: Unit,
}

impl Waveform {
    pub fn new(
        samples: Vec<f64>,
        spec: SamplingSpec,
        label: impl Into<String>,
        unit: Unit,
    ) -> Result<Self> {
        let label = label.into();
        if samples.len() < spec.samples_per_cycle() {
            return Err(Error::invalid(format!(
                "channel `{label}` has {} samples, less than one cycle ({})",
                samples.len(),
                spec.samples_per_cycle()
            )));
        }
        if let Some(k) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "channel `{label}` has a non-finite sample at index {k}"
            )));
        }
        Ok(Self {
            samples,
            spec,
            label,
            unit,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn spec(&self) -> SamplingSpec {
        self.spec
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same metadata, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Waveform::new(samples, self.spec, self.label.clone(), self.unit)
    }

    /// Absolute sample time in seconds, first sample at zero.
    pub fn time_s(&self, k: usize) -> f64 {
        k as f64 / self.spec.sample_rate_hz()
    }
}

/// Time-aligned channels sharing one length and one [`SamplingSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSet {
    channels: Vec<Waveform>,
}

impl WaveformSet {
    pub fn new(channels: Vec<Waveform>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::invalid("waveform set needs at least one channel"))?;
        for ch in &channels[1..] {
            if ch.len() != first.len() {
                return Err(Error::invalid(format!(
                    "channel `{}` has {} samples but `{}` has {}",
                    ch.label(),
                    ch.len(),
                    first.label(),
                    first.len()
                )));
            }
            if ch.spec() != first.spec() {
                return Err(Error::invalid(format!(
                    "channel `{}` has a different sampling spec than `{}`",
                    ch.label(),
                    first.label()
                )));
            }
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[Waveform] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Waveform> {
        self.channels
    }

    pub fn channel(&self, label: &str) -> Option<&Waveform> {
        self.channels.iter().find(|c| c.label() == label)
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn spec(&self) -> SamplingSpec {
        self.channels[0].spec()
    }

    pub fn labels(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.label().to_string()).collect()
    }
}

impl From<Waveform> for WaveformSet {
    fn from(w: Waveform) -> Self {
        Self { channels: vec![w] }
    }
}

/// Normalized model input: `n` instants evenly spread over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `t_k = -1 + 2k/(n-1)`, computed as `(2k - (n-1)) / (n-1)` so that the grid
/// is exactly antisymmetric about zero.
pub fn normalize_time(n_samples: usize) -> Result<TimeGrid> {
    if n_samples < 2 {
        return Err(Error::invalid(format!(
            "time grid needs at least 2 samples, got {n_samples}"
        )));
    }
    let span = (n_samples - 1) as f64;
    let times = (0..n_samples)
        .map(|k| (2.0 * k as f64 - span) / span)
        .collect();
    Ok(TimeGrid { times })
}

/// Event signature: the capture minus the mean of its first
/// `pre_event_cycles` cycles, tiled over the whole capture.
pub fn differential_waveform(capture: &Waveform, pre_event_cycles: usize) -> Result<Waveform> {
    let spc = capture.spec().samples_per_cycle();
    if pre_event_cycles == 0 {
        return Err(Error::invalid("pre_event_cycles must be positive"));
    }
    let needed = (pre_event_cycles + 1) * spc;
    if capture.len() < needed {
        return Err(Error::invalid(format!(
            "capture of {} samples is too short for {pre_event_cycles} pre-event cycles (needs {needed})",
            capture.len()
        )));
    }
    let x = capture.samples();
    let mut baseline = vec![0.0; spc];
    for cycle in 0..pre_event_cycles {
        for (b, v) in baseline.iter_mut().zip(&x[cycle * spc..(cycle + 1) * spc]) {
            *b += v;
        }
    }
    for b in &mut baseline {
        *b /= pre_event_cycles as f64;
    }
    let diff = x
        .iter()
        .enumerate()
        .map(|(k, v)| v - baseline[k % spc])
        .collect();
    capture.with_samples(diff)
}

/// `100 · Σ(raw − recon)² / Σ raw²`.
pub fn nmse_percent(raw: &Waveform, recon: &Waveform) -> Result<f64> {
    nmse_percent_slices(raw.samples(), recon.samples())
}

pub fn nmse_percent_slices(raw: &[f64], recon: &[f64]) -> Result<f64> {
    if raw.len() != recon.len() {
        return Err(Error::invalid(format!(
            "length mismatch: raw has {} samples, reconstruction has {}",
            raw.len(),
            recon.len()
        )));
    }
    let energy: f64 = raw.iter().map(|x| x * x).sum();
    if energy == 0.0 {
        return Err(Error::UndefinedMetric(
            "raw waveform has zero energy".to_string(),
        ));
    }
    let err: f64 = raw
        .iter()
        .zip(recon)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(100.0 * err / energy)
}

/// Average of per-channel NMSE values, channels matched by position.
pub fn mean_channel_nmse(raw: &WaveformSet, recon: &WaveformSet) -> Result<(f64, Vec<f64>)> {
    if raw.n_channels() != recon.n_channels() {
        return Err(Error::invalid(format!(
            "channel count mismatch: raw has {}, reconstruction has {}",
            raw.n_channels(),
            recon.n_channels()
        )));
    }
    let per = raw
        .channels()
        .iter()
        .zip(recon.channels())
        .map(|(r, m)| nmse_percent(r, m))
        .collect::<Result<Vec<_>>>()?;
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// Which file columns feed which channel labels.
pub type ColumnMap = Vec<(String, usize)>;

/// Reads a capture file. Without a `column_map`, every column becomes a
/// channel named by the `labels` header. `sampling` overrides (or stands in
/// for) the header's sampling fields.
pub fn load_capture(
    path: impl AsRef<Path>,
    column_map: Option<&ColumnMap>,
    sampling: Option<SamplingSpec>,
) -> Result<WaveformSet> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_capture(&text, column_map, sampling)
}

pub fn parse_capture(
    text: &str,
    column_map: Option<&ColumnMap>,
    sampling: Option<SamplingSpec>,
) -> Result<WaveformSet> {
    let mut freq = None;
    let mut spc = None;
    let mut labels: Option<Vec<String>> = None;
    let mut units: Option<Vec<Unit>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            let Some((key, value)) = header.split_once('=') else {
                continue;
            };
            let value = value.trim();
            let header_err = |message: String| Error::Parse {
                line: line_no,
                column: 0,
                message,
            };
            match key.trim() {
                "system_freq_hz" => {
                    freq = Some(value.parse::<f64>().map_err(|e| {
                        header_err(format!("bad system_freq_hz `{value}`: {e}"))
                    })?)
                }
                "samples_per_cycle" => {
                    spc = Some(value.parse::<usize>().map_err(|e| {
                        header_err(format!("bad samples_per_cycle `{value}`: {e}"))
                    })?)
                }
                "labels" => labels = Some(value.split(',').map(|s| s.trim().to_string()).collect()),
                "units" => {
                    units = Some(
                        value
                            .split(',')
                            .map(|u| u.parse::<Unit>())
                            .collect::<Result<_>>()
                            .map_err(|e| header_err(e.to_string()))?,
                    )
                }
                _ => {}
            }
            continue;
        }
        let mut row = Vec::with_capacity(width.unwrap_or(4));
        for (col, cell) in trimmed.split(',').enumerate() {
            let cell = cell.trim();
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line: line_no,
                column: col,
                message: format!("non-numeric cell `{cell}`"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    column: col,
                    message: format!("non-finite cell `{cell}`"),
                });
            }
            row.push(value);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    column: row.len().min(w),
                    message: format!("ragged row: expected {w} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }

    let width = width.ok_or_else(|| Error::invalid("capture file has no data rows"))?;
    let spec = match sampling {
        Some(s) => s,
        None => match (freq, spc) {
            (Some(f), Some(s)) => SamplingSpec::new(f, s)?,
            _ => {
                return Err(Error::invalid(
                    "capture file lacks system_freq_hz/samples_per_cycle header and no sampling spec was given",
                ))
            }
        },
    };
    let labels = labels.unwrap_or_else(|| (0..width).map(|c| format!("ch{c}")).collect());

    let default_map: ColumnMap;
    let map = match column_map {
        Some(m) => m,
        None => {
            if labels.len() != width {
                return Err(Error::invalid(format!(
                    "header declares {} labels but rows have {width} columns",
                    labels.len()
                )));
            }
            default_map = labels.iter().cloned().zip(0..).collect();
            &default_map
        }
    };

    let channels = map
        .iter()
        .map(|(label, col)| {
            if *col >= width {
                return Err(Error::Parse {
                    line: 0,
                    column: *col,
                    message: format!("column {col} for `{label}` missing (file has {width})"),
                });
            }
            let unit = units
                .as_ref()
                .and_then(|u| u.get(*col).copied())
                .unwrap_or_else(|| Unit::guess_from_label(label));
            Waveform::new(rows.iter().map(|r| r[*col]).collect(), spec, label.clone(), unit)
        })
        .collect::<Result<Vec<_>>>()?;
    WaveformSet::new(channels)
}

/// Writes a capture with shortest round-trip formatting, so reading it back
/// recovers every sample bit for bit.
pub fn save_capture(set: &WaveformSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_capture(set))?;
    Ok(())
}

pub fn format_capture(set: &WaveformSet) -> String {
    let spec = set.spec();
    let mut out = String::with_capacity(set.n_samples() * set.n_channels() * 22);
    out.push_str(&format!("# system_freq_hz = {}\n", spec.system_freq_hz()));
    out.push_str(&format!("# samples_per_cycle = {}\n", spec.samples_per_cycle()));
    out.push_str(&format!("# labels = {}\n", set.labels().join(",")));
    let units: Vec<String> = set.channels().iter().map(|c| c.unit().to_string()).collect();
    out.push_str(&format!("# units = {}\n", units.join(",")));
    for k in 0..set.n_samples() {
        for (c, ch) in set.channels().iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:?}", ch.samples()[k]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(n: usize, amp: f64) -> Waveform {
        let spec = SamplingSpec::default();
        let samples = (0..n)
            .map(|k| amp * (2.0 * PI * k as f64 / 128.0).sin())
            .collect();
        Waveform::new(samples, spec, "v_A", Unit::Volts).unwrap()
    }

    #[test]
    fn grid_endpoints_and_midpoint() {
        assert_eq!(normalize_time(2).unwrap().times(), &[-1.0, 1.0]);
        assert_eq!(normalize_time(3).unwrap().times(), &[-1.0, 0.0, 1.0]);
        let g = normalize_time(7936).unwrap();
        let expected = -1.0 + 2.0 * 930.0 / 7935.0;
        assert!((g.times()[930] - expected).abs() < 1e-15);
        assert!(matches!(normalize_time(1), Err(Error::InvalidInput(_))));
        assert!(normalize_time(0).is_err());
    }

    #[test]
    fn sampling_rate_is_product() {
        let s = SamplingSpec::new(60.0, 128).unwrap();
        assert_eq!(s.sample_rate_hz(), 7680.0);
        assert!(SamplingSpec::new(60.0, 1).is_err());
        assert!(SamplingSpec::new(0.0, 128).is_err());
    }

    #[test]
    fn waveform_rejects_short_or_nonfinite() {
        let spec = SamplingSpec::default();
        assert!(Waveform::new(vec![0.0; 127], spec, "x", Unit::Volts).is_err());
        let mut s = vec![0.0; 128];
        s[5] = f64::NAN;
        assert!(Waveform::new(s, spec, "x", Unit::Volts).is_err());
    }

    #[test]
    fn nmse_closed_forms() {
        let raw = sine(128 * 4, 1.0);
        assert_eq!(nmse_percent(&raw, &raw).unwrap(), 0.0);
        let zero = raw.with_samples(vec![0.0; raw.len()]).unwrap();
        assert!((nmse_percent(&raw, &zero).unwrap() - 100.0).abs() < 1e-12);
        let scaled = raw
            .with_samples(raw.samples().iter().map(|x| 0.9 * x).collect())
            .unwrap();
        assert!((nmse_percent(&raw, &scaled).unwrap() - 1.0).abs() < 1e-10);
        assert!(matches!(
            nmse_percent(&zero, &raw),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(nmse_percent_slices(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn differential_of_periodic_is_zero() {
        let w = sine(128 * 10, 339.0);
        let d = differential_waveform(&w, 3).unwrap();
        assert!(d.samples().iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn differential_boundary() {
        let w = sine(256, 1.0);
        assert!(differential_waveform(&w, 1).is_ok());
        assert!(differential_waveform(&w, 2).is_err());
        assert!(differential_waveform(&w, 0).is_err());
    }

    #[test]
    fn differential_recovers_burst() {
        let spc = 128;
        let fs = 7680.0;
        let n = 62 * spc;
        let burst: Vec<f64> = (0..n)
            .map(|k| {
                if (31 * spc..33 * spc).contains(&k) {
                    0.2 * (2.0 * PI * 900.0 * k as f64 / fs).sin()
                } else {
                    0.0
                }
            })
            .collect();
        let base = sine(n, 1.0);
        let cap = base
            .with_samples(base.samples().iter().zip(&burst).map(|(a, b)| a + b).collect())
            .unwrap();
        let d = differential_waveform(&cap, 10).unwrap();
        let worst = d
            .samples()
            .iter()
            .zip(&burst)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "worst deviation {worst}");
    }

    #[test]
    fn parse_reports_bad_cells() {
        let text = "# system_freq_hz = 60\n# samples_per_cycle = 2\n# labels = a,b\n1,2\n3,NaN\n";
        match parse_capture(text, None, None) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (5, 1)),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "# system_freq_hz = 60\n# samples_per_cycle = 2\n# labels = a,b\n1,2\n3,x\n";
        assert!(matches!(
            parse_capture(text, None, None),
            Err(Error::Parse { line: 5, column: 1, .. })
        ));
        let ragged = "# system_freq_hz = 60\n# samples_per_cycle = 2\n# labels = a,b\n1,2\n3\n";
        assert!(matches!(
            parse_capture(ragged, None, None),
            Err(Error::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn parse_with_column_map_and_missing_column() {
        let text = "# system_freq_hz = 50\n# samples_per_cycle = 2\n1,2,3\n4,5,6\n";
        let map: ColumnMap = vec![("v_C".into(), 2), ("v_A".into(), 0)];
        let set = parse_capture(text, Some(&map), None).unwrap();
        assert_eq!(set.labels(), vec!["v_C", "v_A"]);
        assert_eq!(set.channels()[0].samples(), &[3.0, 6.0]);
        assert_eq!(set.spec().system_freq_hz(), 50.0);
        let bad: ColumnMap = vec![("v_A".into(), 3)];
        assert!(matches!(
            parse_capture(text, Some(&bad), None),
            Err(Error::Parse { column: 3, .. })
        ));
    }

    #[test]
    fn missing_sampling_needs_override() {
        let text = "1,2\n3,4\n";
        assert!(parse_capture(text, None, None).is_err());
        let set = parse_capture(text, None, Some(SamplingSpec::new(60.0, 2).unwrap())).unwrap();
        assert_eq!(set.n_channels(), 2);
        assert_eq!(set.labels(), vec!["ch0", "ch1"]);
    }

    #[test]
    fn set_rejects_mismatched_channels() {
        let a = sine(256, 1.0);
        let b = sine(384, 1.0);
        assert!(WaveformSet::new(vec![a.clone(), b]).is_err());
        let other_spec = Waveform::new(
            a.samples().to_vec(),
            SamplingSpec::new(50.0, 128).unwrap(),
            "v_B",
            Unit::Volts,
        )
        .unwrap();
        assert!(WaveformSet::new(vec![a, other_spec]).is_err());
        assert!(WaveformSet::new(vec![]).is_err());
    }
}
