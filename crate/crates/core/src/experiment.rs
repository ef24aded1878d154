//! Multi-fit protocols shared by the command line and the acceptance suite:
//! separate-vs-combined fitting, parameter-budget matching, sensitivity
//! sweeps and the rank statistic used to judge them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitted::FittedModel;
use crate::model::{param_count, separate_param_count, ArchSpec};
use crate::trainer::{fit, NmseStats, TrainConfig, TrainReport};
use crate::waveform::WaveformSet;

/// Hidden widths considered when matching a parameter budget: `h1` runs
/// over multiples of 5 up to 100 and `h2` over multiples of 5 from `h1` to
/// `2·h1`. Keeping `h2` between `h1` and `2·h1` rules out degenerate shapes
/// (a handful of first-layer neurons feeding hundreds of second-layer ones)
/// that would otherwise tie on count.
pub fn budget_lattice() -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    for h1 in (5..=100).step_by(5) {
        for h2 in (h1..=2 * h1).step_by(5) {
            cells.push((h1, h2));
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    /// One double-layer model per channel (Eq. 5 count).
    Separate,
    /// One shared-trunk multi-output model (Eq. 6 count).
    Combined,
}

impl Approach {
    pub fn count(self, h1: usize, h2: usize, channels: usize) -> usize {
        match self {
            Approach::Separate => separate_param_count(h1, h2, channels),
            Approach::Combined => param_count(&ArchSpec::multi(h1, h2, channels)),
        }
    }
}

/// Smallest count any lattice cell reaches for `approach`.
pub fn min_budget(approach: Approach, channels: usize) -> usize {
    budget_lattice()
        .into_iter()
        .map(|(h1, h2)| approach.count(h1, h2, channels))
        .min()
        .expect("lattice is nonempty")
}

/// Lattice cell whose count is closest to `budget`; ties go to the larger
/// `h2`, then the larger `h1`. Budgets below the smallest model are errors.
pub fn match_budget(approach: Approach, budget: usize, channels: usize) -> Result<(usize, usize)> {
    let min = min_budget(approach, channels);
    if budget < min {
        return Err(Error::invalid(format!(
            "budget {budget} is below the minimum {approach:?} model size of {min} parameters"
        )));
    }
    Ok(budget_lattice()
        .into_iter()
        .min_by_key(|&(h1, h2)| {
            let gap = approach.count(h1, h2, channels).abs_diff(budget);
            (gap, std::cmp::Reverse(h2), std::cmp::Reverse(h1))
        })
        .expect("lattice is nonempty"))
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either input is constant or the lengths differ or are below 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// `C` independent double-layer fits, one per channel.
#[derive(Debug, Clone)]
pub struct SeparateFit {
    pub models: Vec<FittedModel>,
    pub reports: Vec<TrainReport>,
}

impl SeparateFit {
    /// Average of the per-channel NMSE values.
    pub fn mean_nmse_percent(&self) -> f64 {
        let sum: f64 = self.reports.iter().map(|r| r.final_nmse_percent).sum();
        sum / self.reports.len() as f64
    }

    pub fn channel_nmse_percent(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.final_nmse_percent).collect()
    }

    pub fn param_count(&self) -> usize {
        self.models.iter().map(|m| m.param_count()).sum()
    }
}

/// Fits `arch` (a double-layer spec) to every channel on its own, all with
/// the same config.
pub fn fit_separate(target: &WaveformSet, arch: &ArchSpec, config: &TrainConfig) -> Result<SeparateFit> {
    if arch.n_outputs() != 1 {
        return Err(Error::invalid(format!(
            "separate fitting needs a single-output architecture, got {arch}"
        )));
    }
    let fits = target
        .channels()
        .par_iter()
        .map(|ch| fit(&WaveformSet::from(ch.clone()), arch, config))
        .collect::<Result<Vec<_>>>()?;
    let (models, reports) = fits.into_iter().unzip();
    Ok(SeparateFit { models, reports })
}

/// One row of a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h1: usize,
    pub h2: usize,
    pub params: usize,
    pub mean_nmse: f64,
    pub std: f64,
    pub failures: usize,
}

/// Fits double-layer `(h1, h2)` for every grid cell on every target and run
/// (seeds `config.seed + run`), all jobs in parallel. Each row averages over
/// targets × runs; failed fits are counted, and a cell where every fit
/// failed reports NaN.
pub fn sweep(
    targets: &[WaveformSet],
    h1s: &[usize],
    h2s: &[usize],
    runs: usize,
    omega0: f64,
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if h1s.is_empty() || h2s.is_empty() || targets.is_empty() || runs == 0 {
        return Err(Error::invalid("sweep needs a nonempty grid, suite and run count"));
    }
    let cells: Vec<(usize, usize)> = h1s
        .iter()
        .flat_map(|&h1| h2s.iter().map(move |&h2| (h1, h2)))
        .collect();
    for &(h1, h2) in &cells {
        ArchSpec::double(h1, h2).validate()?;
    }
    let jobs: Vec<(usize, usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..targets.len()).flat_map(move |t| (0..runs as u64).map(move |r| (c, t, r))))
        .collect();
    let results: Vec<(usize, Option<f64>)> = jobs
        .par_iter()
        .map(|&(c, t, r)| {
            let (h1, h2) = cells[c];
            let cfg = TrainConfig {
                seed: config.seed.wrapping_add(r),
                ..config.clone()
            };
            let arch = ArchSpec::double(h1, h2).with_omega0(omega0);
            (c, fit(&targets[t], &arch, &cfg).ok().map(|(_, rep)| rep.final_nmse_percent))
        })
        .collect();
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &(h1, h2))| {
            let values: Vec<f64> = results.iter().filter(|r| r.0 == c).filter_map(|r| r.1).collect();
            let failures = results.iter().filter(|r| r.0 == c && r.1.is_none()).count();
            let stats = NmseStats::from_values(&values);
            SweepRow {
                h1,
                h2,
                params: param_count(&ArchSpec::double(h1, h2)),
                mean_nmse: stats.map_or(f64::NAN, |s| s.mean),
                std: stats.map_or(f64::NAN, |s| s.std),
                failures,
            }
        })
        .collect())
}

/// Result of the Fig. 6-style trend check on a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    /// `(h1, Spearman(h2, mean_nmse))` per first-layer width.
    pub spearman_by_h1: Vec<(usize, Option<f64>)>,
    pub best: (usize, usize),
    pub best_in_max_h2: bool,
    pub pass: bool,
}

/// Negative Spearman correlation between `h2` and mean NMSE at every `h1`,
/// and the overall best cell in the largest-`h2` column.
pub fn trend_check(rows: &[SweepRow]) -> Result<TrendCheck> {
    let valid: Vec<&SweepRow> = rows.iter().filter(|r| r.mean_nmse.is_finite()).collect();
    let best = valid
        .iter()
        .min_by(|a, b| a.mean_nmse.total_cmp(&b.mean_nmse))
        .ok_or_else(|| Error::invalid("sweep table has no successful cells"))?;
    let max_h2 = rows.iter().map(|r| r.h2).max().unwrap_or(0);
    let mut h1s: Vec<usize> = rows.iter().map(|r| r.h1).collect();
    h1s.sort_unstable();
    h1s.dedup();
    let spearman_by_h1: Vec<(usize, Option<f64>)> = h1s
        .iter()
        .map(|&h1| {
            let (x, y): (Vec<f64>, Vec<f64>) = valid
                .iter()
                .filter(|r| r.h1 == h1)
                .map(|r| (r.h2 as f64, r.mean_nmse))
                .unzip();
            (h1, spearman(&x, &y))
        })
        .collect();
    let best_in_max_h2 = best.h2 == max_h2;
    let pass = best_in_max_h2 && spearman_by_h1.iter().all(|(_, r)| matches!(r, Some(v) if *v < 0.0));
    Ok(TrendCheck {
        spearman_by_h1,
        best: (best.h1, best.h2),
        best_in_max_h2,
        pass,
    })
}

/// One approach at one budget in a separate-vs-combined comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachResult {
    pub h1: usize,
    pub h2: usize,
    pub param_count: usize,
    /// Mean over captures × runs of the per-channel-averaged NMSE; `None`
    /// if every fit failed.
    pub mean_nmse: Option<f64>,
    pub std: Option<f64>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetComparison {
    pub budget: usize,
    pub separate: ApproachResult,
    pub combined: ApproachResult,
}

/// For each budget, matches a lattice cell per approach, fits both on every
/// capture and run, and averages the per-channel NMSE.
pub fn compare_budgets(
    captures: &[WaveformSet],
    budgets: &[usize],
    runs: usize,
    omega0: f64,
    config: &TrainConfig,
) -> Result<Vec<BudgetComparison>> {
    let channels = captures
        .first()
        .ok_or_else(|| Error::invalid("compare needs at least one capture"))?
        .n_channels();
    if channels < 2 {
        return Err(Error::invalid("compare needs multi-channel captures"));
    }
    if let Some(bad) = captures.iter().find(|c| c.n_channels() != channels) {
        return Err(Error::invalid(format!(
            "all captures need {channels} channels; found one with {}",
            bad.n_channels()
        )));
    }
    if runs == 0 || budgets.is_empty() {
        return Err(Error::invalid("compare needs at least one budget and one run"));
    }
    let mut cells = Vec::new();
    for &budget in budgets {
        let s = match_budget(Approach::Separate, budget, channels)?;
        let c = match_budget(Approach::Combined, budget, channels)?;
        cells.push((budget, s, c));
    }
    let jobs: Vec<(usize, Approach, usize, u64)> = (0..cells.len())
        .flat_map(|b| {
            [Approach::Separate, Approach::Combined].into_iter().flat_map(move |a| {
                (0..captures.len()).flat_map(move |t| (0..runs as u64).map(move |r| (b, a, t, r)))
            })
        })
        .collect();
    let results: Vec<((usize, Approach), Result<f64, String>)> = jobs
        .par_iter()
        .map(|&(b, approach, t, r)| {
            let (_, s, c) = cells[b];
            let cfg = TrainConfig {
                seed: config.seed.wrapping_add(r),
                ..config.clone()
            };
            let out = match approach {
                Approach::Separate => {
                    let arch = ArchSpec::double(s.0, s.1).with_omega0(omega0);
                    fit_separate(&captures[t], &arch, &cfg).map(|f| f.mean_nmse_percent())
                }
                Approach::Combined => {
                    let arch = ArchSpec::multi(c.0, c.1, channels).with_omega0(omega0);
                    fit(&captures[t], &arch, &cfg).map(|(_, rep)| rep.final_nmse_percent)
                }
            };
            ((b, approach), out.map_err(|e| format!("capture {t} run {r}: {e}")))
        })
        .collect();
    let summarize = |b: usize, approach: Approach, (h1, h2): (usize, usize)| {
        let mine = results.iter().filter(|(k, _)| *k == (b, approach));
        let values: Vec<f64> = mine.clone().filter_map(|(_, r)| r.as_ref().ok().copied()).collect();
        let failures = mine.filter_map(|(_, r)| r.as_ref().err().cloned()).collect();
        let stats = NmseStats::from_values(&values);
        ApproachResult {
            h1,
            h2,
            param_count: approach.count(h1, h2, channels),
            mean_nmse: stats.map(|s| s.mean),
            std: stats.map(|s| s.std),
            failures,
        }
    };
    Ok(cells
        .iter()
        .enumerate()
        .map(|(b, &(budget, s, c))| BudgetComparison {
            budget,
            separate: summarize(b, Approach::Separate, s),
            combined: summarize(b, Approach::Combined, c),
        })
        .collect())
}
