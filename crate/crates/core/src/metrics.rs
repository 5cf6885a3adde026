//! Evaluation formulas: Dice, exponential direction smoothing, composite
//! interaction score, NASA-TLX item scaling and points-per-clear.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{MaskVolume, SliceMask};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("mask dimensions differ: {0} vs {1}")]
    DimensionMismatch(String, String),
    #[error("zero-length direction vector")]
    ZeroVector,
    #[error("previous direction is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("alpha {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("need at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("raw TLX item {0} outside [1, 21]")]
    TlxOutOfRange(f64),
    #[error("trial {id}: {reason}")]
    InvalidTrial { id: String, reason: String },
    #[error("trial log: {0}")]
    Log(String),
}

/// Voxel counts needed by overlap metrics.
pub trait BinaryMask {
    fn shape(&self) -> Vec<usize>;
    fn flags(&self) -> Box<dyn Iterator<Item = bool> + '_>;
}

impl BinaryMask for SliceMask {
    fn shape(&self) -> Vec<usize> {
        vec![self.width(), self.height()]
    }
    fn flags(&self) -> Box<dyn Iterator<Item = bool> + '_> {
        Box::new(self.bits().iter().copied())
    }
}

impl BinaryMask for MaskVolume {
    fn shape(&self) -> Vec<usize> {
        self.dims().to_vec()
    }
    fn flags(&self) -> Box<dyn Iterator<Item = bool> + '_> {
        Box::new(self.labels().iter().map(|&v| v == 1))
    }
}

/// `(|A|, |B|, |A ∩ B|)`.
pub fn overlap_counts<M: BinaryMask>(a: &M, b: &M) -> Result<(u64, u64, u64), MetricsError> {
    if a.shape() != b.shape() {
        return Err(MetricsError::DimensionMismatch(
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (x, y) in a.flags().zip(b.flags()) {
        na += x as u64;
        nb += y as u64;
        both += (x && y) as u64;
    }
    Ok((na, nb, both))
}

/// `2|A∩B| / (|A|+|B|)`; 1.0 when both masks are empty.
pub fn dice<M: BinaryMask>(a: &M, b: &M) -> Result<f64, MetricsError> {
    let (na, nb, both) = overlap_counts(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok((2 * both) as f64 / (na + nb) as f64)
}

pub type Vec3 = [f64; 3];

fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn unit(v: Vec3) -> Result<Vec3, MetricsError> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(MetricsError::ZeroVector);
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

/// Exponential smoothing of a pointing direction stream:
/// `smoothed = (1 - alpha) * previous + alpha * current`, with `current`
/// normalised first and the blend renormalised unless `renormalize` is off.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingState {
    previous: Vec3,
    alpha: f64,
    pub renormalize: bool,
}

impl SmoothingState {
    pub const DEFAULT_ALPHA: f64 = 0.2;

    pub fn new(previous: Vec3, alpha: f64) -> Result<Self, MetricsError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(MetricsError::InvalidAlpha(alpha));
        }
        let n = norm(previous);
        if (n - 1.0).abs() > 1e-5 {
            return Err(MetricsError::NotUnit(n));
        }
        Ok(Self {
            previous,
            alpha,
            renormalize: true,
        })
    }

    pub fn previous(&self) -> Vec3 {
        self.previous
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The raw blend, before renormalisation. Does not advance the state.
    pub fn blend(&self, current: Vec3) -> Result<Vec3, MetricsError> {
        let c = unit(current)?;
        let a = self.alpha;
        Ok([
            (1.0 - a) * self.previous[0] + a * c[0],
            (1.0 - a) * self.previous[1] + a * c[1],
            (1.0 - a) * self.previous[2] + a * c[2],
        ])
    }

    /// Advances the state and returns the new smoothed direction.
    pub fn smooth(&mut self, current: Vec3) -> Result<Vec3, MetricsError> {
        let raw = self.blend(current)?;
        let out = if self.renormalize { unit(raw)? } else { raw };
        self.previous = out;
        Ok(out)
    }
}

pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (norm(a) * norm(b));
    d.clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub paradigm: String,
    /// Dice, percent.
    pub accuracy: f64,
    pub tlx_total: f64,
    /// Seconds.
    #[serde(alias = "completion_time")]
    pub time: f64,
    pub confirmed: u64,
    pub clears: u64,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |reason: &str| {
            Err(MetricsError::InvalidTrial {
                id: self.trial_id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(0.0..=100.0).contains(&self.accuracy) {
            return bad("accuracy outside [0, 100]");
        }
        if !(0.0..=100.0).contains(&self.tlx_total) {
            return bad("tlx_total outside [0, 100]");
        }
        if !(self.time > 0.0 && self.time.is_finite()) {
            return bad("completion time must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialComposite {
    pub trial_id: String,
    pub paradigm: String,
    pub z_accuracy: f64,
    pub z_tlx: f64,
    pub z_time: f64,
    pub composite: f64,
    pub points_per_clear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmSummary {
    pub paradigm: String,
    pub n: usize,
    pub composite_mean: f64,
    pub composite_std: f64,
    pub points_per_clear_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeReport {
    pub trials: Vec<TrialComposite>,
    pub paradigms: Vec<ParadigmSummary>,
}

/// Mean and sample (n−1) standard deviation; std is 0 for n < 2.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn z_scores(xs: &[f64]) -> Vec<f64> {
    let (mean, sd) = mean_std(xs);
    if !(sd > 0.0) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / sd).collect()
}

/// `z_accuracy − z_tlx − z_time` per trial, z-scores pooled over all trials
/// with sample standard deviation; a field without spread contributes 0.
pub fn composite_scores(trials: &[TrialRecord]) -> Result<CompositeReport, MetricsError> {
    if trials.len() < 2 {
        return Err(MetricsError::TooFewTrials(trials.len()));
    }
    for t in trials {
        t.validate()?;
    }
    let col = |f: fn(&TrialRecord) -> f64| trials.iter().map(f).collect::<Vec<_>>();
    let za = z_scores(&col(|t| t.accuracy));
    let zt = z_scores(&col(|t| t.tlx_total));
    let zs = z_scores(&col(|t| t.time));

    let rows: Vec<TrialComposite> = trials
        .iter()
        .enumerate()
        .map(|(i, t)| TrialComposite {
            trial_id: t.trial_id.clone(),
            paradigm: t.paradigm.clone(),
            z_accuracy: za[i],
            z_tlx: zt[i],
            z_time: zs[i],
            composite: za[i] - zt[i] - zs[i],
            points_per_clear: points_per_clear(t.confirmed, t.clears),
        })
        .collect();

    let mut groups: BTreeMap<&str, Vec<&TrialComposite>> = BTreeMap::new();
    for r in &rows {
        groups.entry(r.paradigm.as_str()).or_default().push(r);
    }
    let paradigms = groups
        .into_iter()
        .map(|(p, rs)| {
            let (mean, std) = mean_std(&rs.iter().map(|r| r.composite).collect::<Vec<_>>());
            let ppc = rs.iter().map(|r| r.points_per_clear).sum::<f64>() / rs.len() as f64;
            ParadigmSummary {
                paradigm: p.to_string(),
                n: rs.len(),
                composite_mean: mean,
                composite_std: std,
                points_per_clear_mean: ppc,
            }
        })
        .collect();
    Ok(CompositeReport {
        trials: rows,
        paradigms,
    })
}

/// Maps a raw 1–21 questionnaire item onto 0–100.
pub fn tlx_scale(raw: f64) -> Result<f64, MetricsError> {
    if !(1.0..=21.0).contains(&raw) {
        return Err(MetricsError::TlxOutOfRange(raw));
    }
    Ok((raw - 1.0) / 20.0 * 100.0)
}

/// Unweighted mean of the six scaled items.
pub fn tlx_total(raw_items: [f64; 6]) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    for r in raw_items {
        sum += tlx_scale(r)?;
    }
    Ok(sum / 6.0)
}

/// Confirmed prompts per clear event; zero clears count as one.
pub fn points_per_clear(confirmed: u64, clears: u64) -> f64 {
    confirmed as f64 / clears.max(1) as f64
}

/// Reads a CSV trial log with header
/// `trial_id,paradigm,accuracy,tlx_total,time,confirmed,clears`.
pub fn read_trials(reader: impl Read) -> Result<Vec<TrialRecord>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .map(|r| r.map_err(|e: csv::Error| MetricsError::Log(e.to_string())))
        .collect()
}

pub fn write_trial(writer: impl Write, trial: &TrialRecord, header: bool) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(writer);
    w.serialize(trial).map_err(|e| MetricsError::Log(e.to_string()))?;
    w.flush().map_err(|e| MetricsError::Log(e.to_string()))
}

/// Per-trial composites, a blank line, then per-paradigm summaries.
pub fn write_report(mut writer: impl Write, report: &CompositeReport) -> Result<(), MetricsError> {
    let err = |e: csv::Error| MetricsError::Log(e.to_string());
    {
        let mut w = csv::Writer::from_writer(&mut writer);
        for t in &report.trials {
            w.serialize(t).map_err(err)?;
        }
        w.flush().map_err(|e| MetricsError::Log(e.to_string()))?;
    }
    writeln!(writer).map_err(|e| MetricsError::Log(e.to_string()))?;
    let mut w = csv::Writer::from_writer(&mut writer);
    for p in &report.paradigms {
        w.serialize(p).map_err(err)?;
    }
    w.flush().map_err(|e| MetricsError::Log(e.to_string()))
}
