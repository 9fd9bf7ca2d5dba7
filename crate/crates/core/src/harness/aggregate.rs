//! Interquartile means and percentile-bootstrap intervals across seeds.

use crate::envs::{normalized_return, Baselines};
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::log::RunLog;

pub const BOOTSTRAP_RESAMPLES: usize = 2_000;
pub const BOOTSTRAP_SEED: u64 = 0;

/// Mean of the values left after dropping `floor(n / 4)` from each end of
/// the sorted sequence.
///
/// The mean is taken relative to the smallest kept value, which makes it
/// exact for constant input.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("iqm of no values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = values.len() / 4;
    let kept = &sorted[cut..values.len() - cut];
    Ok(trimmed_mean(kept))
}

/// `lo + sum(x - lo) / n` over ascending values.
pub fn trimmed_mean(sorted: &[f64]) -> f64 {
    let lo = sorted[0];
    lo + sorted.iter().map(|&x| x - lo).sum::<f64>() / sorted.len() as f64
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 95% percentile-bootstrap interval of the IQM, resampling values with
/// replacement.
pub fn bootstrap_iqm_interval(
    values: &[f64],
    resamples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if values.is_empty() || resamples == 0 {
        return Err(Error::Empty("bootstrap needs values and resamples".into()));
    }
    let n = values.len();
    let mut stats = Vec::with_capacity(resamples);
    let mut sample = vec![0.0; n];
    for _ in 0..resamples {
        for v in sample.iter_mut() {
            *v = values[rng.index(n)];
        }
        stats.push(iqm(&sample)?);
    }
    stats.sort_by(f64::total_cmp);
    Ok((quantile(&stats, 0.025), quantile(&stats, 0.975)))
}

/// Point estimate and interval of one metric at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub iqm: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Estimate {
    fn of(values: &[f64], rng: &mut RngStream) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Ok(Self {
                iqm: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
            });
        }
        let (lower, upper) = bootstrap_iqm_interval(values, BOOTSTRAP_RESAMPLES, rng)?;
        Ok(Self {
            iqm: iqm(values)?,
            lower,
            upper,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub step: u64,
    pub runs: usize,
    /// Normalized training-episode return.
    pub episode_return: Estimate,
    /// Normalized evaluation return.
    pub eval_return: Estimate,
    pub champion_sparsity: Estimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub const HEADER: [&'static str; 11] = [
        "step",
        "runs",
        "episode_return_iqm",
        "episode_return_low",
        "episode_return_high",
        "eval_return_iqm",
        "eval_return_low",
        "eval_return_high",
        "champion_sparsity_iqm",
        "champion_sparsity_low",
        "champion_sparsity_high",
    ];

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(Self::HEADER).map_err(io)?;
        for r in &self.rows {
            let mut row = vec![r.step.to_string(), r.runs.to_string()];
            for e in [r.episode_return, r.eval_return, r.champion_sparsity] {
                row.extend([e.iqm, e.lower, e.upper].map(|v| v.to_string()));
            }
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }
}

/// Per logging step: IQM across runs of the normalized returns and the
/// champion sparsity, with seeded bootstrap intervals. All logs must share
/// a layout and logging steps.
pub fn aggregate_runs(logs: &[RunLog], baselines: &Baselines) -> Result<Summary> {
    let first = logs
        .first()
        .ok_or_else(|| Error::Empty("no runs to aggregate".into()))?;
    let mut differing = Vec::new();
    if logs.iter().any(|l| l.layout != first.layout) {
        differing.push("columns".to_string());
    }
    let steps: Vec<u64> = first.records.iter().map(|r| r.step).collect();
    if logs
        .iter()
        .any(|l| !l.records.iter().map(|r| r.step).eq(steps.iter().copied()))
    {
        differing.push("step".to_string());
    }
    if !differing.is_empty() {
        return Err(Error::Schema(differing));
    }
    let mut rng = RngStream::new(BOOTSTRAP_SEED, "bootstrap");
    let mut rows = Vec::with_capacity(steps.len());
    for (i, &step) in steps.iter().enumerate() {
        let column = |f: &dyn Fn(&super::log::LogRecord) -> Result<f64>| {
            logs.iter()
                .map(|l| f(&l.records[i]))
                .collect::<Result<Vec<f64>>>()
        };
        let episode = column(&|r| normalized_return(r.episode_return, baselines))?;
        let eval = column(&|r| normalized_return(r.eval_return, baselines))?;
        let sparsity = column(&|r| {
            r.sparsities.get(r.champion_index).copied().ok_or_else(|| {
                Error::Validation(format!("champion index out of range at step {}", r.step))
            })
        })?;
        rows.push(SummaryRow {
            step,
            runs: logs.len(),
            episode_return: Estimate::of(&episode, &mut rng)?,
            eval_return: Estimate::of(&eval, &mut rng)?,
            champion_sparsity: Estimate::of(&sparsity, &mut rng)?,
        });
    }
    Ok(Summary { rows })
}
