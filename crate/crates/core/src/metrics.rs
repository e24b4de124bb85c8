//! Top-B beam-pair selection, achievable transmission rate ratio (ATRR),
//! LOS/NLOS split reports, location-error sweeps and coherence-time accuracy.

use crate::channel::{optimal_pair, GainMatrix};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::scene::{perturb_locations_with, PerturbTarget, Scene};
use rayon::prelude::*;
use std::io::Write;

/// Indices of the `b` largest logits in descending order; ties favor the
/// lower index.
pub fn top_b_select(logits: &[f64], b: usize) -> Result<Vec<usize>> {
    if b == 0 || b > logits.len() {
        return Err(Error::BOutOfRange { b, max: logits.len() });
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&i, &j| logits[j].total_cmp(&logits[i]).then(i.cmp(&j)));
    idx.truncate(b);
    Ok(idx)
}

/// `log2(1 + best selected gain / noise) / log2(1 + best gain / noise)`.
pub fn atrr(selected: &[usize], g: &GainMatrix) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::EmptyInput);
    }
    let best = g.max_gain();
    if best <= 0.0 {
        return Err(Error::AllZeroGains);
    }
    let chosen = selected.iter().map(|&p| g.gains[p]).fold(0.0, f64::max);
    let rate = |x: f64| (1.0 + x / g.noise_power).log2();
    Ok(rate(chosen) / rate(best))
}

/// Fraction of exactly matching labels.
pub fn bctpa(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    All,
    Los,
    Nlos,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::All => "all",
            Split::Los => "los",
            Split::Nlos => "nlos",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub b_max: usize,
    /// Mean ATRR for `B = 1..=b_max` over all scored samples.
    pub all: Vec<f64>,
    /// `None` when the split is empty.
    pub los: Option<Vec<f64>>,
    pub nlos: Option<Vec<f64>>,
    pub n_total: usize,
    pub n_los: usize,
    pub n_nlos: usize,
    /// Outage samples (all-zero gains) left out of every mean.
    pub excluded: usize,
    pub top1_accuracy: f64,
    pub bctpa: Option<f64>,
}

impl EvalReport {
    pub fn curve(&self, split: Split) -> Option<&[f64]> {
        match split {
            Split::All => Some(&self.all),
            Split::Los => self.los.as_deref(),
            Split::Nlos => self.nlos.as_deref(),
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::All => self.n_total,
            Split::Los => self.n_los,
            Split::Nlos => self.n_nlos,
        }
    }

    /// One row per present split and `B`, tagged with the sweep `value`.
    pub fn csv_rows(&self, value: f64, splits: &[Split]) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        for &split in splits {
            if let Some(curve) = self.curve(split) {
                for (b, &v) in curve.iter().enumerate() {
                    rows.push(CsvRow { value, split: split.name(), b: b + 1, atrr: v, n: self.count(split) });
                }
            }
        }
        rows
    }
}

/// Per-sample ATRR for `B = 1..=b_max`, or `None` for an outage sample.
fn sample_curve(logits: &[f64], g: &GainMatrix, b_max: usize) -> Result<Option<(Vec<f64>, bool)>> {
    if logits.len() != g.pair_count() {
        return Err(Error::DimensionMismatch(format!("{} logits for {} beam pairs", logits.len(), g.pair_count())));
    }
    let ranked = top_b_select(logits, b_max)?;
    let mut curve = Vec::with_capacity(b_max);
    for b in 1..=b_max {
        match atrr(&ranked[..b], g) {
            Ok(v) => curve.push(v),
            Err(Error::AllZeroGains) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some((curve, ranked[0] == optimal_pair(g))))
}

fn mean_curve<'a>(curves: impl Iterator<Item = &'a Vec<f64>>, b_max: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; b_max];
    let mut n = 0usize;
    for c in curves {
        for (s, v) in sum.iter_mut().zip(c) {
            *s += v;
        }
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

/// Mean Top-B ATRR over all samples and over the LOS and NLOS subsets.
pub fn split_report(predictions: &[Vec<f64>], gains: &[GainMatrix], b_max: usize) -> Result<EvalReport> {
    if predictions.len() != gains.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} samples", predictions.len(), gains.len())));
    }
    let per_sample: Vec<Option<(Vec<f64>, bool, bool)>> = predictions
        .par_iter()
        .zip(gains.par_iter())
        .map(|(p, g)| Ok(sample_curve(p, g, b_max)?.map(|(c, hit)| (c, hit, g.los))))
        .collect::<Result<_>>()?;

    let scored: Vec<&(Vec<f64>, bool, bool)> = per_sample.iter().flatten().collect();
    let excluded = per_sample.len() - scored.len();
    let n_los = scored.iter().filter(|s| s.2).count();
    let all = mean_curve(scored.iter().map(|s| &s.0), b_max).unwrap_or_else(|| vec![0.0; b_max]);
    let hits = scored.iter().filter(|s| s.1).count();
    Ok(EvalReport {
        b_max,
        all,
        los: mean_curve(scored.iter().filter(|s| s.2).map(|s| &s.0), b_max),
        nlos: mean_curve(scored.iter().filter(|s| !s.2).map(|s| &s.0), b_max),
        n_total: scored.len(),
        n_los,
        n_nlos: scored.len() - n_los,
        excluded,
        top1_accuracy: if scored.is_empty() { 0.0 } else { hits as f64 / scored.len() as f64 },
        bctpa: None,
    })
}

/// Anything that scores beam pairs from a (possibly perturbed) scene.
pub trait ScenePredictor: Sync {
    fn logits(&self, scene: &Scene) -> Result<Vec<f64>>;
}

/// Ignores the scene entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPredictor(pub Vec<f64>);

impl ScenePredictor for ConstantPredictor {
    fn logits(&self, _scene: &Scene) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub sigma: f64,
    pub report: EvalReport,
}

/// Re-scores `predictor` on location-perturbed copies of `scenes` while the
/// gains stay those of the clean scenes. Every σ reuses the same per-sample
/// noise seeds.
pub fn sigma_sweep<P: ScenePredictor>(
    predictor: &P,
    scenes: &[Scene],
    clean_gains: &[GainMatrix],
    sigmas: &[f64],
    b: usize,
    seed: u64,
    target: PerturbTarget,
) -> Result<Vec<SweepPoint>> {
    if scenes.len() != clean_gains.len() {
        return Err(Error::DimensionMismatch(format!("{} scenes for {} gain tables", scenes.len(), clean_gains.len())));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            if sigma.is_nan() || sigma < 0.0 {
                return Err(Error::Config(format!("sigma {sigma} must be non-negative")));
            }
            let logits: Vec<Vec<f64>> = scenes
                .par_iter()
                .enumerate()
                .map(|(i, s)| predictor.logits(&perturb_locations_with(s, sigma, derive_seed(seed, &[i as u64]), target)))
                .collect::<Result<_>>()?;
            Ok(SweepPoint { sigma, report: split_report(&logits, clean_gains, b)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub value: f64,
    pub split: &'static str,
    pub b: usize,
    pub atrr: f64,
    pub n: usize,
}

pub fn write_csv<W: Write + ?Sized>(w: &mut W, rows: &[CsvRow]) -> Result<()> {
    writeln!(w, "value,split,B,atrr,n")?;
    for r in rows {
        writeln!(w, "{},{},{},{:.9},{}", r.value, r.split, r.b, r.atrr, r.n)?;
    }
    Ok(())
}

/// CSV rows of a σ sweep over the LOS and NLOS splits.
pub fn sweep_rows(points: &[SweepPoint]) -> Vec<CsvRow> {
    points.iter().flat_map(|p| p.report.csv_rows(p.sigma, &[Split::Los, Split::Nlos])).collect()
}
