use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use super::ModulationSpectrum;
use crate::error::{Result, VclabError};
use crate::util::write_atomic;

/// Mean probabilities of the trained adversary on converted segments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdversaryReport {
    /// Mean probability of being real.
    pub real_prob: f64,
    /// Mean probability of belonging to the target domain.
    pub target_prob: f64,
    pub segments: usize,
}

/// For an augmented classifier: real-probability is the mass on the K real
/// classes, target-probability is the target class's share of that mass.
/// `probs` holds one segment distribution per row.
pub fn augmented_report(probs: &Array2<f64>, targets: &[usize], domains: usize) -> Result<AdversaryReport> {
    let (rows, l) = probs.dim();
    if rows != targets.len() || l <= domains {
        return Err(VclabError::Shape(format!("{rows}x{l} probabilities for {} targets, K={domains}", targets.len())));
    }
    let (mut real, mut target) = (0.0, 0.0);
    for (row, &k) in probs.rows().into_iter().zip(targets) {
        if k >= domains {
            return Err(VclabError::DomainOutOfRange { index: k, count: domains });
        }
        let mass: f64 = row.iter().take(domains).sum();
        real += mass;
        target += if mass > 0.0 { row[k] / mass } else { 0.0 };
    }
    let n = rows.max(1) as f64;
    Ok(AdversaryReport { real_prob: real / n, target_prob: target / n, segments: rows })
}

/// For a separate discriminator and classifier: the mean D output and the
/// mean classifier probability of the target.
pub fn separate_report(d: &[f64], class_probs: &Array2<f64>, targets: &[usize]) -> Result<AdversaryReport> {
    if d.len() != targets.len() || class_probs.nrows() != targets.len() {
        return Err(VclabError::Shape("adversary outputs and targets differ in length".into()));
    }
    let n = targets.len().max(1) as f64;
    let mut target = 0.0;
    for (row, &k) in class_probs.rows().into_iter().zip(targets) {
        target += *row.get(k).ok_or(VclabError::DomainOutOfRange { index: k, count: row.len() })?;
    }
    Ok(AdversaryReport { real_prob: d.iter().sum::<f64>() / n, target_prob: target / n, segments: targets.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McdRow {
    #[serde(rename = "source_domain")]
    pub source: String,
    #[serde(rename = "target_domain")]
    pub target: String,
    #[serde(rename = "utterance_id")]
    pub utterance: String,
    pub mcd_db: f64,
}

/// Mean with a 1.96-standard-error half width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanCi { mean: f64::NAN, ci95: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        MeanCi { mean, ci95, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub source: String,
    pub target: String,
    pub mean_mcd_db: f64,
    pub ci95_db: f64,
    pub utterances: usize,
}

/// Per (source, target) pair, utterances weighted equally, in first-seen
/// order.
pub fn summarize(rows: &[McdRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.source.clone(), r.target.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(s, t)| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.source == s && r.target == t).map(|r| r.mcd_db).collect();
            let m = MeanCi::of(&vals);
            SummaryRow { source: s, target: t, mean_mcd_db: m.mean, ci95_db: m.ci95, utterances: m.n }
        })
        .collect()
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| VclabError::Invalid(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_mcd_csv(path: &Path, rows: &[McdRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv(path, rows)
}

/// `freq_hz,db` rows.
pub fn write_spectrum_csv(path: &Path, spec: &ModulationSpectrum) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        freq_hz: f64,
        db: f64,
    }
    let rows: Vec<Row> = spec.freqs_hz.iter().zip(&spec.db).map(|(&freq_hz, &db)| Row { freq_hz, db }).collect();
    write_csv(path, &rows)
}
