//! Objective evaluation: mel-cepstral distortion along DTW paths,
//! modulation spectra, adversary statistics and a Gaussian frame classifier.

mod classifier;
mod modspec;
mod report;

pub use classifier::GaussianClassifier;
pub use modspec::{modulation_spectrum, ModulationSpectrum, MOD_HOP, MOD_WINDOW};
pub use report::{
    augmented_report, separate_report, summarize, write_mcd_csv, write_spectrum_csv, write_summary_csv, AdversaryReport,
    MeanCi, McdRow, SummaryRow,
};

use std::f64::consts::LN_10;

use ndarray::ArrayView1;

use crate::error::{Result, VclabError};
use crate::features::FeatureSequence;

/// `(10 / ln 10) sqrt(2 sum_{q>=2} (a_q - b_q)^2)`; the first coefficient
/// is excluded.
pub fn mcd_frame(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(VclabError::Shape(format!("frame sizes {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(VclabError::Shape(format!("MCD needs Q >= 2, got {}", a.len())));
    }
    let sum: f64 = a.iter().zip(b).skip(1).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(10.0 / LN_10 * (2.0 * sum).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtwResult {
    /// Total frame MCD along the path divided by the path length.
    pub mean_db: f64,
    pub total_db: f64,
    /// 0-based `(converted, target)` frame pairs from `(0, 0)` to the ends.
    pub path: Vec<(usize, usize)>,
}

/// DTW-aligned mean MCD with steps (1,0), (0,1), (1,1).
///
/// The path minimizes the total MCD; among equal totals the shorter path
/// wins, and remaining ties prefer the diagonal, then advancing the
/// converted index.
pub fn dtw_mcd(converted: &FeatureSequence, target: &FeatureSequence) -> Result<DtwResult> {
    if converted.dim() != target.dim() {
        return Err(VclabError::Shape(format!("Q mismatch: {} vs {}", converted.dim(), target.dim())));
    }
    let (n, m) = (converted.len(), target.len());
    if n == 0 || m == 0 {
        return Err(VclabError::Shape("empty sequence".into()));
    }
    let mut dist = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            dist[i * m + j] = mcd_frame(converted.data.column(i), target.data.column(j))?;
        }
    }
    // (total, length) per cell, compared lexicographically.
    let mut acc = vec![(f64::INFINITY, usize::MAX); n * m];
    let mut back = vec![0u8; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = dist[i * m + j];
            if i == 0 && j == 0 {
                acc[0] = (d, 1);
                continue;
            }
            // candidates in tie-break order: diagonal, converted, target
            let cands = [(i > 0 && j > 0, 0u8, i.wrapping_sub(1), j.wrapping_sub(1)), (i > 0, 1, i.wrapping_sub(1), j), (j > 0, 2, i, j.wrapping_sub(1))];
            let mut best: Option<((f64, usize), u8)> = None;
            for (ok, tag, pi, pj) in cands {
                if !ok {
                    continue;
                }
                let c = acc[pi * m + pj];
                if best.is_none_or(|(b, _)| c.0 < b.0 || (c.0 == b.0 && c.1 < b.1)) {
                    best = Some((c, tag));
                }
            }
            let ((t, l), tag) = best.expect("cell has a predecessor");
            acc[i * m + j] = (t + d, l + 1);
            back[i * m + j] = tag;
        }
    }
    let (total, len) = acc[n * m - 1];
    let mut path = Vec::with_capacity(len);
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        path.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        match back[i * m + j] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
    }
    path.reverse();
    Ok(DtwResult { mean_db: total / len as f64, total_db: total, path })
}
