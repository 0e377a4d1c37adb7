use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Result, VclabError};
use crate::features::FeatureSequence;

pub const MOD_WINDOW: usize = 128;
pub const MOD_HOP: usize = 64;
const FLOOR_DB: f64 = -120.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ModulationSpectrum {
    pub freqs_hz: Vec<f64>,
    pub db: Vec<f64>,
    /// Utterances long enough to contribute.
    pub utterances: usize,
}

/// Average log-power spectrum of the trajectory of dimension `q` (0-based).
///
/// Each trajectory is mean-removed and cut into Hann-windowed segments of
/// [`MOD_WINDOW`] frames with hop [`MOD_HOP`] (the last one zero-padded);
/// periodograms are averaged over segments, then over utterances, and
/// reported in dB with a -120 dB floor.
pub fn modulation_spectrum(seqs: &[FeatureSequence], q: usize) -> Result<ModulationSpectrum> {
    let first = seqs.first().ok_or_else(|| VclabError::Invalid("no sequences".into()))?;
    let shift_s = first.frame_shift_ms / 1000.0;
    let bins = MOD_WINDOW / 2 + 1;
    let window: Vec<f64> = (0..MOD_WINDOW)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (MOD_WINDOW - 1) as f64).cos())
        .collect();
    let norm: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(MOD_WINDOW);

    let mut total = vec![0.0; bins];
    let mut used = 0;
    for (u, s) in seqs.iter().enumerate() {
        if q >= s.dim() {
            return Err(VclabError::Shape(format!("dimension {q} out of range for Q={}", s.dim())));
        }
        let n = s.len();
        if n < MOD_WINDOW {
            log::warn!("utterance {u} has {n} frames, shorter than the {MOD_WINDOW}-frame window; skipped");
            continue;
        }
        let traj: Vec<f64> = s.data.row(q).to_vec();
        let mean = traj.iter().sum::<f64>() / n as f64;
        let segments = (n - MOD_WINDOW).div_ceil(MOD_HOP) + 1;
        let mut acc = vec![0.0; bins];
        for seg in 0..segments {
            let start = seg * MOD_HOP;
            let mut buf: Vec<Complex<f64>> = (0..MOD_WINDOW)
                .map(|i| {
                    let v = traj.get(start + i).map_or(0.0, |x| x - mean);
                    Complex::new(v * window[i], 0.0)
                })
                .collect();
            fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr() / norm;
            }
        }
        for (t, a) in total.iter_mut().zip(&acc) {
            *t += a / segments as f64;
        }
        used += 1;
    }
    if used == 0 {
        return Err(VclabError::Invalid(format!("no trajectory reaches {MOD_WINDOW} frames")));
    }
    let db = total
        .iter()
        .map(|p| {
            let p = p / used as f64;
            if p > 0.0 {
                (10.0 * p.log10()).max(FLOOR_DB)
            } else {
                FLOOR_DB
            }
        })
        .collect();
    let freqs_hz = (0..bins).map(|b| b as f64 / (MOD_WINDOW as f64 * shift_s)).collect();
    Ok(ModulationSpectrum { freqs_hz, db, utterances: used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn seq(f: impl Fn(usize) -> f64, n: usize) -> FeatureSequence {
        FeatureSequence::new(Array2::from_shape_fn((2, n), |(q, t)| if q == 1 { f(t) } else { 0.0 }), 5.0).unwrap()
    }

    #[test]
    fn constant_hits_floor() {
        let s = modulation_spectrum(&[seq(|_| 3.0, 200)], 1).unwrap();
        assert!(s.db.iter().all(|&d| d == -120.0));
    }

    #[test]
    fn sinusoid_peaks_at_its_bin() {
        let bin = 10;
        let s = modulation_spectrum(&[seq(|t| (2.0 * std::f64::consts::PI * bin as f64 * t as f64 / 128.0).sin(), 256)], 1).unwrap();
        let peak = s.db.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, bin);
        assert!((s.freqs_hz[bin] - bin as f64 / (128.0 * 0.005)).abs() < 1e-9);
    }

    #[test]
    fn duplicate_utterances_average_to_one() {
        let a = seq(|t| (t as f64 * 0.3).sin() + 0.1 * (t as f64).cos(), 300);
        let one = modulation_spectrum(std::slice::from_ref(&a), 1).unwrap();
        let two = modulation_spectrum(&[a.clone(), a], 1).unwrap();
        for (x, y) in one.db.iter().zip(&two.db) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn short_utterances_skipped() {
        let s = modulation_spectrum(&[seq(|t| t as f64, 50), seq(|t| (t as f64).sin(), 130)], 1).unwrap();
        assert_eq!(s.utterances, 1);
    }
}
