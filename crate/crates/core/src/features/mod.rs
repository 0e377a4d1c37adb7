//! Feature sequences, per-domain statistics, normalization and conversion
//! post-processing.

mod io;
mod synth;

pub use io::{load_corpus, read_vcf1, save_corpus, vcf1_from_bytes, vcf1_to_bytes, write_vcf1, Manifest, ManifestDomain};
pub use synth::{synth_toy_corpus, ToyCorpus, ToyOptions};

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VclabError};

/// A `Q x N` matrix of per-frame feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub data: Array2<f64>,
    pub frame_shift_ms: f64,
    pub voiced: Option<Vec<bool>>,
    /// Hz; 0 on unvoiced frames.
    pub f0: Option<Vec<f64>>,
}

impl FeatureSequence {
    pub fn new(data: Array2<f64>, frame_shift_ms: f64) -> Result<Self> {
        let seq = FeatureSequence { data, frame_shift_ms, voiced: None, f0: None };
        seq.validate()?;
        Ok(seq)
    }

    /// Attaches an F0 track and derives the voiced mask from `f0 > 0`.
    pub fn with_f0(mut self, f0: Vec<f64>) -> Result<Self> {
        self.voiced = Some(f0.iter().map(|&v| v > 0.0).collect());
        self.f0 = Some(f0);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (q, n) = self.data.dim();
        if q == 0 || n == 0 {
            return Err(VclabError::Shape(format!("empty feature sequence {q}x{n}")));
        }
        if let Some(m) = &self.voiced {
            if m.len() != n {
                return Err(VclabError::Shape(format!("voiced mask has {} entries for {n} frames", m.len())));
            }
        }
        if let Some(f0) = &self.f0 {
            if f0.len() != n {
                return Err(VclabError::Shape(format!("f0 has {} entries for {n} frames", f0.len())));
            }
            if let Some(&bad) = f0.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(VclabError::Invalid(format!("invalid f0 value {bad}")));
            }
            if let Some(m) = &self.voiced {
                if f0.iter().zip(m).any(|(&f, &v)| (f == 0.0) == v) {
                    return Err(VclabError::Invalid("f0 must be 0 exactly on unvoiced frames".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// Frames without a mask count as voiced.
    pub fn is_voiced(&self, n: usize) -> bool {
        self.voiced.as_ref().is_none_or(|m| m[n])
    }

    pub fn voiced_frames(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&n| self.is_voiced(n))
    }

    fn with_data(&self, data: Array2<f64>) -> Self {
        FeatureSequence { data, ..self.clone() }
    }
}

/// Per-dimension mean/std over voiced frames, plus log-F0 mean/std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub psi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub mu_logf0: Option<f64>,
    pub sigma_logf0: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Population mean and standard deviation over the voiced frames of
/// `utterances`.
pub fn compute_stats(utterances: &[FeatureSequence]) -> Result<DomainStats> {
    let q = utterances.first().map_or(0, FeatureSequence::dim);
    if utterances.iter().any(|u| u.dim() != q) {
        return Err(VclabError::Shape("utterances differ in feature dimension".into()));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); q];
    let mut log_f0 = Vec::new();
    for u in utterances {
        for n in u.voiced_frames() {
            for (qi, col) in columns.iter_mut().enumerate() {
                col.push(u.data[[qi, n]]);
            }
            if let Some(f) = u.f0.as_ref().map(|f| f[n]).filter(|&f| f > 0.0) {
                log_f0.push(f.ln());
            }
        }
    }
    let found = columns.first().map_or(0, Vec::len);
    if found < 2 {
        return Err(VclabError::TooFewVoicedFrames { found });
    }
    let mut psi = Vec::with_capacity(q);
    let mut zeta = Vec::with_capacity(q);
    for (qi, col) in columns.iter().enumerate() {
        let (m, s) = mean_std(col);
        if s == 0.0 {
            return Err(VclabError::DegenerateStats { q: qi });
        }
        psi.push(m);
        zeta.push(s);
    }
    let (mu_logf0, sigma_logf0) = if log_f0.len() >= 2 {
        let (m, s) = mean_std(&log_f0);
        if s == 0.0 {
            return Err(VclabError::Invalid("log-F0 has zero variance".into()));
        }
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(DomainStats { psi, zeta, mu_logf0, sigma_logf0 })
}

fn check_dim(x: &FeatureSequence, stats: &DomainStats) -> Result<()> {
    if x.dim() != stats.psi.len() {
        return Err(VclabError::Shape(format!("sequence has Q={} but stats have Q={}", x.dim(), stats.psi.len())));
    }
    Ok(())
}

/// `(x - psi) / zeta` on every frame.
pub fn normalize(x: &FeatureSequence, stats: &DomainStats) -> Result<FeatureSequence> {
    check_dim(x, stats)?;
    let mut data = x.data.clone();
    for (q, mut row) in data.axis_iter_mut(Axis(0)).enumerate() {
        row.mapv_inplace(|v| (v - stats.psi[q]) / stats.zeta[q]);
    }
    Ok(x.with_data(data))
}

pub fn denormalize(x: &FeatureSequence, stats: &DomainStats) -> Result<FeatureSequence> {
    check_dim(x, stats)?;
    let mut data = x.data.clone();
    for (q, mut row) in data.axis_iter_mut(Axis(0)).enumerate() {
        row.mapv_inplace(|v| v * stats.zeta[q] + stats.psi[q]);
    }
    Ok(x.with_data(data))
}

/// Affinely maps each dimension so its voiced-frame mean and std equal the
/// target's. Dimensions with zero variance are passed through unchanged.
pub fn convert_postprocess(y_hat: &FeatureSequence, target: &DomainStats) -> Result<FeatureSequence> {
    check_dim(y_hat, target)?;
    let voiced: Vec<usize> = y_hat.voiced_frames().collect();
    if voiced.is_empty() {
        return Err(VclabError::TooFewVoicedFrames { found: 0 });
    }
    let mut data = y_hat.data.clone();
    for (q, mut row) in data.axis_iter_mut(Axis(0)).enumerate() {
        let vals: Vec<f64> = voiced.iter().map(|&n| row[n]).collect();
        let (m, s) = mean_std(&vals);
        if s == 0.0 {
            log::warn!("dimension {q} of the generated sequence is constant; left unadjusted");
            continue;
        }
        let (psi, zeta) = (target.psi[q], target.zeta[q]);
        row.mapv_inplace(|v| (v - m) / s * zeta + psi);
    }
    Ok(y_hat.with_data(data))
}

fn log_f0_stats(stats: &DomainStats) -> Result<(f64, f64)> {
    match (stats.mu_logf0, stats.sigma_logf0) {
        (Some(m), Some(s)) => Ok((m, s)),
        _ => Err(VclabError::Invalid("domain statistics carry no log-F0 statistics".into())),
    }
}

/// Log-Gaussian normalized F0 transform; unvoiced (0) frames stay 0.
pub fn convert_f0(f0: &[f64], source: &DomainStats, target: &DomainStats) -> Result<Vec<f64>> {
    let (mu_s, sigma_s) = log_f0_stats(source)?;
    let (mu_t, sigma_t) = log_f0_stats(target)?;
    f0.iter()
        .map(|&f| {
            if f < 0.0 || !f.is_finite() {
                Err(VclabError::Invalid(format!("invalid f0 value {f}")))
            } else if f == 0.0 {
                Ok(0.0)
            } else {
                Ok(((f.ln() - mu_s) * sigma_t / sigma_s + mu_t).exp())
            }
        })
        .collect()
}

/// Pads the time axis to a multiple of `m` by repeating the last frame.
/// Returns the padded sequence and the original length.
pub fn pad_to_multiple(x: &FeatureSequence, m: usize) -> (FeatureSequence, usize) {
    let m = m.max(1);
    let n = x.len();
    let target = n.div_ceil(m) * m;
    if target == n {
        return (x.clone(), n);
    }
    let mut data = Array2::zeros((x.dim(), target));
    data.slice_mut(s![.., ..n]).assign(&x.data);
    let last = x.data.column(n - 1).to_owned();
    for t in n..target {
        data.column_mut(t).assign(&last);
    }
    let padded = FeatureSequence {
        data,
        frame_shift_ms: x.frame_shift_ms,
        voiced: x.voiced.as_ref().map(|v| extend(v, target)),
        f0: x.f0.as_ref().map(|v| extend(v, target)),
    };
    (padded, n)
}

fn extend<V: Copy>(v: &[V], len: usize) -> Vec<V> {
    let mut v = v.to_vec();
    v.resize(len, v[v.len() - 1]);
    v
}

/// Keeps the first `n` frames.
pub fn crop(x: &FeatureSequence, n: usize) -> FeatureSequence {
    let n = n.min(x.len());
    FeatureSequence {
        data: x.data.slice(s![.., ..n]).to_owned(),
        frame_shift_ms: x.frame_shift_ms,
        voiced: x.voiced.as_ref().map(|v| v[..n].to_vec()),
        f0: x.f0.as_ref().map(|v| v[..n].to_vec()),
    }
}

/// Training utterances and statistics of K domains.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainCorpus {
    pub names: Vec<String>,
    pub utterances: Vec<Vec<FeatureSequence>>,
    pub stats: Vec<DomainStats>,
    pub frame_shift_ms: f64,
}

impl DomainCorpus {
    /// Computes every domain's statistics from exactly `utterances`.
    pub fn new(names: Vec<String>, utterances: Vec<Vec<FeatureSequence>>, frame_shift_ms: f64) -> Result<Self> {
        if names.len() != utterances.len() {
            return Err(VclabError::Invalid("one name per domain required".into()));
        }
        for (name, utts) in names.iter().zip(&utterances) {
            if utts.is_empty() {
                return Err(VclabError::Invalid(format!("domain `{name}` has no utterances")));
            }
        }
        let q = utterances[0][0].dim();
        if utterances.iter().flatten().any(|u| u.dim() != q) {
            return Err(VclabError::Shape("utterances differ in feature dimension".into()));
        }
        let stats = utterances.iter().map(|u| compute_stats(u)).collect::<Result<_>>()?;
        Ok(DomainCorpus { names, utterances, stats, frame_shift_ms })
    }

    pub fn num_domains(&self) -> usize {
        self.names.len()
    }

    pub fn dim(&self) -> usize {
        self.stats[0].psi.len()
    }

    /// Every utterance of domain `k`, normalized with that domain's stats.
    pub fn normalized(&self, k: usize) -> Result<Vec<FeatureSequence>> {
        self.utterances[k].iter().map(|u| normalize(u, &self.stats[k])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn seq(data: Array2<f64>) -> FeatureSequence {
        FeatureSequence::new(data, 5.0).unwrap()
    }

    #[test]
    fn stats_of_two_frames() {
        let st = compute_stats(&[seq(array![[0.0, 2.0]])]).unwrap();
        assert_eq!((st.psi[0], st.zeta[0]), (1.0, 1.0));
    }

    #[test]
    fn unvoiced_only_is_rejected() {
        let x = seq(array![[1.0, 2.0]]).with_f0(vec![0.0, 0.0]).unwrap();
        assert!(matches!(compute_stats(&[x]), Err(VclabError::TooFewVoicedFrames { found: 0 })));
    }

    #[test]
    fn zero_variance_names_dimension() {
        let x = seq(array![[1.0, 2.0], [3.0, 3.0]]);
        assert!(matches!(compute_stats(&[x]), Err(VclabError::DegenerateStats { q: 1 })));
    }

    #[test]
    fn normalize_hand_example() {
        let st = DomainStats { psi: vec![0.0], zeta: vec![2.0], mu_logf0: None, sigma_logf0: None };
        assert_eq!(normalize(&seq(array![[4.0]]), &st).unwrap().data, array![[2.0]]);
    }

    #[test]
    fn postprocess_hand_example() {
        let st = DomainStats { psi: vec![5.0], zeta: vec![2.0], mu_logf0: None, sigma_logf0: None };
        assert_eq!(convert_postprocess(&seq(array![[0.0, 2.0]]), &st).unwrap().data, array![[3.0, 7.0]]);
    }

    #[test]
    fn f0_doubling() {
        let src = DomainStats { psi: vec![], zeta: vec![], mu_logf0: Some(100f64.ln()), sigma_logf0: Some(1.0) };
        let trg = DomainStats { mu_logf0: Some(200f64.ln()), ..src.clone() };
        let out = convert_f0(&[100.0, 0.0], &src, &trg).unwrap();
        assert!((out[0] - 200.0).abs() < 1e-9);
        assert_eq!(out[1], 0.0);
        assert!(convert_f0(&[-1.0], &src, &trg).is_err());
    }

    #[test]
    fn pad_replicates_last_frame() {
        let data = Array2::from_shape_fn((2, 30), |(q, n)| (q * 100 + n) as f64);
        let x = seq(data);
        let (p, n) = pad_to_multiple(&x, 4);
        assert_eq!((p.len(), n), (32, 30));
        assert_eq!(p.data.column(30), x.data.column(29));
        assert_eq!(p.data.column(31), x.data.column(29));
        assert_eq!(crop(&p, n), x);
        let (same, _) = pad_to_multiple(&crop(&p, 32), 4);
        assert_eq!(same.len(), 32);
    }

    #[test]
    fn f0_must_vanish_exactly_when_unvoiced() {
        let mut x = seq(array![[1.0, 2.0]]);
        x.voiced = Some(vec![true, true]);
        x.f0 = Some(vec![100.0, 0.0]);
        assert!(x.validate().is_err());
    }
}
