use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DomainCorpus, FeatureSequence};
use crate::error::{Result, VclabError};
use crate::util::{read_file, write_atomic, Reader};

const MAGIC: &[u8; 4] = b"VCF1";
const VERSION: u32 = 1;
const HAS_F0: u32 = 1;
const HAS_MASK: u32 = 2;

fn bad(detail: impl Into<String>) -> VclabError {
    VclabError::Format { what: "VCF1 file", detail: detail.into() }
}

/// Serializes a sequence: header, frame-major f32 data, then optional f0
/// and voiced mask.
pub fn vcf1_to_bytes(x: &FeatureSequence) -> Vec<u8> {
    let (q, n) = x.data.dim();
    let mut flags = 0;
    if x.f0.is_some() {
        flags |= HAS_F0;
    }
    if x.voiced.is_some() {
        flags |= HAS_MASK;
    }
    let mut out = Vec::with_capacity(20 + 4 * q * n + 5 * n);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, q as u32, n as u32, flags] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in 0..n {
        for qi in 0..q {
            out.extend_from_slice(&(x.data[[qi, t]] as f32).to_le_bytes());
        }
    }
    if let Some(f0) = &x.f0 {
        for &f in f0 {
            out.extend_from_slice(&(f as f32).to_le_bytes());
        }
    }
    if let Some(mask) = &x.voiced {
        out.extend(mask.iter().map(|&v| v as u8));
    }
    out
}

pub fn vcf1_from_bytes(bytes: &[u8], frame_shift_ms: f64) -> Result<FeatureSequence> {
    let mut r = Reader::new(bytes, "VCF1 file");
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let q = r.u32()? as usize;
    let n = r.u32()? as usize;
    let flags = r.u32()?;
    if flags & !(HAS_F0 | HAS_MASK) != 0 {
        return Err(bad(format!("unknown flags {flags:#x}")));
    }
    let mut data = Array2::zeros((q, n));
    for t in 0..n {
        for qi in 0..q {
            data[[qi, t]] = r.f32()? as f64;
        }
    }
    let f0 = if flags & HAS_F0 != 0 { Some((0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?) } else { None };
    let voiced = if flags & HAS_MASK != 0 {
        let raw = r.take(n)?;
        if let Some(b) = raw.iter().find(|&&b| b > 1) {
            return Err(bad(format!("mask byte {b}")));
        }
        Some(raw.iter().map(|&b| b == 1).collect())
    } else {
        None
    };
    r.finish()?;
    let x = FeatureSequence { data, frame_shift_ms, voiced, f0 };
    x.validate()?;
    Ok(x)
}

pub fn write_vcf1(path: &Path, x: &FeatureSequence) -> Result<()> {
    write_atomic(path, &vcf1_to_bytes(x))
}

pub fn read_vcf1(path: &Path, frame_shift_ms: f64) -> Result<FeatureSequence> {
    vcf1_from_bytes(&read_file(path)?, frame_shift_ms)
}

/// Corpus listing: domain names and feature files relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frame_shift_ms: f64,
    pub domains: Vec<ManifestDomain>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestDomain {
    pub name: String,
    pub files: Vec<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| VclabError::Format { what: "corpus manifest", detail: e.to_string() })
    }
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

/// Reads every listed file and computes per-domain statistics.
pub fn load_corpus(manifest_path: &Path) -> Result<DomainCorpus> {
    let m = Manifest::load(manifest_path)?;
    let base = base_dir(manifest_path);
    let mut names = Vec::new();
    let mut utts = Vec::new();
    for d in &m.domains {
        names.push(d.name.clone());
        utts.push(d.files.iter().map(|f| read_vcf1(&base.join(f), m.frame_shift_ms)).collect::<Result<Vec<_>>>()?);
    }
    DomainCorpus::new(names, utts, m.frame_shift_ms)
}

/// Writes `dir/<domain>/<domain>_<index>.vcf` files and `dir/manifest.json`.
/// Returns the manifest path.
pub fn save_corpus(corpus: &DomainCorpus, dir: &Path) -> Result<PathBuf> {
    let mut domains = Vec::new();
    for (name, utts) in corpus.names.iter().zip(&corpus.utterances) {
        let mut files = Vec::new();
        for (i, u) in utts.iter().enumerate() {
            let rel = PathBuf::from(name).join(format!("{name}_{i:04}.vcf"));
            write_vcf1(&dir.join(&rel), u)?;
            files.push(rel);
        }
        domains.push(ManifestDomain { name: name.clone(), files });
    }
    let manifest = Manifest { frame_shift_ms: corpus.frame_shift_ms, domains };
    let path = dir.join("manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}
