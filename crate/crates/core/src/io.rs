//! Dataset serialization: the binary system-matrix container, artifact
//! manifests with checksums, experiment configuration, and report writers.
//!
//! System-matrix files are a 4-byte magic `SMFG`, a little-endian u32 header
//! length, a JSON header (grid, frequency descriptors, version, endianness
//! tag, optional per-row SNR) and a payload of little-endian 32-bit floats,
//! interleaved (re, im), row-major over [K][ny][nx][2]. All writes go
//! through a temp-file-then-rename so partially written artifacts never
//! carry a valid name.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::dataset::Splits;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metric::MetricReport;
use crate::sm::{FreqDescriptor, SystemMatrix};

pub const SM_MAGIC: &[u8; 4] = b"SMFG";
pub const SM_FORMAT_VERSION: u32 = 1;

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// SHA-256 of a byte slice, hex-encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a file's contents, hex-encoded.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Serialize, Deserialize)]
struct SmHeader {
    format_version: u32,
    endian: String,
    grid: Grid,
    freqs: Vec<FreqDescriptor>,
    row_snr: Option<Vec<f64>>,
}

/// Serialize a system matrix to the binary container format.
pub fn sm_to_bytes(sm: &SystemMatrix) -> Result<Vec<u8>> {
    let header = SmHeader {
        format_version: SM_FORMAT_VERSION,
        endian: "little".into(),
        grid: *sm.grid(),
        freqs: sm.freqs().to_vec(),
        row_snr: sm.row_snr().map(|v| v.to_vec()),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + header_json.len() + sm.k() * sm.n() * 8);
    out.extend_from_slice(SM_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for k in 0..sm.k() {
        for n in 0..sm.n() {
            let z = sm.data()[[k, n]];
            out.extend_from_slice(&(z.re as f32).to_le_bytes());
            out.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse the binary container format.
pub fn sm_from_bytes(bytes: &[u8]) -> Result<SystemMatrix> {
    if bytes.len() < 8 || &bytes[0..4] != SM_MAGIC {
        return Err(Error::Format("not a system-matrix file (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Format("truncated header".into()));
    }
    let header: SmHeader = serde_json::from_slice(&bytes[8..8 + header_len])?;
    if header.format_version != SM_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {} (expected {SM_FORMAT_VERSION})",
            header.format_version
        )));
    }
    if header.endian != "little" {
        return Err(Error::Format(format!("unsupported endianness tag '{}'", header.endian)));
    }
    let k = header.freqs.len();
    let n = header.grid.n();
    let payload = &bytes[8 + header_len..];
    if payload.len() != k * n * 8 {
        return Err(Error::Format(format!(
            "truncated payload: {} bytes for {k}x{n} complex f32 matrix",
            payload.len()
        )));
    }
    let mut data = Array2::zeros((k, n));
    for kk in 0..k {
        for nn in 0..n {
            let off = (kk * n + nn) * 8;
            let re = f32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
            let im = f32::from_le_bytes(payload[off + 4..off + 8].try_into().unwrap());
            data[[kk, nn]] = Complex64::new(re as f64, im as f64);
        }
    }
    SystemMatrix::new(header.grid, header.freqs, data, header.row_snr)
}

/// Write a system matrix to disk (atomic).
pub fn save_sm(sm: &SystemMatrix, path: &Path) -> Result<()> {
    atomic_write(path, &sm_to_bytes(sm)?)
}

/// Read a system matrix from disk.
pub fn load_sm(path: &Path) -> Result<SystemMatrix> {
    sm_from_bytes(&fs::read(path)?)
}

/// File inventory entry of a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every pipeline artifact.
///
/// `parents` carries the SHA-256 of the upstream manifest files (a trained
/// model has both a dataset and a checkpoint lineage), forming a hash chain
/// from evaluation artifacts back to the simulation they came from. Split
/// disjointness is re-checked on every load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub scale_factors: Vec<u32>,
    pub splits: Option<Splits>,
    pub files: Vec<FileEntry>,
    pub parents: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl Manifest {
    pub fn new(kind: &str, config_hash: String, seed: u64) -> Self {
        Manifest {
            format_version: 1,
            kind: kind.into(),
            config_hash,
            seed,
            scale_factors: vec![],
            splits: None,
            files: vec![],
            parents: vec![],
        }
    }

    /// Record a file that lives under `dir`.
    pub fn add_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let sha = sha256_file(&dir.join(name))?;
        self.files.push(FileEntry { path: name.into(), sha256: sha });
        Ok(())
    }

    /// Chain to the manifest of the directory an input came from, when one
    /// exists next to it.
    pub fn chain_parent(&mut self, input_path: &Path) -> Result<()> {
        if let Some(dir) = input_path.parent() {
            let m = dir.join(MANIFEST_NAME);
            if m.exists() {
                self.parents.push(sha256_file(&m)?);
            }
        }
        Ok(())
    }

    /// Write as `manifest.json` under `dir` (atomic).
    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        atomic_write(&dir.join(MANIFEST_NAME), &json)
    }

    /// Load and verify: split disjointness always, file checksums against
    /// the directory the manifest sits in.
    pub fn load(path: &Path) -> Result<Manifest> {
        let m: Manifest = serde_json::from_slice(&fs::read(path)?)?;
        if m.format_version != 1 {
            return Err(Error::Format(format!("unsupported manifest version {}", m.format_version)));
        }
        if let Some(splits) = &m.splits {
            let max = splits.train.iter().chain(&splits.val).chain(&splits.test).max().copied().unwrap_or(0);
            splits.validate(max + 1)?;
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        for f in &m.files {
            let actual = sha256_file(&dir.join(&f.path))?;
            if actual != f.sha256 {
                return Err(Error::Format(format!(
                    "checksum mismatch for {}: manifest {} vs file {}",
                    f.path, f.sha256, actual
                )));
            }
        }
        Ok(m)
    }
}

/// Walk the manifest hash chain upward (breadth first over all parents,
/// trusting digests): returns the reachable manifests including `start`
/// itself. Parents whose manifests are not found in any search directory
/// are skipped.
pub fn manifest_chain(start: &Path, search_dirs: &[PathBuf]) -> Result<Vec<Manifest>> {
    let first = Manifest::load(start)?;
    let mut pending: Vec<String> = first.parents.clone();
    let mut chain = vec![first];
    let mut seen: Vec<String> = vec![];
    while let Some(digest) = pending.pop() {
        if seen.contains(&digest) {
            continue;
        }
        seen.push(digest.clone());
        for dir in search_dirs {
            let candidate = dir.join(MANIFEST_NAME);
            if candidate.exists() && sha256_file(&candidate)? == digest {
                let m = Manifest::load(&candidate)?;
                pending.extend(m.parents.iter().cloned());
                chain.push(m);
                break;
            }
        }
    }
    Ok(chain)
}

/// Rule mapping row indices to train/val/test (see [`Splits::by_stride`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRule {
    pub modulus: usize,
    pub val_residue: usize,
    pub test_residue: usize,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule { modulus: 8, val_residue: 3, test_residue: 7 }
    }
}

impl SplitRule {
    pub fn splits(&self, k: usize) -> Result<Splits> {
        Splits::by_stride(k, self.modulus, self.val_residue, self.test_residue)
    }
}

/// Everything one experiment needs, nested per module. Each subcommand reads
/// the sections it uses; unknown keys are rejected so typos surface early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sim: crate::sim::SimConfig,
    /// Added calibration noise (dB SNR) after simulation; None = noiseless.
    pub noise_snr_db: Option<f64>,
    pub scale: crate::sm::ScaleFactor,
    pub split: SplitRule,
    pub loss: crate::loss::LossConfig,
    pub model: crate::model::ModelConfig,
    pub train: crate::model::TrainConfig,
    pub cs: crate::baseline::CsConfig,
    pub recon: crate::recon::ReconConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Apply `--set dotted.path=value` overrides on the JSON representation.
    /// Values parse as JSON when possible, else as strings.
    pub fn with_overrides(self, overrides: &[(String, String)]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut root = serde_json::to_value(&self)?;
        for (key, raw) in overrides {
            let value: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            let mut node = &mut root;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                if i + 1 == parts.len() {
                    match node {
                        serde_json::Value::Object(map) => {
                            map.insert((*part).to_string(), value.clone());
                        }
                        _ => return Err(Error::Config(format!("cannot set '{key}': not an object"))),
                    }
                } else {
                    node = node
                        .get_mut(*part)
                        .ok_or_else(|| Error::Config(format!("unknown config path '{key}'")))?;
                }
            }
        }
        Ok(serde_json::from_value(root)?)
    }

    /// Canonical hash of the full configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

/// 8-bit binary PGM, max-normalized (all-zero images stay zero).
pub fn write_pgm(path: &Path, img: &Array2<f64>) -> Result<()> {
    let (ny, nx) = img.dim();
    let max = img.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for v in img.iter() {
        let byte = if max > 0.0 { ((v / max).clamp(0.0, 1.0) * 255.0).round() as u8 } else { 0 };
        out.push(byte);
    }
    atomic_write(path, &out)
}

/// Raw values as CSV rows.
pub fn write_csv_matrix(path: &Path, img: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in img.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Append-style JSON-lines report file (written in one atomic shot).
pub fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_sm, SimConfig};
    use tempfile::tempdir;

    fn small_sm() -> SystemMatrix {
        let cfg = SimConfig {
            grid: Grid::square(4, 32.0).unwrap(),
            samples_per_period: 60,
            bins_per_channel: 6,
            mixing_order: 6,
            ..SimConfig::default()
        };
        simulate_sm(&cfg).unwrap()
    }

    #[test]
    fn sm_round_trip_is_bitwise_on_f32_payload() {
        let sm = small_sm();
        let bytes = sm_to_bytes(&sm).unwrap();
        let back = sm_from_bytes(&bytes).unwrap();
        assert_eq!(back.k(), sm.k());
        // Every value survives exactly as its f32 rounding.
        for (a, b) in sm.data().iter().zip(back.data().iter()) {
            assert_eq!(a.re as f32, b.re as f32);
            assert_eq!((a.re as f32) as f64, b.re);
            assert_eq!((a.im as f32) as f64, b.im);
        }
        // A second serialization is byte-identical.
        assert_eq!(bytes, sm_to_bytes(&back).unwrap());
    }

    #[test]
    fn golden_single_pixel_file_layout() {
        // 1x1 grid, one row, value 1+2i. The payload must be the f32 pair
        // 1.0, 2.0 little-endian: 0000803f 00000040.
        let grid = Grid::square(1, 1.0).unwrap();
        let freqs = vec![FreqDescriptor { bin: 1, freq_hz: 250.0, channel: 0 }];
        let data = Array2::from_elem((1, 1), Complex64::new(1.0, 2.0));
        let sm = SystemMatrix::new(grid, freqs, data, None).unwrap();
        let bytes = sm_to_bytes(&sm).unwrap();
        assert_eq!(&bytes[0..4], b"SMFG");
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[8..8 + header_len]).unwrap();
        let expected_header = "{\"format_version\":1,\"endian\":\"little\",\
             \"grid\":{\"nx\":1,\"ny\":1,\"fov_x\":1.0,\"fov_y\":1.0},\
             \"freqs\":[{\"bin\":1,\"freq_hz\":250.0,\"channel\":0}],\"row_snr\":null}";
        assert_eq!(header, expected_header);
        assert_eq!(hex::encode(&bytes[8 + header_len..]), "0000803f00000040");
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let sm = small_sm();
        let mut bytes = sm_to_bytes(&sm).unwrap();
        // Truncated payload.
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(sm_from_bytes(&bytes), Err(Error::Format(_))));
        // Bad magic.
        let mut bytes = sm_to_bytes(&sm).unwrap();
        bytes[0] = b'X';
        assert!(matches!(sm_from_bytes(&bytes), Err(Error::Format(_))));
        // Version bump.
        let good = sm_to_bytes(&sm).unwrap();
        let header_len = u32::from_le_bytes(good[4..8].try_into().unwrap()) as usize;
        let tampered_header = std::str::from_utf8(&good[8..8 + header_len])
            .unwrap()
            .replace("\"format_version\":1", "\"format_version\":9");
        let mut tampered = good[0..4].to_vec();
        tampered.extend_from_slice(&(tampered_header.len() as u32).to_le_bytes());
        tampered.extend_from_slice(tampered_header.as_bytes());
        tampered.extend_from_slice(&good[8 + header_len..]);
        assert!(matches!(sm_from_bytes(&tampered), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_checksums_and_splits_are_verified() {
        let dir = tempdir().unwrap();
        let sm = small_sm();
        save_sm(&sm, &dir.path().join("sm.smf")).unwrap();
        let mut m = Manifest::new("dataset", "cafe".into(), 7);
        m.add_file(dir.path(), "sm.smf").unwrap();
        m.splits = Some(Splits { train: vec![0, 1, 2], val: vec![3], test: vec![4, 5] });
        m.write(dir.path()).unwrap();
        let loaded = Manifest::load(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(loaded, m);
        // Tampering with the file breaks the checksum.
        std::fs::write(dir.path().join("sm.smf"), b"junk").unwrap();
        assert!(Manifest::load(&dir.path().join(MANIFEST_NAME)).is_err());
        // Overlapping splits are rejected at load time.
        let mut bad = m.clone();
        bad.files.clear();
        bad.splits = Some(Splits { train: vec![0, 1], val: vec![1], test: vec![] });
        bad.write(dir.path()).unwrap();
        assert!(Manifest::load(&dir.path().join(MANIFEST_NAME)).is_err());
    }

    #[test]
    fn config_overrides_follow_dotted_paths() {
        let cfg = ExperimentConfig::default();
        let out = cfg
            .clone()
            .with_overrides(&[
                ("sim.gradient_x".into(), "3.5".into()),
                ("train.loss_name".into(), "l1".into()),
                ("scale".into(), "8".into()),
            ])
            .unwrap();
        assert_eq!(out.sim.gradient_x, 3.5);
        assert_eq!(out.train.loss_name, "l1");
        assert_eq!(out.scale.value(), 8);
        assert!(cfg.clone().with_overrides(&[("nope.x".into(), "1".into())]).is_err());
        // Invalid values surface as config errors, not silent defaults.
        assert!(cfg.with_overrides(&[("scale".into(), "3".into())]).is_err());
    }

    #[test]
    fn pgm_is_max_normalized() {
        let dir = tempdir().unwrap();
        let img = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64);
        let path = dir.path().join("x.pgm");
        write_pgm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes[bytes.len() - 1], 255);
        assert_eq!(bytes[bytes.len() - 6], 0);
    }
}
