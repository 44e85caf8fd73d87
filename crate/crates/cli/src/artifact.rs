//! Self-describing binary container for reduced bases and interpolation data.
//!
//! Layout: the magic `ELLPAR\0\x01`, the manifest length as little-endian
//! `u64`, the manifest as JSON, then every array column-major as
//! little-endian `f64` in manifest order. The manifest records shapes,
//! the inner product each array is orthonormal in, the hash of the
//! model-defining configuration and a SHA-256 of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use ellpar_core::fom::FullOrderModel;
use ellpar_core::rom::{DeimInterpolant, EnlargedBasis, NestedRom, ReducedBasis};
use ellpar_core::estimators::EstimatorCalibration;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"ELLPAR\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Gram matrix the columns are orthonormal in (`S_y`, `S_q`), if any.
    pub inner_product: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub config_hash: String,
    pub payload_sha256: String,
    pub arrays: Vec<ArrayEntry>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactContainer {
    pub kind: String,
    pub config_hash: String,
    pub metadata: BTreeMap<String, String>,
    pub arrays: Vec<(ArrayEntry, DMatrix<f64>)>,
}

impl ArtifactContainer {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Self { kind: kind.into(), config_hash: config_hash.into(), metadata: BTreeMap::new(), arrays: Vec::new() }
    }

    pub fn push(&mut self, name: &str, inner_product: Option<&str>, m: &DMatrix<f64>) {
        let entry = ArrayEntry { name: name.into(), rows: m.nrows(), cols: m.ncols(), inner_product: inner_product.map(Into::into) };
        self.arrays.push((entry, m.clone()));
    }

    pub fn array(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.arrays.iter().find(|(e, _)| e.name == name).map(|(_, m)| m)
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.arrays.iter().map(|(_, m)| m.len() * 8).sum());
        for (_, m) in &self.arrays {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let manifest = Manifest {
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            config_hash: self.config_hash.clone(),
            payload_sha256: hex(&Sha256::digest(&payload)),
            arrays: self.arrays.iter().map(|(e, _)| e.clone()).collect(),
            metadata: self.metadata.clone(),
        };
        let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + text.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(&text);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses and validates a container. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: String| CliError::artifact(path, reason);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(fail("not an artifact container (bad magic or truncated header)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if len > body.len() {
            return Err(fail(format!("truncated manifest: header announces {len} bytes, {} present", body.len())));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..len]).map_err(|e| fail(format!("malformed manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(fail(format!("unsupported format version {}", manifest.version)));
        }
        let payload = &body[len..];
        let expected: usize = manifest
            .arrays
            .iter()
            .map(|e| e.rows.checked_mul(e.cols).and_then(|n| n.checked_mul(8)))
            .try_fold(0usize, |acc, n| n.and_then(|n| acc.checked_add(n)))
            .ok_or_else(|| fail("array shapes overflow".into()))?;
        if payload.len() != expected {
            return Err(fail(format!("payload has {} bytes, manifest shapes need {expected}", payload.len())));
        }
        if hex(&Sha256::digest(payload)) != manifest.payload_sha256 {
            return Err(fail("payload checksum mismatch".into()));
        }
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        let mut offset = 0;
        for e in manifest.arrays {
            let n = e.rows * e.cols;
            let data = payload[offset..offset + 8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
            offset += 8 * n;
            let m = DMatrix::from_iterator(e.rows, e.cols, data);
            arrays.push((e, m));
        }
        Ok(Self { kind: manifest.kind, config_hash: manifest.config_hash, metadata: manifest.metadata, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    /// Loads a container and, when `expected_hash` is given, refuses one
    /// built for a different model.
    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let c = Self::from_bytes(&bytes, path)?;
        if let Some(h) = expected_hash {
            if c.config_hash != h {
                return Err(CliError::artifact(
                    path,
                    format!("built for a different model configuration (hash {} , expected {h})", c.config_hash),
                ));
            }
        }
        Ok(c)
    }
}

pub const GREEDY_KIND: &str = "nested-reduced-model";

/// Stores the nested bases, the interpolation data and the calibration.
pub fn pack_rom(rom: &NestedRom, calibration: &EstimatorCalibration, config_hash: &str) -> ArtifactContainer {
    let mut c = ArtifactContainer::new(GREEDY_KIND, config_hash);
    c.metadata.insert("l_y".into(), rom.l_y().to_string());
    c.metadata.insert("l_q".into(), rom.l_q().to_string());
    c.push("psi_y", Some("S_y"), &rom.basis.psi_y);
    c.push("psi_q", Some("S_q"), &rom.basis.psi_q);
    c.push("psi_f", None, &rom.deim.psi_f);
    c.push("deim_points", None, &DMatrix::from_iterator(rom.deim.points.len(), 1, rom.deim.points.iter().map(|&p| p as f64)));
    c.push("pt_psi_inv", None, &rom.deim.pt_psi_inv);
    let cal = [calibration.sigma_y, calibration.sigma_q, calibration.training_size as f64];
    c.push("calibration", None, &DMatrix::from_column_slice(3, 1, &cal));
    c
}

/// Inverse of [`pack_rom`]; the reduced operators are reassembled from `model`.
pub fn unpack_rom(c: &ArtifactContainer, model: &FullOrderModel, path: &Path) -> Result<(NestedRom, EstimatorCalibration)> {
    let fail = |reason: String| CliError::artifact(path, reason);
    if c.kind != GREEDY_KIND {
        return Err(fail(format!("expected a {GREEDY_KIND} container, found '{}'", c.kind)));
    }
    let get = |name: &str| c.array(name).ok_or_else(|| fail(format!("missing array '{name}'")));
    let meta = |name: &str| -> Result<usize> {
        c.metadata.get(name).and_then(|v| v.parse().ok()).ok_or_else(|| fail(format!("missing or invalid metadata '{name}'")))
    };
    let (psi_y, psi_q) = (get("psi_y")?, get("psi_q")?);
    let (l_y, l_q) = (meta("l_y")?, meta("l_q")?);
    if psi_y.nrows() != model.dim_v() || psi_q.nrows() != model.dim_v0() || l_y > psi_y.ncols() || l_q > psi_q.ncols() {
        return Err(fail("basis shapes do not fit the model".into()));
    }
    let small = ReducedBasis { psi_y: psi_y.columns(0, l_y).into_owned(), psi_q: psi_q.columns(0, l_q).into_owned() };
    let extra_y = psi_y.columns(l_y, psi_y.ncols() - l_y).into_owned();
    let extra_q = psi_q.columns(l_q, psi_q.ncols() - l_q).into_owned();
    let psi_f = get("psi_f")?.clone();
    let points: Vec<usize> = get("deim_points")?.iter().map(|&p| p as usize).collect();
    let pt_psi_inv = get("pt_psi_inv")?.clone();
    if psi_f.nrows() != model.dim_v0() || points.len() != psi_f.ncols() || points.iter().any(|&p| p >= model.dim_v0()) {
        return Err(fail("interpolation data do not fit the model".into()));
    }
    let deim = DeimInterpolant { psi_f, points, pt_psi_inv };
    let cal = get("calibration")?;
    if cal.len() != 3 {
        return Err(fail("calibration must hold three values".into()));
    }
    let calibration = EstimatorCalibration::new(cal[0], cal[1], cal[2] as usize);
    Ok((NestedRom::build(model, EnlargedBasis::new(&small, &extra_y, &extra_q), deim), calibration))
}
