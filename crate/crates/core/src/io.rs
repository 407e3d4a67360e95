//! File formats.
//!
//! Matrices use a small binary container: the 8-byte magic `LSRMAT01`, then
//! `n` and `d` as little-endian `u32`, then the `n * d` entries in row-major
//! order as little-endian `f64`. Instances are JSON documents that refer to
//! their matrix by the SHA-256 of its encoding, so two instances built on
//! the same design provably share it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linops::norm_inf;
use crate::model::{Ensemble, MeasurementMatrix, ModelKind, NoiseVector, RecoveryInstance, SparseVector};

pub const MATRIX_MAGIC: &[u8; 8] = b"LSRMAT01";
const HEADER_LEN: usize = 16;
pub const MATRIX_EXTENSION: &str = "lsrm";
pub const INSTANCE_VERSION: &str = "linfsr-instance-v1";

pub fn encode_matrix(x: &DMatrix<f64>) -> Result<Vec<u8>> {
    let (n, d) = x.shape();
    let n32 = u32::try_from(n).map_err(|_| Error::invalid("row count exceeds u32"))?;
    let d32 = u32::try_from(d).map_err(|_| Error::invalid("column count exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * d);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for i in 0..n {
        for j in 0..d {
            out.extend_from_slice(&x[(i, j)].to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse the binary container. Rejects bad magic, truncated or trailing
/// data, empty shapes and non-finite entries.
pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("matrix file shorter than its header"));
    }
    if &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::format("bad matrix magic"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if n == 0 || d == 0 {
        return Err(Error::format("matrix dimensions must be positive"));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::format("matrix dimensions overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::format(format!(
            "matrix body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let mut vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let v = vals.next().expect("length checked");
            if !v.is_finite() {
                return Err(Error::format(format!("non-finite entry at ({i}, {j})")));
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

pub fn write_matrix(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    fs::write(path, encode_matrix(x)?)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    decode_matrix(&fs::read(path)?)
}

/// Comma-separated rows, full round-trip precision.
pub fn write_matrix_csv<W: Write>(x: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in x.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `x` under its content hash inside `dir`; returns the file name.
/// An existing file with that name is verified rather than rewritten.
pub fn store_matrix(dir: &Path, x: &DMatrix<f64>) -> Result<(String, String)> {
    let bytes = encode_matrix(x)?;
    let digest = sha256_hex(&bytes);
    let name = format!("{digest}.{MATRIX_EXTENSION}");
    let path = dir.join(&name);
    if path.exists() {
        if sha256_hex(&fs::read(&path)?) != digest {
            return Err(Error::format(format!("{} exists with different contents", path.display())));
        }
    } else {
        fs::write(&path, &bytes)?;
    }
    Ok((name, digest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRef {
    pub file: String,
    pub sha256: String,
    pub ensemble: Ensemble,
    pub seed: Option<u64>,
    pub scale_variance: f64,
}

/// On-disk form of a [`RecoveryInstance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub version: String,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub model: ModelKind,
    pub matrix: MatrixRef,
    pub y: Vec<f64>,
    pub truth: SparseVector,
    pub noise: NoiseVector,
}

impl InstanceDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != INSTANCE_VERSION {
            return Err(Error::format(format!("unsupported instance version `{}`", self.version)));
        }
        if self.y.len() != self.n || self.noise.len() != self.n {
            return Err(Error::format("observation or noise length does not match n"));
        }
        if self.truth.dim() != self.d {
            return Err(Error::format("signal length does not match d"));
        }
        if self.truth.budget() != self.k {
            return Err(Error::format("signal budget does not match k"));
        }
        self.truth.validate()?;
        self.noise.validate()?;
        let hex_ok = self.matrix.sha256.len() == 64
            && self.matrix.sha256.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if !hex_ok {
            return Err(Error::format("matrix digest must be 64 lowercase hex characters"));
        }
        if self.matrix.file.contains('/') || self.matrix.file.contains('\\') || self.matrix.file.starts_with('.') {
            return Err(Error::format("matrix file must be a plain file name"));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("observations must be finite"));
        }
        Ok(())
    }
}

/// Write the instance and its matrix into `dir`; returns the instance path.
pub fn save_instance(dir: &Path, name: &str, inst: &RecoveryInstance) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (file, sha256) = store_matrix(dir, inst.x.matrix())?;
    let (n, d) = inst.x.matrix().shape();
    let doc = InstanceDoc {
        version: INSTANCE_VERSION.to_string(),
        n,
        d,
        k: inst.truth.budget(),
        model: inst.model,
        matrix: MatrixRef {
            file,
            sha256,
            ensemble: inst.x.ensemble(),
            seed: inst.x.seed(),
            scale_variance: inst.x.scale_variance(),
        },
        y: inst.y.clone(),
        truth: inst.truth.clone(),
        noise: inst.noise.clone(),
    };
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    Ok(path)
}

/// Load an instance and the matrix it references, verifying the digest and
/// that `y = X truth + noise` to roundoff.
pub fn load_instance(path: &Path) -> Result<RecoveryInstance> {
    let doc = InstanceDoc::parse(&fs::read_to_string(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&doc.matrix.file))?;
    if sha256_hex(&bytes) != doc.matrix.sha256 {
        return Err(Error::format("matrix digest mismatch"));
    }
    let data = decode_matrix(&bytes)?;
    if data.shape() != (doc.n, doc.d) {
        return Err(Error::format("matrix shape does not match instance header"));
    }
    let x = MeasurementMatrix::from_parts(data, doc.matrix.ensemble, doc.matrix.seed, doc.matrix.scale_variance);
    let inst = RecoveryInstance {
        x,
        y: doc.y,
        truth: doc.truth,
        noise: doc.noise,
        model: doc.model,
    };
    if inst.residual_inf() > 1e-10 * (1.0 + norm_inf(&inst.y)) {
        return Err(Error::format("observations are inconsistent with signal and noise"));
    }
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_instance, random_sparse_signal, sample_ensemble, Dims};

    #[test]
    fn binary_round_trip_is_exact() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -0.0, 2.5, 1e-300, -7.0, 3.0]);
        let bytes = encode_matrix(&x).unwrap();
        assert_eq!(&bytes[..8], b"LSRMAT01");
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        // row-major: the second stored value is x[(0, 1)]
        assert_eq!(&bytes[24..32], &(-0.0f64).to_le_bytes());
        assert_eq!(decode_matrix(&bytes).unwrap(), x);
    }

    #[test]
    fn decoder_rejects_malformed_input() {
        let good = encode_matrix(&DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(decode_matrix(&good[..10]).is_err());
        assert!(decode_matrix(&good[..good.len() - 1]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_matrix(&extra).is_err());
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(decode_matrix(&magic).is_err());
        let mut nan = good.clone();
        nan[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_matrix(&nan).is_err());
        let mut huge = good;
        huge[8..16].copy_from_slice(&[255; 8]);
        assert!(decode_matrix(&huge).is_err());
    }

    #[test]
    fn csv_export() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -2.0, 3.0]);
        let mut buf = Vec::new();
        write_matrix_csv(&x, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0.1\n-2,3\n");
    }

    #[test]
    fn instance_round_trip_and_shared_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let x = sample_ensemble(Dims::new(20, 30, 3).unwrap(), Ensemble::GaussianScaled, 4).unwrap();
        let truth = random_sparse_signal(30, 3, 1.0, 5).unwrap();
        let noise = NoiseVector::gaussian(20, 0.1, 6).unwrap();
        let inst = build_instance(x.clone(), truth, noise, ModelKind::Oblivious).unwrap();
        let p1 = save_instance(dir.path(), "a", &inst).unwrap();
        let other = build_instance(x, SparseVector::zeros(30, 3), NoiseVector::zero(20), ModelKind::Adaptive).unwrap();
        let p2 = save_instance(dir.path(), "b", &other).unwrap();
        let back = load_instance(&p1).unwrap();
        assert_eq!(back.y, inst.y);
        assert_eq!(back.truth, inst.truth);
        assert_eq!(back.x, inst.x);
        let d1 = InstanceDoc::parse(&fs::read_to_string(p1).unwrap()).unwrap();
        let d2 = InstanceDoc::parse(&fs::read_to_string(p2).unwrap()).unwrap();
        assert_eq!(d1.matrix.file, d2.matrix.file);
        let mats = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == MATRIX_EXTENSION))
            .count();
        assert_eq!(mats, 1);
    }

    #[test]
    fn tampered_matrix_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let x = MeasurementMatrix::explicit(DMatrix::identity(3, 3));
        let inst = build_instance(x, SparseVector::zeros(3, 1), NoiseVector::zero(3), ModelKind::Oblivious).unwrap();
        let p = save_instance(dir.path(), "i", &inst).unwrap();
        let doc = InstanceDoc::parse(&fs::read_to_string(&p).unwrap()).unwrap();
        let mpath = dir.path().join(&doc.matrix.file);
        write_matrix(&mpath, &DMatrix::from_element(3, 3, 2.0)).unwrap();
        assert!(load_instance(&p).is_err());
    }
}
