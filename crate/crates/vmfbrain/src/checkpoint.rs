//! Versioned binary checkpoints.
//!
//! Two little-endian formats live here:
//!
//! * **kernel bank** (`VMFK`): format version, kernel count J, feature
//!   dimension D, the shared concentration, and the J×D matrix in
//!   row-major order.
//! * **model** (`VMFC`): format version, a content hash of the
//!   architecture (for compatibility checking at load time), the
//!   architecture itself, every named network parameter, and the
//!   embedded kernel bank.
//!
//! Loading rebuilds a fresh [`ModelBundle`] from the stored
//! architecture and overwrites its parameters, so a round trip
//! reproduces forward passes bit-for-bit.

use crate::error::{Result, VmfError};
use crate::hash::fnv1a_64;
use crate::model::{ArchConfig, ModelBundle};
use crate::vmf::KernelBank;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayD, IxDyn};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const BANK_MAGIC: &[u8; 4] = b"VMFK";
const MODEL_MAGIC: &[u8; 4] = b"VMFC";
const BANK_VERSION: u32 = 1;
const MODEL_VERSION: u32 = 1;

/// Content hash of an architecture, used to detect incompatible
/// checkpoint/config pairs before any tensor is touched.
pub fn arch_hash(arch: &ArchConfig) -> Result<u64> {
    let bytes = serde_json::to_vec(arch)
        .map_err(|e| VmfError::Checkpoint(format!("serializing architecture: {e}")))?;
    Ok(fnv1a_64(&bytes))
}

fn corrupt(message: impl Into<String>) -> VmfError {
    VmfError::Checkpoint(message.into())
}

fn write_bank_body<W: Write>(w: &mut W, bank: &KernelBank) -> Result<()> {
    let (j, d) = bank.kernels.dim();
    w.write_u32::<LittleEndian>(j as u32)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    w.write_f64::<LittleEndian>(bank.concentration)?;
    for &v in bank.kernels.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_bank_body<R: Read>(r: &mut R) -> Result<KernelBank> {
    let j = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let concentration = r.read_f64::<LittleEndian>()?;
    let mut values = Vec::with_capacity(j * d);
    for _ in 0..j * d {
        values.push(r.read_f64::<LittleEndian>()?);
    }
    let kernels = Array2::from_shape_vec((j, d), values)
        .map_err(|e| corrupt(format!("kernel matrix shape: {e}")))?;
    let bank = KernelBank {
        kernels,
        concentration,
    };
    bank.validate()?;
    Ok(bank)
}

/// Writes a kernel bank checkpoint.
pub fn save_kernel_bank(path: &Path, bank: &KernelBank) -> Result<()> {
    bank.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BANK_MAGIC)?;
    w.write_u32::<LittleEndian>(BANK_VERSION)?;
    write_bank_body(&mut w, bank)?;
    w.flush()?;
    Ok(())
}

/// Reads a kernel bank checkpoint written by [`save_kernel_bank`].
pub fn load_kernel_bank(path: &Path) -> Result<KernelBank> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BANK_MAGIC {
        return Err(corrupt(format!("bad kernel bank magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != BANK_VERSION {
        return Err(corrupt(format!("unsupported kernel bank version {version}")));
    }
    let bank = read_bank_body(&mut r)?;
    expect_eof(&mut r, "kernel bank")?;
    Ok(bank)
}

fn expect_eof<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(corrupt(format!("trailing bytes after {what} payload")));
    }
    Ok(())
}

fn write_param<W: Write>(w: &mut W, name: &str, value: &ArrayD<f64>) -> Result<()> {
    let name_bytes = name.as_bytes();
    w.write_u32::<LittleEndian>(name_bytes.len() as u32)?;
    w.write_all(name_bytes)?;
    w.write_u32::<LittleEndian>(value.ndim() as u32)?;
    for &dim in value.shape() {
        w.write_u32::<LittleEndian>(dim as u32)?;
    }
    for &v in value.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_param<R: Read>(r: &mut R) -> Result<(String, ArrayD<f64>)> {
    let name_len = r.read_u32::<LittleEndian>()? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name =
        String::from_utf8(name_bytes).map_err(|e| corrupt(format!("parameter name: {e}")))?;
    let ndim = r.read_u32::<LittleEndian>()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let len = shape.iter().product::<usize>();
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(r.read_f64::<LittleEndian>()?);
    }
    let value = ArrayD::from_shape_vec(IxDyn(&shape), values)
        .map_err(|e| corrupt(format!("parameter {name} shape: {e}")))?;
    Ok((name, value))
}

/// Writes a full model checkpoint: architecture, every network
/// parameter, and the kernel bank.
pub fn save_model(path: &Path, bundle: &ModelBundle) -> Result<()> {
    let arch_json = serde_json::to_vec(&bundle.arch)
        .map_err(|e| VmfError::Checkpoint(format!("serializing architecture: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(MODEL_VERSION)?;
    w.write_u64::<LittleEndian>(fnv1a_64(&arch_json))?;
    w.write_u32::<LittleEndian>(arch_json.len() as u32)?;
    w.write_all(&arch_json)?;
    let params = bundle.params();
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for p in params {
        write_param(&mut w, &p.name, &p.value)?;
    }
    write_bank_body(&mut w, &bundle.bank())?;
    w.flush()?;
    Ok(())
}

/// Reads a model checkpoint written by [`save_model`] and rebuilds the
/// bundle. The stored architecture hash must match the stored
/// architecture bytes; every parameter must match the rebuilt bundle by
/// name and shape.
pub fn load_model(path: &Path) -> Result<ModelBundle> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(corrupt(format!("bad model magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MODEL_VERSION {
        return Err(corrupt(format!("unsupported model version {version}")));
    }
    let stored_hash = r.read_u64::<LittleEndian>()?;
    let json_len = r.read_u32::<LittleEndian>()? as usize;
    let mut arch_json = vec![0u8; json_len];
    r.read_exact(&mut arch_json)?;
    let actual_hash = fnv1a_64(&arch_json);
    if actual_hash != stored_hash {
        return Err(VmfError::ConfigHashMismatch {
            stored: stored_hash,
            actual: actual_hash,
        });
    }
    let arch: ArchConfig = serde_json::from_slice(&arch_json)
        .map_err(|e| corrupt(format!("architecture payload: {e}")))?;
    arch.validate()?;
    let mut bundle = ModelBundle::new(&arch, 0)?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    {
        let targets = bundle.params_mut();
        if count != targets.len() {
            return Err(corrupt(format!(
                "checkpoint holds {count} parameters, architecture needs {}",
                targets.len()
            )));
        }
        for target in targets {
            let (name, value) = read_param(&mut r)?;
            if name != target.name {
                return Err(corrupt(format!(
                    "parameter order mismatch: found {name}, expected {}",
                    target.name
                )));
            }
            if value.shape() != target.value.shape() {
                return Err(corrupt(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    target.value.shape()
                )));
            }
            target.value = value;
        }
    }
    let bank = read_bank_body(&mut r)?;
    expect_eof(&mut r, "model")?;
    bundle.set_bank(&bank)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::{Seek, SeekFrom};

    fn random_bank(seed: u64) -> KernelBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kernels = Array2::from_shape_fn((5, 7), |_| rng.random_range(-1.0..1.0));
        for mut row in kernels.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        KernelBank {
            kernels,
            concentration: 30.0,
        }
    }

    #[test]
    fn kernel_bank_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.vmfk");
        let bank = random_bank(11);
        save_kernel_bank(&path, &bank).unwrap();
        let loaded = load_kernel_bank(&path).unwrap();
        assert_eq!(loaded.kernels, bank.kernels);
        assert_eq!(loaded.concentration, bank.concentration);
    }

    #[test]
    fn kernel_bank_rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.vmfk");
        save_kernel_bank(&path, &random_bank(12)).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad_magic.vmfk");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(load_kernel_bank(&bad).is_err());

        let len = std::fs::metadata(&path).unwrap().len();
        let truncated = dir.path().join("short.vmfk");
        std::fs::copy(&path, &truncated).unwrap();
        let f = std::fs::OpenOptions::new()
            .write(true)
            .open(&truncated)
            .unwrap();
        f.set_len(len - 8).unwrap();
        assert!(load_kernel_bank(&truncated).is_err());
    }

    #[test]
    fn model_round_trip_reproduces_forward_pass_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vmfc");
        let arch = ArchConfig::reduced(2);
        let bundle = ModelBundle::new(&arch, 99).unwrap();
        save_model(&path, &bundle).unwrap();
        let loaded = load_model(&path).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let images = Array4::from_shape_fn((2, 4, arch.input_size, arch.input_size), |_| {
            rng.random_range(0.0..1.0)
        });
        let a = bundle.forward(&images).unwrap();
        let b = loaded.forward(&images).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.presence, b.presence);
    }

    #[test]
    fn model_load_detects_architecture_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vmfc");
        let bundle = ModelBundle::new(&ArchConfig::reduced(2), 7).unwrap();
        save_model(&path, &bundle).unwrap();

        // flip one byte inside the architecture payload
        let mut bytes = std::fs::read(&path).unwrap();
        let payload_start = 4 + 4 + 8 + 4;
        bytes[payload_start] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        match load_model(&path) {
            Err(VmfError::ConfigHashMismatch { .. }) => {}
            other => panic!("expected hash mismatch, got {other:?}"),
        }
    }

    #[test]
    fn model_load_rejects_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vmfc");
        let bundle = ModelBundle::new(&ArchConfig::reduced(2), 7).unwrap();
        save_model(&path, &bundle).unwrap();
        let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        f.seek(SeekFrom::End(0)).unwrap();
        f.write_all(&[0u8]).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn arch_hash_distinguishes_architectures() {
        let a = arch_hash(&ArchConfig::reduced(2)).unwrap();
        let b = arch_hash(&ArchConfig::reduced(4)).unwrap();
        let a2 = arch_hash(&ArchConfig::reduced(2)).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }
}
