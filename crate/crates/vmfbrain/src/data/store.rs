//! Dataset persistence: a directory of per-volume binary files plus a
//! JSON manifest.
//!
//! The manifest records subject ids, splits, annotation ranges, the
//! generator spec and a content hash of that spec, so a loaded dataset
//! can be traced back to the exact generation parameters. Volume files
//! hold raw little-endian arrays behind a small validated header.

use super::synthetic::SyntheticSpec;
use super::{Split, VolumeRecord};
use crate::error::{Result, VmfError};
use crate::hash::fnv1a_64;
use crate::supervision::labels::TwoPointAnnotation;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const VOLUME_MAGIC: &[u8; 4] = b"VMFV";
const VOLUME_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-volume entry of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVolume {
    pub subject_id: String,
    pub split: Split,
    pub file: String,
    pub slice_count: usize,
    pub height: usize,
    pub width: usize,
    pub annotations: Vec<TwoPointAnnotation>,
}

/// Top-level dataset description stored as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    /// FNV-1a of the serialized spec, hex-encoded.
    pub spec_hash: String,
    pub spec: SyntheticSpec,
    pub volumes: Vec<ManifestVolume>,
}

fn spec_hash(spec: &SyntheticSpec) -> Result<String> {
    let bytes = serde_json::to_vec(spec)
        .map_err(|e| VmfError::Dataset(format!("serializing spec: {e}")))?;
    Ok(format!("{:#018x}", fnv1a_64(&bytes)))
}

/// Writes all volumes plus the manifest into `dir` (created if needed).
pub fn save_dataset(
    dir: &Path,
    volumes: &[VolumeRecord],
    spec: &SyntheticSpec,
) -> Result<DatasetManifest> {
    if volumes.is_empty() {
        return Err(VmfError::EmptyInput("no volumes to save".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(volumes.len());
    for volume in volumes {
        volume.validate()?;
        let (_, s, h, w) = volume.modalities.dim();
        let file = format!("{}.vol", volume.subject_id);
        write_volume_file(&dir.join(&file), volume)?;
        entries.push(ManifestVolume {
            subject_id: volume.subject_id.clone(),
            split: volume.split,
            file,
            slice_count: s,
            height: h,
            width: w,
            annotations: volume.annotations.clone(),
        });
    }
    let manifest = DatasetManifest {
        format_version: VOLUME_VERSION,
        seed: spec.seed,
        spec_hash: spec_hash(spec)?,
        spec: spec.clone(),
        volumes: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| VmfError::Dataset(format!("serializing manifest: {e}")))?;
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Loads a dataset directory, verifying the manifest's spec hash and
/// every volume file header.
pub fn load_dataset(dir: &Path) -> Result<(Vec<VolumeRecord>, DatasetManifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(VmfError::MissingArtifact(format!(
            "dataset manifest {}",
            manifest_path.display()
        )));
    }
    let json = std::fs::read_to_string(&manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_str(&json)
        .map_err(|e| VmfError::Dataset(format!("parsing manifest: {e}")))?;
    if manifest.format_version != VOLUME_VERSION {
        return Err(VmfError::Dataset(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    let expected = spec_hash(&manifest.spec)?;
    if expected != manifest.spec_hash {
        let stored = u64::from_str_radix(manifest.spec_hash.trim_start_matches("0x"), 16)
            .unwrap_or_default();
        let actual = u64::from_str_radix(expected.trim_start_matches("0x"), 16).unwrap_or_default();
        return Err(VmfError::ConfigHashMismatch { stored, actual });
    }
    let mut volumes = Vec::with_capacity(manifest.volumes.len());
    for entry in &manifest.volumes {
        let path = dir.join(&entry.file);
        if !path.exists() {
            return Err(VmfError::MissingArtifact(format!(
                "dataset volume {}",
                path.display()
            )));
        }
        let (modalities, mask) = read_volume_file(&path)?;
        let record = VolumeRecord {
            subject_id: entry.subject_id.clone(),
            split: entry.split,
            modalities,
            mask,
            annotations: entry.annotations.clone(),
        };
        record.validate()?;
        if record.mask.dim() != (entry.slice_count, entry.height, entry.width) {
            return Err(VmfError::DimensionMismatch {
                context: format!("volume file {}", entry.file),
                expected: format!(
                    "{}x{}x{}",
                    entry.slice_count, entry.height, entry.width
                ),
                actual: format!("{:?}", record.mask.dim()),
            });
        }
        volumes.push(record);
    }
    Ok((volumes, manifest))
}

fn write_volume_file(path: &Path, volume: &VolumeRecord) -> Result<()> {
    let (_, s, h, w) = volume.modalities.dim();
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(VOLUME_MAGIC)?;
    out.write_u32::<LittleEndian>(VOLUME_VERSION)?;
    out.write_u32::<LittleEndian>(s as u32)?;
    out.write_u32::<LittleEndian>(h as u32)?;
    out.write_u32::<LittleEndian>(w as u32)?;
    for &v in volume
        .modalities
        .as_slice()
        .expect("freshly generated modalities are standard layout")
    {
        out.write_f64::<LittleEndian>(v)?;
    }
    out.write_all(
        volume
            .mask
            .as_slice()
            .expect("freshly generated mask is standard layout"),
    )?;
    out.flush()?;
    Ok(())
}

fn read_volume_file(path: &Path) -> Result<(Array4<f64>, Array3<u8>)> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != VOLUME_MAGIC {
        return Err(VmfError::Dataset(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VOLUME_VERSION {
        return Err(VmfError::Dataset(format!(
            "{}: unsupported volume version {version}",
            path.display()
        )));
    }
    let s = input.read_u32::<LittleEndian>()? as usize;
    let h = input.read_u32::<LittleEndian>()? as usize;
    let w = input.read_u32::<LittleEndian>()? as usize;
    let voxels = s
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| VmfError::Dataset(format!("{}: header overflow", path.display())))?;
    let mut modalities = vec![0.0f64; 4 * voxels];
    input.read_f64_into::<LittleEndian>(&mut modalities)?;
    let mut mask = vec![0u8; voxels];
    input.read_exact(&mut mask)?;
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(VmfError::Dataset(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    let modalities = Array4::from_shape_vec((4, s, h, w), modalities)
        .map_err(|e| VmfError::Dataset(format!("{}: {e}", path.display())))?;
    let mask = Array3::from_shape_vec((s, h, w), mask)
        .map_err(|e| VmfError::Dataset(format!("{}: {e}", path.display())))?;
    Ok((modalities, mask))
}
