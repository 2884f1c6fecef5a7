//! Minimal NIfTI-1 volume codec.
//!
//! Supports the single-file (`.nii`, magic `n+1`) layout with optional
//! gzip compression (`.nii.gz`), 3D volumes, both endiannesses, the
//! common scalar datatypes, and `scl_slope`/`scl_inter` intensity
//! scaling. That covers BraTS-style inputs; anything fancier (4D time
//! series, extensions with payloads) is rejected explicitly.

use crate::error::{Result, VmfError};
use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array3, ShapeBuilder};
use std::io::{Read, Write};
use std::path::Path;

const HEADER_SIZE: usize = 348;
/// Header + the 4-byte extension flag; data starts here when writing.
const DATA_OFFSET: usize = 352;

/// Scalar datatypes this codec reads and writes (NIfTI-1 codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    U8,
    I16,
    U16,
    I32,
    F32,
    F64,
}

impl NiftiDtype {
    fn code(self) -> i16 {
        match self {
            NiftiDtype::U8 => 2,
            NiftiDtype::I16 => 4,
            NiftiDtype::I32 => 8,
            NiftiDtype::F32 => 16,
            NiftiDtype::F64 => 64,
            NiftiDtype::U16 => 512,
        }
    }

    fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(NiftiDtype::U8),
            4 => Some(NiftiDtype::I16),
            8 => Some(NiftiDtype::I32),
            16 => Some(NiftiDtype::F32),
            64 => Some(NiftiDtype::F64),
            512 => Some(NiftiDtype::U16),
            _ => None,
        }
    }

    fn bytes(self) -> usize {
        match self {
            NiftiDtype::U8 => 1,
            NiftiDtype::I16 | NiftiDtype::U16 => 2,
            NiftiDtype::I32 | NiftiDtype::F32 => 4,
            NiftiDtype::F64 => 8,
        }
    }
}

fn nifti_err(path: &Path, message: impl Into<String>) -> VmfError {
    VmfError::Nifti {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn read_raw(path: &Path) -> Result<Vec<u8>> {
    let file = std::fs::File::open(path).map_err(|e| nifti_err(path, e.to_string()))?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| nifti_err(path, format!("gzip: {e}")))?;
    } else {
        std::io::BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| nifti_err(path, e.to_string()))?;
    }
    Ok(bytes)
}

/// Reads a 3D volume as `Array3<f64>` indexed `[x, y, z]` (the file's
/// voxel order), with intensity scaling applied.
pub fn read_nifti(path: &Path) -> Result<Array3<f64>> {
    let bytes = read_raw(path)?;
    if bytes.len() < DATA_OFFSET {
        return Err(nifti_err(path, "file shorter than the NIfTI-1 header"));
    }
    // endianness is detected from sizeof_hdr, which must decode to 348
    let le = LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32;
    let be = BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32;
    if !le && !be {
        return Err(nifti_err(path, "sizeof_hdr is not 348 in either byte order"));
    }
    let rd_i16 = |off: usize| -> i16 {
        if le {
            LittleEndian::read_i16(&bytes[off..off + 2])
        } else {
            BigEndian::read_i16(&bytes[off..off + 2])
        }
    };
    let rd_f32 = |off: usize| -> f32 {
        if le {
            LittleEndian::read_f32(&bytes[off..off + 4])
        } else {
            BigEndian::read_f32(&bytes[off..off + 4])
        }
    };

    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(nifti_err(path, format!("unrecognized magic {magic:?}")));
    }

    let ndim = rd_i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(nifti_err(path, format!("invalid dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 7];
    for (i, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = rd_i16(40 + 2 * (i + 1));
        if v < 1 {
            return Err(nifti_err(path, format!("non-positive dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    if dims[3..].iter().any(|&d| d != 1) {
        return Err(nifti_err(path, "only 3D volumes are supported"));
    }
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);

    let dtype = NiftiDtype::from_code(rd_i16(70))
        .ok_or_else(|| nifti_err(path, format!("unsupported datatype {}", rd_i16(70))))?;
    let vox_offset = rd_f32(108);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
        return Err(nifti_err(path, format!("invalid vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let count = nx * ny * nz;
    let need = offset + count * dtype.bytes();
    if bytes.len() < need {
        return Err(nifti_err(
            path,
            format!("truncated data: need {need} bytes, file has {}", bytes.len()),
        ));
    }

    let slope = rd_f32(112) as f64;
    let inter = rd_f32(116) as f64;
    let scale = slope != 0.0 && (slope != 1.0 || inter != 0.0);

    let data = &bytes[offset..need];
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let at = i * dtype.bytes();
        let chunk = &data[at..at + dtype.bytes()];
        let v = match (dtype, le) {
            (NiftiDtype::U8, _) => f64::from(chunk[0]),
            (NiftiDtype::I16, true) => f64::from(LittleEndian::read_i16(chunk)),
            (NiftiDtype::I16, false) => f64::from(BigEndian::read_i16(chunk)),
            (NiftiDtype::U16, true) => f64::from(LittleEndian::read_u16(chunk)),
            (NiftiDtype::U16, false) => f64::from(BigEndian::read_u16(chunk)),
            (NiftiDtype::I32, true) => f64::from(LittleEndian::read_i32(chunk)),
            (NiftiDtype::I32, false) => f64::from(BigEndian::read_i32(chunk)),
            (NiftiDtype::F32, true) => f64::from(LittleEndian::read_f32(chunk)),
            (NiftiDtype::F32, false) => f64::from(BigEndian::read_f32(chunk)),
            (NiftiDtype::F64, true) => LittleEndian::read_f64(chunk),
            (NiftiDtype::F64, false) => BigEndian::read_f64(chunk),
        };
        values.push(if scale { v * slope + inter } else { v });
    }
    // NIfTI data is column-major: x varies fastest
    Array3::from_shape_vec((nx, ny, nz).f(), values)
        .map_err(|e| nifti_err(path, format!("shape: {e}")))
}

/// Writes a 3D volume (indexed `[x, y, z]`) as a single-file NIfTI-1
/// volume, gzip-compressed when the path ends in `.gz`. Values are cast
/// to `dtype` (rounded and saturated for integer types).
pub fn write_nifti(path: &Path, data: &Array3<f64>, dtype: NiftiDtype) -> Result<()> {
    let (nx, ny, nz) = data.dim();
    let mut header = vec![0u8; DATA_OFFSET];
    LittleEndian::write_i32(&mut header[0..4], HEADER_SIZE as i32);
    LittleEndian::write_i16(&mut header[40..42], 3);
    for (i, &d) in [nx, ny, nz].iter().enumerate() {
        if d == 0 || d > i16::MAX as usize {
            return Err(nifti_err(path, format!("dimension {d} not storable")));
        }
        LittleEndian::write_i16(&mut header[42 + 2 * i..44 + 2 * i], d as i16);
    }
    for i in 4..8 {
        LittleEndian::write_i16(&mut header[40 + 2 * i..42 + 2 * i], 1);
    }
    LittleEndian::write_i16(&mut header[70..72], dtype.code());
    LittleEndian::write_i16(&mut header[72..74], (dtype.bytes() * 8) as i16);
    // pixdim: unit spacing
    for i in 0..4 {
        LittleEndian::write_f32(&mut header[76 + 4 * i..80 + 4 * i], 1.0);
    }
    LittleEndian::write_f32(&mut header[108..112], DATA_OFFSET as f32);
    LittleEndian::write_f32(&mut header[112..116], 1.0); // scl_slope
    LittleEndian::write_f32(&mut header[116..120], 0.0); // scl_inter
    header[344..348].copy_from_slice(b"n+1\0");

    let mut payload = Vec::with_capacity(nx * ny * nz * dtype.bytes());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = data[[i, j, k]];
                match dtype {
                    NiftiDtype::U8 => payload.write_u8(v.round().clamp(0.0, 255.0) as u8)?,
                    NiftiDtype::I16 => payload.write_i16::<LittleEndian>(
                        v.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16,
                    )?,
                    NiftiDtype::U16 => payload.write_u16::<LittleEndian>(
                        v.round().clamp(0.0, f64::from(u16::MAX)) as u16,
                    )?,
                    NiftiDtype::I32 => payload.write_i32::<LittleEndian>(
                        v.round().clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32,
                    )?,
                    NiftiDtype::F32 => payload.write_f32::<LittleEndian>(v as f32)?,
                    NiftiDtype::F64 => payload.write_f64::<LittleEndian>(v)?,
                }
            }
        }
    }

    let file = std::fs::File::create(path).map_err(|e| nifti_err(path, e.to_string()))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::fast());
        enc.write_all(&header)?;
        enc.write_all(&payload)?;
        enc.finish()?;
    } else {
        let mut out = std::io::BufWriter::new(file);
        out.write_all(&header)?;
        out.write_all(&payload)?;
        out.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(nx: usize, ny: usize, nz: usize) -> Array3<f64> {
        Array3::from_shape_fn((nx, ny, nz), |(i, j, k)| {
            (i + 10 * j + 100 * k) as f64
        })
    }

    #[test]
    fn round_trip_all_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ramp(5, 4, 3);
        for dtype in [
            NiftiDtype::U8,
            NiftiDtype::I16,
            NiftiDtype::U16,
            NiftiDtype::I32,
            NiftiDtype::F32,
            NiftiDtype::F64,
        ] {
            let path = dir.path().join(format!("t{}.nii", dtype.code()));
            write_nifti(&path, &vol, dtype).unwrap();
            let back = read_nifti(&path).unwrap();
            assert_eq!(back.dim(), (5, 4, 3));
            // the ramp's max (334) exceeds u8 range; saturation expected
            for (idx, (&a, &b)) in vol.iter().zip(back.iter()).enumerate() {
                let expected = if dtype == NiftiDtype::U8 { a.min(255.0) } else { a };
                assert_eq!(b, expected, "dtype {dtype:?} voxel {idx}");
            }
        }
    }

    #[test]
    fn gzip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ramp(6, 6, 2);
        let path = dir.path().join("t.nii.gz");
        write_nifti(&path, &vol, NiftiDtype::F64).unwrap();
        let back = read_nifti(&path).unwrap();
        assert_eq!(vol, back);
        // compressed file should actually be gzip (magic 1f 8b)
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..2], &[0x1f, 0x8b]);
    }

    #[test]
    fn voxel_order_is_column_major() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ramp(3, 2, 2);
        let path = dir.path().join("order.nii");
        write_nifti(&path, &vol, NiftiDtype::F64).unwrap();
        let raw = std::fs::read(&path).unwrap();
        // first stored voxel is (0,0,0), second is (1,0,0)
        assert_eq!(LittleEndian::read_f64(&raw[352..360]), vol[[0, 0, 0]]);
        assert_eq!(LittleEndian::read_f64(&raw[360..368]), vol[[1, 0, 0]]);
    }

    #[test]
    fn intensity_scaling_is_applied() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ramp(4, 3, 2);
        let path = dir.path().join("scaled.nii");
        write_nifti(&path, &vol, NiftiDtype::F32).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        LittleEndian::write_f32(&mut raw[112..116], 2.0); // scl_slope
        LittleEndian::write_f32(&mut raw[116..120], 5.0); // scl_inter
        std::fs::write(&path, raw).unwrap();
        let back = read_nifti(&path).unwrap();
        for (&a, &b) in vol.iter().zip(back.iter()) {
            assert_eq!(b, 2.0 * a + 5.0);
        }
    }

    #[test]
    fn big_endian_files_are_read() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ramp(3, 3, 2);
        let path = dir.path().join("be.nii");
        // hand-build a big-endian file
        let mut bytes = vec![0u8; 352];
        BigEndian::write_i32(&mut bytes[0..4], 348);
        BigEndian::write_i16(&mut bytes[40..42], 3);
        BigEndian::write_i16(&mut bytes[42..44], 3);
        BigEndian::write_i16(&mut bytes[44..46], 3);
        BigEndian::write_i16(&mut bytes[46..48], 2);
        BigEndian::write_i16(&mut bytes[70..72], 16); // f32
        BigEndian::write_i16(&mut bytes[72..74], 32);
        BigEndian::write_f32(&mut bytes[108..112], 352.0);
        bytes[344..348].copy_from_slice(b"n+1\0");
        for k in 0..2 {
            for j in 0..3 {
                for i in 0..3 {
                    let mut buf = [0u8; 4];
                    BigEndian::write_f32(&mut buf, vol[[i, j, k]] as f32);
                    bytes.extend_from_slice(&buf);
                }
            }
        }
        std::fs::write(&path, bytes).unwrap();
        let back = read_nifti(&path).unwrap();
        assert_eq!(vol, back);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ramp(3, 3, 2);

        let path = dir.path().join("short.nii");
        std::fs::write(&path, [0u8; 100]).unwrap();
        assert!(read_nifti(&path).is_err());

        let path = dir.path().join("magic.nii");
        write_nifti(&path, &vol, NiftiDtype::F32).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        raw[344..348].copy_from_slice(b"oops");
        std::fs::write(&path, &raw).unwrap();
        assert!(read_nifti(&path).is_err());

        let path = dir.path().join("trunc.nii");
        write_nifti(&path, &vol, NiftiDtype::F64).unwrap();
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() - 16]).unwrap();
        match read_nifti(&path) {
            Err(VmfError::Nifti { message, .. }) => {
                assert!(message.contains("truncated"), "{message}")
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn four_dimensional_volumes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ramp(3, 3, 2);
        let path = dir.path().join("4d.nii");
        write_nifti(&path, &vol, NiftiDtype::F32).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        LittleEndian::write_i16(&mut raw[40..42], 4); // dim[0] = 4
        LittleEndian::write_i16(&mut raw[48..50], 2); // dim[4] = 2
        std::fs::write(&path, &raw).unwrap();
        assert!(read_nifti(&path).is_err());
    }
}
