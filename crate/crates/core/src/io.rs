//! File formats: the binary tensor container, weight bundles, binary PPM
//! images, and the label palette.
//!
//! Tensor container layout (all integers little-endian):
//!
//! ```text
//! magic  "SGT1"        4 bytes
//! dtype  u32           1 = f32, 2 = f64
//! rank   u32
//! dims   u32 * rank
//! payload                row-major values, little-endian
//! ```
//!
//! A weight bundle is a JSON manifest (tensor name -> dtype, shape, byte
//! offset, plus the config hash) followed by the concatenated payloads.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigmaError};
use crate::model::{config_hash, SigmaConfig};
use crate::scalar::Scalar;
use crate::tensor::DenseArray;

pub const TENSOR_MAGIC: &[u8; 4] = b"SGT1";
pub const BUNDLE_MAGIC: &[u8; 4] = b"SGW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(SigmaError::Parse {
                offset: 4,
                detail: format!("unknown dtype code {other}"),
            }),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A tensor as read from disk, in either precision.
#[derive(Debug, Clone)]
pub enum AnyTensor {
    F32(DenseArray<f32>),
    F64(DenseArray<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> DenseArray<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

fn payload_bytes_f32(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn payload_bytes_f64(data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Serialize one tensor into the container format.
pub fn tensor_to_bytes(t: &AnyTensor) -> Vec<u8> {
    let (dtype, shape) = match t {
        AnyTensor::F32(a) => (Dtype::F32, a.shape()),
        AnyTensor::F64(a) => (Dtype::F64, a.shape()),
    };
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match t {
        AnyTensor::F32(a) => out.extend_from_slice(&payload_bytes_f32(a.data())),
        AnyTensor::F64(a) => out.extend_from_slice(&payload_bytes_f64(a.data())),
    }
    out
}

fn read_u32(bytes: &[u8], offset: &mut usize) -> Result<u32> {
    if *offset + 4 > bytes.len() {
        return Err(SigmaError::Parse {
            offset: *offset,
            detail: "unexpected end of tensor data".into(),
        });
    }
    let v = u32::from_le_bytes(bytes[*offset..*offset + 4].try_into().unwrap());
    *offset += 4;
    Ok(v)
}

/// Parse one tensor from the container format.
pub fn tensor_from_bytes(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(SigmaError::Parse {
            offset: 0,
            detail: "bad tensor magic (expected SGT1)".into(),
        });
    }
    let mut offset = 4usize;
    let dtype = Dtype::from_code(read_u32(bytes, &mut offset)?)?;
    let rank = read_u32(bytes, &mut offset)? as usize;
    if rank > 6 {
        return Err(SigmaError::Parse {
            offset: offset - 4,
            detail: format!("rank {rank} exceeds the supported maximum of 6"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(bytes, &mut offset)? as usize);
    }
    let n: usize = shape.iter().product();
    let expected = n * dtype.size();
    if bytes.len() - offset != expected {
        return Err(SigmaError::Parse {
            offset,
            detail: format!(
                "payload is {} bytes but shape {:?} as {:?} requires {}",
                bytes.len() - offset,
                shape,
                dtype,
                expected
            ),
        });
    }
    match dtype {
        Dtype::F32 => {
            let data: Vec<f32> = bytes[offset..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(AnyTensor::F32(DenseArray::new(shape, data)?))
        }
        Dtype::F64 => {
            let data: Vec<f64> = bytes[offset..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(AnyTensor::F64(DenseArray::new(shape, data)?))
        }
    }
}

pub fn write_tensor(path: &Path, t: &AnyTensor) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&tensor_to_bytes(t))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    tensor_from_bytes(&bytes)
}

// ---------------------------------------------------------------------------
// weight bundle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub config_hash: String,
    /// names in serialization order
    pub order: Vec<String>,
    pub tensors: HashMap<String, ManifestEntry>,
}

/// Write every (name, tensor) pair with a manifest binding it to `cfg`.
pub fn save_bundle<T: Scalar>(
    path: &Path,
    cfg: &SigmaConfig,
    tensors: &[(String, DenseArray<T>)],
    dtype: Dtype,
) -> Result<()> {
    let mut payload = Vec::new();
    let mut manifest = BundleManifest {
        config_hash: config_hash(cfg)?,
        order: Vec::with_capacity(tensors.len()),
        tensors: HashMap::with_capacity(tensors.len()),
    };
    for (name, t) in tensors {
        let offset = payload.len();
        match dtype {
            Dtype::F32 => payload.extend_from_slice(&payload_bytes_f32(t.cast::<f32>().data())),
            Dtype::F64 => payload.extend_from_slice(&payload_bytes_f64(t.cast::<f64>().data())),
        }
        if manifest
            .tensors
            .insert(
                name.clone(),
                ManifestEntry {
                    shape: t.shape().to_vec(),
                    dtype,
                    offset,
                },
            )
            .is_some()
        {
            return Err(SigmaError::config(format!(
                "duplicate tensor name '{name}' in bundle"
            )));
        }
        manifest.order.push(name.clone());
    }
    let manifest_json = serde_json::to_vec(&manifest)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(BUNDLE_MAGIC)?;
    f.write_all(&(manifest_json.len() as u32).to_le_bytes())?;
    f.write_all(&manifest_json)?;
    f.write_all(&payload)?;
    Ok(())
}

/// Load a bundle and verify it matches `cfg`: config hash, tensor names, and
/// per-tensor shapes all have to agree with the config's weight layout.
pub fn load_bundle<T: Scalar>(
    path: &Path,
    cfg: &SigmaConfig,
) -> Result<HashMap<String, DenseArray<T>>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != BUNDLE_MAGIC {
        return Err(SigmaError::Parse {
            offset: 0,
            detail: "bad bundle magic (expected SGW1)".into(),
        });
    }
    let manifest_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if 8 + manifest_len > bytes.len() {
        return Err(SigmaError::Parse {
            offset: 8,
            detail: "manifest extends past end of file".into(),
        });
    }
    let manifest: BundleManifest = serde_json::from_slice(&bytes[8..8 + manifest_len])?;
    let expected_hash = config_hash(cfg)?;
    if manifest.config_hash != expected_hash {
        return Err(SigmaError::config(format!(
            "bundle was built for config {} but the supplied config hashes to {expected_hash}",
            manifest.config_hash
        )));
    }
    let payload = &bytes[8 + manifest_len..];
    let mut out = HashMap::with_capacity(manifest.order.len());
    for name in &manifest.order {
        let entry = manifest.tensors.get(name).ok_or_else(|| SigmaError::Parse {
            offset: 8,
            detail: format!("manifest order lists '{name}' without an entry"),
        })?;
        let n: usize = entry.shape.iter().product();
        let len = n * entry.dtype.size();
        if entry.offset + len > payload.len() {
            return Err(SigmaError::Parse {
                offset: 8 + manifest_len + entry.offset,
                detail: format!("tensor '{name}' extends past end of payload"),
            });
        }
        let chunk = &payload[entry.offset..entry.offset + len];
        let arr: DenseArray<T> = match entry.dtype {
            Dtype::F32 => {
                let data: Vec<f32> = chunk
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                DenseArray::new(entry.shape.clone(), data)?.cast()
            }
            Dtype::F64 => {
                let data: Vec<f64> = chunk
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                DenseArray::new(entry.shape.clone(), data)?.cast()
            }
        };
        out.insert(name.clone(), arr);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// PPM images
// ---------------------------------------------------------------------------

/// Read a binary (P6) PPM with maxval 255 into an (H, W, 3) array scaled to
/// [0, 1].
pub fn read_ppm<T: Scalar>(path: &Path) -> Result<DenseArray<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_ppm(&bytes)
}

pub fn parse_ppm<T: Scalar>(bytes: &[u8]) -> Result<DenseArray<T>> {
    let mut offset = 0usize;
    let token = |bytes: &[u8], offset: &mut usize| -> Result<String> {
        while *offset < bytes.len() {
            match bytes[*offset] {
                b' ' | b'\t' | b'\r' | b'\n' => *offset += 1,
                b'#' => {
                    while *offset < bytes.len() && bytes[*offset] != b'\n' {
                        *offset += 1;
                    }
                }
                _ => break,
            }
        }
        let start = *offset;
        while *offset < bytes.len() && !bytes[*offset].is_ascii_whitespace() {
            *offset += 1;
        }
        if start == *offset {
            return Err(SigmaError::Parse {
                offset: start,
                detail: "unexpected end of PPM header".into(),
            });
        }
        Ok(String::from_utf8_lossy(&bytes[start..*offset]).into_owned())
    };

    let magic = token(bytes, &mut offset)?;
    if magic != "P6" {
        return Err(SigmaError::Parse {
            offset: 0,
            detail: format!("expected P6 magic, found '{magic}'"),
        });
    }
    let parse_dim = |s: String, at: usize| -> Result<usize> {
        s.parse::<usize>().map_err(|_| SigmaError::Parse {
            offset: at,
            detail: format!("invalid header integer '{s}'"),
        })
    };
    let at = offset;
    let w = parse_dim(token(bytes, &mut offset)?, at)?;
    let at = offset;
    let h = parse_dim(token(bytes, &mut offset)?, at)?;
    let at = offset;
    let maxval = parse_dim(token(bytes, &mut offset)?, at)?;
    if maxval != 255 {
        return Err(SigmaError::Parse {
            offset: at,
            detail: format!("only maxval 255 is supported, found {maxval}"),
        });
    }
    // exactly one whitespace byte separates header and payload
    if offset >= bytes.len() {
        return Err(SigmaError::Parse {
            offset,
            detail: "missing pixel data".into(),
        });
    }
    offset += 1;
    let need = w * h * 3;
    if bytes.len() - offset < need {
        return Err(SigmaError::Parse {
            offset: bytes.len(),
            detail: format!(
                "truncated pixel data: need {need} bytes, found {}",
                bytes.len() - offset
            ),
        });
    }
    let data: Vec<T> = bytes[offset..offset + need]
        .iter()
        .map(|&b| T::from_f64(b as f64 / 255.0))
        .collect();
    DenseArray::new(vec![h, w, 3], data)
}

/// Write an (H, W, 3) array of [0, 1] values as binary PPM.
pub fn write_ppm<T: Scalar>(path: &Path, image: &DenseArray<T>) -> Result<()> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(SigmaError::dim(format!(
            "ppm image must be (H, W, 3), got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P6\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Color palette for label maps. The default nine entries follow the
/// MFNet class order (unlabeled, car, person, bike, curve, stop, guardrail,
/// cone, bump); colors are this project's own choice.
#[derive(Debug, Clone)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

impl Palette {
    pub fn mfnet9() -> Self {
        Palette {
            colors: vec![
                [0, 0, 0],       // unlabeled
                [64, 0, 128],    // car
                [64, 64, 0],     // person
                [0, 128, 192],   // bike
                [0, 0, 192],     // curve
                [128, 128, 0],   // stop
                [64, 64, 128],   // guardrail
                [192, 128, 128], // cone
                [192, 64, 0],    // bump
            ],
        }
    }

    /// Any size: distinct colors for the first 9 classes, then a generated
    /// wheel for the rest.
    pub fn for_classes(n: usize) -> Self {
        let mut base = Self::mfnet9().colors;
        while base.len() < n {
            let i = base.len() as u32;
            let c = [
                ((i * 97) % 251) as u8,
                ((i * 57 + 31) % 251) as u8,
                ((i * 17 + 67) % 251) as u8,
            ];
            base.push(c);
        }
        base.truncate(n.max(1));
        Palette { colors: base }
    }

    pub fn color(&self, label: u32) -> [u8; 3] {
        self.colors[label as usize % self.colors.len()]
    }

    /// Inverse lookup of an exact palette color.
    pub fn label_of(&self, color: [u8; 3]) -> Option<u32> {
        self.colors.iter().position(|c| *c == color).map(|i| i as u32)
    }
}

/// Write a label map through the palette as a P6 image.
pub fn write_label_ppm(
    path: &Path,
    labels: &[u32],
    h: usize,
    w: usize,
    palette: &Palette,
) -> Result<()> {
    if labels.len() != h * w {
        return Err(SigmaError::dim(format!(
            "label map has {} entries for {h}x{w}",
            labels.len()
        )));
    }
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P6\n{w} {h}\n255\n")?;
    let mut bytes = Vec::with_capacity(h * w * 3);
    for &l in labels {
        bytes.extend_from_slice(&palette.color(l));
    }
    f.write_all(&bytes)?;
    Ok(())
}

/// Read a palette image back into labels (exact color match required).
pub fn read_label_ppm(path: &Path, palette: &Palette) -> Result<(Vec<u32>, usize, usize)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let img: DenseArray<f64> = parse_ppm(&bytes)?;
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut labels = Vec::with_capacity(h * w);
    for (i, px) in img.data().chunks(3).enumerate() {
        let color = [
            (px[0] * 255.0).round() as u8,
            (px[1] * 255.0).round() as u8,
            (px[2] * 255.0).round() as u8,
        ];
        let label = palette.label_of(color).ok_or_else(|| SigmaError::Parse {
            offset: i * 3,
            detail: format!("pixel {i} color {color:?} is not a palette entry"),
        })?;
        labels.push(label);
    }
    Ok((labels, h, w))
}
