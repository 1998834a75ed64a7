//! Bit-exact interchange formats: a binary multi-tensor container and a
//! plain-text point-cloud format.
//!
//! The container holds named n-dimensional `f32` tensors and is the storage
//! for model checkpoints and descriptor databases. The layout, all integers
//! little-endian: magic `"PRTN"`, format version (`u16`), tensor count
//! (`u16`), then per tensor a name (`u16` length + UTF-8 bytes), a rank
//! (`u8`), the dimensions (`u32` each), and the payload as row-major IEEE 754
//! `f32` values. Readers verify that the declared sizes cover the byte stream
//! exactly and reject anything trailing.
//!
//! The text format stores one point per line — three decimal reals separated
//! by single spaces, with an optional fourth integer column carrying a part
//! label — and ignores `#` comment lines. Parsing rejects NaN, infinities,
//! and ragged rows; numbers are written in Rust's shortest round-trip form.

use thiserror::Error;

use crate::geometry::PointCloud;
use crate::matching::{DescriptorDB, DescriptorRecord, MatchError};
use crate::netkit::{Model, ModelConfig, ModelConfigData, NetError};
use crate::scalar::Real;

/// Leading bytes of every tensor container.
pub const TENSOR_MAGIC: [u8; 4] = *b"PRTN";
/// The single container revision this build reads and writes.
pub const TENSOR_VERSION: u16 = 1;

/// Errors from reading or writing the interchange formats.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("not a tensor container (bad magic bytes)")]
    BadMagic,
    #[error("unsupported container version {got} (this build reads {TENSOR_VERSION})")]
    UnsupportedVersion { got: u16 },
    #[error("container truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("{extra} trailing bytes after the last declared tensor")]
    TrailingBytes { extra: usize },
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("container limits exceeded: {what}")]
    LimitExceeded { what: &'static str },
    #[error("tensor dimensions overflow the addressable size")]
    SizeOverflow,
    #[error("line {line}: {reason}")]
    XyzLine { line: usize, reason: String },
    #[error("text holds no points")]
    EmptyText,
    #[error("checkpoint is missing tensor {name:?}")]
    MissingTensor { name: &'static str },
    #[error("tensor {name:?} is malformed: {reason}")]
    BadTensor { name: &'static str, reason: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// One named row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    /// A rank-1 tensor over the given values.
    pub fn vector(name: impl Into<String>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims: vec![data.len() as u32],
            data,
        }
    }

    /// A rank-2 row-major tensor; the data length must be `rows * cols`.
    pub fn matrix(name: impl Into<String>, rows: u32, cols: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows as usize * cols as usize, "matrix shape");
        Self {
            name: name.into(),
            dims: vec![rows, cols],
            data,
        }
    }

    /// Number of elements the dimensions declare.
    pub fn element_count(&self) -> Option<usize> {
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
    }
}

/// An ordered collection of named tensors with a bit-exact byte encoding.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub tensors: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// First tensor with the given name, if any.
    pub fn find(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Serializes the container; the inverse of [`Self::from_bytes`].
    pub fn to_bytes(&self) -> Result<Vec<u8>, IoError> {
        if self.tensors.len() > u16::MAX as usize {
            return Err(IoError::LimitExceeded {
                what: "more than 65535 tensors",
            });
        }
        let mut out = Vec::new();
        out.extend_from_slice(&TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u16).to_le_bytes());
        for t in &self.tensors {
            if t.name.len() > u16::MAX as usize {
                return Err(IoError::LimitExceeded {
                    what: "tensor name longer than 65535 bytes",
                });
            }
            if t.dims.len() > u8::MAX as usize {
                return Err(IoError::LimitExceeded {
                    what: "tensor rank above 255",
                });
            }
            let declared = t.element_count().ok_or(IoError::SizeOverflow)?;
            assert_eq!(
                declared,
                t.data.len(),
                "tensor {:?}: dims declare {declared} elements, data holds {}",
                t.name,
                t.data.len()
            );
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a container, verifying magic, version, and exact payload size.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoError> {
        let mut cursor = Cursor { bytes, offset: 0 };
        if cursor.take(4)? != TENSOR_MAGIC {
            return Err(IoError::BadMagic);
        }
        let version = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
        if version != TENSOR_VERSION {
            return Err(IoError::UnsupportedVersion { got: version });
        }
        let count = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
            let name = std::str::from_utf8(cursor.take(name_len as usize)?)
                .map_err(|_| IoError::BadName)?
                .to_owned();
            let rank = cursor.take(1)?[0];
            let mut dims = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()));
            }
            let elements = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or(IoError::SizeOverflow)?;
            let payload = elements
                .checked_mul(4)
                .ok_or(IoError::SizeOverflow)?;
            let raw = cursor.take(payload)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        if cursor.offset != bytes.len() {
            return Err(IoError::TrailingBytes {
                extra: bytes.len() - cursor.offset,
            });
        }
        Ok(Self { tensors })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self
            .offset
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(IoError::Truncated {
                offset: self.bytes.len(),
            })?;
        let slice = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(slice)
    }
}

// ---------------------------------------------------------------------------
// Text point clouds
// ---------------------------------------------------------------------------

/// Parses the text format into a cloud; labels come back when every row has
/// the fourth column. Blank lines and `#` comments are skipped.
pub fn parse_xyz<T: Real>(text: &str) -> Result<PointCloud<T>, IoError> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut saw_labels: Option<bool> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let labeled = match fields.len() {
            3 => false,
            4 => true,
            n => {
                return Err(IoError::XyzLine {
                    line,
                    reason: format!("expected 3 or 4 columns, found {n}"),
                })
            }
        };
        match saw_labels {
            None => saw_labels = Some(labeled),
            Some(prev) if prev != labeled => {
                return Err(IoError::XyzLine {
                    line,
                    reason: "rows mix labeled and unlabeled columns".to_owned(),
                })
            }
            Some(_) => {}
        }
        let mut coord = [0.0f64; 3];
        for (c, field) in coord.iter_mut().zip(&fields) {
            let v: f64 = field.parse().map_err(|_| IoError::XyzLine {
                line,
                reason: format!("{field:?} is not a decimal real"),
            })?;
            if !v.is_finite() {
                return Err(IoError::XyzLine {
                    line,
                    reason: format!("{field:?} is not finite"),
                });
            }
            *c = v;
        }
        if labeled {
            let label: usize = fields[3].parse().map_err(|_| IoError::XyzLine {
                line,
                reason: format!("{:?} is not a part label", fields[3]),
            })?;
            labels.push(label);
        }
        points.push(crate::geometry::Point3::new(
            T::of(coord[0]),
            T::of(coord[1]),
            T::of(coord[2]),
        ));
    }
    if points.is_empty() {
        return Err(IoError::EmptyText);
    }
    Ok(if saw_labels == Some(true) {
        PointCloud::with_labels(points, labels)
    } else {
        PointCloud::new(points)
    })
}

/// Formats a cloud in the text format, one point per line, labels appended
/// when present; numbers use the shortest exactly round-tripping decimals.
pub fn format_xyz<T: Real>(cloud: &PointCloud<T>) -> String {
    let mut out = String::new();
    for (i, p) in cloud.points.iter().enumerate() {
        out.push_str(&format!(
            "{} {} {}",
            p.x.to_f64_value(),
            p.y.to_f64_value(),
            p.z.to_f64_value()
        ));
        if let Some(labels) = &cloud.labels {
            out.push_str(&format!(" {}", labels[i]));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Checkpoints and descriptor databases
// ---------------------------------------------------------------------------

const CONFIG_TENSOR: &str = "__config__";
const PARAMS_TENSOR: &str = "params";
const DESCRIPTOR_TENSOR: &str = "descriptors";
const RECORD_TENSOR: &str = "records";

fn bytes_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32).collect()
}

fn f32_to_bytes(name: &'static str, data: &[f32]) -> Result<Vec<u8>, IoError> {
    data.iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(IoError::BadTensor {
                    name,
                    reason: format!("{v} is not a byte"),
                })
            }
        })
        .collect()
}

/// Packs a model into a container: its configuration as a JSON byte tensor
/// and all trainable parameters as one `f32` vector.
pub fn model_to_tensor_file<T: Real>(model: &Model<T>) -> Result<TensorFile, IoError> {
    let config_json = serde_json::to_string(&model.config().to_data()).map_err(|e| {
        IoError::BadTensor {
            name: CONFIG_TENSOR,
            reason: e.to_string(),
        }
    })?;
    let params: Vec<f32> = model
        .params()
        .iter()
        .map(|v| v.to_f64_value() as f32)
        .collect();
    Ok(TensorFile {
        tensors: vec![
            NamedTensor::vector(CONFIG_TENSOR, bytes_to_f32(config_json.as_bytes())),
            NamedTensor::vector(PARAMS_TENSOR, params),
        ],
    })
}

/// Rebuilds a model from [`model_to_tensor_file`]'s layout, revalidating the
/// configuration and the parameter count.
pub fn model_from_tensor_file<T: Real>(file: &TensorFile) -> Result<Model<T>, IoError> {
    let config = file
        .find(CONFIG_TENSOR)
        .ok_or(IoError::MissingTensor {
            name: CONFIG_TENSOR,
        })?;
    let bytes = f32_to_bytes(CONFIG_TENSOR, &config.data)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| IoError::BadTensor {
        name: CONFIG_TENSOR,
        reason: "not UTF-8".to_owned(),
    })?;
    let data: ModelConfigData =
        serde_json::from_str(text).map_err(|e| IoError::BadTensor {
            name: CONFIG_TENSOR,
            reason: e.to_string(),
        })?;
    let mut model = Model::new(ModelConfig::<T>::from_data(&data)?)?;
    let params = file
        .find(PARAMS_TENSOR)
        .ok_or(IoError::MissingTensor {
            name: PARAMS_TENSOR,
        })?;
    let values: Vec<T> = params.data.iter().map(|&v| T::of(v as f64)).collect();
    model.set_params(&values)?;
    Ok(model)
}

/// Packs a descriptor database: the unit descriptors as an `n x dim` matrix
/// and the provenance table as an `n x 3` matrix of (object, point, part).
pub fn db_to_tensor_file<T: Real>(db: &DescriptorDB<T>) -> Result<TensorFile, IoError> {
    let n = db.len() as u32;
    let descriptors: Vec<f32> = db.raw().iter().map(|v| v.to_f64_value() as f32).collect();
    let mut records = Vec::with_capacity(db.len() * 3);
    for r in db.records() {
        records.push(r.object as f32);
        records.push(r.point as f32);
        records.push(r.part as f32);
    }
    Ok(TensorFile {
        tensors: vec![
            NamedTensor::matrix(DESCRIPTOR_TENSOR, n, db.dim() as u32, descriptors),
            NamedTensor::matrix(RECORD_TENSOR, n, 3, records),
        ],
    })
}

/// Rebuilds a descriptor database from [`db_to_tensor_file`]'s layout.
pub fn db_from_tensor_file<T: Real>(file: &TensorFile) -> Result<DescriptorDB<T>, IoError> {
    let desc = file.find(DESCRIPTOR_TENSOR).ok_or(IoError::MissingTensor {
        name: DESCRIPTOR_TENSOR,
    })?;
    let recs = file.find(RECORD_TENSOR).ok_or(IoError::MissingTensor {
        name: RECORD_TENSOR,
    })?;
    if desc.dims.len() != 2 {
        return Err(IoError::BadTensor {
            name: DESCRIPTOR_TENSOR,
            reason: format!("expected rank 2, found {}", desc.dims.len()),
        });
    }
    if recs.dims.len() != 2 || recs.dims[1] != 3 || recs.dims[0] != desc.dims[0] {
        return Err(IoError::BadTensor {
            name: RECORD_TENSOR,
            reason: format!(
                "expected {} x 3 provenance rows, found {:?}",
                desc.dims[0], recs.dims
            ),
        });
    }
    let to_index = |v: f32| -> Result<usize, IoError> {
        if v.fract() == 0.0 && v >= 0.0 && v <= (1u64 << 24) as f32 {
            Ok(v as usize)
        } else {
            Err(IoError::BadTensor {
                name: RECORD_TENSOR,
                reason: format!("{v} is not an index"),
            })
        }
    };
    let records = recs
        .data
        .chunks_exact(3)
        .map(|c| {
            Ok(DescriptorRecord {
                object: to_index(c[0])?,
                point: to_index(c[1])?,
                part: to_index(c[2])?,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    let descriptors: Vec<T> = desc.data.iter().map(|&v| T::of(v as f64)).collect();
    Ok(DescriptorDB::from_parts(
        desc.dims[1] as usize,
        descriptors,
        records,
    )?)
}
