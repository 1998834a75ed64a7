//! Rotation-invariant per-point descriptors and correspondence search.
//!
//! A segmentation model's penultimate per-point features are L2-normalized
//! and stored, together with their (object, point, part) provenance, in a
//! [`DescriptorDB`]. Queries are featurized the same way — optionally after
//! rotating the cloud, which is the stress the descriptors are built to
//! survive — and matched to their exact nearest neighbors in the database.
//! The quality metric is the fraction of matches that land on a point of the
//! same part as the query point.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{apply_rotation, PointCloud, RotationZyz};
use crate::netkit::{Model, NetError};
use crate::scalar::Real;

/// Errors from descriptor database construction and matching.
#[derive(Debug, Error)]
pub enum MatchError {
    /// The database holds no descriptors.
    #[error("descriptor database is empty")]
    EmptyDb,
    /// A cloud is missing the per-point part labels the metric needs.
    #[error("cloud {object} carries no part labels")]
    MissingLabels { object: usize },
    /// k must be at least 1 and no larger than the database.
    #[error("cannot retrieve {k} neighbors from a database of {len}")]
    BadK { k: usize, len: usize },
    /// The model's descriptor width differs from the database rows.
    #[error("model produces {model}-wide descriptors, database stores {db}-wide rows")]
    DimMismatch { model: usize, db: usize },
    /// Descriptor storage does not factor into whole rows of the given width.
    #[error("descriptor buffer of {len} values does not hold {rows} rows of width {dim}")]
    RaggedBuffer { len: usize, rows: usize, dim: usize },
    /// A descriptor entry is NaN or infinite.
    #[error("descriptor {row} has a non-finite entry")]
    NonFinite { row: usize },
    /// The underlying model rejected a forward pass.
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Where a stored descriptor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescriptorRecord {
    /// Index of the source cloud in the database build order.
    pub object: usize,
    /// Point index within that cloud.
    pub point: usize,
    /// Part label of that point.
    pub part: usize,
}

/// Immutable store of unit-norm per-point descriptors with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorDB<T> {
    dim: usize,
    descriptors: Vec<T>,
    records: Vec<DescriptorRecord>,
}

impl<T: Real> DescriptorDB<T> {
    /// Assembles a database from raw rows, validating shape and finiteness.
    pub fn from_parts(
        dim: usize,
        descriptors: Vec<T>,
        records: Vec<DescriptorRecord>,
    ) -> Result<Self, MatchError> {
        let rows = records.len();
        if dim == 0 || descriptors.len() != rows * dim {
            return Err(MatchError::RaggedBuffer {
                len: descriptors.len(),
                rows,
                dim,
            });
        }
        for (row, chunk) in descriptors.chunks(dim).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(MatchError::NonFinite { row });
            }
        }
        Ok(Self {
            dim,
            descriptors,
            records,
        })
    }

    /// Number of stored descriptors.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// True when the database holds nothing.
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Descriptor width.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Provenance of the `i`-th descriptor.
    pub fn record(&self, i: usize) -> DescriptorRecord {
        self.records[i]
    }

    /// The `i`-th descriptor row.
    pub fn descriptor(&self, i: usize) -> &[T] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    /// All records in storage order.
    pub fn records(&self) -> &[DescriptorRecord] {
        &self.records
    }

    /// The flat row-major descriptor buffer.
    pub fn raw(&self) -> &[T] {
        &self.descriptors
    }
}

/// Scales each row to unit L2 norm; all-zero rows stay zero.
fn normalize_rows<T: Real>(flat: &mut [T], dim: usize) {
    for row in flat.chunks_mut(dim) {
        let norm = row.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b).sqrt();
        if norm > T::zero() {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
}

/// Featurizes every labeled cloud with the segmentation model and stores the
/// L2-normalized penultimate features as the search database.
pub fn build_descriptor_db<T: Real>(
    model: &Model<T>,
    clouds: &[PointCloud<T>],
) -> Result<DescriptorDB<T>, MatchError> {
    let dim = model.penultimate_dim();
    let mut descriptors = Vec::new();
    let mut records = Vec::new();
    for (object, cloud) in clouds.iter().enumerate() {
        let labels = cloud
            .labels
            .as_ref()
            .ok_or(MatchError::MissingLabels { object })?;
        let mut flat = model.penultimate_features(cloud)?;
        normalize_rows(&mut flat, dim);
        descriptors.extend_from_slice(&flat);
        for (point, &part) in labels.iter().enumerate() {
            records.push(DescriptorRecord {
                object,
                point,
                part,
            });
        }
    }
    DescriptorDB::from_parts(dim, descriptors, records)
}

/// One retrieved neighbor of a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchHit<T> {
    /// Row index into the database.
    pub index: usize,
    /// L2 distance between the two unit descriptors.
    pub distance: T,
    /// Provenance of the matched descriptor.
    pub record: DescriptorRecord,
}

/// All retrieved neighbors of one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence<T> {
    /// Index of the point within the query cloud.
    pub query_point: usize,
    /// Part label of the query point.
    pub query_part: usize,
    /// The k nearest database rows, closest first.
    pub hits: Vec<MatchHit<T>>,
}

/// Exact k-nearest rows for one query descriptor, ties broken by
/// (distance, object, point) so retrieval order is fully deterministic.
fn nearest_k<T: Real>(db: &DescriptorDB<T>, query: &[T], k: usize) -> Vec<MatchHit<T>> {
    let mut best: Vec<MatchHit<T>> = Vec::with_capacity(k + 1);
    for i in 0..db.len() {
        let row = db.descriptor(i);
        let mut d2 = T::zero();
        for (a, b) in row.iter().zip(query) {
            let diff = *a - *b;
            d2 += diff * diff;
        }
        let record = db.record(i);
        let candidate = MatchHit {
            index: i,
            distance: d2,
            record,
        };
        let pos = best.partition_point(|h| {
            (h.distance, h.record.object, h.record.point)
                < (candidate.distance, record.object, record.point)
        });
        if pos < k {
            best.insert(pos, candidate);
            best.truncate(k);
        }
    }
    for h in &mut best {
        h.distance = h.distance.sqrt();
    }
    best
}

/// Retrieves the `k` nearest database descriptors for every point of the
/// query cloud, optionally rotating the cloud first (the retrieval stress:
/// the database was built from unrotated objects).
pub fn match_points<T: Real>(
    query: &PointCloud<T>,
    rotation: Option<&RotationZyz<T>>,
    model: &Model<T>,
    db: &DescriptorDB<T>,
    k: usize,
) -> Result<Vec<Correspondence<T>>, MatchError> {
    if db.is_empty() {
        return Err(MatchError::EmptyDb);
    }
    if k == 0 || k > db.len() {
        return Err(MatchError::BadK { k, len: db.len() });
    }
    if model.penultimate_dim() != db.dim() {
        return Err(MatchError::DimMismatch {
            model: model.penultimate_dim(),
            db: db.dim(),
        });
    }
    let labels = query
        .labels
        .as_ref()
        .ok_or(MatchError::MissingLabels { object: 0 })?;
    let rotated;
    let cloud = match rotation {
        Some(r) => {
            rotated = apply_rotation(query, r);
            &rotated
        }
        None => query,
    };
    let mut flat = model.penultimate_features(cloud)?;
    normalize_rows(&mut flat, db.dim());
    let dim = db.dim();
    Ok((0..query.points.len())
        .into_par_iter()
        .map(|p| Correspondence {
            query_point: p,
            query_part: labels[p],
            hits: nearest_k(db, &flat[p * dim..(p + 1) * dim], k),
        })
        .collect())
}

/// Fraction of retrieved neighbors whose part label equals the query
/// point's: matched points on the same part over all matched points.
pub fn matching_accuracy<T: Real>(correspondences: &[Correspondence<T>]) -> T {
    let mut same = 0usize;
    let mut total = 0usize;
    for c in correspondences {
        for h in &c.hits {
            total += 1;
            if h.record.part == c.query_part {
                same += 1;
            }
        }
    }
    if total == 0 {
        return T::zero();
    }
    T::of_usize(same) / T::of_usize(total)
}

/// Fraction of query points whose closest hit is the same (object, point).
pub fn self_match_rate<T: Real>(correspondences: &[Correspondence<T>], object: usize) -> T {
    if correspondences.is_empty() {
        return T::zero();
    }
    let hits = correspondences
        .iter()
        .filter(|c| {
            c.hits
                .first()
                .is_some_and(|h| h.record.object == object && h.record.point == c.query_point)
        })
        .count();
    T::of_usize(hits) / T::of_usize(correspondences.len())
}
