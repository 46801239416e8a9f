//! Dense 3D scalar volumes, binary label maps, file I/O and CT preprocessing.
//!
//! Coordinate convention used everywhere in this crate: a volume of
//! dimensions `[nx, ny, nz]` stores voxel `(x, y, z)` at linear index
//! `x + nx * (y + ny * z)`, so x is the fastest-varying axis. Spacing is
//! millimetres per voxel along each axis.
//!
//! The on-disk format is a JSON sidecar plus a sibling raw file:
//!
//! ```json
//! {"dims":[8,8,8], "spacing_mm":[0.5,0.5,0.5], "dtype":"f32",
//!  "order":"x-fastest", "endian":"little", "data":"vol.raw"}
//! ```
//!
//! The raw payload is written little-endian and must be exactly
//! `nx * ny * nz * sizeof(dtype)` bytes. Big-endian payloads are accepted
//! on read when the sidecar says so.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default CT intensity truncation window in Hounsfield units.
pub const DEFAULT_HU_LO: f64 = -100.0;
pub const DEFAULT_HU_HI: f64 = 240.0;

/// Grid shape plus voxel spacing, shared by every per-voxel map type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid_parameter(
                "dims",
                format!("all dimensions must be positive, got {dims:?}"),
            ));
        }
        if spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::invalid_parameter(
                "spacing",
                format!("all spacing components must be positive, got {spacing:?}"),
            ));
        }
        Ok(Geometry { dims, spacing })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false // dims are validated positive
    }

    /// Linear index of voxel `(x, y, z)`, x fastest.
    pub fn index(&self, p: [usize; 3]) -> usize {
        debug_assert!(p[0] < self.dims[0] && p[1] < self.dims[1] && p[2] < self.dims[2]);
        p[0] + self.dims[0] * (p[1] + self.dims[1] * p[2])
    }

    /// Inverse of [`Geometry::index`].
    pub fn coord(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    pub fn same_dims(&self, other: &Geometry) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn check_same_dims(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.dims, other.dims
            )))
        }
    }
}

/// Scalar kinds supported by the file format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "i16")]
    I16,
    #[serde(rename = "u8")]
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I16 => 2,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisOrder {
    #[serde(rename = "x-fastest")]
    XFastest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endian {
    #[serde(rename = "little")]
    Little,
    #[serde(rename = "big")]
    Big,
}

/// Voxel scalar types storable in a [`Volume`].
pub trait Scalar: Copy + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    const DTYPE: Dtype;
    fn write_le(buf: &mut Vec<u8>, v: Self);
    fn read(bytes: &[u8], endian: Endian) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn write_le(buf: &mut Vec<u8>, v: Self) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fn read(bytes: &[u8], endian: Endian) -> Self {
        let b: [u8; 4] = bytes.try_into().unwrap();
        match endian {
            Endian::Little => f32::from_le_bytes(b),
            Endian::Big => f32::from_be_bytes(b),
        }
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for i16 {
    const DTYPE: Dtype = Dtype::I16;
    fn write_le(buf: &mut Vec<u8>, v: Self) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fn read(bytes: &[u8], endian: Endian) -> Self {
        let b: [u8; 2] = bytes.try_into().unwrap();
        match endian {
            Endian::Little => i16::from_le_bytes(b),
            Endian::Big => i16::from_be_bytes(b),
        }
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for u8 {
    const DTYPE: Dtype = Dtype::U8;
    fn write_le(buf: &mut Vec<u8>, v: Self) {
        buf.push(v);
    }
    fn read(bytes: &[u8], _endian: Endian) -> Self {
        bytes[0]
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Dense 3D scalar grid. Immutable after construction in normal use; all
/// operations in this crate take volumes by reference and return new ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    geom: Geometry,
    data: Vec<T>,
}

impl<T: Scalar> Volume<T> {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        let geom = Geometry::new(dims, spacing)?;
        if data.len() != geom.len() {
            return Err(Error::GeometryMismatch(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                geom.len()
            )));
        }
        Ok(Volume { geom, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: T) -> Result<Self> {
        let geom = Geometry::new(dims, spacing)?;
        let n = geom.len();
        Ok(Volume {
            geom,
            data: vec![value; n],
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geom.spacing()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, p: [usize; 3]) -> T {
        self.data[self.geom.index(p)]
    }

    pub fn set(&mut self, p: [usize; 3], v: T) {
        let i = self.geom.index(p);
        self.data[i] = v;
    }
}

/// Binary volume; every value is 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    vol: Volume<u8>,
}

impl LabelMap {
    pub fn new(vol: Volume<u8>) -> Result<Self> {
        if let Some(bad) = vol.data().iter().find(|&&v| v > 1) {
            return Err(Error::DegenerateInput(format!(
                "label map contains value {bad}, expected 0 or 1"
            )));
        }
        Ok(LabelMap { vol })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Ok(LabelMap {
            vol: Volume::filled(dims, spacing, 0u8)?,
        })
    }

    /// Build from a per-voxel predicate.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        mut f: impl FnMut([usize; 3]) -> bool,
    ) -> Result<Self> {
        let geom = Geometry::new(dims, spacing)?;
        let data = (0..geom.len())
            .map(|i| u8::from(f(geom.coord(i))))
            .collect();
        Ok(LabelMap {
            vol: Volume { geom, data },
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.vol.geometry()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.vol.dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.vol.spacing()
    }

    pub fn data(&self) -> &[u8] {
        self.vol.data()
    }

    pub fn get(&self, idx: usize) -> bool {
        self.vol.data()[idx] == 1
    }

    pub fn get_at(&self, p: [usize; 3]) -> bool {
        self.vol.get(p) == 1
    }

    pub fn set(&mut self, idx: usize, v: bool) {
        self.vol.data_mut()[idx] = u8::from(v);
    }

    pub fn foreground_count(&self) -> usize {
        self.vol.data().iter().filter(|&&v| v == 1).count()
    }

    pub fn volume(&self) -> &Volume<u8> {
        &self.vol
    }

    pub fn into_volume(self) -> Volume<u8> {
        self.vol
    }
}

/// Sidecar header describing a raw volume payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    pub order: AxisOrder,
    pub endian: Endian,
    pub data: String,
}

fn raw_path_for(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("raw")
}

/// Write `v` as a raw little-endian payload plus JSON sidecar at `path`.
///
/// The raw file sits next to the sidecar with a `.raw` extension and is
/// referenced by file name in the sidecar's `data` field. Existing files
/// are overwritten.
pub fn save_volume<T: Scalar>(v: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw_path = raw_path_for(path);
    let raw_name = raw_path
        .file_name()
        .ok_or_else(|| Error::invalid_parameter("path", "missing file name"))?
        .to_string_lossy()
        .into_owned();

    let header = VolumeHeader {
        dims: v.dims(),
        spacing_mm: v.spacing(),
        dtype: T::DTYPE,
        order: AxisOrder::XFastest,
        endian: Endian::Little,
        data: raw_name,
    };
    let json = serde_json::to_string_pretty(&header).expect("header serialization cannot fail");

    let mut bytes = Vec::with_capacity(v.data().len() * T::DTYPE.size());
    for &x in v.data() {
        T::write_le(&mut bytes, x);
    }
    fs::write(&raw_path, &bytes).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(path, json.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read the sidecar at `path` without touching the payload.
pub fn read_header(path: impl AsRef<Path>) -> Result<VolumeHeader> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Geometry::new(header.dims, header.spacing_mm).map_err(|e| Error::Header {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(header)
}

/// Load a volume saved by [`save_volume`]. The requested scalar type must
/// match the sidecar's dtype.
pub fn load_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.dtype != T::DTYPE {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: format!(
                "dtype mismatch: sidecar says {:?}, caller requested {:?}",
                header.dtype,
                T::DTYPE
            ),
        });
    }

    let raw_path = match path.parent() {
        Some(dir) => dir.join(&header.data),
        None => PathBuf::from(&header.data),
    };
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = header.dims[0] * header.dims[1] * header.dims[2];
    let expected = n * T::DTYPE.size();
    if bytes.len() != expected {
        return Err(Error::PayloadSize {
            path: raw_path,
            expected,
            found: bytes.len(),
        });
    }

    let size = T::DTYPE.size();
    let data = (0..n)
        .map(|i| T::read(&bytes[i * size..(i + 1) * size], header.endian))
        .collect();
    Volume::new(header.dims, header.spacing_mm, data)
}

/// Clamp intensities to `[lo, hi]` and rescale the whole volume to zero
/// mean and unit population variance. Statistics accumulate in f64.
pub fn preprocess_ct<T: Scalar>(v: &Volume<T>, lo: f64, hi: f64) -> Result<Volume<f32>> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::invalid_parameter(
            "hu-window",
            format!("lower bound {lo} must be below upper bound {hi}"),
        ));
    }
    let n = v.data().len() as f64;
    let clamped: Vec<f64> = v.data().iter().map(|x| x.to_f64().clamp(lo, hi)).collect();
    let mean = clamped.iter().sum::<f64>() / n;
    let var = clamped.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::DegenerateInput(
            "volume is constant after intensity truncation (zero variance)".into(),
        ));
    }
    let std = var.sqrt();
    let data = clamped.iter().map(|x| ((x - mean) / std) as f32).collect();
    Volume::new(v.dims(), v.spacing(), data)
}

/// Origin of an edge-sized cube nominally centred at `center`, shifted
/// inward so the cube always lies inside `dims`. Requires `dims[a] >= edge`.
pub(crate) fn shifted_crop_origin(
    center: [usize; 3],
    edge: usize,
    dims: [usize; 3],
) -> Result<[usize; 3]> {
    if edge == 0 {
        return Err(Error::invalid_parameter("edge", "must be at least 1"));
    }
    let mut origin = [0usize; 3];
    for a in 0..3 {
        if dims[a] < edge {
            return Err(Error::invalid_parameter(
                "edge",
                format!("edge {edge} exceeds dimension {} along axis {a}", dims[a]),
            ));
        }
        origin[a] = center[a].saturating_sub(edge / 2).min(dims[a] - edge);
    }
    Ok(origin)
}

/// Extract an `edge`-cubed region centred at `center`, shifting inward at
/// the volume borders instead of padding. Spacing is preserved.
pub fn crop_region<T: Scalar>(
    v: &Volume<T>,
    center: [usize; 3],
    edge: usize,
) -> Result<Volume<T>> {
    let dims = v.dims();
    let origin = shifted_crop_origin(center, edge, dims)?;
    let geom = v.geometry();
    let mut data = Vec::with_capacity(edge * edge * edge);
    for z in 0..edge {
        for y in 0..edge {
            for x in 0..edge {
                data.push(v.data()[geom.index([origin[0] + x, origin[1] + y, origin[2] + z])]);
            }
        }
    }
    Volume::new([edge, edge, edge], v.spacing(), data)
}
