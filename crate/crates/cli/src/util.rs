//! Volume wrappers the CLI needs on top of the core file format: stacked
//! multi-channel scale probabilities and width-aware scale class maps.

use std::path::Path;

use tubevox::edt::ScaleClassMap;
use tubevox::error::{Error, Result};
use tubevox::loss::{ProbabilityField, ScaleProbabilityField};
use tubevox::refine::ScaleMap;
use tubevox::volume::{load_volume, read_header, save_volume, Dtype, LabelMap, Volume};

/// Load a u8 volume as a binary label map.
pub fn load_label(path: &Path) -> Result<LabelMap> {
    LabelMap::new(load_volume::<u8>(path)?)
}

pub fn save_label(label: &LabelMap, path: &Path) -> Result<()> {
    save_volume(label.volume(), path)
}

/// Load an f32 volume as a probability field, validating the range.
pub fn load_probability(path: &Path) -> Result<ProbabilityField> {
    let v: Volume<f32> = load_volume(path)?;
    ProbabilityField::new(
        v.dims(),
        v.spacing(),
        v.data().iter().map(|&x| x as f64).collect(),
    )
}

pub fn save_probability(p: &ProbabilityField, path: &Path) -> Result<()> {
    let v = Volume::new(
        p.geometry().dims(),
        p.geometry().spacing(),
        p.data().iter().map(|&x| x as f32).collect(),
    )?;
    save_volume(&v, path)
}

/// Scale probabilities travel as one f32 volume with the k class slabs
/// stacked along z: class c occupies slices [(c-1)*nz, c*nz).
pub fn save_scale_probability(g: &ScaleProbabilityField, path: &Path) -> Result<()> {
    let dims = g.geometry().dims();
    let k = g.k();
    let n = g.geometry().len();
    let stacked_dims = [dims[0], dims[1], dims[2] * k];
    let mut data = vec![0.0f32; n * k];
    for v in 0..n {
        let row = g.row(v);
        for (c, &gv) in row.iter().enumerate() {
            data[c * n + v] = gv as f32;
        }
    }
    let vol = Volume::new(stacked_dims, g.geometry().spacing(), data)?;
    save_volume(&vol, path)
}

pub fn load_scale_probability(path: &Path, k: usize) -> Result<ScaleProbabilityField> {
    let vol: Volume<f32> = load_volume(path)?;
    let sd = vol.dims();
    if k == 0 || !sd[2].is_multiple_of(k) {
        return Err(Error::InvalidParameter {
            name: "k".into(),
            reason: format!("stacked volume has {} slices, not divisible by k = {k}", sd[2]),
        });
    }
    let dims = [sd[0], sd[1], sd[2] / k];
    let n = dims[0] * dims[1] * dims[2];
    let mut data = vec![0.0f64; n * k];
    for v in 0..n {
        for c in 0..k {
            data[v * k + c] = vol.data()[c * n + v] as f64;
        }
    }
    ScaleProbabilityField::new(dims, vol.spacing(), k, data)
}

/// Write integer classes as u8 when they fit, i16 otherwise.
pub fn save_classes(
    dims: [usize; 3],
    spacing: [f64; 3],
    k: u16,
    data: &[u16],
    path: &Path,
) -> Result<()> {
    if k <= u8::MAX as u16 {
        let v = Volume::new(dims, spacing, data.iter().map(|&z| z as u8).collect())?;
        save_volume(&v, path)
    } else {
        let v = Volume::new(dims, spacing, data.iter().map(|&z| z as i16).collect())?;
        save_volume(&v, path)
    }
}

/// Read a class volume written by [`save_classes`] in either width.
pub fn load_class_data(path: &Path) -> Result<([usize; 3], [f64; 3], Vec<u16>)> {
    let header = read_header(path)?;
    match header.dtype {
        Dtype::U8 => {
            let v: Volume<u8> = load_volume(path)?;
            Ok((
                v.dims(),
                v.spacing(),
                v.data().iter().map(|&z| z as u16).collect(),
            ))
        }
        Dtype::I16 => {
            let v: Volume<i16> = load_volume(path)?;
            if let Some(&bad) = v.data().iter().find(|&&z| z < 0) {
                return Err(Error::DegenerateInput(format!(
                    "class volume contains negative value {bad}"
                )));
            }
            Ok((
                v.dims(),
                v.spacing(),
                v.data().iter().map(|&z| z as u16).collect(),
            ))
        }
        Dtype::F32 => Err(Error::DegenerateInput(
            "class volume must be u8 or i16, found f32".into(),
        )),
    }
}

pub fn load_scale_class_map(path: &Path, k: u16) -> Result<ScaleClassMap> {
    let (dims, spacing, data) = load_class_data(path)?;
    ScaleClassMap::from_raw(dims, spacing, k, data)
}

/// Predicted scale maps carry classes 1..=k; derive k from the data.
pub fn load_scale_map(path: &Path) -> Result<ScaleMap> {
    let (dims, spacing, data) = load_class_data(path)?;
    let k = data.iter().copied().max().unwrap_or(1).max(1);
    ScaleMap::from_raw(dims, spacing, k, data)
}
