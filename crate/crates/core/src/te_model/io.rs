use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::mlp::Dense;
use super::{Normalization, TEModel};
use crate::error::{Error, Result};
use crate::real::Real;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct NormRecord<T> {
    mean: Vec<T>,
    std: Vec<T>,
    #[serde(default = "fitted_default")]
    fitted: bool,
}

fn fitted_default() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct LayerRecord<T> {
    #[serde(rename = "W")]
    w: Vec<Vec<T>>,
    b: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct ModelRecord<T> {
    format_version: u32,
    arch: Vec<usize>,
    seed: u64,
    normalization: NormRecord<T>,
    layers: Vec<LayerRecord<T>>,
}

fn invalid(reason: impl Into<String>) -> Error {
    Error::Format { what: "model", line: 1, reason: reason.into() }
}

pub fn write_model<T: Real, W: Write>(model: &TEModel<T>, mut w: W) -> Result<()> {
    let rec = ModelRecord {
        format_version: MODEL_FORMAT_VERSION,
        arch: model.arch.clone(),
        seed: model.seed,
        normalization: NormRecord {
            mean: model.normalization.mean.clone(),
            std: model.normalization.std.clone(),
            fitted: model.normalization.fitted,
        },
        layers: model
            .layers
            .iter()
            .map(|l| LayerRecord { w: (0..l.outputs()).map(|o| l.row(o).to_vec()).collect(), b: l.b.clone() })
            .collect(),
    };
    serde_json::to_writer(&mut w, &rec)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<T: Real, R: Read>(r: R) -> Result<TEModel<T>> {
    let value: serde_json::Value = serde_json::from_reader(r)?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
        Some(v) => return Err(Error::Version { what: "model", found: v as u32 }),
        None => return Err(invalid("missing format_version")),
    }
    let rec: ModelRecord<T> = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
    let arch = rec.arch;
    if arch.len() < 2 || arch.last() != Some(&1) || arch.contains(&0) {
        return Err(invalid(format!("bad architecture {arch:?}")));
    }
    if rec.layers.len() != arch.len() - 1 {
        return Err(invalid("layer count does not match architecture"));
    }
    let mut layers = Vec::with_capacity(rec.layers.len());
    for (l, (layer, dims)) in rec.layers.into_iter().zip(arch.windows(2)).enumerate() {
        let (inputs, outputs) = (dims[0], dims[1]);
        if layer.w.len() != outputs || layer.b.len() != outputs || layer.w.iter().any(|r| r.len() != inputs) {
            return Err(invalid(format!("layer {l} shape does not match architecture")));
        }
        layers.push(Dense { w: layer.w.concat(), b: layer.b, inputs });
    }
    let norm = rec.normalization;
    if norm.mean.len() != arch[0] || norm.std.len() != arch[0] {
        return Err(invalid("normalization width does not match input width"));
    }
    if norm.std.iter().any(|s| !(*s > T::zero())) {
        return Err(invalid("normalization std must be positive"));
    }
    let model = TEModel {
        arch,
        seed: rec.seed,
        normalization: Normalization { mean: norm.mean, std: norm.std, fitted: norm.fitted },
        layers,
    };
    if !model.is_finite() || !model.normalization.mean.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        for seed in [0u64, 1, 99] {
            let mut m = TEModel::<f64>::with_arch(&[7, 5, 3, 1], seed);
            m.normalization.mean = (0..7).map(|i| i as f64 * 0.1).collect();
            m.normalization.fitted = true;
            let mut buf = Vec::new();
            write_model(&m, &mut buf).unwrap();
            let back: TEModel<f64> = read_model(buf.as_slice()).unwrap();
            assert_eq!(back, m);
        }
        let m = TEModel::<f32>::init(4);
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert_eq!(read_model::<f32, _>(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_files() {
        let m = TEModel::<f64>::with_arch(&[2, 2, 1], 0);
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let versioned = text.replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(read_model::<f64, _>(versioned.as_bytes()), Err(Error::Version { found: 9, .. })));
        let unversioned = text.replace("\"format_version\":1,", "");
        assert!(matches!(read_model::<f64, _>(unversioned.as_bytes()), Err(Error::Format { .. })));
        let wrong_arch = text.replace("\"arch\":[2,2,1]", "\"arch\":[3,2,1]");
        assert!(matches!(read_model::<f64, _>(wrong_arch.as_bytes()), Err(Error::Format { .. })));
        let zero_std = text.replace("\"std\":[1.0,1.0]", "\"std\":[0.0,1.0]");
        assert!(matches!(read_model::<f64, _>(zero_std.as_bytes()), Err(Error::Format { .. })));
    }
}
