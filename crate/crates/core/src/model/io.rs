//! Model files: a plain-text manifest followed by a raw tensor blob.
//!
//! ```text
//! mfo-model-v1
//! config {"state_dim":12,...}
//! tensor in_proj.w 32x21 0 f32le
//! tensor in_proj.b 32x1 2688 f32le
//! ...
//! blob 18392
//! <raw little-endian f32 data, column-major>
//! ```
//!
//! Values are stored as little-endian `f32`. Models keep their weights
//! `f32`-representable (initialization and training rounds ensure it),
//! so saving and loading is lossless and a reloaded model reproduces
//! rollouts bit for bit.

use super::{ModelConfig, ModelParams, PredictorModel};
use crate::error::{Error, Result};
use std::path::Path;

pub const MODEL_FORMAT_VERSION: &str = "mfo-model-v1";

fn tensor_names(config: &ModelConfig) -> Vec<String> {
    let mut names = vec!["in_proj.w".to_string(), "in_proj.b".to_string()];
    for i in 0..config.num_layers {
        for gate in ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"] {
            names.push(format!("layer{i}.{gate}"));
        }
    }
    names.push("out_proj.w".into());
    names.push("out_proj.b".into());
    names
}

fn shapes(params: &ModelParams) -> Vec<(usize, usize)> {
    let mut s = vec![
        (params.in_w.nrows(), params.in_w.ncols()),
        (params.in_b.len(), 1),
    ];
    for l in &params.layers {
        s.push((l.w_z.nrows(), l.w_z.ncols()));
        s.push((l.u_z.nrows(), l.u_z.ncols()));
        s.push((l.b_z.len(), 1));
        s.push((l.w_r.nrows(), l.w_r.ncols()));
        s.push((l.u_r.nrows(), l.u_r.ncols()));
        s.push((l.b_r.len(), 1));
        s.push((l.w_h.nrows(), l.w_h.ncols()));
        s.push((l.u_h.nrows(), l.u_h.ncols()));
        s.push((l.b_h.len(), 1));
    }
    s.push((params.out_w.nrows(), params.out_w.ncols()));
    s.push((params.out_b.len(), 1));
    s
}

/// Serializes a model to the versioned byte format. Weights are written
/// as `f32`; callers keep them `f32`-representable so nothing is lost.
pub fn serialize_model(model: &PredictorModel) -> Result<Vec<u8>> {
    let config_json = serde_json::to_string(&model.config)?;
    let names = tensor_names(&model.config);
    let shapes = shapes(&model.params);
    let slices = model.params.slices();
    debug_assert_eq!(names.len(), slices.len());

    let mut header = format!("{MODEL_FORMAT_VERSION}\nconfig {config_json}\n");
    let mut blob: Vec<u8> = Vec::new();
    for ((name, (rows, cols)), data) in names.iter().zip(&shapes).zip(&slices) {
        header.push_str(&format!(
            "tensor {name} {rows}x{cols} {offset} f32le\n",
            offset = blob.len()
        ));
        for &v in *data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    header.push_str(&format!("blob {}\n", blob.len()));

    let mut out = header.into_bytes();
    out.extend_from_slice(&blob);
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

/// Parses the byte format back into a model, validating version,
/// manifest consistency and blob length.
pub fn deserialize_model(bytes: &[u8]) -> Result<PredictorModel> {
    // The header is ASCII lines up to and including the `blob` line.
    let mut pos = 0usize;
    let mut next_line = |bytes: &[u8]| -> Result<String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        let line = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| bad("header is not valid UTF-8"))?
            .to_string();
        pos += 1;
        Ok(line)
    };

    let magic = next_line(bytes)?;
    if magic != MODEL_FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version '{magic}', expected '{MODEL_FORMAT_VERSION}'"
        )));
    }
    let config_line = next_line(bytes)?;
    let config_json = config_line
        .strip_prefix("config ")
        .ok_or_else(|| bad("expected 'config' line"))?;
    let config: ModelConfig = serde_json::from_str(config_json)?;
    config.validate().map_err(|e| bad(format!("bad config: {e}")))?;

    struct Entry {
        rows: usize,
        cols: usize,
        offset: usize,
    }
    let mut entries: Vec<(String, Entry)> = Vec::new();
    let blob_len = loop {
        let line = next_line(bytes)?;
        if let Some(rest) = line.strip_prefix("blob ") {
            break rest
                .parse::<usize>()
                .map_err(|_| bad("unparseable blob length"))?;
        }
        let rest = line
            .strip_prefix("tensor ")
            .ok_or_else(|| bad(format!("unexpected header line '{line}'")))?;
        let mut parts = rest.split(' ');
        let name = parts.next().ok_or_else(|| bad("tensor line: name"))?;
        let shape = parts.next().ok_or_else(|| bad("tensor line: shape"))?;
        let offset = parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| bad("tensor line: offset"))?;
        let dtype = parts.next().ok_or_else(|| bad("tensor line: dtype"))?;
        if dtype != "f32le" {
            return Err(bad(format!("unsupported dtype '{dtype}'")));
        }
        let (r, c) = shape
            .split_once('x')
            .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
            .ok_or_else(|| bad(format!("unparseable shape '{shape}'")))?;
        entries.push((
            name.to_string(),
            Entry {
                rows: r,
                cols: c,
                offset,
            },
        ));
    };

    let blob = &bytes[pos..];
    if blob.len() != blob_len {
        return Err(bad(format!(
            "blob length mismatch: manifest says {blob_len}, file holds {}",
            blob.len()
        )));
    }

    let mut params = ModelParams::zeros(&config);
    let expected_names = tensor_names(&config);
    let expected_shapes = shapes(&params);
    if entries.len() != expected_names.len() {
        return Err(bad(format!(
            "expected {} tensors, manifest lists {}",
            expected_names.len(),
            entries.len()
        )));
    }
    {
        let mut slices = params.slices_mut();
        for (i, (name, entry)) in entries.iter().enumerate() {
            if *name != expected_names[i] {
                return Err(bad(format!(
                    "tensor {i} is '{name}', expected '{}'",
                    expected_names[i]
                )));
            }
            let (er, ec) = expected_shapes[i];
            if (entry.rows, entry.cols) != (er, ec) {
                return Err(bad(format!(
                    "tensor '{name}' has shape {}x{}, config implies {er}x{ec}",
                    entry.rows, entry.cols
                )));
            }
            let n = er * ec;
            let end = entry
                .offset
                .checked_add(4 * n)
                .ok_or_else(|| bad("tensor offset overflow"))?;
            if end > blob.len() {
                return Err(bad(format!(
                    "tensor '{name}' overruns the blob ({end} > {})",
                    blob.len()
                )));
            }
            let dst = &mut slices[i];
            for (k, v) in dst.iter_mut().enumerate() {
                let o = entry.offset + 4 * k;
                let raw: [u8; 4] = blob[o..o + 4].try_into().expect("bounds checked");
                *v = f32::from_le_bytes(raw) as f64;
            }
        }
    }

    Ok(PredictorModel { config, params })
}

pub fn save_model(model: &PredictorModel, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PredictorModel> {
    deserialize_model(&std::fs::read(path)?)
}
