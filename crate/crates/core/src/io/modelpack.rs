//! Model packs.
//!
//! ```text
//! "MVSP"  u8 version (1)  u32 LE entry count
//! per entry: u16 LE name length, UTF-8 name, tensor body (tensor file
//!            layout without its magic)
//! u32 LE config length, UTF-8 JSON run configuration
//! ```
//!
//! Entry names are `<combiner>.<tensor>`, e.g. `mod.proj0` or
//! `final.trunk.weight`. Weights are stored as f32.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{FusionParams, QueryModel};
use crate::io::tensor::{decode_body, encode_body, Reader, Tensor, FORMAT_VERSION};
use crate::training::RunConfig;

pub const PACK_MAGIC: &[u8; 4] = b"MVSP";

pub fn encode_model_pack(model: &QueryModel, config: &RunConfig) -> Result<Vec<u8>> {
    let origin = Path::new("<model pack>");
    let mut entries = Vec::new();
    for (prefix, c) in model.params.combiners() {
        for (name, shape, values) in c.named_tensors() {
            entries.push((format!("{prefix}.{name}"), shape.to_vec(), values));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(PACK_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, values) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_body(values, &shape, &mut out, origin)?;
    }
    // the echo describes the stored tensors, whatever the caller's config says
    let hidden = model
        .params
        .combiners()
        .first()
        .map(|(_, c)| c.hidden())
        .or(config.hidden);
    let echo = RunConfig {
        variant: model.variant,
        dim: Some(model.dim()),
        hidden,
        ..config.clone()
    }
    .to_json();
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    Ok(out)
}

pub fn decode_model_pack(bytes: &[u8], origin: &Path) -> Result<(QueryModel, RunConfig)> {
    let malformed = |detail: String| Error::Malformed {
        path: origin.to_path_buf(),
        detail,
    };
    let mut r = Reader::new(bytes, origin);
    r.magic(PACK_MAGIC)?;
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: origin.to_path_buf(),
            what: "version",
            found: version.into(),
        });
    }
    let count = r.u32("entry count")? as usize;
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| malformed(format!("entry name is not UTF-8: {e}")))?
            .to_string();
        let t = decode_body(&mut r)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(malformed(format!("duplicate entry `{name}`")));
        }
    }
    let len = r.u32("config length")? as usize;
    let echo = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|e| malformed(format!("config is not UTF-8: {e}")))?;
    if !r.is_done() {
        return Err(malformed("trailing bytes after config".into()));
    }
    let config: RunConfig = serde_json::from_str(echo)
        .map_err(|e| malformed(format!("config JSON: {e}")))?;
    let (dim, hidden) = match (config.dim, config.hidden) {
        (Some(d), Some(h)) => (d, h),
        _ => return Err(malformed("config echo lacks dim or hidden".into())),
    };

    let mut model = QueryModel::init(config.variant, 0, dim, hidden, config.init)?;
    model.params = model.params.zeros_like();
    let mut expected = 0;
    let mut combiners: Vec<(&str, &mut crate::combiner::CombinerParams)> = match &mut model.params {
        FusionParams::Whc(w) => vec![
            ("mod", &mut w.mod_combiner),
            ("tgt", &mut w.tgt_combiner),
            ("final", &mut w.final_combiner),
        ],
        FusionParams::Single(c) => vec![("single", c)],
        FusionParams::Sum { .. } => Vec::new(),
    };
    for (prefix, c) in combiners.iter_mut() {
        let names: Vec<(String, Vec<usize>)> = c
            .named_tensors()
            .into_iter()
            .map(|(n, s, _)| (format!("{prefix}.{n}"), s.to_vec()))
            .collect();
        for ((name, shape), slot) in names.into_iter().zip(c.slices_mut()) {
            let t = tensors
                .get(&name)
                .ok_or_else(|| malformed(format!("missing entry `{name}`")))?;
            if t.dims != shape {
                return Err(malformed(format!(
                    "entry `{name}` has dims {:?}, expected {shape:?}",
                    t.dims
                )));
            }
            slot.copy_from_slice(&t.values);
            expected += 1;
        }
    }
    if expected != tensors.len() {
        return Err(malformed(format!(
            "{} entries present, {expected} expected for this variant",
            tensors.len()
        )));
    }
    model.validate()?;
    Ok((model, config))
}

pub fn save_model(path: impl AsRef<Path>, model: &QueryModel, config: &RunConfig) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model_pack(model, config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(QueryModel, RunConfig)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model_pack(&bytes, path)
}
