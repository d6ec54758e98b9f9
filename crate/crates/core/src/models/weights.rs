//! Bit-exact named-tensor weights format (MVW1).
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "MVW1" (4 bytes)
//! u32 tensor count
//! per tensor:
//!   u32 name length, UTF-8 name
//!   u32 rank, u32 dims[rank]
//!   product(dims) IEEE-754 f32 values
//! ```
//!
//! Names follow `layer<idx>.<weights|bias>`. A partial file holding
//! only backbone tensors can be loaded onto a model with a fresh head
//! via `allow_partial`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::models::Model;
use crate::nn::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MVW1";

/// Serialize every named parameter tensor of the model.
pub fn save_weights(model: &Model, path: &Path) -> Result<()> {
    let params = model.net.named_params();
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    let fail = |e: std::io::Error| Error::io(format!("writing {}", path.display()), e);
    w.write_all(MAGIC).map_err(fail)?;
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(fail)?;
    for (name, tensor) in params {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(fail)?;
        w.write_all(name.as_bytes()).map_err(fail)?;
        w.write_all(&(tensor.dims().len() as u32).to_le_bytes()).map_err(fail)?;
        for d in tensor.dims() {
            w.write_all(&(*d as u32).to_le_bytes()).map_err(fail)?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(fail)?;
        }
    }
    Ok(())
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedWeights
        } else {
            Error::io("reading weights file", e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_or_truncated(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Parse an MVW1 file into `(name, tensor)` pairs in file order.
pub fn read_weights_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadWeightsMagic);
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact_or_truncated(&mut r, &mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::UnknownTensor("<non-utf8 name>".to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r)? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = vec![0.0f32; len];
        for v in data.iter_mut() {
            let mut buf = [0u8; 4];
            read_exact_or_truncated(&mut r, &mut buf)?;
            *v = f32::from_le_bytes(buf);
        }
        out.push((name, Tensor::new(&dims, data)?));
    }
    Ok(out)
}

/// Load tensors into the model by name. With `allow_partial`, tensors
/// absent from the file (a fresh head on a pretrained backbone) keep
/// their current values; names in the file that match nothing in the
/// model are an error either way, as is any dims mismatch.
pub fn load_weights(model: &mut Model, path: &Path, allow_partial: bool) -> Result<()> {
    let loaded = read_weights_file(path)?;
    let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, tensor) in loaded {
        by_name.insert(name, tensor);
    }

    let model_names: Vec<String> = model
        .net
        .named_params()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    for name in by_name.keys() {
        if !model_names.contains(name) {
            return Err(Error::UnknownTensor(name.clone()));
        }
    }
    if !allow_partial {
        for name in &model_names {
            if !by_name.contains_key(name) {
                return Err(Error::UnknownTensor(format!("{name} missing from file")));
            }
        }
    }

    for (idx, layer) in model.net.layers.iter_mut().enumerate() {
        if let Some((w, b)) = layer.params_mut() {
            for (suffix, param) in [("weights", w), ("bias", b)] {
                let key = format!("layer{idx}.{suffix}");
                if let Some(tensor) = by_name.remove(&key) {
                    if tensor.dims() != param.dims() {
                        return Err(Error::WeightsDimMismatch {
                            name: key,
                            expected: param.dims().to_vec(),
                            found: tensor.dims().to_vec(),
                        });
                    }
                    *param = tensor;
                }
            }
        }
    }
    Ok(())
}
