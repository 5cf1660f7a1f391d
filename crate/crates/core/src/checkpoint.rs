//! Model checkpoints: a directory holding `header.json` and `weights.msft`,
//! the latter a concatenation of binary tensor records in the order the
//! header's `tensors` list names them.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::io::{load_tensors, save_tensors};
use crate::tensor::Tensor;

pub const HEADER_FILE: &str = "header.json";
pub const WEIGHTS_FILE: &str = "weights.msft";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<H> {
    pub kind: String,
    pub tensors: Vec<String>,
    pub header: H,
}

pub fn save<H: Serialize>(dir: &Path, kind: &str, header: &H, tensors: &[(&str, &Tensor)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let envelope = Envelope {
        kind: kind.to_string(),
        tensors: tensors.iter().map(|(n, _)| n.to_string()).collect(),
        header,
    };
    let weights: Vec<&Tensor> = tensors.iter().map(|(_, t)| *t).collect();
    save_tensors(&dir.join(WEIGHTS_FILE), &weights)?;
    let mut text = serde_json::to_string_pretty(&envelope)?;
    text.push('\n');
    let path = dir.join(HEADER_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint of the given kind; tensors come back in header order.
pub fn load<H: DeserializeOwned>(dir: &Path, kind: &str) -> Result<(H, Vec<(String, Tensor)>)> {
    let header_path = dir.join(HEADER_FILE);
    if !header_path.exists() {
        return Err(Error::MissingArtifact {
            path: header_path,
            what: format!("no {kind} checkpoint here"),
        });
    }
    let text = std::fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let envelope: Envelope<H> = serde_json::from_str(&text)?;
    if envelope.kind != kind {
        return Err(format_error(
            header_path,
            format!("checkpoint holds a {} model, expected {kind}", envelope.kind),
        ));
    }
    let weights_path = dir.join(WEIGHTS_FILE);
    let tensors = load_tensors(&weights_path)?;
    if tensors.len() != envelope.tensors.len() {
        return Err(format_error(
            weights_path,
            format!(
                "header names {} tensors, file holds {}",
                envelope.tensors.len(),
                tensors.len()
            ),
        ));
    }
    Ok((envelope.header, envelope.tensors.into_iter().zip(tensors).collect()))
}

pub(crate) fn format_error(path: PathBuf, reason: String) -> Error {
    Error::Format { path, reason }
}

/// Pops tensors off a loaded list, checking names and dims.
pub(crate) struct TensorReader {
    dir: PathBuf,
    items: std::vec::IntoIter<(String, Tensor)>,
}

impl TensorReader {
    pub fn new(dir: &Path, items: Vec<(String, Tensor)>) -> Self {
        TensorReader {
            dir: dir.to_path_buf(),
            items: items.into_iter(),
        }
    }

    pub fn take(&mut self, name: &str, dims: &[usize]) -> Result<Tensor> {
        let path = self.dir.join(WEIGHTS_FILE);
        let (found, tensor) = self
            .items
            .next()
            .ok_or_else(|| format_error(path.clone(), format!("missing tensor {name}")))?;
        if found != name {
            return Err(format_error(path, format!("expected tensor {name}, found {found}")));
        }
        if tensor.dims() != dims {
            return Err(format_error(
                path,
                format!("tensor {name} has dims {:?}, expected {dims:?}", tensor.dims()),
            ));
        }
        Ok(tensor)
    }
}
