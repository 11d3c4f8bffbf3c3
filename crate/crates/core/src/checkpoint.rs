//! On-disk model format: a JSON manifest plus one raw little-endian f32 file
//! per tensor.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::models::{DanVariant, ModelConfig};
use crate::numerics::Tensor;
use crate::training::{DanModel, Stage};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const TENSOR_DIR: &str = "tensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub variant: DanVariant,
    pub modality: String,
    pub stage: Stage,
    pub model_config: ModelConfig,
    /// Token truncation length the model was trained with.
    pub max_len: usize,
    pub vocabulary: Vocabulary,
    pub tensors: Vec<TensorEntry>,
}

/// A model together with everything needed to encode raw inputs for it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DanModel,
    pub vocab: Vocabulary,
    pub max_len: usize,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode_f32(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect()
}

fn tensor_file(name: &str) -> String {
    format!("{TENSOR_DIR}/{name}.f32")
}

impl Checkpoint {
    pub fn new(model: DanModel, vocab: Vocabulary, max_len: usize) -> Self {
        Checkpoint { model, vocab, max_len }
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let mut tensors = Vec::new();
        let mut seen = BTreeSet::new();
        for (prefix, set) in self.model.named_param_sets() {
            for (name, t) in set.iter() {
                let full = format!("{prefix}.{name}");
                if !seen.insert(full.clone()) {
                    return Err(Error::State(format!("duplicate tensor name {full}")));
                }
                tensors.push(TensorEntry {
                    file: tensor_file(&full),
                    bytes: 4 * t.len(),
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    name: full,
                });
            }
        }
        Ok(Manifest {
            format_version: FORMAT_VERSION,
            variant: self.model.variant,
            modality: self.model.config.modality.name().into(),
            stage: self.model.stage,
            model_config: self.model.config.clone(),
            max_len: self.max_len,
            vocabulary: self.vocab.clone(),
            tensors,
        })
    }

    /// Writes the tensors first and the manifest last, each atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = self.manifest()?;
        let tensor_dir = dir.join(TENSOR_DIR);
        fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
        let values = self.model.named_param_sets().into_iter().flat_map(|(_, set)| set.iter().map(|(_, t)| t));
        for (entry, t) in manifest.tensors.iter().zip(values) {
            write_atomic(&dir.join(&entry.file), &encode_f32(t))?;
        }
        let mut json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        json.push(b'\n');
        write_atomic(&dir.join(MANIFEST_FILE), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: format version {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                manifest.format_version
            )));
        }
        let vocab = manifest.vocabulary.clone().reindexed();
        if vocab.len() != manifest.model_config.vocab_size {
            return Err(Error::Data(format!(
                "{}: vocabulary has {} tokens but the model expects {}",
                path.display(),
                vocab.len(),
                manifest.model_config.vocab_size
            )));
        }
        let mut model = DanModel::new(manifest.model_config.clone(), manifest.variant, 0)?;
        model.stage = manifest.stage;
        let expected = Checkpoint::new(model.clone(), vocab.clone(), manifest.max_len).manifest()?;
        if expected.tensors.len() != manifest.tensors.len() {
            return Err(Error::Data(format!(
                "{}: {} tensors listed, model has {}",
                path.display(),
                manifest.tensors.len(),
                expected.tensors.len()
            )));
        }
        let mut data = Vec::with_capacity(manifest.tensors.len());
        for (entry, want) in manifest.tensors.iter().zip(&expected.tensors) {
            if entry.name != want.name || entry.shape != want.shape || entry.dtype != "f32" {
                return Err(Error::Data(format!(
                    "{}: tensor {} {:?} {} does not match expected {} {:?}",
                    path.display(),
                    entry.name,
                    entry.shape,
                    entry.dtype,
                    want.name,
                    want.shape
                )));
            }
            let file: PathBuf = dir.join(&entry.file);
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            if bytes.len() != entry.bytes || bytes.len() != want.bytes {
                return Err(Error::Data(format!(
                    "{}: {} bytes, expected {}",
                    file.display(),
                    bytes.len(),
                    want.bytes
                )));
            }
            data.push(decode_f32(&bytes));
        }
        let mut values = data.into_iter();
        for set in model.param_sets_mut() {
            for t in set.tensors_mut() {
                t.data_mut().copy_from_slice(&values.next().unwrap_or_default());
            }
        }
        Ok(Checkpoint { model, vocab, max_len: manifest.max_len })
    }
}
