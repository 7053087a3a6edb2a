//! Model files: `<name>.manifest.json` plus `<name>.blob`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinear::PolyConfig;
use crate::ring::FixedPointParams;

pub const MANIFEST_VERSION: u32 = 1;
pub const DTYPE: &str = "ring64le";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// width of a client token
    pub input_dim: usize,
    pub model_dim: usize,
    /// rows of the positional table
    pub max_tokens: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMeta {
    pub heads: usize,
    pub ffn_dim: usize,
    /// raw ring value at scale `f`, read as signed
    pub theta: i64,
    pub beta: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    /// byte offset into the blob
    pub offset: u64,
}

impl TensorEntry {
    pub fn byte_len(&self) -> u64 {
        (self.shape[0] * self.shape[1] * 8) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub version: u32,
    pub params: FixedPointParams,
    pub poly: PolyConfig,
    pub dims: Dims,
    /// party holding the pruning and reduction thresholds
    #[serde(default)]
    pub threshold_holder: u8,
    pub layers: Vec<LayerMeta>,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded model: manifest plus tensors as raw ring words.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub manifest: ModelManifest,
    pub tensors: BTreeMap<String, Vec<u64>>,
}

pub fn layer_tensor(l: usize, what: &str) -> String {
    format!("layer{l}.{what}")
}

/// Every tensor a model with this shape must have, with its shape.
pub fn expected_tensors(dims: &Dims, layers: &[LayerMeta]) -> Vec<(String, [usize; 2])> {
    let d = dims.model_dim;
    let mut v = vec![
        ("embed.w".to_string(), [dims.input_dim, d]),
        ("embed.pos".to_string(), [dims.max_tokens, d]),
    ];
    for (l, m) in layers.iter().enumerate() {
        for (name, shape) in [
            ("wq", [d, d]),
            ("bq", [1, d]),
            ("wk", [d, d]),
            ("bk", [1, d]),
            ("wv", [d, d]),
            ("bv", [1, d]),
            ("wo", [d, d]),
            ("bo", [1, d]),
            ("ln1.gamma", [1, d]),
            ("ln1.beta", [1, d]),
            ("ffn.w1", [d, m.ffn_dim]),
            ("ffn.b1", [1, m.ffn_dim]),
            ("ffn.w2", [m.ffn_dim, d]),
            ("ffn.b2", [1, d]),
            ("ln2.gamma", [1, d]),
            ("ln2.beta", [1, d]),
        ] {
            v.push((layer_tensor(l, name), shape));
        }
    }
    v.push(("head.w".to_string(), [d, dims.classes]));
    v.push(("head.b".to_string(), [1, dims.classes]));
    v
}

impl ModelManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Version { found: self.version, expected: MANIFEST_VERSION });
        }
        self.params.validate()?;
        self.poly.validate(&self.params)?;
        let d = &self.dims;
        if d.input_dim == 0 || d.model_dim == 0 || d.classes == 0 || d.max_tokens == 0 {
            return Err(Error::Validation("dimensions must be positive".into()));
        }
        if self.threshold_holder > 1 {
            return Err(Error::Validation(format!("threshold holder {} is not a party", self.threshold_holder)));
        }
        for (l, m) in self.layers.iter().enumerate() {
            if m.heads == 0 || d.model_dim % m.heads != 0 {
                return Err(Error::Validation(format!("layer {l}: {} heads do not divide {}", m.heads, d.model_dim)));
            }
            if m.ffn_dim == 0 {
                return Err(Error::Validation(format!("layer {l}: empty feed-forward")));
            }
            if m.beta <= m.theta {
                return Err(Error::Validation(format!(
                    "layer {l}: reduction threshold {} must exceed pruning threshold {}",
                    m.beta, m.theta
                )));
            }
        }
        let have: BTreeMap<&str, &TensorEntry> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        if have.len() != self.tensors.len() {
            return Err(Error::Validation("duplicate tensor names".into()));
        }
        for (name, shape) in expected_tensors(d, &self.layers) {
            let Some(t) = have.get(name.as_str()) else {
                return Err(Error::Validation(format!("missing tensor {name}")));
            };
            if t.shape != shape {
                return Err(Error::Validation(format!("tensor {name}: shape {:?}, expected {:?}", t.shape, shape)));
            }
            if t.dtype != DTYPE {
                return Err(Error::Validation(format!("tensor {name}: dtype {}", t.dtype)));
            }
        }
        Ok(())
    }
}

/// `<dir>/<name>.manifest.json` and `<dir>/<name>.blob`.
pub fn model_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.manifest.json")), dir.join(format!("{name}.blob")))
}

/// The blob path paired with a manifest path.
pub fn blob_path_for(manifest: &Path) -> PathBuf {
    let s = manifest.to_string_lossy();
    match s.strip_suffix(".manifest.json") {
        Some(stem) => PathBuf::from(format!("{stem}.blob")),
        None => manifest.with_extension("blob"),
    }
}

impl Model {
    pub fn dims(&self) -> &Dims {
        &self.manifest.dims
    }

    pub fn params(&self) -> FixedPointParams {
        self.manifest.params
    }

    pub fn tensor(&self, name: &str) -> &[u64] {
        self.tensors.get(name).map(Vec::as_slice).unwrap_or_else(|| panic!("validated model lacks {name}"))
    }

    /// Builds a model from tensors, laying out the tensor table in
    /// canonical order.
    pub fn assemble(
        params: FixedPointParams,
        poly: PolyConfig,
        dims: Dims,
        layers: Vec<LayerMeta>,
        tensors: BTreeMap<String, Vec<u64>>,
    ) -> Result<Model> {
        let mut table = Vec::new();
        let mut offset = 0u64;
        for (name, shape) in expected_tensors(&dims, &layers) {
            let data = tensors.get(&name).ok_or_else(|| Error::Validation(format!("missing tensor {name}")))?;
            if data.len() != shape[0] * shape[1] {
                return Err(Error::Validation(format!("tensor {name}: {} values for shape {shape:?}", data.len())));
            }
            let e = TensorEntry { name, shape, dtype: DTYPE.into(), offset };
            offset += e.byte_len();
            table.push(e);
        }
        let manifest = ModelManifest {
            version: MANIFEST_VERSION,
            params,
            poly,
            dims,
            threshold_holder: 0,
            layers,
            tensors: table,
        };
        manifest.validate()?;
        Ok(Model { manifest, tensors })
    }

    pub fn blob_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in &self.manifest.tensors {
            out.resize(t.offset as usize, 0);
            for w in &self.tensors[&t.name] {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    /// Writes the manifest/blob pair and returns their paths.
    pub fn save(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
        let (mp, bp) = model_paths(dir, name);
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
        std::fs::write(&bp, self.blob_bytes()).map_err(|e| Error::io(&bp, e))?;
        Ok((mp, bp))
    }

    pub fn load(manifest_path: &Path, blob_path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        let blob = std::fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
        let mut tensors = BTreeMap::new();
        let mask = manifest.params.mask();
        for t in &manifest.tensors {
            let end = t.offset.checked_add(t.byte_len()).filter(|&e| e <= blob.len() as u64).ok_or_else(|| {
                Error::Validation(format!(
                    "tensor {} at bytes {}..{} overruns a {}-byte blob",
                    t.name,
                    t.offset,
                    t.offset + t.byte_len(),
                    blob.len()
                ))
            })?;
            let words: Vec<u64> = blob[t.offset as usize..end as usize]
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()) & mask)
                .collect();
            tensors.insert(t.name.clone(), words);
        }
        Ok(Model { manifest, tensors })
    }

    /// Loads from a manifest path, finding the blob next to it.
    pub fn load_manifest(manifest_path: &Path) -> Result<Model> {
        Model::load(manifest_path, &blob_path_for(manifest_path))
    }
}
