//! Hidden-state dump format: a JSON manifest next to a raw little-endian
//! binary32 tensor laid out as `[layer][magnitude][sentence][dim]`.
//!
//! The store is immutable after loading and can be shared read-only across
//! worker threads.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Bytes per stored element.
pub const ELEMENT_BYTES: usize = 4;

/// Axis names of the data file, outermost first.
pub const INDEX_ORDER: [&str; 4] = ["layer", "magnitude", "sentence", "dim"];

/// The 26 default magnitudes used by the synthetic generator.
pub const DEFAULT_MAGNITUDES: [u64; 26] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 30, 40, 50, 60, 70, 80, 90, 100, 150, 200, 300, 500,
    700, 1000,
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("data file size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("non-finite value {value} at [layer {layer}][magnitude {magnitude}][sentence {sentence}][dim {dim}]")]
    NonFinite {
        layer: usize,
        magnitude: usize,
        sentence: usize,
        dim: usize,
        value: f32,
    },
    #[error("checksum mismatch: manifest says {expected}, data hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("{axis} index {index} out of range (size {size})")]
    OutOfRange {
        axis: &'static str,
        index: usize,
        size: usize,
    },
    #[error("frequency table: line {line}: {message}")]
    MalformedFrequency { line: usize, message: String },
    #[error("frequency table: magnitude {0} missing")]
    MissingMagnitude(u64),
    #[error("frequency table: magnitude {magnitude} has non-positive count {count}")]
    NonPositiveCount { magnitude: u64, count: f64 },
    #[error("frequency table: magnitude {0} listed more than once")]
    DuplicateMagnitude(u64),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    #[default]
    Little,
}

/// Metadata describing one model's dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub model_name: String,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub magnitudes: Vec<u64>,
    pub n_sentences: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_texts: Option<Vec<String>>,
    pub dtype: Dtype,
    pub byte_order: ByteOrder,
    pub index_order: Vec<String>,
    /// Relative paths resolve against the manifest's directory.
    pub data_file: PathBuf,
    /// Lowercase hex SHA-256 of the data file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

impl DatasetManifest {
    pub fn new(
        model_name: impl Into<String>,
        n_layers: usize,
        hidden_dim: usize,
        magnitudes: Vec<u64>,
        n_sentences: usize,
        data_file: impl Into<PathBuf>,
    ) -> Self {
        Self {
            model_name: model_name.into(),
            n_layers,
            hidden_dim,
            magnitudes,
            n_sentences,
            sentence_texts: None,
            dtype: Dtype::F32,
            byte_order: ByteOrder::Little,
            index_order: INDEX_ORDER.iter().map(|s| s.to_string()).collect(),
            data_file: data_file.into(),
            checksum: None,
        }
    }

    pub fn n_magnitudes(&self) -> usize {
        self.magnitudes.len()
    }

    /// Number of f32 elements the data file must hold.
    pub fn element_count(&self) -> usize {
        self.n_layers * self.magnitudes.len() * self.n_sentences * self.hidden_dim
    }

    pub fn expected_bytes(&self) -> u64 {
        (self.element_count() * ELEMENT_BYTES) as u64
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: String| Err(DatasetError::MalformedManifest(msg));
        if self.n_layers == 0 {
            return bad("n_layers must be positive".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if self.n_sentences < 2 {
            return bad(format!(
                "n_sentences must be >= 2, got {}",
                self.n_sentences
            ));
        }
        if self.magnitudes.len() < 3 {
            return bad(format!(
                "at least 3 magnitudes required, got {}",
                self.magnitudes.len()
            ));
        }
        if self.magnitudes[0] < 1 {
            return bad("magnitudes must be >= 1".into());
        }
        if let Some(w) = self.magnitudes.windows(2).find(|w| w[0] >= w[1]) {
            return bad(format!(
                "magnitudes must be strictly increasing ({} then {})",
                w[0], w[1]
            ));
        }
        if self.index_order != INDEX_ORDER {
            return bad(format!(
                "index_order must be {:?}, got {:?}",
                INDEX_ORDER, self.index_order
            ));
        }
        if let Some(texts) = &self.sentence_texts {
            if texts.len() != self.n_sentences {
                return bad(format!(
                    "sentence_texts has {} entries for {} sentences",
                    texts.len(),
                    self.n_sentences
                ));
            }
        }
        if let Some(sum) = &self.checksum {
            if sum.len() != 64 || !sum.bytes().all(|b| b.is_ascii_hexdigit()) {
                return bad(format!("checksum is not a SHA-256 hex digest: {sum}"));
            }
        }
        Ok(())
    }
}

/// Borrowed `[sentence][dim]` block for one (layer, magnitude) cell.
#[derive(Debug, Clone, Copy)]
pub struct SentenceBlock<'a> {
    data: &'a [f32],
    dim: usize,
}

impl<'a> SentenceBlock<'a> {
    pub fn n_sentences(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, sentence: usize) -> &'a [f32] {
        &self.data[sentence * self.dim..(sentence + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &'a [f32]> + 'a {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.data
    }

    /// Rows widened to f64.
    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        self.rows()
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect()
    }
}

/// One model's validated hidden states.
#[derive(Debug, Clone)]
pub struct HiddenStateStore {
    manifest: DatasetManifest,
    values: Vec<f32>,
}

impl HiddenStateStore {
    /// Builds a store from in-memory values, applying every load-time check
    /// except the file-level ones.
    pub fn from_parts(manifest: DatasetManifest, values: Vec<f32>) -> Result<Self, DatasetError> {
        manifest.validate()?;
        if values.len() != manifest.element_count() {
            return Err(DatasetError::SizeMismatch {
                expected: manifest.expected_bytes(),
                actual: (values.len() * ELEMENT_BYTES) as u64,
            });
        }
        let store = Self { manifest, values };
        store.check_finite()?;
        Ok(store)
    }

    fn check_finite(&self) -> Result<(), DatasetError> {
        if let Some(flat) = self.values.iter().position(|v| !v.is_finite()) {
            let (layer, magnitude, sentence, dim) = self.unravel(flat);
            return Err(DatasetError::NonFinite {
                layer,
                magnitude,
                sentence,
                dim,
                value: self.values[flat],
            });
        }
        Ok(())
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn model_name(&self) -> &str {
        &self.manifest.model_name
    }

    pub fn magnitudes(&self) -> &[u64] {
        &self.manifest.magnitudes
    }

    pub fn n_layers(&self) -> usize {
        self.manifest.n_layers
    }

    pub fn n_magnitudes(&self) -> usize {
        self.manifest.magnitudes.len()
    }

    pub fn n_sentences(&self) -> usize {
        self.manifest.n_sentences
    }

    pub fn hidden_dim(&self) -> usize {
        self.manifest.hidden_dim
    }

    /// `(layers, magnitudes, sentences, dim)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (
            self.n_layers(),
            self.n_magnitudes(),
            self.n_sentences(),
            self.hidden_dim(),
        )
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Flat element offset of `[layer][magnitude][sentence][dim]`.
    pub fn offset(&self, layer: usize, magnitude: usize, sentence: usize, dim: usize) -> usize {
        let (_, m, s, d) = self.shape();
        ((layer * m + magnitude) * s + sentence) * d + dim
    }

    fn unravel(&self, flat: usize) -> (usize, usize, usize, usize) {
        let (_, m, s, d) = self.shape();
        let dim = flat % d;
        let rest = flat / d;
        let sentence = rest % s;
        let rest = rest / s;
        (rest / m, rest % m, sentence, dim)
    }

    pub fn get(
        &self,
        layer: usize,
        magnitude: usize,
        sentence: usize,
        dim: usize,
    ) -> Result<f32, DatasetError> {
        self.check_index("layer", layer, self.n_layers())?;
        self.check_index("magnitude", magnitude, self.n_magnitudes())?;
        self.check_index("sentence", sentence, self.n_sentences())?;
        self.check_index("dim", dim, self.hidden_dim())?;
        Ok(self.values[self.offset(layer, magnitude, sentence, dim)])
    }

    fn check_index(
        &self,
        axis: &'static str,
        index: usize,
        size: usize,
    ) -> Result<(), DatasetError> {
        if index >= size {
            Err(DatasetError::OutOfRange { axis, index, size })
        } else {
            Ok(())
        }
    }

    /// The `[sentence][dim]` block for one (layer, magnitude) cell, borrowed
    /// straight from the loaded buffer.
    pub fn slice_layer_magnitude(
        &self,
        layer: usize,
        magnitude_index: usize,
    ) -> Result<SentenceBlock<'_>, DatasetError> {
        self.check_index("layer", layer, self.n_layers())?;
        self.check_index("magnitude", magnitude_index, self.n_magnitudes())?;
        let start = self.offset(layer, magnitude_index, 0, 0);
        let len = self.n_sentences() * self.hidden_dim();
        Ok(SentenceBlock {
            data: &self.values[start..start + len],
            dim: self.hidden_dim(),
        })
    }

    /// Serializes the tensor in file order.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Writes `<stem>.bin` and `<stem>.json` into `dir`, recording the
    /// SHA-256 of the data in the manifest. Returns the manifest path.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf, DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let bytes = self.to_bytes();
        let data_name = format!("{stem}.bin");
        let data_path = dir.join(&data_name);
        fs::write(&data_path, &bytes).map_err(io_err(&data_path))?;

        let mut manifest = self.manifest.clone();
        manifest.data_file = PathBuf::from(data_name);
        manifest.checksum = Some(sha256_hex(&bytes));
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| DatasetError::MalformedManifest(e.to_string()))?;
        let manifest_path = dir.join(format!("{stem}.json"));
        fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;
        Ok(manifest_path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads and fully validates a dump from its manifest.
pub fn load_store(manifest_path: &Path) -> Result<HiddenStateStore, DatasetError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DatasetError::MalformedManifest(e.to_string()))?;
    manifest.validate()?;

    let data_path = if manifest.data_file.is_absolute() {
        manifest.data_file.clone()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.data_file)
    };
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    if bytes.len() as u64 != manifest.expected_bytes() {
        return Err(DatasetError::SizeMismatch {
            expected: manifest.expected_bytes(),
            actual: bytes.len() as u64,
        });
    }
    if let Some(expected) = &manifest.checksum {
        let actual = sha256_hex(&bytes);
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(DatasetError::ChecksumMismatch {
                expected: expected.clone(),
                actual,
            });
        }
    }
    let values = bytes
        .chunks_exact(ELEMENT_BYTES)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    HiddenStateStore::from_parts(manifest, values)
}

/// Corpus counts per magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub entries: BTreeMap<u64, f64>,
}

impl FrequencyTable {
    pub fn get(&self, magnitude: u64) -> Option<f64> {
        self.entries.get(&magnitude).copied()
    }

    /// Natural-log counts in the order of `magnitudes`.
    pub fn log_counts(&self, magnitudes: &[u64]) -> Result<Vec<f64>, DatasetError> {
        magnitudes
            .iter()
            .map(|&m| {
                self.get(m)
                    .map(f64::ln)
                    .ok_or(DatasetError::MissingMagnitude(m))
            })
            .collect()
    }

    /// Checks that every magnitude is covered by a positive count.
    pub fn covers(&self, magnitudes: &[u64]) -> Result<(), DatasetError> {
        for &m in magnitudes {
            match self.get(m) {
                None => return Err(DatasetError::MissingMagnitude(m)),
                Some(c) if !(c > 0.0 && c.is_finite()) => {
                    return Err(DatasetError::NonPositiveCount {
                        magnitude: m,
                        count: c,
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Parses `magnitude<TAB>count` rows; blank and `#` lines are skipped.
pub fn parse_frequency_table(
    text: &str,
    magnitudes: &[u64],
) -> Result<FrequencyTable, DatasetError> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: String| DatasetError::MalformedFrequency {
            line: line_no,
            message,
        };
        let mut fields = line.split('\t');
        let (Some(m), Some(c), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed(format!(
                "expected `magnitude<TAB>count`, got {raw:?}"
            )));
        };
        let magnitude: u64 = m
            .trim()
            .parse()
            .map_err(|e| malformed(format!("bad magnitude {m:?}: {e}")))?;
        let count: f64 = c
            .trim()
            .parse()
            .map_err(|e| malformed(format!("bad count {c:?}: {e}")))?;
        if !(count > 0.0 && count.is_finite()) {
            return Err(DatasetError::NonPositiveCount { magnitude, count });
        }
        if entries.insert(magnitude, count).is_some() {
            return Err(DatasetError::DuplicateMagnitude(magnitude));
        }
    }
    let table = FrequencyTable { entries };
    table.covers(magnitudes)?;
    Ok(table)
}

pub fn load_frequency_table(
    path: &Path,
    magnitudes: &[u64],
) -> Result<FrequencyTable, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_frequency_table(&text, magnitudes)
}
