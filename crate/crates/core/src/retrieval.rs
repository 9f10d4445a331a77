//! Embedding-based object retrieval.
//!
//! Frames from a video are matched against a precomputed text-embedding
//! index of object labels by cosine similarity; the top-K labels feed the
//! visual prompt. Index construction embeds each label through the fixed
//! template sentence and is a one-time offline step; the index file format
//! below makes it portable.
//!
//! Embedding file format (UTF-8): header `dim D count C`, then C records of
//! `label<TAB>base64(little-endian f32 x D)`.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::Path;

use base64::Engine as _;
use base64::engine::general_purpose::STANDARD as BASE64;

/// Template sentence wrapped around each object label before embedding.
pub fn template_sentence(label: &str) -> String {
    format!("This is a photo of a {label}")
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding must be non-empty with finite values")]
    BadVector,
    #[error("cannot normalize a zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("label list must be non-empty")]
    EmptyLabels,
    #[error("frame embedding list must be non-empty")]
    EmptyFrames,
    #[error("top_k must be positive")]
    InvalidTopK,
    #[error("embedding provider failed for `{query}`: {message}")]
    Provider { query: String, message: String },
    #[error("label `{0}` contains a tab or newline")]
    UnencodableLabel(String),
    #[error("malformed embedding file at line {0}: {1}")]
    MalformedFile(usize, String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// L2-normalized embedding. Cosine similarity reduces to a dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes the input; rescaling the input does not change the result.
    pub fn new(values: Vec<f32>) -> Result<Self, RetrievalError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::BadVector);
        }
        let norm = values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(RetrievalError::ZeroNorm);
        }
        let values = values.iter().map(|v| (*v as f64 / norm) as f32).collect();
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    /// Cosine similarity with another normalized vector, clamped to [-1, 1].
    pub fn cosine(&self, other: &EmbeddingVector) -> f32 {
        self.cosine_f64(other) as f32
    }

    /// Ranking happens in f64 so near-ties order the same way regardless of
    /// the storage precision.
    fn cosine_f64(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        dot.clamp(-1.0, 1.0)
    }
}

/// Labels plus their normalized embeddings, in build order.
/// Entry order is the tie-break for equal scores.
#[derive(Debug, Clone)]
pub struct ObjectIndex {
    dim: usize,
    entries: Vec<(String, EmbeddingVector)>,
}

impl ObjectIndex {
    pub fn new(entries: Vec<(String, EmbeddingVector)>) -> Result<Self, RetrievalError> {
        if entries.is_empty() {
            return Err(RetrievalError::EmptyLabels);
        }
        let dim = entries[0].1.dim();
        let mut seen = HashSet::new();
        for (label, emb) in &entries {
            if emb.dim() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    got: emb.dim(),
                });
            }
            if !seen.insert(label.clone()) {
                return Err(RetrievalError::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, EmbeddingVector)] {
        &self.entries
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let pairs: Vec<(&str, &[f32])> = self
            .entries
            .iter()
            .map(|(l, e)| (l.as_str(), e.as_slice()))
            .collect();
        write_embedding_file(path, self.dim, &pairs)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let records = read_embedding_file(path)?;
        let entries = records
            .into_iter()
            .map(|(label, values)| Ok((label, EmbeddingVector::new(values)?)))
            .collect::<Result<Vec<_>, RetrievalError>>()?;
        Self::new(entries)
    }
}

/// Anything that turns text into an embedding vector of a fixed dimension.
pub trait EmbeddingProvider {
    fn embed(&self, text: &str) -> Result<Vec<f32>, String>;
}

/// Deterministic stand-in provider: expands SHA-256 of the text into a
/// pseudo-random vector. No semantic content; useful for tests, demos, and
/// exercising the file formats without a real text encoder.
#[derive(Debug, Clone)]
pub struct HashEmbeddingProvider {
    pub dim: usize,
}

impl EmbeddingProvider for HashEmbeddingProvider {
    fn embed(&self, text: &str) -> Result<Vec<f32>, String> {
        use sha2::{Digest, Sha256};
        if self.dim == 0 {
            return Err("dimension must be positive".into());
        }
        let mut out = Vec::with_capacity(self.dim);
        let mut counter: u32 = 0;
        while out.len() < self.dim {
            let mut hasher = Sha256::new();
            hasher.update(text.as_bytes());
            hasher.update(counter.to_le_bytes());
            let digest = hasher.finalize();
            for chunk in digest.chunks_exact(4) {
                if out.len() == self.dim {
                    break;
                }
                let x = u32::from_le_bytes(chunk.try_into().unwrap());
                // map to (-1, 1)
                out.push((x as f64 / u32::MAX as f64 * 2.0 - 1.0) as f32);
            }
            counter += 1;
        }
        Ok(out)
    }
}

/// Provider backed by precomputed vectors keyed by the exact query text.
#[derive(Debug, Clone)]
pub struct FileEmbeddingProvider {
    map: std::collections::HashMap<String, Vec<f32>>,
}

impl FileEmbeddingProvider {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let records = read_embedding_file(path)?;
        Ok(Self {
            map: records.into_iter().collect(),
        })
    }
}

impl EmbeddingProvider for FileEmbeddingProvider {
    fn embed(&self, text: &str) -> Result<Vec<f32>, String> {
        self.map
            .get(text)
            .cloned()
            .ok_or_else(|| format!("no precomputed vector for `{text}`"))
    }
}

/// Embed every label through the template sentence and build the index.
/// Entries keep the input label order.
pub fn build_index<S: AsRef<str>>(
    labels: &[S],
    provider: &dyn EmbeddingProvider,
) -> Result<ObjectIndex, RetrievalError> {
    if labels.is_empty() {
        return Err(RetrievalError::EmptyLabels);
    }
    let mut entries = Vec::with_capacity(labels.len());
    let mut dim: Option<usize> = None;
    for label in labels {
        let label = label.as_ref();
        let query = template_sentence(label);
        let values = provider
            .embed(&query)
            .map_err(|message| RetrievalError::Provider {
                query: query.clone(),
                message,
            })?;
        if let Some(d) = dim {
            if values.len() != d {
                return Err(RetrievalError::DimensionMismatch {
                    expected: d,
                    got: values.len(),
                });
            }
        } else {
            dim = Some(values.len());
        }
        entries.push((label.to_string(), EmbeddingVector::new(values)?));
    }
    ObjectIndex::new(entries)
}

/// Which frames of an N-frame video to embed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePlan {
    indices: Vec<usize>,
}

impl FramePlan {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Endpoint-inclusive equally-spaced frame indices.
///
/// For `frame_count > 1`, index_i = round(i * (N-1) / (k-1)), deduplicated;
/// a single frame picks the middle. Rounding is half-away-from-zero.
///
/// # Panics
/// If `video_frames` or `frame_count` is zero.
pub fn plan_frames(video_frames: usize, frame_count: usize) -> FramePlan {
    assert!(video_frames >= 1, "video must have at least one frame");
    assert!(frame_count >= 1, "frame count must be positive");
    let last = (video_frames - 1) as f64;
    let mut indices: Vec<usize> = if frame_count == 1 {
        vec![(last / 2.0).round() as usize]
    } else {
        (0..frame_count)
            .map(|i| (i as f64 * last / (frame_count - 1) as f64).round() as usize)
            .collect()
    };
    indices.dedup();
    FramePlan { indices }
}

/// How per-frame similarities combine into one score per label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Highest similarity over frames: favors objects clearly visible in
    /// any single frame. The default.
    #[default]
    Max,
    /// Mean similarity over frames.
    Mean,
}

/// Ranked labels with their scores, non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    ranked: Vec<(String, f32)>,
}

impl RetrievalResult {
    pub fn ranked(&self) -> &[(String, f32)] {
        &self.ranked
    }

    pub fn labels(&self) -> Vec<String> {
        self.ranked.iter().map(|(l, _)| l.clone()).collect()
    }
}

/// Top-K labels by aggregated cosine similarity (max over frames).
/// Ties keep index order; K is clipped to the index size.
pub fn retrieve(
    frames: &[EmbeddingVector],
    index: &ObjectIndex,
    top_k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    retrieve_with(frames, index, top_k, Aggregation::Max)
}

pub fn retrieve_with(
    frames: &[EmbeddingVector],
    index: &ObjectIndex,
    top_k: usize,
    aggregation: Aggregation,
) -> Result<RetrievalResult, RetrievalError> {
    if frames.is_empty() {
        return Err(RetrievalError::EmptyFrames);
    }
    if top_k == 0 {
        return Err(RetrievalError::InvalidTopK);
    }
    for f in frames {
        if f.dim() != index.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: index.dim,
                got: f.dim(),
            });
        }
    }
    let mut scored: Vec<(usize, f64)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, (_, emb))| {
            let score = match aggregation {
                Aggregation::Max => frames
                    .iter()
                    .map(|f| f.cosine_f64(emb))
                    .fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Mean => {
                    frames.iter().map(|f| f.cosine_f64(emb)).sum::<f64>() / frames.len() as f64
                }
            };
            (i, score)
        })
        .collect();
    // stable sort: equal scores keep entry order
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    scored.truncate(top_k.min(index.entries.len()));
    Ok(RetrievalResult {
        ranked: scored
            .into_iter()
            .map(|(i, s)| (index.entries[i].0.clone(), s as f32))
            .collect(),
    })
}

/// Write records in the embedding file format.
pub fn write_embedding_file(
    path: impl AsRef<Path>,
    dim: usize,
    records: &[(&str, &[f32])],
) -> Result<(), RetrievalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "dim {} count {}", dim, records.len())?;
    for (label, values) in records {
        if label.contains('\t') || label.contains('\n') {
            return Err(RetrievalError::UnencodableLabel(label.to_string()));
        }
        if values.len() != dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: dim,
                got: values.len(),
            });
        }
        let mut raw = Vec::with_capacity(dim * 4);
        for v in *values {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        writeln!(out, "{label}\t{}", BASE64.encode(&raw))?;
    }
    out.flush()?;
    Ok(())
}

/// Read records from the embedding file format. Vectors are returned raw
/// (not normalized).
pub fn read_embedding_file(
    path: impl AsRef<Path>,
) -> Result<Vec<(String, Vec<f32>)>, RetrievalError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| RetrievalError::MalformedFile(0, "empty file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (dim, count) = match parts.as_slice() {
        ["dim", d, "count", c] => (
            d.parse::<usize>()
                .map_err(|_| RetrievalError::MalformedFile(1, format!("bad dim `{d}`")))?,
            c.parse::<usize>()
                .map_err(|_| RetrievalError::MalformedFile(1, format!("bad count `{c}`")))?,
        ),
        _ => {
            return Err(RetrievalError::MalformedFile(
                1,
                "expected `dim D count C` header".into(),
            ))
        }
    };
    let mut records = Vec::with_capacity(count);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let (label, b64) = line.split_once('\t').ok_or_else(|| {
            RetrievalError::MalformedFile(lineno, "expected `label<TAB>base64`".into())
        })?;
        let raw = BASE64
            .decode(b64.trim())
            .map_err(|e| RetrievalError::MalformedFile(lineno, format!("bad base64: {e}")))?;
        if raw.len() != dim * 4 {
            return Err(RetrievalError::MalformedFile(
                lineno,
                format!("expected {} bytes, got {}", dim * 4, raw.len()),
            ));
        }
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((label.to_string(), values));
    }
    if records.len() != count {
        return Err(RetrievalError::MalformedFile(
            0,
            format!("header count {count} but {} records", records.len()),
        ));
    }
    Ok(records)
}
