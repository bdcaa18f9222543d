//! Model backends: the training/prediction interface, the on-disk model
//! format, and the built-in `toy` backend.
//!
//! The `toy` backend is an averaged perceptron over hashed token counts. It
//! is not a transformer, but it exercises every pipeline contract that a
//! real backend must honor: deterministic seeded training, per-epoch
//! shuffling, on-the-fly token dropping, staged initialization, vocabulary
//! checks, and score-consistent predictions — while training in
//! milliseconds.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::augment::{mix_seeds, mlm_mask, token_drop, DropSpec, MaskSpec, RngKey};
use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};
use crate::textprep::{TokenSequence, MASK_ID};
use crate::training::{FinetuneConfig, TaptConfig};

/// Distinct stream salts so shuffling, dropping, and feature dropout never
/// share an RNG sequence.
const SHUFFLE_SALT: u64 = 0x5355_4646;
const DROP_SALT: u64 = 0x44524f50;
const HEAD_SALT: u64 = 0x48454144;

/// One example ready for a backend: encoded text plus optional gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub id: String,
    pub seq: TokenSequence,
    pub label: Option<SentimentLabel>,
}

/// A dataset after tokenization, tagged with the vocabulary it was encoded
/// under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDataset {
    pub examples: Vec<EncodedExample>,
    pub vocab_size: u32,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// A trained model: metadata plus a flat weight payload.
///
/// `stage_tags` records the training history in order (e.g. `["TAPT",
/// "2FT-stage1", "2FT"]`); `config_hash` fingerprints the configuration the
/// last stage ran under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHandle {
    pub backend: String,
    pub vocab_size: u32,
    pub stage_tags: Vec<String>,
    pub config_hash: String,
    pub weights: Vec<f32>,
}

const MODEL_MAGIC: &[u8; 8] = b"SENTIMDL";
const MODEL_VERSION: u32 = 2;
const MODEL_DIGEST_LEN: usize = 32;

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelHeader {
    backend: String,
    vocab_size: u32,
    stage_tags: Vec<String>,
    config_hash: String,
    n_weights: u64,
}

impl ModelHandle {
    /// Appends a stage tag, returning the extended handle.
    pub fn with_stage(mut self, tag: &str, config_hash: String) -> ModelHandle {
        self.stage_tags.push(tag.to_string());
        self.config_hash = config_hash;
        self
    }

    /// Serializes to the versioned binary model format:
    /// magic, format version, header length, JSON header, little-endian f32
    /// weights, and a trailing SHA-256 of every preceding byte — so a flip
    /// anywhere in the file (header metadata included) fails the load. The
    /// write goes through a temp file and rename so a crash never leaves a
    /// torn model.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let display = path.display().to_string();

        let mut payload = Vec::with_capacity(self.weights.len() * 4);
        for w in &self.weights {
            payload.extend_from_slice(&w.to_le_bytes());
        }
        let header = ModelHeader {
            backend: self.backend.clone(),
            vocab_size: self.vocab_size,
            stage_tags: self.stage_tags.clone(),
            config_hash: self.config_hash.clone(),
            n_weights: self.weights.len() as u64,
        };
        let header_json = serde_json::to_vec(&header)?;

        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header_json);
        buf.extend_from_slice(&payload);
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);

        let tmp = path.with_extension("bin.tmp~");
        let mut file = fs::File::create(&tmp).map_err(|e| Error::io(display.clone(), e))?;
        file.write_all(&buf).map_err(|e| Error::io(display.clone(), e))?;
        file.sync_all().map_err(|e| Error::io(display.clone(), e))?;
        drop(file);
        fs::rename(&tmp, path).map_err(|e| Error::io(display, e))
    }

    /// Reads a saved model, verifying magic, version, the whole-file digest,
    /// and structure. The digest check runs before the header is parsed so
    /// corrupted metadata is rejected, not deserialized.
    pub fn load(path: impl AsRef<Path>) -> Result<ModelHandle> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bytes = fs::read(path).map_err(|e| Error::io(display.clone(), e))?;
        let corrupt = |message: &str| Error::Integrity {
            path: display.clone(),
            message: message.to_string(),
        };

        if bytes.len() < 16 + MODEL_DIGEST_LEN || &bytes[..8] != MODEL_MAGIC {
            return Err(corrupt("not a model file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(corrupt(&format!("unsupported format version {version}")));
        }
        let (body, digest) = bytes.split_at(bytes.len() - MODEL_DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("file digest mismatch"));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let Some(header_bytes) = body.get(16..16 + header_len) else {
            return Err(corrupt("truncated header"));
        };
        let header: ModelHeader = serde_json::from_slice(header_bytes)
            .map_err(|e| corrupt(&format!("unreadable header: {e}")))?;

        let payload = &body[16 + header_len..];
        if payload.len() as u64 != header.n_weights * 4 {
            return Err(corrupt(&format!(
                "payload holds {} bytes, header declares {} weights",
                payload.len(),
                header.n_weights
            )));
        }
        let weights = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ModelHandle {
            backend: header.backend,
            vocab_size: header.vocab_size,
            stage_tags: header.stage_tags,
            config_hash: header.config_hash,
            weights,
        })
    }
}

/// One scored prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEntry {
    pub id: String,
    pub label: SentimentLabel,
    /// Per-class scores in Negative/Neutral/Positive axis order.
    pub scores: [f64; 3],
}

/// An ordered list of predictions whose labels are consistent with their
/// scores: each entry's label attains the maximum of its score triple.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    entries: Vec<PredictionEntry>,
}

impl PredictionVector {
    pub fn new(entries: Vec<PredictionEntry>) -> Result<PredictionVector> {
        for e in &entries {
            let max = e.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if e.scores[e.label.index()] < max {
                return Err(Error::config(format!(
                    "prediction for `{}` labels {} but its score {} is below the maximum {max}",
                    e.id,
                    e.label,
                    e.scores[e.label.index()],
                )));
            }
        }
        Ok(PredictionVector { entries })
    }

    pub fn entries(&self) -> &[PredictionEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Statistics of one denoising-pretraining pass.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PretrainStats {
    pub examples: usize,
    pub content_tokens: u64,
    pub masked_tokens: u64,
    /// `masked_tokens / content_tokens`.
    pub observed_rate: f64,
}

/// A training/prediction engine.
///
/// `train` and `pretrain` receive the already-derived effective seed; seed
/// policy (master seed mixing) is the runner's job, not the backend's.
pub trait ModelBackend {
    fn name(&self) -> &str;

    /// Whether [`ModelBackend::pretrain`] is implemented.
    fn supports_pretraining(&self) -> bool;

    /// Supervised training. `init` warm-starts from a previous stage.
    fn train(
        &self,
        cfg: &FinetuneConfig,
        data: &EncodedDataset,
        init: Option<&ModelHandle>,
        effective_seed: u64,
    ) -> Result<ModelHandle>;

    /// Scores every example; entry order mirrors dataset order.
    fn predict(&self, model: &ModelHandle, data: &EncodedDataset) -> Result<PredictionVector>;

    /// Task-adaptive denoising pretraining over unlabeled text.
    fn pretrain(
        &self,
        cfg: &TaptConfig,
        data: &EncodedDataset,
        effective_seed: u64,
    ) -> Result<(ModelHandle, PretrainStats)>;
}

/// The built-in averaged-perceptron backend.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    name: String,
    pretraining: bool,
}

impl ToyBackend {
    pub fn new() -> ToyBackend {
        ToyBackend {
            name: "toy".into(),
            pretraining: true,
        }
    }

    /// A variant that refuses pretraining; exercises capability errors.
    pub fn without_pretraining() -> ToyBackend {
        ToyBackend {
            name: "toy-ft-only".into(),
            pretraining: false,
        }
    }
}

impl Default for ToyBackend {
    fn default() -> Self {
        ToyBackend::new()
    }
}

/// Looks up a backend by name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn ModelBackend>> {
    match name {
        "toy" => Ok(Box::new(ToyBackend::new())),
        "toy-ft-only" => Ok(Box::new(ToyBackend::without_pretraining())),
        other => Err(Error::config(format!(
            "unknown backend `{other}` (expected toy|toy-ft-only)"
        ))),
    }
}

/// Sparse token-count features of one sequence. `keep` filters positions
/// (used for training-time feature dropout); prediction keeps everything.
fn count_features(seq: &TokenSequence, mut keep: impl FnMut() -> bool) -> BTreeMap<u32, f64> {
    let mut counts = BTreeMap::new();
    for &tok in &seq.tokens {
        if keep() {
            *counts.entry(tok).or_insert(0.0) += 1.0;
        }
    }
    counts
}

fn score_classes(weights: &[f32], vocab: usize, features: &BTreeMap<u32, f64>) -> [f64; 3] {
    let mut scores = [0.0f64; 3];
    for (c, score) in scores.iter_mut().enumerate() {
        let row = &weights[c * vocab..(c + 1) * vocab];
        *score = features
            .iter()
            .map(|(&t, &x)| row[t as usize] as f64 * x)
            .sum();
    }
    scores
}

/// Index of the highest score; ties resolve to the lowest class index
/// (Negative before Neutral before Positive).
fn argmax(scores: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

impl ToyBackend {
    fn check_vocab(&self, model_vocab: u32, data_vocab: u32) -> Result<()> {
        if model_vocab != data_vocab {
            return Err(Error::VocabMismatch {
                model: model_vocab,
                data: data_vocab,
            });
        }
        Ok(())
    }
}

impl ModelBackend for ToyBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_pretraining(&self) -> bool {
        self.pretraining
    }

    fn train(
        &self,
        cfg: &FinetuneConfig,
        data: &EncodedDataset,
        init: Option<&ModelHandle>,
        effective_seed: u64,
    ) -> Result<ModelHandle> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.examples.iter().any(|e| e.label.is_none()) {
            return Err(Error::config("training data must be fully labeled"));
        }
        let vocab = data.vocab_size as usize;
        let mut weights: Vec<f32> = match init {
            Some(h) => {
                self.check_vocab(h.vocab_size, data.vocab_size)?;
                h.weights.clone()
            }
            None => vec![0.0; 3 * vocab],
        };
        if weights.len() != 3 * vocab {
            return Err(Error::Integrity {
                path: "<init model>".into(),
                message: format!("expected {} weights, found {}", 3 * vocab, weights.len()),
            });
        }

        let lr = cfg.learning_rate;
        let n = data.len();
        let mut avg = vec![0.0f64; weights.len()];
        let mut snapshots = 0u64;

        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            let mut shuffle_rng =
                ChaCha8Rng::seed_from_u64(mix_seeds(mix_seeds(effective_seed, SHUFFLE_SALT), epoch));
            order.shuffle(&mut shuffle_rng);

            for batch in order.chunks(cfg.batch_size) {
                // accumulate-then-apply, like a real optimizer step
                let mut delta: BTreeMap<usize, f64> = BTreeMap::new();
                for &idx in batch {
                    let ex = &data.examples[idx];
                    let dropped;
                    let seq = if cfg.token_drop_ratio > 0.0 {
                        let key = RngKey::new(
                            mix_seeds(effective_seed, DROP_SALT),
                            epoch,
                            idx as u64,
                        );
                        dropped = token_drop(&ex.seq, &DropSpec::new(cfg.token_drop_ratio, key)?);
                        &dropped
                    } else {
                        &ex.seq
                    };
                    let mut head_rng = RngKey::new(
                        mix_seeds(effective_seed, HEAD_SALT),
                        epoch,
                        idx as u64,
                    )
                    .rng();
                    let p_keep = 1.0 - cfg.classifier_dropout;
                    let features =
                        count_features(seq, || head_rng.gen::<f64>() < p_keep);
                    if features.is_empty() {
                        continue;
                    }
                    let scores = score_classes(&weights, vocab, &features);
                    let pred = argmax(&scores);
                    let gold = ex.label.expect("checked above").index();
                    if pred != gold {
                        for (&t, &x) in &features {
                            *delta.entry(gold * vocab + t as usize).or_insert(0.0) += lr * x;
                            *delta.entry(pred * vocab + t as usize).or_insert(0.0) -= lr * x;
                        }
                    }
                }
                for (i, d) in delta {
                    weights[i] += d as f32;
                }
                if cfg.weight_decay > 0.0 {
                    let scale = 1.0 - (lr * cfg.weight_decay) as f32;
                    for w in &mut weights {
                        *w *= scale;
                    }
                }
                for (a, &w) in avg.iter_mut().zip(&weights) {
                    *a += w as f64;
                }
                snapshots += 1;
            }
        }

        let averaged: Vec<f32> = if snapshots == 0 {
            weights
        } else {
            avg.iter().map(|&a| (a / snapshots as f64) as f32).collect()
        };
        Ok(ModelHandle {
            backend: self.name.clone(),
            vocab_size: data.vocab_size,
            stage_tags: init.map(|h| h.stage_tags.clone()).unwrap_or_default(),
            config_hash: String::new(),
            weights: averaged,
        })
    }

    fn predict(&self, model: &ModelHandle, data: &EncodedDataset) -> Result<PredictionVector> {
        self.check_vocab(model.vocab_size, data.vocab_size)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let vocab = model.vocab_size as usize;
        if model.weights.len() != 3 * vocab {
            return Err(Error::Integrity {
                path: "<model>".into(),
                message: format!(
                    "expected {} weights, found {}",
                    3 * vocab,
                    model.weights.len()
                ),
            });
        }
        let mut entries = Vec::with_capacity(data.len());
        for ex in &data.examples {
            let features = count_features(&ex.seq, || true);
            let scores = score_classes(&model.weights, vocab, &features);
            let label = SentimentLabel::from_index(argmax(&scores)).unwrap();
            entries.push(PredictionEntry {
                id: ex.id.clone(),
                label,
                scores,
            });
        }
        PredictionVector::new(entries)
    }

    fn pretrain(
        &self,
        cfg: &TaptConfig,
        data: &EncodedDataset,
        effective_seed: u64,
    ) -> Result<(ModelHandle, PretrainStats)> {
        if !self.pretraining {
            return Err(Error::Capability {
                backend: self.name.clone(),
                capability: "pretraining".into(),
            });
        }
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        // One masking pass collects corruption statistics; the perceptron
        // has no denoising objective to optimize, so weights start flat and
        // the handle's value is its stage provenance.
        let mut content_tokens = 0u64;
        let mut masked_tokens = 0u64;
        for (idx, ex) in data.examples.iter().enumerate() {
            let key = RngKey::new(effective_seed, 0, idx as u64);
            let spec = MaskSpec::new(cfg.mlm_probability, key, MASK_ID)?;
            let (_, labels) = mlm_mask(&ex.seq, &spec);
            content_tokens += ex.seq.content_indices().len() as u64;
            masked_tokens += labels.len() as u64;
        }
        let stats = PretrainStats {
            examples: data.len(),
            content_tokens,
            masked_tokens,
            observed_rate: if content_tokens == 0 {
                0.0
            } else {
                masked_tokens as f64 / content_tokens as f64
            },
        };
        let handle = ModelHandle {
            backend: self.name.clone(),
            vocab_size: data.vocab_size,
            stage_tags: vec!["TAPT".into()],
            config_hash: String::new(),
            weights: vec![0.0; 3 * data.vocab_size as usize],
        };
        Ok((handle, stats))
    }
}
