//! Data augmentation: random token dropping, masked-token selection for
//! denoising pretraining, and paraphrase-based expansion.
//!
//! Every stochastic operation takes an explicit [`RngKey`] so that the same
//! (master seed, epoch, example) coordinate always produces the same draw —
//! on-the-fly augmentation stays bit-reproducible without storing any state
//! between epochs.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DatasetSplit, Example};
use crate::error::{Error, Result};
use crate::textprep::TokenSequence;

/// Coordinate of one stochastic draw: which run, which pass, which example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngKey {
    pub master_seed: u64,
    pub epoch: u64,
    pub example_index: u64,
}

/// splitmix64 finalizer; decorrelates nearby key coordinates.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mixes two seeds into one; used wherever a derived stream is needed.
pub fn mix_seeds(a: u64, b: u64) -> u64 {
    mix64(mix64(a).wrapping_add(b))
}

impl RngKey {
    pub fn new(master_seed: u64, epoch: u64, example_index: u64) -> RngKey {
        RngKey {
            master_seed,
            epoch,
            example_index,
        }
    }

    /// Folds the three coordinates into one stream seed.
    pub fn stream_seed(self) -> u64 {
        mix64(mix_seeds(mix_seeds(self.master_seed, self.epoch), self.example_index))
    }

    /// The RNG for this coordinate.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.stream_seed())
    }
}

/// Parameters of one token-drop draw.
#[derive(Debug, Clone, Copy)]
pub struct DropSpec {
    /// Fraction of content tokens to remove; must lie in `[0, 1)`.
    pub ratio: f64,
    pub rng_key: RngKey,
}

impl DropSpec {
    pub fn new(ratio: f64, rng_key: RngKey) -> Result<DropSpec> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::config(format!(
                "drop ratio must lie in [0, 1), got {ratio}"
            )));
        }
        Ok(DropSpec { ratio, rng_key })
    }
}

/// Removes `floor(ratio * n)` uniformly chosen content tokens, preserving
/// the order of survivors and never touching special positions. At least one
/// content token always survives.
pub fn token_drop(seq: &TokenSequence, spec: &DropSpec) -> TokenSequence {
    let content = seq.content_indices();
    let n = content.len();
    if n == 0 {
        return seq.clone();
    }
    let mut k = (spec.ratio * n as f64).floor() as usize;
    if k >= n {
        k = n - 1;
    }
    if k == 0 {
        return seq.clone();
    }
    let mut rng = spec.rng_key.rng();
    let mut chosen: Vec<usize> = sample(&mut rng, n, k).into_iter().map(|i| content[i]).collect();
    chosen.sort_unstable();

    let mut tokens = Vec::with_capacity(seq.len() - k);
    let mut special_mask = Vec::with_capacity(seq.len() - k);
    let mut next_drop = chosen.iter().peekable();
    for (i, (&tok, &sp)) in seq.tokens.iter().zip(&seq.special_mask).enumerate() {
        if next_drop.peek() == Some(&&i) {
            next_drop.next();
            continue;
        }
        tokens.push(tok);
        special_mask.push(sp);
    }
    TokenSequence {
        tokens,
        special_mask,
        max_length: seq.max_length,
    }
}

/// Parameters of one masking draw.
#[derive(Debug, Clone, Copy)]
pub struct MaskSpec {
    /// Per-token masking probability; must lie in `[0, 1]`.
    pub mlm_probability: f64,
    pub rng_key: RngKey,
    /// Id substituted at masked positions.
    pub mask_token_id: u32,
}

impl MaskSpec {
    pub fn new(mlm_probability: f64, rng_key: RngKey, mask_token_id: u32) -> Result<MaskSpec> {
        if !(0.0..=1.0).contains(&mlm_probability) {
            return Err(Error::config(format!(
                "mlm_probability must lie in [0, 1], got {mlm_probability}"
            )));
        }
        Ok(MaskSpec {
            mlm_probability,
            rng_key,
            mask_token_id,
        })
    }
}

/// Independently masks each content token with probability
/// `mlm_probability`, substituting the mask id. Returns the corrupted
/// sequence and the recovery labels: original ids keyed by masked position.
pub fn mlm_mask(seq: &TokenSequence, spec: &MaskSpec) -> (TokenSequence, BTreeMap<usize, u32>) {
    let mut rng = spec.rng_key.rng();
    let mut masked = seq.clone();
    let mut labels = BTreeMap::new();
    for i in 0..masked.tokens.len() {
        if masked.special_mask[i] {
            continue;
        }
        if rng.gen::<f64>() < spec.mlm_probability {
            labels.insert(i, masked.tokens[i]);
            masked.tokens[i] = spec.mask_token_id;
        }
    }
    (masked, labels)
}

/// Generates alternative phrasings of a text. Implementations may be
/// fallible (an external rewriter can reject an input).
pub trait Paraphraser {
    fn name(&self) -> &str;
    /// Up to `count` paraphrases of `text`. Fewer (including zero) is fine.
    fn paraphrase(&self, text: &str, count: usize) -> Result<Vec<String>>;
}

/// Returns the input unchanged; useful for wiring tests, produces no
/// expansion because self-identical outputs are discarded.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoParaphraser;

impl Paraphraser for EchoParaphraser {
    fn name(&self) -> &str {
        "echo"
    }

    fn paraphrase(&self, text: &str, count: usize) -> Result<Vec<String>> {
        Ok(vec![text.to_string(); count.min(1)])
    }
}

/// Reverses word order — a cheap deterministic stand-in for a learned
/// rewriter.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordReverseParaphraser;

impl Paraphraser for WordReverseParaphraser {
    fn name(&self) -> &str {
        "word-reverse"
    }

    fn paraphrase(&self, text: &str, count: usize) -> Result<Vec<String>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let reversed = text
            .split_whitespace()
            .rev()
            .collect::<Vec<_>>()
            .join(" ");
        Ok(vec![reversed])
    }
}

/// Expands a labeled split with paraphrases. Each generated text inherits
/// its source example's label; self-identical and exact-duplicate outputs
/// (against both originals and earlier paraphrases) are discarded.
/// Unlabeled examples are skipped — a paraphrase without a label is useless
/// for supervision.
pub fn paraphrase_expand(
    split: &DatasetSplit,
    paraphraser: &dyn Paraphraser,
    per_example: usize,
) -> Result<DatasetSplit> {
    let mut seen: std::collections::HashSet<String> =
        split.examples.iter().map(|e| e.text.clone()).collect();
    let mut out = split.examples.clone();
    for ex in &split.examples {
        if ex.label.is_none() {
            continue;
        }
        let candidates = paraphraser
            .paraphrase(&ex.text, per_example)
            .map_err(|e| Error::Paraphrase {
                id: ex.id.clone(),
                message: e.to_string(),
            })?;
        for (j, cand) in candidates.into_iter().take(per_example).enumerate() {
            if cand == ex.text || !seen.insert(cand.clone()) {
                continue;
            }
            out.push(Example {
                id: format!("{}~p{}", ex.id, j + 1),
                text: cand,
                label: ex.label,
                source: ex.source.clone(),
            });
        }
    }
    Ok(DatasetSplit::new(split.name.clone(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentimentLabel;
    use crate::textprep::{encode_truncate, ToyTokenizer, MASK_ID};

    fn seq_of(n_content: usize) -> TokenSequence {
        let tok = ToyTokenizer::default();
        let text = (0..n_content).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        encode_truncate(&text, &tok, n_content + 2).unwrap()
    }

    #[test]
    fn rng_key_streams_are_stable_and_distinct() {
        let k = RngKey::new(1303, 2, 17);
        assert_eq!(k.stream_seed(), RngKey::new(1303, 2, 17).stream_seed());
        assert_ne!(k.stream_seed(), RngKey::new(1303, 2, 18).stream_seed());
        assert_ne!(k.stream_seed(), RngKey::new(1303, 3, 17).stream_seed());
        assert_ne!(k.stream_seed(), RngKey::new(1304, 2, 17).stream_seed());
    }

    #[test]
    fn mix_seeds_is_order_sensitive() {
        assert_ne!(mix_seeds(1, 2), mix_seeds(2, 1));
        assert_eq!(mix_seeds(7, 9), mix_seeds(7, 9));
    }

    #[test]
    fn token_drop_count_and_order() {
        let seq = seq_of(50); // 50 content tokens
        let spec = DropSpec::new(0.2, RngKey::new(1, 0, 0)).unwrap();
        let dropped = token_drop(&seq, &spec);
        assert_eq!(dropped.len(), seq.len() - 10); // floor(0.2 * 50)

        // survivors appear in original relative order
        let orig = &seq.tokens;
        let mut cursor = 0;
        for t in &dropped.tokens {
            let pos = orig[cursor..].iter().position(|o| o == t).expect("subsequence");
            cursor += pos + 1;
        }
        // specials kept
        assert!(dropped.special_mask[0]);
        assert!(*dropped.special_mask.last().unwrap());
    }

    #[test]
    fn token_drop_is_reproducible_and_keyed() {
        let seq = seq_of(40);
        let a = token_drop(&seq, &DropSpec::new(0.3, RngKey::new(5, 1, 9)).unwrap());
        let b = token_drop(&seq, &DropSpec::new(0.3, RngKey::new(5, 1, 9)).unwrap());
        let c = token_drop(&seq, &DropSpec::new(0.3, RngKey::new(5, 2, 9)).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, c); // different epoch, different draw
    }

    #[test]
    fn token_drop_zero_ratio_is_identity() {
        let seq = seq_of(10);
        let out = token_drop(&seq, &DropSpec::new(0.0, RngKey::new(1, 0, 0)).unwrap());
        assert_eq!(out, seq);
    }

    #[test]
    fn token_drop_keeps_at_least_one_content_token() {
        let seq = seq_of(1);
        let out = token_drop(&seq, &DropSpec::new(0.99, RngKey::new(1, 0, 0)).unwrap());
        assert_eq!(out.content_indices().len(), 1);

        let seq = seq_of(3);
        let out = token_drop(&seq, &DropSpec::new(0.99, RngKey::new(1, 0, 0)).unwrap());
        // floor(0.99*3)=2 of 3 dropped, one survives
        assert_eq!(out.content_indices().len(), 1);
    }

    #[test]
    fn drop_spec_rejects_bad_ratio() {
        assert!(DropSpec::new(1.0, RngKey::new(0, 0, 0)).is_err());
        assert!(DropSpec::new(-0.1, RngKey::new(0, 0, 0)).is_err());
    }

    #[test]
    fn mlm_mask_labels_match_positions() {
        let seq = seq_of(30);
        let spec = MaskSpec::new(0.25, RngKey::new(9, 0, 4), MASK_ID).unwrap();
        let (masked, labels) = mlm_mask(&seq, &spec);
        assert_eq!(masked.len(), seq.len());
        for (&pos, &orig) in &labels {
            assert_eq!(masked.tokens[pos], MASK_ID);
            assert_eq!(seq.tokens[pos], orig);
            assert!(!seq.special_mask[pos]);
        }
        // positions not in labels are untouched
        for i in 0..seq.len() {
            if !labels.contains_key(&i) {
                assert_eq!(masked.tokens[i], seq.tokens[i]);
            }
        }
    }

    #[test]
    fn mlm_mask_extremes() {
        let seq = seq_of(20);
        let (m0, l0) = mlm_mask(&seq, &MaskSpec::new(0.0, RngKey::new(1, 0, 0), MASK_ID).unwrap());
        assert_eq!(m0, seq);
        assert!(l0.is_empty());

        let (m1, l1) = mlm_mask(&seq, &MaskSpec::new(1.0, RngKey::new(1, 0, 0), MASK_ID).unwrap());
        assert_eq!(l1.len(), 20); // every content position
        assert!(m1.tokens[1..21].iter().all(|&t| t == MASK_ID));
        assert_eq!(m1.tokens[0], seq.tokens[0]); // bos untouched
    }

    #[test]
    fn mlm_mask_is_reproducible() {
        let seq = seq_of(25);
        let spec = MaskSpec::new(0.25, RngKey::new(3, 7, 2), MASK_ID).unwrap();
        assert_eq!(mlm_mask(&seq, &spec), mlm_mask(&seq, &spec));
    }

    #[test]
    fn paraphrase_expand_appends_and_dedups() {
        let split = DatasetSplit::new(
            "t",
            vec![
                Example { id: "1".into(), text: "ek dui tin".into(), label: Some(SentimentLabel::Positive), source: "t".into() },
                Example { id: "2".into(), text: "tin dui ek".into(), label: Some(SentimentLabel::Negative), source: "t".into() },
            ],
        );
        let out = paraphrase_expand(&split, &WordReverseParaphraser, 1).unwrap();
        // each reversal collides with the other original text, so nothing is added
        assert_eq!(out.len(), 2);

        let split2 = DatasetSplit::new(
            "t",
            vec![Example { id: "1".into(), text: "ek dui tin".into(), label: Some(SentimentLabel::Positive), source: "t".into() }],
        );
        let out2 = paraphrase_expand(&split2, &WordReverseParaphraser, 1).unwrap();
        assert_eq!(out2.len(), 2);
        assert_eq!(out2.examples[1].text, "tin dui ek");
        assert_eq!(out2.examples[1].label, Some(SentimentLabel::Positive));
        assert_eq!(out2.examples[1].id, "1~p1");
        // originals come first
        assert_eq!(out2.examples[0].id, "1");
    }

    #[test]
    fn paraphrase_expand_echo_adds_nothing() {
        let split = DatasetSplit::new(
            "t",
            vec![Example { id: "1".into(), text: "same text".into(), label: Some(SentimentLabel::Neutral), source: "t".into() }],
        );
        let out = paraphrase_expand(&split, &EchoParaphraser, 3).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn paraphrase_expand_skips_unlabeled() {
        let split = DatasetSplit::new(
            "t",
            vec![Example { id: "1".into(), text: "ek dui".into(), label: None, source: "t".into() }],
        );
        let out = paraphrase_expand(&split, &WordReverseParaphraser, 2).unwrap();
        assert_eq!(out.len(), 1);
    }
}
