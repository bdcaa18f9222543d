//! Text preprocessing: placeholder substitution, unicode normalization,
//! tokenization, and fixed-length encoding.
//!
//! The preprocessing contract is `replace_urls_users` → normalizer → tokenizer,
//! and every step is deterministic. The built-in tokenizer is a vocabulary-free
//! hashing tokenizer: good enough to exercise the pipeline end to end without
//! shipping a learned vocabulary.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Reserved token ids shared by every tokenizer.
pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const PAD_ID: u32 = 2;
pub const MASK_ID: u32 = 3;

/// Number of reserved ids; content ids start here.
pub const RESERVED_IDS: u32 = 4;

/// An encoded text: token ids plus a parallel mask marking special positions
/// (bos/eos/pad) that augmentation must never touch.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub special_mask: Vec<bool>,
    /// The budget this sequence was encoded under; `tokens.len()` never
    /// exceeds it.
    pub max_length: usize,
}

impl TokenSequence {
    /// Builds a sequence, checking the structural invariants: parallel
    /// lengths and the length budget.
    pub fn new(tokens: Vec<u32>, special_mask: Vec<bool>, max_length: usize) -> Result<TokenSequence> {
        if tokens.len() != special_mask.len() {
            return Err(Error::config(format!(
                "token/special mask length mismatch: {} vs {}",
                tokens.len(),
                special_mask.len()
            )));
        }
        if tokens.len() > max_length {
            return Err(Error::config(format!(
                "sequence length {} exceeds max_length {}",
                tokens.len(),
                max_length
            )));
        }
        Ok(TokenSequence {
            tokens,
            special_mask,
            max_length,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Indices of non-special (content) positions, in order.
    pub fn content_indices(&self) -> Vec<usize> {
        self.special_mask
            .iter()
            .enumerate()
            .filter(|(_, &s)| !s)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Minimal tokenizer interface: text to content-token ids and back.
///
/// `encode` yields content ids only; special ids are attached later by
/// [`encode_truncate`]. Content ids all lie in `RESERVED_IDS..vocab_size`.
pub trait Tokenizer {
    fn vocab_size(&self) -> u32;
    fn encode(&self, text: &str) -> Vec<u32>;
    /// Best-effort inverse; hashing tokenizers return placeholder forms.
    fn decode(&self, tokens: &[u32]) -> String;
}

/// 64-bit FNV-1a over UTF-8 bytes: a stable, platform-independent token hash.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Whitespace-splitting hashing tokenizer. Each token maps to
/// `RESERVED_IDS + fnv1a64(token) % (vocab_size - RESERVED_IDS)`, so the
/// mapping is fixed across runs and platforms without any vocabulary file.
#[derive(Debug, Clone)]
pub struct ToyTokenizer {
    vocab_size: u32,
}

impl ToyTokenizer {
    pub fn new(vocab_size: u32) -> Result<ToyTokenizer> {
        if vocab_size <= RESERVED_IDS {
            return Err(Error::config(format!(
                "vocab_size must exceed {RESERVED_IDS} reserved ids, got {vocab_size}"
            )));
        }
        Ok(ToyTokenizer { vocab_size })
    }
}

impl Default for ToyTokenizer {
    fn default() -> Self {
        ToyTokenizer { vocab_size: 50_004 }
    }
}

impl Tokenizer for ToyTokenizer {
    fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        let content = self.vocab_size - RESERVED_IDS;
        text.split_whitespace()
            .map(|tok| RESERVED_IDS + (fnv1a64(tok.as_bytes()) % content as u64) as u32)
            .collect()
    }

    fn decode(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| match t {
                BOS_ID => "<s>".to_string(),
                EOS_ID => "</s>".to_string(),
                PAD_ID => "<pad>".to_string(),
                MASK_ID => "<mask>".to_string(),
                other => format!("<{other}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Looks up a tokenizer by name; `vocab_size` parameterizes hashing
/// tokenizers.
pub fn tokenizer_by_name(name: &str, vocab_size: u32) -> Result<Box<dyn Tokenizer>> {
    match name {
        "toy" => Ok(Box::new(ToyTokenizer::new(vocab_size)?)),
        other => Err(Error::config(format!(
            "unknown tokenizer `{other}` (expected toy)"
        ))),
    }
}

/// Counts of substitutions performed by [`replace_urls_users`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ReplacementStats {
    pub urls: usize,
    pub users: usize,
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // scheme://... or www.-prefixed, through the next whitespace
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:[a-z][a-z0-9+.\-]*://\S+|www\.\S+)").unwrap())
}

fn user_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // consecutive `@`s fold into one mention: leaving `@@a -> @USER` would
    // hand the second pass something new to match, breaking idempotence
    RE.get_or_init(|| Regex::new(r"@+\w+").unwrap())
}

/// Replaces URLs with `URL` and @-mentions with `USER`. URLs are handled
/// first so a mention inside a URL is not clipped out of it. Idempotent:
/// the placeholder strings contain nothing either pattern matches.
pub fn replace_urls_users(text: &str) -> (String, ReplacementStats) {
    let mut stats = ReplacementStats::default();
    let after_urls = url_regex().replace_all(text, |_: &regex::Captures| {
        stats.urls += 1;
        "URL"
    });
    let after_users = user_regex().replace_all(&after_urls, |_: &regex::Captures| {
        stats.users += 1;
        "USER"
    });
    (after_users.into_owned(), stats)
}

/// Named unicode normalization step applied after placeholder substitution.
pub trait TextNormalizer {
    fn name(&self) -> &str;
    fn normalize(&self, text: &str) -> Result<String>;
}

/// Pass-through normalizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityNormalizer;

impl TextNormalizer for IdentityNormalizer {
    fn name(&self) -> &str {
        "identity"
    }

    fn normalize(&self, text: &str) -> Result<String> {
        Ok(text.to_string())
    }
}

/// Unicode NFC normalizer — the pipeline default.
#[derive(Debug, Clone, Copy, Default)]
pub struct NfcNormalizer;

impl TextNormalizer for NfcNormalizer {
    fn name(&self) -> &str {
        "nfc"
    }

    fn normalize(&self, text: &str) -> Result<String> {
        Ok(text.nfc().collect())
    }
}

/// Looks up a built-in normalizer by name (`identity` or `nfc`).
pub fn normalizer_by_name(name: &str) -> Result<Box<dyn TextNormalizer>> {
    match name {
        "identity" => Ok(Box::new(IdentityNormalizer)),
        "nfc" => Ok(Box::new(NfcNormalizer)),
        other => Err(Error::Normalization(format!(
            "unknown normalizer `{other}` (expected identity|nfc)"
        ))),
    }
}

/// Full preprocessing of one text: placeholder substitution then
/// normalization. This is what training and prediction run on raw input.
pub fn preprocess_text(text: &str, normalizer: &dyn TextNormalizer) -> Result<String> {
    let (replaced, _) = replace_urls_users(text);
    normalizer.normalize(&replaced)
}

/// Encodes a text to a bos/eos-delimited sequence of at most `max_length`
/// tokens, truncating content from the tail. Empty content is an error;
/// `max_length` must leave room for the two delimiters plus one content
/// token.
pub fn encode_truncate(
    text: &str,
    tokenizer: &dyn Tokenizer,
    max_length: usize,
) -> Result<TokenSequence> {
    if max_length < 3 {
        return Err(Error::config(format!(
            "max_length must be at least 3, got {max_length}"
        )));
    }
    let content = tokenizer.encode(text);
    if content.is_empty() {
        return Err(Error::EmptyText { id: None });
    }
    let keep = content.len().min(max_length - 2);
    let mut tokens = Vec::with_capacity(keep + 2);
    let mut special_mask = Vec::with_capacity(keep + 2);
    tokens.push(BOS_ID);
    special_mask.push(true);
    tokens.extend_from_slice(&content[..keep]);
    special_mask.extend(std::iter::repeat(false).take(keep));
    tokens.push(EOS_ID);
    special_mask.push(true);
    TokenSequence::new(tokens, special_mask, max_length)
}

/// Token-frequency summary used by the high-frequency vocabulary report.
pub fn token_frequencies(texts: &[&str], tokenizer: &dyn Tokenizer) -> BTreeMap<u32, u64> {
    let mut freq = BTreeMap::new();
    for text in texts {
        for id in tokenizer.encode(text) {
            *freq.entry(id).or_insert(0) += 1;
        }
    }
    freq
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_tokenizer_is_deterministic_and_in_range() {
        let tok = ToyTokenizer::default();
        let a = tok.encode("bhalo khub bhalo");
        let b = tok.encode("bhalo khub bhalo");
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a[0], a[2]); // same word, same id
        for &id in &a {
            assert!(id >= RESERVED_IDS && id < tok.vocab_size());
        }
    }

    #[test]
    fn toy_tokenizer_rejects_tiny_vocab() {
        assert!(ToyTokenizer::new(4).is_err());
        assert!(ToyTokenizer::new(5).is_ok());
    }

    #[test]
    fn fnv_hash_reference_values() {
        // independently computed FNV-1a 64 checkpoints
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn replace_handles_urls_then_users() {
        let (out, stats) = replace_urls_users("see https://x.co/a?b=1 by @rumi now");
        assert_eq!(out, "see URL by USER now");
        assert_eq!(stats, ReplacementStats { urls: 1, users: 1 });

        let (out, stats) = replace_urls_users("www.example.com/@inside and @outside");
        assert_eq!(out, "URL and USER");
        assert_eq!(stats.urls, 1);
        assert_eq!(stats.users, 1);
    }

    #[test]
    fn replace_is_idempotent() {
        let cases = [
            "plain text no matches",
            "http://a.b c @d",
            "URL USER already placed",
            "mixed www.x.y @z http://q.r",
        ];
        for case in cases {
            let (once, _) = replace_urls_users(case);
            let (twice, stats) = replace_urls_users(&once);
            assert_eq!(once, twice, "not idempotent for {case:?}");
            assert_eq!(stats, ReplacementStats::default());
        }
    }

    #[test]
    fn replace_leaves_plain_text_alone() {
        let (out, stats) = replace_urls_users("kono link nei ekhane");
        assert_eq!(out, "kono link nei ekhane");
        assert_eq!(stats, ReplacementStats::default());
    }

    #[test]
    fn nfc_normalizer_composes() {
        let n = NfcNormalizer;
        assert_eq!(n.normalize("cafe\u{301}").unwrap(), "caf\u{e9}");
        // NFC is idempotent
        let once = n.normalize("cafe\u{301}").unwrap();
        assert_eq!(n.normalize(&once).unwrap(), once);
    }

    #[test]
    fn normalizer_registry() {
        assert_eq!(normalizer_by_name("nfc").unwrap().name(), "nfc");
        assert_eq!(normalizer_by_name("identity").unwrap().name(), "identity");
        assert!(matches!(
            normalizer_by_name("nfd"),
            Err(Error::Normalization(_))
        ));
    }

    #[test]
    fn encode_truncate_short_text() {
        let tok = ToyTokenizer::default();
        let seq = encode_truncate("ek dui tin", &tok, 128).unwrap();
        assert_eq!(seq.len(), 5); // bos + 3 + eos
        assert_eq!(seq.tokens[0], BOS_ID);
        assert_eq!(*seq.tokens.last().unwrap(), EOS_ID);
        assert_eq!(seq.special_mask, [true, false, false, false, true]);
        assert_eq!(seq.content_indices(), [1, 2, 3]);
    }

    #[test]
    fn encode_truncate_clips_tail() {
        let tok = ToyTokenizer::default();
        let text = (0..50).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let seq = encode_truncate(&text, &tok, 10).unwrap();
        assert_eq!(seq.len(), 10);
        // head 8 content tokens survive
        let full = tok.encode(&text);
        assert_eq!(&seq.tokens[1..9], &full[..8]);
        assert_eq!(seq.tokens[0], BOS_ID);
        assert_eq!(seq.tokens[9], EOS_ID);
    }

    #[test]
    fn encode_truncate_rejects_empty_and_tiny_budget() {
        let tok = ToyTokenizer::default();
        assert!(matches!(
            encode_truncate("   ", &tok, 128),
            Err(Error::EmptyText { .. })
        ));
        assert!(encode_truncate("hi", &tok, 2).is_err());
        // minimum viable budget holds exactly one content token
        let seq = encode_truncate("one two", &tok, 3).unwrap();
        assert_eq!(seq.len(), 3);
    }

    #[test]
    fn token_sequence_invariants_enforced() {
        assert!(TokenSequence::new(vec![0, 5, 1], vec![true, false], 128).is_err());
        assert!(TokenSequence::new(vec![0, 5, 1], vec![true, false, true], 2).is_err());
        let ok = TokenSequence::new(vec![0, 5, 1], vec![true, false, true], 3).unwrap();
        assert_eq!(ok.len(), 3);
    }

    #[test]
    fn preprocess_text_chains_replace_and_normalize() {
        let out = preprocess_text("dekh https://t.co/x cafe\u{301}", &NfcNormalizer).unwrap();
        assert_eq!(out, "dekh URL caf\u{e9}");
    }

    #[test]
    fn token_frequencies_counts() {
        let tok = ToyTokenizer::default();
        let freq = token_frequencies(&["a b a", "b c"], &tok);
        let a = tok.encode("a")[0];
        let b = tok.encode("b")[0];
        let c = tok.encode("c")[0];
        assert_eq!(freq[&a], 2);
        assert_eq!(freq[&b], 2);
        assert_eq!(freq[&c], 1);
    }
}
