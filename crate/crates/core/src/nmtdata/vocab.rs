use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{tokenize, ParallelPair};
use crate::error::{Error, Result};
use crate::lang::Language;

pub const PAD: &str = "<pad>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VocabOptions {
    /// Tokens seen fewer times are left out (they encode as `<unk>`).
    pub min_freq: usize,
    /// Cap on the total vocabulary size, reserved tokens included.
    pub max_size: usize,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            min_freq: 2,
            max_size: 50_000,
        }
    }
}

/// Dense token ↔ index map. Indices 0..=3 are `<pad> <sos> <eos> <unk>`,
/// followed by one tag per supported language, then corpus tokens by
/// descending frequency (ties lexicographic).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const SOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const UNK: u32 = 3;

    fn reserved() -> Vec<String> {
        let mut r: Vec<String> = [PAD, SOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        r.extend(Language::ALL.iter().map(|l| l.tag()));
        r
    }

    pub fn reserved_len() -> usize {
        4 + Language::ALL.len()
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Builds a vocabulary from token occurrences.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, opts: VocabOptions) -> Self {
        let reserved = Self::reserved();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= opts.min_freq.max(1) && !reserved.iter().any(|r| r == t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let room = opts.max_size.saturating_sub(reserved.len());
        let mut all = reserved;
        all.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
        Self::from_tokens(all).expect("reserved and counted tokens are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(Self::UNK)
    }

    pub fn lang_id(&self, lang: Language) -> Result<u32> {
        self.id(&lang.tag())
            .ok_or_else(|| Error::Validation(format!("language tag {} missing from vocabulary", lang.tag())))
    }

    pub fn is_lang_tag(&self, id: u32) -> bool {
        self.token(id)
            .is_some_and(|t| Language::ALL.iter().any(|l| l.tag() == t))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; line number = index.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// Hex SHA-256 of the file representation.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let reserved = Self::reserved();
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(Error::format(
                path,
                "vocabulary must start with <pad> <sos> <eos> <unk> followed by the language tags",
            ));
        }
        Self::from_tokens(tokens).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Source vocabulary from all source-side tokens, target vocabulary from
/// all target-side tokens; both carry the specials and every language tag.
pub fn build_vocabularies(pairs: &[ParallelPair], opts: VocabOptions) -> (Vocabulary, Vocabulary) {
    let src = Vocabulary::build(pairs.iter().flat_map(|p| tokenize(&p.source_text)), opts);
    let tgt = Vocabulary::build(pairs.iter().flat_map(|p| tokenize(&p.target_text)), opts);
    (src, tgt)
}


#[cfg(test)]
impl Vocabulary {
    pub(crate) fn load_from_tokens_for_test(tokens: &[&str]) -> Self {
        Self::from_tokens(tokens.iter().map(|s| s.to_string()).collect()).unwrap()
    }
}
