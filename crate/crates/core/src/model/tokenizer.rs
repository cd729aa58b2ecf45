// SPDX-License-Identifier: Apache-2.0

//! Byte-level and BPE tokenizers.
//!
//! Byte mode assigns the specials the lowest ids (bos, then eos) and maps
//! byte `b` to `b + n_specials`. BPE mode follows the GPT-2 byte-level
//! convention: vocabulary strings spell bytes through the printable
//! byte-to-unicode table, text is pre-split into word-like pieces, and merges
//! are applied greedily by rank inside each piece.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    Byte,
    Bpe,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bos: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos: Option<String>,
}

/// Serialized tokenizer description plus the lookup tables derived from it.
#[derive(Clone, Debug)]
pub struct TokenizerSpec {
    mode: TokenizerMode,
    vocab: BTreeMap<String, TokenId>,
    merges: Vec<(String, String)>,
    specials: Specials,
    // derived
    id_to_token: Vec<String>,
    merge_ranks: HashMap<(String, String), usize>,
    bos_id: Option<TokenId>,
    eos_id: Option<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    mode: TokenizerMode,
    #[serde(default)]
    vocab: BTreeMap<String, TokenId>,
    #[serde(default)]
    merges: Vec<MergeEntry>,
    #[serde(default)]
    specials: Specials,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MergeEntry {
    Pair(String, String),
    Joined(String),
}

impl MergeEntry {
    fn into_pair(self) -> Result<(String, String)> {
        match self {
            MergeEntry::Pair(a, b) => Ok((a, b)),
            MergeEntry::Joined(s) => s
                .split_once(' ')
                .map(|(a, b)| (a.to_owned(), b.to_owned()))
                .ok_or_else(|| Error::Format(format!("merge `{s}` is not a space-separated pair"))),
        }
    }
}

impl PartialEq for TokenizerSpec {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.vocab == other.vocab
            && self.merges == other.merges
            && self.specials == other.specials
    }
}

impl TokenizerSpec {
    /// A byte tokenizer with the given specials.
    pub fn byte(specials: Specials) -> Result<Self> {
        let mut vocab = BTreeMap::new();
        for (next, s) in [&specials.bos, &specials.eos].into_iter().flatten().enumerate() {
            if vocab.insert(s.clone(), next as TokenId).is_some() {
                return Err(Error::Tokenizer("bos and eos must differ".into()));
            }
        }
        // Byte ids are implicit; the vocabulary holds only the specials.
        Self::build(TokenizerMode::Byte, vocab, Vec::new(), specials)
    }

    pub fn bpe(
        vocab: BTreeMap<String, TokenId>,
        merges: Vec<(String, String)>,
        specials: Specials,
    ) -> Result<Self> {
        Self::build(TokenizerMode::Bpe, vocab, merges, specials)
    }

    fn build(
        mode: TokenizerMode,
        vocab: BTreeMap<String, TokenId>,
        merges: Vec<(String, String)>,
        specials: Specials,
    ) -> Result<Self> {
        let n_specials = [&specials.bos, &specials.eos].iter().filter(|s| s.is_some()).count();
        let size = match mode {
            TokenizerMode::Byte => n_specials + 256,
            TokenizerMode::Bpe => vocab.len(),
        };
        let mut id_to_token = vec![String::new(); size];
        let mut seen = vec![false; size];
        let mut place = |tok: &str, id: TokenId| -> Result<()> {
            let slot = seen
                .get_mut(id as usize)
                .ok_or_else(|| Error::Tokenizer(format!("id {id} of `{tok}` is outside 0..{size}")))?;
            if *slot {
                return Err(Error::Tokenizer(format!("id {id} assigned twice")));
            }
            *slot = true;
            id_to_token[id as usize] = tok.to_owned();
            Ok(())
        };
        match mode {
            TokenizerMode::Byte => {
                if vocab.len() != n_specials {
                    return Err(Error::Tokenizer(
                        "byte mode vocabulary may list only the specials".into(),
                    ));
                }
                for (tok, &id) in &vocab {
                    if id as usize >= n_specials {
                        return Err(Error::Tokenizer(format!(
                            "special `{tok}` must take an id below {n_specials}"
                        )));
                    }
                    place(tok, id)?;
                }
                for b in 0..=255u8 {
                    place(&byte_symbol(b).to_string(), (n_specials + b as usize) as TokenId)?;
                }
            }
            TokenizerMode::Bpe => {
                for (tok, &id) in &vocab {
                    place(tok, id)?;
                }
            }
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return Err(Error::Tokenizer(format!("ids are not dense: {gap} is unused")));
        }
        let lookup = |s: &Option<String>| -> Result<Option<TokenId>> {
            s.as_ref()
                .map(|tok| {
                    vocab
                        .get(tok)
                        .copied()
                        .ok_or_else(|| Error::Tokenizer(format!("special `{tok}` not in vocabulary")))
                })
                .transpose()
        };
        let bos_id = lookup(&specials.bos)?;
        let eos_id = lookup(&specials.eos)?;
        let merge_ranks = merges
            .iter()
            .enumerate()
            .map(|(rank, pair)| (pair.clone(), rank))
            .collect();
        Ok(Self {
            mode,
            vocab,
            merges,
            specials,
            id_to_token,
            merge_ranks,
            bos_id,
            eos_id,
        })
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn bos_id(&self) -> Option<TokenId> {
        self.bos_id
    }

    pub fn eos_id(&self) -> Option<TokenId> {
        self.eos_id
    }

    pub fn specials(&self) -> &Specials {
        &self.specials
    }

    fn n_specials(&self) -> usize {
        usize::from(self.bos_id.is_some()) + usize::from(self.eos_id.is_some())
    }

    fn is_special(&self, id: TokenId) -> bool {
        Some(id) == self.bos_id || Some(id) == self.eos_id
    }

    /// Id of a single byte in byte mode.
    pub fn byte_id(&self, b: u8) -> Option<TokenId> {
        match self.mode {
            TokenizerMode::Byte => Some((self.n_specials() + b as usize) as TokenId),
            TokenizerMode::Bpe => self.vocab.get(&byte_symbol(b).to_string()).copied(),
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        self.tokenize_bytes(text.as_bytes())
    }

    pub fn tokenize_bytes(&self, bytes: &[u8]) -> Result<Vec<TokenId>> {
        let mut ids = Vec::with_capacity(bytes.len() + 1);
        ids.extend(self.bos_id);
        match self.mode {
            TokenizerMode::Byte => {
                let offset = self.n_specials() as TokenId;
                ids.extend(bytes.iter().map(|&b| offset + b as TokenId));
            }
            TokenizerMode::Bpe => {
                for piece in pretokenize(bytes) {
                    for symbol in self.merge_piece(piece) {
                        let id = self.vocab.get(&symbol).ok_or_else(|| {
                            Error::Tokenizer(format!("merged symbol `{symbol}` has no id"))
                        })?;
                        ids.push(*id);
                    }
                }
            }
        }
        Ok(ids)
    }

    fn merge_piece(&self, piece: &[u8]) -> Vec<String> {
        let mut symbols: Vec<String> = piece.iter().map(|&b| byte_symbol(b).to_string()).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// String form of one token (byte-level symbols for BPE).
    pub fn token_str(&self, id: TokenId) -> Result<&str> {
        self.id_to_token
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Range(format!("token id {id} outside vocabulary of {}", self.vocab_size())))
    }

    /// Bytes spelled by `ids`, specials dropped.
    pub fn detokenize_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token_str(id)?;
            if self.is_special(id) {
                continue;
            }
            match self.mode {
                TokenizerMode::Byte => out.push((id as usize - self.n_specials()) as u8),
                TokenizerMode::Bpe => {
                    for ch in tok.chars() {
                        match symbol_byte(ch) {
                            Some(b) => out.push(b),
                            // Added tokens outside the byte alphabet spell themselves.
                            None => out.extend_from_slice(ch.to_string().as_bytes()),
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.detokenize_bytes(ids)?).into_owned())
    }

    /// Human-readable label for one token, used for grid row labels.
    pub fn display_token(&self, id: TokenId) -> String {
        if self.is_special(id) {
            return self.token_str(id).unwrap_or("?").to_owned();
        }
        match self.detokenize_bytes(&[id]) {
            Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
            Err(_) => format!("<{id}>"),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let file = TokenizerFile {
            mode: self.mode,
            vocab: self.vocab.clone(),
            merges: self
                .merges
                .iter()
                .map(|(a, b)| MergeEntry::Pair(a.clone(), b.clone()))
                .collect(),
            specials: self.specials.clone(),
        };
        serde_json::to_string_pretty(&file).expect("tokenizer serializes")
    }

    /// Reads this crate's tokenizer JSON, or a Hugging Face `tokenizer.json`
    /// with a BPE model (recognised by its `model` object).
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("model").is_some_and(serde_json::Value::is_object) {
            return Self::from_hf_value(value);
        }
        let file: TokenizerFile = serde_json::from_value(value)?;
        let merges = file
            .merges
            .into_iter()
            .map(MergeEntry::into_pair)
            .collect::<Result<Vec<_>>>()?;
        match file.mode {
            TokenizerMode::Byte => {
                let spec = Self::byte(file.specials)?;
                if !file.vocab.is_empty() && file.vocab != spec.vocab {
                    return Err(Error::Tokenizer(
                        "byte mode vocabulary disagrees with the specials".into(),
                    ));
                }
                Ok(spec)
            }
            TokenizerMode::Bpe => Self::bpe(file.vocab, merges, file.specials),
        }
    }

    fn from_hf_value(value: serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct HfModel {
            #[serde(rename = "type")]
            kind: Option<String>,
            vocab: BTreeMap<String, TokenId>,
            #[serde(default)]
            merges: Vec<MergeEntry>,
        }
        #[derive(Deserialize)]
        struct Added {
            id: TokenId,
            content: String,
        }
        let model: HfModel = serde_json::from_value(value["model"].clone())?;
        if model.kind.as_deref().is_some_and(|k| k != "BPE") {
            return Err(Error::Format("only BPE tokenizer.json files are supported".into()));
        }
        let added: Vec<Added> = match value.get("added_tokens") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => Vec::new(),
        };
        let mut vocab = model.vocab;
        for a in &added {
            vocab.insert(a.content.clone(), a.id);
        }
        let pick = |names: &[&str]| {
            added
                .iter()
                .find(|a| names.contains(&a.content.as_str()))
                .map(|a| a.content.clone())
        };
        let specials = Specials {
            bos: pick(&["<|begin_of_text|>", "<s>"]),
            eos: pick(&["<|end_of_text|>", "<|eot_id|>", "</s>"]),
        };
        let merges = model
            .merges
            .into_iter()
            .map(MergeEntry::into_pair)
            .collect::<Result<Vec<_>>>()?;
        Self::bpe(vocab, merges, specials)
    }
}

fn pretokenize(bytes: &[u8]) -> Vec<&[u8]> {
    static SPLIT: OnceLock<regex::bytes::Regex> = OnceLock::new();
    let re = SPLIT.get_or_init(|| {
        regex::bytes::Regex::new(
            r"(?i:'s|'t|'re|'ve|'m|'ll|'d)| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+",
        )
        .expect("pre-tokenizer pattern compiles")
    });
    let mut pieces = Vec::new();
    let mut last = 0;
    for m in re.find_iter(bytes) {
        if m.start() > last {
            // Bytes the pattern skipped (invalid UTF-8) form their own piece.
            pieces.push(&bytes[last..m.start()]);
        }
        pieces.push(m.as_bytes());
        last = m.end();
    }
    if last < bytes.len() {
        pieces.push(&bytes[last..]);
    }
    pieces
}

fn byte_table() -> &'static ([char; 256], HashMap<char, u8>) {
    static TABLE: OnceLock<([char; 256], HashMap<char, u8>)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let printable = |b: u8| (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || b >= 0xAE;
        let mut forward = ['\0'; 256];
        let mut extra = 0u32;
        for b in 0..=255u8 {
            forward[b as usize] = if printable(b) {
                char::from(b)
            } else {
                extra += 1;
                char::from_u32(255 + extra).expect("valid code point")
            };
        }
        let back = forward.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        (forward, back)
    })
}

/// Printable stand-in for byte `b` in byte-level BPE vocabularies.
pub fn byte_symbol(b: u8) -> char {
    byte_table().0[b as usize]
}

fn symbol_byte(c: char) -> Option<u8> {
    byte_table().1.get(&c).copied()
}
