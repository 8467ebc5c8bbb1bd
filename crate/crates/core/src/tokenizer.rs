//! Byte-level tokenizer with a handful of reserved special ids.

/// Token id. Bytes map to `0..256`; specials live above.
pub type TokenId = u32;

/// Byte-level tokenizer.
///
/// Every byte is its own token, so any byte string round-trips. Special
/// tokens sit above the byte range and are never produced by [`encode`].
///
/// [`encode`]: Tokenizer::encode
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tokenizer;

impl Tokenizer {
    /// Beginning-of-stream marker, prepended to every training window and session.
    pub const BOS: TokenId = 256;
    /// End-of-turn marker.
    pub const EOT: TokenId = 257;
    pub const USER: TokenId = 258;
    pub const ASSISTANT: TokenId = 259;
    /// Line break, the separator used between turns in raw-byte corpora.
    pub const NEWLINE: TokenId = b'\n' as TokenId;

    pub const N_SPECIAL: usize = 4;
    pub const VOCAB_SIZE: usize = 256 + Self::N_SPECIAL;

    pub fn new() -> Self {
        Self
    }

    pub fn vocab_size(&self) -> usize {
        Self::VOCAB_SIZE
    }

    pub fn encode(&self, bytes: impl AsRef<[u8]>) -> Vec<TokenId> {
        bytes.as_ref().iter().map(|&b| TokenId::from(b)).collect()
    }

    /// Decodes byte tokens, dropping specials.
    pub fn decode(&self, tokens: &[TokenId]) -> Vec<u8> {
        tokens
            .iter()
            .filter_map(|&t| u8::try_from(t).ok())
            .collect()
    }

    /// Human-readable rendering; specials appear as `<|name|>`.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        let mut bytes = Vec::new();
        for &t in tokens {
            match u8::try_from(t) {
                Ok(b) => bytes.push(b),
                Err(_) => {
                    out.push_str(&String::from_utf8_lossy(&bytes));
                    bytes.clear();
                    out.push_str(Self::special_name(t));
                }
            }
        }
        out.push_str(&String::from_utf8_lossy(&bytes));
        out
    }

    pub fn is_special(token: TokenId) -> bool {
        token >= 256
    }

    fn special_name(token: TokenId) -> &'static str {
        match token {
            Self::BOS => "<|bos|>",
            Self::EOT => "<|eot|>",
            Self::USER => "<|user|>",
            Self::ASSISTANT => "<|assistant|>",
            _ => "<|unk|>",
        }
    }
}
