use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Id reserved for tokens outside the vocabulary.
pub const UNK_ID: u32 = 0;
pub const UNK_TOKEN: &str = "<unk>";

/// Splits text on whitespace, then isolates every non-alphanumeric character
/// as its own token. Alphanumeric runs stay whole.
pub fn split_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = None;
        for (i, ch) in chunk.char_indices() {
            if ch.is_alphanumeric() {
                start.get_or_insert(i);
            } else {
                if let Some(s) = start.take() {
                    out.push(&chunk[s..i]);
                }
                out.push(&chunk[i..i + ch.len_utf8()]);
            }
        }
        if let Some(s) = start {
            out.push(&chunk[s..]);
        }
    }
    out
}

/// Token-string to id mapping. Id 0 is the unknown token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut index = HashMap::new();
        index.insert(UNK_TOKEN.to_owned(), UNK_ID);
        Self {
            tokens: vec![UNK_TOKEN.to_owned()],
            index,
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK_TOKEN)
    }

    /// Tokenizes `text`, adding unseen tokens to the vocabulary.
    pub fn tokenize(&mut self, text: &str) -> Vec<u32> {
        split_tokens(text).into_iter().map(|t| self.intern(t)).collect()
    }

    /// Tokenizes against the frozen vocabulary; unseen tokens map to [`UNK_ID`].
    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_tokens(text).into_iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&id| self.token(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn repeated_words_share_ids() {
        let mut v = Vocab::new();
        assert_eq!(v.tokenize("a b a"), vec![1, 2, 1]);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn punctuation_is_split() {
        assert_eq!(split_tokens("Hello."), vec!["Hello", "."]);
        assert_eq!(
            split_tokens("Hello! How can I help you today?"),
            vec!["Hello", "!", "How", "can", "I", "help", "you", "today", "?"]
        );
        assert_eq!(split_tokens("### Response:\n"), vec!["#", "#", "#", "Response", ":"]);
        assert_eq!(split_tokens("x=1+2"), vec!["x", "=", "1", "+", "2"]);
    }

    #[test]
    fn empty_text_is_empty_sequence() {
        let mut v = Vocab::new();
        assert!(v.tokenize("").is_empty());
        assert!(v.tokenize("  \n\t ").is_empty());
    }

    #[test]
    fn encode_maps_unseen_to_unknown() {
        let mut v = Vocab::new();
        v.tokenize("known words");
        assert_eq!(v.encode("known stranger"), vec![1, UNK_ID]);
    }

    #[test]
    fn reindex_after_serde() {
        let mut v = Vocab::new();
        v.tokenize("alpha beta");
        let mut back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        back.reindex();
        assert_eq!(back, v);
        assert_eq!(back.id("beta"), 2);
    }

    proptest! {
        #[test]
        fn tokenize_is_deterministic_and_decodes(text in "[a-c .,!?\n]{0,40}") {
            let mut v1 = Vocab::new();
            let mut v2 = Vocab::new();
            let a = v1.tokenize(&text);
            let b = v2.tokenize(&text);
            prop_assert_eq!(&a, &b);
            prop_assert!(a.iter().all(|&id| (id as usize) < v1.len()));
            prop_assert_eq!(v1.decode(&a), split_tokens(&text));
        }
    }
}
