//! Dataset ingestion, canonical rendering and tokenization.

mod load;
mod render;
mod sample;
mod tokenize;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use load::{load_dataset, read_dataset, UNKNOWN_SOURCE};
pub use render::{render_segments, render_text, render_with, RenderTemplate, Segment};
pub use sample::{Dataset, InstructionSample, Role, Turn};
pub use tokenize::{split_tokens, Vocab, UNK_ID, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id} (first seen on line {first})")]
    DuplicateId { line: usize, id: i64, first: usize },
    #[error("template line {line}: {message}")]
    Template { line: usize, message: String },
}

/// Token view of one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    /// Full rendered stream (markup + content).
    pub rendered: Vec<u32>,
    /// `true` at rendered positions belonging to assistant output.
    pub target: Vec<bool>,
    /// Content tokens only (instruction, input, output or turn texts), in order.
    pub content: Vec<u32>,
}

impl EncodedSample {
    /// First target position, or the stream length if there is none.
    pub fn target_start(&self) -> usize {
        self.target
            .iter()
            .position(|&t| t)
            .unwrap_or(self.rendered.len())
    }

    pub fn target_len(&self) -> usize {
        self.target.iter().filter(|&&t| t).count()
    }
}

/// A dataset together with its vocabulary and pre-tokenized samples.
///
/// The vocabulary is built once over every sample and is immutable afterwards.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dataset: Dataset,
    pub vocab: Vocab,
    pub template: RenderTemplate,
    encoded: Vec<EncodedSample>,
}

impl Corpus {
    pub fn new(dataset: Dataset) -> Self {
        Self::with_template(dataset, RenderTemplate::default())
    }

    pub fn with_template(dataset: Dataset, template: RenderTemplate) -> Self {
        let mut vocab = Vocab::new();
        let encoded = dataset
            .iter()
            .map(|s| encode_sample(s, &template, &mut vocab))
            .collect();
        Self {
            dataset,
            vocab,
            template,
            encoded,
        }
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn sample(&self, id: usize) -> &InstructionSample {
        &self.dataset.samples[id]
    }

    pub fn encoded(&self, id: usize) -> &EncodedSample {
        &self.encoded[id]
    }

    pub fn encoded_all(&self) -> &[EncodedSample] {
        &self.encoded
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn render(&self, id: usize) -> String {
        render_with(self.sample(id), &self.template)
    }

    /// SHA-256 over the rendered texts and source labels, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for s in self.dataset.iter() {
            hasher.update(render_with(s, &self.template).as_bytes());
            hasher.update([0u8]);
            hasher.update(s.source.as_bytes());
            hasher.update([0xffu8]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn encode_sample(
    sample: &InstructionSample,
    template: &RenderTemplate,
    vocab: &mut Vocab,
) -> EncodedSample {
    let mut out = EncodedSample {
        rendered: Vec::new(),
        target: Vec::new(),
        content: Vec::new(),
    };
    for seg in render_segments(sample, template) {
        let ids = vocab.tokenize(seg.text);
        out.target.extend(std::iter::repeat_n(seg.target, ids.len()));
        if seg.content {
            out.content.extend_from_slice(&ids);
        }
        out.rendered.extend(ids);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Corpus {
        Corpus::new(Dataset::new(vec![
            InstructionSample::single(0, "Hello.", "Hello! How can I help you today?", "general"),
            InstructionSample::single(0, "Add", "3", "math").with_input("1 and 2"),
            InstructionSample::multi_turn(
                0,
                vec![
                    Turn { role: Role::User, text: "hi there".into() },
                    Turn { role: Role::Assistant, text: "hello".into() },
                    Turn { role: Role::User, text: "bye".into() },
                    Turn { role: Role::Assistant, text: "see you".into() },
                ],
                "general",
            ),
        ]))
    }

    #[test]
    fn segmentwise_encoding_matches_whole_text() {
        let c = corpus();
        for id in 0..c.len() {
            let whole = c.vocab.encode(&c.render(id));
            assert_eq!(whole, c.encoded(id).rendered, "sample {id}");
        }
    }

    #[test]
    fn target_mask_covers_outputs() {
        let c = corpus();
        let e = c.encoded(0);
        let target: Vec<_> = e
            .rendered
            .iter()
            .zip(&e.target)
            .filter(|(_, &t)| t)
            .map(|(&id, _)| c.vocab.token(id))
            .collect();
        assert_eq!(target, vec!["Hello", "!", "How", "can", "I", "help", "you", "today", "?"]);
        let multi = c.encoded(2);
        assert_eq!(multi.target_len(), 3);
        assert!(multi.target_start() > 0);
    }

    #[test]
    fn content_excludes_markup() {
        let c = corpus();
        assert_eq!(c.vocab.decode(&c.encoded(1).content), vec!["Add", "1", "and", "2", "3"]);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = corpus();
        let b = corpus();
        assert_eq!(a.digest(), b.digest());
        let mut ds = a.dataset.clone();
        ds.samples[1].source = "code".into();
        assert_ne!(Corpus::new(ds).digest(), a.digest());
    }

    #[test]
    fn dataset_ids_are_contiguous_after_extend() {
        let mut ds = corpus().dataset;
        ds.extend(corpus().dataset);
        assert_eq!(ds.iter().map(|s| s.id).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
    }
}
