//! Datasets, vocabularies, pre-trained embeddings and question categories.

mod categorize;
mod dataset;
mod embeddings;
mod synth;
mod vocab;

pub use categorize::{categorize_question, category_report, CategoryCounts, QuestionCategory};
pub use dataset::{load_dataset, load_records, read_records, to_records, write_records, Label, Record};
pub use embeddings::{load_pretrained_embeddings, parse_embeddings, EmbeddingCoverage};
pub use synth::{oracle_answer, synth_generate, synth_vocabulary, SynthSpec};
pub use vocab::{build_vocab, tokenize, Vocabulary, PAD_TOKEN, UNK_TOKEN};

/// One multiple-choice question over a passage, as token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub passage: Vec<usize>,
    pub question: Vec<usize>,
    pub options: Vec<Vec<usize>>,
    pub label: usize,
    /// Raw question text, kept for categorisation.
    pub question_text: String,
}

impl Instance {
    /// Copy with options reordered so that new option `k` is old option `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Instance {
        let options = perm.iter().map(|&i| self.options[i].clone()).collect();
        let label = perm.iter().position(|&i| i == self.label).expect("perm is a permutation");
        Instance { options, label, ..self.clone() }
    }
}
