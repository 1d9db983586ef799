//! Synthetic cue/answer lookup tasks.
//!
//! Each passage holds `n` adjacent (cue, answer) token pairs scattered among
//! filler tokens. The question is `what follows <cue>`, the correct option
//! is the answer paired with that cue, and the distractors are the answers
//! of the other pairs, so every option token appears in the passage.
//!
//! Gold positions are dealt from shuffled blocks of `0..n`, so each label is
//! uniform per instance and the label counts stay balanced.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::Vocabulary;
use super::Instance;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub num_instances: usize,
    pub passage_len: usize,
    /// Number of content tokens (`w0`, `w1`, ...).
    pub vocab_size: usize,
    pub distractor_count: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn n_options(&self) -> usize {
        self.distractor_count + 1
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_options();
        let bad = |m: String| Err(Error::InvalidArgument(format!("infeasible synthetic spec: {m}")));
        if self.vocab_size < 8 {
            return bad(format!("vocab_size {} < 8", self.vocab_size));
        }
        if self.distractor_count == 0 {
            return bad("need at least one distractor".into());
        }
        if self.passage_len < 2 * n {
            return bad(format!("passage_len {} cannot hold {n} cue/answer pairs", self.passage_len));
        }
        if self.vocab_size < 2 * n || (self.passage_len > 2 * n && self.vocab_size == 2 * n) {
            return bad(format!("vocab_size {} leaves no filler tokens for {n} pairs", self.vocab_size));
        }
        Ok(())
    }
}

const PREFIX: [&str; 2] = ["what", "follows"];

/// The vocabulary synthetic instances are expressed in.
pub fn synth_vocabulary(spec: &SynthSpec) -> Vocabulary {
    let content = (0..spec.vocab_size).map(|k| format!("w{k}"));
    Vocabulary::from_tokens(PREFIX.iter().map(|s| s.to_string()).chain(content))
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Instance>> {
    spec.validate()?;
    let vocab = synth_vocabulary(spec);
    let content: Vec<usize> = (0..spec.vocab_size).map(|k| vocab.id(&format!("w{k}"))).collect();
    let prefix: Vec<usize> = PREFIX.iter().map(|t| vocab.id(t)).collect();
    let n = spec.n_options();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.num_instances);
    let mut labels: Vec<usize> = Vec::new();

    for idx in 0..spec.num_instances {
        let mut pool = content.clone();
        pool.shuffle(&mut rng);
        let (chosen, filler) = pool.split_at(2 * n);
        let (cues, answers) = chosen.split_at(n);

        enum Piece {
            Pair(usize),
            Filler(usize),
        }
        let mut pieces: Vec<Piece> = (0..n).map(Piece::Pair).collect();
        for _ in 0..spec.passage_len - 2 * n {
            pieces.push(Piece::Filler(filler[rng.gen_range(0..filler.len())]));
        }
        pieces.shuffle(&mut rng);
        let mut passage = Vec::with_capacity(spec.passage_len);
        for p in pieces {
            match p {
                Piece::Pair(j) => passage.extend([cues[j], answers[j]]),
                Piece::Filler(t) => passage.push(t),
            }
        }

        let asked = rng.gen_range(0..n);
        if labels.is_empty() {
            labels.extend(0..n);
            labels.shuffle(&mut rng);
        }
        let label = labels.pop().expect("refilled");
        let mut others: Vec<usize> = (0..n).filter(|&j| j != asked).map(|j| answers[j]).collect();
        others.shuffle(&mut rng);
        others.insert(label, answers[asked]);

        let mut question = prefix.clone();
        question.push(cues[asked]);
        out.push(Instance {
            id: format!("synth-{idx}"),
            question_text: vocab.decode(&question),
            passage,
            question,
            options: others.into_iter().map(|t| vec![t]).collect(),
            label,
        });
    }
    Ok(out)
}

/// Solves a synthetic instance by lookup: find the question's cue in the
/// passage and pick the option holding the token that follows it.
pub fn oracle_answer(inst: &Instance) -> Option<usize> {
    let cue = *inst.question.last()?;
    let pos = inst.passage.iter().position(|&t| t == cue)?;
    let answer = *inst.passage.get(pos + 1)?;
    inst.options.iter().position(|o| o.as_slice() == [answer])
}
