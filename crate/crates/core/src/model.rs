//! Full model: encoders → interaction → elimination → selection.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::data::Instance;
use crate::dropout::{maybe_apply, InputDropout};
use crate::elimination::{projection_by_name, run_elimination, EliminationParams, EliminationTrace};
use crate::encoders::{embed, BiGruParams, EmbeddingTable};
use crate::error::{Error, Result};
use crate::interaction::{run_interaction, InteractionParams};
use crate::params::{ParamId, ParamStore};
use crate::selection::{self, score_options, SelectionParams};
use crate::tensor::Tensor;

pub const HIDDEN_SIZES: [usize; 3] = [64, 128, 256];
pub const HOP_COUNTS: [usize; 3] = [1, 2, 3];
/// Pass counts; 0 disables elimination entirely (gated-attention baseline).
pub const PASS_COUNTS: [usize; 4] = [0, 1, 3, 6];
pub const DROPOUT_RATES: [f64; 3] = [0.2, 0.3, 0.5];
pub const DEFAULT_VOCAB_SIZE: usize = 50_000 + 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub t_hops: usize,
    pub l_passes: usize,
    pub n_options: usize,
    pub dropout_rate: f64,
    pub projection_mode: String,
    pub subtract_gate_enabled: bool,
    pub share_elimination_params: bool,
    pub finetune_embeddings: bool,
    pub seed: u64,
    /// Embedding rows including the reserved pad and unk ids. Training
    /// treats this as the vocabulary cap and overwrites it with the size of
    /// the vocabulary actually built.
    pub vocab_size: usize,
    /// Permits values outside the standard hyperparameter grids.
    pub allow_nonstandard: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            embedding_dim: 100,
            t_hops: 1,
            l_passes: 1,
            n_options: 4,
            dropout_rate: 0.2,
            projection_mode: "paper".into(),
            subtract_gate_enabled: true,
            share_elimination_params: true,
            finetune_embeddings: true,
            seed: 0,
            vocab_size: DEFAULT_VOCAB_SIZE,
            allow_nonstandard: false,
        }
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Width of every bidirectional state.
    pub fn state_width(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        projection_by_name(&self.projection_mode)?;
        if self.hidden_dim == 0 || self.embedding_dim == 0 {
            return bad("hidden_dim", "dimensions must be positive".into());
        }
        if self.t_hops == 0 {
            return bad("t_hops", "at least one hop is required".into());
        }
        if self.n_options < 2 {
            return bad("n_options", format!("need at least 2 options, got {}", self.n_options));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", format!("{} is outside [0, 1)", self.dropout_rate));
        }
        if self.vocab_size < 2 {
            return bad("vocab_size", "must include the two reserved ids".into());
        }
        if self.allow_nonstandard {
            return Ok(());
        }
        let hint = "(set allow_nonstandard to override)";
        if !HIDDEN_SIZES.contains(&self.hidden_dim) {
            return bad("hidden_dim", format!("{} not in {HIDDEN_SIZES:?} {hint}", self.hidden_dim));
        }
        if !HOP_COUNTS.contains(&self.t_hops) {
            return bad("t_hops", format!("{} not in {HOP_COUNTS:?} {hint}", self.t_hops));
        }
        if !PASS_COUNTS.contains(&self.l_passes) {
            return bad("l_passes", format!("{} not in {PASS_COUNTS:?} {hint}", self.l_passes));
        }
        if !DROPOUT_RATES.contains(&self.dropout_rate) {
            return bad("dropout_rate", format!("{} not in {DROPOUT_RATES:?} {hint}", self.dropout_rate));
        }
        Ok(())
    }
}

/// Parameter groups, used for freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Interaction,
    Elimination,
    Selection,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        if name == "embedding" || name.starts_with("question.") || name.starts_with("option.") {
            ParamGroup::Encoder
        } else if name.starts_with("passage.") || name.starts_with("interaction.") {
            ParamGroup::Interaction
        } else if name.starts_with("elim") {
            ParamGroup::Elimination
        } else {
            ParamGroup::Selection
        }
    }
}

#[derive(Clone, Debug)]
struct Handles {
    embedding: EmbeddingTable,
    question: BiGruParams,
    option: BiGruParams,
    interaction: InteractionParams,
    elimination: EliminationParams,
    selection: SelectionParams,
}

/// Graph handles from one forward pass.
pub struct ForwardNodes {
    pub scores: Var,
    pub initial_scores: Var,
    pub alphas: Vec<Var>,
    pub pool_weights: Var,
    pub passes: Vec<crate::elimination::PassNodes>,
}

/// Values from one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub scores: Vec<f64>,
    pub trace: EliminationTrace,
    /// Per hop, one question-attention row per passage word.
    pub alphas: Vec<Vec<Vec<f64>>>,
    pub pool_weights: Vec<f64>,
}

impl Forward {
    pub fn prediction(&self) -> usize {
        selection::predict(&self.scores)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        selection::probabilities(&self.scores)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    handles: Handles,
}

/// Xavier-uniform initialiser over `[rows, cols]` shapes; vectors use `cols = 1`.
pub struct XavierInit {
    rng: ChaCha8Rng,
}

impl XavierInit {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn sample(&mut self, shape: &[usize]) -> Tensor {
        let (fan_out, fan_in) = match shape {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            _ => (1, 1),
        };
        let c = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-c..=c)).collect();
        Tensor::new(shape.to_vec(), data).expect("consistent shape")
    }
}

/// Builds a freshly initialised model. Same config and seed give
/// bit-identical parameters.
pub fn build_model(config: &ModelConfig, init_seed: u64) -> Result<Model> {
    config.validate()?;
    let mut xavier = XavierInit::new(init_seed);
    let mut init = |s: &[usize]| xavier.sample(s);
    Model::assemble(config, &mut init)
}

impl Model {
    fn assemble(config: &ModelConfig, init: &mut dyn FnMut(&[usize]) -> Tensor) -> Result<Model> {
        let (d, h, l) = (config.embedding_dim, config.hidden_dim, config.state_width());
        let mut store = ParamStore::new();
        // Embedding rows see a one-hot input: fan_in 1, fan_out d.
        let emb = {
            let mut rows = Vec::with_capacity(config.vocab_size * d);
            for _ in 0..config.vocab_size {
                rows.extend(init(&[d, 1]).into_data());
            }
            Tensor::matrix(config.vocab_size, d, rows)?
        };
        let embedding = EmbeddingTable::register(&mut store, "embedding", emb)?;
        let question = BiGruParams::register(&mut store, "question", d, h, init)?;
        let option = BiGruParams::register(&mut store, "option", d, h, init)?;
        let interaction = InteractionParams::register(&mut store, d, h, config.t_hops, init)?;
        let elimination = EliminationParams::register(
            &mut store,
            l,
            config.l_passes,
            config.share_elimination_params,
            config.subtract_gate_enabled,
            &config.projection_mode,
            init,
        )?;
        let selection = SelectionParams::register(&mut store, l, init)?;
        if !config.finetune_embeddings {
            store.set_trainable(embedding.id, false);
        }
        let handles = Handles { embedding, question, option, interaction, elimination, selection };
        Ok(Model { config: config.clone(), params: store, handles })
    }

    /// Rebinds a model to an existing parameter store, checking that every
    /// expected parameter is present with the shape the config implies.
    pub fn from_params(config: &ModelConfig, params: ParamStore) -> Result<Model> {
        config.validate()?;
        let template = Model::assemble(config, &mut |s| Tensor::zeros(s))?;
        if template.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for this config, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (_, name, t) in template.params.iter() {
            let got = params.by_name(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        let handles = Handles {
            embedding: EmbeddingTable::from_store(&params, "embedding")?,
            question: BiGruParams::from_store(&params, "question")?,
            option: BiGruParams::from_store(&params, "option")?,
            interaction: InteractionParams::from_store(&params, config.t_hops)?,
            elimination: EliminationParams::from_store(
                &params,
                config.l_passes,
                config.share_elimination_params,
                config.subtract_gate_enabled,
                &config.projection_mode,
            )?,
            selection: SelectionParams::from_store(&params)?,
        };
        let mut model = Model { config: config.clone(), params, handles };
        let emb = model.handles.embedding.id;
        model.params.set_trainable(emb, config.finetune_embeddings);
        Ok(model)
    }

    pub fn embedding_id(&self) -> ParamId {
        self.handles.embedding.id
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_instance(&self, inst: &Instance) -> Result<()> {
        let empty = |what: &str| Err(Error::InvalidArgument(format!("instance {}: empty {what}", inst.id)));
        if inst.passage.is_empty() {
            return empty("passage");
        }
        if inst.question.is_empty() {
            return empty("question");
        }
        if inst.options.len() != self.config.n_options {
            return Err(Error::InvalidArgument(format!(
                "instance {} has {} options, model expects {}",
                inst.id,
                inst.options.len(),
                self.config.n_options
            )));
        }
        if inst.options.iter().any(Vec::is_empty) {
            return empty("option");
        }
        Ok(())
    }

    /// Records the full pipeline for `inst` on `g`.
    pub fn build_graph(
        &self,
        g: &mut Graph,
        inst: &Instance,
        mut dropout: Option<&mut InputDropout>,
    ) -> Result<ForwardNodes> {
        self.check_instance(inst)?;
        let h = &self.handles;

        let q_emb = embed(g, &h.embedding, &inst.question)?;
        let q_in = maybe_apply(&mut dropout, g, q_emb)?;
        let q = h.question.encode(g, q_in)?;

        let mut option_states = Vec::with_capacity(inst.options.len());
        for opt in &inst.options {
            let e = embed(g, &h.embedding, opt)?;
            let e = maybe_apply(&mut dropout, g, e)?;
            option_states.push(h.option.encode(g, e)?.final_state);
        }
        let options = g.stack(&option_states)?;

        let inter = run_interaction(
            g,
            &h.interaction,
            &h.embedding,
            &inst.passage,
            q.matrix,
            q.final_state,
            dropout.as_deref_mut(),
        )?;

        let initial_scores = score_options(g, inter.x, options, &h.selection)?;
        let (scores, passes) = if h.elimination.passes == 0 {
            (initial_scores, Vec::new())
        } else {
            let sel = h.selection;
            let mut scorer = |g: &mut Graph, x: Var| score_options(g, x, options, &sel);
            let out = run_elimination(g, inter.x, q.final_state, &option_states, &h.elimination, &mut scorer)?;
            (out.passes.last().expect("at least one pass").scores, out.passes)
        };
        Ok(ForwardNodes { scores, initial_scores, alphas: inter.alphas, pool_weights: inter.pool_weights, passes })
    }

    /// Forward pass. With `train_mode` and a positive dropout rate, inverted
    /// dropout is applied to every BiGRU input using `rng`.
    pub fn forward(&self, inst: &Instance, train_mode: bool, rng: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        let mut g = Graph::new(&self.params);
        let mut dropout = self.dropout_for(train_mode, rng)?;
        let nodes = self.build_graph(&mut g, inst, dropout.as_mut())?;
        Ok(Forward {
            scores: g.value(nodes.scores).to_vec(),
            trace: EliminationTrace::collect(&g, nodes.initial_scores, &nodes.passes),
            alphas: nodes.alphas.iter().map(|a| g.tensor(*a).row_vectors()).collect(),
            pool_weights: g.value(nodes.pool_weights).to_vec(),
        })
    }

    fn dropout_for(&self, train_mode: bool, rng: Option<&mut ChaCha8Rng>) -> Result<Option<InputDropout>> {
        if !train_mode || self.config.dropout_rate == 0.0 {
            return Ok(None);
        }
        let rng = rng.ok_or_else(|| Error::InvalidArgument("train-mode forward needs an rng".into()))?;
        let child = ChaCha8Rng::seed_from_u64(rng.gen());
        Ok(Some(InputDropout::new(self.config.dropout_rate, child)?))
    }

    /// Loss on `inst` plus its parameter gradients. Parameters for which
    /// `frozen` returns true get no gradient.
    pub fn loss_and_gradients(
        &self,
        inst: &Instance,
        train_mode: bool,
        rng: Option<&mut ChaCha8Rng>,
        frozen: Option<&dyn Fn(ParamId) -> bool>,
    ) -> Result<(f64, Gradients)> {
        let mut g = Graph::new(&self.params);
        if let Some(f) = frozen {
            g = g.with_frozen(f);
        }
        let mut dropout = self.dropout_for(train_mode, rng)?;
        let nodes = self.build_graph(&mut g, inst, dropout.as_mut())?;
        let loss = selection::loss(&mut g, nodes.scores, inst.label)?;
        let grads = g.backward(loss)?;
        Ok((g.scalar_value(loss), grads))
    }
}
