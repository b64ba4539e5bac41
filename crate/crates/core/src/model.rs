//! The two-branch classifier.
//!
//! * Summary branch: word embeddings, CNN block, BiGRU and attention pooling.
//! * Behaviour branch: one projected timestep per modality (or per scalar
//!   feature), a stacked BiGRU, its last state and a dense layer.
//!
//! The wider branch output is max-pooled down to the narrower width, the two
//! are concatenated, and a stack of ReLU layers feeds a two-way softmax.
//! Class 0 is "depressed".

use std::fs;
use std::path::Path;

use depnet_tensor::{load_checkpoint, save_checkpoint, Graph, ParamId, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorFeatures, DomainVector, EmotionVector, Modality, SocialVector};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::layers::{
    Attention, AttentionKind, AttentionVars, BiGru, BiGruVars, Binder, CnnBlock, CnnVars, EmbeddingTable,
    EmbeddingVars, Linear, LinearVars, StackedBiGru, StackedBiGruVars, StoreBinder, WordVectors,
};
use crate::seed::rng_for;

pub const MODEL_CONFIG_FILE: &str = "model_config.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SIGMA_FLOOR: f64 = 1e-8;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// What one timestep of the behaviour sequence holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorTimesteps {
    /// Four steps, one per modality, each projected from its whole vector.
    #[default]
    Modality,
    /// One step per scalar feature, each projected by its modality's
    /// `[1, P]` weights.
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub conv_window: usize,
    pub pool: usize,
    pub filters: usize,
    /// Width of the dense layer after pooling.
    pub cnn_out: usize,
    pub summary_hidden: usize,
    pub behavior_layers: usize,
    pub behavior_hidden: usize,
    /// Common width the modality vectors are projected to.
    pub projection: usize,
    pub behavior_fc: usize,
    pub fusion: Vec<usize>,
    pub classes: usize,
    /// Tweets kept by extractive summarisation.
    pub m: usize,
    /// Token cap on the condensed summary.
    pub n_max: usize,
    /// Number of topic words, i.e. width of the topic modality.
    pub topic_dim: usize,
    pub attention: AttentionKind,
    pub behavior_timesteps: BehaviorTimesteps,
    pub train_embeddings: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 300,
            conv_window: 3,
            pool: 4,
            filters: 64,
            cnn_out: 64,
            summary_hidden: 32,
            behavior_layers: 2,
            behavior_hidden: 64,
            projection: 64,
            behavior_fc: 128,
            fusion: vec![64, 32],
            classes: 2,
            m: 20,
            n_max: 100,
            topic_dim: 25,
            attention: AttentionKind::PerDimension,
            behavior_timesteps: BehaviorTimesteps::Modality,
            train_embeddings: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("embed_dim", self.embed_dim),
            ("conv_window", self.conv_window),
            ("pool", self.pool),
            ("filters", self.filters),
            ("cnn_out", self.cnn_out),
            ("summary_hidden", self.summary_hidden),
            ("behavior_layers", self.behavior_layers),
            ("behavior_hidden", self.behavior_hidden),
            ("projection", self.projection),
            ("behavior_fc", self.behavior_fc),
            ("m", self.m),
            ("n_max", self.n_max),
            ("topic_dim", self.topic_dim),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("model.{name} must be positive")));
        }
        if self.fusion.contains(&0) {
            return Err(Error::InvalidArgument("model.fusion widths must be positive".into()));
        }
        if self.classes != 2 {
            return Err(Error::InvalidArgument("model.classes must be 2".into()));
        }
        Ok(())
    }

    /// Shortest token sequence the CNN block accepts.
    pub fn min_summary_len(&self) -> usize {
        self.conv_window + self.pool - 1
    }

    pub fn modality_dims(&self) -> [usize; 4] {
        [SocialVector::DIM, EmotionVector::DIM, DomainVector::DIM, self.topic_dim]
    }
}

/// Per-feature standardisation statistics, fitted on training users.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

/// Standardised modality vectors in `[S, E, D, T]` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSequence {
    pub steps: [Vec<f64>; 4],
}

impl Scaler {
    /// Population mean and standard deviation of every feature.
    pub fn fit(features: &[BehaviorFeatures]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidArgument("cannot fit a scaler on zero users".into()));
        }
        let vecs: Vec<[Vec<f64>; 4]> = features.iter().map(BehaviorFeatures::modality_vectors).collect();
        let n = vecs.len() as f64;
        let mut mean = Vec::with_capacity(4);
        let mut std = Vec::with_capacity(4);
        for m in 0..4 {
            let dim = vecs[0][m].len();
            if vecs.iter().any(|v| v[m].len() != dim) {
                return Err(Error::InvalidArgument(format!("modality {m} has inconsistent widths")));
            }
            let mu: Vec<f64> = (0..dim).map(|j| vecs.iter().map(|v| v[m][j]).sum::<f64>() / n).collect();
            let sd = (0..dim)
                .map(|j| (vecs.iter().map(|v| (v[m][j] - mu[j]).powi(2)).sum::<f64>() / n).sqrt())
                .collect();
            mean.push(mu);
            std.push(sd);
        }
        Ok(Self { mean, std })
    }

    pub fn is_fitted(&self) -> bool {
        self.mean.len() == 4
    }

    /// `(x - mean) / std`. Features whose training spread is below
    /// [`SIGMA_FLOOR`] carry no information and map to 0.
    pub fn transform(&self, features: &BehaviorFeatures) -> Result<BehaviorSequence> {
        if !self.is_fitted() {
            return Err(Error::ScalerNotFitted);
        }
        let vecs = features.modality_vectors();
        let mut steps: [Vec<f64>; 4] = Default::default();
        for (m, v) in vecs.iter().enumerate() {
            if v.len() != self.mean[m].len() {
                return Err(Error::InvalidArgument(format!(
                    "user {} modality {} has width {}, scaler expects {}",
                    features.user_id,
                    Modality::ALL[m].short(),
                    v.len(),
                    self.mean[m].len()
                )));
            }
            steps[m] = v
                .iter()
                .zip(&self.mean[m])
                .zip(&self.std[m])
                .map(|((x, mu), sd)| if *sd < SIGMA_FLOOR { 0.0 } else { (x - mu) / sd })
                .collect();
        }
        Ok(BehaviorSequence { steps })
    }
}

/// Branches and modalities switched off for ablations. A dropped modality's
/// timestep is zeroed after projection; a dropped branch contributes zeros
/// to the fused vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub drop_social: bool,
    pub drop_emotional: bool,
    pub drop_domain: bool,
    pub drop_topic: bool,
    pub drop_behavior: bool,
    pub drop_summary: bool,
}

impl Ablation {
    pub fn drops(&self, m: Modality) -> bool {
        match m {
            Modality::Social => self.drop_social,
            Modality::Emotional => self.drop_emotional,
            Modality::Domain => self.drop_domain,
            Modality::Topic => self.drop_topic,
        }
    }

    pub fn dropping(m: Modality) -> Self {
        let mut a = Self::default();
        match m {
            Modality::Social => a.drop_social = true,
            Modality::Emotional => a.drop_emotional = true,
            Modality::Domain => a.drop_domain = true,
            Modality::Topic => a.drop_topic = true,
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        if self.drop_behavior && self.drop_summary {
            return Err(Error::InvalidArgument("cannot drop both branches".into()));
        }
        Ok(())
    }
}

/// Model-ready inputs for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserInput {
    pub user_id: String,
    pub label: Option<Label>,
    pub tokens: Vec<String>,
    pub behavior: BehaviorSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Probability of the depressed class.
    pub score: f64,
}

/// Depressed iff `p_dep >= threshold`.
pub fn decide(p_dep: f64, threshold: f64) -> Label {
    if p_dep >= threshold {
        Label::Depressed
    } else {
        Label::NonDepressed
    }
}

/// How the embedding table is initialised.
#[derive(Debug, Clone)]
pub enum EmbeddingInit {
    /// Seeded random rows for these words.
    Random(Vec<String>),
    Pretrained(WordVectors),
}

#[derive(Debug, Clone)]
pub struct DepressionNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embedding: EmbeddingTable,
    pub cnn: CnnBlock,
    pub summary_rnn: BiGru,
    pub attention: Attention,
    pub projections: Vec<Linear>,
    pub behavior_rnn: StackedBiGru,
    pub behavior_fc: Linear,
    pub fusion: Vec<Linear>,
    pub output: Linear,
}

/// Every parameter of a [`DepressionNet`] recorded on one graph.
pub struct NetVars {
    embedding: EmbeddingVars,
    cnn: CnnVars,
    summary_rnn: BiGruVars,
    attention: AttentionVars,
    projections: Vec<LinearVars>,
    behavior_rnn: StackedBiGruVars,
    behavior_fc: LinearVars,
    fusion: Vec<LinearVars>,
    output: LinearVars,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    pub summary: Var,
    pub attention_weights: Option<Var>,
    pub behavior: Var,
    pub fused: Var,
    pub probs: Var,
}

impl DepressionNet {
    pub fn new(config: ModelConfig, init: EmbeddingInit) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = rng_for(config.seed, "model-init");
        let embedding = match init {
            EmbeddingInit::Random(words) => EmbeddingTable::random(
                &mut store,
                "embedding",
                &words,
                config.embed_dim,
                config.seed,
                config.train_embeddings,
            ),
            EmbeddingInit::Pretrained(wv) => {
                if wv.dim != config.embed_dim {
                    return Err(Error::WordVectors(format!(
                        "vectors have dimension {}, model expects {}",
                        wv.dim, config.embed_dim
                    )));
                }
                EmbeddingTable::from_vectors(&mut store, "embedding", wv, config.seed, config.train_embeddings)
            }
        };
        Self::assemble(config, store, embedding, &mut rng)
    }

    fn assemble(
        config: ModelConfig,
        mut store: ParamStore,
        embedding: EmbeddingTable,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        let c = &config;
        let s = &mut store;
        let cnn = CnnBlock::new(s, "cnn", c.embed_dim, c.conv_window, c.filters, c.pool, c.cnn_out, rng);
        let summary_rnn = BiGru::new(s, "summary_gru", c.cnn_out, c.summary_hidden, rng);
        let attention = Attention::new(c.attention, s, "attention", summary_rnn.output_width(), rng);
        let projections = Modality::ALL
            .iter()
            .zip(c.modality_dims())
            .map(|(m, dim)| {
                let input = match c.behavior_timesteps {
                    BehaviorTimesteps::Modality => dim,
                    BehaviorTimesteps::Feature => 1,
                };
                Linear::new(s, &format!("proj_{}", m.short()), input, c.projection, true, rng)
            })
            .collect();
        let behavior_rnn = StackedBiGru::new(s, "behavior_gru", c.projection, &vec![c.behavior_hidden; c.behavior_layers], rng);
        let behavior_fc = Linear::new(s, "behavior_fc", behavior_rnn.output_width(), c.behavior_fc, true, rng);
        let mut width = summary_rnn.output_width().min(c.behavior_fc) * 2;
        let mut fusion = Vec::with_capacity(c.fusion.len());
        for (i, &w) in c.fusion.iter().enumerate() {
            fusion.push(Linear::new(s, &format!("fusion.{i}"), width, w, true, rng));
            width = w;
        }
        let output = Linear::new(s, "output", width, c.classes, true, rng);
        Ok(Self {
            config,
            store,
            embedding,
            cnn,
            summary_rnn,
            attention,
            projections,
            behavior_rnn,
            behavior_fc,
            fusion,
            output,
        })
    }

    /// Width of each branch after reconciliation.
    pub fn branch_width(&self) -> usize {
        self.summary_rnn.output_width().min(self.config.behavior_fc)
    }

    /// Trainable parameters in declaration order.
    pub fn params(&self) -> Vec<ParamId> {
        self.store.ids().filter(|&id| self.store.is_trainable(id)).collect()
    }

    pub fn bind(&self, g: &mut Graph, b: &mut dyn Binder) -> NetVars {
        NetVars {
            embedding: self.embedding.bind(g, b),
            cnn: self.cnn.bind(g, b),
            summary_rnn: self.summary_rnn.bind(g, b),
            attention: self.attention.bind(g, b),
            projections: self.projections.iter().map(|p| p.bind(g, b)).collect(),
            behavior_rnn: self.behavior_rnn.bind(g, b),
            behavior_fc: self.behavior_fc.bind(g, b),
            fusion: self.fusion.iter().map(|f| f.bind(g, b)).collect(),
            output: self.output.bind(g, b),
        }
    }

    pub fn bind_store(&self, g: &mut Graph) -> NetVars {
        self.bind(g, &mut StoreBinder(&self.store))
    }

    /// Token ids truncated to `n_max` and right-padded with the unknown-word
    /// row up to the CNN's minimum length.
    pub fn token_ids(&self, tokens: &[String]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("summary has no tokens".into()));
        }
        let mut ids = self.embedding.ids(&tokens[..tokens.len().min(self.config.n_max)]);
        let min = self.config.min_summary_len();
        if ids.len() < min {
            ids.resize(min, self.embedding.oov_id());
        }
        Ok(ids)
    }

    fn summary_branch(&self, g: &mut Graph, v: &NetVars, tokens: &[String]) -> Result<(Var, Var)> {
        let ids = self.token_ids(tokens)?;
        let x = v.embedding.forward(g, &self.store, &ids)?;
        let c = v.cnn.forward(g, x)?;
        let h = v.summary_rnn.forward(g, c)?;
        let att = v.attention.forward(g, h)?;
        Ok((att.pooled, att.weights))
    }

    fn behavior_steps(&self, g: &mut Graph, v: &NetVars, seq: &BehaviorSequence, ablation: &Ablation) -> Result<Var> {
        let dims = self.config.modality_dims();
        let p = self.config.projection;
        let mut steps = Vec::with_capacity(4);
        for (i, m) in Modality::ALL.into_iter().enumerate() {
            let values = &seq.steps[i];
            if values.len() != dims[i] {
                return Err(Error::InvalidArgument(format!(
                    "modality {} has width {}, model expects {}",
                    m.short(),
                    values.len(),
                    dims[i]
                )));
            }
            let rows = match self.config.behavior_timesteps {
                BehaviorTimesteps::Modality => 1,
                BehaviorTimesteps::Feature => dims[i],
            };
            if ablation.drops(m) {
                steps.push(g.constant(Tensor::zeros(&[rows, p])));
                continue;
            }
            let x = match self.config.behavior_timesteps {
                BehaviorTimesteps::Modality => Tensor::row(values.clone())?,
                BehaviorTimesteps::Feature => Tensor::matrix(dims[i], 1, values.clone())?,
            };
            let x = g.constant(x);
            steps.push(v.projections[i].forward(g, x)?);
        }
        Ok(g.concat(&steps, 0)?)
    }

    fn behavior_branch(&self, g: &mut Graph, v: &NetVars, seq: &BehaviorSequence, ablation: &Ablation) -> Result<Var> {
        let steps = self.behavior_steps(g, v, seq, ablation)?;
        let h = v.behavior_rnn.forward(g, steps)?;
        let t = g.value(h).shape()[0];
        let last = g.row(h, t - 1)?;
        let fc = v.behavior_fc.forward(g, last)?;
        Ok(g.relu(fc)?)
    }

    fn narrow(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let width = self.branch_width();
        if g.value(x).shape()[1] == width {
            Ok(x)
        } else {
            Ok(g.adaptive_maxpool_cols(x, width)?)
        }
    }

    /// Class probabilities `[1, 2]` for one user, plus intermediates.
    pub fn forward_trace(&self, g: &mut Graph, v: &NetVars, input: &UserInput, ablation: &Ablation) -> Result<ForwardTrace> {
        let width = self.branch_width();
        let (summary, attention_weights) = if ablation.drop_summary {
            (g.constant(Tensor::zeros(&[1, width])), None)
        } else {
            let (s, a) = self.summary_branch(g, v, &input.tokens)?;
            (self.narrow(g, s)?, Some(a))
        };
        let behavior = if ablation.drop_behavior {
            g.constant(Tensor::zeros(&[1, width]))
        } else {
            let b = self.behavior_branch(g, v, &input.behavior, ablation)?;
            self.narrow(g, b)?
        };
        let fused = g.concat(&[summary, behavior], 1)?;
        let mut x = fused;
        for layer in &v.fusion {
            let y = layer.forward(g, x)?;
            x = g.relu(y)?;
        }
        let logits = v.output.forward(g, x)?;
        let probs = g.softmax(logits, 1)?;
        Ok(ForwardTrace {
            summary,
            attention_weights,
            behavior,
            fused,
            probs,
        })
    }

    pub fn forward(&self, g: &mut Graph, v: &NetVars, input: &UserInput, ablation: &Ablation) -> Result<Var> {
        Ok(self.forward_trace(g, v, input, ablation)?.probs)
    }

    /// Mean cross-entropy of `inputs` against their labels.
    pub fn loss(&self, g: &mut Graph, v: &NetVars, inputs: &[&UserInput], ablation: &Ablation) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut probs = Vec::with_capacity(inputs.len());
        let mut target = vec![0.0; inputs.len() * 2];
        for (i, input) in inputs.iter().enumerate() {
            let label = input
                .label
                .ok_or_else(|| Error::Unlabeled(input.user_id.clone()))?;
            probs.push(self.forward(g, v, input, ablation)?);
            target[i * 2 + label.class_index()] = 1.0;
        }
        let p = if probs.len() == 1 { probs[0] } else { g.concat(&probs, 0)? };
        Ok(g.cross_entropy(p, &Tensor::matrix(inputs.len(), 2, target)?)?)
    }

    /// `(p_depressed, p_non_depressed)`.
    pub fn predict_proba(&self, input: &UserInput, ablation: &Ablation) -> Result<[f64; 2]> {
        let mut g = Graph::new();
        let v = self.bind_store(&mut g);
        let p = self.forward(&mut g, &v, input, ablation)?;
        let d = g.value(p).data();
        Ok([d[Label::Depressed.class_index()], d[Label::NonDepressed.class_index()]])
    }

    pub fn predict(&self, input: &UserInput, ablation: &Ablation, threshold: f64) -> Result<Prediction> {
        let [p_dep, _] = self.predict_proba(input, ablation)?;
        Ok(Prediction {
            label: decide(p_dep, threshold),
            score: p_dep,
        })
    }

    /// Writes parameters, the model config and the vocabulary into `dir`.
    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        save_checkpoint(dir, &self.store, self.config.seed, step)?;
        let write = |name: &str, json: String| {
            let path = dir.join(name);
            fs::write(&path, json + "\n").map_err(|e| Error::file(path, e))
        };
        write(MODEL_CONFIG_FILE, serde_json::to_string_pretty(&self.config)?)?;
        write(VOCAB_FILE, serde_json::to_string(&self.embedding.words)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::file(path, e))
        };
        let config: ModelConfig = serde_json::from_str(&read(MODEL_CONFIG_FILE)?)?;
        config.validate()?;
        let words: Vec<String> = serde_json::from_str(&read(VOCAB_FILE)?)?;
        let mut store = ParamStore::new();
        let embedding = EmbeddingTable::placeholder(&mut store, "embedding", words, config.embed_dim, config.train_embeddings);
        let mut rng = rng_for(config.seed, "model-init");
        let mut net = Self::assemble(config, store, embedding, &mut rng)?;
        load_checkpoint(dir, &mut net.store)?;
        Ok(net)
    }
}
