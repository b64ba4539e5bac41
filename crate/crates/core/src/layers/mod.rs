//! Neural building blocks.
//!
//! A layer owns [`ParamId`]s into a shared [`ParamStore`]. Running it is a
//! two-step affair: `bind` records the parameters on a [`Graph`] through a
//! [`Binder`], and the returned `*Vars` value builds the forward pass. Keeping
//! the two apart lets one binding serve a whole mini-batch, and lets gradient
//! checks substitute their own leaves for the stored parameters.

mod embedding;
mod gru;

use depnet_tensor::{glorot_uniform, Graph, ParamId, ParamStore, Result, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use embedding::{read_word2vec, EmbeddingTable, EmbeddingVars, WordVectors};
pub use gru::{BiGru, BiGruVars, Gru, GruVars, StackedBiGru, StackedBiGruVars};

/// Supplies the graph variable for a parameter.
pub trait Binder {
    fn bind(&mut self, g: &mut Graph, id: ParamId) -> Var;
}

/// Records parameters straight from a store.
pub struct StoreBinder<'a>(pub &'a ParamStore);

impl Binder for StoreBinder<'_> {
    fn bind(&mut self, g: &mut Graph, id: ParamId) -> Var {
        g.param(self.0, id)
    }
}

/// Hands out caller-created variables: `ids[i]` maps to `vars[i]`. Panics on
/// an id that is not listed.
pub struct VarBinder<'a> {
    pub ids: &'a [ParamId],
    pub vars: &'a [Var],
}

impl Binder for VarBinder<'_> {
    fn bind(&mut self, _: &mut Graph, id: ParamId) -> Var {
        let i = self.ids.iter().position(|&p| p == id).expect("parameter id not listed");
        self.vars[i]
    }
}

fn zero_bias(width: usize) -> Tensor {
    Tensor::zeros(&[1, width])
}

/// `x W + b` on `[m, in]` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Option<Var>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot_uniform(&[input, output], input, output, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), zero_bias(output)));
        Self { w, b, input, output }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }

    pub fn bind(&self, g: &mut Graph, b: &mut dyn Binder) -> LinearVars {
        LinearVars {
            w: b.bind(g, self.w),
            b: self.b.map(|id| b.bind(g, id)),
        }
    }
}

impl LinearVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.w)?;
        match self.b {
            Some(b) => g.add(y, b),
            None => Ok(y),
        }
    }
}

/// Convolution over time, ReLU, non-overlapping max pooling and a dense
/// projection: `[N, E] -> [floor((N - window + 1) / pool), out]`.
#[derive(Debug, Clone)]
pub struct CnnBlock {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub fc: Linear,
    pub window: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct CnnVars {
    kernel: Var,
    bias: Var,
    fc: LinearVars,
    window: usize,
    pool: usize,
}

impl CnnBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        embed_dim: usize,
        window: usize,
        filters: usize,
        pool: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let kernel = store.add(
            format!("{name}.conv.w"),
            glorot_uniform(&[window, embed_dim, filters], window * embed_dim, filters, rng),
        );
        let bias = store.add(format!("{name}.conv.b"), zero_bias(filters));
        let fc = Linear::new(store, &format!("{name}.fc"), filters, output, true, rng);
        Self {
            kernel,
            bias,
            fc,
            window,
            pool,
        }
    }

    /// Shortest input that yields at least one output row.
    pub fn min_len(&self) -> usize {
        self.window + self.pool - 1
    }

    pub fn output_len(&self, n: usize) -> usize {
        n.checked_sub(self.window - 1).map_or(0, |l| l / self.pool)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.kernel, self.bias];
        p.extend(self.fc.params());
        p
    }

    pub fn bind(&self, g: &mut Graph, b: &mut dyn Binder) -> CnnVars {
        CnnVars {
            kernel: b.bind(g, self.kernel),
            bias: b.bind(g, self.bias),
            fc: self.fc.bind(g, b),
            window: self.window,
            pool: self.pool,
        }
    }
}

impl CnnVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.value(x).shape()[0];
        if n < self.window + self.pool - 1 {
            return Err(TensorError::Shape {
                op: "cnn_block",
                detail: format!(
                    "sequence of {n} rows is shorter than window {} + pool {} - 1",
                    self.window, self.pool
                ),
            });
        }
        let c = g.conv1d(x, self.kernel)?;
        let c = g.add(c, self.bias)?;
        let c = g.relu(c)?;
        let p = g.maxpool1d(c, self.pool)?;
        self.fc.forward(g, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// `u = tanh(H)`, softmax over time separately for every dimension.
    #[default]
    PerDimension,
    /// One scalar score per step from a learned context vector.
    Additive,
}

/// Attention pooling `[T, D] -> [1, D]`.
#[derive(Debug, Clone)]
pub enum Attention {
    PerDimension,
    Additive { proj: Linear, context: ParamId },
}

#[derive(Debug, Clone, Copy)]
pub enum AttentionVars {
    PerDimension,
    Additive { proj: LinearVars, context: Var },
}

/// Pooled vector and the attention weights that produced it.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub pooled: Var,
    /// `[T, D]` for per-dimension attention, `[T, 1]` for additive.
    pub weights: Var,
}

impl Attention {
    pub fn new(kind: AttentionKind, store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        match kind {
            AttentionKind::PerDimension => Attention::PerDimension,
            AttentionKind::Additive => {
                let proj = Linear::new(store, &format!("{name}.proj"), dim, dim, true, rng);
                let context = store.add(format!("{name}.context"), glorot_uniform(&[dim, 1], dim, 1, rng));
                Attention::Additive { proj, context }
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Attention::PerDimension => vec![],
            Attention::Additive { proj, context } => {
                let mut p = proj.params();
                p.push(*context);
                p
            }
        }
    }

    pub fn bind(&self, g: &mut Graph, b: &mut dyn Binder) -> AttentionVars {
        match self {
            Attention::PerDimension => AttentionVars::PerDimension,
            Attention::Additive { proj, context } => AttentionVars::Additive {
                proj: proj.bind(g, b),
                context: b.bind(g, *context),
            },
        }
    }
}

impl AttentionVars {
    pub fn forward(&self, g: &mut Graph, h: Var) -> Result<Attended> {
        match *self {
            AttentionVars::PerDimension => {
                let u = g.tanh(h)?;
                let a = g.softmax(u, 0)?;
                let weighted = g.mul(a, h)?;
                Ok(Attended {
                    pooled: g.sum_axis(weighted, 0)?,
                    weights: a,
                })
            }
            AttentionVars::Additive { proj, context } => {
                let t = g.value(h).shape()[0];
                let u = proj.forward(g, h)?;
                let u = g.tanh(u)?;
                let scores = g.matmul(u, context)?;
                let a = g.softmax(scores, 0)?;
                // [T, 1] and [1, T] share a layout
                let a_row = g.reshape(a, &[1, t])?;
                Ok(Attended {
                    pooled: g.matmul(a_row, h)?,
                    weights: a,
                })
            }
        }
    }
}
