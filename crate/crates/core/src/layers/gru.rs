//! Gated recurrent units.
//!
//! Update convention: `h' = (1 - z) * h + z * h~`, so `z = 1` replaces the
//! state and `z = 0` carries it over. It is computed as `h + z * (h~ - h)`.

use depnet_tensor::{glorot_uniform, Graph, ParamId, ParamStore, Result, Tensor, TensorError, Var};
use rand::Rng;

use super::{zero_bias, Binder, Linear, LinearVars};

/// One direction of a GRU. Input weights are `[in, H]`, recurrent weights
/// `[H, H]`, biases `[1, H]`.
#[derive(Debug, Clone)]
pub struct Gru {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
    pub hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = |gate: &str, store: &mut ParamStore, rng: &mut dyn rand::RngCore| {
            (
                store.add(format!("{name}.w_{gate}"), glorot_uniform(&[input, hidden], input, hidden, rng)),
                store.add(format!("{name}.u_{gate}"), glorot_uniform(&[hidden, hidden], hidden, hidden, rng)),
                store.add(format!("{name}.b_{gate}"), zero_bias(hidden)),
            )
        };
        let (w_z, u_z, b_z) = w("z", store, rng);
        let (w_r, u_r, b_r) = w("r", store, rng);
        let (w_h, u_h, b_h) = w("h", store, rng);
        Self {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            input,
            hidden,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h,
        ]
    }

    pub fn bind(&self, g: &mut Graph, b: &mut dyn Binder) -> GruVars {
        GruVars {
            w_z: b.bind(g, self.w_z),
            u_z: b.bind(g, self.u_z),
            b_z: b.bind(g, self.b_z),
            w_r: b.bind(g, self.w_r),
            u_r: b.bind(g, self.u_r),
            b_r: b.bind(g, self.b_r),
            w_h: b.bind(g, self.w_h),
            u_h: b.bind(g, self.u_h),
            b_h: b.bind(g, self.b_h),
            hidden: self.hidden,
        }
    }
}

fn empty_sequence() -> TensorError {
    TensorError::Shape {
        op: "gru",
        detail: "empty input sequence".into(),
    }
}

impl GruVars {
    fn input_part(&self, g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    /// Gate arithmetic given the input projections `x W + b` of one step.
    fn step(&self, g: &mut Graph, xz: Var, xr: Var, xh: Var, h: Var) -> Result<Var> {
        let hu = g.matmul(h, self.u_z)?;
        let z = g.add(xz, hu)?;
        let z = g.sigmoid(z)?;
        let hu = g.matmul(h, self.u_r)?;
        let r = g.add(xr, hu)?;
        let r = g.sigmoid(r)?;
        let rh = g.mul(r, h)?;
        let rhu = g.matmul(rh, self.u_h)?;
        let cand = g.add(xh, rhu)?;
        let cand = g.tanh(cand)?;
        let delta = g.sub(cand, h)?;
        let zd = g.mul(z, delta)?;
        g.add(h, zd)
    }

    /// One update from `x` (`[1, in]`) and `h` (`[1, H]`).
    pub fn cell(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let xz = self.input_part(g, x, self.w_z, self.b_z)?;
        let xr = self.input_part(g, x, self.w_r, self.b_r)?;
        let xh = self.input_part(g, x, self.w_h, self.b_h)?;
        self.step(g, xz, xr, xh, h)
    }

    /// Runs over the rows of `xs` (`[T, in]`) from a zero state, last row
    /// first when `reverse` is set. Returns `[T, H]` with row `t` the state
    /// after consuming input row `t`.
    pub fn run(&self, g: &mut Graph, xs: Var, reverse: bool) -> Result<Var> {
        let t = g.value(xs).shape()[0];
        if g.value(xs).shape().len() != 2 || t == 0 {
            return Err(empty_sequence());
        }
        let xz = self.input_part(g, xs, self.w_z, self.b_z)?;
        let xr = self.input_part(g, xs, self.w_r, self.b_r)?;
        let xh = self.input_part(g, xs, self.w_h, self.b_h)?;
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut states = vec![h; t];
        let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        for i in order {
            let (z, r, c) = (g.row(xz, i)?, g.row(xr, i)?, g.row(xh, i)?);
            h = self.step(g, z, r, c, h)?;
            states[i] = h;
        }
        if t == 1 {
            Ok(states[0])
        } else {
            g.concat(&states, 0)
        }
    }
}

/// Forward and backward GRUs; row `t` of the output is
/// `forward_t ++ backward_t`.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
}

#[derive(Debug, Clone, Copy)]
pub struct BiGruVars {
    pub forward: GruVars,
    pub backward: GruVars,
}

impl BiGru {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            forward: Gru::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: Gru::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_width(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }

    pub fn bind(&self, g: &mut Graph, b: &mut dyn Binder) -> BiGruVars {
        BiGruVars {
            forward: self.forward.bind(g, b),
            backward: self.backward.bind(g, b),
        }
    }
}

impl BiGruVars {
    pub fn forward(&self, g: &mut Graph, xs: Var) -> Result<Var> {
        let f = self.forward.run(g, xs, false)?;
        let b = self.backward.run(g, xs, true)?;
        g.concat(&[f, b], 1)
    }
}

/// BiGRU layers applied in sequence. From the second layer on, the layer
/// input is added back to its output, through a bias-free projection when
/// the widths differ.
#[derive(Debug, Clone)]
pub struct StackedBiGru {
    pub layers: Vec<BiGru>,
    pub residual: Vec<Option<Linear>>,
}

#[derive(Debug, Clone)]
pub struct StackedBiGruVars {
    layers: Vec<BiGruVars>,
    residual: Vec<Option<LinearVars>>,
}

impl StackedBiGru {
    /// One layer per entry of `hidden`.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut residual = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (l, &h) in hidden.iter().enumerate() {
            let layer = BiGru::new(store, &format!("{name}.{l}"), width, h, rng);
            let out = layer.output_width();
            residual.push(
                (l > 0 && width != out).then(|| Linear::new(store, &format!("{name}.{l}.res"), width, out, false, rng)),
            );
            layers.push(layer);
            width = out;
        }
        Self { layers, residual }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, BiGru::output_width)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        for (layer, res) in self.layers.iter().zip(&self.residual) {
            p.extend(layer.params());
            if let Some(r) = res {
                p.extend(r.params());
            }
        }
        p
    }

    pub fn bind(&self, g: &mut Graph, b: &mut dyn Binder) -> StackedBiGruVars {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut residual = Vec::with_capacity(self.layers.len());
        for (layer, res) in self.layers.iter().zip(&self.residual) {
            layers.push(layer.bind(g, b));
            residual.push(res.as_ref().map(|r| r.bind(g, b)));
        }
        StackedBiGruVars { layers, residual }
    }
}

impl StackedBiGruVars {
    pub fn forward(&self, g: &mut Graph, xs: Var) -> Result<Var> {
        let mut x = xs;
        for (l, (layer, res)) in self.layers.iter().zip(&self.residual).enumerate() {
            let y = layer.forward(g, x)?;
            x = if l == 0 {
                y
            } else {
                let skip = match res {
                    Some(r) => r.forward(g, x)?,
                    None => x,
                };
                g.add(y, skip)?
            };
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::super::StoreBinder;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape)).unwrap();
        }
    }

    fn seq(t: usize, d: usize) -> Tensor {
        let data = (0..t * d).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();
        Tensor::matrix(t, d, data).unwrap()
    }

    #[test]
    fn zero_params_halve_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 3, 2, &mut rng);
        zero_all(&mut store, &gru.params());
        let mut g = Graph::new();
        let v = gru.bind(&mut g, &mut StoreBinder(&store));
        let x = g.constant(Tensor::row(vec![1.0, -2.0, 3.0]).unwrap());
        let h = g.constant(Tensor::row(vec![0.8, -0.4]).unwrap());
        let h1 = v.cell(&mut g, x, h).unwrap();
        assert_eq!(g.value(h1).data(), [0.4, -0.2]);
        let zero = g.constant(Tensor::zeros(&[1, 2]));
        let h2 = v.cell(&mut g, x, zero).unwrap();
        assert_eq!(g.value(h2).data(), [0.0, 0.0]);
    }

    #[test]
    fn run_matches_repeated_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 3, 4, &mut rng);
        let mut g = Graph::new();
        let v = gru.bind(&mut g, &mut StoreBinder(&store));
        let xs = g.constant(seq(5, 3));
        let states = v.run(&mut g, xs, false).unwrap();
        let mut h = g.constant(Tensor::zeros(&[1, 4]));
        for t in 0..5 {
            let x = g.row(xs, t).unwrap();
            h = v.cell(&mut g, x, h).unwrap();
            let got = g.value(states).row_slice(t).to_vec();
            for (a, b) in got.iter().zip(g.value(h).data()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reversed_input_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 3, 4, &mut rng);
        let bi = BiGru {
            forward: gru.clone(),
            backward: gru,
        };
        let mut g = Graph::new();
        let v = bi.bind(&mut g, &mut StoreBinder(&store));
        let x = seq(6, 3);
        let mut rev = Vec::new();
        for t in (0..6).rev() {
            rev.extend_from_slice(x.row_slice(t));
        }
        let xv = g.constant(x);
        let rv = g.constant(Tensor::matrix(6, 3, rev).unwrap());
        let out = v.forward(&mut g, xv).unwrap();
        let out_rev = v.forward(&mut g, rv).unwrap();
        for t in 0..6 {
            let back = &g.value(out).row_slice(t)[4..];
            let fwd_on_rev = &g.value(out_rev).row_slice(5 - t)[..4];
            for (a, b) in back.iter().zip(fwd_on_rev) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_layer_stack_is_bigru_and_rejects_empty() {
        let mut s1 = ParamStore::new();
        let stack = StackedBiGru::new(&mut s1, "s", 3, &[4], &mut ChaCha8Rng::seed_from_u64(7));
        let mut s2 = ParamStore::new();
        let bi = BiGru::new(&mut s2, "s.0", 3, 4, &mut ChaCha8Rng::seed_from_u64(7));
        let mut g = Graph::new();
        let sv = stack.bind(&mut g, &mut StoreBinder(&s1));
        let bv = bi.bind(&mut g, &mut StoreBinder(&s2));
        let x = g.constant(seq(4, 3));
        let a = sv.forward(&mut g, x).unwrap();
        let b = bv.forward(&mut g, x).unwrap();
        assert_eq!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn zeroed_second_layer_passes_first_through() {
        let mut store = ParamStore::new();
        let stack = StackedBiGru::new(&mut store, "s", 3, &[4, 4], &mut ChaCha8Rng::seed_from_u64(3));
        assert!(stack.residual.iter().all(Option::is_none));
        zero_all(&mut store, &stack.layers[1].params());
        let mut g = Graph::new();
        let sv = stack.bind(&mut g, &mut StoreBinder(&store));
        let first = stack.layers[0].bind(&mut g, &mut StoreBinder(&store));
        let x = g.constant(seq(4, 3));
        let a = sv.forward(&mut g, x).unwrap();
        let b = first.forward(&mut g, x).unwrap();
        assert_eq!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn mismatched_widths_get_projection() {
        let mut store = ParamStore::new();
        let stack = StackedBiGru::new(&mut store, "s", 3, &[4, 2], &mut ChaCha8Rng::seed_from_u64(3));
        assert!(stack.residual[1].is_some());
        let mut g = Graph::new();
        let sv = stack.bind(&mut g, &mut StoreBinder(&store));
        let x = g.constant(seq(3, 3));
        let y = sv.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), [3, 4]);
    }
}
