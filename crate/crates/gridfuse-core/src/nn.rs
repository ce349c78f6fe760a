//! Named parameter storage and small GELU multilayer perceptrons.
//!
//! Parameters live in a [`ParamStore`] keyed by stable insertion order, so a
//! checkpoint, an optimizer state, and a tape session all line up by index.
//! Each loss evaluation opens a [`Session`] that registers every parameter as
//! a tape leaf; gradients come back as one tensor per parameter.

use rand::Rng;

use crate::error::Result;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Flat, ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, t: Tensor) {
        assert_eq!(self.tensors[id.0].shape(), t.shape());
        self.tensors[id.0] = t;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

/// One forward pass: a tape plus the leaf var of every parameter.
pub struct Session {
    pub tape: Tape,
    vars: Vec<Var>,
}

impl Session {
    pub fn open(store: &ParamStore) -> Session {
        let mut tape = Tape::new();
        let vars = store
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        Session { tape, vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Per-parameter gradients, aligned with the store.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| grads.get(&self.tape, v))
            .collect()
    }
}

/// How to initialize the output layer of an MLP.
pub enum HeadInit {
    /// Zero weights and zero bias: the net starts as the zero function.
    Zero,
    /// Zero weights, fixed bias: the net starts as a constant.
    Const(Vec<f64>),
    /// Same variance-scaled init as hidden layers.
    Random,
    /// Random init shrunk by a factor, for heads that should start small
    /// but not dead.
    Scaled(f64),
}

/// A GELU MLP: affine -> GELU chains with a final affine (no activation on
/// the output layer). Layers are `(weight, bias)` parameter ids.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    pub in_dim: usize,
    pub out_dim: usize,
}

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::matrix(rows, cols, data)
}

impl Mlp {
    /// `dims` = [in, hidden..., out].
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        head: HeadInit,
        rng: &mut impl Rng,
    ) -> Mlp {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let mut layers = Vec::new();
        for l in 0..dims.len() - 1 {
            let (din, dout) = (dims[l], dims[l + 1]);
            let last = l == dims.len() - 2;
            let w = if last {
                match &head {
                    HeadInit::Zero | HeadInit::Const(_) => Tensor::zeros(&[dout, din]),
                    HeadInit::Random => xavier(dout, din, rng),
                    HeadInit::Scaled(s) => {
                        let mut t = xavier(dout, din, rng);
                        for v in t.data_mut() {
                            *v *= s;
                        }
                        t
                    }
                }
            } else {
                xavier(dout, din, rng)
            };
            let b = if last {
                match &head {
                    HeadInit::Const(c) => {
                        assert_eq!(c.len(), dout);
                        Tensor::vector(c.clone())
                    }
                    _ => Tensor::zeros(&[dout]),
                }
            } else {
                Tensor::zeros(&[dout])
            };
            let wid = store.add(format!("{prefix}.w{l}"), w);
            let bid = store.add(format!("{prefix}.b{l}"), b);
            layers.push((wid, bid));
        }
        Mlp {
            layers,
            in_dim: dims[0],
            out_dim: *dims.last().unwrap(),
        }
    }

    /// Forward pass recorded on the session's tape.
    pub fn forward(&self, sess: &mut Session, input: Var) -> Var {
        assert_eq!(
            sess.tape.value(input).len(),
            self.in_dim,
            "mlp_forward: input length must match first layer"
        );
        let n = self.layers.len();
        let mut h = input;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = sess.var(w);
            let bv = sess.var(b);
            let z = sess.tape.matvec(wv, h);
            let z = sess.tape.add(z, bv);
            h = if l + 1 < n { sess.tape.gelu(z) } else { z };
        }
        h
    }

    /// Forward pass without recording, reading weights from the store.
    pub fn forward_plain(&self, store: &ParamStore, input: &Tensor) -> Tensor {
        assert_eq!(input.len(), self.in_dim);
        let n = self.layers.len();
        let mut h = input.clone();
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let z = store.get(w).matvec(&h).add(store.get(b));
            h = if l + 1 < n {
                crate::tape::gelu_plain(&z)
            } else {
                z
            };
        }
        h
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Sum per-parameter gradient lists elementwise, in order.
pub fn accumulate_grads(acc: &mut Vec<Tensor>, g: &[Tensor]) {
    if acc.is_empty() {
        acc.extend_from_slice(g);
    } else {
        assert_eq!(acc.len(), g.len());
        for (a, b) in acc.iter_mut().zip(g) {
            *a = a.add(b);
        }
    }
}

/// Convenience for a whole-store forward/backward returning loss and grads.
pub fn loss_and_grads<F>(store: &ParamStore, f: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Session) -> Result<Var>,
{
    let mut sess = Session::open(store);
    let loss = f(&mut sess)?;
    let grads = sess.tape.backward(loss)?;
    let value = sess.tape.value(loss).scalar_value();
    Ok((value, sess.grads(&grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_affine_layer_is_identity_like() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "t", &[1, 1], HeadInit::Random, &mut rng);
        // Overwrite with W=[[1]], b=[0].
        let ids: Vec<_> = mlp.param_ids().collect();
        store.set(ids[0], Tensor::matrix(1, 1, vec![1.0]));
        store.set(ids[1], Tensor::vector(vec![0.0]));
        let y = mlp.forward_plain(&store, &Tensor::vector(vec![2.0]));
        assert_eq!(y.data(), &[2.0]);
    }

    #[test]
    fn two_layer_net_matches_scalar_reference() {
        // Independent scalar re-implementation of GELU∘affine.
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mlp = Mlp::new(&mut store, "t", &[2, 3, 1], HeadInit::Random, &mut rng);
        let x = [0.3, -1.2];
        let y = mlp.forward_plain(&store, &Tensor::vector(x.to_vec()));

        let ids: Vec<_> = mlp.param_ids().collect();
        let (w0, b0) = (store.get(ids[0]), store.get(ids[1]));
        let (w1, b1) = (store.get(ids[2]), store.get(ids[3]));
        let gelu = |v: f64| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
        let mut hidden = [0.0; 3];
        for i in 0..3 {
            let z = w0.get(i, 0) * x[0] + w0.get(i, 1) * x[1] + b0.data()[i];
            hidden[i] = gelu(z);
        }
        let mut out = b1.data()[0];
        for i in 0..3 {
            out += w1.get(0, i) * hidden[i];
        }
        assert!((y.data()[0] - out).abs() < 1e-12);
    }

    #[test]
    fn zero_head_outputs_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&mut store, "t", &[3, 8, 4], HeadInit::Zero, &mut rng);
        let y = mlp.forward_plain(&store, &Tensor::vector(vec![1.0, -2.0, 0.5]));
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&mut store, "t", &[2, 5, 5, 3], HeadInit::Random, &mut rng);
        let x = Tensor::vector(vec![0.7, -0.2]);
        let plain = mlp.forward_plain(&store, &x);
        let mut sess = Session::open(&store);
        let xv = sess.tape.leaf(x);
        let yv = mlp.forward(&mut sess, xv);
        assert_eq!(sess.tape.value(yv), &plain);
    }
}
