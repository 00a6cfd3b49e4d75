use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Ctx, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

/// Multi-head scaled dot-product attention with per-head `[d_h×d]`
/// projections and a bias-free `[d×d]` output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    heads: usize,
    dim: usize,
    q: Vec<ParamId>,
    k: Vec<ParamId>,
    v: Vec<ParamId>,
    out: ParamId,
}

pub struct AttentionOutput {
    pub output: Var,
    /// Row-stochastic `[N_q×N_k]` weights, one per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {dim} is not divisible by {heads} heads"
            )));
        }
        let dh = dim / heads;
        let mut proj = |kind: &str, store: &mut ParamStore| {
            (0..heads)
                .map(|h| store.add_uniform(format!("{name}.h{h}.{kind}"), group, &[dh, dim], dim, rng))
                .collect::<Vec<_>>()
        };
        let q = proj("q", store);
        let k = proj("k", store);
        let v = proj("v", store);
        let out = store.add_uniform(format!("{name}.out"), group, &[dim, dim], dim, rng);
        Ok(Self {
            heads,
            dim,
            q,
            k,
            v,
            out,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Queries from `query[N_q×d]`, keys and values from `memory[N_k×d]`.
    pub fn forward(&self, ctx: &mut Ctx, query: Var, memory: Var) -> Result<AttentionOutput> {
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        let mut head_out = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (wq, wk, wv) = (ctx.p(self.q[h]), ctx.p(self.k[h]), ctx.p(self.v[h]));
            let q = ctx.matmul_nt(query, wq)?;
            let k = ctx.matmul_nt(memory, wk)?;
            let v = ctx.matmul_nt(memory, wv)?;
            let scores = ctx.matmul_nt(q, k)?;
            let scores = ctx.scale(scores, scale)?;
            let a = ctx.softmax(scores, 1)?;
            head_out.push(ctx.matmul(a, v)?);
            weights.push(a);
        }
        let cat = ctx.concat(&head_out)?;
        let wo = ctx.p(self.out);
        let output = ctx.matmul_nt(cat, wo)?;
        Ok(AttentionOutput { output, weights })
    }

    pub fn self_attention(&self, ctx: &mut Ctx, x: Var) -> Result<AttentionOutput> {
        self.forward(ctx, x, x)
    }
}

/// Stacks per-head weight matrices into a `[heads×N_q×N_k]` tensor.
pub fn stack_weights(ctx: &Ctx, weights: &[Var]) -> Tensor {
    let shape = ctx.shape(weights[0]).to_vec();
    let data: Vec<f64> = weights.iter().flat_map(|w| ctx.value(*w).data().to_vec()).collect();
    Tensor::from_parts(vec![weights.len(), shape[0], shape[1]], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::GroupSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, heads: usize) -> (ParamStore, MultiHeadAttention) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let att = MultiHeadAttention::new(&mut store, "att", ParamGroup::Summarizer, dim, heads, &mut rng).unwrap();
        (store, att)
    }

    #[test]
    fn indivisible_width_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let r = MultiHeadAttention::new(&mut store, "att", ParamGroup::Summarizer, 6, 4, &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn single_frame_weight_is_one() {
        let (store, att) = setup(8, 4);
        let mut ctx = Ctx::new(&store, GroupSet::NONE);
        let x = ctx.constant(Tensor::matrix(1, 8, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap());
        let out = att.self_attention(&mut ctx, x).unwrap();
        let w = stack_weights(&ctx, &out.weights);
        assert_eq!(w.shape(), &[4, 1, 1]);
        assert!(w.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_rows_attend_uniformly() {
        let (store, att) = setup(8, 2);
        let mut ctx = Ctx::new(&store, GroupSet::NONE);
        let row: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let x = ctx.constant(Tensor::from_rows(&vec![row; 5]).unwrap());
        let out = att.self_attention(&mut ctx, x).unwrap();
        let w = stack_weights(&ctx, &out.weights);
        for v in w.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let (store, att) = setup(8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let perm = [3, 0, 4, 1, 2];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let mut ctx = Ctx::new(&store, GroupSet::NONE);
        let a = ctx.constant(Tensor::from_rows(&rows).unwrap());
        let b = ctx.constant(Tensor::from_rows(&permuted).unwrap());
        let ya = att.self_attention(&mut ctx, a).unwrap().output;
        let yb = att.self_attention(&mut ctx, b).unwrap().output;
        let (ya, yb) = (ctx.value(ya), ctx.value(yb));
        for (r, &src) in perm.iter().enumerate() {
            for j in 0..8 {
                assert!((yb.get2(r, j) - ya.get2(src, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weight_rows_sum_to_one() {
        let (store, att) = setup(12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut ctx = Ctx::new(&store, GroupSet::NONE);
        let x = ctx.constant(
            Tensor::matrix(7, 12, (0..84).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap(),
        );
        let out = att.self_attention(&mut ctx, x).unwrap();
        for w in &out.weights {
            let w = ctx.value(*w);
            for r in 0..7 {
                let s: f64 = w.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-10);
                assert!(w.row(r).iter().all(|&v| v > 0.0));
            }
        }
    }
}
