use rand::Rng;

use crate::params::{Ctx, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Result, Var};

/// Affine map `x·Wᵀ + b` with `W[out×in]`, `b[out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), group, &[out_dim, in_dim], in_dim, rng);
        let bias = store.add_uniform(format!("{name}.bias"), group, &[out_dim], in_dim, rng);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Accepts `[N×in]` or a single `[in]` vector.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.weight), ctx.p(self.bias));
        if ctx.shape(x).len() == 1 {
            let x2 = ctx.reshape(x, &[1, self.in_dim])?;
            let y = ctx.matmul_nt(x2, w)?;
            let y = ctx.add_row(y, b)?;
            return ctx.reshape(y, &[self.out_dim]);
        }
        let y = ctx.matmul_nt(x, w)?;
        ctx.add_row(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::GroupSet;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", ParamGroup::Summarizer, 3, 2, &mut rng);
        for p in store.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let mut ctx = Ctx::new(&store, GroupSet::ALL);
        let x = ctx.constant(Tensor::vector(vec![1.0, -2.0, 5.0]).unwrap());
        let y = lin.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn hand_computed_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", ParamGroup::Summarizer, 2, 1, &mut rng);
        store.get_mut(lin.weight).value = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        store.get_mut(lin.bias).value = Tensor::vector(vec![1.0]).unwrap();
        let mut ctx = Ctx::new(&store, GroupSet::ALL);
        let x = ctx.constant(Tensor::vector(vec![2.0, 3.0]).unwrap());
        let y = lin.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(y).data(), &[6.0]);
    }

    #[test]
    fn compression_layer_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "compress", ParamGroup::Summarizer, 1024, 500, &mut rng);
        let mut ctx = Ctx::new(&store, GroupSet::NONE);
        let x = ctx.constant(Tensor::zeros(&[3, 1024]));
        let y = lin.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.shape(y), &[3, 500]);
    }
}
