use rand::Rng;

use crate::params::{Ctx, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, Var};

/// One LSTM layer. Gate rows are packed in the order input, forget, output,
/// candidate. A layer with `in_dim == 0` is driven by its bias alone, which
/// is what an all-zero input sequence reduces to.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w: Option<ParamId>,
    pub u: ParamId,
    pub b: ParamId,
    in_dim: usize,
    hidden: usize,
}

impl LstmLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = (in_dim > 0)
            .then(|| store.add_uniform(format!("{name}.w"), group, &[4 * hidden, in_dim], in_dim, rng));
        let u = store.add_uniform(format!("{name}.u"), group, &[4 * hidden, hidden], hidden, rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let b = store.add(format!("{name}.b"), group, Tensor::from_parts(vec![4 * hidden], bias));
        Self {
            w,
            u,
            b,
            in_dim,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Input projections `xs·Wᵀ + b` for every row of `xs[N×in]`.
    fn project(&self, ctx: &mut Ctx, xs: Var) -> Result<Var> {
        let b = ctx.p(self.b);
        match self.w {
            Some(w) => {
                let w = ctx.p(w);
                let z = ctx.matmul_nt(xs, w)?;
                ctx.add_row(z, b)
            }
            None => {
                let n = ctx.shape(xs)[0];
                let zeros = ctx.constant(Tensor::zeros(&[n, 4 * self.hidden]));
                ctx.add_row(zeros, b)
            }
        }
    }

    /// Single recurrent step on `x_t[in]` from `state = [h, c]`.
    pub fn step(&self, ctx: &mut Ctx, x_t: Var, state: Var) -> Result<Var> {
        let x = ctx.reshape(x_t, &[1, self.in_dim])?;
        let gx = self.project(ctx, x)?;
        let u = ctx.p(self.u);
        ctx.lstm_cell(gx, 0, state, u)
    }

    /// Runs over `xs[N×in]`; the returned states are indexed by time step.
    pub fn run(&self, ctx: &mut Ctx, xs: Var, init: Var, reverse: bool) -> Result<Vec<Var>> {
        let n = ctx.shape(xs)[0];
        let gx = self.project(ctx, xs)?;
        let u = ctx.p(self.u);
        let mut states = vec![init; n];
        let mut state = init;
        let order: Box<dyn Iterator<Item = usize>> =
            if reverse { Box::new((0..n).rev()) } else { Box::new(0..n) };
        for t in order {
            state = ctx.lstm_cell(gx, t, state, u)?;
            states[t] = state;
        }
        Ok(states)
    }
}

pub fn zero_state(ctx: &mut Ctx, hidden: usize) -> Var {
    ctx.constant(Tensor::zeros(&[2 * hidden]))
}

/// Splits a packed `[h, c]` state.
pub fn split_state(ctx: &mut Ctx, state: Var) -> Result<(Var, Var)> {
    let h = ctx.shape(state)[0] / 2;
    Ok((ctx.narrow(state, 0, h)?, ctx.narrow(state, h, h)?))
}

/// Hidden outputs `[N×H]` of a run.
pub fn hidden_sequence(ctx: &mut Ctx, states: &[Var]) -> Result<Var> {
    let h = ctx.shape(states[0])[0] / 2;
    ctx.stack_rows(states, 0, h)
}

pub struct LstmOutput {
    /// Top-layer hidden states `[N×H]`.
    pub outputs: Var,
    /// Final packed state of each layer, bottom first.
    pub finals: Vec<Var>,
}

/// Stacked unidirectional LSTM.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let input = if l == 0 { in_dim } else { hidden };
                LstmLayer::new(store, &format!("{name}.l{l}"), group, input, hidden, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    /// `init` gives a packed initial state per layer; zeros when `None`.
    pub fn forward(&self, ctx: &mut Ctx, xs: Var, init: Option<&[Var]>) -> Result<LstmOutput> {
        let mut input = xs;
        let mut finals = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let s0 = match init {
                Some(states) => states[l],
                None => zero_state(ctx, layer.hidden),
            };
            let states = layer.run(ctx, input, s0, false)?;
            finals.push(*states.last().expect("non-empty sequence"));
            input = hidden_sequence(ctx, &states)?;
        }
        Ok(LstmOutput {
            outputs: input,
            finals,
        })
    }
}

/// Stacked bidirectional LSTM; each layer's output is `[forward ‖ backward]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward_layers: Vec<LstmLayer>,
    pub backward_layers: Vec<LstmLayer>,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut forward_layers = Vec::new();
        let mut backward_layers = Vec::new();
        for l in 0..num_layers {
            let input = if l == 0 { in_dim } else { 2 * hidden };
            forward_layers.push(LstmLayer::new(store, &format!("{name}.l{l}.fwd"), group, input, hidden, rng));
            backward_layers.push(LstmLayer::new(store, &format!("{name}.l{l}.bwd"), group, input, hidden, rng));
        }
        Self {
            forward_layers,
            backward_layers,
        }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.forward_layers[0].hidden
    }

    pub fn forward(&self, ctx: &mut Ctx, xs: Var) -> Result<Var> {
        if ctx.shape(xs)[0] == 0 {
            return Err(crate::tensor::TensorError::Dimension {
                op: "bilstm",
                detail: "empty sequence".into(),
            });
        }
        let mut input = xs;
        for (fl, bl) in self.forward_layers.iter().zip(&self.backward_layers) {
            let s0 = zero_state(ctx, fl.hidden);
            let fwd = fl.run(ctx, input, s0, false)?;
            let bwd = bl.run(ctx, input, s0, true)?;
            let hf = hidden_sequence(ctx, &fwd)?;
            let hb = hidden_sequence(ctx, &bwd)?;
            input = ctx.concat(&[hf, hb])?;
        }
        Ok(input)
    }
}
