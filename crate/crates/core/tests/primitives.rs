use proptest::prelude::*;
use sumgan_core::tensor::{grad_check, Graph, Tensor, Var, DEFAULT_EPS};

const TOL: f64 = 1e-5;

macro_rules! ok {
    ($e:expr) => {{
        let err = $e;
        prop_assert!(err < TOL, "relative error {}", err);
    }};
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

/// Values kept away from the kink at zero so finite differences stay one-sided-free.
fn off_kink(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.01f64..2.0, any::<bool>()).prop_map(|(v, neg)| if neg { -v } else { v }), n)
}

fn mat(r: usize, c: usize, v: Vec<f64>) -> Tensor {
    Tensor::matrix(r, c, v).unwrap()
}

fn check(f: impl FnMut(&mut Graph, &[Var]) -> sumgan_core::tensor::Result<Var>, params: &[Tensor]) -> f64 {
    grad_check(f, params, DEFAULT_EPS).unwrap().max_rel_err
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted(g: &mut Graph, y: Var) -> sumgan_core::tensor::Result<Var> {
    let n = g.value(y).numel();
    let shape = g.shape(y).to_vec();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect()).unwrap();
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p, None)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_and_transposes(a in values(6), b in values(12)) {
        let (a, b) = (mat(2, 3, a), mat(3, 4, b));
        ok!(check(|g, v| { let y = g.matmul(v[0], v[1])?; weighted(g, y) }, &[a.clone(), b.clone()]));
        let bt = mat(4, 3, b.data().to_vec());
        ok!(check(|g, v| { let y = g.matmul_nt(v[0], v[1])?; weighted(g, y) }, &[a.clone(), bt]));
        ok!(check(|g, v| { let y = g.transpose(v[0])?; weighted(g, y) }, &[a]));
    }

    #[test]
    fn smooth_elementwise(x in values(6), y in values(6)) {
        let (x, y) = (mat(2, 3, x), mat(2, 3, y));
        let both = [x.clone(), y.clone()];
        ok!(check(|g, v| { let z = g.add(v[0], v[1])?; weighted(g, z) }, &both));
        ok!(check(|g, v| { let z = g.sub(v[0], v[1])?; weighted(g, z) }, &both));
        ok!(check(|g, v| { let z = g.mul(v[0], v[1])?; weighted(g, z) }, &both));
        let one = [x];
        ok!(check(|g, v| { let z = g.neg(v[0])?; weighted(g, z) }, &one));
        ok!(check(|g, v| { let z = g.scale(v[0], -1.7)?; weighted(g, z) }, &one));
        ok!(check(|g, v| { let z = g.sigmoid(v[0])?; weighted(g, z) }, &one));
        ok!(check(|g, v| { let z = g.tanh(v[0])?; weighted(g, z) }, &one));
        ok!(check(|g, v| { let z = g.exp(v[0])?; weighted(g, z) }, &one));
        ok!(check(|g, v| {
            let sq = g.mul(v[0], v[0])?;
            let half = g.constant(Tensor::scalar(0.5));
            let pos = g.add(sq, half)?;
            let z = g.log(pos)?;
            weighted(g, z)
        }, &one));
    }

    #[test]
    fn kinked_elementwise(x in off_kink(6)) {
        let x = [mat(2, 3, x)];
        ok!(check(|g, v| { let z = g.relu(v[0])?; weighted(g, z) }, &x));
        ok!(check(|g, v| { let z = g.abs(v[0])?; weighted(g, z) }, &x));
        ok!(check(|g, v| { let z = g.clamp(v[0], -0.005, 0.005)?; weighted(g, z) }, &x));
    }

    #[test]
    fn broadcasting_and_rows(x in values(6), b in values(3), s in values(2)) {
        let (x, b, s) = (mat(2, 3, x), Tensor::vector(b).unwrap(), Tensor::vector(s).unwrap());
        ok!(check(|g, v| { let z = g.add_row(v[0], v[1])?; weighted(g, z) }, &[x.clone(), b]));
        ok!(check(|g, v| { let z = g.mul_rows(v[0], v[1])?; weighted(g, z) }, &[x.clone(), s]));
        ok!(check(|g, v| {
            let r = g.row(v[0], 1)?;
            let n = g.narrow(v[0], 1, 2)?;
            let c = g.concat(&[r, r])?;
            let a = weighted(g, c)?;
            let b = weighted(g, n)?;
            g.add(a, b)
        }, &[x]));
    }

    #[test]
    fn reductions_and_softmax(x in values(12)) {
        let x = [mat(3, 4, x)];
        for axis in [None, Some(0), Some(1)] {
            ok!(check(|g, v| { let z = g.sum(v[0], axis)?; weighted(g, z) }, &x));
            ok!(check(|g, v| { let z = g.mean(v[0], axis)?; weighted(g, z) }, &x));
        }
        for axis in [0, 1] {
            ok!(check(|g, v| { let z = g.softmax(v[0], axis)?; weighted(g, z) }, &x));
        }
    }

    #[test]
    fn max_away_from_ties(x in values(12)) {
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-3));
        let x = [mat(3, 4, x)];
        for axis in [None, Some(0), Some(1)] {
            ok!(check(|g, v| { let z = g.max(v[0], axis)?; weighted(g, z) }, &x));
        }
    }

    #[test]
    fn layer_norm_and_lstm_cell(x in values(8), gam in values(4), bet in values(4), gx in values(32), st in values(8), u in values(64)) {
        let ln = [mat(2, 4, x), Tensor::vector(gam).unwrap(), Tensor::vector(bet).unwrap()];
        ok!(check(|g, v| { let z = g.layer_norm(v[0], v[1], v[2], 1e-5)?; weighted(g, z) }, &ln));
        let cell = [mat(2, 16, gx), Tensor::vector(st).unwrap(), mat(16, 4, u)];
        ok!(check(|g, v| { let z = g.lstm_cell(v[0], 1, v[1], v[2])?; weighted(g, z) }, &cell));
    }

    #[test]
    fn softmax_rows_sum_to_one(x in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let v = g.constant(mat(3, 4, x));
        let s = g.softmax(v, 1).unwrap();
        for r in 0..3 {
            let total: f64 = g.value(s).row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
