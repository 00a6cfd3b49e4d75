use super::{Graph, Result, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Worst disagreement between autodiff and central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub(crate) fn empty() -> Self {
        Self {
            max_rel_err: 0.0,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        }
    }

    pub(crate) fn observe(&mut self, param: usize, index: usize, analytic: f64, numeric: f64) {
        let err = rel_error(analytic, numeric);
        if err > self.max_rel_err || self.checked == 0 {
            self.max_rel_err = err;
            self.worst = (param, index);
            self.analytic = analytic;
            self.numeric = numeric;
        }
        self.checked += 1;
    }
}

/// `|a − n| / max(1, |a|, |n|)`
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the tape gradient of a scalar function against central
/// differences for every element of every parameter.
///
/// `f` receives a fresh graph and one leaf per parameter and must return the
/// scalar loss. It is evaluated once with gradients and `2 · numel` more times
/// on perturbed copies.
pub fn grad_check<F>(mut f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v).expect("leaf")).collect();

    let mut eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|p| g.constant(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport::empty();
    for p in 0..params.len() {
        for i in 0..params[p].numel() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;
            report.observe(p, i, analytic[p].data()[i], (plus - minus) / (2.0 * eps));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let report = grad_check(|g, v| g.mul(v[0], v[0]), &[x], DEFAULT_EPS).unwrap();
        assert!((report.analytic - 6.0).abs() < 1e-12);
        assert!((report.numeric - 6.0).abs() < 1e-9);
    }

    #[test]
    fn matmul_sigmoid_chain() {
        let a = Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, 0.2, 0.5, -1.4]).unwrap();
        let b = Tensor::matrix(3, 2, vec![-0.4, 0.9, 1.3, -0.2, 0.6, 0.8]).unwrap();
        let report = grad_check(
            |g, v| {
                let m = g.matmul(v[0], v[1])?;
                let s = g.sigmoid(m)?;
                g.sum(s, None)
            },
            &[a, b],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn sum_of_matmul_gradient_is_row_sums_of_b() {
        // d/dA sum(A·B) = 1·Bᵀ, i.e. every row of the gradient equals the row sums of B.
        let a = Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let b = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 2.0, 0.5]).unwrap();
        let mut g = Graph::new();
        let va = g.leaf(a.clone(), true);
        let vb = g.constant(b.clone());
        let m = g.matmul(va, vb).unwrap();
        let s = g.sum(m, None).unwrap();
        g.backward(s).unwrap();
        let grad = g.grad(va).unwrap();
        let row_sums = [0.6, 1.5];
        for i in 0..2 {
            for j in 0..2 {
                assert!((grad.get2(i, j) - row_sums[j]).abs() < 1e-12);
            }
        }
        let report = grad_check(
            |g, v| {
                let m = g.matmul(v[0], v[1])?;
                g.sum(m, None)
            },
            &[a, b],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6);
    }
}
