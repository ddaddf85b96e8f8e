use std::cell::{Cell, RefCell};

use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;

use crate::error::{invalid, Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.05;
const TOLERANCE: f64 = 1e-6;
const STAGE_TOLERANCE: f64 = 1e-3;
const STAGE_CAP: usize = 10;
const ANNEAL: f64 = 0.5;
const LBFGS_MEMORY: usize = 20;
/// Largest cost matrix kept in memory; bigger problems recompute costs.
const MAX_CACHED_COSTS: usize = 1 << 24;
/// Terms this far below the maximum do not change a sum of exponentials.
const EXP_CUTOFF: f64 = 40.0;

/// Outcome of [`sinkhorn_w2`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornResult {
    /// `sqrt(<P, C>)` under the regularized plan.
    pub value: f64,
    pub converged: bool,
    /// Iterations at the final `epsilon`.
    pub iterations: usize,
    /// L1 marginal violation of the returned plan.
    pub marginal_error: f64,
}

struct Costs<'a> {
    a: &'a [f64],
    b: &'a [f64],
    dim: usize,
    n: usize,
    m: usize,
    cached: Option<Vec<f64>>,
}

impl<'a> Costs<'a> {
    fn new(a: &'a [f64], b: &'a [f64], dim: usize) -> Self {
        let (n, m) = (a.len() / dim, b.len() / dim);
        let mut c = Costs { a, b, dim, n, m, cached: None };
        if n * m <= MAX_CACHED_COSTS {
            c.cached = Some((0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| c.raw(i, j)).collect());
        }
        c
    }

    #[inline]
    fn raw(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        let (x, y) = (&self.a[i * d..(i + 1) * d], &self.b[j * d..(j + 1) * d]);
        x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum()
    }

    /// Costs from point `i` of the first cloud, into `out`.
    #[inline]
    fn row(&self, i: usize, out: &mut [f64]) {
        match &self.cached {
            Some(c) => out.copy_from_slice(&c[i * self.m..(i + 1) * self.m]),
            None => out.iter_mut().enumerate().for_each(|(j, o)| *o = self.raw(i, j)),
        }
    }
}

/// Entropy-regularized W2 between two uniformly weighted point clouds.
///
/// Solves the entropic transport problem with squared Euclidean cost in the
/// log domain. Sinkhorn iterations with the regularization annealed
/// geometrically from the cost scale warm-start the dual potentials; at the
/// final `epsilon` the smooth semi-dual is maximized with L-BFGS, which
/// shares Sinkhorn's fixed point but does not stall on well-separated
/// clusters. Stops once the L1 marginal error is below `1e-6` or after
/// `max_iter` iterations, flagging non-convergence.
///
/// The computation is ordered canonically in its arguments, so the result
/// is exactly symmetric.
pub fn sinkhorn_w2(a: &[f64], b: &[f64], dim: usize, epsilon: f64, max_iter: usize) -> Result<SinkhornResult> {
    if dim == 0 || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(invalid("dim", "sample buffers are not a multiple of the dimension"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    let swap = match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Equal => a.iter().zip(b).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Greater),
        o => o.is_gt(),
    };
    let (a, b) = if swap { (b, a) } else { (a, b) };
    solve(&Costs::new(a, b, dim), epsilon, max_iter)
}

fn solve(costs: &Costs, epsilon: f64, max_iter: usize) -> Result<SinkhornResult> {
    let (n, m) = (costs.n, costs.m);
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut col = vec![0.0; m];
    let mut row = vec![0.0; m];

    let scale = (0..n.min(64))
        .flat_map(|i| (0..m.min(64)).map(move |j| (i, j)))
        .map(|(i, j)| costs.raw(i, j))
        .fold(0.0, f64::max);
    let mut eps = scale.max(epsilon);
    loop {
        let last = eps <= epsilon;
        for _ in 0..STAGE_CAP.min(max_iter) {
            c_transform_cols(costs, &f, eps, log_a, &mut row, &mut col, &mut g);
            let err = c_transform_rows(costs, &g, eps, log_b, &mut row, &mut f);
            if err < if last { TOLERANCE } else { STAGE_TOLERANCE } {
                break;
            }
        }
        if last {
            break;
        }
        eps = (eps * ANNEAL).max(epsilon);
    }

    let dual = SemiDual { costs, eps: epsilon, log_a, log_b, last: RefCell::new(None), iterations: Cell::new(0), best: RefCell::new(None) };
    let mut iterations = 0;
    if dual.cached(&g, |e| e.marginal_error) >= TOLERANCE {
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), LBFGS_MEMORY)
            .with_tolerance_grad(0.0)
            .and_then(|s| s.with_tolerance_cost(0.0))
            .expect("tolerances are nonnegative");
        // The objective reports convergence as an error to stop the run;
        // any other error (a failed line search) also ends it. Either way
        // the best point seen is kept.
        iterations = match Executor::new(&dual, solver).configure(|s| s.param(g).max_iters(max_iter as u64)).run() {
            Ok(res) => res.state.iter as usize,
            Err(_) => dual.iterations.get(),
        };
    }
    let (marginal_error, transport) = dual.best.into_inner().expect("evaluated at least once");
    Ok(SinkhornResult {
        value: transport.max(0.0).sqrt(),
        converged: marginal_error < TOLERANCE,
        iterations,
        marginal_error,
    })
}

/// `g_j = -eps LSE_i(log_a + (f_i - C_ij) / eps)`.
fn c_transform_cols(costs: &Costs, f: &[f64], eps: f64, log_a: f64, row: &mut [f64], col_max: &mut [f64], g: &mut [f64]) {
    let inv = 1.0 / eps;
    col_max.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
    for (i, fi) in f.iter().enumerate() {
        costs.row(i, row);
        for (c, cij) in col_max.iter_mut().zip(row.iter()) {
            *c = c.max(fi - cij);
        }
    }
    g.iter_mut().for_each(|v| *v = 0.0);
    for (i, fi) in f.iter().enumerate() {
        costs.row(i, row);
        for ((s, mx), cij) in g.iter_mut().zip(col_max.iter()).zip(row.iter()) {
            let v = (fi - cij - mx) * inv;
            if v > -EXP_CUTOFF {
                *s += v.exp();
            }
        }
    }
    for (s, mx) in g.iter_mut().zip(col_max.iter()) {
        *s = -eps * log_a - mx - eps * s.ln();
    }
}

/// `f_i = -eps LSE_j(log_b + (g_j - C_ij) / eps)`; returns the L1 row
/// marginal error of the plan at the previous `f`.
fn c_transform_rows(costs: &Costs, g: &[f64], eps: f64, log_b: f64, row: &mut [f64], f: &mut [f64]) -> f64 {
    let mut err = 0.0;
    for (i, fi) in f.iter_mut().enumerate() {
        let new = row_potential(costs, i, g, eps, log_b, row).0;
        err += ((*fi - new) / eps).exp_m1().abs();
        *fi = new;
    }
    err / costs.n as f64
}

/// Row potential `f_i` and, in `row`, the scaled exponents
/// `(g_j - C_ij - max) / eps`; also returns `ln sum_j exp(row_j)`.
#[inline]
fn row_potential(costs: &Costs, i: usize, g: &[f64], eps: f64, log_b: f64, row: &mut [f64]) -> (f64, f64) {
    costs.row(i, row);
    let mut mx = f64::NEG_INFINITY;
    for (r, gj) in row.iter_mut().zip(g) {
        *r = gj - *r;
        mx = mx.max(*r);
    }
    let inv = 1.0 / eps;
    let mut s = 0.0;
    for r in row.iter_mut() {
        *r = (*r - mx) * inv;
        if *r > -EXP_CUTOFF {
            s += r.exp();
        }
    }
    let ln_s = s.ln();
    (-eps * log_b - mx - eps * ln_s, ln_s)
}

#[derive(Debug, thiserror::Error)]
#[error("marginals matched")]
struct Converged;

struct Evaluation {
    g: Vec<f64>,
    /// Negated semi-dual objective.
    cost: f64,
    gradient: Vec<f64>,
    marginal_error: f64,
    transport_cost: f64,
}

/// The semi-dual `g -> sum_j b_j g_j + sum_i a_i f_i(g)` with `f` the exact
/// row c-transform; its gradient is the column marginal violation.
struct SemiDual<'a> {
    costs: &'a Costs<'a>,
    eps: f64,
    log_a: f64,
    log_b: f64,
    last: RefCell<Option<Evaluation>>,
    /// Distinct points evaluated.
    iterations: Cell<usize>,
    /// `(marginal error, transport cost)` of the best point so far.
    best: RefCell<Option<(f64, f64)>>,
}

impl SemiDual<'_> {
    fn evaluate(&self, g: &[f64]) -> Evaluation {
        let m = self.costs.m;
        let b = self.log_b.exp();
        let mut row = vec![0.0; m];
        let mut colsum = vec![0.0; m];
        let (mut objective, mut transport) = (0.0, 0.0);
        let mut cost_row = vec![0.0; m];
        for i in 0..self.costs.n {
            let (fi, ln_s) = row_potential(self.costs, i, g, self.eps, self.log_b, &mut row);
            objective += fi;
            self.costs.row(i, &mut cost_row);
            for ((c, r), cij) in colsum.iter_mut().zip(&row).zip(&cost_row) {
                if *r > -EXP_CUTOFF {
                    let p = (r - ln_s).exp();
                    *c += p;
                    transport += p * cij;
                }
            }
        }
        let a = self.log_a.exp();
        objective = objective * a + g.iter().sum::<f64>() * b;
        transport *= a;
        let gradient: Vec<f64> = colsum.iter().map(|c| c * a - b).collect();
        let eval = Evaluation {
            g: g.to_vec(),
            cost: -objective,
            marginal_error: gradient.iter().map(|v| v.abs()).sum(),
            gradient,
            transport_cost: transport,
        };
        let mut best = self.best.borrow_mut();
        if best.is_none_or(|(err, _)| eval.marginal_error < err) {
            *best = Some((eval.marginal_error, eval.transport_cost));
        }
        eval
    }

    /// Like [`Self::cached`] but fails once the marginals are matched.
    fn checked<T>(&self, g: &[f64], pick: impl Fn(&Evaluation) -> T) -> Result<T, argmin::core::Error> {
        let (value, err) = self.cached(g, |e| (pick(e), e.marginal_error));
        if err < TOLERANCE {
            return Err(Converged.into());
        }
        Ok(value)
    }

    fn cached<T>(&self, g: &[f64], pick: impl Fn(&Evaluation) -> T) -> T {
        let mut last = self.last.borrow_mut();
        if last.as_ref().is_none_or(|e| e.g != g) {
            self.iterations.set(self.iterations.get() + 1);
            *last = Some(self.evaluate(g));
        }
        pick(last.as_ref().expect("just filled"))
    }
}

impl CostFunction for &SemiDual<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, g: &Self::Param) -> Result<f64, argmin::core::Error> {
        self.checked(g, |e| e.cost)
    }
}

impl Gradient for &SemiDual<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, g: &Self::Param) -> Result<Vec<f64>, argmin::core::Error> {
        self.checked(g, |e| e.gradient.clone())
    }
}
