//! Dense-normal-equation Levenberg–Marquardt over a manifold state.
//!
//! Problems supply residuals and a row-sparse Jacobian with respect to a local
//! increment, plus a retraction that applies an increment to the state. The
//! normal equations are accumulated from the sparse rows, so problems with a
//! few hundred parameters and thousands of residuals stay cheap.

use nalgebra::{DMatrix, DVector};

/// Row-compressed Jacobian: row `i` owns `cols[start[i]..start[i + 1]]`.
#[derive(Debug, Clone, Default)]
pub struct SparseJacobian {
    pub ncols: usize,
    start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseJacobian {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            start: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        for (c, v) in entries {
            debug_assert!(c < self.ncols);
            self.cols.push(c);
            self.vals.push(v);
        }
        self.start.push(self.cols.len());
    }

    pub fn nrows(&self) -> usize {
        self.start.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.start[i]..self.start[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for i in 0..self.nrows() {
            for (c, v) in self.row(i) {
                m[(i, c)] += v;
            }
        }
        m
    }

    /// `(JᵀJ, Jᵀr)`.
    pub fn normal_equations(&self, residuals: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.ncols;
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtr = DVector::zeros(n);
        for (i, r) in residuals.iter().enumerate() {
            let range = self.start[i]..self.start[i + 1];
            let cols = &self.cols[range.clone()];
            let vals = &self.vals[range];
            for (a, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
                jtr[ca] += va * r;
                for (&cb, &vb) in cols[a..].iter().zip(&vals[a..]) {
                    jtj[(ca, cb)] += va * vb;
                }
            }
        }
        // Only one triangle was filled per entry pair; symmetrize.
        for a in 0..n {
            for b in (a + 1)..n {
                let s = jtj[(a, b)] + jtj[(b, a)];
                jtj[(a, b)] = s;
                jtj[(b, a)] = s;
            }
        }
        (jtj, jtr)
    }
}

pub trait LeastSquaresProblem {
    type State: Clone;

    fn parameter_count(&self) -> usize;

    fn residuals(&self, state: &Self::State) -> Vec<f64>;

    fn jacobian(&self, state: &Self::State) -> SparseJacobian;

    /// Applies a local increment of length `parameter_count()`.
    fn retract(&self, state: &Self::State, delta: &[f64]) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub relative_cost_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Stop once the root-mean-square residual falls below this value; the
    /// residuals are then at rounding level and no step can decrease them.
    pub rms_floor: f64,
    pub initial_damping: f64,
    pub min_damping: f64,
    pub max_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_cost_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            rms_floor: 1e-10,
            initial_damping: 1e-3,
            min_damping: 1e-9,
            max_damping: 1e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    RelativeCostChange,
    SmallGradient,
    ResidualFloor,
    MaxIterations,
    /// No damping value decreased the cost after at least one accepted step.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    /// Cost `½‖r‖²` at the start and after every accepted step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct LmOutcome<S> {
    pub state: S,
    pub report: LmReport,
}

/// Returned when the very first iteration cannot decrease the cost for any
/// damping value in `[min_damping, max_damping]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoDecrease {
    pub cost: f64,
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn solve_damped(jtj: &DMatrix<f64>, g: &DVector<f64>, damping: f64) -> Option<DVector<f64>> {
    let mut a = jtj.clone();
    for i in 0..a.nrows() {
        let d = jtj[(i, i)].max(1e-12);
        a[(i, i)] += damping * d;
    }
    let step = a.cholesky()?.solve(&(-g));
    step.iter().all(|v| v.is_finite()).then_some(step)
}

pub fn minimize<P: LeastSquaresProblem>(
    problem: &P,
    initial: P::State,
    options: &LmOptions,
) -> Result<LmOutcome<P::State>, NoDecrease> {
    let mut state = initial;
    let mut residuals = problem.residuals(&state);
    let mut cost = cost_of(&residuals);
    let nres = residuals.len().max(1) as f64;
    let mut history = vec![cost];
    let mut damping = options.initial_damping;

    let finish = |state, history, iterations, termination| {
        Ok(LmOutcome {
            state,
            report: LmReport {
                cost_history: history,
                iterations,
                termination,
            },
        })
    };

    if (2.0 * cost / nres).sqrt() < options.rms_floor {
        return finish(state, history, 0, Termination::ResidualFloor);
    }

    for iteration in 0..options.max_iterations {
        let jac = problem.jacobian(&state);
        let (jtj, g) = jac.normal_equations(&residuals);
        if g.amax() < options.gradient_tolerance {
            return finish(state, history, iteration, Termination::SmallGradient);
        }

        // The first iteration sweeps the whole damping range, upward from the
        // initial value and then downward, before giving up.
        let schedule: Vec<f64> = if iteration == 0 {
            let mut up = Vec::new();
            let mut d = damping;
            while d <= options.max_damping * (1.0 + 1e-12) {
                up.push(d);
                d *= 10.0;
            }
            let mut d = damping / 10.0;
            while d >= options.min_damping * (1.0 - 1e-12) {
                up.push(d);
                d /= 10.0;
            }
            up
        } else {
            Vec::new()
        };

        let mut accepted = None;
        let mut attempt = 0usize;
        loop {
            let trial = if iteration == 0 {
                match schedule.get(attempt) {
                    Some(&d) => d,
                    None => break,
                }
            } else {
                if damping > options.max_damping * (1.0 + 1e-12) {
                    break;
                }
                damping
            };
            attempt += 1;
            if let Some(step) = solve_damped(&jtj, &g, trial) {
                let candidate = problem.retract(&state, step.as_slice());
                let cand_res = problem.residuals(&candidate);
                let cand_cost = cost_of(&cand_res);
                if cand_cost.is_finite() && cand_cost < cost {
                    damping = (trial / 10.0).max(options.min_damping);
                    accepted = Some((candidate, cand_res, cand_cost));
                    break;
                }
            }
            if iteration > 0 {
                damping *= 10.0;
            }
        }

        let Some((candidate, cand_res, cand_cost)) = accepted else {
            if iteration == 0 {
                return Err(NoDecrease { cost });
            }
            return finish(state, history, iteration, Termination::Stalled);
        };

        let relative = (cost - cand_cost) / cost;
        state = candidate;
        residuals = cand_res;
        cost = cand_cost;
        history.push(cost);

        if (2.0 * cost / nres).sqrt() < options.rms_floor {
            return finish(state, history, iteration + 1, Termination::ResidualFloor);
        }
        if relative < options.relative_cost_tolerance {
            return finish(state, history, iteration + 1, Termination::RelativeCostChange);
        }
    }
    finish(
        state,
        history,
        options.max_iterations,
        Termination::MaxIterations,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as residuals `(1 - x, 10 (y - x²))`.
    struct Rosenbrock;

    impl LeastSquaresProblem for Rosenbrock {
        type State = [f64; 2];

        fn parameter_count(&self) -> usize {
            2
        }

        fn residuals(&self, s: &[f64; 2]) -> Vec<f64> {
            vec![1.0 - s[0], 10.0 * (s[1] - s[0] * s[0])]
        }

        fn jacobian(&self, s: &[f64; 2]) -> SparseJacobian {
            let mut j = SparseJacobian::new(2);
            j.push_row([(0, -1.0)]);
            j.push_row([(0, -20.0 * s[0]), (1, 10.0)]);
            j
        }

        fn retract(&self, s: &[f64; 2], d: &[f64]) -> [f64; 2] {
            [s[0] + d[0], s[1] + d[1]]
        }
    }

    /// Residual that no finite step can reduce: the Jacobian points the
    /// wrong way.
    struct Adversarial;

    impl LeastSquaresProblem for Adversarial {
        type State = f64;
        fn parameter_count(&self) -> usize {
            1
        }
        fn residuals(&self, s: &f64) -> Vec<f64> {
            vec![1.0 + s.abs()]
        }
        fn jacobian(&self, _: &f64) -> SparseJacobian {
            let mut j = SparseJacobian::new(1);
            j.push_row([(0, 1.0)]);
            j
        }
        fn retract(&self, s: &f64, d: &[f64]) -> f64 {
            s + d[0]
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let out = minimize(&Rosenbrock, [-1.2, 1.0], &LmOptions::default()).unwrap();
        assert!((out.state[0] - 1.0).abs() < 1e-8, "{:?}", out.state);
        assert!((out.state[1] - 1.0).abs() < 1e-8);
        for w in out.report.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let out = minimize(&Rosenbrock, [1.0, 1.0], &LmOptions::default()).unwrap();
        assert_eq!(out.state, [1.0, 1.0]);
        assert_eq!(out.report.termination, Termination::ResidualFloor);
    }

    #[test]
    fn reports_no_decrease() {
        let err = minimize(&Adversarial, 0.0, &LmOptions::default()).unwrap_err();
        assert_eq!(err.cost, 0.5);
    }

    #[test]
    fn sparse_normal_equations_match_dense() {
        let mut j = SparseJacobian::new(3);
        j.push_row([(0, 1.0), (2, -2.0)]);
        j.push_row([(1, 3.0)]);
        j.push_row([(0, 0.5), (1, 0.25), (2, 4.0)]);
        let r = [1.0, -1.0, 2.0];
        let (jtj, jtr) = j.normal_equations(&r);
        let d = j.to_dense();
        let rv = DVector::from_row_slice(&r);
        assert!((jtj - d.transpose() * &d).amax() < 1e-15);
        assert!((jtr - d.transpose() * rv).amax() < 1e-15);
    }
}
