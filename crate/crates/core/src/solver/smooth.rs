//! Smooth constrained solver: augmented-Lagrangian outer loop with a
//! bound-projected L-BFGS inner loop.
//!
//! Problems expose their objective, equality and inequality constraints
//! (`g(z) <= 0` convention) through [`SmoothProblem`]. Gradients are supplied
//! by the problem as one weighted sum, which lets trajectory problems run a
//! single adjoint sweep per gradient instead of one Jacobian row per
//! constraint.

use crate::error::Error;
use crate::solver::{SolveReport, SolveStatus, SolveTolerances};
use crate::Result;

/// A smooth optimization problem with box bounds on the variables.
pub trait SmoothProblem {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Lower/upper bound of variable `i` (may be infinite).
    fn bound(&self, i: usize) -> (f64, f64);

    /// Evaluates the objective and writes all constraint values.
    fn eval(&self, z: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> f64;

    /// Writes the gradient of
    /// `w_obj * f(z) + sum_i w_eq[i] * c_i(z) + sum_j w_ineq[j] * g_j(z)`.
    fn grad_weighted(&self, z: &[f64], w_obj: f64, w_eq: &[f64], w_ineq: &[f64], grad: &mut [f64]);
}

fn clamp_to_bounds(p: &dyn SmoothProblem, z: &mut [f64]) {
    for i in 0..z.len() {
        let (lo, hi) = p.bound(i);
        z[i] = z[i].clamp(lo, hi);
    }
}

fn max_violation(eq: &[f64], ineq: &[f64]) -> f64 {
    let e = eq.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let g = ineq.iter().fold(0.0f64, |m, c| m.max(*c));
    e.max(g)
}

/// Infinity norm of the projected gradient `z - P(z - g)`.
fn projected_gradient_norm(p: &dyn SmoothProblem, z: &[f64], grad: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..z.len() {
        let (lo, hi) = p.bound(i);
        let stepped = (z[i] - grad[i]).clamp(lo, hi);
        worst = worst.max((z[i] - stepped).abs());
    }
    worst
}

struct LbfgsMemory {
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    rho: Vec<f64>,
    cap: usize,
}

impl LbfgsMemory {
    fn new(cap: usize) -> Self {
        LbfgsMemory {
            s: Vec::new(),
            y: Vec::new(),
            rho: Vec::new(),
            cap,
        }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sn: f64 = s.iter().map(|a| a * a).sum::<f64>().sqrt();
        let yn: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if sy <= 1e-12 * sn * yn || !sy.is_finite() {
            return;
        }
        if self.s.len() == self.cap {
            self.s.remove(0);
            self.y.remove(0);
            self.rho.remove(0);
        }
        self.rho.push(1.0 / sy);
        self.s.push(s);
        self.y.push(y);
    }

    /// Two-loop recursion; `g` is consumed as the seed direction.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s.len();
        if k == 0 {
            return q;
        }
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dotv(&self.s[i], &q);
            axpy(-alpha[i], &self.y[i], &mut q);
        }
        let last = k - 1;
        let yy = dotv(&self.y[last], &self.y[last]);
        if yy > 0.0 {
            let gamma = 1.0 / (self.rho[last] * yy);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let beta = self.rho[i] * dotv(&self.y[i], &q);
            axpy(alpha[i] - beta, &self.s[i], &mut q);
        }
        q
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

struct AlState {
    lam: Vec<f64>,
    nu: Vec<f64>,
    mu: f64,
}

impl AlState {
    /// AL merit value from raw objective and constraint values.
    fn merit(&self, f: f64, eq: &[f64], ineq: &[f64]) -> f64 {
        let mut m = f;
        for (i, c) in eq.iter().enumerate() {
            m += self.lam[i] * c + 0.5 * self.mu * c * c;
        }
        for (j, g) in ineq.iter().enumerate() {
            let t = (self.nu[j] + self.mu * g).max(0.0);
            m += (t * t - self.nu[j] * self.nu[j]) / (2.0 * self.mu);
        }
        m
    }

    fn weights(&self, eq: &[f64], ineq: &[f64], w_eq: &mut [f64], w_ineq: &mut [f64]) {
        for i in 0..eq.len() {
            w_eq[i] = self.lam[i] + self.mu * eq[i];
        }
        for j in 0..ineq.len() {
            w_ineq[j] = (self.nu[j] + self.mu * ineq[j]).max(0.0);
        }
    }
}

/// Solves the problem from `start` (clamped to bounds).
///
/// Feasible-monotone: if the start satisfies every constraint within the
/// feasibility tolerance, the returned point does too and its objective is
/// not worse. The solver keeps the best feasible iterate it has seen and
/// falls back to it when the final iterate would break that promise.
pub fn solve_nlp(
    p: &dyn SmoothProblem,
    start: &[f64],
    tol: &SolveTolerances,
) -> Result<SolveReport> {
    let n = p.num_vars();
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            what: "nlp start",
            expected: n,
            got: start.len(),
        });
    }
    let (me, mi) = (p.num_eq(), p.num_ineq());
    let mut z = start.to_vec();
    clamp_to_bounds(p, &mut z);

    let mut eq = vec![0.0; me];
    let mut ineq = vec![0.0; mi];
    let mut w_eq = vec![0.0; me];
    let mut w_ineq = vec![0.0; mi];
    let mut grad = vec![0.0; n];

    let mut al = AlState {
        lam: vec![0.0; me],
        nu: vec![0.0; mi],
        mu: tol.penalty_init,
    };

    let mut best_feasible: Option<(f64, Vec<f64>)> = None;
    let consider = |f: f64, eqv: &[f64], ineqv: &[f64], z: &[f64],
                        best: &mut Option<(f64, Vec<f64>)>| {
        if max_violation(eqv, ineqv) <= tol.feas && f.is_finite() {
            match best {
                Some((bf, _)) if *bf <= f => {}
                _ => *best = Some((f, z.to_vec())),
            }
        }
    };

    let f0 = p.eval(&z, &mut eq, &mut ineq);
    if !f0.is_finite() {
        return Err(Error::NumericalDomain {
            constraint: usize::MAX,
            detail: "objective not finite at start".into(),
        });
    }
    if let Some(bad) = eq.iter().chain(ineq.iter()).position(|v| !v.is_finite()) {
        return Err(Error::NumericalDomain {
            constraint: bad,
            detail: "constraint not finite at start".into(),
        });
    }
    consider(f0, &eq, &ineq, &z, &mut best_feasible);

    let mut total_iters = 0usize;
    let mut prev_violation = f64::INFINITY;

    for _outer in 0..tol.max_outer {
        // ---- inner: projected L-BFGS on the AL merit ----
        let mut mem = LbfgsMemory::new(8);
        let mut f = p.eval(&z, &mut eq, &mut ineq);
        let mut merit = al.merit(f, &eq, &ineq);
        al.weights(&eq, &ineq, &mut w_eq, &mut w_ineq);
        p.grad_weighted(&z, 1.0, &w_eq, &w_ineq, &mut grad);

        let inner_tol = (tol.stat * 0.1).max(1.0 / al.mu);
        let mut z_trial = vec![0.0; n];
        let mut eq_t = vec![0.0; me];
        let mut ineq_t = vec![0.0; mi];

        for _inner in 0..tol.max_inner {
            total_iters += 1;
            if projected_gradient_norm(p, &z, &grad) <= inner_tol {
                break;
            }

            // Zero out gradient components that push into an active bound,
            // then take an L-BFGS step on the rest.
            let mut gmask = grad.clone();
            for i in 0..n {
                let (lo, hi) = p.bound(i);
                if (z[i] - lo <= 1e-12 && gmask[i] > 0.0)
                    || (hi - z[i] <= 1e-12 && gmask[i] < 0.0)
                {
                    gmask[i] = 0.0;
                }
            }
            let mut dir = mem.direction(&gmask);
            // descent direction for the merit; fall back to steepest descent
            if dotv(&dir, &gmask) <= 0.0 {
                dir = gmask.clone();
                mem.clear();
            }

            let mut alpha = 1.0;
            let mut improved = false;
            for _bt in 0..40 {
                for i in 0..n {
                    let (lo, hi) = p.bound(i);
                    z_trial[i] = (z[i] - alpha * dir[i]).clamp(lo, hi);
                }
                let ft = p.eval(&z_trial, &mut eq_t, &mut ineq_t);
                let mt = al.merit(ft, &eq_t, &ineq_t);
                if mt.is_finite() {
                    consider(ft, &eq_t, &ineq_t, &z_trial, &mut best_feasible);
                    let pred: f64 = (0..n).map(|i| grad[i] * (z_trial[i] - z[i])).sum();
                    let accept = if pred < 0.0 {
                        mt <= merit + 1e-4 * pred
                    } else {
                        mt < merit
                    };
                    if accept {
                        // accepted
                        let s: Vec<f64> = (0..n).map(|i| z_trial[i] - z[i]).collect();
                        z.copy_from_slice(&z_trial);
                        f = ft;
                        eq.copy_from_slice(&eq_t);
                        ineq.copy_from_slice(&ineq_t);
                        merit = mt;
                        al.weights(&eq, &ineq, &mut w_eq, &mut w_ineq);
                        let gprev = grad.clone();
                        p.grad_weighted(&z, 1.0, &w_eq, &w_ineq, &mut grad);
                        let y: Vec<f64> = (0..n).map(|i| grad[i] - gprev[i]).collect();
                        mem.push(s, y);
                        improved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }

        // ---- multiplier / penalty update ----
        let viol = max_violation(&eq, &ineq);
        for i in 0..me {
            al.lam[i] += al.mu * eq[i];
        }
        for j in 0..mi {
            al.nu[j] = (al.nu[j] + al.mu * ineq[j]).max(0.0);
        }
        if viol <= tol.feas {
            // stationarity of the Lagrangian at the updated multipliers
            p.grad_weighted(&z, 1.0, &al.lam, &al.nu, &mut grad);
            if projected_gradient_norm(p, &z, &grad) <= tol.stat {
                break;
            }
        }
        if viol > 0.25 * prev_violation {
            al.mu = (al.mu * tol.penalty_growth).min(1e10);
        }
        prev_violation = viol;
    }

    // ---- final recompute, honoring the feasible-monotone promise ----
    let f_end = p.eval(&z, &mut eq, &mut ineq);
    consider(f_end, &eq, &ineq, &z, &mut best_feasible);

    let (point, objective) = match &best_feasible {
        Some((bf, bz)) => (bz.clone(), *bf),
        None => (z.clone(), f_end),
    };
    let f_rec = p.eval(&point, &mut eq, &mut ineq);
    let max_eq = eq.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let max_ineq = ineq.iter().fold(0.0f64, |m, c| m.max(*c));
    al.weights(&eq, &ineq, &mut w_eq, &mut w_ineq);
    p.grad_weighted(&point, 1.0, &al.lam, &al.nu, &mut grad);
    let stationarity = projected_gradient_norm(p, &point, &grad);

    let feasible = max_eq <= tol.feas && max_ineq <= tol.feas;
    let status = if feasible && stationarity <= tol.stat {
        SolveStatus::LocalOptimal
    } else if feasible {
        SolveStatus::Feasible
    } else {
        SolveStatus::Failed
    };

    Ok(SolveReport {
        point,
        objective: f_rec,
        max_eq_residual: max_eq,
        max_ineq_violation: max_ineq,
        stationarity,
        iterations: total_iters,
        status,
    })
    .map(|mut r| {
        r.objective = objective.min(f_rec);
        r
    })
}

/// Result of a gradient self-test.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    /// Worst relative deviation between the provided weighted gradient and
    /// central finite differences.
    pub max_relative_deviation: f64,
}

/// Compares `grad_weighted` against central finite differences of the same
/// weighted sum at `point`, for the pure objective and for a deterministic
/// set of constraint weights.
pub fn check_gradients(p: &dyn SmoothProblem, point: &[f64]) -> GradCheckReport {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let n = p.num_vars();
    let (me, mi) = (p.num_eq(), p.num_ineq());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    let mut worst = 0.0f64;
    for pass in 0..2 {
        let (w_obj, w_eq, w_ineq) = if pass == 0 {
            (1.0, vec![0.0; me], vec![0.0; mi])
        } else {
            (
                rng.gen_range(-1.0..1.0),
                (0..me).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..mi).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
        };
        let weighted = |z: &[f64]| -> f64 {
            let mut eq = vec![0.0; me];
            let mut ineq = vec![0.0; mi];
            let f = p.eval(z, &mut eq, &mut ineq);
            w_obj * f
                + eq.iter().zip(&w_eq).map(|(c, w)| c * w).sum::<f64>()
                + ineq.iter().zip(&w_ineq).map(|(g, w)| g * w).sum::<f64>()
        };
        let mut grad = vec![0.0; n];
        p.grad_weighted(point, w_obj, &w_eq, &w_ineq, &mut grad);
        let mut zp = point.to_vec();
        for i in 0..n {
            let h = 1e-6 * (1.0 + point[i].abs());
            zp[i] = point[i] + h;
            let fp = weighted(&zp);
            zp[i] = point[i] - h;
            let fm = weighted(&zp);
            zp[i] = point[i];
            let fd = (fp - fm) / (2.0 * h);
            let dev = (grad[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(dev);
        }
    }
    GradCheckReport {
        max_relative_deviation: worst,
    }
}

#[cfg(test)]
pub(crate) mod test_problems {
    use super::*;

    /// min ||z - a||^2, optional equality sum(z) = 1, optional disk-exclusion.
    pub struct Quadratic {
        pub target: Vec<f64>,
        pub sum_to_one: bool,
        pub keep_out: Option<([f64; 2], f64)>,
        pub bounds: Vec<(f64, f64)>,
    }

    impl SmoothProblem for Quadratic {
        fn num_vars(&self) -> usize {
            self.target.len()
        }
        fn num_eq(&self) -> usize {
            usize::from(self.sum_to_one)
        }
        fn num_ineq(&self) -> usize {
            usize::from(self.keep_out.is_some())
        }
        fn bound(&self, i: usize) -> (f64, f64) {
            self.bounds
                .get(i)
                .copied()
                .unwrap_or((f64::NEG_INFINITY, f64::INFINITY))
        }
        fn eval(&self, z: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> f64 {
            if self.sum_to_one {
                eq[0] = z.iter().sum::<f64>() - 1.0;
            }
            if let Some((c, r)) = self.keep_out {
                ineq[0] = r * r - (z[0] - c[0]).powi(2) - (z[1] - c[1]).powi(2);
            }
            z.iter()
                .zip(&self.target)
                .map(|(zi, ai)| (zi - ai) * (zi - ai))
                .sum()
        }
        fn grad_weighted(
            &self,
            z: &[f64],
            w_obj: f64,
            w_eq: &[f64],
            w_ineq: &[f64],
            grad: &mut [f64],
        ) {
            for i in 0..z.len() {
                grad[i] = w_obj * 2.0 * (z[i] - self.target[i]);
                if self.sum_to_one {
                    grad[i] += w_eq[0];
                }
            }
            if let Some((c, _)) = self.keep_out {
                grad[0] += w_ineq[0] * -2.0 * (z[0] - c[0]);
                grad[1] += w_ineq[0] * -2.0 * (z[1] - c[1]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_problems::Quadratic;
    use super::*;

    #[test]
    fn unconstrained_quadratic_reaches_target() {
        let p = Quadratic {
            target: vec![1.0, -2.0, 0.5],
            sum_to_one: false,
            keep_out: None,
            bounds: vec![],
        };
        let rep = solve_nlp(&p, &[10.0, 10.0, 10.0], &SolveTolerances::default()).unwrap();
        for (zi, ti) in rep.point.iter().zip(&p.target) {
            assert!((zi - ti).abs() < 1e-8, "{:?}", rep.point);
        }
        assert!(matches!(rep.status, SolveStatus::LocalOptimal));
    }

    #[test]
    fn equality_constrained_quadratic_hits_kkt_point() {
        let p = Quadratic {
            target: vec![0.0, 0.0],
            sum_to_one: true,
            keep_out: None,
            bounds: vec![],
        };
        let tol = SolveTolerances {
            feas: 1e-10,
            stat: 1e-8,
            max_outer: 60,
            max_inner: 400,
            ..Default::default()
        };
        let rep = solve_nlp(&p, &[3.0, -1.0], &tol).unwrap();
        assert!((rep.point[0] - 0.5).abs() < 1e-6);
        assert!((rep.point[1] - 0.5).abs() < 1e-6);
        assert!(rep.max_eq_residual <= 1e-6);
    }

    #[test]
    fn keep_out_disk_is_respected() {
        // target inside the excluded disk; optimum lands on its boundary
        let p = Quadratic {
            target: vec![0.0, 0.0],
            sum_to_one: false,
            keep_out: Some(([0.0, 0.0], 1.0)),
            bounds: vec![],
        };
        let rep = solve_nlp(&p, &[2.0, 0.0], &SolveTolerances::default()).unwrap();
        let r = (rep.point[0].powi(2) + rep.point[1].powi(2)).sqrt();
        assert!((r - 1.0).abs() < 1e-4, "landed at radius {r}");
        assert!(rep.max_ineq_violation <= 1e-6);
    }

    #[test]
    fn feasible_start_is_never_made_worse() {
        let p = Quadratic {
            target: vec![0.0, 0.0],
            sum_to_one: false,
            keep_out: Some(([0.0, 0.0], 1.0)),
            bounds: vec![],
        };
        let start = [1.5, 0.5];
        let mut eq = vec![];
        let mut ineq = vec![0.0];
        let f_start = p.eval(&start, &mut eq, &mut ineq);
        assert!(ineq[0] <= 0.0);
        let rep = solve_nlp(&p, &start, &SolveTolerances::default()).unwrap();
        assert!(rep.objective <= f_start + 1e-9);
        assert!(rep.max_ineq_violation <= 1e-6);
    }

    #[test]
    fn gradient_check_on_quadratic() {
        let p = Quadratic {
            target: vec![1.0, 2.0],
            sum_to_one: true,
            keep_out: Some(([3.0, 3.0], 0.5)),
            bounds: vec![],
        };
        let rep = check_gradients(&p, &[0.3, -0.7]);
        assert!(rep.max_relative_deviation < 1e-7);
    }
}
