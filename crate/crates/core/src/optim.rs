//! Limited-memory BFGS with a strong-Wolfe line search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsSettings {
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Stop when `‖g‖ ≤ grad_tol·‖g₀‖`.
    pub grad_tol: f64,
    /// Stop when one accepted step improves the objective by less than
    /// `f_tol·max(|f|, 1)`. Zero disables the test.
    pub f_tol: f64,
    pub max_iterations: usize,
    pub max_line_search: usize,
    /// Scales the very first trial step; lowered on retries after divergence.
    pub initial_step: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-6,
            f_tol: 0.0,
            max_iterations: 500,
            max_line_search: 25,
            initial_step: 1.0,
        }
    }
}

impl LbfgsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::invalid("L-BFGS memory must be at least 1"));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::invalid("line-search constants need 0 < c1 < c2 < 1"));
        }
        if !(self.grad_tol >= 0.0 && self.f_tol >= 0.0 && self.initial_step > 0.0) {
            return Err(Error::invalid(
                "tolerances must be non-negative and the initial step positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the result is the
    /// last accepted iterate.
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective after each accepted step, starting with `f(x₀)`.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Point {
    alpha: f64,
    f: f64,
    dphi: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x0: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    evaluations: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    /// Divergent or non-finite trial points count as `+∞`.
    fn eval(&mut self, alpha: f64) -> Result<Point> {
        let x: Vec<f64> = self
            .x0
            .iter()
            .zip(self.d)
            .map(|(a, b)| a + alpha * b)
            .collect();
        self.evaluations += 1;
        match (self.objective)(&x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let dphi = dot(&g, self.d);
                Ok(Point {
                    alpha,
                    f,
                    dphi,
                    x,
                    g,
                })
            }
            Ok(_) | Err(Error::Divergence { .. }) => Ok(Point {
                alpha,
                f: f64::INFINITY,
                dphi: f64::NAN,
                x,
                g: Vec::new(),
            }),
            Err(e) => Err(e),
        }
    }

    fn armijo_fails(&self, p: &Point) -> bool {
        !(p.f <= self.f0 + self.c1 * p.alpha * self.dphi0)
    }

    fn curvature_holds(&self, p: &Point) -> bool {
        p.dphi.abs() <= -self.c2 * self.dphi0
    }

    fn search(&mut self, alpha1: f64, max_iter: usize) -> Result<Option<Point>> {
        let mut prev = Point {
            alpha: 0.0,
            f: self.f0,
            dphi: self.dphi0,
            x: Vec::new(),
            g: Vec::new(),
        };
        let mut alpha = alpha1;
        for i in 0..max_iter {
            let cur = self.eval(alpha)?;
            if self.armijo_fails(&cur) || (i > 0 && cur.f >= prev.f) {
                return self.zoom(prev, cur, max_iter);
            }
            if self.curvature_holds(&cur) {
                return Ok(Some(cur));
            }
            if cur.dphi >= 0.0 {
                return self.zoom(cur, prev, max_iter);
            }
            alpha = 2.0 * cur.alpha;
            prev = cur;
        }
        Ok(None)
    }

    /// `lo` satisfies sufficient decrease and has the lower objective among
    /// the bracket ends.
    fn zoom(&mut self, mut lo: Point, mut hi: Point, max_iter: usize) -> Result<Option<Point>> {
        for _ in 0..max_iter {
            let alpha = interpolate(&lo, &hi);
            let cur = self.eval(alpha)?;
            if self.armijo_fails(&cur) || cur.f >= lo.f {
                hi = cur;
            } else {
                if self.curvature_holds(&cur) {
                    return Ok(Some(cur));
                }
                if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
            if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
                break;
            }
        }
        // Accept the best sufficient-decrease point found, if it moved.
        Ok((lo.alpha > 0.0 && !lo.g.is_empty()).then_some(lo))
    }
}

/// Cubic interpolation on `[lo, hi]`, safeguarded to the middle 80% of
/// the bracket; bisection when `hi` carries no usable derivative.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !(hi.f.is_finite() && hi.dphi.is_finite()) {
        return mid;
    }
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
    let (left, right) = (a.min(b), a.max(b));
    let margin = 0.1 * (right - left);
    if t.is_finite() && t > left + margin && t < right - margin {
        t
    } else {
        mid
    }
}

/// Minimises `objective`, which returns the value and gradient at a point.
/// Divergence errors at trial points shrink the step; at `x0` they are
/// returned.
pub fn minimize<F>(objective: F, x0: &[f64], settings: &LbfgsSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_observed(objective, x0, settings, |_, _, _| {})
}

/// [`minimize`] with a callback `(iteration, x, f)` after every accepted
/// step.
pub fn minimize_observed<F, O>(
    mut objective: F,
    x0: &[f64],
    settings: &LbfgsSettings,
    mut observer: O,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(usize, &[f64], f64),
{
    settings.validate()?;
    let (mut f, mut g) = objective(x0)?;
    if !f.is_finite() {
        return Err(Error::invalid(
            "objective is not finite at the starting point",
        ));
    }
    let mut x = x0.to_vec();
    let mut evaluations = 1;
    let g0 = norm(&g);
    let target = settings.grad_tol * g0;
    let mut history = vec![f];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;

    let termination = loop {
        if norm(&g) <= target {
            break Termination::GradientTolerance;
        }
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }

        let mut d = direction(&g, &s_hist, &y_hist);
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = -dot(&g, &g);
        }
        let alpha1 = if s_hist.is_empty() {
            settings.initial_step * (1.0 / norm(&d)).min(1.0)
        } else {
            1.0
        };

        let mut ls = LineSearch {
            objective: &mut objective,
            x0: &x,
            d: &d,
            f0: f,
            dphi0,
            c1: settings.c1,
            c2: settings.c2,
            evaluations: 0,
        };
        let found = ls.search(alpha1, settings.max_line_search)?;
        evaluations += ls.evaluations;
        let Some(p) = found else {
            if !s_hist.is_empty() {
                // retry once from steepest descent with a fresh memory
                s_hist.clear();
                y_hist.clear();
                continue;
            }
            break Termination::LineSearchFailed;
        };

        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * norm(&s) * norm(&y) {
            if s_hist.len() == settings.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        let improvement = f - p.f;
        x = p.x;
        f = p.f;
        g = p.g;
        iterations += 1;
        history.push(f);
        observer(iterations, &x, f);
        if settings.f_tol > 0.0 && improvement <= settings.f_tol * f.abs().max(1.0) {
            break Termination::FunctionTolerance;
        }
    };
    Ok(Minimum {
        grad_norm: norm(&g),
        x,
        f,
        iterations,
        evaluations,
        termination,
        history,
    })
}

/// Two-loop recursion for `−H g`.
fn direction(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q = g.to_vec();
    let k = s_hist.len();
    let mut alphas = vec![0.0; k];
    let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&y_hist[i], &s_hist[i])).collect();
    for i in (0..k).rev() {
        alphas[i] = rho[i] * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alphas[i] * yj;
        }
    }
    if k > 0 {
        let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..k {
        let beta = rho[i] * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    /// Gaussian elimination with partial pivoting.
    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn least_squares_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { 3.0 } else { 0.0 } + rng.random_range(-0.3..0.3))
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let r: Vec<f64> = (0..n).map(|i| dot(&a[i], x) - b[i]).collect();
            let g = (0..n)
                .map(|j| 2.0 * (0..n).map(|i| a[i][j] * r[i]).sum::<f64>())
                .collect();
            Ok((dot(&r, &r), g))
        };
        let settings = LbfgsSettings {
            grad_tol: 1e-12,
            ..Default::default()
        };
        let m = minimize(obj, &vec![0.0; n], &settings).unwrap();
        let exact = solve_dense(a.clone(), b.clone());
        for (u, v) in m.x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
        assert!(m.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rosenbrock_converges() {
        let settings = LbfgsSettings {
            grad_tol: 1e-12,
            max_iterations: 1000,
            ..Default::default()
        };
        let m = minimize(rosenbrock, &[-1.2, 1.0], &settings).unwrap();
        assert!(
            (m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6,
            "{:?} {:?}",
            m.x,
            m.termination
        );
        assert!(m.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn optimum_returns_immediately() {
        let m = minimize(rosenbrock, &[1.0, 1.0], &LbfgsSettings::default()).unwrap();
        assert_eq!(m.iterations, 0);
        assert_eq!(m.evaluations, 1);
        assert_eq!(m.termination, Termination::GradientTolerance);
    }

    #[test]
    fn divergent_region_is_avoided() {
        // f = x² but "diverges" beyond |x| > 2; the first trial step from 1.5 overshoots.
        let obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0].abs() > 2.0 {
                Err(Error::Divergence { block: 1 })
            } else {
                Ok((x[0] * x[0], vec![2.0 * x[0]]))
            }
        };
        let settings = LbfgsSettings {
            initial_step: 100.0,
            ..Default::default()
        };
        let m = minimize(obj, &[1.5], &settings).unwrap();
        assert!(m.x[0].abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_settings() {
        let s = LbfgsSettings {
            c1: 0.95,
            ..Default::default()
        };
        assert!(minimize(rosenbrock, &[0.0, 0.0], &s).is_err());
    }
}
