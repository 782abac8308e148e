//! BFGS minimization with a strong-Wolfe line search.

use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions<T> {
    /// Stop once the gradient 2-norm falls below this.
    pub grad_tol: T,
    /// Gradient norm still accepted as converged when progress stalls.
    pub stall_grad_tol: T,
    /// Relative change in the objective counted as a stall.
    pub rel_f_tol: T,
    pub max_iter: usize,
    /// Cap on the length of the first trial step.
    pub max_step: T,
}

impl<T: Real> Default for BfgsOptions<T> {
    fn default() -> Self {
        Self {
            grad_tol: T::cst(1e-6),
            stall_grad_tol: T::cst(1e-5),
            rel_f_tol: T::cst(1e-10),
            max_iter: 500,
            max_step: T::cst(2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult<T> {
    pub x: Vec<T>,
    pub f: T,
    pub grad: Vec<T>,
    pub grad_norm: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stop_reason: &'static str,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `f` returns the objective and its gradient, or `None` outside the domain.
pub fn bfgs<T: Real, F>(mut f: F, x0: &[T], opts: &BfgsOptions<T>) -> Option<BfgsResult<T>>
where
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    let n = x0.len();
    let mut evals = 1;
    let (mut fx, mut g) = f(x0)?;
    let mut x = x0.to_vec();
    let finish = |x: Vec<T>, fx: T, g: Vec<T>, it: usize, evals: usize, reason: &'static str| {
        let gn = norm(&g);
        let converged = gn <= opts.grad_tol || (reason != "max_iter" && gn <= opts.stall_grad_tol);
        BfgsResult {
            x,
            f: fx,
            grad_norm: gn,
            grad: g,
            iterations: it,
            evaluations: evals,
            converged,
            stop_reason: reason,
        }
    };
    if n == 0 {
        return Some(finish(x, fx, g, 0, evals, "no_parameters"));
    }
    // inverse Hessian approximation, row-major
    let mut h = vec![T::zero(); n * n];
    for i in 0..n {
        h[i * n + i] = T::one();
    }
    let mut first = true;
    for it in 0..opts.max_iter {
        if norm(&g) <= opts.grad_tol {
            return Some(finish(x, fx, g, it, evals, "gradient"));
        }
        let mut d: Vec<T> = (0..n).map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<T>()).collect();
        if dot(&d, &g) >= T::zero() {
            // lost descent; reset curvature
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { T::one() } else { T::zero() };
                }
            }
            d = g.iter().map(|&v| -v).collect();
            first = true;
        }
        let mut alpha0 = T::one();
        if first {
            let dn = norm(&d);
            if dn > opts.max_step {
                alpha0 = opts.max_step / dn;
            }
        }
        let Some(step) = wolfe_search(&mut f, &x, fx, &g, &d, alpha0, &mut evals) else {
            return Some(finish(x, fx, g, it, evals, "line_search"));
        };
        let s: Vec<T> = d.iter().map(|&di| step.alpha * di).collect();
        let yv: Vec<T> = step.g.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let f_old = fx;
        x = step.x;
        fx = step.f;
        g = step.g;
        let sy = dot(&s, &yv);
        if sy > T::zero() {
            if first {
                // scale the initial inverse Hessian to the observed curvature
                let scale = sy / dot(&yv, &yv);
                for v in h.iter_mut() {
                    *v *= scale;
                }
                first = false;
            }
            let rho = T::one() / sy;
            let hy: Vec<T> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * yv[j]).sum()).collect();
            let yhy = dot(&yv, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((T::one() + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        let scale = f_old.abs().max(fx.abs()).max(T::one());
        if (f_old - fx).abs() <= opts.rel_f_tol * scale && norm(&g) <= opts.stall_grad_tol {
            return Some(finish(x, fx, g, it + 1, evals, "objective"));
        }
    }
    Some(finish(x, fx, g, opts.max_iter, evals, "max_iter"))
}

/// Newton refinement from a point near a minimum, with the Hessian taken
/// by central differences of the analytic gradient. A step is kept only if
/// it lowers the gradient norm without raising the objective beyond
/// rounding; an indefinite Hessian is shifted towards the identity.
pub fn newton_polish<T: Real, F>(mut f: F, start: BfgsResult<T>, opts: &BfgsOptions<T>, max_steps: usize) -> BfgsResult<T>
where
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    let n = start.x.len();
    let mut cur = start;
    if n == 0 {
        return cur;
    }
    let h = T::cst(1e-5);
    for _ in 0..max_steps {
        if cur.grad_norm <= T::cst(1e-11) {
            break;
        }
        let mut hess = vec![vec![T::zero(); n]; n];
        let mut ok = true;
        for j in 0..n {
            let mut a = cur.x.clone();
            let mut b = cur.x.clone();
            a[j] += h;
            b[j] -= h;
            cur.evaluations += 2;
            match (f(&a), f(&b)) {
                (Some((_, ga)), Some((_, gb))) => {
                    for i in 0..n {
                        hess[i][j] = (ga[i] - gb[i]) / (T::cst(2.0) * h);
                    }
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        for i in 0..n {
            for j in 0..i {
                let v = (hess[i][j] + hess[j][i]) / T::cst(2.0);
                hess[i][j] = v;
                hess[j][i] = v;
            }
        }
        let scale = (0..n).map(|i| hess[i][i].abs()).fold(T::zero(), T::max).max(T::cst(1e-12));
        let mut shift = T::zero();
        let step = loop {
            let mut m = hess.clone();
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += shift;
            }
            if let Some(d) = solve_spd(m, &cur.grad) {
                break Some(d);
            }
            shift = if shift == T::zero() {
                scale * T::cst(1e-8)
            } else {
                shift * T::cst(10.0)
            };
            if shift > scale * T::cst(1e4) {
                break None;
            }
        };
        let Some(d) = step else {
            break;
        };
        let x: Vec<T> = cur.x.iter().zip(&d).map(|(&xi, &di)| xi - di).collect();
        cur.evaluations += 1;
        let Some((fx, g)) = f(&x) else {
            break;
        };
        let gn = norm(&g);
        let slack = T::cst(1e-12) * cur.f.abs().max(T::one());
        if !(fx.is_finite() && gn < cur.grad_norm && fx <= cur.f + slack) {
            break;
        }
        cur.x = x;
        cur.f = fx;
        cur.grad = g;
        cur.grad_norm = gn;
        cur.iterations += 1;
    }
    cur.converged = cur.grad_norm <= opts.grad_tol || (cur.converged && cur.grad_norm <= opts.stall_grad_tol);
    cur
}

fn solve_spd<T: Real>(mut a: Vec<Vec<T>>, b: &[T]) -> Option<Vec<T>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > T::zero()) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] = y[i] - a[i][k] * y[k];
        }
        y[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] = y[i] - a[k][i] * y[k];
        }
        y[i] /= a[i][i];
    }
    Some(y)
}

struct Step<T> {
    alpha: T,
    x: Vec<T>,
    f: T,
    g: Vec<T>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LS: usize = 40;

fn wolfe_search<T: Real, F>(f: &mut F, x: &[T], f0: T, g0: &[T], d: &[T], alpha0: T, evals: &mut usize) -> Option<Step<T>>
where
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    let (c1, c2) = (T::cst(C1), T::cst(C2));
    let dg0 = dot(g0, d);
    let mut eval = |alpha: T, evals: &mut usize| -> Option<Step<T>> {
        *evals += 1;
        let xa: Vec<T> = x.iter().zip(d).map(|(&xi, &di)| xi + alpha * di).collect();
        let (fa, ga) = f(&xa)?;
        if !fa.is_finite() || ga.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Step {
            alpha,
            x: xa,
            f: fa,
            g: ga,
        })
    };

    let mut lo_alpha = T::zero();
    let mut lo_f = f0;
    let mut lo_dg = dg0;
    let mut lo_step: Option<Step<T>> = None;
    let mut alpha = alpha0;
    let mut hi: Option<(T, T)> = None; // (alpha, f)
    let two = T::cst(2.0);
    for _ in 0..MAX_LS {
        let trial = match eval(alpha, evals) {
            Some(s) => s,
            None => {
                // outside the domain: shrink towards the last good point
                hi = Some((alpha, T::infinity()));
                alpha = lo_alpha + (alpha - lo_alpha) / T::cst(4.0);
                if alpha - lo_alpha <= T::epsilon() * alpha.abs().max(T::one()) {
                    break;
                }
                continue;
            }
        };
        let dga = dot(&trial.g, d);
        if trial.f > f0 + c1 * alpha * dg0 || trial.f >= lo_f {
            hi = Some((alpha, trial.f));
        } else if dga.abs() <= -c2 * dg0 {
            return Some(trial);
        } else {
            let flip = match hi {
                None => dga >= T::zero(),
                Some((ha, _)) => dga * (ha - alpha) >= T::zero(),
            };
            if flip {
                hi = Some((lo_alpha, lo_f));
            }
            lo_alpha = alpha;
            lo_f = trial.f;
            lo_dg = dga;
            lo_step = Some(trial);
        }
        match hi {
            None => alpha = alpha * two,
            Some((ha, hf)) => {
                // safeguarded quadratic interpolation between lo and hi
                let width = ha - lo_alpha;
                let mut next = if hf.is_finite() {
                    let denom = two * (hf - lo_f - lo_dg * width);
                    if denom > T::zero() {
                        lo_alpha - lo_dg * width * width / denom
                    } else {
                        lo_alpha + width / two
                    }
                } else {
                    lo_alpha + width / two
                };
                let (a, b) = if lo_alpha < ha { (lo_alpha, ha) } else { (ha, lo_alpha) };
                let margin = T::cst(0.1) * (b - a);
                if !(next > a + margin && next < b - margin) {
                    next = (a + b) / two;
                }
                if (b - a).abs() <= T::epsilon() * b.abs().max(T::one()) * T::cst(8.0) {
                    break;
                }
                alpha = next;
            }
        }
    }
    // accept any sufficient decrease found along the way
    lo_step.filter(|s| s.f < f0)
}
