//! Dirichlet problems for the degenerate p-Laplacian
//! `div(|W^{1/p}∇u|^{p-2} W^{2/p} ∇u) = 0`, solved by minimising the
//! discrete energy, with weak-form, Harnack and oscillation diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, SpdField, VectorField};
use crate::grid::{Ball, Grid, Region};
use crate::sum::Kahan;
use crate::weight_char::derived_scalars;

/// Default regularisation schedule for `p ≠ 2`.
pub const EPS_SCHEDULE: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub w: SpdField,
    pub p: f64,
    /// Values on the outer ring of cells; the rest seeds nothing.
    pub boundary: ScalarField,
    /// Decreasing regularisation levels; the last is the final `ε`.
    pub epsilons: Vec<f64>,
    pub max_iter: usize,
    /// Sup-norm of the energy gradient per unit cell volume.
    pub grad_tol: f64,
    pub energy_rtol: f64,
}

impl DirichletProblem {
    pub fn new(w: SpdField, p: f64, boundary: ScalarField) -> Result<Self> {
        let epsilons = if p == 2.0 { vec![0.0] } else { EPS_SCHEDULE.to_vec() };
        let pr = DirichletProblem { w, p, boundary, epsilons, max_iter: 20_000, grad_tol: 1e-8, energy_rtol: 1e-15 };
        pr.validate()?;
        Ok(pr)
    }

    pub fn with_epsilons(mut self, e: Vec<f64>) -> Self {
        self.epsilons = e;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.w.grid
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(Error::Exponent(format!("p-Laplacian needs p > 1, got {}", self.p)));
        }
        if !self.w.grid.same_shape(&self.boundary.grid) {
            return Err(Error::GridMismatch);
        }
        if self.w.grid.cells().iter().any(|&c| c < 3) {
            return Err(Error::InvalidGrid("need at least 3 cells per axis".into()));
        }
        let g = &self.w.grid;
        if (0..g.len()).any(|i| is_boundary(g, i) && !self.boundary.values[i].is_finite()) {
            return Err(Error::Parameter("boundary values must be finite".into()));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Parameter("epsilon schedule must be non-empty and non-negative".into()));
        }
        Ok(())
    }
}

/// Outer ring of cells.
pub fn is_boundary(g: &Grid, i: usize) -> bool {
    g.multi(i).iter().zip(g.cells()).any(|(&m, &c)| m == 0 || m + 1 == c)
}

fn has_forward(g: &Grid, mi: &[usize]) -> bool {
    mi.iter().zip(g.cells()).all(|(&m, &c)| m + 1 < c)
}

/// Forward differences; cells without a forward neighbour on some axis get
/// zero.
pub fn forward_gradient(u: &ScalarField) -> VectorField {
    let g = &u.grid;
    let n = g.n();
    let mut out = VectorField::zeros(g, n);
    for i in 0..g.len() {
        let mi = g.multi(i);
        if !has_forward(g, &mi) {
            continue;
        }
        for a in 0..n {
            out.values[i * n + a] = (u.values[i + g.stride(a)] - u.values[i]) / g.h(a);
        }
    }
    out
}

/// Per-cell data shared by energy and gradient evaluations.
struct Assembly {
    n: usize,
    d: usize,
    p: f64,
    vol: f64,
    strides: Vec<usize>,
    inv_h: Vec<f64>,
    /// Cells carrying an energy term.
    cells: Vec<usize>,
    wt: Vec<f64>,
    m: Vec<f64>,
}

impl Assembly {
    fn new(w: &SpdField, p: f64) -> Assembly {
        let g = &w.grid;
        let n = g.n();
        let cells: Vec<usize> = (0..g.len()).filter(|&i| has_forward(g, &g.multi(i)) && g.weight(i) > 0.0).collect();
        Assembly {
            n,
            d: w.d,
            p,
            vol: g.cell_volume(),
            strides: (0..n).map(|a| g.stride(a)).collect(),
            inv_h: (0..n).map(|a| 1.0 / g.h(a)).collect(),
            wt: g.weights(),
            m: w.power_entries(2.0 / p),
            cells,
        }
    }

    #[inline]
    fn grad_at(&self, u: &[f64], c: usize, g: &mut [f64]) {
        for a in 0..self.n {
            g[a] = (u[c + self.strides[a]] - u[c]) * self.inv_h[a];
        }
    }

    #[inline]
    fn apply_m(&self, c: usize, g: &[f64], out: &mut [f64]) -> f64 {
        let d = self.d;
        let m = &self.m[c * d * d..(c + 1) * d * d];
        let mut q = 0.0;
        for a in 0..d {
            let mut s = 0.0;
            for b in 0..d {
                s += m[a * d + b] * g[b];
            }
            out[a] = s;
            q += s * g[a];
        }
        q.max(0.0)
    }

    fn energy(&self, u: &[f64], eps: f64) -> f64 {
        let mut g = vec![0.0; self.n];
        let mut mg = vec![0.0; self.n];
        let mut acc = Kahan::new();
        let e2 = eps * eps;
        for &c in &self.cells {
            self.grad_at(u, c, &mut g);
            let q = self.apply_m(c, &g, &mut mg);
            acc.add(self.wt[c] * (q + e2).powf(0.5 * self.p));
        }
        acc.value() * self.vol
    }

    /// Energy and its gradient; entries at `fixed` cells are zeroed.
    fn energy_grad(&self, u: &[f64], eps: f64, fixed: &[bool], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut g = vec![0.0; self.n];
        let mut mg = vec![0.0; self.n];
        let mut acc = Kahan::new();
        let e2 = eps * eps;
        let p = self.p;
        for &c in &self.cells {
            self.grad_at(u, c, &mut g);
            let q = self.apply_m(c, &g, &mut mg);
            let base = q + e2;
            acc.add(self.wt[c] * base.powf(0.5 * p));
            let coef = if base > 0.0 { self.wt[c] * self.vol * p * base.powf(0.5 * p - 1.0) } else { 0.0 };
            let mut own = 0.0;
            for a in 0..self.n {
                let f = coef * mg[a] * self.inv_h[a];
                grad[c + self.strides[a]] += f;
                own += f;
            }
            grad[c] -= own;
        }
        for (gv, &f) in grad.iter_mut().zip(fixed) {
            if f {
                *gv = 0.0;
            }
        }
        acc.value() * self.vol
    }

    /// `Σ_c coef_c ⟨M g_c, ∇φ_c⟩ vol` with the ε-regularised coefficient.
    fn weak_form(&self, u: &[f64], phi: &[f64], eps: f64) -> f64 {
        let mut g = vec![0.0; self.n];
        let mut gp = vec![0.0; self.n];
        let mut mg = vec![0.0; self.n];
        let mut acc = Kahan::new();
        let e2 = eps * eps;
        for &c in &self.cells {
            self.grad_at(phi, c, &mut gp);
            if gp.iter().all(|v| *v == 0.0) {
                continue;
            }
            self.grad_at(u, c, &mut g);
            let q = self.apply_m(c, &g, &mut mg);
            let base = q + e2;
            let coef = if base > 0.0 { base.powf(0.5 * self.p - 1.0) } else { 0.0 };
            let dot: f64 = mg.iter().zip(&gp).map(|(a, b)| a * b).sum();
            acc.add(self.wt[c] * coef * dot);
        }
        acc.value() * self.vol
    }

    /// Jacobi diagonal of the linearised operator.
    fn diagonal(&self, u: &[f64], eps: f64, fixed: &[bool], len: usize) -> Vec<f64> {
        let mut diag = vec![0.0; len];
        let mut g = vec![0.0; self.n];
        let mut mg = vec![0.0; self.n];
        let e2 = eps * eps;
        let p = self.p;
        let d = self.d;
        for &c in &self.cells {
            self.grad_at(u, c, &mut g);
            let q = self.apply_m(c, &g, &mut mg);
            let base = (q + e2).max(1e-12);
            let coef = self.wt[c] * self.vol * p * (p - 1.0).max(1.0) * base.powf(0.5 * p - 1.0);
            let m = &self.m[c * d * d..(c + 1) * d * d];
            let mut own = 0.0;
            for a in 0..self.n {
                diag[c + self.strides[a]] += coef * m[a * d + a] * self.inv_h[a] * self.inv_h[a];
                for b in 0..self.n {
                    own += m[a * d + b] * self.inv_h[a] * self.inv_h[b];
                }
            }
            diag[c] += coef * own;
        }
        let floor = diag.iter().cloned().fold(0.0, f64::max) * 1e-12 + f64::MIN_POSITIVE;
        diag.iter().zip(fixed).map(|(v, &f)| if f { 1.0 } else { v.max(floor) }).collect()
    }
}

/// `Σ (|W^{1/p} ∇_h u|² + ε²)^{p/2} · vol` over the cells with forward
/// neighbours.
pub fn energy(u: &ScalarField, w: &SpdField, p: f64, eps: f64) -> Result<f64> {
    if !u.grid.same_shape(&w.grid) {
        return Err(Error::GridMismatch);
    }
    Ok(Assembly::new(w, p).energy(&u.values, eps))
}

/// Gradient of [`energy`] with respect to every cell value (no cells fixed).
pub fn energy_gradient(u: &ScalarField, w: &SpdField, p: f64, eps: f64) -> Result<Vec<f64>> {
    if !u.grid.same_shape(&w.grid) {
        return Err(Error::GridMismatch);
    }
    let asm = Assembly::new(w, p);
    let mut grad = vec![0.0; u.grid.len()];
    asm.energy_grad(&u.values, eps, &vec![false; u.grid.len()], &mut grad);
    Ok(grad)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub u: Option<ScalarField>,
    pub energy_trace: Vec<f64>,
    /// Weak residual with the final `ε` in the integrand.
    pub weak_residual: f64,
    /// Weak residual with `ε = 0`.
    pub weak_residual_eps0: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_grad: f64,
    pub final_epsilon: f64,
}

impl SolveResult {
    pub fn solution(&self) -> &ScalarField {
        self.u.as_ref().expect("solution present")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut k = Kahan::new();
    for (x, y) in a.iter().zip(b) {
        k.add(x * y);
    }
    k.value()
}

fn sup_scaled(g: &[f64], vol: f64) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs())) / vol
}

/// Preconditioned nonlinear conjugate gradients (Polak–Ribière+) with a
/// secant line search and Armijo safeguard, over an `ε` continuation.
pub fn solve(problem: &DirichletProblem) -> Result<SolveResult> {
    problem.validate()?;
    let g = problem.grid();
    let len = g.len();
    let fixed: Vec<bool> = (0..len).map(|i| is_boundary(g, i) || !g.is_active(i)).collect();
    let mut bsum = Kahan::new();
    let mut bcount = 0usize;
    for i in 0..len {
        if is_boundary(g, i) {
            bsum.add(problem.boundary.values[i]);
            bcount += 1;
        }
    }
    let start = bsum.value() / bcount as f64;
    let mut u: Vec<f64> = (0..len).map(|i| if fixed[i] { problem.boundary.values[i] } else { start }).collect();
    let asm = Assembly::new(&problem.w, problem.p);
    let vol = asm.vol;
    let mut trace = vec![];
    let mut iterations = 0;
    let mut final_grad = f64::INFINITY;
    let mut converged = false;
    let mut grad = vec![0.0; len];
    let mut trial_grad = vec![0.0; len];
    let mut trial = vec![0.0; len];
    for &eps in &problem.epsilons {
        let mut e = asm.energy_grad(&u, eps, &fixed, &mut grad);
        trace.push(e);
        let mut diag = asm.diagonal(&u, eps, &fixed, len);
        let mut z: Vec<f64> = grad.iter().zip(&diag).map(|(a, b)| a / b).collect();
        let mut dir: Vec<f64> = z.iter().map(|v| -v).collect();
        let mut gz = dot(&grad, &z);
        let mut alpha = 1.0;
        let mut history: Vec<(f64, f64)> = vec![];
        converged = false;
        let mut stage_iter = 0;
        loop {
            let gs = sup_scaled(&grad, vol);
            final_grad = gs;
            history.push((e, gs));
            if gs < problem.grad_tol {
                converged = true;
                break;
            }
            if history.len() > 20 {
                let k = history.len();
                let (e_old, _) = history[k - 11];
                let recent = history[k - 10..].iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
                let before = history[k - 20..k - 10].iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
                if (e_old - e) <= problem.energy_rtol * e.abs() && recent >= before {
                    converged = gs < 1e-6;
                    break;
                }
            }
            if stage_iter >= problem.max_iter {
                break;
            }
            stage_iter += 1;
            iterations += 1;
            let mut slope0 = dot(&grad, &dir);
            if !(slope0 < 0.0) {
                dir = z.iter().map(|v| -v).collect();
                slope0 = dot(&grad, &dir);
                if !(slope0 < 0.0) {
                    break;
                }
            }
            // secant search on φ'(α) = ∇E(u + α d)·d
            let eval = |a: f64, trial: &mut Vec<f64>, tg: &mut Vec<f64>| -> (f64, f64) {
                for i in 0..len {
                    trial[i] = u[i] + a * dir[i];
                }
                let en = asm.energy_grad(trial, eps, &fixed, tg);
                (en, dot(tg, &dir))
            };
            let (mut a0, mut s0) = (0.0, slope0);
            let mut a1 = alpha;
            let (mut e1, mut s1) = eval(a1, &mut trial, &mut trial_grad);
            for _ in 0..12 {
                if s1.abs() <= 0.1 * slope0.abs() && e1 <= e {
                    break;
                }
                let next = if s1 < 0.0 && e1 <= e && !(s1 > s0) {
                    a1 * 2.0
                } else if s1 > s0 {
                    a1 - s1 * (a1 - a0) / (s1 - s0)
                } else {
                    0.5 * a1
                };
                if !(next > 0.0) || !next.is_finite() {
                    break;
                }
                a0 = a1;
                s0 = s1;
                a1 = next;
                let r = eval(a1, &mut trial, &mut trial_grad);
                e1 = r.0;
                s1 = r.1;
            }
            // Armijo safeguard keeps the energy monotone
            let mut tries = 0;
            while !(e1 <= e + 1e-4 * a1 * slope0) && tries < 60 {
                a1 *= 0.5;
                let r = eval(a1, &mut trial, &mut trial_grad);
                e1 = r.0;
                tries += 1;
            }
            if !(e1 <= e) {
                break;
            }
            alpha = a1;
            std::mem::swap(&mut u, &mut trial);
            std::mem::swap(&mut grad, &mut trial_grad);
            e = e1;
            trace.push(e);
            if stage_iter % 50 == 0 && problem.p != 2.0 {
                diag = asm.diagonal(&u, eps, &fixed, len);
            }
            let z_new: Vec<f64> = grad.iter().zip(&diag).map(|(a, b)| a / b).collect();
            let gz_new = dot(&grad, &z_new);
            let cross = dot(&grad, &z);
            let beta = ((gz_new - cross) / gz).max(0.0);
            for i in 0..len {
                dir[i] = -z_new[i] + beta * dir[i];
            }
            z = z_new;
            gz = gz_new;
        }
    }
    let eps = *problem.epsilons.last().unwrap();
    let uf = ScalarField::new(g.clone(), u)?;
    let weak_residual = weak_residual_eps(&uf, &problem.w, problem.p, eps, 16)?;
    let weak_residual_eps0 = weak_residual_eps(&uf, &problem.w, problem.p, 0.0, 16)?;
    Ok(SolveResult {
        u: Some(uf),
        energy_trace: trace,
        weak_residual,
        weak_residual_eps0,
        iterations,
        converged,
        final_grad,
        final_epsilon: eps,
    })
}

/// Tensor-product `sin²` bumps on overlapping sub-boxes, vanishing on the
/// outer ring of cells.
pub fn test_functions(g: &Grid, count: usize) -> Vec<ScalarField> {
    let n = g.n();
    let k = ((count as f64).powf(1.0 / n as f64).round() as usize).max(1);
    let mut out = vec![];
    for t in 0..k.pow(n as u32) {
        let mut rest = t;
        let boxes: Vec<(f64, f64)> = (0..n)
            .map(|a| {
                let j = rest % k;
                rest /= k;
                let inner_lo = g.lo()[a] + g.h(a);
                let width = g.extent(a) - 2.0 * g.h(a);
                let step = width / (k + 1) as f64;
                (inner_lo + j as f64 * step, inner_lo + (j + 2) as f64 * step)
            })
            .collect();
        let mut f = ScalarField::from_fn(g, move |x| {
            boxes
                .iter()
                .zip(x)
                .map(|(&(a, b), &xv)| if xv > a && xv < b { (std::f64::consts::PI * (xv - a) / (b - a)).sin().powi(2) } else { 0.0 })
                .product()
        });
        for i in 0..g.len() {
            if is_boundary(g, i) {
                f.values[i] = 0.0;
            }
        }
        out.push(f.without_generator());
    }
    out
}

/// Max over the test basis of `|∫ |W^{1/p}∇u|^{p-2} ⟨W^{1/p}∇u, W^{1/p}∇φ⟩|`
/// divided by `‖∇φ‖_{L^p_W} ‖∇u‖_{L^p_W}^{p-1}`.
pub fn weak_residual(u: &ScalarField, w: &SpdField, p: f64, test_count: usize) -> Result<f64> {
    weak_residual_eps(u, w, p, 0.0, test_count)
}

pub fn weak_residual_eps(u: &ScalarField, w: &SpdField, p: f64, eps: f64, test_count: usize) -> Result<f64> {
    if !u.grid.same_shape(&w.grid) {
        return Err(Error::GridMismatch);
    }
    let asm = Assembly::new(w, p);
    let norm_u = asm.energy(&u.values, 0.0).powf(1.0 / p);
    let mut worst: f64 = 0.0;
    for phi in test_functions(&u.grid, test_count) {
        let norm_phi = asm.energy(&phi.values, 0.0).powf(1.0 / p);
        if !(norm_phi > 0.0) {
            continue;
        }
        let wf = asm.weak_form(&u.values, &phi.values, eps);
        let denom = norm_phi * norm_u.powf(p - 1.0);
        let r = if denom > 0.0 { wf.abs() / denom } else { wf.abs() };
        worst = worst.max(r);
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarnackReport {
    pub sup: f64,
    pub inf: f64,
    /// `v(B) / w(B)`
    pub mu: f64,
    /// `log(sup/inf) / μ(B)^{1/p}`
    pub implied_c: f64,
}

/// Harnack quantities on `B` with `(w, v)` the eigenvalue weights of `W`.
pub fn harnack_check(u: &ScalarField, w: &SpdField, p: f64, ball: &Ball) -> Result<HarnackReport> {
    let g = &u.grid;
    if !g.same_shape(&w.grid) {
        return Err(Error::GridMismatch);
    }
    if g.distance_to_boundary(&ball.center) < 2.0 * ball.radius {
        return Err(Error::Hypothesis("2B must lie inside the domain".into()));
    }
    let twice = Region::Ball(ball.scaled(2.0));
    let mut bad = None;
    twice.for_each_cell(g, |i| {
        if !(u.values[i] > 0.0) && bad.is_none() {
            bad = Some(i);
        }
    });
    if let Some(i) = bad {
        return Err(Error::Hypothesis(format!("u is not positive at cell {i} of 2B")));
    }
    let b = Region::Ball(ball.clone());
    let cells = b.cells(g);
    if cells.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let sup = cells.iter().map(|&i| u.values[i]).fold(f64::NEG_INFINITY, f64::max);
    let inf = cells.iter().map(|&i| u.values[i]).fold(f64::INFINITY, f64::min);
    let (v, lo) = derived_scalars(w);
    let mu = crate::quadrature::integrate(&v, &b)? / crate::quadrature::integrate(&lo, &b)?;
    Ok(HarnackReport { sup, inf, mu, implied_c: (sup / inf).ln() / mu.powf(1.0 / p) })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OscillationDecay {
    pub radii: Vec<f64>,
    pub oscillations: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Largest ratio.
    pub gamma: f64,
}

/// `osc(½^{k+1}B) / osc(½^k B)` for `k < levels`, balls centred at `x`.
pub fn oscillation_decay(u: &ScalarField, x: &[f64], radius: f64, levels: usize) -> Result<OscillationDecay> {
    let g = &u.grid;
    if g.distance_to_boundary(x) < radius {
        return Err(Error::Hypothesis("the outer ball must lie inside the domain".into()));
    }
    let mut radii = vec![];
    let mut osc = vec![];
    for k in 0..=levels {
        let r = radius / (1u64 << k) as f64;
        let cells = Region::Ball(Ball::new(x.to_vec(), r)).cells(g);
        if cells.is_empty() {
            return Err(Error::UnderResolved(format!("no cell centre within {r} of the point")));
        }
        let hi = cells.iter().map(|&i| u.values[i]).fold(f64::NEG_INFINITY, f64::max);
        let lo = cells.iter().map(|&i| u.values[i]).fold(f64::INFINITY, f64::min);
        radii.push(r);
        osc.push(hi - lo);
    }
    let ratios: Vec<f64> = osc.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();
    let gamma = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(OscillationDecay { radii, oscillations: osc, ratios, gamma })
}
