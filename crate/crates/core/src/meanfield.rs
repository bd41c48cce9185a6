//! Mean-field limit: scaled cumulant expansions and their iterated-integral
//! limits, the limit hierarchies for observables and states, the one-particle
//! series, and the kinetic equation with initial correlations.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{correlation_dressing_transform, k_subsets, ClusterSpec, Direction};
use crate::dynamics::{apply_lifted, Dynamics, InteractionMask};
use crate::error::{check_cap, Error, Result};
use crate::expm::{expm, DENSE_LIMIT};
use crate::hierarchies::cumulant_apply;
use crate::state_space::{permutations, EntitySpace, Kind, SequenceVector, TensorFunction};

/// Numerical settings of the limit computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSettings {
    /// Gauss-Legendre points per nesting level.
    pub quad_order: usize,
    /// Maximum nesting depth of time-ordered integrals.
    pub max_levels: usize,
    /// RK4 step-halving acceptance threshold (sup-norm change).
    pub ode_tol: f64,
    /// Maximum number of step halvings.
    pub max_halvings: usize,
}

impl Default for LimitSettings {
    fn default() -> Self {
        Self {
            quad_order: 8,
            max_levels: 3,
            ode_tol: 1e-8,
            max_halvings: 16,
        }
    }
}

impl LimitSettings {
    fn check_levels(&self, n: usize) -> Result<()> {
        check_cap("time-ordered integral nesting depth", n, self.max_levels)
    }
}

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::Domain(format!("quadrature order {order} < 2")));
        }
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }
}

fn add_into(acc: &mut [f64], x: &[f64], c: f64) {
    acc.iter_mut().zip(x).for_each(|(a, v)| *a += c * v);
}

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// One time-ordered chain for the ordered removed tuple `js`:
/// `e^{(t-t1) F(J0)} L(j1) e^{(t1-t2) F(J1)} ... L(jn) e^{tn F(Jn)} x`,
/// where `F(J)` sums one-body generators off `J = (j1..jk)` and `L(jk)` sums
/// `Lambda2(i, jk)` over `i` off `J_{k-1}` and `i != jk`.
fn chain_apply(dy: &Dynamics, js: &[usize], s: usize, t: f64, x: &[f64], gl: &GaussLegendre) -> Vec<f64> {
    fn level(dy: &Dynamics, js: &[usize], s: usize, k: usize, upper: f64, x: &[f64], gl: &GaussLegendre) -> Vec<f64> {
        let free: Vec<usize> = (0..s).filter(|l| !js[..k].contains(l)).collect();
        let flow = |tau: f64, y: &[f64]| {
            dy.apply_to_factors(&dy.one_body_semigroup(tau, Kind::Observable), &free, s, y)
        };
        if k == js.len() {
            return flow(upper, x);
        }
        let j = js[k];
        let l2 = dy.two_body(Kind::Observable);
        let states = dy.states();
        let mut acc = vec![0.0; x.len()];
        for (tau, w) in gl.on(0.0, upper) {
            let inner = level(dy, js, s, k + 1, tau, x, gl);
            let mut coupled = vec![0.0; x.len()];
            for i in free.iter().filter(|i| **i != j) {
                apply_lifted(l2, states, &[*i, j], s, &inner, &mut coupled, 1.0);
            }
            add_into(&mut acc, &flow(upper - tau, &coupled), w);
        }
        acc
    }
    level(dy, js, s, 0, t, x, gl)
}

/// Limit operator of the scaled cumulant with removed set `removed`, summed
/// over all orderings of `removed`, applied to `x` on `s` factors.
pub fn limit_cumulant_apply(
    dy: &Dynamics,
    s: usize,
    removed: &[usize],
    t: f64,
    x: &[f64],
    settings: &LimitSettings,
) -> Result<Vec<f64>> {
    dy.space().check_order(s)?;
    let n = removed.len();
    if n >= s.max(1) && n > 0 {
        return Err(Error::Domain(format!("cannot remove {n} of {s} arguments")));
    }
    settings.check_levels(n)?;
    if x.len() != dy.space().dim(s) {
        return Err(Error::Structure("vector does not live on s factors".into()));
    }
    let gl = GaussLegendre::new(settings.quad_order)?;
    let perms = permutations(n);
    let parts: Vec<Vec<f64>> = perms
        .par_iter()
        .map(|p| {
            let js: Vec<usize> = p.iter().map(|i| removed[*i]).collect();
            chain_apply(dy, &js, s, t, x, &gl)
        })
        .collect();
    let mut out = vec![0.0; x.len()];
    for p in &parts {
        add_into(&mut out, p, 1.0);
    }
    Ok(out)
}

/// Dense form of [`limit_cumulant_apply`] on `K^s`.
pub fn limit_cumulant_integral(
    dy: &Dynamics,
    s: usize,
    removed: &[usize],
    t: f64,
    settings: &LimitSettings,
) -> Result<DMatrix<f64>> {
    let dim = dy.space().dim(s);
    check_cap("dense limit operator dimension", dim, DENSE_LIMIT)?;
    let mut m = DMatrix::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    for c in 0..dim {
        e[c] = 1.0;
        let col = limit_cumulant_apply(dy, s, removed, t, &e, settings)?;
        m.column_mut(c).copy_from_slice(&col);
        e[c] = 0.0;
    }
    Ok(m)
}

/// Component `s` of `sum_n sum_{|X| = n} eps^{-n} A_{1+n}(t, {Y \ X}, X) b_{s-n}`.
pub fn scaled_expansion_component(dy: &Dynamics, b: &SequenceVector, t: f64, eps: f64, s: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; dy.space().dim(s)];
    for n in 0..s {
        for x in k_subsets(s, n) {
            let spec = ClusterSpec::removing(s, &x)?;
            let lifted = b.component(s - n).embed(s, spec.cluster())?;
            let y = cumulant_apply(dy, t, eps, &spec, Kind::Observable, lifted.values())?;
            add_into(&mut acc, &y, eps.powi(-(n as i32)));
        }
    }
    Ok(acc)
}

/// Component `s` of the mean-field limit of the scaled expansion.
pub fn limit_expansion_component(
    dy: &Dynamics,
    b: &SequenceVector,
    t: f64,
    s: usize,
    settings: &LimitSettings,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; dy.space().dim(s)];
    for n in 0..s {
        for x in k_subsets(s, n) {
            let keep: Vec<usize> = (0..s).filter(|i| !x.contains(i)).collect();
            let lifted = b.component(s - n).embed(s, &keep)?;
            let y = limit_cumulant_apply(dy, s, &x, t, lifted.values(), settings)?;
            add_into(&mut acc, &y, 1.0);
        }
    }
    Ok(acc)
}

/// Sup-norm distance between the scaled finite-`eps` expansion and its limit.
pub fn scaled_expansion_error(
    dy: &Dynamics,
    b: &SequenceVector,
    t: f64,
    eps: f64,
    s: usize,
    settings: &LimitSettings,
) -> Result<f64> {
    let a = scaled_expansion_component(dy, b, t, eps, s)?;
    let l = limit_expansion_component(dy, b, t, s, settings)?;
    Ok(a.iter().zip(&l).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// `|e^{t Lambda_s(eps)} b - prod_j e^{t Lambda1(j)} b|_inf`.
pub fn kato_error(dy: &Dynamics, b: &TensorFunction, t: f64, eps: f64) -> Result<f64> {
    let s = b.order();
    let full = dy.evolve_vector(s, t, eps, Kind::Observable, InteractionMask::FULL, b.values())?;
    let free = dy.apply_each_factor(&dy.one_body_semigroup(t, Kind::Observable), s, b.values());
    Ok(full.iter().zip(&free).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

fn flatten(seq: &SequenceVector) -> Vec<f64> {
    seq.components().iter().flat_map(|c| c.values().iter().copied()).collect()
}

fn unflatten(like: &SequenceVector, y: &[f64]) -> SequenceVector {
    let mut out = like.clone();
    let mut offset = 0;
    for s in 0..=like.max_order() {
        let c = out.component_mut(s).values_mut();
        let len = c.len();
        c.copy_from_slice(&y[offset..offset + len]);
        offset += len;
    }
    out
}

/// Classical RK4 from `t0` to `t1`, doubling the step count until two
/// successive solutions differ by less than `tol`. Returns the solution and
/// the accepted step count.
pub fn rk4_converged(
    rhs: impl Fn(f64, &[f64]) -> Vec<f64>,
    t0: f64,
    t1: f64,
    y0: &[f64],
    tol: f64,
    max_halvings: usize,
) -> Result<(Vec<f64>, usize)> {
    let solve = |steps: usize| {
        let h = (t1 - t0) / steps as f64;
        let mut y = y0.to_vec();
        let mut tmp = vec![0.0; y.len()];
        for k in 0..steps {
            let t = t0 + k as f64 * h;
            let k1 = rhs(t, &y);
            tmp.iter_mut().zip(&y).zip(&k1).for_each(|((o, a), b)| *o = a + 0.5 * h * b);
            let k2 = rhs(t + 0.5 * h, &tmp);
            tmp.iter_mut().zip(&y).zip(&k2).for_each(|((o, a), b)| *o = a + 0.5 * h * b);
            let k3 = rhs(t + 0.5 * h, &tmp);
            tmp.iter_mut().zip(&y).zip(&k3).for_each(|((o, a), b)| *o = a + h * b);
            let k4 = rhs(t + h, &tmp);
            for i in 0..y.len() {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    };
    if t1 == t0 {
        return Ok((y0.to_vec(), 0));
    }
    let mut steps = ((t1 - t0).abs() * 16.0).ceil().max(4.0) as usize;
    let mut prev = solve(steps);
    for _ in 0..max_halvings {
        steps *= 2;
        let next = solve(steps);
        let change = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < tol {
            return Ok((next, steps));
        }
        prev = next;
    }
    Err(Error::Domain(format!(
        "RK4 did not reach tolerance {tol:e} within {steps} steps"
    )))
}

/// Right-hand side of the limit hierarchy for observables:
/// `sum_j Lambda1(j) b_s + sum_{j1 != j2} Lambda2(j1, j2) b_{s-1}` (`j2` omitted).
pub fn dual_vlasov_rhs(dy: &Dynamics, b: &SequenceVector) -> Result<SequenceVector> {
    let k = dy.states();
    let mut out = SequenceVector::zeros(k, Kind::Observable, b.max_order(), b.norm_param());
    let l2 = dy.two_body(Kind::Observable);
    for s in 1..=b.max_order() {
        let mut v = dy.apply_generator(s, 0.0, Kind::Observable, InteractionMask::ONE_BODY, b.component(s).values());
        for j2 in 0..s {
            let keep: Vec<usize> = (0..s).filter(|i| *i != j2).collect();
            let lifted = b.component(s - 1).embed(s, &keep)?;
            for j1 in keep {
                apply_lifted(l2, k, &[j1, j2], s, lifted.values(), &mut v, 1.0);
            }
        }
        out.set_component(s, TensorFunction::from_values(k, s, Kind::Observable, v)?)?;
    }
    Ok(out)
}

/// Limit marginal observables at time `t` by RK4 on the limit hierarchy.
pub fn dual_vlasov_evolve(dy: &Dynamics, b0: &SequenceVector, t: f64, settings: &LimitSettings) -> Result<SequenceVector> {
    if b0.kind() != Kind::Observable {
        return Err(Error::KindMismatch {
            expected: "observable",
            found: b0.kind().name(),
        });
    }
    dy.space().check_order(b0.max_order())?;
    let rhs = |_: f64, y: &[f64]| flatten(&dual_vlasov_rhs(dy, &unflatten(b0, y)).expect("validated shapes"));
    let (y, _) = rk4_converged(rhs, 0.0, t, &flatten(b0), settings.ode_tol, settings.max_halvings)?;
    Ok(unflatten(b0, &y))
}

/// Limit marginal observables at time `t` by the iterated-integral expansion.
pub fn limit_dual_evolve(dy: &Dynamics, b0: &SequenceVector, t: f64, settings: &LimitSettings) -> Result<SequenceVector> {
    let mut out = b0.clone();
    for s in 1..=b0.max_order() {
        let v = limit_expansion_component(dy, b0, t, s, settings)?;
        out.set_component(s, TensorFunction::from_values(dy.states(), s, Kind::Observable, v)?)?;
    }
    Ok(out)
}

/// Right-hand side of the limit hierarchy for states:
/// `sum_i Lambda*1(i) f_s + sum_{i <= s} int Lambda*2(i, s+1) f_{s+1}`.
pub fn state_vlasov_rhs(dy: &Dynamics, f: &SequenceVector) -> Result<SequenceVector> {
    let k = dy.states();
    let top = f.max_order();
    let mut out = SequenceVector::zeros(k, Kind::State, top, f.norm_param());
    let l2 = dy.two_body(Kind::State);
    for s in 1..=top {
        let mut v = dy.apply_generator(s, 0.0, Kind::State, InteractionMask::ONE_BODY, f.component(s).values());
        if s < top {
            let src = f.component(s + 1).values();
            let mut acc = vec![0.0; src.len()];
            for i in 0..s {
                apply_lifted(l2, k, &[i, s], s + 1, src, &mut acc, 1.0);
            }
            let red = TensorFunction::from_values(k, s + 1, Kind::State, acc)?.integrate_last(dy.space().weights())?;
            add_into(&mut v, red.values(), 1.0);
        }
        out.set_component(s, TensorFunction::from_values(k, s, Kind::State, v)?)?;
    }
    Ok(out)
}

/// Limit marginal distributions at time `t`, with `f = 0` above the
/// sequence's top order.
pub fn state_vlasov_hierarchy_evolve(
    dy: &Dynamics,
    f0: &SequenceVector,
    t: f64,
    settings: &LimitSettings,
) -> Result<SequenceVector> {
    if f0.kind() != Kind::State {
        return Err(Error::KindMismatch {
            expected: "state",
            found: f0.kind().name(),
        });
    }
    dy.space().check_order(f0.max_order())?;
    let rhs = |_: f64, y: &[f64]| flatten(&state_vlasov_rhs(dy, &unflatten(f0, y)).expect("validated shapes"));
    let (y, _) = rk4_converged(rhs, 0.0, t, &flatten(f0), settings.ode_tol, settings.max_halvings)?;
    Ok(unflatten(f0, &y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonnegativityReport {
    pub min_value: f64,
    pub negative_entries: usize,
    pub nonnegative: bool,
}

/// A one-particle density dressed by correlation factors:
/// `f_s = g_s(u_1..u_s) prod_i f1(u_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedInitialState {
    f1: TensorFunction,
    g: Vec<TensorFunction>,
}

impl CorrelatedInitialState {
    /// `g[s]` is the order-`s` factor for `s = 0..=N`; `g[0]` and `g[1]` must be 1.
    pub fn new(f1: TensorFunction, g: Vec<TensorFunction>, space: &EntitySpace) -> Result<Self> {
        if f1.order() != 1 || f1.kind() != Kind::State || f1.states() != space.size() {
            return Err(Error::Structure("f1 must be an order-1 state function on the space".into()));
        }
        let mass = f1.integrate_all(space);
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("f1 has mass {mass}, expected 1")));
        }
        if g.len() < 2 {
            return Err(Error::Structure("need correlation factors up to order 1 at least".into()));
        }
        for (s, gs) in g.iter().enumerate() {
            if gs.order() != s || gs.states() != space.size() {
                return Err(Error::Structure(format!("correlation factor {s} has the wrong shape")));
            }
            if gs.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("correlation factor {s} is not finite")));
            }
            if s <= 1 && gs.values().iter().any(|v| *v != 1.0) {
                return Err(Error::Domain(format!("correlation factor {s} must be identically 1")));
            }
            if !gs.is_symmetric(1e-12) {
                return Err(Error::Domain(format!("correlation factor {s} is not symmetric")));
            }
        }
        Ok(Self { f1, g })
    }

    /// `g = 1` up to order `truncation`.
    pub fn chaotic(f1: TensorFunction, truncation: usize, space: &EntitySpace) -> Result<Self> {
        let k = space.size();
        let g = (0..=truncation).map(|s| TensorFunction::constant(k, s, Kind::State, 1.0)).collect();
        Self::new(f1, g, space)
    }

    /// Correlation factors generated by a pair factor `g2`: the correlation
    /// part `g2 - 1` is the only connected contribution, and higher factors
    /// follow from the cluster relation between connected and full factors.
    pub fn from_pair_correlation(
        f1: TensorFunction,
        g2: &TensorFunction,
        truncation: usize,
        space: &EntitySpace,
    ) -> Result<Self> {
        let k = space.size();
        if truncation < 2 {
            return Err(Error::Domain("a pair correlation needs truncation >= 2".into()));
        }
        let mut connected = SequenceVector::zeros(k, Kind::State, truncation, 1.0);
        connected.component_mut(0).values_mut()[0] = 1.0;
        connected.set_component(1, TensorFunction::constant(k, 1, Kind::State, 1.0))?;
        let mut c2 = g2.clone().with_kind(Kind::State);
        c2.values_mut().iter_mut().for_each(|v| *v -= 1.0);
        connected.set_component(2, c2)?;
        let full = correlation_dressing_transform(&connected, Direction::Forward)?;
        Self::new(f1, full.components().to_vec(), space)
    }

    pub fn truncation(&self) -> usize {
        self.g.len() - 1
    }

    pub fn f1(&self) -> &TensorFunction {
        &self.f1
    }

    pub fn g(&self, s: usize) -> &TensorFunction {
        &self.g[s]
    }

    /// `g_s prod f1` on `s` factors.
    pub fn component(&self, s: usize) -> TensorFunction {
        TensorFunction::power(Kind::State, self.f1.values(), s).hadamard(&self.g[s])
    }

    pub fn assemble(&self) -> SequenceVector {
        let comps = (0..=self.truncation()).map(|s| self.component(s)).collect();
        SequenceVector::new(Kind::State, 1.0, comps).expect("consistent shapes")
    }

    pub fn nonnegativity(&self) -> NonnegativityReport {
        let seq = self.assemble();
        let mut min_value = f64::INFINITY;
        let mut negative_entries = 0;
        for c in seq.components() {
            for v in c.values() {
                min_value = min_value.min(*v);
                negative_entries += usize::from(*v < 0.0);
            }
        }
        NonnegativityReport {
            min_value,
            negative_entries,
            nonnegative: negative_entries == 0,
        }
    }
}

/// Partial sum of the one-particle series with per-term magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Series {
    pub f1: TensorFunction,
    pub term_norms: Vec<f64>,
    /// Sup-norm of the last computed term.
    pub tail_estimate: f64,
}

/// Term `n` of the one-particle series: an `n`-fold time-ordered integral of
/// one-body flows and couplings `sum_i Lambda*2(i, k+1)`, applied to
/// `g_{1+n} prod f1` and integrated over entities `2..n+1`.
fn f1_series_term(dy: &Dynamics, init: &CorrelatedInitialState, t: f64, n: usize, gl: &GaussLegendre) -> Result<Vec<f64>> {
    fn level(dy: &Dynamics, k: usize, n: usize, upper: f64, h: &[f64], gl: &GaussLegendre) -> Vec<f64> {
        let flow = |tau: f64, m: usize, y: &[f64]| dy.apply_each_factor(&dy.one_body_semigroup(tau, Kind::State), m, y);
        if k == n {
            return flow(upper, n + 1, h);
        }
        let states = dy.states();
        let l2 = dy.two_body(Kind::State);
        let w = dy.space().weights();
        let dim = states.pow(k as u32 + 1);
        let mut acc = vec![0.0; dim];
        for (tau, wt) in gl.on(0.0, upper) {
            let inner = level(dy, k + 1, n, tau, h, gl);
            let mut coupled = vec![0.0; inner.len()];
            for i in 0..=k {
                apply_lifted(l2, states, &[i, k + 1], k + 2, &inner, &mut coupled, 1.0);
            }
            let reduced: Vec<f64> = coupled
                .chunks(states)
                .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
                .collect();
            add_into(&mut acc, &flow(upper - tau, k + 1, &reduced), wt);
        }
        acc
    }
    let h = init.component(n + 1);
    Ok(level(dy, 0, n, t, h.values(), gl))
}

/// One-particle density of the limit dynamics as a partial sum of `n_max + 1`
/// terms of its iterated-integral series.
pub fn f1_series(
    dy: &Dynamics,
    init: &CorrelatedInitialState,
    t: f64,
    n_max: usize,
    settings: &LimitSettings,
) -> Result<F1Series> {
    if n_max + 1 > init.truncation() {
        return Err(Error::Domain(format!(
            "series order {n_max} needs correlation factors up to order {}",
            n_max + 1
        )));
    }
    settings.check_levels(n_max)?;
    dy.space().check_order(n_max + 1)?;
    let gl = GaussLegendre::new(settings.quad_order)?;
    let terms = (0..=n_max)
        .into_par_iter()
        .map(|n| f1_series_term(dy, init, t, n, &gl))
        .collect::<Result<Vec<_>>>()?;
    let mut f1 = vec![0.0; dy.states()];
    let mut term_norms = Vec::with_capacity(terms.len());
    for term in &terms {
        add_into(&mut f1, term, 1.0);
        term_norms.push(sup(term));
    }
    Ok(F1Series {
        f1: TensorFunction::from_values(dy.states(), 1, Kind::State, f1)?,
        tail_estimate: *term_norms.last().expect("at least one term"),
        term_norms,
    })
}

/// One-particle density of the limit dynamics truncated at the initial
/// state's top order: the series when its nesting depth is within the
/// quadrature limit, the state hierarchy otherwise.
pub fn limit_f1(
    dy: &Dynamics,
    init: &CorrelatedInitialState,
    t: f64,
    settings: &LimitSettings,
) -> Result<TensorFunction> {
    let n_max = init.truncation() - 1;
    if n_max <= settings.max_levels {
        Ok(f1_series(dy, init, t, n_max, settings)?.f1)
    } else {
        Ok(state_vlasov_hierarchy_evolve(dy, &init.assemble(), t, settings)?
            .component(1)
            .clone())
    }
}

/// Reading of the correlation dressing in the kinetic equation:
/// `D2(t) = (E(t) x E(t)) g2 (E(s t) x E(s t))` with `E(t) = e^{t Lambda*1}`
/// and `s = +1` (literal forward) or `s = -1` (inverse dressed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dressing {
    LiteralForward,
    InverseDressed,
}

impl Dressing {
    pub fn sigma(self) -> f64 {
        match self {
            Dressing::LiteralForward => 1.0,
            Dressing::InverseDressed => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dressing::LiteralForward => "literal-forward",
            Dressing::InverseDressed => "inverse-dressed",
        }
    }
}

fn one_body_flow(dy: &Dynamics, tau: f64) -> Result<DMatrix<f64>> {
    let e = expm(&(dy.one_body(Kind::State) * tau));
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("one-body evolution at time {tau} is not finite")));
    }
    Ok(e)
}

/// `D_k(t) h = E(t)^{(x)k} [ g_k . E(sigma t)^{(x)k} h ]`.
pub fn dressing_apply(
    dy: &Dynamics,
    g: &TensorFunction,
    t: f64,
    dressing: Dressing,
    h: &[f64],
) -> Result<Vec<f64>> {
    let k = g.order();
    let inner = one_body_flow(dy, dressing.sigma() * t)?;
    let outer = one_body_flow(dy, t)?;
    let mut y = dy.apply_each_factor(&inner, k, h);
    y.iter_mut().zip(g.values()).for_each(|(a, b)| *a *= b);
    Ok(dy.apply_each_factor(&outer, k, &y))
}

/// Right-hand side of the kinetic equation at time `tau`.
pub fn vlasov_rhs(
    dy: &Dynamics,
    g2: &TensorFunction,
    tau: f64,
    dressing: Dressing,
    f1: &[f64],
) -> Result<Vec<f64>> {
    let k = dy.states();
    let mut out = dy.apply_generator(1, 0.0, Kind::State, InteractionMask::ONE_BODY, f1);
    let pair = TensorFunction::power(Kind::State, f1, 2);
    let dressed = dressing_apply(dy, g2, tau, dressing, pair.values())?;
    let mut coupled = vec![0.0; dressed.len()];
    apply_lifted(dy.two_body(Kind::State), k, &[0, 1], 2, &dressed, &mut coupled, 1.0);
    let w = dy.space().weights();
    for (o, row) in out.iter_mut().zip(coupled.chunks(k)) {
        *o += row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlasovTrajectory {
    pub dressing: Dressing,
    pub times: Vec<f64>,
    pub f1: Vec<TensorFunction>,
    /// Accepted RK4 step count for each interval of the time grid.
    pub steps: Vec<usize>,
}

impl VlasovTrajectory {
    /// Largest `|sum w f1(t) - 1|` along the trajectory.
    pub fn mass_defect(&self, space: &EntitySpace) -> f64 {
        self.f1
            .iter()
            .map(|f| (f.integrate_all(space) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Integrates the kinetic equation with initial correlations over `times`
/// (nondecreasing, starting at or after 0).
pub fn vlasov_solve(
    dy: &Dynamics,
    init: &CorrelatedInitialState,
    times: &[f64],
    dressing: Dressing,
    settings: &LimitSettings,
) -> Result<VlasovTrajectory> {
    if init.truncation() < 2 {
        return Err(Error::Domain("the kinetic equation needs a pair correlation factor".into()));
    }
    if times.iter().any(|t| *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("time grid must be nonnegative and nondecreasing".into()));
    }
    one_body_flow(dy, dressing.sigma() * times.last().copied().unwrap_or(0.0))?;
    let g2 = init.g(2);
    let rhs = |tau: f64, y: &[f64]| vlasov_rhs(dy, g2, tau, dressing, y).expect("finite flows checked");
    let mut y = init.f1().values().to_vec();
    let mut prev = 0.0;
    let mut traj = VlasovTrajectory {
        dressing,
        times: times.to_vec(),
        f1: Vec::with_capacity(times.len()),
        steps: Vec::with_capacity(times.len()),
    };
    for &t in times {
        let (next, steps) = rk4_converged(rhs, prev, t, &y, settings.ode_tol, settings.max_halvings)?;
        y = next;
        prev = t;
        traj.f1.push(TensorFunction::from_values(dy.states(), 1, Kind::State, y.clone())?);
        traj.steps.push(steps);
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjudicationReport {
    pub t: f64,
    pub residual_literal_forward: f64,
    pub residual_inverse_dressed: f64,
    pub selected: Dressing,
    pub tolerance: f64,
    pub passed: bool,
}

/// Without two-body rates the pair density evolves exactly as
/// `(E(t) x E(t)) (g2 f1 f1)`. Compares that with `D2(t)[f1(t) x f1(t)]`,
/// `f1(t) = E(t) f1`, under both readings and selects the one that matches.
pub fn adjudicate_dressing(
    dy: &Dynamics,
    init: &CorrelatedInitialState,
    t: f64,
    tolerance: f64,
) -> Result<AdjudicationReport> {
    let free = Dynamics::new(dy.space().clone(), dy.kernels().without_two_body())?;
    let exact = free.apply_each_factor(&one_body_flow(&free, t)?, 2, init.component(2).values());
    let f1t = one_body_flow(&free, t)? * init.f1().to_vector();
    let pair = TensorFunction::power(Kind::State, f1t.as_slice(), 2);
    let residual = |d: Dressing| -> Result<f64> {
        let got = dressing_apply(&free, init.g(2), t, d, pair.values())?;
        Ok(got.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    };
    let lit = residual(Dressing::LiteralForward)?;
    let inv = residual(Dressing::InverseDressed)?;
    let selected = if inv <= lit {
        Dressing::InverseDressed
    } else {
        Dressing::LiteralForward
    };
    Ok(AdjudicationReport {
        t,
        residual_literal_forward: lit,
        residual_inverse_dressed: inv,
        selected,
        tolerance,
        passed: lit.min(inv) <= tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationCheck {
    pub k: usize,
    pub t: f64,
    pub dressing: Dressing,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Compares the mean value of the limit `k`-ary observable in the correlated
/// initial state with `(1/k!) int b_k D_k(t)[prod f1(t)]`, `f1(t)` from the
/// one-particle series. For `k = 1` the right side is `int b_1 f1(t)`.
/// `b_k` is symmetrized first.
pub fn correlations_propagation_check(
    dy: &Dynamics,
    bk: &TensorFunction,
    init: &CorrelatedInitialState,
    t: f64,
    dressing: Dressing,
    settings: &LimitSettings,
) -> Result<PropagationCheck> {
    let k = bk.order();
    let top = init.truncation();
    if k == 0 || k > top {
        return Err(Error::Domain(format!("observable order {k} outside 1..={top}")));
    }
    let mut b0 = SequenceVector::zeros(dy.states(), Kind::Observable, top, 0.3);
    let bk = bk.symmetrize().with_kind(Kind::Observable);
    b0.set_component(k, bk.clone())?;
    let bt = dual_vlasov_evolve(dy, &b0, t, settings)?;
    let lhs = crate::state_space::pair(&bt, &init.assemble(), dy.space(), false)?;

    let f1t = limit_f1(dy, init, t, settings)?;
    let prod = TensorFunction::power(Kind::State, f1t.values(), k);
    let dressed = if k == 1 {
        prod.into_values()
    } else {
        dressing_apply(dy, init.g(k), t, dressing, prod.values())?
    };
    let rhs = bk
        .values()
        .iter()
        .zip(&dressed)
        .zip(dy.space().multi_weights(k))
        .map(|((b, d), w)| b * d * w)
        .sum::<f64>()
        / factorial(k);
    Ok(PropagationCheck {
        k,
        t,
        dressing,
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// Reference setting for the kinetic checks: two states with uniform
/// weights, uniform-redistribution kernels with rates `1` and `0.1`, a random
/// positive one-particle density and a random symmetric pair factor with
/// values in `[0.85, 1.15]`.
pub fn reference_kinetic_scenario(seed: u64, truncation: usize) -> Result<(Dynamics, CorrelatedInitialState)> {
    use rand::{Rng, SeedableRng};
    let space = EntitySpace::uniform(1, 2)?;
    let kernels = crate::dynamics::KernelSet::uniform_redistribution(&space, 1.0, 0.1);
    let dy = Dynamics::new(space.clone(), kernels)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..2).map(|_| rng.random_range(0.5..1.5)).collect();
    let mass: f64 = raw.iter().zip(space.weights()).map(|(a, b)| a * b).sum();
    let f1 = TensorFunction::from_values(2, 1, Kind::State, raw.iter().map(|v| v / mass).collect())?;
    let g2 = TensorFunction::from_fn(2, 2, Kind::State, |_| 1.0 + rng.random_range(-0.15..0.15)).symmetrize();
    let init = CorrelatedInitialState::from_pair_correlation(f1, &g2, truncation, &space)?;
    Ok((dy, init))
}
