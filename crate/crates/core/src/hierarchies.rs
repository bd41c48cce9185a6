//! Cumulants of evolution groups, the evolution of marginal observables and
//! marginal states, creation/annihilation operators and hierarchy generators.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::combinatorics::{k_subsets, ClusterSpec};
use crate::dynamics::{apply_lifted, Dynamics, InteractionMask};
use crate::error::{check_cap, Error, Result};
use crate::expm::DENSE_LIMIT;
use crate::state_space::{Kind, SequenceVector, TensorFunction};

/// A realized cumulant `A_{1+n}(t, {Y \ X}, X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantOperator {
    pub spec: ClusterSpec,
    pub t: f64,
    pub side: Kind,
    pub matrix: DMatrix<f64>,
}

impl CumulantOperator {
    /// `1 + |X|`.
    pub fn order(&self) -> usize {
        self.spec.pseudo_len()
    }
}

fn check_kind(seq: &SequenceVector, expected: Kind) -> Result<()> {
    if seq.kind() != expected {
        return Err(Error::KindMismatch {
            expected: expected.name(),
            found: seq.kind().name(),
        });
    }
    Ok(())
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// Dense cumulant on the `spec.ground()` factors.
pub fn cumulant(
    dy: &Dynamics,
    t: f64,
    eps: f64,
    spec: &ClusterSpec,
    side: Kind,
) -> Result<CumulantOperator> {
    let s = spec.ground();
    dy.space().check_order(s)?;
    let dim = dy.space().dim(s);
    check_cap("dense cumulant dimension", dim, DENSE_LIMIT)?;
    let parts = spec.declusterized_partitions(dy.space().caps().max_partition_elements)?;
    let terms = parts
        .par_iter()
        .map(|(w, blocks)| {
            let mut prod = DMatrix::<f64>::identity(dim, dim);
            for b in blocks {
                let g = dy.lifted_semigroup(t, eps, side, InteractionMask::FULL, b, s)?;
                prod = &*g * prod;
            }
            Ok(prod * *w)
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = terms
        .into_iter()
        .fold(DMatrix::zeros(dim, dim), |acc, m| acc + m);
    Ok(CumulantOperator {
        spec: spec.clone(),
        t,
        side,
        matrix,
    })
}

/// Cumulant applied to a vector on `spec.ground()` factors, without forming
/// operators on the full space.
pub fn cumulant_apply(
    dy: &Dynamics,
    t: f64,
    eps: f64,
    spec: &ClusterSpec,
    side: Kind,
    x: &[f64],
) -> Result<Vec<f64>> {
    let s = spec.ground();
    dy.space().check_order(s)?;
    let k = dy.states();
    if x.len() != dy.space().dim(s) {
        return Err(Error::Structure(format!(
            "vector of length {} does not live on {s} factors",
            x.len()
        )));
    }
    let parts = spec.declusterized_partitions(dy.space().caps().max_partition_elements)?;
    let terms = parts
        .par_iter()
        .map(|(w, blocks)| {
            let mut y = x.to_vec();
            for b in blocks {
                let g = dy.semigroup(b.len(), t, eps, side, InteractionMask::FULL)?;
                let mut next = vec![0.0; y.len()];
                apply_lifted(&g, k, b, s, &y, &mut next, 1.0);
                y = next;
            }
            Ok((*w, y))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![0.0; x.len()];
    for (w, y) in terms {
        out.iter_mut().zip(&y).for_each(|(o, v)| *o += w * v);
    }
    Ok(out)
}

/// `(U(t) b)_s = sum_{n<s} sum_{|X| = n} A_{1+n}(t, {Y \ X}, X) b_{s-n}`, where
/// `b_{s-n}` is placed on `Y \ X` and is constant in the slots `X`.
pub fn dual_bbgky_evolve(dy: &Dynamics, b: &SequenceVector, t: f64, eps: f64) -> Result<SequenceVector> {
    check_kind(b, Kind::Observable)?;
    let smax = b.max_order();
    dy.space().check_order(smax)?;
    let mut out = SequenceVector::zeros(dy.states(), Kind::Observable, smax, b.norm_param());
    out.set_component(0, b.component(0).clone())?;
    for s in 1..=smax {
        let mut acc = vec![0.0; dy.space().dim(s)];
        for n in 0..s {
            for x in k_subsets(s, n) {
                let spec = ClusterSpec::removing(s, &x)?;
                let lifted = b.component(s - n).embed(s, spec.cluster())?;
                let y = cumulant_apply(dy, t, eps, &spec, Kind::Observable, lifted.values())?;
                acc.iter_mut().zip(&y).for_each(|(a, v)| *a += v);
            }
        }
        out.set_component(s, TensorFunction::from_values(dy.states(), s, Kind::Observable, acc)?)?;
    }
    Ok(out)
}

/// `(U*(t) f)_s = sum_{n <= N-s} 1/n! int A_{1+n}(t, {Y}, s..s+n) f_{s+n}`,
/// integrating the appended `n` arguments; `N` is the sequence's top order.
pub fn bbgky_evolve(dy: &Dynamics, f: &SequenceVector, t: f64, eps: f64) -> Result<SequenceVector> {
    check_kind(f, Kind::State)?;
    let top = f.max_order();
    dy.space().check_order(top)?;
    let w = dy.space().weights();
    let mut out = SequenceVector::zeros(dy.states(), Kind::State, top, f.norm_param());
    out.set_component(0, f.component(0).clone())?;
    for s in 1..=top {
        let mut acc = TensorFunction::zeros(dy.states(), s, Kind::State);
        for n in 0..=top - s {
            let spec = ClusterSpec::appending(s, n)?;
            let y = cumulant_apply(dy, t, eps, &spec, Kind::State, f.component(s + n).values())?;
            let mut y = TensorFunction::from_values(dy.states(), s + n, Kind::State, y)?;
            for _ in 0..n {
                y = y.integrate_last(w)?;
            }
            acc.add_scaled(&y, 1.0 / factorial(n));
        }
        out.set_component(s, acc)?;
    }
    Ok(out)
}

/// `(a+ b)_s = sum_j b_{s-1}` with argument `j` omitted; `(a+ b)_0 = 0`.
pub fn creation_op(b: &SequenceVector) -> SequenceVector {
    let k = b.states();
    let mut out = SequenceVector::zeros(k, b.kind(), b.max_order(), b.norm_param());
    for s in 1..=b.max_order() {
        let mut acc = TensorFunction::zeros(k, s, b.kind());
        for j in 0..s {
            let keep: Vec<usize> = (0..s).filter(|i| *i != j).collect();
            let lifted = b.component(s - 1).embed(s, &keep).expect("valid positions");
            acc.add_scaled(&lifted, 1.0);
        }
        out.set_component(s, acc).expect("matching shapes");
    }
    out
}

/// `(a f)_s = int f_{s+1} du_{s+1}`; the top component becomes zero.
pub fn annihilation_op(f: &SequenceVector, weights: &[f64]) -> SequenceVector {
    let k = f.states();
    let top = f.max_order();
    let mut out = SequenceVector::zeros(k, f.kind(), top, f.norm_param());
    for s in 0..top {
        let c = f.component(s + 1).integrate_last(weights).expect("order >= 1");
        out.set_component(s, c).expect("matching shapes");
    }
    out
}

/// `sum_k c^k (a+)^k / k!`, exact on truncated sequences.
pub fn exp_creation(b: &SequenceVector, c: f64) -> SequenceVector {
    exp_nilpotent(b, c, creation_op)
}

/// `sum_k c^k a^k / k!`, exact on truncated sequences.
pub fn exp_annihilation(f: &SequenceVector, weights: &[f64], c: f64) -> SequenceVector {
    exp_nilpotent(f, c, |x| annihilation_op(x, weights))
}

fn exp_nilpotent(x: &SequenceVector, c: f64, op: impl Fn(&SequenceVector) -> SequenceVector) -> SequenceVector {
    let mut acc = x.clone();
    let mut term = x.clone();
    for k in 1..=x.max_order() + 1 {
        term = op(&term).scaled(c / k as f64);
        acc.add_scaled(&term, 1.0);
    }
    acc
}

/// Componentwise `Lambda_s` (observables) or `Lambda*_s` (states).
pub fn lambda_sequence(dy: &Dynamics, x: &SequenceVector, eps: f64) -> Result<SequenceVector> {
    dy.space().check_order(x.max_order())?;
    let side = x.kind();
    let mut out = SequenceVector::zeros(x.states(), side, x.max_order(), x.norm_param());
    for s in 1..=x.max_order() {
        let v = dy.apply_generator(s, eps, side, InteractionMask::FULL, x.component(s).values());
        out.set_component(s, TensorFunction::from_values(x.states(), s, side, v)?)?;
    }
    Ok(out)
}

/// `(B b)_s = Lambda_s b_s + eps sum_j sum_{i != j} Lambda2(i, j) b_{s-1}`,
/// where `b_{s-1}` omits the partner argument `j`.
pub fn generator_b(dy: &Dynamics, b: &SequenceVector, eps: f64) -> Result<SequenceVector> {
    check_kind(b, Kind::Observable)?;
    let mut out = lambda_sequence(dy, b, eps)?;
    let k = dy.states();
    let l2 = dy.two_body(Kind::Observable);
    for s in 2..=b.max_order() {
        let target = out.component_mut(s).values_mut();
        for j in 0..s {
            let keep: Vec<usize> = (0..s).filter(|i| *i != j).collect();
            let lifted = b.component(s - 1).embed(s, &keep)?;
            for i in keep {
                apply_lifted(l2, k, &[i, j], s, lifted.values(), target, eps);
            }
        }
    }
    Ok(out)
}

/// `(B* f)_s = Lambda*_s f_s + eps sum_{i <= s} int Lambda*2(i, s+1) f_{s+1} du_{s+1}`.
pub fn generator_bstar(dy: &Dynamics, f: &SequenceVector, eps: f64) -> Result<SequenceVector> {
    check_kind(f, Kind::State)?;
    let mut out = lambda_sequence(dy, f, eps)?;
    let k = dy.states();
    let l2 = dy.two_body(Kind::State);
    for s in 1..f.max_order() {
        let src = f.component(s + 1).values();
        let mut acc = vec![0.0; src.len()];
        for i in 0..s {
            apply_lifted(l2, k, &[i, s], s + 1, src, &mut acc, eps);
        }
        let acc = TensorFunction::from_values(k, s + 1, Kind::State, acc)?
            .integrate_last(dy.space().weights())?;
        out.component_mut(s).add_scaled(&acc, 1.0);
    }
    Ok(out)
}

/// `e^{-a+} Lambda e^{a+} b`, which equals `B b` on truncated sequences.
pub fn conjugated_lambda(dy: &Dynamics, b: &SequenceVector, eps: f64) -> Result<SequenceVector> {
    check_kind(b, Kind::Observable)?;
    Ok(exp_creation(&lambda_sequence(dy, &exp_creation(b, 1.0), eps)?, -1.0))
}

/// `e^{a} Lambda* e^{-a} f`, which equals `B* f` on truncated sequences.
pub fn conjugated_lambda_star(dy: &Dynamics, f: &SequenceVector, eps: f64) -> Result<SequenceVector> {
    check_kind(f, Kind::State)?;
    let w = dy.space().weights();
    Ok(exp_annihilation(&lambda_sequence(dy, &exp_annihilation(f, w, -1.0), eps)?, w, 1.0))
}

/// `[[Lambda, a+], a+] b`.
pub fn double_commutator_creation(dy: &Dynamics, b: &SequenceVector, eps: f64) -> Result<SequenceVector> {
    let comm = |x: &SequenceVector| -> Result<SequenceVector> {
        let mut c = lambda_sequence(dy, &creation_op(x), eps)?;
        c.add_scaled(&creation_op(&lambda_sequence(dy, x, eps)?), -1.0);
        Ok(c)
    };
    let mut out = comm(&creation_op(b))?;
    out.add_scaled(&creation_op(&comm(b)?), -1.0);
    Ok(out)
}

/// `[a, [a, Lambda*]] f`.
pub fn double_commutator_annihilation(dy: &Dynamics, f: &SequenceVector, eps: f64) -> Result<SequenceVector> {
    let w = dy.space().weights();
    let comm = |x: &SequenceVector| -> Result<SequenceVector> {
        let mut c = annihilation_op(&lambda_sequence(dy, x, eps)?, w);
        c.add_scaled(&lambda_sequence(dy, &annihilation_op(x, w), eps)?, -1.0);
        Ok(c)
    };
    let mut out = annihilation_op(&comm(f)?, w);
    out.add_scaled(&comm(&annihilation_op(f, w))?, -1.0);
    Ok(out)
}

/// `e^2 / (1 - gamma e)`, the growth bound of the observable group in the
/// weighted sup-norm; `None` when `gamma e >= 1`.
pub fn dual_group_norm_bound(gamma: f64) -> Option<f64> {
    let e = std::f64::consts::E;
    (gamma * e < 1.0).then(|| e * e / (1.0 - gamma * e))
}

/// `n! e^{n+2}`, the sup-norm bound of a cumulant of order `1 + n`.
pub fn cumulant_norm_bound(n: usize) -> f64 {
    factorial(n) * std::f64::consts::E.powi(n as i32 + 2)
}
