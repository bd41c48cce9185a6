//! Discretized single-entity state space, tensor functions of several entity
//! states, sequences of such functions and the observable/state pairing.
//!
//! Multi-indices are stored row-major: for a tensor of order `n` over `K`
//! single-entity states, argument 1 is the most significant digit. A flat
//! single-entity index enumerates `(subpopulation, grid point)` pairs as
//! `j * grid_len + u`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_cap, Error, Result};

/// Resource limits applied before any dense allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub max_states: usize,
    pub max_order: usize,
    pub max_partition_elements: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_states: 8,
            max_order: 5,
            max_partition_elements: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Observable,
    State,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Observable => "observable",
            Kind::State => "state",
        }
    }
}

/// The finite space `J x U` of single-entity states with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EntitySpace {
    subpopulations: usize,
    grid: Vec<f64>,
    weights: Vec<f64>,
    caps: Caps,
}

impl EntitySpace {
    /// `grid_len` equispaced points in `[0, 1]` per subpopulation, each with
    /// weight `1 / grid_len`.
    pub fn uniform(subpopulations: usize, grid_len: usize) -> Result<Self> {
        if grid_len == 0 {
            return Err(Error::Domain("grid must contain at least one point".into()));
        }
        let grid = if grid_len == 1 {
            vec![0.0]
        } else {
            (0..grid_len)
                .map(|i| i as f64 / (grid_len - 1) as f64)
                .collect()
        };
        let weights = vec![1.0 / grid_len as f64; subpopulations * grid_len];
        Self::new(subpopulations, grid, weights)
    }

    /// `weights` has one entry per flat state, i.e. `subpopulations * grid.len()`.
    pub fn new(subpopulations: usize, grid: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::with_caps(subpopulations, grid, weights, Caps::default())
    }

    pub fn with_caps(
        subpopulations: usize,
        grid: Vec<f64>,
        weights: Vec<f64>,
        caps: Caps,
    ) -> Result<Self> {
        if subpopulations == 0 || grid.is_empty() {
            return Err(Error::Domain(
                "entity space needs at least one subpopulation and one grid point".into(),
            ));
        }
        let k = subpopulations * grid.len();
        check_cap("single-entity states", k, caps.max_states)?;
        if weights.len() != k {
            return Err(Error::Structure(format!(
                "expected {k} weights, got {}",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(Error::Domain(format!("weights must be positive, found {w}")));
        }
        Ok(Self {
            subpopulations,
            grid,
            weights,
            caps,
        })
    }

    pub fn set_caps(&mut self, caps: Caps) -> Result<()> {
        check_cap("single-entity states", self.size(), caps.max_states)?;
        self.caps = caps;
        Ok(())
    }

    pub fn caps(&self) -> Caps {
        self.caps
    }

    pub fn subpopulations(&self) -> usize {
        self.subpopulations
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Number of single-entity states `K`.
    pub fn size(&self) -> usize {
        self.subpopulations * self.grid.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn flat_index(&self, subpopulation: usize, grid_index: usize) -> usize {
        subpopulation * self.grid.len() + grid_index
    }

    /// Inverse of [`EntitySpace::flat_index`].
    pub fn split_index(&self, flat: usize) -> (usize, usize) {
        (flat / self.grid.len(), flat % self.grid.len())
    }

    /// Microscopic coordinate `u` of a flat state.
    pub fn point(&self, flat: usize) -> f64 {
        self.grid[flat % self.grid.len()]
    }

    pub fn dim(&self, order: usize) -> usize {
        self.size().pow(order as u32)
    }

    pub fn check_order(&self, order: usize) -> Result<()> {
        check_cap("tensor order", order, self.caps.max_order)
    }

    /// Product weights `w(u_1) ... w(u_n)` for every multi-index of order `n`.
    pub fn multi_weights(&self, order: usize) -> Vec<f64> {
        let mut out = vec![1.0];
        for _ in 0..order {
            out = out
                .iter()
                .flat_map(|a| self.weights.iter().map(move |w| a * w))
                .collect();
        }
        out
    }
}

/// Decode a flat row-major multi-index into `digits`.
pub fn decode_index(mut flat: usize, states: usize, digits: &mut [usize]) {
    for d in digits.iter_mut().rev() {
        *d = flat % states;
        flat /= states;
    }
}

pub fn encode_index(digits: &[usize], states: usize) -> usize {
    digits.iter().fold(0, |acc, d| acc * states + d)
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut out = vec![perm.clone()];
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            out.push(perm.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// A function of `order` entity states, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFunction {
    order: usize,
    states: usize,
    kind: Kind,
    values: Vec<f64>,
}

impl TensorFunction {
    pub fn zeros(states: usize, order: usize, kind: Kind) -> Self {
        Self {
            order,
            states,
            kind,
            values: vec![0.0; states.pow(order as u32)],
        }
    }

    pub fn constant(states: usize, order: usize, kind: Kind, c: f64) -> Self {
        Self {
            order,
            states,
            kind,
            values: vec![c; states.pow(order as u32)],
        }
    }

    pub fn from_values(states: usize, order: usize, kind: Kind, values: Vec<f64>) -> Result<Self> {
        let expected = states.pow(order as u32);
        if values.len() != expected {
            return Err(Error::Structure(format!(
                "order-{order} tensor over {states} states needs {expected} values, got {}",
                values.len()
            )));
        }
        if kind == Kind::State && values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("state components must be finite reals".into()));
        }
        Ok(Self {
            order,
            states,
            kind,
            values,
        })
    }

    /// Like [`TensorFunction::from_values`] but rejects non-symmetric input.
    pub fn symmetric(states: usize, order: usize, kind: Kind, values: Vec<f64>) -> Result<Self> {
        let t = Self::from_values(states, order, kind, values)?;
        if !t.is_symmetric(1e-12) {
            return Err(Error::Structure(format!(
                "order-{order} component is not permutation symmetric"
            )));
        }
        Ok(t)
    }

    pub fn from_fn(
        states: usize,
        order: usize,
        kind: Kind,
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Self {
        let dim = states.pow(order as u32);
        let mut digits = vec![0; order];
        let values = (0..dim)
            .map(|flat| {
                decode_index(flat, states, &mut digits);
                f(&digits)
            })
            .collect();
        Self {
            order,
            states,
            kind,
            values,
        }
    }

    /// `v_1(u_1) v_2(u_2) ... v_n(u_n)`.
    pub fn product(kind: Kind, factors: &[&[f64]]) -> Result<Self> {
        let states = factors.first().map(|f| f.len()).unwrap_or(1);
        if factors.iter().any(|f| f.len() != states) {
            return Err(Error::Structure("product factors differ in length".into()));
        }
        let mut values = vec![1.0];
        for f in factors {
            values = values
                .iter()
                .flat_map(|a| f.iter().map(move |b| a * b))
                .collect();
        }
        Ok(Self {
            order: factors.len(),
            states,
            kind,
            values,
        })
    }

    /// `v(u_1) ... v(u_n)`.
    pub fn power(kind: Kind, v: &[f64], order: usize) -> Self {
        let factors = vec![v; order];
        let mut t = Self::product(kind, &factors).expect("equal-length factors");
        t.states = v.len();
        t
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn with_kind(mut self, kind: Kind) -> Self {
        self.kind = kind;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, digits: &[usize]) -> f64 {
        self.values[encode_index(digits, self.states)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.scale(c);
        self
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += c * b);
    }

    /// Pointwise product.
    pub fn hadamard(&self, other: &Self) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn apply(&self, op: &DMatrix<f64>) -> Self {
        let v = op * self.to_vector();
        Self {
            values: v.as_slice().to_vec(),
            ..self.clone()
        }
    }

    /// Reorders arguments: result(u) = self(u_{perm[0]}, ..., u_{perm[n-1]}).
    pub fn permute_args(&self, perm: &[usize]) -> Self {
        let mut digits = vec![0; self.order];
        let mut src = vec![0; self.order];
        let values = (0..self.values.len())
            .map(|flat| {
                decode_index(flat, self.states, &mut digits);
                for (s, p) in src.iter_mut().zip(perm) {
                    *s = digits[*p];
                }
                self.values[encode_index(&src, self.states)]
            })
            .collect();
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.order < 2 {
            return true;
        }
        // adjacent transpositions generate the symmetric group
        (0..self.order - 1).all(|i| {
            let mut perm: Vec<usize> = (0..self.order).collect();
            perm.swap(i, i + 1);
            self.permute_args(&perm).max_abs_diff(self) <= tol
        })
    }

    /// Average over all `n!` argument permutations.
    pub fn symmetrize(&self) -> Self {
        if self.order < 2 {
            return self.clone();
        }
        let perms = permutations(self.order);
        let mut acc = Self::zeros(self.states, self.order, self.kind);
        for p in &perms {
            acc.add_scaled(&self.permute_args(p), 1.0);
        }
        acc.scale(1.0 / perms.len() as f64);
        acc
    }

    /// Embed into `n` slots: the result at `u` equals `self(u_{positions[0]}, ...)`,
    /// constant in every slot not named in `positions`.
    pub fn embed(&self, n: usize, positions: &[usize]) -> Result<Self> {
        check_positions(positions, n)?;
        if positions.len() != self.order {
            return Err(Error::Structure(format!(
                "embedding an order-{} function needs {} positions, got {}",
                self.order,
                self.order,
                positions.len()
            )));
        }
        let mut digits = vec![0; n];
        let mut src = vec![0; self.order];
        let dim = self.states.pow(n as u32);
        let values = (0..dim)
            .map(|flat| {
                decode_index(flat, self.states, &mut digits);
                for (s, p) in src.iter_mut().zip(positions) {
                    *s = digits[*p];
                }
                self.values[encode_index(&src, self.states)]
            })
            .collect();
        Ok(Self {
            order: n,
            states: self.states,
            kind: self.kind,
            values,
        })
    }

    /// Weighted integral over the last argument.
    pub fn integrate_last(&self, weights: &[f64]) -> Result<Self> {
        if self.order == 0 {
            return Err(Error::Domain("cannot integrate an order-0 function".into()));
        }
        let k = self.states;
        let values = self
            .values
            .chunks(k)
            .map(|row| row.iter().zip(weights).map(|(v, w)| v * w).sum())
            .collect();
        Ok(Self {
            order: self.order - 1,
            states: k,
            kind: self.kind,
            values,
        })
    }

    /// Weighted integral over all arguments.
    pub fn integrate_all(&self, space: &EntitySpace) -> f64 {
        self.values
            .iter()
            .zip(space.multi_weights(self.order))
            .map(|(v, w)| v * w)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.order)
            .map(|i| format!("i{i}"))
            .chain(std::iter::once("value".to_string()))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        let mut digits = vec![0; self.order];
        for (flat, v) in self.values.iter().enumerate() {
            decode_index(flat, self.states, &mut digits);
            for d in &digits {
                out.push_str(&d.to_string());
                out.push(',');
            }
            out.push_str(&format!("{v:?}"));
            out.push('\n');
        }
        out
    }

    pub fn descriptor(&self) -> TensorDescriptor {
        TensorDescriptor {
            order: self.order,
            states: self.states,
            kind: self.kind,
        }
    }

    /// Parse the CSV produced by [`TensorFunction::to_csv`]. Every multi-index
    /// must appear exactly once.
    pub fn from_csv(desc: &TensorDescriptor, text: &str) -> Result<Self> {
        let dim = desc.states.pow(desc.order as u32);
        let mut values = vec![f64::NAN; dim];
        let mut seen = vec![false; dim];
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("missing CSV header".into()))?;
        if header.split(',').count() != desc.order + 1 {
            return Err(Error::Format(format!(
                "header has {} columns, expected {}",
                header.split(',').count(),
                desc.order + 1
            )));
        }
        for (lineno, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != desc.order + 1 {
                return Err(Error::Format(format!("row {}: wrong column count", lineno + 2)));
            }
            let mut digits = Vec::with_capacity(desc.order);
            for c in &cols[..desc.order] {
                let d: usize = c
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: bad index {c}", lineno + 2)))?;
                if d >= desc.states {
                    return Err(Error::Format(format!("row {}: index {d} out of range", lineno + 2)));
                }
                digits.push(d);
            }
            let v: f64 = cols[desc.order]
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad value", lineno + 2)))?;
            let flat = encode_index(&digits, desc.states);
            if seen[flat] {
                return Err(Error::Format(format!("row {}: duplicate multi-index", lineno + 2)));
            }
            seen[flat] = true;
            values[flat] = v;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("CSV does not cover every multi-index".into()));
        }
        Self::from_values(desc.states, desc.order, desc.kind, values)
    }
}

/// JSON side-car describing a CSV-exported [`TensorFunction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDescriptor {
    pub order: usize,
    #[serde(rename = "K")]
    pub states: usize,
    pub kind: Kind,
}

pub(crate) fn check_positions(positions: &[usize], n: usize) -> Result<()> {
    for (i, p) in positions.iter().enumerate() {
        if *p >= n {
            return Err(Error::Structure(format!(
                "position {p} out of range for {n} factors"
            )));
        }
        if positions[..i].contains(p) {
            return Err(Error::Structure(format!("position {p} repeated")));
        }
    }
    Ok(())
}

/// Lift an operator acting on `positions.len()` factors to `n` factors: it acts
/// as `op` on the named factors (in the given order) and as the identity
/// elsewhere.
pub fn lift_operator(
    op: &DMatrix<f64>,
    states: usize,
    positions: &[usize],
    n: usize,
) -> Result<DMatrix<f64>> {
    check_positions(positions, n)?;
    let m = positions.len();
    let sub = states.pow(m as u32);
    if op.nrows() != sub || op.ncols() != sub {
        return Err(Error::Structure(format!(
            "operator is {}x{}, expected {sub}x{sub} for {m} factors",
            op.nrows(),
            op.ncols()
        )));
    }
    let dim = states.pow(n as u32);
    let mut out = DMatrix::zeros(dim, dim);
    let mut digits = vec![0; n];
    let mut local = vec![0; m];
    let mut col = vec![0; n];
    for row in 0..dim {
        decode_index(row, states, &mut digits);
        for (l, p) in local.iter_mut().zip(positions) {
            *l = digits[*p];
        }
        let r = encode_index(&local, states);
        col.copy_from_slice(&digits);
        for c in 0..sub {
            let entry = op[(r, c)];
            if entry == 0.0 {
                continue;
            }
            decode_index(c, states, &mut local);
            for (l, p) in local.iter().zip(positions) {
                col[*p] = *l;
            }
            out[(row, encode_index(&col, states))] += entry;
        }
    }
    Ok(out)
}

/// Integrate out the last `n - keep` arguments of `f`.
pub fn marginal_by_integration(
    f: &TensorFunction,
    keep: usize,
    space: &EntitySpace,
) -> Result<TensorFunction> {
    if keep > f.order() {
        return Err(Error::Domain(format!(
            "cannot keep {keep} arguments of an order-{} function",
            f.order()
        )));
    }
    let mut out = f.clone();
    while out.order() > keep {
        out = out.integrate_last(space.weights())?;
    }
    Ok(out)
}

/// A truncated sequence `(c_0, c_1, ..., c_smax)` of tensor functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceVector {
    kind: Kind,
    norm_param: f64,
    components: Vec<TensorFunction>,
}

impl SequenceVector {
    pub fn new(kind: Kind, norm_param: f64, components: Vec<TensorFunction>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Structure("sequence needs an order-0 component".into()));
        }
        let states = components.last().map(|c| c.states()).unwrap_or(1);
        for (n, c) in components.iter().enumerate() {
            if c.order() != n {
                return Err(Error::Structure(format!(
                    "component {n} has tensor order {}",
                    c.order()
                )));
            }
            if c.kind() != kind {
                return Err(Error::KindMismatch {
                    expected: kind.name(),
                    found: c.kind().name(),
                });
            }
            if n > 0 && c.states() != states {
                return Err(Error::Structure("components over different state spaces".into()));
            }
        }
        Ok(Self {
            kind,
            norm_param,
            components,
        })
    }

    pub fn zeros(states: usize, kind: Kind, max_order: usize, norm_param: f64) -> Self {
        let components = (0..=max_order)
            .map(|n| TensorFunction::zeros(states, n, kind))
            .collect();
        Self {
            kind,
            norm_param,
            components,
        }
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn norm_param(&self) -> f64 {
        self.norm_param
    }

    pub fn set_norm_param(&mut self, p: f64) {
        self.norm_param = p;
    }

    pub fn max_order(&self) -> usize {
        self.components.len() - 1
    }

    pub fn states(&self) -> usize {
        self.components.last().map(|c| c.states()).unwrap_or(1)
    }

    pub fn component(&self, n: usize) -> &TensorFunction {
        &self.components[n]
    }

    pub fn component_mut(&mut self, n: usize) -> &mut TensorFunction {
        &mut self.components[n]
    }

    pub fn components(&self) -> &[TensorFunction] {
        &self.components
    }

    pub fn set_component(&mut self, n: usize, c: TensorFunction) -> Result<()> {
        if c.order() != n || c.kind() != self.kind {
            return Err(Error::Structure(format!("component {n} has wrong order or kind")));
        }
        self.components[n] = c;
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            a.add_scaled(b, c);
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.components.iter_mut().for_each(|x| x.scale(c));
        self
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .fold(0.0, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }

    /// Zero every component above `order`.
    pub fn truncate_above(&mut self, order: usize) {
        for c in self.components.iter_mut().skip(order + 1) {
            c.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// `max_n gamma^n / n! * max |b_n|`.
pub fn c_gamma_norm(seq: &SequenceVector) -> Result<f64> {
    if seq.kind() != Kind::Observable {
        return Err(Error::KindMismatch {
            expected: "observable",
            found: seq.kind().name(),
        });
    }
    let gamma = seq.norm_param();
    Ok(seq
        .components()
        .iter()
        .enumerate()
        .map(|(n, c)| gamma.powi(n as i32) / factorial(n) * c.max_abs())
        .fold(0.0, f64::max))
}

/// `sum_n alpha^n * integral |f_n|`.
pub fn l1_alpha_norm(seq: &SequenceVector, space: &EntitySpace) -> Result<f64> {
    if seq.kind() != Kind::State {
        return Err(Error::KindMismatch {
            expected: "state",
            found: seq.kind().name(),
        });
    }
    let alpha = seq.norm_param();
    Ok(seq
        .components()
        .iter()
        .enumerate()
        .map(|(n, c)| {
            let l1: f64 = c
                .values()
                .iter()
                .zip(space.multi_weights(n))
                .map(|(v, w)| v.abs() * w)
                .sum();
            alpha.powi(n as i32) * l1
        })
        .sum())
}

/// Mean-value functional `sum_n 1/n! integral b_n f_n`, optionally divided by
/// the normalizing factor obtained with `b = 1`.
pub fn pair(
    b: &SequenceVector,
    f: &SequenceVector,
    space: &EntitySpace,
    normalized: bool,
) -> Result<f64> {
    if b.kind() != Kind::Observable {
        return Err(Error::KindMismatch {
            expected: "observable",
            found: b.kind().name(),
        });
    }
    if f.kind() != Kind::State {
        return Err(Error::KindMismatch {
            expected: "state",
            found: f.kind().name(),
        });
    }
    let top = b.max_order().min(f.max_order());
    let mut value = 0.0;
    let mut norm = 0.0;
    for n in 0..=top {
        let w = space.multi_weights(n);
        let fc = f.component(n).values();
        let bc = b.component(n).values();
        let inv = 1.0 / factorial(n);
        value += inv * bc.iter().zip(fc).zip(&w).map(|((b, f), w)| b * f * w).sum::<f64>();
        if normalized {
            norm += inv * fc.iter().zip(&w).map(|(f, w)| f * w).sum::<f64>();
        }
    }
    if normalized {
        if norm == 0.0 {
            return Err(Error::ZeroNormalization);
        }
        value /= norm;
    }
    Ok(value)
}
