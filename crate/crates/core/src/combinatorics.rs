//! Set partitions, Stirling and Bell numbers, cluster-decorated index sets and
//! the cluster-expansion transforms between distribution and correlation
//! sequences.

use crate::error::{check_cap, Error, Result};
use crate::state_space::{decode_index, Kind, SequenceVector, TensorFunction};

pub const DEFAULT_PARTITION_CAP: usize = 10;

/// A set partition of `0..n` in canonical form: blocks ordered by their least
/// element, elements ascending within each block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Build from a restricted-growth string `rgs[i] = block of element i`.
    pub fn from_rgs(rgs: &[usize]) -> Self {
        let nblocks = rgs.iter().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); nblocks];
        for (elem, b) in rgs.iter().enumerate() {
            blocks[*b].push(elem);
        }
        Self { blocks }
    }

    /// Canonicalizes arbitrary blocks; fails unless they partition `0..n`.
    pub fn from_blocks(mut blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for b in &mut blocks {
            if b.is_empty() {
                return Err(Error::Structure("empty block".into()));
            }
            b.sort_unstable();
            for e in b.iter() {
                if *e >= n || seen[*e] {
                    return Err(Error::Structure(format!("element {e} misplaced")));
                }
                seen[*e] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Structure("blocks do not cover the ground set".into()));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `(-1)^{|P|-1} (|P|-1)!`, the Moebius weight of the partition lattice.
    pub fn moebius_weight(&self) -> f64 {
        let k = self.blocks.len();
        let f: f64 = (1..k).map(|i| i as f64).product();
        if k % 2 == 1 {
            f
        } else {
            -f
        }
    }
}

/// Partitions of `0..n` in restricted-growth-string (lexicographic) order.
#[derive(Debug, Clone)]
pub struct Partitions {
    rgs: Vec<usize>,
    done: bool,
}

impl Iterator for Partitions {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let out = Partition::from_rgs(&self.rgs);
        self.advance();
        Some(out)
    }
}

impl Partitions {
    fn advance(&mut self) {
        let n = self.rgs.len();
        // prefix maxima
        let mut pmax = vec![0; n];
        for i in 1..n {
            pmax[i] = pmax[i - 1].max(self.rgs[i - 1]);
        }
        for i in (1..n).rev() {
            if self.rgs[i] <= pmax[i] {
                self.rgs[i] += 1;
                self.rgs[i + 1..].iter_mut().for_each(|x| *x = 0);
                return;
            }
        }
        self.done = true;
    }
}

pub fn enumerate_partitions(n: usize) -> Result<Partitions> {
    enumerate_partitions_capped(n, DEFAULT_PARTITION_CAP)
}

pub fn enumerate_partitions_capped(n: usize, cap: usize) -> Result<Partitions> {
    if n == 0 {
        return Err(Error::Domain("partitions need at least one element".into()));
    }
    check_cap("partition ground set", n, cap)?;
    Ok(Partitions {
        rgs: vec![0; n],
        done: false,
    })
}

pub fn bell(n: usize) -> u64 {
    // Bell triangle
    let mut row = vec![1u64];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for v in &row {
            let last = *next.last().unwrap();
            next.push(last + v);
        }
        row = next;
    }
    row[0]
}

/// Stirling numbers of the second kind, `S(n, k)` for `1 <= k <= n`.
pub fn stirling2(n: usize, k: usize) -> Result<u64> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("stirling2 needs 1 <= k <= n, got n={n}, k={k}")));
    }
    let mut prev = vec![0u64; k + 1];
    prev[0] = 1;
    for i in 1..=n {
        let mut cur = vec![0u64; k + 1];
        for j in 1..=k.min(i) {
            cur[j] = j as u64 * prev[j] + prev[j - 1];
        }
        prev = cur;
    }
    Ok(prev[k])
}

/// `sum_P (|P| - 1)!` over all partitions of an `n`-set, by enumeration.
pub fn partition_weight_sum(n: usize) -> Result<u64> {
    Ok(enumerate_partitions(n)?
        .map(|p| (1..p.len() as u64).product::<u64>())
        .sum())
}

/// All `k`-element subsets of `0..n`, ascending, in lexicographic order.
pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// A cluster-decorated index set `({Y \ X}, X)` over the ground set `Y = 0..s`:
/// the cluster counts as one element, the singletons as one element each.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterSpec {
    cluster: Vec<usize>,
    singletons: Vec<usize>,
    ground: usize,
}

impl ClusterSpec {
    pub fn new(cluster: Vec<usize>, singletons: Vec<usize>) -> Result<Self> {
        let ground = cluster.len() + singletons.len();
        if cluster.is_empty() {
            return Err(Error::Structure("cluster must be nonempty".into()));
        }
        let mut seen = vec![false; ground];
        for e in cluster.iter().chain(&singletons) {
            if *e >= ground || seen[*e] {
                return Err(Error::Structure(format!(
                    "cluster and singletons must partition 0..{ground}"
                )));
            }
            seen[*e] = true;
        }
        let mut cluster = cluster;
        cluster.sort_unstable();
        Ok(Self {
            cluster,
            singletons,
            ground,
        })
    }

    /// `({Y \ X}, X)` with `Y = 0..s` and `X` the given singletons.
    pub fn removing(s: usize, singletons: &[usize]) -> Result<Self> {
        let cluster = (0..s).filter(|i| !singletons.contains(i)).collect();
        Self::new(cluster, singletons.to_vec())
    }

    /// `({Y}, s, ..., s + n - 1)`, the decoration used for marginal states.
    pub fn appending(s: usize, n: usize) -> Result<Self> {
        Self::new((0..s).collect(), (s..s + n).collect())
    }

    pub fn cluster(&self) -> &[usize] {
        &self.cluster
    }

    pub fn singletons(&self) -> &[usize] {
        &self.singletons
    }

    pub fn ground(&self) -> usize {
        self.ground
    }

    /// Number of pseudo-elements, `1 + |X|`.
    pub fn pseudo_len(&self) -> usize {
        1 + self.singletons.len()
    }

    /// Declusterization of a set of pseudo-elements (pseudo-element 0 is the cluster).
    pub fn theta(&self, pseudo: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for p in pseudo {
            if *p == 0 {
                out.extend_from_slice(&self.cluster);
            } else {
                out.push(self.singletons[p - 1]);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn theta_all(&self) -> Vec<usize> {
        (0..self.ground).collect()
    }

    /// Every partition of the pseudo-elements, declusterized block by block,
    /// with its Moebius weight.
    pub fn declusterized_partitions(&self, cap: usize) -> Result<Vec<(f64, Vec<Vec<usize>>)>> {
        Ok(enumerate_partitions_capped(self.pseudo_len(), cap)?
            .map(|p| {
                let blocks = p.blocks().iter().map(|b| self.theta(b)).collect();
                (p.moebius_weight(), blocks)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// For each order `s` in `1..=smax`, `sum_P w(P) prod_{B in P} c_{|B|}(u_B)`.
fn partition_sum(
    seq: &SequenceVector,
    moebius: bool,
    unit_singletons: bool,
) -> Result<SequenceVector> {
    let smax = seq.max_order();
    if smax == 0 {
        return Err(Error::Structure("sequence has no order-1 component".into()));
    }
    let k = seq.states();
    let kind = seq.kind();
    let mut out = vec![seq.component(0).clone()];
    for s in 1..=smax {
        let mut acc = TensorFunction::zeros(k, s, kind);
        let mut digits = vec![0; s];
        let mut sub = Vec::with_capacity(s);
        for p in enumerate_partitions(s)? {
            let w = if moebius { p.moebius_weight() } else { 1.0 };
            for (flat, v) in acc.values_mut().iter_mut().enumerate() {
                decode_index(flat, k, &mut digits);
                let mut prod = w;
                for b in p.blocks() {
                    if unit_singletons && b.len() == 1 {
                        continue;
                    }
                    sub.clear();
                    sub.extend(b.iter().map(|e| digits[*e]));
                    prod *= seq.component(b.len()).get(&sub);
                }
                *v += prod;
            }
        }
        out.push(acc);
    }
    if unit_singletons {
        out[1] = TensorFunction::constant(k, 1, kind, 1.0);
    }
    SequenceVector::new(kind, seq.norm_param(), out)
}

fn require_state(seq: &SequenceVector) -> Result<()> {
    if seq.kind() != Kind::State {
        return Err(Error::KindMismatch {
            expected: "state",
            found: seq.kind().name(),
        });
    }
    Ok(())
}

/// Marginal distributions from marginal correlations:
/// `f_s = sum_P prod_{X_i in P} g_{|X_i|}(X_i)`.
pub fn cluster_expand(g: &SequenceVector) -> Result<SequenceVector> {
    require_state(g)?;
    partition_sum(g, false, false)
}

/// Marginal correlations from marginal distributions:
/// `g_s = sum_P (-1)^{|P|-1} (|P|-1)! prod_{X_i in P} f_{|X_i|}(X_i)`.
pub fn cluster_invert(f: &SequenceVector) -> Result<SequenceVector> {
    require_state(f)?;
    partition_sum(f, true, false)
}

/// Maps the correlation factors `g~_s` of a correlated product state to the
/// factors `g_s` of its marginal distributions (forward) and back (inverse).
/// The order-1 slot is taken to be identically one on both sides.
pub fn correlation_dressing_transform(
    seq: &SequenceVector,
    direction: Direction,
) -> Result<SequenceVector> {
    require_state(seq)?;
    partition_sum(seq, direction == Direction::Inverse, true)
}
