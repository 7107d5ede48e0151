//! Ursell functions, the truncated cluster (log) series and restricted
//! cluster-sum bounds.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::constants::{beta_threshold, cluster_ratio};
use crate::error::{Error, Result};
use crate::expansion::{compatibility_for, hardcore_sum, Assignment, Compatibility};
use crate::polymer::{enumerate_family_at, through_vertex_bound, Polymer, PolymerFamily, PolymerKind, Variant};
use crate::rational::{factorial, pow3, qpow, to_f64, Q};
use crate::spherecalc::{dot3, random_unit_vector, DotPoly};

pub const DEFAULT_URSELL_CAP: usize = 10;
pub const DEFAULT_CLUSTER_BUDGET: u64 = 20_000_000;
/// Above this many edges the connected-subgraph sum uses the subset recursion.
const BRUTE_FORCE_EDGES: usize = 20;

/// A polymer sequence and its connectivity graph (`adjacency[i]` bit `j` set
/// when `φ_i` and `φ_j` are incompatible).
#[derive(Debug, Clone)]
pub struct Cluster {
    pub polymers: Vec<Polymer>,
    pub adjacency: Vec<u64>,
}

impl Cluster {
    pub fn new(polymers: Vec<Polymer>, compat: &dyn Compatibility) -> Result<Cluster> {
        let m = polymers.len();
        if m == 0 || m > 64 {
            return Err(Error::InvalidInput(format!("cluster size {m} outside 1..=64")));
        }
        let mut adjacency = vec![0u64; m];
        for i in 0..m {
            for j in i + 1..m {
                if polymers[i] == polymers[j] || !compat.compatible(&polymers[i], &polymers[j]) {
                    adjacency[i] |= 1 << j;
                    adjacency[j] |= 1 << i;
                }
            }
        }
        Ok(Cluster { polymers, adjacency })
    }

    pub fn is_connected(&self) -> bool {
        connected(&self.adjacency, full_mask(self.adjacency.len()))
    }
}

fn full_mask(m: usize) -> u64 {
    if m == 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

fn connected(adj: &[u64], set: u64) -> bool {
    if set == 0 {
        return false;
    }
    let mut seen = set & set.wrapping_neg();
    loop {
        let mut next = seen;
        let mut s = seen;
        while s != 0 {
            let i = s.trailing_zeros() as usize;
            s &= s - 1;
            next |= adj[i] & set;
        }
        if next == seen {
            return seen == set;
        }
        seen = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UrsellMethod {
    EdgeSubsets,
    SubsetRecursion,
}

/// `Σ_{G ⊆ adj connected spanning} (-1)^{|E(G)|}` by listing edge subsets.
pub fn connected_subgraph_sum_brute(adj: &[u64]) -> Result<i128> {
    let m = adj.len();
    let edges: Vec<(usize, usize)> =
        (0..m).flat_map(|i| (i + 1..m).filter(move |&j| adj[i] >> j & 1 == 1).map(move |j| (i, j))).collect();
    if edges.len() > 30 {
        return Err(Error::SizeLimit { what: "connectivity graph edges".into(), size: edges.len(), cap: 30 });
    }
    let mut total: i128 = 0;
    for mask in 0u64..(1u64 << edges.len()) {
        let mut sub = vec![0u64; m];
        for (b, (i, j)) in edges.iter().enumerate() {
            if mask >> b & 1 == 1 {
                sub[*i] |= 1 << j;
                sub[*j] |= 1 << i;
            }
        }
        if connected(&sub, full_mask(m)) {
            total += if mask.count_ones() % 2 == 0 { 1 } else { -1 };
        }
    }
    Ok(total)
}

/// Same sum via `C(S) = f(S) - Σ_{T ∋ min S, T ⊊ S} C(T) f(S∖T)`, where
/// `f(U) = 1` iff `U` spans no edge.
pub fn connected_subgraph_sum_recursive(adj: &[u64]) -> Result<i128> {
    let m = adj.len();
    if m > 20 {
        return Err(Error::SizeLimit { what: "cluster size".into(), size: m, cap: 20 });
    }
    let size = 1usize << m;
    let independent: Vec<bool> = (0..size)
        .map(|u| {
            let u = u as u64;
            let mut s = u;
            while s != 0 {
                let i = s.trailing_zeros() as usize;
                s &= s - 1;
                if adj[i] & u != 0 {
                    return false;
                }
            }
            true
        })
        .collect();
    let mut c = vec![0i128; size];
    for s in 1..size {
        let low = s & s.wrapping_neg();
        let mut acc: i128 = independent[s] as i128;
        let rest = s ^ low;
        // T = low ∪ t for proper sub-masks t of rest.
        let mut t = rest;
        loop {
            t = t.wrapping_sub(1) & rest;
            if t == rest {
                break;
            }
            let tm = t | low;
            let other = s ^ tm;
            if independent[other] {
                acc -= c[tm];
            }
            if t == 0 {
                break;
            }
        }
        c[s] = acc;
    }
    Ok(c[size - 1])
}

/// Exact `φ_c` of a cluster.
pub fn ursell(c: &Cluster, cap: usize) -> Result<(Q, UrsellMethod)> {
    let m = c.polymers.len();
    if m > cap {
        return Err(Error::SizeLimit { what: "cluster size".into(), size: m, cap });
    }
    let edges: u32 = c.adjacency.iter().map(|a| a.count_ones()).sum::<u32>() / 2;
    let (sum, method) = if edges as usize <= BRUTE_FORCE_EDGES {
        (connected_subgraph_sum_brute(&c.adjacency)?, UrsellMethod::EdgeSubsets)
    } else {
        (connected_subgraph_sum_recursive(&c.adjacency)?, UrsellMethod::SubsetRecursion)
    };
    Ok((Q::new(BigInt::from(sum), factorial(m as u64)), method))
}

/// Conflict graph of a family: `g(φ,φ') = -1` iff incompatible, always on the diagonal.
#[derive(Debug, Clone)]
pub struct ConflictGraph {
    pub lens: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
}

impl ConflictGraph {
    pub fn new(family: &PolymerFamily) -> ConflictGraph {
        let compat = compatibility_for(family);
        let m = family.members.len();
        let mut neighbors = vec![Vec::new(); m];
        for i in 0..m {
            for j in i + 1..m {
                if !compat.compatible(&family.members[i], &family.members[j]) {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        ConflictGraph { lens: family.members.iter().map(|p| p.length()).collect(), neighbors }
    }

    fn adjacent(&self, i: usize, j: usize) -> bool {
        i == j || self.neighbors[i].binary_search(&j).is_ok()
    }
}

/// One multiplicity function `X` with connected support.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterTerm {
    /// `(polymer index, X(φ))`, sorted by index.
    pub support: Vec<(usize, u32)>,
    /// `Σ_{G connected spanning} (-1)^{|E|}` over the sequence graph of `X`.
    pub connected_sum: i128,
    pub length: usize,
}

impl ClusterTerm {
    pub fn size(&self) -> u32 {
        self.support.iter().map(|s| s.1).sum()
    }

    /// `C(X)/∏X!`, the coefficient of `w^X` in the log series.
    pub fn coefficient(&self) -> Q {
        let den: BigInt = self.support.iter().map(|(_, x)| factorial(*x as u64)).product();
        Q::new(BigInt::from(self.connected_sum), den)
    }

    pub fn coefficient_f64(&self) -> f64 {
        let den: f64 = self.support.iter().map(|(_, x)| (1..=*x).map(f64::from).product::<f64>()).product();
        self.connected_sum as f64 / den
    }

    /// `φ_c` of any sequence with multiplicities `X`.
    pub fn ursell(&self) -> Q {
        Q::new(BigInt::from(self.connected_sum), factorial(self.size() as u64))
    }
}

/// Multiset form of the connected-subgraph recursion on a fixed support.
struct MultisetUrsell {
    /// Independent subsets of the support positions.
    independent: Vec<u64>,
    memo: HashMap<Vec<u32>, i128>,
}

impl MultisetUrsell {
    fn new(graph: &ConflictGraph, support: &[usize]) -> Self {
        let s = support.len();
        let mut independent = Vec::new();
        for mask in 1u64..(1u64 << s) {
            let ok = (0..s).all(|i| {
                mask >> i & 1 == 0 || (i + 1..s).all(|j| mask >> j & 1 == 0 || !graph.adjacent(support[i], support[j]))
            });
            if ok {
                independent.push(mask);
            }
        }
        MultisetUrsell { independent, memo: HashMap::new() }
    }

    fn count(&mut self, y: &[u32]) -> Result<i128> {
        if let Some(v) = self.memo.get(y) {
            return Ok(*v);
        }
        let supp: u64 = y.iter().enumerate().filter(|(_, v)| **v > 0).fold(0, |m, (i, _)| m | 1 << i);
        let f = y.iter().all(|v| *v <= 1) && self.independent.contains(&supp);
        let p = supp.trailing_zeros() as usize;
        let overflow = || Error::Consistency("Ursell sum overflows i128".into());
        let mut acc: i128 = f as i128;
        let candidates: Vec<u64> = self.independent.iter().copied().filter(|r| r & !supp == 0).collect();
        for r in candidates {
            let mut coeff: i128 = 1;
            if r >> p & 1 == 1 {
                if y[p] < 2 {
                    continue;
                }
                coeff = (y[p] - 1) as i128;
            }
            let mut rest = r & !(1 << p);
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                coeff = coeff.checked_mul(y[i] as i128).ok_or_else(overflow)?;
            }
            let mut z = y.to_vec();
            let mut bits = r;
            while bits != 0 {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                z[i] -= 1;
            }
            let sub = self.count(&z)?;
            acc = acc.checked_sub(coeff.checked_mul(sub).ok_or_else(overflow)?).ok_or_else(overflow)?;
        }
        self.memo.insert(y.to_vec(), acc);
        Ok(acc)
    }
}

/// `C(X)` for a multiplicity function given as `(index, X)` pairs.
pub fn multiset_connected_sum(graph: &ConflictGraph, support: &[(usize, u32)]) -> Result<i128> {
    let mut m = MultisetUrsell::new(graph, &support.iter().map(|s| s.0).collect::<Vec<_>>());
    let y: Vec<u32> = support.iter().map(|s| s.1).collect();
    m.count(&y)
}

/// All clusters (multiplicity functions with connected support) of total
/// length at most `cutoff` whose support contains a polymer accepted by
/// `is_root`; enumeration is split over root polymers across threads.
pub fn enumerate_clusters(
    graph: &ConflictGraph,
    cutoff: usize,
    is_root: &(dyn Fn(usize) -> bool + Sync),
    budget: u64,
) -> Result<Vec<ClusterTerm>> {
    let m = graph.lens.len();
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(m.max(1));
    let results: Vec<Result<Vec<ClusterTerm>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut mark = vec![0u32; m];
                    let mut sub = Vec::new();
                    let mut nodes = 0u64;
                    for root in (t..m).step_by(threads) {
                        if graph.lens[root] > cutoff {
                            continue;
                        }
                        add_mark(graph, root, &mut mark, 1);
                        sub.push(root);
                        let ext: Vec<usize> = graph.neighbors[root].iter().copied().filter(|u| *u > root).collect();
                        let mut ctx = Esu { graph, cutoff, root, is_root, budget, nodes: &mut nodes, out: &mut out };
                        let r = ctx.extend(&mut sub, &mut mark, ext, graph.lens[root], is_root(root));
                        sub.pop();
                        add_mark(graph, root, &mut mark, -1);
                        r?;
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("cluster worker panicked")).collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    all.sort_by(|a, b| a.support.cmp(&b.support));
    Ok(all)
}

fn add_mark(graph: &ConflictGraph, v: usize, mark: &mut [u32], delta: i32) {
    let apply = |x: &mut u32| *x = (*x as i32 + delta) as u32;
    apply(&mut mark[v]);
    for u in &graph.neighbors[v] {
        apply(&mut mark[*u]);
    }
}

struct Esu<'a, 'b> {
    graph: &'a ConflictGraph,
    cutoff: usize,
    root: usize,
    is_root: &'a (dyn Fn(usize) -> bool + Sync),
    budget: u64,
    nodes: &'b mut u64,
    out: &'b mut Vec<ClusterTerm>,
}

impl Esu<'_, '_> {
    fn extend(&mut self, sub: &mut Vec<usize>, mark: &mut [u32], mut ext: Vec<usize>, total: usize, rooted: bool) -> Result<()> {
        *self.nodes += 1;
        if *self.nodes > self.budget {
            return Err(Error::ResourceLimit { what: "cluster enumeration".into(), explored: *self.nodes, budget: self.budget });
        }
        if rooted {
            self.emit(sub, total)?;
        }
        while let Some(w) = ext.pop() {
            if total + self.graph.lens[w] > self.cutoff {
                continue;
            }
            let mut next = ext.clone();
            for u in &self.graph.neighbors[w] {
                if *u > self.root && mark[*u] == 0 && !next.contains(u) {
                    next.push(*u);
                }
            }
            add_mark(self.graph, w, mark, 1);
            sub.push(w);
            let r = self.extend(sub, mark, next, total + self.graph.lens[w], rooted || (self.is_root)(w));
            sub.pop();
            add_mark(self.graph, w, mark, -1);
            r?;
        }
        Ok(())
    }

    fn emit(&mut self, sub: &[usize], base: usize) -> Result<()> {
        let mut support = sub.to_vec();
        support.sort_unstable();
        let lens: Vec<usize> = support.iter().map(|i| self.graph.lens[*i]).collect();
        let mut ursell = MultisetUrsell::new(self.graph, &support);
        let mut x = vec![1u32; support.len()];
        // Enumerate extra multiplicities with Σ extra·ℓ ≤ cutoff - base.
        fn rec(
            pos: usize,
            room: usize,
            x: &mut Vec<u32>,
            lens: &[usize],
            support: &[usize],
            base: usize,
            ursell: &mut MultisetUrsell,
            out: &mut Vec<ClusterTerm>,
        ) -> Result<()> {
            if pos == x.len() {
                let connected_sum = ursell.count(x)?;
                let used: usize = x.iter().zip(lens).map(|(m, l)| (*m as usize - 1) * l).sum();
                out.push(ClusterTerm {
                    support: support.iter().copied().zip(x.iter().copied()).collect(),
                    connected_sum,
                    length: base + used,
                });
                return Ok(());
            }
            let mut extra = 0;
            loop {
                x[pos] = 1 + extra as u32;
                rec(pos + 1, room - extra * lens[pos], x, lens, support, base, ursell, out)?;
                extra += 1;
                if extra * lens[pos] > room {
                    break;
                }
            }
            x[pos] = 1;
            Ok(())
        }
        rec(0, self.cutoff - base, &mut x, &lens, &support, base, &mut ursell, self.out)
    }
}

/// `Σ_{X: ℓ(X) ≤ cutoff} C(X)/∏X! · ∏w^X`, exactly.
pub fn cluster_log_series(family: &PolymerFamily, weights: &[Q], cutoff: usize, budget: u64) -> Result<Q> {
    if weights.len() != family.members.len() {
        return Err(Error::InvalidInput(format!("{} weights for {} polymers", weights.len(), family.members.len())));
    }
    let graph = ConflictGraph::new(family);
    let terms = enumerate_clusters(&graph, cutoff, &|_| true, budget)?;
    let mut sum = Q::zero();
    for t in &terms {
        let mut term = t.coefficient();
        for (i, x) in &t.support {
            term *= qpow(&weights[*i], *x as i64);
        }
        sum += term;
    }
    Ok(sum)
}

/// Scalar weights at evaluation point `point`: `3^{1-(d+1)ℓ}` for loops and
/// `(-1/3)^{(d+1)ℓ-1}(-Ω_v·Ω_w)` for walks, with `d = weight_d`.
pub fn scalar_weights(family: &PolymerFamily, weight_d: u32, point: &Assignment) -> Result<Vec<Q>> {
    family
        .members
        .iter()
        .map(|p| {
            let e = (weight_d as i64 + 1) * p.length() as i64 - 1;
            match p.kind {
                PolymerKind::Loop => Ok(pow3(-e)),
                PolymerKind::Walk => {
                    let (a, b) = p.endpoints().expect("walk has endpoints");
                    let va = point.get(&a).ok_or(Error::UnassignedVariable(a.var_id()))?;
                    let vb = point.get(&b).ok_or(Error::UnassignedVariable(b.var_id()))?;
                    let sign = if e % 2 == 0 { Q::one() } else { -Q::one() };
                    Ok(sign * pow3(-e) * -dot3(va, vb))
                }
            }
        })
        .collect()
}

/// Tail bound for clusters of total length `> cutoff` using the complete
/// family: if `Σ_{φ'≁φ} |w'| e^{(s+η)ℓ'} ≤ ηℓ(φ)` for every `φ`, the discarded
/// mass is at most `e^{-s(cutoff+1)} Σ_{roots} |w| e^{(s+η)ℓ}`.
pub fn enumerated_tail(graph: &ConflictGraph, abs_weights: &[f64], roots: &dyn Fn(usize) -> bool, cutoff: usize) -> f64 {
    let m = graph.lens.len();
    let tilted = |rate: f64| -> Vec<f64> { (0..m).map(|j| abs_weights[j] * (rate * graph.lens[j] as f64).exp()).collect() };
    let admissible = |s: f64, eta: f64| {
        let t = tilted(s + eta);
        (0..m).all(|i| t[i] + graph.neighbors[i].iter().map(|j| t[*j]).sum::<f64>() <= eta * graph.lens[i] as f64)
    };
    best_tilt(&admissible, cutoff, &|s, eta| {
        let t = tilted(s + eta);
        (0..m).filter(|i| roots(*i)).map(|i| t[i]).sum()
    })
}

/// Minimizes `e^{-s(cutoff+1)}·roots(s,η)` over admissible `(s, η)`; the
/// admissible `s` form an interval `[0, s_max(η)]`, found by bisection.
fn best_tilt(admissible: &dyn Fn(f64, f64) -> bool, cutoff: usize, roots: &dyn Fn(f64, f64) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for ei in 1..=120 {
        let eta = ei as f64 * 0.025;
        if !admissible(0.0, eta) {
            continue;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while admissible(hi, eta) && hi < 64.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if admissible(mid, eta) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Any s in [0, lo] is admissible; scan a few to balance the two factors.
        for j in 0..=16 {
            let s = lo * j as f64 / 16.0;
            best = best.min((-s * (cutoff as f64 + 1.0)).exp() * roots(s, eta));
        }
    }
    best
}

/// Same bound with the per-site counts `3(k+1)2^{k-2}` in place of
/// enumeration, for weights with `|w(φ)| ≤ envelope(ℓ(φ))` and at most
/// `root_sites` sites that a root polymer must meet.
pub fn envelope_tail(envelope: &dyn Fn(usize) -> f64, root_sites: usize, cutoff: usize) -> f64 {
    let series = |rate: f64| -> f64 {
        let mut sum = 0.0;
        for k in 1..=4000usize {
            let t = through_vertex_bound(k as u64) * envelope(k) * (rate * k as f64).exp();
            if !t.is_finite() {
                return f64::INFINITY;
            }
            sum += t;
            if k > 50 && t < 1e-18 * sum {
                return sum;
            }
        }
        f64::INFINITY
    };
    // A polymer of length ℓ has at most ℓ+1 sites; (ℓ+1)/ℓ peaks at ℓ = 1.
    best_tilt(&|s, eta| 2.0 * series(s + eta) <= eta, cutoff, &|s, eta| root_sites as f64 * series(s + eta))
}

/// Random rational unit vectors on both boundaries of the family.
pub fn evaluation_point(family: &PolymerFamily, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    family
        .outer_boundary
        .iter()
        .chain(&family.inner_boundary)
        .map(|v| (*v, random_unit_vector(&mut rng, 4)))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpIdentity {
    pub cutoff: usize,
    pub hardcore: f64,
    pub log_series: f64,
    pub residual: f64,
    /// `|(Ξ - 1) - expm1(log series)|`, which stays informative when `Ξ ≈ 1`.
    pub excess_residual: f64,
    pub tail_bound: f64,
    pub clusters: usize,
}

/// `|Ξ - exp(Σ_{ℓ(X) ≤ cutoff} ...)|` for scalar weights, `Ξ` being the
/// compatible-collection sum of the family.
pub fn verify_exp_identity(family: &PolymerFamily, weights: &[Q], cutoff: usize) -> Result<ExpIdentity> {
    let poly: Vec<DotPoly> = weights.iter().map(|w| DotPoly::constant(w.clone())).collect();
    let compat = compatibility_for(family);
    let hc = hardcore_sum(family, &poly, compat.as_ref(), None, DEFAULT_CLUSTER_BUDGET)?;
    let xi = hc.value.as_constant().ok_or_else(|| Error::Consistency("scalar weights gave a polynomial".into()))?;
    let graph = ConflictGraph::new(family);
    let terms = enumerate_clusters(&graph, cutoff, &|_| true, DEFAULT_CLUSTER_BUDGET)?;
    let mut log = Q::zero();
    for t in &terms {
        let mut term = t.coefficient();
        for (i, x) in &t.support {
            term *= qpow(&weights[*i], *x as i64);
        }
        log += term;
    }
    let abs: Vec<f64> = weights.iter().map(|w| to_f64(&w.abs())).collect();
    let tail = enumerated_tail(&graph, &abs, &|_| true, cutoff);
    let hardcore = to_f64(&xi);
    let log_series = to_f64(&log);
    Ok(ExpIdentity {
        cutoff,
        hardcore,
        log_series,
        residual: (hardcore - log_series.exp()).abs(),
        excess_residual: (to_f64(&(xi - Q::one())) - log_series.exp_m1()).abs(),
        tail_bound: tail,
        clusters: terms.len(),
    })
}

/// Smallest cutoff whose enumerated tail bound is below `target`.
pub fn certified_cutoff(family: &PolymerFamily, weights: &[Q], target: f64, max_cutoff: usize) -> Result<(usize, f64)> {
    let graph = ConflictGraph::new(family);
    let abs: Vec<f64> = weights.iter().map(|w| to_f64(&w.abs())).collect();
    for cutoff in 1..=max_cutoff {
        let tail = enumerated_tail(&graph, &abs, &|_| true, cutoff);
        if tail <= target {
            return Ok((cutoff, tail));
        }
    }
    Err(Error::ResourceLimit { what: "certified cutoff search".into(), explored: max_cutoff as u64, budget: max_cutoff as u64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionMode {
    /// Counting bounds `3(ℓ+1)(k+1)2^{k-2}` and `|w| ≤ 3^{1-(d+1)k}`.
    Bound,
    /// Explicit incompatible members of a family.
    Enumeration,
}

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub mode: CriterionMode,
    pub d: u32,
    pub epsilon: f64,
    pub holds: bool,
    /// `ε - sup_φ ℓ(φ)^{-1} Σ_{σ ≁ φ} |w(σ)| e^{εℓ(σ)}`.
    pub margin: f64,
}

/// Bound-based criterion: the supremum sits at `ℓ = 1`, giving
/// `4.5·((1-x)^{-2} - 1)` with `x = 2e^ε/3^{d+1}`.
pub fn ueltschi_criterion_bound(d: u32, epsilon: f64) -> Criterion {
    let x = 2.0 * epsilon.exp() / 3f64.powi(d as i32 + 1);
    let lhs = if x < 1.0 { 4.5 * (1.0 / ((1.0 - x) * (1.0 - x)) - 1.0) } else { f64::INFINITY };
    let margin = epsilon - lhs;
    Criterion { mode: CriterionMode::Bound, d, epsilon, holds: margin > 0.0, margin }
}

/// Enumeration-based criterion on a complete family with `d`-decorated weights.
pub fn ueltschi_criterion_enumerated(family: &PolymerFamily, d: u32, epsilon: f64) -> Criterion {
    let graph = ConflictGraph::new(family);
    let abs: Vec<f64> = graph.lens.iter().map(|l| 3f64.powf(1.0 - (d as f64 + 1.0) * *l as f64)).collect();
    let t = |j: usize| abs[j] * (epsilon * graph.lens[j] as f64).exp();
    let mut worst = 0.0f64;
    for i in 0..graph.lens.len() {
        let s: f64 = t(i) + graph.neighbors[i].iter().map(|j| t(*j)).sum::<f64>();
        worst = worst.max(s / graph.lens[i] as f64);
    }
    let margin = epsilon - worst;
    Criterion { mode: CriterionMode::Enumeration, d, epsilon, holds: margin > 0.0, margin }
}

#[derive(Debug, Clone, Serialize)]
pub struct RestrictedBound {
    pub n: u32,
    pub k: u32,
    pub d: u32,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub cutoff: usize,
    pub family_size: usize,
    pub clusters: usize,
    pub sum: f64,
    pub bound: f64,
    pub tail_bound: f64,
    pub margin: f64,
    pub holds: bool,
}

impl RestrictedBound {
    pub fn to_json(&self) -> Value {
        json!({
            "n": self.n, "k": self.k, "d": self.d, "alpha": self.alpha, "beta": self.beta,
            "epsilon": self.epsilon, "cutoff": self.cutoff, "family_size": self.family_size,
            "clusters": self.clusters, "sum": self.sum, "bound": self.bound,
            "tail_bound": self.tail_bound, "margin": self.margin, "holds": self.holds,
            "method": "exhaustive clusters + tilted tail",
        })
    }
}

/// Truncated `Σ_{Δ_K} |φ_c w_α^X|` on `𝒫̊_{N,K}` with `w_α = e^{-(d ln3 - α)ℓ}`,
/// against `|∂Λ_K|·r(ε)/(1-r(ε))`.
pub fn restricted_cluster_bound(n: u32, k: u32, d: u32, alpha: f64, epsilon: f64, cutoff: usize, budget: u64) -> Result<RestrictedBound> {
    let beta = d as f64 * 3f64.ln() - alpha;
    let threshold = beta_threshold(epsilon);
    if beta < threshold - 1e-12 {
        return Err(Error::ThresholdViolation { beta, threshold });
    }
    let ratio = cluster_ratio(epsilon)?;
    let family = enumerate_family_at(crate::lattice::DualSite::ORIGIN, n, k, d, Variant::Interior, Some(cutoff), budget)?;
    let graph = ConflictGraph::new(&family);
    let inner = &family.inner_boundary;
    let touches: Vec<bool> = family.members.iter().map(|p| p.path().iter().any(|v| inner.contains(v))).collect();
    let terms = enumerate_clusters(&graph, cutoff, &|i| touches[i], budget)?;
    let sum: f64 = terms.iter().map(|t| t.coefficient_f64().abs() * (-beta * t.length as f64).exp()).sum();
    let bound = inner.len() as f64 * ratio.r_over_1mr;
    let tail = envelope_tail(&|l| (-beta * l as f64).exp(), inner.len(), cutoff);
    Ok(RestrictedBound {
        n,
        k,
        d,
        alpha,
        beta,
        epsilon,
        cutoff,
        family_size: family.len(),
        clusters: terms.len(),
        sum,
        bound,
        tail_bound: tail,
        margin: bound - sum - tail,
        holds: sum <= bound,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MalyshevCheck {
    pub kappa: f64,
    pub checked: usize,
    pub worst_ratio: f64,
    pub holds: bool,
}

/// `|C(X)| ≤ ∏X!·e^{κℓ(X)}` on every term of size at most `max_size`.
pub fn malyshev_check(terms: &[ClusterTerm], kappa: f64, max_size: u32) -> MalyshevCheck {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for t in terms.iter().filter(|t| t.size() <= max_size) {
        checked += 1;
        let log_rhs: f64 = t.support.iter().map(|(_, x)| (1..=*x).map(|i| (i as f64).ln()).sum::<f64>()).sum::<f64>()
            + kappa * t.length as f64;
        let ratio = ((t.connected_sum.abs() as f64).ln() - log_rhs).exp();
        worst = worst.max(ratio);
    }
    MalyshevCheck { kappa, checked, worst_ratio: worst, holds: worst <= 1.0 }
}

/// `Σ_{j=1}^{m} (-1)^{j-1} w^j / j`.
pub fn log1p_partial(w: &Q, m: u32) -> Q {
    let mut sum = Q::zero();
    for j in 1..=m {
        let t = qpow(w, j as i64) / Q::from_integer(BigInt::from(j));
        if j % 2 == 1 {
            sum += t;
        } else {
            sum -= t;
        }
    }
    sum
}
