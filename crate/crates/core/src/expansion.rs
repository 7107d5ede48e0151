//! Hard-core polymer representations of the classical partition functions,
//! the bulk state and the bulk-boundary map, computed exactly.
//!
//! `Φ` is the function of the boundary spins left after integrating every
//! site of the annulus `Λ_N \ Λ_K` that is not pinned. Three independent
//! routes produce it:
//!
//! * `hardcore`: sum over compatible polymer collections,
//! * `cycle-space`: sum over the GF(2) solution space of the parity
//!   constraints, one term per edge subset,
//! * `elimination`: direct bucket elimination of `∏(1 - Ω_x·Ω_y)/2`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lattice::{build_volume, Annulus, DualSite, Edge, Region, Vertex};
use crate::polymer::{enumerate_family_at, Polymer, PolymerFamily, Variant};
use crate::rational::{pow2, pow3, q, qi, to_f64, to_json, Q};
use crate::spherecalc::{axis_vector, integrate_product, random_unit_vector, weight, DotPoly, FRAME};

pub use crate::polymer::DEFAULT_NODE_BUDGET;

/// Fixed unit vectors on the outer boundary.
pub type Assignment = BTreeMap<Vertex, [Q; 3]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Outer boundary integrated: `Φ_{N,K}`.
    Bulk,
    /// Outer boundary pinned: `Φ̊_{N,K}`.
    Boundary,
}

pub trait Compatibility: Send + Sync {
    fn name(&self) -> &'static str;
    fn compatible(&self, a: &Polymer, b: &Polymer) -> bool;
    /// True when compatibility is exactly "no shared site".
    fn site_disjoint(&self) -> bool {
        false
    }
}

/// Pairwise vertex-disjoint.
pub struct HardCore;

impl Compatibility for HardCore {
    fn name(&self) -> &'static str {
        "hard-core"
    }
    fn compatible(&self, a: &Polymer, b: &Polymer) -> bool {
        !crate::polymer::connectivity(a, b)
    }
    fn site_disjoint(&self) -> bool {
        true
    }
}

/// Disjoint except at pinned outer-boundary sites that end both walks.
pub struct SharedOuterEndpoints {
    pub outer: BTreeSet<Vertex>,
}

impl Compatibility for SharedOuterEndpoints {
    fn name(&self) -> &'static str {
        "shared-outer-endpoints"
    }
    fn compatible(&self, a: &Polymer, b: &Polymer) -> bool {
        let ends = |p: &Polymer| p.endpoints().map(|(x, y)| [x, y]);
        for v in a.path() {
            if !b.path().contains(v) {
                continue;
            }
            let ok = self.outer.contains(v)
                && ends(a).is_some_and(|e| e.contains(v))
                && ends(b).is_some_and(|e| e.contains(v));
            if !ok {
                return false;
            }
        }
        true
    }
}

pub fn compatibility_for(family: &PolymerFamily) -> Box<dyn Compatibility> {
    match family.variant {
        Variant::Segments => Box::new(SharedOuterEndpoints { outer: family.outer_boundary.clone() }),
        Variant::Bulk | Variant::Interior => Box::new(HardCore),
    }
}

#[derive(Debug, Clone)]
pub struct HardCoreSum {
    pub n: u32,
    pub k: u32,
    pub d: u32,
    pub variant: Variant,
    /// Sum over collections, without the `2^{prefactor_log2}` normalization.
    pub value: DotPoly,
    pub prefactor_log2: i64,
    pub truncation: Option<usize>,
    /// Bound on the sup-norm of the discarded collections (0 when exact).
    pub tail_bound: f64,
    pub collections: u64,
}

impl HardCoreSum {
    pub fn total(&self) -> DotPoly {
        self.value.scale(&pow2(self.prefactor_log2))
    }

    pub fn is_exact(&self) -> bool {
        self.truncation.is_none()
    }

    pub fn to_json(&self) -> Value {
        let mut out = json!({
            "n": self.n,
            "k": self.k,
            "d": self.d,
            "variant": self.variant,
            "prefactor_log2": self.prefactor_log2,
            "collections": self.collections,
            "method": if self.is_exact() { "exact" } else { "truncated+tail" },
            "truncation": self.truncation,
            "tail_bound": self.tail_bound,
        });
        match self.value.as_constant() {
            Some(c) => {
                // Keep the 2^{-|B|} visible in the denominator.
                let den = c.denom() * pow2(-self.prefactor_log2).to_integer();
                out["num"] = json!(c.numer().to_string());
                out["den"] = json!(den.to_string());
                let reduced = c * pow2(self.prefactor_log2);
                out["value_reduced"] = to_json(&reduced);
                out["approx"] = json!(to_f64(&reduced));
            }
            None => {
                out["polynomial"] = json!(format!("{}", self.total()));
                out["terms"] = json!(self.value.len());
            }
        }
        out
    }
}

struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Bits {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn or(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a | b).collect())
    }
    fn xor_assign(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }
}

fn budget_error(what: &str, explored: u64, budget: u64) -> Error {
    Error::ResourceLimit { what: what.to_string(), explored, budget }
}

/// Sum over compatible collections of `∏ weights`, the empty collection
/// contributing 1. With `max_total_length` only collections of total length
/// at most that are kept, and a tail bound is attached.
pub fn hardcore_sum(
    family: &PolymerFamily,
    weights: &[DotPoly],
    compat: &dyn Compatibility,
    max_total_length: Option<usize>,
    budget: u64,
) -> Result<HardCoreSum> {
    let m = family.members.len();
    if weights.len() != m {
        return Err(Error::InvalidInput(format!("{} weights for {m} polymers", weights.len())));
    }
    let lens: Vec<usize> = family.members.iter().map(|p| p.length()).collect();
    let ann = Annulus::new(family.center, family.n, family.k, family.d)?;
    let prefactor_log2 = -(ann.annulus_edges().len() as i64);
    if max_total_length.is_none() && compat.site_disjoint() {
        let (value, collections) = site_sweep(family, weights, budget)?;
        return Ok(HardCoreSum {
            n: family.n,
            k: family.k,
            d: family.d,
            variant: family.variant,
            value,
            prefactor_log2,
            truncation: None,
            tail_bound: 0.0,
            collections,
        });
    }
    let mut conflicts: Vec<Bits> = (0..m).map(|_| Bits::new(m)).collect();
    for i in 0..m {
        for j in i + 1..m {
            if !compat.compatible(&family.members[i], &family.members[j]) {
                conflicts[i].set(j);
                conflicts[j].set(i);
            }
        }
        // A polymer is never compatible with itself.
        conflicts[i].set(i);
    }
    let cap = max_total_length.unwrap_or(usize::MAX);
    let single: Option<Vec<(Q, Vec<(u32, u32)>)>> = weights
        .iter()
        .map(|w| {
            if w.len() == 1 {
                w.terms().next().map(|(mono, c)| (c.clone(), mono.pairs().to_vec()))
            } else {
                None
            }
        })
        .collect();

    let mut nodes = 0u64;
    let value = match single {
        Some(single) => {
            let mut acc: HashMap<Vec<(u32, u32)>, Q> = HashMap::new();
            #[allow(clippy::too_many_arguments)]
            fn rec(
                start: usize,
                blocked: &Bits,
                total: usize,
                coef: &Q,
                pairs: &mut Vec<(u32, u32)>,
                ctx: &(&[usize], &[Bits], &[(Q, Vec<(u32, u32)>)], usize, u64),
                nodes: &mut u64,
                acc: &mut HashMap<Vec<(u32, u32)>, Q>,
            ) -> Result<()> {
                let (lens, conflicts, single, cap, budget) = *ctx;
                *nodes += 1;
                if *nodes > budget {
                    return Err(budget_error("hard-core collection enumeration", *nodes, budget));
                }
                let mut key = pairs.clone();
                key.sort_unstable();
                *acc.entry(key).or_insert_with(Q::zero) += coef;
                for i in start..lens.len() {
                    if total + lens[i] > cap {
                        continue;
                    }
                    if blocked.get(i) {
                        continue;
                    }
                    let (c, p) = &single[i];
                    let before = pairs.len();
                    pairs.extend_from_slice(p);
                    rec(i + 1, &blocked.or(&conflicts[i]), total + lens[i], &(coef * c), pairs, ctx, nodes, acc)?;
                    pairs.truncate(before);
                }
                Ok(())
            }
            let ctx = (&lens[..], &conflicts[..], &single[..], cap, budget);
            rec(0, &Bits::new(m), 0, &Q::one(), &mut Vec::new(), &ctx, &mut nodes, &mut acc)?;
            let mut keys: Vec<_> = acc.into_iter().collect();
            keys.sort();
            let mut v = DotPoly::zero();
            for (pairs, c) in keys {
                v.add_assign(&DotPoly::term(c, &pairs));
            }
            v
        }
        None => {
            fn rec(
                start: usize,
                blocked: &Bits,
                total: usize,
                prod: &DotPoly,
                ctx: &(&[usize], &[Bits], &[DotPoly], usize, u64),
                nodes: &mut u64,
                acc: &mut DotPoly,
            ) -> Result<()> {
                let (lens, conflicts, weights, cap, budget) = *ctx;
                *nodes += 1;
                if *nodes > budget {
                    return Err(budget_error("hard-core collection enumeration", *nodes, budget));
                }
                acc.add_assign(prod);
                for i in start..lens.len() {
                    if total + lens[i] <= cap && !blocked.get(i) {
                        rec(i + 1, &blocked.or(&conflicts[i]), total + lens[i], &prod.mul(&weights[i]), ctx, nodes, acc)?;
                    }
                }
                Ok(())
            }
            let mut acc = DotPoly::zero();
            let ctx = (&lens[..], &conflicts[..], weights, cap, budget);
            rec(0, &Bits::new(m), 0, &DotPoly::one(), &ctx, &mut nodes, &mut acc)?;
            acc
        }
    };
    let tail_bound = match max_total_length {
        None => 0.0,
        Some(l) => chernoff_tail(weights, &lens, l),
    };
    Ok(HardCoreSum {
        n: family.n,
        k: family.k,
        d: family.d,
        variant: family.variant,
        value,
        prefactor_log2,
        truncation: max_total_length,
        tail_bound,
        collections: nodes,
    })
}

/// Exact hard-core sum for site-disjoint polymers. Sites are decided in
/// order: the lowest free one is either left empty or covered by a polymer
/// whose lowest site it is. The remainder only depends on which later sites
/// are already occupied, which is memoized.
fn site_sweep(family: &PolymerFamily, weights: &[DotPoly], budget: u64) -> Result<(DotPoly, u64)> {
    let sites: Vec<Vertex> = family.members.iter().flat_map(|p| p.path().iter().copied()).collect::<BTreeSet<_>>().into_iter().collect();
    let index: HashMap<Vertex, usize> = sites.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let words = sites.len().div_ceil(64);
    let mut lowest: Vec<Vec<(usize, Vec<u64>)>> = vec![Vec::new(); sites.len()];
    for (i, p) in family.members.iter().enumerate() {
        let mut mask = vec![0u64; words];
        let mut min = usize::MAX;
        for v in p.path() {
            let j = index[v];
            mask[j / 64] |= 1 << (j % 64);
            min = min.min(j);
        }
        lowest[min].push((i, mask));
    }

    struct Sweep<'a> {
        lowest: Vec<Vec<(usize, Vec<u64>)>>,
        weights: &'a [DotPoly],
        memo: HashMap<(usize, Vec<u64>), (DotPoly, u64)>,
        nodes: u64,
        budget: u64,
    }
    impl Sweep<'_> {
        fn run(&mut self, mut v: usize, blocked: &[u64]) -> Result<(DotPoly, u64)> {
            let n = self.lowest.len();
            while v < n && (blocked[v / 64] >> (v % 64) & 1 == 1 || self.lowest[v].is_empty()) {
                v += 1;
            }
            if v == n {
                return Ok((DotPoly::one(), 1));
            }
            // Sites below v no longer matter.
            let mut key = blocked.to_vec();
            for (w, word) in key.iter_mut().enumerate() {
                let lo = w * 64;
                if lo + 64 <= v {
                    *word = 0;
                } else if lo < v {
                    *word &= !0u64 << (v - lo);
                }
            }
            if let Some(hit) = self.memo.get(&(v, key.clone())) {
                return Ok(hit.clone());
            }
            self.nodes += 1;
            if self.nodes > self.budget {
                return Err(budget_error("hard-core site sweep", self.nodes, self.budget));
            }
            let (mut value, mut count) = self.run(v + 1, &key)?;
            for c in 0..self.lowest[v].len() {
                let (i, mask) = &self.lowest[v][c];
                if mask.iter().zip(&key).any(|(a, b)| a & b != 0) {
                    continue;
                }
                let i = *i;
                let next: Vec<u64> = mask.iter().zip(&key).map(|(a, b)| a | b).collect();
                let (sub, k) = self.run(v + 1, &next)?;
                value.add_assign(&self.weights[i].mul(&sub));
                count += k;
            }
            self.memo.insert((v, key), (value.clone(), count));
            Ok((value, count))
        }
    }
    let mut sweep = Sweep { lowest, weights, memo: HashMap::new(), nodes: 0, budget };
    sweep.run(0, &vec![0u64; words])
}

/// `Σ_{S: ℓ(S) > L} ∏|w| ≤ inf_s e^{-s(L+1)} ∏(1 + |w| e^{sℓ})`, with `|w|`
/// the absolute coefficient sum (an upper bound on the sup-norm).
pub fn chernoff_tail(weights: &[DotPoly], lens: &[usize], cutoff: usize) -> f64 {
    let abs: Vec<f64> = weights.iter().map(|w| to_f64(&w.abs_coefficient_sum())).collect();
    let mut best = f64::INFINITY;
    for step in 0..=400 {
        let s = step as f64 * 0.025;
        let log: f64 = abs.iter().zip(lens).map(|(a, l)| (a * (s * *l as f64).exp()).ln_1p()).sum::<f64>()
            - s * (cutoff as f64 + 1.0);
        best = best.min(log.exp());
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhiSpec {
    #[serde(skip)]
    pub center: DualSite,
    pub n: u32,
    pub k: u32,
    pub d: u32,
    pub mode: Mode,
}

impl PhiSpec {
    pub fn new(n: u32, k: u32, d: u32, mode: Mode) -> PhiSpec {
        PhiSpec { center: DualSite::ORIGIN, n, k, d, mode }
    }

    fn check(&self) -> Result<Annulus> {
        if self.mode == Mode::Boundary && self.n < 2 {
            return Err(Error::InvalidInput("pinned outer boundary needs N >= 2".into()));
        }
        Annulus::new(self.center, self.n, self.k, self.d)
    }
}

/// A strategy producing `Φ` (normalization included) as a polynomial in the
/// unpinned boundary spins.
pub trait PhiRoute: Send + Sync {
    fn name(&self) -> &'static str;
    fn describe(&self) -> &'static str;
    fn phi(&self, spec: &PhiSpec, outer: Option<&Assignment>, budget: u64) -> Result<DotPoly>;
}

pub struct HardCoreRoute;
pub struct CycleSpaceRoute;
pub struct EliminationRoute;

pub fn phi_routes() -> Vec<Box<dyn PhiRoute>> {
    vec![Box::new(HardCoreRoute), Box::new(CycleSpaceRoute), Box::new(EliminationRoute)]
}

pub fn phi_route(name: &str) -> Result<Box<dyn PhiRoute>> {
    phi_routes()
        .into_iter()
        .find(|r| r.name() == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown route {name:?}")))
}

fn pin(p: DotPoly, outer: Option<&Assignment>) -> DotPoly {
    match outer {
        None => p,
        Some(a) => p.pin_all(&a.iter().map(|(v, c)| (v.var_id(), c.clone())).collect()),
    }
}

fn check_assignment(ann: &Annulus, outer: Option<&Assignment>) -> Result<()> {
    if let Some(a) = outer {
        for b in &ann.outer.boundary {
            if !a.contains_key(b) {
                return Err(Error::InvalidInput(format!("no vector assigned to boundary site {b}")));
            }
        }
    }
    Ok(())
}

/// The polymer family behind `Φ` for a given mode.
pub fn family_for(spec: &PhiSpec, budget: u64) -> Result<PolymerFamily> {
    let variant = match spec.mode {
        Mode::Bulk => Variant::Bulk,
        Mode::Boundary => Variant::Segments,
    };
    enumerate_family_at(spec.center, spec.n, spec.k, spec.d, variant, None, budget)
}

impl PhiRoute for HardCoreRoute {
    fn name(&self) -> &'static str {
        "hardcore"
    }
    fn describe(&self) -> &'static str {
        "sum over compatible polymer collections"
    }
    fn phi(&self, spec: &PhiSpec, outer: Option<&Assignment>, budget: u64) -> Result<DotPoly> {
        let ann = spec.check()?;
        check_assignment(&ann, outer)?;
        let fam = family_for(spec, budget)?;
        let weights: Vec<DotPoly> = fam.members.iter().map(weight).collect();
        let compat = compatibility_for(&fam);
        let sum = hardcore_sum(&fam, &weights, compat.as_ref(), None, budget)?;
        Ok(pin(sum.total(), outer))
    }
}

/// Edge subsets of the annulus with even degree at every integrated site,
/// as an affine GF(2) space: returns (edges, basis vectors).
fn parity_space(edges: &[Edge], integrated: &BTreeSet<Vertex>) -> Vec<Bits> {
    let ne = edges.len();
    let mut rows: Vec<Bits> = Vec::new();
    for v in integrated {
        let mut r = Bits::new(ne);
        for (i, e) in edges.iter().enumerate() {
            if e.contains(*v) {
                r.set(i);
            }
        }
        rows.push(r);
    }
    // Reduced row echelon form.
    let mut pivots: Vec<usize> = Vec::new();
    let mut rank = 0;
    for col in 0..ne {
        let Some(p) = (rank..rows.len()).find(|&r| rows[r].get(col)) else {
            continue;
        };
        rows.swap(rank, p);
        for r in 0..rows.len() {
            if r != rank && rows[r].get(col) {
                let pivot = Bits(rows[rank].0.clone());
                rows[r].xor_assign(&pivot);
            }
        }
        pivots.push(col);
        rank += 1;
    }
    let pivot_set: BTreeSet<usize> = pivots.iter().copied().collect();
    let mut basis = Vec::new();
    for free in (0..ne).filter(|c| !pivot_set.contains(c)) {
        let mut b = Bits::new(ne);
        b.set(free);
        for (r, &pc) in pivots.iter().enumerate() {
            if rows[r].get(free) {
                b.set(pc);
            }
        }
        basis.push(b);
    }
    basis
}

impl PhiRoute for CycleSpaceRoute {
    fn name(&self) -> &'static str {
        "cycle-space"
    }
    fn describe(&self) -> &'static str {
        "Gray-code walk over the GF(2) parity solution space"
    }
    fn phi(&self, spec: &PhiSpec, outer: Option<&Assignment>, budget: u64) -> Result<DotPoly> {
        let ann = spec.check()?;
        check_assignment(&ann, outer)?;
        let edges: Vec<Edge> = ann.annulus_edges().into_iter().collect();
        let mut pinned: BTreeSet<Vertex> = ann.inner_boundary();
        if spec.mode == Mode::Boundary {
            pinned.extend(ann.outer.boundary.iter().copied());
        }
        let sites: BTreeSet<Vertex> = edges.iter().flat_map(|e| [e.0, e.1]).collect();
        let integrated: BTreeSet<Vertex> = sites.difference(&pinned).copied().collect();
        let basis = parity_space(&edges, &integrated);
        let dim = basis.len() as u32;
        if dim >= 63 || (1u64 << dim) > budget {
            return Err(budget_error(&format!("cycle-space enumeration of dimension {dim}"), 0, budget));
        }
        let index: HashMap<Vertex, usize> = sites.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let ends: Vec<(usize, usize)> = edges.iter().map(|e| (index[&e.0], index[&e.1])).collect();
        let is_pinned: Vec<bool> = sites.iter().map(|v| pinned.contains(v)).collect();
        let ids: Vec<u32> = sites.iter().map(|v| v.var_id()).collect();
        let nv = sites.len();

        // key: pinned pairs -> (exponent of 1/3 -> signed count)
        let mut acc: HashMap<Vec<(u32, u32)>, BTreeMap<i64, i64>> = HashMap::new();
        let mut cur = Bits::new(edges.len());
        let mut inc: Vec<Vec<usize>> = vec![Vec::new(); nv];
        let mut used = vec![false; edges.len()];
        for t in 0u64..(1u64 << dim) {
            if t > 0 {
                cur.xor_assign(&basis[t.trailing_zeros() as usize]);
            }
            for l in &mut inc {
                l.clear();
            }
            let mut chosen = Vec::new();
            for (i, &(a, b)) in ends.iter().enumerate() {
                if cur.get(i) {
                    inc[a].push(i);
                    inc[b].push(i);
                    chosen.push(i);
                    used[i] = false;
                }
            }
            let mut exponent = 0i64;
            let mut pairs = Vec::new();
            // Segments from pinned sites.
            for s in 0..nv {
                if !is_pinned[s] {
                    continue;
                }
                for &e0 in &inc[s] {
                    if used[e0] {
                        continue;
                    }
                    let (mut at, mut e, mut len) = (s, e0, 0i64);
                    loop {
                        used[e] = true;
                        len += 1;
                        let (a, b) = ends[e];
                        at = if a == at { b } else { a };
                        if is_pinned[at] {
                            break;
                        }
                        e = *inc[at].iter().find(|&&x| !used[x]).expect("integrated site has even degree");
                    }
                    exponent += len - 1;
                    if at != s {
                        pairs.push((ids[s], ids[at]));
                    }
                }
            }
            // Remaining edges form closed loops through integrated sites.
            for &e0 in &chosen {
                if used[e0] {
                    continue;
                }
                let start = ends[e0].0;
                let (mut at, mut e, mut len) = (start, e0, 0i64);
                loop {
                    used[e] = true;
                    len += 1;
                    let (a, b) = ends[e];
                    at = if a == at { b } else { a };
                    if at == start {
                        break;
                    }
                    e = *inc[at].iter().find(|&&x| !used[x]).unwrap();
                }
                exponent += len - 1;
            }
            let sign = if chosen.len() % 2 == 0 { 1 } else { -1 };
            pairs.sort_unstable();
            *acc.entry(pairs).or_default().entry(exponent).or_insert(0) += sign;
        }
        let mut keys: Vec<_> = acc.into_iter().collect();
        keys.sort();
        let mut out = DotPoly::zero();
        for (pairs, hist) in keys {
            let c: Q = hist.iter().map(|(e, n)| pow3(-e) * qi(*n)).sum();
            out.add_assign(&DotPoly::term(c, &pairs));
        }
        let out = out.scale(&pow2(-(edges.len() as i64)));
        Ok(pin(out, outer))
    }
}

fn edge_factor(e: &Edge) -> DotPoly {
    let half = q(1, 2);
    DotPoly::constant(half.clone()).sub(&DotPoly::term(half, &[(e.0.var_id(), e.1.var_id())]))
}

impl PhiRoute for EliminationRoute {
    fn name(&self) -> &'static str {
        "elimination"
    }
    fn describe(&self) -> &'static str {
        "bucket elimination of the edge product"
    }
    fn phi(&self, spec: &PhiSpec, outer: Option<&Assignment>, _budget: u64) -> Result<DotPoly> {
        let ann = spec.check()?;
        check_assignment(&ann, outer)?;
        let edges = ann.annulus_edges();
        let mut keep: BTreeSet<Vertex> = ann.inner_boundary();
        if spec.mode == Mode::Boundary {
            keep.extend(ann.outer.boundary.iter().copied());
        }
        let factors: Vec<DotPoly> = match (spec.mode, outer) {
            (Mode::Boundary, Some(a)) => edges.iter().map(|e| pin(edge_factor(e), Some(&restrict(a, e)))).collect(),
            _ => edges.iter().map(edge_factor).collect(),
        };
        let vars: BTreeSet<u32> = edges
            .iter()
            .flat_map(|e| [e.0, e.1])
            .filter(|v| !keep.contains(v))
            .map(|v| v.var_id())
            .collect();
        let out = integrate_product(factors, &vars);
        Ok(out)
    }
}

fn restrict(a: &Assignment, e: &Edge) -> Assignment {
    a.iter().filter(|(v, _)| e.contains(**v)).map(|(v, c)| (*v, c.clone())).collect()
}

/// The unnormalized inner density `ρ_{Λ_K}` as edge factors, with the site ids of `Λ_K`.
pub fn inner_density(center: DualSite, k: u32, d: u32) -> (Vec<DotPoly>, BTreeSet<u32>) {
    if k == 0 {
        return (Vec::new(), BTreeSet::new());
    }
    let inner = build_volume(center, k, d);
    (inner.edges.iter().map(edge_factor).collect(), inner.vertices.iter().map(|v| v.var_id()).collect())
}

fn check_support(a: &DotPoly, support: &BTreeSet<u32>) -> Result<()> {
    let outside: Vec<u32> = a.free_vars().into_iter().filter(|v| !support.contains(v)).collect();
    if outside.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = outside.iter().map(|v| Vertex::from_var_id(*v).to_string()).collect();
        Err(Error::UnsupportedSymbol(names.join(",")))
    }
}

/// `∫dΩ^{Λ_K} A ρ_{Λ_K} Φ`.
pub fn pair_with_inner(a: &DotPoly, phi: &DotPoly, center: DualSite, k: u32, d: u32) -> Result<Q> {
    let (mut factors, vars) = inner_density(center, k, d);
    check_support(a, &vars)?;
    factors.push(a.clone());
    factors.push(phi.clone());
    let r = integrate_product(factors, &vars);
    r.as_constant()
        .ok_or_else(|| Error::Consistency(format!("inner integral left free variables: {r}")))
}

/// `Φ_{N,K}` via the hard-core route.
pub fn z_bulk(n: u32, k: u32, d: u32) -> Result<HardCoreSum> {
    let spec = PhiSpec::new(n, k, d, Mode::Bulk);
    spec.check()?;
    let fam = family_for(&spec, DEFAULT_NODE_BUDGET)?;
    let weights: Vec<DotPoly> = fam.members.iter().map(weight).collect();
    hardcore_sum(&fam, &weights, &HardCore, None, DEFAULT_NODE_BUDGET)
}

/// `Z_N = ∫dρ_{Λ_K}Φ_{N,K}` for any route.
pub fn partition_function(route: &dyn PhiRoute, n: u32, d: u32, budget: u64) -> Result<Q> {
    let phi = route.phi(&PhiSpec::new(n, 0, d, Mode::Bulk), None, budget)?;
    phi.as_constant().ok_or_else(|| Error::Consistency("Z_N is not a constant".into()))
}

pub fn bulk_expectation(a: &DotPoly, n: u32, k: u32, d: u32, route: &dyn PhiRoute) -> Result<Q> {
    let spec = PhiSpec::new(n, k, d, Mode::Bulk);
    let phi = route.phi(&spec, None, DEFAULT_NODE_BUDGET)?;
    ratio(a, &phi, &spec)
}

fn ratio(a: &DotPoly, phi: &DotPoly, spec: &PhiSpec) -> Result<Q> {
    let num = pair_with_inner(a, phi, spec.center, spec.k, spec.d)?;
    let den = pair_with_inner(&DotPoly::one(), phi, spec.center, spec.k, spec.d)?;
    if den.is_zero() {
        return Err(Error::Consistency("vanishing normalization".into()));
    }
    Ok(num / den)
}

/// `(∫dΩ^{∂Λ_N} Z̊_N(A; ∂Ω), Z_N(A))`: the pinned-boundary weight averaged
/// over the outer boundary, against the bulk weight.
pub fn bulk_boundary_consistency(a: &DotPoly, n: u32, k: u32, d: u32, budget: u64) -> Result<(Q, Q)> {
    let pinned = HardCoreRoute.phi(&PhiSpec::new(n, k, d, Mode::Boundary), None, budget)?;
    let outer: Vec<u32> = build_volume(DualSite::ORIGIN, n, d).boundary.iter().map(|v| v.var_id()).collect();
    let averaged = pinned.integrate_all(&outer);
    let bulk = HardCoreRoute.phi(&PhiSpec::new(n, k, d, Mode::Bulk), None, budget)?;
    Ok((pair_with_inner(a, &averaged, DualSite::ORIGIN, k, d)?, pair_with_inner(a, &bulk, DualSite::ORIGIN, k, d)?))
}

pub fn boundary_expectation(
    a: &DotPoly,
    n: u32,
    k: u32,
    d: u32,
    assignment: &Assignment,
    route: &dyn PhiRoute,
) -> Result<Q> {
    let spec = PhiSpec::new(n, k, d, Mode::Boundary);
    let phi = route.phi(&spec, Some(assignment), DEFAULT_NODE_BUDGET)?;
    ratio(a, &phi, &spec)
}

/// `∫∏_{e∈edges}(-Ω_x·Ω_y)` over every site not in `keep`.
pub fn subgraph_integral(edges: &[Edge], keep: &BTreeSet<u32>) -> DotPoly {
    let factors: Vec<DotPoly> = edges.iter().map(|e| DotPoly::term(qi(-1), &[(e.0.var_id(), e.1.var_id())])).collect();
    let vars: BTreeSet<u32> = edges.iter().flat_map(|e| [e.0.var_id(), e.1.var_id()]).filter(|v| !keep.contains(v)).collect();
    integrate_product(factors, &vars)
}

/// Boundary vectors: the first two samples are the sublattice patterns
/// `±E_3` (up-triangle sites against down-triangle sites, so neighbours never
/// coincide), the rest random rational unit vectors.
pub fn boundary_samples(n: u32, d: u32, count: usize, seed: u64) -> Vec<Assignment> {
    let region = build_volume(DualSite::ORIGIN, n, d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..count {
        let a: Assignment = match i {
            0 | 1 => {
                let pattern = sublattice_pattern(n, d, i == 1);
                aligned_sample(n, d, &pattern)
            }
            // Equal vectors on a boundary edge make the pinned weight vanish.
            _ => loop {
                let a: Assignment = region.boundary.iter().map(|b| (*b, random_unit_vector(&mut rng, 4))).collect();
                let degenerate = region.edges.iter().any(|e| matches!((a.get(&e.0), a.get(&e.1)), (Some(x), Some(y)) if x == y));
                if !degenerate {
                    break a;
                }
            },
        };
        out.push(a);
    }
    out
}

/// `true` on up-triangle boundary sites (flipped if `invert`).
pub fn sublattice_pattern(n: u32, d: u32, invert: bool) -> Vec<bool> {
    build_volume(DualSite::ORIGIN, n, d)
        .boundary
        .iter()
        .map(|b| matches!(b.site, crate::lattice::Site::Up) != invert)
        .collect()
}

/// Inner densities `g = ρΦ/∫ρΦ` and `ĝ = ρΦ̊/∫ρΦ̊`: `‖g - ĝ‖²_{L²}` exactly.
pub fn l2_distance_squared(phi: &DotPoly, phi_pinned: &DotPoly, center: DualSite, k: u32, d: u32) -> Result<Q> {
    let z = pair_with_inner(&DotPoly::one(), phi, center, k, d)?;
    let zp = pair_with_inner(&DotPoly::one(), phi_pinned, center, k, d)?;
    let diff = phi.scale(&(Q::one() / z)).sub(&phi_pinned.scale(&(Q::one() / zp)));
    let (mut factors, vars) = inner_density(center, k, d);
    factors.extend(factors.clone());
    factors.push(diff.clone());
    factors.push(diff);
    integrate_product(factors, &vars)
        .as_constant()
        .ok_or_else(|| Error::Consistency("L2 integral left free variables".into()))
}

/// Product sizes above which the `L²` bracket is skipped.
const L2_TERM_LIMIT: usize = 200_000;

/// Upper bound on `‖g - ĝ‖_{L¹}`: the smaller of `(∫ρ)·sup|Φ/Z - Φ̊/Z̊|`
/// (sup bounded by the absolute coefficient sum) and, when the product stays
/// small, the exact `L²` norm.
pub fn l1_upper_bound(phi: &DotPoly, phi_pinned: &DotPoly, center: DualSite, k: u32, d: u32) -> Result<(f64, &'static str)> {
    let z = pair_with_inner(&DotPoly::one(), phi, center, k, d)?;
    let zp = pair_with_inner(&DotPoly::one(), phi_pinned, center, k, d)?;
    let diff = phi.scale(&(Q::one() / z)).sub(&phi_pinned.scale(&(Q::one() / zp)));
    let mass = pair_with_inner(&DotPoly::one(), &DotPoly::one(), center, k, d)?;
    let sup = to_f64(&(mass * diff.abs_coefficient_sum())) * (1.0 + 1e-12);
    if diff.len() * diff.len() <= L2_TERM_LIMIT {
        let l2 = to_f64(&l2_distance_squared(phi, phi_pinned, center, k, d)?).sqrt() * (1.0 + 1e-12);
        if l2 < sup {
            return Ok((l2, "l2"));
        }
    }
    Ok((sup, "sup"))
}

#[derive(Debug, Clone, Serialize)]
pub struct GapSample {
    pub index: usize,
    pub pinned_expectation: f64,
    pub gap: f64,
    pub l1_lower: f64,
    pub l1_upper: f64,
    pub l1_method: &'static str,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct GapRow {
    pub n: u32,
    pub observable: String,
    pub bulk: Q,
    pub sup_abs: Q,
    pub samples: Vec<GapSample>,
    pub max_gap: f64,
}

impl GapRow {
    pub fn to_json(&self) -> Value {
        json!({
            "n": self.n,
            "observable": self.observable,
            "bulk": to_json(&self.bulk),
            "bulk_approx": to_f64(&self.bulk),
            "sup_abs_bound": to_json(&self.sup_abs),
            "max_gap": self.max_gap,
            "all_bounded": self.samples.iter().all(|s| s.holds),
            "samples": self.samples,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GapReport {
    pub k: u32,
    pub d: u32,
    pub seed: u64,
    pub rows: Vec<GapRow>,
}

impl GapReport {
    /// Max gap non-increasing in N for each observable.
    pub fn monotone(&self) -> bool {
        let mut by_obs: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
        for r in &self.rows {
            by_obs.entry(&r.observable).or_default().push((r.n, r.max_gap));
        }
        by_obs.values_mut().all(|v| {
            v.sort_by_key(|x| x.0);
            v.windows(2).all(|w| w[1].1 <= w[0].1)
        })
    }

    pub fn bounded(&self) -> bool {
        self.rows.iter().all(|r| r.samples.iter().all(|s| s.holds))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "k": self.k,
            "d": self.d,
            "seed": self.seed,
            "method": "exact",
            "monotone_in_n": self.monotone(),
            "all_bounded": self.bounded(),
            "rows": self.rows.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
        })
    }
}

/// Edge observables `Ω_x·Ω_y` for the edges of `Λ_K`.
pub fn edge_observables(k: u32, d: u32) -> Vec<(String, DotPoly)> {
    build_volume(DualSite::ORIGIN, k, d)
        .edges
        .iter()
        .map(|e| (format!("{}.{}", e.0, e.1), DotPoly::dot(e.0.var_id(), e.1.var_id())))
        .collect()
}

/// Route used for pinned-boundary densities: polymer collections while they
/// stay small, bucket elimination beyond.
pub fn default_boundary_route(n: u32) -> Box<dyn PhiRoute> {
    if n <= 2 {
        Box::new(HardCoreRoute)
    } else {
        Box::new(EliminationRoute)
    }
}

/// Compares the pinned-boundary state with the bulk state on sampled boundary
/// vectors; every gap is checked against `sup|A|·‖g - ĝ‖_{L¹}` with the `L¹`
/// norm bracketed by the observed gap and the exact `L²` norm.
pub fn indistinguishability_gap(
    observables: &[(String, DotPoly)],
    ns: &[u32],
    k: u32,
    d: u32,
    samples: usize,
    seed: u64,
) -> Result<GapReport> {
    let mut rows = Vec::new();
    for &n in ns {
        let bulk_spec = PhiSpec::new(n, k, d, Mode::Bulk);
        let phi = HardCoreRoute.phi(&bulk_spec, None, DEFAULT_NODE_BUDGET)?;
        let pinned_spec = PhiSpec::new(n, k, d, Mode::Boundary);
        let route = default_boundary_route(n);
        let assignments = boundary_samples(n, d, samples, seed);
        let mut per_obs: Vec<Vec<GapSample>> = vec![Vec::new(); observables.len()];
        let bulks: Vec<Q> = observables.iter().map(|(_, a)| ratio(a, &phi, &bulk_spec)).collect::<Result<_>>()?;
        for (i, asg) in assignments.iter().enumerate() {
            let pinned = route.phi(&pinned_spec, Some(asg), DEFAULT_NODE_BUDGET)?;
            let (l1_upper, l1_method) = l1_upper_bound(&phi, &pinned, DualSite::ORIGIN, k, d)?;
            for (j, (_, a)) in observables.iter().enumerate() {
                let w = ratio(a, &pinned, &pinned_spec)?;
                let sup = a.abs_coefficient_sum();
                let gap_q = (w.clone() - &bulks[j]).abs();
                let gap = to_f64(&gap_q);
                let bound = to_f64(&sup) * l1_upper;
                per_obs[j].push(GapSample {
                    index: i,
                    pinned_expectation: to_f64(&w),
                    gap,
                    l1_lower: if sup.is_zero() { 0.0 } else { to_f64(&(gap_q / &sup)) },
                    l1_upper,
                    l1_method,
                    bound,
                    holds: gap <= bound,
                });
            }
        }
        for (j, (name, a)) in observables.iter().enumerate() {
            let max_gap = per_obs[j].iter().map(|s| s.gap).fold(0.0, f64::max);
            rows.push(GapRow {
                n,
                observable: name.clone(),
                bulk: bulks[j].clone(),
                sup_abs: a.abs_coefficient_sum(),
                samples: std::mem::take(&mut per_obs[j]),
                max_gap,
            });
        }
    }
    Ok(GapReport { k, d, seed, rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundStateComparison {
    pub n: u32,
    pub pattern: Vec<bool>,
    pub bulk: f64,
    pub ground_state: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `⟨Ψ(f),AΨ(f)⟩` for the product boundary polynomial `f = ∏(u_b or v_b)`,
/// where `|u|² = (1 + Ω·E_3)/2` and `|v|² = (1 - Ω·E_3)/2`. The right side
/// is `sup|A|` times the largest `L¹` upper bracket over the given samples.
pub fn ground_state_comparison(
    a: &DotPoly,
    n: u32,
    k: u32,
    d: u32,
    pattern: &[bool],
    samples: &[Assignment],
) -> Result<GroundStateComparison> {
    let region = build_volume(DualSite::ORIGIN, n, d);
    if pattern.len() != region.boundary.len() {
        return Err(Error::InvalidInput(format!("pattern needs {} entries", region.boundary.len())));
    }
    let half = q(1, 2);
    let mut factors: Vec<DotPoly> = region.edges.iter().map(edge_factor).collect();
    for (b, up) in region.boundary.iter().zip(pattern) {
        let s = if *up { half.clone() } else { -half.clone() };
        factors.push(DotPoly::constant(half.clone()).add(&DotPoly::term(s, &[(b.var_id(), FRAME[2])])));
    }
    let vars: BTreeSet<u32> = region.vertices.iter().map(|v| v.var_id()).collect();
    let den = integrate_product(factors.clone(), &vars);
    factors.push(a.clone());
    let num = integrate_product(factors, &vars);
    let (num, den) = match (num.as_constant(), den.as_constant()) {
        (Some(x), Some(y)) if !y.is_zero() => (x, y),
        _ => return Err(Error::Consistency("ground-state integral did not reduce".into())),
    };
    let gs = num / den;
    let bulk_spec = PhiSpec::new(n, k, d, Mode::Bulk);
    let phi = HardCoreRoute.phi(&bulk_spec, None, DEFAULT_NODE_BUDGET)?;
    let bulk = ratio(a, &phi, &bulk_spec)?;
    let pinned_spec = PhiSpec::new(n, k, d, Mode::Boundary);
    let route = default_boundary_route(n);
    let mut l1 = 0.0f64;
    for s in samples {
        let pinned = route.phi(&pinned_spec, Some(s), DEFAULT_NODE_BUDGET)?;
        l1 = l1.max(l1_upper_bound(&phi, &pinned, DualSite::ORIGIN, k, d)?.0);
    }
    let lhs = to_f64(&(gs.clone() - &bulk).abs());
    let rhs = to_f64(&a.abs_coefficient_sum()) * l1;
    Ok(GroundStateComparison {
        n,
        pattern: pattern.to_vec(),
        bulk: to_f64(&bulk),
        ground_state: to_f64(&gs),
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

/// The sample aligned with a product pattern: `+E_3` where `f` picks `u`.
pub fn aligned_sample(n: u32, d: u32, pattern: &[bool]) -> Assignment {
    build_volume(DualSite::ORIGIN, n, d)
        .boundary
        .iter()
        .zip(pattern)
        .map(|(b, up)| (*b, axis_vector(2, if *up { 1 } else { -1 })))
        .collect()
}

/// All edge subsets of a region with even degree at every site, by brute
/// force over subsets (tiny regions only).
pub fn even_subgraphs(region: &Region) -> Vec<Vec<Edge>> {
    let edges: Vec<Edge> = region.edges.iter().copied().collect();
    assert!(edges.len() <= 24, "brute force is limited to 24 edges");
    let mut out = Vec::new();
    for mask in 0u32..(1 << edges.len()) {
        let chosen: Vec<Edge> = (0..edges.len()).filter(|i| mask >> i & 1 == 1).map(|i| edges[i]).collect();
        let mut deg: HashMap<Vertex, u32> = HashMap::new();
        for e in &chosen {
            *deg.entry(e.0).or_default() += 1;
            *deg.entry(e.1).or_default() += 1;
        }
        if deg.values().all(|x| x % 2 == 0) {
            out.push(chosen);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymer::{enumerate_family, PolymerKind};
    use proptest::prelude::*;

    fn hexagon_at(k: i32, l: i32) -> Polymer {
        Polymer::from_path(PolymerKind::Loop, 0, DualSite::new(k, l).hexagon_vertices_in_order().to_vec()).unwrap()
    }

    fn family_of(members: Vec<Polymer>) -> PolymerFamily {
        let mut f = enumerate_family(1, 0, 0, Variant::Bulk, None).unwrap();
        f.members = members;
        f
    }

    #[test]
    fn single_hexagon_sum() {
        let f = enumerate_family(1, 0, 0, Variant::Bulk, None).unwrap();
        let w: Vec<_> = f.members.iter().map(weight).collect();
        let s = hardcore_sum(&f, &w, &HardCore, None, 1000).unwrap();
        assert_eq!(s.value, DotPoly::constant(q(244, 243)));
        assert_eq!(s.prefactor_log2, -6);
        let j = s.to_json();
        assert_eq!(j["num"], "244");
        assert_eq!(j["den"], "15552");
    }

    #[test]
    fn pairs_of_hexagons() {
        let w = |_: &Polymer| DotPoly::constant(q(1, 243));
        let adjacent = family_of(vec![hexagon_at(0, 0), hexagon_at(1, 0)]);
        let ws: Vec<_> = adjacent.members.iter().map(w).collect();
        let s = hardcore_sum(&adjacent, &ws, &HardCore, None, 1000).unwrap();
        assert_eq!(s.value.as_constant().unwrap(), q(245, 243));
        let apart = family_of(vec![hexagon_at(0, 0), hexagon_at(3, 0)]);
        let s = hardcore_sum(&apart, &ws, &HardCore, None, 1000).unwrap();
        assert_eq!(s.value.as_constant().unwrap(), q(244 * 244, 243 * 243));
    }

    #[test]
    fn routes_agree_on_small_volumes() {
        for (n, k, d) in [(1, 0, 0), (1, 0, 1), (2, 0, 0), (2, 1, 0), (2, 1, 1)] {
            let spec = PhiSpec::new(n, k, d, Mode::Bulk);
            let results: Vec<DotPoly> = phi_routes().iter().map(|r| r.phi(&spec, None, 1 << 24).unwrap()).collect();
            assert_eq!(results[0], results[1], "hardcore vs cycle-space at {n},{k},{d}");
            assert_eq!(results[0], results[2], "hardcore vs elimination at {n},{k},{d}");
        }
        assert_eq!(partition_function(&HardCoreRoute, 1, 0, 100).unwrap(), q(244, 15552));
    }

    #[test]
    fn inner_integral_reproduces_z() {
        let z2 = partition_function(&CycleSpaceRoute, 2, 0, 1 << 20).unwrap();
        let phi = HardCoreRoute.phi(&PhiSpec::new(2, 1, 0, Mode::Bulk), None, 1 << 24).unwrap();
        assert_eq!(pair_with_inner(&DotPoly::one(), &phi, DualSite::ORIGIN, 1, 0).unwrap(), z2);
    }

    #[test]
    fn pinned_routes_agree() {
        let spec = PhiSpec::new(2, 1, 0, Mode::Boundary);
        let symbolic = HardCoreRoute.phi(&spec, None, 1 << 26).unwrap();
        let cyc = CycleSpaceRoute.phi(&spec, None, 1 << 26).unwrap();
        assert_eq!(symbolic, cyc);
        for asg in boundary_samples(2, 0, 3, 7) {
            let a = pin(symbolic.clone(), Some(&asg));
            let b = EliminationRoute.phi(&spec, Some(&asg), 0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn paper_interior_family_differs_pointwise() {
        // Walks that run through pinned sites are counted by the paper's family
        // but integrate differently once those sites are fixed.
        let spec = PhiSpec::new(2, 0, 0, Mode::Boundary);
        let asg = &boundary_samples(2, 0, 3, 1)[2];
        let exact = EliminationRoute.phi(&spec, Some(asg), 0).unwrap();
        let fam = enumerate_family(2, 0, 0, Variant::Interior, None).unwrap();
        let w: Vec<_> = fam.members.iter().map(weight).collect();
        let paper = pin(hardcore_sum(&fam, &w, &HardCore, None, 1 << 24).unwrap().total(), Some(asg));
        assert_ne!(exact, paper);
    }

    #[test]
    fn averaging_pinned_boundary_gives_bulk() {
        let spec = PhiSpec::new(2, 1, 0, Mode::Boundary);
        let pinned = HardCoreRoute.phi(&spec, None, 1 << 26).unwrap();
        let outer: Vec<u32> = build_volume(DualSite::ORIGIN, 2, 0).boundary.iter().map(|v| v.var_id()).collect();
        let averaged = pinned.integrate_all(&outer);
        let bulk = HardCoreRoute.phi(&PhiSpec::new(2, 1, 0, Mode::Bulk), None, 1 << 24).unwrap();
        assert_eq!(averaged, bulk);
    }

    #[test]
    fn bulk_boundary_identity() {
        for (_, a) in [("1".to_string(), DotPoly::one())].into_iter().chain(edge_observables(1, 0).into_iter().take(1)) {
            let (lhs, rhs) = bulk_boundary_consistency(&a, 2, 1, 0, 1 << 26).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn expectations_match_direct_integration() {
        let region = build_volume(DualSite::ORIGIN, 2, 0);
        let vars: BTreeSet<u32> = region.vertices.iter().map(|v| v.var_id()).collect();
        let factors: Vec<DotPoly> = region.edges.iter().map(edge_factor).collect();
        let z = integrate_product(factors.clone(), &vars).as_constant().unwrap();
        for (_, a) in edge_observables(1, 0) {
            let mut f = factors.clone();
            f.push(a.clone());
            let direct = integrate_product(f, &vars).as_constant().unwrap() / &z;
            assert_eq!(bulk_expectation(&a, 2, 1, 0, &HardCoreRoute).unwrap(), direct);
            assert_eq!(bulk_expectation(&a, 2, 1, 0, &CycleSpaceRoute).unwrap(), direct);
        }
        assert_eq!(bulk_expectation(&DotPoly::one(), 2, 1, 0, &HardCoreRoute).unwrap(), Q::one());
    }

    #[test]
    fn pinned_expectation_matches_direct_integration() {
        let region = build_volume(DualSite::ORIGIN, 2, 0);
        let asg = &boundary_samples(2, 0, 4, 3)[3];
        let factors: Vec<DotPoly> = region.edges.iter().map(|e| pin(edge_factor(e), Some(&restrict(asg, e)))).collect();
        let vars: BTreeSet<u32> = region.vertices.iter().filter(|v| !region.boundary.contains(v)).map(|v| v.var_id()).collect();
        let z = integrate_product(factors.clone(), &vars).as_constant().unwrap();
        let (name, a) = &edge_observables(1, 0)[0];
        let mut f = factors;
        f.push(a.clone());
        let direct = integrate_product(f, &vars).as_constant().unwrap() / z;
        assert_eq!(boundary_expectation(a, 2, 1, 0, asg, &HardCoreRoute).unwrap(), direct, "{name}");
        assert_eq!(boundary_expectation(&DotPoly::one(), 2, 1, 0, asg, &HardCoreRoute).unwrap(), Q::one());
    }

    #[test]
    fn outside_support_rejected() {
        let far = DotPoly::dot(Vertex::up(5, 5).var_id(), Vertex::down(5, 5).var_id());
        assert!(matches!(bulk_expectation(&far, 2, 1, 0, &HardCoreRoute), Err(Error::UnsupportedSymbol(_))));
    }

    #[test]
    fn interior_variant_needs_two_rings() {
        assert!(HardCoreRoute.phi(&PhiSpec::new(1, 0, 0, Mode::Boundary), None, 10).is_err());
    }

    #[test]
    fn even_subgraphs_of_hexagon() {
        let r = build_volume(DualSite::ORIGIN, 1, 0);
        assert_eq!(even_subgraphs(&r).len(), 2);
    }

    #[test]
    fn contributing_subgraphs_split_into_compatible_polymers() {
        // Every parity-admissible edge subset of the annulus decomposes into
        // pairwise compatible members of the bulk family, and vice versa.
        let ann = Annulus::new(DualSite::ORIGIN, 2, 1, 0).unwrap();
        let edges: Vec<Edge> = ann.annulus_edges().into_iter().collect();
        let inner = ann.inner.clone().unwrap();
        let integrated: BTreeSet<Vertex> =
            edges.iter().flat_map(|e| [e.0, e.1]).filter(|v| !inner.vertices.contains(v)).collect();
        let basis = parity_space(&edges, &integrated);
        let fam = enumerate_family(2, 1, 0, Variant::Bulk, None).unwrap();
        let members: BTreeSet<&Polymer> = fam.members.iter().collect();
        let mut cur = Bits::new(edges.len());
        for t in 0u64..(1 << basis.len()) {
            if t > 0 {
                cur.xor_assign(&basis[t.trailing_zeros() as usize]);
            }
            let chosen: BTreeSet<Edge> = (0..edges.len()).filter(|i| cur.get(*i)).map(|i| edges[i]).collect();
            let region = Region::from_parts(0, chosen.iter().flat_map(|e| [e.0, e.1]).collect(), chosen.clone());
            let mut seen = BTreeSet::new();
            let mut parts = Vec::new();
            for v in region.vertices.iter() {
                if seen.contains(v) {
                    continue;
                }
                let comp: BTreeSet<Vertex> = region.bfs(*v).keys().copied().collect();
                seen.extend(comp.iter().copied());
                let ce: Vec<Edge> = chosen.iter().filter(|e| comp.contains(&e.0)).copied().collect();
                parts.push(Polymer::from_edges(&ce, 0).unwrap());
            }
            for (i, p) in parts.iter().enumerate() {
                assert!(members.contains(p));
                for q in &parts[i + 1..] {
                    assert!(HardCore.compatible(p, q));
                }
            }
        }
        let w: Vec<_> = fam.members.iter().map(weight).collect();
        let s = hardcore_sum(&fam, &w, &HardCore, None, 1 << 24).unwrap();
        assert_eq!(s.collections, 1 << basis.len());
    }

    #[test]
    fn truncation_tail_covers_discarded_mass() {
        let f = enumerate_family(2, 0, 0, Variant::Bulk, None).unwrap();
        let w: Vec<_> = f.members.iter().map(weight).collect();
        let exact = hardcore_sum(&f, &w, &HardCore, None, 1 << 20).unwrap();
        for cutoff in [6, 10, 14] {
            let t = hardcore_sum(&f, &w, &HardCore, Some(cutoff), 1 << 20).unwrap();
            let missing = to_f64(&(exact.value.as_constant().unwrap() - t.value.as_constant().unwrap()));
            assert!(missing.abs() <= t.tail_bound, "{cutoff}: {missing} > {}", t.tail_bound);
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let f = enumerate_family(2, 0, 0, Variant::Bulk, None).unwrap();
        let w: Vec<_> = f.members.iter().map(weight).collect();
        assert!(matches!(hardcore_sum(&f, &w, &HardCore, None, 5), Err(Error::ResourceLimit { .. })));
    }

    #[test]
    fn pinned_phi_is_positive() {
        let spec = PhiSpec::new(2, 1, 0, Mode::Boundary);
        let inner = build_volume(DualSite::ORIGIN, 1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for asg in boundary_samples(2, 0, 6, 5) {
            let pinned = HardCoreRoute.phi(&spec, Some(&asg), 1 << 26).unwrap();
            let free: BTreeMap<u32, [Q; 3]> = inner.boundary.iter().map(|v| (v.var_id(), random_unit_vector(&mut rng, 3))).collect();
            assert!(pinned.evaluate(&free).unwrap() > Q::zero());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn odd_degree_sites_vanish(mask in 1u32..(1 << 20)) {
            let region = build_volume(DualSite::ORIGIN, 2, 0);
            let edges: Vec<Edge> = region.edges.iter().copied().take(20).enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, e)| e).collect();
            let support: BTreeSet<u32> = [Vertex::up(0, 0).var_id()].into();
            let mut deg: HashMap<Vertex, u32> = HashMap::new();
            for e in &edges {
                *deg.entry(e.0).or_default() += 1;
                *deg.entry(e.1).or_default() += 1;
            }
            let odd_outside = deg.iter().any(|(v, d)| d % 2 == 1 && !support.contains(&v.var_id()));
            if odd_outside {
                prop_assert!(subgraph_integral(&edges, &support).is_zero());
            }
        }
    }
}
