//! Closed loops and self-avoiding walks on the decorated lattice, their
//! canonical form, and exhaustive enumeration of the constrained families
//! living in a concentric annulus `Λ_N \ Λ_K`.
//!
//! A polymer is stored through its undecorated image: the ordered list of
//! spin-3/2 sites it visits. The decorated edge list is recovered from `d`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::lattice::{build_volume, Annulus, DualSite, Edge, Region, UEdge, Vertex, VertexClass};

pub const DEFAULT_NODE_BUDGET: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolymerKind {
    Loop,
    Walk,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Polymer {
    pub kind: PolymerKind,
    pub d: u32,
    /// Spin-3/2 sites in traversal order (a loop does not repeat its start).
    path: Vec<Vertex>,
}

impl PartialOrd for Polymer {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Polymer {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.length(), self.kind, &self.path, self.d).cmp(&(other.length(), other.kind, &other.path, other.d))
    }
}

impl Polymer {
    /// Builds a polymer from its spin-3/2 sites, checking adjacency and self-avoidance.
    pub fn from_path(kind: PolymerKind, d: u32, path: Vec<Vertex>) -> Result<Polymer> {
        let min_len = if kind == PolymerKind::Loop { 3 } else { 2 };
        if path.len() < min_len {
            return Err(Error::MalformedPolymer(format!("{kind:?} with {} sites", path.len())));
        }
        if path.iter().any(|v| !v.is_spin32()) {
            return Err(Error::MalformedPolymer("path must list spin-3/2 sites only".into()));
        }
        let distinct: HashSet<_> = path.iter().collect();
        if distinct.len() != path.len() {
            return Err(Error::MalformedPolymer("path revisits a site".into()));
        }
        let steps = if kind == PolymerKind::Loop { path.len() } else { path.len() - 1 };
        for i in 0..steps {
            let (a, b) = (path[i], path[(i + 1) % path.len()]);
            if UEdge::between(a, b).is_none() {
                return Err(Error::MalformedPolymer(format!("{a} and {b} are not adjacent")));
            }
        }
        Ok(Polymer { kind, d, path }.canonical())
    }

    /// Validates a raw decorated edge set and returns its canonical polymer.
    pub fn from_edges(edges: &[Edge], d: u32) -> Result<Polymer> {
        let bad = |m: &str| Error::MalformedPolymer(m.to_string());
        if edges.is_empty() {
            return Err(bad("empty edge set"));
        }
        let set: BTreeSet<Edge> = edges.iter().copied().collect();
        if set.len() != edges.len() {
            return Err(bad("repeated edge"));
        }
        let mut adj: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
        for e in &set {
            for (a, b) in [(e.0, e.1), (e.1, e.0)] {
                if !a.valid_for(d) || !a.neighbors(d).contains(&b) {
                    return Err(bad(&format!("{a}-{b} is not a lattice edge for d={d}")));
                }
                adj.entry(a).or_default().push(b);
            }
        }
        let mut ends = Vec::new();
        for (v, nb) in &adj {
            match nb.len() {
                1 => {
                    if !v.is_spin32() {
                        return Err(bad(&format!("endpoint {v} is a decoration site")));
                    }
                    ends.push(*v);
                }
                2 => {}
                k => return Err(bad(&format!("site {v} has degree {k}"))),
            }
        }
        let kind = match ends.len() {
            0 => PolymerKind::Loop,
            2 => PolymerKind::Walk,
            _ => return Err(bad("wrong number of endpoints")),
        };
        let start = match kind {
            PolymerKind::Walk => ends[0],
            PolymerKind::Loop => *adj.keys().find(|v| v.is_spin32()).ok_or_else(|| bad("loop without spin-3/2 site"))?,
        };
        // Walk the component from `start`.
        let mut order = vec![start];
        let mut prev: Option<Vertex> = None;
        let mut cur = start;
        loop {
            let next = adj[&cur].iter().copied().find(|w| Some(*w) != prev);
            match next {
                Some(w) if w == start => break,
                Some(w) => {
                    if order.len() > adj.len() {
                        return Err(bad("not a simple path"));
                    }
                    order.push(w);
                    prev = Some(cur);
                    cur = w;
                    if kind == PolymerKind::Walk && adj[&w].len() == 1 {
                        break;
                    }
                }
                None => break,
            }
        }
        if order.len() != adj.len() {
            return Err(bad("edge set is not connected"));
        }
        let path: Vec<Vertex> = order.into_iter().filter(|v| v.is_spin32()).collect();
        let p = Polymer::from_path(kind, d, path)?;
        if p.decorated_edges().len() != set.len() {
            return Err(bad("decoration chains are incomplete"));
        }
        Ok(p)
    }

    fn canonical(mut self) -> Polymer {
        match self.kind {
            PolymerKind::Walk => {
                if self.path.first() > self.path.last() {
                    self.path.reverse();
                }
            }
            PolymerKind::Loop => {
                let n = self.path.len();
                let (i0, _) = self.path.iter().enumerate().min_by_key(|(_, v)| **v).unwrap();
                self.path.rotate_left(i0);
                if self.path[n - 1] < self.path[1] {
                    self.path[1..].reverse();
                }
            }
        }
        self
    }

    pub fn path(&self) -> &[Vertex] {
        &self.path
    }

    /// Undecorated edge count `ℓ`.
    pub fn length(&self) -> usize {
        match self.kind {
            PolymerKind::Loop => self.path.len(),
            PolymerKind::Walk => self.path.len() - 1,
        }
    }

    pub fn endpoints(&self) -> Option<(Vertex, Vertex)> {
        match self.kind {
            PolymerKind::Walk => Some((self.path[0], *self.path.last().unwrap())),
            PolymerKind::Loop => None,
        }
    }

    pub fn uedges(&self) -> Vec<UEdge> {
        let n = self.path.len();
        let steps = self.length();
        (0..steps).map(|i| UEdge::between(self.path[i], self.path[(i + 1) % n]).unwrap()).collect()
    }

    /// Decorated edges in traversal order; `(d+1)·ℓ` of them.
    pub fn decorated_edges(&self) -> Vec<Edge> {
        let n = self.path.len();
        let mut out = Vec::with_capacity((self.d as usize + 1) * self.length());
        for i in 0..self.length() {
            let (a, b) = (self.path[i], self.path[(i + 1) % n]);
            let e = UEdge::between(a, b).unwrap();
            let mut chain = e.chain(self.d);
            if chain[0] != a {
                chain.reverse();
            }
            out.extend(chain.windows(2).map(|w| Edge::new(w[0], w[1])));
        }
        out
    }

    /// All sites, decoration included.
    pub fn sites(&self) -> BTreeSet<Vertex> {
        self.decorated_edges().iter().flat_map(|e| [e.0, e.1]).collect()
    }

    pub fn contains_site(&self, v: &Vertex) -> bool {
        if v.is_spin32() {
            self.path.contains(v)
        } else {
            self.uedges().iter().any(|e| Some(*e) == v.carrier())
        }
    }

    pub fn undecorate(&self) -> Polymer {
        Polymer { d: 0, ..self.clone() }
    }

    pub fn decorate(&self, d: u32) -> Polymer {
        Polymer { d, ..self.clone() }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "kind": self.kind,
            "edges": self.decorated_edges(),
            "len": self.length(),
        })
    }
}

/// `ι_d`: the undecorated image of a polymer given as a raw decorated edge set.
pub fn undecorate(edges: &[Edge], d: u32) -> Result<Polymer> {
    Ok(Polymer::from_edges(edges, d)?.undecorate())
}

/// Two polymers are connected when their union is connected, i.e. they share a site.
pub fn connectivity(p: &Polymer, q: &Polymer) -> bool {
    // Polymers are unions of full decoration chains, so shared sites imply shared spin-3/2 sites.
    let (small, large) = if p.path.len() <= q.path.len() { (p, q) } else { (q, p) };
    small.path.iter().any(|v| large.path.contains(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `𝒫_{N,K}`: loops off `Λ_K` and walks between sites of `∂Λ_K`.
    Bulk,
    /// `𝒫̊_{N,K}`: additionally walks ending on `∂Λ_N`.
    Interior,
    /// Segments for the fixed-boundary expansion: like `Interior`, but walks
    /// do not pass through `∂Λ_N` and loops meet `∂Λ_N` at most once. Two
    /// segments may share a site of `∂Λ_N` that ends both of them.
    Segments,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "bulk" => Ok(Variant::Bulk),
            "interior" => Ok(Variant::Interior),
            "segments" => Ok(Variant::Segments),
            _ => Err(Error::InvalidInput(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolymerFamily {
    pub center: DualSite,
    pub n: u32,
    pub k: u32,
    pub d: u32,
    pub variant: Variant,
    pub max_length: Option<usize>,
    pub members: Vec<Polymer>,
    pub outer_boundary: BTreeSet<Vertex>,
    pub inner_boundary: BTreeSet<Vertex>,
}

impl PolymerFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for p in &self.members {
            s.push_str(&p.to_json().to_string());
            s.push('\n');
        }
        s
    }

    /// Family made of the given members, with the boundaries of this one.
    pub fn with_members(&self, members: Vec<Polymer>) -> PolymerFamily {
        PolymerFamily { members, ..self.clone() }
    }
}

/// Undecorated graph on dense indices.
struct Dense {
    verts: Vec<Vertex>,
    adj: Vec<Vec<usize>>,
}

impl Dense {
    fn new(edges: impl IntoIterator<Item = (Vertex, Vertex)>, keep: impl Fn(&Vertex) -> bool) -> Dense {
        let edges: Vec<(Vertex, Vertex)> = edges.into_iter().filter(|(a, b)| keep(a) && keep(b)).collect();
        let verts: Vec<Vertex> = edges.iter().flat_map(|(a, b)| [*a, *b]).collect::<BTreeSet<_>>().into_iter().collect();
        let index: HashMap<Vertex, usize> = verts.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut adj = vec![Vec::new(); verts.len()];
        for (a, b) in edges {
            adj[index[&a]].push(index[&b]);
            adj[index[&b]].push(index[&a]);
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        Dense { verts, adj }
    }
}

struct Budget {
    used: u64,
    cap: u64,
}

impl Budget {
    fn tick(&mut self, found: usize) -> Result<()> {
        self.used += 1;
        if self.used > self.cap {
            return Err(Error::ResourceLimit {
                what: format!("polymer enumeration ({found} polymers found so far)"),
                explored: self.used,
                budget: self.cap,
            });
        }
        Ok(())
    }
}

/// Whether `from` can reach a site satisfying `target` through sites that are
/// off the current path and pass `open`.
fn reaches(g: &Dense, from: usize, on: &[bool], open: impl Fn(usize) -> bool, target: impl Fn(usize) -> bool, seen: &mut [bool]) -> bool {
    seen.iter_mut().for_each(|x| *x = false);
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(x) = stack.pop() {
        for &y in &g.adj[x] {
            if seen[y] {
                continue;
            }
            if target(y) {
                return true;
            }
            if !on[y] && open(y) {
                seen[y] = true;
                stack.push(y);
            }
        }
    }
    false
}

/// Simple cycles of `g`, each reported once, with length at most `max_len`.
/// Branches that can no longer close are cut, so the work is polynomial in
/// the output.
fn dense_loops(g: &Dense, max_len: usize, budget: &mut Budget, out: &mut Vec<Vec<usize>>) -> Result<()> {
    #[allow(clippy::too_many_arguments)]
    fn rec(g: &Dense, s: usize, path: &mut Vec<usize>, on: &mut [bool], max_len: usize, budget: &mut Budget, out: &mut Vec<Vec<usize>>, seen: &mut Vec<bool>) -> Result<()> {
        let cur = *path.last().unwrap();
        for &w in &g.adj[cur] {
            budget.tick(out.len())?;
            if w == s && path.len() >= 3 && path[1] < cur {
                out.push(path.clone());
            } else if w > s && !on[w] && path.len() < max_len {
                on[w] = true;
                path.push(w);
                if reaches(g, w, on, |y| y > s, |y| y == s, seen) {
                    rec(g, s, path, on, max_len, budget, out, seen)?;
                }
                path.pop();
                on[w] = false;
            }
        }
        Ok(())
    }
    let mut on = vec![false; g.verts.len()];
    let mut seen = vec![false; g.verts.len()];
    for s in 0..g.verts.len() {
        on[s] = true;
        rec(g, s, &mut vec![s], &mut on, max_len, budget, out, &mut seen)?;
        on[s] = false;
    }
    Ok(())
}

/// Self-avoiding walks of `g` between distinct `ends` sites, each reported once.
/// Sites in `stop` may end a walk but not be passed through.
fn dense_walks(g: &Dense, ends: &[bool], stop: &[bool], max_len: usize, budget: &mut Budget, out: &mut Vec<Vec<usize>>) -> Result<()> {
    #[allow(clippy::too_many_arguments)]
    fn rec(g: &Dense, ends: &[bool], stop: &[bool], path: &mut Vec<usize>, on: &mut [bool], max_len: usize, budget: &mut Budget, out: &mut Vec<Vec<usize>>, seen: &mut Vec<bool>) -> Result<()> {
        let cur = *path.last().unwrap();
        let s = path[0];
        for &w in &g.adj[cur] {
            if on[w] {
                continue;
            }
            budget.tick(out.len())?;
            path.push(w);
            if ends[w] && w > s {
                out.push(path.clone());
            }
            if !stop[w] && path.len() <= max_len {
                on[w] = true;
                if reaches(g, w, on, |y| !stop[y], |y| !on[y] && ends[y] && y > s, seen) {
                    rec(g, ends, stop, path, on, max_len, budget, out, seen)?;
                }
                on[w] = false;
            }
            path.pop();
        }
        Ok(())
    }
    let mut on = vec![false; g.verts.len()];
    let mut seen = vec![false; g.verts.len()];
    for s in 0..g.verts.len() {
        if !ends[s] || max_len == 0 {
            continue;
        }
        on[s] = true;
        rec(g, ends, stop, &mut vec![s], &mut on, max_len, budget, out, &mut seen)?;
        on[s] = false;
    }
    Ok(())
}

fn uedge_ends(region: &Region) -> Vec<(Vertex, Vertex)> {
    // Regions are built at d = 0 here, so edges join spin-3/2 sites directly.
    region.edges.iter().map(|e| (e.0, e.1)).collect()
}

/// Exhaustive enumeration of `𝒫_{N,K}`, `𝒫̊_{N,K}` or the segment family,
/// for volumes centred at `center`.
pub fn enumerate_family_at(
    center: DualSite,
    n: u32,
    k: u32,
    d: u32,
    variant: Variant,
    max_length: Option<usize>,
    node_budget: u64,
) -> Result<PolymerFamily> {
    if variant != Variant::Bulk && n < 2 {
        return Err(Error::InvalidInput("the interior families need N >= 2".into()));
    }
    let ann = Annulus::new(center, n, k, 0)?;
    let inner_sites: BTreeSet<Vertex> = ann.inner.as_ref().map(|r| r.vertices.clone()).unwrap_or_default();
    let inner_boundary = ann.inner_boundary();
    let outer_boundary = ann.outer.boundary.clone();
    let cap = max_length.unwrap_or(usize::MAX);
    let mut budget = Budget { used: 0, cap: node_budget };
    let mut members = Vec::new();

    let loop_graph = Dense::new(uedge_ends(&ann.outer), |v| !inner_sites.contains(v));
    let mut raw = Vec::new();
    dense_loops(&loop_graph, cap, &mut budget, &mut raw)?;
    for cyc in raw {
        let path: Vec<Vertex> = cyc.iter().map(|i| loop_graph.verts[*i]).collect();
        if variant == Variant::Segments && path.iter().filter(|v| outer_boundary.contains(v)).count() > 1 {
            continue;
        }
        members.push(Polymer::from_path(PolymerKind::Loop, d, path)?);
    }

    let walk_ends: BTreeSet<Vertex> = match variant {
        Variant::Bulk => inner_boundary.clone(),
        Variant::Interior | Variant::Segments => inner_boundary.union(&outer_boundary).copied().collect(),
    };
    if !walk_ends.is_empty() {
        let annulus_edges: Vec<(Vertex, Vertex)> = {
            let inner_edges: BTreeSet<Edge> = ann.inner.as_ref().map(|r| r.edges.clone()).unwrap_or_default();
            ann.outer.edges.iter().filter(|e| !inner_edges.contains(e)).map(|e| (e.0, e.1)).collect()
        };
        let g = Dense::new(annulus_edges, |_| true);
        let ends: Vec<bool> = g.verts.iter().map(|v| walk_ends.contains(v)).collect();
        let stop: Vec<bool> = g
            .verts
            .iter()
            .map(|v| variant == Variant::Segments && outer_boundary.contains(v))
            .collect();
        let mut raw = Vec::new();
        dense_walks(&g, &ends, &stop, cap, &mut budget, &mut raw)?;
        for w in raw {
            let path: Vec<Vertex> = w.iter().map(|i| g.verts[*i]).collect();
            members.push(Polymer::from_path(PolymerKind::Walk, d, path)?);
        }
    }
    members.sort();
    members.dedup();
    Ok(PolymerFamily { center, n, k, d, variant, max_length, members, outer_boundary, inner_boundary })
}

pub fn enumerate_family(n: u32, k: u32, d: u32, variant: Variant, max_length: Option<usize>) -> Result<PolymerFamily> {
    enumerate_family_at(DualSite::ORIGIN, n, k, d, variant, max_length, DEFAULT_NODE_BUDGET)
}

/// `|{φ ∈ family : ℓ(φ) = k, v ∈ φ}|`.
pub fn count_through_vertex(v: &Vertex, k: usize, family: &PolymerFamily) -> usize {
    family.members.iter().filter(|p| p.length() == k && p.contains_site(v)).count()
}

/// `n_k(p)`: members of length `k` connected to `p` (including `p` itself).
pub fn count_intersecting(p: &Polymer, k: usize, family: &PolymerFamily) -> usize {
    family.members.iter().filter(|q| q.length() == k && connectivity(p, q)).count()
}

/// Lemma-style per-site bound `3(k+1)2^{k-2}` on polymers of length `k` through a site.
pub fn through_vertex_bound(k: u64) -> f64 {
    3.0 * (k as f64 + 1.0) * 2f64.powi(k as i32 - 2)
}

/// Bounds on the number of walks of length 1..=4 through one site of the
/// interior families.
pub const SMALL_WALK_BOUNDS: [usize; 4] = [1, 4, 5, 10];

/// For the interior family `𝒫̊_{N,K}` at `d = 0`, the largest number of
/// polymers of each length 1..=4 through a single spin-3/2 site, per class of
/// site in `Λ_N \ Λ̊_K`.
pub fn small_walk_counts(n: u32, k: u32) -> Result<BTreeMap<VertexClass, [usize; 4]>> {
    let fam = enumerate_family_at(DualSite::ORIGIN, n, k, 0, Variant::Interior, Some(4), DEFAULT_NODE_BUDGET)?;
    let ann = Annulus::new(DualSite::ORIGIN, n, k, 0)?;
    let mut out: BTreeMap<VertexClass, [usize; 4]> = BTreeMap::new();
    for v in ann.outer.vertices.iter().filter(|v| v.is_spin32()) {
        let class = ann.classify(*v);
        if class == VertexClass::InsideInner {
            continue;
        }
        let row = out.entry(class).or_insert([0; 4]);
        for len in 1..=4 {
            row[len - 1] = row[len - 1].max(count_through_vertex(v, len, &fam));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ThroughCounts {
    pub loops: usize,
    pub walks: usize,
}

/// Counts every loop and every self-avoiding walk of undecorated length `k`
/// through the spin-3/2 site `v` on the infinite lattice. The search runs
/// inside a volume large enough that no such polymer can reach its boundary.
pub fn count_all_through_vertex(v: Vertex, k: usize) -> Result<ThroughCounts> {
    if !v.is_spin32() {
        return Err(Error::InvalidInput("site must be spin-3/2".into()));
    }
    let center = v.plaquettes()[0];
    let window = build_volume(center, k as u32 + 2, 0);
    let dist = window.bfs(v);
    if window.boundary.iter().any(|b| dist[b] as usize <= k) {
        return Err(Error::PatchTooSmall(format!("window around {v} for length {k}")));
    }
    let g = Dense::new(uedge_ends(&window), |_| true);
    let start = g.verts.iter().position(|w| *w == v).unwrap();
    let mut budget = Budget { used: 0, cap: DEFAULT_NODE_BUDGET };
    // Arms from v; a walk through v is an unordered pair of disjoint arms.
    let mut arms: Vec<Vec<Vec<usize>>> = vec![Vec::new(); k + 1];
    fn grow(g: &Dense, path: &mut Vec<usize>, on: &mut [bool], k: usize, arms: &mut Vec<Vec<Vec<usize>>>, budget: &mut Budget) -> Result<()> {
        arms[path.len() - 1].push(path.clone());
        if path.len() > k {
            return Ok(());
        }
        let cur = *path.last().unwrap();
        for &w in &g.adj[cur] {
            if !on[w] {
                budget.tick(0)?;
                on[w] = true;
                path.push(w);
                grow(g, path, on, k, arms, budget)?;
                path.pop();
                on[w] = false;
            }
        }
        Ok(())
    }
    let mut on = vec![false; g.verts.len()];
    on[start] = true;
    grow(&g, &mut vec![start], &mut on, k, &mut arms, &mut budget)?;
    let mut walks: HashSet<Vec<usize>> = HashSet::new();
    for i in 0..=k {
        for a in &arms[i] {
            for b in &arms[k - i] {
                if a[1..].iter().any(|x| b[1..].contains(x)) {
                    continue;
                }
                let mut p: Vec<usize> = a.iter().rev().copied().collect();
                p.extend_from_slice(&b[1..]);
                if p.first() > p.last() {
                    p.reverse();
                }
                walks.insert(p);
            }
        }
    }
    let mut loops = 0;
    for a in &arms[k - 1] {
        let last = *a.last().unwrap();
        if k >= 3 && g.adj[last].contains(&start) && a[1] < last {
            loops += 1;
        }
    }
    Ok(ThroughCounts { loops, walks: walks.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_volume, Site};
    use proptest::prelude::*;

    fn hexagon(d: u32) -> Polymer {
        Polymer::from_path(PolymerKind::Loop, d, DualSite::ORIGIN.hexagon_vertices_in_order().to_vec()).unwrap()
    }

    #[test]
    fn hexagon_loop_basics() {
        let h = hexagon(2);
        assert_eq!(h.length(), 6);
        assert_eq!(h.decorated_edges().len(), 18);
        let back = Polymer::from_edges(&h.decorated_edges(), 2).unwrap();
        assert_eq!(back, h);
        let u = undecorate(&h.decorated_edges(), 2).unwrap();
        assert_eq!(u.decorated_edges().len(), 6);
        assert_eq!(u.length(), 6);
        assert_eq!(u.decorate(2), h);
    }

    #[test]
    fn short_walk_undecorates() {
        let a = Vertex::up(0, 0);
        let b = Vertex::down(0, 0);
        let c = Vertex::up(1, 0);
        let w = Polymer::from_path(PolymerKind::Walk, 1, vec![a, b, c]).unwrap();
        assert_eq!(w.decorated_edges().len(), 4);
        let u = undecorate(&w.decorated_edges(), 1).unwrap();
        assert_eq!(u.length(), 2);
        assert_eq!(u.endpoints(), Some((a, c)));
    }

    #[test]
    fn malformed_polymers_rejected() {
        let a = Vertex::up(0, 0);
        let e = UEdge::new(0, 0, 0);
        // A decoration endpoint is not allowed.
        let half = vec![Edge::new(a, Vertex::deco(e, 1))];
        assert!(matches!(Polymer::from_edges(&half, 2), Err(Error::MalformedPolymer(_))));
        // A degree-3 site.
        let star: Vec<Edge> = a.incident_uedges().unwrap().iter().map(|e| Edge::new(e.up_end(), e.down_end())).collect();
        assert!(Polymer::from_edges(&star, 0).is_err());
        assert!(Polymer::from_path(PolymerKind::Walk, 0, vec![a, Vertex::down(5, 5)]).is_err());
    }

    #[test]
    fn canonical_form_is_direction_and_rotation_free() {
        let mut path = DualSite::new(1, 1).hexagon_vertices_in_order().to_vec();
        let p = Polymer::from_path(PolymerKind::Loop, 0, path.clone()).unwrap();
        path.rotate_left(2);
        assert_eq!(Polymer::from_path(PolymerKind::Loop, 0, path.clone()).unwrap(), p);
        path.reverse();
        assert_eq!(Polymer::from_path(PolymerKind::Loop, 0, path).unwrap(), p);
    }

    #[test]
    fn single_hexagon_family() {
        let f = enumerate_family(1, 0, 0, Variant::Bulk, None).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.members[0].length(), 6);
    }

    #[test]
    fn walk_constraints_hold() {
        let f = enumerate_family(2, 1, 0, Variant::Bulk, None).unwrap();
        let inner = build_volume(DualSite::ORIGIN, 1, 0);
        for p in &f.members {
            match p.endpoints() {
                Some((a, b)) => {
                    assert!(inner.boundary.contains(&a) && inner.boundary.contains(&b));
                    for e in p.decorated_edges() {
                        assert!(!inner.edges.contains(&e));
                    }
                }
                None => assert!(p.path().iter().all(|v| !inner.vertices.contains(v))),
            }
        }
        let g = enumerate_family(2, 0, 0, Variant::Interior, None).unwrap();
        let outer = build_volume(DualSite::ORIGIN, 2, 0);
        for p in &g.members {
            if let Some((a, b)) = p.endpoints() {
                assert!(outer.boundary.contains(&a) && outer.boundary.contains(&b));
            }
        }
    }

    /// Independent oracle: filter every edge subset of size <= `max` by degree profile.
    fn subset_oracle(region: &Region, max: usize) -> BTreeSet<Polymer> {
        let edges: Vec<Edge> = region.edges.iter().copied().collect();
        let mut out = BTreeSet::new();
        let mut chosen = Vec::new();
        fn rec(edges: &[Edge], start: usize, max: usize, chosen: &mut Vec<Edge>, out: &mut BTreeSet<Polymer>) {
            if !chosen.is_empty() {
                if let Ok(p) = Polymer::from_edges(chosen, 0) {
                    out.insert(p);
                }
            }
            if chosen.len() == max {
                return;
            }
            for i in start..edges.len() {
                chosen.push(edges[i]);
                rec(edges, i + 1, max, chosen, out);
                chosen.pop();
            }
        }
        rec(&edges, 0, max, &mut chosen, &mut out);
        out
    }

    #[test]
    fn enumeration_matches_subset_oracle() {
        let outer = build_volume(DualSite::ORIGIN, 2, 0);
        let all = subset_oracle(&outer, 6);
        let boundary = &outer.boundary;
        let expected: BTreeSet<Polymer> = all
            .iter()
            .filter(|p| match p.endpoints() {
                None => true,
                Some((a, b)) => boundary.contains(&a) && boundary.contains(&b),
            })
            .cloned()
            .collect();
        let fam = enumerate_family(2, 0, 0, Variant::Interior, Some(6)).unwrap();
        let got: BTreeSet<Polymer> = fam.members.iter().cloned().collect();
        assert_eq!(got, expected);

        let inner = build_volume(DualSite::ORIGIN, 1, 0);
        let bulk_expected: BTreeSet<Polymer> = all
            .iter()
            .filter(|p| match p.endpoints() {
                None => p.path().iter().all(|v| !inner.vertices.contains(v)),
                Some((a, b)) => {
                    inner.boundary.contains(&a)
                        && inner.boundary.contains(&b)
                        && p.decorated_edges().iter().all(|e| !inner.edges.contains(e))
                }
            })
            .cloned()
            .collect();
        let bulk = enumerate_family(2, 1, 0, Variant::Bulk, Some(6)).unwrap();
        assert_eq!(bulk.members.iter().cloned().collect::<BTreeSet<_>>(), bulk_expected);
    }

    #[test]
    fn segments_do_not_cross_the_outer_boundary() {
        let f = enumerate_family(2, 1, 0, Variant::Segments, None).unwrap();
        let outer = build_volume(DualSite::ORIGIN, 2, 0);
        for p in &f.members {
            let hits: Vec<_> = p.path().iter().filter(|v| outer.boundary.contains(v)).collect();
            match p.endpoints() {
                None => assert!(hits.len() <= 1),
                Some((a, b)) => {
                    for v in hits {
                        assert!(*v == a || *v == b);
                    }
                }
            }
        }
    }

    #[test]
    fn full_lattice_counts() {
        let v = Vertex::up(0, 0);
        assert_eq!(count_all_through_vertex(v, 1).unwrap(), ThroughCounts { loops: 0, walks: 3 });
        assert_eq!(count_all_through_vertex(v, 6).unwrap().loops, 3);
        // Walks of length 2 through v: 3 as middle site, 6 as an end.
        assert_eq!(count_all_through_vertex(v, 2).unwrap().walks, 9);
        for k in 1..=6u64 {
            let c = count_all_through_vertex(Vertex::down(2, -1), k as usize).unwrap();
            assert!(((c.loops + c.walks) as f64) <= through_vertex_bound(k));
        }
    }

    #[test]
    fn small_walks_within_bounds() {
        for (n, k) in [(2, 0), (2, 1), (3, 1), (3, 2)] {
            for (class, row) in small_walk_counts(n, k).unwrap() {
                for (c, b) in row.iter().zip(SMALL_WALK_BOUNDS) {
                    assert!(*c <= b, "{class:?} at ({n},{k}): {row:?}");
                }
            }
        }
        // Two rings apart, only length-4 walks reach both boundaries.
        let c = small_walk_counts(2, 1).unwrap();
        assert_eq!(c[&VertexClass::InnerBoundary][0], 0);
    }

    #[test]
    fn loop_lengths_even() {
        let f = enumerate_family(3, 0, 0, Variant::Bulk, Some(12)).unwrap();
        assert!(f.members.iter().all(|p| p.length() % 2 == 0));
        assert!(f.members.iter().any(|p| p.length() == 10));
    }

    #[test]
    fn node_budget_reports_progress() {
        let err = enumerate_family_at(DualSite::ORIGIN, 3, 0, 0, Variant::Interior, None, 1000).unwrap_err();
        assert!(matches!(err, Error::ResourceLimit { budget: 1000, .. }));
    }

    #[test]
    fn jsonl_is_sorted() {
        let f = enumerate_family(2, 1, 1, Variant::Bulk, Some(5)).unwrap();
        let text = f.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), f.len());
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["edges"].as_array().unwrap().len(), 2 * first["len"].as_u64().unwrap() as usize);
        assert!(f.members.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn decoration_sites_lie_on_carrier() {
        let h = hexagon(3);
        for s in h.sites() {
            assert!(h.contains_site(&s));
            if let Site::Deco { .. } = s.site {
                assert!(h.uedges().contains(&s.carrier().unwrap()));
            }
        }
    }

    proptest! {
        #[test]
        fn decoration_preserves_connectivity(i in 0usize..400, j in 0usize..400, d in 1u32..4) {
            let f = enumerate_family(3, 1, 0, Variant::Interior, Some(6)).unwrap();
            let p = &f.members[i % f.len()];
            let q = &f.members[j % f.len()];
            let (pd, qd) = (p.decorate(d), q.decorate(d));
            let shared = !pd.sites().is_disjoint(&qd.sites());
            prop_assert_eq!(connectivity(p, q), shared);
            prop_assert_eq!(connectivity(&pd, &qd), connectivity(p, q));
            prop_assert_eq!(pd.undecorate(), p.clone());
            prop_assert_eq!(pd.length(), p.length());
            prop_assert_eq!(Polymer::from_edges(&pd.decorated_edges(), d).unwrap(), pd);
        }

        #[test]
        fn canonicalization_idempotent(i in 0usize..400, rot in 0usize..12, rev: bool) {
            let f = enumerate_family(3, 0, 0, Variant::Interior, Some(8)).unwrap();
            let p = &f.members[i % f.len()];
            let mut path = p.path().to_vec();
            if p.kind == PolymerKind::Loop {
                let r = rot % path.len();
                path.rotate_left(r);
            }
            if rev {
                path.reverse();
            }
            prop_assert_eq!(&Polymer::from_path(p.kind, p.d, path).unwrap(), p);
        }
    }
}
