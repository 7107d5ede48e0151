//! Decorated hexagonal lattice, its triangular dual, and the finite volumes
//! built from concentric hexagon rings.
//!
//! Plaquettes (dual sites) use axial coordinates `(k, l)` whose six neighbours
//! are `(±1,0)`, `(0,±1)`, `±(1,-1)`. Every spin-3/2 vertex of the undecorated
//! lattice is a triangle of mutually adjacent plaquettes: the up triangle
//! `U(k,l) = {(k,l),(k+1,l),(k,l+1)}` and the down triangle
//! `D(k,l) = {(k+1,l),(k,l+1),(k+1,l+1)}`. Naming a vertex by its triangle
//! gives every site exactly one encoding.
//!
//! Each undecorated edge joins an up vertex to a down vertex and is anchored
//! at the up end: direction 0 goes to `D(k,l)`, 1 to `D(k-1,l)`, 2 to
//! `D(k,l-1)`. Decoration sites on that edge are numbered `1..=d` starting
//! from the up end.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DualSite {
    pub k: i32,
    pub l: i32,
}

pub const DUAL_DIRECTIONS: [(i32, i32); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

impl DualSite {
    pub const ORIGIN: DualSite = DualSite { k: 0, l: 0 };

    pub fn new(k: i32, l: i32) -> Self {
        DualSite { k, l }
    }

    pub fn offset(self, dk: i32, dl: i32) -> Self {
        DualSite::new(self.k + dk, self.l + dl)
    }

    pub fn neighbors(self) -> [DualSite; 6] {
        DUAL_DIRECTIONS.map(|(dk, dl)| self.offset(dk, dl))
    }

    /// The six undecorated edges bounding this plaquette.
    pub fn hexagon_edges(self) -> [UEdge; 6] {
        let DualSite { k, l } = self;
        [
            UEdge::new(k - 1, l, 0),
            UEdge::new(k, l - 1, 0),
            UEdge::new(k, l, 1),
            UEdge::new(k, l - 1, 1),
            UEdge::new(k, l, 2),
            UEdge::new(k - 1, l, 2),
        ]
    }

    pub fn hexagon_vertices(self) -> [Vertex; 6] {
        let DualSite { k, l } = self;
        [
            Vertex::up(k, l),
            Vertex::up(k - 1, l),
            Vertex::up(k, l - 1),
            Vertex::down(k - 1, l),
            Vertex::down(k, l - 1),
            Vertex::down(k - 1, l - 1),
        ]
    }

    /// Hexagon vertices in cyclic order around the plaquette.
    pub fn hexagon_vertices_in_order(self) -> [Vertex; 6] {
        let DualSite { k, l } = self;
        [
            Vertex::up(k, l),
            Vertex::down(k - 1, l),
            Vertex::up(k - 1, l),
            Vertex::down(k - 1, l - 1),
            Vertex::up(k, l - 1),
            Vertex::down(k, l - 1),
        ]
    }
}

/// Graph distance on the triangular dual lattice.
pub fn dual_distance(a: DualSite, b: DualSite) -> u32 {
    let dk = (b.k - a.k) as i64;
    let dl = (b.l - a.l) as i64;
    ((dk.abs() + dl.abs() + (dk + dl).abs()) / 2) as u32
}

/// Plaquettes within dual distance `r` of `center`, sorted.
pub fn dual_ball(center: DualSite, r: u32) -> Vec<DualSite> {
    let r = r as i32;
    let mut out = Vec::new();
    for dk in -r..=r {
        for dl in -r..=r {
            let s = center.offset(dk, dl);
            if dual_distance(center, s) <= r as u32 {
                out.push(s);
            }
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Up,
    Down,
    /// Decoration site `pos` (1-based, from the up end) on edge `dir` of `U(k,l)`.
    Deco { dir: u8, pos: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vertex {
    pub k: i32,
    pub l: i32,
    pub site: Site,
}

impl Vertex {
    pub fn up(k: i32, l: i32) -> Self {
        Vertex { k, l, site: Site::Up }
    }

    pub fn down(k: i32, l: i32) -> Self {
        Vertex { k, l, site: Site::Down }
    }

    pub fn deco(edge: UEdge, pos: u32) -> Self {
        Vertex { k: edge.k, l: edge.l, site: Site::Deco { dir: edge.dir, pos } }
    }

    /// 0 for spin-3/2 sites, otherwise the position on the subdivided edge.
    pub fn decoration(&self) -> u32 {
        match self.site {
            Site::Deco { pos, .. } => pos,
            _ => 0,
        }
    }

    pub fn is_spin32(&self) -> bool {
        self.decoration() == 0
    }

    pub fn lattice_degree(&self) -> usize {
        if self.is_spin32() {
            3
        } else {
            2
        }
    }

    /// The undecorated edge carrying a decoration site.
    pub fn carrier(&self) -> Option<UEdge> {
        match self.site {
            Site::Deco { dir, .. } => Some(UEdge::new(self.k, self.l, dir)),
            _ => None,
        }
    }

    /// The three undecorated edges at a spin-3/2 site.
    pub fn incident_uedges(&self) -> Option<[UEdge; 3]> {
        let (k, l) = (self.k, self.l);
        match self.site {
            Site::Up => Some([UEdge::new(k, l, 0), UEdge::new(k, l, 1), UEdge::new(k, l, 2)]),
            Site::Down => Some([UEdge::new(k, l, 0), UEdge::new(k + 1, l, 1), UEdge::new(k, l + 1, 2)]),
            Site::Deco { .. } => None,
        }
    }

    /// Plaquettes having this site on their boundary (3 for spin-3/2 sites, 2 otherwise).
    pub fn plaquettes(&self) -> Vec<DualSite> {
        let (k, l) = (self.k, self.l);
        match self.site {
            Site::Up => vec![DualSite::new(k, l), DualSite::new(k + 1, l), DualSite::new(k, l + 1)],
            Site::Down => vec![
                DualSite::new(k + 1, l),
                DualSite::new(k, l + 1),
                DualSite::new(k + 1, l + 1),
            ],
            Site::Deco { dir, .. } => UEdge::new(k, l, dir).plaquettes().to_vec(),
        }
    }

    /// Neighbours in the decorated lattice with `d` sites per edge.
    pub fn neighbors(&self, d: u32) -> Vec<Vertex> {
        match self.site {
            Site::Up | Site::Down => {
                let edges = self.incident_uedges().unwrap();
                edges
                    .iter()
                    .map(|e| {
                        let up_end = self.site == Site::Up;
                        match (d, up_end) {
                            (0, true) => e.down_end(),
                            (0, false) => e.up_end(),
                            (_, true) => Vertex::deco(*e, 1),
                            (_, false) => Vertex::deco(*e, d),
                        }
                    })
                    .collect()
            }
            Site::Deco { dir, pos } => {
                let e = UEdge::new(self.k, self.l, dir);
                let prev = if pos == 1 { e.up_end() } else { Vertex::deco(e, pos - 1) };
                let next = if pos == d { e.down_end() } else { Vertex::deco(e, pos + 1) };
                vec![prev, next]
            }
        }
    }

    pub fn valid_for(&self, d: u32) -> bool {
        match self.site {
            Site::Deco { dir, pos } => dir < 3 && pos >= 1 && pos <= d,
            _ => true,
        }
    }

    /// Dense 32-bit id used for sphere variables. Coordinates must lie in
    /// `[-1024, 1023]` and decoration positions in `1..=64`.
    pub fn var_id(&self) -> u32 {
        let sub: u32 = match self.site {
            Site::Up => 0,
            Site::Down => 1,
            Site::Deco { dir, pos } => 2 + dir as u32 * 64 + (pos - 1),
        };
        let k = (self.k + 1024) as u32;
        let l = (self.l + 1024) as u32;
        (k << 21) | (l << 10) | sub
    }

    pub fn from_var_id(id: u32) -> Vertex {
        let k = (id >> 21) as i32 - 1024;
        let l = ((id >> 10) & 0x7ff) as i32 - 1024;
        let sub = id & 0x3ff;
        let site = match sub {
            0 => Site::Up,
            1 => Site::Down,
            s => Site::Deco { dir: ((s - 2) / 64) as u8, pos: (s - 2) % 64 + 1 },
        };
        Vertex { k, l, site }
    }

    pub fn parse(s: &str) -> Result<Vertex> {
        let bad = || Error::InvalidInput(format!("cannot parse vertex {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| parts.get(i).and_then(|p| p.parse::<i64>().ok()).ok_or_else(bad);
        match parts.first().copied() {
            Some("U") if parts.len() == 3 => Ok(Vertex::up(num(1)? as i32, num(2)? as i32)),
            Some("D") if parts.len() == 3 => Ok(Vertex::down(num(1)? as i32, num(2)? as i32)),
            Some("E") if parts.len() == 5 => {
                let dir = num(3)?;
                let pos = num(4)?;
                if !(0..3).contains(&dir) || pos < 1 {
                    return Err(bad());
                }
                Ok(Vertex::deco(UEdge::new(num(1)? as i32, num(2)? as i32, dir as u8), pos as u32))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.site {
            Site::Up => write!(f, "U:{}:{}", self.k, self.l),
            Site::Down => write!(f, "D:{}:{}", self.k, self.l),
            Site::Deco { dir, pos } => write!(f, "E:{}:{}:{}:{}", self.k, self.l, dir, pos),
        }
    }
}

impl Serialize for Vertex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Undecorated edge anchored at its up end `U(k,l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UEdge {
    pub k: i32,
    pub l: i32,
    pub dir: u8,
}

impl UEdge {
    pub fn new(k: i32, l: i32, dir: u8) -> Self {
        debug_assert!(dir < 3);
        UEdge { k, l, dir }
    }

    pub fn up_end(&self) -> Vertex {
        Vertex::up(self.k, self.l)
    }

    pub fn down_end(&self) -> Vertex {
        match self.dir {
            0 => Vertex::down(self.k, self.l),
            1 => Vertex::down(self.k - 1, self.l),
            _ => Vertex::down(self.k, self.l - 1),
        }
    }

    pub fn ends(&self) -> (Vertex, Vertex) {
        (self.up_end(), self.down_end())
    }

    /// The two plaquettes sharing this edge.
    pub fn plaquettes(&self) -> [DualSite; 2] {
        let (k, l) = (self.k, self.l);
        match self.dir {
            0 => [DualSite::new(k + 1, l), DualSite::new(k, l + 1)],
            1 => [DualSite::new(k, l), DualSite::new(k, l + 1)],
            _ => [DualSite::new(k, l), DualSite::new(k + 1, l)],
        }
    }

    /// Sites along the subdivided edge from the up end to the down end.
    pub fn chain(&self, d: u32) -> Vec<Vertex> {
        let mut v = Vec::with_capacity(d as usize + 2);
        v.push(self.up_end());
        for pos in 1..=d {
            v.push(Vertex::deco(*self, pos));
        }
        v.push(self.down_end());
        v
    }

    pub fn decorated_edges(&self, d: u32) -> Vec<Edge> {
        self.chain(d).windows(2).map(|w| Edge::new(w[0], w[1])).collect()
    }

    /// The edge between two adjacent spin-3/2 sites, if any.
    pub fn between(a: Vertex, b: Vertex) -> Option<UEdge> {
        let (u, w) = match (a.site, b.site) {
            (Site::Up, Site::Down) => (a, b),
            (Site::Down, Site::Up) => (b, a),
            _ => return None,
        };
        (0..3u8).map(|dir| UEdge::new(u.k, u.l, dir)).find(|e| e.down_end() == w)
    }
}

/// Unordered edge stored with ordered endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge(pub Vertex, pub Vertex);

impl Edge {
    pub fn new(a: Vertex, b: Vertex) -> Self {
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn other(&self, v: Vertex) -> Vertex {
        if self.0 == v {
            self.1
        } else {
            self.0
        }
    }

    pub fn contains(&self, v: Vertex) -> bool {
        self.0 == v || self.1 == v
    }
}

impl Serialize for Edge {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeTuple;
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&self.0)?;
        t.serialize_element(&self.1)?;
        t.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub d: u32,
    pub vertices: BTreeSet<Vertex>,
    pub edges: BTreeSet<Edge>,
    pub boundary: BTreeSet<Vertex>,
}

impl Region {
    pub fn from_parts(d: u32, mut vertices: BTreeSet<Vertex>, edges: BTreeSet<Edge>) -> Region {
        for e in &edges {
            vertices.insert(e.0);
            vertices.insert(e.1);
        }
        let boundary = vertices
            .iter()
            .filter(|v| v.neighbors(d).into_iter().any(|w| !edges.contains(&Edge::new(**v, w))))
            .copied()
            .collect();
        Region { d, vertices, edges, boundary }
    }

    pub fn from_uedges<'a>(d: u32, uedges: impl IntoIterator<Item = &'a UEdge>) -> Region {
        let edges = uedges.into_iter().flat_map(|e| e.decorated_edges(d)).collect();
        Region::from_parts(d, BTreeSet::new(), edges)
    }

    /// Vertices off the boundary and the edges among them.
    pub fn interior(&self) -> Region {
        let vertices: BTreeSet<Vertex> = self.vertices.difference(&self.boundary).copied().collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| vertices.contains(&e.0) && vertices.contains(&e.1))
            .copied()
            .collect();
        Region::from_parts(self.d, vertices, edges)
    }

    pub fn union(&self, other: &Region) -> Result<Region> {
        if self.d != other.d {
            return Err(Error::InvalidInput("union of regions with different d".into()));
        }
        let vertices = self.vertices.union(&other.vertices).copied().collect();
        let edges = self.edges.union(&other.edges).copied().collect();
        Ok(Region::from_parts(self.d, vertices, edges))
    }

    pub fn degree_in_region(&self, v: Vertex) -> usize {
        v.neighbors(self.d).into_iter().filter(|w| self.edges.contains(&Edge::new(v, *w))).count()
    }

    pub fn contains(&self, v: &Vertex) -> bool {
        self.vertices.contains(v)
    }

    pub fn adjacency(&self) -> BTreeMap<Vertex, Vec<Vertex>> {
        let mut adj: BTreeMap<Vertex, Vec<Vertex>> = self.vertices.iter().map(|v| (*v, Vec::new())).collect();
        for e in &self.edges {
            adj.get_mut(&e.0).unwrap().push(e.1);
            adj.get_mut(&e.1).unwrap().push(e.0);
        }
        adj
    }

    /// Breadth-first distances from `src` using only region edges.
    pub fn bfs(&self, src: Vertex) -> BTreeMap<Vertex, u32> {
        let adj = self.adjacency();
        let mut dist = BTreeMap::new();
        if !self.vertices.contains(&src) {
            return dist;
        }
        dist.insert(src, 0);
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[&v];
            for w in &adj[&v] {
                if !dist.contains_key(w) {
                    dist.insert(*w, dv + 1);
                    queue.push_back(*w);
                }
            }
        }
        dist
    }

    pub fn to_json(&self, n: Option<u32>, center: Option<DualSite>) -> serde_json::Value {
        serde_json::json!({
            "d": self.d,
            "n": n,
            "center": center.map(|c| [c.k, c.l]),
            "vertices": self.vertices,
            "edges": self.edges,
            "boundary": self.boundary,
        })
    }
}

/// Undecorated edges of `Λ_n(center)`.
pub fn volume_uedges(center: DualSite, n: u32) -> BTreeSet<UEdge> {
    assert!(n >= 1, "volume index starts at 1");
    dual_ball(center, n - 1).into_iter().flat_map(|p| p.hexagon_edges()).collect()
}

/// `Λ_n^{(d)}(center)`: the union of decorated hexagons within dual distance `n-1`.
pub fn build_volume(center: DualSite, n: u32, d: u32) -> Region {
    Region::from_uedges(d, &volume_uedges(center, n))
}

pub fn boundary_size(region: &Region) -> usize {
    region.boundary.len()
}

pub fn volume_size_formula(n: u64, d: u64) -> u64 {
    3 * (3 * d + 2) * n * n - 3 * d * n
}

/// `Y_v`: the spin-3/2 site `v` and the three decoration chains leaving it.
pub fn gap_cell(v: Vertex, d: u32) -> Vec<Vertex> {
    let mut out = vec![v];
    if let Some(edges) = v.incident_uedges() {
        for e in edges {
            for pos in 1..=d {
                out.push(Vertex::deco(e, pos));
            }
        }
    }
    out
}

/// `Γ_n^{(d)}(center)`: union of the cells `Y_v` over sites of `Λ_n^{(0)}`,
/// with every lattice edge between two of its sites.
pub fn build_gap_volume(center: DualSite, n: u32, d: u32) -> Region {
    let base = build_volume(center, n, 0);
    let vertices: BTreeSet<Vertex> = base.vertices.iter().flat_map(|v| gap_cell(*v, d)).collect();
    let edges = vertices
        .iter()
        .flat_map(|v| v.neighbors(d).into_iter().map(move |w| (*v, w)))
        .filter(|(_, w)| vertices.contains(w))
        .map(|(v, w)| Edge::new(v, w))
        .collect();
    Region::from_parts(d, vertices, edges)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPart {
    pub index: DualSite,
    pub sites: Vec<DualSite>,
}

/// Index set `{(k,l): 0 <= k,l <= 2n-1}`.
pub fn partition_index_set(n: u32) -> Vec<DualSite> {
    let m = 2 * n as i32;
    (0..m).flat_map(|k| (0..m).map(move |l| DualSite::new(k, l))).collect()
}

/// Parts `m + 2n·Z²` of the separating partition, restricted to `window`.
pub fn separating_partition(n: u32, window: &[DualSite]) -> Vec<PartitionPart> {
    let m = 2 * n as i32;
    let mut parts: BTreeMap<DualSite, Vec<DualSite>> =
        partition_index_set(n).into_iter().map(|i| (i, Vec::new())).collect();
    for s in window {
        let idx = DualSite::new(s.k.rem_euclid(m), s.l.rem_euclid(m));
        parts.get_mut(&idx).unwrap().push(*s);
    }
    parts
        .into_iter()
        .map(|(index, mut sites)| {
            sites.sort();
            PartitionPart { index, sites }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionAudit {
    pub n: u32,
    pub d: u32,
    pub index_size: usize,
    pub window_radius: u32,
    pub window_sites: usize,
    pub pairs_checked: u64,
    /// Same-part gap volumes never share a site.
    pub disjoint: bool,
}

/// Checks that the gap volumes `Γ_n^{(d)}(x̃)` of distinct centres in the same
/// part of the separating partition are vertex-disjoint, inside a dual ball.
pub fn partition_audit(n: u32, d: u32, window_radius: u32) -> PartitionAudit {
    let window = dual_ball(DualSite::ORIGIN, window_radius);
    let parts = separating_partition(n, &window);
    let mut pairs_checked = 0u64;
    let mut disjoint = true;
    for part in &parts {
        let mut owner: BTreeMap<Vertex, usize> = BTreeMap::new();
        for (i, c) in part.sites.iter().enumerate() {
            for v in build_gap_volume(*c, n, d).vertices {
                if owner.insert(v, i).is_some_and(|j| j != i) {
                    disjoint = false;
                }
            }
        }
        let m = part.sites.len() as u64;
        pairs_checked += m * m.saturating_sub(1) / 2;
    }
    PartitionAudit {
        n,
        d,
        index_size: partition_index_set(n).len(),
        window_radius,
        window_sites: window.len(),
        pairs_checked,
        disjoint,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRelation {
    pub lattice_distance: u32,
    /// `D_d / (2(d+1))`.
    pub scaled: f64,
    pub min_dual: u32,
    pub max_dual: u32,
    /// `scaled - 3/2 <= D̃` for every plaquette assignment.
    pub lower_holds: bool,
    /// `min D̃ <= scaled`.
    pub upper_holds_min: bool,
    /// `D̃ <= scaled` for every plaquette assignment.
    pub upper_holds_all: bool,
}

/// Compares the decorated lattice distance with the dual distance of the
/// plaquettes containing `x` and `y`, inside `Λ_window^{(d)}(0)`.
pub fn distance_relation(x: Vertex, y: Vertex, d: u32, window: u32) -> Result<DistanceRelation> {
    let patch = build_volume(DualSite::ORIGIN, window, d);
    if !patch.contains(&x) || !patch.contains(&y) {
        return Err(Error::PatchTooSmall(format!("{x} or {y} lies outside Λ_{window}")));
    }
    let from_x = patch.bfs(x);
    let from_y = patch.bfs(y);
    let dist = *from_x.get(&y).ok_or_else(|| Error::Consistency("volume is disconnected".into()))?;
    let to_edge = |m: &BTreeMap<Vertex, u32>| patch.boundary.iter().map(|b| m[b]).min().unwrap_or(0);
    // A path that leaves the patch has length at least bx + by.
    if dist > to_edge(&from_x) + to_edge(&from_y) {
        return Err(Error::PatchTooSmall(format!("geodesic from {x} to {y} may leave Λ_{window}")));
    }
    let mut min_dual = u32::MAX;
    let mut max_dual = 0;
    for p in x.plaquettes() {
        for q in y.plaquettes() {
            let dd = dual_distance(p, q);
            min_dual = min_dual.min(dd);
            max_dual = max_dual.max(dd);
        }
    }
    let denom = 2 * (d as u64 + 1);
    // Compare exactly in integers: D/(2(d+1)) - 3/2 <= t  ⟺  D - 3(d+1) <= t·2(d+1).
    let lower_holds = dist as i64 - 3 * (d as i64 + 1) <= min_dual as i64 * denom as i64;
    let upper = |t: u32| t as u64 * denom <= dist as u64;
    Ok(DistanceRelation {
        lattice_distance: dist,
        scaled: dist as f64 / denom as f64,
        min_dual,
        max_dual,
        lower_holds,
        upper_holds_min: upper(min_dual),
        upper_holds_all: upper(max_dual),
    })
}

/// Position of a site relative to a concentric pair `Λ_K ⊂ Λ_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexClass {
    InnerBoundary,
    OuterBoundary,
    /// Spin-3/2 site adjacent to `∂Λ_K` when `N = K + 1`.
    Bridge,
    Interior,
    InsideInner,
}

/// Concentric pair of volumes `Λ_K ⊂ Λ_N` around one center.
#[derive(Debug, Clone)]
pub struct Annulus {
    pub n: u32,
    pub k: u32,
    pub d: u32,
    pub center: DualSite,
    pub outer: Region,
    pub inner: Option<Region>,
}

impl Annulus {
    pub fn new(center: DualSite, n: u32, k: u32, d: u32) -> Result<Annulus> {
        if k >= n {
            return Err(Error::InvalidInput(format!("need K < N, got K={k}, N={n}")));
        }
        let outer = build_volume(center, n, d);
        let inner = if k == 0 { None } else { Some(build_volume(center, k, d)) };
        Ok(Annulus { n, k, d, center, outer, inner })
    }

    pub fn inner_boundary(&self) -> BTreeSet<Vertex> {
        self.inner.as_ref().map(|r| r.boundary.clone()).unwrap_or_default()
    }

    /// Edges of `Λ_N` that are not edges of `Λ_K`.
    pub fn annulus_edges(&self) -> BTreeSet<Edge> {
        match &self.inner {
            None => self.outer.edges.clone(),
            Some(inner) => self.outer.edges.difference(&inner.edges).copied().collect(),
        }
    }

    pub fn classify(&self, v: Vertex) -> VertexClass {
        if self.outer.boundary.contains(&v) {
            return VertexClass::OuterBoundary;
        }
        if let Some(inner) = &self.inner {
            if inner.boundary.contains(&v) {
                return VertexClass::InnerBoundary;
            }
            if inner.vertices.contains(&v) {
                return VertexClass::InsideInner;
            }
            if v.is_spin32() && self.n == self.k + 1 {
                let touches_inner = v.incident_uedges().unwrap().iter().any(|e| {
                    let (a, b) = e.ends();
                    let w = if a == v { b } else { a };
                    inner.boundary.contains(&w)
                });
                if touches_inner {
                    return VertexClass::Bridge;
                }
            }
        }
        VertexClass::Interior
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bfs_dual(a: DualSite, b: DualSite, radius: i32) -> u32 {
        let mut dist = BTreeMap::from([(a, 0u32)]);
        let mut q = VecDeque::from([a]);
        while let Some(s) = q.pop_front() {
            if s == b {
                return dist[&s];
            }
            for t in s.neighbors() {
                if t.k.abs() <= radius && t.l.abs() <= radius && !dist.contains_key(&t) {
                    dist.insert(t, dist[&s] + 1);
                    q.push_back(t);
                }
            }
        }
        unreachable!()
    }

    #[test]
    fn dual_distance_matches_bfs() {
        for k in -4..=4 {
            for l in -4..=4 {
                let b = DualSite::new(k, l);
                assert_eq!(dual_distance(DualSite::ORIGIN, b), bfs_dual(DualSite::ORIGIN, b, 12));
            }
        }
        assert_eq!(dual_distance(DualSite::ORIGIN, DualSite::new(3, 4)), 7);
        assert_eq!(dual_distance(DualSite::ORIGIN, DualSite::new(1, 0)), 1);
    }

    #[test]
    fn hexagon_edges_share_the_plaquette() {
        for p in [DualSite::ORIGIN, DualSite::new(2, -3)] {
            let edges = p.hexagon_edges();
            let mut verts = BTreeSet::new();
            for e in edges {
                assert!(e.plaquettes().contains(&p));
                verts.insert(e.up_end());
                verts.insert(e.down_end());
            }
            let expected: BTreeSet<_> = p.hexagon_vertices().into_iter().collect();
            assert_eq!(verts, expected);
            for v in p.hexagon_vertices() {
                assert!(v.plaquettes().contains(&p));
            }
        }
    }

    #[test]
    fn neighbor_relation_is_symmetric() {
        for d in 0..3 {
            let region = build_volume(DualSite::ORIGIN, 3, d);
            for v in &region.vertices {
                assert_eq!(v.neighbors(d).len(), v.lattice_degree());
                for w in v.neighbors(d) {
                    assert!(w.neighbors(d).contains(v), "{v} -> {w}");
                }
            }
        }
    }

    #[test]
    fn single_hexagon() {
        let r = build_volume(DualSite::ORIGIN, 1, 0);
        assert_eq!(r.vertices.len(), 6);
        assert_eq!(r.edges.len(), 6);
        assert_eq!(r.boundary.len(), 6);
        assert!(r.interior().vertices.is_empty());
    }

    #[test]
    fn small_counts() {
        assert_eq!(build_volume(DualSite::ORIGIN, 2, 1).vertices.len(), 54);
        for d in 0..4 {
            assert_eq!(boundary_size(&build_volume(DualSite::ORIGIN, 2, d)), 12);
        }
        let r = build_volume(DualSite::new(1, -2), 3, 2);
        assert_eq!(r.vertices.len(), 198);
        assert_eq!(r.boundary.len(), 18);
    }

    #[test]
    fn boundary_vertices_have_one_outside_edge() {
        for d in 0..3 {
            let r = build_volume(DualSite::ORIGIN, 3, d);
            for v in &r.boundary {
                assert_eq!(v.lattice_degree(), 3);
                assert_eq!(r.degree_in_region(*v), 2);
            }
            let int = r.interior();
            assert!(int.vertices.is_disjoint(&r.boundary));
            assert!(int.edges.iter().all(|e| !r.boundary.contains(&e.0) && !r.boundary.contains(&e.1)));
        }
    }

    #[test]
    fn ball_sizes() {
        for n in 1..=8u32 {
            let b = dual_ball(DualSite::ORIGIN, n - 1).len() as u32;
            assert_eq!(b, 1 + 3 * n * (n - 1));
            assert!(b <= 3 * n * n);
        }
    }

    #[test]
    fn gap_volume_contains_volume() {
        for n in 1..=3 {
            for d in 0..=2 {
                let lam = build_volume(DualSite::ORIGIN, n, d);
                let gam = build_gap_volume(DualSite::ORIGIN, n, d);
                assert!(lam.vertices.is_subset(&gam.vertices));
                assert!(lam.edges.is_subset(&gam.edges));
                let base = build_volume(DualSite::ORIGIN, n, 0).vertices.len();
                assert_eq!(gam.vertices.len(), lam.vertices.len() + 6 * n as usize * d as usize);
                assert_eq!(gap_cell(Vertex::up(0, 0), d).len(), 3 * d as usize + 1);
                assert!(base <= gam.vertices.len());
            }
        }
    }

    #[test]
    fn partition_index_set_size() {
        for n in 1..=4 {
            assert_eq!(partition_index_set(n).len() as u32, 4 * n * n);
        }
        let window = dual_ball(DualSite::ORIGIN, 6);
        let parts = separating_partition(2, &window);
        let total: usize = parts.iter().map(|p| p.sites.len()).sum();
        assert_eq!(total, window.len());
    }

    #[test]
    fn same_part_gap_volumes_disjoint() {
        for n in 2..=3 {
            for d in 0..=2 {
                let a = partition_audit(n, d, 6 * n);
                assert!(a.disjoint && a.pairs_checked > 0, "{a:?}");
                assert_eq!(a.index_size as u32, 4 * n * n);
            }
        }
    }

    #[test]
    fn vertex_string_round_trip() {
        let vs = [Vertex::up(-3, 7), Vertex::down(0, -1), Vertex::deco(UEdge::new(2, -5, 1), 3)];
        for v in vs {
            assert_eq!(Vertex::parse(&v.to_string()).unwrap(), v);
            assert_eq!(Vertex::from_var_id(v.var_id()), v);
        }
        assert!(Vertex::parse("X:1:2").is_err());
    }

    #[test]
    fn distance_relation_examples() {
        let x = Vertex::up(0, 0);
        let r = distance_relation(x, x, 0, 3).unwrap();
        assert!(r.lower_holds && r.upper_holds_min);
        // Distinct plaquettes at the same site are adjacent.
        assert_eq!(r.max_dual, 1);
        let y = Vertex::down(0, 0);
        let r = distance_relation(x, y, 0, 3).unwrap();
        assert_eq!(r.lattice_distance, 1);
        assert_eq!(r.min_dual, 0);
        assert!(r.lower_holds && r.upper_holds_min);
        // The non-shared plaquettes of two adjacent sites are two apart.
        assert_eq!(r.max_dual, 2);
        assert!(!r.upper_holds_all);
    }

    #[test]
    fn distance_relation_patch_check() {
        let far = Vertex::up(4, 0);
        assert!(matches!(
            distance_relation(Vertex::up(-4, 0), far, 0, 2),
            Err(Error::PatchTooSmall(_))
        ));
    }

    #[test]
    fn json_is_sorted_and_stable() {
        let a = build_volume(DualSite::ORIGIN, 2, 1).to_json(Some(2), Some(DualSite::ORIGIN));
        let b = build_volume(DualSite::ORIGIN, 2, 1).to_json(Some(2), Some(DualSite::ORIGIN));
        assert_eq!(a.to_string(), b.to_string());
        assert_eq!(a["boundary"].as_array().unwrap().len(), 12);
    }

    proptest! {
        #[test]
        fn dual_distance_is_a_metric(a in (-20i32..20, -20i32..20), b in (-20i32..20, -20i32..20), c in (-20i32..20, -20i32..20)) {
            let (a, b, c) = (DualSite::new(a.0, a.1), DualSite::new(b.0, b.1), DualSite::new(c.0, c.1));
            prop_assert_eq!(dual_distance(a, b), dual_distance(b, a));
            prop_assert_eq!(dual_distance(a, a), 0);
            prop_assert!(dual_distance(a, c) <= dual_distance(a, b) + dual_distance(b, c));
            if a != b { prop_assert!(dual_distance(a, b) > 0); }
        }

        #[test]
        fn volume_counts_match_formula(n in 1u32..6, d in 0u32..4, ck in -3i32..3, cl in -3i32..3) {
            let r = build_volume(DualSite::new(ck, cl), n, d);
            prop_assert_eq!(r.vertices.len() as u64, volume_size_formula(n as u64, d as u64));
            prop_assert_eq!(r.boundary.len() as u32, 6 * n);
        }

        #[test]
        fn union_is_a_region(n in 1u32..4, d in 0u32..3, ck in -4i32..4, cl in -4i32..4) {
            let a = build_volume(DualSite::ORIGIN, n, d);
            let b = build_volume(DualSite::new(ck, cl), n, d);
            let u = a.union(&b).unwrap();
            let rebuilt = Region::from_parts(d, BTreeSet::new(), u.edges.clone());
            prop_assert_eq!(&u.boundary, &rebuilt.boundary);
            prop_assert!(a.vertices.is_subset(&u.vertices));
        }

        #[test]
        fn distance_relation_on_samples(a in 0usize..10_000, b in 0usize..10_000, d in 0u32..2) {
            let patch = build_volume(DualSite::ORIGIN, 3, d);
            let verts: Vec<_> = patch.vertices.iter().copied().collect();
            let (x, y) = (verts[a % verts.len()], verts[b % verts.len()]);
            let r = distance_relation(x, y, d, 7).unwrap();
            prop_assert!(r.lower_holds);
            prop_assert!(r.upper_holds_min);
        }
    }
}
