//! Exact integration of products of dot products `Ω_a·Ω_b` of unit vectors
//! against the normalized uniform measure on each sphere.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::polymer::Polymer;
use crate::rational::{pow3, q, qi, Q};

/// Ids reserved for the three fixed orthonormal frame vectors `E_1, E_2, E_3`.
/// Dot products between frame vectors are evaluated on construction.
pub const FRAME: [u32; 3] = [u32::MAX - 2, u32::MAX - 1, u32::MAX];

pub fn is_frame(v: u32) -> bool {
    v >= FRAME[0]
}

/// Sorted multiset of unordered pairs `(a, b)` with `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial(Vec<(u32, u32)>);

impl Monomial {
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.0
    }

    pub fn degree_in(&self, v: u32) -> usize {
        self.0.iter().map(|&(a, b)| (a == v) as usize + (b == v) as usize).sum()
    }

    fn merge(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            if self.0[i] <= other.0[j] {
                out.push(self.0[i]);
                i += 1;
            } else {
                out.push(other.0[j]);
                j += 1;
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }
}

/// Reduces a raw pair list to a canonical monomial and a scalar factor.
/// Returns `None` if the product vanishes (orthogonal frame vectors).
fn normalize(pairs: impl IntoIterator<Item = (u32, u32)>) -> Option<Monomial> {
    let mut out = Vec::new();
    for (a, b) in pairs {
        if a == b {
            continue;
        }
        if is_frame(a) && is_frame(b) {
            return None;
        }
        out.push(if a < b { (a, b) } else { (b, a) });
    }
    out.sort_unstable();
    Some(Monomial(out))
}

/// Exact polynomial in formal dot products of sphere variables.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct DotPoly {
    terms: BTreeMap<Monomial, Q>,
}

impl DotPoly {
    pub fn zero() -> Self {
        DotPoly::default()
    }

    pub fn one() -> Self {
        DotPoly::constant(Q::one())
    }

    pub fn constant(c: Q) -> Self {
        let mut p = DotPoly::zero();
        p.add_term(Monomial::default(), c);
        p
    }

    /// `Ω_a · Ω_b`.
    pub fn dot(a: u32, b: u32) -> Self {
        DotPoly::term(Q::one(), &[(a, b)])
    }

    pub fn term(c: Q, pairs: &[(u32, u32)]) -> Self {
        let mut p = DotPoly::zero();
        if let Some(m) = normalize(pairs.iter().copied()) {
            p.add_term(m, c);
        }
        p
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Q)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The value if the polynomial has no variables.
    pub fn as_constant(&self) -> Option<Q> {
        match self.terms.len() {
            0 => Some(Q::zero()),
            1 => self.terms.get(&Monomial::default()).cloned(),
            _ => None,
        }
    }

    pub fn constant_term(&self) -> Q {
        self.terms.get(&Monomial::default()).cloned().unwrap_or_else(Q::zero)
    }

    fn add_term(&mut self, m: Monomial, c: Q) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    /// Sphere variables (frame vectors excluded).
    pub fn free_vars(&self) -> BTreeSet<u32> {
        self.terms
            .keys()
            .flat_map(|m| m.0.iter().flat_map(|&(a, b)| [a, b]))
            .filter(|v| !is_frame(*v))
            .collect()
    }

    pub fn mentions(&self, v: u32) -> bool {
        self.terms.keys().any(|m| m.0.iter().any(|&(a, b)| a == v || b == v))
    }

    pub fn add(&self, other: &DotPoly) -> DotPoly {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn add_assign(&mut self, other: &DotPoly) {
        for (m, c) in &other.terms {
            self.add_term(m.clone(), c.clone());
        }
    }

    pub fn sub(&self, other: &DotPoly) -> DotPoly {
        self.add(&other.scale(&-Q::one()))
    }

    pub fn scale(&self, c: &Q) -> DotPoly {
        if c.is_zero() {
            return DotPoly::zero();
        }
        DotPoly { terms: self.terms.iter().map(|(m, x)| (m.clone(), x * c)).collect() }
    }

    pub fn mul(&self, other: &DotPoly) -> DotPoly {
        let mut acc: HashMap<Monomial, Q> = HashMap::with_capacity(self.len() * other.len());
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let m = if m1.0.is_empty() {
                    m2.clone()
                } else if m2.0.is_empty() {
                    m1.clone()
                } else {
                    m1.merge(m2)
                };
                *acc.entry(m).or_insert_with(Q::zero) += c1 * c2;
            }
        }
        DotPoly { terms: acc.into_iter().filter(|(_, c)| !c.is_zero()).collect() }
    }

    pub fn product<'a>(factors: impl IntoIterator<Item = &'a DotPoly>) -> DotPoly {
        factors.into_iter().fold(DotPoly::one(), |acc, f| acc.mul(f))
    }

    /// `∫ dΩ_v p` for the normalized uniform measure on the sphere of `v`.
    pub fn integrate_out(&self, v: u32) -> DotPoly {
        let mut acc: HashMap<Monomial, Q> = HashMap::new();
        let mut cache: HashMap<usize, Q> = HashMap::new();
        for (m, c) in &self.terms {
            let mut partners = Vec::new();
            let mut rest = Vec::with_capacity(m.0.len());
            for &(a, b) in &m.0 {
                if a == v {
                    partners.push(b);
                } else if b == v {
                    partners.push(a);
                } else {
                    rest.push((a, b));
                }
            }
            if partners.is_empty() {
                *acc.entry(m.clone()).or_insert_with(Q::zero) += c;
                continue;
            }
            if partners.len() % 2 == 1 {
                continue;
            }
            let s = partners.len() / 2;
            let w = cache.entry(s).or_insert_with(|| moment_weight(s)).clone() * c;
            for_each_pairing(&partners, &mut |pairs: &[(u32, u32)]| {
                if let Some(mm) = normalize(rest.iter().copied().chain(pairs.iter().copied())) {
                    *acc.entry(mm).or_insert_with(Q::zero) += &w;
                }
            });
        }
        DotPoly { terms: acc.into_iter().filter(|(_, c)| !c.is_zero()).collect() }
    }

    pub fn integrate_all(&self, vars: &[u32]) -> DotPoly {
        vars.iter().fold(self.clone(), |p, v| p.integrate_out(*v))
    }

    /// Replaces `Ω_v` by the fixed vector `Σ c_i E_i`.
    pub fn fix_vector(&self, v: u32, c: &[Q; 3]) -> DotPoly {
        let mut out = DotPoly::zero();
        for (m, coef) in &self.terms {
            let mut partial = DotPoly::constant(coef.clone());
            let mut rest = Vec::new();
            for &(a, b) in &m.0 {
                let other = if a == v {
                    b
                } else if b == v {
                    a
                } else {
                    rest.push((a, b));
                    continue;
                };
                let mut lin = DotPoly::zero();
                for i in 0..3 {
                    if !c[i].is_zero() {
                        lin.add_assign(&DotPoly::term(c[i].clone(), &[(FRAME[i], other)]));
                    }
                }
                partial = partial.mul(&lin);
            }
            out.add_assign(&partial.mul(&DotPoly::term(Q::one(), &rest)));
        }
        out
    }

    /// Pins several vectors at once; equivalent to repeated `fix_vector`.
    pub fn pin_all(&self, pinned: &BTreeMap<u32, [Q; 3]>) -> DotPoly {
        let mut dots: HashMap<(u32, u32), Q> = HashMap::new();
        let mut groups: HashMap<Vec<(u32, u32)>, Q> = HashMap::new();
        for (m, coef) in &self.terms {
            let mut c = coef.clone();
            let mut rest = Vec::new();
            for &(a, b) in &m.0 {
                match (pinned.get(&a), pinned.get(&b)) {
                    (Some(x), Some(y)) => {
                        c *= dots.entry((a, b)).or_insert_with(|| dot3(x, y)).clone();
                    }
                    _ => rest.push((a, b)),
                }
            }
            if !c.is_zero() {
                *groups.entry(rest).or_insert_with(Q::zero) += c;
            }
        }
        let mut keys: Vec<_> = groups.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        keys.sort();
        let mut out = DotPoly::zero();
        for (rest, c) in keys {
            let mut term = DotPoly::constant(c);
            let mut plain = Vec::new();
            for (a, b) in rest {
                let (v, other) = match (pinned.get(&a), pinned.get(&b)) {
                    (Some(v), None) => (v, b),
                    (None, Some(v)) => (v, a),
                    _ => {
                        plain.push((a, b));
                        continue;
                    }
                };
                let mut lin = DotPoly::zero();
                for i in 0..3 {
                    if !v[i].is_zero() {
                        lin.add_assign(&DotPoly::term(v[i].clone(), &[(FRAME[i], other)]));
                    }
                }
                term = term.mul(&lin);
            }
            out.add_assign(&term.mul(&DotPoly::term(Q::one(), &plain)));
        }
        out
    }

    /// Exact value at rational unit vectors. Frame variables take the standard basis.
    pub fn evaluate(&self, assignment: &BTreeMap<u32, [Q; 3]>) -> Result<Q> {
        for (v, x) in assignment {
            if dot3(x, x) != Q::one() {
                return Err(Error::NonUnitVector(*v));
            }
        }
        let basis = |i: usize| -> [Q; 3] {
            let mut e = [Q::zero(), Q::zero(), Q::zero()];
            e[i] = Q::one();
            e
        };
        let lookup = |v: u32| -> Result<[Q; 3]> {
            if is_frame(v) {
                Ok(basis((v - FRAME[0]) as usize))
            } else {
                assignment.get(&v).cloned().ok_or(Error::UnassignedVariable(v))
            }
        };
        let mut total = Q::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for &(a, b) in &m.0 {
                t *= dot3(&lookup(a)?, &lookup(b)?);
                if t.is_zero() {
                    break;
                }
            }
            total += t;
        }
        Ok(total)
    }

    /// Sum of absolute values of coefficients, an upper bound for `sup |p|` on unit vectors.
    pub fn abs_coefficient_sum(&self) -> Q {
        self.terms.values().map(|c| c.abs()).sum()
    }
}

impl fmt::Debug for DotPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for DotPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (a, b) in &m.0 {
                write!(f, "·({a}|{b})")?;
            }
        }
        Ok(())
    }
}

pub fn dot3(x: &[Q; 3], y: &[Q; 3]) -> Q {
    &x[0] * &y[0] + &x[1] * &y[1] + &x[2] * &y[2]
}

/// `1 / (2s+1)!!`, the weight of each pairing in the degree-`2s` sphere moment.
pub fn moment_weight(s: usize) -> Q {
    let mut den = BigInt::one();
    for j in 1..=s {
        den *= BigInt::from(2 * j + 1);
    }
    Q::new(BigInt::one(), den)
}

/// Calls `f` once per perfect matching of `items` (items may repeat).
pub fn for_each_pairing(items: &[u32], f: &mut dyn FnMut(&[(u32, u32)])) {
    fn rec(rest: &mut Vec<u32>, acc: &mut Vec<(u32, u32)>, f: &mut dyn FnMut(&[(u32, u32)])) {
        if rest.is_empty() {
            f(acc);
            return;
        }
        let first = rest.remove(0);
        for i in 0..rest.len() {
            let partner = rest.remove(i);
            acc.push((first, partner));
            rec(rest, acc, f);
            acc.pop();
            rest.insert(i, partner);
        }
        rest.insert(0, first);
    }
    let mut rest = items.to_vec();
    rec(&mut rest, &mut Vec::new(), f);
}

/// Integrates a product of factors over `vars`, eliminating one variable at a
/// time and multiplying only the factors that mention it. The next variable
/// is the one whose bucket touches the fewest other sphere variables.
pub fn integrate_product(factors: Vec<DotPoly>, vars: &BTreeSet<u32>) -> DotPoly {
    let mut pool: Vec<DotPoly> = factors;
    let mut remaining: BTreeSet<u32> = vars.clone();
    let mut var_sets: Vec<BTreeSet<u32>> = pool.iter().map(|p| p.free_vars()).collect();
    while !remaining.is_empty() {
        let mut best: Option<(usize, u32)> = None;
        for &v in &remaining {
            let mut touched = BTreeSet::new();
            for s in var_sets.iter().filter(|s| s.contains(&v)) {
                touched.extend(s.iter().copied());
            }
            let score = touched.len();
            if best.is_none_or(|(b, _)| score < b) {
                best = Some((score, v));
            }
        }
        let v = best.unwrap().1;
        remaining.remove(&v);
        let mut bucket = DotPoly::one();
        let mut kept = Vec::new();
        let mut kept_sets = Vec::new();
        for (p, s) in pool.into_iter().zip(var_sets) {
            if s.contains(&v) {
                bucket = bucket.mul(&p);
            } else {
                kept.push(p);
                kept_sets.push(s);
            }
        }
        let reduced = bucket.integrate_out(v);
        kept_sets.push(reduced.free_vars());
        kept.push(reduced);
        pool = kept;
        var_sets = kept_sets;
    }
    DotPoly::product(pool.iter())
}

/// Rational unit vector from a Pythagorean quadruple built from four integers.
pub fn unit_vector_from_params(m: i64, n: i64, p: i64, r: i64) -> Option<[Q; 3]> {
    let d = m * m + n * n + p * p + r * r;
    if d == 0 {
        return None;
    }
    let a = m * m + n * n - p * p - r * r;
    let b = 2 * (m * r + n * p);
    let c = 2 * (n * r - m * p);
    Some([q(a, d), q(b, d), q(c, d)])
}

pub fn random_unit_vector<R: Rng>(rng: &mut R, spread: i64) -> [Q; 3] {
    loop {
        let mut draw = || rng.gen_range(-spread..=spread);
        if let Some(v) = unit_vector_from_params(draw(), draw(), draw(), draw()) {
            return v;
        }
    }
}

pub fn axis_vector(axis: usize, sign: i64) -> [Q; 3] {
    let mut v = [Q::zero(), Q::zero(), Q::zero()];
    v[axis] = q(sign, 1);
    v
}

/// Closed-form polymer weight: `(1/3)^{(d+1)ℓ-1}` for a loop and
/// `(-1/3)^{(d+1)ℓ-1}·(-Ω_v·Ω_w)` for a walk from `v` to `w`.
pub fn weight(p: &Polymer) -> DotPoly {
    let e = (p.d as i64 + 1) * p.length() as i64 - 1;
    match p.endpoints() {
        None => DotPoly::constant(pow3(-e)),
        Some((v, w)) => {
            let sign = if e % 2 == 0 { -1 } else { 1 };
            DotPoly::term(pow3(-e) * qi(sign), &[(v.var_id(), w.var_id())])
        }
    }
}

/// The defining integral of a polymer weight: `∏(-Ω_x·Ω_y)` over its decorated
/// edges, integrated over every site except walk endpoints.
pub fn weight_by_integration(p: &Polymer) -> DotPoly {
    let factors: Vec<DotPoly> = p
        .decorated_edges()
        .iter()
        .map(|e| DotPoly::term(qi(-1), &[(e.0.var_id(), e.1.var_id())]))
        .collect();
    let mut vars: BTreeSet<u32> = p.sites().iter().map(|v| v.var_id()).collect();
    if let Some((a, b)) = p.endpoints() {
        vars.remove(&a.var_id());
        vars.remove(&b.var_id());
    }
    integrate_product(factors, &vars)
}
