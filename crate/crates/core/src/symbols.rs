//! Operators on the single-site spaces `ℋ^{(m)}` of homogeneous polynomials
//! in `(u, v)`, their normal-ordered form and symbols `A(Ω)`.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lattice::{boundary_size, build_volume, DualSite};
use crate::rational::{factorial, q, qi, rational_sqrt, to_f64, to_json, Q};
use crate::spherecalc::{DotPoly, FRAME};

/// Letters of an operator word: multiplication by `u`/`v` and `∂_u`/`∂_v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Letter {
    U,
    V,
    Du,
    Dv,
}

/// Parses e.g. `"1/3 du u"`: an optional rational coefficient followed by
/// letters `u`, `v`, `du`, `dv`, applied right to left.
pub fn parse_word(s: &str) -> Result<(Q, Vec<Letter>)> {
    let mut coef = Q::one();
    let mut letters = Vec::new();
    for (i, tok) in s.split(|c: char| c.is_whitespace() || c == '*').filter(|t| !t.is_empty()).enumerate() {
        let letter = match tok.to_ascii_lowercase().as_str() {
            "u" => Letter::U,
            "v" => Letter::V,
            "du" | "d_u" => Letter::Du,
            "dv" | "d_v" => Letter::Dv,
            "1" | "id" if i == 0 => continue,
            other if i == 0 => {
                coef = parse_rational(other)?;
                continue;
            }
            other => return Err(Error::InvalidInput(format!("unknown letter {other:?}"))),
        };
        letters.push(letter);
    }
    Ok((coef, letters))
}

fn parse_rational(s: &str) -> Result<Q> {
    let bad = || Error::InvalidInput(format!("not a rational: {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.parse().map_err(|_| bad())?;
            let d: BigInt = d.parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(Q::new(n, d))
        }
        None => Ok(Q::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

/// `a·∂_u^k ∂_v^l u^{k+j} v^{l-j}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct NormalTerm {
    pub k: u32,
    pub l: u32,
    pub j: i32,
    pub a: Q,
}

/// `∂_u^k ∂_v^l u^p v^q` keyed by `(k, l, p, q)`.
type Ordered = BTreeMap<(u32, u32, u32, u32), Q>;

/// Normal form of `coef·word` (derivatives to the left), built by
/// left-multiplying letters from the right and using `x∂^k = ∂^k x - k∂^{k-1}`.
pub fn normal_order(coef: &Q, word: &[Letter]) -> Result<Vec<NormalTerm>> {
    let ups = word.iter().filter(|l| matches!(l, Letter::U | Letter::V)).count();
    if ups * 2 != word.len() {
        return Err(Error::InvalidInput("word does not preserve the degree".into()));
    }
    let mut acc: Ordered = BTreeMap::new();
    acc.insert((0, 0, 0, 0), coef.clone());
    for letter in word.iter().rev() {
        let mut next: Ordered = BTreeMap::new();
        let mut push = |key: (u32, u32, u32, u32), c: Q| {
            let e = next.entry(key).or_insert_with(Q::zero);
            *e += c;
        };
        for (&(k, l, p, qq), c) in &acc {
            match letter {
                Letter::Du => push((k + 1, l, p, qq), c.clone()),
                Letter::Dv => push((k, l + 1, p, qq), c.clone()),
                Letter::U => {
                    push((k, l, p + 1, qq), c.clone());
                    if k > 0 {
                        push((k - 1, l, p, qq), -c.clone() * qi(k as i64));
                    }
                }
                Letter::V => {
                    push((k, l, p, qq + 1), c.clone());
                    if l > 0 {
                        push((k, l - 1, p, qq), -c.clone() * qi(l as i64));
                    }
                }
            }
        }
        acc = next.into_iter().filter(|(_, c)| !c.is_zero()).collect();
    }
    Ok(acc
        .into_iter()
        .map(|((k, l, p, _), a)| NormalTerm { k, l, j: p as i32 - k as i32, a })
        .collect())
}

/// `‖u^k v^{m-k}‖² = k!(m-k)!/(m+1)!`.
pub fn basis_norm_sq(m: u32, k: u32) -> Q {
    Q::new(factorial(k as u64) * factorial((m - k) as u64), factorial(m as u64 + 1))
}

/// `C_{k,l} = (m+k+l+1)!/(m+1)!`.
pub fn c_kl(m: u32, k: u32, l: u32) -> Q {
    Q::new(factorial((m + k + l + 1) as u64), factorial(m as u64 + 1))
}

fn falling(n: i64, r: u32) -> i64 {
    (0..r as i64).map(|i| n - i).product()
}

/// Operator on `ℋ^{(m)}`: `matrix[i][k]` is the coefficient of `u^i v^{m-i}`
/// in `A(u^k v^{m-k})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyOperator {
    pub m: u32,
    pub matrix: Vec<Vec<Q>>,
    pub normal_form: Vec<NormalTerm>,
}

impl PolyOperator {
    pub fn identity(m: u32) -> PolyOperator {
        PolyOperator::from_normal_form(m, vec![NormalTerm { k: 0, l: 0, j: 0, a: Q::one() }]).expect("identity")
    }

    pub fn from_word(m: u32, word: &str) -> Result<PolyOperator> {
        let (coef, letters) = parse_word(word)?;
        PolyOperator::from_normal_form(m, normal_order(&coef, &letters)?)
    }

    pub fn from_normal_form(m: u32, normal_form: Vec<NormalTerm>) -> Result<PolyOperator> {
        let n = m as usize + 1;
        let mut matrix = vec![vec![Q::zero(); n]; n];
        for t in &normal_form {
            if t.j < -(t.k as i32) || t.j > t.l as i32 {
                return Err(Error::InvalidInput(format!("term ({}, {}, {}) violates -k <= j <= l", t.k, t.l, t.j)));
            }
            for a in 0..=m as i64 {
                let i = a + t.j as i64;
                if i < 0 || i > m as i64 {
                    continue;
                }
                // ∂_u^k ∂_v^l u^{a+k+j} v^{m-a+l-j}
                let pu = a + t.k as i64 + t.j as i64;
                let pv = m as i64 - a + t.l as i64 - t.j as i64;
                let c = falling(pu, t.k) * falling(pv, t.l);
                matrix[i as usize][a as usize] += &t.a * qi(c);
            }
        }
        Ok(PolyOperator { m, matrix, normal_form })
    }

    /// Any matrix, with the normal form chosen so that for each shift `j` only
    /// `l = max(j, 0)` occurs.
    pub fn from_matrix(m: u32, matrix: Vec<Vec<Q>>) -> Result<PolyOperator> {
        let n = m as usize + 1;
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("matrix must be {n}x{n}")));
        }
        let mut terms = Vec::new();
        for j in -(m as i32)..=(m as i32) {
            let cols: Vec<i64> = (0..=m as i64).filter(|a| (0..=m as i64).contains(&(a + j as i64))).collect();
            let l = j.max(0) as u32;
            let k0 = (-j).max(0) as u32;
            let ks: Vec<u32> = (0..cols.len() as u32).map(|t| k0 + t).collect();
            // Column a of the system: entries of the basis term (k, l, j) on u^a v^{m-a}.
            let mut sys: Vec<Vec<Q>> = cols
                .iter()
                .map(|&a| {
                    let mut row: Vec<Q> = ks
                        .iter()
                        .map(|&k| {
                            let pu = a + k as i64 + j as i64;
                            let pv = m as i64 - a + l as i64 - j as i64;
                            qi(falling(pu, k) * falling(pv, l))
                        })
                        .collect();
                    row.push(matrix[(a + j as i64) as usize][a as usize].clone());
                    row
                })
                .collect();
            let sol = solve(&mut sys)?;
            for (k, a) in ks.into_iter().zip(sol) {
                if !a.is_zero() {
                    terms.push(NormalTerm { k, l, j, a });
                }
            }
        }
        terms.sort();
        let op = PolyOperator::from_normal_form(m, terms)?;
        if op.matrix != matrix {
            return Err(Error::Consistency("normal form does not reproduce the matrix".into()));
        }
        Ok(op)
    }

    pub fn gram(&self) -> Vec<Q> {
        (0..=self.m).map(|k| basis_norm_sq(self.m, k)).collect()
    }

    /// `⟨u^i v^{m-i}, A u^k v^{m-k}⟩`.
    pub fn matrix_element(&self, i: usize, k: usize) -> Q {
        &self.matrix[i][k] * basis_norm_sq(self.m, i as u32)
    }

    pub fn commutator(&self, other: &PolyOperator) -> Result<PolyOperator> {
        let ab = mat_mul(&self.matrix, &other.matrix);
        let ba = mat_mul(&other.matrix, &self.matrix);
        let diff = ab.iter().zip(&ba).map(|(x, y)| x.iter().zip(y).map(|(a, b)| a - b).collect()).collect();
        PolyOperator::from_matrix(self.m, diff)
    }

    pub fn scale(&self, c: &Q) -> PolyOperator {
        let nf = self.normal_form.iter().map(|t| NormalTerm { a: &t.a * c, ..t.clone() }).collect();
        PolyOperator::from_normal_form(self.m, nf).expect("scaled normal form stays valid")
    }

    pub fn symbol(&self) -> Symbol {
        let mut terms = BTreeMap::new();
        for t in &self.normal_form {
            let key = [t.k, t.l, (t.k as i32 + t.j) as u32, (t.l as i32 - t.j) as u32];
            *terms.entry(key).or_insert_with(Q::zero) += c_kl(self.m, t.k, t.l) * &t.a;
        }
        Symbol { terms: terms.into_iter().filter(|(_, c)| !c.is_zero()).collect() }
    }

    /// Spectral norm for the inner product in which the monomial basis is
    /// orthogonal with norms `basis_norm_sq`.
    pub fn operator_norm(&self) -> Norm {
        norm_weighted(&self.matrix, &self.gram())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "m": self.m,
            "matrix": self.matrix.iter().map(|r| r.iter().map(|x| x.to_string()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "normal_form": self.normal_form.iter().map(|t| json!({"k": t.k, "l": t.l, "j": t.j, "a": t.a.to_string()})).collect::<Vec<_>>(),
        })
    }
}

fn mat_mul(a: &[Vec<Q>], b: &[Vec<Q>]) -> Vec<Vec<Q>> {
    let n = a.len();
    let p = b[0].len();
    (0..n)
        .map(|i| (0..p).map(|j| (0..b.len()).fold(Q::zero(), |s, k| s + &a[i][k] * &b[k][j])).collect())
        .collect()
}

/// Gauss-Jordan on an augmented square system.
fn solve(sys: &mut [Vec<Q>]) -> Result<Vec<Q>> {
    let n = sys.len();
    for col in 0..n {
        let piv = (col..n).find(|r| !sys[*r][col].is_zero()).ok_or_else(|| Error::Consistency("singular system".into()))?;
        sys.swap(col, piv);
        let p = sys[col][col].clone();
        for x in sys[col].iter_mut() {
            *x /= &p;
        }
        for r in 0..n {
            if r != col && !sys[r][col].is_zero() {
                let f = sys[r][col].clone();
                let pivot_row = sys[col].clone();
                for (x, y) in sys[r].iter_mut().zip(&pivot_row) {
                    *x -= &f * y;
                }
            }
        }
    }
    Ok(sys.iter().map(|r| r[n].clone()).collect())
}

/// `Σ c·ū^a v̄^b u^c v^d`, keyed by `[a, b, c, d]` with `a + b = c + d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbol {
    pub terms: BTreeMap<[u32; 4], Q>,
}

/// Complex value as `(re, im)`.
pub type Complex = (Q, Q);

impl Symbol {
    pub fn one() -> Symbol {
        Symbol { terms: [([0, 0, 0, 0], Q::one())].into_iter().collect() }
    }

    pub fn mul(&self, other: &Symbol) -> Symbol {
        let mut terms: BTreeMap<[u32; 4], Q> = BTreeMap::new();
        for (x, c) in &self.terms {
            for (y, d) in &other.terms {
                let key = [x[0] + y[0], x[1] + y[1], x[2] + y[2], x[3] + y[3]];
                *terms.entry(key).or_insert_with(Q::zero) += c * d;
            }
        }
        Symbol { terms: terms.into_iter().filter(|(_, c)| !c.is_zero()).collect() }
    }

    /// `∫dΩ` using `∫|u|^{2a}|v|^{2b} = a!b!/(a+b+1)!`; unbalanced phases vanish.
    pub fn integrate(&self) -> Q {
        self.terms
            .iter()
            .filter(|(k, _)| k[0] == k[2] && k[1] == k[3])
            .map(|(k, c)| c * Q::new(factorial(k[0] as u64) * factorial(k[1] as u64), factorial((k[0] + k[1]) as u64 + 1)))
            .fold(Q::zero(), |s, x| s + x)
    }

    /// Real and imaginary parts as dot-product polynomials in `Ω_var` and the
    /// frame, using `|u|² = (1+z)/2`, `|v|² = (1-z)/2`, `uv̄ = (x+iy)/2`.
    pub fn to_dot_polys(&self, var: u32) -> (DotPoly, DotPoly) {
        let comp = |i: usize| DotPoly::term(Q::one(), &[(var, FRAME[i])]);
        let half = q(1, 2);
        let uu = DotPoly::constant(half.clone()).add(&comp(2).scale(&half));
        let vv = DotPoly::constant(half.clone()).sub(&comp(2).scale(&half));
        let (x, y) = (comp(0).scale(&half), comp(1).scale(&half));
        let mut re = DotPoly::zero();
        let mut im = DotPoly::zero();
        for (k, c) in &self.terms {
            let (a, b, cc, d) = (k[0], k[1], k[2], k[3]);
            let mut base = DotPoly::constant(c.clone());
            for _ in 0..a.min(cc) {
                base = base.mul(&uu);
            }
            for _ in 0..b.min(d) {
                base = base.mul(&vv);
            }
            // Leftover phase: (ūv)^r = ((x - iy)/2)^r or (uv̄)^r = ((x + iy)/2)^r.
            let (r, sign) = if a > cc { (a - cc, -1) } else { (cc - a, 1) };
            let (mut pr, mut pi) = (DotPoly::one(), DotPoly::zero());
            let ys = y.scale(&qi(sign));
            for _ in 0..r {
                let nr = pr.mul(&x).sub(&pi.mul(&ys));
                let ni = pr.mul(&ys).add(&pi.mul(&x));
                pr = nr;
                pi = ni;
            }
            re.add_assign(&base.mul(&pr));
            im.add_assign(&base.mul(&pi));
        }
        (re, im)
    }

    /// Exact value at a rational unit vector.
    pub fn evaluate(&self, omega: &[Q; 3]) -> Complex {
        let half = q(1, 2);
        let uu = (Q::one() + &omega[2]) * &half;
        let vv = (Q::one() - &omega[2]) * &half;
        let mut re = Q::zero();
        let mut im = Q::zero();
        for (k, c) in &self.terms {
            let (a, b, cc, d) = (k[0], k[1], k[2], k[3]);
            let mut v = c.clone() * num_traits::pow(uu.clone(), a.min(cc) as usize) * num_traits::pow(vv.clone(), b.min(d) as usize);
            let (r, sign) = if a > cc { (a - cc, -1) } else { (cc - a, 1) };
            let (mut pr, mut pi) = (Q::one(), Q::zero());
            let x = &omega[0] * &half;
            let y = &omega[1] * &half * qi(sign);
            for _ in 0..r {
                let nr = &pr * &x - &pi * &y;
                let ni = &pr * &y + &pi * &x;
                pr = nr;
                pi = ni;
            }
            v = v.clone();
            re += &v * pr;
            im += v * pi;
        }
        (re, im)
    }

    /// Float value at `(θ, φ)`.
    pub fn evaluate_angles(&self, theta: f64, phi: f64) -> (f64, f64) {
        let (cu, sv) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        let mut re = 0.0;
        let mut im = 0.0;
        for (k, c) in &self.terms {
            let (a, b, cc, d) = (k[0] as i32, k[1] as i32, k[2] as i32, k[3] as i32);
            let modulus = cu.powi(a + cc) * sv.powi(b + d);
            // Phases: u = e^{iφ/2}cos, v = e^{-iφ/2}sin.
            let phase = phi / 2.0 * ((cc - a) - (d - b)) as f64;
            re += to_f64(c) * modulus * phase.cos();
            im += to_f64(c) * modulus * phase.sin();
        }
        (re, im)
    }

    /// Whether only `|u|²`, `|v|²` occur, so the symbol is a polynomial in `z`.
    pub fn is_diagonal(&self) -> bool {
        self.terms.keys().all(|k| k[0] == k[2] && k[1] == k[3])
    }

    /// The symbol as a polynomial in `z = cos θ` (diagonal symbols only).
    pub fn z_polynomial(&self) -> Option<UPoly> {
        if !self.is_diagonal() {
            return None;
        }
        let half = q(1, 2);
        let uu = UPoly(vec![half.clone(), half.clone()]);
        let vv = UPoly(vec![half.clone(), -half]);
        let mut p = UPoly::zero();
        for (k, c) in &self.terms {
            let mut t = UPoly(vec![c.clone()]);
            for _ in 0..k[0] {
                t = t.mul(&uu);
            }
            for _ in 0..k[1] {
                t = t.mul(&vv);
            }
            p = p.add(&t);
        }
        Some(p)
    }

    /// `sup_Ω |A(Ω)|`: exact for diagonal symbols whose extrema sit at the
    /// poles, bracketed otherwise.
    pub fn sup_abs(&self) -> SupNorm {
        if let Some(p) = self.z_polynomial() {
            let ends = [p.eval(&qi(-1)).abs(), p.eval(&qi(1)).abs()];
            let end_max = if ends[0] > ends[1] { ends[0].clone() } else { ends[1].clone() };
            let dp = p.derivative();
            let crit = if dp.is_zero() { Vec::new() } else { dp.isolate_roots(&qi(-1), &qi(1), &q(1, 1 << 40)) };
            let mut lo = to_f64(&end_max);
            let mut hi = lo;
            let mut exact = true;
            for (a, b) in &crit {
                // |p| on [a, b] is within slope·width of its midpoint value.
                let mid = (a + b) / qi(2);
                let slope = dp.abs_bound(&qi(1));
                let v = p.eval(&mid).abs();
                let spread = slope * (b - a);
                if v.clone() + &spread > end_max {
                    exact = false;
                    lo = lo.max(to_f64(&v));
                    hi = hi.max(to_f64(&(v + spread)));
                }
            }
            return SupNorm { exact: if exact { Some(end_max) } else { None }, lo, hi };
        }
        // Every monomial has modulus at most 1 on the sphere.
        let hi = self.terms.values().map(|c| to_f64(&c.abs())).sum::<f64>();
        let mut lo = 0.0f64;
        for i in 0..=64 {
            for j in 0..64 {
                let (re, im) = self.evaluate_angles(std::f64::consts::PI * i as f64 / 64.0, std::f64::consts::TAU * j as f64 / 64.0);
                lo = lo.max(re.hypot(im));
            }
        }
        SupNorm { exact: None, lo, hi }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let names = ["conj(u)", "conj(v)", "u", "v"];
        for (i, (k, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (n, e) in names.iter().zip(k) {
                match e {
                    0 => {}
                    1 => write!(f, "*{n}")?,
                    _ => write!(f, "*{n}^{e}")?,
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupNorm {
    pub exact: Option<Q>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub exact: Option<Q>,
    pub lo: f64,
    pub hi: f64,
}

impl Norm {
    pub fn to_json(&self) -> Value {
        json!({
            "exact": self.exact.as_ref().map(to_json),
            "lo": self.lo,
            "hi": self.hi,
            "method": if self.exact.is_some() { "exact" } else { "sturm-bracket" },
        })
    }
}

/// Dense univariate polynomial over `Q`, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct UPoly(pub Vec<Q>);

impl UPoly {
    pub fn zero() -> UPoly {
        UPoly(Vec::new())
    }

    fn trim(mut self) -> UPoly {
        while self.0.last().is_some_and(|c| c.is_zero()) {
            self.0.pop();
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| c.is_zero())
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn eval(&self, x: &Q) -> Q {
        self.0.iter().rev().fold(Q::zero(), |acc, c| acc * x + c)
    }

    pub fn add(&self, o: &UPoly) -> UPoly {
        let n = self.0.len().max(o.0.len());
        let get = |p: &UPoly, i: usize| p.0.get(i).cloned().unwrap_or_else(Q::zero);
        UPoly((0..n).map(|i| get(self, i) + get(o, i)).collect()).trim()
    }

    pub fn mul(&self, o: &UPoly) -> UPoly {
        if self.0.is_empty() || o.0.is_empty() {
            return UPoly::zero();
        }
        let mut out = vec![Q::zero(); self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        UPoly(out).trim()
    }

    pub fn derivative(&self) -> UPoly {
        UPoly(self.0.iter().enumerate().skip(1).map(|(i, c)| c * qi(i as i64)).collect()).trim()
    }

    fn rem(&self, d: &UPoly) -> UPoly {
        let mut r = self.clone().trim();
        let lead = d.0.last().expect("nonzero divisor").clone();
        while !r.0.is_empty() && r.0.len() >= d.0.len() {
            let shift = r.0.len() - d.0.len();
            let f = r.0.last().unwrap().clone() / &lead;
            for (i, c) in d.0.iter().enumerate() {
                r.0[i + shift] -= &f * c;
            }
            r.0.pop();
            r = r.trim();
        }
        r
    }

    fn gcd(&self, o: &UPoly) -> UPoly {
        let (mut a, mut b) = (self.clone().trim(), o.clone().trim());
        while !b.is_zero() {
            let r = a.rem(&b);
            a = b;
            b = r;
        }
        a
    }

    fn div_exact(&self, d: &UPoly) -> UPoly {
        let mut r = self.clone().trim();
        let mut quo = vec![Q::zero(); r.0.len().saturating_sub(d.0.len()) + 1];
        let lead = d.0.last().unwrap().clone();
        while !r.0.is_empty() && r.0.len() >= d.0.len() {
            let shift = r.0.len() - d.0.len();
            let f = r.0.last().unwrap().clone() / &lead;
            for (i, c) in d.0.iter().enumerate() {
                r.0[i + shift] -= &f * c;
            }
            quo[shift] = f;
            r.0.pop();
            r = r.trim();
        }
        UPoly(quo).trim()
    }

    fn squarefree(&self) -> UPoly {
        let g = self.gcd(&self.derivative());
        if g.degree() == 0 {
            self.clone()
        } else {
            self.div_exact(&g)
        }
    }

    /// `Σ|c_i| r^i`, a bound on `|p|` over `|x| ≤ r`.
    pub fn abs_bound(&self, r: &Q) -> Q {
        self.0.iter().rev().fold(Q::zero(), |acc, c| acc * r + c.abs())
    }

    fn sturm(&self) -> Vec<UPoly> {
        let p = self.squarefree();
        let mut seq = vec![p.clone(), p.derivative()];
        while !seq.last().unwrap().is_zero() && seq.last().unwrap().degree() > 0 {
            let n = seq.len();
            let r = seq[n - 2].rem(&seq[n - 1]);
            if r.is_zero() {
                break;
            }
            seq.push(UPoly(r.0.into_iter().map(|c| -c).collect()));
        }
        seq
    }

    fn sign_changes(seq: &[UPoly], x: &Q) -> usize {
        let signs: Vec<i8> = seq
            .iter()
            .map(|p| p.eval(x))
            .filter(|v| !v.is_zero())
            .map(|v| if v.is_positive() { 1 } else { -1 })
            .collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// Distinct real roots in `(a, b]`, each isolated to width at most `tol`.
    pub fn isolate_roots(&self, a: &Q, b: &Q, tol: &Q) -> Vec<(Q, Q)> {
        let seq = self.sturm();
        let mut out = Vec::new();
        let mut stack = vec![(a.clone(), b.clone())];
        while let Some((lo, hi)) = stack.pop() {
            let count = Self::sign_changes(&seq, &lo) - Self::sign_changes(&seq, &hi);
            if count == 0 {
                continue;
            }
            if count == 1 && &hi - &lo <= *tol {
                out.push((lo, hi));
                continue;
            }
            let mid = (&lo + &hi) / qi(2);
            stack.push((lo, mid.clone()));
            stack.push((mid, hi));
        }
        out.sort();
        out
    }

    /// Largest real root: exact when it is a rational with a small
    /// denominator, otherwise a bracket of width `tol`.
    pub fn largest_root(&self, tol: &Q) -> Option<(Option<Q>, Q, Q)> {
        let p = self.squarefree();
        let lead = p.0.last()?.clone();
        let cauchy = Q::one() + p.0.iter().map(|c| (c / &lead).abs()).fold(Q::zero(), |m, x| if x > m { x } else { m });
        let roots = p.isolate_roots(&-cauchy.clone(), &cauchy, tol);
        let (lo, hi) = roots.last()?.clone();
        if p.eval(&hi).is_zero() {
            return Some((Some(hi.clone()), hi.clone(), hi));
        }
        // Try the continued-fraction convergents of the midpoint.
        let mid = (&lo + &hi) / qi(2);
        for cand in convergents(&mid, 40) {
            if cand > lo && cand <= hi && p.eval(&cand).is_zero() {
                return Some((Some(cand.clone()), cand.clone(), cand));
            }
        }
        Some((None, lo, hi))
    }
}

fn convergents(x: &Q, max: usize) -> Vec<Q> {
    let mut out = Vec::new();
    let (mut h0, mut h1) = (BigInt::zero(), BigInt::one());
    let (mut k0, mut k1) = (BigInt::one(), BigInt::zero());
    let mut r = x.clone();
    for _ in 0..max {
        let a = r.floor().to_integer();
        let h = &a * &h1 + &h0;
        let k = &a * &k1 + &k0;
        out.push(Q::new(h.clone(), k.clone()));
        h0 = std::mem::replace(&mut h1, h);
        k0 = std::mem::replace(&mut k1, k);
        let frac = &r - Q::from_integer(a);
        if frac.is_zero() {
            break;
        }
        r = frac.recip();
    }
    out
}

/// Characteristic polynomial by Faddeev-LeVerrier.
pub fn char_poly(a: &[Vec<Q>]) -> UPoly {
    let n = a.len();
    let mut coeffs = vec![Q::zero(); n + 1];
    coeffs[n] = Q::one();
    let mut mk = vec![vec![Q::zero(); n]; n];
    for k in 1..=n {
        let mut next = mat_mul(a, &mk);
        for (i, row) in next.iter_mut().enumerate() {
            row[i] += &coeffs[n - k + 1];
        }
        mk = next;
        let amk = mat_mul(a, &mk);
        let tr = (0..n).fold(Q::zero(), |s, i| s + &amk[i][i]);
        coeffs[n - k] = -tr / qi(k as i64);
    }
    UPoly(coeffs)
}

/// `‖M‖` where the basis is orthogonal with squared norms `gram`:
/// `‖M‖² = λ_max(G^{-1}MᵀGM)`.
pub fn norm_weighted(m: &[Vec<Q>], gram: &[Q]) -> Norm {
    let n = m.len();
    let gm: Vec<Vec<Q>> = (0..n).map(|i| m[i].iter().map(|x| x * &gram[i]).collect()).collect();
    let mt_gm: Vec<Vec<Q>> = (0..n).map(|i| (0..n).map(|j| (0..n).fold(Q::zero(), |s, k| s + &m[k][i] * &gm[k][j])).collect()).collect();
    let h: Vec<Vec<Q>> = (0..n).map(|i| mt_gm[i].iter().map(|x| x / &gram[i]).collect()).collect();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || h[i][j].is_zero()));
    let (exact, lo, hi) = if diagonal {
        let top = (0..n).map(|i| h[i][i].clone()).fold(Q::zero(), |a, b| if b > a { b } else { a });
        (Some(top.clone()), top.clone(), top)
    } else {
        let tol = Q::new(BigInt::one(), BigInt::from(10u32).pow(40));
        match char_poly(&h).largest_root(&tol) {
            Some(r) => r,
            None => (Some(Q::zero()), Q::zero(), Q::zero()),
        }
    };
    match exact.as_ref().and_then(rational_sqrt) {
        Some(s) => Norm { lo: to_f64(&s), hi: to_f64(&s), exact: Some(s) },
        None => Norm {
            exact: None,
            lo: to_f64(&lo).max(0.0).sqrt() * (1.0 - 1e-15),
            hi: to_f64(&hi).max(0.0).sqrt() * (1.0 + 1e-15),
        },
    }
}

/// `A_1 ⊗ … ⊗ A_n` on distinct sites.
#[derive(Debug, Clone)]
pub struct TensorOp {
    pub factors: Vec<PolyOperator>,
}

impl TensorOp {
    pub fn power(a: &PolyOperator, n: usize) -> TensorOp {
        TensorOp { factors: vec![a.clone(); n] }
    }

    /// Kronecker product matrix and Gram diagonal.
    pub fn matrix(&self) -> (Vec<Vec<Q>>, Vec<Q>) {
        let mut mat = vec![vec![Q::one()]];
        let mut gram = vec![Q::one()];
        for f in &self.factors {
            let (p, r) = (mat.len(), f.matrix.len());
            let mut next = vec![vec![Q::zero(); p * r]; p * r];
            for i in 0..p {
                for j in 0..p {
                    if mat[i][j].is_zero() {
                        continue;
                    }
                    for a in 0..r {
                        for b in 0..r {
                            next[i * r + a][j * r + b] = &mat[i][j] * &f.matrix[a][b];
                        }
                    }
                }
            }
            let g = f.gram();
            gram = gram.iter().flat_map(|x| g.iter().map(move |y| x * y)).collect();
            mat = next;
        }
        (mat, gram)
    }

    pub fn operator_norm(&self) -> Norm {
        let (m, g) = self.matrix();
        norm_weighted(&m, &g)
    }

    /// The symbol factorizes over sites, so `sup|∏A_i(Ω_i)| = ∏ sup|A_i|`.
    pub fn sup_abs(&self) -> SupNorm {
        let parts: Vec<SupNorm> = self.factors.iter().map(|f| f.symbol().sup_abs()).collect();
        let exact = parts.iter().map(|p| p.exact.clone()).collect::<Option<Vec<Q>>>().map(|v| v.into_iter().product());
        SupNorm { exact, lo: parts.iter().map(|p| p.lo).product(), hi: parts.iter().map(|p| p.hi).product() }
    }

    /// Symbol value with every site at the same point.
    pub fn evaluate_aligned(&self, omega: &[Q; 3]) -> Complex {
        let mut acc: Complex = (Q::one(), Q::zero());
        for f in &self.factors {
            let (re, im) = f.symbol().evaluate(omega);
            acc = (&acc.0 * &re - &acc.1 * &im, &acc.0 * &im + &acc.1 * &re);
        }
        acc
    }
}

/// `π_m(σ³) = v∂_v - u∂_u`, `π_m(σ⁻) = u∂_v`, `π_m(σ⁺) = v∂_u`.
pub fn spin_generators(m: u32) -> Result<[PolyOperator; 3]> {
    let s3 = PolyOperator::from_word(m, "v dv")?;
    let s3 = PolyOperator::from_matrix(
        m,
        s3.matrix
            .iter()
            .zip(&PolyOperator::from_word(m, "u du")?.matrix)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect(),
    )?;
    Ok([s3, PolyOperator::from_word(m, "u dv")?, PolyOperator::from_word(m, "v du")?])
}

/// `[σ⁺, σ⁻] = σ³` and `[σ³, σ^±] = ±2σ^±` on `ℋ^{(m)}`.
pub fn su2_relations_hold(m: u32) -> Result<bool> {
    let [s3, sm, sp] = spin_generators(m)?;
    let c1 = sp.commutator(&sm)?;
    let c2 = s3.commutator(&sp)?;
    let c3 = s3.commutator(&sm)?;
    Ok(c1.matrix == s3.matrix && c2.matrix == sp.scale(&qi(2)).matrix && c3.matrix == sm.scale(&qi(-2)).matrix)
}

/// `dim ker H_N = 2^{|∂Λ_N|}`.
pub fn ground_space_dimension(n: u32, d: u32) -> Result<BigInt> {
    if n < 1 {
        return Err(Error::InvalidInput("N must be at least 1".into()));
    }
    let b = boundary_size(&build_volume(DualSite::ORIGIN, n, d));
    Ok(BigInt::one() << b)
}

/// `⟨e_i, A e_k⟩` from the matrix against `∫ conj(e_i) e_k A(Ω)` from the
/// symbol, for every basis pair; returns the number of pairs checked.
pub fn check_matrix_elements(op: &PolyOperator) -> Result<usize> {
    let m = op.m;
    let sym = op.symbol();
    let mut checked = 0;
    for i in 0..=m {
        for k in 0..=m {
            let pair = Symbol { terms: [([i, m - i, k, m - k], Q::one())].into_iter().collect() };
            let rhs = pair.mul(&sym).integrate();
            let lhs = op.matrix_element(i as usize, k as usize);
            if lhs != rhs {
                return Err(Error::Consistency(format!("matrix element ({i},{k}): {lhs} != {rhs}")));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::boundary_samples;
    use proptest::prelude::*;

    fn worked_example() -> PolyOperator {
        PolyOperator::from_word(2, "1/3 du u").unwrap()
    }

    #[test]
    fn normal_ordering() {
        let (c, w) = parse_word("du u").unwrap();
        assert_eq!(normal_order(&c, &w).unwrap(), vec![NormalTerm { k: 1, l: 0, j: 0, a: Q::one() }]);
        let (c, w) = parse_word("u du").unwrap();
        assert_eq!(
            normal_order(&c, &w).unwrap(),
            vec![NormalTerm { k: 0, l: 0, j: 0, a: qi(-1) }, NormalTerm { k: 1, l: 0, j: 0, a: Q::one() }]
        );
        let id = PolyOperator::from_word(3, "1").unwrap();
        assert_eq!(id, PolyOperator::identity(3));
        assert_eq!(id.symbol(), Symbol::one());
        assert!(normal_order(&Q::one(), &[Letter::U]).is_err());
        assert!(parse_word("x").is_err());
    }

    #[test]
    fn worked_example_values() {
        let a = worked_example();
        let s = a.symbol();
        assert_eq!(s.terms, [([1, 0, 1, 0], q(4, 3))].into_iter().collect());
        assert_eq!(s.sup_abs().exact, Some(q(4, 3)));
        assert_eq!(a.operator_norm().exact, Some(Q::one()));
        assert_eq!(PolyOperator::identity(2).operator_norm().exact, Some(Q::one()));
        // (4/3)cos²(θ/2) at θ = π/3.
        let (re, im) = s.evaluate_angles(std::f64::consts::FRAC_PI_3, 0.4);
        assert!((re - 4.0 / 3.0 * (std::f64::consts::FRAC_PI_6).cos().powi(2)).abs() < 1e-12 && im.abs() < 1e-12);
    }

    #[test]
    fn tensor_powers() {
        let a = worked_example();
        for n in 1..=5usize {
            let t = TensorOp::power(&a, n);
            assert_eq!(t.operator_norm().exact, Some(Q::one()));
            let expect = num_traits::pow(q(4, 3), n);
            assert_eq!(t.sup_abs().exact, Some(expect.clone()));
            assert_eq!(t.evaluate_aligned(&[Q::zero(), Q::zero(), Q::one()]), (expect, Q::zero()));
        }
    }

    #[test]
    fn matrix_element_identity() {
        for m in 1..=4u32 {
            for word in ["du u", "dv v", "u dv", "v du", "du dv u v", "du du u u", "u v du dv"] {
                let op = PolyOperator::from_word(m, word).unwrap();
                assert_eq!(check_matrix_elements(&op).unwrap(), ((m + 1) * (m + 1)) as usize);
            }
        }
    }

    #[test]
    fn symbol_integrals_match_spherecalc() {
        // The moment formula for ∫|u|^{2a}|v|^{2b} against dot-product integration.
        let var = 7;
        for m in 2..=3u32 {
            let op = PolyOperator::from_word(m, "u dv du v").unwrap();
            for i in 0..=m {
                for k in 0..=m {
                    let pair = Symbol { terms: [([i, m - i, k, m - k], Q::one())].into_iter().collect() };
                    let prod = pair.mul(&op.symbol());
                    let (re, im) = prod.to_dot_polys(var);
                    assert_eq!(re.integrate_out(var).as_constant().unwrap(), prod.integrate());
                    assert!(im.integrate_out(var).is_zero());
                }
            }
        }
    }

    #[test]
    fn exact_evaluation_matches_dot_polys() {
        let op = PolyOperator::from_word(3, "u dv du v").unwrap();
        let s = op.symbol();
        let (re, im) = s.to_dot_polys(7);
        for asg in boundary_samples(1, 0, 4, 11) {
            let omega = asg.values().next().unwrap().clone();
            let fix = |p: &DotPoly| p.fix_vector(7, &omega).as_constant().unwrap();
            assert_eq!(s.evaluate(&omega), (fix(&re), fix(&im)));
        }
    }

    #[test]
    fn matrix_round_trip() {
        for m in 1..=4u32 {
            let op = PolyOperator::from_word(m, "u dv v du").unwrap();
            let back = PolyOperator::from_matrix(m, op.matrix.clone()).unwrap();
            assert_eq!(back.matrix, op.matrix);
            check_matrix_elements(&back).unwrap();
        }
    }

    #[test]
    fn spin_algebra() {
        for m in 1..=4 {
            assert!(su2_relations_hold(m).unwrap());
        }
    }

    #[test]
    fn ground_space() {
        assert_eq!(ground_space_dimension(1, 0).unwrap(), BigInt::from(64));
        assert_eq!(ground_space_dimension(2, 1).unwrap(), BigInt::from(4096));
        for d in 0..=3 {
            for n in 1..=5 {
                assert_eq!(ground_space_dimension(n, d).unwrap(), BigInt::one() << (6 * n));
            }
        }
    }

    #[test]
    fn sturm_roots() {
        // (x - 1/2)(x - 2)(x + 3)
        let p = UPoly(vec![qi(3), q(-13, 2), q(1, 2), Q::one()]);
        let r = p.largest_root(&q(1, 1 << 30)).unwrap();
        assert_eq!(r.0, Some(qi(2)));
        assert_eq!(p.isolate_roots(&qi(-10), &qi(10), &q(1, 1 << 20)).len(), 3);
        // x² - 2: irrational root, bracketed.
        let s = UPoly(vec![qi(-2), Q::zero(), Q::one()]).largest_root(&q(1, 1 << 50)).unwrap();
        assert!(s.0.is_none() && to_f64(&s.1) <= 2f64.sqrt() && 2f64.sqrt() <= to_f64(&s.2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn norm_below_symbol_sup(m in 1u32..=3, seed in proptest::collection::vec(-4i64..=4, 16)) {
            // Self-adjoint: G·M symmetric.
            let n = m as usize + 1;
            let g: Vec<Q> = (0..=m).map(|k| basis_norm_sq(m, k)).collect();
            let mut mat = vec![vec![Q::zero(); n]; n];
            for i in 0..n {
                for j in i..n {
                    let s = qi(seed[(i * n + j) % seed.len()]);
                    mat[i][j] = &s / &g[i];
                    mat[j][i] = &s / &g[j];
                }
            }
            let op = PolyOperator::from_matrix(m, mat).unwrap();
            check_matrix_elements(&op).unwrap();
            let norm = op.operator_norm();
            let sup = op.symbol().sup_abs();
            prop_assert!(norm.lo <= sup.hi + 1e-9);
            prop_assert!(norm.hi <= sup.lo * (1.0 + 1e-6) + 1e-9, "norm {:?} sup {:?}", norm, sup);
        }
    }
}
