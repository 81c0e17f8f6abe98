//! Exact arithmetic in a two-level tower of local fields.
//!
//! A [`TowerSpec`] describes `ℤ_p ⊆ O_L ⊆ O_K` where `O_L = ℤ_p[a]/(g_L)` and
//! `O_K = O_L[b]/(g_K)`. Each defining polynomial is Eisenstein over its base
//! or unramified (monic and irreducible modulo the base maximal ideal); a
//! degree-one level is the trivial extension. Scalars from every level embed
//! into `O_K` and all valuations are normalized so that `v(π_K) = 1`.
//!
//! A [`RingElement`] is a nested polynomial in `(a, b)` with integer
//! coordinates, carried at an absolute precision `prec`: the element is known
//! modulo `π_K^prec`. Canonical form reduces the coordinate of `a^i b^j`
//! modulo `p^M` with `M = ceil((prec - w_ij) / e)`, where `w_ij = v(a^i b^j)`
//! and `e = e(K/ℚ_p)`. Because the monomial valuations `w_ij` hit distinct
//! residues modulo `e` along every ramified direction, the canonical form is
//! unique for a given `prec` and
//!
//! ```text
//! v(sum c_ij a^i b^j) = min_ij ( e * v_p(c_ij) + w_ij )
//! ```
//!
//! holds exactly. That identity is what makes valuations, exact division and
//! congruence checks cheap and safe at finite precision.
//!
//! Precision calculus: `prec(x + y) = min(px, py)` and
//! `prec(x * y) = min(px + min(v(y), py), py + min(v(x), px))`.

use std::fmt;
use std::sync::{Arc, Mutex};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degree cap and absolute π-adic precision for a computation.
///
/// A series under budget `{ degree, precision }` is exact modulo
/// `x^{degree+1}` with coefficients known modulo `π_K^precision` (or better;
/// achieved precision is tracked per coefficient).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub degree: usize,
    pub precision: u32,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { degree: 32, precision: 16 }
    }
}

/// Which level of the tower a scalar or residue system refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    L,
    K,
}

/// How one step of the tower sits over its base.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Degree-one step; the generator is not used.
    Trivial,
    /// Totally ramified; the generator is a uniformizer of its level.
    Eisenstein,
    /// Residue-field extension; the generator is a unit.
    Unramified,
}

/// Valuation of an element at finite precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Valuation {
    /// Exact valuation, strictly below the element's precision.
    Finite(u32),
    /// The element is zero at its precision; the true valuation is >= this.
    AtLeast(u32),
}

impl Valuation {
    /// Lower bound usable in precision calculus: `min(v, prec)`.
    pub fn floor(self) -> u32 {
        match self {
            Valuation::Finite(v) => v,
            Valuation::AtLeast(p) => p,
        }
    }

    pub fn is_zero_at_precision(self) -> bool {
        matches!(self, Valuation::AtLeast(_))
    }
}

/// Static description of the two-level tower, shared by every element.
pub struct TowerSpec {
    p: u64,
    p_big: BigInt,
    /// Monic defining polynomial of `L/ℚ_p`; `g_l[i]` is the coefficient of
    /// `x^i`, length `d_l + 1`.
    g_l: Vec<BigInt>,
    /// Monic defining polynomial of `K/L` with coefficients in `O_L`
    /// (as `a`-polynomials of length `d_l`); length `d_k + 1`.
    g_k: Vec<Vec<BigInt>>,
    d_l: usize,
    d_k: usize,
    kind_l: StepKind,
    kind_k: StepKind,
    /// `e(K/ℚ_p)`.
    e_total: u32,
    /// `e(K/L)` and `f(K/L)`.
    e_kl: u32,
    f_kl: u32,
    /// `v_K(a)` and `v_K(b)` for the two generators.
    w_a: u32,
    w_b: u32,
    q_l: u64,
    q_k: u64,
    default_precision: u32,
    /// Identifier used by series files to name the tower they belong to.
    label: String,
    p_powers: Mutex<Vec<BigInt>>,
    /// Cached unit `π_K^e / p` and its inverse, at the highest precision
    /// requested so far.
    pi_unit_cache: Mutex<Option<(RingElement, RingElement)>>,
}

impl fmt::Debug for TowerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TowerSpec")
            .field("p", &self.p)
            .field("d_l", &self.d_l)
            .field("d_k", &self.d_k)
            .field("kind_l", &self.kind_l)
            .field("kind_k", &self.kind_k)
            .field("e_total", &self.e_total)
            .field("q_k", &self.q_k)
            .field("label", &self.label)
            .finish()
    }
}

fn ceil_div_u32(a: u32, b: u32) -> u32 {
    (a + b - 1) / b
}

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    // Deterministic Miller-Rabin for u64.
    let d = n - 1;
    let s = d.trailing_zeros();
    let d = d >> s;
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = mod_pow_u64(a % n, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mod_mul_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn mod_mul_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn mod_pow_u64(mut a: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1u64;
    a %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mod_mul_u64(r, a, m);
        }
        a = mod_mul_u64(a, a, m);
        e >>= 1;
    }
    r
}

// ---------------------------------------------------------------------------
// Polynomial arithmetic over small finite fields, used only to validate
// defining polynomials (irreducibility modulo the base maximal ideal).
// ---------------------------------------------------------------------------

/// `F_q = F_p[y]/(modulus)`; `modulus` empty means `F_p` itself.
struct ResidueField {
    p: u64,
    modulus: Vec<u64>,
}

impl ResidueField {
    fn deg(&self) -> usize {
        if self.modulus.is_empty() { 1 } else { self.modulus.len() - 1 }
    }

    fn q(&self) -> u64 {
        self.p.pow(self.deg() as u32)
    }

    fn zero(&self) -> Vec<u64> {
        vec![0; self.deg()]
    }

    fn is_zero(&self, a: &[u64]) -> bool {
        a.iter().all(|&c| c == 0)
    }

    fn add(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        a.iter().zip(b).map(|(&x, &y)| (x + y) % self.p).collect()
    }

    fn neg(&self, a: &[u64]) -> Vec<u64> {
        a.iter().map(|&x| (self.p - x % self.p) % self.p).collect()
    }

    fn mul(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        let d = self.deg();
        let mut raw = vec![0u64; 2 * d - 1];
        for (i, &x) in a.iter().enumerate() {
            if x == 0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                raw[i + j] = (raw[i + j] + mod_mul_u64(x, y, self.p)) % self.p;
            }
        }
        // Reduce modulo the monic modulus.
        for i in (d..raw.len()).rev() {
            let c = raw[i];
            if c == 0 {
                continue;
            }
            raw[i] = 0;
            for t in 0..d {
                let m = self.modulus.get(t).copied().unwrap_or(0);
                let sub = mod_mul_u64(c, m, self.p);
                raw[i - d + t] = (raw[i - d + t] + self.p - sub) % self.p;
            }
        }
        raw.truncate(d);
        raw
    }

    fn inv(&self, a: &[u64]) -> Vec<u64> {
        // a^(q-2) by square and multiply; a must be nonzero.
        let mut e = self.q() - 2;
        let mut base = a.to_vec();
        let mut acc = self.zero();
        acc[0] = 1;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(&acc, &base);
            }
            base = self.mul(&base, &base);
            e >>= 1;
        }
        acc
    }
}

type FqPoly = Vec<Vec<u64>>;

fn fq_poly_trim(f: &ResidueField, mut a: FqPoly) -> FqPoly {
    while a.len() > 0 && f.is_zero(a.last().unwrap()) {
        a.pop();
    }
    a
}

fn fq_poly_rem(f: &ResidueField, mut a: FqPoly, m: &FqPoly) -> FqPoly {
    // m monic of degree >= 1.
    let dm = m.len() - 1;
    while a.len() > dm {
        let c = a.last().unwrap().clone();
        let k = a.len() - 1 - dm;
        if !f.is_zero(&c) {
            for t in 0..dm {
                let sub = f.mul(&c, &m[t]);
                a[k + t] = f.add(&a[k + t], &f.neg(&sub));
            }
        }
        a.pop();
    }
    fq_poly_trim(f, a)
}

fn fq_poly_mulmod(f: &ResidueField, a: &FqPoly, b: &FqPoly, m: &FqPoly) -> FqPoly {
    if a.is_empty() || b.is_empty() {
        return vec![];
    }
    let mut raw: FqPoly = vec![f.zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if f.is_zero(x) {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            let prod = f.mul(x, y);
            raw[i + j] = f.add(&raw[i + j], &prod);
        }
    }
    fq_poly_rem(f, raw, m)
}

fn fq_poly_powmod(f: &ResidueField, a: &FqPoly, mut e: u128, m: &FqPoly) -> FqPoly {
    let mut acc: FqPoly = vec![{
        let mut one = f.zero();
        one[0] = 1;
        one
    }];
    let mut base = fq_poly_rem(f, a.clone(), m);
    while e > 0 {
        if e & 1 == 1 {
            acc = fq_poly_mulmod(f, &acc, &base, m);
        }
        base = fq_poly_mulmod(f, &base, &base, m);
        e >>= 1;
    }
    acc
}

fn fq_poly_gcd(f: &ResidueField, mut a: FqPoly, mut b: FqPoly) -> FqPoly {
    while !b.is_empty() {
        // Make b monic before using it as a divisor.
        let lead = b.last().unwrap().clone();
        let inv = f.inv(&lead);
        for c in b.iter_mut() {
            *c = f.mul(c, &inv);
        }
        let r = fq_poly_rem(f, a, &b);
        a = b;
        b = r;
    }
    a
}

/// Irreducibility over `F_q` via the standard power test:
/// `x^{q^d} = x (mod g)` and `gcd(x^{q^{d/l}} - x, g) = 1` for primes `l | d`.
fn fq_poly_irreducible(f: &ResidueField, g: &FqPoly) -> bool {
    let d = g.len() - 1;
    if d == 0 {
        return false;
    }
    let q = f.q() as u128;
    let x: FqPoly = vec![f.zero(), {
        let mut one = f.zero();
        one[0] = 1;
        one
    }];
    let xq = |exp: u32| -> FqPoly {
        let mut e: u128 = 1;
        for _ in 0..exp {
            e = e.checked_mul(q).expect("residue field too large for validation");
        }
        fq_poly_powmod(f, &x, e, g)
    };
    // x^{q^d} == x mod g
    let top = xq(d as u32);
    let diff = {
        let mut t = top;
        while t.len() < 2 {
            t.push(f.zero());
        }
        t[1] = f.add(&t[1], &f.neg(&{
            let mut one = f.zero();
            one[0] = 1;
            one
        }));
        fq_poly_trim(f, t)
    };
    if !diff.is_empty() {
        return false;
    }
    let mut primes = vec![];
    let mut m = d;
    let mut c = 2;
    while c * c <= m {
        if m % c == 0 {
            primes.push(c);
            while m % c == 0 {
                m /= c;
            }
        }
        c += 1;
    }
    if m > 1 {
        primes.push(m);
    }
    for l in primes {
        let mut t = xq((d / l) as u32);
        while t.len() < 2 {
            t.push(f.zero());
        }
        t[1] = f.add(&t[1], &f.neg(&{
            let mut one = f.zero();
            one[0] = 1;
            one
        }));
        let gcd = fq_poly_gcd(f, g.clone(), fq_poly_trim(f, t));
        if gcd.len() != 1 {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Tower construction
// ---------------------------------------------------------------------------

impl TowerSpec {
    /// Build and validate a tower. `g_l` / `g_k` are monic coefficient lists
    /// (constant first, leading 1 last); an empty list is the trivial step.
    /// `g_k`'s coefficients are `a`-polynomials over `O_L`.
    pub fn build(
        p: u64,
        g_l: &[i64],
        g_k: &[Vec<i64>],
        default_precision: u32,
        label: impl Into<String>,
    ) -> Result<Arc<TowerSpec>> {
        if !is_prime_u64(p) {
            return Err(Error::NotPrime(p));
        }
        if default_precision == 0 {
            return Err(Error::Config("precision must be positive".into()));
        }
        let p_big = BigInt::from(p);

        // --- L level ---
        let g_l_big: Vec<BigInt> = if g_l.is_empty() {
            vec![BigInt::zero(), BigInt::one()] // x; trivial step placeholder
        } else {
            g_l.iter().map(|&c| BigInt::from(c)).collect()
        };
        let d_l = g_l_big.len() - 1;
        if d_l == 0 || !g_l_big.last().unwrap().is_one() {
            return Err(Error::BadDefiningPolynomial {
                level: "L",
                reason: "must be monic of degree >= 1".into(),
            });
        }
        let kind_l = if g_l.is_empty() {
            StepKind::Trivial
        } else {
            classify_over_zp(p, &g_l_big)?
        };

        // --- K level ---
        let g_k_big: Vec<Vec<BigInt>> = if g_k.is_empty() {
            vec![vec![BigInt::zero()], vec![BigInt::one()]]
        } else {
            g_k.iter()
                .map(|c| {
                    let mut v: Vec<BigInt> = c.iter().map(|&x| BigInt::from(x)).collect();
                    if v.is_empty() {
                        v.push(BigInt::zero());
                    }
                    if v.len() > d_l {
                        return Err(Error::BadDefiningPolynomial {
                            level: "K",
                            reason: format!(
                                "coefficient has a-degree {} >= [L:Qp] = {}",
                                v.len() - 1,
                                d_l
                            ),
                        });
                    }
                    v.resize(d_l, BigInt::zero());
                    Ok(v)
                })
                .collect::<Result<_>>()?
        };
        let d_k = g_k_big.len() - 1;
        if d_k == 0 {
            return Err(Error::BadDefiningPolynomial {
                level: "K",
                reason: "must have degree >= 1".into(),
            });
        }
        {
            let lead = &g_k_big[d_k];
            let monic = lead[0].is_one() && lead[1..].iter().all(|c| c.is_zero());
            if !monic {
                return Err(Error::BadDefiningPolynomial { level: "K", reason: "must be monic".into() });
            }
        }
        let kind_k = if g_k.is_empty() {
            StepKind::Trivial
        } else {
            classify_over_l(p, &g_l_big, kind_l, &g_k_big)?
        };

        let (e_l, f_l) = match kind_l {
            StepKind::Trivial => (1u32, 1u32),
            StepKind::Eisenstein => (d_l as u32, 1),
            StepKind::Unramified => (1, d_l as u32),
        };
        let (e_kl, f_kl) = match kind_k {
            StepKind::Trivial => (1u32, 1u32),
            StepKind::Eisenstein => (d_k as u32, 1),
            StepKind::Unramified => (1, d_k as u32),
        };
        let e_total = e_l * e_kl;
        let w_a = match kind_l {
            StepKind::Eisenstein => e_kl,
            _ => 0,
        };
        let w_b = match kind_k {
            StepKind::Eisenstein => 1,
            _ => 0,
        };
        let q_l = p
            .checked_pow(f_l)
            .filter(|&q| q <= 1 << 20)
            .ok_or_else(|| Error::Config("residue field of L too large".into()))?;
        let q_k = q_l
            .checked_pow(f_kl)
            .filter(|&q| q <= 1 << 20)
            .ok_or_else(|| Error::Config("residue field of K too large".into()))?;
        if d_l * d_k > 64 {
            return Err(Error::Config("total tower degree above 64 is not supported".into()));
        }

        Ok(Arc::new(TowerSpec {
            p,
            p_big,
            g_l: g_l_big,
            g_k: g_k_big,
            d_l,
            d_k,
            kind_l,
            kind_k,
            e_total,
            e_kl,
            f_kl,
            w_a,
            w_b,
            q_l,
            q_k,
            default_precision,
            label: label.into(),
            p_powers: Mutex::new(vec![BigInt::one()]),
            pi_unit_cache: Mutex::new(None),
        }))
    }

    pub fn p(&self) -> u64 {
        self.p
    }
    pub fn p_big(&self) -> &BigInt {
        &self.p_big
    }
    pub fn degree_l(&self) -> usize {
        self.d_l
    }
    pub fn degree_k(&self) -> usize {
        self.d_k
    }
    pub fn kind_l(&self) -> StepKind {
        self.kind_l
    }
    pub fn kind_k(&self) -> StepKind {
        self.kind_k
    }
    /// `e(K/ℚ_p)`: the π_K-valuation of `p`.
    pub fn e_total(&self) -> u32 {
        self.e_total
    }
    /// `e(K/L)`: the π_K-valuation of `π_L`.
    pub fn e_kl(&self) -> u32 {
        self.e_kl
    }
    pub fn f_kl(&self) -> u32 {
        self.f_kl
    }
    pub fn q_l(&self) -> u64 {
        self.q_l
    }
    pub fn q_k(&self) -> u64 {
        self.q_k
    }
    pub fn q(&self, level: Level) -> u64 {
        match level {
            Level::L => self.q_l,
            Level::K => self.q_k,
        }
    }
    pub fn default_precision(&self) -> u32 {
        self.default_precision
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    /// π_K-valuation of the uniformizer of a level: 1 for K, `e(K/L)` for L.
    pub fn v_pi(&self, level: Level) -> u32 {
        match level {
            Level::L => self.e_kl,
            Level::K => 1,
        }
    }

    fn p_pow(&self, m: u32) -> BigInt {
        let mut table = self.p_powers.lock().unwrap();
        while table.len() <= m as usize {
            let next = table.last().unwrap() * &self.p_big;
            table.push(next);
        }
        table[m as usize].clone()
    }

    /// `v_K(a^i b^j)` for the basis monomial.
    fn w_of(&self, i: usize, j: usize) -> u32 {
        i as u32 * self.w_a + j as u32 * self.w_b
    }

    /// Exponent `M` such that the `(i,j)` coordinate of an element at
    /// `prec` is canonically reduced modulo `p^M`.
    fn coord_modulus_exp(&self, i: usize, j: usize, prec: u32) -> u32 {
        let w = self.w_of(i, j);
        if prec <= w {
            0
        } else {
            ceil_div_u32(prec - w, self.e_total)
        }
    }
}

fn classify_over_zp(p: u64, g: &[BigInt]) -> Result<StepKind> {
    let p_big = BigInt::from(p);
    let d = g.len() - 1;
    let vp = |c: &BigInt| -> u32 {
        if c.is_zero() {
            return u32::MAX;
        }
        let mut v = 0;
        let mut c = c.clone();
        while (&c % &p_big).is_zero() {
            c /= &p_big;
            v += 1;
        }
        v
    };
    let eis = (0..d).all(|i| vp(&g[i]) >= 1) && vp(&g[0]) == 1;
    if eis {
        return Ok(StepKind::Eisenstein);
    }
    // Unramified candidate: irreducible modulo p.
    let f = ResidueField { p, modulus: vec![] };
    let gbar: FqPoly = g
        .iter()
        .map(|c| vec![c.mod_floor(&p_big).to_u64_digits().1.first().copied().unwrap_or(0)])
        .collect();
    if fq_poly_irreducible(&f, &gbar) {
        Ok(StepKind::Unramified)
    } else {
        Err(Error::BadDefiningPolynomial {
            level: "L",
            reason: "neither Eisenstein nor irreducible modulo p".into(),
        })
    }
}

fn classify_over_l(
    p: u64,
    g_l: &[BigInt],
    kind_l: StepKind,
    g_k: &[Vec<BigInt>],
) -> Result<StepKind> {
    let p_big = BigInt::from(p);
    let d_l = g_l.len() - 1;
    let d_k = g_k.len() - 1;
    // π_L-valuation of an O_L coefficient, from L's own adapted basis.
    let e_l = if kind_l == StepKind::Eisenstein { d_l as u32 } else { 1 };
    let w_a_l = if kind_l == StepKind::Eisenstein { 1u32 } else { 0 };
    let v_l = |c: &[BigInt]| -> u32 {
        let mut best = u32::MAX;
        for (i, ci) in c.iter().enumerate() {
            if ci.is_zero() {
                continue;
            }
            let mut v = 0u32;
            let mut x = ci.clone();
            while (&x % &p_big).is_zero() {
                x /= &p_big;
                v += 1;
            }
            best = best.min(e_l * v + i as u32 * w_a_l);
        }
        best
    };
    let eis = (0..d_k).all(|i| v_l(&g_k[i]) >= 1) && v_l(&g_k[0]) == 1;
    if eis {
        return Ok(StepKind::Eisenstein);
    }
    // Unramified candidate: irreducible over the residue field of L.
    let f = match kind_l {
        StepKind::Unramified => ResidueField {
            p,
            modulus: g_l
                .iter()
                .map(|c| c.mod_floor(&p_big).to_u64_digits().1.first().copied().unwrap_or(0))
                .collect(),
        },
        _ => ResidueField { p, modulus: vec![] },
    };
    let deg_res = f.deg();
    let gbar: FqPoly = g_k
        .iter()
        .map(|coef| {
            let mut r = vec![0u64; deg_res];
            for (i, c) in coef.iter().enumerate() {
                let red = c.mod_floor(&p_big).to_u64_digits().1.first().copied().unwrap_or(0);
                if i < deg_res {
                    r[i] = red;
                } else if red != 0 {
                    // a^i with i >= residue degree only occurs for Eisenstein L,
                    // where a ≡ 0 modulo the maximal ideal; drop it.
                }
            }
            r
        })
        .collect();
    if fq_poly_irreducible(&f, &gbar) {
        Ok(StepKind::Unramified)
    } else {
        Err(Error::BadDefiningPolynomial {
            level: "K",
            reason: "neither Eisenstein over O_L nor irreducible modulo pi_L".into(),
        })
    }
}

// ---------------------------------------------------------------------------
// Elements
// ---------------------------------------------------------------------------

/// An element of `O_K`, known modulo `π_K^prec`.
#[derive(Clone)]
pub struct RingElement {
    tower: Arc<TowerSpec>,
    /// `coords[j][i]` is the integer coordinate of `a^i b^j`, canonically
    /// reduced for the element's precision.
    coords: Vec<Vec<BigInt>>,
    prec: u32,
    /// Cached `min(valuation, prec)`; recomputed by `canonicalize`, so any
    /// direct write to `coords` must re-canonicalize before the value is used.
    val: u32,
}

impl fmt::Debug for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod pi^{})", self, self.prec)
    }
}

impl fmt::Display for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = vec![];
        for (j, row) in self.coords.iter().enumerate() {
            for (i, c) in row.iter().enumerate() {
                if c.is_zero() {
                    continue;
                }
                let mut t = c.to_string();
                if i > 0 {
                    t.push_str(&format!("*a^{i}"));
                }
                if j > 0 {
                    t.push_str(&format!("*b^{j}"));
                }
                terms.push(t);
            }
        }
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

impl RingElement {
    fn raw(tower: Arc<TowerSpec>, coords: Vec<Vec<BigInt>>, prec: u32) -> RingElement {
        let mut e = RingElement { tower, coords, prec, val: 0 };
        e.canonicalize();
        e
    }

    fn canonicalize(&mut self) {
        let t = self.tower.clone();
        let mut val = self.prec;
        // One lock for the whole pass; most canonical coordinates are already
        // in range, so the reduction itself is usually skipped.
        let mut powers: Option<std::sync::MutexGuard<'_, Vec<BigInt>>> = None;
        for j in 0..t.d_k {
            for i in 0..t.d_l {
                let c = &mut self.coords[j][i];
                if c.is_zero() {
                    continue;
                }
                let m = t.coord_modulus_exp(i, j, self.prec);
                if m == 0 {
                    *c = BigInt::zero();
                    continue;
                }
                let table = powers.get_or_insert_with(|| t.p_powers.lock().unwrap());
                while table.len() <= m as usize {
                    let next = table.last().unwrap() * &t.p_big;
                    table.push(next);
                }
                let modulus = &table[m as usize];
                if c.is_negative() || &*c >= modulus {
                    *c = c.mod_floor(modulus);
                    if c.is_zero() {
                        continue;
                    }
                }
                let w = t.w_of(i, j);
                if w < val {
                    // Counting beyond (val - w) / e cannot lower the minimum.
                    let budget = ceil_div_u32(val - w, t.e_total).min(m);
                    val = val.min(t.e_total * vp_capped(t.p, &t.p_big, c, budget) + w);
                }
            }
        }
        self.val = val.min(self.prec);
    }

    pub fn tower(&self) -> &Arc<TowerSpec> {
        &self.tower
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    pub fn zero(tower: &Arc<TowerSpec>, prec: u32) -> RingElement {
        let coords = vec![vec![BigInt::zero(); tower.d_l]; tower.d_k];
        RingElement { tower: tower.clone(), coords, prec, val: prec }
    }

    pub fn one(tower: &Arc<TowerSpec>, prec: u32) -> RingElement {
        Self::from_bigint(tower, &BigInt::one(), prec)
    }

    pub fn from_bigint(tower: &Arc<TowerSpec>, n: &BigInt, prec: u32) -> RingElement {
        let mut coords = vec![vec![BigInt::zero(); tower.d_l]; tower.d_k];
        coords[0][0] = n.clone();
        RingElement::raw(tower.clone(), coords, prec)
    }

    pub fn from_i64(tower: &Arc<TowerSpec>, n: i64, prec: u32) -> RingElement {
        Self::from_bigint(tower, &BigInt::from(n), prec)
    }

    /// The image of the level-L generator `a` (for trivial L this is 0).
    pub fn gen_a(tower: &Arc<TowerSpec>, prec: u32) -> RingElement {
        let mut e = Self::zero(tower, prec);
        if tower.kind_l != StepKind::Trivial {
            e.coords[0][1] = BigInt::one();
            e.canonicalize();
        }
        e
    }

    /// The image of the level-K generator `b` (for trivial K this is 0).
    pub fn gen_b(tower: &Arc<TowerSpec>, prec: u32) -> RingElement {
        let mut e = Self::zero(tower, prec);
        if tower.kind_k != StepKind::Trivial {
            e.coords[1][0] = BigInt::one();
            e.canonicalize();
        }
        e
    }

    /// The uniformizer of a level, as an element of `O_K`.
    pub fn uniformizer(tower: &Arc<TowerSpec>, level: Level, prec: u32) -> RingElement {
        match level {
            Level::K => match tower.kind_k {
                StepKind::Eisenstein => Self::gen_b(tower, prec),
                _ => Self::uniformizer(tower, Level::L, prec),
            },
            Level::L => match tower.kind_l {
                StepKind::Eisenstein => Self::gen_a(tower, prec),
                _ => Self::from_bigint(tower, &tower.p_big.clone(), prec),
            },
        }
    }

    /// Construct from raw nested coordinates (used by deserialization).
    pub fn from_coords(
        tower: &Arc<TowerSpec>,
        coords: Vec<Vec<BigInt>>,
        prec: u32,
    ) -> Result<RingElement> {
        if coords.len() != tower.d_k || coords.iter().any(|r| r.len() != tower.d_l) {
            return Err(Error::Config(format!(
                "element coordinates must be {} x {}",
                tower.d_k, tower.d_l
            )));
        }
        Ok(RingElement::raw(tower.clone(), coords, prec))
    }

    pub fn coords(&self) -> &Vec<Vec<BigInt>> {
        &self.coords
    }

    /// Reduce to a lower precision (raising is unsound and not offered).
    pub fn reduced(&self, prec: u32) -> RingElement {
        let p = prec.min(self.prec);
        RingElement::raw(self.tower.clone(), self.coords.clone(), p)
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|row| row.iter().all(|c| c.is_zero()))
    }

    /// Zero with effectively unbounded precision. Only such zeros may be
    /// dropped from a product: a zero at finite precision `t` stands for an
    /// unknown multiple of `π_K^t` and must keep contributing the bound
    /// `t + v(other)` to the result's precision.
    pub fn is_exact_zero(&self) -> bool {
        self.is_zero() && self.prec >= u32::MAX >> 2
    }

    /// True when the element lies in the embedded copy of `O_L`.
    pub fn is_in_l(&self) -> bool {
        self.coords[1..].iter().all(|row| row.iter().all(|c| c.is_zero()))
    }

    /// Largest `m <= prec` with `π_K^m | self`; `AtLeast(prec)` if the
    /// element is zero at its precision.
    pub fn valuation(&self) -> Valuation {
        if self.is_zero() {
            Valuation::AtLeast(self.prec)
        } else {
            Valuation::Finite(self.val)
        }
    }

    /// `min(valuation, prec)`, the safe lower bound for precision calculus.
    pub fn val_floor(&self) -> u32 {
        self.val
    }

    fn assert_same_tower(&self, other: &RingElement) {
        assert!(
            Arc::ptr_eq(&self.tower, &other.tower),
            "ring elements from different towers"
        );
    }

    pub fn try_add(&self, other: &RingElement) -> Result<RingElement> {
        if !Arc::ptr_eq(&self.tower, &other.tower) {
            return Err(Error::MixedTowers);
        }
        Ok(self + other)
    }

    pub fn try_sub(&self, other: &RingElement) -> Result<RingElement> {
        if !Arc::ptr_eq(&self.tower, &other.tower) {
            return Err(Error::MixedTowers);
        }
        Ok(self - other)
    }

    pub fn try_mul(&self, other: &RingElement) -> Result<RingElement> {
        if !Arc::ptr_eq(&self.tower, &other.tower) {
            return Err(Error::MixedTowers);
        }
        Ok(self * other)
    }

    /// Multiply by an exact integer scalar.
    pub fn mul_int(&self, n: &BigInt) -> RingElement {
        if n.is_zero() {
            return RingElement::zero(&self.tower, self.prec);
        }
        let t = &self.tower;
        let vp = vp_capped(t.p, &t.p_big, n, u32::MAX);
        let prec = self.prec.saturating_add(t.e_total.saturating_mul(vp));
        let coords = self
            .coords
            .iter()
            .map(|row| row.iter().map(|c| c * n).collect())
            .collect();
        RingElement::raw(self.tower.clone(), coords, prec)
    }

    pub fn mul_i64(&self, n: i64) -> RingElement {
        self.mul_int(&BigInt::from(n))
    }

    pub fn pow(&self, mut e: u64) -> RingElement {
        let mut base = self.clone();
        let mut acc = RingElement::one(&self.tower, self.prec.saturating_add(self.tower.e_total));
        if e == 0 {
            return acc;
        }
        loop {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = &base * &base;
        }
        acc
    }

    /// Exact division by `π_K^m`. Fails if the element is not divisible at
    /// its precision; the result has precision `prec - m`.
    pub fn exact_div_pi(&self, m: u32) -> Result<RingElement> {
        if m == 0 {
            return Ok(self.clone());
        }
        if self.prec < m {
            return Err(Error::InsufficientPrecision {
                degree: 0,
                needed: m,
                available: self.prec,
            });
        }
        if self.is_zero() {
            return Ok(RingElement::zero(&self.tower, self.prec - m));
        }
        let found = self.val_floor();
        if found < m {
            return Err(Error::DivisibilityFailure { needed: m, found });
        }
        let t = &self.tower;
        let e = t.e_total;
        let s = ceil_div_u32(m, e);
        let shift = e * s - m;
        // self / π^m = self * π^shift * (π^e/p)^{-s} / p^s
        let (_, u_inv) = self.tower_pi_unit(self.prec + shift + 1);
        let mut y = self.clone();
        if shift > 0 {
            let pi = RingElement::uniformizer(&self.tower, Level::K, self.prec + shift);
            for _ in 0..shift {
                y = &y * &pi;
            }
        }
        for _ in 0..s {
            y = &y * &u_inv;
        }
        let ps = t.p_pow(s);
        let mut coords = y.coords;
        for row in coords.iter_mut() {
            for c in row.iter_mut() {
                let (q, r) = c.div_mod_floor(&ps);
                if !r.is_zero() {
                    // Cannot happen when the valuation check passed; a residue
                    // here means the canonical-form invariant broke.
                    return Err(Error::Internal(format!(
                        "pi-division residue {} after valuation check",
                        r
                    )));
                }
                *c = q;
            }
        }
        Ok(RingElement::raw(self.tower.clone(), coords, self.prec - m))
    }

    /// Cached unit `π_K^e / p` and its inverse at precision >= `prec`.
    fn tower_pi_unit(&self, prec: u32) -> (RingElement, RingElement) {
        pi_unit_pair(&self.tower, prec)
    }

    /// Inverse of a unit (valuation 0), to the same precision.
    pub fn unit_inverse(&self) -> Result<RingElement> {
        match self.valuation() {
            Valuation::Finite(0) => {}
            Valuation::Finite(v) => return Err(Error::NotAUnit { valuation: v }),
            Valuation::AtLeast(_) => return Err(Error::ZeroAtPrecision),
        }
        let t = &self.tower;
        let d = t.d_l * t.d_k;
        let m_top = ceil_div_u32(self.prec.max(1), t.e_total);
        let modulus = t.p_pow(m_top);
        // Multiplication-by-self matrix on flattened coordinates, mod p^m_top.
        let work_prec = t.e_total * (m_top + 1);
        let me = self.reduced(self.prec).with_internal_prec(work_prec);
        let mut mat = vec![vec![BigInt::zero(); d]; d];
        for col in 0..d {
            let (i, j) = (col % t.d_l, col / t.d_l);
            let mut basis = RingElement::zero(&self.tower, work_prec);
            basis.coords[j][i] = BigInt::one();
            basis.canonicalize();
            let prod = &me * &basis;
            for row in 0..d {
                let (ri, rj) = (row % t.d_l, row / t.d_l);
                mat[row][col] = prod.coords[rj][ri].mod_floor(&modulus);
            }
        }
        let mut rhs = vec![BigInt::zero(); d];
        rhs[0] = BigInt::one();
        let sol = solve_unit_system(mat, rhs, &modulus, &t.p_big).ok_or_else(|| {
            Error::Internal("multiplication matrix of a unit was singular mod p".into())
        })?;
        let mut coords = vec![vec![BigInt::zero(); t.d_l]; t.d_k];
        for (idx, c) in sol.into_iter().enumerate() {
            coords[idx / t.d_l][idx % t.d_l] = c;
        }
        Ok(RingElement::raw(self.tower.clone(), coords, self.prec))
    }

    /// Reinterpret the same coordinates at a higher working precision. Only
    /// sound for exact data (integer combinations of basis monomials); kept
    /// private to the inversion path where the matrix entries are exact.
    fn with_internal_prec(&self, prec: u32) -> RingElement {
        RingElement::raw(self.tower.clone(), self.coords.clone(), prec)
    }

    /// Exact division: `self / other` where `v(self) >= v(other)`.
    pub fn exact_div(&self, other: &RingElement) -> Result<RingElement> {
        self.assert_same_tower(other);
        let vb = match other.valuation() {
            Valuation::Finite(v) => v,
            Valuation::AtLeast(_) => return Err(Error::ZeroAtPrecision),
        };
        let unit = other.exact_div_pi(vb)?;
        let num = self.exact_div_pi(vb)?;
        Ok(&num * &unit.unit_inverse()?)
    }

    /// Congruence modulo `π_K^m`; errors when either side carries less than
    /// `m` digits of precision.
    pub fn congruent_mod(&self, other: &RingElement, m: u32) -> Result<bool> {
        let avail = self.prec.min(other.prec);
        if avail < m {
            return Err(Error::InsufficientPrecision { degree: 0, needed: m, available: avail });
        }
        let d = self - other;
        Ok(d.valuation().floor() >= m)
    }

    /// Deterministic byte key of the canonical form (used for memo tables).
    pub fn canonical_key(&self) -> String {
        let mut s = format!("p{};", self.prec);
        for row in &self.coords {
            for c in row {
                s.push_str(&c.to_string());
                s.push(',');
            }
            s.push(';');
        }
        s
    }

    /// Teichmüller lift: the unique `(q_K - 1)`-th root of unity congruent to
    /// this unit modulo `π_K`, via Newton iteration on `X^{q_K-1} - 1`.
    pub fn teichmuller(&self) -> Result<RingElement> {
        match self.valuation() {
            Valuation::Finite(0) => {}
            Valuation::Finite(v) => return Err(Error::NotAUnit { valuation: v }),
            Valuation::AtLeast(_) => return Err(Error::ZeroAtPrecision),
        }
        let t = &self.tower;
        let n = t.q_k - 1;
        let n_int = BigInt::from(n);
        let mut x = self.clone();
        let one = RingElement::one(&self.tower, self.prec);
        // Quadratic convergence; 2*log2(prec)+4 iterations is ample.
        let max_iter = 2 * (32 - (self.prec.max(2)).leading_zeros()) + 4;
        for _ in 0..max_iter {
            let xn1 = x.pow(n - 1);
            let xn = &xn1 * &x;
            let f = &xn - &one;
            if f.valuation().floor() >= self.prec {
                return Ok(x);
            }
            let fp = xn1.mul_int(&n_int);
            let delta = f.exact_div(&fp)?;
            x = &x - &delta;
        }
        Err(Error::Internal("Teichmüller iteration did not converge".into()))
    }
}

/// The unit `π_K^e / p` and its inverse, at precision >= `prec`.
/// Cached per tower; the exact element never changes, only how many digits
/// of it have been materialized.
pub(crate) fn pi_unit_pair(tower: &Arc<TowerSpec>, prec: u32) -> (RingElement, RingElement) {
    {
        let cache = tower.pi_unit_cache.lock().unwrap();
        if let Some((u, ui)) = cache.as_ref() {
            if u.prec >= prec {
                return (u.reduced(prec), ui.reduced(prec));
            }
        }
    }
    let work = prec + tower.e_total + 2;
    let pi = RingElement::uniformizer(tower, Level::K, work + tower.e_total);
    let mut pe = RingElement::one(tower, work + tower.e_total);
    for _ in 0..tower.e_total {
        pe = &pe * &pi;
    }
    // Coordinate-wise division by p is exact here (π^e ≡ 0 mod p in the
    // adapted basis).
    let mut coords = pe.coords;
    for row in coords.iter_mut() {
        for c in row.iter_mut() {
            let (q, r) = c.div_mod_floor(&tower.p_big);
            assert!(r.is_zero(), "pi^e not divisible by p; tower invariants broken");
            *c = q;
        }
    }
    let u = RingElement::raw(tower.clone(), coords, work);
    let ui = u.unit_inverse().expect("pi^e/p is a unit");
    let result = (u.reduced(prec), ui.reduced(prec));
    let mut cache = tower.pi_unit_cache.lock().unwrap();
    *cache = Some((u, ui));
    result
}

/// Gaussian elimination over `ℤ/p^M` for a matrix invertible mod `p`.
fn solve_unit_system(
    mut mat: Vec<Vec<BigInt>>,
    mut rhs: Vec<BigInt>,
    modulus: &BigInt,
    p: &BigInt,
) -> Option<Vec<BigInt>> {
    let d = rhs.len();
    let mut perm: Vec<usize> = (0..d).collect();
    for col in 0..d {
        let pivot_row = (col..d).find(|&r| !(&mat[r][col] % p).is_zero())?;
        mat.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        perm.swap(col, pivot_row);
        let inv = mod_inverse(&mat[col][col], modulus)?;
        for t in col..d {
            mat[col][t] = (&mat[col][t] * &inv).mod_floor(modulus);
        }
        rhs[col] = (&rhs[col] * &inv).mod_floor(modulus);
        for r in 0..d {
            if r == col || mat[r][col].is_zero() {
                continue;
            }
            let factor = mat[r][col].clone();
            for t in col..d {
                let sub = (&factor * &mat[col][t]).mod_floor(modulus);
                mat[r][t] = (&mat[r][t] - sub).mod_floor(modulus);
            }
            let sub = (&factor * &rhs[col]).mod_floor(modulus);
            rhs[r] = (&rhs[r] - sub).mod_floor(modulus);
        }
    }
    Some(rhs)
}

fn mod_inverse(a: &BigInt, modulus: &BigInt) -> Option<BigInt> {
    let g = a.extended_gcd(modulus);
    if !g.gcd.is_one() {
        return None;
    }
    Some(g.x.mod_floor(modulus))
}

// ---------------------------------------------------------------------------
// O_L coefficient arithmetic (nested polynomial helpers)
// ---------------------------------------------------------------------------

/// `p`-adic valuation of a nonzero integer, counted up to `cap`.
fn vp_capped(p: u64, p_big: &BigInt, c: &BigInt, cap: u32) -> u32 {
    if cap == 0 {
        return 0;
    }
    if let Some(mut x) = c.to_i128() {
        let p = p as i128;
        let mut v = 0u32;
        while v < cap && x % p == 0 {
            x /= p;
            v += 1;
        }
        return v;
    }
    let mut x = c.clone();
    let mut v = 0u32;
    while v < cap {
        let (q, r) = x.div_rem(p_big);
        if !r.is_zero() {
            break;
        }
        x = q;
        v += 1;
    }
    v
}

/// `raw[j1+j2][i1+i2] += a[j1][i1] * b[j2][i2]` over all coordinate pairs;
/// `raw` is in the doubled monomial basis (width `2*d_l - 1`, height
/// `2*d_k - 1`).
fn accumulate_product(raw: &mut [Vec<BigInt>], a: &[Vec<BigInt>], b: &[Vec<BigInt>]) {
    for (j1, r1) in a.iter().enumerate() {
        for (i1, c1) in r1.iter().enumerate() {
            if c1.is_zero() {
                continue;
            }
            for (j2, r2) in b.iter().enumerate() {
                for (i2, c2) in r2.iter().enumerate() {
                    if c2.is_zero() {
                        continue;
                    }
                    raw[j1 + j2][i1 + i2] += c1 * c2;
                }
            }
        }
    }
}

/// Fold the doubled-basis coordinates back into the span of `a^i b^j` with
/// `i < d_l`, `j < d_k`. Entries beyond that block end up zero; the caller
/// truncates.
fn reduce_raw(t: &TowerSpec, raw: &mut [Vec<BigInt>]) {
    let (d_l, d_k) = (t.d_l, t.d_k);
    for row in raw.iter_mut() {
        for i in (d_l..row.len()).rev() {
            if row[i].is_zero() {
                continue;
            }
            let c = std::mem::replace(&mut row[i], BigInt::zero());
            for k in 0..d_l {
                let sub = &c * &t.g_l[k];
                row[i - d_l + k] -= sub;
            }
        }
    }
    for j in (d_k..raw.len()).rev() {
        if raw[j].iter().all(|c| c.is_zero()) {
            continue;
        }
        let c = std::mem::take(&mut raw[j]);
        for k in 0..d_k {
            if t.g_k[k].iter().all(|x| x.is_zero()) {
                continue;
            }
            let sub = l_mul(t, &c[..d_l], &t.g_k[k]);
            for (i, s) in sub.into_iter().enumerate() {
                raw[j - d_k + k][i] -= s;
            }
        }
    }
}

/// Accumulates a sum of products in the doubled monomial basis, reducing and
/// canonicalizing once at the end instead of once per term. The running
/// precision follows the same min-rule the individual ring operations use.
pub(crate) struct ProductAcc {
    rows: Vec<Vec<BigInt>>,
    prec: u32,
}

impl ProductAcc {
    pub(crate) fn new(tower: &TowerSpec) -> ProductAcc {
        ProductAcc {
            rows: vec![vec![BigInt::zero(); 2 * tower.d_l - 1]; 2 * tower.d_k - 1],
            prec: u32::MAX,
        }
    }

    pub(crate) fn cap_prec(&mut self, prec: u32) {
        self.prec = self.prec.min(prec);
    }

    /// Fold `a * b` into the sum.
    pub(crate) fn add_product(&mut self, a: &RingElement, b: &RingElement) {
        self.prec = self
            .prec
            .min(a.prec.saturating_add(b.val))
            .min(b.prec.saturating_add(a.val));
        accumulate_product(&mut self.rows, &a.coords, &b.coords);
    }

    /// Fold a single element into the sum.
    pub(crate) fn add_element(&mut self, a: &RingElement) {
        self.prec = self.prec.min(a.prec);
        for (j, row) in a.coords.iter().enumerate() {
            for (i, c) in row.iter().enumerate() {
                if !c.is_zero() {
                    self.rows[j][i] += c;
                }
            }
        }
    }

    pub(crate) fn finish(mut self, tower: &Arc<TowerSpec>) -> RingElement {
        // An empty sum is exactly zero.
        let prec = if self.prec == u32::MAX { u32::MAX >> 1 } else { self.prec };
        reduce_raw(tower, &mut self.rows);
        self.rows.truncate(tower.d_k);
        for row in self.rows.iter_mut() {
            row.truncate(tower.d_l);
        }
        RingElement::raw(tower.clone(), self.rows, prec)
    }
}

fn l_mul(t: &TowerSpec, x: &[BigInt], y: &[BigInt]) -> Vec<BigInt> {
    let d = t.d_l;
    let mut raw = vec![BigInt::zero(); 2 * d - 1];
    for (i, xi) in x.iter().enumerate() {
        if xi.is_zero() {
            continue;
        }
        for (j, yj) in y.iter().enumerate() {
            if yj.is_zero() {
                continue;
            }
            raw[i + j] += xi * yj;
        }
    }
    l_reduce(t, raw)
}

fn l_reduce(t: &TowerSpec, mut raw: Vec<BigInt>) -> Vec<BigInt> {
    let d = t.d_l;
    for i in (d..raw.len()).rev() {
        if raw[i].is_zero() {
            continue;
        }
        let c = std::mem::replace(&mut raw[i], BigInt::zero());
        for k in 0..d {
            let sub = &c * &t.g_l[k];
            raw[i - d + k] -= sub;
        }
    }
    raw.truncate(d);
    raw
}

impl std::ops::Add for &RingElement {
    type Output = RingElement;
    fn add(self, other: &RingElement) -> RingElement {
        self.assert_same_tower(other);
        let prec = self.prec.min(other.prec);
        let coords = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(r1, r2)| r1.iter().zip(r2).map(|(c1, c2)| c1 + c2).collect())
            .collect();
        RingElement::raw(self.tower.clone(), coords, prec)
    }
}

impl std::ops::Sub for &RingElement {
    type Output = RingElement;
    fn sub(self, other: &RingElement) -> RingElement {
        self.assert_same_tower(other);
        let prec = self.prec.min(other.prec);
        let coords = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(r1, r2)| r1.iter().zip(r2).map(|(c1, c2)| c1 - c2).collect())
            .collect();
        RingElement::raw(self.tower.clone(), coords, prec)
    }
}

impl std::ops::Neg for &RingElement {
    type Output = RingElement;
    fn neg(self) -> RingElement {
        let coords = self
            .coords
            .iter()
            .map(|r| r.iter().map(|c| -c).collect())
            .collect();
        RingElement::raw(self.tower.clone(), coords, self.prec)
    }
}

impl std::ops::Mul for &RingElement {
    type Output = RingElement;
    fn mul(self, other: &RingElement) -> RingElement {
        self.assert_same_tower(other);
        let t = &self.tower;
        let prec = self
            .prec
            .saturating_add(other.val)
            .min(other.prec.saturating_add(self.val));
        if t.d_l == 1 && t.d_k == 1 {
            let c = &self.coords[0][0] * &other.coords[0][0];
            return RingElement::raw(self.tower.clone(), vec![vec![c]], prec);
        }
        // Convolution in the doubled basis, then one reduction by g_L and g_K.
        let mut raw: Vec<Vec<BigInt>> = vec![vec![BigInt::zero(); 2 * t.d_l - 1]; 2 * t.d_k - 1];
        accumulate_product(&mut raw, &self.coords, &other.coords);
        reduce_raw(t, &mut raw);
        raw.truncate(t.d_k);
        for row in raw.iter_mut() {
            row.truncate(t.d_l);
        }
        RingElement::raw(self.tower.clone(), raw, prec)
    }
}

impl PartialEq for RingElement {
    /// Equality of canonical forms at the minimum of the two precisions.
    fn eq(&self, other: &Self) -> bool {
        if !Arc::ptr_eq(&self.tower, &other.tower) {
            return false;
        }
        let p = self.prec.min(other.prec);
        self.reduced(p).coords == other.reduced(p).coords
    }
}

// ---------------------------------------------------------------------------
// Residue systems
// ---------------------------------------------------------------------------

impl TowerSpec {
    /// The `q` canonical lifts of the residue field of the given level, in a
    /// fixed enumeration order (index written in base-p / base-q_L digits).
    /// Contains 0 and 1; entries are pairwise distinct modulo `π_K`.
    pub fn residue_representatives(
        self: &Arc<TowerSpec>,
        level: Level,
        prec: u32,
    ) -> Vec<RingElement> {
        let l_reps: Vec<RingElement> = {
            let f_dirs = if self.kind_l == StepKind::Unramified { self.d_l } else { 1 };
            let count = self.p.pow(f_dirs as u32);
            (0..count)
                .map(|k| {
                    let mut e = RingElement::zero(self, prec);
                    let mut rem = k;
                    for i in 0..f_dirs {
                        e.coords[0][i] = BigInt::from(rem % self.p);
                        rem /= self.p;
                    }
                    e.canonicalize();
                    e
                })
                .collect()
        };
        match level {
            Level::L => l_reps,
            Level::K => {
                if self.kind_k != StepKind::Unramified {
                    return l_reps;
                }
                let f_dirs = self.d_k;
                let ql = self.q_l;
                let count = ql.pow(f_dirs as u32);
                (0..count)
                    .map(|k| {
                        let mut e = RingElement::zero(self, prec);
                        let mut rem = k;
                        for j in 0..f_dirs {
                            let digit = (rem % ql) as usize;
                            rem /= ql;
                            for (i, c) in l_reps[digit].coords[0].iter().enumerate() {
                                e.coords[j][i] = c.clone();
                            }
                        }
                        e.canonicalize();
                        e
                    })
                    .collect()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn c1() -> Arc<TowerSpec> {
        TowerSpec::build(3, &[], &[], 16, "c1").unwrap()
    }

    /// p=3, L = Q_3(s) with s^2 = 3, K = L(t) with t^2 = s.
    fn c3() -> Arc<TowerSpec> {
        TowerSpec::build(3, &[-3, 0, 1], &[vec![0, -1], vec![0, 0], vec![1, 0]], 16, "c3")
            .unwrap()
    }

    #[test]
    fn trivial_tower_basics() {
        let t = c1();
        assert_eq!(t.e_total(), 1);
        assert_eq!(t.q_k(), 3);
        let x = RingElement::from_i64(&t, 7, 16);
        let y = RingElement::from_i64(&t, 5, 16);
        assert_eq!(&x * &y, RingElement::from_i64(&t, 35, 16));
        assert_eq!(RingElement::from_i64(&t, 9, 16).valuation(), Valuation::Finite(2));
        assert_eq!(RingElement::from_i64(&t, 0, 16).valuation(), Valuation::AtLeast(16));
    }

    #[test]
    fn unit_inverse_matches_extended_gcd() {
        // Independent oracle: y with 4y ≡ 1 mod 3^4 via extended gcd.
        let m = BigInt::from(81);
        let g = BigInt::from(4).extended_gcd(&m);
        assert!(g.gcd.is_one());
        let oracle = g.x.mod_floor(&m);
        assert_eq!(oracle, BigInt::from(61));

        let t = c1();
        let four = RingElement::from_i64(&t, 4, 4);
        let inv = four.unit_inverse().unwrap();
        assert_eq!(inv.coords()[0][0], BigInt::from(61));
        assert_eq!(inv.precision(), 4);
        let prod = &four * &inv;
        assert!(prod.congruent_mod(&RingElement::one(&t, 4), 4).unwrap());
    }

    #[test]
    fn ramified_tower_structure() {
        let t = c3();
        assert_eq!(t.e_total(), 4);
        assert_eq!(t.e_kl(), 2);
        assert_eq!(t.f_kl(), 1);
        assert_eq!(t.q_l(), 3);
        assert_eq!(t.q_k(), 3);

        let s = RingElement::uniformizer(&t, Level::L, 16);
        let tt = RingElement::uniformizer(&t, Level::K, 16);
        // t * t = s
        assert_eq!(&tt * &tt, s);
        // t^4 = 3
        let t4 = tt.pow(4);
        assert_eq!(t4, RingElement::from_i64(&t, 3, 16));
        // valuations
        assert_eq!(s.valuation(), Valuation::Finite(2));
        assert_eq!(tt.valuation(), Valuation::Finite(1));
        assert_eq!(RingElement::from_i64(&t, 3, 16).valuation(), Valuation::Finite(4));
    }

    #[test]
    fn exact_division_by_uniformizer() {
        let t = c3();
        let s = RingElement::uniformizer(&t, Level::L, 16);
        let tt = RingElement::uniformizer(&t, Level::K, 16);
        // s / t = t, with precision dropped by 1.
        let q = s.exact_div_pi(1).unwrap();
        assert_eq!(q, tt.reduced(15));
        assert_eq!(q.precision(), 15);
        // round trip: (t^3 * x) / t^3 = x at reduced precision
        let x = &RingElement::from_i64(&t, 7, 16) + &tt;
        let shifted = &x * &tt.pow(3);
        let back = shifted.exact_div_pi(3).unwrap();
        assert_eq!(back, x.reduced(back.precision()));
        // non-divisible input is rejected
        let err = RingElement::one(&t, 16).exact_div_pi(1).unwrap_err();
        assert!(matches!(err, Error::DivisibilityFailure { needed: 1, found: 0 }));
    }

    #[test]
    fn exact_div_general() {
        let t = c3();
        let s = RingElement::uniformizer(&t, Level::L, 16);
        let x = RingElement::from_i64(&t, 6, 16); // 6 = 2 * 3, v = 4
        let y = x.exact_div(&s).unwrap(); // 6/s = 2s
        assert_eq!(y, s.mul_i64(2).reduced(y.precision()));
    }

    #[test]
    fn unit_inverse_in_ramified_tower() {
        let t = c3();
        let tt = RingElement::uniformizer(&t, Level::K, 20);
        let u = &RingElement::from_i64(&t, 2, 20) + &tt; // 2 + t, a unit
        let inv = u.unit_inverse().unwrap();
        let prod = &u * &inv;
        assert!(prod.congruent_mod(&RingElement::one(&t, 20), 20).unwrap());
    }

    #[test]
    fn canonical_form_is_unique_per_precision() {
        let t = c3();
        let tt = RingElement::uniformizer(&t, Level::K, 6);
        let x = &RingElement::from_i64(&t, 2, 6) + &tt;
        // Adding π^6 * (unit) must not change the canonical form at prec 6.
        let noise = tt.pow(6).mul_i64(5).reduced(6);
        let y = &x + &noise.with_internal_prec(6);
        assert_eq!(x.coords(), y.coords());
    }

    #[test]
    fn mixed_towers_rejected() {
        let t1 = c1();
        let t2 = c3();
        let x = RingElement::from_i64(&t1, 1, 16);
        let y = RingElement::from_i64(&t2, 1, 16);
        assert!(matches!(x.try_add(&y), Err(Error::MixedTowers)));
    }

    #[test]
    fn residue_representatives_properties() {
        for t in [c1(), c3()] {
            for level in [Level::L, Level::K] {
                let reps = t.residue_representatives(level, 16);
                assert_eq!(reps.len() as u64, t.q(level));
                assert!(reps[0].is_zero());
                assert_eq!(reps[1], RingElement::one(&t, 16));
                for i in 0..reps.len() {
                    for j in 0..i {
                        let d = &reps[i] - &reps[j];
                        assert_eq!(
                            d.valuation().floor(),
                            0,
                            "representatives {i} and {j} collide mod pi"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn unramified_tower() {
        // L = Q_9 (unramified quadratic), K trivial over it.
        let t = TowerSpec::build(3, &[1, 0, 1], &[], 12, "q9").unwrap();
        assert_eq!(t.kind_l(), StepKind::Unramified);
        assert_eq!(t.q_l(), 9);
        assert_eq!(t.e_total(), 1);
        let a = RingElement::gen_a(&t, 12);
        // a^2 = -1
        assert_eq!(&a * &a, RingElement::from_i64(&t, -1, 12));
        // 1 + a is a unit; (1+a)(1-a) = 2
        let u = &RingElement::one(&t, 12) + &a;
        let inv = u.unit_inverse().unwrap();
        assert!((&u * &inv).congruent_mod(&RingElement::one(&t, 12), 12).unwrap());
        assert_eq!(t.residue_representatives(Level::L, 12).len(), 9);
    }

    #[test]
    fn mixed_unramified_then_eisenstein() {
        // L = Q_9, K = L(sqrt3): Eisenstein over O_L.
        let t = TowerSpec::build(3, &[1, 0, 1], &[vec![-3, 0], vec![0, 0], vec![1, 0]], 12, "q9r")
            .unwrap();
        assert_eq!(t.kind_k(), StepKind::Eisenstein);
        assert_eq!(t.e_total(), 2);
        assert_eq!(t.q_k(), 9);
        let b = RingElement::gen_b(&t, 12);
        assert_eq!(&b * &b, RingElement::from_i64(&t, 3, 12));
        assert_eq!(b.valuation(), Valuation::Finite(1));
        assert_eq!(RingElement::from_i64(&t, 3, 12).valuation(), Valuation::Finite(2));
        let a = RingElement::gen_a(&t, 12);
        assert_eq!(a.valuation(), Valuation::Finite(0));
    }

    #[test]
    fn invalid_polynomials_rejected() {
        // x^2 - 1 is reducible mod 3 and not Eisenstein.
        assert!(matches!(
            TowerSpec::build(3, &[-1, 0, 1], &[], 16, "bad"),
            Err(Error::BadDefiningPolynomial { level: "L", .. })
        ));
        // constant term 9: not Eisenstein (v=2), x^2 reducible mod 3.
        assert!(TowerSpec::build(3, &[-9, 0, 1], &[], 16, "bad").is_err());
        assert!(matches!(TowerSpec::build(4, &[], &[], 16, "bad"), Err(Error::NotPrime(4))));
    }

    #[test]
    fn teichmuller_roots_of_unity() {
        let t = c1();
        let two = RingElement::from_i64(&t, 2, 16);
        let w = two.teichmuller().unwrap();
        // q - 1 = 2: the Teichmüller lift of 2 is -1 exactly.
        assert_eq!(w, RingElement::from_i64(&t, -1, 16));

        let t9 = TowerSpec::build(3, &[1, 0, 1], &[], 16, "q9").unwrap();
        let a = RingElement::gen_a(&t9, 16);
        let u = &RingElement::one(&t9, 16) + &a;
        let w = u.teichmuller().unwrap();
        assert!(w.pow(8).congruent_mod(&RingElement::one(&t9, 16), 16).unwrap());
        assert_eq!((&w - &u).valuation().floor() >= 1, true);
    }

    #[test]
    fn precision_calculus() {
        let t = c1();
        let x = RingElement::from_i64(&t, 3, 16); // v = 1
        let y = RingElement::from_i64(&t, 1, 8);
        // prec(xy) = min(16 + 0, 8 + 1) = 9
        assert_eq!((&x * &y).precision(), 9);
        // multiplication by zero at precision keeps the zero's window
        let z = RingElement::zero(&t, 8);
        assert_eq!((&x * &z).precision(), 9);
        assert_eq!((&x + &y).precision(), 8);
    }
}
