//! The trace operator attached to the standard level-K datum `f = πx + x^q`.
//!
//! The nonzero roots of `f` live in the algebra `A = O_K[u]/(u^{q-1} + π)`:
//! they are `ω·u` for the `q-1` Teichmüller units `ω`. For each root `z` the
//! unique series `G_z` with `f(G_z(x)) = f(x)` and `G_z(0) = z` parametrizes
//! the fiber of `f` through `z`, so
//!
//! ```text
//! (ℒg)(f(x)) = g(x) + Σ_z g(G_z(x))
//! ```
//!
//! defines the trace `ℒg`. The right side is computed in `A[[x]]`; its
//! `u`-components must vanish identically (the sum is invariant under
//! `u ↦ ωu`), which is checked and certified, and the `u^0` part is then
//! desubstituted through `σ = f(x)`.
//!
//! Because `ℒ` is `O_K`-linear, the operator is materialized once as the
//! matrix of columns `ℒ(x^j)`; applications, preimages and kernel vectors are
//! all linear algebra over the local ring afterwards.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_bigint::BigInt;
use num_integer::binomial;

use crate::error::{Error, Result};
use crate::formal_group::FormalGroup;
use crate::series::{BiSeries, Series};
use crate::tower::{Level, RingElement, TowerSpec, Valuation};

fn ceil_div_i64(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

// ---------------------------------------------------------------------------
// The torsion algebra A = O_K[u]/(u^{q-1} + π)
// ---------------------------------------------------------------------------

/// An element of `A`, as components `comps[j]` of `u^j`, `0 <= j < q-1`.
///
/// Valuations are `u`-normalized: `V(u) = 1`, `V(π_K) = q - 1`.
#[derive(Clone)]
pub struct AlgElement {
    comps: Vec<RingElement>,
}

impl std::fmt::Debug for AlgElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let terms: Vec<String> = self
            .comps
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(j, c)| format!("({c})u^{j}"))
            .collect();
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

impl AlgElement {
    pub fn zero(tower: &Arc<TowerSpec>, deg: usize, prec: u32) -> AlgElement {
        AlgElement { comps: vec![RingElement::zero(tower, prec); deg] }
    }

    pub fn from_ring(x: RingElement, deg: usize) -> AlgElement {
        // an embedded O_K value has exactly vanishing u-components, whatever
        // the precision of the value itself
        let mut e = AlgElement::zero(x.tower(), deg, u32::MAX >> 1);
        e.comps[0] = x;
        e
    }

    /// The class of `u` (for `deg == 1` the relation collapses to `u = -π`).
    pub fn u_gen(tower: &Arc<TowerSpec>, deg: usize, prec: u32) -> AlgElement {
        let mut e = AlgElement::zero(tower, deg, prec);
        if deg == 1 {
            e.comps[0] = -&RingElement::uniformizer(tower, Level::K, prec);
        } else {
            e.comps[1] = RingElement::one(tower, prec);
        }
        e
    }

    pub fn deg(&self) -> usize {
        self.comps.len()
    }

    pub fn tower(&self) -> &Arc<TowerSpec> {
        self.comps[0].tower()
    }

    pub fn comp(&self, j: usize) -> &RingElement {
        &self.comps[j]
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|c| c.is_zero())
    }

    pub fn is_exact_zero(&self) -> bool {
        self.comps.iter().all(|c| c.is_exact_zero())
    }

    /// True when the element lies in the embedded `O_K` (all `u`-components
    /// beyond `u^0` vanish at their precision).
    pub fn is_descended(&self) -> bool {
        self.comps[1..].iter().all(|c| c.is_zero())
    }

    pub fn add(&self, o: &AlgElement) -> AlgElement {
        AlgElement {
            comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &AlgElement) -> AlgElement {
        AlgElement {
            comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn neg(&self) -> AlgElement {
        AlgElement { comps: self.comps.iter().map(|a| -a).collect() }
    }

    pub fn scale(&self, c: &RingElement) -> AlgElement {
        AlgElement { comps: self.comps.iter().map(|a| a * c).collect() }
    }

    pub fn mul_int(&self, n: &BigInt) -> AlgElement {
        AlgElement { comps: self.comps.iter().map(|a| a.mul_int(n)).collect() }
    }

    pub fn mul(&self, o: &AlgElement) -> AlgElement {
        let d = self.deg();
        let tower = self.tower();
        let mut raw: Vec<RingElement> = vec![RingElement::zero(tower, u32::MAX >> 1); 2 * d - 1];
        for (i, a) in self.comps.iter().enumerate() {
            if a.is_exact_zero() {
                continue;
            }
            for (j, b) in o.comps.iter().enumerate() {
                if b.is_exact_zero() {
                    continue;
                }
                raw[i + j] = &raw[i + j] + &(a * b);
            }
        }
        // u^{q-1} = -π
        let mut comps: Vec<RingElement> = raw[..d].to_vec();
        for (k, c) in raw[d..].iter().enumerate() {
            if c.is_exact_zero() {
                continue;
            }
            let pi =
                RingElement::uniformizer(tower, Level::K, c.precision().saturating_add(2));
            comps[k] = &comps[k] - &(c * &pi);
        }
        AlgElement { comps }
    }

    pub fn pow(&self, e: u32) -> AlgElement {
        let mut acc = AlgElement::from_ring(
            RingElement::one(self.tower(), self.comps[0].precision().saturating_add(4)),
            self.deg(),
        );
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    /// `u`-normalized valuation floor: `min_j ((q-1) v(c_j) + j)`.
    pub fn u_val_floor(&self) -> u32 {
        let d = self.deg() as u32;
        self.comps
            .iter()
            .enumerate()
            .map(|(j, c)| d * c.val_floor() + j as u32)
            .min()
            .unwrap()
    }

    /// `u`-normalized precision: the element is known modulo `u^this`.
    pub fn u_precision(&self) -> u32 {
        let d = self.deg() as u32;
        self.comps
            .iter()
            .enumerate()
            .map(|(j, c)| d * c.precision() + j as u32)
            .min()
            .unwrap()
    }

    /// Reduce so the element is only claimed modulo `u^c`.
    pub fn cap_u_precision(&self, c: u32) -> AlgElement {
        let d = self.deg() as i64;
        AlgElement {
            comps: self
                .comps
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    let t = ceil_div_i64(c as i64 - j as i64, d).max(0) as u32;
                    x.reduced(t)
                })
                .collect(),
        }
    }

    /// Component-wise exact division by `π_K^m`.
    pub fn exact_div_pi(&self, m: u32) -> Result<AlgElement> {
        let comps = self
            .comps
            .iter()
            .map(|c| c.exact_div_pi(m))
            .collect::<Result<_>>()?;
        Ok(AlgElement { comps })
    }
}

/// Power series with coefficients in the torsion algebra.
#[derive(Clone)]
pub struct AlgSeries {
    pub coeffs: Vec<AlgElement>,
}

impl AlgSeries {
    pub fn zero(tower: &Arc<TowerSpec>, deg: usize, cap: usize, prec: u32) -> AlgSeries {
        AlgSeries { coeffs: vec![AlgElement::zero(tower, deg, prec); cap + 1] }
    }

    pub fn from_series(s: &Series, deg: usize) -> AlgSeries {
        AlgSeries {
            coeffs: s.coeffs().iter().map(|c| AlgElement::from_ring(c.clone(), deg)).collect(),
        }
    }

    pub fn cap(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn add(&self, o: &AlgSeries) -> AlgSeries {
        let cap = self.cap().min(o.cap());
        AlgSeries {
            coeffs: (0..=cap).map(|n| self.coeffs[n].add(&o.coeffs[n])).collect(),
        }
    }

    pub fn sub(&self, o: &AlgSeries) -> AlgSeries {
        let cap = self.cap().min(o.cap());
        AlgSeries {
            coeffs: (0..=cap).map(|n| self.coeffs[n].sub(&o.coeffs[n])).collect(),
        }
    }

    pub fn scale_alg(&self, c: &AlgElement) -> AlgSeries {
        AlgSeries { coeffs: self.coeffs.iter().map(|x| x.mul(c)).collect() }
    }

    pub fn scale(&self, c: &RingElement) -> AlgSeries {
        AlgSeries { coeffs: self.coeffs.iter().map(|x| x.scale(c)).collect() }
    }

    pub fn mul(&self, o: &AlgSeries) -> AlgSeries {
        let cap = self.cap().min(o.cap());
        let tower = self.coeffs[0].tower().clone();
        let deg = self.coeffs[0].deg();
        let mut out = AlgSeries::zero(&tower, deg, cap, u32::MAX >> 1);
        for i in 0..=cap {
            if self.coeffs[i].is_exact_zero() {
                continue;
            }
            for j in 0..=cap - i {
                if o.coeffs[j].is_exact_zero() {
                    continue;
                }
                out.coeffs[i + j] = out.coeffs[i + j].add(&self.coeffs[i].mul(&o.coeffs[j]));
            }
        }
        out
    }

    /// Evaluate a polynomial with `O_K` coefficients at this series (Horner).
    pub fn substitute_into_poly(&self, f: &Series) -> AlgSeries {
        let deg = self.coeffs[0].deg();
        let cap = self.cap();
        let tower = self.coeffs[0].tower().clone();
        // trailing zeros may be dropped only when they are at least as
        // precise as every live coefficient: less precise ones still bound
        // the result (they stand for unknown multiples of their modulus)
        let live = (0..=f.cap())
            .filter(|&n| !f.coeff(n).is_zero())
            .map(|n| f.coeff(n).precision())
            .max();
        let top = (0..=f.cap())
            .rev()
            .find(|&n| {
                let c = f.coeff(n);
                !c.is_zero() || c.precision() < live.unwrap_or(0)
            })
            .unwrap_or(0);
        let mut acc = AlgSeries::zero(&tower, deg, cap, u32::MAX >> 1);
        acc.coeffs[0] = AlgElement::from_ring(f.coeff(top).clone(), deg);
        for n in (0..top).rev() {
            acc = acc.mul(self);
            acc.coeffs[0] = acc.coeffs[0].add(&AlgElement::from_ring(f.coeff(n).clone(), deg));
        }
        acc
    }

    /// Evaluate at an algebra element (Horner over the stored coefficients).
    pub fn eval(&self, t: &AlgElement) -> AlgElement {
        let mut acc = self.coeffs[self.cap()].clone();
        for n in (0..self.cap()).rev() {
            acc = acc.mul(t).add(&self.coeffs[n]);
        }
        acc
    }

    /// Project onto the embedded `O_K[[x]]`; errors with the first
    /// coefficient whose `u`-components survive.
    pub fn descend(&self) -> Result<Series> {
        for (n, c) in self.coeffs.iter().enumerate() {
            if !c.is_descended() {
                let bad = c.comps[1..].iter().position(|x| !x.is_zero()).unwrap() + 1;
                return Err(Error::DescentResidual { x_degree: n, component: bad });
            }
        }
        let tower = self.coeffs[0].tower().clone();
        Ok(Series::from_coeffs(
            &tower,
            self.coeffs.iter().map(|c| c.comps[0].clone()).collect(),
        ))
    }

    /// Substitute two algebra series into a bivariate law over `O_K`.
    ///
    /// Uses a power table in the first variable and Horner in the second,
    /// so the cost is linear in the law's cap rather than quadratic. With
    /// `skip_u = Some(t)`, all arithmetic runs modulo `u^t` (sound: every
    /// value here is integral, so capping inputs only discards digits the
    /// final truncation would drop anyway) and the output is capped there.
    /// With `law_truncated`, the law's missing tail caps output coefficient
    /// `m` at `(law.cap + 1 - m) * v0` in `u`-units, `v0` the smaller
    /// `u`-valuation of the two constant terms: a tail term of total degree
    /// `n` reaching `x`-degree `m` must pick at least `n - m` constant
    /// factors.
    pub fn bi_substitute(
        law: &BiSeries,
        a: &AlgSeries,
        b: &AlgSeries,
        skip_u: Option<u32>,
        law_truncated: bool,
    ) -> AlgSeries {
        let cap = a.cap().min(b.cap());
        let deg = a.coeffs[0].deg();
        let tower = a.coeffs[0].tower().clone();
        let trim = |s: &AlgSeries| -> AlgSeries {
            let mut out = s.clone();
            out.coeffs.truncate(cap + 1);
            if let Some(t) = skip_u {
                for c in out.coeffs.iter_mut() {
                    *c = c.cap_u_precision(t);
                }
            }
            out
        };
        let a = trim(a);
        let b = trim(b);
        let a0_zero = a.coeffs[0].is_zero();
        let b0_zero = b.coeffs[0].is_zero();
        let v0 = match (a0_zero, b0_zero) {
            (true, true) => u32::MAX,
            (true, false) => b.coeffs[0].u_val_floor(),
            (false, true) => a.coeffs[0].u_val_floor(),
            (false, false) => a.coeffs[0].u_val_floor().min(b.coeffs[0].u_val_floor()),
        };
        // the identity of the power table must carry enough precision not
        // to bind, but a nonzero element at sentinel precision would
        // materialize p^huge; size it from the operands instead
        let p_one = a
            .coeffs
            .iter()
            .chain(b.coeffs.iter())
            .flat_map(|c| (0..deg).map(|j| c.comp(j)))
            .filter(|x| !x.is_zero())
            .map(|x| x.precision())
            .max()
            .unwrap_or(64)
            .saturating_add(8);
        let one = AlgSeries {
            coeffs: {
                let mut v = vec![AlgElement::zero(&tower, deg, u32::MAX >> 1); cap + 1];
                v[0] = AlgElement::from_ring(RingElement::one(&tower, p_one), deg);
                v
            },
        };
        // powers of `a` that can still reach a visible degree
        let a_top = if a0_zero { law.cap().min(cap) } else { law.cap() };
        let mut a_pows: Vec<AlgSeries> = vec![one];
        for k in 1..=a_top {
            let next = a_pows[k - 1].mul(&a);
            a_pows.push(next);
        }
        let b_top = if b0_zero { law.cap().min(cap) } else { law.cap() };
        let mut acc = AlgSeries::zero(&tower, deg, cap, u32::MAX >> 1);
        let mut started = false;
        for i in (0..=b_top).rev() {
            if started {
                acc = acc.mul(&b);
                if let Some(t) = skip_u {
                    for c in acc.coeffs.iter_mut() {
                        *c = c.cap_u_precision(t);
                    }
                }
            }
            let mut row: Option<AlgSeries> = None;
            for n in i..=law.cap() {
                let c = law.coeff(n, i);
                if c.is_zero() {
                    continue;
                }
                let ax = n - i;
                if ax >= a_pows.len() {
                    continue;
                }
                let term = a_pows[ax].scale(c);
                row = Some(match row {
                    Some(r) => r.add(&term),
                    None => term,
                });
            }
            if let Some(r) = row {
                acc = acc.add(&r);
                started = true;
            }
        }
        for m in 0..=cap {
            let mut bound = u32::MAX;
            if law_truncated && v0 < u32::MAX {
                let d1 = law.cap() as u32 + 1;
                bound = bound.min(d1.saturating_sub(m as u32).saturating_mul(v0));
            }
            if let Some(t) = skip_u {
                bound = bound.min(t);
            }
            if bound < u32::MAX {
                acc.coeffs[m] = acc.coeffs[m].cap_u_precision(bound);
            }
        }
        acc
    }
}

/// Polynomial evaluation of an `O_K` series at an algebra point of positive
/// `u`-valuation. When the series is a truncation, the result is only known
/// modulo `u^{(cap+1) V(t)}`.
pub fn eval_series_at(g: &Series, t: &AlgElement, truncated: bool) -> AlgElement {
    let deg = t.deg();
    let mut acc = AlgElement::from_ring(g.coeff(g.cap()).clone(), deg);
    for n in (0..g.cap()).rev() {
        acc = acc.mul(t).add(&AlgElement::from_ring(g.coeff(n).clone(), deg));
    }
    if truncated {
        let bound = (g.cap() as u32 + 1).saturating_mul(t.u_val_floor());
        acc.cap_u_precision(bound)
    } else {
        acc
    }
}

// ---------------------------------------------------------------------------
// Roots and conjugate series
// ---------------------------------------------------------------------------

pub struct TorsionAlgebra {
    tower: Arc<TowerSpec>,
    q: u64,
    deg: usize,
    /// The nonzero roots `ω·u`, in the residue-representative order.
    roots: Vec<AlgElement>,
    /// Conjugate series keyed by (root index, cap, precision); they are
    /// requested repeatedly by root sums at matching shapes.
    conj_cache: Mutex<HashMap<(usize, usize, u32), Arc<AlgSeries>>>,
}

impl TorsionAlgebra {
    pub fn new(group: &FormalGroup) -> Result<TorsionAlgebra> {
        require_standard(group)?;
        let tower = group.tower().clone();
        let q = group.q();
        let deg = (q - 1) as usize;
        let prec = group.work_prec();
        let u = AlgElement::u_gen(&tower, deg, prec);
        let mut roots = vec![];
        for rep in tower.residue_representatives(Level::K, prec) {
            if rep.is_zero() {
                continue;
            }
            let omega = rep.teichmuller()?;
            let z = u.scale(&omega);
            // f(z) = πz + z^q must vanish identically.
            let fz = z
                .scale(&RingElement::uniformizer(&tower, Level::K, prec))
                .add(&z.pow(q as u32));
            if !fz.is_zero() {
                return Err(Error::Internal("torsion point fails its equation".into()));
            }
            roots.push(z);
        }
        Ok(TorsionAlgebra { tower, q, deg, roots, conj_cache: Mutex::new(HashMap::new()) })
    }

    pub fn tower(&self) -> &Arc<TowerSpec> {
        &self.tower
    }
    pub fn q(&self) -> u64 {
        self.q
    }
    pub fn deg(&self) -> usize {
        self.deg
    }
    pub fn roots(&self) -> &[AlgElement] {
        &self.roots
    }

    /// All `q` roots of `f`, the zero one first.
    pub fn roots_with_zero(&self, prec: u32) -> Vec<AlgElement> {
        let mut out = vec![AlgElement::zero(&self.tower, self.deg, prec)];
        out.extend(self.roots.iter().cloned());
        out
    }

    /// The distinguished root `u` itself.
    pub fn u0(&self, prec: u32) -> AlgElement {
        AlgElement::u_gen(&self.tower, self.deg, prec)
    }

    /// Cached `conjugate_series(roots[idx], cap, prec)`.
    pub fn conjugate_series_cached(
        &self,
        idx: usize,
        cap: usize,
        prec: u32,
    ) -> Result<Arc<AlgSeries>> {
        let key = (idx, cap, prec);
        if let Some(hit) = self.conj_cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let g = Arc::new(self.conjugate_series(&self.roots[idx], cap, prec)?);
        self.conj_cache.lock().unwrap().insert(key, g.clone());
        Ok(g)
    }

    /// The series `G_z` with `f(G_z(x)) = f(x)`, `G_z(0) = z`: writing
    /// `G_z = z + H`, each coefficient solves
    /// `g_m = (f_m - Σ_{k>=2} C(q,k) z^{q-k} (H^k)_m) / (π(1-q))`.
    pub fn conjugate_series(&self, z: &AlgElement, cap: usize, prec: u32) -> Result<AlgSeries> {
        let tower = &self.tower;
        let q = self.q as usize;
        let deg = self.deg;
        let pi = RingElement::uniformizer(tower, Level::K, prec);
        let inv_1_minus_q =
            RingElement::from_i64(tower, 1 - self.q as i64, prec).unit_inverse()?;
        // c_k = C(q, k) z^{q-k}, k = 2..=q
        let mut z_pows = vec![AlgElement::from_ring(RingElement::one(tower, prec), deg)];
        for k in 1..=q {
            let next = z_pows[k - 1].mul(z);
            z_pows.push(next);
        }
        let c_k: Vec<AlgElement> = (2..=q)
            .map(|k| {
                z_pows[q - k].mul_int(&binomial(BigInt::from(q), BigInt::from(k)))
            })
            .collect();
        let mut g = AlgSeries::zero(tower, deg, cap, prec);
        g.coeffs[0] = z.clone();
        // online powers of H = G - z (zero constant term)
        let mut h_pows: Vec<AlgSeries> = (0..=q)
            .map(|k| {
                let mut s = AlgSeries::zero(tower, deg, cap, prec);
                if k == 0 {
                    s.coeffs[0] =
                        AlgElement::from_ring(RingElement::one(tower, prec.saturating_add(4)), deg);
                }
                s
            })
            .collect();
        for m in 1..=cap {
            for k in 2..=q.min(m) {
                let mut acc = AlgElement::zero(tower, deg, prec.saturating_add(4));
                for j in 1..m {
                    let lhs = &h_pows[k - 1].coeffs[m - j];
                    let rhs = &h_pows[1].coeffs[j];
                    if lhs.is_zero() || rhs.is_zero() {
                        continue;
                    }
                    acc = acc.add(&lhs.mul(rhs));
                }
                h_pows[k].coeffs[m] = acc;
            }
            let mut num = AlgElement::zero(tower, deg, prec.saturating_add(4));
            if m == 1 {
                num = num.add(&AlgElement::from_ring(pi.clone(), deg));
            }
            if m == q {
                num = num.add(&AlgElement::from_ring(RingElement::one(tower, prec), deg));
            }
            for k in 2..=q.min(m) {
                if h_pows[k].coeffs[m].is_zero() {
                    continue;
                }
                num = num.sub(&h_pows[k].coeffs[m].mul(&c_k[k - 2]));
            }
            let g_m = num
                .exact_div_pi(1)
                .map_err(|_| Error::DefectDivision { degree: m })?
                .scale(&inv_1_minus_q);
            g.coeffs[m] = g_m.clone();
            h_pows[1].coeffs[m] = g_m;
        }
        Ok(g)
    }
}

fn require_standard(group: &FormalGroup) -> Result<()> {
    if group.level() != Level::K {
        return Err(Error::Precondition("trace is defined at the top level".into()));
    }
    let q = group.q() as usize;
    let tower = group.tower();
    let prec = group.work_prec();
    let pi = RingElement::uniformizer(tower, Level::K, prec);
    let f = group.f();
    let ok = (0..=f.cap()).all(|n| match n {
        1 => *f.coeff(1) == pi,
        _ if n == q => *f.coeff(n) == RingElement::one(tower, prec),
        _ => f.coeff(n).is_zero(),
    });
    if !ok {
        return Err(Error::Precondition(
            "trace requires the standard datum πx + x^q".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// The trace operator as a matrix
// ---------------------------------------------------------------------------

pub struct TraceOperator {
    tower: Arc<TowerSpec>,
    algebra: TorsionAlgebra,
    q: u64,
    /// Rows kept (output degrees `0..=d_rows`).
    d_rows: usize,
    /// Columns (input monomials `x^j`, `j = 0..=d_cols`).
    d_cols: usize,
    /// `columns[j]` = coefficients of `ℒ(x^j)` for degrees `0..=d_rows`.
    columns: Vec<Series>,
    /// `columns_composed[j]` = the descended symmetric sum itself, i.e.
    /// `(ℒ x^j)(σ(x))`. Solving in this composed basis avoids the π-precision
    /// that desubstitution burns at high degrees.
    columns_composed: Vec<Series>,
    /// Smallest valuation certified for every residual `u`-component during
    /// descent (a quality certificate for the construction).
    descent_floor_u: u32,
    sigma: Series,
}

impl TraceOperator {
    /// Build the matrix of `ℒ` from a standard level-K group. `d_cols` may
    /// exceed `d_rows` to capture how high-degree monomials feed low output
    /// degrees.
    pub fn build(group: &FormalGroup, d_rows: usize, d_cols: usize) -> Result<TraceOperator> {
        let q = group.q();
        if (q as usize) > d_rows {
            return Err(Error::BudgetExceeded(format!(
                "row cap {d_rows} below the residue size {q}"
            )));
        }
        if d_cols < d_rows {
            return Err(Error::BudgetExceeded(
                "column cap below row cap".into(),
            ));
        }
        let algebra = TorsionAlgebra::new(group)?;
        let tower = group.tower().clone();
        let prec = group.work_prec();
        let deg = algebra.deg();
        // Accumulate Σ_z G_z^j coefficient-wise; adding x^j afterwards.
        let mut sums: Vec<AlgSeries> = (0..=d_cols)
            .map(|_| AlgSeries::zero(&tower, deg, d_rows, prec.saturating_add(8)))
            .collect();
        for idx in 0..algebra.roots().len() {
            let gz = algebra.conjugate_series_cached(idx, d_rows, prec)?;
            let mut pow = AlgSeries::zero(&tower, deg, d_rows, prec.saturating_add(8));
            pow.coeffs[0] =
                AlgElement::from_ring(RingElement::one(&tower, prec.saturating_add(8)), deg);
            sums[0] = sums[0].add(&pow);
            for j in 1..=d_cols {
                pow = pow.mul(&gz);
                sums[j] = sums[j].add(&pow);
            }
        }
        // σ = f as an exact polynomial at the row cap, with powers shared by
        // every column's desubstitution.
        let sigma = group.f().extended_as_polynomial(d_rows, prec);
        let mut sigma_pows: Vec<Series> = vec![Series::constant(
            RingElement::one(&tower, prec.saturating_add(4)),
            d_rows,
        )];
        for k in 1..=d_rows {
            let next = sigma_pows[k - 1].mul(&sigma);
            sigma_pows.push(next);
        }
        let s1 = sigma.coeff(1).clone();
        let mut s1_pows = vec![RingElement::one(&tower, prec.saturating_add(4))];
        for k in 1..=d_rows {
            let next = &s1_pows[k - 1] * &s1;
            s1_pows.push(next);
        }
        let mut columns = Vec::with_capacity(d_cols + 1);
        let mut columns_composed = Vec::with_capacity(d_cols + 1);
        let mut descent_floor_u = u32::MAX;
        for (j, sum) in sums.iter().enumerate() {
            let mut total = sum.clone();
            if j <= d_rows {
                // the z = 0 branch contributes x^j itself
                total.coeffs[j] = total.coeffs[j].add(&AlgElement::from_ring(
                    RingElement::one(&tower, prec),
                    deg,
                ));
            }
            for c in &total.coeffs {
                for comp in 1..deg {
                    let x = c.comp(comp);
                    let fl = (deg as u32) * x.precision() + comp as u32;
                    descent_floor_u = descent_floor_u.min(fl);
                }
            }
            let s = total.descend()?;
            columns_composed.push(s.clone());
            // triangular desubstitution through σ with shared power tables
            let mut out = Series::zero(&tower, d_rows, s.coeff(0).precision());
            out.set_coeff(0, s.coeff(0).clone());
            let mut residual = s;
            for n in 1..=d_rows {
                let g_n = residual
                    .coeff(n)
                    .exact_div(&s1_pows[n])
                    .map_err(|e| match e {
                        Error::DivisibilityFailure { .. } => Error::NotInImage { degree: n },
                        other => other,
                    })?;
                for m in n..=d_rows {
                    let t = sigma_pows[n].coeff(m) * &g_n;
                    residual.set_coeff(m, &residual.coeff(m).clone() - &t);
                }
                out.set_coeff(n, g_n);
            }
            columns.push(out);
        }
        Ok(TraceOperator {
            tower,
            algebra,
            q,
            d_rows,
            d_cols,
            columns,
            columns_composed,
            descent_floor_u,
            sigma,
        })
    }

    pub fn tower(&self) -> &Arc<TowerSpec> {
        &self.tower
    }
    pub fn algebra(&self) -> &TorsionAlgebra {
        &self.algebra
    }
    pub fn d_rows(&self) -> usize {
        self.d_rows
    }
    pub fn d_cols(&self) -> usize {
        self.d_cols
    }
    pub fn q(&self) -> u64 {
        self.q
    }
    pub fn sigma(&self) -> &Series {
        &self.sigma
    }
    pub fn column(&self, j: usize) -> &Series {
        &self.columns[j]
    }
    pub fn column_composed(&self, j: usize) -> &Series {
        &self.columns_composed[j]
    }
    /// Certified `u`-valuation below which no descent residual can hide.
    pub fn descent_floor_u(&self) -> u32 {
        self.descent_floor_u
    }

    /// `ℒ(g)` for polynomial data `g` (exact in `g`'s stored coefficients).
    pub fn apply(&self, g: &Series) -> Result<Series> {
        if g.cap() > self.d_cols {
            return Err(Error::BudgetExceeded(format!(
                "input degree {} exceeds the materialized columns {}",
                g.cap(),
                self.d_cols
            )));
        }
        let mut acc = Series::zero(&self.tower, self.d_rows, u32::MAX >> 1);
        for j in 0..=g.cap() {
            let c = g.coeff(j);
            if c.is_zero() && c.precision() >= acc.min_precision() {
                continue;
            }
            acc = acc.add(&self.columns[j].scale(c));
        }
        Ok(acc)
    }

    /// Solve `ℒ(g) ≡ h` (rows `0..=d_rows`, unknowns `0..=d_cols`, free
    /// unknowns zeroed). The residual `h - ℒ(g)` of the returned solution is
    /// zero at the working precision of the elimination.
    pub fn preimage(&self, h: &Series) -> Result<Series> {
        self.preimage_block(h, self.d_rows, self.d_cols)
    }

    /// `preimage` restricted to rows `0..=rows` and unknowns `0..=cols`.
    ///
    /// `π_K | h` is a precondition: `ℒ` lands in `π_K O_K[[x]]`, so a unit
    /// coefficient can never be matched. Inconsistency of the truncated
    /// system is reported as a budget problem, not a mathematical one: a
    /// larger block may still exhibit a preimage.
    pub fn preimage_block(&self, h: &Series, rows: usize, cols: usize) -> Result<Series> {
        self.solve_block(&self.columns, h, rows, cols)
    }

    /// Solve `(ℒ g)(σ(x)) ≡ h` on the same block, in the composed basis.
    /// No desubstitution is involved, so none of its π-precision loss (which
    /// grows linearly with the degree) applies; the lifting stages depend on
    /// that.
    pub fn preimage_composed(&self, h: &Series, rows: usize, cols: usize) -> Result<Series> {
        self.solve_block(&self.columns_composed, h, rows, cols)
    }

    fn solve_block(
        &self,
        basis: &[Series],
        h: &Series,
        rows: usize,
        cols: usize,
    ) -> Result<Series> {
        if rows > self.d_rows || cols > self.d_cols || cols < rows {
            return Err(Error::BudgetExceeded(format!(
                "solve block {rows}×{cols} outside the materialized {}×{}",
                self.d_rows, self.d_cols
            )));
        }
        if h.cap() < rows {
            return Err(Error::BudgetExceeded(format!(
                "right-hand side stops at degree {}, need {}",
                h.cap(),
                rows
            )));
        }
        for m in 0..=rows {
            if matches!(h.coeff(m).valuation(), Valuation::Finite(0)) {
                return Err(Error::Precondition(format!(
                    "preimage target must be divisible by π (unit coefficient at degree {m})"
                )));
            }
        }
        let mut mat: Vec<Vec<RingElement>> = (0..=rows)
            .map(|m| (0..=cols).map(|j| basis[j].coeff(m).clone()).collect())
            .collect();
        let mut rhs: Vec<RingElement> = (0..=rows).map(|m| h.coeff(m).clone()).collect();
        let pivots = eliminate(&mut mat, Some(&mut rhs));
        // unpivoted rows must be compatible
        let pivot_rows: Vec<usize> = pivots.iter().map(|&(r, _)| r).collect();
        for (r, val) in rhs.iter().enumerate() {
            if pivot_rows.contains(&r) {
                continue;
            }
            if !val.is_zero() {
                return Err(Error::BudgetExceeded(format!(
                    "system inconsistent at the working truncation (row {r}); \
                     increase the degree or precision budget"
                )));
            }
        }
        // back-substitute in reverse pivot order; free unknowns stay zero.
        // Entries at earlier pivot columns were cleared from this row while
        // it was still unused, and the clearing happened at the full matrix
        // precision, far above anything the right-hand side can claim.
        let mut sol = Series::zero(&self.tower, cols, h.min_precision());
        for (k, &(r, c)) in pivots.iter().enumerate().rev() {
            let mut num = rhs[r].clone();
            for &(_, c2) in &pivots[k + 1..] {
                num = &num - &(&mat[r][c2] * sol.coeff(c2));
            }
            let g_c = match num.exact_div(&mat[r][c]) {
                Ok(g) => g,
                // a pivot too deep for the row's precision determines
                // nothing; if the equation already balances, the unknown is
                // effectively free and zero is a valid commitment
                Err(_) if num.is_zero() => {
                    sol.set_coeff(c, RingElement::zero(&self.tower, u32::MAX >> 1));
                    continue;
                }
                Err(Error::DivisibilityFailure { .. })
                | Err(Error::InsufficientPrecision { .. }) => {
                    return Err(Error::NotInImage { degree: c });
                }
                Err(other) => return Err(other),
            };
            sol.set_coeff(c, g_c);
        }
        Ok(sol)
    }

    /// Free-column count of `ℒ − α` on the square block `0..=block`; a unit
    /// `α` is expected to leave no freedom at all.
    pub fn shifted_nullspace_dim(&self, alpha: &RingElement, block: usize) -> Result<usize> {
        if block > self.d_rows.min(self.d_cols) {
            return Err(Error::BudgetExceeded(format!(
                "block {block} outside the materialized matrix"
            )));
        }
        let mut mat: Vec<Vec<RingElement>> = (0..=block)
            .map(|m| {
                (0..=block)
                    .map(|j| {
                        let c = self.columns[j].coeff(m);
                        if m == j {
                            c - alpha
                        } else {
                            c.clone()
                        }
                    })
                    .collect()
            })
            .collect();
        let pivots = eliminate(&mut mat, None);
        Ok(block + 1 - pivots.len())
    }

    /// Primitive vectors spanning the kernel of the materialized matrix
    /// (free columns of the elimination, π-scaled just enough to make the
    /// back-substitution integral). Returns at most `want` vectors together
    /// with the valuation each one achieves under `ℒ`.
    pub fn kernel_vectors(&self, want: usize) -> Result<Vec<(Series, u32)>> {
        self.kernel_block(self.d_rows, want)
    }

    /// Kernel vectors with the row window narrowed to `0..=rows` (all
    /// materialized unknowns stay in play). The reported valuation is what
    /// `ℒ` achieves on those rows.
    pub fn kernel_block(&self, rows: usize, want: usize) -> Result<Vec<(Series, u32)>> {
        if rows > self.d_rows {
            return Err(Error::BudgetExceeded(format!(
                "row window {rows} outside the materialized {}",
                self.d_rows
            )));
        }
        let cols = self.d_cols + 1;
        let mut mat: Vec<Vec<RingElement>> = (0..=rows)
            .map(|m| (0..cols).map(|j| self.columns[j].coeff(m).clone()).collect())
            .collect();
        let pivots = eliminate(&mut mat, None);
        let pivot_cols: Vec<usize> = pivots.iter().map(|&(_, c)| c).collect();
        let mut out = vec![];
        for c in 0..cols {
            if pivot_cols.contains(&c) {
                continue;
            }
            // scale π^t so every back-substitution divides exactly; later
            // pivots feed into earlier rows, so a shortfall can only be
            // discovered mid-substitution. Bump the scale and restart.
            let mut t = 0u32;
            let floor = self.work_floor();
            let v = 'scale: loop {
                let pi_t =
                    RingElement::uniformizer(&self.tower, Level::K, floor).pow(t as u64);
                let mut v = Series::zero(&self.tower, self.d_cols, floor);
                v.set_coeff(c, pi_t.clone());
                for (k, &(r, pc)) in pivots.iter().enumerate().rev() {
                    let mut num = &mat[r][c] * &pi_t;
                    for &(_, pc2) in &pivots[k + 1..] {
                        num = &num + &(&mat[r][pc2] * v.coeff(pc2));
                    }
                    let shortfall = match num.exact_div(&mat[r][pc]) {
                        Ok(coeff) => {
                            v.set_coeff(pc, -&coeff);
                            continue;
                        }
                        Err(Error::DivisibilityFailure { needed, found }) => needed - found,
                        Err(Error::InsufficientPrecision {
                            needed, available, ..
                        }) => needed - available,
                        Err(other) => return Err(other),
                    };
                    t += shortfall.max(1);
                    if t > floor {
                        return Err(Error::BudgetExceeded(format!(
                            "kernel vector for free column {c} needs a π-scale \
                             beyond the working precision {floor}"
                        )));
                    }
                    continue 'scale;
                }
                break v;
            };
            let image = self.apply(&v)?;
            let achieved = (0..=rows).map(|m| image.coeff(m).val_floor()).min().unwrap();
            out.push((v, achieved));
            if out.len() == want {
                break;
            }
        }
        // best certified vectors first
        out.sort_by(|a, b| b.1.cmp(&a.1));
        Ok(out)
    }

    fn work_floor(&self) -> u32 {
        self.columns
            .iter()
            .map(|c| c.min_precision())
            .min()
            .unwrap()
    }

    /// Fold of `g(G_z(x))` over all roots of `f` (including `z = 0`) under
    /// the given bivariate law. The result descends to `O_K[[x]]`.
    ///
    /// `g_truncated` marks `g` as the truncation of a longer series, whose
    /// unseen tail limits output coefficient `m` to `u`-precision
    /// `cap + 1 - m` (the tail terms carry at least that many factors of a
    /// root). Exact polynomial inputs should pass `false`. `skip_u` bounds
    /// the `u`-precision carried through the fold; `law_truncated` accounts
    /// for the law's own cap.
    pub fn root_sum_under_law(
        &self,
        law: &BiSeries,
        g: &Series,
        g_truncated: bool,
        skip_u: Option<u32>,
        law_truncated: bool,
    ) -> Result<Series> {
        if g.coeff(0).val_floor() < 1 {
            return Err(Error::Precondition(
                "root sums need π | g(0): the fold arguments must be topologically nilpotent"
                    .into(),
            ));
        }
        let deg = self.algebra.deg();
        // everything downstream is capped at skip_u, so the substitution
        // inputs may run on equally small digits
        let g_small = match skip_u {
            Some(t) => {
                let pi_prec = t.div_ceil(deg as u32).max(1);
                let mut s = g.clone();
                for n in 0..=s.cap() {
                    s.cap_coeff_precision(n, pi_prec);
                }
                s
            }
            None => g.clone(),
        };
        let __t0 = std::time::Instant::now();
        let mut terms: Vec<AlgSeries> = vec![AlgSeries::from_series(&g_small, deg)];
        for idx in 0..self.algebra.roots().len() {
            let gz = self.algebra.conjugate_series_cached(idx, g.cap(), self.work_prec_hint())?;
            let mut gz_small = (*gz).clone();
            if let Some(t) = skip_u {
                for c in gz_small.coeffs.iter_mut() {
                    *c = c.cap_u_precision(t);
                }
            }
            terms.push(gz_small.substitute_into_poly(&g_small));
        }
        eprintln!("    root_sum: conjugates {:?}", __t0.elapsed());
        let __t1 = std::time::Instant::now();
        let mut acc = terms[0].clone();
        for t in &terms[1..] {
            acc = AlgSeries::bi_substitute(law, &acc, t, skip_u, law_truncated);
        }
        eprintln!("    root_sum: folds {:?}", __t1.elapsed());
        // a truncation is itself a polynomial, so its fold descends on the
        // nose; only afterwards does the unseen tail blur the coefficients
        // (capping the translates instead would break the cancellation the
        // descent relies on)
        let mut out = acc.descend()?;
        if g_truncated {
            let d1 = g.cap() as u32 + 1;
            for m in 0..=out.cap() {
                let u_bound = d1 - (m as u32).min(d1);
                out.cap_coeff_precision(m, u_bound.div_ceil(deg as u32));
            }
        }
        Ok(out)
    }

    fn work_prec_hint(&self) -> u32 {
        self.work_floor().saturating_add(2 * self.d_rows as u32 + 8)
    }
}

/// Forward Gauss elimination over the local ring: repeatedly pick the entry
/// of minimal valuation among unused rows/columns (ties to the smallest row,
/// then column), eliminate its column from the remaining unused rows. Only
/// unused rows are touched: an already-pivoted row may hold entries of
/// smaller valuation than the current pivot, which exact division cannot
/// clear. Consumers back-substitute in reverse pivot order. Returns the
/// pivot list in order of selection (valuations nondecreasing).
fn eliminate(
    mat: &mut Vec<Vec<RingElement>>,
    mut rhs: Option<&mut Vec<RingElement>>,
) -> Vec<(usize, usize)> {
    let rows = mat.len();
    let cols = mat[0].len();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut pivots = vec![];
    loop {
        let mut best: Option<(u32, usize, usize)> = None;
        for r in 0..rows {
            if row_used[r] {
                continue;
            }
            for c in 0..cols {
                if col_used[c] || mat[r][c].is_zero() {
                    continue;
                }
                let v = mat[r][c].val_floor();
                if best.map_or(true, |(bv, br, bc)| {
                    v < bv || (v == bv && (r, c) < (br, bc))
                }) {
                    best = Some((v, r, c));
                }
            }
        }
        let Some((_, r, c)) = best else { break };
        row_used[r] = true;
        col_used[c] = true;
        pivots.push((r, c));
        let pivot = mat[r][c].clone();
        for r2 in 0..rows {
            if row_used[r2] || mat[r2][c].is_zero() {
                continue;
            }
            let factor = mat[r2][c]
                .exact_div(&pivot)
                .expect("pivot has minimal valuation among unused entries");
            for c2 in 0..cols {
                if mat[r][c2].is_zero() {
                    continue;
                }
                let t = &factor * &mat[r][c2];
                mat[r2][c2] = &mat[r2][c2] - &t;
            }
            if let Some(rhs) = rhs.as_deref_mut() {
                let t = &factor * &rhs[r];
                rhs[r2] = &rhs[r2] - &t;
            }
        }
    }
    pivots
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_integer::Integer;
    use num_traits::One;

    fn c1_group(cap: usize, prec: u32) -> FormalGroup {
        let t = TowerSpec::build(3, &[], &[], 16, "c1").unwrap();
        FormalGroup::standard(&t, Level::K, cap, prec).unwrap()
    }

    fn c3_group(cap: usize, prec: u32) -> FormalGroup {
        let t = TowerSpec::build(3, &[-3, 0, 1], &[vec![0, -1], vec![0, 0], vec![1, 0]], 16, "c3")
            .unwrap();
        FormalGroup::standard(&t, Level::K, cap, prec).unwrap()
    }

    #[test]
    fn algebra_relations() {
        let g = c1_group(8, 20);
        let alg = TorsionAlgebra::new(&g).unwrap();
        let t = alg.tower().clone();
        // u^2 = -3
        let u = alg.u0(20);
        let u2 = u.mul(&u);
        assert!(u2.is_descended());
        assert_eq!(*u2.comp(0), RingElement::from_i64(&t, -3, 20));
        assert_eq!(u.u_val_floor(), 1);
        assert_eq!(AlgElement::from_ring(RingElement::from_i64(&t, 3, 20), 2).u_val_floor(), 2);
        // roots sum to zero and satisfy f exactly (checked in the builder)
        assert_eq!(alg.roots().len(), 2);
        let s = alg.roots()[0].add(&alg.roots()[1]);
        assert!(s.is_zero());
    }

    #[test]
    fn conjugate_series_solves_functional_equation() {
        let g = c1_group(10, 26);
        let alg = TorsionAlgebra::new(&g).unwrap();
        for z in alg.roots() {
            let gz = alg.conjugate_series(z, 10, 26).unwrap();
            // f(G_z) = f(x) embedded into the algebra
            let f_of_g = gz.substitute_into_poly(g.f());
            let f_embedded = AlgSeries::from_series(&g.f().truncated(10), alg.deg());
            let d = f_of_g.sub(&f_embedded);
            for n in 0..=10 {
                assert!(
                    d.coeffs[n].is_zero(),
                    "degree {n}: residual {:?}",
                    d.coeffs[n]
                );
            }
            assert_eq!(gz.coeffs[0].u_val_floor(), 1);
        }
    }

    #[test]
    fn endomorphism_permutes_torsion_points() {
        // [2](u) = ω(2) u = -u: the Teichmüller character in action.
        let g = c1_group(12, 24);
        let alg = TorsionAlgebra::new(&g).unwrap();
        let two = g.endo_int(2).unwrap();
        let u = alg.u0(24);
        let img = eval_series_at(&two, &u, true);
        let expect = u.neg();
        let d = img.sub(&expect).cap_u_precision(img.u_precision());
        assert!(d.is_zero(), "[2](u) != -u: {d:?}");
    }

    #[test]
    fn trace_of_constants_multiplies_by_q() {
        let g = c1_group(8, 24);
        let op = TraceOperator::build(&g, 8, 8).unwrap();
        let t = op.tower().clone();
        let c = Series::constant(RingElement::from_i64(&t, 5, 20), 8);
        let out = op.apply(&c).unwrap();
        assert_eq!(*out.coeff(0), RingElement::from_i64(&t, 15, out.coeff(0).precision()));
        for n in 1..=8usize {
            assert!(out.coeff(n).is_zero(), "degree {n}");
        }
    }

    #[test]
    fn trace_constant_term_of_eigenvector_seed() {
        // k = -x^2/2: Σ_z k(z) = -(1/2)(u^2 + u^2) = -u^2 = 3 for q = 3.
        let g = c1_group(8, 24);
        let op = TraceOperator::build(&g, 8, 8).unwrap();
        let t = op.tower().clone();
        let m = BigInt::from(3u64.pow(20));
        let half = BigInt::from(2).extended_gcd(&m).x.mod_floor(&m);
        let k = Series::monomial(
            RingElement::from_bigint(&t, &(-half), 20),
            2,
            8,
        );
        let out = op.apply(&k).unwrap();
        let c0 = out.coeff(0);
        let d = c0 - &RingElement::from_i64(&t, 3, c0.precision());
        assert!(d.val_floor() >= c0.precision().min(16), "got {c0:?}");
        // π divides every coefficient of ℒ(k)
        for n in 0..=8usize {
            assert!(out.coeff(n).is_zero() || out.coeff(n).val_floor() >= 1);
        }
    }

    #[test]
    fn trace_matrix_is_divisible_by_pi() {
        let g = c1_group(10, 24);
        let op = TraceOperator::build(&g, 10, 10).unwrap();
        for j in 0..=10usize {
            for m in 0..=10usize {
                let e = op.column(j).coeff(m);
                assert!(
                    e.is_zero() || e.val_floor() >= 1,
                    "entry ({m},{j}) = {e:?} is a unit"
                );
            }
        }
        // and ℒ(f) = ℒ([π]) is divisible by π (sharper: = π * unit column)
        let lf = op.apply(&g.f().truncated(10)).unwrap();
        for m in 0..=10usize {
            assert!(lf.coeff(m).is_zero() || lf.coeff(m).val_floor() >= 1);
        }
    }

    #[test]
    fn preimage_round_trips() {
        let g = c1_group(10, 30);
        let op = TraceOperator::build(&g, 10, 10).unwrap();
        let t = op.tower().clone();
        let mut target = Series::zero(&t, 10, 24);
        target.set_coeff(0, RingElement::from_i64(&t, 2, 24));
        target.set_coeff(1, RingElement::from_i64(&t, 7, 24));
        target.set_coeff(3, RingElement::from_i64(&t, 1, 24));
        let h = op.apply(&target).unwrap();
        let pre = op.preimage(&h).unwrap();
        let back = op.apply(&pre).unwrap();
        let d = back.sub(&h);
        for n in 0..=10usize {
            let c = d.coeff(n);
            assert!(
                c.is_zero() || c.val_floor() >= c.precision().min(12),
                "degree {n}: {c:?}"
            );
        }
    }

    #[test]
    fn preimage_rejects_units() {
        // ℒ lands in π-divisible series, so a target with a unit coefficient
        // is rejected up front.
        let g = c1_group(8, 24);
        let op = TraceOperator::build(&g, 8, 8).unwrap();
        let t = op.tower().clone();
        let one = Series::constant(RingElement::one(&t, 20), 8);
        assert!(matches!(op.preimage(&one), Err(Error::Precondition(_))));
    }

    #[test]
    fn composed_preimage_matches_composed_application() {
        // Solving in the composed basis: (ℒ t)(σ) ≡ rhs, so re-applying ℒ to
        // the solution and composing with σ must reproduce rhs.
        // Only series of the shape h(σ(x)) are solvable, so manufacture one.
        let g = c1_group(10, 40);
        let op = TraceOperator::build(&g, 10, 10).unwrap();
        let t = op.tower().clone();
        let mut t0 = Series::zero(&t, 10, 36);
        t0.set_coeff(0, RingElement::from_i64(&t, 4, 36));
        t0.set_coeff(2, RingElement::from_i64(&t, -1, 36));
        t0.set_coeff(3, RingElement::from_i64(&t, 7, 36));
        let rhs = op.apply(&t0).unwrap().compose(op.sigma()).unwrap();
        let sol = op.preimage_composed(&rhs, 10, 10).unwrap();
        let lhs = op.apply(&sol).unwrap().compose(op.sigma()).unwrap();
        assert!(
            lhs.sub(&rhs).congruent_mod(&Series::zero(&t, 10, 36), 20, 10).unwrap().is_none()
        );
    }

    #[test]
    fn roots_with_zero_is_closed_under_translation() {
        // 𝔉_0 is a group: z ⊕ z' (= G_z evaluated at z') is again a root.
        let g = c1_group(8, 24);
        let alg = TorsionAlgebra::new(&g).unwrap();
        let all = alg.roots_with_zero(24);
        assert_eq!(all.len(), 3);
        assert!(all[0].is_zero());
        // evaluation of a cap-8 truncation at a point of u-valuation 1 is
        // only meaningful to u-valuation 9
        for z in alg.roots() {
            let gz = alg.conjugate_series(z, 8, 24).unwrap();
            for zp in alg.roots() {
                let s = gz.eval(zp);
                let hit = all.iter().any(|r| {
                    let d = s.sub(r);
                    d.is_zero() || d.u_val_floor() >= d.u_precision().min(9)
                });
                assert!(hit, "translate {s:?} is not among the listed roots");
            }
        }
    }

    #[test]
    fn kernel_vectors_annihilate() {
        // Columns beyond the row cap leak tails; a modest widening already
        // yields vectors annihilated to useful depth.
        let g = c1_group(16, 40);
        let op = TraceOperator::build(&g, 16, 48).unwrap();
        let vecs = op.kernel_vectors(3).unwrap();
        assert!(!vecs.is_empty());
        for (v, achieved) in &vecs {
            assert!(!v.is_zero());
            assert!(
                *achieved >= 6,
                "kernel vector only certified to valuation {achieved}"
            );
        }
    }

    #[test]
    fn root_sum_under_additive_law_matches_trace_composition() {
        // With the additive law the fold is a plain sum, which equals
        // (ℒg)(σ(x)) by definition.
        let g = c1_group(8, 30);
        let op = TraceOperator::build(&g, 8, 8).unwrap();
        let t = op.tower().clone();
        let mut add_law = BiSeries::zero(&t, 8, 28);
        add_law.set_coeff(1, 0, RingElement::one(&t, 28));
        add_law.set_coeff(1, 1, RingElement::one(&t, 28));
        let mut gs = Series::zero(&t, 8, 24);
        gs.set_coeff(0, RingElement::from_i64(&t, 3, 24));
        gs.set_coeff(1, RingElement::from_i64(&t, 6, 24));
        gs.set_coeff(2, RingElement::from_i64(&t, 1, 24));
        let lhs = op.root_sum_under_law(&add_law, &gs, false, None, false).unwrap();
        let rhs = op.apply(&gs).unwrap().compose(&op.sigma().truncated(8)).unwrap();
        for n in 0..=8usize {
            let d = lhs.coeff(n) - rhs.coeff(n);
            let floor = lhs.coeff(n).precision().min(rhs.coeff(n).precision()).min(8);
            assert!(
                d.val_floor() >= floor,
                "degree {n}: lhs {:?} vs rhs {:?}",
                lhs.coeff(n),
                rhs.coeff(n)
            );
        }
    }

    #[test]
    fn trace_in_ramified_tower() {
        let g = c3_group(8, 40);
        let op = TraceOperator::build(&g, 8, 8).unwrap();
        let t = op.tower().clone();
        // ℒ(1) = 3 and Σ_z k(z) = t for k = -x^2/2 (u^2 = -t here)
        let c = Series::constant(RingElement::one(&t, 30), 8);
        let out = op.apply(&c).unwrap();
        assert_eq!(
            *out.coeff(0),
            RingElement::from_i64(&t, 3, out.coeff(0).precision())
        );
        let m = BigInt::from(3u64.pow(12));
        let half = BigInt::from(2).extended_gcd(&m).x.mod_floor(&m);
        assert!(BigInt::from(2).extended_gcd(&m).gcd.is_one());
        let k = Series::monomial(RingElement::from_bigint(&t, &(-half), 30), 2, 8);
        let lk = op.apply(&k).unwrap();
        let pi = RingElement::uniformizer(&t, Level::K, 30);
        let d = lk.coeff(0) - &pi;
        assert!(
            d.val_floor() >= lk.coeff(0).precision().min(12),
            "constant term {:?}",
            lk.coeff(0)
        );
    }
}
