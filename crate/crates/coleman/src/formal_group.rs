//! Lubin-Tate formal groups attached to one level of the tower.
//!
//! A group is built from a distinguished polynomial `f` with `f'(0) = π`, a
//! uniformizer of the level, and `f ≡ x^q mod π`. The unique bivariate law
//! `F` with `F ≡ x + y` below degree two and `f(F(x,y)) = F(f(x), f(y))` is
//! constructed degree by degree: writing `F = F_{<n} + Φ_n`, the functional
//! equation forces
//!
//! ```text
//! Φ_n = [ (f ∘ F_{<n})_n - (F_{<n}(f(x), f(y)))_n ] / (π^n - π)
//! ```
//!
//! and that division is exact in the ring; a failed division means the input
//! was not a valid group datum. Endomorphisms `[c]` follow the same
//! one-variable recursion, and the logarithm comes from integrating the unit
//! series `(∂F/∂y)(x, 0)^{-1}`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::series::frac::{FracElement, FracSeries};
use crate::series::{BiSeries, Series};
use crate::tower::{Level, RingElement, TowerSpec};

pub struct LogExp {
    /// Formal logarithm; degree-`n` coefficient has valuation
    /// >= `-v(π) * floor(log_q n)`.
    pub log: FracSeries,
    /// Formal exponential; degree-`n` coefficient has valuation
    /// >= `-v(π) * (n-1) / (q-1)`.
    pub exp: FracSeries,
}

pub struct FormalGroup {
    tower: Arc<TowerSpec>,
    level: Level,
    q: u64,
    /// The distinguished series, as an exact polynomial at working precision.
    f: Series,
    /// `f'(0)`, the uniformizer this group multiplies by.
    pi: RingElement,
    law: BiSeries,
    /// Univariate powers `f^m` for `m = 0..=cap`.
    f_pows: Vec<Series>,
    endo_cache: Mutex<HashMap<String, Series>>,
    log_exp: Mutex<Option<Arc<LogExp>>>,
}

impl FormalGroup {
    /// The standard datum `f = πx + x^q` for the level's canonical
    /// uniformizer.
    pub fn standard(
        tower: &Arc<TowerSpec>,
        level: Level,
        cap: usize,
        work_prec: u32,
    ) -> Result<FormalGroup> {
        let q = tower.q(level);
        let pi = RingElement::uniformizer(tower, level, work_prec);
        let mut f = Series::zero(tower, cap, work_prec);
        if q as usize > cap {
            return Err(Error::BudgetExceeded(format!(
                "degree cap {cap} cannot hold x^{q} of the level datum"
            )));
        }
        f.set_coeff(1, pi);
        f.set_coeff(q as usize, RingElement::one(tower, work_prec));
        FormalGroup::from_f(tower, level, f)
    }

    /// Build from an arbitrary datum. `f` must be an exact polynomial with
    /// `f(0) = 0`, `v(f'(0)) = v(π_level)`, `f ≡ x^q mod π_level`, and all
    /// coefficients in the level's subring.
    pub fn from_f(tower: &Arc<TowerSpec>, level: Level, f: Series) -> Result<FormalGroup> {
        let q = tower.q(level);
        let v_pi = tower.v_pi(level);
        let cap = f.cap();
        if (q as usize) > cap {
            return Err(Error::BudgetExceeded(format!(
                "degree cap {cap} below the residue size {q}"
            )));
        }
        if !f.coeff(0).is_zero() {
            return Err(Error::Precondition("group datum must vanish at 0".into()));
        }
        let pi = f.coeff(1).clone();
        if pi.val_floor() != v_pi || pi.valuation().is_zero_at_precision() {
            return Err(Error::Precondition(format!(
                "linear coefficient must be a uniformizer of the level (v = {v_pi})"
            )));
        }
        for n in 1..=cap {
            let c = f.coeff(n);
            if level == Level::L && !c.is_in_l() {
                return Err(Error::Precondition(format!(
                    "coefficient of x^{n} does not lie in the level-L subring"
                )));
            }
            let needs = if n == q as usize {
                let d = c - &RingElement::one(tower, c.precision());
                d.val_floor() >= v_pi
            } else {
                c.val_floor() >= v_pi
            };
            if !needs {
                return Err(Error::Precondition(format!(
                    "datum is not congruent to x^{q} modulo the level uniformizer \
                     (offending degree {n})"
                )));
            }
        }

        let f_pows = power_table(&f, cap);
        let law = build_law(tower, &f, &f_pows, &pi, cap)?;
        Ok(FormalGroup {
            tower: tower.clone(),
            level,
            q,
            f,
            pi,
            law,
            f_pows,
            endo_cache: Mutex::new(HashMap::new()),
            log_exp: Mutex::new(None),
        })
    }

    pub fn tower(&self) -> &Arc<TowerSpec> {
        &self.tower
    }
    pub fn level(&self) -> Level {
        self.level
    }
    pub fn q(&self) -> u64 {
        self.q
    }
    pub fn f(&self) -> &Series {
        &self.f
    }
    pub fn pi(&self) -> &RingElement {
        &self.pi
    }
    pub fn law(&self) -> &BiSeries {
        &self.law
    }
    pub fn cap(&self) -> usize {
        self.f.cap()
    }
    pub fn work_prec(&self) -> u32 {
        self.f.coeff(1).precision()
    }

    /// `g ⊕ h`. Arguments with zero constant term give an exact result; a
    /// nonzero constant term makes the law's own truncation felt, and the
    /// output precision is capped accordingly.
    pub fn oplus(&self, g: &Series, h: &Series) -> Series {
        self.oplus_with(g, h, None)
    }

    pub fn oplus_with(&self, g: &Series, h: &Series, skip_below: Option<u32>) -> Series {
        if g.coeff(0).is_zero() && h.coeff(0).is_zero() {
            self.law.substitute(g, h, skip_below)
        } else {
            self.law.substitute_truncated(g, h, skip_below)
        }
    }

    /// `[-1] ∘ h`, with the truncation cap when `h(0) != 0`.
    pub fn neg_series(&self, h: &Series) -> Result<Series> {
        let minus_one = self.endo_int(-1)?;
        if h.coeff(0).is_zero() {
            minus_one.compose(h)
        } else {
            minus_one.compose_truncated(h)
        }
    }

    pub fn ominus(&self, g: &Series, h: &Series) -> Result<Series> {
        Ok(self.oplus(g, &self.neg_series(h)?))
    }

    pub fn ominus_with(&self, g: &Series, h: &Series, skip_below: Option<u32>) -> Result<Series> {
        Ok(self.oplus_with(g, &self.neg_series(h)?, skip_below))
    }

    /// Left fold `(...(s_1 ⊕ s_2) ⊕ ...) ⊕ s_k`.
    pub fn fold(&self, items: &[Series], skip_below: Option<u32>) -> Result<Series> {
        let mut it = items.iter();
        let first = it.next().ok_or_else(|| Error::Precondition("empty fold".into()))?;
        let mut acc = first.clone();
        for s in it {
            acc = self.oplus_with(&acc, s, skip_below);
        }
        Ok(acc)
    }

    /// The endomorphism `[c]` for `c` in the level's subring: the unique
    /// series with `[c] ≡ cx` below degree two and `f([c]) = [c](f)`.
    pub fn endo(&self, c: &RingElement) -> Result<Series> {
        if self.level == Level::L && !c.is_in_l() {
            return Err(Error::Precondition(
                "multiplier must lie in the level-L subring".into(),
            ));
        }
        let key = c.canonical_key();
        if let Some(hit) = self.endo_cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let psi = self.endo_uncached(c)?;
        self.endo_cache.lock().unwrap().insert(key, psi.clone());
        Ok(psi)
    }

    pub fn endo_int(&self, c: i64) -> Result<Series> {
        self.endo(&RingElement::from_i64(&self.tower, c, self.work_prec()))
    }

    fn endo_uncached(&self, c: &RingElement) -> Result<Series> {
        let cap = self.cap();
        let tower = &self.tower;
        let prec = self.work_prec().min(c.precision());
        let mut psi = Series::zero(tower, cap, prec);
        psi.set_coeff(1, c.reduced(prec));
        // Online powers psi^j for j = 1..=deg(f); psi_pows[j] tracks psi^j.
        let deg_f = (1..=cap).rev().find(|&n| !self.f.coeff(n).is_zero()).unwrap_or(1);
        let mut psi_pows: Vec<Series> = (0..=deg_f)
            .map(|j| match j {
                0 => Series::constant(RingElement::one(tower, prec + self.tower.e_total()), cap),
                _ => Series::zero(tower, cap, prec),
            })
            .collect();
        psi_pows[1] = psi.clone();
        let v = self.pi.val_floor();
        let mut pi_n = self.pi.clone(); // π^n while at degree n
        for n in 2..=cap {
            for j in 2..=deg_f.min(n) {
                // (psi^j)_n from psi^{j-1} layers < n and psi layers < n
                let mut acc: Option<RingElement> = None;
                for k in 1..n {
                    let lhs = psi_pows[j - 1].coeff(n - k);
                    let rhs = psi.coeff(k);
                    if lhs.is_zero() || rhs.is_zero() {
                        continue;
                    }
                    let t = lhs * rhs;
                    acc = Some(match acc {
                        Some(s) => &s + &t,
                        None => t,
                    });
                }
                let val = acc.unwrap_or_else(|| RingElement::zero(tower, prec));
                psi_pows[j].set_coeff(n, val);
            }
            // numerator = Σ_{j>=2} f_j (psi^j)_n  -  Σ_{m<n} psi_m (f^m)_n
            let mut num = RingElement::zero(tower, prec + v * cap as u32 + 4);
            for j in 2..=deg_f.min(n) {
                let fj = self.f.coeff(j);
                if fj.is_zero() || psi_pows[j].coeff(n).is_zero() {
                    continue;
                }
                num = &num + &(fj * psi_pows[j].coeff(n));
            }
            for m in 1..n {
                let pm = psi.coeff(m);
                let fm = self.f_pows[m].coeff(n);
                if pm.is_zero() || fm.is_zero() {
                    continue;
                }
                num = &num - &(pm * fm);
            }
            pi_n = &pi_n * &self.pi;
            let divisor = &pi_n - &self.pi;
            let unit = divisor.exact_div_pi(v).expect("pi^n - pi has valuation v(pi)");
            let psi_n = num
                .exact_div_pi(v)
                .and_then(|x| Ok(&x * &unit.unit_inverse()?))
                .map_err(|_| Error::DefectDivision { degree: n })?;
            psi.set_coeff(n, psi_n.clone());
            psi_pows[1].set_coeff(n, psi_n);
        }
        Ok(psi)
    }

    /// Formal logarithm and exponential, cached after the first call.
    pub fn log_exp(&self) -> Result<Arc<LogExp>> {
        if let Some(hit) = self.log_exp.lock().unwrap().as_ref() {
            return Ok(hit.clone());
        }
        let le = Arc::new(self.build_log_exp()?);
        *self.log_exp.lock().unwrap() = Some(le.clone());
        Ok(le)
    }

    fn build_log_exp(&self) -> Result<LogExp> {
        let cap = self.cap();
        let tower = &self.tower;
        let prec = self.work_prec();
        // m(x) = (∂F/∂y)(x, 0) = Σ_n F[n][1] x^{n-1}; unit constant term 1.
        let mut m = Series::zero(tower, cap, prec);
        for n in 1..=self.law.cap() {
            if n - 1 > cap {
                break;
            }
            m.set_coeff(n - 1, self.law.coeff(n, 1).clone());
        }
        let log_prime = m.unit_inverse()?;
        let log = FracSeries::antiderivative(&log_prime);
        let v = self.pi.val_floor() as i64;
        let q = self.q as i64;
        for n in 1..=cap {
            // v(log_n) >= -v(π) * floor(log_q n)
            let mut bound = 0i64;
            let mut qt = q;
            while qt <= n as i64 {
                bound += 1;
                qt *= q;
            }
            assert!(
                log.coeff(n).value_val_floor() >= -v * bound,
                "logarithm denominator bound failed at degree {n}"
            );
        }
        // Reversion: exp_1 = 1, exp_n = -Σ_{m=2..n} log_m (exp^m)_n.
        let zero = FracElement::from_integral(RingElement::zero(tower, prec));
        let one = FracElement::from_integral(RingElement::one(tower, prec));
        let mut exp = FracSeries { coeffs: vec![zero.clone(); cap + 1] };
        exp.coeffs[1] = one.clone();
        let mut exp_pows: Vec<FracSeries> =
            vec![FracSeries { coeffs: vec![zero.clone(); cap + 1] }; cap + 1];
        exp_pows[0].coeffs[0] = one;
        exp_pows[1] = exp.clone();
        for n in 2..=cap {
            for j in 2..=n {
                let mut acc = zero.clone();
                for k in 1..n {
                    if n - k > cap {
                        continue;
                    }
                    let lhs = &exp_pows[j - 1].coeffs[n - k];
                    let rhs = &exp.coeffs[k];
                    if lhs.is_zero() || rhs.is_zero() {
                        continue;
                    }
                    acc = acc.add(&lhs.mul(rhs));
                }
                exp_pows[j].coeffs[n] = acc;
            }
            let mut e_n = zero.clone();
            for m in 2..=n {
                let lm = log.coeff(m);
                let pm = &exp_pows[m].coeffs[n];
                if lm.is_zero() || pm.is_zero() {
                    continue;
                }
                e_n = e_n.sub(&lm.mul(pm));
            }
            // v(exp_n) >= -v(π)(n-1)/(q-1)
            assert!(
                e_n.value_val_floor() * (q - 1) >= -v * (n as i64 - 1),
                "exponential denominator bound failed at degree {n}"
            );
            exp.coeffs[n] = e_n.clone();
            exp_pows[1].coeffs[n] = e_n;
        }
        // Reversion identity log(exp(x)) = x, reusing the power tables.
        for n in 1..=cap {
            let mut acc = if n == 1 {
                FracElement::from_integral(RingElement::one(tower, prec))
            } else {
                zero.clone()
            };
            let target = acc.clone();
            acc = zero.clone();
            for m in 1..=n {
                let lm = log.coeff(m);
                let pm = &exp_pows[m].coeffs[n];
                if lm.is_zero() || pm.is_zero() {
                    continue;
                }
                acc = acc.add(&lm.mul(pm));
            }
            let d = acc.sub(&target);
            assert!(
                d.is_zero() || d.value_val_floor() >= d.value_precision().min(0),
                "log/exp reversion identity failed at degree {n}"
            );
        }
        Ok(LogExp { log, exp })
    }

    /// `log(r(x))` as an integral series. Requires `r(0) = 0` as exact data;
    /// each coefficient must come out integral, otherwise the input was not
    /// in the domain of the transport.
    pub fn log_compose(&self, r: &Series) -> Result<Series> {
        if !r.coeff(0).is_zero() {
            return Err(Error::Precondition(
                "logarithm transport needs a zero constant term".into(),
            ));
        }
        let le = self.log_exp()?;
        let out = le.log.compose_with_integral(r)?;
        out.to_integral().map_err(|e| match e {
            Error::NonIntegral { degree, denominator } => Error::TransportDomain {
                index: degree,
                needed: denominator,
                found: 0,
            },
            other => other,
        })
    }

    /// `exp(r(x))` as an integral series, under the same contract.
    pub fn exp_compose(&self, r: &Series) -> Result<Series> {
        if !r.coeff(0).is_zero() {
            return Err(Error::Precondition(
                "exponential transport needs a zero constant term".into(),
            ));
        }
        let le = self.log_exp()?;
        let out = le.exp.compose_with_integral(r)?;
        out.to_integral().map_err(|e| match e {
            Error::NonIntegral { degree, denominator } => Error::TransportDomain {
                index: degree,
                needed: denominator,
                found: 0,
            },
            other => other,
        })
    }

    /// Associativity `F(F(x,y), z) = F(x, F(y,z))` up to total degree `deg`,
    /// compared modulo `π^mod_pi`. Returns the first offending monomial.
    pub fn check_associativity(&self, deg: usize, mod_pi: u32) -> Result<Option<String>> {
        let deg = deg.min(self.law.cap());
        // Powers of the law itself serve both sides (V = F(y,z) is F with
        // variables renamed).
        let mut pows: Vec<BiSeries> = Vec::with_capacity(deg + 1);
        let mut unit = BiSeries::zero(&self.tower, deg, self.work_prec() + 4);
        unit.set_coeff(0, 0, RingElement::one(&self.tower, self.work_prec() + 4));
        pows.push(unit);
        for _ in 1..=deg {
            let next = pows.last().unwrap().mul(&self.law);
            pows.push(next);
        }
        type Key = (usize, usize, usize);
        let mut lhs: HashMap<Key, RingElement> = HashMap::new();
        let mut rhs: HashMap<Key, RingElement> = HashMap::new();
        let bump = |map: &mut HashMap<Key, RingElement>, key: Key, val: RingElement| {
            map.entry(key)
                .and_modify(|e| *e = &*e + &val)
                .or_insert(val);
        };
        for n in 1..=deg.min(self.law.cap()) {
            for j in 0..=n {
                let c = self.law.coeff(n, j);
                if c.is_zero() {
                    continue;
                }
                // lhs: U^{n-j} z^j with U = F(x,y)
                for m in 0..=deg.saturating_sub(j) {
                    if m > pows[n - j].cap() {
                        break;
                    }
                    for i in 0..=m {
                        let u = pows[n - j].coeff(m, i);
                        if u.is_zero() {
                            continue;
                        }
                        bump(&mut lhs, (m - i, i, j), u * c);
                    }
                }
                // rhs: x^{n-j} V^j with V = F(y,z)
                for m in 0..=deg.saturating_sub(n - j) {
                    if m > pows[j].cap() {
                        break;
                    }
                    for i in 0..=m {
                        let u = pows[j].coeff(m, i);
                        if u.is_zero() {
                            continue;
                        }
                        bump(&mut rhs, (n - j, m - i, i), u * c);
                    }
                }
            }
        }
        let mut keys: Vec<Key> = lhs.keys().chain(rhs.keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        for key in keys {
            let (a, b, g) = key;
            if a + b + g > deg {
                continue;
            }
            let zero = RingElement::zero(&self.tower, self.work_prec());
            let l = lhs.get(&key).unwrap_or(&zero);
            let r = rhs.get(&key).unwrap_or(&zero);
            let d = l - r;
            if d.precision() < mod_pi {
                return Err(Error::InsufficientPrecision {
                    degree: a + b + g,
                    needed: mod_pi,
                    available: d.precision(),
                });
            }
            if d.val_floor() < mod_pi {
                return Ok(Some(format!(
                    "x^{a} y^{b} z^{g}: sides differ at valuation {}",
                    d.val_floor()
                )));
            }
        }
        Ok(None)
    }

    /// `F(x, y) = F(y, x)` up to the law cap, modulo `π^mod_pi`.
    pub fn check_symmetry(&self, mod_pi: u32) -> Option<(usize, usize)> {
        for n in 1..=self.law.cap() {
            for i in 0..=n {
                let d = self.law.coeff(n, i) - self.law.coeff(n, n - i);
                if d.precision() >= mod_pi && d.val_floor() < mod_pi {
                    return Some((n, i));
                }
            }
        }
        None
    }

    /// `F(x, 0) = x` up to the law cap, modulo `π^mod_pi`.
    pub fn check_unit_section(&self, mod_pi: u32) -> Option<usize> {
        for n in 2..=self.law.cap() {
            let c = self.law.coeff(n, 0);
            if c.precision() >= mod_pi && c.val_floor() < mod_pi {
                return Some(n);
            }
        }
        None
    }
}

fn power_table(f: &Series, cap: usize) -> Vec<Series> {
    let tower = f.tower().clone();
    let one = Series::constant(
        RingElement::one(&tower, f.coeff(0).precision() + 4),
        cap,
    );
    let mut pows = vec![one];
    for m in 1..=cap {
        let next = pows[m - 1].mul(f);
        pows.push(next);
    }
    pows
}

fn build_law(
    tower: &Arc<TowerSpec>,
    f: &Series,
    f_pows: &[Series],
    pi: &RingElement,
    cap: usize,
) -> Result<BiSeries> {
    let prec = f.coeff(1).precision();
    let deg_f = (1..=cap).rev().find(|&n| !f.coeff(n).is_zero()).unwrap_or(1);
    let one = RingElement::one(tower, prec);
    let mut law = BiSeries::zero(tower, cap, prec);
    law.set_coeff(1, 0, one.clone());
    law.set_coeff(1, 1, one);
    // Bivariate powers law^j for j = 2..=deg_f, extended layer by layer.
    let mut pows: Vec<BiSeries> = vec![BiSeries::zero(tower, cap, prec); deg_f.saturating_sub(1)];
    let v = pi.val_floor();
    let mut pi_n = pi.clone();
    for n in 2..=cap {
        for j in 2..=deg_f.min(n) {
            let mut layer: Vec<RingElement> = vec![RingElement::zero(tower, prec); n + 1];
            for m in 1..n {
                let prev = if j == 2 { law.layer(m) } else { pows[j - 3].layer(m) };
                if prev.iter().all(|c| c.is_zero()) {
                    continue;
                }
                let cur = law.layer(n - m);
                if cur.iter().all(|c| c.is_zero()) {
                    continue;
                }
                let conv = BiSeries::convolve_layers(prev, cur);
                for (i, c) in conv.into_iter().enumerate() {
                    layer[i] = &layer[i] + &c;
                }
            }
            pows[j - 2].set_layer(n, layer);
        }
        // a_n = Σ_{j>=2} f_j (law^j)_n
        let mut a_n: Vec<RingElement> = vec![RingElement::zero(tower, prec + v * cap as u32 + 4); n + 1];
        for j in 2..=deg_f.min(n) {
            let fj = f.coeff(j);
            if fj.is_zero() {
                continue;
            }
            for (i, c) in pows[j - 2].layer(n).iter().enumerate() {
                if c.is_zero() {
                    continue;
                }
                a_n[i] = &a_n[i] + &(c * fj);
            }
        }
        // b_n = Σ_{1 <= m < n} Σ_{i2 <= m} law[m][i2] * (f^{m-i2}(x) f^{i2}(y))_n
        for m in 1..n {
            for i2 in 0..=m {
                let c = law.coeff(m, i2);
                if c.is_zero() {
                    continue;
                }
                let qi = &f_pows[m - i2];
                let qj = &f_pows[i2];
                for alpha in 0..=n {
                    let beta = n - alpha;
                    let l = qi.coeff(alpha);
                    if l.is_zero() {
                        continue;
                    }
                    let r = qj.coeff(beta);
                    if r.is_zero() {
                        continue;
                    }
                    let t = &(l * r) * c;
                    a_n[beta] = &a_n[beta] - &t;
                }
            }
        }
        pi_n = &pi_n * pi;
        let divisor = &pi_n - pi;
        let unit_inv = divisor
            .exact_div_pi(v)
            .expect("pi^n - pi has valuation v(pi)")
            .unit_inverse()?;
        let mut layer = Vec::with_capacity(n + 1);
        for (i, c) in a_n.into_iter().enumerate() {
            let phi = c
                .exact_div_pi(v)
                .map(|x| &x * &unit_inv)
                .map_err(|_| {
                    let _ = i;
                    Error::DefectDivision { degree: n }
                })?;
            layer.push(phi);
        }
        law.set_layer(n, layer);
    }
    Ok(law)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_integer::Integer;
    use num_traits::One;

    fn c1() -> Arc<TowerSpec> {
        TowerSpec::build(3, &[], &[], 16, "c1").unwrap()
    }

    fn c3() -> Arc<TowerSpec> {
        TowerSpec::build(3, &[-3, 0, 1], &[vec![0, -1], vec![0, 0], vec![1, 0]], 16, "c3")
            .unwrap()
    }

    fn inv_mod(a: i64, m: &BigInt) -> BigInt {
        let g = BigInt::from(a).extended_gcd(m);
        assert!(g.gcd.is_one());
        g.x.mod_floor(m)
    }

    /// `(1+x)^3 - 1`: its law is exactly `x + y + xy` and all structure
    /// constants are classical.
    fn multiplicative_group(cap: usize, prec: u32) -> FormalGroup {
        let t = c1();
        let mut f = Series::zero(&t, cap, prec);
        f.set_coeff(1, RingElement::from_i64(&t, 3, prec));
        f.set_coeff(2, RingElement::from_i64(&t, 3, prec));
        f.set_coeff(3, RingElement::from_i64(&t, 1, prec));
        FormalGroup::from_f(&t, Level::K, f).unwrap()
    }

    #[test]
    fn multiplicative_law_is_exact() {
        let g = multiplicative_group(12, 20);
        let t = g.tower().clone();
        for n in 1..=12usize {
            for i in 0..=n {
                let expect = match (n, i) {
                    (1, 0) | (1, 1) | (2, 1) => RingElement::from_i64(&t, 1, 18),
                    _ => RingElement::zero(&t, 18),
                };
                assert_eq!(
                    g.law().coeff(n, i).reduced(14),
                    expect.reduced(14),
                    "law coefficient ({n}, {i})"
                );
            }
        }
        assert!(g.check_symmetry(14).is_none());
        assert!(g.check_unit_section(14).is_none());
        assert!(g.check_associativity(8, 12).unwrap().is_none());
    }

    #[test]
    fn standard_law_degree_three_structure_constant() {
        // f = 3x + x^3: the first correction layer is (x^2 y + x y^2)/8.
        let t = c1();
        let g = FormalGroup::standard(&t, Level::K, 10, 24).unwrap();
        let prec = g.law().coeff(3, 1).precision();
        let inv8 = inv_mod(8, &BigInt::from(3u64.pow(prec)));
        let expect = RingElement::from_bigint(&t, &inv8, prec);
        assert_eq!(*g.law().coeff(3, 1), expect);
        assert_eq!(*g.law().coeff(3, 2), expect);
        assert!(g.law().coeff(2, 1).is_zero());
        assert!(g.check_symmetry(12).is_none());
        assert!(g.check_unit_section(12).is_none());
    }

    #[test]
    fn multiplicative_endomorphisms_are_binomial_series() {
        let g = multiplicative_group(8, 20);
        let t = g.tower().clone();
        // [2] = (1+x)^2 - 1 = 2x + x^2
        let two = g.endo_int(2).unwrap();
        let mut expect = Series::zero(&t, 8, 18);
        expect.set_coeff(1, RingElement::from_i64(&t, 2, 18));
        expect.set_coeff(2, RingElement::from_i64(&t, 1, 18));
        assert_eq!(two.congruent_mod(&expect, 12, 8).unwrap(), None);
        // [-1] = (1+x)^{-1} - 1 = Σ (-1)^n x^n
        let neg = g.endo_int(-1).unwrap();
        for n in 1..=8usize {
            let sign = if n % 2 == 0 { 1 } else { -1 };
            let d = neg.coeff(n) - &RingElement::from_i64(&t, sign, 12);
            assert!(d.val_floor() >= 12, "negation coefficient {n}");
        }
        // [3] = f itself
        let three = g.endo_int(3).unwrap();
        assert_eq!(three.congruent_mod(g.f(), 12, 8).unwrap(), None);
        // F(x, [-1](x)) = 0
        let x = Series::x(&t, 8, 18);
        let sum = g.oplus(&x, &neg);
        for n in 0..=8usize {
            assert!(sum.coeff(n).val_floor() >= 12, "inverse law degree {n}");
        }
    }

    #[test]
    fn standard_endo_two_matches_hand_solve() {
        // f = 3x + x^3, ψ = [2]: the x^3 coefficient solves 3c + 8 = 2 + 27c.
        let t = c1();
        let g = FormalGroup::standard(&t, Level::K, 6, 24).unwrap();
        let two = g.endo_int(2).unwrap();
        let prec = two.coeff(3).precision();
        let quarter = inv_mod(4, &BigInt::from(3u64.pow(prec)));
        assert_eq!(*two.coeff(3), RingElement::from_bigint(&t, &quarter, prec));
        assert!(two.coeff(2).is_zero());
        // endomorphism of π is f itself, exactly
        let pi_endo = g.endo_int(3).unwrap();
        assert_eq!(pi_endo.congruent_mod(g.f(), 18, 6).unwrap(), None);
        // [a] ∘ [b] = [ab]
        let four = g.endo_int(4).unwrap();
        let comp = two.compose(&two).unwrap();
        assert_eq!(comp.congruent_mod(&four, 16, 6).unwrap(), None);
    }

    #[test]
    fn log_exp_classical_values() {
        let g = multiplicative_group(9, 24);
        let le = g.log_exp().unwrap();
        // log = Σ (-1)^{n+1} x^n / n
        for n in 1..=9usize {
            let sign = if n % 2 == 0 { -1 } else { 1 };
            let back = le.log.coeff(n).scale(&RingElement::from_i64(
                g.tower(),
                sign * n as i64,
                20,
            ));
            assert_eq!(back.den(), 0, "log coefficient {n} denominator");
            let d = back.num() - &RingElement::one(g.tower(), 12);
            assert!(d.val_floor() >= 12, "log coefficient {n}");
        }
        // exp_n = 1/n!: check n = 3 (1/6: one power of π) and n = 4 (1/24)
        let e3 = le.exp.coeff(3);
        assert_eq!(e3.den(), 1);
        let b3 = e3.scale(&RingElement::from_i64(g.tower(), 6, 20));
        assert!((b3.num() - &RingElement::one(g.tower(), 12)).val_floor() >= 12);
        let e4 = le.exp.coeff(4);
        assert_eq!(e4.den(), 1);
    }

    #[test]
    fn standard_log_third_coefficient() {
        // L_3 (27 - 3) = -1 for f = 3x + x^3.
        let t = c1();
        let g = FormalGroup::standard(&t, Level::K, 9, 24).unwrap();
        let le = g.log_exp().unwrap();
        let l3 = le.log.coeff(3);
        assert_eq!(l3.den(), 1);
        assert_eq!(l3.value_val_floor(), -1);
        let back = l3.scale(&RingElement::from_i64(&t, -24, 20));
        assert_eq!(back.den(), 0);
        assert!((back.num() - &RingElement::one(&t, 12)).val_floor() >= 12);
        // exp_3 = +1/24
        let e3 = le.exp.coeff(3);
        let back = e3.scale(&RingElement::from_i64(&t, 24, 20));
        assert!((back.num() - &RingElement::one(&t, 12)).val_floor() >= 12);
    }

    #[test]
    fn fold_is_repeated_multiplication() {
        let g = multiplicative_group(8, 20);
        let t = g.tower().clone();
        let x = Series::x(&t, 8, 18);
        let folded = g.fold(&[x.clone(), x.clone(), x.clone()], None).unwrap();
        let three = g.endo_int(3).unwrap();
        assert_eq!(folded.congruent_mod(&three, 12, 8).unwrap(), None);
    }

    #[test]
    fn transports_roundtrip_and_reject() {
        let g = multiplicative_group(8, 26);
        let t = g.tower().clone();
        // r = πx is in the exp/log domain: log(3x) is integral.
        let r = Series::monomial(RingElement::from_i64(&t, 3, 24), 1, 8);
        let lr = g.log_compose(&r).unwrap();
        let back = g.exp_compose(&lr).unwrap();
        assert_eq!(back.congruent_mod(&r, 10, 8).unwrap(), None);
        // x itself is not in the domain: 1/n denominators survive.
        let x = Series::x(&t, 8, 24);
        assert!(matches!(
            g.log_compose(&x),
            Err(Error::TransportDomain { .. })
        ));
    }

    #[test]
    fn level_l_group_in_ramified_tower() {
        let t = c3();
        // f_L = sx + x^3 lives in O_L; v(π_L) = 2 in π_K units.
        let g = FormalGroup::standard(&t, Level::L, 6, 30).unwrap();
        assert_eq!(g.pi().val_floor(), 2);
        assert!(g.check_symmetry(8).is_none());
        assert!(g.check_unit_section(8).is_none());
        assert!(g.check_associativity(5, 6).unwrap().is_none());
        // [π_L] = f_L
        let pl = RingElement::uniformizer(&t, Level::L, 30);
        let e = g.endo(&pl).unwrap();
        assert_eq!(e.congruent_mod(g.f(), 10, 6).unwrap(), None);
        // coefficients of an L-level endomorphism stay in O_L
        let two = g.endo_int(2).unwrap();
        for n in 0..=6usize {
            assert!(two.coeff(n).is_in_l(), "degree {n} left the subring");
        }
    }

    #[test]
    fn associativity_detects_corruption() {
        let t = c1();
        let g = FormalGroup::standard(&t, Level::K, 8, 24).unwrap();
        assert!(g.check_associativity(8, 10).unwrap().is_none());
        // Corrupt one structure coefficient and watch it fail.
        let mut bad = FormalGroup::standard(&t, Level::K, 8, 24).unwrap();
        let mut law = bad.law.clone();
        let bumped = law.coeff(3, 1) + &RingElement::from_i64(&t, 9, 20);
        law.set_coeff(3, 1, bumped);
        bad.law = law;
        assert!(bad.check_associativity(8, 10).unwrap().is_some());
    }

    #[test]
    fn rejects_invalid_data() {
        let t = c1();
        // missing x^q congruence: f = 3x + 3x^3
        let mut f = Series::zero(&t, 6, 20);
        f.set_coeff(1, RingElement::from_i64(&t, 3, 20));
        f.set_coeff(3, RingElement::from_i64(&t, 3, 20));
        assert!(matches!(
            FormalGroup::from_f(&t, Level::K, f),
            Err(Error::Precondition(_))
        ));
        // linear coefficient not a uniformizer
        let mut f = Series::zero(&t, 6, 20);
        f.set_coeff(1, RingElement::from_i64(&t, 9, 20));
        f.set_coeff(3, RingElement::from_i64(&t, 1, 20));
        assert!(FormalGroup::from_f(&t, Level::K, f).is_err());
    }
}
