//! The two reference towers used throughout the tests, examples, and the
//! acceptance suite, plus ready-made contexts over them.
//!
//! `c1` is the rational base case: `L = K = ℚ_3` with Frobenius `3x + x³`.
//! `c3` is the ramified quartic tower `ℚ_3 ⊂ ℚ_3(s) ⊂ ℚ_3(s)(t)` with
//! `s² = 3` and `t² = s`, so `π_K = t`, `π_L = s = t²`, and `t⁴ = 3`. Its
//! residue fields are both `F_3`, the upper step is ramified of degree two,
//! and the distinguished multiplier `q_K/π_L` equals `π_L` times a unit --
//! exactly the setting the lifting pipeline wants.

use std::sync::Arc;

use crate::eigen::{Budget, EigenContext};
use crate::error::Result;
use crate::tower::TowerSpec;

/// `L = K = ℚ_3`.
pub fn tower_c1(prec: u32) -> Result<Arc<TowerSpec>> {
    TowerSpec::build(3, &[], &[], prec, "c1")
}

/// `s² = 3`, `t² = s`; `π_K = t` with `v(3) = 4`.
pub fn tower_c3(prec: u32) -> Result<Arc<TowerSpec>> {
    TowerSpec::build(
        3,
        &[-3, 0, 1],
        &[vec![0, -1], vec![0, 0], vec![1, 0]],
        prec,
        "c3",
    )
}

/// Context over [`tower_c1`] at the given budgets.
pub fn context_c1(deg: usize, prec: u32) -> Result<EigenContext> {
    let tower = tower_c1(prec.max(8))?;
    EigenContext::new(&tower, Budget { deg, prec })
}

/// Context over [`tower_c3`] at the given budgets.
pub fn context_c3(deg: usize, prec: u32) -> Result<EigenContext> {
    let tower = tower_c3(prec.max(8))?;
    EigenContext::new(&tower, Budget { deg, prec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::Level;

    #[test]
    fn reference_towers_have_documented_shape() {
        let c1 = tower_c1(16).unwrap();
        assert_eq!((c1.q_l(), c1.q_k(), c1.e_total(), c1.f_kl()), (3, 3, 1, 1));

        let c3 = tower_c3(16).unwrap();
        assert_eq!((c3.q_l(), c3.q_k(), c3.e_total(), c3.e_kl()), (3, 3, 4, 2));
        assert_eq!(c3.v_pi(Level::L), 2);
    }
}
