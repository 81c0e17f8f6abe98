//! The full lifting pipeline in the ramified tower: build the twist
//! candidate s(x) = π_K + x³ + x⁶, check the entry criterion, then lift it
//! stage by stage until T(r) ≡ 0 mod π_K^10, and verify r ≡ s mod π_K.
//!
//!     cargo run --release --example lift_pipeline

use std::time::Instant;

use coleman::contexts::context_c3;
use coleman::series::Series;
use coleman::tower::{Level, RingElement};

fn main() {
    let t0 = Instant::now();
    let ctx = context_c3(32, 16).expect("context");
    eprintln!("context built in {:.1?}", t0.elapsed());

    let tower = ctx.tower().clone();
    let w = ctx.work_prec();
    let alpha = ctx.special_alpha().clone();
    println!("tower {}: q = {}, v(π_L) = 2, multiplier α = q_K/π_L", tower.label(), tower.q_k());

    // s0 = 1 + x + x², twisted to 1 + x³ + x⁶, constant shifted into the
    // maximal ideal so the operator is defined at x = 0
    let mut s0 = Series::zero(&tower, 2, w);
    for j in 0..=2 {
        s0.set_coeff(j, RingElement::one(&tower, w));
    }
    let twist = ctx.twist_candidate(&s0).expect("twist");
    let mut s = twist.series;
    s.set_coeff(0, RingElement::uniformizer(&tower, Level::K, w));

    let t1 = Instant::now();
    let crit = ctx.lift_criterion(&s, &alpha).expect("criterion");
    println!("entry criterion: {crit}");
    eprintln!("criterion checked in {:.1?}", t1.elapsed());
    assert!(crit.passed());

    let t2 = Instant::now();
    let out = ctx.lift_to_a(&s, &alpha, 10).expect("lift");
    eprintln!("lift finished in {:.1?}", t2.elapsed());
    println!("lift: {} stages, final residual: {}", out.stages, out.report);

    // r ≡ s mod π_K coefficientwise
    let diff = out.series.sub(&s);
    let congruent = diff.coeffs().iter().all(|c| c.val_floor() >= 1);
    println!("r ≡ s mod π_K: {congruent}");
    assert!(congruent);
    eprintln!("total {:.1?}", t0.elapsed());
}
