//! Property tests for structural invariants.

use degenheat::capacity::*;
use degenheat::geometry::HeatBall;
use degenheat::kernel::{Kernel, SpaceTimePoint};
use degenheat::meanvalue::harnack_quotient;
use degenheat::weighted_quadrature::weighted_monomial_integral;
use degenheat::wiener::{DomainDescriptor, Primitive, SetOp};
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-300
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_nonnegative_and_causal(
        a in -0.95f64..0.95, x in prop::array::uniform3(-2.0f64..2.0),
        y in prop::array::uniform3(-2.0f64..2.0), s in -1.0f64..2.0,
    ) {
        let k = Kernel::new(3, a).unwrap();
        let v = k.gamma_at(&x, s, &y, 0.0);
        prop_assert!(v >= 0.0 && v.is_finite());
        if s <= 0.0 {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn kernel_is_symmetric_in_space(
        a in -0.95f64..0.95, x in prop::array::uniform2(-2.0f64..2.0),
        y in prop::array::uniform2(-2.0f64..2.0), s in 0.01f64..2.0,
    ) {
        let k = Kernel::new(2, a).unwrap();
        prop_assert!(close(k.gamma_at(&x, s, &y, 0.0), k.gamma_at(&y, s, &x, 0.0), 1e-12));
    }

    #[test]
    fn kernel_is_invariant_under_tangential_and_time_shifts(
        a in -0.95f64..0.95, x in prop::array::uniform2(-2.0f64..2.0),
        y in prop::array::uniform2(-2.0f64..2.0), s in 0.01f64..2.0,
        shift in -3.0f64..3.0, tshift in -3.0f64..3.0,
    ) {
        let k = Kernel::new(2, a).unwrap();
        let base = k.gamma_at(&x, s, &y, 0.0);
        let moved = k.gamma_at(&[x[0] + shift, x[1]], s + tshift, &[y[0] + shift, y[1]], tshift);
        prop_assert!(close(base, moved, 1e-10));
    }

    #[test]
    fn kernel_is_parabolically_homogeneous(
        a in -0.95f64..0.95, x in prop::array::uniform2(-1.5f64..1.5),
        y in prop::array::uniform2(-1.5f64..1.5), s in 0.02f64..2.0, lambda in 0.1f64..10.0,
    ) {
        let k = Kernel::new(2, a).unwrap();
        let sl = lambda.sqrt();
        let scaled = k.gamma_at(&[sl * x[0], sl * x[1]], lambda * s, &[sl * y[0], sl * y[1]], 0.0);
        let want = lambda.powf(-0.5 * (2.0 + a)) * k.gamma_at(&x, s, &y, 0.0);
        prop_assert!(close(scaled, want, 1e-9), "{} vs {}", scaled, want);
    }

    #[test]
    fn heat_balls_are_nested(
        a in -0.9f64..0.9, x0 in -1.0f64..1.0, r1 in 0.05f64..0.5, grow in 1.01f64..3.0,
        z in prop::array::uniform2(-1.5f64..1.5), lag in 0.0f64..1.5,
    ) {
        let k = Kernel::new(2, a).unwrap();
        let c = SpaceTimePoint::new(&[0.0], x0, 0.0);
        let small = HeatBall::new(c.clone(), r1).unwrap();
        let big = HeatBall::new(c, r1 * grow).unwrap();
        let p = SpaceTimePoint::new(&[z[0]], z[1], -lag);
        prop_assert!(!small.contains(&k, &p) || big.contains(&k, &p));
    }

    #[test]
    fn weighted_integral_is_additive(
        a in -0.95f64..0.95, lo in -2.0f64..0.0, mid in -1.0f64..1.0, hi in 0.0f64..2.0, m in 0u32..4,
    ) {
        let mid = mid.clamp(lo, hi);
        let whole = weighted_monomial_integral(lo, hi, a, m);
        let parts = weighted_monomial_integral(lo, mid, a, m) + weighted_monomial_integral(mid, hi, a, m);
        prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + whole.abs()));
    }

    #[test]
    fn potentials_are_nonnegative_and_linear(
        a in -0.9f64..0.9,
        atoms in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..0.0, 0.0f64..2.0, 0.0f64..0.2), 1..6),
        obs in prop::array::uniform3(-1.0f64..1.0), scale in 0.0f64..5.0,
    ) {
        let k = Kernel::new(2, a).unwrap();
        let mu = DiscreteMeasure {
            atoms: atoms
                .iter()
                .map(|&(x, y, t, m, hw)| Atom { point: SpaceTimePoint::new(&[x], y, t), mass: m, half_width: hw })
                .collect(),
        };
        let mut scaled = mu.clone();
        for at in &mut scaled.atoms {
            at.mass *= scale;
        }
        let xi = SpaceTimePoint::new(&[obs[0]], obs[1], obs[2] + 0.5);
        let p = potential_of_measure(&k, &mu, &xi).unwrap();
        let ps = potential_of_measure(&k, &scaled, &xi).unwrap();
        prop_assert!(p >= 0.0);
        prop_assert!((ps - scale * p).abs() <= 1e-12 * (1.0 + ps.abs()));
    }

    #[test]
    fn double_complement_is_identity(
        lo in prop::array::uniform2(-1.0f64..0.0), hi in prop::array::uniform2(0.0f64..1.0),
        z in prop::array::uniform3(-1.5f64..1.5),
    ) {
        let base = Primitive::Box { lo: lo.to_vec(), hi: hi.to_vec(), t: [-0.5, 0.5] };
        let single = DomainDescriptor::single(base.clone());
        let twice = DomainDescriptor {
            primitives: vec![base],
            ops: vec![SetOp::Complement { arg: 0 }, SetOp::Complement { arg: 1 }],
        };
        let p = SpaceTimePoint::new(&[z[0]], z[1], z[2]);
        prop_assert_eq!(single.contains(&p), twice.contains(&p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn capacity_is_monotone_and_subadditive_on_a_shared_cloud(
        a in -0.6f64..0.6,
        picks in prop::collection::vec((0usize..4, 0usize..4, 0usize..2, any::<bool>()), 2..10),
    ) {
        let k = Kernel::new(2, a).unwrap();
        let h = 0.25;
        let mut first = Vec::new();
        let mut second = Vec::new();
        for &(i, j, l, side) in &picks {
            let p = SpaceTimePoint::new(&[i as f64 * h], j as f64 * h, l as f64 * h);
            let target = if side { &mut first } else { &mut second };
            if !target.contains(&p) {
                target.push(p);
            }
        }
        let mut union = first.clone();
        for p in &second {
            if !union.contains(p) {
                union.push(p.clone());
            }
        }
        let cloud = constraint_cloud(&union, h, h);
        let cap = |atoms: &[SpaceTimePoint]| capacity_lp(&k, atoms, 0.5 * h, &cloud, 1e-10).unwrap().cap_estimate;
        let (c1, c2, cu) = (cap(&first), cap(&second), cap(&union));
        let slack = 1e-7 * (1.0 + cu);
        prop_assert!(c1 <= cu + slack && c2 <= cu + slack);
        prop_assert!(cu <= c1 + c2 + slack);
    }

    #[test]
    fn harnack_quotient_ignores_positive_multiples(
        a in -0.6f64..0.6, c in 0.1f64..10.0, px in -0.5f64..0.5, pt in -4.0f64..-2.0,
    ) {
        let k = Kernel::new(2, a).unwrap();
        let pole = SpaceTimePoint::new(&[px], 0.2, pt);
        let u = |z: &SpaceTimePoint| k.gamma(z, &pole);
        let cu = |z: &SpaceTimePoint| c * k.gamma(z, &pole);
        let q = harnack_quotient(&k, 1.0, &u, 0).unwrap().quotient;
        let qc = harnack_quotient(&k, 1.0, &cu, 0).unwrap().quotient;
        prop_assert!(close(q, qc, 1e-12));
    }
}
