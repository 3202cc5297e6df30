use hlmc::dynamics::{accelerations, step_rk4, PlantState, WipParams};
use hlmc::fusion::{composite, mixture_moments};
use hlmc::nn::GaussianAction;
use hlmc::tasks::{reward, RewardConfig};
use proptest::prelude::*;

fn frictionless() -> WipParams {
    WipParams { friction_coeff: 0.0, ..WipParams::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unforced_frictionless_motion_conserves_energy(
        theta in -0.6f64..0.6, xd in -1.0f64..1.0, td in -1.0f64..1.0,
    ) {
        let p = frictionless();
        let mut s = PlantState::new(0.0, theta, xd, td);
        let e0 = p.energy(&s);
        for _ in 0..1000 {
            s = step_rk4(&p, &s, 0.0, 0.0005).unwrap();
        }
        let scale = e0.abs().max(1.0);
        prop_assert!((p.energy(&s) - e0).abs() / scale < 1e-6);
    }

    #[test]
    fn accelerations_are_odd(theta in -1.0f64..1.0, xd in -2.0f64..2.0, td in -2.0f64..2.0, u in -20.0f64..20.0) {
        let p = WipParams::default();
        let (a1, b1) = accelerations(&p, &PlantState::new(0.3, theta, xd, td), u).unwrap();
        let (a2, b2) = accelerations(&p, &PlantState::new(-0.3, -theta, -xd, -td), -u).unwrap();
        prop_assert!((a1 + a2).abs() <= 1e-9 * a1.abs().max(1.0));
        prop_assert!((b1 + b2).abs() <= 1e-9 * b1.abs().max(1.0));
    }

    #[test]
    fn composite_contracts_and_is_symmetric(
        m1 in -10.0f64..10.0, lv1 in -6.0f64..6.0, m2 in -10.0f64..10.0, lv2 in -6.0f64..6.0,
    ) {
        let (v1, v2) = (lv1.exp(), lv2.exp());
        let (m, v) = composite(m1, v1, m2, v2).unwrap();
        let (m_sw, v_sw) = composite(m2, v2, m1, v1).unwrap();
        prop_assert!(v < v1.min(v2));
        prop_assert!(m >= m1.min(m2) - 1e-12 && m <= m1.max(m2) + 1e-12);
        prop_assert!((m - m_sw).abs() <= 1e-12 * m.abs().max(1.0));
        prop_assert!((v - v_sw).abs() <= 1e-12 * v);
    }

    #[test]
    fn mixture_variance_bounds_every_member(
        comps in prop::collection::vec((-5.0f64..5.0, 0.01f64..3.0), 1..10),
    ) {
        let g: Vec<GaussianAction> = comps.iter().map(|&(m, s)| GaussianAction::new(m, s).unwrap()).collect();
        let (mu, var) = mixture_moments(&g).unwrap();
        let mean_var = g.iter().map(|c| c.variance).sum::<f64>() / g.len() as f64;
        prop_assert!(var >= mean_var * (1.0 - 1e-12));
        prop_assert!(mu >= comps.iter().map(|c| c.0).fold(f64::INFINITY, f64::min) - 1e-12);
    }

    #[test]
    fn reward_depends_only_on_error_magnitudes(
        ex in -3.0f64..3.0, et in -1.0f64..1.0, px in -3.0f64..3.0, pt in -1.0f64..1.0,
        sx in any::<bool>(), st in any::<bool>(),
    ) {
        let cfg = RewardConfig::default();
        let flip = |v: f64, s: bool| if s { -v } else { v };
        let a = reward(ex, et, px, pt, &cfg);
        let b = reward(flip(ex, sx), flip(et, st), flip(px, !sx), flip(pt, st), &cfg);
        prop_assert_eq!(a, b);
        prop_assert!(a <= 2.0);
    }
}
