//! Comparison principle for the final-size equation written in the exponent
//! `U = −ln(S∞/(S0 − v))`:
//!
//! ```text
//! U = T_v(U),   T_v(U)(x) = ∫ β(x,y)/μ(y) [I0(y) + (S0 − v)(y)(1 − e^{−U(y)})] dy.
//! ```
//!
//! For `v1 ≤ v2` we have `T_{v2} ≤ T_{v1}`, so `U1` is a super-solution of the
//! `v2` problem; stability of `S∞(v2)` then forces `U2 ≤ U1`.

use proptest::prelude::*;

use sirvax::{post_epidemic_eigenvalue, solve_final_size, AgeDensity, EpidemicModel, Kernel, StaticAllocation, AgeGrid};

const N: usize = 24;

fn model(b: f64, width: f64) -> EpidemicModel {
    let g = AgeGrid::uniform(1.0, N).unwrap();
    let beta = Kernel::from_fn(g.clone(), |x, y| b * (-(x - y).powi(2) / width).exp()).unwrap();
    let mu = AgeDensity::from_fn(g.clone(), |x| 0.5 + x).unwrap();
    let s0 = AgeDensity::from_fn(g.clone(), |x| 1.0 + 0.5 * (3.0 * x).sin()).unwrap();
    let i0 = AgeDensity::constant(g, 1e-4).unwrap();
    EpidemicModel::new(beta, mu, s0, i0).unwrap()
}

fn exponent(m: &EpidemicModel, v: &StaticAllocation) -> (Vec<f64>, AgeDensity) {
    let s_inf = solve_final_size(m, v).unwrap().s_inf;
    let u = s_inf.values().iter().zip(m.s0().values()).zip(v.values()).map(|((s, s0), v)| -(s / (s0 - v)).ln()).collect();
    (u, s_inf)
}

/// `T_v(U)` by the trapezoid rule, written out independently of the solver.
fn t_map(m: &EpidemicModel, v: &StaticAllocation, u: &[f64]) -> Vec<f64> {
    let w = m.grid().weights();
    let mu = m.mu().values();
    let s0 = m.s0().values();
    let i0 = m.i0().values();
    (0..N)
        .map(|x| {
            (0..N)
                .map(|y| w[y] * m.beta().get(x, y) / mu[y] * (i0[y] + (s0[y] - v.values()[y]) * (-(-u[y]).exp_m1())))
                .sum()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ordered_allocations_give_ordered_exponents(
        b in 1.0f64..6.0,
        width in 0.05f64..1.0,
        base in prop::collection::vec(0.0f64..0.6, N),
        extra in prop::collection::vec(0.0f64..0.3, N),
    ) {
        let m = model(b, width);
        let s0 = m.s0().values();
        let g = m.grid().clone();
        let v1: Vec<f64> = (0..N).map(|x| base[x] * s0[x]).collect();
        let v2: Vec<f64> = (0..N).map(|x| (base[x] + extra[x]).min(0.95) * s0[x]).collect();
        let v1 = StaticAllocation::new(&m, AgeDensity::new(g.clone(), v1).unwrap()).unwrap();
        let v2 = StaticAllocation::new(&m, AgeDensity::new(g, v2).unwrap()).unwrap();

        let (u1, _) = exponent(&m, &v1);
        let (u2, s2) = exponent(&m, &v2);
        let scale = u1.iter().fold(1.0_f64, |a, b| a.max(b.abs()));
        let tol = 1e-9 * scale;

        // the solver's exponent solves its own equation
        let t1 = t_map(&m, &v1, &u1);
        for x in 0..N {
            prop_assert!((u1[x] - t1[x]).abs() <= tol, "fixed point at {x}: {} vs {}", u1[x], t1[x]);
        }
        // super-solution of the v2 problem
        let t21 = t_map(&m, &v2, &u1);
        for x in 0..N {
            prop_assert!(u1[x] >= t21[x] - tol, "super-solution fails at {x}");
        }
        let lambda = post_epidemic_eigenvalue(&m, &s2).unwrap().lambda1;
        prop_assert!(lambda > 0.0, "post-epidemic eigenvalue {lambda}");
        for x in 0..N {
            prop_assert!(u2[x] <= u1[x] + tol, "U2 > U1 at {x}: {} > {}", u2[x], u1[x]);
        }
    }
}
