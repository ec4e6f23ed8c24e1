mod common;

use ddk::mpc::{solve_qp, QpProblem};
use ddk::util::rng_from_seed;
use rand::Rng;

#[test]
fn random_box_qps_match_enumeration() {
    let mut rng = rng_from_seed(41);
    for case in 0..50 {
        let d = rng.gen_range(1..=12);
        let (h, g, lb, ub) = common::random_box_qp(&mut rng, d);
        let (best, _) = common::box_qp_oracle(&h, &g, &lb, &ub);
        let sol = solve_qp(&QpProblem::boxed(h, g, lb, ub), None).unwrap();
        assert!(
            (sol.objective - best).abs() <= 1e-6,
            "case {case} d {d}: {} vs {best}",
            sol.objective
        );
        assert!(sol.residuals.max() < 1e-6, "case {case}: {:?}", sol.residuals);
    }
}
