mod common;

use common::{gradcheck, GRAD_TOL};

fn check(dim: usize) {
    let report = gradcheck(dim, 7 + dim as u64, 3).unwrap();
    assert!(report.uncovered.is_empty(), "groups without parameters: {:?}", report.uncovered);
    assert!(report.worst < GRAD_TOL, "{report:?}");
}

#[test]
fn gradients_match_finite_differences_d4() {
    check(4);
}

#[test]
fn gradients_match_finite_differences_d8() {
    check(8);
}

#[test]
fn gradients_match_across_seeds() {
    for seed in 100..110 {
        for dim in [4, 8] {
            let r = gradcheck(dim, seed, 5).unwrap();
            assert!(r.worst < GRAD_TOL, "seed {seed}: {r:?}");
        }
    }
}
