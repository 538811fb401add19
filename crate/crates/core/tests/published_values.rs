//! Values printed in the original tables and worked examples.

use ptomo_core::circuits::{design_w_circuit, w_example_tree_6};
use ptomo_core::hashfam::{
    binary_expansion_family, is_perfect, plan_fqst, plan_from_family, plan_lqst, plan_pqst, published_9_3_family, solve_cover,
    SolveMode,
};

const K2_ROWS: [usize; 7] = [3, 3, 3, 4, 4, 4, 4];
const K3_ROWS: [usize; 7] = [3, 4, 4, 4, 5, 6, 10];

#[test]
fn binary_expansion_row_counts() {
    for (n, &rows) in (6..=12).zip(&K2_ROWS) {
        let fam = binary_expansion_family(n).unwrap();
        assert_eq!(fam.len(), rows, "n = {n}");
        assert!(is_perfect(&fam).is_ok());
    }
}

#[test]
fn pairwise_plan_sizes() {
    let counts: Vec<usize> = (6..=12).map(|n| plan_pqst(n, 2).unwrap().len()).collect();
    assert_eq!(counts, [21, 21, 21, 27, 27, 27, 27]);
}

#[test]
fn published_three_local_family() {
    let fam = published_9_3_family();
    assert_eq!((fam.n(), fam.k(), fam.len()), (9, 3, 4));
    assert!(is_perfect(&fam).is_ok());
    assert_eq!(plan_from_family(&fam).unwrap().len(), 99);
}

#[test]
fn three_local_families_are_within_table() {
    for (n, &rows) in (6..=10).zip(&K3_ROWS) {
        let fam = solve_cover(n, 3, SolveMode::Exact).unwrap();
        assert!(is_perfect(&fam).is_ok());
        assert!(fam.len() <= rows, "n = {n}: {} rows", fam.len());
    }
}

#[test]
fn baseline_plan_sizes() {
    assert_eq!(plan_lqst(12, 2).unwrap().len(), 594);
    assert_eq!(plan_lqst(12, 3).unwrap().len(), 5940);
    assert_eq!(plan_fqst(6, false).unwrap().len(), 729);
}

#[test]
fn six_qubit_w_example_parameters() {
    let (_, params) = design_w_circuit(&w_example_tree_6(), 3).unwrap();
    assert_eq!(params[0].p, 0.5);
    assert!((params[1].p - 2.0 / 3.0).abs() < 1e-15);
}
