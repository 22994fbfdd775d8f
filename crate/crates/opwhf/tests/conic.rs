use opwhf::conic::{assemble, solve, Affine, ConstraintBlock, Objective, Sense, SolveOptions, Status, VarDecl};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random LP `min cᵀx s.t. Ax ≥ b` over free x, feasible by construction
/// (b = A·x₀ − s) and bounded (c = Aᵀy₀ with y₀ ≥ 0).
fn random_lp(seed: u64, n: usize, m: usize) -> (ConstraintBlock, Objective, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let y0: Vec<f64> = (0..m).map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.1..2.0) } else { 0.0 }).collect();
    let mut blk = ConstraintBlock::new("lp");
    for j in 0..n {
        blk.var(VarDecl::free(format!("x{j}")));
    }
    let mut rhs = Vec::with_capacity(m);
    for (i, row) in a.iter().enumerate() {
        let ax: f64 = row.iter().zip(&x0).map(|(a, x)| a * x).sum();
        let b = ax - rng.gen_range(0.0..1.0);
        let mut e = Affine::default();
        for (j, c) in row.iter().enumerate() {
            e = e.add_term(format!("x{j}"), *c);
        }
        blk.row(&format!("r{i}"), e, Sense::Ge, b);
        rhs.push(b);
    }
    let mut obj = Objective::default();
    for j in 0..n {
        let c: f64 = (0..m).map(|i| a[i][j] * y0[i]).sum();
        obj.add_linear(format!("x{j}"), c);
    }
    (blk, obj, rhs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_duals_reproduce_objective(seed in 0u64..10_000, n in 2usize..6, extra in 1usize..6) {
        let m = n + extra;
        let (blk, obj, rhs) = random_lp(seed, n, m);
        let p = assemble(vec![blk], obj).unwrap();
        let opts = SolveOptions::default();
        let r = solve(&p, &opts).unwrap();
        prop_assert_eq!(r.status, Status::Optimal);
        let dual_obj: f64 = (0..m).map(|i| r.dual(&format!("lp/r{i}")).unwrap() * rhs[i]).sum();
        let scale = 1.0 + r.objective.abs();
        prop_assert!((r.objective - dual_obj).abs() <= 10.0 * opts.tol * scale,
            "primal {} dual {}", r.objective, dual_obj);
        for i in 0..m {
            let tag = format!("lp/r{}", i);
            prop_assert!(r.dual(&tag).unwrap() >= -1e-7, "{} dual negative", tag);
        }
    }

    #[test]
    fn resolve_is_reproducible(seed in 0u64..10_000) {
        let (blk, obj, _) = random_lp(seed, 4, 7);
        let p = assemble(vec![blk], obj).unwrap();
        let opts = SolveOptions::default();
        let a = solve(&p, &opts).unwrap();
        let b = solve(&p, &opts).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= opts.tol * (1.0 + a.objective.abs()));
        prop_assert_eq!(a.primal, b.primal);
    }
}

#[test]
fn empty_program_is_trivially_optimal() {
    let p = assemble(vec![], Objective::default()).unwrap();
    let r = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(r.status, Status::Optimal);
    assert_eq!(r.objective, 0.0);
}

#[test]
fn infeasible_box_is_reported_not_panicked() {
    let mut b = ConstraintBlock::new("box");
    b.var(VarDecl::free("x"));
    b.row("lo", Affine::var("x"), Sense::Ge, 1.0);
    b.row("hi", Affine::var("x"), Sense::Le, 0.0);
    let r = solve(&assemble(vec![b], Objective::default()).unwrap(), &SolveOptions::default()).unwrap();
    assert_eq!(r.status, Status::Infeasible);
}
