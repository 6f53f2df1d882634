//! Separability certification anchors: closest-separable-state distances on
//! the bound-entangled reference families, convergence on separable targets,
//! and the product-vector gap threshold on integer-grid chessboard states.

use qmoments::certify::{
    caratheodory_fit, caratheodory_sweep, pv_gap_direct, pv_gap_vandermonde, FitBudget, GapBudget,
    GAP_SEP_THRESHOLD,
};
use qmoments::features::chessboard_integer_grid;
use qmoments::qstate::{
    make_chessboard, make_horodecki, make_tiles, random_separable, ChessboardParams, DIMS_3X3,
};
use qmoments::seeds::SeedTree;

#[test]
fn distance_anchors_on_bound_entangled_families() {
    let budget = FitBudget::desk();
    let tiles = caratheodory_fit(&make_tiles(0.0).unwrap(), 20, &budget).unwrap();
    assert!((tiles.d_f - 0.0435).abs() <= 0.004, "tiles d_f {}", tiles.d_f);

    let h09 = caratheodory_fit(&make_horodecki(0.9).unwrap(), 20, &budget).unwrap();
    assert!((h09.d_f - 0.0028).abs() <= 0.001, "horodecki(0.9) d_f {}", h09.d_f);

    let h05 = caratheodory_fit(&make_horodecki(0.5).unwrap(), 20, &budget).unwrap();
    assert!((h05.d_f - 0.0099).abs() <= 0.003, "horodecki(0.5) d_f {}", h05.d_f);
}

#[test]
fn chessboard_distance_floor_is_k_stable() {
    let rho = make_chessboard(ChessboardParams::new(2.0, 3.0, 1.0, 2.0, 1.0, 3.0)).unwrap();
    let sweep = caratheodory_sweep(&rho, &[10, 20, 40], &FitBudget::desk()).unwrap();
    let dfs: Vec<f64> = sweep.iter().map(|d| d.d_f).collect();
    assert!(dfs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "sweep {dfs:?}");
    assert!((dfs[1] - 0.0084).abs() <= 0.003, "chessboard d_f {}", dfs[1]);
    // Bound-entangled targets keep a K-independent distance floor.
    let mean = dfs.iter().sum::<f64>() / dfs.len() as f64;
    for d in &dfs {
        assert!((d - mean).abs() <= 0.2 * mean, "unstable floor {dfs:?}");
    }
}

#[test]
fn separable_targets_converge_to_zero_distance() {
    let budget = FitBudget::desk();
    let tree = SeedTree::new(0xCE47);

    let mut rng = tree.rng("example", 0);
    let rho = random_separable(4, DIMS_3X3, &mut rng);
    let fit = caratheodory_fit(&rho, 10, &budget).unwrap();
    assert!(fit.d_f < 1e-3, "K=4 target at search K=10: {}", fit.d_f);

    for i in 0..20 {
        let mut rng = tree.rng("separable", i);
        let k_true = 2 + (i as usize) % 19;
        let rho = random_separable(k_true, DIMS_3X3, &mut rng);
        let fit = caratheodory_fit(&rho, 20, &budget).unwrap();
        assert!(fit.d_f < 1e-3, "separable target {i} (k={k_true}): d_f {}", fit.d_f);
    }
}

#[test]
fn integer_grid_gap_threshold_has_zero_separable_false_positives() {
    let budget = GapBudget::default();
    let tree = SeedTree::new(0xCE47);
    let pool = chessboard_integer_grid();
    let mut rng = tree.rng("grid", 0);

    let mut picked = Vec::new();
    while picked.len() < 20 {
        let idx = rand::Rng::random_range(&mut rng, 0..pool.len());
        if !picked.contains(&idx) {
            picked.push(idx);
        }
    }
    for (j, &idx) in picked.iter().enumerate() {
        let rho = make_chessboard(pool[idx]).unwrap();
        let direct = pv_gap_direct(&rho, 1e-8, &budget);
        assert!(
            direct.gap > GAP_SEP_THRESHOLD,
            "chessboard {idx} gap {} not above {GAP_SEP_THRESHOLD}",
            direct.gap
        );
        // Measurement-route agreement on a subset, within the conditioning
        // allowance.
        if j % 4 == 0 {
            let vand = pv_gap_vandermonde(&rho, &budget).unwrap();
            let kappa = vand.condition_number.unwrap();
            let tol = 1e-6f64.max(1e-12 * kappa);
            assert!((vand.gap - direct.gap).abs() <= tol, "routes differ: {} vs {}", vand.gap, direct.gap);
            assert!(vand.gap > GAP_SEP_THRESHOLD);
        }
    }

    // Low-rank separable mixtures sit exactly on a product vector, so the
    // same threshold never fires on them.
    for i in 0..20 {
        let mut rng = tree.rng("sep-gap", i);
        let k = 2 + (i as usize) % 7;
        let rho = random_separable(k, DIMS_3X3, &mut rng);
        let direct = pv_gap_direct(&rho, 1e-8, &budget);
        assert!(
            direct.gap < GAP_SEP_THRESHOLD,
            "separable {i} (k={k}) flagged: gap {}",
            direct.gap
        );
    }
}

#[test]
fn near_boundary_chessboard_keeps_positive_gap_under_ill_conditioning() {
    // mn/ab = 1.001: nearly separable, still PPT bound-entangled.
    let rho = make_chessboard(ChessboardParams::new(1.0, 1.0, 2.0, 1.0, 1.001, 1.0)).unwrap();
    assert!(rho.is_ppt(1e-9));
    assert_eq!(rho.rank(), 4);

    let budget = GapBudget::default();
    let direct = pv_gap_direct(&rho, 1e-8, &budget);
    assert!(direct.gap > 1e-9 && direct.gap < 1e-4, "direct {}", direct.gap);

    let vand = pv_gap_vandermonde(&rho, &budget).unwrap();
    let kappa = vand.condition_number.unwrap();
    assert!(kappa > 1e6, "kappa {kappa}");
    assert!(vand.gap > 0.0, "sign flipped: {}", vand.gap);
    assert!((vand.gap - direct.gap).abs() <= 1e-6f64.max(1e-12 * kappa));
}
