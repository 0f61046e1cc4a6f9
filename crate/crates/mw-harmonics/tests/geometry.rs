use mw_harmonics::geometry::{
    cover_dyadic, dyadic, is_eta_sparse, is_martingale_sparse, martingale_witness, pow2, verify_witness, Coord, Cube,
    DyadicGrid, SparseFamily,
};
use mw_harmonics::grid::CellGrid;

fn interval(a: f64, side: f64) -> Cube {
    Cube::from_f64(&[a], side).unwrap()
}

fn half() -> Coord {
    dyadic(1, -1)
}

#[test]
fn dyadic_cube_covers_itself() {
    let q = interval(0.0, 0.5);
    let (_, r) = cover_dyadic(&q);
    assert_eq!(r, q);
    let sq = Cube::unit(2);
    let (_, r) = cover_dyadic(&sq);
    assert_eq!(r, sq);
}

/// Smallest cube of any of the three grids containing `q`, by exhaustive search over levels.
fn brute_cover_volume(q: &Cube) -> f64 {
    let mut best = f64::INFINITY;
    for grid in DyadicGrid::all(1) {
        for k in -6..6 {
            let m = grid.locate(k, q.corner());
            for dm in -1..=1 {
                let r = grid.cube(k, &[m[0] + dm]);
                if r.contains(q) {
                    best = best.min(r.volume_f64());
                }
            }
        }
    }
    best
}

#[test]
fn shifted_cover_of_small_interval() {
    let q = Cube::new(vec![Coord::new(3, 10)], Coord::new(1, 10)).unwrap();
    let (id, r) = cover_dyadic(&q);
    assert!(r.contains(&q));
    assert!(r.volume_f64() <= 0.6);
    assert!(DyadicGrid::from_id(1, id).unwrap().contains_cube(&r));
    assert!((r.volume_f64() - brute_cover_volume(&q)).abs() < 1e-12);
}

#[test]
fn cover_is_within_six_times_side() {
    for (num, den, s) in [(1i128, 7i128, 1i128), (2, 9, 1), (5, 11, 2), (13, 17, 3)] {
        let q = Cube::new(vec![Coord::new(num, den)], Coord::new(s, den)).unwrap();
        let (_, r) = cover_dyadic(&q);
        assert!(r.contains(&q));
        assert!(r.side_f64() <= 6.0 * q.side_f64(), "{q:?} -> {r:?}");
    }
}

#[test]
fn nested_chain_is_half_sparse() {
    let fam = SparseFamily::new(vec![interval(0.0, 1.0), interval(0.0, 0.5), interval(0.0, 0.25)]);
    let check = is_eta_sparse(&fam, &half()).unwrap();
    assert!(check.sparse);
    let w = check.witness.unwrap();
    assert!(verify_witness(&fam, &w, &half()));
    assert!(is_martingale_sparse(&fam, &half()).unwrap());
}

#[test]
fn one_level_tree_is_exactly_half_sparse() {
    let grid = CellGrid::unit(1, 4);
    let fam = SparseFamily::new(grid.dyadic_subcubes(&grid.domain(), 1).unwrap());
    assert_eq!(fam.cubes.len(), 3);
    let check = is_eta_sparse(&fam, &half()).unwrap();
    assert!(check.sparse);
    assert!(verify_witness(&fam, &check.witness.unwrap(), &half()));
    assert!(!is_eta_sparse(&fam, &Coord::new(3, 5)).unwrap().sparse);
}

#[test]
fn two_level_tree_overfills_the_unit_interval() {
    // Demand 3 * 1/2 exceeds the available measure 1.
    let grid = CellGrid::unit(1, 4);
    let fam = SparseFamily::new(grid.dyadic_subcubes(&grid.domain(), 2).unwrap());
    assert_eq!(fam.cubes.len(), 7);
    assert!(!is_eta_sparse(&fam, &half()).unwrap().sparse);
    assert!(is_eta_sparse(&fam, &Coord::new(1, 3)).unwrap().sparse);
}

#[test]
fn martingale_witness_removes_children() {
    let fam = SparseFamily::new(vec![interval(0.0, 1.0), interval(0.0, 0.25), interval(0.5, 0.25)]);
    let w = martingale_witness(&fam).unwrap();
    let sets = &w.witness.as_ref().unwrap().sets;
    let sizes: Vec<usize> = sets.iter().map(|s| s.len()).collect();
    assert_eq!(sizes, vec![2, 1, 1]);
    assert!(verify_witness(&w, w.witness.as_ref().unwrap(), &half()));
}

#[test]
fn duplicate_cube_splits_evenly() {
    let fam = SparseFamily::new(vec![Cube::unit(1), Cube::unit(1)]);
    let check = is_eta_sparse(&fam, &half()).unwrap();
    assert!(check.sparse);
    assert!(verify_witness(&fam, &check.witness.unwrap(), &half()));
    assert!(!is_eta_sparse(&fam, &Coord::new(3, 4)).unwrap().sparse);
}

#[test]
fn both_children_break_martingale_sparseness() {
    let fam = SparseFamily::new(vec![interval(0.0, 1.0), interval(0.0, 0.5), interval(0.5, 0.5)]);
    assert!(!is_martingale_sparse(&fam, &half()).unwrap());
}

#[test]
fn grids_are_nested_and_distinct() {
    let grids = DyadicGrid::all(2);
    assert_eq!(grids.len(), 9);
    for g in &grids {
        let q = g.cube(0, &[0, 0]);
        for c in q.children() {
            assert_eq!(g.parent(&c).unwrap(), q);
        }
        assert_eq!(DyadicGrid::grid_of(&q), Some(g.id()));
    }
    assert_eq!(pow2(-2), dyadic(1, -2));
}
