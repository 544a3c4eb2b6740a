use proptest::prelude::*;

use snakepoly::enumerate::{
    bound_report, canonical_form, construct_serpentine, enumerate_maximal_snakes, max_snake_length, serpentine_length,
    subset_oracle_max, SearchLimits, SearchOptions,
};
use snakepoly::grid::{Grid, StructureKind, Symmetry};

fn opts() -> SearchOptions {
    SearchOptions::default()
}

#[test]
fn dfs_matches_subset_oracle_up_to_twelve_cells() {
    let limits = SearchLimits::default();
    for h in 1..=12 {
        for w in 1..=12 {
            if h * w <= 12 {
                let dfs = max_snake_length(h, w, &opts()).unwrap().max_length;
                assert_eq!(dfs, subset_oracle_max(h, w, &limits).unwrap(), "{h}x{w}");
            }
        }
    }
}

#[test]
fn max_length_is_monotone_and_transpose_invariant() {
    let l = |h, w| max_snake_length(h, w, &opts()).unwrap().max_length;
    for h in 1..=6 {
        for w in 1..=6 {
            if h * (w + 1) <= 36 {
                assert!(l(h, w) <= l(h, w + 1), "{h}x{w}");
            }
            if h * w <= 30 {
                assert_eq!(l(h, w), l(w, h), "{h}x{w}");
            }
        }
    }
}

#[test]
fn known_desk_scale_values() {
    let l = |h, w| max_snake_length(h, w, &opts()).unwrap().max_length;
    assert_eq!(l(4, 4), 11);
    assert_eq!(l(4, 6), 17);
    assert_eq!(l(5, 5), 17);
    assert_eq!(l(6, 6), 24);
}

#[test]
fn maximal_snakes_are_distinct_valid_and_closed_under_symmetry() {
    for (h, w) in [(3, 3), (3, 4), (4, 4), (2, 7)] {
        let found = enumerate_maximal_snakes(h, w, usize::MAX, &SearchLimits::default()).unwrap();
        assert!(!found.truncated);
        let mut seen = std::collections::BTreeSet::new();
        for g in &found.grids {
            let r = g.classify();
            assert_eq!(r.kind, StructureKind::ValidSnake);
            assert_eq!(r.length, found.max_length);
            assert!(seen.insert(g.clone()), "duplicate");
        }
        for g in &found.grids {
            for &s in Symmetry::group(h, w) {
                assert!(seen.contains(&g.transform(s)));
            }
        }
        let count = max_snake_length(h, w, &opts()).unwrap().count_at_max;
        assert_eq!(count as usize, found.grids.len());
    }
}

/// Rebuilds each witness by growing a path from one endpoint, checking that
/// every added cell touches exactly one cell already in the body.
#[test]
fn witnesses_grow_as_induced_paths() {
    let res = max_snake_length(5, 6, &SearchOptions { cap_witnesses: 8, ..opts() }).unwrap();
    assert!(!res.witnesses.is_empty());
    for g in &res.witnesses {
        let r = g.classify();
        let mut body = Grid::new(5, 6).unwrap();
        let mut head = r.endpoints[0];
        body.set(head.0, head.1, true);
        for _ in 1..r.length {
            let next = g
                .neighbors(head.0, head.1)
                .find(|&(a, b)| g.get(a, b) && !body.get(a, b))
                .expect("path continues");
            let touching = body.neighbors(next.0, next.1).filter(|&(a, b)| body.get(a, b)).count();
            assert_eq!(touching, 1);
            body.set(next.0, next.1, true);
            head = next;
        }
        assert_eq!(&body, g);
    }
}

#[test]
fn serpentine_is_valid_with_closed_form_length() {
    for h in 1..=30 {
        for w in 1..=30 {
            let g = construct_serpentine(h, w).unwrap();
            let r = g.classify();
            assert_eq!(r.kind, StructureKind::ValidSnake, "{h}x{w}");
            assert_eq!(r.length, h.div_ceil(2) * w + h / 2, "{h}x{w}");
            assert_eq!(serpentine_length(h, w), r.length);
        }
    }
    assert_eq!(bound_report(2, 3, None).serpentine_lower, 4);
}

proptest! {
    #[test]
    fn canonical_form_is_idempotent_and_symmetry_invariant(
        (h, w, cells) in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(any::<bool>(), h * w)))
    ) {
        let g = Grid::from_cells(h, w, cells).unwrap();
        let c = canonical_form(&g);
        prop_assert_eq!(canonical_form(&c), c.clone());
        for &s in Symmetry::group(h, w) {
            prop_assert_eq!(canonical_form(&g.transform(s)), c.clone());
        }
    }
}
