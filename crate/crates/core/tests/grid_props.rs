mod common;

use proptest::prelude::*;

use snakepoly::grid::{
    classify, count_motifs, parse_grid, parse_grids, serialize_grid, serialize_grids, Grid, GridError, Motif,
    StructureKind, Symmetry,
};

use common::naive_classify;

fn grid_strategy(max_side: usize) -> impl Strategy<Value = Grid> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), h * w).prop_map(move |cells| Grid::from_cells(h, w, cells).unwrap())
    })
}

proptest! {
    #[test]
    fn classify_agrees_with_naive_reference(g in grid_strategy(8)) {
        let r = classify(&g);
        let (kind, branching, cycle, multiple, length) = naive_classify(&g);
        prop_assert_eq!(r.kind.as_str(), kind);
        prop_assert_eq!(r.flags.branching, branching);
        prop_assert_eq!(r.flags.cycle, cycle);
        prop_assert_eq!(r.flags.multiple_components, multiple);
        prop_assert_eq!(r.length, length);
    }

    #[test]
    fn symmetries_preserve_structure(g in grid_strategy(7)) {
        let r = classify(&g);
        for &s in &Symmetry::ALL {
            let t = classify(&g.transform(s));
            prop_assert_eq!(t.kind, r.kind);
            prop_assert_eq!(t.flags, r.flags);
            prop_assert_eq!(t.length, r.length);
            prop_assert_eq!(t.component_count, r.component_count);
            prop_assert_eq!(t.endpoints.len(), r.endpoints.len());
            prop_assert_eq!(count_motifs(&g.transform(s), Motif::StairStep), count_motifs(&g, Motif::StairStep));
        }
    }

    #[test]
    fn valid_snakes_are_induced_paths(g in grid_strategy(6)) {
        let r = classify(&g);
        if r.kind == StructureKind::ValidSnake {
            let degrees: Vec<usize> = g.living_cells().map(|c| g.degree(c).unwrap()).collect();
            prop_assert!(degrees.iter().all(|&d| d <= 2));
            prop_assert_eq!(g.adjacent_pairs(), r.length - 1);
            if r.length >= 2 {
                prop_assert_eq!(r.endpoints.len(), 2);
            }
        }
    }

    #[test]
    fn text_format_round_trips(g in grid_strategy(9)) {
        prop_assert_eq!(parse_grid(&serialize_grid(&g)).unwrap(), g);
    }

    #[test]
    fn multi_grid_text_round_trips(gs in prop::collection::vec(grid_strategy(5), 0..6)) {
        prop_assert_eq!(parse_grids(&serialize_grids(&gs)).unwrap(), gs);
    }
}

#[test]
fn malformed_text_reports_the_line() {
    match parse_grid("2 3\n101\n1x1") {
        Err(GridError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
    match parse_grid("2 3\n101") {
        Err(GridError::Parse { .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert!(parse_grid("0 3\n").is_err());
}
