//! Exact maximal-snake search.
//!
//! Snakes are grown as induced paths: a new cell must touch the current head
//! and no other body cell, which keeps every degree at most two. The search
//! runs on `u64` cell masks, so grids are limited to 64 cells regardless of the
//! configured guard.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::grid::{classify, Grid, StructureKind, Symmetry};

pub const DEFAULT_DFS_LIMIT: usize = 36;
pub const DEFAULT_ORACLE_LIMIT: usize = 20;
const MASK_BITS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnumerationError {
    #[error("grid dimensions must be positive, got {height}x{width}")]
    EmptyDimensions { height: usize, width: usize },
    #[error(
        "{height}x{width} has {cells} cells, above the search limit of {limit}; use construct/bounds instead"
    )]
    TooLarge { height: usize, width: usize, cells: usize, limit: usize },
}

/// Feasibility guards for the exact searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchLimits {
    pub dfs_cells: usize,
    pub oracle_cells: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self { dfs_cells: DEFAULT_DFS_LIMIT, oracle_cells: DEFAULT_ORACLE_LIMIT }
    }
}

impl SearchLimits {
    /// Reads `SNAKEPOLY_DFS_LIMIT` / `SNAKEPOLY_ORACLE_LIMIT`, falling back to the defaults.
    pub fn from_env() -> Self {
        let read = |key: &str, default: usize| {
            std::env::var(key).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(default)
        };
        Self {
            dfs_cells: read("SNAKEPOLY_DFS_LIMIT", DEFAULT_DFS_LIMIT),
            oracle_cells: read("SNAKEPOLY_ORACLE_LIMIT", DEFAULT_ORACLE_LIMIT),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    /// Maximum number of witnesses kept (the count stays exact).
    pub cap_witnesses: usize,
    /// Restrict start cells to one per symmetry orbit and count snakes up to symmetry.
    pub use_symmetry: bool,
    pub limits: SearchLimits,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { cap_witnesses: 16, use_symmetry: false, limits: SearchLimits::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnumerationResult {
    pub height: usize,
    pub width: usize,
    pub max_length: usize,
    /// Sorted by canonical form when symmetry reduction is on, by cell mask otherwise.
    pub witnesses: Vec<Grid>,
    /// Exact number of maximal snakes, or of symmetry classes with `use_symmetry`.
    pub count_at_max: u64,
    pub explored_states: u64,
}

impl EnumerationResult {
    /// One-line machine-readable summary.
    pub fn summary_line(&self) -> String {
        format!(
            "height={} width={} max_length={} count_at_max={} explored_states={}",
            self.height, self.width, self.max_length, self.count_at_max, self.explored_states
        )
    }
}

/// Maximal snakes returned by [`enumerate_maximal_snakes`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaximalSnakes {
    pub max_length: usize,
    pub grids: Vec<Grid>,
    /// Set when more than `cap` distinct maximal snakes exist.
    pub truncated: bool,
}

fn check_dims(height: usize, width: usize, limit: usize) -> Result<(), EnumerationError> {
    if height == 0 || width == 0 {
        return Err(EnumerationError::EmptyDimensions { height, width });
    }
    let cells = height * width;
    if cells > limit.min(MASK_BITS) {
        return Err(EnumerationError::TooLarge { height, width, cells, limit: limit.min(MASK_BITS) });
    }
    Ok(())
}

/// Precomputed neighbor masks of a rectangle.
struct Board {
    height: usize,
    width: usize,
    full: u64,
    neighbors: Vec<u64>,
}

impl Board {
    fn new(height: usize, width: usize) -> Self {
        let cells = height * width;
        let full = if cells == 64 { u64::MAX } else { (1u64 << cells) - 1 };
        let neighbors = (0..cells)
            .map(|i| {
                let (r, c) = (i / width, i % width);
                let mut m = 0u64;
                if r > 0 {
                    m |= 1 << (i - width);
                }
                if r + 1 < height {
                    m |= 1 << (i + width);
                }
                if c > 0 {
                    m |= 1 << (i - 1);
                }
                if c + 1 < width {
                    m |= 1 << (i + 1);
                }
                m
            })
            .collect();
        Self { height, width, full, neighbors }
    }

    fn to_grid(&self, mask: u64) -> Grid {
        let cells = (0..self.height * self.width).map(|i| mask >> i & 1 == 1).collect();
        Grid::from_cells(self.height, self.width, cells).expect("board dims are positive")
    }

    /// Cells reachable from `seeds` through `open`.
    fn flood(&self, seeds: u64, open: u64) -> u64 {
        let mut reached = seeds & open;
        let mut frontier = reached;
        while frontier != 0 {
            let mut next = 0;
            let mut f = frontier;
            while f != 0 {
                let i = f.trailing_zeros() as usize;
                f &= f - 1;
                next |= self.neighbors[i];
            }
            next &= open & !reached;
            reached |= next;
            frontier = next;
        }
        reached
    }

    /// One representative start cell per orbit of the rectangle's symmetry group.
    fn start_cells(&self, use_symmetry: bool) -> Vec<usize> {
        let cells = self.height * self.width;
        if !use_symmetry {
            return (0..cells).collect();
        }
        let mut seen = vec![false; cells];
        let mut reps = Vec::new();
        for i in 0..cells {
            if seen[i] {
                continue;
            }
            reps.push(i);
            let (r, c) = (i / self.width, i % self.width);
            for &sym in Symmetry::group(self.height, self.width) {
                let (nr, nc) = sym.map(r, c, self.height, self.width);
                seen[nr * self.width + nc] = true;
            }
        }
        reps
    }
}

/// Depth-first induced-path search with branch-and-bound.
struct Search<'a> {
    board: &'a Board,
    /// Prune branches whose bound cannot reach this length.
    target: usize,
    /// `true`: find the maximum (raise `target` on improvement).
    /// `false`: collect every snake of exactly `target` cells.
    maximize: bool,
    best_mask: u64,
    found: Vec<u64>,
    explored: u64,
}

impl Search<'_> {
    /// `forbidden` holds the body and every cell adjacent to the body minus the head.
    fn extend(&mut self, body: u64, head: usize, forbidden: u64, length: usize) {
        self.explored += 1;
        if self.maximize {
            if length > self.target {
                self.target = length;
                self.best_mask = body;
            }
        } else if length == self.target {
            self.found.push(body);
            return;
        }
        let candidates = self.board.neighbors[head] & !forbidden;
        if candidates == 0 {
            return;
        }
        // Future cells must avoid `forbidden` and be reachable from the head.
        let open = self.board.full & !forbidden;
        let reachable = self.board.flood(candidates, open);
        let bound = length + reachable.count_ones() as usize;
        if (self.maximize && bound <= self.target) || (!self.maximize && bound < self.target) {
            return;
        }
        let next_forbidden = forbidden | self.board.neighbors[head];
        let mut c = candidates;
        while c != 0 {
            let n = c.trailing_zeros() as usize;
            c &= c - 1;
            let bit = 1u64 << n;
            self.extend(body | bit, n, next_forbidden | bit, length + 1);
        }
    }
}

fn search_max(board: &Board, starts: &[usize]) -> (usize, u64, u64) {
    let mut s = Search { board, target: 0, maximize: true, best_mask: 0, found: Vec::new(), explored: 0 };
    for &i in starts {
        let bit = 1u64 << i;
        s.extend(bit, i, bit, 1);
    }
    (s.target, s.best_mask, s.explored)
}

fn collect_exact(board: &Board, starts: &[usize], length: usize) -> (Vec<u64>, u64) {
    let mut s = Search { board, target: length, maximize: false, best_mask: 0, found: Vec::new(), explored: 0 };
    for &i in starts {
        let bit = 1u64 << i;
        s.extend(bit, i, bit, 1);
    }
    // Each snake is reached once from each endpoint.
    let mut seen = HashSet::new();
    s.found.retain(|m| seen.insert(*m));
    (s.found, s.explored)
}

/// Exact maximal snake length L*(H, W) with witnesses.
pub fn max_snake_length(height: usize, width: usize, options: &SearchOptions) -> Result<EnumerationResult, EnumerationError> {
    check_dims(height, width, options.limits.dfs_cells)?;
    let board = Board::new(height, width);
    let starts = board.start_cells(options.use_symmetry);
    let (max_length, _, explored_max) = search_max(&board, &starts);
    let (masks, explored_all) = collect_exact(&board, &starts, max_length);

    let (count_at_max, witnesses) = if options.use_symmetry {
        let mut classes: BTreeMap<Grid, ()> = BTreeMap::new();
        for m in masks {
            classes.insert(canonical_form(&board.to_grid(m)), ());
        }
        let count = classes.len() as u64;
        (count, classes.into_keys().take(options.cap_witnesses).collect())
    } else {
        let mut masks = masks;
        masks.sort_unstable();
        let count = masks.len() as u64;
        (count, masks.into_iter().take(options.cap_witnesses).map(|m| board.to_grid(m)).collect())
    };

    Ok(EnumerationResult {
        height,
        width,
        max_length,
        witnesses,
        count_at_max,
        explored_states: explored_max + explored_all,
    })
}

/// All maximal snakes (distinct cell sets, sorted by cell mask), truncated at `cap`.
pub fn enumerate_maximal_snakes(
    height: usize,
    width: usize,
    cap: usize,
    limits: &SearchLimits,
) -> Result<MaximalSnakes, EnumerationError> {
    check_dims(height, width, limits.dfs_cells)?;
    let board = Board::new(height, width);
    let starts = board.start_cells(false);
    let (max_length, _, _) = search_max(&board, &starts);
    let (mut masks, _) = collect_exact(&board, &starts, max_length);
    masks.sort_unstable();
    let truncated = masks.len() > cap;
    masks.truncate(cap);
    Ok(MaximalSnakes { max_length, grids: masks.into_iter().map(|m| board.to_grid(m)).collect(), truncated })
}

/// Largest valid-snake length by classifying every cell subset. Independent of
/// the DFS; used to cross-check it.
pub fn subset_oracle_max(height: usize, width: usize, limits: &SearchLimits) -> Result<usize, EnumerationError> {
    check_dims(height, width, limits.oracle_cells)?;
    let cells = height * width;
    let mut best = 0;
    for subset in 0u64..(1u64 << cells) {
        let len = subset.count_ones() as usize;
        if len <= best {
            continue;
        }
        let grid = Grid::from_cells(height, width, (0..cells).map(|i| subset >> i & 1 == 1).collect())
            .expect("positive dims");
        if classify(&grid).kind == StructureKind::ValidSnake {
            best = len;
        }
    }
    Ok(best)
}

/// Alternating full rows joined by single connector cells (right end first).
/// For even heights the last odd row holds a one-cell tail.
pub fn construct_serpentine(height: usize, width: usize) -> Result<Grid, EnumerationError> {
    let mut g = Grid::new(height, width).map_err(|_| EnumerationError::EmptyDimensions { height, width })?;
    for r in 0..height {
        if r % 2 == 0 {
            for c in 0..width {
                g.set(r, c, true);
            }
        } else {
            let col = if (r / 2) % 2 == 0 { width - 1 } else { 0 };
            g.set(r, col, true);
        }
    }
    Ok(g)
}

/// Closed-form length of [`construct_serpentine`].
pub fn serpentine_length(height: usize, width: usize) -> usize {
    height.div_ceil(2) * width + height / 2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub trivial_upper: usize,
    pub serpentine_lower: usize,
    /// `known_max / (H·W)` when a maximum is known, else `serpentine_lower / (H·W)`.
    pub two_thirds_density: f64,
}

pub fn bound_report(height: usize, width: usize, known_max: Option<usize>) -> BoundReport {
    let area = height * width;
    let serpentine_lower = serpentine_length(height, width);
    let best = known_max.unwrap_or(serpentine_lower);
    BoundReport {
        trivial_upper: area,
        serpentine_lower,
        two_thirds_density: if area == 0 { 0.0 } else { best as f64 / area as f64 },
    }
}

/// Lexicographically smallest row-major image under the rectangle's symmetry group.
pub fn canonical_form(grid: &Grid) -> Grid {
    Symmetry::group(grid.height(), grid.width())
        .iter()
        .map(|&s| grid.transform(s))
        .min_by(|a, b| a.cells().cmp(b.cells()))
        .expect("group is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SearchOptions {
        SearchOptions::default()
    }

    #[test]
    fn max_length_examples() {
        assert_eq!(max_snake_length(1, 5, &opts()).unwrap().max_length, 5);
        assert_eq!(max_snake_length(2, 2, &opts()).unwrap().max_length, 3);
        assert_eq!(max_snake_length(3, 3, &opts()).unwrap().max_length, 7);
        assert_eq!(max_snake_length(2, 3, &opts()).unwrap().max_length, 5);
        assert_eq!(max_snake_length(1, 1, &opts()).unwrap().max_length, 1);
    }

    #[test]
    fn guard_refuses_large_grids() {
        let err = max_snake_length(7, 7, &opts()).unwrap_err();
        assert!(matches!(err, EnumerationError::TooLarge { cells: 49, limit: 36, .. }));
        let relaxed = SearchOptions { limits: SearchLimits { dfs_cells: 40, oracle_cells: 20 }, ..opts() };
        assert!(max_snake_length(5, 8, &relaxed).is_ok());
        assert!(subset_oracle_max(3, 7, &SearchLimits::default()).is_err());
    }

    #[test]
    fn witnesses_are_maximal_snakes() {
        let r = max_snake_length(3, 4, &SearchOptions { cap_witnesses: 1000, ..opts() }).unwrap();
        assert_eq!(r.witnesses.len() as u64, r.count_at_max);
        for w in &r.witnesses {
            let rep = classify(w);
            assert_eq!(rep.kind, StructureKind::ValidSnake);
            assert_eq!(rep.length, r.max_length);
        }
    }

    #[test]
    fn symmetry_reduction_counts_classes() {
        let plain = max_snake_length(2, 2, &opts()).unwrap();
        assert_eq!(plain.count_at_max, 4);
        let reduced = max_snake_length(2, 2, &SearchOptions { use_symmetry: true, ..opts() }).unwrap();
        assert_eq!(reduced.count_at_max, 1);
        assert_eq!(reduced.max_length, 3);

        let plain = max_snake_length(3, 4, &SearchOptions { cap_witnesses: 10_000, ..opts() }).unwrap();
        let classes: HashSet<Grid> = plain.witnesses.iter().map(canonical_form).collect();
        let reduced = max_snake_length(3, 4, &SearchOptions { use_symmetry: true, ..opts() }).unwrap();
        assert_eq!(reduced.count_at_max, classes.len() as u64);
    }

    #[test]
    fn enumerate_examples() {
        let lim = SearchLimits::default();
        let row = enumerate_maximal_snakes(1, 3, 10, &lim).unwrap();
        assert_eq!(row.grids, vec![Grid::from_rows(&[[1, 1, 1]])]);
        assert!(!row.truncated);
        let sq = enumerate_maximal_snakes(2, 2, 10, &lim).unwrap();
        assert_eq!(sq.grids.len(), 4);
        let capped = enumerate_maximal_snakes(3, 3, 2, &lim).unwrap();
        assert_eq!(capped.grids.len(), 2);
        assert!(capped.truncated);
    }

    #[test]
    fn oracle_examples() {
        let lim = SearchLimits::default();
        assert_eq!(subset_oracle_max(1, 1, &lim).unwrap(), 1);
        assert_eq!(subset_oracle_max(2, 2, &lim).unwrap(), 3);
        assert_eq!(subset_oracle_max(3, 3, &lim).unwrap(), 7);
    }

    #[test]
    fn serpentine_examples() {
        let g = construct_serpentine(1, 4).unwrap();
        assert_eq!(g, Grid::from_rows(&[[1, 1, 1, 1]]));
        let g = construct_serpentine(3, 3).unwrap();
        assert_eq!(g, Grid::from_rows(&[[1, 1, 1], [0, 0, 1], [1, 1, 1]]));
        assert_eq!(classify(&g).length, 7);
        let g = construct_serpentine(2, 3).unwrap();
        assert_eq!(classify(&g).length, 4);
        assert!(classify(&g).is_valid_snake());
        assert!(construct_serpentine(0, 3).is_err());
    }

    #[test]
    fn bound_examples() {
        let b = bound_report(3, 3, Some(7));
        assert!((b.two_thirds_density - 7.0 / 9.0).abs() < 1e-12);
        assert_eq!(bound_report(1, 5, Some(5)).two_thirds_density, 1.0);
        let b = bound_report(2, 3, None);
        assert_eq!(b.serpentine_lower, 4);
        assert_eq!(b.trivial_upper, 6);
        assert!((b.two_thirds_density - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_form_examples() {
        let ls: Vec<Grid> = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&skip| {
                let living: Vec<_> = [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().filter(|&c| c != skip).collect();
                Grid::with_living(2, 2, &living).unwrap()
            })
            .collect();
        let canon = canonical_form(&ls[0]);
        assert!(ls.iter().all(|g| canonical_form(g) == canon));
        // smallest string is 0111
        assert_eq!(canon, Grid::from_rows(&[[0, 1], [1, 1]]));
        let row = Grid::from_rows(&[[1, 1, 1]]);
        assert_eq!(canonical_form(&row), row);
    }

    #[test]
    fn summary_line_format() {
        let r = max_snake_length(1, 2, &opts()).unwrap();
        assert_eq!(r.summary_line(), "height=1 width=2 max_length=2 count_at_max=1 explored_states=".to_string() + &r.explored_states.to_string());
    }
}
