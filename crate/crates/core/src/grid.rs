//! Binary cell grids, 4-connexity structure analysis and the plain text / PBM
//! formats used everywhere else in the crate.

use std::fmt;

use thiserror::Error;

/// `(row, column)` cell coordinate.
pub type Coord = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {height}x{width}")]
    EmptyDimensions { height: usize, width: usize },
    #[error("cell count {got} does not match {height}x{width}")]
    CellCount { height: usize, width: usize, got: usize },
    #[error("cell ({row}, {col}) is outside the {height}x{width} grid")]
    OutOfBounds { row: usize, col: usize, height: usize, width: usize },
    #[error("cell ({row}, {col}) is dead; degree is defined for living cells only")]
    DeadCell { row: usize, col: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// An H×W matrix of living (`true`) and dead (`false`) cells.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Grid {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl Grid {
    /// All-dead grid.
    pub fn new(height: usize, width: usize) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::EmptyDimensions { height, width });
        }
        Ok(Self { height, width, cells: vec![false; height * width] })
    }

    pub fn from_cells(height: usize, width: usize, cells: Vec<bool>) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::EmptyDimensions { height, width });
        }
        if cells.len() != height * width {
            return Err(GridError::CellCount { height, width, got: cells.len() });
        }
        Ok(Self { height, width, cells })
    }

    /// Builds a grid from rows of `0`/`1` integers. Panics on ragged input; meant for tests
    /// and literals.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut cells = Vec::with_capacity(height * width);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), width, "ragged rows");
            cells.extend(row.iter().map(|&v| v != 0));
        }
        Self::from_cells(height, width, cells).expect("non-empty grid")
    }

    /// Grid with the given living cells.
    pub fn with_living(height: usize, width: usize, living: &[Coord]) -> Result<Self, GridError> {
        let mut g = Self::new(height, width)?;
        for &(r, c) in living {
            g.check_bounds(r, c)?;
            g.set(r, c, true);
        }
        Ok(g)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// Row-major cells.
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, alive: bool) {
        self.cells[row * self.width + col] = alive;
    }

    pub fn living_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn living_cells(&self) -> impl Iterator<Item = Coord> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(i, _)| (i / self.width, i % self.width))
    }

    fn check_bounds(&self, row: usize, col: usize) -> Result<(), GridError> {
        if row >= self.height || col >= self.width {
            return Err(GridError::OutOfBounds { row, col, height: self.height, width: self.width });
        }
        Ok(())
    }

    /// In-bounds 4-neighbors of a cell.
    pub fn neighbors(&self, row: usize, col: usize) -> impl Iterator<Item = Coord> {
        let (h, w) = (self.height, self.width);
        let up = (row > 0).then(|| (row - 1, col));
        let down = (row + 1 < h).then(|| (row + 1, col));
        let left = (col > 0).then(|| (row, col - 1));
        let right = (col + 1 < w).then(|| (row, col + 1));
        [up, down, left, right].into_iter().flatten()
    }

    fn living_neighbor_count(&self, row: usize, col: usize) -> usize {
        self.neighbors(row, col).filter(|&(r, c)| self.get(r, c)).count()
    }

    /// Number of living 4-neighbors of a living cell.
    pub fn degree(&self, cell: Coord) -> Result<usize, GridError> {
        let (row, col) = cell;
        self.check_bounds(row, col)?;
        if !self.get(row, col) {
            return Err(GridError::DeadCell { row, col });
        }
        Ok(self.living_neighbor_count(row, col))
    }

    /// Number of edge-adjacent living pairs.
    pub fn adjacent_pairs(&self) -> usize {
        let mut n = 0;
        for r in 0..self.height {
            for c in 0..self.width {
                if !self.get(r, c) {
                    continue;
                }
                if c + 1 < self.width && self.get(r, c + 1) {
                    n += 1;
                }
                if r + 1 < self.height && self.get(r + 1, c) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Maximal 4-connected sets of living cells, ordered by their smallest
    /// row-major coordinate. Cells inside a component are sorted row-major.
    pub fn components(&self) -> Vec<Vec<Coord>> {
        let mut label = vec![usize::MAX; self.cells.len()];
        let mut out: Vec<Vec<Coord>> = Vec::new();
        let mut stack = Vec::new();
        for start in 0..self.cells.len() {
            if !self.cells[start] || label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = Vec::new();
            label[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (r, c) = (i / self.width, i % self.width);
                comp.push((r, c));
                for (nr, nc) in self.neighbors(r, c) {
                    let j = nr * self.width + nc;
                    if self.cells[j] && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn classify(&self) -> StructureReport {
        classify(self)
    }

    /// Image of this grid under a dihedral symmetry.
    pub fn transform(&self, sym: Symmetry) -> Grid {
        let (h, w) = (self.height, self.width);
        let (nh, nw) = if sym.swaps_axes() { (w, h) } else { (h, w) };
        let mut out = Grid { height: nh, width: nw, cells: vec![false; h * w] };
        for r in 0..h {
            for c in 0..w {
                if self.get(r, c) {
                    let (nr, nc) = sym.map(r, c, h, w);
                    out.set(nr, nc, true);
                }
            }
        }
        out
    }

    /// Copy of the top-left `height`×`width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Grid, GridError> {
        if height > self.height || width > self.width {
            return Err(GridError::OutOfBounds {
                row: height.saturating_sub(1),
                col: width.saturating_sub(1),
                height: self.height,
                width: self.width,
            });
        }
        let mut g = Grid::new(height, width)?;
        for r in 0..height {
            for c in 0..width {
                g.set(r, c, self.get(r, c));
            }
        }
        Ok(g)
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid({}x{})", self.height, self.width)?;
        for r in 0..self.height {
            f.write_str("\n  ")?;
            for c in 0..self.width {
                f.write_str(if self.get(r, c) { "#" } else { "." })?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_grid(self))
    }
}

/// The eight symmetries of the square. On a non-square rectangle only the
/// first four (which preserve the dimensions) map the grid onto itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symmetry {
    Identity,
    Rotate180,
    MirrorRows,
    MirrorCols,
    Transpose,
    AntiTranspose,
    Rotate90,
    Rotate270,
}

impl Symmetry {
    pub const ALL: [Symmetry; 8] = [
        Symmetry::Identity,
        Symmetry::Rotate180,
        Symmetry::MirrorRows,
        Symmetry::MirrorCols,
        Symmetry::Transpose,
        Symmetry::AntiTranspose,
        Symmetry::Rotate90,
        Symmetry::Rotate270,
    ];

    /// Symmetries mapping an `height`×`width` rectangle onto itself.
    pub fn group(height: usize, width: usize) -> &'static [Symmetry] {
        if height == width {
            &Self::ALL
        } else {
            &Self::ALL[..4]
        }
    }

    pub fn swaps_axes(self) -> bool {
        matches!(self, Symmetry::Transpose | Symmetry::AntiTranspose | Symmetry::Rotate90 | Symmetry::Rotate270)
    }

    /// Where cell `(r, c)` of an `h`×`w` grid lands.
    pub fn map(self, r: usize, c: usize, h: usize, w: usize) -> Coord {
        match self {
            Symmetry::Identity => (r, c),
            Symmetry::Rotate180 => (h - 1 - r, w - 1 - c),
            // MirrorRows flips top/bottom, MirrorCols flips left/right.
            Symmetry::MirrorRows => (h - 1 - r, c),
            Symmetry::MirrorCols => (r, w - 1 - c),
            Symmetry::Transpose => (c, r),
            Symmetry::AntiTranspose => (w - 1 - c, h - 1 - r),
            // clockwise
            Symmetry::Rotate90 => (c, h - 1 - r),
            Symmetry::Rotate270 => (w - 1 - c, r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructureKind {
    Empty,
    ValidSnake,
    Malformed,
}

impl StructureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StructureKind::Empty => "EMPTY",
            StructureKind::ValidSnake => "VALID_SNAKE",
            StructureKind::Malformed => "MALFORMED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Malformation {
    Branching,
    Cycle,
    MultipleComponents,
}

impl Malformation {
    pub const ALL: [Malformation; 3] = [Malformation::Branching, Malformation::Cycle, Malformation::MultipleComponents];

    pub fn as_str(self) -> &'static str {
        match self {
            Malformation::Branching => "BRANCHING",
            Malformation::Cycle => "CYCLE",
            Malformation::MultipleComponents => "MULTIPLE_COMPONENTS",
        }
    }
}

/// Set of malformation flags; flags may co-occur.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct MalformationFlags {
    pub branching: bool,
    pub cycle: bool,
    pub multiple_components: bool,
}

impl MalformationFlags {
    pub fn is_empty(&self) -> bool {
        !(self.branching || self.cycle || self.multiple_components)
    }

    pub fn contains(&self, m: Malformation) -> bool {
        match m {
            Malformation::Branching => self.branching,
            Malformation::Cycle => self.cycle,
            Malformation::MultipleComponents => self.multiple_components,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Malformation> + '_ {
        Malformation::ALL.into_iter().filter(|&m| self.contains(m))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureReport {
    pub kind: StructureKind,
    pub flags: MalformationFlags,
    /// Number of living cells.
    pub length: usize,
    pub component_count: usize,
    /// Living cells of degree ≤ 1, row-major.
    pub endpoints: Vec<Coord>,
    pub max_degree: usize,
}

impl StructureReport {
    pub fn is_valid_snake(&self) -> bool {
        self.kind == StructureKind::ValidSnake
    }
}

impl fmt::Display for StructureReport {
    /// Single-line `key=value` record.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flags: Vec<&str> = self.flags.iter().map(Malformation::as_str).collect();
        let ends: Vec<String> = self.endpoints.iter().map(|(r, c)| format!("{r}:{c}")).collect();
        write!(
            f,
            "kind={} flags={} length={} components={} max_degree={} endpoints={}",
            self.kind.as_str(),
            if flags.is_empty() { "-".to_string() } else { flags.join(",") },
            self.length,
            self.component_count,
            self.max_degree,
            if ends.is_empty() { "-".to_string() } else { ends.join(",") },
        )
    }
}

/// Classifies a grid as empty, a valid snake (an induced path, including the
/// single cell and the domino) or malformed.
pub fn classify(grid: &Grid) -> StructureReport {
    let components = grid.components();
    let mut flags = MalformationFlags::default();
    let mut endpoints = Vec::new();
    let mut max_degree = 0;
    let mut length = 0;

    for comp in &components {
        let mut degree_sum = 0;
        for &(r, c) in comp {
            let d = grid.living_neighbor_count(r, c);
            degree_sum += d;
            max_degree = max_degree.max(d);
            if d <= 1 {
                endpoints.push((r, c));
            }
        }
        // A connected component with as many edges as cells contains a cycle.
        if degree_sum / 2 >= comp.len() {
            flags.cycle = true;
        }
        length += comp.len();
    }
    endpoints.sort_unstable();
    flags.branching = max_degree >= 3;
    flags.multiple_components = components.len() >= 2;

    let kind = if components.is_empty() {
        StructureKind::Empty
    } else if flags.is_empty() {
        StructureKind::ValidSnake
    } else {
        StructureKind::Malformed
    };
    StructureReport { kind, flags, length, component_count: components.len(), endpoints, max_degree }
}

/// Living-cell densities on the border ring and in the interior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityProfile {
    pub overall: f64,
    pub border: f64,
    /// 0 when the grid has no interior.
    pub interior: f64,
    pub has_interior: bool,
    pub living: usize,
    pub living_border: usize,
    pub border_cells: usize,
    pub living_interior: usize,
    pub interior_cells: usize,
}

pub fn density_profile(grid: &Grid) -> DensityProfile {
    let (h, w) = grid.dims();
    let mut living_border = 0;
    let mut living_interior = 0;
    let mut border_cells = 0;
    let mut interior_cells = 0;
    for r in 0..h {
        for c in 0..w {
            let on_border = r == 0 || r == h - 1 || c == 0 || c == w - 1;
            let alive = grid.get(r, c) as usize;
            if on_border {
                border_cells += 1;
                living_border += alive;
            } else {
                interior_cells += 1;
                living_interior += alive;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    DensityProfile {
        overall: ratio(living_border + living_interior, h * w),
        border: ratio(living_border, border_cells),
        interior: ratio(living_interior, interior_cells),
        has_interior: interior_cells > 0,
        living: living_border + living_interior,
        living_border,
        border_cells,
        living_interior,
        interior_cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Motif {
    /// A 2×2 window holding an L-tromino.
    StairStep,
    /// Six dead cells in rows of 3, 2 and 1 sharing a right-angle corner.
    DeadTriangle,
}

/// Offsets of the 3-2-1 dead triangle with its right angle at the top-left of
/// a 3×3 box; the other orientations are mirror images.
const TRIANGLE: [Coord; 6] = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0)];

pub fn count_motifs(grid: &Grid, motif: Motif) -> usize {
    let (h, w) = grid.dims();
    match motif {
        Motif::StairStep => {
            let mut n = 0;
            for r in 0..h.saturating_sub(1) {
                for c in 0..w.saturating_sub(1) {
                    let alive = [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)]
                        .iter()
                        .filter(|&&(rr, cc)| grid.get(rr, cc))
                        .count();
                    if alive == 3 {
                        n += 1;
                    }
                }
            }
            n
        }
        Motif::DeadTriangle => {
            let mut n = 0;
            for r in 0..h.saturating_sub(2) {
                for c in 0..w.saturating_sub(2) {
                    for (flip_r, flip_c) in [(false, false), (false, true), (true, false), (true, true)] {
                        let all_dead = TRIANGLE.iter().all(|&(dr, dc)| {
                            let rr = if flip_r { r + 2 - dr } else { r + dr };
                            let cc = if flip_c { c + 2 - dc } else { c + dc };
                            !grid.get(rr, cc)
                        });
                        if all_dead {
                            n += 1;
                        }
                    }
                }
            }
            n
        }
    }
}

/// Text form: `"H W"` header then H rows of `0`/`1`, LF separated, no trailing newline.
pub fn serialize_grid(grid: &Grid) -> String {
    let mut s = format!("{} {}", grid.height, grid.width);
    for r in 0..grid.height {
        s.push('\n');
        for c in 0..grid.width {
            s.push(if grid.get(r, c) { '1' } else { '0' });
        }
    }
    s
}

pub fn parse_grid(text: &str) -> Result<Grid, GridError> {
    parse_block(&text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect::<Vec<_>>())
}

fn parse_block(lines: &[(usize, &str)]) -> Result<Grid, GridError> {
    let &(header_line, header) =
        lines.first().ok_or(GridError::Parse { line: 1, message: "missing header".into() })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || GridError::Parse { line: header_line, message: format!("malformed header {header:?}") };
    if parts.len() != 2 {
        return Err(bad_header());
    }
    let height: usize = parts[0].parse().map_err(|_| bad_header())?;
    let width: usize = parts[1].parse().map_err(|_| bad_header())?;
    if height == 0 || width == 0 {
        return Err(bad_header());
    }
    let rows = &lines[1..];
    if rows.len() != height {
        let line = rows.last().map(|&(l, _)| l + 1).unwrap_or(header_line + 1);
        return Err(GridError::Parse { line, message: format!("expected {height} rows, found {}", rows.len()) });
    }
    let mut cells = Vec::with_capacity(height * width);
    for &(line, row) in rows {
        let row = row.strip_suffix('\r').unwrap_or(row);
        if row.chars().count() != width {
            return Err(GridError::Parse { line, message: format!("expected {width} cells, found {}", row.chars().count()) });
        }
        for ch in row.chars() {
            match ch {
                '0' => cells.push(false),
                '1' => cells.push(true),
                other => {
                    return Err(GridError::Parse { line, message: format!("invalid cell character {other:?}") })
                }
            }
        }
    }
    Grid::from_cells(height, width, cells)
}

/// Parses zero or more grids separated by blank lines.
pub fn parse_grids(text: &str) -> Result<Vec<Grid>, GridError> {
    let mut grids = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                grids.push(parse_block(&block)?);
                block.clear();
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        grids.push(parse_block(&block)?);
    }
    Ok(grids)
}

/// Grids as blank-line separated blocks, with a trailing newline.
pub fn serialize_grids<'a>(grids: impl IntoIterator<Item = &'a Grid>) -> String {
    let mut out = String::new();
    for g in grids {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&serialize_grid(g));
        out.push('\n');
    }
    out
}

/// Plain PBM (P1), one pixel per cell, living = 1 (black).
pub fn render_pbm(grid: &Grid) -> Vec<u8> {
    let mut s = format!("P1\n{} {}\n", grid.width, grid.height);
    for r in 0..grid.height {
        let row: Vec<&str> = (0..grid.width).map(|c| if grid.get(r, c) { "1" } else { "0" }).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s.into_bytes()
}
