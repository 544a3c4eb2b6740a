//! Training sets of maximal snakes: construction from the exact enumerator,
//! dihedral augmentation, padding into network-sized canvases, a compact binary
//! file format and batch sampling.
//!
//! File layout (little-endian): magic `SNKD`, u32 version, u32 record count, then
//! per record u16 H, u16 W and ⌈H·W/8⌉ bytes of row-major cell bits (bit `i % 8`
//! of byte `i / 8` holds cell `i`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{binarize, rng_for, RealImage};
use crate::enumerate::{enumerate_maximal_snakes, max_snake_length, EnumerationError, SearchLimits, SearchOptions};
use crate::grid::{Grid, Symmetry};

pub const DATASET_MAGIC: &[u8; 4] = b"SNKD";
pub const DATASET_VERSION: u32 = 1;
/// Desk-scale default: every size with 1 ≤ H ≤ W and H·W ≤ this many cells.
pub const DESK_MAX_CELLS: usize = 36;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("size {height}x{width} cannot be enumerated: {source}")]
    Size {
        height: usize,
        width: usize,
        #[source]
        source: EnumerationError,
    },
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("not a dataset file (bad magic)")]
    Magic,
    #[error("unsupported dataset version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("truncated dataset header")]
    TruncatedHeader,
    #[error("trailing bytes after the last record")]
    TrailingBytes,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which sizes to enumerate and how many snakes to keep per size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub sizes: Vec<(usize, usize)>,
    pub per_size_cap: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { sizes: desk_sizes(DESK_MAX_CELLS), per_size_cap: 10_000, augment: true, seed: 0 }
    }
}

/// All `(H, W)` with `1 ≤ H ≤ W` and `H·W ≤ max_cells`, ordered by H then W.
pub fn desk_sizes(max_cells: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for h in 1..=max_cells {
        for w in h..=max_cells {
            if h * w <= max_cells {
                out.push((h, w));
            }
        }
    }
    out
}

/// An ordered collection of snake grids plus the format version it came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetFile {
    pub version: u32,
    pub records: Vec<Grid>,
}

impl DatasetFile {
    pub fn new(records: Vec<Grid>) -> Self {
        Self { version: DATASET_VERSION, records }
    }

    /// Record count per size, in size order.
    pub fn size_histogram(&self) -> BTreeMap<(usize, usize), usize> {
        let mut hist = BTreeMap::new();
        for g in &self.records {
            *hist.entry(g.dims()).or_insert(0) += 1;
        }
        hist
    }
}

/// Distinct images of `grid` under the symmetries of its rectangle, sorted.
pub fn augment_dihedral(grid: &Grid) -> Vec<Grid> {
    let (h, w) = grid.dims();
    let orbit: BTreeSet<Grid> = Symmetry::group(h, w).iter().map(|&s| grid.transform(s)).collect();
    orbit.into_iter().collect()
}

/// Enumerates maximal snakes for each size of `spec`. When a size has more than
/// `per_size_cap` snakes, a seeded random subset is kept. Records are grouped by
/// size (in spec order) and sorted within a size.
pub fn build_dataset(spec: &DatasetSpec, limits: &SearchLimits) -> Result<DatasetFile, DatasetError> {
    if spec.per_size_cap == 0 {
        return Err(DatasetError::Spec("per_size_cap must be positive".into()));
    }
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (i, &(h, w)) in spec.sizes.iter().enumerate() {
        if !seen.insert((h, w)) {
            return Err(DatasetError::Spec(format!("size {h}x{w} listed twice")));
        }
        let found = enumerate_maximal_snakes(h, w, usize::MAX, limits)
            .map_err(|source| DatasetError::Size { height: h, width: w, source })?;
        let mut set: BTreeSet<Grid> = found.grids.into_iter().collect();
        if spec.augment {
            let extra: Vec<Grid> = set.iter().flat_map(augment_dihedral).collect();
            set.extend(extra);
        }
        let mut grids: Vec<Grid> = set.into_iter().collect();
        if grids.len() > spec.per_size_cap {
            grids.shuffle(&mut rng_for(spec.seed, i as u64));
            grids.truncate(spec.per_size_cap);
            grids.sort();
        }
        records.extend(grids);
    }
    Ok(DatasetFile::new(records))
}

/// Grids placed top-left on a shared zero canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub images: Vec<RealImage>,
    /// Per image, `true` on cells belonging to the original grid.
    pub masks: Vec<Vec<bool>>,
    pub dims: Vec<(usize, usize)>,
    pub canvas: (usize, usize),
}

impl PaddedBatch {
    /// The original grids, recovered by binarizing and cropping each image.
    pub fn crop_back(&self) -> Vec<Grid> {
        self.images
            .iter()
            .zip(&self.dims)
            .map(|(img, &(h, w))| binarize(&crop_image(img, h, w)))
            .collect()
    }
}

/// Smallest multiple of `multiple` that is at least `n`.
pub fn round_up(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple) * multiple
}

/// Canvas dimensions for a grid of the given size.
pub fn canvas_for(dims: (usize, usize), multiple: usize) -> (usize, usize) {
    (round_up(dims.0, multiple), round_up(dims.1, multiple))
}

pub fn pad_batch<'a>(
    grids: impl IntoIterator<Item = &'a Grid>,
    multiple: usize,
) -> Result<PaddedBatch, DatasetError> {
    if multiple == 0 {
        return Err(DatasetError::Spec("padding multiple must be at least 1".into()));
    }
    let grids: Vec<&Grid> = grids.into_iter().collect();
    if grids.is_empty() {
        return Err(DatasetError::EmptyBatch);
    }
    let max_h = grids.iter().map(|g| g.height()).max().unwrap_or(0);
    let max_w = grids.iter().map(|g| g.width()).max().unwrap_or(0);
    let canvas = canvas_for((max_h, max_w), multiple);
    let mut images = Vec::with_capacity(grids.len());
    let mut masks = Vec::with_capacity(grids.len());
    for g in &grids {
        let mut img = RealImage::zeros(canvas.0, canvas.1);
        let mut mask = vec![false; canvas.0 * canvas.1];
        for r in 0..g.height() {
            for c in 0..g.width() {
                mask[r * canvas.1 + c] = true;
                if g.get(r, c) {
                    img.set(r, c, 1.0);
                }
            }
        }
        images.push(img);
        masks.push(mask);
    }
    Ok(PaddedBatch { images, masks, dims: grids.iter().map(|g| g.dims()).collect(), canvas })
}

/// Top-left `height`×`width` window of an image.
pub fn crop_image(img: &RealImage, height: usize, width: usize) -> RealImage {
    assert!(height <= img.height() && width <= img.width(), "crop window exceeds image");
    let values = (0..height).flat_map(|r| (0..width).map(move |c| img.get(r, c))).collect();
    RealImage::from_values(height, width, values).expect("window size")
}

pub fn write_dataset<W: Write>(mut w: W, file: &DatasetFile) -> Result<(), DatasetError> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    let count = u32::try_from(file.records.len()).map_err(|_| DatasetError::Spec("too many records".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (index, g) in file.records.iter().enumerate() {
        let (h, wd) = g.dims();
        let (h16, w16) = match (u16::try_from(h), u16::try_from(wd)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err(DatasetError::Record { index, message: format!("size {h}x{wd} exceeds u16") }),
        };
        w.write_all(&h16.to_le_bytes())?;
        w.write_all(&w16.to_le_bytes())?;
        let mut bytes = vec![0u8; (h * wd).div_ceil(8)];
        for (i, &alive) in g.cells().iter().enumerate() {
            if alive {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// How much checking [`read_dataset`] performs per record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    /// Decode only.
    None,
    /// Every record must be a valid snake of its size's maximal length. The
    /// maximal length comes from the enumerator when the size is within
    /// `limits`, otherwise from the first record of that size.
    Full { limits: SearchLimits },
}

impl Default for Validation {
    fn default() -> Self {
        Validation::Full { limits: SearchLimits::default() }
    }
}

pub fn read_dataset<R: Read>(mut r: R, validation: Validation) -> Result<DatasetFile, DatasetError> {
    let mut header = [0u8; 12];
    let mut got = 0;
    while got < header.len() {
        let n = r.read(&mut header[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got < 4 || &header[..4] != DATASET_MAGIC {
        return Err(if got < 4 { DatasetError::TruncatedHeader } else { DatasetError::Magic });
    }
    if got < header.len() {
        return Err(DatasetError::TruncatedHeader);
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != DATASET_VERSION {
        return Err(DatasetError::Version { found: version, expected: DATASET_VERSION });
    }
    let count = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let mut lengths: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let truncated = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => DatasetError::Record { index, message: "truncated".into() },
            _ => DatasetError::Io(e),
        };
        let mut dims = [0u8; 4];
        r.read_exact(&mut dims).map_err(truncated)?;
        let h = u16::from_le_bytes([dims[0], dims[1]]) as usize;
        let w = u16::from_le_bytes([dims[2], dims[3]]) as usize;
        if h == 0 || w == 0 {
            return Err(DatasetError::Record { index, message: format!("empty dimensions {h}x{w}") });
        }
        let mut bytes = vec![0u8; (h * w).div_ceil(8)];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let cells = (0..h * w).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        let grid = Grid::from_cells(h, w, cells).expect("sized");
        if let Validation::Full { limits } = validation {
            validate_record(&grid, index, &mut lengths, &limits)?;
        }
        records.push(grid);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(DatasetError::TrailingBytes);
    }
    Ok(DatasetFile { version, records })
}

fn validate_record(
    grid: &Grid,
    index: usize,
    lengths: &mut BTreeMap<(usize, usize), usize>,
    limits: &SearchLimits,
) -> Result<(), DatasetError> {
    let report = grid.classify();
    if !report.is_valid_snake() {
        return Err(DatasetError::Record { index, message: format!("not a valid snake ({report})") });
    }
    let (h, w) = grid.dims();
    let expected = match lengths.get(&(h, w)) {
        Some(&l) => l,
        None => {
            let opts = SearchOptions { cap_witnesses: 0, use_symmetry: true, limits: *limits };
            let l = max_snake_length(h, w, &opts).map(|r| r.max_length).unwrap_or(report.length);
            lengths.insert((h, w), l);
            l
        }
    };
    if report.length != expected {
        return Err(DatasetError::Record {
            index,
            message: format!("snake length {} but maximal length for {h}x{w} is {expected}", report.length),
        });
    }
    Ok(())
}

pub fn save_dataset(file: &DatasetFile, path: &Path) -> Result<(), DatasetError> {
    write_dataset(BufWriter::new(File::create(path)?), file)
}

pub fn load_dataset(path: &Path, validation: Validation) -> Result<DatasetFile, DatasetError> {
    read_dataset(BufReader::new(File::open(path)?), validation)
}

/// How training batches draw from a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchPolicy {
    /// Pick one grid size uniformly, then draw every batch member from that size.
    #[default]
    Stratified,
    /// Draw records uniformly from the whole dataset, padding to the batch maximum.
    Uniform,
}

/// Draws batches (with replacement) from a dataset.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    records: &'a [Grid],
    by_size: Vec<Vec<usize>>,
    policy: BatchPolicy,
}

impl<'a> BatchSampler<'a> {
    pub fn new(dataset: &'a DatasetFile, policy: BatchPolicy) -> Result<Self, DatasetError> {
        if dataset.records.is_empty() {
            return Err(DatasetError::EmptyBatch);
        }
        let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, g) in dataset.records.iter().enumerate() {
            groups.entry(g.dims()).or_default().push(i);
        }
        Ok(Self { records: &dataset.records, by_size: groups.into_values().collect(), policy })
    }

    pub fn policy(&self) -> BatchPolicy {
        self.policy
    }

    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&'a Grid> {
        match self.policy {
            BatchPolicy::Stratified => {
                let group = &self.by_size[rng.gen_range(0..self.by_size.len())];
                (0..batch).map(|_| &self.records[group[rng.gen_range(0..group.len())]]).collect()
            }
            BatchPolicy::Uniform => {
                (0..batch).map(|_| &self.records[rng.gen_range(0..self.records.len())]).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lim() -> SearchLimits {
        SearchLimits::default()
    }

    fn spec(sizes: &[(usize, usize)], cap: usize, augment: bool) -> DatasetSpec {
        DatasetSpec { sizes: sizes.to_vec(), per_size_cap: cap, augment, seed: 1 }
    }

    #[test]
    fn build_examples() {
        assert_eq!(build_dataset(&spec(&[(1, 3)], 100, false), &lim()).unwrap().records.len(), 1);
        let d = build_dataset(&spec(&[(2, 2)], 100, true), &lim()).unwrap();
        assert_eq!(d.records.len(), 4);
        assert_eq!(build_dataset(&spec(&[(3, 3)], 5, false), &lim()).unwrap().records.len(), 5);
    }

    #[test]
    fn build_is_deterministic_and_capped_subset_depends_on_seed() {
        let a = build_dataset(&spec(&[(4, 4)], 10, true), &lim()).unwrap();
        let b = build_dataset(&spec(&[(4, 4)], 10, true), &lim()).unwrap();
        assert_eq!(a, b);
        let mut s = spec(&[(4, 4)], 10, true);
        s.seed = 99;
        assert_ne!(build_dataset(&s, &lim()).unwrap(), a);
    }

    #[test]
    fn build_rejects_oversized_and_duplicate_sizes() {
        match build_dataset(&spec(&[(2, 3), (7, 7)], 3, false), &lim()) {
            Err(DatasetError::Size { height: 7, width: 7, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(build_dataset(&spec(&[(2, 3), (2, 3)], 3, false), &lim()), Err(DatasetError::Spec(_))));
    }

    #[test]
    fn augmentation_orbits() {
        assert_eq!(augment_dihedral(&Grid::from_rows(&[[1, 1, 1]])).len(), 1);
        assert_eq!(augment_dihedral(&Grid::from_rows(&[[1, 1], [1, 0]])).len(), 4);
    }

    #[test]
    fn desk_sizes_cover_the_default_range() {
        let s = desk_sizes(36);
        assert_eq!(s.len(), 73);
        assert!(s.contains(&(6, 6)) && s.contains(&(1, 36)) && s.contains(&(4, 9)));
        assert!(s.iter().all(|&(h, w)| h <= w && h * w <= 36));
    }

    #[test]
    fn padding_examples() {
        let g = Grid::from_rows(&[[1, 0, 1], [1, 1, 1], [0, 0, 0]]);
        let b = pad_batch([&g], 8).unwrap();
        assert_eq!(b.canvas, (8, 8));
        assert_eq!(b.masks[0].iter().filter(|&&m| m).count(), 9);
        assert_eq!(b.crop_back(), vec![g]);
        let tall = Grid::new(16, 8).unwrap();
        let sq = Grid::new(8, 8).unwrap();
        let b = pad_batch([&sq, &tall], 8).unwrap();
        assert_eq!(b.canvas, (16, 8));
        assert!(b.images.iter().all(|i| i.dims() == (16, 8)));
        assert!(matches!(pad_batch(std::iter::empty::<&Grid>(), 8), Err(DatasetError::EmptyBatch)));
    }

    #[test]
    fn binary_round_trip_and_empty_file() {
        let d = build_dataset(&spec(&[(2, 3), (3, 3), (1, 4)], 3, false), &lim()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d).unwrap();
        assert_eq!(read_dataset(&buf[..], Validation::default()).unwrap(), d);
        let mut empty = Vec::new();
        write_dataset(&mut empty, &DatasetFile::new(vec![])).unwrap();
        assert_eq!(empty.len(), 12);
        assert!(read_dataset(&empty[..], Validation::default()).unwrap().records.is_empty());
    }

    #[test]
    fn corrupted_record_is_reported_by_index() {
        let d = build_dataset(&spec(&[(3, 3)], 3, false), &lim()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d).unwrap();
        // Record 1 starts after the header and one 3x3 record (4 + 2 bytes); set every cell.
        let start = 12 + 6 + 4;
        buf[start] = 0xff;
        buf[start + 1] = 0x01;
        match read_dataset(&buf[..], Validation::default()) {
            Err(DatasetError::Record { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_dataset(&buf[..], Validation::None).is_ok());
    }

    #[test]
    fn short_snake_is_rejected_as_non_maximal() {
        let short = Grid::from_rows(&[[1, 1, 0], [0, 0, 0], [0, 0, 0]]);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &DatasetFile::new(vec![short])).unwrap();
        match read_dataset(&buf[..], Validation::default()) {
            Err(DatasetError::Record { index: 0, message }) => assert!(message.contains("maximal length")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        let d = DatasetFile::new(vec![Grid::from_rows(&[[1, 1, 1]])]);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d).unwrap();
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_dataset(&bad[..], Validation::None), Err(DatasetError::Version { found: 9, .. })));
        assert!(matches!(read_dataset(&buf[..7], Validation::None), Err(DatasetError::TruncatedHeader)));
        assert!(matches!(read_dataset(&b"NOPE12345678"[..], Validation::None), Err(DatasetError::Magic)));
        assert!(matches!(
            read_dataset(&buf[..buf.len() - 1], Validation::None),
            Err(DatasetError::Record { index: 0, .. })
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_dataset(&long[..], Validation::None), Err(DatasetError::TrailingBytes)));
    }

    #[test]
    fn stratified_batches_share_one_size() {
        let d = build_dataset(&spec(&[(2, 3), (3, 3), (4, 4)], 50, false), &lim()).unwrap();
        let s = BatchSampler::new(&d, BatchPolicy::Stratified).unwrap();
        let mut rng = rng_for(0, 0);
        for _ in 0..20 {
            let b = s.sample(6, &mut rng);
            assert!(b.iter().all(|g| g.dims() == b[0].dims()));
        }
        let u = BatchSampler::new(&d, BatchPolicy::Uniform).unwrap();
        let sizes: BTreeSet<_> = (0..20).flat_map(|_| u.sample(6, &mut rng)).map(|g| g.dims()).collect();
        assert_eq!(sizes.len(), 3);
    }
}
