//! Sampling-based evaluation: generate grids at chosen sizes, classify them and
//! aggregate validity, malformation and length statistics per size.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{canvas_for, crop_image};
use crate::diffusion::{mix_seed, rng_for, sample, DiffusionError, NoisePredictor, NoiseSchedule, RealImage, SamplingPlan};
use crate::enumerate::{max_snake_length, serpentine_length, SearchLimits, SearchOptions};
use crate::grid::{density_profile, render_pbm, Grid, StructureKind};
use crate::nn::{Denoiser, SPATIAL_MULTIPLE};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("invalid evaluation request: {0}")]
    Request(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Runs the network on a grid of any size by embedding it in the smallest
/// network-compatible canvas.
///
/// The grid occupies the top-left corner. Training places dead padding there,
/// so at timestep t the padding pixels are filled with a fresh draw from the
/// forward marginal of a zero pixel, √(1−ᾱ_t)·z, before the network runs; the
/// prediction is cropped back to the grid.
#[derive(Debug, Clone)]
pub struct PaddedPredictor<'a> {
    pub model: &'a Denoiser,
    /// The schedule the network was trained with (model timesteps index into it).
    pub schedule: &'a NoiseSchedule,
    /// Seeds the padding noise; each timestep uses its own derived stream.
    pub seed: u64,
}

impl NoisePredictor for PaddedPredictor<'_> {
    fn predict(&self, x_t: &RealImage, t: usize) -> Result<RealImage, DiffusionError> {
        let (h, w) = x_t.dims();
        let canvas = canvas_for((h, w), SPATIAL_MULTIPLE);
        if t > self.schedule.timesteps() {
            return Err(DiffusionError::Step { t, min: 0, max: self.schedule.timesteps() });
        }
        let input = if canvas == (h, w) {
            x_t.clone()
        } else {
            let sigma = (1.0 - self.schedule.alpha_bar(t)).sqrt();
            let mut rng = rng_for(mix_seed(self.seed, t as u64), 2);
            let mut img = RealImage::zeros(canvas.0, canvas.1);
            for r in 0..canvas.0 {
                for c in 0..canvas.1 {
                    let v = if r < h && c < w {
                        x_t.get(r, c)
                    } else {
                        sigma * rng.sample::<f64, _>(StandardNormal)
                    };
                    img.set(r, c, v);
                }
            }
            img
        };
        let out = self.model.predict_noise(&input, t).map_err(|e| DiffusionError::Predictor(e.to_string()))?;
        Ok(crop_image(&out, h, w))
    }
}

/// Min / max / mean of the lengths of valid snakes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

/// Aggregates for one grid size.
///
/// Every sample lands in exactly one of: valid snake, empty, malformed (one or
/// more flags; the flag counters may overlap) or divergent (non-finite output).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub size: (usize, usize),
    pub samples: usize,
    pub valid_snakes: usize,
    pub empty: usize,
    pub malformed: usize,
    pub divergent: usize,
    pub branching: usize,
    pub cycle: usize,
    pub multiple_components: usize,
    pub lengths: Option<LengthSummary>,
    /// Longest valid snake, 0 when none was produced.
    pub best_length: usize,
    pub oracle_max: Option<usize>,
    pub serpentine_lower: usize,
    /// Valid snakes whose length equals `oracle_max`.
    pub maximal_hits: Option<usize>,
    /// Means over all non-divergent samples (interior: over those that have one).
    pub mean_border_density: f64,
    pub mean_interior_density: f64,
    /// First valid snake reaching `best_length`; not part of the tabular reports.
    pub best_grid: Option<Grid>,
}

impl EvalRecord {
    pub fn valid_rate(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.valid_snakes as f64 / self.samples as f64
        }
    }

    /// valid + empty + malformed + divergent == samples
    pub fn is_conserved(&self) -> bool {
        self.valid_snakes + self.empty + self.malformed + self.divergent == self.samples
    }
}

/// Folds classified samples into an [`EvalRecord`].
#[derive(Debug, Clone)]
pub struct RecordBuilder {
    record: EvalRecord,
    length_sum: usize,
    border_sum: f64,
    interior_sum: f64,
    finite: usize,
    with_interior: usize,
}

impl RecordBuilder {
    /// `oracle_max` is looked up with the exact search when the size is within `limits`.
    pub fn new(height: usize, width: usize, limits: &SearchLimits) -> Self {
        let opts = SearchOptions { cap_witnesses: 0, use_symmetry: true, limits: *limits };
        let oracle_max = max_snake_length(height, width, &opts).ok().map(|r| r.max_length);
        Self {
            record: EvalRecord {
                size: (height, width),
                samples: 0,
                valid_snakes: 0,
                empty: 0,
                malformed: 0,
                divergent: 0,
                branching: 0,
                cycle: 0,
                multiple_components: 0,
                lengths: None,
                best_length: 0,
                oracle_max,
                serpentine_lower: serpentine_length(height, width),
                maximal_hits: oracle_max.map(|_| 0),
                mean_border_density: 0.0,
                mean_interior_density: 0.0,
                best_grid: None,
            },
            length_sum: 0,
            border_sum: 0.0,
            interior_sum: 0.0,
            finite: 0,
            with_interior: 0,
        }
    }

    pub fn add_divergent(&mut self) {
        self.record.samples += 1;
        self.record.divergent += 1;
    }

    pub fn add(&mut self, grid: &Grid) {
        let rec = &mut self.record;
        rec.samples += 1;
        self.finite += 1;
        let density = density_profile(grid);
        self.border_sum += density.border;
        if density.has_interior {
            self.with_interior += 1;
            self.interior_sum += density.interior;
        }
        let report = grid.classify();
        match report.kind {
            StructureKind::Empty => rec.empty += 1,
            StructureKind::Malformed => {
                rec.malformed += 1;
                rec.branching += report.flags.branching as usize;
                rec.cycle += report.flags.cycle as usize;
                rec.multiple_components += report.flags.multiple_components as usize;
            }
            StructureKind::ValidSnake => {
                let len = report.length;
                rec.valid_snakes += 1;
                self.length_sum += len;
                rec.lengths = Some(match rec.lengths {
                    None => LengthSummary { min: len, max: len, mean: 0.0 },
                    Some(s) => LengthSummary { min: s.min.min(len), max: s.max.max(len), mean: 0.0 },
                });
                if len > rec.best_length {
                    rec.best_length = len;
                    rec.best_grid = Some(grid.clone());
                }
                if let (Some(hits), Some(max)) = (rec.maximal_hits.as_mut(), rec.oracle_max) {
                    *hits += (len == max) as usize;
                }
            }
        }
    }

    pub fn finish(mut self) -> EvalRecord {
        let rec = &mut self.record;
        if let Some(s) = rec.lengths.as_mut() {
            s.mean = self.length_sum as f64 / rec.valid_snakes as f64;
        }
        if self.finite > 0 {
            rec.mean_border_density = self.border_sum / self.finite as f64;
        }
        if self.with_interior > 0 {
            rec.mean_interior_density = self.interior_sum / self.with_interior as f64;
        }
        self.record
    }
}

/// Parameters of an evaluation run.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub sizes: Vec<(usize, usize)>,
    pub samples_per_size: usize,
    pub seed: u64,
    pub limits: SearchLimits,
    /// Where to write `best_HxW.pbm` renders of the longest valid snake per size.
    pub render_dir: Option<PathBuf>,
}

/// Seed of sample `index` at a given size; independent of which other sizes are evaluated.
pub fn sample_seed(seed: u64, size: (usize, usize), index: usize) -> u64 {
    mix_seed(mix_seed(seed, ((size.0 as u64) << 32) | size.1 as u64), index as u64)
}

/// Samples `samples_per_size` grids per size with predictors built by `make`
/// (called with the grid size and the sample seed) and aggregates the results.
/// Samples whose final image is not finite are counted as divergent.
pub fn evaluate<P, F>(make: F, plan: &SamplingPlan, config: &EvalConfig) -> Result<Vec<EvalRecord>, EvalError>
where
    P: NoisePredictor,
    F: Fn((usize, usize), u64) -> P,
{
    if let Some(&(h, w)) = config.sizes.iter().find(|&&(h, w)| h == 0 || w == 0) {
        return Err(EvalError::Request(format!("size {h}x{w} is empty")));
    }
    if let Some(dir) = &config.render_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut records = Vec::with_capacity(config.sizes.len());
    for &(h, w) in &config.sizes {
        let mut builder = RecordBuilder::new(h, w, &config.limits);
        for i in 0..config.samples_per_size {
            let seed = sample_seed(config.seed, (h, w), i);
            let predictor = make((h, w), seed);
            let out = sample(&predictor, h, w, plan, seed, false)?;
            if out.final_image.is_finite() {
                builder.add(&out.grid);
            } else {
                builder.add_divergent();
            }
        }
        let record = builder.finish();
        if let (Some(dir), Some(best)) = (&config.render_dir, &record.best_grid) {
            std::fs::write(dir.join(format!("best_{h}x{w}.pbm")), render_pbm(best))?;
        }
        records.push(record);
    }
    Ok(records)
}

/// [`evaluate`] with a trained network, sampling over `steps` strided steps
/// (all of them when `None`).
pub fn evaluate_model(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    steps: Option<usize>,
    config: &EvalConfig,
) -> Result<Vec<EvalRecord>, EvalError> {
    let plan = match steps {
        Some(s) => schedule.respaced(s)?,
        None => schedule.full_plan(),
    };
    evaluate(|_, seed| PaddedPredictor { model, schedule, seed }, &plan, config)
}

/// Output format of [`report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

/// One CSV row; columns appear in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    height: usize,
    width: usize,
    samples: usize,
    valid_snakes: usize,
    valid_rate: f64,
    empty: usize,
    malformed: usize,
    divergent: usize,
    branching: usize,
    cycle: usize,
    multiple_components: usize,
    length_min: Option<usize>,
    length_max: Option<usize>,
    length_mean: Option<f64>,
    best_length: usize,
    oracle_max: Option<usize>,
    serpentine_lower: usize,
    maximal_hits: Option<usize>,
    mean_border_density: f64,
    mean_interior_density: f64,
}

/// CSV column names, in order.
pub const CSV_COLUMNS: [&str; 20] = [
    "height",
    "width",
    "samples",
    "valid_snakes",
    "valid_rate",
    "empty",
    "malformed",
    "divergent",
    "branching",
    "cycle",
    "multiple_components",
    "length_min",
    "length_max",
    "length_mean",
    "best_length",
    "oracle_max",
    "serpentine_lower",
    "maximal_hits",
    "mean_border_density",
    "mean_interior_density",
];

impl From<&EvalRecord> for CsvRow {
    fn from(r: &EvalRecord) -> Self {
        CsvRow {
            height: r.size.0,
            width: r.size.1,
            samples: r.samples,
            valid_snakes: r.valid_snakes,
            valid_rate: r.valid_rate(),
            empty: r.empty,
            malformed: r.malformed,
            divergent: r.divergent,
            branching: r.branching,
            cycle: r.cycle,
            multiple_components: r.multiple_components,
            length_min: r.lengths.map(|l| l.min),
            length_max: r.lengths.map(|l| l.max),
            length_mean: r.lengths.map(|l| l.mean),
            best_length: r.best_length,
            oracle_max: r.oracle_max,
            serpentine_lower: r.serpentine_lower,
            maximal_hits: r.maximal_hits,
            mean_border_density: r.mean_border_density,
            mean_interior_density: r.mean_interior_density,
        }
    }
}

impl CsvRow {
    fn into_record(self) -> Result<EvalRecord, EvalError> {
        let lengths = match (self.length_min, self.length_max, self.length_mean) {
            (Some(min), Some(max), Some(mean)) => Some(LengthSummary { min, max, mean }),
            (None, None, None) => None,
            _ => return Err(EvalError::Request("length columns must be all set or all empty".into())),
        };
        Ok(EvalRecord {
            size: (self.height, self.width),
            samples: self.samples,
            valid_snakes: self.valid_snakes,
            empty: self.empty,
            malformed: self.malformed,
            divergent: self.divergent,
            branching: self.branching,
            cycle: self.cycle,
            multiple_components: self.multiple_components,
            lengths,
            best_length: self.best_length,
            oracle_max: self.oracle_max,
            serpentine_lower: self.serpentine_lower,
            maximal_hits: self.maximal_hits,
            mean_border_density: self.mean_border_density,
            mean_interior_density: self.mean_interior_density,
            best_grid: None,
        })
    }
}

fn sorted_by_area(records: &[EvalRecord]) -> Vec<&EvalRecord> {
    let mut v: Vec<&EvalRecord> = records.iter().collect();
    v.sort_by_key(|r| (r.size.0 * r.size.1, r.size));
    v
}

/// Renders records one row per size, in ascending H·W order. CSV has a header
/// row with [`CSV_COLUMNS`]; empty cells mark absent optional values.
pub fn report(records: &[EvalRecord], format: ReportFormat) -> String {
    let rows = sorted_by_area(records);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(CSV_COLUMNS).expect("in-memory write");
            for r in rows {
                w.serialize(CsvRow::from(r)).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
        }
        ReportFormat::Text => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "{:>7} {:>7} {:>6} {:>8} {:>6} {:>9} {:>7} {:>10} {:>8} {:>6} {:>8}",
                "size", "samples", "valid", "rate", "empty", "malformed", "diverg", "best/max", "lower", "hits", "border"
            );
            for r in &rows {
                let oracle = r.oracle_max.map_or("?".to_string(), |m| m.to_string());
                let hits = r.maximal_hits.map_or("-".to_string(), |m| m.to_string());
                let _ = writeln!(
                    out,
                    "{:>7} {:>7} {:>6} {:>8.3} {:>6} {:>9} {:>7} {:>10} {:>8} {:>6} {:>8.3}",
                    format!("{}x{}", r.size.0, r.size.1),
                    r.samples,
                    r.valid_snakes,
                    r.valid_rate(),
                    r.empty,
                    r.malformed,
                    r.divergent,
                    format!("{}/{}", r.best_length, oracle),
                    r.serpentine_lower,
                    hits,
                    r.mean_border_density,
                );
            }
            let trend: Vec<String> =
                rows.iter().map(|r| format!("{}:{:.3}", r.size.0 * r.size.1, r.valid_rate())).collect();
            let _ = writeln!(out, "valid rate by area: {}", if trend.is_empty() { "-".into() } else { trend.join(" ") });
            out
        }
    }
}

/// Parses the CSV produced by [`report`].
pub fn parse_csv(text: &str) -> Result<Vec<EvalRecord>, EvalError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(EvalError::Request(format!("unexpected CSV header {header:?}")));
    }
    reader.deserialize::<CsvRow>().map(|row| row?.into_record()).collect()
}

/// Per-size PBM renders of the best snakes, keyed by file name.
pub fn best_renders(records: &[EvalRecord]) -> BTreeMap<String, Vec<u8>> {
    records
        .iter()
        .filter_map(|r| r.best_grid.as_ref().map(|g| (format!("best_{}x{}.pbm", r.size.0, r.size.1), render_pbm(g))))
        .collect()
}

/// Writes [`best_renders`] into `dir`.
pub fn write_best_renders(records: &[EvalRecord], dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in best_renders(records) {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}
