//! Spectrum dataset files and resumable generation sweeps.
//!
//! The text format is a header block followed by one block per grid point.
//! Every float is stored as the hex image of its bits, followed by a
//! decimal rendering in a trailing comment for readability:
//!
//! ```text
//! esgan-spectra 1
//! model xxz
//! len 16
//! params {"Xxz":{"j":1.0,"delta":0.0}}
//! filling 0x3fe0000000000000 0x0000000000000000 # 0.5 0
//! chi_max 64
//! svd_cutoff 0x3ddb7cdfd9d7bdbb # 0.0000000001
//! boundary open
//! seed 0
//! end
//! record 0xbff8000000000000 # -1.5
//! bond 8
//! energy 0xc01c... # -7.1
//! truncation_error 0x3e3... # 0.000000005
//! converged true
//! p 4 0 0 0x3fe2... # 0.57
//! end
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{write_atomic, PipelineError};
use crate::models::{Charge, ModelId, ModelParams};
use crate::solver::{dmrg_ground_state, schmidt_decompose, DmrgConfig, DEFAULT_WEIGHT_FLOOR};
use crate::spectra::{LabeledSpectrum, SpectrumEntry};

pub const DATASET_MAGIC: &str = "esgan-spectra";
pub const DATASET_VERSION: u32 = 1;

/// Minimum total Schmidt weight a generated record must carry.
pub const MIN_RECORD_WEIGHT: f64 = 1.0 - 1e-6;

pub fn hex(v: f64) -> String {
    format!("0x{:016x}", v.to_bits())
}

pub fn parse_hex(s: &str) -> Option<f64> {
    let digits = s.strip_prefix("0x")?;
    if digits.len() != 16 {
        return None;
    }
    u64::from_str_radix(digits, 16).ok().map(f64::from_bits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub model: ModelId,
    pub len: usize,
    /// Fixed parameters; the control parameter varies per record.
    pub params: ModelParams,
    pub filling: [f64; 2],
    pub chi_max: usize,
    pub svd_cutoff: f64,
    pub boundary: String,
    pub seed: u64,
}

impl DatasetHeader {
    /// Whether records produced under `other` may be merged into this file.
    pub fn compatible(&self, other: &DatasetHeader) -> bool {
        self.model == other.model
            && self.len == other.len
            && self.params.with_control(0.0) == other.params.with_control(0.0)
            && self.chi_max == other.chi_max
            && self.svd_cutoff.to_bits() == other.svd_cutoff.to_bits()
            && self.boundary == other.boundary
            && self.seed == other.seed
    }

    pub fn summary(&self) -> String {
        format!(
            "model {} L {} chi {} cutoff {} seed {} params {}",
            self.model,
            self.len,
            self.chi_max,
            self.svd_cutoff,
            self.seed,
            serde_json::to_string(&self.params).unwrap_or_default()
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub spectrum: LabeledSpectrum,
    pub energy: f64,
    pub converged: bool,
}

impl DatasetRecord {
    pub fn control_value(&self) -> f64 {
        self.spectrum.control_value
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumDataset {
    pub header: DatasetHeader,
    /// Sorted by control value, unique.
    pub records: Vec<DatasetRecord>,
}

impl SpectrumDataset {
    pub fn spectra(&self) -> Vec<LabeledSpectrum> {
        self.records.iter().map(|r| r.spectrum.clone()).collect()
    }

    /// Record whose control value is closest to zero (first on ties).
    pub fn origin(&self) -> Option<&DatasetRecord> {
        self.records.iter().min_by(|a, b| a.control_value().abs().total_cmp(&b.control_value().abs()))
    }

    /// Record whose control value is closest to `v`.
    pub fn nearest(&self, v: f64) -> Option<&DatasetRecord> {
        self.records.iter().min_by(|a, b| (a.control_value() - v).abs().total_cmp(&(b.control_value() - v).abs()))
    }

    fn sort(&mut self) {
        self.records.sort_by(|a, b| a.control_value().total_cmp(&b.control_value()));
        self.records.dedup_by(|a, b| a.control_value().to_bits() == b.control_value().to_bits());
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut s = String::new();
        let _ = writeln!(s, "{DATASET_MAGIC} {}", h.version);
        let _ = writeln!(s, "model {}", h.model);
        let _ = writeln!(s, "len {}", h.len);
        let _ = writeln!(s, "params {}", serde_json::to_string(&h.params).expect("parameters serialize"));
        let _ = writeln!(s, "filling {} {} # {} {}", hex(h.filling[0]), hex(h.filling[1]), h.filling[0], h.filling[1]);
        let _ = writeln!(s, "chi_max {}", h.chi_max);
        let _ = writeln!(s, "svd_cutoff {} # {}", hex(h.svd_cutoff), h.svd_cutoff);
        let _ = writeln!(s, "boundary {}", h.boundary);
        let _ = writeln!(s, "seed {}", h.seed);
        let _ = writeln!(s, "end");
        for r in &self.records {
            let sp = &r.spectrum;
            let _ = writeln!(s, "record {} # {}", hex(sp.control_value), sp.control_value);
            let _ = writeln!(s, "bond {}", sp.bond);
            let _ = writeln!(s, "energy {} # {}", hex(r.energy), r.energy);
            let _ = writeln!(s, "truncation_error {} # {}", hex(sp.truncation_error), sp.truncation_error);
            let _ = writeln!(s, "converged {}", r.converged);
            for e in &sp.entries {
                let _ = writeln!(s, "p {} {} {} {} # {}", e.charge.0, e.charge.1, e.k, hex(e.p), e.p);
            }
            let _ = writeln!(s, "end");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let err = |line: usize, msg: String| PipelineError::Format(format!("line {line}: {msg}"));

        let (n, first) = lines.next().ok_or_else(|| err(0, "empty dataset file".into()))?;
        let version = match first.split_whitespace().collect::<Vec<_>>()[..] {
            [DATASET_MAGIC, v] => v.parse::<u32>().map_err(|_| err(n, format!("bad version {v:?}")))?,
            _ => return Err(err(n, format!("not a spectrum dataset (expected {DATASET_MAGIC:?})"))),
        };
        if version != DATASET_VERSION {
            return Err(err(n, format!("unsupported dataset version {version}")));
        }
        let mut model = None;
        let mut len = None;
        let mut params = None;
        let mut filling = None;
        let mut chi_max = None;
        let mut svd_cutoff = None;
        let mut boundary = None;
        let mut seed = None;
        let hexv = |n: usize, s: &str| parse_hex(s).ok_or_else(|| err(n, format!("bad hex float {s:?}")));
        loop {
            let (n, line) = lines.next().ok_or_else(|| err(0, "unterminated header".into()))?;
            if line == "end" {
                break;
            }
            let (key, rest) = line.split_once(' ').ok_or_else(|| err(n, format!("malformed header line {line:?}")))?;
            let rest = rest.trim();
            match key {
                "model" => model = Some(rest.parse::<ModelId>().map_err(|e| err(n, e.to_string()))?),
                "len" => len = Some(rest.parse::<usize>().map_err(|_| err(n, "bad len".into()))?),
                "params" => {
                    params = Some(serde_json::from_str::<ModelParams>(rest).map_err(|e| err(n, e.to_string()))?)
                }
                "filling" => {
                    let v: Vec<&str> = rest.split_whitespace().collect();
                    if v.len() != 2 {
                        return Err(err(n, "filling needs two values".into()));
                    }
                    filling = Some([hexv(n, v[0])?, hexv(n, v[1])?]);
                }
                "chi_max" => chi_max = Some(rest.parse::<usize>().map_err(|_| err(n, "bad chi_max".into()))?),
                "svd_cutoff" => svd_cutoff = Some(hexv(n, rest)?),
                "boundary" => boundary = Some(rest.to_string()),
                "seed" => seed = Some(rest.parse::<u64>().map_err(|_| err(n, "bad seed".into()))?),
                other => return Err(err(n, format!("unknown header key {other:?}"))),
            }
        }
        let missing = |k: &str| PipelineError::Format(format!("header lacks {k}"));
        let header = DatasetHeader {
            version,
            model: model.ok_or_else(|| missing("model"))?,
            len: len.ok_or_else(|| missing("len"))?,
            params: params.ok_or_else(|| missing("params"))?,
            filling: filling.ok_or_else(|| missing("filling"))?,
            chi_max: chi_max.ok_or_else(|| missing("chi_max"))?,
            svd_cutoff: svd_cutoff.ok_or_else(|| missing("svd_cutoff"))?,
            boundary: boundary.ok_or_else(|| missing("boundary"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        };
        if header.params.model_id() != header.model {
            return Err(PipelineError::Format("params do not match the model".into()));
        }

        let mut records: Vec<DatasetRecord> = Vec::new();
        while let Some((n, line)) = lines.next() {
            let control = match line.split_once(' ') {
                Some(("record", v)) => hexv(n, v.trim())?,
                _ => return Err(err(n, format!("expected a record, found {line:?}"))),
            };
            let mut bond = None;
            let mut energy = f64::NAN;
            let mut trunc = 0.0;
            let mut converged = false;
            let mut sectors: Vec<(Charge, Vec<(usize, f64)>)> = Vec::new();
            loop {
                let (n, line) = lines.next().ok_or_else(|| err(n, "unterminated record".into()))?;
                if line == "end" {
                    break;
                }
                let parts: Vec<&str> = line.split_whitespace().collect();
                match parts[..] {
                    ["bond", b] => bond = Some(b.parse::<usize>().map_err(|_| err(n, "bad bond".into()))?),
                    ["energy", v] => energy = hexv(n, v)?,
                    ["truncation_error", v] => trunc = hexv(n, v)?,
                    ["converged", v] => converged = v == "true",
                    ["p", q0, q1, k, v] => {
                        let q = Charge(
                            q0.parse().map_err(|_| err(n, "bad charge".into()))?,
                            q1.parse().map_err(|_| err(n, "bad charge".into()))?,
                        );
                        let k: usize = k.parse().map_err(|_| err(n, "bad rank".into()))?;
                        let p = hexv(n, v)?;
                        match sectors.last_mut() {
                            Some((last, vals)) if *last == q => vals.push((k, p)),
                            _ => sectors.push((q, vec![(k, p)])),
                        }
                    }
                    _ => return Err(err(n, format!("unknown record line {line:?}"))),
                }
            }
            let entries = sectors
                .into_iter()
                .flat_map(|(charge, vals)| vals.into_iter().map(move |(k, p)| SpectrumEntry { p, charge, k }))
                .collect();
            let spectrum = LabeledSpectrum {
                entries,
                len: header.len,
                bond: bond.ok_or_else(|| err(n, "record lacks bond".into()))?,
                model: header.model,
                control_value: control,
                truncation_error: trunc,
                filling: header.filling,
            };
            spectrum.validate(0.0).map_err(|e| err(n, format!("record at {control}: {e}")))?;
            if let Some(prev) = records.last() {
                if prev.control_value() >= control {
                    return Err(err(n, "records are not sorted by control value".into()));
                }
            }
            records.push(DatasetRecord { spectrum, energy, converged });
        }
        Ok(SpectrumDataset { header, records })
    }
}

pub fn read_dataset(path: &Path) -> Result<SpectrumDataset, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    SpectrumDataset::parse(&text).map_err(|e| match e {
        PipelineError::Format(m) => PipelineError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_dataset(path: &Path, ds: &SpectrumDataset) -> Result<(), PipelineError> {
    write_atomic(path, &ds.to_text())
}

/// Control-parameter grid.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Grid {
    /// Grid from `min` to `max` with spacing as close to `step` as fits.
    pub fn with_step(min: f64, max: f64, step: f64) -> Result<Self, PipelineError> {
        if !(step > 0.0) {
            return Err(PipelineError::Config(format!("grid step must be positive, got {step}")));
        }
        let count = ((max - min) / step).round() as usize + 1;
        Grid::with_count(min, max, count)
    }

    pub fn with_count(min: f64, max: f64, count: usize) -> Result<Self, PipelineError> {
        if !(min < max) || count < 2 {
            return Err(PipelineError::Config(format!("grid needs min < max and at least 2 points, got [{min}, {max}] x {count}")));
        }
        Ok(Grid { min, max, count })
    }

    /// Default sweep range of each model.
    pub fn default_for(model: ModelId) -> Self {
        let (min, max, step) = match model {
            ModelId::Xxz => (-1.5, 0.0, 0.01),
            ModelId::Bh => (0.0, 6.0, 0.02),
            ModelId::Bh2s => (-0.4, 0.0, 0.005),
        };
        Grid::with_step(min, max, step).expect("default grids are valid")
    }

    /// Grid values, rounded to 12 decimals so that `-1.5 + 7·0.01` prints as `-1.43`.
    pub fn values(&self) -> Vec<f64> {
        let h = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                let v = if i + 1 == self.count { self.max } else { self.min + i as f64 * h };
                let r = (v * 1e12).round() / 1e12;
                if r == 0.0 { 0.0 } else { r }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    /// Fixed model parameters; the control parameter is taken from the grid.
    pub params: ModelParams,
    pub len: usize,
    pub grid: Grid,
    pub dmrg: DmrgConfig,
    pub output: PathBuf,
    pub seed: u64,
    pub threads: usize,
    /// Points computed between two file writes.
    pub chunk: usize,
}

impl SweepConfig {
    pub fn new(params: ModelParams, len: usize, grid: Grid, output: PathBuf) -> Self {
        SweepConfig { params, len, grid, dmrg: DmrgConfig::default(), output, seed: 0, threads: 1, chunk: 16 }
    }

    pub fn header(&self) -> Result<DatasetHeader, PipelineError> {
        let spec = self.params.build(self.len).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(DatasetHeader {
            version: DATASET_VERSION,
            model: self.params.model_id(),
            len: self.len,
            params: self.params,
            filling: spec.filling,
            chi_max: self.dmrg.chi_max,
            svd_cutoff: self.dmrg.svd_cutoff,
            boundary: "open".into(),
            seed: self.seed,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenerateReport {
    pub computed: usize,
    pub skipped: usize,
    pub failed: Vec<(f64, String)>,
    pub unconverged: Vec<f64>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Solver seed of one grid point; independent of chunking and thread count.
pub fn point_seed(seed: u64, control: f64) -> u64 {
    splitmix(seed ^ splitmix(control.to_bits()))
}

/// Ground state and half-chain spectrum at one control value.
pub fn solve_point(cfg: &SweepConfig, control: f64) -> Result<DatasetRecord, PipelineError> {
    let spec = cfg.params.with_control(control).build(cfg.len).map_err(|e| PipelineError::Config(e.to_string()))?;
    let dmrg = DmrgConfig { seed: point_seed(cfg.seed, control), ..cfg.dmrg };
    let mps = dmrg_ground_state(&spec, &dmrg)?;
    let spectrum = schmidt_decompose(&mps, None, DEFAULT_WEIGHT_FLOOR)?;
    spectrum.validate(MIN_RECORD_WEIGHT).map_err(|e| PipelineError::Solver(format!("spectrum at {control}: {e}")))?;
    Ok(DatasetRecord { spectrum, energy: mps.energy, converged: mps.converged })
}

/// Fills `cfg.output` with one record per grid point. Points already in the
/// file (same control value bit for bit) are skipped; the file is rewritten
/// atomically after every chunk so an interrupted run can be resumed.
pub fn generate(cfg: &SweepConfig) -> Result<GenerateReport, PipelineError> {
    cfg.dmrg.validate()?;
    let header = cfg.header()?;
    let mut dataset = if cfg.output.exists() {
        let existing = read_dataset(&cfg.output)?;
        if !existing.header.compatible(&header) {
            return Err(PipelineError::Compatibility(format!(
                "{} holds [{}], sweep asks for [{}]",
                cfg.output.display(),
                existing.header.summary(),
                header.summary()
            )));
        }
        existing
    } else {
        SpectrumDataset { header, records: Vec::new() }
    };
    let have: BTreeSet<u64> = dataset.records.iter().map(|r| r.control_value().to_bits()).collect();
    let values = cfg.grid.values();
    let todo: Vec<f64> = values.iter().copied().filter(|v| !have.contains(&v.to_bits())).collect();
    let mut report = GenerateReport { skipped: values.len() - todo.len(), ..Default::default() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    if todo.is_empty() && !cfg.output.exists() {
        write_dataset(&cfg.output, &dataset)?;
    }
    for chunk in todo.chunks(cfg.chunk.max(1)) {
        let results: Vec<(f64, Result<DatasetRecord, PipelineError>)> =
            pool.install(|| chunk.par_iter().map(|&v| (v, solve_point(cfg, v))).collect());
        for (v, r) in results {
            match r {
                Ok(rec) => {
                    if !rec.converged {
                        log::warn!("point {v}: DMRG stopped at max_sweeps before reaching energy_tol");
                        report.unconverged.push(v);
                    }
                    dataset.records.push(rec);
                    report.computed += 1;
                }
                Err(e) => {
                    log::error!("point {v} skipped: {e}");
                    report.failed.push((v, e.to_string()));
                }
            }
        }
        dataset.sort();
        write_dataset(&cfg.output, &dataset)?;
        log::info!("{}: {} records", cfg.output.display(), dataset.records.len());
    }
    Ok(report)
}
