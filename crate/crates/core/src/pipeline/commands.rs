//! Training, scanning and baseline commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::dataset::{read_dataset, SpectrumDataset};
use super::{write_atomic, PipelineError};
use crate::gan::{train, EpochLog, ScoreRow, TrainConfig, TrainedDetector, Window, DETECTOR_FORMAT, DETECTOR_VERSION};
use crate::neuralnet::{read_json, write_json};
use crate::spectra::{
    align_to_reference, build_reference_sequence, conformal_rescale, kl_between, FeatureVector, SectorSequence, Slice,
    DEFAULT_KL_FLOOR,
};

/// Reference sequence from the record nearest the origin of the phase
/// diagram, and every record aligned on it.
pub fn build_features(ds: &SpectrumDataset, n_feat: usize) -> Result<(SectorSequence, Vec<FeatureVector>), PipelineError> {
    let origin = ds.origin().ok_or_else(|| PipelineError::Config("dataset has no records".into()))?;
    let seq = build_reference_sequence(&origin.spectrum, n_feat)?;
    let features = ds.records.iter().map(|r| align_to_reference(&r.spectrum, &seq)).collect();
    Ok((seq, features))
}

pub fn train_dataset(
    ds: &SpectrumDataset,
    train_window: Window,
    val_window: Window,
    cfg: &TrainConfig,
    n_feat: usize,
) -> Result<(TrainedDetector, Vec<EpochLog>), PipelineError> {
    let (seq, features) = build_features(ds, n_feat)?;
    Ok(train(&features, &seq, train_window, val_window, cfg)?)
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr_G,lr_D\n");
    for e in log {
        let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr_g, e.lr_d);
    }
    s
}

pub fn save_detector(path: &Path, det: &TrainedDetector) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    Ok(write_json(path, det)?)
}

pub fn load_detector(path: &Path) -> Result<TrainedDetector, PipelineError> {
    let det: TrainedDetector = read_json(path)?;
    if det.format != DETECTOR_FORMAT || det.version != DETECTOR_VERSION {
        return Err(PipelineError::Format(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            det.format,
            det.version
        )));
    }
    Ok(det)
}

#[derive(Clone, Debug)]
pub struct TrainRequest {
    pub dataset: PathBuf,
    pub train_window: Window,
    pub val_window: Window,
    pub config: TrainConfig,
    pub n_feat: usize,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains a detector and writes its checkpoint and training log. A detector
/// that did not meet its thresholds is still written, with `converged = false`.
pub fn train_cmd(req: &TrainRequest) -> Result<TrainedDetector, PipelineError> {
    let ds = read_dataset(&req.dataset)?;
    let (det, log) = train_dataset(&ds, req.train_window, req.val_window, &req.config, req.n_feat)?;
    save_detector(&req.checkpoint, &det)?;
    write_atomic(&req.log, &training_log_csv(&log))?;
    Ok(det)
}

/// Scores every record of `ds`. Data at the detector's own size is read along
/// the detector's reference sequence; other sizes use their own origin record
/// with the same feature count.
pub fn scan_dataset(det: &TrainedDetector, ds: &SpectrumDataset, with_kl: bool) -> Result<Vec<ScoreRow>, PipelineError> {
    if ds.records.is_empty() {
        return Err(PipelineError::Config("dataset has no records".into()));
    }
    if ds.header.model != det.model_id {
        return Err(PipelineError::Compatibility(format!(
            "detector [model {} L {} N_feat {}] vs dataset [{}]",
            det.model_id,
            det.len,
            det.n_feat(),
            ds.header.summary()
        )));
    }
    let seq = if ds.header.len == det.len {
        det.sequence.clone()
    } else {
        build_features(ds, det.n_feat())?.0
    };
    let features: Vec<FeatureVector> = ds.records.iter().map(|r| align_to_reference(&r.spectrum, &seq)).collect();
    let mut rows = det.cross_size_scan(&features)?;
    if with_kl {
        let origin = ds.origin().expect("non-empty dataset");
        for (row, rec) in rows.iter_mut().zip(&ds.records) {
            row.kl = Some(kl_between(&rec.spectrum, &origin.spectrum, &seq, DEFAULT_KL_FLOOR));
        }
    }
    Ok(rows)
}

pub fn score_csv(det: &TrainedDetector, ds: &SpectrumDataset, rows: &[ScoreRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# detector: model {} L {} N_feat {} train {} val {} converged {} mean_train_loss {}",
        det.model_id,
        det.len,
        det.n_feat(),
        det.train_window,
        det.val_window,
        det.converged,
        det.mean_train_loss
    );
    let _ = writeln!(s, "# dataset: {}", ds.header.summary());
    let with_kl = rows.iter().any(|r| r.kl.is_some());
    s.push_str(if with_kl {
        "control_value,anomaly_score,score_percent,kl\n"
    } else {
        "control_value,anomaly_score,score_percent\n"
    });
    for r in rows {
        let _ = write!(s, "{},{},{}", r.control_value, r.score, r.score_percent);
        if let Some(kl) = r.kl {
            let _ = write!(s, ",{kl}");
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct ScanRequest {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub kl: bool,
    pub output: PathBuf,
}

pub fn scan_cmd(req: &ScanRequest) -> Result<Vec<ScoreRow>, PipelineError> {
    let det = load_detector(&req.checkpoint)?;
    let ds = read_dataset(&req.dataset)?;
    let rows = scan_dataset(&det, &ds, req.kl)?;
    write_atomic(&req.output, &score_csv(&det, &ds, &rows))?;
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct StabilityRequest {
    pub dataset: PathBuf,
    pub windows: Vec<Window>,
    pub val_window: Window,
    pub config: TrainConfig,
    pub n_feat: usize,
    pub output: PathBuf,
}

/// One detector per training window (seed offset by the window index), all
/// scored on the same dataset. A window whose training fails leaves an empty
/// column and a note in the header comments.
pub fn stability_cmd(req: &StabilityRequest) -> Result<Vec<Result<Vec<ScoreRow>, String>>, PipelineError> {
    if req.windows.len() < 2 {
        return Err(PipelineError::Config(format!("stability needs at least 2 training windows, got {}", req.windows.len())));
    }
    let ds = read_dataset(&req.dataset)?;
    if ds.records.is_empty() {
        return Err(PipelineError::Config("dataset has no records".into()));
    }
    let mut columns = Vec::new();
    for (i, w) in req.windows.iter().enumerate() {
        let cfg = TrainConfig { seed: req.config.seed.wrapping_add(i as u64), ..req.config };
        let result = train_dataset(&ds, *w, req.val_window, &cfg, req.n_feat)
            .and_then(|(det, _)| scan_dataset(&det, &ds, false))
            .map_err(|e| e.to_string());
        columns.push(result);
    }
    let mut s = String::new();
    let _ = writeln!(s, "# dataset: {}", ds.header.summary());
    let _ = writeln!(s, "# validation window {}", req.val_window);
    for (i, (w, c)) in req.windows.iter().zip(&columns).enumerate() {
        match c {
            Ok(_) => {
                let _ = writeln!(s, "# score_{} trained on {w} with seed {}", i + 1, req.config.seed.wrapping_add(i as u64));
            }
            Err(e) => {
                let _ = writeln!(s, "# score_{} trained on {w} FAILED: {e}", i + 1);
            }
        }
    }
    s.push_str("control_value");
    for i in 0..req.windows.len() {
        let _ = write!(s, ",score_{}", i + 1);
    }
    s.push('\n');
    for (k, rec) in ds.records.iter().enumerate() {
        let _ = write!(s, "{}", rec.control_value());
        for c in &columns {
            match c {
                Ok(rows) => {
                    let _ = write!(s, ",{}", rows[k].score);
                }
                Err(_) => s.push(','),
            }
        }
        s.push('\n');
    }
    write_atomic(&req.output, &s)?;
    Ok(columns)
}

/// KL divergence of every record from the origin record, along the origin's
/// reference sequence of `n_feat` slots.
pub fn kl_curve(ds: &SpectrumDataset, n_feat: usize, floor: f64) -> Result<Vec<(f64, f64)>, PipelineError> {
    let origin = ds.origin().ok_or_else(|| PipelineError::Config("dataset has no records".into()))?;
    let seq = build_reference_sequence(&origin.spectrum, n_feat)?;
    Ok(ds
        .records
        .iter()
        .map(|r| (r.control_value(), kl_between(&r.spectrum, &origin.spectrum, &seq, floor)))
        .collect())
}

pub fn kl_cmd(dataset: &Path, n_feat: usize, output: &Path) -> Result<Vec<(f64, f64)>, PipelineError> {
    let ds = read_dataset(dataset)?;
    let curve = kl_curve(&ds, n_feat, DEFAULT_KL_FLOOR)?;
    let mut s = format!("# dataset: {}\ncontrol_value,kl\n", ds.header.summary());
    for (v, kl) in &curve {
        let _ = writeln!(s, "{v},{kl}");
    }
    write_atomic(output, &s)?;
    Ok(curve)
}

/// Rescaled entanglement levels of the records nearest each requested
/// control value.
pub fn towers_cmd(dataset: &Path, controls: &[f64], slice: Slice, output: &Path) -> Result<usize, PipelineError> {
    let ds = read_dataset(dataset)?;
    if controls.is_empty() {
        return Err(PipelineError::Config("towers needs at least one control value".into()));
    }
    let mut s = format!("# dataset: {}\ncontrol_value,delta_n_a,delta_n_b,k,rescaled_xi\n", ds.header.summary());
    let mut rows = 0;
    for &c in controls {
        let rec = ds.nearest(c).ok_or_else(|| PipelineError::Config("dataset has no records".into()))?;
        let mut levels = conformal_rescale(&rec.spectrum, slice)?;
        levels.sort_by(|a, b| a.delta_n[0].total_cmp(&b.delta_n[0]).then(a.delta_n[1].total_cmp(&b.delta_n[1])).then(a.k.cmp(&b.k)));
        for l in levels {
            let _ = writeln!(s, "{},{},{},{},{}", rec.control_value(), l.delta_n[0], l.delta_n[1], l.k, l.rescaled_xi);
            rows += 1;
        }
    }
    write_atomic(output, &s)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelParams, XxzParams};
    use crate::pipeline::dataset::{generate, Grid, SweepConfig};
    use crate::models::ModelId;

    fn small_dataset(dir: &Path) -> PathBuf {
        let mut cfg = SweepConfig::new(
            ModelParams::Xxz(XxzParams::default()),
            8,
            Grid::with_count(-1.4, 0.0, 15).unwrap(),
            dir.join("xxz8.txt"),
        );
        cfg.dmrg.chi_max = 16;
        generate(&cfg).unwrap();
        cfg.output
    }

    fn quick_config() -> TrainConfig {
        TrainConfig { epochs_max: 5, batch_size: 4, ..TrainConfig::for_model(ModelId::Xxz) }
    }

    #[test]
    fn train_scan_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_dataset(dir.path());
        let req = TrainRequest {
            dataset: data.clone(),
            train_window: "[-0.5,0]".parse().unwrap(),
            val_window: "[-0.8,-0.5)".parse().unwrap(),
            config: quick_config(),
            n_feat: 16,
            checkpoint: dir.path().join("det.json"),
            log: dir.path().join("log.csv"),
        };
        let det = train_cmd(&req).unwrap();
        let loaded = load_detector(&req.checkpoint).unwrap();
        assert_eq!(loaded, det);
        let log = std::fs::read_to_string(&req.log).unwrap();
        assert!(log.starts_with("epoch,train_loss,val_loss,lr_G,lr_D\n"));
        assert_eq!(log.lines().count(), det.epochs_run + 1);

        let scan = ScanRequest { checkpoint: req.checkpoint.clone(), dataset: data, kl: true, output: dir.path().join("scan.csv") };
        let rows = scan_cmd(&scan).unwrap();
        assert_eq!(rows.len(), 15);
        let csv = std::fs::read_to_string(&scan.output).unwrap();
        let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "control_value,anomaly_score,score_percent,kl");
        // origin record has zero divergence from itself
        assert_eq!(rows.last().unwrap().kl, Some(0.0));
    }

    #[test]
    fn overlapping_windows_and_single_stability_window_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_dataset(dir.path());
        let ds = read_dataset(&data).unwrap();
        let r = train_dataset(&ds, "[-0.5,0]".parse().unwrap(), "[-0.8,-0.5]".parse().unwrap(), &quick_config(), 16);
        assert_eq!(r.unwrap_err().exit_code(), super::super::EXIT_CONFIG);
        let req = StabilityRequest {
            dataset: data,
            windows: vec!["[-0.5,0]".parse().unwrap()],
            val_window: "[-0.8,-0.5)".parse().unwrap(),
            config: quick_config(),
            n_feat: 16,
            output: dir.path().join("stab.csv"),
        };
        assert!(matches!(stability_cmd(&req), Err(PipelineError::Config(_))));
        assert!(!req.output.exists());
    }

    #[test]
    fn stability_writes_one_column_per_window() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_dataset(dir.path());
        let req = StabilityRequest {
            dataset: data,
            windows: vec!["[-0.5,0]".parse().unwrap(), "[-0.3,0]".parse().unwrap(), "[5,6]".parse().unwrap()],
            val_window: "[-0.8,-0.5)".parse().unwrap(),
            config: quick_config(),
            n_feat: 16,
            output: dir.path().join("stab.csv"),
        };
        let cols = stability_cmd(&req).unwrap();
        assert!(cols[0].is_ok() && cols[1].is_ok() && cols[2].is_err());
        let csv = std::fs::read_to_string(&req.output).unwrap();
        assert!(csv.contains("# score_3 trained on [5,6] FAILED"));
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body[0], "control_value,score_1,score_2,score_3");
        assert_eq!(body.len(), 16);
        assert!(body[1].ends_with(','));
    }

    #[test]
    fn kl_and_towers_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_dataset(dir.path());
        let curve = kl_cmd(&data, 16, &dir.path().join("kl.csv")).unwrap();
        assert_eq!(curve.len(), 15);
        assert!(curve.iter().all(|(_, kl)| *kl >= -1e-12));
        let n = towers_cmd(&data, &[-0.5], Slice::All, &dir.path().join("towers.csv")).unwrap();
        assert!(n > 0);
        let csv = std::fs::read_to_string(dir.path().join("towers.csv")).unwrap();
        assert!(csv.contains("control_value,delta_n_a,delta_n_b,k,rescaled_xi"));
    }

    #[test]
    fn empty_dataset_scan_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_dataset(dir.path());
        let ds = read_dataset(&data).unwrap();
        let (det, _) = train_dataset(&ds, "[-0.5,0]".parse().unwrap(), "[-0.8,-0.5)".parse().unwrap(), &quick_config(), 16).unwrap();
        let empty = SpectrumDataset { header: ds.header.clone(), records: vec![] };
        assert!(scan_dataset(&det, &empty, false).is_err());
    }
}
