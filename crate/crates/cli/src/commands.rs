use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lanebma_core::config::{RunConfig, View};
use lanebma_core::data_io::{extract_windows, load_highd, load_ngsim, load_scene_file, Recording, Source};
use lanebma_core::metrics::{horizon_summary_over, report_rows, EvalRecord, ReportRow};
use lanebma_core::pipeline::{predict_batch, Outcome};
use lanebma_core::Scene;
use log::{info, warn};
use serde::Serialize;

use crate::archive::{
    ensure_unique_ids, read_predictions, read_scene_archive, sidecar_path, write_failures, write_predictions,
    write_scene_archive, FailureKind, FailureRecord, Manifest, PredictionLine, RecordingSummary, WindowSummary,
};

/// Non-zero outcome of a batch command that still produced output.
#[derive(Debug)]
pub struct BatchFailure {
    pub numerical: bool,
    pub message: String,
}

impl std::fmt::Display for BatchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for BatchFailure {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    Ngsim,
    Highd,
    Synthetic,
}

fn summarize(raw: &Recording, out: &Recording) -> RecordingSummary {
    RecordingSummary {
        name: raw.name.clone(),
        input_frame_rate: raw.meta.frame_rate,
        output_frame_rate: out.meta.frame_rate,
        resampled: raw.meta.frame_rate != out.meta.frame_rate,
        unit: raw.meta.unit,
        unit_to_meters: raw.meta.unit.to_meters(),
        tracks: out.tracks.len(),
        samples: out.sample_count(),
        lane_containment: raw.lane_containment(),
    }
}

/// highD pairs `NN_tracks.csv` with `NN_recordingMeta.csv`.
fn default_meta_path(tracks: &Path) -> Result<PathBuf> {
    let name = tracks.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    match name.strip_suffix("tracks.csv") {
        Some(prefix) => Ok(tracks.with_file_name(format!("{prefix}recordingMeta.csv"))),
        None => bail!("cannot infer the recording meta file for {}; pass --meta", tracks.display()),
    }
}

pub fn ingest(config: &RunConfig, dataset: Dataset, input: &Path, meta: Option<&Path>, output: &Path) -> Result<()> {
    let target_hz = 1.0 / config.dt;
    let (source, scenes, recordings, windows, skipped) = match dataset {
        Dataset::Synthetic => {
            let scenes = load_scene_file(input)?;
            for scene in &scenes {
                scene.validate().with_context(|| format!("scene {}", scene.id))?;
            }
            (Source::Synthetic, scenes, Vec::new(), None, Vec::new())
        }
        Dataset::Ngsim | Dataset::Highd => {
            let raw = if dataset == Dataset::Ngsim {
                load_ngsim(input, &config.ngsim)?
            } else {
                let meta = match meta {
                    Some(m) => m.to_path_buf(),
                    None => default_meta_path(input)?,
                };
                load_highd(input, &meta)?
            };
            if let Some(rate) = raw.lane_containment().filter(|r| *r < 0.99) {
                warn!("{}: only {:.1}% of positions fall inside a lane", raw.name, 100.0 * rate);
            }
            let recording = if (raw.meta.frame_rate - target_hz).abs() > 1e-9 {
                raw.resampled(target_hz)?
            } else {
                raw.clone()
            };
            let extracted = extract_windows(&recording, &config.windows.spec(config.dt))?;
            let windows = WindowSummary {
                obs_s: config.windows.obs_s,
                pred_s: config.windows.pred_s,
                stride_s: config.windows.stride_s,
            };
            (
                raw.meta.source,
                extracted.scenes,
                vec![summarize(&raw, &recording)],
                Some(windows),
                extracted.skipped,
            )
        }
    };
    ensure_unique_ids(scenes.iter().map(|s| s.id.as_str()), &input.display().to_string())?;
    let manifest = Manifest {
        source,
        recordings,
        windows,
        scenes: scenes.len(),
        skipped,
    };
    write_scene_archive(output, &scenes, &manifest)?;
    info!("wrote {} scenes to {}", scenes.len(), output.display());
    Ok(())
}

pub fn predict(config: &RunConfig, scenes_path: &Path, output: &Path) -> Result<()> {
    let archive = read_scene_archive(scenes_path)?;
    ensure_unique_ids(archive.scenes.iter().map(|s| s.id.as_str()), &scenes_path.display().to_string())?;
    let outcomes = predict_batch(&archive.scenes, config, archive.source());

    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (index, (scene, outcome)) in archive.scenes.iter().zip(outcomes).enumerate() {
        let failure = |kind, message: String| FailureRecord {
            index,
            scene_id: scene.id.clone(),
            kind,
            message,
        };
        match outcome {
            Outcome::Predicted(prediction) => lines.push(PredictionLine {
                scene_id: scene.id.clone(),
                prediction,
            }),
            Outcome::Skipped(reason) => failures.push(failure(FailureKind::Skipped, reason)),
            Outcome::Failed(e) => {
                let kind = if e.is_numerical() { FailureKind::Numerical } else { FailureKind::Input };
                failures.push(failure(kind, e.to_string()));
            }
        }
    }
    write_predictions(output, &lines)?;
    write_failures(&sidecar_path(output), &failures)?;
    info!(
        "predicted {} of {} scenes ({} skipped or failed)",
        lines.len(),
        archive.scenes.len(),
        failures.len()
    );

    let errors: Vec<&FailureRecord> = failures.iter().filter(|f| f.kind != FailureKind::Skipped).collect();
    if lines.is_empty() && !errors.is_empty() {
        return Err(BatchFailure {
            numerical: errors.iter().any(|f| f.kind == FailureKind::Numerical),
            message: format!("all {} scenes failed; see {}", errors.len(), sidecar_path(output).display()),
        }
        .into());
    }
    Ok(())
}

fn view_label(view: View) -> &'static str {
    match view {
        View::Bird => "bird",
        View::Driver => "driver",
    }
}

pub fn evaluate(
    config: &RunConfig,
    predictions_path: &Path,
    scenes_path: &Path,
    output: &Path,
    dataset: Option<&str>,
) -> Result<()> {
    let archive = read_scene_archive(scenes_path)?;
    let truth: HashMap<&str, &Scene> = archive.scenes.iter().map(|s| (s.id.as_str(), s)).collect();
    let predictions = read_predictions(predictions_path)?;
    ensure_unique_ids(predictions.iter().map(|p| p.scene_id.as_str()), &predictions_path.display().to_string())?;
    let horizon = config.windows.pred_s.round() as usize;
    let records = predictions
        .iter()
        .map(|line| {
            let scene = truth.get(line.scene_id.as_str()).with_context(|| {
                format!("prediction for scene `{}` has no ground truth in {}", line.scene_id, scenes_path.display())
            })?;
            Ok(EvalRecord::from_prediction(scene, &line.prediction, horizon)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let dataset = dataset
        .map(str::to_string)
        .or_else(|| archive.source().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown".into());
    let rows = if records.is_empty() {
        warn!("no predictions to evaluate");
        Vec::new()
    } else {
        let horizons: Vec<f64> = (1..=horizon).map(|s| s as f64).collect();
        let series = horizon_summary_over(&records, config.qde_q, &horizons)?;
        report_rows(&series, &dataset, view_label(config.view))
    };
    write_csv(output, &rows)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct CurvePoint {
    dataset: String,
    view: String,
    metric: String,
    horizon_s: f64,
    value: f64,
}

#[derive(Debug, Serialize)]
struct Curve {
    dataset: String,
    view: String,
    metric: String,
    points: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
struct SamplePoint {
    scene_id: String,
    sample: usize,
    component: Option<usize>,
    t: usize,
    x: f64,
    y: f64,
    weight: f64,
}

/// Flattens a metric CSV into per-metric curves, or a prediction archive
/// into weighted sample points. `.json` outputs are JSON; anything else CSV.
pub fn plotdata(input: &Path, output: &Path) -> Result<()> {
    let json = output.extension().is_some_and(|e| e == "json");
    let is_metric_csv = input.extension().is_some_and(|e| e == "csv");
    if is_metric_csv {
        let mut reader = csv::Reader::from_path(input).with_context(|| format!("opening {}", input.display()))?;
        let rows = reader
            .deserialize::<ReportRow>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("reading {}", input.display()))?;
        let points: Vec<CurvePoint> = rows
            .into_iter()
            .filter_map(|r| {
                let horizon_s = r.horizon_s.parse().ok()?;
                Some(CurvePoint { dataset: r.dataset, view: r.view, metric: r.metric, horizon_s, value: r.value })
            })
            .collect();
        if json {
            let mut curves: Vec<Curve> = Vec::new();
            for p in points {
                match curves
                    .iter_mut()
                    .find(|c| c.dataset == p.dataset && c.view == p.view && c.metric == p.metric)
                {
                    Some(c) => c.points.push((p.horizon_s, p.value)),
                    None => curves.push(Curve {
                        dataset: p.dataset,
                        view: p.view,
                        metric: p.metric,
                        points: vec![(p.horizon_s, p.value)],
                    }),
                }
            }
            write_json(output, &curves)
        } else {
            write_csv(output, &points)
        }
    } else {
        let predictions = read_predictions(input)?;
        let points: Vec<SamplePoint> = predictions
            .iter()
            .flat_map(|line| {
                line.prediction.samples.iter().enumerate().flat_map(move |(i, s)| {
                    s.positions.iter().enumerate().map(move |(j, p)| SamplePoint {
                        scene_id: line.scene_id.clone(),
                        sample: i,
                        component: s.component,
                        t: s.first_step + j,
                        x: p.lon,
                        y: p.lat,
                        weight: s.weight,
                    })
                })
            })
            .collect();
        if json {
            write_json(output, &points)
        } else {
            write_csv(output, &points)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
