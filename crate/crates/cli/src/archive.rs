//! On-disk formats: scene archives (a directory with `scenes.jsonl` and
//! `manifest.json`), prediction archives (JSON Lines), and error sidecars.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lanebma_core::data_io::{load_scene_file, Source, Unit};
use lanebma_core::{PredictionSet, Scene};
use serde::{Deserialize, Serialize};

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSummary {
    pub name: String,
    pub input_frame_rate: f64,
    pub output_frame_rate: f64,
    pub resampled: bool,
    pub unit: Unit,
    /// Factor applied to raw coordinates to obtain meters.
    pub unit_to_meters: f64,
    pub tracks: usize,
    pub samples: usize,
    /// Fraction of lateral positions inside a lane of their direction.
    pub lane_containment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub obs_s: f64,
    pub pred_s: f64,
    pub stride_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub source: Source,
    pub recordings: Vec<RecordingSummary>,
    pub windows: Option<WindowSummary>,
    pub scenes: usize,
    pub skipped: Vec<String>,
}

pub struct SceneArchive {
    pub manifest: Option<Manifest>,
    pub scenes: Vec<Scene>,
}

impl SceneArchive {
    pub fn source(&self) -> Option<Source> {
        self.manifest.as_ref().map(|m| m.source)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn write_scene_archive(dir: &Path, scenes: &[Scene], manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut out = create(&dir.join(SCENES_FILE))?;
    for scene in scenes {
        serde_json::to_writer(&mut out, scene)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let mut m = create(&dir.join(MANIFEST_FILE))?;
    serde_json::to_writer_pretty(&mut m, manifest)?;
    m.write_all(b"\n")?;
    m.flush()?;
    Ok(())
}

/// Reads a scene archive directory, or a bare scene file (single JSON
/// document or JSON Lines) without a manifest.
pub fn read_scene_archive(path: &Path) -> Result<SceneArchive> {
    if path.is_dir() {
        let manifest_path = path.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path)
                .with_context(|| format!("reading {}", manifest_path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?)
        } else {
            None
        };
        let scenes = load_scene_file(&path.join(SCENES_FILE))?;
        Ok(SceneArchive { manifest, scenes })
    } else {
        Ok(SceneArchive {
            manifest: None,
            scenes: load_scene_file(path)?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionLine {
    pub scene_id: String,
    pub prediction: PredictionSet,
}

pub fn write_predictions(path: &Path, lines: &[PredictionLine]) -> Result<()> {
    let mut out = create(path)?;
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: invalid prediction record", path.display(), i + 1))?;
        lines.push(parsed);
    }
    Ok(lines)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Skipped,
    Input,
    Numerical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: usize,
    pub scene_id: String,
    pub kind: FailureKind,
    pub message: String,
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".errors.jsonl");
    output.with_file_name(name)
}

pub fn write_failures(path: &Path, failures: &[FailureRecord]) -> Result<()> {
    let mut out = create(path)?;
    for f in failures {
        serde_json::to_writer(&mut out, f)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn ensure_unique_ids<'a>(ids: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            bail!("duplicate scene id `{id}` in {what}");
        }
    }
    Ok(())
}
