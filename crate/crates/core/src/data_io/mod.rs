//! Dataset ingestion: NGSIM and highD parsing, resampling, and windowing
//! into [`Scene`]s.

mod highd;
mod ngsim;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use log::debug;
use serde::{Deserialize, Serialize};

pub use highd::load_highd;
pub use ngsim::{load_ngsim, NgsimOptions};

use crate::error::{Error, Result};
use crate::scene::{Lane, Position, Scene, Track, VehicleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Ngsim,
    Highd,
    Synthetic,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Ngsim => "ngsim",
            Source::Highd => "highd",
            Source::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Feet,
    Meters,
}

impl Unit {
    pub fn to_meters(self) -> f64 {
        match self {
            Unit::Feet => 0.3048,
            Unit::Meters => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub source: Source,
    pub frame_rate: f64,
    /// Unit of the raw file; ingested positions are always meters.
    pub unit: Unit,
    /// Lanes per driving direction, in the direction's own coordinates.
    pub lanes: BTreeMap<u8, Vec<Lane>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub frame: i64,
    pub position: Position,
    pub lane: Option<u32>,
}

/// One vehicle's samples in increasing frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedTrack {
    pub id: VehicleId,
    pub direction: u8,
    pub samples: Vec<Sample>,
}

impl RecordedTrack {
    fn index_of(&self, frame: i64) -> Option<usize> {
        self.samples.binary_search_by_key(&frame, |s| s.frame).ok()
    }

    pub fn position_at(&self, frame: i64) -> Option<Position> {
        self.index_of(frame).map(|i| self.samples[i].position)
    }

    pub fn frame_span(&self) -> Option<(i64, i64)> {
        Some((self.samples.first()?.frame, self.samples.last()?.frame))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub name: String,
    pub meta: RecordingMeta,
    pub tracks: Vec<RecordedTrack>,
}

impl Recording {
    /// Fraction of samples whose lateral position lies inside a lane of their
    /// direction; `None` for an empty recording.
    pub fn lane_containment(&self) -> Option<f64> {
        let empty = Vec::new();
        let (mut inside, mut total) = (0usize, 0usize);
        for track in &self.tracks {
            let lanes = self.meta.lanes.get(&track.direction).unwrap_or(&empty);
            for s in &track.samples {
                total += 1;
                inside += lanes.iter().any(|l| l.contains(s.position.lat)) as usize;
            }
        }
        (total > 0).then(|| inside as f64 / total as f64)
    }

    pub fn sample_count(&self) -> usize {
        self.tracks.iter().map(|t| t.samples.len()).sum()
    }

    /// Resamples every track onto a `to_hz` grid anchored at the recording's first frame.
    pub fn resampled(&self, to_hz: f64) -> Result<Recording> {
        let anchor = self
            .tracks
            .iter()
            .filter_map(|t| t.samples.first().map(|s| s.frame))
            .min()
            .unwrap_or(0);
        let tracks = self
            .tracks
            .iter()
            .map(|t| resample(t, self.meta.frame_rate, to_hz, anchor))
            .collect::<Result<Vec<_>>>()?;
        Ok(Recording {
            name: self.name.clone(),
            meta: RecordingMeta {
                frame_rate: to_hz,
                ..self.meta.clone()
            },
            tracks,
        })
    }
}

/// Linear interpolation onto the `to_hz` grid whose frame 0 coincides with
/// source frame `anchor`. Grid points are produced only between consecutive
/// source frames, so gaps in the source remain gaps.
pub fn resample(track: &RecordedTrack, from_hz: f64, to_hz: f64, anchor: i64) -> Result<RecordedTrack> {
    if !(to_hz > 0.0 && from_hz > 0.0) || to_hz > from_hz {
        return Err(Error::InvalidArgument(format!(
            "cannot resample from {from_hz} Hz to {to_hz} Hz"
        )));
    }
    let ratio = from_hz / to_hz;
    let mut samples = Vec::new();
    let Some((first, last)) = track.frame_span() else {
        return Ok(RecordedTrack {
            samples,
            ..track.clone()
        });
    };
    let to_grid = |f: i64| (f - anchor) as f64 / ratio;
    let m_first = (to_grid(first) - 1e-9).ceil() as i64;
    let m_last = (to_grid(last) + 1e-9).floor() as i64;
    let mut i = 0;
    for m in m_first..=m_last {
        let source = anchor as f64 + m as f64 * ratio;
        while i + 1 < track.samples.len() && (track.samples[i + 1].frame as f64) <= source + 1e-9 {
            i += 1;
        }
        let lo = track.samples[i];
        let sample = if ((lo.frame as f64) - source).abs() <= 1e-9 {
            Sample { frame: m, ..lo }
        } else {
            let Some(hi) = track.samples.get(i + 1) else { continue };
            if hi.frame - lo.frame != 1 {
                continue;
            }
            let s = source - lo.frame as f64;
            Sample {
                frame: m,
                position: Position::new(
                    lo.position.lon + s * (hi.position.lon - lo.position.lon),
                    lo.position.lat + s * (hi.position.lat - lo.position.lat),
                ),
                lane: if s < 0.5 { lo.lane } else { hi.lane },
            }
        };
        samples.push(sample);
    }
    Ok(RecordedTrack {
        samples,
        ..track.clone()
    })
}

/// Observation/prediction window layout, in timesteps of the recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub obs_steps: usize,
    pub pred_steps: usize,
    pub stride_steps: usize,
    /// Surrounding vehicles farther than this (longitudinally, at every shared
    /// observed frame) are left out of the scene.
    pub neighbor_radius: f64,
}

impl WindowSpec {
    pub fn from_seconds(dt: f64, obs_s: f64, pred_s: f64, stride_s: f64) -> Self {
        let steps = |s: f64| (s / dt).round() as usize;
        Self {
            obs_steps: steps(obs_s),
            pred_steps: steps(pred_s),
            stride_steps: steps(stride_s).max(1),
            neighbor_radius: 150.0,
        }
    }

    pub fn total(&self) -> usize {
        self.obs_steps + self.pred_steps
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Windows {
    pub scenes: Vec<Scene>,
    /// Human-readable reasons for windows that were not evaluable.
    pub skipped: Vec<String>,
}

/// Cuts a recording into evaluation scenes, one per target vehicle and
/// window start. The target must be present at every timestep of the window.
pub fn extract_windows(recording: &Recording, spec: &WindowSpec) -> Result<Windows> {
    let dt = 1.0 / recording.meta.frame_rate;
    if spec.obs_steps < 2 || spec.pred_steps == 0 {
        return Err(Error::InvalidArgument(format!("degenerate window {spec:?}")));
    }
    let total = spec.total() as i64;
    let obs = spec.obs_steps as i64;
    let mut out = Windows::default();
    let empty = Vec::new();

    for target in &recording.tracks {
        let Some((first, last)) = target.frame_span() else { continue };
        let lanes = recording.meta.lanes.get(&target.direction).unwrap_or(&empty);
        let mut start = first;
        while start + total - 1 <= last {
            let id = format!("{}-{}-{}", recording.name, target.id, start);
            let frames = start..start + total;
            if frames.clone().any(|f| target.index_of(f).is_none()) {
                debug!("skipping window {id}: target has a gap");
                out.skipped.push(format!("{id}: target not present at every timestep"));
                start += spec.stride_steps as i64;
                continue;
            }
            let positions: Vec<Position> = frames.map(|f| target.position_at(f).unwrap()).collect();
            let target_track = Track::from_positions(target.id, &positions, spec.obs_steps);

            let others = recording
                .tracks
                .iter()
                .filter(|o| o.id != target.id && o.direction == target.direction)
                .filter_map(|o| {
                    let mut track = Track::new(o.id);
                    let mut near = false;
                    for (i, f) in (start..start + obs).enumerate() {
                        if let Some(p) = o.position_at(f) {
                            let t = i + 1;
                            track.set_position(t, p);
                            track.set_observed(t, true);
                            near |= (p.lon - positions[i].lon).abs() <= spec.neighbor_radius;
                        }
                    }
                    near.then_some(track)
                })
                .collect();

            let scene = Scene {
                id: id.clone(),
                dt,
                n: spec.obs_steps,
                horizon: spec.total(),
                lanes: lanes.clone(),
                target: target_track,
                others,
            };
            if scene.lane_at(positions[0].lat).is_none() {
                out.skipped.push(format!("{id}: target starts outside every lane"));
            } else {
                out.scenes.push(scene);
            }
            start += spec.stride_steps as i64;
        }
    }
    Ok(out)
}

/// Loads `Scene` JSON: either a single document or one document per line.
pub fn load_scene_file(path: &Path) -> Result<Vec<Scene>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if let Ok(scene) = serde_json::from_str::<Scene>(trimmed) {
        return Ok(vec![scene]);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Row {
                path: path.into(),
                row: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub(crate) fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn {
            path: path.into(),
            column: name.into(),
        })
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    index: usize,
    name: &str,
    path: &Path,
    row: usize,
) -> Result<T> {
    let raw = record.get(index).unwrap_or("").trim();
    raw.parse::<T>()
        .or_else(|e| {
            // Integer columns are sometimes exported as `12.0`.
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0)
                .and_then(|v| format!("{}", v as i64).parse::<T>().ok())
                .ok_or(e)
        })
        .map_err(|_| Error::Row {
            path: path.into(),
            row,
            message: format!("cannot parse {name} from `{raw}`"),
        })
}

/// Appends a sample, rejecting duplicate and out-of-order frames.
pub(crate) fn push_sample(
    tracks: &mut BTreeMap<u64, RecordedTrack>,
    id: u64,
    direction: u8,
    sample: Sample,
    path: &Path,
    row: usize,
) -> Result<()> {
    let track = tracks.entry(id).or_insert_with(|| RecordedTrack {
        id: VehicleId(id),
        direction,
        samples: Vec::new(),
    });
    if let Some(prev) = track.samples.last() {
        if sample.frame == prev.frame {
            return Err(Error::Row {
                path: path.into(),
                row,
                message: format!("duplicate row for vehicle {id} at frame {}", sample.frame),
            });
        }
        if sample.frame < prev.frame {
            return Err(Error::Row {
                path: path.into(),
                row,
                message: format!(
                    "frames of vehicle {id} are not increasing ({} after {})",
                    sample.frame, prev.frame
                ),
            });
        }
    }
    track.samples.push(sample);
    Ok(())
}
