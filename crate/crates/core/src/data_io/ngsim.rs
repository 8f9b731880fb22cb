use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{column, parse_field, push_sample, Recording, RecordingMeta, Sample, Source, Unit};
use crate::error::{Error, Result};
use crate::scene::{Lane, LaneId, Position};

/// Lane width assumed when a recording contains a single lane.
const SINGLE_LANE_WIDTH: f64 = 3.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgsimOptions {
    pub unit: Unit,
    pub frame_rate: f64,
    /// Use `Local_X` as longitudinal and `Local_Y` as lateral.
    pub swap_axes: bool,
    /// Lane ids (e.g. ramps or auxiliary lanes) left out of the lane model.
    pub exclude_lanes: Vec<u32>,
}

impl Default for NgsimOptions {
    fn default() -> Self {
        Self {
            unit: Unit::Feet,
            frame_rate: 10.0,
            swap_axes: false,
            exclude_lanes: Vec::new(),
        }
    }
}

/// Reads an NGSIM trajectory CSV. Longitudinal position is `Local_Y`,
/// lateral is `Local_X` (unless `swap_axes`); both are converted to meters.
/// An empty file yields an empty recording.
///
/// Lane geometry is inferred from the data: each `Lane_ID`'s center is the
/// mean lateral position of samples labeled with it, and boundaries sit
/// halfway between neighboring centers.
pub fn load_ngsim(path: &Path, options: &NgsimOptions) -> Result<Recording> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let scale = options.unit.to_meters();
    let mut tracks = BTreeMap::new();
    let mut lane_sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let meta = |lanes| RecordingMeta {
        source: Source::Ngsim,
        frame_rate: options.frame_rate,
        unit: options.unit,
        lanes: BTreeMap::from([(0, lanes)]),
    };
    if headers.is_empty() {
        return Ok(Recording {
            name: recording_name(path),
            meta: meta(Vec::new()),
            tracks: Vec::new(),
        });
    }
    let c_id = column(&headers, "Vehicle_ID", path)?;
    let c_frame = column(&headers, "Frame_ID", path)?;
    let c_x = column(&headers, "Local_X", path)?;
    let c_y = column(&headers, "Local_Y", path)?;
    let c_lane = column(&headers, "Lane_ID", path)?;

    for (i, record) in reader.records().enumerate() {
        // Line number in the file, counting the header.
        let row = i + 2;
        let record = record?;
        let id: u64 = parse_field(&record, c_id, "Vehicle_ID", path, row)?;
        let frame: i64 = parse_field(&record, c_frame, "Frame_ID", path, row)?;
        let x: f64 = parse_field(&record, c_x, "Local_X", path, row)?;
        let y: f64 = parse_field(&record, c_y, "Local_Y", path, row)?;
        let lane: u32 = parse_field(&record, c_lane, "Lane_ID", path, row)?;
        let position = if options.swap_axes {
            Position::new(x * scale, y * scale)
        } else {
            Position::new(y * scale, x * scale)
        };
        if !position.is_finite() {
            return Err(Error::Row {
                path: path.into(),
                row,
                message: "non-finite position".into(),
            });
        }
        if !options.exclude_lanes.contains(&lane) {
            let entry = lane_sums.entry(lane).or_default();
            entry.0 += position.lat;
            entry.1 += 1;
        }
        let sample = Sample { frame, position, lane: Some(lane) };
        push_sample(&mut tracks, id, 0, sample, path, row)?;
    }

    let centers: Vec<(u32, f64)> = lane_sums
        .into_iter()
        .map(|(id, (sum, count))| (id, sum / count as f64))
        .collect();
    let lanes = lanes_from_centers(centers);
    Ok(Recording {
        name: recording_name(path),
        meta: meta(lanes),
        tracks: tracks.into_values().collect(),
    })
}

/// Lanes ordered by lateral center with boundaries at midpoints; the outer
/// boundaries mirror the nearest inner half-width.
fn lanes_from_centers(mut centers: Vec<(u32, f64)>) -> Vec<Lane> {
    centers.sort_by(|a, b| a.1.total_cmp(&b.1));
    let count = centers.len();
    let mid = |i: usize| 0.5 * (centers[i].1 + centers[i + 1].1);
    (0..count)
        .map(|i| {
            let (id, center) = centers[i];
            let upper = if i + 1 < count { mid(i) } else if i > 0 { 2.0 * center - mid(i - 1) } else { center + SINGLE_LANE_WIDTH / 2.0 };
            let lower = if i > 0 { mid(i - 1) } else if count > 1 { 2.0 * center - mid(0) } else { center - SINGLE_LANE_WIDTH / 2.0 };
            let mut adjacent = Vec::new();
            if i > 0 {
                adjacent.push(LaneId(centers[i - 1].0));
            }
            if i + 1 < count {
                adjacent.push(LaneId(centers[i + 1].0));
            }
            Lane { id: LaneId(id), lower, upper, center, adjacent }
        })
        .collect()
}

pub(super) fn recording_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".into())
}
