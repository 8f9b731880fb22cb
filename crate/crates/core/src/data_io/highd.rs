use std::collections::BTreeMap;
use std::path::Path;

use super::ngsim::recording_name;
use super::{column, parse_field, push_sample, Recording, RecordingMeta, Sample, Source, Unit};
use crate::error::{Error, Result};
use crate::scene::{lanes_from_markings, Lane, Position};

/// Upper carriageway (traffic moving toward −x).
pub const UPPER: u8 = 1;
/// Lower carriageway (traffic moving toward +x).
pub const LOWER: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
struct Markings {
    frame_rate: f64,
    upper: Vec<f64>,
    lower: Vec<f64>,
}

impl Markings {
    /// highD numbers upper lanes from 2 and lower lanes after the upper
    /// markings, so with `u` upper markings the lower lanes start at `u + 2`.
    fn direction_of(&self, lane_id: u32) -> Option<u8> {
        let u = self.upper.len() as u32;
        let l = self.lower.len() as u32;
        if (2..=u).contains(&lane_id) {
            Some(UPPER)
        } else if lane_id >= u + 2 && lane_id <= u + l {
            Some(LOWER)
        } else {
            None
        }
    }

    /// Lanes in each direction's travel frame. The upper carriageway is
    /// mirrored so that both directions travel toward +lon.
    fn lanes(&self) -> BTreeMap<u8, Vec<Lane>> {
        let mut upper_mirrored: Vec<f64> = self.upper.iter().map(|m| -m).collect();
        upper_mirrored.reverse();
        let mut upper = lanes_from_markings(&upper_mirrored, 0);
        // After mirroring, the lane at index i lies between the markings
        // counted from the far side; restore highD's ids.
        let count = upper.len() as u32;
        for lane in &mut upper {
            lane.id.0 = count + 1 - lane.id.0;
            for adj in &mut lane.adjacent {
                adj.0 = count + 1 - adj.0;
            }
        }
        let lower = lanes_from_markings(&self.lower, self.upper.len() as u32 + 2);
        BTreeMap::from([(UPPER, upper), (LOWER, lower)])
    }
}

fn read_markings(path: &Path) -> Result<Markings> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let c_rate = column(&headers, "frameRate", path)?;
    let c_upper = column(&headers, "upperLaneMarkings", path)?;
    let c_lower = column(&headers, "lowerLaneMarkings", path)?;
    let record = reader.records().next().ok_or_else(|| Error::Row {
        path: path.into(),
        row: 2,
        message: "recording meta has no data row".into(),
    })??;
    let list = |index: usize, name: &str| -> Result<Vec<f64>> {
        let raw = record.get(index).unwrap_or("");
        let values = raw
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Row {
                path: path.into(),
                row: 2,
                message: format!("cannot parse {name} from `{raw}`"),
            })?;
        if values.len() < 2 || values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Row {
                path: path.into(),
                row: 2,
                message: format!("{name} must hold at least two increasing values"),
            });
        }
        Ok(values)
    };
    Ok(Markings {
        frame_rate: parse_field(&record, c_rate, "frameRate", path, 2)?,
        upper: list(c_upper, "upperLaneMarkings")?,
        lower: list(c_lower, "lowerLaneMarkings")?,
    })
}

/// Reads a highD `tracks` CSV together with its `recordingMeta` CSV.
///
/// Positions are bounding-box centers. Upper-carriageway vehicles are
/// mirrored (`lon = -x`, `lat = -y`) so every vehicle travels toward +lon.
/// Every `laneId` must be consistent with the meta file's lane markings.
pub fn load_highd(tracks_path: &Path, meta_path: &Path) -> Result<Recording> {
    let markings = read_markings(meta_path)?;
    let file = std::fs::File::open(tracks_path).map_err(|e| Error::io(tracks_path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let path = tracks_path;
    let c_frame = column(&headers, "frame", path)?;
    let c_id = column(&headers, "id", path)?;
    let c_x = column(&headers, "x", path)?;
    let c_y = column(&headers, "y", path)?;
    let c_w = column(&headers, "width", path)?;
    let c_h = column(&headers, "height", path)?;
    let c_lane = column(&headers, "laneId", path)?;

    let mut tracks = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let frame: i64 = parse_field(&record, c_frame, "frame", path, row)?;
        let id: u64 = parse_field(&record, c_id, "id", path, row)?;
        let x: f64 = parse_field(&record, c_x, "x", path, row)?;
        let y: f64 = parse_field(&record, c_y, "y", path, row)?;
        let w: f64 = parse_field(&record, c_w, "width", path, row)?;
        let h: f64 = parse_field(&record, c_h, "height", path, row)?;
        let lane: u32 = parse_field(&record, c_lane, "laneId", path, row)?;
        let direction = markings.direction_of(lane).ok_or_else(|| Error::Row {
            path: path.into(),
            row,
            message: format!("laneId {lane} is not defined by the recording meta lane markings"),
        })?;
        let (cx, cy) = (x + w / 2.0, y + h / 2.0);
        let position = if direction == UPPER {
            Position::new(-cx, -cy)
        } else {
            Position::new(cx, cy)
        };
        if !position.is_finite() {
            return Err(Error::Row {
                path: path.into(),
                row,
                message: "non-finite position".into(),
            });
        }
        if let Some(prev) = tracks.get(&id).map(|t: &super::RecordedTrack| t.direction) {
            if prev != direction {
                return Err(Error::Row {
                    path: path.into(),
                    row,
                    message: format!("vehicle {id} changes carriageway"),
                });
            }
        }
        push_sample(&mut tracks, id, direction, Sample { frame, position, lane: Some(lane) }, path, row)?;
    }

    Ok(Recording {
        name: recording_name(tracks_path),
        meta: RecordingMeta {
            source: Source::Highd,
            frame_rate: markings.frame_rate,
            unit: Unit::Meters,
            lanes: markings.lanes(),
        },
        tracks: tracks.into_values().collect(),
    })
}
