//! Scene data model, lane geometry, and lane/leader candidate construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ground-plane position in lane-aligned coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub lon: f64,
    pub lat: f64,
}

impl Position {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.lon - other.lon).hypot(self.lat - other.lat)
    }

    pub fn is_finite(&self) -> bool {
        self.lon.is_finite() && self.lat.is_finite()
    }
}

/// One vehicle's positions on the scene's timestep grid (1-based) and the
/// subset of timesteps at which it was observed.
///
/// Positions may be known at unobserved timesteps: the target's future
/// ground truth, or a surrounding vehicle hidden by occlusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: VehicleId,
    points: Vec<Option<Position>>,
    observed: Vec<bool>,
}

impl Track {
    pub fn new(id: VehicleId) -> Self {
        Self {
            id,
            points: Vec::new(),
            observed: Vec::new(),
        }
    }

    /// Track with positions at `1..=positions.len()`, observed up to `observe_until`.
    pub fn from_positions(id: VehicleId, positions: &[Position], observe_until: usize) -> Self {
        let mut track = Self::new(id);
        for (i, p) in positions.iter().enumerate() {
            let t = i + 1;
            track.set_position(t, *p);
            track.set_observed(t, t <= observe_until);
        }
        track
    }

    fn ensure_len(&mut self, t: usize) {
        if self.points.len() < t {
            self.points.resize(t, None);
            self.observed.resize(t, false);
        }
    }

    pub fn set_position(&mut self, t: usize, p: Position) {
        assert!(t >= 1, "timesteps are 1-based");
        self.ensure_len(t);
        self.points[t - 1] = Some(p);
    }

    pub fn set_observed(&mut self, t: usize, observed: bool) {
        assert!(t >= 1, "timesteps are 1-based");
        if observed {
            self.ensure_len(t);
        }
        if let Some(slot) = self.observed.get_mut(t - 1) {
            *slot = observed;
        }
    }

    /// Last timestep with a slot; positions beyond are unknown.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.iter().all(Option::is_none)
    }

    pub fn position(&self, t: usize) -> Option<Position> {
        t.checked_sub(1)
            .and_then(|i| self.points.get(i))
            .copied()
            .flatten()
    }

    pub fn is_observed(&self, t: usize) -> bool {
        t.checked_sub(1)
            .and_then(|i| self.observed.get(i))
            .copied()
            .unwrap_or(false)
    }

    /// Position at `t` only if it was observed.
    pub fn observed_position(&self, t: usize) -> Option<Position> {
        if self.is_observed(t) {
            self.position(t)
        } else {
            None
        }
    }

    pub fn observed_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, o)| **o)
            .map(|(i, _)| i + 1)
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }

    pub fn first_observed(&self) -> Option<usize> {
        self.observed_steps().next()
    }

    /// Timesteps that carry a position, observed or not.
    pub fn known_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_some())
            .map(|(i, _)| i + 1)
    }

    /// Observed scalar sequence over `1..=n` for one axis.
    pub fn observed_axis(&self, n: usize, axis: Axis) -> Vec<Option<f64>> {
        (1..=n)
            .map(|t| self.observed_position(t).map(|p| axis.of(&p)))
            .collect()
    }

    /// Drops positions after `t` and the mask with them.
    pub fn truncate(&mut self, t: usize) {
        self.points.truncate(t);
        self.observed.truncate(t);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Longitudinal,
    Lateral,
}

impl Axis {
    pub fn of(self, p: &Position) -> f64 {
        match self {
            Axis::Longitudinal => p.lon,
            Axis::Lateral => p.lat,
        }
    }
}

/// A lane's lateral extent `[lower, upper)`, its center, and its neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    #[serde(default)]
    pub adjacent: Vec<LaneId>,
}

impl Lane {
    pub fn contains(&self, lateral: f64) -> bool {
        self.lower <= lateral && lateral < self.upper
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) || !(self.lower < self.center && self.center < self.upper) {
            return Err(Error::InvalidScene(format!(
                "lane {} has inconsistent geometry [{}, {}) center {}",
                self.id, self.lower, self.upper, self.center
            )));
        }
        Ok(())
    }
}

/// Builds contiguous lanes from sorted lateral boundaries, each adjacent to its
/// immediate neighbors. Lane ids are assigned from `first_id` upward.
pub fn lanes_from_markings(markings: &[f64], first_id: u32) -> Vec<Lane> {
    let count = markings.len().saturating_sub(1);
    (0..count)
        .map(|i| {
            let mut adjacent = Vec::new();
            if i > 0 {
                adjacent.push(LaneId(first_id + i as u32 - 1));
            }
            if i + 1 < count {
                adjacent.push(LaneId(first_id + i as u32 + 1));
            }
            Lane {
                id: LaneId(first_id + i as u32),
                lower: markings[i],
                upper: markings[i + 1],
                center: 0.5 * (markings[i] + markings[i + 1]),
                adjacent,
            }
        })
        .collect()
}

/// Observation context for one prediction: the target, its surroundings,
/// lane geometry, and the time grid. The observation window is `1..=n` and
/// predictions run over `n+1..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "doc::SceneDoc", into = "doc::SceneDoc")]
pub struct Scene {
    pub id: String,
    pub dt: f64,
    pub n: usize,
    pub horizon: usize,
    pub lanes: Vec<Lane>,
    pub target: Track,
    pub others: Vec<Track>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.n == 0 || self.n >= self.horizon {
            return bad(format!("need 1 <= n < T, got n={} T={}", self.n, self.horizon));
        }
        let mut lane_ids = BTreeSet::new();
        for lane in &self.lanes {
            lane.validate()?;
            if !lane_ids.insert(lane.id) {
                return bad(format!("duplicate lane id {}", lane.id));
            }
        }
        for lane in &self.lanes {
            if let Some(missing) = lane.adjacent.iter().find(|a| !lane_ids.contains(a)) {
                return bad(format!("lane {} lists unknown neighbor {}", lane.id, missing));
            }
        }
        let mut ids = BTreeSet::new();
        for track in std::iter::once(&self.target).chain(&self.others) {
            if !ids.insert(track.id) {
                return bad(format!("duplicate vehicle id {}", track.id));
            }
            for t in track.observed_steps() {
                if t > self.n {
                    return bad(format!("vehicle {} observed at t={t} beyond n={}", track.id, self.n));
                }
                if track.position(t).is_none() {
                    return bad(format!("vehicle {} observed at t={t} without a position", track.id));
                }
            }
            if track.known_steps().any(|t| !track.position(t).unwrap().is_finite()) {
                return bad(format!("vehicle {} has non-finite positions", track.id));
            }
        }
        Ok(())
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    pub fn lane_at(&self, lateral: f64) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.contains(lateral))
    }

    pub fn other(&self, id: VehicleId) -> Option<&Track> {
        self.others.iter().find(|t| t.id == id)
    }

    pub fn track(&self, id: VehicleId) -> Option<&Track> {
        if self.target.id == id {
            Some(&self.target)
        } else {
            self.other(id)
        }
    }

    /// Copy with no surrounding vehicles.
    pub fn without_interactions(&self) -> Scene {
        Scene {
            others: Vec::new(),
            ..self.clone()
        }
    }

    pub fn prediction_steps(&self) -> usize {
        self.horizon - self.n
    }
}

/// Lane containing the target at its first observation.
pub fn current_lane(scene: &Scene) -> Result<LaneId> {
    let t = scene
        .target
        .first_observed()
        .ok_or(Error::InsufficientObservations {
            vehicle: scene.target.id,
            observed: 0,
            required: 1,
        })?;
    let lateral = scene.target.position(t).expect("observed implies known").lat;
    scene
        .lane_at(lateral)
        .map(|l| l.id)
        .ok_or(Error::OutOfRoad { lateral, timestep: t })
}

/// Longitudinal view distances ahead and behind the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOfView {
    pub forward: f64,
    pub rear: f64,
}

impl Default for FieldOfView {
    fn default() -> Self {
        Self {
            forward: 50.0,
            rear: 10.0,
        }
    }
}

impl FieldOfView {
    /// Closed interval `[p - q·rear, p + forward]`.
    pub fn extent(&self, p: f64, include_rear: bool) -> (f64, f64) {
        let q = if include_rear { 1.0 } else { 0.0 };
        (p - q * self.rear, p + self.forward)
    }
}

pub fn field_of_view(p: f64, include_rear: bool, forward: f64, rear: f64) -> (f64, f64) {
    FieldOfView { forward, rear }.extent(p, include_rear)
}

/// Vehicles seen in lane `lane` at some observed timestep and inside the
/// target's longitudinal view at some (possibly different) observed timestep.
pub fn lead_candidates(
    scene: &Scene,
    current: LaneId,
    lane: &Lane,
    fov: &FieldOfView,
) -> BTreeSet<VehicleId> {
    let include_rear = current != lane.id;
    let window: Vec<usize> = scene
        .target
        .observed_steps()
        .filter(|&t| t <= scene.n)
        .collect();
    scene
        .others
        .iter()
        .filter(|other| {
            let in_lane = window.iter().any(|&t| {
                other
                    .observed_position(t)
                    .is_some_and(|p| lane.contains(p.lat))
            });
            let in_view = || {
                window.iter().any(|&t| {
                    let (Some(own), Some(p)) =
                        (scene.target.position(t), other.observed_position(t))
                    else {
                        return false;
                    };
                    let (lo, hi) = fov.extent(own.lon, include_rear);
                    lo <= p.lon && p.lon <= hi
                })
            };
            in_lane && in_view()
        })
        .map(|t| t.id)
        .collect()
}

/// A (lane, leader) hypothesis; `leader == None` is free driving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidatePair {
    pub lane: LaneId,
    pub leader: Option<VehicleId>,
}

/// Candidate lanes are the current lane followed by its neighbors.
pub fn candidate_lanes(scene: &Scene) -> Result<Vec<LaneId>> {
    let current = current_lane(scene)?;
    let mut lanes = vec![current];
    let lane = scene.lane(current).expect("current lane exists");
    for adj in &lane.adjacent {
        if !lanes.contains(adj) {
            lanes.push(*adj);
        }
    }
    Ok(lanes)
}

/// Every (lane, leader) pair over the current and adjacent lanes; a lane with
/// no lead candidates contributes a single free-driving pair.
pub fn candidate_set(scene: &Scene, fov: &FieldOfView) -> Result<Vec<CandidatePair>> {
    let current = current_lane(scene)?;
    let mut pairs = Vec::new();
    for lane_id in candidate_lanes(scene)? {
        let lane = scene.lane(lane_id).expect("validated adjacency");
        let leaders = lead_candidates(scene, current, lane, fov);
        if leaders.is_empty() {
            pairs.push(CandidatePair {
                lane: lane_id,
                leader: None,
            });
        } else {
            pairs.extend(leaders.into_iter().map(|j| CandidatePair {
                lane: lane_id,
                leader: Some(j),
            }));
        }
    }
    Ok(pairs)
}

mod doc {
    use super::*;

    #[derive(Serialize, Deserialize)]
    pub struct PointDoc {
        pub t: usize,
        pub x: f64,
        pub y: f64,
    }

    #[derive(Serialize, Deserialize, PartialEq, Eq, Clone, Copy)]
    #[serde(rename_all = "lowercase")]
    pub enum Role {
        Target,
        Other,
    }

    #[derive(Serialize, Deserialize)]
    pub struct TrackDoc {
        pub id: VehicleId,
        pub role: Role,
        pub points: Vec<PointDoc>,
        pub mask: Vec<usize>,
    }

    #[derive(Serialize, Deserialize)]
    pub struct SceneDoc {
        #[serde(default, skip_serializing_if = "String::is_empty")]
        pub id: String,
        pub dt: f64,
        pub n: usize,
        #[serde(rename = "T")]
        pub horizon: usize,
        pub lanes: Vec<Lane>,
        pub tracks: Vec<TrackDoc>,
    }

    fn track_doc(track: &Track, role: Role) -> TrackDoc {
        TrackDoc {
            id: track.id,
            role,
            points: track
                .known_steps()
                .map(|t| {
                    let p = track.position(t).unwrap();
                    PointDoc { t, x: p.lon, y: p.lat }
                })
                .collect(),
            mask: track.observed_steps().collect(),
        }
    }

    fn track_from_doc(doc: TrackDoc) -> Result<Track> {
        let mut track = Track::new(doc.id);
        let mut seen = BTreeMap::new();
        for p in doc.points {
            if p.t == 0 {
                return Err(Error::InvalidScene(format!("vehicle {}: timesteps are 1-based", doc.id)));
            }
            if seen.insert(p.t, ()).is_some() {
                return Err(Error::InvalidScene(format!(
                    "vehicle {}: duplicate point at t={}",
                    doc.id, p.t
                )));
            }
            track.set_position(p.t, Position::new(p.x, p.y));
        }
        for t in doc.mask {
            if track.position(t).is_none() {
                return Err(Error::InvalidScene(format!(
                    "vehicle {}: mask entry t={t} has no point",
                    doc.id
                )));
            }
            track.set_observed(t, true);
        }
        Ok(track)
    }

    impl From<Scene> for SceneDoc {
        fn from(scene: Scene) -> Self {
            let mut tracks = vec![track_doc(&scene.target, Role::Target)];
            tracks.extend(scene.others.iter().map(|t| track_doc(t, Role::Other)));
            SceneDoc {
                id: scene.id,
                dt: scene.dt,
                n: scene.n,
                horizon: scene.horizon,
                lanes: scene.lanes,
                tracks,
            }
        }
    }

    impl TryFrom<SceneDoc> for Scene {
        type Error = Error;

        fn try_from(doc: SceneDoc) -> Result<Self> {
            let mut target = None;
            let mut others = Vec::new();
            for t in doc.tracks {
                let role = t.role;
                let track = track_from_doc(t)?;
                match role {
                    Role::Target if target.is_some() => {
                        return Err(Error::InvalidScene("more than one target track".into()))
                    }
                    Role::Target => target = Some(track),
                    Role::Other => others.push(track),
                }
            }
            let scene = Scene {
                id: doc.id,
                dt: doc.dt,
                n: doc.n,
                horizon: doc.horizon,
                lanes: doc.lanes,
                target: target.ok_or_else(|| Error::InvalidScene("no target track".into()))?,
                others,
            };
            scene.validate()?;
            Ok(scene)
        }
    }
}
