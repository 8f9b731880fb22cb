//! Probabilistic error metrics over weighted trajectory samples.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::PredictionSet;
use crate::scene::{Position, Scene};

/// Weighted prediction of one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint {
    pub weight: f64,
    pub position: Position,
}

/// Truth and weighted predictions for one evaluated vehicle, per horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    /// Prediction horizons in seconds, parallel to `truth` and `predictions`.
    pub horizons_s: Vec<f64>,
    pub truth: Vec<Position>,
    pub predictions: Vec<Vec<WeightedPoint>>,
}

impl EvalRecord {
    /// Pairs a prediction with the target's ground truth at whole seconds
    /// `1..=seconds` after the end of the observation window.
    pub fn from_prediction(scene: &Scene, prediction: &PredictionSet, seconds: usize) -> Result<Self> {
        let steps_per_s = (1.0 / scene.dt).round() as usize;
        let mut record = EvalRecord {
            id: scene.id.clone(),
            horizons_s: Vec::new(),
            truth: Vec::new(),
            predictions: Vec::new(),
        };
        for s in 1..=seconds {
            let t = scene.n + s * steps_per_s;
            let truth = scene.target.position(t).ok_or_else(|| {
                Error::InvalidArgument(format!("scene {} has no ground truth at timestep {t}", scene.id))
            })?;
            let points = prediction
                .samples
                .iter()
                .map(|sample| {
                    sample.at(t).map(|position| WeightedPoint {
                        weight: sample.weight,
                        position,
                    })
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("scene {}: prediction misses timestep {t}", scene.id))
                })?;
            record.horizons_s.push(s as f64);
            record.truth.push(truth);
            record.predictions.push(points);
        }
        Ok(record)
    }

    fn horizon_index(&self, horizon_s: f64) -> Result<usize> {
        self.horizons_s
            .iter()
            .position(|h| (h - horizon_s).abs() < 1e-9)
            .ok_or_else(|| Error::InvalidArgument(format!("record {} lacks horizon {horizon_s} s", self.id)))
    }

    /// `(distance, normalized weight)` of each prediction at the horizon.
    fn distances(&self, horizon_s: f64) -> Result<Vec<(f64, f64)>> {
        let i = self.horizon_index(horizon_s)?;
        let truth = self.truth[i];
        let points = &self.predictions[i];
        let total = NeumaierSum::of(points.iter().map(|p| p.weight));
        if !(total > 0.0) {
            return Err(Error::InvalidArgument(format!("record {} has no prediction mass", self.id)));
        }
        Ok(points
            .iter()
            .map(|p| (p.position.distance(&truth), p.weight / total))
            .collect())
    }
}

/// Compensated summation, so totals do not depend on accumulated roundoff.
#[derive(Debug, Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }

    fn of(values: impl IntoIterator<Item = f64>) -> f64 {
        let mut acc = Self::default();
        values.into_iter().for_each(|v| acc.add(v));
        acc.value()
    }
}

fn mean_over_records(
    records: &[EvalRecord],
    per_record: impl Fn(&EvalRecord) -> Result<f64>,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to evaluate".into()));
    }
    let values = records.iter().map(per_record).collect::<Result<Vec<_>>>()?;
    Ok(NeumaierSum::of(values) / records.len() as f64)
}

/// Square root of the vehicle-averaged expected squared error.
pub fn rmse(records: &[EvalRecord], horizon_s: f64) -> Result<f64> {
    mean_over_records(records, |r| {
        Ok(NeumaierSum::of(r.distances(horizon_s)?.iter().map(|(d, w)| w * d * d)))
    })
    .map(f64::sqrt)
}

/// Vehicle-averaged expected distance.
pub fn ade(records: &[EvalRecord], horizon_s: f64) -> Result<f64> {
    mean_over_records(records, |r| {
        Ok(NeumaierSum::of(r.distances(horizon_s)?.iter().map(|(d, w)| w * d)))
    })
}

/// Vehicle-averaged smallest radius around the truth holding mass `q`.
pub fn qde(records: &[EvalRecord], q: f64, horizon_s: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 1], got {q}")));
    }
    mean_over_records(records, |r| {
        let mut d = r.distances(horizon_s)?;
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut mass = NeumaierSum::default();
        for (dist, w) in &d {
            mass.add(*w);
            // Tolerance absorbs roundoff in normalized weights.
            if mass.value() >= q - 1e-12 {
                return Ok(*dist);
            }
        }
        Ok(d.last().map_or(0.0, |x| x.0))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    Qde,
    Ade,
    Rmse,
}

impl Metric {
    pub fn label(&self, q: f64) -> String {
        match self {
            Metric::Qde => format!("QDE({q})"),
            Metric::Ade => "ADE".into(),
            Metric::Rmse => "RMSE".into(),
        }
    }
}

/// One metric across horizons with its time average and final value.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub metric: Metric,
    pub label: String,
    pub horizons_s: Vec<f64>,
    pub values: Vec<f64>,
    pub average: f64,
    pub final_value: f64,
}

/// Metrics at each whole second `1..=5` plus average/final summaries.
pub fn horizon_summary(records: &[EvalRecord], q: f64) -> Result<Vec<MetricSeries>> {
    horizon_summary_over(records, q, &[1.0, 2.0, 3.0, 4.0, 5.0])
}

pub fn horizon_summary_over(records: &[EvalRecord], q: f64, horizons_s: &[f64]) -> Result<Vec<MetricSeries>> {
    if horizons_s.is_empty() {
        return Err(Error::InvalidArgument("no horizons requested".into()));
    }
    [Metric::Qde, Metric::Ade, Metric::Rmse]
        .into_iter()
        .map(|metric| {
            let values = horizons_s
                .iter()
                .map(|&h| match metric {
                    Metric::Qde => qde(records, q, h),
                    Metric::Ade => ade(records, h),
                    Metric::Rmse => rmse(records, h),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricSeries {
                metric,
                label: metric.label(q),
                horizons_s: horizons_s.to_vec(),
                average: NeumaierSum::of(values.iter().copied()) / values.len() as f64,
                final_value: *values.last().unwrap(),
                values,
            })
        })
        .collect()
}

/// Row of the metric CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub view: String,
    pub metric: String,
    /// Seconds, or `average` / `final` for summary rows.
    pub horizon_s: String,
    pub value: f64,
}

pub fn report_rows(series: &[MetricSeries], dataset: &str, view: &str) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for s in series {
        let row = |horizon_s: String, value: f64| ReportRow {
            dataset: dataset.into(),
            view: view.into(),
            metric: s.label.clone(),
            horizon_s,
            value,
        };
        rows.extend(s.horizons_s.iter().zip(&s.values).map(|(h, v)| row(format!("{h}"), *v)));
        rows.push(row("average".into(), s.average));
        rows.push(row("final".into(), s.final_value));
    }
    rows
}
