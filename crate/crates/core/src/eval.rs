//! Count metrics and multi-view aggregation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

fn check_pairs(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Input("metrics need at least one prediction".into()));
    }
    if pred.len() != gt.len() {
        return Err(Error::Input(format!("{} predictions vs {} ground truths", pred.len(), gt.len())));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pairs(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pairs(pred, gt)?;
    let ms = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64;
    Ok(ms.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum Aggregation {
    Min,
    Max,
    #[default]
    Mean,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Min, Aggregation::Max, Aggregation::Mean];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Min => "min",
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "min" => Some(Aggregation::Min),
            "max" => Some(Aggregation::Max),
            "mean" | "average" => Some(Aggregation::Mean),
            _ => None,
        }
    }
}

/// Combines the per-view counts of one scene.
pub fn aggregate_counts(per_angle: &[f64], mode: Aggregation) -> Result<f64> {
    if per_angle.is_empty() {
        return Err(Error::Input("no per-angle counts to aggregate".into()));
    }
    Ok(match mode {
        Aggregation::Min => per_angle.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Max => per_angle.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => per_angle.iter().sum::<f64>() / per_angle.len() as f64,
    })
}

/// One per-view prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scene_id: String,
    pub angle_index: u32,
    pub predicted: f64,
    pub ground_truth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scene_id: String,
    /// `None` for scene-level (aggregated) rows.
    pub angle: Option<u32>,
    pub predicted: f64,
    pub ground_truth: u32,
    pub abs_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mae: f64,
    pub rmse: f64,
    /// `None` means per-view granularity.
    pub mode: Option<Aggregation>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountReport {
    pub rows: Vec<ReportRow>,
    pub summary: Summary,
}

/// Scores predictions, optionally aggregating the views of each scene first.
///
/// Rows come out sorted by scene then angle. With aggregation every scene
/// must have the same number of views and one ground truth shared by all of
/// them.
pub fn evaluate_predictions(predictions: &[Prediction], mode: Option<Aggregation>) -> Result<CountReport> {
    if predictions.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let mut by_scene: BTreeMap<&str, Vec<&Prediction>> = BTreeMap::new();
    for p in predictions {
        by_scene.entry(p.scene_id.as_str()).or_default().push(p);
    }
    let views = by_scene.values().next().map_or(0, Vec::len);
    for (scene, ps) in &by_scene {
        if ps.len() != views {
            return Err(Error::DataIntegrity(format!(
                "scene {scene} has {} views, expected {views}",
                ps.len()
            )));
        }
        if ps.iter().any(|p| p.ground_truth != ps[0].ground_truth) {
            return Err(Error::DataIntegrity(format!("scene {scene} has inconsistent ground truths across views")));
        }
    }

    let mut rows = Vec::new();
    for (scene, mut ps) in by_scene {
        ps.sort_by_key(|p| p.angle_index);
        match mode {
            None => rows.extend(ps.iter().map(|p| ReportRow {
                scene_id: p.scene_id.clone(),
                angle: Some(p.angle_index),
                predicted: p.predicted,
                ground_truth: p.ground_truth,
                abs_error: (p.predicted - f64::from(p.ground_truth)).abs(),
            })),
            Some(m) => {
                let counts: Vec<f64> = ps.iter().map(|p| p.predicted).collect();
                let predicted = aggregate_counts(&counts, m)?;
                let gt = ps[0].ground_truth;
                rows.push(ReportRow {
                    scene_id: String::from(scene),
                    angle: None,
                    predicted,
                    ground_truth: gt,
                    abs_error: (predicted - f64::from(gt)).abs(),
                });
            }
        }
    }
    let pred: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let gt: Vec<f64> = rows.iter().map(|r| f64::from(r.ground_truth)).collect();
    let summary = Summary { mae: mae(&pred, &gt)?, rmse: rmse(&pred, &gt)?, mode, n: rows.len() };
    Ok(CountReport { rows, summary })
}

/// Summaries at per-view granularity and under every aggregation mode.
pub fn all_summaries(predictions: &[Prediction]) -> Result<Vec<Summary>> {
    let mut out = alloc::vec![evaluate_predictions(predictions, None)?.summary];
    for m in Aggregation::ALL {
        out.push(evaluate_predictions(predictions, Some(m))?.summary);
    }
    Ok(out)
}
