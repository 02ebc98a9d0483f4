//! Count predictions over a split and the report files built from them.

use std::path::Path;

use partcount_core::classical::{classical_count, ClassicalConfig};
use partcount_core::dataset::{Bucket, DatasetSplit};
use partcount_core::eval::{evaluate_predictions, Aggregation, CountReport, Prediction};
use partcount_core::net::CountingNet;
use partcount_core::train::{Access, SampleSource};
use serde::Serialize;

use crate::data::DiskSource;
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_rgb, write_json};

/// How counts are produced.
pub enum Counter<'a> {
    Network(&'a CountingNet<f32>),
    Classical(&'a ClassicalConfig),
}

/// One prediction per image of the chosen bucket, in annotation order. The
/// network sees images resized by the source; the classical pipeline sees
/// them at full resolution.
pub fn predict_bucket(
    source: &mut DiskSource,
    split: &DatasetSplit,
    bucket: Bucket,
    counter: &Counter<'_>,
) -> Result<Vec<Prediction>> {
    let records: Vec<_> = split.select(bucket, &source.dataset().records).into_iter().cloned().collect();
    if records.is_empty() {
        return Err(partcount_core::Error::EmptyInput(format!("{} split has no images", bucket.name())).into());
    }
    let counts = source.dataset().counts();
    let mut out = Vec::with_capacity(records.len());
    for r in &records {
        let predicted = match counter {
            Counter::Network(net) => {
                let s = source.load(r.image_id, Access::Validate)?;
                net.count(&s.image, &s.exemplars)?
            }
            Counter::Classical(cfg) => classical_count(&read_rgb(source.image_path(r))?, cfg)? as f64,
        };
        out.push(Prediction {
            scene_id: r.scene_id.clone(),
            angle_index: r.angle_index,
            predicted,
            ground_truth: counts[&r.image_id] as u32,
        });
    }
    Ok(out)
}

/// Report CSV: `scene_id,angle,predicted,ground_truth,abs_error`, plus a
/// `rounded` column when requested. Aggregated rows use angle `*`.
pub fn report_csv(report: &CountReport, rounded: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let mut header = vec!["scene_id", "angle", "predicted", "ground_truth", "abs_error"];
    if rounded {
        header.push("rounded");
    }
    w.write_record(&header).map_err(csv_err)?;
    for row in &report.rows {
        let mut rec = vec![
            row.scene_id.clone(),
            row.angle.map_or_else(|| "*".to_string(), |a| a.to_string()),
            row.predicted.to_string(),
            row.ground_truth.to_string(),
            row.abs_error.to_string(),
        ];
        if rounded {
            rec.push(format!("{}", row.predicted.round()));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryJson {
    pub mae: f64,
    pub rmse: f64,
    /// `none` for per-view scoring, otherwise the aggregation mode.
    pub mode: String,
    pub n: usize,
}

impl From<&CountReport> for SummaryJson {
    fn from(r: &CountReport) -> Self {
        SummaryJson {
            mae: r.summary.mae,
            rmse: r.summary.rmse,
            mode: r.summary.mode.map_or("none", Aggregation::name).to_string(),
            n: r.summary.n,
        }
    }
}

/// Scores predictions and writes `report.csv` and `summary.json` into
/// `out_dir`.
pub fn write_report(
    predictions: &[Prediction],
    mode: Option<Aggregation>,
    rounded: bool,
    out_dir: impl AsRef<Path>,
) -> Result<CountReport> {
    let out_dir = out_dir.as_ref();
    let report = evaluate_predictions(predictions, mode)?;
    atomic_write(out_dir.join("report.csv"), &report_csv(&report, rounded)?)?;
    write_json(out_dir.join("summary.json"), &SummaryJson::from(&report))?;
    Ok(report)
}
