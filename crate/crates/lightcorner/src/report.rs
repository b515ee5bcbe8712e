//! Metric reports: per-light-type and weighted-aggregate numbers for a
//! clean and a frozen-noise evaluation pass, emitted as a machine-readable
//! JSON document and a human-readable text report (aligned table plus flat
//! `key = value` lines). Both forms are byte-stable for identical inputs.

use serde::{Deserialize, Serialize};

use crate::geometry::{LightType, Point};
use crate::metrics::{
    average_distance_error, detection_boxes, detection_rate, masked_corner_loss, percent_error,
    weighted_mean, EvalExample,
};
use crate::{Error, Result};

/// IoU thresholds the detection rate is reported at.
pub const DETECTION_THRESHOLDS: [f64; 2] = [0.25, 0.5];

/// Metrics for one light type (or the weighted aggregate) on one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightMetrics {
    /// Evaluated examples.
    pub n: usize,
    pub loss: f64,
    pub ade_px: f64,
    /// `None` when every example was excluded for a degenerate light box.
    pub pct_error: Option<f64>,
    /// Examples excluded from the percent error.
    pub pct_excluded: usize,
    pub detect_rate_25: f64,
    pub detect_rate_50: f64,
}

/// Computes every metric for one light type's examples. `centers[i]` is the
/// crop center of `examples[i]` in scene pixels, needed to denormalize the
/// detection boxes.
pub fn light_metrics(
    examples: &[EvalExample],
    centers: &[Point],
    half_extent: f64,
) -> Result<LightMetrics> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty example set".into()));
    }
    if examples.len() != centers.len() {
        return Err(Error::InvalidInput(format!(
            "{} examples but {} crop centers",
            examples.len(),
            centers.len()
        )));
    }
    let loss = masked_corner_loss(examples)?;
    let ade_px = average_distance_error(examples, half_extent)?;
    let (pct_error, pct_excluded) = match percent_error(examples, half_extent) {
        Ok(p) => (Some(p.value), p.excluded),
        Err(_) => (None, examples.len()),
    };
    let mut pairs = Vec::with_capacity(examples.len());
    for (ex, &center) in examples.iter().zip(centers) {
        pairs.push(detection_boxes(ex, half_extent, center)?);
    }
    let rates = detection_rate(&pairs, &DETECTION_THRESHOLDS);
    Ok(LightMetrics {
        n: examples.len(),
        loss,
        ade_px,
        pct_error,
        pct_excluded,
        detect_rate_25: rates[0].1,
        detect_rate_50: rates[1].1,
    })
}

/// One light type's row in a report block; `metrics` is `None` when the
/// test set holds no examples of the type (reported as n/a, excluded from
/// the weighted aggregate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightEntry {
    pub light: String,
    pub metrics: Option<LightMetrics>,
}

/// Per-light and weighted metrics for one evaluation condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBlock {
    /// Condition label, `"clean"` or `"noisy"`.
    pub condition: String,
    /// One entry per light type, in FL, FR, RL, RR order.
    pub per_light: Vec<LightEntry>,
    pub weighted: LightMetrics,
}

impl EvalBlock {
    /// Aggregates per-light metrics; every metric is combined as
    /// `sum(n_t * m_t) / sum(n_t)` over the types that have examples. The
    /// percent error weights by included (non-degenerate) examples only.
    pub fn build(condition: &str, per_light: [Option<LightMetrics>; 4]) -> Result<EvalBlock> {
        let present: Vec<&LightMetrics> = per_light.iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no examples in any light type for the {condition} condition"
            )));
        }
        let pick = |f: fn(&LightMetrics) -> f64| -> Result<f64> {
            weighted_mean(&present.iter().map(|m| (f(m), m.n)).collect::<Vec<_>>())
        };
        let pct_pairs: Vec<(f64, usize)> = present
            .iter()
            .filter_map(|m| m.pct_error.map(|v| (v, m.n - m.pct_excluded)))
            .collect();
        let weighted = LightMetrics {
            n: present.iter().map(|m| m.n).sum(),
            loss: pick(|m| m.loss)?,
            ade_px: pick(|m| m.ade_px)?,
            pct_error: weighted_mean(&pct_pairs).ok(),
            pct_excluded: present.iter().map(|m| m.pct_excluded).sum(),
            detect_rate_25: pick(|m| m.detect_rate_25)?,
            detect_rate_50: pick(|m| m.detect_rate_50)?,
        };
        let per_light = LightType::ALL
            .into_iter()
            .zip(per_light)
            .map(|(t, metrics)| LightEntry { light: t.code().to_string(), metrics })
            .collect();
        Ok(EvalBlock { condition: condition.to_string(), per_light, weighted })
    }
}

/// Full evaluation report: the run's geometry, the split sizes, and one
/// block per condition. Contains no paths or timestamps, so identical runs
/// serialize byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Crop context code, `"scene"` or `"vehicle"`.
    pub context: String,
    pub crop_size: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub clean: EvalBlock,
    /// Frozen-noise evaluation of the same checkpoints.
    pub noisy: EvalBlock,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("malformed report JSON: {e}")))
    }

    /// Human-readable report: an aligned table per condition followed by
    /// flat `key = value` lines carrying full-precision values.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "context: {}    crop: {}x{}    train: {}    test: {}\n",
            self.context, self.crop_size, self.crop_size, self.n_train, self.n_test
        );
        for block in [&self.clean, &self.noisy] {
            out.push('\n');
            out.push_str(&block_table(block));
        }
        out.push('\n');
        for block in [&self.clean, &self.noisy] {
            for entry in &block.per_light {
                push_kv_lines(&mut out, &block.condition, &entry.light, entry.metrics.as_ref());
            }
            push_kv_lines(&mut out, &block.condition, "weighted", Some(&block.weighted));
        }
        out
    }
}

fn block_table(block: &EvalBlock) -> String {
    let mut out = format!("[{}]\n", block.condition);
    out.push_str(&format!(
        "{:<10} {:>6} {:>10} {:>9} {:>8} {:>10} {:>10}\n",
        "light", "n", "loss", "ADE px", "% err", "rate@0.25", "rate@0.50"
    ));
    for entry in &block.per_light {
        out.push_str(&table_row(&entry.light, entry.metrics.as_ref()));
    }
    out.push_str(&table_row("weighted", Some(&block.weighted)));
    out
}

fn table_row(label: &str, metrics: Option<&LightMetrics>) -> String {
    match metrics {
        None => format!("{label:<10} {:>6} {:>10} {:>9} {:>8} {:>10} {:>10}\n", 0, "n/a", "n/a", "n/a", "n/a", "n/a"),
        Some(m) => {
            let pct = match m.pct_error {
                Some(v) => format!("{v:.2}"),
                None => "n/a".to_string(),
            };
            format!(
                "{label:<10} {:>6} {:>10.6} {:>9.4} {:>8} {:>10.4} {:>10.4}\n",
                m.n, m.loss, m.ade_px, pct, m.detect_rate_25, m.detect_rate_50
            )
        }
    }
}

fn push_kv_lines(out: &mut String, condition: &str, label: &str, metrics: Option<&LightMetrics>) {
    let prefix = format!("{condition}.{label}");
    match metrics {
        None => out.push_str(&format!("{prefix}.n = 0\n")),
        Some(m) => {
            out.push_str(&format!("{prefix}.n = {}\n", m.n));
            out.push_str(&format!("{prefix}.loss = {}\n", m.loss));
            out.push_str(&format!("{prefix}.ade_px = {}\n", m.ade_px));
            match m.pct_error {
                Some(v) => out.push_str(&format!("{prefix}.pct_error = {v}\n")),
                None => out.push_str(&format!("{prefix}.pct_error = n/a\n")),
            }
            out.push_str(&format!("{prefix}.pct_excluded = {}\n", m.pct_excluded));
            out.push_str(&format!("{prefix}.detect_rate_25 = {}\n", m.detect_rate_25));
            out.push_str(&format!("{prefix}.detect_rate_50 = {}\n", m.detect_rate_50));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CornerPrediction, CropMode, CropSpec, LightAnnotation, Point, VehicleBox};

    fn metrics(n: usize, loss: f64, ade: f64) -> LightMetrics {
        LightMetrics {
            n,
            loss,
            ade_px: ade,
            pct_error: Some(10.0 * loss),
            pct_excluded: 0,
            detect_rate_25: 0.9,
            detect_rate_50: 0.7,
        }
    }

    /// Ground truth for the aggregate: ADEs (4.89, 5.48, 4.42, 4.91) with
    /// weights (3, 1, 4, 4) average to 57.47 / 12.
    #[test]
    fn weighted_aggregate_matches_hand_arithmetic() {
        let block = EvalBlock::build(
            "clean",
            [
                Some(metrics(3, 0.1, 4.89)),
                Some(metrics(1, 0.2, 5.48)),
                Some(metrics(4, 0.3, 4.42)),
                Some(metrics(4, 0.4, 4.91)),
            ],
        )
        .unwrap();
        assert!((block.weighted.ade_px - 57.47 / 12.0).abs() < 1e-12);
        assert_eq!(block.weighted.n, 12);
        let loss = (3.0 * 0.1 + 0.2 + 4.0 * 0.3 + 4.0 * 0.4) / 12.0;
        assert!((block.weighted.loss - loss).abs() < 1e-12);
    }

    #[test]
    fn missing_light_type_is_excluded_from_weighting() {
        let block = EvalBlock::build(
            "clean",
            [Some(metrics(2, 0.1, 4.0)), None, Some(metrics(2, 0.3, 8.0)), None],
        )
        .unwrap();
        assert_eq!(block.weighted.n, 4);
        assert!((block.weighted.ade_px - 6.0).abs() < 1e-12);
        assert!(block.per_light[1].metrics.is_none());
        assert_eq!(block.per_light[1].light, "FR");
    }

    #[test]
    fn empty_block_is_rejected() {
        assert!(EvalBlock::build("clean", [None, None, None, None]).is_err());
    }

    #[test]
    fn light_metrics_agrees_with_direct_metric_calls() {
        let vehicle = VehicleBox::new(0.0, 0.0, 200.0, 200.0);
        let ann = LightAnnotation {
            image_ref: "s".into(),
            vehicle,
            light_type: crate::geometry::LightType::FrontLeft,
            center: Point::new(100.0, 100.0),
            corners: [
                Some(Point::new(90.0, 90.0)),
                Some(Point::new(110.0, 90.0)),
                Some(Point::new(110.0, 110.0)),
                None,
            ],
        };
        let spec = CropSpec::new(128, CropMode::SceneContext).unwrap();
        let scene = crate::geometry::SceneImage::new(200, 200);
        let sample =
            crate::geometry::make_crop_sample(&scene, &ann, ann.center, &spec).unwrap();
        let pred = CornerPrediction([0.1, -0.1, 0.2, 0.05, -0.3, 0.0, 0.0, 0.0]);
        let ex = EvalExample::from_sample(&sample, &pred);
        let center = sample.crop_center;

        let m = light_metrics(std::slice::from_ref(&ex), &[center], 64.0).unwrap();
        assert_eq!(m.n, 1);
        assert_eq!(m.loss, masked_corner_loss(std::slice::from_ref(&ex)).unwrap());
        assert_eq!(m.ade_px, average_distance_error(std::slice::from_ref(&ex), 64.0).unwrap());
        assert_eq!(
            m.pct_error.unwrap(),
            percent_error(std::slice::from_ref(&ex), 64.0).unwrap().value
        );
        assert_eq!(m.pct_excluded, 0);
    }

    #[test]
    fn mismatched_centers_are_rejected() {
        assert!(light_metrics(&[], &[], 64.0).is_err());
    }

    fn sample_report() -> MetricReport {
        let clean = EvalBlock::build(
            "clean",
            [
                Some(metrics(3, 0.1, 4.89)),
                None,
                Some(metrics(4, 0.3, 4.42)),
                Some(metrics(4, 0.4, 4.91)),
            ],
        )
        .unwrap();
        let noisy = EvalBlock::build(
            "noisy",
            [
                Some(metrics(3, 0.15, 6.1)),
                None,
                Some(metrics(4, 0.32, 5.9)),
                Some(metrics(4, 0.44, 6.6)),
            ],
        )
        .unwrap();
        MetricReport { context: "scene".into(), crop_size: 128, n_train: 40, n_test: 11, clean, noisy }
    }

    #[test]
    fn json_round_trip_preserves_everything() {
        let report = sample_report();
        let json = report.to_json();
        assert_eq!(MetricReport::from_json(&json).unwrap(), report);
        assert_eq!(report.to_json(), json);
    }

    #[test]
    fn text_report_has_stable_rows() {
        let text = sample_report().to_text();
        assert!(text.contains("[clean]"));
        assert!(text.contains("[noisy]"));
        let ade_line = text
            .lines()
            .find_map(|l| l.strip_prefix("clean.weighted.ade_px = "))
            .unwrap();
        let expected = (3.0 * 4.89 + 4.0 * 4.42 + 4.0 * 4.91) / 11.0;
        assert!((ade_line.parse::<f64>().unwrap() - expected).abs() < 1e-12);
        let fr_row = text.lines().find(|l| l.starts_with("FR ")).unwrap();
        assert!(fr_row.contains("n/a"), "{fr_row}");
    }
}
