//! Annotation ingestion, train/test splitting, and dataset assembly.
//!
//! Annotations travel as JSON Lines, one object per light:
//!
//! ```json
//! {"image": "scene_00000.png",
//!  "vehicle_box": [12.0, 30.0, 120.0, 95.0],
//!  "light_type": "FL",
//!  "center": [40.0, 44.5],
//!  "corners": [[30.0, 38.0], [50.0, 38.0], [50.0, 51.0], null]}
//! ```
//!
//! `vehicle_box` is `[x_min, y_min, x_max, y_max]` with inclusive pixel
//! coordinates; `corners` are in (TL, TR, BR, BL) order with `null` marking
//! an invisible corner.

pub mod synth;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{LightAnnotation, LightType, Point, SceneImage, VehicleBox, CORNER_COUNT};
use crate::seed::derive_seed;
use crate::{Error, Result};

/// One serialized light annotation, mirroring the JSON Lines schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image: String,
    /// `[x_min, y_min, x_max, y_max]`, inclusive pixel coordinates.
    pub vehicle_box: [f64; 4],
    pub light_type: LightType,
    pub center: [f64; 2],
    /// (TL, TR, BR, BL); `null` marks an invisible corner.
    pub corners: [Option<[f64; 2]>; CORNER_COUNT],
}

impl AnnotationRecord {
    pub fn from_annotation(ann: &LightAnnotation) -> Self {
        AnnotationRecord {
            image: ann.image_ref.clone(),
            vehicle_box: [ann.vehicle.x_min, ann.vehicle.y_min, ann.vehicle.x_max, ann.vehicle.y_max],
            light_type: ann.light_type,
            center: [ann.center.x, ann.center.y],
            corners: ann.corners.map(|c| c.map(|p| [p.x, p.y])),
        }
    }

    /// Converts to the in-memory form and enforces record invariants.
    pub fn into_annotation(self) -> Result<LightAnnotation> {
        let [x1, y1, x2, y2] = self.vehicle_box;
        let ann = LightAnnotation {
            image_ref: self.image,
            vehicle: VehicleBox::new(x1, y1, x2, y2),
            light_type: self.light_type,
            center: Point::new(self.center[0], self.center[1]),
            corners: self.corners.map(|c| c.map(|[x, y]| Point::new(x, y))),
        };
        ann.validate()?;
        Ok(ann)
    }
}

/// Reads and validates a JSON Lines annotation file. Blank lines are
/// allowed and skipped; any malformed or invalid record fails with its
/// 1-based line number.
pub fn load_annotations(path: &Path) -> Result<Vec<LightAnnotation>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Annotation { line: idx + 1, msg: e.to_string() })?;
        let ann = record
            .into_annotation()
            .map_err(|e| Error::Annotation { line: idx + 1, msg: e.to_string() })?;
        out.push(ann);
    }
    Ok(out)
}

/// Writes annotations as canonical JSON Lines (one compact object per line,
/// schema field order).
pub fn save_annotations(path: &Path, annotations: &[LightAnnotation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ann in annotations {
        let record = AnnotationRecord::from_annotation(ann);
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::InvalidInput(format!("annotation not serializable: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A train/test split as sorted indices into the source annotation list.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// One message per light type that could not be stratified.
    pub warnings: Vec<String>,
}

/// Deterministic stratified split. Each light type is shuffled with its own
/// derived seed and cut so that every type's test share matches the global
/// share within one sample: per-type train counts start at
/// `floor(fraction * n_type)` and the remaining slots up to the global
/// target `round(fraction * n)` go to the largest fractional remainders
/// (ties budget to canonical type order). Types with fewer than two records
/// are placed entirely in train and reported in `warnings`.
pub fn split(
    annotations: &[LightAnnotation],
    train_fraction: f64,
    seed: u64,
) -> Result<SplitOutcome> {
    if !train_fraction.is_finite() || train_fraction <= 0.0 || train_fraction >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }

    let mut by_type: [Vec<usize>; 4] = Default::default();
    for (idx, ann) in annotations.iter().enumerate() {
        by_type[ann.light_type.index()].push(idx);
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();

    let stratifiable: Vec<usize> = LightType::ALL
        .iter()
        .map(|t| t.index())
        .filter(|&i| by_type[i].len() >= 2)
        .collect();
    for t in LightType::ALL {
        let n = by_type[t.index()].len();
        if n < 2 {
            warnings.push(format!(
                "light type {} has {n} record(s); too few to stratify, all placed in train",
                t.code()
            ));
            train.extend(&by_type[t.index()]);
        }
    }

    let total: usize = stratifiable.iter().map(|&i| by_type[i].len()).sum();
    if total > 0 {
        let target = (train_fraction * total as f64).round() as usize;
        let mut base: Vec<usize> = Vec::with_capacity(stratifiable.len());
        let mut remainder: Vec<f64> = Vec::with_capacity(stratifiable.len());
        for &i in &stratifiable {
            let ideal = train_fraction * by_type[i].len() as f64;
            let b = ideal.floor() as usize;
            base.push(b);
            remainder.push(ideal - b as f64);
        }
        let assigned: usize = base.iter().sum();
        let extras = target.saturating_sub(assigned);
        // Largest remainder first; order in `stratifiable` (canonical type
        // order) breaks ties.
        let mut order: Vec<usize> = (0..stratifiable.len()).collect();
        order.sort_by(|&a, &b| remainder[b].partial_cmp(&remainder[a]).unwrap());
        for &slot in order.iter().take(extras) {
            base[slot] += 1;
        }

        for (slot, &i) in stratifiable.iter().enumerate() {
            let mut indices = by_type[i].clone();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            indices.shuffle(&mut rng);
            let cut = base[slot].min(indices.len());
            train.extend(&indices[..cut]);
            test.extend(&indices[cut..]);
        }
    }

    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitOutcome { train, test, warnings })
}

/// In-memory dataset: scene images keyed by name plus their annotations.
#[derive(Debug, Clone)]
pub struct Dataset {
    scenes: BTreeMap<String, SceneImage>,
    annotations: Vec<LightAnnotation>,
}

impl Dataset {
    /// Builds a dataset, verifying that every annotation's image exists.
    pub fn new(scenes: BTreeMap<String, SceneImage>, annotations: Vec<LightAnnotation>) -> Result<Self> {
        for ann in &annotations {
            if !scenes.contains_key(&ann.image_ref) {
                return Err(Error::InvalidInput(format!(
                    "annotation references missing image {}",
                    ann.image_ref
                )));
            }
        }
        Ok(Dataset { scenes, annotations })
    }

    /// Loads annotations from `annotations_path` and each referenced image
    /// from `images_dir`.
    pub fn load(annotations_path: &Path, images_dir: &Path) -> Result<Self> {
        let annotations = load_annotations(annotations_path)?;
        let mut scenes = BTreeMap::new();
        for ann in &annotations {
            if !scenes.contains_key(&ann.image_ref) {
                let path = images_dir.join(&ann.image_ref);
                let img = image::open(&path).map_err(|e| Error::image(&path, e))?.into_rgb8();
                scenes.insert(ann.image_ref.clone(), img);
            }
        }
        Dataset::new(scenes, annotations)
    }

    pub fn annotations(&self) -> &[LightAnnotation] {
        &self.annotations
    }

    pub fn annotation(&self, idx: usize) -> &LightAnnotation {
        &self.annotations[idx]
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn scene(&self, image_ref: &str) -> Result<&SceneImage> {
        self.scenes
            .get(image_ref)
            .ok_or_else(|| Error::InvalidInput(format!("unknown image {image_ref}")))
    }

    /// The scene an annotation lives in.
    pub fn scene_for(&self, ann: &LightAnnotation) -> Result<&SceneImage> {
        self.scene(&ann.image_ref)
    }

    /// Indices of all annotations of one light type, ascending.
    pub fn indices_of_type(&self, light: LightType) -> Vec<usize> {
        self.annotations
            .iter()
            .enumerate()
            .filter(|(_, a)| a.light_type == light)
            .map(|(i, _)| i)
            .collect()
    }

    /// Scene names with their images, in name order.
    pub fn scenes(&self) -> impl Iterator<Item = (&str, &SceneImage)> {
        self.scenes.iter().map(|(n, i)| (n.as_str(), i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_json(light: &str, corners: &str) -> String {
        format!(
            "{{\"image\":\"s.png\",\"vehicle_box\":[10.0,20.0,110.0,90.0],\
             \"light_type\":\"{light}\",\"center\":[40.0,44.5],\"corners\":{corners}}}"
        )
    }

    fn write_lines(lines: &[String]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let (_d, path) = write_lines(&[]);
        assert!(load_annotations(&path).unwrap().is_empty());
    }

    #[test]
    fn null_corner_becomes_invisible() {
        let (_d, path) = write_lines(&[record_json(
            "FL",
            "[[30.0,38.0],null,[50.0,51.0],[30.0,51.0]]",
        )]);
        let anns = load_annotations(&path).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].visible_count(), 3);
        assert!(anns[0].corners[1].is_none());
        assert_eq!(anns[0].corners[0], Some(Point::new(30.0, 38.0)));
    }

    #[test]
    fn all_null_corners_rejected_with_line_number() {
        let good = record_json("FL", "[[30.0,38.0],[50.0,38.0],[50.0,51.0],[30.0,51.0]]");
        let bad = record_json("FR", "[null,null,null,null]");
        let (_d, path) = write_lines(&[good, bad]);
        match load_annotations(&path) {
            Err(Error::Annotation { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("visible"), "{msg}");
            }
            other => panic!("expected annotation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_rejected_with_line_number() {
        let good = record_json("FL", "[[30.0,38.0],[50.0,38.0],[50.0,51.0],[30.0,51.0]]");
        let (_d, path) = write_lines(&[good, "{not json".to_string()]);
        match load_annotations(&path) {
            Err(Error::Annotation { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected annotation error, got {other:?}"),
        }
    }

    #[test]
    fn center_outside_vehicle_box_rejected() {
        let bad = "{\"image\":\"s.png\",\"vehicle_box\":[10.0,20.0,110.0,90.0],\
                   \"light_type\":\"FL\",\"center\":[5.0,44.5],\
                   \"corners\":[[30.0,38.0],null,null,null]}";
        let (_d, path) = write_lines(&[bad.to_string()]);
        match load_annotations(&path) {
            Err(Error::Annotation { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("center"), "{msg}");
            }
            other => panic!("expected annotation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = "{\"image\":\"s.png\",\"vehicle_box\":[10.0,20.0,110.0,90.0],\
                   \"light_type\":\"FL\",\"center\":[40.0,44.5],\
                   \"corners\":[[30.0,38.0],null,null,null],\"extra\":1}";
        let (_d, path) = write_lines(&[bad.to_string()]);
        assert!(matches!(load_annotations(&path), Err(Error::Annotation { line: 1, .. })));
    }

    #[test]
    fn save_load_round_trip_is_stable() {
        let (_d, path) = write_lines(&[
            record_json("FL", "[[30.0,38.0],[50.0,38.0],[50.0,51.0],[30.0,51.0]]"),
            record_json("RR", "[[30.5,38.25],null,[50.0,51.0],null]"),
        ]);
        let anns = load_annotations(&path).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.jsonl");
        save_annotations(&out, &anns).unwrap();
        let reloaded = load_annotations(&out).unwrap();
        assert_eq!(anns, reloaded);
        let again = dir.path().join("again.jsonl");
        save_annotations(&again, &reloaded).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
    }

    fn synthetic_annotations(counts: [usize; 4]) -> Vec<LightAnnotation> {
        let mut anns = Vec::new();
        for (t, &n) in LightType::ALL.iter().zip(&counts) {
            for k in 0..n {
                anns.push(LightAnnotation {
                    image_ref: format!("img_{}_{k}.png", t.code()),
                    vehicle: VehicleBox::new(0.0, 0.0, 100.0, 80.0),
                    light_type: *t,
                    center: Point::new(50.0, 40.0),
                    corners: [
                        Some(Point::new(40.0, 30.0)),
                        Some(Point::new(60.0, 30.0)),
                        Some(Point::new(60.0, 50.0)),
                        Some(Point::new(40.0, 50.0)),
                    ],
                });
            }
        }
        anns
    }

    #[test]
    fn balanced_hundred_splits_half_per_type() {
        let anns = synthetic_annotations([25, 25, 25, 25]);
        let out = split(&anns, 0.5, 7).unwrap();
        assert_eq!(out.train.len(), 50);
        assert_eq!(out.test.len(), 50);
        assert!(out.warnings.is_empty());
        for t in LightType::ALL {
            let in_train =
                out.train.iter().filter(|&&i| anns[i].light_type == t).count();
            assert!((12..=13).contains(&in_train), "{} got {in_train}", t.code());
        }
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let anns = synthetic_annotations([10, 7, 13, 4]);
        let a = split(&anns, 0.7, 21).unwrap();
        let b = split(&anns, 0.7, 21).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..anns.len()).collect::<Vec<_>>());
        let c = split(&anns, 0.7, 22).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn fraction_extremes_rejected() {
        let anns = synthetic_annotations([4, 4, 4, 4]);
        for f in [0.0, 1.0, -0.25, 1.5, f64::NAN] {
            assert!(split(&anns, f, 1).is_err(), "fraction {f} accepted");
        }
    }

    #[test]
    fn scarce_type_goes_entirely_to_train_with_warning() {
        let anns = synthetic_annotations([10, 1, 10, 10]);
        let out = split(&anns, 0.5, 3).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("FR"));
        let fr_indices: Vec<usize> = anns
            .iter()
            .enumerate()
            .filter(|(_, a)| a.light_type == LightType::FrontRight)
            .map(|(i, _)| i)
            .collect();
        for i in fr_indices {
            assert!(out.train.contains(&i));
            assert!(!out.test.contains(&i));
        }
    }

    #[test]
    fn dataset_rejects_missing_image() {
        let anns = synthetic_annotations([1, 0, 0, 0]);
        let err = Dataset::new(BTreeMap::new(), anns);
        assert!(err.is_err());
    }
}
