//! Coordinate frames, crop extraction, target normalization, and the
//! horizontal-reflection augmentation.
//!
//! Scene frame: pixel coordinates of the full traffic scene image, x right,
//! y down. Crop frame: pixel coordinates of the S-by-S crop. Normalized
//! frame: corner offsets from the crop center divided by the half extent
//! h = S/2, so every in-window corner lands in [-1, 1] per component.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Scene images are 8-bit RGB rasters; intensities map to [0,1] via /255.
pub type SceneImage = image::RgbImage;

/// Number of corners per light; order is fixed as (TL, TR, BR, BL).
pub const CORNER_COUNT: usize = 4;

/// A point in pixels; the frame (scene or crop) is stated per use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned vehicle bounding box in the scene frame. Coordinates are
/// inclusive pixel positions: the pixel column `x_max` still belongs to the
/// vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl VehicleBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        VehicleBox { x_min, y_min, x_max, y_max }
    }

    /// Checks ordering and finiteness; image-bounds containment is checked
    /// where the image dimensions are known.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("vehicle box has non-finite coordinates".into()));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::InvalidInput(format!(
                "vehicle box is not properly ordered: [{}, {}] x [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }

    /// Closed-interval membership test.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Projects a point onto the box (componentwise clamp).
    pub fn clamp_point(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.x_min, self.x_max), p.y.clamp(self.y_min, self.y_max))
    }

    /// True when the whole box lies inside a `width` x `height` image.
    pub fn within_image(&self, width: u32, height: u32) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= f64::from(width) - 1.0
            && self.y_max <= f64::from(height) - 1.0
    }
}

/// The four vehicle light positions; each gets its own regression model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LightType {
    #[serde(rename = "FL")]
    FrontLeft,
    #[serde(rename = "FR")]
    FrontRight,
    #[serde(rename = "RL")]
    RearLeft,
    #[serde(rename = "RR")]
    RearRight,
}

impl LightType {
    pub const ALL: [LightType; 4] =
        [LightType::FrontLeft, LightType::FrontRight, LightType::RearLeft, LightType::RearRight];

    /// Stable index in [0, 4), consistent with [`LightType::ALL`].
    pub fn index(self) -> usize {
        match self {
            LightType::FrontLeft => 0,
            LightType::FrontRight => 1,
            LightType::RearLeft => 2,
            LightType::RearRight => 3,
        }
    }

    /// The light type this one becomes under a horizontal mirror.
    pub fn mirrored(self) -> Self {
        match self {
            LightType::FrontLeft => LightType::FrontRight,
            LightType::FrontRight => LightType::FrontLeft,
            LightType::RearLeft => LightType::RearRight,
            LightType::RearRight => LightType::RearLeft,
        }
    }

    /// Two-letter code used in files and reports.
    pub fn code(self) -> &'static str {
        match self {
            LightType::FrontLeft => "FL",
            LightType::FrontRight => "FR",
            LightType::RearLeft => "RL",
            LightType::RearRight => "RR",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }
}

impl std::fmt::Display for LightType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// One labeled light. Corner order is (top-left, top-right, bottom-right,
/// bottom-left); `None` marks a corner that is not visible.
#[derive(Debug, Clone, PartialEq)]
pub struct LightAnnotation {
    /// Scene image file name or id; resolved against the dataset directory.
    pub image_ref: String,
    pub vehicle: VehicleBox,
    pub light_type: LightType,
    /// Light center in the scene frame.
    pub center: Point,
    pub corners: [Option<Point>; CORNER_COUNT],
}

impl LightAnnotation {
    pub fn visible_count(&self) -> usize {
        self.corners.iter().filter(|c| c.is_some()).count()
    }

    /// Enforces the record-level invariants: finite values, at least one
    /// visible corner, center inside the vehicle box.
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        if !self.center.is_finite() {
            return Err(Error::InvalidInput("center has non-finite coordinates".into()));
        }
        if self.corners.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("corner has non-finite coordinates".into()));
        }
        if self.visible_count() == 0 {
            return Err(Error::InvalidInput("annotation has zero visible corners".into()));
        }
        if !self.vehicle.contains(self.center) {
            return Err(Error::InvalidInput(format!(
                "center ({}, {}) lies outside the vehicle box",
                self.center.x, self.center.y
            )));
        }
        Ok(())
    }
}

/// Crop context mode: whole scene, or pixels restricted to the vehicle box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropMode {
    /// Crop straight from the full traffic scene.
    SceneContext,
    /// Pixels outside the vehicle box are replaced with black padding.
    VehicleOnly,
}

impl CropMode {
    pub fn code(self) -> &'static str {
        match self {
            CropMode::SceneContext => "scene",
            CropMode::VehicleOnly => "vehicle",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "scene" => Some(CropMode::SceneContext),
            "vehicle" => Some(CropMode::VehicleOnly),
            _ => None,
        }
    }
}

/// Square crop geometry: side length S (even) and the half extent h = S/2
/// that doubles as the target normalization scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    size: u32,
    pub mode: CropMode,
}

impl CropSpec {
    /// Default crop side: 128 px, making the normalization scale h = 64.
    pub const DEFAULT_SIZE: u32 = 128;

    pub fn new(size: u32, mode: CropMode) -> Result<Self> {
        if size == 0 || size % 2 != 0 {
            return Err(Error::Config(format!("crop size must be positive and even, got {size}")));
        }
        Ok(CropSpec { size, mode })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// Half extent h = S/2; targets are offsets divided by this scale.
    pub fn half_extent(&self) -> f64 {
        f64::from(self.size) / 2.0
    }
}

/// S-by-S RGB crop in channel-major (CHW) layout with intensities in [0,1].
#[derive(Clone, PartialEq)]
pub struct CropPixels {
    size: u32,
    data: Vec<f64>,
}

impl CropPixels {
    pub fn zeros(size: u32) -> Self {
        CropPixels { size, data: vec![0.0; 3 * (size as usize) * (size as usize)] }
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// Wraps an existing CHW buffer; `data` must hold `3 * size * size`
    /// values in [0, 1].
    pub fn from_data(size: u32, data: Vec<f64>) -> Result<Self> {
        let want = 3 * (size as usize) * (size as usize);
        if data.len() != want {
            return Err(Error::InvalidInput(format!(
                "crop buffer holds {} values, expected {want}",
                data.len()
            )));
        }
        Ok(CropPixels { size, data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, y: u32, x: u32) -> f64 {
        let s = self.size as usize;
        self.data[channel * s * s + (y as usize) * s + x as usize]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, y: u32, x: u32, v: f64) {
        let s = self.size as usize;
        self.data[channel * s * s + (y as usize) * s + x as usize] = v;
    }
}

impl std::fmt::Debug for CropPixels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CropPixels({}x{})", self.size, self.size)
    }
}

/// Eight normalized head outputs: (x, y) offset pairs in (TL, TR, BR, BL)
/// order, each component in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerPrediction(pub [f64; 8]);

impl CornerPrediction {
    /// The (x, y) pair for corner `j` in (TL, TR, BR, BL) order.
    pub fn corner(&self, j: usize) -> (f64, f64) {
        (self.0[2 * j], self.0[2 * j + 1])
    }

    pub fn corners(&self) -> [[f64; 2]; CORNER_COUNT] {
        [
            [self.0[0], self.0[1]],
            [self.0[2], self.0[3]],
            [self.0[4], self.0[5]],
            [self.0[6], self.0[7]],
        ]
    }
}

/// Output of [`normalize_targets`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTargets {
    /// Normalized offsets; invisible corners are exactly (0, 0).
    pub targets: [[f64; 2]; CORNER_COUNT],
    /// Visibility per corner.
    pub mask: [bool; CORNER_COUNT],
    pub visible_count: usize,
    /// Set when a visible corner fell outside the window and was clamped.
    pub clamped: [bool; CORNER_COUNT],
    /// Width/height of the axis-aligned box over visible ground-truth
    /// corners, in scene pixels (zero when degenerate, e.g. one corner).
    pub light_box_w: f64,
    pub light_box_h: f64,
}

/// A model-ready sample: pixels plus normalized targets and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CropSample {
    pub pixels: CropPixels,
    pub targets: [[f64; 2]; CORNER_COUNT],
    pub mask: [bool; CORNER_COUNT],
    pub visible_count: usize,
    pub light_type: LightType,
    /// Crop center in the scene frame, after any noise; kept unrounded.
    pub crop_center: Point,
    pub light_box_w: f64,
    pub light_box_h: f64,
    pub clamped: [bool; CORNER_COUNT],
    pub mode: CropMode,
    /// Effective center offset applied by noise injection, (0, 0) when clean.
    pub applied_noise: (f64, f64),
}

impl CropSample {
    pub fn spec(&self) -> CropSpec {
        // A sample's pixels always come from a valid spec.
        CropSpec::new(self.pixels.size(), self.mode).expect("sample carries a valid crop size")
    }
}

/// Top-left scene coordinate of the crop window: the center is rounded to
/// the nearest integer pixel (half away from zero) for window placement,
/// while target offsets keep using the unrounded center.
fn window_origin(center: Point, spec: &CropSpec) -> (i64, i64) {
    let h = (spec.size() / 2) as i64;
    (center.x.round() as i64 - h, center.y.round() as i64 - h)
}

fn intensity(v: u8) -> f64 {
    f64::from(v) / 255.0
}

/// Extracts the S-by-S window around `center` from the full scene; window
/// regions outside the image are black.
pub fn scene_context_crop(scene: &SceneImage, center: Point, spec: &CropSpec) -> Result<CropPixels> {
    if spec.mode != CropMode::SceneContext {
        return Err(Error::InvalidInput("scene_context_crop requires SceneContext mode".into()));
    }
    crop_window(scene, center, spec, None)
}

/// Extracts the S-by-S window around `center` with scene pixels first
/// restricted to the vehicle box: every output pixel whose scene location
/// falls outside the (closed) box is exactly black.
pub fn vehicle_only_crop(
    scene: &SceneImage,
    vehicle: &VehicleBox,
    center: Point,
    spec: &CropSpec,
) -> Result<CropPixels> {
    if spec.mode != CropMode::VehicleOnly {
        return Err(Error::InvalidInput("vehicle_only_crop requires VehicleOnly mode".into()));
    }
    vehicle.validate()?;
    if !vehicle.contains(center) {
        return Err(Error::InvalidInput(format!(
            "crop center ({}, {}) lies outside the vehicle box",
            center.x, center.y
        )));
    }
    crop_window(scene, center, spec, Some(vehicle))
}

fn crop_window(
    scene: &SceneImage,
    center: Point,
    spec: &CropSpec,
    restrict: Option<&VehicleBox>,
) -> Result<CropPixels> {
    if !center.is_finite() {
        return Err(Error::InvalidInput("crop center has non-finite coordinates".into()));
    }
    let (w, h) = (scene.width() as i64, scene.height() as i64);
    if restrict.is_none()
        && !(center.x >= 0.0 && center.x < w as f64 && center.y >= 0.0 && center.y < h as f64)
    {
        return Err(Error::InvalidInput(format!(
            "crop center ({}, {}) lies outside the {}x{} scene",
            center.x, center.y, w, h
        )));
    }
    let (ox, oy) = window_origin(center, spec);
    let s = spec.size();
    let mut out = CropPixels::zeros(s);
    for cy in 0..s {
        let sy = oy + i64::from(cy);
        if sy < 0 || sy >= h {
            continue; // whole row stays black
        }
        for cx in 0..s {
            let sx = ox + i64::from(cx);
            if sx < 0 || sx >= w {
                continue;
            }
            if let Some(b) = restrict {
                if !b.contains(Point::new(sx as f64, sy as f64)) {
                    continue;
                }
            }
            let px = scene.get_pixel(sx as u32, sy as u32);
            out.set(0, cy, cx, intensity(px[0]));
            out.set(1, cy, cx, intensity(px[1]));
            out.set(2, cy, cx, intensity(px[2]));
        }
    }
    Ok(out)
}

/// Converts visible scene-frame corners into normalized offsets from
/// `crop_center`, clamped to [-1, 1] with per-corner clamp flags; invisible
/// corners become (0, 0) with mask false.
pub fn normalize_targets(
    annotation: &LightAnnotation,
    crop_center: Point,
    spec: &CropSpec,
) -> Result<NormalizedTargets> {
    if !crop_center.is_finite() {
        return Err(Error::InvalidInput("crop center has non-finite coordinates".into()));
    }
    if annotation.visible_count() == 0 {
        return Err(Error::InvalidInput(
            "annotation has zero visible corners; the per-example loss divides by the visible count"
                .into(),
        ));
    }
    let h = spec.half_extent();
    let mut targets = [[0.0f64; 2]; CORNER_COUNT];
    let mut mask = [false; CORNER_COUNT];
    let mut clamped = [false; CORNER_COUNT];
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for (j, corner) in annotation.corners.iter().enumerate() {
        let Some(c) = corner else { continue };
        mask[j] = true;
        min_x = min_x.min(c.x);
        max_x = max_x.max(c.x);
        min_y = min_y.min(c.y);
        max_y = max_y.max(c.y);
        let tx = (c.x - crop_center.x) / h;
        let ty = (c.y - crop_center.y) / h;
        if !(-1.0..=1.0).contains(&tx) || !(-1.0..=1.0).contains(&ty) {
            clamped[j] = true;
        }
        targets[j] = [tx.clamp(-1.0, 1.0), ty.clamp(-1.0, 1.0)];
    }
    Ok(NormalizedTargets {
        targets,
        mask,
        visible_count: annotation.visible_count(),
        clamped,
        light_box_w: max_x - min_x,
        light_box_h: max_y - min_y,
    })
}

/// Maps normalized predictions back into the scene frame:
/// `p_scene = crop_center + h * p_normalized`.
pub fn denormalize_prediction(
    pred: &CornerPrediction,
    crop_center: Point,
    spec: &CropSpec,
) -> [Point; CORNER_COUNT] {
    let h = spec.half_extent();
    let mut out = [Point::new(0.0, 0.0); CORNER_COUNT];
    for (j, p) in out.iter_mut().enumerate() {
        let (tx, ty) = pred.corner(j);
        *p = Point::new(crop_center.x + h * tx, crop_center.y + h * ty);
    }
    out
}

/// Assembles a model-ready sample: crops around `crop_center` in the mode
/// carried by `spec` and normalizes targets relative to the same center.
/// `crop_center` is the possibly noise-shifted center; pass the annotation's
/// own center for a clean sample.
pub fn make_crop_sample(
    scene: &SceneImage,
    annotation: &LightAnnotation,
    crop_center: Point,
    spec: &CropSpec,
) -> Result<CropSample> {
    let pixels = match spec.mode {
        CropMode::SceneContext => scene_context_crop(scene, crop_center, spec)?,
        CropMode::VehicleOnly => vehicle_only_crop(scene, &annotation.vehicle, crop_center, spec)?,
    };
    let nt = normalize_targets(annotation, crop_center, spec)?;
    Ok(CropSample {
        pixels,
        targets: nt.targets,
        mask: nt.mask,
        visible_count: nt.visible_count,
        light_type: annotation.light_type,
        crop_center,
        light_box_w: nt.light_box_w,
        light_box_h: nt.light_box_h,
        clamped: nt.clamped,
        mode: spec.mode,
        applied_noise: (crop_center.x - annotation.center.x, crop_center.y - annotation.center.y),
    })
}

/// Index permutation applied to corner-indexed arrays under a horizontal
/// mirror: TL <-> TR and BL <-> BR.
const FLIP_PERM: [usize; CORNER_COUNT] = [1, 0, 3, 2];

/// Mirrors a sample horizontally: pixel columns reversed, target x negated,
/// corner roles permuted TL<->TR / BL<->BR, light type mirrored. Applying
/// the operation twice returns the original sample bit-exactly.
///
/// `crop_center` and `applied_noise` are provenance of the original scene
/// and are kept unchanged.
pub fn flip_horizontal(sample: &CropSample) -> CropSample {
    let s = sample.pixels.size();
    let mut pixels = CropPixels::zeros(s);
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                pixels.set(c, y, x, sample.pixels.get(c, y, s - 1 - x));
            }
        }
    }
    let mut targets = [[0.0f64; 2]; CORNER_COUNT];
    let mut mask = [false; CORNER_COUNT];
    let mut clamped = [false; CORNER_COUNT];
    for j in 0..CORNER_COUNT {
        let src = FLIP_PERM[j];
        mask[j] = sample.mask[src];
        clamped[j] = sample.clamped[src];
        if mask[j] {
            targets[j] = [-sample.targets[src][0], sample.targets[src][1]];
        }
    }
    CropSample {
        pixels,
        targets,
        mask,
        visible_count: sample.visible_count,
        light_type: sample.light_type.mirrored(),
        crop_center: sample.crop_center,
        light_box_w: sample.light_box_w,
        light_box_h: sample.light_box_h,
        clamped,
        mode: sample.mode,
        applied_noise: sample.applied_noise,
    }
}
