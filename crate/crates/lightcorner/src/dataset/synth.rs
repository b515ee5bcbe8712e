//! Synthetic scene generator: cluttered dark scenes containing boxy
//! "vehicles" whose four corner lights are filled convex quadrilaterals
//! with exactly known corner coordinates. Serves as the desk-scale stand-in
//! for real dash-cam data and as the verification oracle, since every
//! emitted annotation is exact by construction.

use image::{Rgb, RgbImage};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::geometry::{LightAnnotation, LightType, Point, SceneImage, VehicleBox};
use crate::seed::derive_seed;
use crate::{Error, Result};

/// Light hues; front lights are white-ish, rear lights red or amber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hue {
    Red,
    Amber,
    White,
}

impl Hue {
    pub const ALL: [Hue; 3] = [Hue::Red, Hue::Amber, Hue::White];

    pub fn code(self) -> &'static str {
        match self {
            Hue::Red => "red",
            Hue::Amber => "amber",
            Hue::White => "white",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Hue::ALL.into_iter().find(|h| h.code() == code)
    }
}

/// Scene margin kept free of vehicles.
const BORDER: u32 = 2;
/// Minimum gap between two vehicles, in pixels.
const VEHICLE_GAP: i64 = 3;
/// Vehicle span bounds as multiples of the maximum light pixel span.
const VEHICLE_MIN_FACTOR: u32 = 3;
const VEHICLE_MAX_FACTOR: u32 = 5;

/// Generator parameters. Light sizes are corner-box spans in pixels: a
/// light of span (w, h) has its TL and TR corners exactly w apart.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scene_w: u32,
    pub scene_h: u32,
    pub n_scenes: usize,
    /// Vehicles per scene (each carries four lights, one per type).
    pub vehicles_min: usize,
    pub vehicles_max: usize,
    pub light_w_min: u32,
    pub light_w_max: u32,
    pub light_h_min: u32,
    pub light_h_max: u32,
    /// Corner perturbation strength in [0, 1]; 0 keeps lights rectangular.
    pub irregularity: f64,
    /// Per-corner occlusion probability in [0, 1]; 1 cannot be generated.
    pub occlusion_q: f64,
    /// Allowed hues; must permit white (front) and red or amber (rear).
    pub hues: Vec<Hue>,
    /// Background clutter density in [0, 1].
    pub clutter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene_w: 640,
            scene_h: 480,
            n_scenes: 4,
            vehicles_min: 1,
            vehicles_max: 3,
            light_w_min: 14,
            light_w_max: 26,
            light_h_min: 10,
            light_h_max: 20,
            irregularity: 0.35,
            occlusion_q: 0.3,
            hues: Hue::ALL.to_vec(),
            clutter: 0.5,
            seed: 9,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vehicles_min == 0 || self.vehicles_min > self.vehicles_max {
            return Err(Error::Config(format!(
                "vehicle count range [{}, {}] is invalid",
                self.vehicles_min, self.vehicles_max
            )));
        }
        if self.light_w_min < 7 || self.light_h_min < 7 {
            return Err(Error::Config(
                "light spans below 7 px cannot host corner occluders safely".into(),
            ));
        }
        if self.light_w_min > self.light_w_max || self.light_h_min > self.light_h_max {
            return Err(Error::Config("light size ranges are inverted".into()));
        }
        for (name, v) in [
            ("irregularity", self.irregularity),
            ("occlusion_q", self.occlusion_q),
            ("clutter", self.clutter),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.hues.is_empty() {
            return Err(Error::Config("hue set is empty".into()));
        }
        if !self.hues.contains(&Hue::White) {
            return Err(Error::Config("hue set must include white for front lights".into()));
        }
        if self.rear_hues().is_empty() {
            return Err(Error::Config(
                "hue set must include red or amber for rear lights".into(),
            ));
        }
        let need_w = VEHICLE_MIN_FACTOR * (self.light_w_max + 1) + 2 * BORDER;
        let need_h = VEHICLE_MIN_FACTOR * (self.light_h_max + 1) + 2 * BORDER;
        if need_w > self.scene_w || need_h > self.scene_h {
            return Err(Error::Config(format!(
                "lights of span {}x{} need a vehicle of at least {}x{} px, which does not \
                 fit a {}x{} scene",
                self.light_w_max,
                self.light_h_max,
                need_w - 2 * BORDER,
                need_h - 2 * BORDER,
                self.scene_w,
                self.scene_h
            )));
        }
        Ok(())
    }

    fn rear_hues(&self) -> Vec<Hue> {
        self.hues.iter().copied().filter(|h| *h != Hue::White).collect()
    }
}

/// Generated scenes (named, in index order) and their light annotations.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub scenes: Vec<(String, SceneImage)>,
    pub annotations: Vec<LightAnnotation>,
}

impl SynthOutput {
    pub fn into_dataset(self) -> Result<Dataset> {
        Dataset::new(self.scenes.into_iter().collect(), self.annotations)
    }
}

/// Generates `cfg.n_scenes` scenes. Each scene derives its own RNG stream
/// from `(cfg.seed, scene_index)`, so output is deterministic per seed and
/// scenes are independent.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    if cfg.occlusion_q >= 1.0 {
        return Err(Error::Config(
            "occlusion probability 1 would leave no light with a visible corner".into(),
        ));
    }
    let mut scenes = Vec::with_capacity(cfg.n_scenes);
    let mut annotations = Vec::new();
    for idx in 0..cfg.n_scenes {
        let name = format!("scene_{idx:05}.png");
        let (image, mut anns) = generate_scene(cfg, idx, &name)?;
        scenes.push((name, image));
        annotations.append(&mut anns);
    }
    Ok(SynthOutput { scenes, annotations })
}

fn generate_scene(
    cfg: &SynthConfig,
    scene_idx: usize,
    name: &str,
) -> Result<(SceneImage, Vec<LightAnnotation>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, scene_idx as u64));
    let (w, h) = (cfg.scene_w, cfg.scene_h);

    // Dark textured background.
    let base = [
        rng.random_range(18u8..=48),
        rng.random_range(18u8..=48),
        rng.random_range(18u8..=48),
    ];
    let mut noise = vec![0u8; (w as usize) * (h as usize) * 3];
    rng.fill_bytes(&mut noise);
    for (v, n) in noise.iter_mut().zip(0..) {
        let c = n % 3;
        *v = base[c] + (*v % 13);
    }
    let mut img = RgbImage::from_raw(w, h, noise).expect("buffer sized to w*h*3");

    // Clutter: muted boxes plus bright light-colored decoys, drawn before
    // vehicles so real lights always sit on top.
    let n_clutter =
        (cfg.clutter * (w as f64 * h as f64) / 1500.0).round() as usize;
    for _ in 0..n_clutter {
        let cx = rng.random_range(0..w) as i64;
        let cy = rng.random_range(0..h) as i64;
        let cw = rng.random_range(4..=(2 * cfg.light_w_max).max(8)) as i64;
        let ch = rng.random_range(4..=(2 * cfg.light_h_max).max(8)) as i64;
        let bright = rng.random::<f64>() < 0.25;
        let color = if bright {
            let hue = Hue::ALL[rng.random_range(0..Hue::ALL.len())];
            light_color(hue, &mut rng)
        } else {
            [
                rng.random_range(30u8..=110),
                rng.random_range(30u8..=110),
                rng.random_range(30u8..=110),
            ]
        };
        paint_rect(&mut img, cx, cy, cw, ch, color);
    }

    // Vehicles: non-overlapping bright boxes, each carrying four lights.
    let vw_lo = VEHICLE_MIN_FACTOR * (cfg.light_w_max + 1);
    let vw_hi = (VEHICLE_MAX_FACTOR * (cfg.light_w_max + 1)).min(w - 2 * BORDER);
    let vh_lo = VEHICLE_MIN_FACTOR * (cfg.light_h_max + 1);
    let vh_hi = (VEHICLE_MAX_FACTOR * (cfg.light_h_max + 1)).min(h - 2 * BORDER);
    let wanted = rng.random_range(cfg.vehicles_min..=cfg.vehicles_max);
    let mut placed: Vec<(i64, i64, i64, i64)> = Vec::new();
    let mut annotations = Vec::new();
    for _ in 0..wanted {
        let mut slot = None;
        for _ in 0..200 {
            let vw = rng.random_range(vw_lo..=vw_hi) as i64;
            let vh = rng.random_range(vh_lo..=vh_hi) as i64;
            let vx = rng.random_range(BORDER..=(w - BORDER - vw as u32)) as i64;
            let vy = rng.random_range(BORDER..=(h - BORDER - vh as u32)) as i64;
            let clear = placed.iter().all(|&(px, py, pw, ph)| {
                vx + vw + VEHICLE_GAP <= px
                    || px + pw + VEHICLE_GAP <= vx
                    || vy + vh + VEHICLE_GAP <= py
                    || py + ph + VEHICLE_GAP <= vy
            });
            if clear {
                slot = Some((vx, vy, vw, vh));
                break;
            }
        }
        let Some((vx, vy, vw, vh)) = slot else { continue };
        placed.push((vx, vy, vw, vh));
        paint_vehicle_body(&mut img, vx, vy, vw, vh, &mut rng);
        for light in LightType::ALL {
            let ann = place_light(cfg, &mut img, name, (vx, vy, vw, vh), light, &mut rng)?;
            annotations.push(ann);
        }
    }
    Ok((img, annotations))
}

fn paint_vehicle_body(img: &mut RgbImage, vx: i64, vy: i64, vw: i64, vh: i64, rng: &mut ChaCha8Rng) {
    let base = [
        rng.random_range(90u8..=150),
        rng.random_range(90u8..=150),
        rng.random_range(90u8..=150),
    ];
    let mut jitter = vec![0u8; (vw * vh) as usize];
    rng.fill_bytes(&mut jitter);
    for dy in 0..vh {
        for dx in 0..vw {
            let j = (jitter[(dy * vw + dx) as usize] % 9) as i16 - 4;
            let px = Rgb(base.map(|c| (c as i16 + j).clamp(0, 255) as u8));
            img.put_pixel((vx + dx) as u32, (vy + dy) as u32, px);
        }
    }
}

/// Places one light at its vehicle corner (FL top-left, FR top-right,
/// RL bottom-left, RR bottom-right), paints it, applies occluders, and
/// returns the exact annotation.
fn place_light(
    cfg: &SynthConfig,
    img: &mut RgbImage,
    image_ref: &str,
    vehicle: (i64, i64, i64, i64),
    light: LightType,
    rng: &mut ChaCha8Rng,
) -> Result<LightAnnotation> {
    let (vx, vy, vw, vh) = vehicle;
    let lw = rng.random_range(cfg.light_w_min..=cfg.light_w_max) as i64;
    let lh = rng.random_range(cfg.light_h_min..=cfg.light_h_max) as i64;
    let ix = rng.random_range(2i64..=5);
    let iy = rng.random_range(2i64..=5);
    let x0 = match light {
        LightType::FrontLeft | LightType::RearLeft => vx + ix,
        LightType::FrontRight | LightType::RearRight => vx + vw - 1 - ix - lw,
    };
    let y0 = match light {
        LightType::FrontLeft | LightType::FrontRight => vy + iy,
        LightType::RearLeft | LightType::RearRight => vy + vh - 1 - iy - lh,
    };
    let rect = [(x0, y0), (x0 + lw, y0), (x0 + lw, y0 + lh), (x0, y0 + lh)];

    // Perturb corners inward; keep only strictly convex results.
    let maxp = (cfg.irregularity * lw.min(lh) as f64 / 3.0).floor() as i64;
    let mut corners = rect;
    if maxp > 0 {
        for _ in 0..20 {
            let mut candidate = rect;
            let inward = [(1, 1), (-1, 1), (-1, -1), (1, -1)];
            for (c, (sx, sy)) in candidate.iter_mut().zip(inward) {
                let dx = rng.random_range(0..=maxp);
                let dy = rng.random_range(0..=maxp);
                c.0 += sx * dx;
                c.1 += sy * dy;
            }
            if is_strictly_convex(&candidate) {
                corners = candidate;
                break;
            }
        }
    }

    let hue = match light {
        LightType::FrontLeft | LightType::FrontRight => Hue::White,
        LightType::RearLeft | LightType::RearRight => {
            let rear = cfg.rear_hues();
            rear[rng.random_range(0..rear.len())]
        }
    };
    let color = light_color(hue, rng);
    paint_convex_quad(img, &corners, color);

    // Corner visibility: resample until at least one corner stays visible.
    let mut occluded = [false; 4];
    let mut tries = 0;
    loop {
        for o in &mut occluded {
            *o = rng.random::<f64>() < cfg.occlusion_q;
        }
        tries += 1;
        if !occluded.iter().all(|&o| o) {
            break;
        }
        if tries >= 1000 {
            occluded[0] = false;
            break;
        }
    }
    for j in 0..4 {
        if occluded[j] {
            let gray = rng.random_range(115u8..=125);
            let (cx, cy) = corners[j];
            let d_min = (0..4)
                .filter(|&k| k != j)
                .map(|k| {
                    let (ox, oy) = corners[k];
                    (((ox - cx).pow(2) + (oy - cy).pow(2)) as f64).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            let r = (lw.min(lh) / 4).clamp(2, (d_min - 1.0).floor() as i64);
            paint_disc(img, cx, cy, r, [gray, gray, gray]);
        }
    }

    let sum = corners.iter().fold((0i64, 0i64), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    let ann = LightAnnotation {
        image_ref: image_ref.to_string(),
        vehicle: VehicleBox::new(vx as f64, vy as f64, (vx + vw - 1) as f64, (vy + vh - 1) as f64),
        light_type: light,
        center: Point::new(sum.0 as f64 / 4.0, sum.1 as f64 / 4.0),
        corners: std::array::from_fn(|j| {
            (!occluded[j]).then(|| Point::new(corners[j].0 as f64, corners[j].1 as f64))
        }),
    };
    ann.validate()?;
    Ok(ann)
}

fn light_color(hue: Hue, rng: &mut ChaCha8Rng) -> [u8; 3] {
    match hue {
        Hue::White => {
            let r = rng.random_range(225u8..=255);
            let g = r - rng.random_range(0u8..=20);
            let b = g - rng.random_range(0u8..=20);
            [r, g, b]
        }
        Hue::Red => [
            rng.random_range(205u8..=255),
            rng.random_range(10u8..=55),
            rng.random_range(10u8..=55),
        ],
        Hue::Amber => [
            rng.random_range(205u8..=255),
            rng.random_range(130u8..=185),
            rng.random_range(0u8..=35),
        ],
    }
}

/// All consecutive edge cross products strictly positive in (TL, TR, BR,
/// BL) order with y pointing down.
fn is_strictly_convex(quad: &[(i64, i64); 4]) -> bool {
    (0..4).all(|i| {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        let c = quad[(i + 2) % 4];
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        cross > 0
    })
}

fn point_in_convex_quad(px: i64, py: i64, quad: &[(i64, i64); 4]) -> bool {
    (0..4).all(|i| {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0) >= 0
    })
}

fn paint_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, color: [u8; 3]) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    for py in y.max(0)..(y + h).min(ih) {
        for px in x.max(0)..(x + w).min(iw) {
            img.put_pixel(px as u32, py as u32, Rgb(color));
        }
    }
}

/// Fills every pixel whose lattice point lies inside or on the quad.
fn paint_convex_quad(img: &mut RgbImage, quad: &[(i64, i64); 4], color: [u8; 3]) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    let xs = quad.iter().map(|c| c.0);
    let ys = quad.iter().map(|c| c.1);
    let (x_lo, x_hi) = (xs.clone().min().unwrap(), xs.max().unwrap());
    let (y_lo, y_hi) = (ys.clone().min().unwrap(), ys.max().unwrap());
    for py in y_lo.max(0)..=y_hi.min(ih - 1) {
        for px in x_lo.max(0)..=x_hi.min(iw - 1) {
            if point_in_convex_quad(px, py, quad) {
                img.put_pixel(px as u32, py as u32, Rgb(color));
            }
        }
    }
}

fn paint_disc(img: &mut RgbImage, cx: i64, cy: i64, r: i64, color: [u8; 3]) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    for py in (cy - r).max(0)..=(cy + r).min(ih - 1) {
        for px in (cx - r).max(0)..=(cx + r).min(iw - 1) {
            if (px - cx).pow(2) + (py - cy).pow(2) <= r * r {
                img.put_pixel(px as u32, py as u32, Rgb(color));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_config() -> SynthConfig {
        SynthConfig {
            scene_w: 320,
            scene_h: 240,
            n_scenes: 3,
            vehicles_min: 1,
            vehicles_max: 2,
            irregularity: 0.0,
            occlusion_q: 0.0,
            clutter: 0.0,
            seed: 77,
            ..SynthConfig::default()
        }
    }

    /// Bounding box of bright (R >= 200) pixels near the annotation.
    fn painted_bbox(img: &SceneImage, ann: &LightAnnotation) -> (i64, i64, i64, i64) {
        let xs: Vec<f64> = ann.corners.iter().flatten().map(|p| p.x).collect();
        let ys: Vec<f64> = ann.corners.iter().flatten().map(|p| p.y).collect();
        let x_lo = xs.iter().cloned().fold(f64::INFINITY, f64::min) as i64 - 2;
        let x_hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) as i64 + 2;
        let y_lo = ys.iter().cloned().fold(f64::INFINITY, f64::min) as i64 - 2;
        let y_hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) as i64 + 2;
        let (mut bx_lo, mut bx_hi, mut by_lo, mut by_hi) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                if px < 0 || py < 0 || px >= img.width() as i64 || py >= img.height() as i64 {
                    continue;
                }
                if img.get_pixel(px as u32, py as u32)[0] >= 200 {
                    bx_lo = bx_lo.min(px);
                    bx_hi = bx_hi.max(px);
                    by_lo = by_lo.min(py);
                    by_hi = by_hi.max(py);
                }
            }
        }
        (bx_lo, by_lo, bx_hi, by_hi)
    }

    #[test]
    fn regular_lights_paint_their_exact_corner_box() {
        let out = generate_synthetic(&quiet_config()).unwrap();
        assert!(!out.annotations.is_empty());
        for ann in &out.annotations {
            assert_eq!(ann.visible_count(), 4);
            let img = &out.scenes.iter().find(|(n, _)| *n == ann.image_ref).unwrap().1;
            let corners: Vec<Point> = ann.corners.iter().flatten().cloned().collect();
            let x_lo = corners.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) as i64;
            let x_hi = corners.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) as i64;
            let y_lo = corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) as i64;
            let y_hi = corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) as i64;
            assert_eq!(painted_bbox(img, ann), (x_lo, y_lo, x_hi, y_hi));
        }
    }

    #[test]
    fn irregular_lights_still_paint_to_their_corner_extremes() {
        let cfg = SynthConfig { irregularity: 1.0, seed: 5, ..quiet_config() };
        let out = generate_synthetic(&cfg).unwrap();
        for ann in &out.annotations {
            let img = &out.scenes.iter().find(|(n, _)| *n == ann.image_ref).unwrap().1;
            let corners: Vec<Point> = ann.corners.iter().flatten().cloned().collect();
            let x_lo = corners.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) as i64;
            let x_hi = corners.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) as i64;
            let y_lo = corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) as i64;
            let y_hi = corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) as i64;
            assert_eq!(painted_bbox(img, ann), (x_lo, y_lo, x_hi, y_hi));
        }
    }

    #[test]
    fn deterministic_per_seed_and_distinct_across_seeds() {
        let cfg = SynthConfig { clutter: 0.4, occlusion_q: 0.3, ..quiet_config() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.annotations, b.annotations);
        for ((an, ai), (bn, bi)) in a.scenes.iter().zip(&b.scenes) {
            assert_eq!(an, bn);
            assert_eq!(ai.as_raw(), bi.as_raw());
        }
        let c = generate_synthetic(&SynthConfig { seed: 78, ..cfg }).unwrap();
        assert!(a.scenes[0].1.as_raw() != c.scenes[0].1.as_raw());
    }

    #[test]
    fn full_occlusion_probability_is_rejected() {
        let cfg = SynthConfig { occlusion_q: 1.0, ..quiet_config() };
        match generate_synthetic(&cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("occlusion")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn annotations_are_valid_and_inside_their_vehicle() {
        let cfg = SynthConfig {
            irregularity: 0.8,
            occlusion_q: 0.4,
            clutter: 0.6,
            n_scenes: 4,
            ..quiet_config()
        };
        let out = generate_synthetic(&cfg).unwrap();
        for ann in &out.annotations {
            ann.validate().unwrap();
            assert!(ann.visible_count() >= 1);
            assert!(ann.vehicle.x_min >= 0.0 && ann.vehicle.y_min >= 0.0);
            assert!(ann.vehicle.x_max < cfg.scene_w as f64);
            assert!(ann.vehicle.y_max < cfg.scene_h as f64);
            for p in ann.corners.iter().flatten() {
                assert!(p.x >= ann.vehicle.x_min && p.x <= ann.vehicle.x_max);
                assert!(p.y >= ann.vehicle.y_min && p.y <= ann.vehicle.y_max);
            }
        }
    }

    #[test]
    fn occlusion_hides_corners_but_never_all() {
        let cfg = SynthConfig { occlusion_q: 0.5, n_scenes: 6, ..quiet_config() };
        let out = generate_synthetic(&cfg).unwrap();
        let hidden: usize =
            out.annotations.iter().map(|a| 4 - a.visible_count()).sum();
        assert!(hidden > 0, "q=0.5 should hide some corners");
        for ann in &out.annotations {
            assert!(ann.visible_count() >= 1);
        }
    }

    #[test]
    fn perturbed_quads_are_strictly_convex() {
        let cfg = SynthConfig { irregularity: 1.0, n_scenes: 5, seed: 31, ..quiet_config() };
        let out = generate_synthetic(&cfg).unwrap();
        let mut perturbed = 0;
        for ann in &out.annotations {
            let q: Vec<(i64, i64)> =
                ann.corners.iter().flatten().map(|p| (p.x as i64, p.y as i64)).collect();
            let quad: [(i64, i64); 4] = q.try_into().unwrap();
            assert!(is_strictly_convex(&quad), "{quad:?}");
            let w = quad.iter().map(|c| c.0).max().unwrap() - quad.iter().map(|c| c.0).min().unwrap();
            if quad[0].0 != quad[3].0 || quad[0].1 != quad[1].1 || w == 0 {
                perturbed += 1;
            }
        }
        assert!(perturbed > 0, "irregularity 1 should perturb at least one light");
    }

    #[test]
    fn infeasible_scene_is_rejected() {
        let cfg = SynthConfig { scene_w: 60, scene_h: 60, ..quiet_config() };
        match generate_synthetic(&cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("fit"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn hue_set_must_cover_both_light_roles() {
        let front_only = SynthConfig { hues: vec![Hue::White], ..quiet_config() };
        assert!(generate_synthetic(&front_only).is_err());
        let rear_only = SynthConfig { hues: vec![Hue::Red, Hue::Amber], ..quiet_config() };
        assert!(generate_synthetic(&rear_only).is_err());
        let minimal = SynthConfig { hues: vec![Hue::White, Hue::Amber], ..quiet_config() };
        assert!(generate_synthetic(&minimal).is_ok());
    }

    #[test]
    fn output_converts_to_a_balanced_dataset() {
        let out = generate_synthetic(&quiet_config()).unwrap();
        let n = out.annotations.len();
        let dataset = out.into_dataset().unwrap();
        assert_eq!(dataset.len(), n);
        let counts: Vec<usize> =
            LightType::ALL.iter().map(|t| dataset.indices_of_type(*t).len()).collect();
        assert!(counts.iter().all(|&c| c == counts[0] && c > 0), "{counts:?}");
    }
}
