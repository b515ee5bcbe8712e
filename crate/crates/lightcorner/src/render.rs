//! Qualitative overlays: the crop with a blue dot at the crop center, the
//! ground-truth corners joined in green, and the predicted corners joined
//! in red. Polygons run through the ground-truth-visible corners in
//! TL, TR, BR, BL order and close only when all four corners are visible.

use image::{Rgb, RgbImage};

use crate::geometry::{CornerPrediction, CropPixels, CropSample, CORNER_COUNT};

pub const CENTER_COLOR: Rgb<u8> = Rgb([40, 120, 255]);
pub const TRUTH_COLOR: Rgb<u8> = Rgb([0, 220, 60]);
pub const PREDICTION_COLOR: Rgb<u8> = Rgb([255, 40, 40]);

/// Converts a CHW crop in [0, 1] back to an 8-bit image.
pub fn crop_to_image(pixels: &CropPixels) -> RgbImage {
    let s = pixels.size();
    let mut img = RgbImage::new(s, s);
    for y in 0..s {
        for x in 0..s {
            let px = [0, 1, 2].map(|c| (pixels.get(c, y, x) * 255.0).round() as u8);
            img.put_pixel(x, y, Rgb(px));
        }
    }
    img
}

fn plot(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Bresenham segment; endpoints are rounded to the pixel grid and clipped
/// at plot time.
fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(img, x0, y0, color);
        if x0 == x1 && y0 == y1 {
            return;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn draw_disc(img: &mut RgbImage, center: (f64, f64), radius: i64, color: Rgb<u8>) {
    let (cx, cy) = (center.0.round() as i64, center.1.round() as i64);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy <= radius * radius {
                plot(img, cx + dx, cy + dy, color);
            }
        }
    }
}

/// Joins the points in order; closes the loop only when `closed`. A single
/// point degenerates to one plotted pixel.
fn draw_polyline(img: &mut RgbImage, points: &[(f64, f64)], closed: bool, color: Rgb<u8>) {
    match points {
        [] => {}
        [p] => draw_disc(img, *p, 1, color),
        _ => {
            for pair in points.windows(2) {
                draw_line(img, pair[0], pair[1], color);
            }
            if closed {
                draw_line(img, points[points.len() - 1], points[0], color);
            }
        }
    }
}

/// Renders one sample's overlay. Corner positions are denormalized into
/// crop pixels around the crop-center location; the prediction (when given)
/// is drawn over the same ground-truth-visible corner subset the metrics
/// evaluate, so the two polygons are directly comparable.
pub fn render_overlay(sample: &CropSample, pred: Option<&CornerPrediction>) -> RgbImage {
    let mut img = crop_to_image(&sample.pixels);
    let h = f64::from(sample.pixels.size() / 2);
    let center = &sample.crop_center;
    let origin = (center.x.round() - h, center.y.round() - h);
    let center_px = (center.x - origin.0, center.y - origin.1);

    let in_crop = |nx: f64, ny: f64| (center_px.0 + h * nx, center_px.1 + h * ny);
    let truth: Vec<(f64, f64)> = (0..CORNER_COUNT)
        .filter(|&j| sample.mask[j])
        .map(|j| in_crop(sample.targets[j][0], sample.targets[j][1]))
        .collect();
    let closed = sample.visible_count == CORNER_COUNT;
    draw_polyline(&mut img, &truth, closed, TRUTH_COLOR);

    if let Some(pred) = pred {
        let guesses: Vec<(f64, f64)> = (0..CORNER_COUNT)
            .filter(|&j| sample.mask[j])
            .map(|j| in_crop(pred.0[2 * j], pred.0[2 * j + 1]))
            .collect();
        draw_polyline(&mut img, &guesses, closed, PREDICTION_COLOR);
    }

    draw_disc(&mut img, center_px, 2, CENTER_COLOR);
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        make_crop_sample, CropMode, CropSpec, LightAnnotation, LightType, Point, SceneImage,
        VehicleBox,
    };

    fn sample_with_corners(corners: [Option<Point>; 4]) -> CropSample {
        let ann = LightAnnotation {
            image_ref: "s".into(),
            vehicle: VehicleBox::new(0.0, 0.0, 199.0, 199.0),
            light_type: LightType::FrontLeft,
            center: Point::new(100.0, 100.0),
            corners,
        };
        let spec = CropSpec::new(64, CropMode::SceneContext).unwrap();
        make_crop_sample(&SceneImage::new(200, 200), &ann, ann.center, &spec).unwrap()
    }

    fn count_color(img: &RgbImage, color: Rgb<u8>) -> usize {
        img.pixels().filter(|&&p| p == color).count()
    }

    #[test]
    fn output_matches_crop_size_and_has_all_layers() {
        let sample = sample_with_corners([
            Some(Point::new(90.0, 90.0)),
            Some(Point::new(110.0, 90.0)),
            Some(Point::new(110.0, 110.0)),
            Some(Point::new(90.0, 110.0)),
        ]);
        let pred = CornerPrediction([-0.5, -0.5, 0.5, -0.5, 0.5, 0.5, -0.5, 0.5]);
        let img = render_overlay(&sample, Some(&pred));
        assert_eq!((img.width(), img.height()), (64, 64));
        assert!(count_color(&img, TRUTH_COLOR) > 0);
        assert!(count_color(&img, PREDICTION_COLOR) > 0);
        assert!(count_color(&img, CENTER_COLOR) > 0);
    }

    /// A full square 20 px wide drawn with h = 32: each side is 20 px of
    /// axis-aligned line, so the closed green loop covers 80 pixels less 4
    /// shared corners.
    #[test]
    fn closed_square_has_expected_perimeter_pixel_count() {
        let sample = sample_with_corners([
            Some(Point::new(90.0, 90.0)),
            Some(Point::new(110.0, 90.0)),
            Some(Point::new(110.0, 110.0)),
            Some(Point::new(90.0, 110.0)),
        ]);
        let img = render_overlay(&sample, None);
        assert_eq!(count_color(&img, TRUTH_COLOR), 80);
    }

    #[test]
    fn two_visible_corners_draw_an_open_segment() {
        let sample = sample_with_corners([
            Some(Point::new(90.0, 90.0)),
            Some(Point::new(110.0, 90.0)),
            None,
            None,
        ]);
        let img = render_overlay(&sample, None);
        // One horizontal 21-pixel segment, nothing else.
        assert_eq!(count_color(&img, TRUTH_COLOR), 21);
    }

    #[test]
    fn single_visible_corner_marks_a_dot() {
        let sample =
            sample_with_corners([Some(Point::new(90.0, 90.0)), None, None, None]);
        let img = render_overlay(&sample, None);
        let n = count_color(&img, TRUTH_COLOR);
        assert!(n > 0 && n <= 9, "dot covered {n} pixels");
    }

    #[test]
    fn prediction_layer_skips_invisible_corners() {
        let sample = sample_with_corners([
            Some(Point::new(90.0, 100.0)),
            Some(Point::new(110.0, 100.0)),
            None,
            None,
        ]);
        let pred = CornerPrediction([-0.9, -0.9, 0.9, -0.9, 0.9, 0.9, -0.9, 0.9]);
        let with = render_overlay(&sample, Some(&pred));
        // The two visible-corner predictions form one segment; the two
        // invisible ones must not be drawn.
        let on_row: Vec<_> = with
            .enumerate_pixels()
            .filter(|(_, _, &p)| p == PREDICTION_COLOR)
            .map(|(_, y, _)| y)
            .collect();
        assert!(!on_row.is_empty());
        let first = on_row[0];
        assert!(on_row.iter().all(|&y| y == first), "prediction strayed off one row");
    }

    #[test]
    fn crop_round_trips_through_image() {
        let sample = sample_with_corners([Some(Point::new(90.0, 90.0)), None, None, None]);
        let img = crop_to_image(&sample.pixels);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                let v = (sample.pixels.get(c, y, x) * 255.0).round() as u8;
                assert_eq!(px.0[c], v);
            }
        }
    }
}
