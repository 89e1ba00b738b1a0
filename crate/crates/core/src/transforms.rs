//! Geometric transforms applied to images and their boxes before tuning.
//!
//! Angles are in degrees; positive angles turn the picture clockwise as seen on
//! screen (y axis pointing down).

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, BBox};
use crate::tiling::DEFAULT_KEEP_FRACTION;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("downscale factor {0} outside (0, 1]")]
    Factor(f64),
    #[error("rotation angle {0} is not finite")]
    Angle(f64),
    #[error("box [{}, {}, {}, {}] lies outside the {width}x{height} image", .bbox.x, .bbox.y, .bbox.w, .bbox.h)]
    BoxOutside { bbox: BBox, width: u32, height: u32 },
    #[error("empty raster")]
    EmptyRaster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    FlipH,
    FlipV,
    /// Quarter turn of the whole canvas; width and height swap.
    Rot90Cw,
    /// Rotate the content about the image centre inside the same canvas,
    /// filling uncovered pixels with black.
    RotContent {
        angle: f64,
    },
    Downscale {
        factor: f64,
    },
}

impl Transform {
    /// Content rotation with the angle normalized into `[0, 360)`.
    pub fn rot_content(angle: f64) -> Transform {
        Transform::RotContent {
            angle: angle.rem_euclid(360.0),
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        match *self {
            Transform::RotContent { angle } if !angle.is_finite() => Err(TransformError::Angle(angle)),
            Transform::Downscale { factor } if !(factor > 0.0 && factor <= 1.0) => Err(TransformError::Factor(factor)),
            _ => Ok(()),
        }
    }

    /// Canvas size after the transform.
    pub fn output_dims(&self, width: u32, height: u32) -> (u32, u32) {
        match *self {
            Transform::Rot90Cw => (height, width),
            Transform::Downscale { factor } => (scaled_len(width, factor), scaled_len(height, factor)),
            _ => (width, height),
        }
    }

    /// Short tag used to name augmented image variants.
    pub fn tag(&self) -> String {
        match *self {
            Transform::FlipH => "fliph".into(),
            Transform::FlipV => "flipv".into(),
            Transform::Rot90Cw => "rot90cw".into(),
            Transform::RotContent { angle } => format!("rot{angle:.3}"),
            Transform::Downscale { factor } => format!("down{factor}"),
        }
    }
}

fn scaled_len(len: u32, factor: f64) -> u32 {
    ((f64::from(len) * factor).round() as u32).max(1)
}

pub fn apply_to_image(t: &Transform, image: &RgbImage) -> Result<RgbImage, TransformError> {
    t.validate()?;
    if image.width() == 0 || image.height() == 0 {
        return Err(TransformError::EmptyRaster);
    }
    Ok(match *t {
        Transform::FlipH => imageops::flip_horizontal(image),
        Transform::FlipV => imageops::flip_vertical(image),
        Transform::Rot90Cw => imageops::rotate90(image),
        Transform::RotContent { angle } => rotate_content(image, angle),
        Transform::Downscale { .. } => {
            let (w, h) = t.output_dims(image.width(), image.height());
            imageops::resize(image, w, h, FilterType::Triangle)
        }
    })
}

fn rotate_content(image: &RgbImage, angle: f64) -> RgbImage {
    if angle == 0.0 {
        return image.clone();
    }
    let (w, h) = image.dimensions();
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    let (sin, cos) = angle.to_radians().sin_cos();
    let mut out = RgbImage::from_pixel(w, h, Rgb([0, 0, 0]));
    for (px, py, pixel) in out.enumerate_pixels_mut() {
        // inverse map of the output pixel centre
        let dx = f64::from(px) + 0.5 - cx;
        let dy = f64::from(py) + 0.5 - cy;
        let sx = cos * dx + sin * dy + cx - 0.5;
        let sy = -sin * dx + cos * dy + cy - 0.5;
        *pixel = sample_bilinear(image, sx, sy);
    }
    out
}

fn sample_bilinear(image: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = (i64::from(image.width()), i64::from(image.height()));
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let fetch = |xi: i64, yi: i64| -> [f64; 3] {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            [0.0; 3]
        } else {
            let p = image.get_pixel(xi as u32, yi as u32);
            [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])]
        }
    };
    let (a, b, c, d) = (
        fetch(x0, y0),
        fetch(x0 + 1, y0),
        fetch(x0, y0 + 1),
        fetch(x0 + 1, y0 + 1),
    );
    let mut rgb = [0u8; 3];
    for i in 0..3 {
        let top = a[i] * (1.0 - fx) + b[i] * fx;
        let bottom = c[i] * (1.0 - fx) + d[i] * fx;
        rgb[i] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(rgb)
}

/// Map boxes through `t`. Output is index-aligned with the input; `None`
/// marks a box dropped by content rotation.
pub fn map_boxes(t: &Transform, boxes: &[BBox], width: u32, height: u32) -> Result<Vec<Option<BBox>>, TransformError> {
    t.validate()?;
    let (wf, hf) = (f64::from(width), f64::from(height));
    boxes
        .iter()
        .map(|b| {
            if !b.within(wf, hf) {
                return Err(TransformError::BoxOutside {
                    bbox: *b,
                    width,
                    height,
                });
            }
            Ok(match *t {
                Transform::FlipH => Some(BBox::new(wf - b.x - b.w, b.y, b.w, b.h)),
                Transform::FlipV => Some(BBox::new(b.x, hf - b.y - b.h, b.w, b.h)),
                Transform::Rot90Cw => Some(BBox::new(hf - b.y - b.h, b.x, b.h, b.w)),
                Transform::RotContent { angle } => rotate_box(b, angle, wf, hf),
                Transform::Downscale { factor } => {
                    let (nw, nh) = t.output_dims(width, height);
                    b.scaled(factor).clip(f64::from(nw), f64::from(nh))
                }
            })
        })
        .collect()
}

/// Axis-aligned hull of the rotated corners, clipped to the canvas; dropped
/// when less than the retention fraction of the hull survives clipping.
fn rotate_box(b: &BBox, angle: f64, width: f64, height: f64) -> Option<BBox> {
    if angle == 0.0 {
        return Some(*b);
    }
    let (cx, cy) = (width / 2.0, height / 2.0);
    let (sin, cos) = angle.to_radians().sin_cos();
    let corners = [(b.x, b.y), (b.right(), b.y), (b.x, b.bottom()), (b.right(), b.bottom())];
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (x, y) in corners {
        let (dx, dy) = (x - cx, y - cy);
        let rx = cos * dx - sin * dy + cx;
        let ry = sin * dx + cos * dy + cy;
        x0 = x0.min(rx);
        y0 = y0.min(ry);
        x1 = x1.max(rx);
        y1 = y1.max(ry);
    }
    let hull = BBox::new(x0, y0, x1 - x0, y1 - y0);
    let clipped = hull.clip(width, height)?;
    (clipped.area() >= DEFAULT_KEEP_FRACTION * hull.area() * (1.0 - 1e-12)).then_some(clipped)
}

/// Boxes after the transform, with dropped boxes removed.
pub fn apply_to_boxes(t: &Transform, boxes: &[BBox], width: u32, height: u32) -> Result<Vec<BBox>, TransformError> {
    Ok(map_boxes(t, boxes, width, height)?.into_iter().flatten().collect())
}

/// Annotations after the transform, keeping ids of the surviving boxes.
pub fn apply_to_annotations(
    t: &Transform,
    annotations: &[Annotation],
    width: u32,
    height: u32,
) -> Result<Vec<Annotation>, TransformError> {
    let boxes: Vec<BBox> = annotations.iter().map(|a| a.bbox).collect();
    let mapped = map_boxes(t, &boxes, width, height)?;
    Ok(annotations
        .iter()
        .zip(mapped)
        .filter_map(|(a, b)| b.map(|bbox| Annotation { bbox, ..a.clone() }))
        .collect())
}
