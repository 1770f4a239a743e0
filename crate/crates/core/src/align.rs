//! Portrait alignment: eye leveling, similarity fits, texture extraction.

use crate::error::{Error, Result};
use crate::geom::{centroid, convex_hull, Bounds, DilatedPolygon, Point, Rect};
use crate::landmarks::{PixelLandmarks, CONTOUR_GROUP};
use crate::raster::{Image, TextureMap};
use crate::rig::{Component, CropShape, Rig, BASE_FACE};

/// Landmark groups used for eye leveling.
pub const LEFT_EYE: &str = "left_eye";
pub const RIGHT_EYE: &str = "right_eye";

/// Crop margin around landmark hulls at a 1024 canvas.
pub const CROP_MARGIN_1024: f64 = 4.0;

/// Bounding-box crops (eyebrows) grow by this many crop margins.
const BOX_MARGIN_FACTOR: f64 = 3.0;

/// `p ↦ scale · R(rotation) · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    /// Radians, counter-clockwise in image axes (y down).
    pub rotation: f64,
    pub scale: f64,
    pub translation: Point,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        SimilarityTransform::IDENTITY
    }
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        rotation: 0.0,
        scale: 1.0,
        translation: Point::new(0.0, 0.0),
    };

    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        Point::new(
            self.scale * (c * p.x - s * p.y) + self.translation.x,
            self.scale * (s * p.x + c * p.y) + self.translation.y,
        )
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv = SimilarityTransform {
            rotation: -self.rotation,
            scale: 1.0 / self.scale,
            translation: Point::new(0.0, 0.0),
        };
        let t = inv.apply(self.translation);
        SimilarityTransform {
            translation: Point::new(-t.x, -t.y),
            ..inv
        }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &SimilarityTransform) -> SimilarityTransform {
        let t = self.apply(first.translation);
        SimilarityTransform {
            rotation: self.rotation + first.rotation,
            scale: self.scale * first.scale,
            translation: t,
        }
    }

    /// Sum of squared distances `|T(src_i) - dst_i|²`.
    pub fn residual(&self, src: &[Point], dst: &[Point]) -> f64 {
        src.iter()
            .zip(dst)
            .map(|(s, d)| {
                let e = self.apply(*s) - *d;
                e.dot(e)
            })
            .sum()
    }
}

/// Least-squares similarity (no reflection) taking `src` onto `dst`.
pub fn fit_similarity(src: &[Point], dst: &[Point]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(Error::Degenerate(format!(
            "similarity fit needs two equal-length lists of at least 2 points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let ms = centroid(src);
    let md = centroid(dst);
    let (mut a, mut b, mut ss) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let s = *s - ms;
        let d = *d - md;
        a += s.x * d.x + s.y * d.y;
        b += s.x * d.y - s.y * d.x;
        ss += s.dot(s);
    }
    let spread = src
        .iter()
        .chain(dst)
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(1.0, f64::max);
    if ss <= 1e-20 * spread * spread * src.len() as f64 {
        return Err(Error::Degenerate("source points coincide".into()));
    }
    let scale = a.hypot(b) / ss;
    if !(scale.is_finite() && scale > 1e-12) {
        return Err(Error::Degenerate("target points coincide".into()));
    }
    let rotation = b.atan2(a);
    let partial = SimilarityTransform {
        rotation,
        scale,
        translation: Point::new(0.0, 0.0),
    };
    Ok(SimilarityTransform {
        translation: md - partial.apply(ms),
        ..partial
    })
}

/// A portrait rotated so the eye centroids share a row.
#[derive(Debug, Clone)]
pub struct AlignedPortrait {
    pub image: Image,
    pub landmarks: PixelLandmarks,
    /// Angle (radians) the input was rotated by; minus the measured eye tilt.
    pub rotation_applied: f64,
    /// Input frame to aligned frame.
    pub transform: SimilarityTransform,
}

/// Eye tilt `atan2(yR - yL, xR - xL)` of the eye group centroids.
pub fn eye_tilt(landmarks: &PixelLandmarks) -> Result<(f64, Point)> {
    let l = centroid(&landmarks.group(LEFT_EYE)?);
    let r = centroid(&landmarks.group(RIGHT_EYE)?);
    let d = r - l;
    Ok((d.y.atan2(d.x), (l + r) * 0.5))
}

/// Rotates the portrait by minus its eye tilt about the eye midpoint. The
/// canvas grows (transparent) so no pixel is cropped.
pub fn eye_level(image: &Image, landmarks: &PixelLandmarks) -> Result<AlignedPortrait> {
    let (theta, mid) = eye_tilt(landmarks)?;
    if theta.abs() < 1e-9 {
        return Ok(AlignedPortrait {
            image: image.clone(),
            landmarks: landmarks.clone(),
            rotation_applied: 0.0,
            transform: SimilarityTransform::IDENTITY,
        });
    }
    let rot = SimilarityTransform {
        rotation: -theta,
        scale: 1.0,
        translation: Point::new(0.0, 0.0),
    };
    let about_mid = SimilarityTransform {
        translation: mid - rot.apply(mid),
        ..rot
    };
    let (w, h) = (image.width() as f64, image.height() as f64);
    // pixel centers span [0, w-1]; keep the half-pixel border too
    let corners = [
        Point::new(-0.5, -0.5),
        Point::new(w - 0.5, -0.5),
        Point::new(-0.5, h - 0.5),
        Point::new(w - 0.5, h - 0.5),
    ]
    .map(|p| about_mid.apply(p));
    let b = Bounds::of(&corners).expect("four corners");
    let offset = Point::new((b.min.x + 0.5).floor(), (b.min.y + 0.5).floor());
    let transform = SimilarityTransform {
        translation: about_mid.translation - offset,
        ..about_mid
    };
    let out_w = (b.max.x - 0.5 - offset.x).ceil() as u32 + 1;
    let out_h = (b.max.y - 0.5 - offset.y).ceil() as u32 + 1;
    let back = transform.inverse();
    let mut out = Image::new(out_w, out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let src = back.apply(Point::new(x as f64, y as f64));
            out.put(x, y, image.sample_bilinear_u8(src));
        }
    }
    Ok(AlignedPortrait {
        image: out,
        landmarks: landmarks.map_points([out_w, out_h], |p| transform.apply(p)),
        rotation_applied: -theta,
        transform,
    })
}

/// Crop margin for a rig canvas.
pub fn crop_margin(rig: &Rig) -> f64 {
    CROP_MARGIN_1024 * rig.canvas_size as f64 / 1024.0
}

/// A texture extracted for one layer, sized like its atlas rect.
#[derive(Debug, Clone)]
pub struct TexturePatch {
    pub layer: String,
    pub rect: Rect,
    pub image: Image,
    /// Aligned portrait frame to rig canvas.
    pub transform: SimilarityTransform,
}

/// Region kept when cropping, in rig canvas coordinates.
enum Crop {
    Polygon(DilatedPolygon),
    Box(Bounds),
}

impl Crop {
    fn new(shape: CropShape, points: &[Point], margin: f64) -> Result<Crop> {
        let bad = || Error::Degenerate("crop region has no extent".into());
        Ok(match shape {
            CropShape::Hull => {
                Crop::Polygon(DilatedPolygon::new(convex_hull(points), margin).ok_or_else(bad)?)
            }
            CropShape::BoundingBox => Crop::Box(
                Bounds::of(points)
                    .ok_or_else(bad)?
                    .expanded(margin * BOX_MARGIN_FACTOR),
            ),
        })
    }

    fn contains(&self, p: Point) -> bool {
        match self {
            Crop::Polygon(poly) => poly.contains(p),
            Crop::Box(b) => b.contains(p),
        }
    }
}

/// Pulls portrait pixels into a layer's texture rect through `to_rig⁻¹`,
/// keeping only texels whose rest canvas position lies in `crop`.
fn pull_texture(
    portrait: &Image,
    rig: &Rig,
    layer: &str,
    to_rig: SimilarityTransform,
    crop: &Crop,
) -> Result<TexturePatch> {
    let view = rig
        .layer(layer)
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
    let map = TextureMap::new(&view);
    let rect = map.rect;
    let back = to_rig.inverse();
    let mut image = Image::new(rect.w, rect.h);
    for v in 0..rect.h {
        for u in 0..rect.w {
            let c = map.to_canvas(Point::new((rect.x + u) as f64, (rect.y + v) as f64));
            if crop.contains(c) {
                image.put(u, v, portrait.sample_bilinear_u8(back.apply(c)));
            }
        }
    }
    Ok(TexturePatch {
        layer: layer.to_string(),
        rect,
        image,
        transform: to_rig,
    })
}

/// Similarity from the portrait's component landmarks to the template's,
/// then a bilinear pull of the cropped region into the component's rect.
pub fn extract_component_texture(
    portrait: &AlignedPortrait,
    component: &Component,
    rig: &Rig,
) -> Result<TexturePatch> {
    let src = portrait
        .landmarks
        .select(&component.landmark_ids)
        .map_err(|_| Error::MissingLandmarks(component.id.clone()))?;
    let dst = rig.group_points(&component.id);
    let to_rig = fit_similarity(&src, &dst)?;
    let mapped: Vec<Point> = src.iter().map(|p| to_rig.apply(*p)).collect();
    let crop = Crop::new(component.crop, &mapped, crop_margin(rig))?;
    pull_texture(&portrait.image, rig, &component.id, to_rig, &crop)
}

/// Portrait frame to rig canvas, fitted on the contour landmarks.
pub fn contour_transform(landmarks: &PixelLandmarks, rig: &Rig) -> Result<SimilarityTransform> {
    let ids = rig.group_ids(CONTOUR_GROUP);
    if ids.is_empty() {
        return Err(Error::MissingLandmarks(CONTOUR_GROUP.into()));
    }
    let src = landmarks
        .select(&ids)
        .map_err(|_| Error::MissingLandmarks(CONTOUR_GROUP.into()))?;
    fit_similarity(&src, &rig.group_points(CONTOUR_GROUP))
}

/// Warps the face region into the base-face texture with the contour
/// similarity; texels outside the dilated contour hull stay transparent.
pub fn map_base_face(portrait: &AlignedPortrait, rig: &Rig) -> Result<TexturePatch> {
    let to_rig = contour_transform(&portrait.landmarks, rig)?;
    let src = portrait
        .landmarks
        .select(&rig.group_ids(CONTOUR_GROUP))
        .map_err(|_| Error::MissingLandmarks(CONTOUR_GROUP.into()))?;
    let mapped: Vec<Point> = src.iter().map(|p| to_rig.apply(*p)).collect();
    let crop = Crop::new(CropShape::Hull, &mapped, crop_margin(rig))?;
    pull_texture(&portrait.image, rig, BASE_FACE, to_rig, &crop)
}
