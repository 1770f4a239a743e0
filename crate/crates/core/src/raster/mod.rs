//! Deterministic software renderer.
//!
//! Layers are drawn back-to-front in the rig's z-order. Each triangle is
//! texture-mapped from its layer's atlas rectangle by barycentric
//! interpolation and composited with integer source-over. Output bits do not
//! depend on how many threads rayon uses.

mod buffer;
mod triangle;

use rayon::prelude::*;

pub(crate) use buffer::read_existing;
pub use buffer::{round_u8, BinaryMask, Image};
pub use triangle::ScanTriangle;

use crate::error::{Error, Result};
use crate::geom::{Bounds, Point, Rect};
use crate::rig::{compose_geometry, DeformedGeometry, LayerView, ParamVector, Rig};

/// Default mask threshold: source alpha must exceed 8/255.
pub const ALPHA_THRESHOLD: u8 = 8;

const BAND_ROWS: usize = 16;

/// Texel lookup mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions {
    pub sampling: Sampling,
}

/// Affine map between a layer's rest mesh bounds (canvas) and its atlas rect.
#[derive(Debug, Clone, Copy)]
pub struct TextureMap {
    pub rect: Rect,
    pub rest: Bounds,
    sx: f64,
    sy: f64,
}

impl TextureMap {
    pub fn new(layer: &LayerView<'_>) -> TextureMap {
        let rest = layer.mesh.bounds();
        let rect = layer.texture_rect;
        TextureMap {
            rect,
            rest,
            sx: rect.w as f64 / rest.width(),
            sy: rect.h as f64 / rest.height(),
        }
    }

    /// Rest canvas position to continuous atlas position.
    #[inline]
    pub fn to_atlas(&self, p: Point) -> Point {
        Point::new(
            self.rect.x as f64 + (p.x - self.rest.min.x) * self.sx,
            self.rect.y as f64 + (p.y - self.rest.min.y) * self.sy,
        )
    }

    /// Atlas position back to the rest canvas position.
    #[inline]
    pub fn to_canvas(&self, t: Point) -> Point {
        Point::new(
            self.rest.min.x + (t.x - self.rect.x as f64) / self.sx,
            self.rest.min.y + (t.y - self.rect.y as f64) / self.sy,
        )
    }
}

/// Straight-alpha source-over of one pixel, exact integer arithmetic with
/// round-half-up.
#[inline]
pub fn over(dst: [u8; 4], src: [u8; 4]) -> [u8; 4] {
    let at = src[3] as u64;
    if at == 255 {
        return src;
    }
    if at == 0 {
        return dst;
    }
    let ab = dst[3] as u64;
    let inv = 255 - at;
    let a = at * 255 + ab * inv;
    if a == 0 {
        return [0, 0, 0, 0];
    }
    let mut out = [0u8; 4];
    for c in 0..3 {
        let num = src[c] as u64 * at * 255 + dst[c] as u64 * ab * inv;
        out[c] = ((2 * num + a) / (2 * a)) as u8;
    }
    out[3] = ((2 * a + 255) / 510) as u8;
    out
}

/// Porter-Duff source-over of `top` onto `bottom`.
pub fn composite_over(bottom: &Image, top: &Image) -> Result<Image> {
    if bottom.dims() != top.dims() {
        return Err(Error::DimensionMismatch {
            expected: bottom.dims(),
            found: top.dims(),
        });
    }
    let mut out = bottom.clone();
    out.as_raw_mut()
        .par_chunks_mut(4)
        .zip(top.as_raw().par_chunks(4))
        .for_each(|(d, s)| {
            let px = over([d[0], d[1], d[2], d[3]], [s[0], s[1], s[2], s[3]]);
            d.copy_from_slice(&px);
        });
    Ok(out)
}

struct DrawTriangle {
    scan: ScanTriangle,
    uv: [Point; 3],
}

struct DrawLayer {
    rect: Rect,
    triangles: Vec<DrawTriangle>,
}

fn check_rect(layer: &LayerView<'_>, atlas: &Image) -> Result<()> {
    let r = layer.texture_rect;
    if !r.fits_within(atlas.width(), atlas.height()) {
        return Err(Error::TextureOutOfBounds {
            layer: layer.id.to_string(),
            x: r.x,
            y: r.y,
            w: r.w,
            h: r.h,
            atlas_w: atlas.width(),
            atlas_h: atlas.height(),
        });
    }
    Ok(())
}

fn build_draw_list(
    rig: &Rig,
    atlas: &Image,
    geometry: &DeformedGeometry,
    filter: Option<&[&str]>,
) -> Result<Vec<DrawLayer>> {
    if let Some(ids) = filter {
        for id in ids {
            if rig.layer(id).is_none() {
                return Err(Error::UnknownLayer(id.to_string()));
            }
        }
    }
    let mut out = Vec::new();
    for id in &rig.z_order {
        if let Some(ids) = filter {
            if !ids.contains(&id.as_str()) {
                continue;
            }
        }
        let layer = rig
            .layer(id)
            .ok_or_else(|| Error::UnknownLayer(id.clone()))?;
        check_rect(&layer, atlas)?;
        let verts = geometry
            .vertices(id)
            .ok_or_else(|| Error::UnknownLayer(id.clone()))?;
        if verts.len() != layer.mesh.vertices.len() {
            return Err(Error::invalid(
                format!("geometry.{id}"),
                format!(
                    "{} vertices, rest mesh has {}",
                    verts.len(),
                    layer.mesh.vertices.len()
                ),
            ));
        }
        let map = TextureMap::new(&layer);
        let uvs: Vec<Point> = layer
            .mesh
            .vertices
            .iter()
            .map(|p| map.to_atlas(*p))
            .collect();
        let triangles = layer
            .mesh
            .triangles
            .iter()
            .filter_map(|t| {
                let [a, b, c] = t.map(|i| i as usize);
                ScanTriangle::new([verts[a], verts[b], verts[c]]).map(|scan| DrawTriangle {
                    scan,
                    uv: [uvs[a], uvs[b], uvs[c]],
                })
            })
            .collect();
        out.push(DrawLayer {
            rect: map.rect,
            triangles,
        });
    }
    Ok(out)
}

#[inline]
fn interpolate(uv: &[Point; 3], b: [f64; 3]) -> Point {
    Point::new(
        b[0] * uv[0].x + b[1] * uv[1].x + b[2] * uv[2].x,
        b[0] * uv[0].y + b[1] * uv[1].y + b[2] * uv[2].y,
    )
}

#[inline]
fn sample_nearest(atlas: &Image, rect: Rect, t: Point) -> [u8; 4] {
    let x = ((t.x + 0.5).floor() as i64).clamp(rect.x as i64, rect.x as i64 + rect.w as i64 - 1);
    let y = ((t.y + 0.5).floor() as i64).clamp(rect.y as i64, rect.y as i64 + rect.h as i64 - 1);
    atlas.get(x as u32, y as u32)
}

fn sample_bilinear_in_rect(atlas: &Image, rect: Rect, t: Point) -> [u8; 4] {
    let lo_x = rect.x as f64;
    let hi_x = (rect.x + rect.w - 1) as f64;
    let lo_y = rect.y as f64;
    let hi_y = (rect.y + rect.h - 1) as f64;
    let p = Point::new(t.x.clamp(lo_x, hi_x), t.y.clamp(lo_y, hi_y));
    atlas.sample_bilinear_u8(p)
}

#[inline]
fn sample(atlas: &Image, rect: Rect, t: Point, mode: Sampling) -> [u8; 4] {
    match mode {
        Sampling::Nearest => sample_nearest(atlas, rect, t),
        Sampling::Bilinear => sample_bilinear_in_rect(atlas, rect, t),
    }
}

/// Renders explicit per-layer geometry.
pub fn render_geometry(
    rig: &Rig,
    atlas: &Image,
    geometry: &DeformedGeometry,
    layer_filter: Option<&[&str]>,
    opts: &RenderOptions,
) -> Result<Image> {
    let layers = build_draw_list(rig, atlas, geometry, layer_filter)?;
    let n = rig.canvas_size;
    let mut out = Image::new(n, n);
    let row_bytes = n as usize * 4;
    out.as_raw_mut()
        .par_chunks_mut(BAND_ROWS * row_bytes)
        .enumerate()
        .for_each(|(band, chunk)| {
            let y0 = (band * BAND_ROWS) as i64;
            let rows = (chunk.len() / row_bytes) as i64;
            for layer in &layers {
                for tri in &layer.triangles {
                    let (ty0, ty1) = tri.scan.rows();
                    let from = ty0.max(y0);
                    let to = ty1.min(y0 + rows - 1);
                    for y in from..=to {
                        let row = &mut chunk[((y - y0) as usize) * row_bytes..][..row_bytes];
                        tri.scan.scan_row(y, n as i64, |x, b| {
                            let texel =
                                sample(atlas, layer.rect, interpolate(&tri.uv, b), opts.sampling);
                            let o = x as usize * 4;
                            let dst = [row[o], row[o + 1], row[o + 2], row[o + 3]];
                            row[o..o + 4].copy_from_slice(&over(dst, texel));
                        });
                    }
                }
            }
        });
    Ok(out)
}

/// Composes `params` and renders the layers in `layer_filter` (all when `None`).
pub fn render(
    rig: &Rig,
    atlas: &Image,
    params: &ParamVector,
    layer_filter: Option<&[&str]>,
) -> Result<Image> {
    let geometry = compose_geometry(rig, params)?;
    render_geometry(
        rig,
        atlas,
        &geometry,
        layer_filter,
        &RenderOptions::default(),
    )
}

/// Coverage mask of the selected layers: a bit is set when some selected
/// layer samples a texel with alpha above `threshold`.
pub fn render_mask_geometry(
    rig: &Rig,
    atlas: &Image,
    geometry: &DeformedGeometry,
    selection: &[&str],
    threshold: u8,
) -> Result<BinaryMask> {
    if selection.is_empty() {
        return Err(Error::EmptySelection);
    }
    let layers = build_draw_list(rig, atlas, geometry, Some(selection))?;
    let n = rig.canvas_size;
    let mut mask = BinaryMask::new(n, n);
    let row_len = n as usize;
    mask.bits_mut()
        .par_chunks_mut(BAND_ROWS * row_len)
        .enumerate()
        .for_each(|(band, chunk)| {
            let y0 = (band * BAND_ROWS) as i64;
            let rows = (chunk.len() / row_len) as i64;
            for layer in &layers {
                for tri in &layer.triangles {
                    let (ty0, ty1) = tri.scan.rows();
                    for y in ty0.max(y0)..=ty1.min(y0 + rows - 1) {
                        let row = &mut chunk[((y - y0) as usize) * row_len..][..row_len];
                        tri.scan.scan_row(y, n as i64, |x, b| {
                            let texel = sample_nearest(atlas, layer.rect, interpolate(&tri.uv, b));
                            if texel[3] > threshold {
                                row[x as usize] = true;
                            }
                        });
                    }
                }
            }
        });
    Ok(mask)
}

/// [`render_mask_geometry`] at composed `params` with the default threshold.
pub fn render_mask(
    rig: &Rig,
    atlas: &Image,
    params: &ParamVector,
    selection: &[&str],
) -> Result<BinaryMask> {
    let geometry = compose_geometry(rig, params)?;
    render_mask_geometry(rig, atlas, &geometry, selection, ALPHA_THRESHOLD)
}

/// Marker disc radius: 2 px at a 1024 canvas, proportional elsewhere, but
/// never below 2 px.
pub fn marker_radius(canvas_size: u32) -> f64 {
    (2.0 * canvas_size as f64 / 1024.0).max(2.0)
}

/// Black opaque canvas with a filled white disc at every position.
pub fn draw_markers(size: u32, positions: &[Point], radius: f64) -> Image {
    let mut img = Image::filled(size, size, [0, 0, 0, 255]);
    let r2 = radius * radius;
    let max = size as i64 - 1;
    for c in positions {
        let x0 = ((c.x - radius).ceil() as i64).max(0);
        let x1 = ((c.x + radius).floor() as i64).min(max);
        let y0 = ((c.y - radius).ceil() as i64).max(0);
        let y1 = ((c.y + radius).floor() as i64).min(max);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - c.x;
                let dy = y as f64 - c.y;
                if dx * dx + dy * dy <= r2 {
                    img.put(x as u32, y as u32, [255, 255, 255, 255]);
                }
            }
        }
    }
    img
}

/// Landmark positions under `params` for a subset of template ids (all when
/// `None`), in canvas pixels.
pub fn marker_positions(
    rig: &Rig,
    params: &ParamVector,
    landmark_subset: Option<&[String]>,
) -> Result<Vec<Point>> {
    match landmark_subset {
        Some(ids) => ids
            .iter()
            .map(|id| rig.displaced_landmark(id, params))
            .collect(),
        None => rig
            .template_landmarks
            .iter()
            .map(|l| rig.displaced_landmark(&l.id, params))
            .collect(),
    }
}

/// Diagnostic marker render: features are not drawn, each landmark becomes a
/// white disc at its displaced position.
pub fn render_markers(
    rig: &Rig,
    params: &ParamVector,
    landmark_subset: Option<&[String]>,
) -> Result<Image> {
    let positions = marker_positions(rig, params, landmark_subset)?;
    Ok(draw_markers(
        rig.canvas_size,
        &positions,
        marker_radius(rig.canvas_size),
    ))
}
