//! Built-in template face: rig geometry plus procedurally painted atlas.
//!
//! Geometry is laid out on a 1024 reference canvas and scaled to the
//! requested size. The painted art is smooth (feathered edges, soft
//! shading) so resampling round trips stay close to the source.

use indexmap::IndexMap;

use crate::error::Result;
use crate::geom::{centroid, Point, Rect};
use crate::landmarks::{PixelLandmarks, CONTOUR_GROUP};
use crate::raster::{composite_over, render, round_u8, Image, TextureMap};
use crate::rig::{
    Component, CropShape, Gains, Layer, Mesh, ParamVector, Rig, TemplateLandmark, BASE_FACE,
};

/// Iris colour of the template eyes.
pub const IRIS_RGB: [u8; 3] = [52, 104, 196];

const REF: f64 = 1024.0;
const ATLAS_PAD: u32 = 4;
const CONTOUR_POINTS: usize = 29;

const FACE_CENTER: (f64, f64) = (512.0, 540.0);
const FACE_AXES: (f64, f64) = (330.0, 420.0);

#[derive(Clone, Copy)]
enum Art {
    Brow,
    Eye,
    Nose,
    Mouth,
}

struct FeatureSpec {
    id: &'static str,
    /// Reference-canvas rectangle `(x0, y0, x1, y1)`.
    rect: (f64, f64, f64, f64),
    grid: (u32, u32),
    landmarks: Vec<(f64, f64)>,
    crop: CropShape,
    art: Art,
    mirrored: bool,
}

fn brow_centerline(x: f64) -> f64 {
    let u = (x - 360.0) / 85.0;
    360.0 - 18.0 * (1.0 - u * u)
}

fn ellipse_points(cx: f64, cy: f64, a: f64, b: f64, n: usize, start: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let t = start + std::f64::consts::TAU * k as f64 / n as f64;
            (cx + a * t.cos(), cy - b * t.sin())
        })
        .collect()
}

fn mirror(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    points.iter().map(|&(x, y)| (REF - x, y)).collect()
}

fn feature_specs() -> Vec<FeatureSpec> {
    let brow: Vec<(f64, f64)> = [280.0, 320.0, 360.0, 400.0, 440.0]
        .iter()
        .map(|&x| (x, brow_centerline(x)))
        .collect();
    let eye = ellipse_points(360.0, 490.0, 66.0, 30.0, 8, 0.0);
    let nose = vec![
        (512.0, 545.0),
        (512.0, 585.0),
        (512.0, 640.0),
        (470.0, 648.0),
        (554.0, 648.0),
        (494.0, 668.0),
        (530.0, 668.0),
        (494.0, 600.0),
        (530.0, 600.0),
    ];
    let mouth = ellipse_points(512.0, 790.0, 92.0, 30.0, 12, 0.0);
    vec![
        FeatureSpec {
            id: "left_eyebrow",
            rect: (255.0, 320.0, 465.0, 392.0),
            grid: (6, 2),
            landmarks: brow.clone(),
            crop: CropShape::BoundingBox,
            art: Art::Brow,
            mirrored: false,
        },
        FeatureSpec {
            id: "right_eyebrow",
            rect: (REF - 465.0, 320.0, REF - 255.0, 392.0),
            grid: (6, 2),
            landmarks: mirror(&brow),
            crop: CropShape::BoundingBox,
            art: Art::Brow,
            mirrored: true,
        },
        FeatureSpec {
            id: "left_eye",
            rect: (282.0, 448.0, 438.0, 532.0),
            grid: (4, 3),
            landmarks: eye.clone(),
            crop: CropShape::Hull,
            art: Art::Eye,
            mirrored: false,
        },
        FeatureSpec {
            id: "right_eye",
            rect: (REF - 438.0, 448.0, REF - 282.0, 532.0),
            grid: (4, 3),
            landmarks: mirror(&eye),
            crop: CropShape::Hull,
            art: Art::Eye,
            mirrored: true,
        },
        FeatureSpec {
            id: "nose",
            rect: (452.0, 525.0, 572.0, 685.0),
            grid: (3, 4),
            landmarks: nose,
            crop: CropShape::Hull,
            art: Art::Nose,
            mirrored: false,
        },
        FeatureSpec {
            id: "mouth",
            rect: (404.0, 744.0, 620.0, 836.0),
            grid: (4, 2),
            landmarks: mouth,
            crop: CropShape::Hull,
            art: Art::Mouth,
            mirrored: false,
        },
    ]
}

/// Default back-to-front order: base face, then features.
const Z_ORDER: [&str; 7] = [
    BASE_FACE,
    "nose",
    "mouth",
    "left_eye",
    "right_eye",
    "left_eyebrow",
    "right_eyebrow",
];

/// The built-in rig at `canvas_size` (square). Gains follow the defaults:
/// 2% of the canvas per translation axis and 30% size change for scale.
pub fn default_rig(canvas_size: u32) -> Rig {
    assert!(canvas_size >= 64, "canvas too small for the template face");
    let n = canvas_size;
    let s = n as f64 / REF;
    let base_face = Layer {
        id: BASE_FACE.to_string(),
        mesh: Mesh::grid(Point::new(0.0, 0.0), n as f64, n as f64, 4, 4),
        texture_rect: Rect::new(0, 0, n, n),
    };

    let mut template_landmarks = Vec::new();
    let mut components = Vec::new();
    let mut atlas_x = n + ATLAS_PAD;
    let mut atlas_y = ATLAS_PAD;
    let mut row_h = 0;
    for (k, spec) in feature_specs().into_iter().enumerate() {
        let x0 = (spec.rect.0 * s).round();
        let y0 = (spec.rect.1 * s).round();
        let w = (spec.rect.2 * s).round() - x0;
        let h = (spec.rect.3 * s).round() - y0;
        let mesh = Mesh::grid(Point::new(x0, y0), w, h, spec.grid.0, spec.grid.1);
        // shelf packing, two features per row
        if k % 2 == 0 && k > 0 {
            atlas_x = n + ATLAS_PAD;
            atlas_y += row_h + ATLAS_PAD;
            row_h = 0;
        }
        let texture_rect = Rect::new(atlas_x, atlas_y, w as u32, h as u32);
        atlas_x += w as u32 + ATLAS_PAD;
        row_h = row_h.max(h as u32);

        let mut ids = Vec::new();
        for (i, &(lx, ly)) in spec.landmarks.iter().enumerate() {
            let id = format!("{}_{}", spec.id, i);
            template_landmarks.push(TemplateLandmark {
                id: id.clone(),
                group: spec.id.to_string(),
                x: lx * s,
                y: ly * s,
            });
            ids.push(id);
        }
        components.push(Component {
            id: spec.id.to_string(),
            anchor: centroid(&mesh.vertices),
            mesh,
            gains: Gains {
                dx_max: 0.02 * n as f64,
                dy_max: 0.02 * n as f64,
                s_max: 0.30,
            },
            texture_rect,
            landmark_ids: ids,
            crop: spec.crop,
        });
    }
    for (i, (x, y)) in ellipse_points(
        FACE_CENTER.0,
        FACE_CENTER.1,
        FACE_AXES.0,
        FACE_AXES.1,
        CONTOUR_POINTS,
        std::f64::consts::FRAC_PI_2,
    )
    .into_iter()
    .enumerate()
    {
        template_landmarks.push(TemplateLandmark {
            id: format!("contour_{i}"),
            group: CONTOUR_GROUP.to_string(),
            x: x * s,
            y: y * s,
        });
    }
    let rig = Rig {
        canvas_size: n,
        base_face,
        components,
        extra_layers: Vec::new(),
        template_landmarks,
        z_order: Z_ORDER.iter().map(|s| s.to_string()).collect(),
    };
    debug_assert!(rig.validate().is_ok());
    rig
}

/// Atlas width needed by [`default_rig`].
fn atlas_width(rig: &Rig) -> u32 {
    rig.components
        .iter()
        .map(|c| c.texture_rect.x + c.texture_rect.w)
        .max()
        .unwrap_or(rig.canvas_size)
}

/// Paints the template art for [`default_rig`].
pub fn default_atlas(rig: &Rig) -> Image {
    let n = rig.canvas_size;
    let s = n as f64 / REF;
    let mut atlas = Image::new(atlas_width(rig), n);
    let feather = 1.2 / s;
    paint_layer(&mut atlas, rig, BASE_FACE, s, |p| face_art(p, feather));
    let specs = feature_specs();
    for spec in &specs {
        let art = spec.art;
        let mirrored = spec.mirrored;
        paint_layer(&mut atlas, rig, spec.id, s, move |p| {
            let q = if mirrored {
                Point::new(REF - p.x, p.y)
            } else {
                p
            };
            match art {
                Art::Brow => brow_art(q, feather),
                Art::Eye => eye_art(q, feather),
                Art::Nose => nose_art(q, feather),
                Art::Mouth => mouth_art(q, feather),
            }
        });
    }
    atlas
}

/// Self-reconstruction portrait: the rig rendered at `params` over an opaque
/// backdrop, with analytic landmark positions grouped by component and
/// contour.
pub fn render_fixture(
    rig: &Rig,
    atlas: &Image,
    params: &ParamVector,
) -> Result<(Image, PixelLandmarks)> {
    let face = render(rig, atlas, params, None)?;
    let n = rig.canvas_size;
    let portrait = composite_over(&Image::filled(n, n, BACKDROP), &face)?;
    let mut points = IndexMap::new();
    let mut groups: IndexMap<String, Vec<String>> = IndexMap::new();
    for l in &rig.template_landmarks {
        points.insert(l.id.clone(), rig.displaced_landmark(&l.id, params)?);
        groups
            .entry(l.group.clone())
            .or_default()
            .push(l.id.clone());
    }
    Ok((
        portrait,
        PixelLandmarks {
            image_size: [n, n],
            points,
            groups,
        },
    ))
}

/// Backdrop colour of [`render_fixture`] portraits.
pub const BACKDROP: [u8; 4] = [206, 214, 224, 255];

/// Rasterizes `art` (reference-canvas coordinates, straight RGBA with alpha
/// in `[0, 1]`) into a layer's atlas rect.
fn paint_layer(atlas: &mut Image, rig: &Rig, id: &str, s: f64, art: impl Fn(Point) -> [f64; 4]) {
    let layer = rig.layer(id).expect("template layer");
    let map = TextureMap::new(&layer);
    let r = map.rect;
    for v in r.y..r.y + r.h {
        for u in r.x..r.x + r.w {
            let c = map.to_canvas(Point::new(u as f64, v as f64));
            let [red, g, b, a] = art(Point::new(c.x / s, c.y / s));
            let alpha = round_u8(a * 255.0);
            let px = if alpha == 0 {
                [0, 0, 0, 0]
            } else {
                [round_u8(red), round_u8(g), round_u8(b), alpha]
            };
            atlas.put(u, v, px);
        }
    }
}

fn coverage(signed_distance: f64, feather: f64) -> f64 {
    (0.5 - signed_distance / feather).clamp(0.0, 1.0)
}

fn ellipse_sd(p: Point, cx: f64, cy: f64, a: f64, b: f64) -> f64 {
    let dx = (p.x - cx) / a;
    let dy = (p.y - cy) / b;
    ((dx * dx + dy * dy).sqrt() - 1.0) * a.min(b)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Straight-alpha float over.
fn layer_over(dst: [f64; 4], rgb: [f64; 3], a: f64) -> [f64; 4] {
    let out_a = a + dst[3] * (1.0 - a);
    if out_a <= 0.0 {
        return [0.0; 4];
    }
    let f = |i: usize| (rgb[i] * a + dst[i] * dst[3] * (1.0 - a)) / out_a;
    [f(0), f(1), f(2), out_a]
}

const SKIN: [f64; 3] = [241.0, 204.0, 178.0];

fn face_art(p: Point, feather: f64) -> [f64; 4] {
    let a = coverage(
        ellipse_sd(p, FACE_CENTER.0, FACE_CENTER.1, FACE_AXES.0, FACE_AXES.1),
        feather,
    );
    if a == 0.0 {
        return [0.0; 4];
    }
    let shade = 1.0 - 0.05 * (p.y - FACE_CENTER.1) / FACE_AXES.1;
    let mut rgb = SKIN.map(|c| (c * shade).min(255.0));
    for cx in [410.0, 614.0] {
        let d = Point::new(cx, 650.0).distance(p);
        let w = 0.3 * (1.0 - smoothstep(0.0, 70.0, d));
        rgb = mix(rgb, [232.0, 166.0, 156.0], w);
    }
    [rgb[0], rgb[1], rgb[2], a]
}

fn brow_art(p: Point, feather: f64) -> [f64; 4] {
    let u = ((p.x - 360.0) / 85.0).clamp(-1.0, 1.0);
    let half = 8.5 * (1.0 - 0.45 * u * u);
    let d_line = (p.y - brow_centerline(p.x)).abs() - half;
    let d_ends = (p.x - 360.0).abs() - 84.0;
    let a = coverage(d_line.max(d_ends), feather);
    [70.0, 48.0, 36.0, a]
}

fn eye_art(p: Point, feather: f64) -> [f64; 4] {
    let (cx, cy) = (360.0, 490.0);
    let sd = ellipse_sd(p, cx, cy, 60.0, 25.0);
    let sclera = coverage(sd, feather);
    let mut px = [0.0; 4];
    px = layer_over(px, [246.0, 244.0, 240.0], sclera);
    let r = p.distance(Point::new(cx, cy));
    let iris_rgb = IRIS_RGB.map(|c| c as f64);
    px = layer_over(px, iris_rgb, coverage(r - 21.0, feather) * sclera);
    px = layer_over(px, [18.0, 18.0, 26.0], coverage(r - 8.0, feather) * sclera);
    // upper lash line hugging the outline
    let upper = smoothstep(cy + 4.0, cy - 8.0, p.y);
    let lash = coverage((sd + 1.5).abs() - 2.5, feather) * upper;
    px = layer_over(px, [40.0, 28.0, 24.0], lash);
    px
}

fn nose_art(p: Point, feather: f64) -> [f64; 4] {
    let mut px = [0.0; 4];
    let bridge_t = smoothstep(548.0, 560.0, p.y) * (1.0 - smoothstep(618.0, 632.0, p.y));
    let bridge = bridge_t * 0.45 * coverage((p.x - 505.0).abs() - 3.0, feather * 3.0);
    px = layer_over(px, [206.0, 158.0, 134.0], bridge);
    let tip = 0.35 * coverage(p.distance(Point::new(512.0, 634.0)) - 12.0, feather * 4.0);
    px = layer_over(px, [250.0, 222.0, 204.0], tip);
    for (ax, nx) in [(479.0, 496.0), (545.0, 528.0)] {
        let ala = 0.5 * coverage(p.distance(Point::new(ax, 646.0)) - 7.0, feather * 3.0);
        px = layer_over(px, [196.0, 146.0, 124.0], ala);
        let nostril = coverage(ellipse_sd(p, nx, 660.0, 8.0, 4.5), feather);
        px = layer_over(px, [120.0, 70.0, 62.0], nostril);
    }
    px
}

fn mouth_art(p: Point, feather: f64) -> [f64; 4] {
    let (cx, cy) = (512.0, 790.0);
    let lips = coverage(ellipse_sd(p, cx, cy, 88.0, 26.0), feather);
    let upper = smoothstep(cy + 1.0, cy - 3.0, p.y);
    let base = mix([202.0, 86.0, 90.0], [186.0, 74.0, 80.0], upper);
    let mut px = layer_over([0.0; 4], base, lips);
    let seam = coverage((p.y - cy).abs() - 1.8, feather) * lips;
    px = layer_over(px, [126.0, 42.0, 50.0], seam);
    px
}
