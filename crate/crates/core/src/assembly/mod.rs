//! Builds a character package from an aligned portrait.
//!
//! Stages: align and extract textures ([`build_draft`]), predict weights
//! ([`fit_portrait`]), repaint the base face under the feature mask
//! ([`repaint_base_face`]) and optionally add hair ([`integrate_hair`]).

mod inpaint;
mod package;

pub use inpaint::{inpaint, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub use package::{
    build_timestamp, sha256_hex, texture_space_mask, verify_package, Check, ModelPackage,
    Provenance, VerifyReport, ATLAS_FILE, DIRTY_LEVELS, MASK_FILE, PARAMS_FILE, PROVENANCE_FILE,
    RIG_FILE,
};

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{
    contour_transform, extract_component_texture, eye_level, map_base_face, AlignedPortrait,
    SimilarityTransform,
};
use crate::error::{Error, Result};
use crate::geom::{Bounds, Point, Rect};
use crate::landmarks::{LandmarkSet, PixelLandmarks};
use crate::raster::{
    draw_markers, marker_radius, render_geometry, render_mask_geometry, BinaryMask, Image,
    RenderOptions, TextureMap, ALPHA_THRESHOLD,
};
use crate::regressor::{check_model_rig, predict_params, MlpModel};
use crate::rig::{compose_geometry, Layer, Mesh, ParamVector, Rig, BASE_FACE};
use crate::synthgen::{associate_landmarks, detect_blobs, BLOB_THRESHOLD};

pub const DEFAULT_DILATION: u32 = 3;
pub const HAIR_LAYER: &str = "hair";

/// Where the landmarks of the feature-free base render come from.
#[derive(Debug, Clone, Default)]
pub enum LandmarkProvider {
    /// Portrait landmarks carried into the rig canvas by the contour fit.
    #[default]
    Warped,
    /// As `Warped`, then drawn as markers and recovered by blob detection,
    /// matching how training data was produced.
    MarkerPath,
    /// Landmarks supplied for the base render (rig canvas pixels).
    External(PixelLandmarks),
}

/// Hair layer placement in the z-order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HairSlot {
    #[default]
    Front,
    BehindFace,
}

/// Intermediate state after alignment and texture extraction.
#[derive(Debug, Clone)]
pub struct PackageDraft {
    pub rig: Rig,
    pub atlas: Image,
    pub aligned: AlignedPortrait,
    /// Aligned portrait frame to rig canvas (contour fit).
    pub aligned_to_rig: SimilarityTransform,
    pub input_size: (u32, u32),
}

impl PackageDraft {
    /// Input portrait frame to rig canvas.
    pub fn input_to_rig(&self) -> SimilarityTransform {
        self.aligned_to_rig.compose(&self.aligned.transform)
    }
}

/// Atlas size covering every texture rect of `rig`.
pub fn atlas_extent(rig: &Rig) -> (u32, u32) {
    rig.layer_ids()
        .iter()
        .filter_map(|id| rig.layer(id))
        .fold((0, 0), |(w, h), l| {
            (
                w.max(l.texture_rect.x + l.texture_rect.w),
                h.max(l.texture_rect.y + l.texture_rect.h),
            )
        })
}

/// Eye-levels the portrait and fills a fresh atlas with the warped base face
/// and every component texture.
pub fn build_draft(
    rig: &Rig,
    portrait: &Image,
    landmarks: &PixelLandmarks,
) -> Result<PackageDraft> {
    rig.validate()?;
    if (landmarks.image_size[0], landmarks.image_size[1]) != portrait.dims() {
        return Err(Error::DimensionMismatch {
            expected: portrait.dims(),
            found: (landmarks.image_size[0], landmarks.image_size[1]),
        });
    }
    let aligned = eye_level(portrait, landmarks)?;
    let aligned_to_rig = contour_transform(&aligned.landmarks, rig)?;
    let (w, h) = atlas_extent(rig);
    let mut atlas = Image::new(w, h);
    let base = map_base_face(&aligned, rig)?;
    atlas.blit(base.rect.x, base.rect.y, &base.image)?;
    let patches: Vec<_> = rig
        .components
        .par_iter()
        .map(|c| extract_component_texture(&aligned, c, rig))
        .collect::<Result<_>>()?;
    for p in patches {
        atlas.blit(p.rect.x, p.rect.y, &p.image)?;
    }
    Ok(PackageDraft {
        rig: rig.clone(),
        atlas,
        aligned,
        aligned_to_rig,
        input_size: portrait.dims(),
    })
}

/// The draft rendered at rest with features removed.
pub fn base_render(draft: &PackageDraft) -> Result<Image> {
    let params = ParamVector::zeros(&draft.rig);
    let geometry = compose_geometry(&draft.rig, &params)?;
    render_geometry(
        &draft.rig,
        &draft.atlas,
        &geometry,
        Some(&[BASE_FACE]),
        &RenderOptions::default(),
    )
}

fn normalized_landmarks(rig: &Rig, points: &PixelLandmarks) -> Result<LandmarkSet> {
    let template = rig.template_set();
    let n = rig.canvas_size as f64;
    let mut pts = Vec::with_capacity(template.len());
    for (id, group) in template.ids().iter().zip(template.groups()) {
        let p = points
            .points
            .get(id)
            .ok_or_else(|| Error::MissingLandmarks(group.clone()))?;
        pts.push(Point::new(p.x / n, p.y / n));
    }
    template.with_points(pts)
}

/// Landmarks of the base render, normalized, in template order.
pub fn base_landmarks(draft: &PackageDraft, provider: &LandmarkProvider) -> Result<LandmarkSet> {
    let rig = &draft.rig;
    let n = rig.canvas_size;
    let warped = || {
        let t = draft.aligned_to_rig;
        draft.aligned.landmarks.map_points([n, n], |p| t.apply(p))
    };
    match provider {
        LandmarkProvider::Warped => normalized_landmarks(rig, &warped()),
        LandmarkProvider::MarkerPath => {
            let w = warped();
            let template = rig.template_set();
            let positions = template
                .ids()
                .iter()
                .zip(template.groups())
                .map(|(id, g)| {
                    w.points
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::MissingLandmarks(g.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            let img = draw_markers(n, &positions, marker_radius(n));
            associate_landmarks(&detect_blobs(&img, BLOB_THRESHOLD), &template, n)
        }
        LandmarkProvider::External(lm) => {
            if lm.image_size != [n, n] {
                return Err(Error::DimensionMismatch {
                    expected: (n, n),
                    found: (lm.image_size[0], lm.image_size[1]),
                });
            }
            normalized_landmarks(rig, lm)
        }
    }
}

/// Predicts the identity weights from the base render's landmarks.
pub fn fit_portrait(
    draft: &PackageDraft,
    model: &MlpModel,
    provider: &LandmarkProvider,
) -> Result<ParamVector> {
    check_model_rig(model, &draft.rig)?;
    let landmarks = base_landmarks(draft, provider)?;
    predict_params(model, &landmarks)
}

/// Settings for [`repaint_base_face`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepaintOptions {
    /// Disc radius (px) the feature mask is grown by.
    pub dilation: u32,
    /// Texels with alpha above this count as feature coverage.
    pub alpha_threshold: u8,
    /// Inpainting stop threshold in 8-bit levels.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RepaintOptions {
    fn default() -> Self {
        RepaintOptions {
            dilation: DEFAULT_DILATION,
            alpha_threshold: ALPHA_THRESHOLD,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Feature coverage at `params`, dilated by a disc of `dilation` px.
pub fn repaint_mask(
    rig: &Rig,
    atlas: &Image,
    params: &ParamVector,
    dilation: u32,
    alpha_threshold: u8,
) -> Result<BinaryMask> {
    let features = rig.feature_ids();
    let geometry = compose_geometry(rig, params)?;
    Ok(render_mask_geometry(rig, atlas, &geometry, &features, alpha_threshold)?.dilate(dilation))
}

/// Inpaints the base-face texture under the dilated feature mask and
/// records the mask in the package.
pub fn repaint_base_face(pkg: &ModelPackage, opts: &RepaintOptions) -> Result<ModelPackage> {
    if !(opts.tol.is_finite() && opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::invalid(
            "repaint",
            "tol must be positive and max_iter at least 1",
        ));
    }
    let mask = repaint_mask(
        &pkg.rig,
        &pkg.atlas,
        &pkg.params,
        opts.dilation,
        opts.alpha_threshold,
    )?;
    let view = pkg
        .rig
        .layer(BASE_FACE)
        .ok_or_else(|| Error::UnknownLayer(BASE_FACE.into()))?;
    let map = TextureMap::new(&view);
    let tex_mask = texture_space_mask(&mask, &map);
    let base = pkg.atlas.crop(map.rect)?;
    let filled = inpaint(&base, &tex_mask, opts.tol, opts.max_iter)?;
    let mut out = pkg.clone();
    out.atlas.blit(map.rect.x, map.rect.y, &filled)?;
    out.repaint_mask = mask;
    Ok(out)
}

/// Adds (or replaces) the hair layer. Hair inputs are in the input portrait
/// frame; `input_to_rig` carries them into the rig canvas. Returns warnings,
/// e.g. hair overlapping the eyebrow boxes.
pub fn integrate_hair(
    pkg: &ModelPackage,
    hair: &Image,
    hair_mask: &BinaryMask,
    slot: HairSlot,
    input_to_rig: &SimilarityTransform,
    input_size: (u32, u32),
) -> Result<(ModelPackage, Vec<String>)> {
    if hair.dims() != input_size {
        return Err(Error::DimensionMismatch {
            expected: input_size,
            found: hair.dims(),
        });
    }
    if hair_mask.dims() != input_size {
        return Err(Error::DimensionMismatch {
            expected: input_size,
            found: hair_mask.dims(),
        });
    }
    let mut out = pkg.clone();
    let rig = &mut out.rig;
    rig.extra_layers.retain(|l| l.id != HAIR_LAYER);
    rig.z_order.retain(|id| id != HAIR_LAYER);
    let n = rig.canvas_size;
    let (aw, ah) = atlas_extent(rig);
    let rect = Rect::new(0, ah, n, n);
    rig.extra_layers.push(Layer {
        id: HAIR_LAYER.into(),
        mesh: Mesh::grid(Point::new(0.0, 0.0), n as f64, n as f64, 4, 4),
        texture_rect: rect,
    });
    match slot {
        HairSlot::Front => rig.z_order.push(HAIR_LAYER.into()),
        HairSlot::BehindFace => rig.z_order.insert(0, HAIR_LAYER.into()),
    }
    rig.validate()?;

    let mut atlas = Image::new(aw.max(n), ah + n);
    let keep = pkg
        .atlas
        .crop(Rect::new(0, 0, aw.min(pkg.atlas.width()), ah))?;
    atlas.blit(0, 0, &keep)?;
    let back = input_to_rig.inverse();
    let (iw, ih) = input_size;
    let mut covered = BinaryMask::new(n, n);
    for y in 0..n {
        for x in 0..n {
            let src = back.apply(Point::new(x as f64, y as f64));
            let (sx, sy) = (src.x.round(), src.y.round());
            if sx < 0.0 || sy < 0.0 || sx >= iw as f64 || sy >= ih as f64 {
                continue;
            }
            if hair_mask.get(sx as u32, sy as u32) {
                let px = hair.sample_bilinear_u8(src);
                atlas.put(x, ah + y, [px[0], px[1], px[2], 255]);
                covered.set(x, y, true);
            }
        }
    }
    out.atlas = atlas;

    let mut warnings = Vec::new();
    let geometry = compose_geometry(&out.rig, &out.params)?;
    for id in out.rig.feature_ids() {
        if !id.contains("brow") {
            continue;
        }
        let Some(b) = geometry.vertices(id).and_then(Bounds::of) else {
            continue;
        };
        let hit = (b.min.y.max(0.0) as u32..(b.max.y.ceil() as u32).min(n)).any(|y| {
            (b.min.x.max(0.0) as u32..(b.max.x.ceil() as u32).min(n)).any(|x| covered.get(x, y))
        });
        if hit {
            warnings.push(format!(
                "hair mask overlaps the `{id}` box; supply a portrait with the eyebrows uncovered"
            ));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((out, warnings))
}

/// Inputs and knobs for [`assemble`].
#[derive(Debug, Clone)]
pub struct AssembleOptions {
    pub provider: LandmarkProvider,
    pub repaint: RepaintOptions,
    pub hair: Option<(Image, BinaryMask, HairSlot)>,
    /// Hashes recorded in the provenance.
    pub input_hashes: BTreeMap<String, String>,
    pub model_sha256: Option<String>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            provider: LandmarkProvider::Warped,
            repaint: RepaintOptions::default(),
            hair: None,
            input_hashes: BTreeMap::new(),
            model_sha256: None,
        }
    }
}

/// Wall-clock time per pipeline stage, in execution order.
pub type StageTimes = Vec<(&'static str, Duration)>;

/// Result of [`assemble`].
#[derive(Debug, Clone)]
pub struct Assembled {
    pub package: ModelPackage,
    /// The package before repainting (same atlas layout, no hair).
    pub unrepainted: ModelPackage,
    pub warnings: Vec<String>,
    pub times: StageTimes,
}

/// Align, extract, fit, repaint and (optionally) add hair.
pub fn assemble(
    rig: &Rig,
    portrait: &Image,
    landmarks: &PixelLandmarks,
    model: &MlpModel,
    opts: &AssembleOptions,
) -> Result<Assembled> {
    let mut times = StageTimes::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, times: &mut StageTimes| {
        let now = Instant::now();
        times.push((name, now - clock));
        clock = now;
    };
    let draft = build_draft(rig, portrait, landmarks)?;
    lap("align+extract", &mut times);
    let params = fit_portrait(&draft, model, &opts.provider)?;
    lap("predict", &mut times);
    let n = rig.canvas_size;
    let unrepainted = ModelPackage {
        rig: draft.rig.clone(),
        atlas: draft.atlas.clone(),
        params,
        repaint_mask: BinaryMask::new(n, n),
        provenance: Provenance::new(opts.input_hashes.clone(), opts.model_sha256.clone()),
    };
    let mut package = repaint_base_face(&unrepainted, &opts.repaint)?;
    lap("repaint", &mut times);
    let mut warnings = Vec::new();
    if let Some((hair, mask, slot)) = &opts.hair {
        let (p, w) = integrate_hair(
            &package,
            hair,
            mask,
            *slot,
            &draft.input_to_rig(),
            draft.input_size,
        )?;
        package = p;
        warnings = w;
        lap("hair", &mut times);
    }
    Ok(Assembled {
        package,
        unrepainted,
        warnings,
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::render_mask;
    use crate::template::{default_atlas, default_rig};

    #[test]
    fn atlas_extent_matches_template_atlas() {
        let rig = default_rig(256);
        assert_eq!(atlas_extent(&rig), default_atlas(&rig).dims());
    }

    #[test]
    fn zero_dilation_equals_render_mask() {
        let rig = default_rig(256);
        let atlas = default_atlas(&rig);
        let p = ParamVector::zeros(&rig);
        let a = repaint_mask(&rig, &atlas, &p, 0, ALPHA_THRESHOLD).unwrap();
        let b = render_mask(&rig, &atlas, &p, &rig.feature_ids()).unwrap();
        assert_eq!(a, b);
        let c = repaint_mask(&rig, &atlas, &p, 3, ALPHA_THRESHOLD).unwrap();
        assert!(a.is_subset_of(&c));
    }
}
