//! Synthetic training data: random weights, marker renders, blob recovery.

mod assignment;
mod dataset;

pub use assignment::min_cost_assignment;
pub use dataset::{Dataset, DatasetMeta};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::landmarks::LandmarkSet;
use crate::raster::{render_markers, Image};
use crate::rig::{ParamVector, Rig, WEIGHT_BOUND};

/// Default blob luminance threshold.
pub const BLOB_THRESHOLD: f64 = 200.0;

/// `n` weight vectors with every weight i.i.d. uniform on `[-30, 30]`.
pub fn sample_params(rig: &Rig, n: usize, seed: u64) -> Result<Vec<ParamVector>> {
    if n == 0 {
        return Err(Error::invalid("n", "sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rig.param_count();
    Ok((0..n)
        .map(|_| {
            let values: Vec<f64> = (0..p)
                .map(|_| rng.random_range(-WEIGHT_BOUND..=WEIGHT_BOUND))
                .collect();
            ParamVector::from_slice(rig, &values).expect("length matches rig")
        })
        .collect())
}

/// A connected bright region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    /// Mean of member pixel centers.
    pub centroid: Point,
    pub area: usize,
}

/// Rec. 601 luma of a pixel.
pub fn luminance(px: [u8; 4]) -> f64 {
    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
}

/// 8-connected components of pixels brighter than `threshold`, largest
/// first. Equal areas keep raster-scan order of their first pixel.
pub fn detect_blobs(image: &Image, threshold: f64) -> Vec<Blob> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let bright: Vec<bool> = image.pixels().map(|px| luminance(px) > threshold).collect();
    let mut visited = vec![false; w * h];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !bright[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (mut sx, mut sy, mut area) = (0.0f64, 0.0f64, 0usize);
        while let Some(k) = stack.pop() {
            let (x, y) = (k % w, k / w);
            sx += x as f64;
            sy += y as f64;
            area += 1;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let nk = ny * w + nx;
                    if bright[nk] && !visited[nk] {
                        visited[nk] = true;
                        stack.push(nk);
                    }
                }
            }
        }
        blobs.push(Blob {
            centroid: Point::new(sx / area as f64, sy / area as f64),
            area,
        });
    }
    blobs.sort_by_key(|b| std::cmp::Reverse(b.area));
    blobs
}

/// Assigns blobs to template landmarks minimizing total squared distance.
///
/// `template` is normalized; blob centroids are in pixels of a square canvas
/// of side `canvas_size`. The result carries the detected positions,
/// normalized, under the template ids.
pub fn associate_landmarks(
    blobs: &[Blob],
    template: &LandmarkSet,
    canvas_size: u32,
) -> Result<LandmarkSet> {
    let n = template.len();
    if blobs.len() != n {
        return Err(Error::LandmarkCountMismatch {
            blobs: blobs.len(),
            landmarks: n,
        });
    }
    let scale = canvas_size as f64;
    let mut cost = Vec::with_capacity(n * n);
    for t in template.points() {
        let t = *t * scale;
        cost.extend(blobs.iter().map(|b| {
            let d = b.centroid - t;
            d.dot(d)
        }));
    }
    let col = min_cost_assignment(&cost, n);
    let points = col
        .iter()
        .map(|&j| {
            let c = blobs[j].centroid;
            Point::new(c.x / scale, c.y / scale)
        })
        .collect();
    template.with_points(points)
}

/// Marker render at `params`, then detection and association.
pub fn recover_landmarks(rig: &Rig, params: &ParamVector) -> Result<LandmarkSet> {
    let image = render_markers(rig, params, None)?;
    let blobs = detect_blobs(&image, BLOB_THRESHOLD);
    associate_landmarks(&blobs, &rig.template_set(), rig.canvas_size)
}

/// Samples `n` weight vectors and pairs each with its recovered landmarks.
///
/// Samples whose association fails are dropped; more than 1% dropped is an
/// error. Work fans out over the rayon pool but records stay in sample order.
pub fn build_dataset(rig: &Rig, n: usize, seed: u64) -> Result<Dataset> {
    rig.validate()?;
    let params = sample_params(rig, n, seed)?;
    let recovered: Vec<Result<LandmarkSet>> = params
        .par_iter()
        .map(|p| recover_landmarks(rig, p))
        .collect();

    let template = rig.template_set();
    let mut landmarks = Vec::with_capacity(n * template.len() * 2);
    let mut targets = Vec::with_capacity(n * rig.param_count());
    let mut dropped = 0;
    for (p, r) in params.iter().zip(recovered) {
        match r {
            Ok(set) => {
                landmarks.extend(set.flatten().into_iter().map(|v| v as f32));
                targets.extend(p.to_vec(rig).into_iter().map(|v| v as f32));
            }
            Err(Error::LandmarkCountMismatch { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if dropped * 100 > n {
        return Err(Error::DropRate { dropped, total: n });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} of {n} samples after marker collisions");
    }
    Dataset::new(
        DatasetMeta::for_rig(rig, seed, n, dropped),
        landmarks,
        targets,
    )
}
