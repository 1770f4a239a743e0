//! Landmark containers: the normalized [`LandmarkSet`] used for training and
//! inference, and the pixel-space [`PixelLandmarks`] read from landmark files.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;

/// Group name for face-outline landmarks.
pub const CONTOUR_GROUP: &str = "contour";

/// Named 2D keypoints normalized by the canvas size into `[0, 1]²`.
///
/// Order is significant: it is the input order of the regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    ids: Vec<String>,
    points: Vec<Point>,
    groups: Vec<String>,
}

impl LandmarkSet {
    pub fn new(ids: Vec<String>, points: Vec<Point>, groups: Vec<String>) -> Result<Self> {
        if ids.len() != points.len() || ids.len() != groups.len() {
            return Err(Error::invalid(
                "landmarks",
                format!(
                    "{} ids, {} points and {} group tags must have equal length",
                    ids.len(),
                    points.len(),
                    groups.len()
                ),
            ));
        }
        let mut seen = HashSet::new();
        for (id, p) in ids.iter().zip(&points) {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(
                    format!("landmarks.{id}"),
                    "duplicate landmark id",
                ));
            }
            if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                return Err(Error::invalid(
                    format!("landmarks.{id}"),
                    format!("normalized position ({}, {}) outside [0, 1]", p.x, p.y),
                ));
            }
        }
        Ok(LandmarkSet {
            ids,
            points,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn get(&self, id: &str) -> Option<Point> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|k| self.points[k])
    }

    /// Interleaved `x0, y0, x1, y1, ...`.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    /// Same ids and groups with new normalized coordinates.
    pub fn with_points(&self, points: Vec<Point>) -> Result<Self> {
        LandmarkSet::new(self.ids.clone(), points, self.groups.clone())
    }
}

/// Landmark file contents: pixel coordinates in some image frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelLandmarks {
    pub image_size: [u32; 2],
    pub points: IndexMap<String, Point>,
    pub groups: IndexMap<String, Vec<String>>,
}

impl PixelLandmarks {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lm: PixelLandmarks = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        lm.check()?;
        Ok(lm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("landmarks serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn check(&self) -> Result<()> {
        for (group, ids) in &self.groups {
            for id in ids {
                if !self.points.contains_key(id) {
                    return Err(Error::invalid(
                        format!("groups.{group}"),
                        format!("references unknown point `{id}`"),
                    ));
                }
            }
        }
        for (id, p) in &self.points {
            if !p.is_finite() {
                return Err(Error::invalid(
                    format!("points.{id}"),
                    "non-finite coordinate",
                ));
            }
        }
        Ok(())
    }

    /// Points of a group in the group's listed order.
    pub fn group(&self, name: &str) -> Result<Vec<Point>> {
        let ids = self
            .groups
            .get(name)
            .filter(|ids| !ids.is_empty())
            .ok_or_else(|| Error::MissingLandmarks(name.to_string()))?;
        ids.iter()
            .map(|id| {
                self.points
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::UnknownLandmark(id.clone()))
            })
            .collect()
    }

    /// Points for an explicit id list.
    pub fn select(&self, ids: &[String]) -> Result<Vec<Point>> {
        ids.iter()
            .map(|id| {
                self.points
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::UnknownLandmark(id.clone()))
            })
            .collect()
    }

    /// Applies `f` to every point, keeping ids and groups.
    pub fn map_points(&self, image_size: [u32; 2], f: impl Fn(Point) -> Point) -> PixelLandmarks {
        PixelLandmarks {
            image_size,
            points: self
                .points
                .iter()
                .map(|(k, p)| (k.clone(), f(*p)))
                .collect(),
            groups: self.groups.clone(),
        }
    }
}
