//! Expression-driven animation on top of fitted identity weights.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::ModelPackage;
use crate::error::{Error, Result};
use crate::geom::{centroid, Bounds, Point};
use crate::raster::{render_geometry, Image, RenderOptions};
use crate::rig::{compose_geometry, DeformedGeometry, ParamVector, Rig};

/// The 52 ARKit blendshape channel names.
pub const CHANNELS: [&str; 52] = [
    "eyeBlinkLeft",
    "eyeLookDownLeft",
    "eyeLookInLeft",
    "eyeLookOutLeft",
    "eyeLookUpLeft",
    "eyeSquintLeft",
    "eyeWideLeft",
    "eyeBlinkRight",
    "eyeLookDownRight",
    "eyeLookInRight",
    "eyeLookOutRight",
    "eyeLookUpRight",
    "eyeSquintRight",
    "eyeWideRight",
    "jawForward",
    "jawLeft",
    "jawRight",
    "jawOpen",
    "mouthClose",
    "mouthFunnel",
    "mouthPucker",
    "mouthLeft",
    "mouthRight",
    "mouthSmileLeft",
    "mouthSmileRight",
    "mouthFrownLeft",
    "mouthFrownRight",
    "mouthDimpleLeft",
    "mouthDimpleRight",
    "mouthStretchLeft",
    "mouthStretchRight",
    "mouthRollLower",
    "mouthRollUpper",
    "mouthShrugLower",
    "mouthShrugUpper",
    "mouthPressLeft",
    "mouthPressRight",
    "mouthLowerDownLeft",
    "mouthLowerDownRight",
    "mouthUpperUpLeft",
    "mouthUpperUpRight",
    "browDownLeft",
    "browDownRight",
    "browInnerUp",
    "browOuterUpLeft",
    "browOuterUpRight",
    "cheekPuff",
    "cheekSquintLeft",
    "cheekSquintRight",
    "noseSneerLeft",
    "noseSneerRight",
    "tongueOut",
];

/// The mapping shipped with the library.
pub const DEFAULT_MAPPING_JSON: &str = include_str!("../assets/default_mapping.json");

pub fn is_channel(name: &str) -> bool {
    CHANNELS.contains(&name)
}

/// Channel values at one instant. Values are clamped into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpressionFrame {
    pub time: f64,
    channels: BTreeMap<String, f64>,
}

impl ExpressionFrame {
    pub fn neutral(time: f64) -> ExpressionFrame {
        ExpressionFrame {
            time,
            channels: BTreeMap::new(),
        }
    }

    pub fn new(
        time: f64,
        channels: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<ExpressionFrame> {
        let mut f = ExpressionFrame::neutral(time);
        for (k, v) in channels {
            f.set(&k, v)?;
        }
        Ok(f)
    }

    pub fn set(&mut self, channel: &str, value: f64) -> Result<()> {
        if !is_channel(channel) {
            return Err(Error::UnknownChannel(channel.to_string()));
        }
        if value.is_nan() {
            return Err(Error::invalid(
                format!("channels.{channel}"),
                "value is NaN",
            ));
        }
        self.channels
            .insert(channel.to_string(), value.clamp(0.0, 1.0));
        Ok(())
    }

    /// Channel value, zero when unset.
    pub fn get(&self, channel: &str) -> f64 {
        self.channels.get(channel).copied().unwrap_or(0.0)
    }

    pub fn channels(&self) -> &BTreeMap<String, f64> {
        &self.channels
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameFile {
    time: f64,
    #[serde(default)]
    channels: BTreeMap<String, f64>,
}

impl<'de> Deserialize<'de> for ExpressionFrame {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = FrameFile::deserialize(d)?;
        ExpressionFrame::new(f.time, f.channels).map_err(serde::de::Error::custom)
    }
}

/// Parses a timeline (JSON array of frames) and checks it is time-sorted.
pub fn parse_timeline(text: &str, origin: &str) -> Result<Vec<ExpressionFrame>> {
    let frames: Vec<ExpressionFrame> = serde_json::from_str(text).map_err(|e| Error::Parse {
        file: origin.to_string(),
        message: e.to_string(),
    })?;
    check_sorted(&frames)?;
    Ok(frames)
}

pub fn load_timeline(path: &Path) -> Result<Vec<ExpressionFrame>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_timeline(&text, &path.display().to_string())
}

fn check_sorted(frames: &[ExpressionFrame]) -> Result<()> {
    for (i, w) in frames.windows(2).enumerate() {
        if w[1].time.partial_cmp(&w[0].time).is_none_or(|o| o.is_lt()) {
            return Err(Error::invalid(
                format!("[{}].time", i + 1),
                format!("{} precedes the previous frame's {}", w[1].time, w[0].time),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TranslateX,
    TranslateY,
    ScaleX,
    ScaleY,
    UniformScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pivot {
    #[default]
    Anchor,
    TopEdge,
    BottomEdge,
}

/// One channel-to-layer binding. Translation gains are fractions of the
/// canvas size per unit channel value; scale gains are relative size change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub channel: String,
    pub layer: String,
    pub mode: Mode,
    pub gain: f64,
    #[serde(default)]
    pub pivot: Pivot,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpressionMapping {
    pub rules: Vec<Rule>,
}

impl ExpressionMapping {
    pub fn from_json(text: &str, origin: &str) -> Result<ExpressionMapping> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            file: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// The shipped default mapping.
    pub fn default_mapping() -> ExpressionMapping {
        ExpressionMapping::from_json(DEFAULT_MAPPING_JSON, "default_mapping.json")
            .expect("bundled mapping parses")
    }

    /// Checks rules against `rig`. Errors name the offending rule; the
    /// returned strings are non-fatal warnings (duplicate bindings).
    pub fn validate(&self, rig: &Rig) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, r) in self.rules.iter().enumerate() {
            if !is_channel(&r.channel) {
                return Err(Error::invalid(
                    format!("rules[{i}].channel"),
                    format!("unknown expression channel `{}`", r.channel),
                ));
            }
            if rig.layer(&r.layer).is_none() {
                return Err(Error::invalid(
                    format!("rules[{i}].layer"),
                    format!("unknown layer `{}`", r.layer),
                ));
            }
            if !r.gain.is_finite() {
                return Err(Error::invalid(format!("rules[{i}].gain"), "must be finite"));
            }
            if !seen.insert((r.channel.as_str(), r.layer.as_str(), r.mode)) {
                warnings.push(format!(
                    "rules[{i}]: {} already drives {} with {:?}; effects add up",
                    r.channel, r.layer, r.mode
                ));
            }
        }
        Ok(warnings)
    }

    /// Channels that at least one rule reads.
    pub fn channels(&self) -> Vec<&str> {
        let mut c: Vec<&str> = self.rules.iter().map(|r| r.channel.as_str()).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Reads a mapping file and validates it against `rig`.
pub fn load_mapping(path: &Path, rig: &Rig) -> Result<(ExpressionMapping, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = ExpressionMapping::from_json(&text, &path.display().to_string())?;
    let warnings = m.validate(rig)?;
    Ok((m, warnings))
}

fn pivot_point(
    rig: &Rig,
    layer: &str,
    verts: &[Point],
    params: &ParamVector,
    pivot: Pivot,
) -> Point {
    let anchor = match rig.component(layer) {
        Some(c) => c.displace(c.anchor, params.component(&c.id)),
        None => centroid(verts),
    };
    let b = Bounds::of(verts).expect("layer has vertices");
    match pivot {
        Pivot::Anchor => anchor,
        Pivot::TopEdge => Point::new(anchor.x, b.min.y),
        Pivot::BottomEdge => Point::new(anchor.x, b.max.y),
    }
}

/// Fitted geometry plus every rule's displacement, each evaluated on the
/// fitted geometry and summed.
pub fn apply_expression(
    rig: &Rig,
    fitted: &ParamVector,
    frame: &ExpressionFrame,
    mapping: &ExpressionMapping,
) -> Result<DeformedGeometry> {
    let base = compose_geometry(rig, fitted)?;
    let mut out = base.clone();
    let size = rig.canvas_size as f64;
    for r in &mapping.rules {
        if !is_channel(&r.channel) {
            return Err(Error::UnknownChannel(r.channel.clone()));
        }
        let v = frame.get(&r.channel);
        if v == 0.0 {
            continue;
        }
        let verts = base
            .vertices(&r.layer)
            .ok_or_else(|| Error::UnknownLayer(r.layer.clone()))?;
        let pivot = pivot_point(rig, &r.layer, verts, fitted, r.pivot);
        let k = v * r.gain;
        let target = out.layers.get_mut(&r.layer).expect("same layers as base");
        for (q, p) in target.iter_mut().zip(verts) {
            let d = match r.mode {
                Mode::TranslateX => Point::new(k * size, 0.0),
                Mode::TranslateY => Point::new(0.0, k * size),
                Mode::ScaleX => Point::new(k * (p.x - pivot.x), 0.0),
                Mode::ScaleY => Point::new(0.0, k * (p.y - pivot.y)),
                Mode::UniformScale => (*p - pivot) * k,
            };
            *q = *q + d;
        }
    }
    Ok(out)
}

/// One image per frame, in frame order.
pub fn render_timeline(
    package: &ModelPackage,
    frames: &[ExpressionFrame],
    mapping: &ExpressionMapping,
) -> Result<Vec<Image>> {
    check_sorted(frames)?;
    frames
        .par_iter()
        .map(|f| render_frame(package, f, mapping))
        .collect()
}

/// Renders a single frame of `package` under `mapping`.
pub fn render_frame(
    package: &ModelPackage,
    frame: &ExpressionFrame,
    mapping: &ExpressionMapping,
) -> Result<Image> {
    let g = apply_expression(&package.rig, &package.params, frame, mapping)?;
    render_geometry(
        &package.rig,
        &package.atlas,
        &g,
        None,
        &RenderOptions::default(),
    )
}

/// `frame_00000.png`-style name for frame `i`.
pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}
