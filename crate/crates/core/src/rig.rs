//! Blendshape rig data model and linear composition of parameters into
//! deformed geometry.
//!
//! Every facial component carries three basis fields: a uniform horizontal
//! shift, a uniform vertical shift, and a radial scale about the component
//! anchor. A vertex at rest position `p` moves to
//!
//! ```text
//! p + (wx / 30) * dx_max * (1, 0) + (wy / 30) * dy_max * (0, 1) + (ws / 30) * s_max * (p - anchor)
//! ```
//!
//! and the base face never moves.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{centroid, Bounds, Point, Rect};
use crate::landmarks::{LandmarkSet, CONTOUR_GROUP};

/// Largest admissible magnitude of a blendshape weight.
pub const WEIGHT_BOUND: f64 = 30.0;

/// Id of the underlying face layer.
pub const BASE_FACE: &str = "base_face";

/// One of the three blendshape dimensions of a component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Scale,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Scale];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Scale => "scale",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Blendshape weights keyed by `(component, axis)`, stored unnormalized in
/// `[-30, 30]`.
///
/// A `ParamVector` is only meaningful relative to a rig; use
/// [`validate_params`] to check it against one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    entries: BTreeMap<(String, Axis), f64>,
}

impl ParamVector {
    pub fn new() -> Self {
        ParamVector::default()
    }

    /// All-zero weights for every component of `rig` (the base face).
    pub fn zeros(rig: &Rig) -> Self {
        let mut p = ParamVector::new();
        for c in &rig.components {
            for axis in Axis::ALL {
                p.set(&c.id, axis, 0.0);
            }
        }
        p
    }

    /// Builds a vector from values in rig order (component-major, `x, y, scale`).
    pub fn from_slice(rig: &Rig, values: &[f64]) -> Result<Self> {
        Self::from_ordered(rig.components.iter().map(|c| c.id.as_str()), values)
    }

    pub(crate) fn from_ordered<'a>(
        components: impl Iterator<Item = &'a str>,
        values: &[f64],
    ) -> Result<Self> {
        let mut p = ParamVector::new();
        let mut it = values.iter();
        for id in components {
            for axis in Axis::ALL {
                let v = it.next().ok_or_else(|| {
                    Error::InvalidParams(format!("too few values: missing {id}.{axis}"))
                })?;
                p.set(id, axis, *v);
            }
        }
        if it.next().is_some() {
            return Err(Error::InvalidParams(format!(
                "too many values: got {}",
                values.len()
            )));
        }
        Ok(p)
    }

    /// Values in rig order; absent entries read as zero.
    pub fn to_vec(&self, rig: &Rig) -> Vec<f64> {
        rig.components
            .iter()
            .flat_map(|c| Axis::ALL.map(|a| self.get(&c.id, a).unwrap_or(0.0)))
            .collect()
    }

    pub fn get(&self, component: &str, axis: Axis) -> Option<f64> {
        self.entries.get(&(component.to_string(), axis)).copied()
    }

    pub fn set(&mut self, component: &str, axis: Axis, weight: f64) {
        self.entries.insert((component.to_string(), axis), weight);
    }

    pub fn remove_component(&mut self, component: &str) {
        self.entries.retain(|(c, _), _| c != component);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Axis, f64)> + '_ {
        self.entries.iter().map(|((c, a), w)| (c.as_str(), *a, *w))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Component-wise scaling, without range checking.
    pub fn scaled(&self, alpha: f64) -> ParamVector {
        ParamVector {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v * alpha))
                .collect(),
        }
    }

    /// `[x, y, scale]` for one component, zeros where absent.
    pub fn component(&self, id: &str) -> [f64; 3] {
        Axis::ALL.map(|a| self.get(id, a).unwrap_or(0.0))
    }

    /// The `params.json` shape: `component -> {x, y, scale}` in rig order.
    pub fn to_json(&self, rig: &Rig) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for c in &rig.components {
            let [x, y, s] = self.component(&c.id);
            out.insert(
                c.id.clone(),
                serde_json::json!({ "x": x, "y": y, "scale": s }),
            );
        }
        serde_json::Value::Object(out)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let parsed: IndexMap<String, BTreeMap<Axis, f64>> = serde_json::from_value(value.clone())
            .map_err(|e| Error::Parse {
            file: "params".into(),
            message: e.to_string(),
        })?;
        let mut p = ParamVector::new();
        for (c, axes) in parsed {
            for (a, w) in axes {
                p.set(&c, a, w);
            }
        }
        Ok(p)
    }
}

/// A single problem found by [`validate_params`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfRange {
        component: String,
        axis: Axis,
        value: f64,
        bound: f64,
    },
    Missing {
        component: String,
        axis: Axis,
    },
    UnknownComponent {
        component: String,
        axis: Axis,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRange {
                component,
                axis,
                value,
                bound,
            } => write!(
                f,
                "{component}.{axis} = {value} outside [-{bound}, {bound}]"
            ),
            Violation::Missing { component, axis } => write!(f, "{component}.{axis} missing"),
            Violation::UnknownComponent { component, axis } => {
                write!(f, "{component}.{axis} names an unknown component")
            }
        }
    }
}

/// Reports every out-of-range, missing, or extra entry.
pub fn validate_params(params: &ParamVector, rig: &Rig) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let known: HashSet<&str> = rig.components.iter().map(|c| c.id.as_str()).collect();
    for (component, axis, value) in params.iter() {
        if !known.contains(component) {
            violations.push(Violation::UnknownComponent {
                component: component.to_string(),
                axis,
            });
        } else if value.is_nan() || value.abs() > WEIGHT_BOUND {
            violations.push(Violation::OutOfRange {
                component: component.to_string(),
                axis,
                value,
                bound: WEIGHT_BOUND,
            });
        }
    }
    for c in &rig.components {
        for axis in Axis::ALL {
            if params.get(&c.id, axis).is_none() {
                violations.push(Violation::Missing {
                    component: c.id.clone(),
                    axis,
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Per-component basis gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Horizontal shift in pixels at weight 30.
    pub dx_max: f64,
    /// Vertical shift in pixels at weight 30.
    pub dy_max: f64,
    /// Relative size change at weight 30.
    pub s_max: f64,
}

/// Triangle mesh in canvas pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    /// Regular grid over a rectangle with `cols x rows` cells.
    pub fn grid(origin: Point, width: f64, height: f64, cols: u32, rows: u32) -> Mesh {
        let mut vertices = Vec::new();
        for j in 0..=rows {
            for i in 0..=cols {
                vertices.push(Point::new(
                    origin.x + width * i as f64 / cols as f64,
                    origin.y + height * j as f64 / rows as f64,
                ));
            }
        }
        let stride = cols + 1;
        let mut triangles = Vec::new();
        for j in 0..rows {
            for i in 0..cols {
                let a = j * stride + i;
                let b = a + 1;
                let c = a + stride;
                let d = c + 1;
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Mesh {
            vertices,
            triangles,
        }
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::of(&self.vertices).expect("validated mesh is non-empty")
    }

    fn check(&self, path: &str) -> Result<()> {
        if self.vertices.len() < 3 {
            return Err(Error::invalid(
                format!("{path}.vertices"),
                format!(
                    "rest mesh needs at least 3 vertices, found {}",
                    self.vertices.len()
                ),
            ));
        }
        if self.triangles.is_empty() {
            return Err(Error::invalid(format!("{path}.triangles"), "no triangles"));
        }
        if let Some((k, _)) = self
            .vertices
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::invalid(
                format!("{path}.vertices[{k}]"),
                "non-finite coordinate",
            ));
        }
        let n = self.vertices.len() as u32;
        for (k, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::invalid(
                    format!("{path}.triangles[{k}]"),
                    format!("index out of range for {n} vertices"),
                ));
            }
        }
        let b = self.bounds();
        if b.width() <= 0.0 || b.height() <= 0.0 {
            return Err(Error::invalid(
                format!("{path}.vertices"),
                "rest mesh has zero area",
            ));
        }
        Ok(())
    }
}

/// A textured layer without blendshapes (the base face, hair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub id: String,
    #[serde(flatten)]
    pub mesh: Mesh,
    pub texture_rect: Rect,
}

/// Region used to crop a component's texture out of a portrait.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CropShape {
    /// Convex hull of the component landmarks grown by the margin.
    #[default]
    Hull,
    /// Generous bounding box of the landmarks.
    BoundingBox,
}

/// A facial feature layer with its blendshape basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub id: String,
    pub mesh: Mesh,
    pub anchor: Point,
    pub gains: Gains,
    pub texture_rect: Rect,
    pub landmark_ids: Vec<String>,
    pub crop: CropShape,
}

impl Component {
    /// Displaced position of a rest point under `[wx, wy, ws]`.
    #[inline]
    pub fn displace(&self, p: Point, w: [f64; 3]) -> Point {
        let g = &self.gains;
        let sx = w[0] / WEIGHT_BOUND * g.dx_max;
        let sy = w[1] / WEIGHT_BOUND * g.dy_max;
        let s = w[2] / WEIGHT_BOUND * g.s_max;
        Point::new(
            p.x + sx + s * (p.x - self.anchor.x),
            p.y + sy + s * (p.y - self.anchor.y),
        )
    }
}

/// A named landmark of the template face, in canvas pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateLandmark {
    pub id: String,
    pub group: String,
    pub x: f64,
    pub y: f64,
}

impl TemplateLandmark {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Template geometry of a layered face.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub canvas_size: u32,
    pub base_face: Layer,
    pub components: Vec<Component>,
    /// Additional static layers such as hair.
    pub extra_layers: Vec<Layer>,
    pub template_landmarks: Vec<TemplateLandmark>,
    /// Layer ids, back to front.
    pub z_order: Vec<String>,
}

/// Read-only view of any layer in a rig.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub id: &'a str,
    pub mesh: &'a Mesh,
    pub texture_rect: Rect,
    pub component: Option<&'a Component>,
}

impl Rig {
    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.id == id)
    }

    pub fn layer(&self, id: &str) -> Option<LayerView<'_>> {
        if id == self.base_face.id {
            return Some(LayerView {
                id: &self.base_face.id,
                mesh: &self.base_face.mesh,
                texture_rect: self.base_face.texture_rect,
                component: None,
            });
        }
        if let Some(c) = self.component(id) {
            return Some(LayerView {
                id: &c.id,
                mesh: &c.mesh,
                texture_rect: c.texture_rect,
                component: Some(c),
            });
        }
        self.extra_layers
            .iter()
            .find(|l| l.id == id)
            .map(|l| LayerView {
                id: &l.id,
                mesh: &l.mesh,
                texture_rect: l.texture_rect,
                component: None,
            })
    }

    /// All layer ids in declaration order: base face, components, extras.
    pub fn layer_ids(&self) -> Vec<&str> {
        std::iter::once(self.base_face.id.as_str())
            .chain(self.components.iter().map(|c| c.id.as_str()))
            .chain(self.extra_layers.iter().map(|l| l.id.as_str()))
            .collect()
    }

    pub fn feature_ids(&self) -> Vec<&str> {
        self.components.iter().map(|c| c.id.as_str()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.components.len() * 3
    }

    pub fn landmark(&self, id: &str) -> Option<&TemplateLandmark> {
        self.template_landmarks.iter().find(|l| l.id == id)
    }

    /// Template landmarks normalized by the canvas size, in rig order.
    pub fn template_set(&self) -> LandmarkSet {
        let n = self.canvas_size as f64;
        LandmarkSet::new(
            self.template_landmarks
                .iter()
                .map(|l| l.id.clone())
                .collect(),
            self.template_landmarks
                .iter()
                .map(|l| Point::new(l.x / n, l.y / n))
                .collect(),
            self.template_landmarks
                .iter()
                .map(|l| l.group.clone())
                .collect(),
        )
        .expect("validated rig has in-canvas landmarks")
    }

    /// Template positions of the landmarks listed for a group, in listed order.
    pub fn group_points(&self, group: &str) -> Vec<Point> {
        match self.component(group) {
            Some(c) => c
                .landmark_ids
                .iter()
                .filter_map(|id| self.landmark(id))
                .map(|l| l.position())
                .collect(),
            None => self
                .template_landmarks
                .iter()
                .filter(|l| l.group == group)
                .map(|l| l.position())
                .collect(),
        }
    }

    /// Landmark ids tagged with a group.
    pub fn group_ids(&self, group: &str) -> Vec<String> {
        match self.component(group) {
            Some(c) => c.landmark_ids.clone(),
            None => self
                .template_landmarks
                .iter()
                .filter(|l| l.group == group)
                .map(|l| l.id.clone())
                .collect(),
        }
    }

    /// Landmark position under `params`, following its component's field.
    pub fn displaced_landmark(&self, id: &str, params: &ParamVector) -> Result<Point> {
        let l = self
            .landmark(id)
            .ok_or_else(|| Error::UnknownLandmark(id.to_string()))?;
        Ok(match self.component(&l.group) {
            Some(c) => c.displace(l.position(), params.component(&c.id)),
            None => l.position(),
        })
    }

    /// SHA-256 of the canonical rig file encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&RigFile::from(self)).expect("rig serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Checks every structural invariant, reporting the offending field path.
    pub fn validate(&self) -> Result<()> {
        if self.canvas_size == 0 {
            return Err(Error::invalid("canvas_size", "must be positive"));
        }
        self.base_face.mesh.check("base_face")?;
        let mut ids = HashSet::new();
        ids.insert(self.base_face.id.as_str());
        for (k, c) in self.components.iter().enumerate() {
            let path = format!("components[{k}]");
            if !ids.insert(c.id.as_str()) {
                return Err(Error::invalid(
                    format!("{path}.id"),
                    format!("duplicate component id `{}`", c.id),
                ));
            }
            c.mesh.check(&path)?;
            let g = c.gains;
            for (name, v) in [
                ("dx_max", g.dx_max),
                ("dy_max", g.dy_max),
                ("s_max", g.s_max),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::invalid(
                        format!("{path}.gains.{name}"),
                        format!("must be strictly positive, found {v}"),
                    ));
                }
            }
            if !c.anchor.is_finite() {
                return Err(Error::invalid(format!("{path}.anchor"), "non-finite"));
            }
            for id in &c.landmark_ids {
                match self.landmark(id) {
                    None => {
                        return Err(Error::invalid(
                            format!("{path}.landmark_ids"),
                            format!("`{id}` is not a template landmark"),
                        ))
                    }
                    Some(l) if l.group != c.id => {
                        return Err(Error::invalid(
                            format!("{path}.landmark_ids"),
                            format!("`{id}` belongs to group `{}`", l.group),
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        for (k, l) in self.extra_layers.iter().enumerate() {
            let path = format!("layers[{k}]");
            if !ids.insert(l.id.as_str()) {
                return Err(Error::invalid(
                    format!("{path}.id"),
                    format!("duplicate layer id `{}`", l.id),
                ));
            }
            l.mesh.check(&path)?;
        }
        let mut lm_ids = HashSet::new();
        let n = self.canvas_size as f64;
        for (k, l) in self.template_landmarks.iter().enumerate() {
            let path = format!("template_landmarks[{k}]");
            if !lm_ids.insert(l.id.as_str()) {
                return Err(Error::invalid(
                    path,
                    format!("duplicate landmark id `{}`", l.id),
                ));
            }
            if l.group != CONTOUR_GROUP && self.component(&l.group).is_none() {
                return Err(Error::invalid(
                    format!("{path}.group"),
                    format!("unknown group `{}`", l.group),
                ));
            }
            if !(0.0..=n).contains(&l.x) || !(0.0..=n).contains(&l.y) {
                return Err(Error::invalid(path, "landmark outside the canvas"));
            }
        }
        for l in &self.template_landmarks {
            if let Some(c) = self.component(&l.group) {
                if !c.landmark_ids.contains(&l.id) {
                    return Err(Error::invalid(
                        format!("components.{}.landmark_ids", c.id),
                        format!("missing template landmark `{}`", l.id),
                    ));
                }
            }
        }
        let mut z_seen = HashSet::new();
        for (k, id) in self.z_order.iter().enumerate() {
            if !ids.contains(id.as_str()) {
                return Err(Error::invalid(
                    format!("z_order[{k}]"),
                    format!("unknown layer `{id}`"),
                ));
            }
            if !z_seen.insert(id.as_str()) {
                return Err(Error::invalid(
                    format!("z_order[{k}]"),
                    format!("layer `{id}` listed twice"),
                ));
            }
        }
        if z_seen.len() != ids.len() {
            let missing: Vec<&str> = ids.difference(&z_seen).copied().collect();
            return Err(Error::invalid(
                "z_order",
                format!("missing layers {missing:?}"),
            ));
        }
        let base_pos = self
            .z_order
            .iter()
            .position(|id| *id == self.base_face.id)
            .expect("base face checked above");
        if let Some(c) = self
            .components
            .iter()
            .find(|c| self.z_order.iter().position(|id| *id == c.id) < Some(base_pos))
        {
            return Err(Error::invalid(
                "z_order",
                format!("component `{}` is behind the base face", c.id),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Rig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Rig::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                file: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Rig> {
        let file: RigFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            file: "rig".into(),
            message: e.to_string(),
        })?;
        let rig = file.into_rig()?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RigFile::from(self)).expect("rig serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Vertex positions of every layer after deformation.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformedGeometry {
    pub layers: IndexMap<String, Vec<Point>>,
}

impl DeformedGeometry {
    pub fn rest(rig: &Rig) -> DeformedGeometry {
        let layers = rig
            .layer_ids()
            .into_iter()
            .map(|id| {
                let v = rig.layer(id).expect("listed layer").mesh.vertices.clone();
                (id.to_string(), v)
            })
            .collect();
        DeformedGeometry { layers }
    }

    pub fn vertices(&self, layer: &str) -> Option<&[Point]> {
        self.layers.get(layer).map(Vec::as_slice)
    }
}

/// Linear blendshape composition.
pub fn compose_geometry(rig: &Rig, params: &ParamVector) -> Result<DeformedGeometry> {
    for (component, axis, value) in params.iter() {
        if rig.component(component).is_none() {
            return Err(Error::UnknownComponent(component.to_string()));
        }
        if value.is_nan() || value.abs() > WEIGHT_BOUND {
            return Err(Error::WeightOutOfRange {
                component: component.to_string(),
                axis: axis.to_string(),
                value,
                bound: WEIGHT_BOUND,
            });
        }
    }
    let mut geom = DeformedGeometry::rest(rig);
    for c in &rig.components {
        let w = params.component(&c.id);
        let verts = geom.layers.get_mut(&c.id).expect("component layer");
        for v in verts.iter_mut() {
            *v = c.displace(*v, w);
        }
    }
    Ok(geom)
}

// File encoding.

#[derive(Serialize, Deserialize)]
struct ComponentFile {
    id: String,
    vertices: Vec<Point>,
    triangles: Vec<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor: Option<Point>,
    gains: Gains,
    texture_rect: Rect,
    landmark_ids: Vec<String>,
    #[serde(default)]
    crop: CropShape,
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    canvas_size: u32,
    base_face: Layer,
    components: Vec<ComponentFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    layers: Vec<Layer>,
    template_landmarks: Vec<TemplateLandmark>,
    z_order: Vec<String>,
}

impl From<&Rig> for RigFile {
    fn from(rig: &Rig) -> Self {
        RigFile {
            canvas_size: rig.canvas_size,
            base_face: rig.base_face.clone(),
            components: rig
                .components
                .iter()
                .map(|c| ComponentFile {
                    id: c.id.clone(),
                    vertices: c.mesh.vertices.clone(),
                    triangles: c.mesh.triangles.clone(),
                    anchor: Some(c.anchor),
                    gains: c.gains,
                    texture_rect: c.texture_rect,
                    landmark_ids: c.landmark_ids.clone(),
                    crop: c.crop,
                })
                .collect(),
            layers: rig.extra_layers.clone(),
            template_landmarks: rig.template_landmarks.clone(),
            z_order: rig.z_order.clone(),
        }
    }
}

impl RigFile {
    fn into_rig(self) -> Result<Rig> {
        let mut seen = HashSet::new();
        for (k, c) in self.components.iter().enumerate() {
            if !seen.insert(c.id.clone()) {
                return Err(Error::invalid(
                    format!("components[{k}].id"),
                    format!("duplicate component id `{}`", c.id),
                ));
            }
        }
        let components = self
            .components
            .into_iter()
            .map(|c| {
                let anchor = c.anchor.unwrap_or_else(|| centroid(&c.vertices));
                Component {
                    id: c.id,
                    mesh: Mesh {
                        vertices: c.vertices,
                        triangles: c.triangles,
                    },
                    anchor,
                    gains: c.gains,
                    texture_rect: c.texture_rect,
                    landmark_ids: c.landmark_ids,
                    crop: c.crop,
                }
            })
            .collect();
        Ok(Rig {
            canvas_size: self.canvas_size,
            base_face: self.base_face,
            components,
            extra_layers: self.layers,
            template_landmarks: self.template_landmarks,
            z_order: self.z_order,
        })
    }
}
