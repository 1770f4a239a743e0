//! Layered 2D face rigs driven by per-component weights, with a landmark
//! regressor for fitting a rig to a portrait and expression retargeting.

pub mod align;
pub mod anim;
pub mod assembly;
pub mod error;
pub mod geom;
pub mod landmarks;
pub mod raster;
pub mod regressor;
pub mod rig;
pub mod synthgen;
pub mod template;

pub use error::{Error, Result};
pub use geom::{Point, Rect};
pub use landmarks::{LandmarkSet, PixelLandmarks};
pub use raster::{BinaryMask, Image};
pub use rig::{compose_geometry, Axis, DeformedGeometry, ParamVector, Rig};
