use std::path::PathBuf;

/// Errors produced by the rig pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },

    #[error("failed to parse {file}: {message}")]
    Parse { file: String, message: String },

    #[error("unknown component `{0}`")]
    UnknownComponent(String),

    #[error("weight {component}.{axis} = {value} is outside [-{bound}, {bound}]")]
    WeightOutOfRange {
        component: String,
        axis: String,
        value: f64,
        bound: f64,
    },

    #[error("invalid parameter vector: {0}")]
    InvalidParams(String),

    #[error("unknown landmark `{0}`")]
    UnknownLandmark(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("unknown expression channel `{0}`")]
    UnknownChannel(String),

    #[error("texture rect of layer `{layer}` ({x},{y} {w}x{h}) exceeds atlas {atlas_w}x{atlas_h}")]
    TextureOutOfBounds {
        layer: String,
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        atlas_w: u32,
        atlas_h: u32,
    },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("layer selection is empty")]
    EmptySelection,

    #[error("detected {blobs} blobs but the template has {landmarks} landmarks")]
    LandmarkCountMismatch { blobs: usize, landmarks: usize },

    #[error("dropped {dropped} of {total} samples (limit 1%): markers collide too often")]
    DropRate { dropped: usize, total: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("rig fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("missing landmark group `{0}`")]
    MissingLandmarks(String),

    #[error("inpainting region at ({x}, {y}) has no known neighbour")]
    UnboundedRegion { x: u32, y: u32 },

    #[error("hash mismatch for {file}: expected {expected}, found {found}")]
    HashMismatch {
        file: String,
        expected: String,
        found: String,
    },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("bad binary format in {file}: {message}")]
    Format { file: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input (as opposed to failures while running).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::NonFiniteLoss { .. } | Error::DropRate { .. }
        )
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid { .. } => "invalid",
            Error::Parse { .. } => "parse",
            Error::UnknownComponent(_) => "unknown_component",
            Error::WeightOutOfRange { .. } => "weight_out_of_range",
            Error::InvalidParams(_) => "invalid_params",
            Error::UnknownLandmark(_) => "unknown_landmark",
            Error::UnknownLayer(_) => "unknown_layer",
            Error::UnknownChannel(_) => "unknown_channel",
            Error::TextureOutOfBounds { .. } => "texture_out_of_bounds",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptySelection => "empty_selection",
            Error::LandmarkCountMismatch { .. } => "landmark_count_mismatch",
            Error::DropRate { .. } => "drop_rate",
            Error::SchemaMismatch(_) => "schema_mismatch",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Degenerate(_) => "degenerate",
            Error::MissingLandmarks(_) => "missing_landmarks",
            Error::UnboundedRegion { .. } => "unbounded_region",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::MissingFile(_) => "missing_file",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
