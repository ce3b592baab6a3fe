use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point projects to infinity (|w| < 1e-12)")]
    DegenerateProjection,
    #[error("matrix is singular (|det| < 1e-12)")]
    Singular,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("square width {0} outside the odd range 3..=91")]
    WidthOutOfRange(u32),
    #[error("image {width}x{height} smaller than the required {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("max-pool input has odd spatial size {0}x{1}")]
    OddDimension(usize, usize),
    #[error("image size {0}x{1} is not divisible by the cell size 8")]
    DimensionNotDivisible(usize, usize),
    #[error("descriptor map is empty")]
    EmptyDescriptorMap,
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("ground-truth point set is empty")]
    EmptyGroundTruth,
    #[error("no correct detections")]
    NoCorrectDetections,
    #[error("empty point or descriptor set")]
    EmptySet,
    #[error("no matches")]
    NoMatches,
    #[error("no features in the co-visible region")]
    NoFeaturesInRegion,
    #[error("need at least 4 matches, got {0}")]
    InsufficientMatches(usize),
    #[error("degenerate (collinear) point configuration")]
    DegenerateConfiguration,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
