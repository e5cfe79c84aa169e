use thiserror::Error;

/// Errors produced by the compiler passes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("layer {layer}: unknown layer kind `{kind}`")]
    UnknownKind { layer: usize, kind: String },

    #[error("layer {layer}: shape mismatch: {detail}")]
    ShapeMismatch { layer: usize, detail: String },

    #[error("layer {layer}: source {src} does not precede it (cycle or forward edge)")]
    Cycle { layer: usize, src: usize },

    #[error("layer {layer}: invalid attribute: {detail}")]
    InvalidLayer { layer: usize, detail: String },

    #[error("malformed graph: {0}")]
    MalformedGraph(String),

    #[error("block {block}: residual span needs more than 3 live on-chip tensors (at group {group})")]
    InfeasibleLiveness { block: usize, group: usize },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("layer {layer}: characteristics undefined for non-convolution layers")]
    UndefinedCharacteristics { layer: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("group {group}: unsupported kind for simulation")]
    UnsupportedKind { group: usize },

    #[error("no feasible policy: tightest violated constraint is {constraint} (best {best}, limit {limit})")]
    Infeasible {
        constraint: String,
        best: u64,
        limit: u64,
    },

    #[error("{0} blocks exceeds the exhaustive search cap of {1}")]
    TooManyBlocks(usize, usize),

    #[error("address overflow: {needed} bytes exceed DRAM capacity {capacity}")]
    AddressOverflow { needed: u64, capacity: u64 },

    #[error("image: {0}")]
    Image(String),

    #[error("instruction decode: {0}")]
    Decode(String),

    #[error("operand {value} outside signed 9-bit range")]
    OperandRange { value: i32 },

    #[error("tensor: {0}")]
    Tensor(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
