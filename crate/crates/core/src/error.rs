use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("intersection ratio undefined for zero-area box")]
    ZeroArea,

    #[error("no objects; tile size undefined")]
    NoObjects,

    #[error("degenerate overlap demand: {0}")]
    DegenerateOverlap(String),

    #[error("unknown tile ({col}, {row}) for image `{image_id}`")]
    UnknownTile { image_id: String, col: u32, row: u32 },

    #[error("unknown image `{0}`")]
    UnknownImage(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing annotation file for image `{image_id}` ({path})")]
    MissingAnnotation { image_id: String, path: PathBuf },

    #[error("duplicate image id `{0}`")]
    DuplicateId(String),

    #[error("could not place {requested} objects in image {image} after {attempts} attempts")]
    Placement {
        image: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps a filesystem error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
