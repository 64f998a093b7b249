use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty channel")]
    EmptyChannel,
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("loss is not a scalar (shape {0:?})")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing {stage} checkpoint at {}", path.display())]
    MissingStage { stage: String, path: PathBuf },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no decodable images in {}", .0.display())]
    EmptyDir(PathBuf),
    #[error("binning mismatch: {0}")]
    BinningMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
