use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no frequency bins inside [{0}, {1}] Hz")]
    EmptyBand(f64, f64),
    #[error("zero-variance input to correlation")]
    ZeroVariance,
    #[error("no dominant spectral peak above the noise floor")]
    NoPeak,
    #[error("spectra are defined on different frequency bins")]
    MismatchedBins,
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty mask: {0}")]
    EmptyMask(&'static str),
    #[error("not a clip container")]
    NotAClip,
    #[error("not a weights container")]
    NotAWeights,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload")]
    TruncatedPayload,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("untrained generator: run editor training or load trained weights first")]
    UntrainedGenerator,
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Diff(#[from] rppg_autodiff::DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
