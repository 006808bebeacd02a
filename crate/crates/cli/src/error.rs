use satsynth::dataset::DatasetError;
use satsynth::diffusion::DiffusionError;
use satsynth::ingest::IngestError;
use satsynth::pipelines::PipelineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("adapter error: {0}")]
    Adapter(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Adapter(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::UnknownCity { .. } => CliError::Config(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::Config(_) => CliError::Config(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Policy(_) | DatasetError::Config(_) => CliError::Config(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}
