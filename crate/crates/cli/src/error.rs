use std::fmt::Display;
use std::path::Path;

#[derive(Debug)]
pub enum Kind {
    Usage,
    MissingInput,
    Failed,
}

/// Failure reported as one machine-parseable line on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Display) -> Self {
        Self {
            kind: Kind::Usage,
            message: m.to_string(),
        }
    }

    pub fn missing(m: impl Display) -> Self {
        Self {
            kind: Kind::MissingInput,
            message: m.to_string(),
        }
    }

    pub fn failed(m: impl Display) -> Self {
        Self {
            kind: Kind::Failed,
            message: m.to_string(),
        }
    }

    pub fn code(&self) -> u8 {
        match self.kind {
            Kind::Usage => 2,
            Kind::MissingInput => 66,
            Kind::Failed => 1,
        }
    }

    pub fn line(&self) -> String {
        let tag = match self.kind {
            Kind::Usage => "usage",
            Kind::MissingInput => "missing-input",
            Kind::Failed => "failed",
        };
        let msg: String = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("qotsim: error[{tag}]: {msg}")
    }
}

/// Fails with exit code 66 unless every path exists.
pub fn require(paths: &[&Path]) -> Result<(), CliError> {
    let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::missing(format!("not found: {}", missing.join(", "))))
    }
}

macro_rules! impl_failed {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::failed(e)
            }
        }
    )*};
}

impl_failed!(
    std::io::Error,
    serde_json::Error,
    qotsim::world::WorldError,
    qotsim::dataset::DatasetError,
    qotsim::genqot::GenQotError,
    qotsim::grid::GridError,
    qotsim::policy::PolicyError,
    qotsim::sim::SimError,
    qotsim::evaluation::EvalError,
    qotsim::report::ReportError
);
