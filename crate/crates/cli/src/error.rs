use std::fmt;

use cmr_phase::descriptor::DescriptorError;
use cmr_phase::evalqc::EvalError;
use cmr_phase::imgvol::VolumeError;
use cmr_phase::phantom::PhantomError;
use cmr_phase::phases::PhaseError;
use cmr_phase::register::RegistrationError;

/// Failure class; each maps to one process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Io,
    Numerical,
    Rule,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Usage => 1,
            Kind::Io => 2,
            Kind::Numerical => 3,
            Kind::Rule => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Self { kind, error: error.into() }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn io(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Io, anyhow::anyhow!("{msg}"))
    }

    /// Prefixes the message, keeping the kind.
    pub fn context(self, ctx: impl fmt::Display) -> Self {
        Self { kind: self.kind, error: self.error.context(ctx.to_string()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        let kind = match e {
            VolumeError::Io { .. } | VolumeError::Header { .. } => Kind::Io,
            VolumeError::Invalid(_) => Kind::Usage,
            VolumeError::NonFinite { .. } | VolumeError::Degenerate => Kind::Numerical,
        };
        CliError::new(kind, e)
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        let kind = match &e {
            RegistrationError::InvalidConfig(_) | RegistrationError::TooSmall { .. } => Kind::Usage,
            RegistrationError::Frame { source, .. } if matches!(**source, RegistrationError::InvalidConfig(_)) => Kind::Usage,
            _ => Kind::Numerical,
        };
        CliError::new(kind, e)
    }
}

impl From<DescriptorError> for CliError {
    fn from(e: DescriptorError) -> Self {
        let kind = match e {
            DescriptorError::InvalidParameter(_)
            | DescriptorError::FocusOutOfBounds { .. }
            | DescriptorError::ShapeMismatch(_) => Kind::Usage,
            _ => Kind::Numerical,
        };
        CliError::new(kind, e)
    }
}

impl From<PhaseError> for CliError {
    fn from(e: PhaseError) -> Self {
        let kind = match e {
            PhaseError::NonFinite(_) => Kind::Numerical,
            _ => Kind::Rule,
        };
        CliError::new(kind, e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::new(Kind::Usage, e)
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        CliError::new(Kind::Usage, e)
    }
}
