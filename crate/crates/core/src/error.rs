use crate::memmgr::AllocatorKind;
use crate::Agent;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("out of memory: {needed} frames requested, {free} free")]
    OutOfMemory { needed: u64, free: u64 },
    #[error("zero-sized request")]
    ZeroSize,
    #[error("{agent} may not access {kind} memory (xnack={xnack})")]
    AccessViolation { kind: AllocatorKind, agent: Agent, xnack: bool },
    #[error("allocation {0} is not live")]
    DoubleFree(u64),
    #[error("unknown allocation {0}")]
    UnknownAllocation(u64),
    #[error("page range {start}..{end} outside allocation of {pages} pages")]
    RangeOutOfBounds { start: u64, end: u64, pages: u64 },
    #[error("static managed memory is a singleton and already exists")]
    StaticSingleton,
    #[error("only on-demand host memory can be registered, not {0}")]
    NotRegistrable(AllocatorKind),
    #[error("virtual page {0:#x} already mapped")]
    AlreadyMapped(u64),
    #[error("virtual page {0:#x} not mapped")]
    Unmapped(u64),
    #[error("GPU entry for page {0:#x} has no matching system entry")]
    MirrorViolation(u64),
    #[error("physical address {0:#x} beyond HBM capacity")]
    OutOfRange(u64),
    #[error("allocation has {0} unmapped pages")]
    UnmappedPages(u64),
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("grid point {index} ({point}): {source}")]
    AtGridPoint {
        index: usize,
        point: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Variant name, used for error rows in reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::OutOfMemory { .. } => "OutOfMemory",
            Error::ZeroSize => "ZeroSize",
            Error::AccessViolation { .. } => "AccessViolation",
            Error::DoubleFree(_) => "DoubleFree",
            Error::UnknownAllocation(_) => "UnknownAllocation",
            Error::RangeOutOfBounds { .. } => "RangeOutOfBounds",
            Error::StaticSingleton => "StaticSingleton",
            Error::NotRegistrable(_) => "NotRegistrable",
            Error::AlreadyMapped(_) => "AlreadyMapped",
            Error::Unmapped(_) => "Unmapped",
            Error::MirrorViolation(_) => "MirrorViolation",
            Error::OutOfRange(_) => "OutOfRange",
            Error::UnmappedPages(_) => "UnmappedPages",
            Error::InvalidWorkload(_) => "InvalidWorkload",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::AtGridPoint { source, .. } => source.name(),
        }
    }
}
