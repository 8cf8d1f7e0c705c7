use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    TooFewPoints { got: usize, min: usize },
    NonFinite,
    DegenerateVertex { index: usize },
    SelfIntersecting { edges: (usize, usize) },
    EmptySearchRange,
    BadLayout { layout: usize, points: usize },
    CornersUnset,
    CornerOrder([usize; 4]),
    UnknownInstance(u32),
    UnmatchedInstance,
    BandMiss,
    EmptyRegion,
    DegenerateFiducials,
    MissingFiducials,
    ShapeMismatch(String),
    InvalidConfig(&'static str),
    NonFiniteLoss,
    Diverged { step: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::TooFewPoints { got, min } => {
                write!(f, "polygon has {got} points, at least {min} required")
            }
            Error::NonFinite => f.write_str("non-finite coordinate"),
            Error::DegenerateVertex { index } => {
                write!(f, "degenerate polygon vertex at index {index}")
            }
            Error::SelfIntersecting { edges } => {
                write!(f, "polygon edges {} and {} intersect", edges.0, edges.1)
            }
            Error::EmptySearchRange => f.write_str("empty search range for the 2nd corner"),
            Error::BadLayout { layout, points } => {
                write!(f, "fixed layout of {layout} points does not fit a {points}-point polygon")
            }
            Error::CornersUnset => f.write_str("corner indices are not set"),
            Error::CornerOrder(c) => write!(f, "corners {c:?} are not in cyclic order"),
            Error::UnknownInstance(id) => write!(f, "pixel refers to unknown instance {id}"),
            Error::UnmatchedInstance => f.write_str("unmatched instance"),
            Error::BandMiss => f.write_str("band miss"),
            Error::EmptyRegion => f.write_str("cannot distribute gradient over an empty region"),
            Error::DegenerateFiducials => f.write_str("degenerate fiducials"),
            Error::MissingFiducials => f.write_str("instance has no fiducial points"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFiniteLoss => f.write_str("non-finite loss value"),
            Error::Diverged { step } => write!(f, "training diverged at step {step}"),
        }
    }
}

impl core::error::Error for Error {}
