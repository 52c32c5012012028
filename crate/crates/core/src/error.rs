use thiserror::Error;

use crate::topology::{Coord, Direction};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid network configuration: {0}")]
    Config(String),

    #[error("coordinate {0} is outside the {1}x{2} grid")]
    OutOfBounds(Coord, usize, usize),

    #[error("no legal move at {at} toward {dest}")]
    NoLegalMove { at: Coord, dest: Coord },

    #[error("path has a single node; the destination originates its own ACK")]
    DegeneratePath,

    #[error("cannot place {requested} faults: only {eligible} eligible nodes")]
    InfeasibleTarget { requested: usize, eligible: usize },

    #[error("fault at {0} is in the forbidden periphery band")]
    ForbiddenFault(Coord),

    #[error("faulty block frame around core {core:?} leaves the permitted region")]
    BoundaryClash { core: (usize, usize, usize, usize) },

    #[error("packet at {at} met a faulty block from an unexpected side (heading {heading:?})")]
    UnexpectedApproach { at: Coord, heading: Direction },

    #[error("illegal turn {incoming:?}->{outgoing:?} at {at} toward {dest}")]
    IllegalTurn {
        at: Coord,
        incoming: Direction,
        outgoing: Direction,
        dest: Coord,
    },

    #[error("destination {0} is not a deliverable node")]
    Unreachable(Coord),

    #[error("route toward {dest} exceeded its hop budget of {budget}")]
    HopBudgetExceeded { dest: Coord, budget: usize },

    #[error("simulation stalled at tick {0} with packets in flight")]
    Stalled(u64),

    #[error("runs do not share the same parameters")]
    HeterogeneousRuns,

    #[error("no runs to aggregate")]
    EmptyRuns,

    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}
