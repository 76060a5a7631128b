use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Error {
    /// The table reached its fill cap or a shift would run past the last slot.
    TableFull,
    /// Bounded growing needs at least two remainder bits.
    RemainderExhausted,
    /// Parameters violate a structural constraint.
    InvalidParams(&'static str),
    /// The operation is not defined for this filter variant.
    Unsupported(&'static str),
    /// The expandable filter ran out of fingerprint bits for a new level.
    LevelLimit,
    /// Raw parts handed to a loader are inconsistent.
    Corrupt(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::TableFull => f.write_str("table is full"),
            Error::RemainderExhausted => f.write_str("no remainder bits left to grow"),
            Error::InvalidParams(msg) => write!(f, "invalid parameters: {msg}"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::LevelLimit => f.write_str("fingerprint width limit reached for a new level"),
            Error::Corrupt(msg) => write!(f, "corrupt filter data: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
