use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands (or an operand and its declared shape) disagree.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    Invalid {
        op: &'static str,
        msg: String,
    },
    NonFinite {
        op: &'static str,
    },
    NonScalarLoss {
        shape: Vec<usize>,
    },
    MissingGrad {
        param: String,
    },
    NoPositives {
        anchor: usize,
    },
    NoNegatives {
        anchor: usize,
    },
    /// Structural violation in a token sequence, at the first offending position.
    Parse {
        position: usize,
        msg: String,
    },
    Overflow {
        len: usize,
        max_len: usize,
    },
    Config(String),
    ZeroDenominator(&'static str),
    Empty(&'static str),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::Invalid { op, msg } => write!(f, "{op}: {msg}"),
            Error::NonFinite { op } => write!(f, "{op}: produced a non-finite value"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward: loss must be a scalar, got shape {shape:?}")
            }
            Error::MissingGrad { param } => write!(f, "parameter `{param}` has no gradient"),
            Error::NoPositives { anchor } => write!(f, "anchor {anchor} has no positive samples"),
            Error::NoNegatives { anchor } => write!(f, "anchor {anchor} has no negative samples"),
            Error::Parse { position, msg } => write!(f, "malformed sequence at position {position}: {msg}"),
            Error::Overflow { len, max_len } => write!(
                f,
                "sequence length {len} exceeds max_len {max_len} by {}",
                len - max_len
            ),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::ZeroDenominator(what) => write!(f, "{what}: zero denominator"),
            Error::Empty(what) => write!(f, "{what}: empty input"),
        }
    }
}

impl core::error::Error for Error {}
