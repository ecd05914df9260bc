//! Link-level simulator for the uplink of a cooperative DS-CDMA system.
//!
//! The crate is organized around the signal path:
//!
//! * [`sysmodel`] — scenario configuration, spreading codes, multipath
//!   channels and effective-signature construction.
//! * [`txsim`] — two-phase transmission synthesis (sources, decode-and-forward
//!   relays, destination stacking).
//! * [`detect`] — RAKE front-end, conventional SIC, greedy list-based SIC
//!   (GL-SIC) with multi-branch processing, linear MMSE and an exhaustive ML
//!   oracle.
//! * [`relaysel`] — max-min SINR relay-subset evaluation plus exhaustive,
//!   standard-greedy and best-drop greedy selection.
//! * [`harness`] — reproducible Monte Carlo BER/SINR experiments with CSV
//!   output.
//! * [`cli`] — the `cdma-coop` command-line front-end.

pub mod cli;
pub mod detect;
pub mod harness;
pub mod relaysel;
pub mod sysmodel;
pub mod txsim;

use std::fmt;

/// Errors surfaced by configuration validation, detector construction and the
/// experiment harness. Internal contract violations (dimension mismatches,
/// zero-norm signatures) panic instead.
#[derive(Debug)]
pub enum SimError {
    /// A configuration or experiment parameter is out of range.
    InvalidConfig(String),
    /// A complexity guard was exceeded (ML enumeration, exhaustive subsets).
    GuardExceeded(String),
    /// A linear system could not be solved (e.g. MMSE with a singular
    /// covariance).
    SingularSystem(String),
    /// Output could not be written.
    Io(std::io::Error),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            SimError::GuardExceeded(msg) => write!(f, "complexity guard exceeded: {msg}"),
            SimError::SingularSystem(msg) => write!(f, "singular system: {msg}"),
            SimError::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for SimError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            SimError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(err: std::io::Error) -> Self {
        SimError::Io(err)
    }
}
