use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WarningCode {
    /// Eigenvalue gap at the cut is (near) zero; the subspace is not unique.
    Degenerate,
    /// `B·L < d_out − r` for the covariance.
    RankDeficient,
    /// β close to one together with a rank-deficient preserved-task covariance.
    BetaNearOne,
}

impl WarningCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            WarningCode::Degenerate => "DEGENERATE",
            WarningCode::RankDeficient => "RANK_DEFICIENT",
            WarningCode::BetaNearOne => "BETA_NEAR_ONE",
        }
    }
}

impl fmt::Display for WarningCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Non-fatal diagnostic attached to a result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub code: WarningCode,
    pub message: String,
}

impl Warning {
    pub fn new(code: WarningCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

/// Renders as the single-line `WARN <code>: <message>` diagnostic record.
impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WARN {}: {}", self.code, self.message)
    }
}
