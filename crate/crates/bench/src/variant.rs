use std::fmt;
use std::str::FromStr;

use gpmpc_core::propagation::PropagationMode;
use gpmpc_core::qp::mpc::CovarianceMode;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Controller variant: `baseline` (no residual model) or
/// `lpv-{taylor,mm}-{precov,cov}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Lpv { propagation: PropagationMode, covariance: CovarianceMode },
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Lpv { propagation: PropagationMode::Taylor, covariance: CovarianceMode::Precov },
        Variant::Lpv { propagation: PropagationMode::Taylor, covariance: CovarianceMode::Cov },
        Variant::Lpv { propagation: PropagationMode::Mm, covariance: CovarianceMode::Precov },
        Variant::Lpv { propagation: PropagationMode::Mm, covariance: CovarianceMode::Cov },
    ];

    pub fn uses_gp(&self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    pub fn propagation(&self) -> PropagationMode {
        match self {
            Variant::Baseline => PropagationMode::Mm,
            Variant::Lpv { propagation, .. } => *propagation,
        }
    }

    pub fn covariance(&self) -> CovarianceMode {
        match self {
            Variant::Baseline => CovarianceMode::Precov,
            Variant::Lpv { covariance, .. } => *covariance,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Baseline => f.write_str("baseline"),
            Variant::Lpv { propagation, covariance } => {
                let p = match propagation {
                    PropagationMode::Taylor => "taylor",
                    PropagationMode::Mm => "mm",
                };
                let c = match covariance {
                    CovarianceMode::Precov => "precov",
                    CovarianceMode::Cov => "cov",
                };
                write!(f, "lpv-{p}-{c}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownVariant(pub String);

impl fmt::Display for UnknownVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown variant '{}' (expected baseline or lpv-{{taylor,mm}}-{{precov,cov}})", self.0)
    }
}

impl std::error::Error for UnknownVariant {}

impl FromStr for Variant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.to_string() == s).ok_or_else(|| UnknownVariant(s.to_string()))
    }
}

impl Serialize for Variant {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
