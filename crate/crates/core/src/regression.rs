//! Frozen empirical constants. The checked-in values are measured by the
//! acceptance suite; a fresh measurement passes when it lies within
//! [`REGRESSION_TOLERANCE`] of the frozen value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REGRESSION_TOLERANCE: f64 = 0.10;

const FROZEN: &str = include_str!("../data/regression.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionConstants {
    pub constants: BTreeMap<String, f64>,
}

impl RegressionConstants {
    pub fn frozen() -> Self {
        RegressionConstants::from_json(FROZEN).expect("checked-in regression constants parse")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RegressionConstants = serde_json::from_str(text)?;
        if let Some((k, v)) = c.constants.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Config(format!("regression constant {k} = {v} must be positive")));
        }
        Ok(c)
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.constants
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("no regression constant named {name}")))
    }

    /// Compare a fresh measurement with the frozen value.
    pub fn compare(&self, name: &str, measured: f64) -> Result<RegressionCheck> {
        let frozen = self.get(name)?;
        let deviation = (measured - frozen).abs() / frozen;
        Ok(RegressionCheck {
            name: name.to_string(),
            frozen,
            measured,
            deviation,
            pass: deviation <= REGRESSION_TOLERANCE,
        })
    }

    /// `measured <= frozen · (1 + tolerance)`, for constants that act as bounds.
    pub fn bound(&self, name: &str, measured: f64) -> Result<RegressionCheck> {
        let frozen = self.get(name)?;
        Ok(RegressionCheck {
            name: name.to_string(),
            frozen,
            measured,
            deviation: (measured - frozen) / frozen,
            pass: measured <= frozen * (1.0 + REGRESSION_TOLERANCE),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionCheck {
    pub name: String,
    pub frozen: f64,
    pub measured: f64,
    /// Relative deviation from the frozen value.
    pub deviation: f64,
    pub pass: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_file_parses() {
        let c = RegressionConstants::frozen();
        assert!(!c.constants.is_empty());
        let (name, value) = c.constants.iter().next().unwrap();
        assert!(c.compare(name, *value * 1.05).unwrap().pass);
        assert!(!c.compare(name, *value * 1.2).unwrap().pass);
        assert!(c.bound(name, *value * 0.1).unwrap().pass);
        assert!(c.get("missing").is_err());
        assert!(RegressionConstants::from_json(r#"{"constants": {"a": -1.0}}"#).is_err());
    }
}
