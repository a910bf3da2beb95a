//! Common result type and the method/hypothesis dispatch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::FunctionalDataset;
use crate::rng::RngStream;
use crate::{ggf, hr, ksm, mhr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ggf,
    Mhr,
    Hr,
    Ksm,
}

/// `Linearity` is H01 (the effect is linear), `Nullity` is H02 (no effect).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    Linearity,
    Nullity,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ggf, Method::Mhr, Method::Hr, Method::Ksm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ggf => "ggf",
            Method::Mhr => "mhr",
            Method::Hr => "hr",
            Method::Ksm => "ksm",
        }
    }

    pub fn supports(self, h: Hypothesis) -> bool {
        matches!(
            (self, h),
            (Method::Ggf, _)
                | (Method::Mhr, _)
                | (Method::Hr, Hypothesis::Linearity)
                | (Method::Ksm, Hypothesis::Nullity)
        )
    }
}

impl Hypothesis {
    pub fn as_str(self) -> &'static str {
        match self {
            Hypothesis::Linearity => "linear",
            Hypothesis::Nullity => "null",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ggf" => Ok(Method::Ggf),
            "mhr" => Ok(Method::Mhr),
            "hr" => Ok(Method::Hr),
            "ksm" => Ok(Method::Ksm),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

impl FromStr for Hypothesis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "linearity" | "h01" => Ok(Hypothesis::Linearity),
            "null" | "nullity" | "h02" => Ok(Hypothesis::Nullity),
            other => Err(Error::invalid(format!("unknown hypothesis {other:?}"))),
        }
    }
}

/// Auxiliary quantities reported alongside a statistic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df_den: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub variance_components: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alt_p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_zero_mass: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub hypothesis: Hypothesis,
    pub statistic: f64,
    pub p_value: f64,
    pub diagnostics: Diagnostics,
}

/// Per-method settings for [`run_test`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub ggf: ggf::GgfConfig,
    pub mhr: mhr::MhrConfig,
    pub hr_components: usize,
    pub ksm: ksm::KsmConfig,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            ggf: ggf::GgfConfig::default(),
            mhr: mhr::MhrConfig::default(),
            hr_components: hr::DEFAULT_COMPONENTS,
            ksm: ksm::KsmConfig::default(),
        }
    }
}

/// Runs `method` for `hypothesis` on `ds`. Unsupported pairs are rejected.
pub fn run_test(
    ds: &FunctionalDataset,
    method: Method,
    hypothesis: Hypothesis,
    config: &TestConfig,
    rng: RngStream,
) -> Result<TestResult> {
    if !method.supports(hypothesis) {
        return Err(Error::invalid(format!("{method} does not test the {hypothesis} hypothesis")));
    }
    match method {
        Method::Ggf => ggf::ggf_test(ds, hypothesis, &config.ggf, rng),
        Method::Mhr => match hypothesis {
            Hypothesis::Linearity => mhr::mhr_linearity(ds, &config.mhr, rng),
            Hypothesis::Nullity => mhr::mhr_nullity(ds, &config.mhr, rng),
        },
        Method::Hr => hr::hr_test(ds, config.hr_components),
        Method::Ksm => ksm::ksm_test(ds, &config.ksm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn availability_matrix() {
        use Hypothesis::*;
        let lin: Vec<Method> = Method::ALL.into_iter().filter(|m| m.supports(Linearity)).collect();
        let nul: Vec<Method> = Method::ALL.into_iter().filter(|m| m.supports(Nullity)).collect();
        assert_eq!(lin, vec![Method::Ggf, Method::Mhr, Method::Hr]);
        assert_eq!(nul, vec![Method::Ggf, Method::Mhr, Method::Ksm]);
    }

    #[test]
    fn parse_names() {
        assert_eq!("KSM".parse::<Method>().unwrap(), Method::Ksm);
        assert_eq!("linear".parse::<Hypothesis>().unwrap(), Hypothesis::Linearity);
        assert_eq!("null".parse::<Hypothesis>().unwrap(), Hypothesis::Nullity);
        assert!("foo".parse::<Method>().is_err());
    }
}
