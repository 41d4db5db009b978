//! Serializable analysis reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{ConfidenceInterval, Method, TestOutcome, TestSettings};
use crate::noise::{CvConfig, NoiseEstimate, NoiseVariant};
use crate::rank::{RankDecision, StopRule};

pub const SCHEMA_VERSION: u32 = 1;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDescriptor {
    pub source: String,
    /// Shape as analysed, after any transpose (`rows >= cols`).
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
    pub centered: bool,
}

/// Everything that determined the result, echoed back verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<StopRule>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variant: Option<NoiseVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<usize>,
    pub settings: TestSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvConfig>,
}

impl RunConfig {
    pub fn new(command: impl Into<String>, settings: TestSettings) -> Self {
        Self {
            command: command.into(),
            method: None,
            rule: None,
            steps: Vec::new(),
            sigma2: None,
            noise_variant: None,
            level: None,
            kappa: None,
            settings,
            cv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub input: InputDescriptor,
    pub config: RunConfig,
    pub spectrum: Vec<f64>,
    #[serde(default)]
    pub tests: Vec<TestOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<RankDecision>,
    #[serde(default)]
    pub noise: Vec<NoiseEstimate>,
    #[serde(default)]
    pub intervals: Vec<ConfidenceInterval>,
    /// Union of the flags raised anywhere in the run.
    #[serde(default)]
    pub flags: Vec<String>,
}

impl AnalysisReport {
    pub fn new(seed: u64, input: InputDescriptor, config: RunConfig, spectrum: Vec<f64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            seed,
            input,
            config,
            spectrum,
            tests: Vec::new(),
            decision: None,
            noise: Vec::new(),
            intervals: Vec::new(),
            flags: Vec::new(),
        }
    }

    /// Rejects documents written under a different schema.
    pub fn check_schema(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::input(format!(
                "report schema {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        Ok(())
    }

    /// Collects test flags into `flags`, sorted and deduplicated.
    pub fn collect_flags(&mut self) {
        let mut all: Vec<String> = self.flags.drain(..).collect();
        for t in &self.tests {
            all.extend(t.flags.iter().cloned());
        }
        all.sort();
        all.dedup();
        self.flags = all;
    }
}
