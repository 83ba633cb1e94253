//! Declarative linear pipelines: JSON spec, operator registry, content-hash cache.

mod cache;
mod registry;
mod run;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::OpError;

pub use cache::{cache_key, Cache, CacheStats, DEFAULT_BUDGET};
pub use registry::{registry, OperatorDef, ParamKind, ParamSpec, Params, Registry};
pub use run::{run_pipeline, run_pipeline_with, RunFailure, RunOptions, RunOutput, RunRecord, StageRecord};

/// A parameter value: number, string, or list of (x, y) coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
    Coords(Vec<[f64; 2]>),
}

impl ParamValue {
    fn type_name(&self) -> &'static str {
        match self {
            ParamValue::Number(_) => "number",
            ParamValue::Text(_) => "string",
            ParamValue::Coords(_) => "coordinate list",
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub op: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl StageSpec {
    pub fn new(op: &str) -> Self {
        Self {
            op: op.to_string(),
            params: BTreeMap::new(),
            enabled: true,
        }
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub name: String,
    pub stages: Vec<StageSpec>,
    /// Optional schema version; only 1 is accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid pipeline JSON: {0}")]
    ParseError(String),
    #[error("stage {stage}: unknown operator {name:?}")]
    UnknownOp { name: String, stage: usize },
    #[error("stage {stage}: parameter {key:?}: {reason}")]
    BadParamSchema { stage: usize, key: String, reason: String },
    #[error("stage {stage} ({op}) failed: {source}")]
    StageFailure { stage: usize, op: String, source: OpError },
}

impl PipelineError {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineError::ParseError(_) => "ParseError",
            PipelineError::UnknownOp { .. } => "UnknownOp",
            PipelineError::BadParamSchema { .. } => "BadParamSchema",
            PipelineError::StageFailure { .. } => "StageFailure",
        }
    }

    /// Index of the offending stage, when there is one.
    pub fn stage(&self) -> Option<usize> {
        match self {
            PipelineError::ParseError(_) => None,
            PipelineError::UnknownOp { stage, .. }
            | PipelineError::BadParamSchema { stage, .. }
            | PipelineError::StageFailure { stage, .. } => Some(*stage),
        }
    }
}

impl PipelineSpec {
    pub fn new(name: &str, stages: Vec<StageSpec>) -> Self {
        Self {
            name: name.to_string(),
            stages,
            v: None,
        }
    }

    /// Checks every stage against the registry.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if let Some(v) = self.v {
            if v != 1 {
                return Err(PipelineError::ParseError(format!("unsupported schema version {v}")));
            }
        }
        for (i, stage) in self.stages.iter().enumerate() {
            let def = registry().get(&stage.op).ok_or_else(|| PipelineError::UnknownOp {
                name: stage.op.clone(),
                stage: i,
            })?;
            def.resolve(&stage.params)
                .map_err(|(key, reason)| PipelineError::BadParamSchema { stage: i, key, reason })?;
        }
        Ok(())
    }
}

pub fn parse_pipeline_spec(text: &str) -> Result<PipelineSpec, PipelineError> {
    let spec: PipelineSpec = serde_json::from_str(text).map_err(|e| PipelineError::ParseError(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_stage() {
        let s = parse_pipeline_spec(r#"{"name":"t","stages":[{"op":"invert","params":{}}]}"#).unwrap();
        assert_eq!(s.stages.len(), 1);
        assert!(s.stages[0].enabled);
    }

    #[test]
    fn unknown_op() {
        let e = parse_pipeline_spec(r#"{"name":"t","stages":[{"op":"frobnicate","params":{}}]}"#).unwrap_err();
        assert_eq!(
            e,
            PipelineError::UnknownOp {
                name: "frobnicate".into(),
                stage: 0
            }
        );
    }

    #[test]
    fn string_for_number() {
        let e = parse_pipeline_spec(r#"{"name":"t","stages":[{"op":"thresh_simple","params":{"t":"high"}}]}"#)
            .unwrap_err();
        assert!(matches!(e, PipelineError::BadParamSchema { stage: 0, ref key, .. } if key == "t"));
    }

    #[test]
    fn even_window_and_unknown_key() {
        let e = parse_pipeline_spec(
            r#"{"name":"t","stages":[{"op":"invert"},{"op":"thresh_adaptive","params":{"window":4}}]}"#,
        )
        .unwrap_err();
        assert!(matches!(e, PipelineError::BadParamSchema { stage: 1, ref key, .. } if key == "window"));
        let e = parse_pipeline_spec(r#"{"name":"t","stages":[{"op":"invert","params":{"x":1}}]}"#).unwrap_err();
        assert!(matches!(e, PipelineError::BadParamSchema { stage: 0, ref key, .. } if key == "x"));
    }

    #[test]
    fn malformed_json() {
        assert_eq!(parse_pipeline_spec("{").unwrap_err().name(), "ParseError");
        assert_eq!(parse_pipeline_spec(r#"{"name":"t"}"#).unwrap_err().name(), "ParseError");
    }

    #[test]
    fn every_registered_op_accepts_its_defaults() {
        for def in registry().ops() {
            let required: Vec<&str> = def.params.iter().filter(|p| p.default.is_none()).map(|p| p.key).collect();
            if required.is_empty() {
                let spec = PipelineSpec::new("d", vec![StageSpec::new(def.name)]);
                assert!(spec.validate().is_ok(), "{}", def.name);
            }
        }
    }
}
