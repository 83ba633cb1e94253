use std::time::Instant;

use serde::Serialize;
use sha2::{Digest as _, Sha256};

use super::cache::cache_key;
use super::{registry, Cache, PipelineError, PipelineSpec};
use crate::image::ImageBuffer;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Re-execute every stage even on a cache hit, refreshing the stored value.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    /// Index into the spec's stage list.
    pub index: usize,
    pub op: String,
    pub params_digest: String,
    pub output_digest: String,
    pub wall_ms: f64,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub pipeline: String,
    pub input_digest: String,
    pub stages: Vec<StageRecord>,
    /// Stages whose operator actually ran (cache misses or forced).
    pub executed: usize,
    pub output_digest: String,
}

impl RunRecord {
    /// The digest sequence that a replay must reproduce.
    pub fn digests(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.output_digest.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub output: ImageBuffer,
    /// One image per executed (enabled) stage, aligned with `record.stages`.
    pub intermediates: Vec<ImageBuffer>,
    pub record: RunRecord,
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: PipelineError,
    /// Outputs of the stages that completed before the failure.
    pub intermediates: Vec<ImageBuffer>,
    pub record: RunRecord,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {}

fn params_digest(op: &str, canonical: &str) -> String {
    let mut h = Sha256::new();
    h.update(op.as_bytes());
    h.update([0]);
    h.update(canonical.as_bytes());
    hex::encode(&h.finalize()[..16])
}

pub fn run_pipeline(spec: &PipelineSpec, input: &ImageBuffer, cache: &Cache) -> Result<RunOutput, RunFailure> {
    run_pipeline_with(spec, input, cache, &RunOptions::default())
}

pub fn run_pipeline_with(
    spec: &PipelineSpec,
    input: &ImageBuffer,
    cache: &Cache,
    opts: &RunOptions,
) -> Result<RunOutput, RunFailure> {
    let input_digest = input.digest();
    let mut record = RunRecord {
        pipeline: spec.name.clone(),
        input_digest: input_digest.clone(),
        stages: Vec::new(),
        executed: 0,
        output_digest: input_digest,
    };
    let mut intermediates: Vec<ImageBuffer> = Vec::new();

    for (i, stage) in spec.stages.iter().enumerate() {
        if !stage.enabled {
            continue;
        }
        let fail = |error, intermediates, record| RunFailure {
            error,
            intermediates,
            record,
        };
        let Some(def) = registry().get(&stage.op) else {
            let e = PipelineError::UnknownOp {
                name: stage.op.clone(),
                stage: i,
            };
            return Err(fail(e, intermediates, record));
        };
        let params = match def.resolve(&stage.params) {
            Ok(p) => p,
            Err((key, reason)) => {
                return Err(fail(PipelineError::BadParamSchema { stage: i, key, reason }, intermediates, record));
            }
        };
        let current = intermediates.last().unwrap_or(input);
        let canonical = params.canonical();
        let key = cache_key(def.name, &canonical, &record.output_digest);
        let start = Instant::now();
        let cached = if opts.force { None } else { cache.get(&key) };
        let cache_hit = cached.is_some();
        let out = match cached {
            Some(img) => img,
            None => match (def.run)(current, &params) {
                Ok(img) => {
                    record.executed += 1;
                    cache.put(&key, &img);
                    img
                }
                Err(source) => {
                    let e = PipelineError::StageFailure {
                        stage: i,
                        op: def.name.to_string(),
                        source,
                    };
                    return Err(fail(e, intermediates, record));
                }
            },
        };
        let output_digest = out.digest();
        record.stages.push(StageRecord {
            index: i,
            op: def.name.to_string(),
            params_digest: params_digest(def.name, &canonical),
            output_digest: output_digest.clone(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            cache_hit,
        });
        record.output_digest = output_digest;
        intermediates.push(out);
    }

    let output = intermediates.last().cloned().unwrap_or_else(|| input.clone());
    Ok(RunOutput {
        output,
        intermediates,
        record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Kind;
    use crate::pipeline::{ParamValue, StageSpec};

    fn ramp() -> ImageBuffer {
        ImageBuffer::from_fn(8, 8, Kind::Unit, |x, y| ((x * 8 + y) * 4) as f64)
    }

    #[test]
    fn empty_is_identity() {
        let c = Cache::default();
        let r = run_pipeline(&PipelineSpec::new("e", vec![]), &ramp(), &c).unwrap();
        assert_eq!(r.output, ramp());
        assert_eq!(r.record.executed, 0);
        assert!(r.record.stages.is_empty());
    }

    #[test]
    fn disabled_stage_skipped() {
        let mut s = StageSpec::new("invert");
        s.enabled = false;
        let c = Cache::default();
        let r = run_pipeline(&PipelineSpec::new("d", vec![s]), &ramp(), &c).unwrap();
        assert_eq!(r.output, ramp());
        assert_eq!(r.record.executed, 0);
    }

    #[test]
    fn failure_keeps_earlier_intermediates() {
        let spec = PipelineSpec::new(
            "f",
            vec![
                StageSpec::new("invert"),
                // not binary: dilate needs a mask
                StageSpec::new("dilate"),
            ],
        );
        let c = Cache::default();
        let err = run_pipeline(&spec, &ramp(), &c).unwrap_err();
        assert!(matches!(err.error, PipelineError::StageFailure { stage: 1, .. }));
        assert_eq!(err.intermediates.len(), 1);
        assert_eq!(err.record.stages.len(), 1);
    }

    #[test]
    fn params_digest_tracks_defaults() {
        let a = PipelineSpec::new("a", vec![StageSpec::new("thresh_simple")]);
        let b = PipelineSpec::new("b", vec![StageSpec::new("thresh_simple").with("t", ParamValue::Number(128.0))]);
        let c = Cache::default();
        let ra = run_pipeline(&a, &ramp(), &c).unwrap();
        let rb = run_pipeline(&b, &ramp(), &c).unwrap();
        assert_eq!(ra.record.stages[0].params_digest, rb.record.stages[0].params_digest);
        assert!(rb.record.stages[0].cache_hit);
    }
}
