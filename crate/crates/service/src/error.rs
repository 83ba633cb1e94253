use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use femseg_core::dicom::DicomError;
use femseg_core::evaluation::EvalError;
use femseg_core::femur::FemurError;
use femseg_core::pipeline::PipelineError;
use femseg_core::OpError;

/// The uniform error body every endpoint returns on failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub v: u32,
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: Value,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>, detail: Value) -> Self {
        Self {
            status,
            body: ErrorBody {
                v: 1,
                code: code.to_string(),
                message: message.into(),
                detail,
            },
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", what, Value::Null)
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message, Value::Null)
    }

    pub fn unprocessable(code: &str, message: impl Into<String>, detail: Value) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message, detail)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message, Value::Null)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<DicomError> for ApiError {
    fn from(e: DicomError) -> Self {
        let status = if matches!(e, DicomError::Io(_)) {
            StatusCode::INTERNAL_SERVER_ERROR
        } else {
            StatusCode::BAD_REQUEST
        };
        Self::new(status, e.name(), e.to_string(), Value::Null)
    }
}

pub fn pipeline_detail(e: &PipelineError) -> Value {
    match e {
        PipelineError::ParseError(_) => Value::Null,
        PipelineError::UnknownOp { name, stage } => json!({ "stage": stage, "op": name }),
        PipelineError::BadParamSchema { stage, key, reason } => json!({ "stage": stage, "key": key, "reason": reason }),
        PipelineError::StageFailure { stage, op, source } => json!({ "stage": stage, "op": op, "error": source.name() }),
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = if matches!(e, PipelineError::ParseError(_)) {
            StatusCode::BAD_REQUEST
        } else {
            StatusCode::UNPROCESSABLE_ENTITY
        };
        Self::new(status, e.name(), e.to_string(), pipeline_detail(&e))
    }
}

impl From<FemurError> for ApiError {
    fn from(e: FemurError) -> Self {
        let detail = match &e {
            FemurError::Op(op) => json!({ "error": op.name() }),
            _ => Value::Null,
        };
        Self::unprocessable(e.name(), e.to_string(), detail)
    }
}

impl From<OpError> for ApiError {
    fn from(e: OpError) -> Self {
        Self::unprocessable(e.name(), e.to_string(), Value::Null)
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        Self::unprocessable(e.name(), e.to_string(), Value::Null)
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e.to_string())
    }
}
