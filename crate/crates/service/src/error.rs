use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use loopforge_model::ModelError;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// JSON error body: `{code, message, field?}`.
#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`"))
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let message = e.to_string();
        match &e {
            ModelError::State(_) => Self::new(StatusCode::CONFLICT, "session_state", message),
            ModelError::Edit(m) => {
                let err = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_edit", message.clone());
                match m.split_once(':') {
                    Some((field, _)) if !field.contains(' ') => err.with_field(field),
                    _ => err,
                }
            }
            ModelError::Range(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "out_of_range", message),
            ModelError::Data(_) | ModelError::Length { .. } | ModelError::Sequence(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
            }
            ModelError::NonFinite { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "numerical", message)
            }
            _ => Self::new(StatusCode::BAD_REQUEST, "bad_request", message),
        }
    }
}

/// Parses a JSON body, reporting the offending field on failure. An empty
/// body is read as `{}`.
pub fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let bytes: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        bytes
    };
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        let named = ["missing field `", "unknown field `"]
            .iter()
            .find_map(|p| message.split_once(p))
            .and_then(|(_, rest)| rest.split_once('`'))
            .map(|(name, _)| name.to_string());
        let field = match (named, path.as_str()) {
            (Some(n), "." | "") => Some(n),
            (Some(n), p) => Some(format!("{p}.{n}")),
            (None, "." | "") => None,
            (None, p) => Some(p.to_string()),
        };
        let code = if inner.is_syntax() || inner.is_eof() {
            "malformed_json"
        } else {
            "invalid"
        };
        let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message);
        if code == "malformed_json" {
            err.status = StatusCode::BAD_REQUEST;
        }
        err.field = field;
        err
    })
}
