use axum::http::StatusCode;

/// An HTTP error answer: status plus a stable machine-readable code.
#[derive(Debug, thiserror::Error)]
#[error("{status}: {code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub generation: Option<usize>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
            generation: None,
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn conflict(code: &str, message: impl Into<String>, generation: usize) -> Self {
        ApiError {
            generation: Some(generation),
            ..Self::new(StatusCode::CONFLICT, code, message)
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<hetswarm::Error> for ApiError {
    fn from(e: hetswarm::Error) -> Self {
        use hetswarm::Error as E;
        let status = match &e {
            E::InvalidGenome(_)
            | E::InvalidConfig(_)
            | E::DimensionMismatch { .. }
            | E::ArchiveTooSmall { .. }
            | E::Format(_)
            | E::Json(_) => StatusCode::BAD_REQUEST,
            E::Session(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::Embed(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}
