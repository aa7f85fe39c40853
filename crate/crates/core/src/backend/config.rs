use serde::{Deserialize, Serialize};

use super::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    #[default]
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoint {
    pub mode: BackendMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl Endpoint {
    pub fn remote(url: impl Into<String>) -> Self {
        Self {
            mode: BackendMode::Remote,
            url: Some(url.into()),
        }
    }
}

/// Where each backend role lives and how to reach it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendEndpointConfig {
    pub grounder: Endpoint,
    pub segmenter: Endpoint,
    pub tracker: Endpoint,
    pub timeout_secs: f64,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    /// Send `image_path` instead of inline base64 when the frame has a source
    /// file (shared-filesystem deployments).
    pub prefer_image_path: bool,
}

impl Default for BackendEndpointConfig {
    fn default() -> Self {
        Self {
            grounder: Endpoint::default(),
            segmenter: Endpoint::default(),
            tracker: Endpoint::default(),
            timeout_secs: 30.0,
            retries: 2,
            prefer_image_path: false,
        }
    }
}

impl BackendEndpointConfig {
    /// All three roles served remotely from `base`.
    pub fn remote(base: &str) -> Self {
        Self {
            grounder: Endpoint::remote(base),
            segmenter: Endpoint::remote(base),
            tracker: Endpoint::remote(base),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        for (role, ep) in self.roles() {
            if ep.mode == BackendMode::Remote && ep.url.as_deref().is_none_or(str::is_empty) {
                return Err(BackendError::Precondition(format!(
                    "{role}: remote mode requires a url"
                )));
            }
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(BackendError::Precondition(
                "timeout must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn roles(&self) -> [(&'static str, &Endpoint); 3] {
        [
            ("grounder", &self.grounder),
            ("segmenter", &self.segmenter),
            ("tracker", &self.tracker),
        ]
    }
}
