use std::time::Duration;

use super::{
    ChatCall, ChatCompletionResponse, EmbedCall, EmbeddingResponse, EndpointConfig, Transport,
    TransportError,
};

/// Blocking HTTP transport for OpenAI-compatible servers.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpTransport {
    pub fn new() -> Self {
        Self {
            agent: ureq::AgentBuilder::new().build(),
        }
    }

    fn post<T: serde::de::DeserializeOwned>(
        &self,
        endpoint: &EndpointConfig,
        path: &str,
        api_key: Option<&str>,
        body: &impl serde::Serialize,
    ) -> Result<T, TransportError> {
        let url = format!("{}{}", endpoint.base_url.trim_end_matches('/'), path);
        let mut request = self
            .agent
            .post(&url)
            .timeout(Duration::from_secs(endpoint.timeout_secs.max(1)))
            .set("Content-Type", "application/json");
        if let Some(key) = api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(response) => response
                .into_json::<T>()
                .map_err(|e| TransportError::Malformed(e.to_string())),
            Err(ureq::Error::Status(status, response)) => Err(TransportError::Http {
                status,
                body: response.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(TransportError::Network(t.to_string())),
        }
    }
}

impl Transport for HttpTransport {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatCompletionResponse, TransportError> {
        self.post(call.endpoint, "/v1/chat/completions", call.api_key, call.body)
    }

    fn embed(&self, call: &EmbedCall<'_>) -> Result<EmbeddingResponse, TransportError> {
        self.post(call.endpoint, "/v1/embeddings", call.api_key, call.body)
    }
}
