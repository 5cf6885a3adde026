//! Guidance from an external text generator, with the template as fallback.

use std::time::Duration;

use serde::Deserialize;

use medseg_core::session::{template_bundle, GuidanceBundle, GuidanceInput, GuidanceProvider, ProviderKind};

/// POSTs the [`GuidanceInput`] as JSON and expects `{"text": "..."}` back.
/// Any failure, timeout or blank answer yields the template bundle.
pub struct HttpGuidanceProvider {
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ExternalReply {
    text: String,
}

impl HttpGuidanceProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn fetch(&self, input: &GuidanceInput) -> Result<String, String> {
        let reply: ExternalReply = self
            .agent
            .post(&self.endpoint)
            .send_json(input)
            .map_err(|e| e.to_string())?
            .into_json()
            .map_err(|e| e.to_string())?;
        let text = reply.text.trim();
        if text.is_empty() {
            return Err("empty guidance text".into());
        }
        Ok(text.to_string())
    }
}

impl GuidanceProvider for HttpGuidanceProvider {
    fn generate(&self, input: &GuidanceInput) -> GuidanceBundle {
        match self.fetch(input) {
            Ok(text) => GuidanceBundle {
                mode: input.mode,
                text,
                positive_ref: input.positive_id,
                negative_ref: input.negative_id,
                provider: ProviderKind::External,
            },
            Err(e) => {
                tracing::warn!(endpoint = %self.endpoint, "guidance provider failed, using template: {e}");
                template_bundle(input)
            }
        }
    }
}
