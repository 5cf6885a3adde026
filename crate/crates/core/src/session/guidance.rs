//! Guidance text grounded in a contrastive pair of reference slices.

use serde::{Deserialize, Serialize};

use crate::retrieval::ReferenceIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    General,
    QuerySpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Template,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceBundle {
    pub mode: GuidanceMode,
    pub text: String,
    pub positive_ref: u64,
    pub negative_ref: u64,
    pub provider: ProviderKind,
}

/// Everything a provider sees for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceInput {
    pub mode: GuidanceMode,
    pub target: String,
    pub query_slice_index: usize,
    pub query_ref: String,
    pub positive_id: u64,
    pub negative_id: u64,
    pub positive_ref: String,
    pub negative_ref: String,
}

pub trait GuidanceProvider: Send + Sync {
    fn generate(&self, input: &GuidanceInput) -> GuidanceBundle;
}

pub fn template_text(input: &GuidanceInput) -> String {
    let body = format!(
        "In slices like this, {} typically appears as the region present in the first reference and absent in the second; compare the highlighted areas.",
        input.target
    );
    let refs = format!(
        " First reference: #{} ({}). Second reference: #{} ({}).",
        input.positive_id, input.positive_ref, input.negative_id, input.negative_ref
    );
    match input.mode {
        GuidanceMode::General => format!("{body}{refs}"),
        GuidanceMode::QuerySpecific => format!(
            "Query slice {} was checked for {}. {body}{refs}",
            input.query_slice_index, input.target
        ),
    }
}

pub fn template_bundle(input: &GuidanceInput) -> GuidanceBundle {
    GuidanceBundle {
        mode: input.mode,
        text: template_text(input),
        positive_ref: input.positive_id,
        negative_ref: input.negative_id,
        provider: ProviderKind::Template,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateProvider;

impl GuidanceProvider for TemplateProvider {
    fn generate(&self, input: &GuidanceInput) -> GuidanceBundle {
        template_bundle(input)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("reference {0} is not in the active index")]
pub struct UnresolvedReference(pub u64);

/// Resolves both reference ids against `index` and asks `provider` for
/// text.
#[allow(clippy::too_many_arguments)]
pub fn generate_guidance(
    index: &ReferenceIndex,
    mode: GuidanceMode,
    target: &str,
    query_slice_index: usize,
    query_ref: &str,
    positive_id: u64,
    negative_id: u64,
    provider: &dyn GuidanceProvider,
) -> Result<GuidanceBundle, UnresolvedReference> {
    let pos = index.get(positive_id).ok_or(UnresolvedReference(positive_id))?;
    let neg = index.get(negative_id).ok_or(UnresolvedReference(negative_id))?;
    let input = GuidanceInput {
        mode,
        target: target.to_string(),
        query_slice_index,
        query_ref: query_ref.to_string(),
        positive_id,
        negative_id,
        positive_ref: pos.thumbnail_ref.clone(),
        negative_ref: neg.thumbnail_ref.clone(),
    };
    Ok(provider.generate(&input))
}
