//! Zero-shot phrase enrichment: ask an LLM about the phrase and append its answer.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::VwsdInstance;
use crate::gateway::{GatewayError, GenerationParams, LlmGateway};
use crate::text::normalize_whitespace;

pub const PHRASE_PLACEHOLDER: &str = "<phrase>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementTemplate {
    Exact,
    WhatIs,
    Describe,
    MeaningOf,
}

impl EnhancementTemplate {
    pub const ALL: [EnhancementTemplate; 4] = [
        EnhancementTemplate::Exact,
        EnhancementTemplate::WhatIs,
        EnhancementTemplate::Describe,
        EnhancementTemplate::MeaningOf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnhancementTemplate::Exact => "exact",
            EnhancementTemplate::WhatIs => "what_is",
            EnhancementTemplate::Describe => "describe",
            EnhancementTemplate::MeaningOf => "meaning_of",
        }
    }

    pub fn pattern(self) -> &'static str {
        match self {
            EnhancementTemplate::Exact => "<phrase> ",
            EnhancementTemplate::WhatIs => "What is <phrase>?",
            EnhancementTemplate::Describe => "Describe <phrase>.",
            EnhancementTemplate::MeaningOf => "What is the meaning of <phrase>?",
        }
    }
}

impl fmt::Display for EnhancementTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnhancementTemplate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown enhancement template {s:?}; valid names: exact, what_is, describe, meaning_of"
                )
            })
    }
}

/// Substitutes the phrase into the template; nothing else is touched.
pub fn build_enhancement_prompt(phrase: &str, template: EnhancementTemplate) -> String {
    template.pattern().replace(PHRASE_PLACEHOLDER, phrase)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancedPhrase {
    pub instance_id: String,
    pub template: EnhancementTemplate,
    pub model: String,
    pub original: String,
    /// Raw LLM output.
    pub knowledge: String,
    pub enhanced: String,
}

/// `original + " " + normalized knowledge`, or just `original` when the knowledge is blank.
pub fn combine(original: &str, knowledge: &str) -> String {
    let knowledge = normalize_whitespace(knowledge);
    if knowledge.is_empty() {
        original.to_string()
    } else {
        format!("{original} {knowledge}")
    }
}

pub fn enhance_phrase(
    instance: &VwsdInstance,
    template: EnhancementTemplate,
    gateway: &LlmGateway,
    params: &GenerationParams,
) -> Result<EnhancedPhrase, GatewayError> {
    let prompt = build_enhancement_prompt(&instance.full_phrase, template);
    let response = gateway.complete(&params.request(prompt))?;
    Ok(EnhancedPhrase {
        instance_id: instance.instance_id.clone(),
        template,
        model: params.model.clone(),
        original: instance.full_phrase.clone(),
        enhanced: combine(&instance.full_phrase, &response.text),
        knowledge: response.text,
    })
}

/// Enhances every instance on the current rayon pool; output order follows input order.
pub fn enhance_all(
    instances: &[VwsdInstance],
    template: EnhancementTemplate,
    gateway: &LlmGateway,
    params: &GenerationParams,
) -> Vec<Result<EnhancedPhrase, GatewayError>> {
    instances
        .par_iter()
        .map(|inst| enhance_phrase(inst, template, gateway, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ResponseCache, ScriptedBackend};
    use std::sync::Arc;

    fn instance(phrase: &str) -> VwsdInstance {
        let ids: Vec<String> = (1..=10).map(|i| format!("img{i}")).collect();
        VwsdInstance::new("000000".into(), "andromeda", phrase, ids, "img1".into(), 1).unwrap()
    }

    fn gateway_with(prompt: &str, reply: &str) -> (LlmGateway, Arc<ScriptedBackend>) {
        let stub = Arc::new(ScriptedBackend::new().with_response(prompt, reply));
        (LlmGateway::new(Some(stub.clone()), ResponseCache::in_memory()), stub)
    }

    #[test]
    fn prompts_match_templates() {
        assert_eq!(
            build_enhancement_prompt("andromeda tree", EnhancementTemplate::MeaningOf),
            "What is the meaning of andromeda tree?"
        );
        assert_eq!(
            build_enhancement_prompt("andromeda tree", EnhancementTemplate::Exact),
            "andromeda tree "
        );
        assert_eq!(build_enhancement_prompt("x", EnhancementTemplate::Describe), "Describe x.");
        assert_eq!(
            build_enhancement_prompt("x", EnhancementTemplate::WhatIs),
            "What is x?"
        );
    }

    #[test]
    fn template_names_parse() {
        for t in EnhancementTemplate::ALL {
            assert_eq!(t.name().parse::<EnhancementTemplate>().unwrap(), t);
        }
        let err = "meaning".parse::<EnhancementTemplate>().unwrap_err();
        for name in ["exact", "what_is", "describe", "meaning_of"] {
            assert!(err.contains(name));
        }
    }

    #[test]
    fn appends_knowledge() {
        let (gw, _) = gateway_with("What is andromeda tree?", "A small evergreen shrub.");
        let out = enhance_phrase(
            &instance("andromeda tree"),
            EnhancementTemplate::WhatIs,
            &gw,
            &GenerationParams::new("m"),
        )
        .unwrap();
        assert_eq!(out.enhanced, "andromeda tree A small evergreen shrub.");
        assert_eq!(out.knowledge, "A small evergreen shrub.");
        assert_eq!(out.model, "m");
    }

    #[test]
    fn empty_knowledge_keeps_original() {
        let (gw, _) = gateway_with("Describe andromeda tree.", "");
        let out = enhance_phrase(
            &instance("andromeda tree"),
            EnhancementTemplate::Describe,
            &gw,
            &GenerationParams::new("m"),
        )
        .unwrap();
        assert_eq!(out.enhanced, "andromeda tree");
    }

    #[test]
    fn knowledge_whitespace_is_normalized() {
        let (gw, _) = gateway_with("Describe andromeda tree.", "  lots\n of   space ");
        let out = enhance_phrase(
            &instance("andromeda tree"),
            EnhancementTemplate::Describe,
            &gw,
            &GenerationParams::new("m"),
        )
        .unwrap();
        assert_eq!(out.knowledge, "  lots\n of   space ");
        assert_eq!(out.enhanced, "andromeda tree lots of space");
    }

    #[test]
    fn repeated_enhancement_calls_once() {
        let (gw, stub) = gateway_with("What is andromeda tree?", "A shrub.");
        let params = GenerationParams::new("m");
        let inst = instance("andromeda tree");
        let a = enhance_phrase(&inst, EnhancementTemplate::WhatIs, &gw, &params).unwrap();
        let b = enhance_phrase(&inst, EnhancementTemplate::WhatIs, &gw, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(stub.call_count(), 1);
    }

    #[test]
    fn gateway_failure_propagates() {
        let gw = LlmGateway::offline(ResponseCache::in_memory());
        let err = enhance_phrase(
            &instance("andromeda tree"),
            EnhancementTemplate::WhatIs,
            &gw,
            &GenerationParams::new("m"),
        )
        .unwrap_err();
        assert!(matches!(err, GatewayError::ReplayGap { .. }));
    }
}
