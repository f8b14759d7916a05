use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parser::{parse_answer, AnswerOutcome, MatchedBy, ParsedAnswer};
use super::selection::{select_in_context, InContextConfig};
use super::templates::{
    render_cot_prompt, render_few_shot_prompt, render_qa_prompt, FewShotExample, QaPrompt,
};
use super::{OptionLetter, QaError, QaTemplate, TemplateFamily};
use crate::captions::{CaptionStore, CaptionStrategy};
use crate::dataset::{Dataset, VwsdInstance};
use crate::gateway::{GatewayError, GenerationParams, LlmGateway};
use crate::vector_store::EmbeddingStore;

/// Single call: prompt in, parsed answer out.
pub fn run_zero_shot(
    prompt: &QaPrompt,
    gateway: &LlmGateway,
    params: &GenerationParams,
) -> Result<ParsedAnswer, GatewayError> {
    let response = gateway.complete(&params.request(prompt.rendered.clone()))?;
    Ok(parse_answer(&response.text, &prompt.option_texts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CotOutput {
    pub rationale: String,
    pub cot_prompt: String,
    pub answer: ParsedAnswer,
}

#[derive(Debug)]
pub struct CotFailure {
    /// Set when the first (reasoning) call succeeded.
    pub rationale: Option<String>,
    pub cot_prompt: Option<String>,
    pub error: GatewayError,
}

/// Two sequential calls: the think prompt yields a rationale, then the answer prompt
/// built from it yields the final text, which is parsed.
pub fn run_cot(
    think: &QaPrompt,
    gateway: &LlmGateway,
    params: &GenerationParams,
) -> Result<CotOutput, CotFailure> {
    let first = gateway
        .complete(&params.request(think.rendered.clone()))
        .map_err(|error| CotFailure {
            rationale: None,
            cot_prompt: None,
            error,
        })?;
    let rationale = first.text;
    let cot_prompt = render_cot_prompt(&think.rendered, &rationale);
    match gateway.complete(&params.request(cot_prompt.clone())) {
        Ok(second) => Ok(CotOutput {
            answer: parse_answer(&second.text, &think.option_texts),
            rationale,
            cot_prompt,
        }),
        Err(error) => Err(CotFailure {
            rationale: Some(rationale),
            cot_prompt: Some(cot_prompt),
            error,
        }),
    }
}

/// One line of the QA transcript export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaTranscript {
    pub instance_id: String,
    pub template: QaTemplate,
    pub captioner: String,
    /// Prompts in the order they were sent.
    pub prompts: Vec<String>,
    pub raw_responses: Vec<String>,
    /// `None` when the instance failed.
    pub outcome: Option<AnswerOutcome>,
    pub matched_by: Option<MatchedBy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    pub gold_letter: OptionLetter,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shots: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QaTranscript {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn parsed(&self) -> Option<ParsedAnswer> {
        Some(ParsedAnswer {
            raw: self.raw_responses.last()?.clone(),
            outcome: self.outcome?,
            matched_by: self.matched_by?,
        })
    }
}

/// Everything a QA run needs, shared across worker threads.
pub struct QaRunner<'a> {
    pub dataset: &'a Dataset,
    pub captions: &'a CaptionStore,
    /// Phrase embeddings for similarity-based example selection.
    pub phrase_embeddings: Option<&'a EmbeddingStore>,
    pub gateway: &'a LlmGateway,
    pub params: GenerationParams,
    pub template: QaTemplate,
    pub captioner: String,
    /// Caption strategy used when `template` is `cot`.
    pub strategy: CaptionStrategy,
    pub in_context: Option<InContextConfig>,
}

impl QaRunner<'_> {
    /// Runs every instance on the current rayon pool; transcripts keep dataset order.
    pub fn run_all(&self) -> Result<Vec<QaTranscript>, QaError> {
        self.validate()?;
        self.dataset
            .instances
            .par_iter()
            .map(|inst| self.run(inst))
            .collect()
    }

    fn validate(&self) -> Result<(), QaError> {
        if let Some(ic) = &self.in_context {
            if ic.k > 0 {
                match self.template.family() {
                    TemplateFamily::NoCot | TemplateFamily::ChooseNoCot => {}
                    _ => {
                        return Err(QaError::InvalidTemplate(
                            self.template,
                            "few-shot prompting uses no_cot or choose_no_cot templates",
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs one instance. Rendering and selection problems are errors; gateway
    /// failures are recorded in the transcript so the run can continue.
    pub fn run(&self, instance: &VwsdInstance) -> Result<QaTranscript, QaError> {
        let gold_letter = OptionLetter::from_index(instance.gold_position()).expect("ten candidates");
        let mut t = QaTranscript {
            instance_id: instance.instance_id.clone(),
            template: self.template,
            captioner: self.captioner.clone(),
            prompts: Vec::new(),
            raw_responses: Vec::new(),
            outcome: None,
            matched_by: None,
            rationale: None,
            gold_letter,
            shots: Vec::new(),
            error: None,
        };
        match self.template.family() {
            TemplateFamily::Think | TemplateFamily::Cot => {
                let think_template = match self.template.strategy() {
                    Some(s) => QaTemplate::think_for(s),
                    None => QaTemplate::think_for(self.strategy),
                };
                let think = render_qa_prompt(instance, self.captions, think_template, &self.captioner)?;
                t.prompts.push(think.rendered.clone());
                match run_cot(&think, self.gateway, &self.params) {
                    Ok(out) => {
                        t.prompts.push(out.cot_prompt);
                        t.raw_responses.push(out.rationale.clone());
                        t.raw_responses.push(out.answer.raw);
                        t.rationale = Some(out.rationale);
                        t.outcome = Some(out.answer.outcome);
                        t.matched_by = Some(out.answer.matched_by);
                    }
                    Err(fail) => {
                        t.prompts.extend(fail.cot_prompt);
                        if let Some(r) = &fail.rationale {
                            t.raw_responses.push(r.clone());
                        }
                        t.rationale = fail.rationale;
                        t.error = Some(fail.error.to_string());
                    }
                }
            }
            TemplateFamily::NoCot | TemplateFamily::ChooseNoCot | TemplateFamily::ChooseCot => {
                let query = render_qa_prompt(instance, self.captions, self.template, &self.captioner)?;
                let shots = self.shots_for(instance)?;
                t.shots = shots.iter().map(|s| s.instance_id.clone()).collect();
                let prompt = render_few_shot_prompt(&shots, &query);
                t.prompts.push(prompt.clone());
                match self.gateway.complete(&self.params.request(prompt)) {
                    Ok(resp) => {
                        let parsed = parse_answer(&resp.text, &query.option_texts);
                        if self.template.family() == TemplateFamily::ChooseCot {
                            t.rationale = Some(resp.text.clone());
                        }
                        t.raw_responses.push(resp.text);
                        t.outcome = Some(parsed.outcome);
                        t.matched_by = Some(parsed.matched_by);
                    }
                    Err(e) => t.error = Some(e.to_string()),
                }
            }
        }
        Ok(t)
    }

    fn shots_for(&self, instance: &VwsdInstance) -> Result<Vec<FewShotExample>, QaError> {
        let Some(config) = self.in_context.as_ref().filter(|c| c.k > 0) else {
            return Ok(Vec::new());
        };
        let empty = EmbeddingStore::new();
        let store = self.phrase_embeddings.unwrap_or(&empty);
        select_in_context(instance, self.dataset, store, config)?
            .into_iter()
            .map(|(shot, _)| {
                let prompt = render_qa_prompt(shot, self.captions, self.template, &self.captioner)?;
                Ok(FewShotExample::from_prompt(&prompt, &shot.gold_id).expect("gold among candidates"))
            })
            .collect()
    }
}
