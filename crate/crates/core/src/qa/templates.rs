use serde::{Deserialize, Serialize};

use super::{OptionLetter, QaError, QaTemplate, TemplateFamily, NUM_OPTIONS};
use crate::captions::{caption_text, CaptionStore};
use crate::dataset::VwsdInstance;
use crate::text::truncate_chars;

pub const THINK_TRIGGER: &str = "A: Let\u{2019}s think step by step. ";
pub const ANSWER_TRIGGER: &str = "Therefore, among A through J, the answer is";
/// Longest rationale (in chars) embedded into the second CoT prompt.
pub const MAX_RATIONALE_CHARS: usize = 2048;

const CHOOSE_FORMAT_BLOCK: &str = "Use the following format:\n\
Question: What image do you choose?\n\
Thought: you should always think about what you choose.\n\
Result: the result of your thought.\n";

/// A rendered multiple-choice prompt for one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPrompt {
    pub instance_id: String,
    pub template: QaTemplate,
    /// The question part, reused verbatim when the instance serves as an in-context example.
    pub question: String,
    pub rendered: String,
    /// Image id behind each letter, `A` first.
    pub option_order: Vec<String>,
    /// Caption text behind each letter.
    pub option_texts: Vec<String>,
}

impl QaPrompt {
    pub fn letter_of(&self, image_id: &str) -> Option<OptionLetter> {
        self.option_order
            .iter()
            .position(|id| id == image_id)
            .and_then(OptionLetter::from_index)
    }
}

fn inline_options(options: &[String]) -> String {
    options
        .iter()
        .zip(OptionLetter::all())
        .map(|(text, l)| format!("({l}) {text}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn listed_options(options: &[String]) -> String {
    options
        .iter()
        .zip(OptionLetter::all())
        .map(|(text, l)| format!("({l}) {text}\n"))
        .collect()
}

/// Renders `template` for a phrase and ten option texts, returning `(question, rendered)`.
pub fn render_template(
    template: QaTemplate,
    phrase: &str,
    options: &[String],
) -> Result<(String, String), QaError> {
    debug_assert_eq!(options.len(), NUM_OPTIONS);
    let rendered_q = |subject: &str| {
        format!(
            "What is the most appropriate {subject} for the {phrase}?\nAnswer Choices: {}",
            inline_options(options)
        )
    };
    let out = match template {
        QaTemplate::ThinkGreedy | QaTemplate::ThinkBeam | QaTemplate::NoCotGreedy | QaTemplate::NoCotBeam => {
            let subject = if template.strategy() == Some(crate::captions::CaptionStrategy::Beam) {
                "group of captions"
            } else {
                "caption"
            };
            let question = rendered_q(subject);
            let trigger = if template.family() == TemplateFamily::Think {
                THINK_TRIGGER
            } else {
                "A: "
            };
            let rendered = format!("Q: {question}\n{trigger}");
            (question, rendered)
        }
        QaTemplate::ChooseNoCotGreedy => {
            let text = format!(
                "You have ten images, (A) to (J), which are given to you in the form of captions.\n{}\
                 You should choose the image, and therefore the caption that could better represent the {phrase}.\n\
                 What image do you choose?",
                listed_options(options)
            );
            (text.clone(), text)
        }
        QaTemplate::ChooseNoCotBeam => {
            let text = format!(
                "You have ten images, (A) to (J), which are given to you in the form of captions.\n{}\
                 You should choose the image, and therefore the set of captions that could better represent the {phrase}.\n\
                 What image do you choose?",
                listed_options(options)
            );
            (text.clone(), text)
        }
        QaTemplate::ChooseCotGreedy => {
            let text = format!(
                "You have ten images, (A) to (J), which are given to you in the form of captions.\n{}\
                 You should choose the image, and therefore the caption that could better represent the {phrase}.\n\n\
                 {CHOOSE_FORMAT_BLOCK}Final Answer: the image that you choose.\n\n\
                 Begin!\nQuestion: What image do you choose?",
                listed_options(options)
            );
            (text.clone(), text)
        }
        QaTemplate::ChooseCotBeam => {
            let text = format!(
                "You have ten images, (A) to (J), which are given to you in the form of a set of captions.\n{}\
                 You should choose the image, and therefore the set of captions that could better represent the {phrase}.\n\n\
                 {CHOOSE_FORMAT_BLOCK}Final Answer: the image that you choose\n\n\
                 Begin!\nQuestion: What image do you choose?",
                listed_options(options)
            );
            (text.clone(), text)
        }
        QaTemplate::Cot => {
            return Err(QaError::InvalidTemplate(
                template,
                "the cot prompt wraps a think prompt and its response",
            ))
        }
    };
    Ok(out)
}

/// Renders the QA prompt of `instance`, lettering candidates A..J in dataset order.
///
/// `<context>` and `<phrase>` slots are both filled with the full phrase.
pub fn render_qa_prompt(
    instance: &VwsdInstance,
    captions: &CaptionStore,
    template: QaTemplate,
    captioner: &str,
) -> Result<QaPrompt, QaError> {
    let strategy = template.strategy().ok_or(QaError::InvalidTemplate(
        template,
        "render the think prompt and wrap it with render_cot_prompt",
    ))?;
    let mut option_texts = Vec::with_capacity(NUM_OPTIONS);
    for id in &instance.candidate_ids {
        let set = captions
            .get(id, captioner, strategy)
            .ok_or_else(|| QaError::MissingCaption {
                image_id: id.clone(),
                captioner: captioner.to_string(),
                strategy,
            })?;
        option_texts.push(caption_text(set));
    }
    let (question, rendered) = render_template(template, &instance.full_phrase, &option_texts)?;
    Ok(QaPrompt {
        instance_id: instance.instance_id.clone(),
        template,
        question,
        rendered,
        option_order: instance.candidate_ids.clone(),
        option_texts,
    })
}

/// Second CoT stage: `<think prompt> <rationale>\nTherefore, among A through J, the answer is`.
pub fn render_cot_prompt(think_prompt: &str, rationale: &str) -> String {
    let rationale = truncate_chars(rationale, MAX_RATIONALE_CHARS);
    format!("{think_prompt} {rationale}\n{ANSWER_TRIGGER}")
}

/// A solved example placed before the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub instance_id: String,
    pub question: String,
    pub gold_letter: OptionLetter,
    pub gold_caption: String,
}

impl FewShotExample {
    /// Uses a rendered prompt of the example instance and its gold image.
    pub fn from_prompt(prompt: &QaPrompt, gold_id: &str) -> Option<Self> {
        let gold_letter = prompt.letter_of(gold_id)?;
        Some(Self {
            instance_id: prompt.instance_id.clone(),
            question: prompt.question.clone(),
            gold_letter,
            gold_caption: prompt.option_texts[gold_letter.index()].clone(),
        })
    }
}

/// Concatenates `Q: …\nA: (X) caption\n\n` blocks and the query block `Q: …\nA: `.
/// With no shots this is the zero-shot prompt unchanged.
pub fn render_few_shot_prompt(shots: &[FewShotExample], query: &QaPrompt) -> String {
    if shots.is_empty() {
        return query.rendered.clone();
    }
    let mut out = String::new();
    for shot in shots {
        out.push_str(&format!(
            "Q: {}\nA: ({}) {}\n\n",
            shot.question, shot.gold_letter, shot.gold_caption
        ));
    }
    out.push_str(&format!("Q: {}\nA: ", query.question));
    out
}
