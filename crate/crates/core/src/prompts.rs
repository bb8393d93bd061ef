//! Prompt templates and conversation builders.
//!
//! Templates are plain-text files with `{name}` placeholders. Rendering is a
//! single left-to-right pass: substituted content is inserted verbatim and
//! never rescanned, so problem statements containing braces (LaTeX, code)
//! pass through untouched and cannot collide with placeholder syntax.

use std::path::Path;

use crate::backend::ChatMessage;
use crate::error::{Error, Result};
use crate::model::{Problem, TaskKind};

/// A named plain-text template.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        PromptTemplate {
            name: name.into(),
            text: text.into(),
        }
    }

    /// Substitutes `{key}` occurrences with bound values in one pass.
    /// Unknown placeholders and unbalanced braces are emitted literally.
    pub fn render(&self, bindings: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after_open = &rest[open + 1..];
            match after_open.find('}') {
                Some(close) => {
                    let name = &after_open[..close];
                    match bindings.iter().find(|(k, _)| *k == name) {
                        Some((_, value)) => {
                            out.push_str(value);
                            rest = &after_open[close + 1..];
                        }
                        None => {
                            // Not a placeholder we know: keep the brace and
                            // continue scanning right after it, so nested or
                            // literal braces survive.
                            out.push('{');
                            rest = after_open;
                        }
                    }
                }
                None => {
                    out.push('{');
                    rest = after_open;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

macro_rules! template_set {
    ($(($field:ident, $file:literal)),+ $(,)?) => {
        /// The full set of templates the strategies draw from.
        #[derive(Debug, Clone, PartialEq)]
        pub struct TemplateSet {
            $(pub $field: PromptTemplate,)+
        }

        /// File names looked up inside a template directory.
        pub const TEMPLATE_FILES: &[&str] = &[$($file,)+];

        impl TemplateSet {
            /// The templates compiled into the binary; used when no template
            /// directory is configured.
            pub fn builtin() -> Self {
                TemplateSet {
                    $($field: PromptTemplate::new(
                        $file,
                        include_str!(concat!("../templates/", $file)),
                    ),)+
                }
            }

            /// Loads every template from `dir`. Each file must exist; a
            /// missing file is an error rather than a silent fallback, so a
            /// half-copied template directory cannot mix conventions.
            pub fn load_dir(dir: &Path) -> Result<Self> {
                Ok(TemplateSet {
                    $($field: load_template(dir, $file)?,)+
                })
            }
        }
    };
}

template_set![
    (plan, "plan.txt"),
    (solution, "solution.txt"),
    (reflection_with_answer, "reflection_with_answer.txt"),
    (reflection_without_answer, "reflection_without_answer.txt"),
    (direct, "direct.txt"),
    (star_modify, "star_modify.txt"),
    (long_solution, "long_solution.txt"),
    (no_plan_reflection_with_answer, "no_plan_reflection_with_answer.txt"),
    (no_plan_reflection_without_answer, "no_plan_reflection_without_answer.txt"),
];

fn load_template(dir: &Path, file: &str) -> Result<PromptTemplate> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(Error::TemplateMissing { name: file.into() });
    }
    Ok(PromptTemplate::new(file, std::fs::read_to_string(path)?))
}

/// The statement as shown to the model: multiple-choice problems get their
/// lettered options appended, boolean problems a yes/no instruction.
pub fn format_statement(problem: &Problem) -> String {
    match problem.task_kind {
        TaskKind::FreeFormMath => problem.statement.clone(),
        TaskKind::MultipleChoice => {
            let mut s = problem.statement.clone();
            s.push_str("\n\nChoices:");
            for (i, choice) in problem.choices.iter().enumerate() {
                let letter = (b'A' + (i as u8 % 26)) as char;
                s.push_str(&format!("\n({letter}) {choice}"));
            }
            s
        }
        TaskKind::Boolean => format!("{}\n\nAnswer \"yes\" or \"no\".", problem.statement),
    }
}

/// Round-one user message asking for an anticipatory plan.
pub fn build_plan_prompt(templates: &TemplateSet, problem: &Problem) -> Vec<ChatMessage> {
    let statement = format_statement(problem);
    vec![ChatMessage::user(
        templates.plan.render(&[("statement", &statement)]),
    )]
}

/// The two-round conversation that asks for a solution guided by a plan:
/// round 1 is the plan request and the plan as the assistant turn, round 2
/// instructs the model to solve using that plan.
pub fn build_solution_prompt(
    templates: &TemplateSet,
    problem: &Problem,
    plan_text: &str,
) -> Vec<ChatMessage> {
    let statement = format_statement(problem);
    let mut messages = build_plan_prompt(templates, problem);
    messages.push(ChatMessage::assistant(plan_text));
    messages.push(ChatMessage::user(
        templates.solution.render(&[("statement", &statement)]),
    ));
    messages
}

/// Single user message asking the model to reflect on a failed plan and
/// produce a new one. The gold answer section is present only when a gold
/// answer is supplied.
pub fn build_reflection_prompt(
    templates: &TemplateSet,
    problem: &Problem,
    plan_text: &str,
    prior_solution: &str,
    gold_answer: Option<&str>,
) -> Vec<ChatMessage> {
    let statement = format_statement(problem);
    let text = match gold_answer {
        Some(gold) => templates.reflection_with_answer.render(&[
            ("statement", statement.as_str()),
            ("plan", plan_text),
            ("prior_solution", prior_solution),
            ("gold_answer", gold),
        ]),
        None => templates.reflection_without_answer.render(&[
            ("statement", statement.as_str()),
            ("plan", plan_text),
            ("prior_solution", prior_solution),
        ]),
    };
    vec![ChatMessage::user(text)]
}

/// Single user message asking for a plain step-by-step solution.
pub fn build_direct_prompt(templates: &TemplateSet, problem: &Problem) -> Vec<ChatMessage> {
    let statement = format_statement(problem);
    vec![ChatMessage::user(
        templates.direct.render(&[("statement", &statement)]),
    )]
}

/// Single user message asking for a deliberately long solution.
pub fn build_long_solution_prompt(templates: &TemplateSet, problem: &Problem) -> Vec<ChatMessage> {
    let statement = format_statement(problem);
    vec![ChatMessage::user(
        templates.long_solution.render(&[("statement", &statement)]),
    )]
}

/// Single user message asking for a gold-guided corrected solution.
pub fn build_star_modify_prompt(
    templates: &TemplateSet,
    problem: &Problem,
    prior_solution: &str,
    gold_answer: &str,
) -> Vec<ChatMessage> {
    let statement = format_statement(problem);
    vec![ChatMessage::user(templates.star_modify.render(&[
        ("statement", statement.as_str()),
        ("prior_solution", prior_solution),
        ("gold_answer", gold_answer),
    ]))]
}

/// Single user message asking the model to rewrite a failed solution
/// directly (the plan-free reflection ablation).
pub fn build_no_plan_reflection_prompt(
    templates: &TemplateSet,
    problem: &Problem,
    prior_solution: &str,
    gold_answer: Option<&str>,
) -> Vec<ChatMessage> {
    let statement = format_statement(problem);
    let text = match gold_answer {
        Some(gold) => templates.no_plan_reflection_with_answer.render(&[
            ("statement", statement.as_str()),
            ("prior_solution", prior_solution),
            ("gold_answer", gold),
        ]),
        None => templates.no_plan_reflection_without_answer.render(&[
            ("statement", statement.as_str()),
            ("prior_solution", prior_solution),
        ]),
    };
    vec![ChatMessage::user(text)]
}
