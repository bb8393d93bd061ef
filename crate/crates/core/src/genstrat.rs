//! Generation strategies: the plan/solve/reflect chain, rejection sampling,
//! gold-guided modification, and the derived variants.
//!
//! Every strategy observes the same per-problem trial budget (five
//! solution-generation calls under the defaults): chain strategies spend one
//! initial attempt plus up to `max_reflections` retries and stop at the first
//! success; sampling strategies draw `samples_per_problem` independent
//! samples. Plan and reflection calls are companions to the budget, tracked
//! separately in [`CallCounts`] and auditable from the transcript.

use std::collections::HashSet;

use crate::backend::{
    derive_seed, route_key, ChatBackend, ChatMessage, ChatRequest, Completion, SamplingParams,
    Stage,
};
use crate::error::{Error, Result};
use crate::model::{
    AnticipatoryPlan, Attempt, GoldlessPolicy, LeakPolicy, Problem, ReflectionTrace, RunConfig,
    Solution, Strategy, TraceOutcome, TrainingTuple,
};
use crate::prompts::{
    build_direct_prompt, build_long_solution_prompt, build_no_plan_reflection_prompt,
    build_plan_prompt, build_reflection_prompt, build_solution_prompt, build_star_modify_prompt,
    TemplateSet,
};
use crate::scoring::{answer_leak_check, extract_final_answer, f_cor, score_solution_text};

/// Filler marker inserted between solution steps by the silence-tokens
/// variant: the token "..." repeated eight times.
pub const SILENCE_MARKER: &str = "........................";

/// Bridge sentence of the correction variant, byte-exact including the
/// trailing space; the correct solution is appended directly after it.
pub const CORRECTION_BRIDGE: &str = "Oops, I made a mistake. The correct solution is: ";

/// Backend calls made while processing one problem, by what each call
/// produced. `solution_calls` is the budgeted figure; plan and reflection
/// calls ride along with plan-first strategies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub plan_calls: u32,
    pub solution_calls: u32,
    pub reflection_calls: u32,
}

/// Everything one problem contributed to an iteration.
#[derive(Debug, Clone)]
pub struct ProblemOutcome {
    pub problem_id: String,
    pub tuples: Vec<TrainingTuple>,
    /// Attempt chain for chain strategies; `None` for sampling strategies.
    pub trace: Option<ReflectionTrace>,
    pub calls: CallCounts,
    /// Plans rejected by the answer-leak check under the reject policy.
    pub leak_rejections: u32,
    /// Attempts whose plan came out longer than its solution. Flagged only;
    /// such tuples are still kept.
    pub degenerate_plans: u32,
    /// True when the problem was skipped for lacking a gold answer.
    pub skipped: bool,
    /// True when at least one attempt or sample scored 1.
    pub solved: bool,
}

impl ProblemOutcome {
    fn skipped(problem_id: &str) -> Self {
        ProblemOutcome {
            problem_id: problem_id.to_string(),
            tuples: Vec::new(),
            trace: None,
            calls: CallCounts::default(),
            leak_rejections: 0,
            degenerate_plans: 0,
            skipped: true,
            solved: false,
        }
    }
}

/// A model response at evaluation time, with its token accounting.
#[derive(Debug, Clone)]
pub struct EvalResponse {
    pub solution: Solution,
    /// The plan produced by plan-first inference, when the strategy uses one.
    pub plan_text: Option<String>,
    /// Tokens across every completion that formed the response.
    pub response_tokens: u32,
    /// True when any token figure fell back to whitespace counting.
    pub tokens_estimated: bool,
}

/// Runs one strategy against problems, one at a time. Holds everything a
/// per-problem run needs so worker threads can share it immutably.
pub struct Generator<'a> {
    backend: &'a dyn ChatBackend,
    templates: &'a TemplateSet,
    config: &'a RunConfig,
    iteration: u32,
    temperature: f64,
}

impl<'a> Generator<'a> {
    /// Generator for data generation (uses `gen_temperature`).
    pub fn new(
        backend: &'a dyn ChatBackend,
        templates: &'a TemplateSet,
        config: &'a RunConfig,
        iteration: u32,
    ) -> Self {
        Generator {
            backend,
            templates,
            config,
            iteration,
            temperature: config.gen_temperature,
        }
    }

    /// Generator for evaluation (uses `eval_temperature`).
    pub fn evaluator(
        backend: &'a dyn ChatBackend,
        templates: &'a TemplateSet,
        config: &'a RunConfig,
        iteration: u32,
    ) -> Self {
        Generator {
            backend,
            templates,
            config,
            iteration,
            temperature: config.eval_temperature,
        }
    }

    /// Runs the configured strategy on one problem. Problems without gold
    /// answers are skipped or rejected according to the goldless policy:
    /// every strategy needs the gold answer at least for scoring.
    pub fn run_problem(&self, problem: &Problem) -> Result<ProblemOutcome> {
        if problem.gold_answer.is_none() {
            return match self.config.goldless {
                GoldlessPolicy::Skip => {
                    log::info!("skipping problem '{}': no gold answer", problem.id);
                    Ok(ProblemOutcome::skipped(&problem.id))
                }
                GoldlessPolicy::Error => Err(Error::MissingGoldAnswer {
                    problem_id: problem.id.clone(),
                }),
            };
        }
        match self.config.strategy {
            Strategy::Lepa | Strategy::LepaReinforce => self.run_lepa(problem),
            Strategy::Rest | Strategy::RestEm | Strategy::NoSelfReflection => {
                self.run_rejection(problem)
            }
            Strategy::Star => self.run_star(problem),
            Strategy::NoPlan
            | Strategy::SilenceTokens
            | Strategy::Correction
            | Strategy::LongSolution => self.run_variant(problem),
        }
    }

    /// The plan/solve/reflect chain: plan, solve, score; on failure reflect
    /// on the failed plan and its solution (with the gold answer when
    /// available) to produce a new plan, up to `max_reflections` times,
    /// stopping at the first success.
    ///
    /// Plans that fail the answer-leak check are treated as failed attempts
    /// under the reject policy: their solution still runs (the reflection
    /// prompt needs it) but cannot score 1, and the retry consumes budget.
    pub fn run_lepa(&self, problem: &Problem) -> Result<ProblemOutcome> {
        let gold = problem.gold_answer.as_deref();
        let budget = 1 + self.config.max_reflections;
        let mut attempts: Vec<Attempt> = Vec::new();
        let mut calls = CallCounts::default();
        let mut leak_rejections = 0;
        let mut degenerate_plans = 0;
        let mut stored: Option<(AnticipatoryPlan, Solution, u32)> = None;
        let mut prior: Option<(String, String)> = None;

        for trial in 0..budget {
            let (stage, messages) = match &prior {
                None => (Stage::Plan, build_plan_prompt(self.templates, problem)),
                Some((plan, solution)) => (
                    Stage::Reflection,
                    build_reflection_prompt(self.templates, problem, plan, solution, gold),
                ),
            };
            let plan_completion = self.call(problem, stage, trial, &messages)?;
            match stage {
                Stage::Plan => calls.plan_calls += 1,
                _ => calls.reflection_calls += 1,
            }
            let plan = AnticipatoryPlan {
                text: plan_completion.text,
            };
            let leaked = answer_leak_check(&plan, problem);

            let solution_messages = build_solution_prompt(self.templates, problem, &plan.text);
            let solution_completion =
                self.call(problem, Stage::Solution, trial, &solution_messages)?;
            calls.solution_calls += 1;
            let solution = self.make_solution(problem, &solution_completion);
            if plan.text.len() > solution.text.len() {
                degenerate_plans += 1;
            }

            let mut score = f_cor(problem, &solution)?.score;
            if leaked {
                match self.config.leak_policy {
                    LeakPolicy::Reject => {
                        leak_rejections += 1;
                        score = 0;
                    }
                    LeakPolicy::Warn => {
                        log::warn!("plan for '{}' leaks the gold answer (warn policy)", problem.id);
                    }
                }
            }

            attempts.push(Attempt {
                plan: Some(plan.clone()),
                solution: solution.clone(),
                score,
                plan_leaked: leaked,
            });
            if score == 1 {
                stored = Some((plan, solution, trial));
                break;
            }
            prior = Some((plan.text, solution.text));
        }

        let solved = stored.is_some();
        let tag = self.config.strategy.as_str().to_string();
        let tuples = if self.config.strategy.rewarded() {
            attempts
                .iter()
                .enumerate()
                .map(|(i, attempt)| TrainingTuple {
                    problem_id: problem.id.clone(),
                    plan_text: attempt.plan.as_ref().map(|p| p.text.clone()),
                    solution_text: attempt.solution.text.clone(),
                    reward: Some(if attempt.score == 1 { 1 } else { -1 }),
                    strategy_tag: tag.clone(),
                    trial_index: i as u32,
                })
                .collect()
        } else {
            stored
                .map(|(plan, solution, trial)| TrainingTuple {
                    problem_id: problem.id.clone(),
                    plan_text: Some(plan.text),
                    solution_text: solution.text,
                    reward: None,
                    strategy_tag: tag.clone(),
                    trial_index: trial,
                })
                .into_iter()
                .collect()
        };

        let trace = ReflectionTrace {
            problem_id: problem.id.clone(),
            attempts,
            outcome: if solved {
                TraceOutcome::Solved
            } else {
                TraceOutcome::Exhausted
            },
        };
        debug_assert!(trace.check_invariants(self.config.max_reflections).is_ok());

        Ok(ProblemOutcome {
            problem_id: problem.id.clone(),
            tuples,
            trace: Some(trace),
            calls,
            leak_rejections,
            degenerate_plans,
            skipped: false,
            solved,
        })
    }

    /// Rejection sampling: draw `samples_per_problem` independent samples,
    /// keep the ones that score 1, and deduplicate byte-identical stored
    /// texts. `rest` and `rest_em` differ only in checkpoint lineage, which
    /// the trainer manifest handles; the generation is identical. The
    /// no-self-reflection ablation samples (plan, solution) pairs instead of
    /// bare solutions. The silence-tokens, correction, and long-solution
    /// variants post-process the kept samples (see [`run_variant`]).
    pub fn run_rejection(&self, problem: &Problem) -> Result<ProblemOutcome> {
        let strategy = self.config.strategy;
        let with_plan = strategy == Strategy::NoSelfReflection;
        let mut calls = CallCounts::default();
        let mut leak_rejections = 0;
        let mut degenerate_plans = 0;
        let mut samples: Vec<(Option<AnticipatoryPlan>, Solution, u8)> = Vec::new();

        for sample in 0..self.config.samples_per_problem {
            let (plan, leaked) = if with_plan {
                let messages = build_plan_prompt(self.templates, problem);
                let completion = self.call(problem, Stage::Plan, sample, &messages)?;
                calls.plan_calls += 1;
                let plan = AnticipatoryPlan {
                    text: completion.text,
                };
                let leaked = answer_leak_check(&plan, problem);
                (Some(plan), leaked)
            } else {
                (None, false)
            };

            let messages = match (&plan, strategy) {
                (Some(plan), _) => build_solution_prompt(self.templates, problem, &plan.text),
                (None, Strategy::LongSolution) => {
                    build_long_solution_prompt(self.templates, problem)
                }
                (None, _) => build_direct_prompt(self.templates, problem),
            };
            let completion = self.call(problem, Stage::Solution, sample, &messages)?;
            calls.solution_calls += 1;
            let solution = self.make_solution(problem, &completion);
            if let Some(plan) = &plan {
                if plan.text.len() > solution.text.len() {
                    degenerate_plans += 1;
                }
            }

            let mut score = f_cor(problem, &solution)?.score;
            if leaked {
                match self.config.leak_policy {
                    LeakPolicy::Reject => {
                        leak_rejections += 1;
                        score = 0;
                    }
                    LeakPolicy::Warn => {
                        log::warn!("plan for '{}' leaks the gold answer (warn policy)", problem.id);
                    }
                }
            }
            samples.push((plan, solution, score));
        }

        let solved = samples.iter().any(|(_, _, score)| *score == 1);
        let tuples = self.assemble_sampling_tuples(problem, &samples)?;

        Ok(ProblemOutcome {
            problem_id: problem.id.clone(),
            tuples,
            trace: None,
            calls,
            leak_rejections,
            degenerate_plans,
            skipped: false,
            solved,
        })
    }

    /// Turns scored samples into tuples according to the sampling strategy's
    /// keep rule. Every stored text is re-scored at emission time, so
    /// post-processing can never smuggle a non-verifying solution into the
    /// dataset.
    fn assemble_sampling_tuples(
        &self,
        problem: &Problem,
        samples: &[(Option<AnticipatoryPlan>, Solution, u8)],
    ) -> Result<Vec<TrainingTuple>> {
        let strategy = self.config.strategy;
        let tag = strategy.as_str().to_string();
        let mut tuples = Vec::new();

        if strategy == Strategy::Correction {
            let wrong = samples.iter().find(|(_, _, score)| *score == 0);
            let right = samples
                .iter()
                .enumerate()
                .find(|(_, (_, _, score))| *score == 1);
            if let (Some((_, wrong_solution, _)), Some((right_idx, (_, right_solution, _)))) =
                (wrong, right)
            {
                let text = format!(
                    "{}{}{}",
                    wrong_solution.text, CORRECTION_BRIDGE, right_solution.text
                );
                if score_solution_text(problem, &text, self.config.extraction)?.score == 1 {
                    tuples.push(TrainingTuple {
                        problem_id: problem.id.clone(),
                        plan_text: None,
                        solution_text: text,
                        reward: None,
                        strategy_tag: tag,
                        trial_index: right_idx as u32,
                    });
                } else {
                    log::warn!(
                        "correction concatenation for '{}' no longer scores 1; dropped",
                        problem.id
                    );
                }
            }
            return Ok(tuples);
        }

        let mut seen: HashSet<String> = HashSet::new();
        for (index, (plan, solution, score)) in samples.iter().enumerate() {
            if *score != 1 {
                continue;
            }
            let text = if strategy == Strategy::SilenceTokens {
                insert_silence_markers(&solution.text)
            } else {
                solution.text.clone()
            };
            if !seen.insert(text.clone()) {
                continue;
            }
            if score_solution_text(problem, &text, self.config.extraction)?.score != 1 {
                log::warn!(
                    "stored solution for '{}' sample {index} no longer scores 1; dropped",
                    problem.id
                );
                continue;
            }
            tuples.push(TrainingTuple {
                problem_id: problem.id.clone(),
                plan_text: plan.as_ref().map(|p| p.text.clone()),
                solution_text: text,
                reward: None,
                strategy_tag: tag.clone(),
                trial_index: index as u32,
            });
        }
        Ok(tuples)
    }

    /// Direct solution first, then up to `max_reflections` gold-guided
    /// modification rounds, stopping at the first success. Requires a gold
    /// answer: the modification prompt shows it.
    pub fn run_star(&self, problem: &Problem) -> Result<ProblemOutcome> {
        let gold = problem
            .gold_answer
            .as_deref()
            .ok_or_else(|| Error::MissingGoldAnswer {
                problem_id: problem.id.clone(),
            })?;
        let budget = 1 + self.config.max_reflections;
        let mut attempts: Vec<Attempt> = Vec::new();
        let mut calls = CallCounts::default();
        let mut stored: Option<(Solution, u32)> = None;
        let mut prior_solution: Option<String> = None;

        for trial in 0..budget {
            let messages = match &prior_solution {
                None => build_direct_prompt(self.templates, problem),
                Some(prior) => build_star_modify_prompt(self.templates, problem, prior, gold),
            };
            let completion = self.call(problem, Stage::Solution, trial, &messages)?;
            calls.solution_calls += 1;
            let solution = self.make_solution(problem, &completion);
            let score = f_cor(problem, &solution)?.score;
            attempts.push(Attempt {
                plan: None,
                solution: solution.clone(),
                score,
                plan_leaked: false,
            });
            if score == 1 {
                stored = Some((solution, trial));
                break;
            }
            prior_solution = Some(solution.text);
        }

        let solved = stored.is_some();
        let tuples = stored
            .map(|(solution, trial)| TrainingTuple {
                problem_id: problem.id.clone(),
                plan_text: None,
                solution_text: solution.text,
                reward: None,
                strategy_tag: self.config.strategy.as_str().to_string(),
                trial_index: trial,
            })
            .into_iter()
            .collect();
        let trace = ReflectionTrace {
            problem_id: problem.id.clone(),
            attempts,
            outcome: if solved {
                TraceOutcome::Solved
            } else {
                TraceOutcome::Exhausted
            },
        };
        debug_assert!(trace.check_invariants(self.config.max_reflections).is_ok());

        Ok(ProblemOutcome {
            problem_id: problem.id.clone(),
            tuples,
            trace: Some(trace),
            calls,
            leak_rejections: 0,
            degenerate_plans: 0,
            skipped: false,
            solved,
        })
    }

    /// Dispatch for the derived variants: the plan-free reflection chain, and
    /// the three sampling-based post-processing variants.
    pub fn run_variant(&self, problem: &Problem) -> Result<ProblemOutcome> {
        match self.config.strategy {
            Strategy::NoPlan => self.run_no_plan(problem),
            Strategy::SilenceTokens | Strategy::Correction | Strategy::LongSolution => {
                self.run_rejection(problem)
            }
            other => Err(Error::Config(format!(
                "run_variant called with non-variant strategy '{other}'"
            ))),
        }
    }

    /// The reflection chain applied to bare solutions: no plans anywhere.
    /// Retry calls route as reflections but count toward the solution budget,
    /// since each one produces the attempt's candidate solution.
    fn run_no_plan(&self, problem: &Problem) -> Result<ProblemOutcome> {
        let gold = problem.gold_answer.as_deref();
        let budget = 1 + self.config.max_reflections;
        let mut attempts: Vec<Attempt> = Vec::new();
        let mut calls = CallCounts::default();
        let mut stored: Option<(Solution, u32)> = None;
        let mut prior_solution: Option<String> = None;

        for trial in 0..budget {
            let (stage, messages) = match &prior_solution {
                None => (Stage::Solution, build_direct_prompt(self.templates, problem)),
                Some(prior) => (
                    Stage::Reflection,
                    build_no_plan_reflection_prompt(self.templates, problem, prior, gold),
                ),
            };
            let completion = self.call(problem, stage, trial, &messages)?;
            calls.solution_calls += 1;
            let solution = self.make_solution(problem, &completion);
            let score = f_cor(problem, &solution)?.score;
            attempts.push(Attempt {
                plan: None,
                solution: solution.clone(),
                score,
                plan_leaked: false,
            });
            if score == 1 {
                stored = Some((solution, trial));
                break;
            }
            prior_solution = Some(solution.text);
        }

        let solved = stored.is_some();
        let tuples = stored
            .map(|(solution, trial)| TrainingTuple {
                problem_id: problem.id.clone(),
                plan_text: None,
                solution_text: solution.text,
                reward: None,
                strategy_tag: self.config.strategy.as_str().to_string(),
                trial_index: trial,
            })
            .into_iter()
            .collect();
        let trace = ReflectionTrace {
            problem_id: problem.id.clone(),
            attempts,
            outcome: if solved {
                TraceOutcome::Solved
            } else {
                TraceOutcome::Exhausted
            },
        };

        Ok(ProblemOutcome {
            problem_id: problem.id.clone(),
            tuples,
            trace: Some(trace),
            calls,
            leak_rejections: 0,
            degenerate_plans: 0,
            skipped: false,
            solved,
        })
    }

    /// One test-time response: plan-first strategies infer in two rounds
    /// (plan, then solve with it); everything else answers the direct prompt.
    pub fn generate_eval_response(&self, problem: &Problem) -> Result<EvalResponse> {
        if self.config.strategy.uses_plans() {
            let plan_messages = build_plan_prompt(self.templates, problem);
            let plan_completion = self.call(problem, Stage::Plan, 0, &plan_messages)?;
            let (plan_tokens, plan_estimated) = plan_completion.token_count();
            let solution_messages =
                build_solution_prompt(self.templates, problem, &plan_completion.text);
            let completion = self.call(problem, Stage::Solution, 0, &solution_messages)?;
            let (solution_tokens, solution_estimated) = completion.token_count();
            Ok(EvalResponse {
                solution: self.make_solution(problem, &completion),
                plan_text: Some(plan_completion.text),
                response_tokens: plan_tokens + solution_tokens,
                tokens_estimated: plan_estimated || solution_estimated,
            })
        } else {
            let messages = build_direct_prompt(self.templates, problem);
            let completion = self.call(problem, Stage::Solution, 0, &messages)?;
            let (tokens, estimated) = completion.token_count();
            Ok(EvalResponse {
                solution: self.make_solution(problem, &completion),
                plan_text: None,
                response_tokens: tokens,
                tokens_estimated: estimated,
            })
        }
    }

    fn call(
        &self,
        problem: &Problem,
        stage: Stage,
        attempt: u32,
        messages: &[ChatMessage],
    ) -> Result<Completion> {
        let params = SamplingParams {
            temperature: self.temperature,
            max_output_tokens: self.config.max_output_tokens,
            seed: Some(derive_seed(
                self.config.seed,
                self.iteration,
                &problem.id,
                stage,
                attempt,
            )),
        };
        let route = route_key(&problem.id, stage, attempt);
        self.backend.complete(&ChatRequest {
            messages,
            params: &params,
            route: &route,
        })
    }

    fn make_solution(&self, problem: &Problem, completion: &Completion) -> Solution {
        Solution {
            text: completion.text.clone(),
            extracted_answer: extract_final_answer(
                &completion.text,
                problem.task_kind,
                self.config.extraction,
            ),
            token_count: completion.token_count().0,
        }
    }
}

/// Replaces each blank-line step boundary with the silence marker on its own
/// paragraph; a solution with n step blocks gains exactly n-1 markers. Text
/// without boundaries is returned unchanged.
pub fn insert_silence_markers(text: &str) -> String {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current.join("\n"));
    }
    if blocks.len() <= 1 {
        return text.to_string();
    }
    blocks.join(&format!("\n\n{SILENCE_MARKER}\n\n"))
}
