//! Adapter template for plugging a hosted model API into the verify-and-revise
//! loop.
//!
//! The loop only needs the `Generator` trait: given a question and the
//! previous round's citation verdicts, produce the next draft. `ApiGenerator`
//! below shows the shape of a real adapter; its transport is injected as a
//! closure so this example runs offline. Swap `canned_transport` for a real
//! HTTP call (reqwest/ureq against your chat-completions endpoint) and the
//! rest of the file stays the same.
//!
//! Run with: cargo run --example generator_adapter

use anyhow::Result;
use urlhealth::classify::UrlhealthLabel;
use urlhealth::selfcorrect::{
    run_loop, Draft, Generator, InteractionStyle, LoopPolicy, ToolRequest, ToolResponse,
    ToolVerdict,
};

/// Sends one prompt to a model endpoint and returns the completion text.
///
/// In production this is where the network call lives, e.g.:
///
/// ```ignore
/// let body = serde_json::json!({
///     "model": "your-model",
///     "messages": [{"role": "user", "content": prompt}],
/// });
/// let text = client.post(endpoint).json(&body).send()?.text()?;
/// ```
type Transport = Box<dyn FnMut(&str) -> Result<String>>;

/// Generator backed by a remote model.
///
/// Feedback from the verifier is folded into the next prompt as a plain-text
/// list of failing citations, which is all most APIs need to revise an
/// answer. Use `InteractionStyle::Interleaved` when the API can take
/// revision prompts every round, `TwoPhase` when it only supports a single
/// revision pass.
struct ApiGenerator {
    transport: Transport,
    style: InteractionStyle,
}

impl ApiGenerator {
    fn new(transport: Transport, style: InteractionStyle) -> Self {
        ApiGenerator { transport, style }
    }

    fn prompt_for(question: &str, feedback: Option<&ToolResponse>) -> String {
        let mut prompt = format!(
            "Answer the question below and cite your sources as full http(s) URLs.\n\
             Question: {question}\n"
        );
        if let Some(response) = feedback {
            let failing: Vec<&str> = response
                .0
                .iter()
                .filter(|v| v.label != UrlhealthLabel::Live)
                .map(|v| v.url.as_str())
                .collect();
            if !failing.is_empty() {
                prompt.push_str(
                    "These citations from your previous answer did not verify; \
                     replace them with sources that resolve:\n",
                );
                for url in failing {
                    prompt.push_str(url);
                    prompt.push('\n');
                }
            }
        }
        prompt
    }
}

impl Generator for ApiGenerator {
    fn style(&self) -> InteractionStyle {
        self.style
    }

    fn generate(&mut self, question: &str, feedback: Option<&ToolResponse>) -> Result<Draft> {
        let prompt = Self::prompt_for(question, feedback);
        let answer = (self.transport)(&prompt)?;
        Ok(Draft { answer })
    }
}

/// Stand-in for the model API: first call cites one bad URL, and any
/// revision prompt swaps it out.
fn canned_transport() -> Transport {
    let mut calls = 0u32;
    Box::new(move |prompt: &str| {
        calls += 1;
        let revising = prompt.contains("did not verify");
        Ok(if revising {
            "Revised: see https://example.org/atlas and https://example.org/codex".to_string()
        } else {
            format!(
                "Draft {calls}: see https://example.org/atlas and \
                 https://bad.example/ghost for details"
            )
        })
    })
}

/// Stand-in for the probing verifier: a real run wires in
/// `urlhealth::selfcorrect::tool_verifier(&prober, &archive)` instead.
fn canned_verifier(request: &ToolRequest) -> Result<ToolResponse> {
    Ok(ToolResponse(
        request
            .urls
            .iter()
            .map(|url| ToolVerdict {
                url: url.clone(),
                label: if url.contains("bad.example") {
                    UrlhealthLabel::LikelyHallucinated
                } else {
                    UrlhealthLabel::Live
                },
                snapshot_url: None,
            })
            .collect(),
    ))
}

fn main() -> Result<()> {
    let mut generator = ApiGenerator::new(canned_transport(), InteractionStyle::Interleaved);
    let mut verifier = canned_verifier;
    let policy = LoopPolicy::default();
    let run = run_loop(
        &mut generator,
        &mut verifier,
        "What maps the example atlas?",
        &policy,
    )?;
    println!("rounds used: {}", run.rounds_used);
    println!("converged:   {}", !run.stopped_by_cap);
    println!("final draft: {}", run.answer);
    Ok(())
}
