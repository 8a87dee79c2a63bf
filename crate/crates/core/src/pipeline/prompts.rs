//! Prompt templates. Rendering is a pure function of the inputs.

use serde_json::to_string as json_string;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{0} must not be empty")]
pub struct EmptyInput(pub &'static str);

/// The writing instruction sent with every perturbed document.
pub const INFERENCE_INSTRUCTION: &str = "Your task is to extend the \"Prefix Text\".";

/// The extraction and stitching instruction added for restoration.
pub const RESTORATION_INSTRUCTION: &str = "Use the \"Perturbed Results\" as your primary source material. Extract text from the 'Perturbed Results' carefully, and integrate them into your continuation, ensuring a seamless alignment with the context established by the \"Prefix Text\".";

const ATTACK_TEMPLATE: &str = r#"Given a list of tokens, denoted as "INPUTS," which have been subjected to text perturbation through differential privacy techniques, the task is to revert each token in the list to its most likely original token. For each perturbed token, provide the most likely original tokens from which it could have been transformed.
As an example, consider the list "INPUTS": ["Privacy", "LLM", "Text"]. The desired output format should be:
[
["Prediction1"], # Corresponding to "Privacy"
["Prediction2"], # Corresponding to "LLM"
["Prediction3"] # Corresponding to "Text"
]
Here, "Prediction" represents the most plausible original tokens prior to perturbation.
For the given list of "INPUTS":
[INPUT HERE]
Generate predictions for each token in the list, without exception. Ensure that exactly the most likely predictions are produced for each token."#;

const INPUT_SLOT: &str = "[INPUT HERE]";

/// Prompt asking the remote model to continue `document`.
pub fn build_inference_prompt(document: &str) -> String {
    format!("{INFERENCE_INSTRUCTION}\n- Prefix Text:\n{document}")
}

/// Prompt asking the local model to write a continuation of `document`
/// from the remote generations. Each generation follows a `[j]` line
/// (1-based).
pub fn build_restoration_prompt<S: AsRef<str>>(
    document: &str,
    generations: &[S],
) -> Result<String, EmptyInput> {
    if generations.is_empty() {
        return Err(EmptyInput("generations"));
    }
    let results = generations
        .iter()
        .enumerate()
        .map(|(j, g)| format!("[{}]\n{}", j + 1, g.as_ref()))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(format!(
        "{INFERENCE_INSTRUCTION} {RESTORATION_INSTRUCTION}\n- Prefix Text:\n{document}\n- Perturbed Results:\n{results}"
    ))
}

/// Renders tokens as `["a", "b", "c"]` with JSON string escaping.
pub fn render_token_list<S: AsRef<str>>(tokens: &[S]) -> String {
    let items: Vec<String> = tokens
        .iter()
        .map(|t| json_string(t.as_ref()).expect("strings always serialize"))
        .collect();
    format!("[{}]", items.join(", "))
}

/// Prompt asking a model to undo the perturbation of `tokens`.
pub fn build_gpt_attack_prompt<S: AsRef<str>>(tokens: &[S]) -> Result<String, EmptyInput> {
    if tokens.is_empty() {
        return Err(EmptyInput("token list"));
    }
    Ok(ATTACK_TEMPLATE.replacen(INPUT_SLOT, &render_token_list(tokens), 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_prompt() {
        assert_eq!(
            build_inference_prompt("abc"),
            "Your task is to extend the \"Prefix Text\".\n- Prefix Text:\nabc"
        );
        assert!(build_inference_prompt("").ends_with("- Prefix Text:\n"));
    }

    #[test]
    fn restoration_prompt_orders_blocks() {
        let p = build_restoration_prompt("doc", &["one", "two", "three"]).unwrap();
        assert!(p.ends_with("- Perturbed Results:\n[1]\none\n[2]\ntwo\n[3]\nthree"));
        assert!(p.contains("- Prefix Text:\ndoc\n"));
        assert!(!p.contains("Related Results"));
        let single = build_restoration_prompt("doc", &["g"]).unwrap();
        assert!(single.ends_with("- Perturbed Results:\n[1]\ng"));
        assert_eq!(build_restoration_prompt::<&str>("doc", &[]), Err(EmptyInput("generations")));
    }

    #[test]
    fn attack_prompt_lists_tokens() {
        let p = build_gpt_attack_prompt(&["Privacy", "LLM", "Text"]).unwrap();
        assert!(p.contains("For the given list of \"INPUTS\":\n[\"Privacy\", \"LLM\", \"Text\"]\nGenerate"));
        assert!(!p.contains(INPUT_SLOT));
        assert!(build_gpt_attack_prompt(&["x"]).unwrap().contains("\n[\"x\"]\n"));
        assert!(build_gpt_attack_prompt::<&str>(&[]).is_err());
    }

    #[test]
    fn token_list_escapes() {
        assert_eq!(render_token_list(&[" a", "\"q\"", "\n"]), r#"[" a", "\"q\"", "\n"]"#);
    }
}
