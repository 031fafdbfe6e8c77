//! The `--mock` backend: deterministic answers for every pipeline prompt,
//! keyed off template landmarks in the rendered text.

use haven_core::gateway::MockBackend;
use haven_core::hash::fnv1a64;

/// Support names the mock hands out. Per-cluster responses reuse these
/// exact strings so similarity mapping resolves them to the pool at
/// cosine 1.0.
const MOCK_SUPPORTS: [&str; 3] = [
    "prioritize safety and healing",
    "seek professional support",
    "build a support system",
];

fn detection_answer(prompt: &str) -> String {
    // Stable pseudo-verdict from the prompt bytes.
    if fnv1a64(prompt.as_bytes()) & 1 == 0 {
        "Yes".to_string()
    } else {
        "No".to_string()
    }
}

fn topic_answer(prompt: &str) -> Option<String> {
    // "Here are <N> clusters of posts:" carries the cluster count.
    let marker = "Here are ";
    let start = prompt.find(marker)? + marker.len();
    let rest = &prompt[start..];
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    let n: usize = rest[..digits].parse().ok()?;
    let lines: Vec<String> = (0..n)
        .map(|i| format!("Cluster {i}: recurring theme {i}"))
        .collect();
    Some(lines.join("\n"))
}

fn pool_answer() -> String {
    MOCK_SUPPORTS
        .iter()
        .enumerate()
        .map(|(i, name)| format!("Support {}: {name}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn cluster_supports_answer(prompt: &str) -> String {
    // Two deterministic picks from the pool, varying with the prompt.
    let hash = fnv1a64(prompt.as_bytes());
    let first = (hash % 3) as usize;
    let second = (first + 1 + (hash >> 8) as usize % 2) % 3;
    format!("1. {}\n2. {}", MOCK_SUPPORTS[first], MOCK_SUPPORTS[second])
}

/// Build the scripted backend used by `--mock`.
pub fn pipeline_mock() -> MockBackend {
    MockBackend::new().with_answer_fn(|prompt| {
        if prompt.contains("classify whether it is a self-disclosure") {
            Some(detection_answer(prompt))
        } else if prompt.contains("distinct clusters") {
            topic_answer(prompt)
        } else if prompt.contains("Ensure that the forms of supports are distinct") {
            Some(pool_answer())
        } else if prompt.contains("Answer with a numbered list") {
            Some(cluster_supports_answer(prompt))
        } else {
            None
        }
    })
}
