//! Byte-exact golden checks for the four rendered prompt templates.
//!
//! The files under `tests/golden/` are the contract. Regenerate them only
//! deliberately: `REGEN_GOLDEN=1 cargo test -p haven-core --test prompt_golden`.

use haven_core::gateway::{render, PromptTemplate};
use std::collections::BTreeMap;
use std::path::PathBuf;

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.txt"))
}

fn check(name: &str, rendered: &str) {
    let path = golden_path(name);
    if std::env::var_os("REGEN_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, rendered).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(
        rendered,
        expected,
        "rendered {name} prompt deviates from its golden file"
    );
}

fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| ((*k).to_string(), (*v).to_string()))
        .collect()
}

#[test]
fn detection_prompt_matches_golden() {
    let rendered = render(
        &PromptTemplate::detection(),
        &bind(&[(
            "Post Content",
            "I finally left last night\nAfter three years I packed a bag and stayed with my sister.",
        )]),
    )
    .unwrap();
    assert!(rendered.ends_with("by answering 'Yes' or 'No'. Answer:"));
    check("detection", &rendered);
}

#[test]
fn topic_summary_prompt_matches_golden() {
    let clusters = "Cluster 0:\nfirst post text\n\nsecond post text\n\nCluster 1:\nthird post text";
    let rendered = render(
        &PromptTemplate::topic_summary(),
        &bind(&[("N", "2"), ("Post Content", clusters)]),
    )
    .unwrap();
    check("topic_summary", &rendered);
}

#[test]
fn support_global_prompt_matches_golden() {
    let comments = "- You deserve to be safe. Please call the hotline.\n- Document everything and talk to a lawyer.";
    let rendered = render(
        &PromptTemplate::support_global(),
        &bind(&[("Top-10 Comment Content across All Clusters", comments)]),
    )
    .unwrap();
    check("support_global", &rendered);
}

#[test]
fn support_cluster_prompt_matches_golden() {
    let comments = "- Therapy helped me see the pattern.\n- You are not alone in this.";
    let rendered = render(
        &PromptTemplate::support_cluster(),
        &bind(&[("Top-10 Comment Content within Each Cluster", comments)]),
    )
    .unwrap();
    check("support_cluster", &rendered);
}
