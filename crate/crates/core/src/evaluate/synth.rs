//! Deterministic synthetic corpus with planted structure.
//!
//! Posts in the same blob draw from one vocabulary, disjoint from every
//! other blob's, so the hashing embedder separates blobs by construction.
//! Planted detection labels and cluster ids come back alongside the posts
//! for oracle checks.

use super::EvaluateError;
use crate::corpus::{Comment, DisclosureValue, Post};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub blobs: usize,
    pub posts_per_blob: usize,
    pub comments_per_post: usize,
    /// One token list per blob; must be pairwise disjoint.
    pub vocabularies: Vec<Vec<String>>,
    pub seed: u64,
}

impl SynthSpec {
    /// A standard planted corpus: `blobs` x `posts_per_blob` posts with
    /// 12-word disjoint vocabularies and 3 comments each.
    pub fn planted(blobs: usize, posts_per_blob: usize, seed: u64) -> Self {
        SynthSpec {
            blobs,
            posts_per_blob,
            comments_per_post: 3,
            vocabularies: default_vocabularies(blobs, 12),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub posts: Vec<Post>,
    /// Planted detection label per post id, alternating within each blob.
    pub labels: BTreeMap<String, DisclosureValue>,
    /// Planted blob id per post, parallel to `posts`.
    pub cluster_ids: Vec<usize>,
}

/// Pairwise-disjoint token lists, all alphanumeric so the hashing
/// tokenizer keeps each one whole.
pub fn default_vocabularies(blobs: usize, words_per_blob: usize) -> Vec<Vec<String>> {
    (0..blobs)
        .map(|b| (0..words_per_blob).map(|w| format!("b{b}w{w:02}")).collect())
        .collect()
}

/// Generate the corpus. Same spec, same bytes.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus, EvaluateError> {
    if spec.blobs == 0 || spec.posts_per_blob == 0 {
        return Err(EvaluateError::InvalidParams(
            "blobs and posts_per_blob must be positive".into(),
        ));
    }
    if spec.vocabularies.len() < spec.blobs {
        return Err(EvaluateError::InvalidParams(format!(
            "{} vocabularies for {} blobs",
            spec.vocabularies.len(),
            spec.blobs
        )));
    }
    let mut seen: HashSet<&str> = HashSet::new();
    for vocab in &spec.vocabularies {
        if vocab.is_empty() {
            return Err(EvaluateError::InvalidParams("empty vocabulary".into()));
        }
        for word in vocab {
            if !seen.insert(word) {
                return Err(EvaluateError::InvalidParams(format!(
                    "vocabularies are not disjoint: {word:?} repeats"
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut posts = Vec::with_capacity(spec.blobs * spec.posts_per_blob);
    let mut labels = BTreeMap::new();
    let mut cluster_ids = Vec::with_capacity(spec.blobs * spec.posts_per_blob);

    for blob in 0..spec.blobs {
        let vocab = &spec.vocabularies[blob];
        let sample = |rng: &mut ChaCha8Rng, count: usize| -> String {
            (0..count)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };

        for i in 0..spec.posts_per_blob {
            let id = format!("b{blob:02}p{i:04}");
            let global = blob * spec.posts_per_blob + i;
            let value = if global % 2 == 0 {
                DisclosureValue::SelfDisclosure
            } else {
                DisclosureValue::NonSelfDisclosure
            };

            let title = sample(&mut rng, 4);
            let body = sample(&mut rng, 24);
            let comments = (0..spec.comments_per_post)
                .map(|c| Comment {
                    id: format!("{id}c{c:02}"),
                    body: sample(&mut rng, 8),
                    karma: rng.gen_range(-5..80),
                    created_utc: 1_700_000_000 + global as i64 * 60 + c as i64,
                })
                .collect();

            labels.insert(id.clone(), value);
            cluster_ids.push(blob);
            posts.push(Post {
                id,
                subreddit: format!("synthblob{blob}"),
                title,
                body,
                created_utc: 1_700_000_000 + global as i64 * 60,
                karma: rng.gen_range(0..200),
                comments,
                label: None,
            });
        }
    }

    Ok(SynthCorpus {
        posts,
        labels,
        cluster_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{cosine, HashingProvider, NormFlag};

    #[test]
    fn shape_matches_spec() {
        let corpus = synth_corpus(&SynthSpec::planted(3, 50, 1)).unwrap();
        assert_eq!(corpus.posts.len(), 150);
        assert_eq!(corpus.cluster_ids.len(), 150);
        assert_eq!(corpus.labels.len(), 150);
        let distinct: HashSet<usize> = corpus.cluster_ids.iter().copied().collect();
        assert_eq!(distinct.len(), 3);
        // Alternating labels stay balanced per blob.
        let yes = corpus
            .labels
            .values()
            .filter(|v| **v == DisclosureValue::SelfDisclosure)
            .count();
        assert_eq!(yes, 75);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = synth_corpus(&SynthSpec::planted(2, 20, 9)).unwrap();
        let b = synth_corpus(&SynthSpec::planted(2, 20, 9)).unwrap();
        assert_eq!(a.posts, b.posts);
        let c = synth_corpus(&SynthSpec::planted(2, 20, 10)).unwrap();
        assert_ne!(a.posts, c.posts);
    }

    #[test]
    fn rejects_overlapping_vocabularies() {
        let mut spec = SynthSpec::planted(2, 5, 0);
        spec.vocabularies[1][0] = spec.vocabularies[0][0].clone();
        assert!(matches!(
            synth_corpus(&spec),
            Err(EvaluateError::InvalidParams(_))
        ));
    }

    #[test]
    fn intra_blob_similarity_exceeds_inter_blob() {
        let corpus = synth_corpus(&SynthSpec::planted(3, 20, 4)).unwrap();
        let vectors: Vec<_> = corpus
            .posts
            .iter()
            .map(|p| HashingProvider::embed_str(&p.content()))
            .collect();

        let mut worst_intra = f64::INFINITY;
        let mut best_inter = f64::NEG_INFINITY;
        for i in 0..vectors.len() {
            for j in (i + 1)..vectors.len() {
                let sim = cosine(&vectors[i], &vectors[j]);
                if corpus.cluster_ids[i] == corpus.cluster_ids[j] {
                    worst_intra = worst_intra.min(sim);
                } else {
                    best_inter = best_inter.max(sim);
                }
            }
        }
        assert!(
            worst_intra > best_inter,
            "worst intra {worst_intra} vs best inter {best_inter}"
        );
    }

    #[test]
    fn large_corpus_embeds_to_unit_rows() {
        let corpus = synth_corpus(&SynthSpec::planted(20, 50, 2)).unwrap();
        assert_eq!(corpus.posts.len(), 1000);
        for post in &corpus.posts {
            let v = HashingProvider::embed_str(&post.content());
            assert_eq!(v.norm_flag(), NormFlag::UnitNorm);
        }
    }
}
