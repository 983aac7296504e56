//! Corpus embedding, cosine ranking, and the Recall@K protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::data::{ItemRecord, PairSet};
use crate::error::{Error, Result};
use crate::model::{EmbeddingKind, Modality, ModelParams};

/// The Recall@K cutoffs reported by default.
pub const DEFAULT_KS: [usize; 6] = [1, 5, 10, 15, 20, 25];

/// Unit-normalized embeddings of a music corpus.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    music_ids: Vec<String>,
    embeddings: Vec<Vec<f32>>,
    kind: EmbeddingKind,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.music_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.music_ids.is_empty()
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn music_ids(&self) -> &[String] {
        &self.music_ids
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i]
    }
}

fn normalize(v: &mut [f32], what: &str) -> Result<()> {
    let norm = v
        .iter()
        .map(|x| f64::from(*x) * f64::from(*x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateInput(format!(
            "{what} has a zero-norm embedding"
        )));
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(())
}

/// Embeds every music item under the given kind, unit-normalizing rows.
/// Index order follows item order, so identical inputs give identical
/// indexes.
pub fn embed_corpus(
    model: &ModelParams<f32>,
    items: &[ItemRecord],
    kind: EmbeddingKind,
) -> Result<EmbeddingIndex> {
    let mut music_ids = Vec::with_capacity(items.len());
    let mut embeddings = Vec::with_capacity(items.len());
    for item in items {
        if item.modality != Modality::Music {
            return Err(Error::Config(format!(
                "corpus item {} is not a music record",
                item.item_id
            )));
        }
        let mut emb = model.embedding(
            kind,
            &item.content_feature,
            &item.emotion_feature,
            item.modality,
        )?;
        normalize(&mut emb, &format!("music item {}", item.item_id))?;
        music_ids.push(item.item_id.clone());
        embeddings.push(emb);
    }
    Ok(EmbeddingIndex {
        music_ids,
        embeddings,
        kind,
    })
}

/// Top-K music ids for a query embedding, by descending cosine similarity,
/// ties broken by ascending music id. A K beyond the corpus size is
/// truncated to the corpus size.
pub fn rank_for_query(
    index: &EmbeddingIndex,
    query_embedding: &[f32],
    k: usize,
) -> Result<Vec<(String, f32)>> {
    if k < 1 {
        return Err(Error::Config(format!("K must be >= 1, got {k}")));
    }
    if index.is_empty() {
        return Err(Error::Config(
            "cannot rank against an empty index".to_string(),
        ));
    }
    if query_embedding.len() != index.embeddings[0].len() {
        return Err(Error::Config(format!(
            "query embedding length {} does not match index width {}",
            query_embedding.len(),
            index.embeddings[0].len()
        )));
    }
    let mut query = query_embedding.to_vec();
    normalize(&mut query, "query")?;

    let mut scored: Vec<(usize, f32)> = index
        .embeddings
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let dot = row
                .iter()
                .zip(query.iter())
                .map(|(a, b)| f64::from(*a) * f64::from(*b))
                .sum::<f64>();
            (i, dot as f32)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| index.music_ids[a.0].cmp(&index.music_ids[b.0]))
    });
    Ok(scored
        .into_iter()
        .take(k.min(index.len()))
        .map(|(i, s)| (index.music_ids[i].clone(), s))
        .collect())
}

/// Recall@K values over a fixed query set, plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    /// K -> percentage of queries with any ground-truth hit in the top K.
    pub recall_at: BTreeMap<usize, f64>,
    pub num_queries: usize,
    pub corpus_size: usize,
    pub kind: EmbeddingKind,
    pub config_digest: String,
    pub seed: u64,
}

impl RecallReport {
    /// Plain text: a result table followed by machine-readable
    /// `K=<k> recall=<pct>` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "video-to-music retrieval: {} queries over {} music items (kind={})",
            self.num_queries,
            self.corpus_size,
            self.kind.as_str()
        );
        let _ = writeln!(out, "config={} seed={}", self.config_digest, self.seed);
        out.push('\n');
        let mut header = String::from("        ");
        let mut values = String::from("Recall  ");
        for (k, pct) in &self.recall_at {
            let _ = write!(header, "@{k:<8}");
            let _ = write!(values, "{pct:<9.2}");
        }
        let _ = writeln!(out, "{}", header.trim_end());
        let _ = writeln!(out, "{}", values.trim_end());
        out.push('\n');
        for (k, pct) in &self.recall_at {
            let _ = writeln!(out, "K={k} recall={pct:.2}");
        }
        out
    }
}

/// Computes Recall@K: the percentage of queries whose ground-truth set
/// intersects the top-K ranked ids.
pub fn recall_at_k(
    rankings: &BTreeMap<String, Vec<String>>,
    truth: &BTreeMap<String, BTreeSet<String>>,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if truth.is_empty() {
        return Err(Error::Data("recall needs at least one query".to_string()));
    }
    for (query, ids) in truth {
        if ids.is_empty() {
            return Err(Error::Data(format!(
                "query {query} has no ground-truth ids"
            )));
        }
        if !rankings.contains_key(query) {
            return Err(Error::Data(format!(
                "query {query} is missing from the rankings"
            )));
        }
    }
    let mut out = BTreeMap::new();
    for &k in ks {
        if k < 1 {
            return Err(Error::Config(format!("K must be >= 1, got {k}")));
        }
        let hits = truth
            .iter()
            .filter(|(query, ids)| {
                rankings[*query]
                    .iter()
                    .take(k)
                    .any(|ranked| ids.contains(ranked))
            })
            .count();
        out.insert(k, 100.0 * hits as f64 / truth.len() as f64);
    }
    Ok(out)
}

/// Checks that no pair group appears on both sides of a split.
pub fn assert_disjoint_groups(train: &PairSet, test: &PairSet) -> Result<()> {
    let train_groups: BTreeSet<String> = train.pair_groups().into_iter().collect();
    for g in test.pair_groups() {
        if train_groups.contains(&g) {
            return Err(Error::Data(format!(
                "pair group {g} appears in both the train and test splits"
            )));
        }
    }
    Ok(())
}

/// Embeds the test music corpus, queries every test video, and reports
/// Recall@K. Ground truth per video is every test music sharing its pair
/// group; a hit is any of them in the top K.
///
/// `threads` caps query-ranking workers; results are written back in query
/// order, so the report is identical at any thread count.
pub fn evaluate(
    model: &ModelParams<f32>,
    test: &PairSet,
    kind: EmbeddingKind,
    ks: &[usize],
    threads: usize,
    config_digest: String,
    seed: u64,
) -> Result<RecallReport> {
    if test.videos().is_empty() || test.musics().is_empty() {
        return Err(Error::Data(
            "evaluation needs a nonempty test split".to_string(),
        ));
    }
    let index = embed_corpus(model, test.musics(), kind)?;
    let corpus_size = index.len();

    let queries: Vec<&ItemRecord> = test.videos().iter().collect();
    let threads = threads.max(1).min(queries.len());
    let mut ranked: Vec<Option<Vec<String>>> = vec![None; queries.len()];
    let chunk = queries.len().div_ceil(threads);

    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (ti, slot_chunk) in ranked.chunks_mut(chunk).enumerate() {
            let queries = &queries;
            let index = &index;
            handles.push(scope.spawn(move || -> Result<()> {
                for (off, slot) in slot_chunk.iter_mut().enumerate() {
                    let q = queries[ti * chunk + off];
                    let emb = model.embedding(
                        kind,
                        &q.content_feature,
                        &q.emotion_feature,
                        Modality::Video,
                    )?;
                    let hits = rank_for_query(index, &emb, corpus_size)?;
                    *slot = Some(hits.into_iter().map(|(id, _)| id).collect());
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join()
                .map_err(|_| Error::Numeric("query worker panicked".to_string()))??;
        }
        Ok(())
    })?;

    let mut rankings = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for (q, r) in queries.iter().zip(ranked) {
        let ids = r.expect("every query slot filled");
        let gt: BTreeSet<String> = test.musics_of_group(&q.pair_group).into_iter().collect();
        if gt.is_empty() {
            return Err(Error::Data(format!(
                "test video {} has no ground-truth musics in the corpus",
                q.item_id
            )));
        }
        rankings.insert(q.item_id.clone(), ids);
        truth.insert(q.item_id.clone(), gt);
    }

    let recall_at = recall_at_k(&rankings, &truth, ks)?;
    Ok(RecallReport {
        recall_at,
        num_queries: queries.len(),
        corpus_size,
        kind,
        config_digest,
        seed,
    })
}
