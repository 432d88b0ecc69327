//! Acceptance suite. One line per criterion; exits nonzero if any fails.
//!
//! Dataset-backed criterion 7 reads `PREMEM_LOCOMO_PATH` and
//! `PREMEM_LONGMEMEVAL_PATH`; the live smoke test reads
//! `PREMEM_LIVE_BASE_URL`. Without them both report NOT RUN, which counts
//! as a failure only when `PREMEM_ACCEPTANCE_STRICT=1`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use premem::consolidation::{
    cluster_session, connected_pairs, consolidate_conversation, update_pool, Cluster, ConnectedPair,
    ConsolidationConfig, PersistentPool, SessionMemory,
};
use premem::eval::metrics::{bleu1, rouge1, rouge_l, tokenize};
use premem::eval::{load_dataset, unify_category, DatasetKind, LocomoCategoryMap, UnifiedCategory};
use premem::extraction::{build_extraction_prompt, extract_session, ExtractionConfig};
use premem::gateway::{ChatBackend, CompletionRequest, Gateway, GatewayError, HttpBackend, ModelNames};
use premem::memory::MemoryStore;
use premem::model::{chronological, Category, MemoryFragment, Message, Session};
use premem::retrieval::{
    assemble_context, build_answer_prompt, AssembledContext, DatasetStyle, RetrievalConfig, RetrievalMode,
};
use premem::store::load_store;
use premem::temporal::TemporalRef;
use premem::vector::{Bm25Index, Bm25Params, DenseIndex, Embedding};
use premem_cli::{cmd_build, cmd_eval, CliConfig, GatewayKind, InputFormat};

const POOL_INSTANCES: usize = 1000;
const POOL_LIMIT: Duration = Duration::from_secs(5);
const TRACE_LIMIT: Duration = Duration::from_secs(1);
const SILHOUETTE_SETS: usize = 50;
const SILHOUETTE_TOL: f64 = 1e-9;
const SILHOUETTE_LIMIT: Duration = Duration::from_secs(30);
const RETRIEVAL_FRAGMENTS: usize = 500;
const RETRIEVAL_QUERIES: usize = 100;
const RETRIEVAL_K: usize = 20;
const RETRIEVAL_LIMIT: Duration = Duration::from_secs(10);
const BUDGETS: [usize; 3] = [1024, 2048, 4096];
const BUDGET_SETS: usize = 200;
const METRIC_TOL: f64 = 1e-9;
const DETERMINISM_RUNS: usize = 3;
const LONGMEMEVAL_COUNTS: [(UnifiedCategory, usize); 5] = [
    (UnifiedCategory::SingleHop, 150),
    (UnifiedCategory::MultiHop, 121),
    (UnifiedCategory::TemporalReasoning, 127),
    (UnifiedCategory::Adversarial, 30),
    (UnifiedCategory::KnowledgeUpdate, 72),
];
const LOCOMO_COUNTS: [(UnifiedCategory, usize); 4] = [
    (UnifiedCategory::SingleHop, 1123),
    (UnifiedCategory::MultiHop, 321),
    (UnifiedCategory::TemporalReasoning, 96),
    (UnifiedCategory::Adversarial, 446),
];

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

type Check = fn() -> Verdict;

fn main() {
    let criteria: [(u32, &str, Check); 11] = [
        (1, "pool update equals the set formula", pool_formula),
        (2, "three-session hand trace", hand_trace),
        (3, "silhouette and k selection oracle", silhouette_oracle),
        (4, "dense and BM25 top-k exactness", retrieval_exactness),
        (5, "token budget safety", budget_safety),
        (6, "lexical metric kernels", metric_kernels),
        (7, "category unification on benchmark files", category_counts),
        (8, "end-to-end determinism", end_to_end_determinism),
        (9, "ablation structure", ablation_structure),
        (10, "prompt fidelity", prompt_fidelity),
        (11, "live endpoint smoke", live_smoke),
    ];
    let strict = std::env::var("PREMEM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    for (number, name, check) in criteria {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Verdict::Fail(message)
        });
        let elapsed = started.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::NotRun(d) => {
                if strict {
                    failed += 1;
                }
                ("NOT RUN", d)
            }
        };
        println!("[{tag}] criterion {number:>2}: {name} ({elapsed:.2}s) {detail}");
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Verdict::Fail(format!($($fmt)+));
        }
    };
}

fn within(started: Instant, limit: Duration, detail: String) -> Verdict {
    let elapsed = started.elapsed();
    if elapsed > limit {
        Verdict::Fail(format!(
            "took {:.2}s, limit {:.2}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ))
    } else {
        Verdict::Pass(detail)
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixtures() -> PathBuf {
    repo_root().join("fixtures")
}

fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

fn fragment(id: &str, session_index: u32, key: &str, content: &str, temporal: TemporalRef) -> MemoryFragment {
    MemoryFragment {
        fragment_id: id.into(),
        key: key.into(),
        content: content.into(),
        category: Category::Factual,
        temporal,
        source_message_ids: vec![format!("msg-{id}")],
        session_index,
        inference_type: None,
        source_pair: None,
        warnings: Vec::new(),
    }
}

fn embedding(v: Vec<f64>) -> Embedding {
    Embedding::new(v).unwrap()
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

// ---------------------------------------------------------------- 1

fn random_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

fn pool_formula() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut connected = 0usize;
    for instance in 0..POOL_INSTANCES {
        let dim = rng.random_range(2..5);
        let pool_size = rng.random_range(0..8);
        let new_size = rng.random_range(1..6);
        let theta = rng.random_range(-1.0..1.0);
        let make = |rng: &mut ChaCha8Rng, session: u32, i: usize| Cluster {
            cluster_id: format!("s{session}-c{}", i + 1),
            session_index: session,
            member_fragment_ids: vec![format!("s{session}-m{}", i + 1)],
            centroid: embedding(random_vector(rng, dim)),
        };
        let mut pool_clusters = Vec::new();
        for i in 0..pool_size {
            let session = 1 + (i % 3) as u32;
            pool_clusters.push(Cluster {
                cluster_id: format!("s{session}-c{}", i + 1),
                ..make(&mut rng, session, i)
            });
        }
        let pool = PersistentPool {
            clusters: pool_clusters,
        };
        let new: Vec<Cluster> = (0..new_size).map(|i| make(&mut rng, 9, i)).collect();

        let pairs = connected_pairs(&pool, &new, theta).unwrap();
        let updated = update_pool(&pool, &new, &pairs).unwrap();

        let oracle_pairs: BTreeSet<(String, String)> = pool
            .clusters
            .iter()
            .flat_map(|p| new.iter().map(move |c| (p, c)))
            .filter(|(p, c)| oracle_cosine(p.centroid.values(), c.centroid.values()) > theta)
            .map(|(p, c)| (p.cluster_id.clone(), c.cluster_id.clone()))
            .collect();
        let got_pairs: BTreeSet<(String, String)> = pairs
            .iter()
            .map(|p| (p.pool_cluster_id.clone(), p.new_cluster_id.clone()))
            .collect();
        ensure!(got_pairs == oracle_pairs, "instance {instance}: connected pairs differ");
        connected += pairs.len();

        let matched: BTreeSet<&String> = oracle_pairs.iter().map(|(p, _)| p).collect();
        let mut expected: BTreeSet<String> = pool
            .clusters
            .iter()
            .map(|c| c.cluster_id.clone())
            .filter(|id| !matched.contains(id))
            .collect();
        expected.extend(new.iter().map(|c| c.cluster_id.clone()));
        let got: BTreeSet<String> = updated.ids().into_iter().collect();
        ensure!(got == expected, "instance {instance}: pool {got:?} != {expected:?}");
        ensure!(
            updated.len() == expected.len(),
            "instance {instance}: duplicate pool entries"
        );
    }
    within(
        started,
        POOL_LIMIT,
        format!("{POOL_INSTANCES} instances, {connected} connected pairs"),
    )
}

// ---------------------------------------------------------------- 2

/// Answers every reasoning prompt with one accumulation insight.
struct OneInsight;

impl ChatBackend for OneInsight {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        assert!(
            request.user_prompt.contains("\"extended_insight\""),
            "only reasoning is expected"
        );
        Ok(r#"{"extended_insight": [{"inference_type": "accumulation", "key": "recurring theme", "date": "2023-01-10 to 2023-03-20", "value": "Returns to the same theme across sessions"}]}"#.into())
    }
    fn backend_id(&self) -> String {
        "one-insight".into()
    }
}

fn trace_sessions(doc: &Value) -> Vec<SessionMemory> {
    doc["sessions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let index = s["session_index"].as_u64().unwrap() as u32;
            let day = date(s["session_date"].as_str().unwrap());
            let mut fragments = Vec::new();
            let mut vectors = Vec::new();
            for f in s["fragments"].as_array().unwrap() {
                fragments.push(fragment(
                    f["fragment_id"].as_str().unwrap(),
                    index,
                    f["key"].as_str().unwrap(),
                    f["content"].as_str().unwrap(),
                    TemporalRef::OnDate(day),
                ));
                let v: Vec<f64> = f["vector"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|x| x.as_f64().unwrap())
                    .collect();
                vectors.push(embedding(v));
            }
            SessionMemory {
                session_index: index,
                session_date: day,
                fragments,
                vectors,
            }
        })
        .collect()
}

fn strings(v: &Value) -> Vec<String> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect()
}

fn hand_trace() -> Verdict {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(fixtures().join("trace3.json")).unwrap()).unwrap();
    let sessions = trace_sessions(&doc);
    let started = Instant::now();
    let mut pair_counts = BTreeMap::new();
    for theta_key in ["0.6", "0.9"] {
        let theta: f64 = theta_key.parse().unwrap();
        let config = ConsolidationConfig {
            theta,
            ..ConsolidationConfig::default()
        };
        let gateway = Gateway::new(OneInsight, ModelNames::standard(), 0);
        let result = consolidate_conversation(&sessions, &config, &gateway).unwrap();
        let expected = doc["expected"][theta_key].as_array().unwrap();
        ensure!(result.trace.len() == expected.len(), "theta {theta}: trace length");
        let mut reasoning_so_far = 0;
        let mut pairs_total = 0;
        for (trace, want) in result.trace.iter().zip(expected) {
            let s = trace.session_index;
            let clusters: Vec<Vec<String>> = trace.clusters.iter().map(|c| c.member_fragment_ids.clone()).collect();
            let want_clusters: Vec<Vec<String>> = want["clusters"].as_array().unwrap().iter().map(strings).collect();
            ensure!(
                clusters == want_clusters,
                "theta {theta} session {s}: clusters {clusters:?}"
            );
            let pairs: Vec<(String, String)> = trace
                .pairs
                .iter()
                .map(|p| (p.pool_cluster_id.clone(), p.new_cluster_id.clone()))
                .collect();
            let want_pairs: Vec<(String, String)> = want["pairs"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| {
                    let p = strings(p);
                    (p[0].clone(), p[1].clone())
                })
                .collect();
            ensure!(pairs == want_pairs, "theta {theta} session {s}: pairs {pairs:?}");
            ensure!(
                trace.pool_after == strings(&want["pool_after"]),
                "theta {theta} session {s}: pool {:?}",
                trace.pool_after
            );
            reasoning_so_far += trace.reasoned.iter().map(|r| r.fragment_ids.len()).sum::<usize>();
            ensure!(
                reasoning_so_far as u64 == want["reasoning_total"].as_u64().unwrap(),
                "theta {theta} session {s}: reasoning count {reasoning_so_far}"
            );
            pairs_total += pairs.len();
        }
        ensure!(result.reasoning.len() == reasoning_so_far, "theta {theta}: 𝓡 size");
        ensure!(
            result.reasoning.values().all(|f| f.category == Category::Reasoning),
            "reasoning fragments must be category reasoning"
        );
        pair_counts.insert(theta_key, pairs_total);
    }
    ensure!(
        pair_counts["0.9"] < pair_counts["0.6"],
        "raising theta must not add pairs: {pair_counts:?}"
    );
    within(
        started,
        TRACE_LIMIT * 2,
        format!("pairs at 0.6: {}, at 0.9: {}", pair_counts["0.6"], pair_counts["0.9"]),
    )
}

// ---------------------------------------------------------------- 3

fn brute_silhouette(labels: &[usize], points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let dist = |i: usize, j: usize| {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let clusters: BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| dist(i, j)).sum::<f64>() / own.len() as f64;
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| {
                let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom == 0.0 { 0.0 } else { (b - a) / denom };
    }
    total / n as f64
}

fn silhouette_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = ConsolidationConfig::default();
    let mut fallbacks = 0;
    for set in 0..SILHOUETTE_SETS {
        let n = rng.random_range(3..=50);
        let dim = rng.random_range(1..=8);
        let blobs = rng.random_range(1..=5);
        let centers: Vec<Vec<f64>> = (0..blobs)
            .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let spread = rng.random_range(0.05..2.0);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                centers[i % blobs]
                    .iter()
                    .map(|c| c + rng.random_range(-spread..spread))
                    .collect()
            })
            .collect();
        let fragments: Vec<MemoryFragment> = (0..n)
            .map(|i| {
                fragment(
                    &format!("s1-m{}", i + 1),
                    1,
                    "k",
                    "v",
                    TemporalRef::OnDate(date("2024-01-01")),
                )
            })
            .collect();
        let vectors: Vec<Embedding> = points.iter().map(|p| embedding(p.clone())).collect();
        let (clusters, report) = cluster_session(1, &fragments, &vectors, &config).unwrap();

        let mut best: Option<(usize, f64)> = None;
        for candidate in &report.candidates {
            if candidate.labels.is_empty() {
                ensure!(
                    candidate.silhouette.is_none(),
                    "set {set}: invalid k={} scored",
                    candidate.k
                );
                continue;
            }
            let oracle = brute_silhouette(&candidate.labels, &points);
            let got = candidate.silhouette.unwrap();
            ensure!(
                (oracle - got).abs() <= SILHOUETTE_TOL,
                "set {set} k={}: silhouette {got} vs oracle {oracle}",
                candidate.k
            );
            if best.is_none_or(|(_, s)| oracle > s + SILHOUETTE_TOL) {
                best = Some((candidate.k, oracle));
            }
        }
        match best {
            Some((k, s)) if s >= 0.0 => {
                ensure!(!report.singleton_fallback, "set {set}: unexpected fallback");
                ensure!(
                    report.chosen_k == k,
                    "set {set}: chose k={} oracle k={k}",
                    report.chosen_k
                );
                ensure!(
                    (report.mean_silhouette.unwrap() - s).abs() <= SILHOUETTE_TOL,
                    "set {set}: mean silhouette"
                );
                ensure!(clusters.len() == k, "set {set}: {} clusters", clusters.len());
            }
            _ => {
                fallbacks += 1;
                ensure!(report.singleton_fallback, "set {set}: expected singleton fallback");
                ensure!(clusters.len() == n, "set {set}: fallback must give singletons");
            }
        }
    }
    // Coincident points admit no valid k-partition; the session falls back.
    let fallback_points = vec![vec![0.5, -0.5, 2.0]; 6];
    for (label, points) in [
        ("pair", vec![vec![0.0, 1.0], vec![5.0, 5.0]]),
        ("coincident", fallback_points),
    ] {
        let n = points.len();
        let fragments: Vec<MemoryFragment> = (0..n)
            .map(|i| {
                fragment(
                    &format!("s1-m{}", i + 1),
                    1,
                    "k",
                    "v",
                    TemporalRef::OnDate(date("2024-01-01")),
                )
            })
            .collect();
        let vectors: Vec<Embedding> = points.iter().map(|p| embedding(p.clone())).collect();
        let (clusters, report) = cluster_session(1, &fragments, &vectors, &config).unwrap();
        let best = report
            .candidates
            .iter()
            .filter(|c| !c.labels.is_empty())
            .map(|c| brute_silhouette(&c.labels, &points))
            .fold(f64::NEG_INFINITY, f64::max);
        if n <= 2 {
            ensure!(
                clusters.len() == n && report.candidates.is_empty(),
                "{label}: expected singletons"
            );
        } else if best < 0.0 {
            fallbacks += 1;
            ensure!(
                report.singleton_fallback && clusters.len() == n,
                "{label}: expected singleton fallback"
            );
        } else {
            ensure!(
                !report.singleton_fallback,
                "{label}: fallback with best silhouette {best}"
            );
        }
    }
    within(
        started,
        SILHOUETTE_LIMIT,
        format!("{SILHOUETTE_SETS} random sets + 2 edge sets, {fallbacks} singleton fallbacks"),
    )
}

// ---------------------------------------------------------------- 4

fn ranked_oracle(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn same_ranking(got: &[(String, f64)], want: &[(String, f64)]) -> bool {
    got.len() == want.len()
        && got
            .iter()
            .zip(want)
            .all(|(g, w)| g.0 == w.0 && (g.1 - w.1).abs() <= 1e-12)
}

fn bm25_oracle(docs: &[(String, String)], query: &str, params: Bm25Params) -> Vec<(String, f64)> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|(_, t)| tokenize(t)).collect();
    let n = docs.len() as f64;
    let avg = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let mut out = Vec::new();
    for (d, (id, _)) in docs.iter().enumerate() {
        let mut score = 0.0;
        let mut hit = false;
        for term in &terms {
            let tf = tokenized[d].iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            hit = true;
            let df = tokenized.iter().filter(|doc| doc.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let len = tokenized[d].len() as f64;
            score += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * len / avg));
        }
        if hit {
            out.push((id.clone(), score));
        }
    }
    out
}

fn retrieval_exactness() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vocabulary: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
    let dim = 8;
    let mut vectors: Vec<(String, Vec<f64>)> = Vec::new();
    let mut texts: Vec<(String, String)> = Vec::new();
    for i in 0..RETRIEVAL_FRAGMENTS {
        let id = format!("f{i:03}");
        // Every tenth fragment duplicates an earlier one to force ties.
        if i % 10 == 9 {
            let (v, t) = (vectors[i - 5].1.clone(), texts[i - 5].1.clone());
            vectors.push((id.clone(), v));
            texts.push((id, t));
            continue;
        }
        let v: Vec<f64> = (0..dim).map(|_| (rng.random_range(-4i32..=4) as f64) / 4.0).collect();
        let len = rng.random_range(3..15);
        let t: Vec<&str> = (0..len)
            .map(|_| vocabulary[rng.random_range(0..vocabulary.len())].as_str())
            .collect();
        vectors.push((id.clone(), v));
        texts.push((id, t.join(" ")));
    }
    let mut dense = DenseIndex::new();
    for (id, v) in &vectors {
        dense.insert(id.clone(), embedding(v.clone())).unwrap();
    }
    dense.seal();
    let params = Bm25Params::default();
    let bm25 = Bm25Index::build(texts.iter().map(|(id, t)| (id.clone(), t.clone())), params);

    let mut tie_queries = 0;
    for q in 0..RETRIEVAL_QUERIES {
        let query: Vec<f64> = if q % 4 == 0 {
            vectors[rng.random_range(0..vectors.len())].1.clone()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let got = dense.topk(&embedding(query.clone()), RETRIEVAL_K).unwrap();
        let want = ranked_oracle(
            vectors
                .iter()
                .map(|(id, v)| (id.clone(), oracle_cosine(&query, v)))
                .collect(),
            RETRIEVAL_K,
        );
        ensure!(same_ranking(&got, &want), "dense query {q}: {got:?} vs {want:?}");
        if got.windows(2).any(|w| w[0].1 == w[1].1) {
            tie_queries += 1;
        }

        let terms: Vec<&str> = (0..rng.random_range(1..5))
            .map(|_| vocabulary[rng.random_range(0..vocabulary.len())].as_str())
            .collect();
        let text_query = terms.join(" ");
        let got = bm25.topk(&text_query, RETRIEVAL_K);
        let want = ranked_oracle(bm25_oracle(&texts, &text_query, params), RETRIEVAL_K);
        ensure!(
            same_ranking(&got, &want),
            "bm25 query {q} {text_query:?}: rankings differ"
        );
        if got.windows(2).any(|w| w[0].1 == w[1].1) {
            tie_queries += 1;
        }
    }
    ensure!(tie_queries > 0, "no query exercised a tie");
    within(
        started,
        RETRIEVAL_LIMIT,
        format!("{RETRIEVAL_QUERIES} queries x 2 retrievers, {tie_queries} with ties"),
    )
}

// ---------------------------------------------------------------- 5

fn word_tokens(text: &str) -> usize {
    (text.split_whitespace().count() * 4).div_ceil(3)
}

fn budget_safety() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    let mut skipped_admissions = 0;
    for set in 0..BUDGET_SETS {
        let count = rng.random_range(1..160);
        let mut store = MemoryStore::new("c", "test", 2, "h");
        let mut fragments = Vec::new();
        for i in 0..count {
            let words = rng.random_range(1..120);
            let content: Vec<String> = (0..words).map(|w| format!("t{}", (w * 7 + i) % 97)).collect();
            let day = date("2024-01-01") + chrono::Days::new(rng.random_range(0..400));
            let f = fragment(
                &format!("s1-m{i}"),
                1,
                "key phrase",
                &content.join(" "),
                TemporalRef::OnDate(day),
            );
            store.insert(f.clone(), Some(embedding(vec![1.0, i as f64]))).unwrap();
            fragments.push(f);
        }
        store.seal(None).unwrap();
        let mut ranked: Vec<(String, f64)> = fragments
            .iter()
            .map(|f| (f.fragment_id.clone(), rng.random()))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let by_id: BTreeMap<&str, &MemoryFragment> = fragments.iter().map(|f| (f.fragment_id.as_str(), f)).collect();
        let lines: BTreeMap<&str, String> = fragments
            .iter()
            .map(|f| (f.fragment_id.as_str(), f.render_line()))
            .collect();

        for budget in BUDGETS {
            let config = RetrievalConfig::new(RetrievalMode::Dense, budget).unwrap();
            let context = assemble_context(&ranked, &store, &config);
            ensure!(
                context.token_count <= budget,
                "set {set} budget {budget}: {} tokens",
                context.token_count
            );
            ensure!(
                word_tokens(&context.text()) == context.token_count,
                "set {set} budget {budget}: reported count differs from recount"
            );

            let mut admitted: Vec<&MemoryFragment> = Vec::new();
            for (id, _) in &ranked {
                let candidate = by_id[id.as_str()];
                let mut trial = admitted.clone();
                trial.push(candidate);
                trial.sort_by(|a, b| chronological(a, b));
                let text = trial
                    .iter()
                    .map(|f| lines[f.fragment_id.as_str()].as_str())
                    .collect::<Vec<_>>()
                    .join("\n");
                if word_tokens(&text) <= budget {
                    admitted = trial;
                } else if !admitted.is_empty() {
                    skipped_admissions += 1;
                }
            }
            let want: Vec<String> = admitted.iter().map(|f| f.fragment_id.clone()).collect();
            ensure!(
                context.included_fragment_ids == want,
                "set {set} budget {budget}: admission differs from rank-greedy oracle"
            );
            checked += 1;
        }
    }
    Verdict::Pass(format!(
        "{checked} contexts, {skipped_admissions} skip-and-continue events"
    ))
}

// ---------------------------------------------------------------- 6

fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|s| it.any(|t| t == *s)) {
            best = sub.len();
        }
    }
    best
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn metric_kernels() -> Verdict {
    // (prediction, reference, bleu1, rouge1 f1, rougeL f1), computed by hand.
    let e = std::f64::consts::E;
    let cases: [(&str, &str, f64, f64, f64); 12] = [
        ("the cat sat", "the cat sat", 1.0, 1.0, 1.0),
        ("a dog", "the cat", 0.0, 0.0, 0.0),
        ("", "anything", 0.0, 0.0, 0.0),
        ("anything", "", 0.0, 0.0, 0.0),
        (
            "the cat sat on the mat",
            "the cat is on the mat",
            5.0 / 6.0,
            5.0 / 6.0,
            5.0 / 6.0,
        ),
        ("cat", "the cat", e.powf(-1.0), f1(1.0, 0.5), f1(1.0, 0.5)),
        ("Paris France", "paris", 0.5, f1(0.5, 1.0), f1(0.5, 1.0)),
        (
            "the the the",
            "the cat",
            1.0 / 3.0,
            f1(1.0 / 3.0, 0.5),
            f1(1.0 / 3.0, 0.5),
        ),
        ("b a", "a b", 1.0, 1.0, 0.5),
        ("7 May 2023", "7 may, 2023", 1.0, 1.0, 1.0),
        (
            "went hiking in the alps",
            "hiking in the alps",
            0.8,
            f1(0.8, 1.0),
            f1(0.8, 1.0),
        ),
        ("a b c d", "d c b a", 1.0, 1.0, 0.25),
    ];
    for (i, (pred, gold, b, r1, rl)) in cases.iter().enumerate() {
        ensure!(
            (bleu1(pred, gold) - b).abs() <= METRIC_TOL,
            "case {i}: bleu1 {}",
            bleu1(pred, gold)
        );
        ensure!(
            (rouge1(pred, gold).f1 - r1).abs() <= METRIC_TOL,
            "case {i}: rouge1 {}",
            rouge1(pred, gold).f1
        );
        ensure!(
            (rouge_l(pred, gold).f1 - rl).abs() <= METRIC_TOL,
            "case {i}: rougeL {}",
            rouge_l(pred, gold).f1
        );
    }
    ensure!(
        (rouge1("went hiking in the alps", "hiking in the alps").f1 - 0.8_f64.mul_add(0.0, 8.0 / 9.0)).abs()
            <= METRIC_TOL,
        "rouge1 0.8-precision case"
    );

    // Every pair of token strings of length <= 5 over {a, b}, plus random
    // pairs up to 10 tokens over a four-word vocabulary.
    let mut strings: Vec<Vec<String>> = Vec::new();
    for len in 0..=5u32 {
        for bits in 0..(1u32 << len) {
            strings.push(
                (0..len)
                    .map(|i| if bits & (1 << i) != 0 { "a" } else { "b" }.to_string())
                    .collect(),
            );
        }
    }
    let mut pairs: Vec<(Vec<String>, Vec<String>)> = Vec::new();
    for a in &strings {
        for b in &strings {
            pairs.push((a.clone(), b.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words = ["a", "b", "c", "d"];
    for _ in 0..3000 {
        let mut draw = || -> Vec<String> {
            (0..rng.random_range(0..=10))
                .map(|_| words[rng.random_range(0..4)].to_string())
                .collect()
        };
        pairs.push((draw(), draw()));
    }
    for (a, b) in &pairs {
        let lcs = brute_lcs(a, b);
        let (pa, pb) = (a.join(" "), b.join(" "));
        let p = if a.is_empty() { 0.0 } else { lcs as f64 / a.len() as f64 };
        let r = if b.is_empty() { 0.0 } else { lcs as f64 / b.len() as f64 };
        let got = rouge_l(&pa, &pb);
        ensure!(
            (got.precision - p).abs() <= METRIC_TOL
                && (got.recall - r).abs() <= METRIC_TOL
                && (got.f1 - f1(p, r)).abs() <= METRIC_TOL,
            "rougeL {pa:?} vs {pb:?}"
        );
    }
    Verdict::Pass(format!("12 fixed cases, {} LCS pairs", pairs.len()))
}

// ---------------------------------------------------------------- 7

/// Raw question-type histograms of the public releases as (type, count,
/// abstention count). LoCoMo types are integer codes.
const LONGMEMEVAL_RAW: [(&str, usize, usize); 6] = [
    ("single-session-user", 70, 6),
    ("single-session-assistant", 56, 0),
    ("single-session-preference", 30, 0),
    ("multi-session", 133, 12),
    ("temporal-reasoning", 133, 6),
    ("knowledge-update", 78, 6),
];
const LOCOMO_RAW: [(i64, usize); 5] = [(1, 282), (2, 321), (3, 96), (4, 841), (5, 446)];

fn synthetic_unification() -> Result<(), String> {
    let mut counts = BTreeMap::new();
    for (raw, total, abstentions) in LONGMEMEVAL_RAW {
        for i in 0..total {
            let id = if i < abstentions {
                format!("q{i}_abs")
            } else {
                format!("q{i}")
            };
            let category = unify_category(DatasetKind::LongMemEval, raw, &id).map_err(|e| e.to_string())?;
            *counts.entry(category).or_insert(0) += 1;
        }
    }
    let want: BTreeMap<UnifiedCategory, usize> = LONGMEMEVAL_COUNTS.iter().copied().collect();
    if counts != want {
        return Err(format!("LongMemEval histogram maps to {counts:?}"));
    }
    let map = LocomoCategoryMap::default();
    let mut counts = BTreeMap::new();
    for (code, total) in LOCOMO_RAW {
        let name = map.0.get(&code).ok_or(format!("no name for LoCoMo code {code}"))?;
        let category = unify_category(DatasetKind::Locomo, name, "q").map_err(|e| e.to_string())?;
        *counts.entry(category).or_insert(0) += total;
    }
    let want: BTreeMap<UnifiedCategory, usize> = LOCOMO_COUNTS.iter().copied().collect();
    if counts != want {
        return Err(format!("LoCoMo histogram maps to {counts:?}"));
    }
    Ok(())
}

fn category_counts() -> Verdict {
    if let Err(e) = synthetic_unification() {
        return Verdict::Fail(e);
    }
    let locomo = std::env::var_os("PREMEM_LOCOMO_PATH");
    let longmemeval = std::env::var_os("PREMEM_LONGMEMEVAL_PATH");
    if locomo.is_none() && longmemeval.is_none() {
        return Verdict::NotRun(
            "dataset files absent (set PREMEM_LOCOMO_PATH / PREMEM_LONGMEMEVAL_PATH); mapping verified on raw-type histograms".into(),
        );
    }
    let mut checked = Vec::new();
    type Expected = &'static [(UnifiedCategory, usize)];
    let sets: [(Option<std::ffi::OsString>, DatasetKind, Expected); 2] = [
        (locomo, DatasetKind::Locomo, &LOCOMO_COUNTS),
        (longmemeval, DatasetKind::LongMemEval, &LONGMEMEVAL_COUNTS),
    ];
    for (path, kind, expected) in sets {
        let Some(path) = path else { continue };
        let dataset = match load_dataset(kind, Path::new(&path), &LocomoCategoryMap::default()) {
            Ok(d) => d,
            Err(e) => return Verdict::Fail(format!("{kind:?}: {e}")),
        };
        let counts = dataset.category_counts();
        let want: BTreeMap<UnifiedCategory, usize> = expected.iter().copied().collect();
        ensure!(counts == want, "{kind:?}: {counts:?} != {want:?}");
        checked.push(format!("{kind:?} {} items", dataset.items.len()));
    }
    Verdict::Pass(checked.join(", "))
}

// ---------------------------------------------------------------- 8, 9

fn fixture_config() -> CliConfig {
    let mut config = CliConfig::load(&fixtures().join("premem.toml")).unwrap();
    config.gateway.backend = GatewayKind::Mock;
    config.gateway.fixtures = Some(fixtures().join("mock"));
    config
}

fn run_fixture(dir: &Path, ablate: &[premem_cli::Ablation]) -> Result<(), premem_cli::CliError> {
    let config = fixture_config();
    let input = fixtures().join("locomo_two.json");
    let mut sink = Vec::new();
    cmd_build(
        &config,
        &input,
        InputFormat::Dataset(DatasetKind::Locomo),
        &dir.join("build"),
        &mut sink,
    )?;
    let mut eval_config = config;
    eval_config.eval.ablate = ablate.to_vec();
    cmd_eval(&eval_config, &input, &dir.join("eval"), &mut sink)?;
    Ok(())
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn end_to_end_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for run in 0..DETERMINISM_RUNS {
        let dir = tmp.path().join(format!("run{run}"));
        if let Err(e) = run_fixture(&dir, &premem_cli::Ablation::ALL) {
            return Verdict::Fail(format!("run {run}: {e}"));
        }
        trees.push(tree_bytes(&dir));
    }
    let files = trees[0].len();
    ensure!(
        files >= 30,
        "expected stores, manifests and reports, found {files} files"
    );
    for (run, tree) in trees.iter().enumerate().skip(1) {
        ensure!(tree.keys().eq(trees[0].keys()), "run {run}: different file set");
        for (path, bytes) in tree {
            ensure!(bytes == &trees[0][path], "run {run}: {} differs", path.display());
        }
    }
    Verdict::Pass(format!("{DETERMINISM_RUNS} runs, {files} identical files each"))
}

fn ablation_structure() -> Verdict {
    use premem_cli::Ablation;
    let tmp = tempfile::tempdir().unwrap();
    if let Err(e) = run_fixture(tmp.path(), &Ablation::ALL) {
        return Verdict::Fail(e.to_string());
    }
    let dataset = load_dataset(
        DatasetKind::Locomo,
        &fixtures().join("locomo_two.json"),
        &LocomoCategoryMap::default(),
    )
    .unwrap();
    let stores = |ablation: Ablation| -> Vec<MemoryStore> {
        dataset
            .conversations
            .iter()
            .map(|c| {
                let name = premem_cli::commands::store_file_name(&c.conversation_id);
                load_store(&tmp.path().join("eval").join(ablation.name()).join(name)).unwrap()
            })
            .collect()
    };
    // Message ids repeat across conversations; each store is checked against its own turns.
    let own_message = |store: &MemoryStore, id: &str| -> Message {
        let conversation = dataset
            .conversations
            .iter()
            .find(|c| c.conversation_id == store.conversation_id())
            .unwrap();
        conversation
            .sessions()
            .iter()
            .flat_map(Session::messages)
            .find(|m| m.message_id == id)
            .unwrap()
            .clone()
    };

    let full = stores(Ablation::Full);
    ensure!(
        full.iter().any(|s| !s.reasoning().is_empty()),
        "full build produced no reasoning fragments"
    );
    ensure!(
        full.iter().any(|s| s
            .memory()
            .values()
            .any(|f| !matches!(f.temporal, TemporalRef::OnDate(_)))),
        "full build produced no temporal reasoning"
    );

    let no_step2 = stores(Ablation::NoStep2);
    ensure!(
        no_step2.iter().all(|s| s.reasoning().is_empty()),
        "no-step2: 𝓡 not empty"
    );

    let no_step1 = stores(Ablation::NoStep1);
    let turns: usize = dataset
        .conversations
        .iter()
        .map(|c| c.sessions().iter().map(|s| s.messages().len()).sum::<usize>())
        .sum();
    let raw: usize = no_step1.iter().map(|s| s.memory().len()).sum();
    ensure!(raw == turns, "no-step1: {raw} fragments for {turns} turns");
    for store in &no_step1 {
        for f in store.memory().values() {
            ensure!(
                f.source_message_ids.len() == 1,
                "no-step1: {} spans messages",
                f.fragment_id
            );
            let m = own_message(store, &f.source_message_ids[0]);
            ensure!(f.content == m.text, "no-step1: {} is not the raw turn", f.fragment_id);
            ensure!(
                f.temporal == TemporalRef::OnDate(m.date),
                "no-step1: {} date",
                f.fragment_id
            );
        }
    }

    let no_categories = stores(Ablation::NoCategories);
    let categories: BTreeSet<Category> = no_categories
        .iter()
        .flat_map(|s| s.memory().values().map(|f| f.category))
        .collect();
    ensure!(categories.len() == 1, "no-categories: categories {categories:?}");

    let no_temporal = stores(Ablation::NoTemporal);
    for store in &no_temporal {
        for f in store.memory().values() {
            let m = own_message(store, &f.source_message_ids[0]);
            ensure!(
                f.temporal == TemporalRef::OnDate(m.date),
                "no-temporal: {} has {:?}, message date {}",
                f.fragment_id,
                f.temporal,
                m.date
            );
        }
    }
    Verdict::Pass(format!(
        "full 𝓡={}, raw turns={raw}, flat category {:?}",
        full.iter().map(|s| s.reasoning().len()).sum::<usize>(),
        categories.iter().next().unwrap()
    ))
}

// ---------------------------------------------------------------- 10

fn prompt_fidelity() -> Verdict {
    let golden = fixtures().join("golden");
    let inputs: Value = serde_json::from_str(&std::fs::read_to_string(golden.join("inputs.json")).unwrap()).unwrap();
    let read = |name: &str| std::fs::read_to_string(golden.join(name)).unwrap();

    let messages: Vec<Message> = inputs["session"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| Message {
            message_id: m["message_id"].as_str().unwrap().into(),
            session_index: 1,
            date: date(m["date"].as_str().unwrap()),
            weekday: m["weekday"].as_str().map(String::from),
            speaker: "user".into(),
            text: m["text"].as_str().unwrap().into(),
        })
        .collect();
    let session = Session::new(1, messages).unwrap();
    let extraction = build_extraction_prompt(&session, &ExtractionConfig::default()).unwrap();

    let fragments: Vec<MemoryFragment> = inputs["fragments"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let temporal = premem::temporal::parse_temporal(f["temporal"].as_str().unwrap(), date("2024-05-17")).value;
            fragment(
                &format!("s{}-m{}", f["session_index"], i + 1),
                f["session_index"].as_u64().unwrap() as u32,
                f["key"].as_str().unwrap(),
                f["content"].as_str().unwrap(),
                temporal,
            )
        })
        .collect();
    let reasoning = premem::consolidation::build_reasoning_prompt(&[&fragments[0]], &[&fragments[1]]).unwrap();

    let context = AssembledContext {
        lines: strings(&inputs["context_lines"]),
        token_count: 0,
        included_fragment_ids: Vec::new(),
        token_budget: 1024,
        warnings: Vec::new(),
    };
    let question = inputs["question"].as_str().unwrap();
    let locomo = build_answer_prompt(question, &context, DatasetStyle::Locomo);
    let longmemeval = build_answer_prompt(question, &context, DatasetStyle::LongMemEval);
    let judge = premem::eval::judge::build_judge_prompt(
        question,
        inputs["gold_answer"].as_str().unwrap(),
        inputs["predicted_answer"].as_str().unwrap(),
    );

    let rendered = [
        ("extraction.txt", extraction),
        ("reasoning.txt", reasoning),
        ("answer_locomo.txt", locomo),
        ("answer_longmemeval.txt", longmemeval),
        ("judge.txt", judge),
    ];
    for (name, text) in &rendered {
        let want = read(name);
        if *text != want {
            let line = text.lines().zip(want.lines()).position(|(a, b)| a != b);
            return Verdict::Fail(format!("{name} differs from golden at line {line:?}"));
        }
    }
    ensure!(
        rendered[0].1.contains("Before [message-date]"),
        "extraction marker missing"
    );
    ensure!(
        rendered[4].1.contains("Assign a score from 0 to 100"),
        "judge marker missing"
    );
    Verdict::Pass(format!("{} prompts byte-identical", rendered.len()))
}

// ---------------------------------------------------------------- 11

fn live_smoke() -> Verdict {
    let Ok(base_url) = std::env::var("PREMEM_LIVE_BASE_URL") else {
        return Verdict::NotRun("no live endpoint (set PREMEM_LIVE_BASE_URL)".into());
    };
    let key_env = std::env::var("PREMEM_LIVE_API_KEY_ENV").unwrap_or_else(|_| "OPENAI_API_KEY".into());
    let mut models = ModelNames::standard();
    if let Ok(model) = std::env::var("PREMEM_LIVE_MODEL") {
        models = ModelNames {
            extract: model.clone(),
            reason: model.clone(),
            response: model.clone(),
            judge: model,
        };
    }
    let gateway = Gateway::new(HttpBackend::new(base_url, Some(&key_env)), models, 2);
    let day = date("2024-05-17");
    let texts = [
        "I'm living in Rome now with my girlfriend, Hana. We moved here last summer because she started grad school.",
        "I quit my job at Coupang in March. I just didn't see myself growing there anymore.",
        "I'm thinking about switching into UX design. I've always liked the idea of making tech more human-friendly.",
        "My brother Junho lives in Seattle. He's an engineer and always sends me photos of the mountains.",
        "I ate chicken with my friends yesterday.",
    ];
    let messages = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Message {
            message_id: format!("msg-{}", 301 + i),
            session_index: 1,
            date: day,
            weekday: None,
            speaker: "user".into(),
            text: t.to_string(),
        })
        .collect();
    let session = Session::new(1, messages).unwrap();
    let outcome = match extract_session(&session, &gateway, &ExtractionConfig::default()) {
        Ok(o) => o,
        Err(e) => return Verdict::Fail(format!("extraction: {e}")),
    };
    let categories: BTreeSet<Category> = outcome.fragments.iter().map(|f| f.category).collect();
    for c in [Category::Factual, Category::Experiential, Category::Subjective] {
        ensure!(
            categories.contains(&c),
            "no {c:?} fragment among {}",
            outcome.fragments.len()
        );
    }
    let (left, right) = outcome.fragments.split_at(outcome.fragments.len() / 2);
    let pair = ConnectedPair {
        pool_cluster_id: "s1-c1".into(),
        new_cluster_id: "s2-c1".into(),
        similarity: 1.0,
    };
    let left: Vec<&MemoryFragment> = left.iter().collect();
    let right: Vec<&MemoryFragment> = right.iter().collect();
    match premem::consolidation::reason_pair(&pair, &left, &right, 2, day, &gateway) {
        Ok(r) if !r.skipped => Verdict::Pass(format!(
            "{} fragments, {} insights",
            outcome.fragments.len(),
            r.fragments.len()
        )),
        Ok(_) => Verdict::Fail("reasoning output unparseable".into()),
        Err(e) => Verdict::Fail(format!("reasoning: {e}")),
    }
}
