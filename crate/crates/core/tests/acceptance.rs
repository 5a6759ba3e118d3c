//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (bypassing the test harness capture) and then asserts.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use kbforge::agent::AgentContext;
use kbforge::categorize::{categorize_all, Level};
use kbforge::corpus::Ticket;
use kbforge::discovery::{discover, Category, CategorySet, DiscoveryConfig};
use kbforge::eval::{aggregate, distribution_delta, generate_queries, welch_t, EvalScore, METHODS};
use kbforge::llm::{BackendError, Clock, FakeClock, Gateway, GatewayConfig, MockBackend};
use kbforge::prompts::{parse_categories, TemplateName, CATEGORY_PATTERN_CAP};
use kbforge::rag::{build_raw_kb, tokenize, Bm25Params, Document, SearchIndex};
use kbforge::simulate::{self, phrases};
use kbforge::synthesis::{build_knowledge_base, synthesize_batched, HierarchyConfig, Strategy as Route};
use kbforge::synthetic::{generate, generate_with_truth, lexicon, SyntheticConfig};
use kbforge::workspace::{Workspace, WorkspaceConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use sha2::{Digest, Sha256};

fn verdict(n: u32, name: &str, ok: bool, detail: &str) -> bool {
    let line = format!(
        "criterion {n}: {} - {name} ({detail})\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

fn gateway(mock: Arc<MockBackend>, clock: Arc<FakeClock>) -> Arc<Gateway> {
    Arc::new(
        Gateway::with_clock(
            mock,
            GatewayConfig {
                requests_per_minute: 1_000_000,
                ..Default::default()
            },
            clock,
        )
        .unwrap(),
    )
}

fn scripted_ctx() -> (Arc<MockBackend>, AgentContext) {
    let mock = Arc::new(simulate::scripted_backend());
    let ctx = AgentContext::new(gateway(mock.clone(), Arc::new(FakeClock::new())));
    (mock, ctx)
}

fn corpus(n: usize) -> Vec<Ticket> {
    generate(&SyntheticConfig {
        tickets: n,
        ..Default::default()
    })
}

fn six_topic_taxonomy() -> CategorySet {
    let json = serde_json::json!({
        "categories": lexicon().iter().map(|t| serde_json::json!({
            "name": t.name, "description": t.description, "identifying_patterns": t.keywords().collect::<Vec<_>>()
        })).collect::<Vec<_>>()
    });
    CategorySet::from_parsed(parse_categories(&json.to_string(), false).unwrap(), None, CATEGORY_PATTERN_CAP)
}

#[test]
fn criterion_01_pipeline_determinism() {
    let started = Instant::now();
    let mut reports = Vec::new();
    let mut rows = 0;
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(WorkspaceConfig {
            workspace_dir: dir.path().to_path_buf(),
            ..Default::default()
        })
        .unwrap();
        let report = ws.compare(&METHODS, false).unwrap();
        rows = report.methods.len();
        reports.push(std::fs::read(dir.path().join("eval/report.json")).unwrap());
    }
    let elapsed = started.elapsed();
    // Two-method subset: raw is the baseline of the single t-test pair.
    let dir = tempfile::tempdir().unwrap();
    let mut ws = Workspace::open(WorkspaceConfig {
        workspace_dir: dir.path().to_path_buf(),
        ..Default::default()
    })
    .unwrap();
    let pair = ws.compare(&["raw", "multi_agent"], false).unwrap();
    let pair_ok = pair.methods.len() == 2
        && pair.pairwise.len() == 1
        && pair.pairwise[0].baseline == "raw"
        && pair.pairwise[0].method == "multi_agent";
    let ok = reports[0] == reports[1] && rows == 5 && pair_ok && elapsed < Duration::from_secs(30);
    assert!(verdict(
        1,
        "pipeline determinism",
        ok,
        &format!("identical={} rows={rows} pair_ok={pair_ok} elapsed={elapsed:.2?}", reports[0] == reports[1])
    ));
}

#[test]
fn criterion_02_threshold_routing() {
    let sizes = [9, 10, 50, 51, 0, 0];
    let tickets: Vec<Ticket> = generate_with_truth(&SyntheticConfig {
        sizes: Some(sizes),
        ..Default::default()
    })
    .into_iter()
    .map(|(t, _)| t)
    .collect();
    let refs: Vec<&Ticket> = tickets.iter().collect();
    let (_, ctx) = scripted_ctx();
    let set = discover(&ctx, &refs, &DiscoveryConfig::default()).unwrap();
    let corpus = categorize_all(&ctx, &refs, &set);
    let kb = build_knowledge_base(&ctx, &corpus, &set, &refs, &HierarchyConfig::default(), "acceptance");
    let expected = [
        (lexicon()[0].name, 9, Route::Standard),
        (lexicon()[1].name, 10, Route::Batch),
        (lexicon()[2].name, 50, Route::Batch),
        (lexicon()[3].name, 51, Route::Hierarchical),
    ];
    let mut seen = Vec::new();
    let mut ok = kb.manifest.categories.len() == 4;
    for (name, size, strategy) in expected {
        let id = set.categories.iter().find(|c| c.name == name).map(|c| c.id.clone()).unwrap_or_default();
        let report = kb.manifest.categories.iter().find(|r| r.category_id == id);
        match report {
            Some(r) => {
                seen.push(format!("{size}->{}", r.strategy));
                ok &= r.pool_size == size && r.strategy == strategy;
            }
            None => {
                seen.push(format!("{size}->missing"));
                ok = false;
            }
        }
    }
    assert!(verdict(2, "threshold routing", ok, &seen.join(", ")));
}

#[test]
fn criterion_03_call_count_laws() {
    let mut details = Vec::new();
    let mut ok = true;

    // Default discovery over more than 200 tickets: ceil(200/50) batches + 1 merge.
    let tickets = corpus(240);
    let refs: Vec<&Ticket> = tickets.iter().collect();
    let (_, ctx) = scripted_ctx();
    let cfg = DiscoveryConfig::default();
    discover(&ctx, &refs, &cfg).unwrap();
    let (d, m) = (
        ctx.gateway.calls_tagged("category_discovery"),
        ctx.gateway.calls_tagged("category_merge"),
    );
    let want = cfg.sample_size.div_ceil(cfg.batch_size);
    ok &= d == want && m == 1;
    details.push(format!("discovery {d}+{m} (want {want}+1)"));

    // Batch synthesis of 30 tickets with batch size 10: 3 + 1.
    let pool: Vec<&Ticket> = tickets.iter().take(30).collect();
    assert_eq!(pool.len(), 30);
    let cat = Category {
        id: "site-access".into(),
        name: "Site Access".into(),
        description: "d".into(),
        identifying_patterns: vec![],
        parent: None,
    };
    let (_, ctx) = scripted_ctx();
    let article = synthesize_batched(&ctx, &cat, &pool, 10).unwrap();
    let (s, m) = (
        ctx.gateway.calls_tagged("knowledge_synthesis"),
        ctx.gateway.calls_tagged("knowledge_merge"),
    );
    ok &= s == 3 && m == 1 && article.source_ticket_ids.len() == 30;
    details.push(format!("batch30 {s}+{m} (want 3+1)"));

    // A single batch passes through with no merge call, for both agents.
    let (_, ctx) = scripted_ctx();
    synthesize_batched(&ctx, &cat, &pool[..8], 10).unwrap();
    let (s, m) = (
        ctx.gateway.calls_tagged("knowledge_synthesis"),
        ctx.gateway.calls_tagged("knowledge_merge"),
    );
    ok &= s == 1 && m == 0;
    details.push(format!("synthesis single {s}+{m} (want 1+0)"));
    let (_, ctx) = scripted_ctx();
    discover(&ctx, &refs[..40], &cfg).unwrap();
    let (d, m) = (
        ctx.gateway.calls_tagged("category_discovery"),
        ctx.gateway.calls_tagged("category_merge"),
    );
    ok &= d == 1 && m == 0;
    details.push(format!("discovery single {d}+{m} (want 1+0)"));

    assert!(verdict(3, "call-count laws", ok, &details.join("; ")));
}

// Categorization responses chosen per ticket from a salted hash, covering
// valid, multi, over-long, empty, garbage, unknown-name and failing replies.
fn chaotic_categorizer(mock: &MockBackend, salt: u64) {
    let names: Vec<&'static str> = lexicon().iter().map(|t| t.name).collect();
    mock.register_fn(phrases::TICKET_CATEGORIZATION, move |req| {
        let title = req.user_text.lines().find_map(|l| l.strip_prefix("Title: ")).unwrap_or("");
        let mut h = DefaultHasher::new();
        (title, salt, req.user_text.len() % 2).hash(&mut h);
        let x = h.finish();
        let pick = |i: u64| names[((x >> (8 * i)) % names.len() as u64) as usize];
        let entry = |n: &str| format!("{{\"category\": \"{n}\", \"reasoning\": \"r\"}}");
        let body = |items: Vec<String>| format!("{{\"assignments\": [{}]}}", items.join(","));
        Ok(match x % 8 {
            0 => body(vec![entry(pick(1))]),
            1 => body(vec![entry(pick(1)), entry(pick(2))]),
            2 => body(vec![entry(pick(1)), entry(pick(2)), entry(pick(3))]),
            3 => body(vec![]),
            4 => "I cannot decide.".into(),
            5 => body(vec![entry("Quantum Logistics")]),
            6 => body(vec![entry(pick(1)), entry(pick(1))]),
            _ => return Err(BackendError::Transient("overloaded".into())),
        })
    });
}

#[test]
fn criterion_04_full_accounting() {
    let set = six_topic_taxonomy();
    let mut runner = TestRunner::new(PtConfig {
        cases: 128,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let violations = Arc::new(Mutex::new(0usize));
    let cases = Arc::new(Mutex::new(0usize));
    let result = runner.run(&(1usize..60, any::<u64>(), any::<u64>()), |(n, seed, salt)| {
        *cases.lock().unwrap() += 1;
        let tickets = generate(&SyntheticConfig {
            tickets: n,
            seed,
            sizes: None,
        });
        let refs: Vec<&Ticket> = tickets.iter().collect();
        let mock = Arc::new(MockBackend::new());
        chaotic_categorizer(&mock, salt);
        let ctx = AgentContext::new(gateway(mock, Arc::new(FakeClock::new())));
        let out = categorize_all(&ctx, &refs, &set);
        let assigned: BTreeSet<&str> = out.assignments.iter().map(|a| a.ticket_id.as_str()).collect();
        let unc: BTreeSet<&str> = out.uncategorized.iter().map(String::as_str).collect();
        let failed: BTreeSet<&str> = out.failed.iter().map(|f| f.ticket_id.as_str()).collect();
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for a in out.assignments.iter().filter(|a| a.level == Level::Category) {
            *per.entry(a.ticket_id.as_str()).or_default() += 1;
        }
        let disjoint = assigned.is_disjoint(&unc) && assigned.is_disjoint(&failed) && unc.is_disjoint(&failed);
        let total_ok = assigned.len() + unc.len() + failed.len() == n;
        let cap_ok = per.values().all(|&c| c <= 2);
        if !(disjoint && total_ok && cap_ok) {
            *violations.lock().unwrap() += 1;
        }
        prop_assert!(disjoint && total_ok && cap_ok, "n={n} assigned={} unc={} failed={}", assigned.len(), unc.len(), failed.len());
        Ok(())
    });
    let cases = *cases.lock().unwrap();
    let violations = *violations.lock().unwrap();
    let ok = result.is_ok() && violations == 0 && cases >= 100;
    assert!(verdict(
        4,
        "full accounting",
        ok,
        &format!("{cases} corpora, {violations} violations{}", result.err().map(|e| format!(", {e}")).unwrap_or_default())
    ));
}

const FIXED_ARTICLE: &str = "# Fixed Article\n\n## Common Issues\n- issue\n\n## Tips for Resolution\n- tip one\n- tip two\n";

#[test]
fn criterion_05_compaction() {
    let tickets = corpus(120);
    let refs: Vec<&Ticket> = tickets.iter().collect();
    let mock = Arc::new(MockBackend::new());
    mock.register_mock_rule(phrases::KNOWLEDGE_SYNTHESIS, FIXED_ARTICLE, 0);
    mock.register_mock_rule(phrases::KNOWLEDGE_MERGE, FIXED_ARTICLE, 0);
    simulate::install(&mock);
    let ctx = AgentContext::new(gateway(mock, Arc::new(FakeClock::new())));
    let set = discover(&ctx, &refs, &DiscoveryConfig::default()).unwrap();
    let corpus = categorize_all(&ctx, &refs, &set);
    let kb = build_knowledge_base(&ctx, &corpus, &set, &refs, &HierarchyConfig::default(), "acceptance");

    // Independent volume: every character of title, description and comment
    // bodies plus one separator per joined field.
    let raw_chars: usize = tickets
        .iter()
        .map(|t| t.title.len() + 1 + t.description.len() + t.comments.iter().map(|c| 1 + c.body.len()).sum::<usize>())
        .sum();
    let article_chars = kb.articles.len() * (FIXED_ARTICLE.trim().len() + 1);
    let expected = article_chars as f64 / raw_chars as f64;
    let m = &kb.manifest;
    let raw_docs = build_raw_kb(&refs).documents.len();
    let structure = m.article_count == m.category_count + m.subcategory_count;
    let ok = (m.volume_ratio - expected).abs() <= 1e-9
        && structure
        && m.article_count <= 10
        && raw_docs == 120
        && m.article_count < raw_docs;
    assert!(verdict(
        5,
        "compaction",
        ok,
        &format!(
            "volume_ratio={:.6} oracle={expected:.6} articles={} categories={}+{} raw_docs={raw_docs}",
            m.volume_ratio, m.article_count, m.category_count, m.subcategory_count
        )
    ));
}

// Brute-force BM25, scoring every document from scratch.
fn brute_force(docs: &[(String, String)], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, body)| tokenize(body)).collect();
    let n = docs.len() as f64;
    let avg = toks.iter().map(|t| t.len() as f64).sum::<f64>() / n;
    let mut q: Vec<String> = Vec::new();
    for t in tokenize(query) {
        if !q.contains(&t) {
            q.push(t);
        }
    }
    let mut out = Vec::new();
    for (i, (id, _)) in docs.iter().enumerate() {
        let dl = toks[i].len() as f64;
        let mut score = 0.0;
        for term in &q {
            let df = toks.iter().filter(|t| t.contains(term)).count() as f64;
            if df == 0.0 {
                continue;
            }
            let tf = toks[i].iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let norm = if avg > 0.0 { dl / avg } else { 0.0 };
            score += idf * (tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm)));
        }
        if score > 0.0 {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

#[test]
fn criterion_06_retrieval_oracle() {
    let vocab = ["pallet", "dock", "badge", "carrier", "label", "count", "invoice", "late", "scan", "bin"];
    let word = prop::sample::select(vocab.map(String::from).to_vec());
    let doc = prop::collection::vec(word.clone(), 1..12).prop_map(|w: Vec<String>| w.join(" "));
    let strategy = (
        prop::collection::vec(doc, 1..=20),
        prop::collection::vec(word, 1..4).prop_map(|w: Vec<String>| w.join(" ")),
        1usize..25,
    );
    let mut runner = TestRunner::new(PtConfig {
        cases: 50,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let checked = Arc::new(Mutex::new(0usize));
    let result = runner.run(&strategy, |(bodies, query, k)| {
        *checked.lock().unwrap() += 1;
        let docs: Vec<(String, String)> = bodies.iter().enumerate().map(|(i, b)| (format!("d{i:02}"), b.clone())).collect();
        let p = Bm25Params::default();
        let index = SearchIndex::build(docs.iter().map(|(id, b)| Document::new(id.clone(), "", b.clone())).collect(), p).unwrap();
        let got: Vec<String> = index.retrieve(&query, k).unwrap().into_iter().map(|h| h.doc_id).collect();
        let want: Vec<String> = brute_force(&docs, &query, p.k1, p.b).into_iter().take(k).map(|(id, _)| id).collect();
        prop_assert_eq!(got, want);
        Ok(())
    });

    // Two documents, scored by hand with k1 = 1.2, b = 0.75, avgdl = 2.5.
    let index = SearchIndex::build(
        vec![
            Document::new("a", "", "apple banana apple"),
            Document::new("b", "", "banana cherry"),
        ],
        Bm25Params::default(),
    )
    .unwrap();
    let apple = index.retrieve("apple", 10).unwrap();
    let banana = index.retrieve("banana", 10).unwrap();
    let fixture_ok = apple.len() == 1
        && (apple[0].score - 0.902_321_773_509_988_1).abs() < 1e-9
        && banana.len() == 2
        && banana[0].doc_id == "b"
        && (banana[0].score - 0.198_568_032_151_831_75).abs() < 1e-9
        && (banana[1].score - 0.168_532_531_490_210_16).abs() < 1e-9;
    let n = *checked.lock().unwrap();
    let ok = result.is_ok() && fixture_ok && n >= 50;
    assert!(verdict(
        6,
        "retrieval oracle",
        ok,
        &format!("{n} random corpora, fixture_ok={fixture_ok}{}", result.err().map(|e| format!(", {e}")).unwrap_or_default())
    ));
}

// Two-sided t tail by Simpson integration of cos^(df-1) over the angle.
fn p_reference(t: f64, df: f64) -> f64 {
    let f = |th: f64| th.cos().powf(df - 1.0);
    let simpson = |lo: f64, hi: f64| {
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    simpson((t.abs() / df.sqrt()).atan(), half) / simpson(0.0, half)
}

fn rows(method: &str, scores: &[u8]) -> Vec<EvalScore> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| EvalScore {
            query_id: format!("q{i:04}"),
            run_index: 1,
            method: method.into(),
            score: Some(s),
            reasoning: String::new(),
            error: None,
        })
        .collect()
}

#[test]
fn criterion_07_statistics() {
    let r = welch_t(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let p_ref = p_reference(r.t, r.df);
    let welch_ok = r.t == -1.0 && r.df == 8.0 && (r.p - p_ref).abs() < 1e-4 && (r.p - 0.3466).abs() < 1e-4;

    let report = aggregate(&rows("m", &[5, 4, 3, 2, 1]), None);
    let pct = report.method("m").unwrap().helpful_pct;

    // 1000 answers each; the level-1 share drops from 226 to 51.
    let mut a = vec![1u8; 226];
    a.extend(std::iter::repeat_n(3u8, 774));
    let mut b = vec![1u8; 51];
    b.extend(std::iter::repeat_n(4u8, 949));
    let mut all = rows("before", &a);
    all.extend(rows("after", &b));
    let rep = aggregate(&all, None);
    let delta = distribution_delta(
        &rep.method("before").unwrap().score_distribution,
        &rep.method("after").unwrap().score_distribution,
        1,
    )
    .unwrap();
    let ok = welch_ok && pct == 0.40 && (delta - 0.774).abs() < 5e-3;
    assert!(verdict(
        7,
        "statistics",
        ok,
        &format!("t={} df={} p={:.6} ref={p_ref:.6} helpful_pct={pct} delta={delta:.4}", r.t, r.df, r.p)
    ));
}

#[test]
fn criterion_08_leak_freedom() {
    const W: usize = 20;
    let tickets = corpus(120);
    let refs: Vec<&Ticket> = tickets.iter().collect();
    let seen: Arc<Mutex<Vec<String>>> = Arc::default();
    let mock = Arc::new(MockBackend::new());
    let sink = seen.clone();
    mock.register_fn(phrases::QUERY_GENERATION, move |req| {
        sink.lock().unwrap().push(req.user_text.clone());
        Ok("How do I fix this issue at the site?".into())
    });
    let ctx = AgentContext::new(gateway(mock, Arc::new(FakeClock::new())));
    let (queries, failed) = generate_queries(&ctx, &refs);

    let windows = |s: &str| -> Vec<String> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() < W {
            return vec![];
        }
        (0..=chars.len() - W).map(|i| chars[i..i + W].iter().collect()).collect()
    };
    let comment_windows: HashSet<String> = tickets
        .iter()
        .flat_map(|t| t.comments.iter().flat_map(|c| windows(&c.body)))
        .collect();
    let prompts = seen.lock().unwrap();
    let violations: usize = prompts
        .iter()
        .map(|p| windows(p).iter().filter(|w| comment_windows.contains(*w)).count())
        .sum();
    let ok = violations == 0 && prompts.len() == 120 && queries.len() == 120 && failed.is_empty();
    assert!(verdict(
        8,
        "leak-freedom",
        ok,
        &format!("{} prompts, {} comment windows, {violations} violations", prompts.len(), comment_windows.len())
    ));
}

#[test]
fn criterion_09_gateway_contracts() {
    // Admission times never exceed the budget in any 60 s window, including
    // retries after transient failures.
    let mut runner = TestRunner::new(PtConfig {
        cases: 64,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let strategy = (
        1u32..15,
        prop::collection::vec((0u64..8_000, any::<bool>()), 1..80),
    );
    let result = runner.run(&strategy, |(rpm, schedule)| {
        let clock = Arc::new(FakeClock::new());
        let starts: Arc<Mutex<Vec<Duration>>> = Arc::default();
        let mock = Arc::new(MockBackend::new());
        let (c, s) = (clock.clone(), starts.clone());
        let flaky = Arc::new(Mutex::new(BTreeSet::new()));
        let fl = flaky.clone();
        mock.register_fn("", move |req| {
            s.lock().unwrap().push(c.now());
            if fl.lock().unwrap().remove(&req.user_text) {
                Err(BackendError::Transient("busy".into()))
            } else {
                Ok("ok".into())
            }
        });
        let gw = Gateway::with_clock(
            mock,
            GatewayConfig {
                requests_per_minute: rpm,
                cache_enabled: false,
                ..Default::default()
            },
            clock.clone(),
        )
        .unwrap();
        for (i, (gap, fail)) in schedule.iter().enumerate() {
            clock.advance(Duration::from_millis(*gap));
            let text = format!("request {i}");
            if *fail {
                flaky.lock().unwrap().insert(text.clone());
            }
            gw.complete(&kbforge::llm::ChatRequest::new("m", text)).unwrap();
        }
        let starts = starts.lock().unwrap();
        let window = Duration::from_secs(60);
        let worst = starts
            .iter()
            .map(|a| starts.iter().filter(|t| **t >= *a && **t < *a + window).count())
            .max()
            .unwrap_or(0);
        prop_assert!(worst <= rpm as usize, "rpm={rpm} worst={worst}");
        Ok(())
    });

    // Warm cache: a second identical pipeline run makes no backend calls.
    let dir = tempfile::tempdir().unwrap();
    let cfg = WorkspaceConfig {
        workspace_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let first_mock = Arc::new(simulate::scripted_backend());
    let mut ws = Workspace::with_backend(cfg.clone(), first_mock.clone()).unwrap();
    ws.compare(&METHODS, false).unwrap();
    let first_calls = first_mock.call_count();
    let first_report = std::fs::read(dir.path().join("eval/report.json")).unwrap();
    let second_mock = Arc::new(simulate::scripted_backend());
    let mut ws = Workspace::with_backend(cfg, second_mock.clone()).unwrap();
    ws.compare(&METHODS, true).unwrap();
    let second_calls = second_mock.call_count();
    let same = first_report == std::fs::read(dir.path().join("eval/report.json")).unwrap();
    let ok = result.is_ok() && first_calls > 0 && second_calls == 0 && ws.gateway().backend_calls() == 0 && same;
    assert!(verdict(
        9,
        "gateway contracts",
        ok,
        &format!(
            "limiter_ok={} cold_calls={first_calls} warm_calls={second_calls} same_report={same}",
            result.is_ok()
        )
    ));
}

#[test]
fn criterion_10_prompt_fidelity() {
    let golden = [
        (TemplateName::CategoryDiscovery, "8888becb0d93c22ca38f0034e4bb1d90a88d1858080fbb9ad9e2d27c2b81992f"),
        (TemplateName::CategoryMerge, "2aa16f16a47a56fca1591cde1af2be750ec74f8133743ae9e1e7ff60e1c51a29"),
        (TemplateName::SubcategoryDiscovery, "25b902b2eb47a392e60629dde57c7b90779cd322a48ed7ab42161c830f9d4918"),
        (TemplateName::TicketCategorization, "60b590995427b66a35f3f2acbb9fd536873913009316ba3061cffed6c6030562"),
        (TemplateName::SubcategoryCategorization, "4af29491792a57a8d51fb4dc7f9dbf7a298c97153a07be89767cec73132251ac"),
        (TemplateName::KnowledgeSynthesis, "be3924b8911fa928e47407cb6b1bfd1e666827cc9beafa39ce890530c78e4399"),
        (TemplateName::KnowledgeMerge, "b1320e57f27d46f1e3efcf91e29bbc0ca1e6460a60a15c3c6318e454ad589431"),
        (TemplateName::AnswerEvaluation, "c146c98a39b488d74fcfffc43ddd7544e723c32e5bd7708936ca7d166011e39f"),
        (TemplateName::QueryGeneration, "7400cab33e035b6698411daa1f3c43322952daa43bc6e6a21c17c45ad0877204"),
    ];
    let mismatched: Vec<&str> = golden
        .iter()
        .filter(|(t, want)| hex::encode(Sha256::digest(t.body().as_bytes())) != *want)
        .map(|(t, _)| t.as_str())
        .collect();
    let published = TemplateName::ALL.iter().filter(|t| t.is_published()).count();
    let ok = mismatched.is_empty() && published == golden.len();
    assert!(verdict(
        10,
        "prompt fidelity",
        ok,
        &format!("{} of {} checksums match; mismatched={mismatched:?}", golden.len() - mismatched.len(), golden.len())
    ));
}
