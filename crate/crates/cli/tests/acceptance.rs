//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use legalprompt::corpus::{Dataset, Instance, SplitKind};
use legalprompt::embedding::{BuiltinEmbedder, KeyMode};
use legalprompt::ensemble::{self, EnsembleConfig, PredictionTable, SearchSpace};
use legalprompt::llm::{self, ChatSettings, MockProvider, ParseStatus, RetryPolicy};
use legalprompt::metrics::{self, ConfusionMatrix};
use legalprompt::prompting::{PromptTemplate, Strategy};
use legalprompt::retrieval::{self, ExampleIndex, RetrievalConfig, RetrievalError};
use legalprompt::window;
use legalprompt::Label;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

// ---------------------------------------------------------------------------
// Metrics oracle
// ---------------------------------------------------------------------------

fn metrics_oracle() -> Outcome {
    const EXPECTED_MACRO_F1: f64 = 0.8095;
    const EXPECTED_ACCURACY: f64 = 0.8571;
    let start = Instant::now();
    let cm = ConfusionMatrix::new(57, 9, 3, 15);
    let f1 = metrics::macro_f1(&cm).map_err(|e| e.to_string())?;
    let acc = metrics::accuracy(&cm).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    // Hand-derived: F1(TRUE) = 30/42, F1(FALSE) = 114/126, accuracy = 72/84.
    let by_hand = (30.0 / 42.0 + 114.0 / 126.0) / 2.0;
    ensure!((f1 - by_hand).abs() < 1e-12, "macro F1 {f1} != hand value {by_hand}");
    ensure!((acc - 72.0 / 84.0).abs() < 1e-12, "accuracy {acc} != 72/84");
    ensure!((f1 - EXPECTED_MACRO_F1).abs() <= 0.0005, "macro F1 {f1:.4} vs expected .8095");
    ensure!((acc - EXPECTED_ACCURACY).abs() <= 0.0005, "accuracy {acc:.4} vs expected .8571");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");

    // The same numbers through the `score` subcommand on the 84-row fixture.
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scored = fixtures().join("scored");
    let start = Instant::now();
    let run = Command::new(env!("CARGO_BIN_EXE_legalprompt"))
        .arg("--output-dir")
        .arg(out.path())
        .arg("score")
        .arg("--predictions")
        .arg(scored.join("ensemble.jsonl"))
        .arg("--gold")
        .arg(scored.join("gold.jsonl"))
        .output()
        .map_err(|e| e.to_string())?;
    let cli_elapsed = start.elapsed();
    ensure!(run.status.success(), "score failed: {}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    ensure!(stdout.contains(".8095") && stdout.contains(".8571"), "score output:\n{stdout}");
    ensure!(cli_elapsed < Duration::from_secs(1), "score subcommand took {cli_elapsed:?}");
    Ok(format!(
        "macro F1 {f1:.4}, accuracy {acc:.4}, library {elapsed:?}, cli {cli_elapsed:?}"
    ))
}

// ---------------------------------------------------------------------------
// Golden mock run
// ---------------------------------------------------------------------------

fn run_pipeline(out: &Path, jobs: usize) -> Result<(), String> {
    let config = fixtures().join("corpus").join("run.toml");
    let steps: [&[&str]; 6] = [
        &["build-index"],
        &["predict-all"],
        &["ensemble-vote"],
        &["ensemble-search"],
        &["baseline-windows"],
        &["report"],
    ];
    for step in steps {
        let run = Command::new(env!("CARGO_BIN_EXE_legalprompt"))
            .arg("--config")
            .arg(&config)
            .arg("--output-dir")
            .arg(out)
            .arg("--jobs")
            .arg(jobs.to_string())
            .args(step)
            .output()
            .map_err(|e| e.to_string())?;
        if !run.status.success() {
            return Err(format!("{step:?} failed: {}", String::from_utf8_lossy(&run.stderr)));
        }
    }
    Ok(())
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("readable output dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                files.insert(rel, fs::read(&path).expect("readable output file"));
            }
        }
    }
    files
}

fn golden_mock_run() -> Outcome {
    let mut runs = Vec::new();
    for jobs in [1, 1, 1, 4] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        run_pipeline(dir.path(), jobs)?;
        runs.push((jobs, snapshot(dir.path())));
    }
    let (_, reference) = &runs[0];
    let predictions = reference
        .keys()
        .filter(|p| p.starts_with("predictions"))
        .count();
    ensure!(predictions == 8, "expected 8 prediction files, found {predictions}");
    ensure!(
        reference.contains_key(Path::new("report/validation/scores.jsonl")),
        "report missing"
    );
    for (i, (jobs, files)) in runs.iter().enumerate().skip(1) {
        ensure!(
            files.keys().eq(reference.keys()),
            "run {i} (--jobs {jobs}) produced a different file set"
        );
        for (path, bytes) in files {
            ensure!(
                &reference[path] == bytes,
                "run {i} (--jobs {jobs}): {} differs",
                path.display()
            );
        }
    }
    Ok(format!(
        "{} files byte-identical across 3 runs at --jobs 1 and one at --jobs 4",
        reference.len()
    ))
}

// ---------------------------------------------------------------------------
// Retrieval equivalence
// ---------------------------------------------------------------------------

const VOCAB: &[&str] = &[
    "court", "federal", "state", "diversity", "jurisdiction", "claim", "removal", "service", "process",
    "plaintiff", "defendant", "contract", "negligence", "venue", "amount", "controversy", "citizen",
    "corporation", "preclusion", "summary", "judgment", "discovery", "pleading", "amendment", "joinder",
];

fn random_text(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| *VOCAB.choose(rng).expect("non-empty vocabulary"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_corpus(rng: &mut ChaCha8Rng, size: usize) -> Dataset {
    // A small pool of texts guarantees exact duplicates, hence exact score ties.
    let pool: Vec<(String, String, String)> = (0..(size / 3).max(2))
        .map(|_| {
            let intro = random_text(rng, 12);
            let q = random_text(rng, 5);
            let a = random_text(rng, 6);
            (intro, q, a)
        })
        .collect();
    let mut instances: Vec<Instance> = (0..size)
        .map(|i| {
            let (intro, q, a) = if rng.random_bool(0.4) {
                pool.choose(rng).expect("non-empty pool").clone()
            } else {
                (random_text(rng, 12), random_text(rng, 5), random_text(rng, 6))
            };
            Instance {
                id: format!("c{:04}", rng.random_range(0..10_000) * 1000 + i),
                introduction: intro,
                question: q,
                answer_candidate: a,
                analysis: Some("a".into()),
                label: Some(Label::from(rng.random_bool(0.35))),
            }
        })
        .collect();
    instances[0].label = Some(Label::True);
    instances[1].label = Some(Label::False);
    instances.shuffle(rng);
    Dataset::new(SplitKind::Train, instances).expect("valid corpus")
}

/// Independent linear scan over the stored vectors.
fn brute_force(
    index: &ExampleIndex,
    query: &[f64],
    exclude: &BTreeSet<String>,
    k: usize,
) -> Option<BTreeMap<Label, Vec<(String, f64)>>> {
    let mut out = BTreeMap::new();
    for label in [Label::False, Label::True] {
        let mut scored = Vec::new();
        for entry in index.entries() {
            if entry.label != label || exclude.contains(&entry.id) {
                continue;
            }
            let mut dot = 0.0;
            for (x, y) in entry.vector.values().iter().zip(query) {
                dot += x * y;
            }
            scored.push((entry.id.clone(), dot));
        }
        if scored.len() < k {
            return None;
        }
        // Selection by repeated maximum instead of a sort.
        let mut chosen = Vec::new();
        for _ in 0..k {
            let mut best = 0;
            for (j, (id, s)) in scored.iter().enumerate() {
                let (bid, bs) = &scored[best];
                if s > bs || (s == bs && id < bid) {
                    best = j;
                }
            }
            chosen.push(scored.swap_remove(best));
        }
        out.insert(label, chosen);
    }
    Some(out)
}

fn retrieval_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let embedder = BuiltinEmbedder::new(256, 512).map_err(|e| e.to_string())?;
    let (mut queries, mut ties, mut shortfalls) = (0usize, 0usize, 0usize);
    for corpus_no in 0..200 {
        let size = rng.random_range(10..=200);
        let train = random_corpus(&mut rng, size);
        let index = retrieval::build_index(&train, &embedder, KeyMode::Triplet).map_err(|e| e.to_string())?;
        for query in train.instances() {
            let k = rng.random_range(1..=4);
            let mut exclude_ids = BTreeSet::new();
            if rng.random_bool(0.3) {
                let other = train.instances().choose(&mut rng).expect("non-empty");
                exclude_ids.insert(other.id.clone());
            }
            let config = RetrievalConfig {
                per_class_k: k,
                exclude_ids: exclude_ids.clone(),
                ..RetrievalConfig::default()
            };
            let qv = retrieval::embed_instance(&embedder, query, KeyMode::Triplet).map_err(|e| e.to_string())?;
            let mut oracle_exclude = exclude_ids;
            oracle_exclude.insert(query.id.clone());
            let expected = brute_force(&index, qv.values(), &oracle_exclude, k);
            let got = retrieval::retrieve(&index, &qv, &query.id, &config);
            queries += 1;
            match (expected, got) {
                (None, Err(RetrievalError::InsufficientCandidates { .. })) => shortfalls += 1,
                (Some(expected), Ok(got)) => {
                    for (label, want) in &expected {
                        let have = got.class(*label);
                        let have: Vec<(String, f64)> = have.iter().map(|s| (s.id.clone(), s.score)).collect();
                        ensure!(
                            &have == want,
                            "corpus {corpus_no} query {} {label}: {have:?} != {want:?}",
                            query.id
                        );
                        if want.windows(2).any(|w| w[0].1 == w[1].1) {
                            ties += 1;
                        }
                    }
                    ensure!(
                        got.per_class.values().flatten().all(|s| s.id != query.id),
                        "self returned for {}",
                        query.id
                    );
                }
                (e, g) => return Err(format!("corpus {corpus_no} query {}: oracle {e:?}, retrieve {g:?}", query.id)),
            }
        }
    }

    // Constructed tie: identical exemplars are ranked by ascending id.
    let twin = |id: &str, label| Instance {
        id: id.into(),
        introduction: "removal of a diversity case".into(),
        question: "is it timely".into(),
        answer_candidate: "yes".into(),
        analysis: Some("a".into()),
        label: Some(label),
    };
    let train = Dataset::new(
        SplitKind::Train,
        vec![twin("z9", Label::True), twin("a1", Label::True), twin("m5", Label::False)],
    )
    .map_err(|e| e.to_string())?;
    let index = retrieval::build_index(&train, &embedder, KeyMode::Triplet).map_err(|e| e.to_string())?;
    let qv = retrieval::embed_instance(&embedder, &twin("q", Label::True), KeyMode::Triplet).map_err(|e| e.to_string())?;
    let got = retrieval::retrieve(&index, &qv, "q", &RetrievalConfig::default()).map_err(|e| e.to_string())?;
    ensure!(got.class(Label::True)[0].id == "a1", "constructed tie went to {}", got.class(Label::True)[0].id);
    ensure!(ties > 0, "no tie cases were exercised");
    Ok(format!(
        "200 corpora, {queries} queries ({ties} with tied scores, {shortfalls} quota shortfalls) match the scan"
    ))
}

// ---------------------------------------------------------------------------
// Ensemble search equivalence
// ---------------------------------------------------------------------------

struct Ranked {
    members: Vec<Strategy>,
    tenth: u32,
    f1: f64,
    acc: f64,
    exact_f1: (i128, i128),
    correct: usize,
}

fn enumerate_subsets(pool: &[Strategy], start: usize, current: &mut Vec<Strategy>, out: &mut Vec<Vec<Strategy>>) {
    for i in start..pool.len() {
        current.push(pool[i]);
        out.push(current.clone());
        enumerate_subsets(pool, i + 1, current, out);
        current.pop();
    }
}

/// Macro F1 and accuracy as floats, plus the class-F1 sum as an exact
/// fraction for ranking.
fn oracle_f1(gold: &[bool], pred: &[bool]) -> (f64, f64, (i128, i128)) {
    let (mut tp, mut tn, mut fp, mut fn_) = (0i128, 0i128, 0i128, 0i128);
    for (g, p) in gold.iter().zip(pred) {
        match (g, p) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
        }
    }
    let frac = |hit: i128, wrong: i128| if 2 * hit + wrong == 0 { (0, 1) } else { (2 * hit, 2 * hit + wrong) };
    let (a, b) = frac(tp, fp + fn_);
    let (c, d) = frac(tn, fp + fn_);
    let exact = (a * d + c * b, b * d);
    let f1 = (a as f64 / b as f64 + c as f64 / d as f64) / 2.0;
    (f1, (tp + tn) as f64 / gold.len() as f64, exact)
}

fn oracle_search(sets: &BTreeMap<Strategy, Vec<bool>>, gold: &[bool]) -> Vec<Ranked> {
    let pool: Vec<Strategy> = sets.keys().copied().collect();
    let mut subsets = Vec::new();
    enumerate_subsets(&pool, 0, &mut Vec::new(), &mut subsets);
    let mut out = Vec::new();
    for members in subsets {
        for tenth in 1..=9u32 {
            let m = members.len() as u32;
            let pred: Vec<bool> = (0..gold.len())
                .map(|row| {
                    let trues = members.iter().filter(|s| sets[s][row]).count() as u32;
                    10 * trues >= tenth * m
                })
                .collect();
            let (f1, acc, exact_f1) = oracle_f1(gold, &pred);
            let correct = gold.iter().zip(&pred).filter(|(g, p)| g == p).count();
            out.push(Ranked {
                members: members.clone(),
                tenth,
                f1,
                acc,
                exact_f1,
                correct,
            });
        }
    }
    out.sort_by(|a, b| {
        (b.exact_f1.0 * a.exact_f1.1)
            .cmp(&(a.exact_f1.0 * b.exact_f1.1))
            .then(b.correct.cmp(&a.correct))
            .then(a.members.len().cmp(&b.members.len()))
            .then(a.tenth.cmp(&b.tenth))
            .then(a.members.cmp(&b.members))
    });
    out
}

fn ensemble_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut compared = 0usize;
    let mut improved = 0usize;
    for problem in 0..100 {
        let n = rng.random_range(4..=60);
        let gold: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let n_sets = rng.random_range(1..=5);
        let mut pool = Strategy::ALL.to_vec();
        pool.shuffle(&mut rng);
        let mut sets = BTreeMap::new();
        for s in pool.into_iter().take(n_sets) {
            let accuracy = rng.random_range(0.4..0.9);
            let labels: Vec<bool> = gold.iter().map(|g| if rng.random_bool(accuracy) { *g } else { !g }).collect();
            sets.insert(s, labels);
        }
        let ids: Vec<String> = (0..n).map(|i| format!("p{i:03}")).collect();
        let table = PredictionTable::new(
            sets.iter()
                .map(|(s, l)| (*s, ids.iter().cloned().zip(l.iter().map(|b| Label::from(*b))).collect()))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let gold_rows: Vec<(String, Label)> = ids.iter().cloned().zip(gold.iter().map(|b| Label::from(*b))).collect();
        let got = ensemble::search(&table, &gold_rows, &SearchSpace::default()).map_err(|e| e.to_string())?;
        let want = oracle_search(&sets, &gold);
        ensure!(got.len() == want.len(), "problem {problem}: {} vs {} results", got.len(), want.len());
        for (rank, (g, w)) in got.iter().zip(&want).enumerate() {
            let threshold = f64::from(w.tenth) / 10.0;
            ensure!(
                g.config.members == w.members && g.config.threshold == threshold,
                "problem {problem} rank {rank}: {} vs {:?}@{threshold}",
                g.config.describe(),
                w.members
            );
            ensure!(
                (g.macro_f1 - w.f1).abs() < 1e-12 && (g.accuracy - w.acc).abs() < 1e-12,
                "problem {problem} rank {rank}: scores differ"
            );
            compared += 1;
        }
        let best_single = got
            .iter()
            .filter(|r| r.config.members.len() == 1)
            .map(|r| r.macro_f1)
            .fold(f64::MIN, f64::max);
        ensure!(got[0].macro_f1 >= best_single, "problem {problem}: best below best singleton");
        if got[0].macro_f1 > best_single {
            improved += 1;
        }
    }
    Ok(format!(
        "100 problems, {compared} ranked configurations identical; best beat the best singleton in {improved}"
    ))
}

// ---------------------------------------------------------------------------
// Window planner
// ---------------------------------------------------------------------------

fn window_planner() -> Outcome {
    let p = window::plan_windows(500, 112, 512).map_err(|e| e.to_string())?;
    ensure!(
        p.capacity_words == 200 && p.num_windows == 3 && p.window_sizes == [167, 167, 166],
        "worked example gave {p:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    for case in 0..1000 {
        let intro = rng.random_range(1..=5000usize);
        let qa = rng.random_range(1..=400usize);
        let plan = window::plan_windows(intro, qa, 512).map_err(|e| format!("case {case}: {e}"))?;
        let capacity = (512 - qa) / 2;
        ensure!(plan.capacity_words == capacity, "case {case}: capacity {}", plan.capacity_words);
        ensure!(plan.num_windows == intro / capacity + usize::from(intro % capacity != 0), "case {case}: window count");
        let max = *plan.window_sizes.iter().max().unwrap();
        let min = *plan.window_sizes.iter().min().unwrap();
        ensure!(max - min <= 1, "case {case}: spread {}", max - min);
        ensure!(max <= capacity && max + qa <= 512, "case {case}: window {max} over capacity {capacity}");
        let words: Vec<String> = (0..intro).map(|i| format!("w{i}")).collect();
        let text = words.join(if case % 2 == 0 { " " } else { " \n\t" });
        let windows = window::split_introduction(&text, &plan).map_err(|e| e.to_string())?;
        ensure!(windows.join(" ") == words.join(" "), "case {case}: reconstruction failed");
    }
    Ok("1000 random plans reconstruct, spread <= 1, within capacity; (500, 112) -> [167, 167, 166]".into())
}

// ---------------------------------------------------------------------------
// Parser corpus and retry protocol
// ---------------------------------------------------------------------------

fn parser_corpus() -> Outcome {
    use Label::{False as F, True as T};
    let corpus: &[(&str, Option<Label>)] = &[
        ("TRUE", Some(T)),
        ("FALSE", Some(F)),
        ("true", Some(T)),
        ("Label: TRUE", Some(T)),
        ("Label: FALSE", Some(F)),
        ("label:false", Some(F)),
        ("**Label:** TRUE", Some(T)),
        ("Label: `FALSE`", Some(F)),
        ("Analysis: The rule requires complete diversity, which is absent.\nLabel: FALSE", Some(F)),
        ("The answer correctly applies the thirty-day rule.\n\nLabel: TRUE", Some(T)),
        ("Analysis: ... Label: TRUE", Some(T)),
        ("The claim is TRUE in part, but ultimately FALSE", Some(F)),
        ("FALSE at first glance, but on reflection TRUE", Some(T)),
        ("Label: TRUE\nNote: answering FALSE would be wrong.", Some(T)),
        ("Label: FALSE. Some might say TRUE.", Some(F)),
        ("Label: TRUE ... correction, Label: FALSE", Some(F)),
        ("The statement is true.", Some(T)),
        ("The candidate cannot be evaluated.", None),
        ("", None),
        ("I am unable to reach a verdict on this answer candidate.", None),
        ("The answer is untrue.", None),
        ("Falsehoods abound; nothing is truthful here.", None),
        ("Label:", None),
        ("Label: maybe", None),
    ];
    let mut failures = Vec::new();
    for (text, want) in corpus {
        let got = llm::parse_label(text).map(|m| m.label);
        if got != *want {
            failures.push(format!("{text:?}: got {got:?}, want {want:?}"));
        }
    }
    ensure!(failures.is_empty(), "{} disagreements: {failures:?}", failures.len());

    let test = Instance {
        id: "v1".into(),
        introduction: "Louisa sues Odis in federal court.".into(),
        question: "Is there jurisdiction?".into(),
        answer_candidate: "Yes.".into(),
        analysis: None,
        label: None,
    };
    let policy = RetryPolicy::default();
    let limit = policy.retry_limit;
    let run = |responses: Vec<&str>| {
        let mock = MockProvider::sequence(responses);
        llm::classify_instance(
            &mock,
            Strategy::ZeroShot,
            &PromptTemplate::default(),
            &test,
            &[],
            &ChatSettings::default(),
            &policy,
        )
        .map_err(|e| e.to_string())
    };
    let p = run(vec!["Label: TRUE"])?;
    ensure!(
        (p.label, p.retries_used, p.parse_status) == (T, 0, ParseStatus::Clean),
        "0 retries: {p:?}"
    );
    let p = run(vec!["no verdict", "TRUE"])?;
    ensure!(
        (p.label, p.retries_used, p.parse_status) == (T, 1, ParseStatus::Recovered),
        "1 retry: {p:?}"
    );
    let mut at_limit = vec!["still thinking"; limit as usize];
    at_limit.push("Label: TRUE");
    let p = run(at_limit)?;
    ensure!(
        (p.label, p.retries_used, p.parse_status) == (T, limit, ParseStatus::Recovered),
        "recovery on the last retry: {p:?}"
    );
    let p = run(vec!["nothing"; limit as usize + 1])?;
    ensure!(
        (p.label, p.retries_used, p.parse_status) == (F, limit, ParseStatus::Defaulted),
        "exhausted retries: {p:?}"
    );
    Ok(format!(
        "{} curated strings agree; retries 0, 1 and {limit} behave, exhaustion defaults to FALSE",
        corpus.len()
    ))
}

// ---------------------------------------------------------------------------
// Vote properties
// ---------------------------------------------------------------------------

fn vote_properties() -> Outcome {
    let grid = ensemble::default_threshold_grid();
    let mut checked = 0usize;
    for m in 1..=6usize {
        let members = &Strategy::ALL[..m];
        for &t in &grid {
            let config = EnsembleConfig::new(members.iter().copied(), t).map_err(|e| e.to_string())?;
            for mask in 0u32..(1 << m) {
                let votes = |mask: u32| -> HashMap<Strategy, Label> {
                    members
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (*s, Label::from(mask & (1 << i) != 0)))
                        .collect()
                };
                let before = ensemble::vote("x", &votes(mask), &config).map_err(|e| e.to_string())?;
                for i in 0..m {
                    if mask & (1 << i) != 0 {
                        continue;
                    }
                    let after = ensemble::vote("x", &votes(mask | (1 << i)), &config).map_err(|e| e.to_string())?;
                    ensure!(
                        !(before.label.is_true() && !after.label.is_true()),
                        "m={m} t={t} mask={mask:b}: flipping member {i} to TRUE turned the vote FALSE"
                    );
                    ensure!(after.true_fraction > before.true_fraction, "fraction did not grow");
                    checked += 1;
                }
            }
        }
    }
    let four = EnsembleConfig::default();
    let tie: HashMap<Strategy, Label> = four
        .members
        .iter()
        .copied()
        .zip([Label::True, Label::True, Label::False, Label::False])
        .collect();
    let v = ensemble::vote("x", &tie, &four).map_err(|e| e.to_string())?;
    ensure!(v.true_fraction == 0.5 && v.label == Label::True, "tie gave {v:?}");
    Ok(format!("{checked} single-vote flips monotone; [T,T,F,F]@0.5 -> TRUE"))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 7] = [
        ("metrics oracle", metrics_oracle),
        ("golden mock run", golden_mock_run),
        ("retrieval equivalence", retrieval_equivalence),
        ("ensemble search equivalence", ensemble_equivalence),
        ("window planner properties", window_planner),
        ("parser corpus and retry protocol", parser_corpus),
        ("vote properties", vote_properties),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                Err(p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()))
            });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
