//! Acceptance suite for the engine library: one test per criterion, each
//! printing a single `ACCEPT-n <label>: PASS` line when it holds (run with
//! `--nocapture` to see the lines).
//!
//! Every check compares the library against an oracle that was written
//! independently of the implementation: brute-force scoring instead of an
//! inverted index, hand-counted token overlap instead of hash-map budgets,
//! literal transcript bytes instead of shared rendering helpers.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use queryloop_core::corpus::Corpus;
use queryloop_core::grpo::{
    group_advantages, grpo_objective, kl_estimate, GroupTrace, GrpoParams, TokenTrace,
};
use queryloop_core::policy::ScriptedPolicy;
use queryloop_core::protocol::{
    extract_queries, parse_information, render_information, ProtocolError,
};
use queryloop_core::rewards::{
    em_contains, em_strict, normalize_answer, score_trajectory, token_f1, GoldAnswerSet,
};
use queryloop_core::rollout::{initial_prompt, run_episode, RolloutConfig, RETRY_PROMPT};
use queryloop_core::{
    Bm25Params, Document, InformationBlock, Passage, Retriever, Termination, Trajectory,
};

/// Runs `body`, then prints exactly one PASS/FAIL line for the criterion.
fn criterion(label: &str, body: impl FnOnce()) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("{label}: PASS"),
        Err(payload) => {
            println!("{label}: FAIL");
            resume_unwind(payload);
        }
    }
}

// =====================================================================
// Criterion 1: ranked retrieval matches a brute-force scorer
// =====================================================================

/// Brute-force BM25 oracle: re-tokenizes every document on every call and
/// scans the whole collection per query term. No postings, no caching, no
/// shared code with the index under test.
mod bm25_oracle {
    pub fn tokenize(text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut current = String::new();
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                current.extend(ch.to_lowercase());
            } else if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
    }

    /// Returns `(ordinal, score)` for every positive-scoring document,
    /// best-first, ties broken by ordinal, truncated to `k`.
    pub fn rank(texts: &[&str], query: &str, k: usize, k1: f64, b: f64) -> Vec<(usize, f64)> {
        let token_lists: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let n = texts.len() as f64;
        let total_len: usize = token_lists.iter().map(Vec::len).sum();
        let avg_len = total_len as f64 / texts.len() as f64;
        let query_tokens = tokenize(query);

        let mut scored = Vec::new();
        for (ordinal, tokens) in token_lists.iter().enumerate() {
            let mut score = 0.0;
            for term in &query_tokens {
                let tf = tokens.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = token_lists.iter().filter(|list| list.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = tf + k1 * (1.0 - b + b * tokens.len() as f64 / avg_len);
                score += idf * tf * (k1 + 1.0) / norm;
            }
            if score > 0.0 {
                scored.push((ordinal, score));
            }
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(3..=8);
    (0..len)
        .map(|_| (b'a' + rng.gen_range(0..26u8)) as char)
        .collect()
}

/// Occasionally re-cases or punctuates a token; the tokenizer must see
/// through both.
fn decorate(word: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..6) {
        0 => word.to_uppercase(),
        1 => format!("{word},"),
        2 => format!("({word})"),
        _ => word.to_string(),
    }
}

#[test]
fn accept_1_bm25_matches_brute_force_oracle() {
    criterion("ACCEPT-1 bm25 ranking matches brute-force oracle", || {
        let mut compared = 0usize;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vocab: Vec<String> = (0..30).map(|_| random_word(&mut rng)).collect();

            let doc_count = rng.gen_range(1..=100);
            let documents: Vec<Document> = (0..doc_count)
                .map(|i| {
                    let len = rng.gen_range(1..=40);
                    let text = (0..len)
                        .map(|_| {
                            let word = &vocab[rng.gen_range(0..vocab.len())];
                            decorate(word, &mut rng)
                        })
                        .collect::<Vec<_>>()
                        .join(" ");
                    // Titles deliberately reuse query vocabulary: if the
                    // index ever scored them, the oracle would disagree.
                    let title = format!(
                        "{} {}",
                        vocab[rng.gen_range(0..vocab.len())],
                        vocab[rng.gen_range(0..vocab.len())]
                    );
                    Document {
                        id: format!("doc{i}"),
                        title,
                        text,
                    }
                })
                .collect();

            let texts: Vec<&str> = documents.iter().map(|d| d.text.as_str()).collect();
            let corpus = Corpus::from_documents(documents.clone()).unwrap();
            let retriever =
                queryloop_core::retriever::Bm25Retriever::from_corpus(corpus, Bm25Params::default())
                    .unwrap();

            let query_count = rng.gen_range(1..=30);
            for _ in 0..query_count {
                let terms = rng.gen_range(1..=4);
                let query = (0..terms)
                    .map(|_| {
                        if rng.gen_bool(0.1) {
                            "zzznothere".to_string()
                        } else {
                            decorate(&vocab[rng.gen_range(0..vocab.len())], &mut rng)
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ");
                let k = rng.gen_range(1..=12);

                let got = retriever.retrieve(&query, k).unwrap();
                let want = bm25_oracle::rank(&texts, &query, k, 1.2, 0.75);

                assert_eq!(
                    got.len(),
                    want.len(),
                    "seed {seed} query {query:?} k {k}: result count"
                );
                for (hit, (ordinal, score)) in got.iter().zip(&want) {
                    assert_eq!(
                        hit.doc_id,
                        format!("doc{ordinal}"),
                        "seed {seed} query {query:?}: ranking order"
                    );
                    assert!(
                        (hit.score - score).abs() <= 1e-9,
                        "seed {seed} query {query:?} doc {}: score {} vs oracle {score}",
                        hit.doc_id,
                        hit.score
                    );
                    assert_eq!(hit.text, documents[*ordinal].text);
                    assert_eq!(hit.title, documents[*ordinal].title);
                }
                compared += 1;
            }
        }
        assert!(compared >= 100, "expected a substantial query sample, ran {compared}");
    });
}

// =====================================================================
// Criterion 2: answer metrics match a hand-counted reference
// =====================================================================

/// Reference metrics built on explicit token lists and a linear-scan overlap
/// pool — no shared normalization, hashing, or substring helpers.
mod metric_reference {
    pub fn tokens(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut word = String::new();
        for raw in text.chars() {
            for ch in raw.to_lowercase() {
                if ch.is_ascii_punctuation() {
                    continue;
                }
                if ch.is_whitespace() {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                } else {
                    word.push(ch);
                }
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
        out.retain(|w| w != "a" && w != "an" && w != "the");
        out
    }

    pub fn em_strict(pred: &str, golds: &[&str]) -> bool {
        let p = tokens(pred);
        golds.iter().any(|g| tokens(g) == p)
    }

    pub fn em_contains(pred: &str, golds: &[&str]) -> bool {
        let p: Vec<char> = tokens(pred).join(" ").chars().collect();
        golds.iter().any(|g| {
            let needle: Vec<char> = tokens(g).join(" ").chars().collect();
            if needle.is_empty() {
                return true;
            }
            if needle.len() > p.len() {
                return false;
            }
            (0..=p.len() - needle.len()).any(|i| p[i..i + needle.len()] == needle[..])
        })
    }

    pub fn token_f1(pred: &str, golds: &[&str]) -> f64 {
        let p = tokens(pred);
        golds
            .iter()
            .map(|g| f1_pair(&p, &tokens(g)))
            .fold(0.0, f64::max)
    }

    fn f1_pair(pred: &[String], gold: &[String]) -> f64 {
        if pred.is_empty() && gold.is_empty() {
            return 1.0;
        }
        if pred.is_empty() || gold.is_empty() {
            return 0.0;
        }
        let mut pool: Vec<&String> = gold.iter().collect();
        let mut overlap = 0usize;
        for token in pred {
            if let Some(at) = pool.iter().position(|g| *g == token) {
                pool.swap_remove(at);
                overlap += 1;
            }
        }
        if overlap == 0 {
            return 0.0;
        }
        let precision = overlap as f64 / pred.len() as f64;
        let recall = overlap as f64 / gold.len() as f64;
        2.0 * precision * recall / (precision + recall)
    }
}

/// Prediction/gold pairs chosen to cover casing, punctuation deletion,
/// article removal, unicode, token clipping, multi-gold selection, bag-of-
/// words F1, and substring containment across token boundaries.
const METRIC_CASES: &[(&str, &[&str])] = &[
    ("Paris", &["Paris"]),
    ("paris", &["Paris"]),
    ("PARIS.", &["paris"]),
    ("the Eiffel Tower", &["Eiffel Tower"]),
    ("An Apple", &["apple"]),
    ("A a the an apple", &["apple"]),
    ("city of Paris France", &["Paris"]),
    ("xab cx", &["b c"]),
    ("barack obama", &["obama"]),
    ("Barack Obama", &["Barack Hussein Obama", "Obama"]),
    ("obama obama obama", &["obama"]),
    ("red", &["blue"]),
    ("", &["anything"]),
    (".,!?", &["anything"]),
    ("Zürich", &["zürich"]),
    ("naïve", &["naïve"]),
    ("42", &["42"]),
    ("state-of-the-art", &["stateoftheart"]),
    ("Newton's laws", &["newtons laws"]),
    ("  spaced   out  ", &["spaced out"]),
    ("line\none", &["line one"]),
    ("tab\there", &["tab here"]),
    ("sunny sunny", &["sunny sunny day"]),
    ("alpha beta gamma", &["beta"]),
    ("beta", &["alpha beta gamma"]),
    ("the the the cat", &["cat"]),
    ("cat!", &["cat?"]),
    ("Mt. Everest", &["Mt Everest"]),
    ("U.S.A.", &["USA"]),
    ("rock and roll", &["rock & roll"]),
    ("one two three four", &["two three"]),
    ("twothree", &["two three"]),
    ("apple pie", &["apple pie", "apple tart"]),
    ("apple tart", &["apple pie", "apple tart"]),
    ("apple crumble", &["apple pie", "apple tart"]),
    ("An", &["n"]),
    ("7 wonders", &["the 7 wonders of the world"]),
    ("Einstein, Albert", &["albert einstein"]),
    ("color", &["colour"]),
    ("über-cool", &["übercool"]),
    ("Æther", &["æther"]),
    ("10,000", &["10000"]),
    ("π day", &["π day"]),
    ("semi;colon", &["semicolon"]),
    ("under_score", &["underscore"]),
    ("slash/test", &["slashtest"]),
    ("quote \"inner\" done", &["quote inner done"]),
    ("a b c d e", &["b d"]),
    ("yes", &["yes", "yeah", "yep"]),
    ("yeah right", &["yes", "yeah", "yep"]),
    ("Go", &["go"]),
    ("don't stop", &["dont stop"]),
];

#[test]
fn accept_2_metrics_match_reference_table() {
    criterion("ACCEPT-2 answer metrics match hand-counted reference", || {
        assert!(METRIC_CASES.len() >= 50);
        for (pred, golds) in METRIC_CASES {
            let set = GoldAnswerSet::new(golds.iter().map(|g| g.to_string()).collect())
                .unwrap_or_else(|e| panic!("gold set {golds:?}: {e}"));

            let strict = em_strict(pred, &set);
            let contains = em_contains(pred, &set);
            let f1 = token_f1(pred, &set);

            assert_eq!(
                strict,
                metric_reference::em_strict(pred, golds),
                "em_strict({pred:?}, {golds:?})"
            );
            assert_eq!(
                contains,
                metric_reference::em_contains(pred, golds),
                "em_contains({pred:?}, {golds:?})"
            );
            let ref_f1 = metric_reference::token_f1(pred, golds);
            assert!(
                f1.to_bits() == ref_f1.to_bits(),
                "token_f1({pred:?}, {golds:?}) = {f1} vs reference {ref_f1}"
            );
        }

        // Frozen spot values, independent of both implementations.
        let obama = GoldAnswerSet::new(vec!["obama".into()]).unwrap();
        assert_eq!(token_f1("barack obama", &obama), 2.0 / 3.0);
        let swapped = GoldAnswerSet::new(vec!["albert einstein".into()]).unwrap();
        assert_eq!(token_f1("Einstein, Albert", &swapped), 1.0);
        assert!(!em_strict("Einstein, Albert", &swapped));
        let day = GoldAnswerSet::new(vec!["sunny sunny day".into()]).unwrap();
        assert!((token_f1("sunny sunny", &day) - 0.8).abs() <= 1e-12);
    });
}

// =====================================================================
// Criterion 3: golden episode transcripts, byte for byte
// =====================================================================

fn toy_corpus() -> Corpus {
    Corpus::from_documents(vec![
        Document {
            id: "d0".into(),
            title: "Fruit Pair".into(),
            text: "apple banana".into(),
        },
        Document {
            id: "d1".into(),
            title: "Apples".into(),
            text: "apple apple".into(),
        },
        Document {
            id: "d2".into(),
            title: "Cherries".into(),
            text: "cherry".into(),
        },
    ])
    .unwrap()
}

fn toy_retriever() -> queryloop_core::retriever::Bm25Retriever {
    queryloop_core::retriever::Bm25Retriever::from_corpus(toy_corpus(), Bm25Params::default())
        .unwrap()
}

fn run_script(
    question: &str,
    steps: &[&str],
    config: &RolloutConfig,
) -> Trajectory {
    let policy = ScriptedPolicy::sequence(steps.iter().copied());
    run_episode(question, &policy, &toy_retriever(), config).unwrap()
}

#[test]
fn accept_3_golden_transcripts_are_byte_exact() {
    criterion("ACCEPT-3 golden episode transcripts byte-exact", || {
        let defaults = RolloutConfig::default();

        // --- 1: search then answer ---
        let q = "Which fruit appears twice in one document?";
        let t = run_script(
            q,
            &[
                "<plan>Find apple docs.</plan>\n<search><query>apple</query></search>",
                "<reflection>Doc 1 repeats apple.</reflection>\n<plan>Answer now.</plan>\n<answer>apple</answer>",
            ],
            &defaults,
        );
        let expected = initial_prompt(q)
            + "<plan>Find apple docs.</plan>\n<search><query>apple</query></search>"
            + "\n<information>\nDoc 1 (Title: \"Apples\")\napple apple\n</information>\n"
            + "<reflection>Doc 1 repeats apple.</reflection>\n<plan>Answer now.</plan>\n<answer>apple</answer>";
        assert_eq!(t.full_text, expected, "search-then-answer transcript");
        assert_eq!(t.termination, Termination::Answered);
        assert_eq!(t.agent_answer.as_deref(), Some("apple"));
        assert_eq!(
            t.info_set,
            vec![Passage {
                doc_id: "d1".into(),
                title: "Apples".into(),
                text: "apple apple".into(),
            }]
        );
        assert_eq!(t.turns.len(), 2);
        assert_eq!(t.turns[0].search_queries, vec!["apple"]);
        assert_eq!(
            t.turns[0].reflection_text.as_deref(),
            Some("Doc 1 repeats apple.")
        );

        // --- 2: malformed segment draws the retry prompt ---
        let q = "What fruit fills the second document?";
        let t = run_script(
            q,
            &[
                "<plan>thinking but never closing",
                "<plan>Recover.</plan>\n<answer>apple</answer>",
            ],
            &defaults,
        );
        let expected = initial_prompt(q)
            + "<plan>thinking but never closing"
            + "\nYour previous output had invalid format. Continue, using <search>...</search> or <answer>...</answer>.\n"
            + "<plan>Recover.</plan>\n<answer>apple</answer>";
        assert_eq!(t.full_text, expected, "retry transcript");
        assert_eq!(
            format!("\n{RETRY_PROMPT}\n"),
            "\nYour previous output had invalid format. Continue, using <search>...</search> or <answer>...</answer>.\n"
        );
        assert_eq!(t.termination, Termination::Answered);
        assert!(t.info_set.is_empty());

        // --- 3: a one-round budget ends after the first search ---
        let q = "Which document mentions apples?";
        let tight = RolloutConfig {
            max_turns: 1,
            ..RolloutConfig::default()
        };
        let t = run_script(
            q,
            &[
                "<plan>Find apple docs.</plan>\n<search><query>apple</query></search>",
                "<plan>never reached</plan>\n<answer>apple</answer>",
            ],
            &tight,
        );
        let expected = initial_prompt(q)
            + "<plan>Find apple docs.</plan>\n<search><query>apple</query></search>"
            + "\n<information>\nDoc 1 (Title: \"Apples\")\napple apple\n</information>\n";
        assert_eq!(t.full_text, expected, "budget-exhausted transcript");
        assert_eq!(t.termination, Termination::BudgetExhausted);
        assert_eq!(t.agent_answer, None);
        assert_eq!(t.turns.len(), 1);

        // --- 4: duplicate retrievals collapse to one entry ---
        let q = "Name the repeated fruit.";
        let t = run_script(
            q,
            &[
                "<plan>Two routes, one doc.</plan>\n<search><query>apple</query><query>apple.</query></search>",
                "<reflection>Same passage twice.</reflection>\n<plan>Done.</plan>\n<answer>apple</answer>",
            ],
            &defaults,
        );
        let expected = initial_prompt(q)
            + "<plan>Two routes, one doc.</plan>\n<search><query>apple</query><query>apple.</query></search>"
            + "\n<information>\nDoc 1 (Title: \"Apples\")\napple apple\n</information>\n"
            + "<reflection>Same passage twice.</reflection>\n<plan>Done.</plan>\n<answer>apple</answer>";
        assert_eq!(t.full_text, expected, "deduplicated transcript");
        assert_eq!(t.turns[0].search_queries, vec!["apple", "apple."]);
        assert_eq!(t.info_set.len(), 1);
        assert_eq!(t.info_set[0].doc_id, "d1");

        // --- 5: empty retrieval injects the sentinel ---
        let q = "Is there a document about dragonfruit?";
        let t = run_script(
            q,
            &[
                "<plan>Try an unknown fruit.</plan>\n<search><query>dragonfruit</query></search>",
                "<reflection>Nothing came back.</reflection>\n<plan>Give up.</plan>\n<answer>unknown</answer>",
            ],
            &defaults,
        );
        let expected = initial_prompt(q)
            + "<plan>Try an unknown fruit.</plan>\n<search><query>dragonfruit</query></search>"
            + "\n<information>\nNo results found.\n</information>\n"
            + "<reflection>Nothing came back.</reflection>\n<plan>Give up.</plan>\n<answer>unknown</answer>";
        assert_eq!(t.full_text, expected, "empty-retrieval transcript");
        assert_eq!(t.termination, Termination::Answered);
        assert!(t.info_set.is_empty());
        assert!(t.turns[0].information.as_ref().unwrap().is_empty());
    });
}

// =====================================================================
// Criterion 4: staged rewards across every outcome combination
// =====================================================================

/// A trajectory whose transcript is `body`, wrapped under the standard
/// instruction prefix so scoring sees exactly `body`.
fn trajectory_with(body: &str, agent_answer: Option<&str>) -> Trajectory {
    let question = "q";
    Trajectory {
        question: question.into(),
        turns: Vec::new(),
        agent_answer: agent_answer.map(String::from),
        info_set: Vec::new(),
        full_text: initial_prompt(question) + body,
        termination: Termination::Answered,
    }
}

fn combo_transcript(valid: bool, info: &str, answer: &str) -> String {
    let plan = if valid { "<plan>p</plan>\n" } else { "" };
    format!(
        "{plan}<search><query>find</query></search>\n\
         <information>\nDoc 1 (Title: \"T\")\n{info}\n</information>\n\
         <reflection>r</reflection>\n<answer>{answer}</answer>"
    )
}

#[test]
fn accept_4_staged_rewards_cover_all_combinations() {
    criterion("ACCEPT-4 staged rewards cover outcome grid", || {
        let gold = GoldAnswerSet::new(vec!["zanzibar quartz".into()]).unwrap();

        for valid in [false, true] {
            for relaxed_match in [false, true] {
                for hit in [false, true] {
                    let info = if hit { "zanzibar quartz mine" } else { "granite mine" };
                    let generator = if relaxed_match { "zanzibar quartz" } else { "slate" };
                    let t = trajectory_with(
                        &combo_transcript(valid, info, "other stone"),
                        Some("other stone"),
                    );
                    let r = score_trajectory(&t, Some(generator), &gold);

                    assert_eq!(r.format_ok, valid, "format flag (valid={valid})");
                    assert_eq!(r.hit, hit, "hit flag (hit={hit})");
                    assert_eq!(r.em_contains, relaxed_match);
                    assert!(!r.em_strict, "agent answer never matches");
                    assert_eq!(r.stage1, 0.0, "strict stage needs a strict match");

                    let expected_stage2 = (relaxed_match as u8 as f64)
                        + 0.5 * (hit as u8 as f64);
                    assert_eq!(
                        r.stage2, expected_stage2,
                        "stage2 (valid={valid} match={relaxed_match} hit={hit})"
                    );
                    assert!([0.0, 0.5, 1.0, 1.5].contains(&r.stage2));
                }
            }
        }

        // The strict stage pays out only when the transcript is clean AND the
        // agent's own answer matches exactly.
        let exact = trajectory_with(
            &combo_transcript(true, "granite", "Zanzibar Quartz!"),
            Some("Zanzibar Quartz!"),
        );
        let r = score_trajectory(&exact, None, &gold);
        assert!(r.format_ok && r.em_strict);
        assert_eq!(r.stage1, 1.0);

        let sloppy = trajectory_with(
            &combo_transcript(false, "granite", "Zanzibar Quartz!"),
            Some("Zanzibar Quartz!"),
        );
        let r = score_trajectory(&sloppy, None, &gold);
        assert!(!r.format_ok && r.em_strict);
        assert_eq!(r.stage1, 0.0, "invalid format gates the strict stage");
    });
}

// =====================================================================
// Criterion 5: group-relative objective arithmetic
// =====================================================================

fn trace(
    logp_new: Vec<f64>,
    logp_old: Vec<f64>,
    logp_ref: Option<Vec<f64>>,
    mask: Vec<bool>,
    reward: f64,
) -> TokenTrace {
    let tokens = (0..logp_new.len()).map(|i| format!("t{i}")).collect();
    TokenTrace::new(tokens, logp_new, logp_old, logp_ref, mask, reward).unwrap()
}

#[test]
fn accept_5_objective_matches_closed_forms() {
    criterion("ACCEPT-5 group objective matches closed forms", || {
        // Advantages of [1,0,0,1,0]: mean 0.4, population std sqrt(0.24);
        // winners sit at sqrt(3/2), losers at -sqrt(2/3).
        let adv = group_advantages(&[1.0, 0.0, 0.0, 1.0, 0.0], 1e-8).unwrap();
        let hi = 1.5f64.sqrt();
        let lo = -(2.0f64 / 3.0).sqrt();
        for (got, want) in adv.iter().zip([hi, lo, lo, hi, lo]) {
            assert!((got - want).abs() <= 1e-12, "advantage {got} vs {want}");
        }
        assert!((hi - 1.224744871391589).abs() <= 1e-12);
        assert!((lo + 0.816496580927726).abs() <= 1e-12);

        // Unchanged policy: every ratio is 1, so the surrogate telescopes to
        // the mean advantage, which is zero by construction.
        let same = GroupTrace::new(
            "identity",
            vec![
                trace(vec![-0.3, -1.1, -0.7], vec![-0.3, -1.1, -0.7], None, vec![true; 3], 1.0),
                trace(vec![-0.9, -0.2, -1.5], vec![-0.9, -0.2, -1.5], None, vec![true; 3], 0.0),
            ],
        )
        .unwrap();
        let (objective, diag) = grpo_objective(&same, &GrpoParams::default()).unwrap();
        assert!(objective.abs() <= 1e-12, "identity objective {objective}");
        assert_eq!(diag.clip_fraction, 0.0);
        assert!((diag.mean_ratio - 1.0).abs() <= 1e-12);
        assert_eq!(diag.kl, None);

        // One winner at ratio 1.5 (clipped to 1.2) and one loser at ratio
        // 0.5 (floored at 0.8): objective (1.2 - 0.8) / 2.
        let clipped = GroupTrace::new(
            "clip",
            vec![
                trace(vec![1.5f64.ln()], vec![0.0], None, vec![true], 1.0),
                trace(vec![0.5f64.ln()], vec![0.0], None, vec![true], 0.0),
            ],
        )
        .unwrap();
        let (objective, diag) = grpo_objective(&clipped, &GrpoParams::default()).unwrap();
        assert!((objective - 0.2).abs() <= 1e-12, "clipped objective {objective}");
        assert_eq!(diag.clip_fraction, 1.0);

        // Reference disagreement of ln 2 on one token: the per-token penalty
        // is exp(ln 2) - ln 2 - 1 = 1 - ln 2.
        let kl_case = trace(
            vec![0.0],
            vec![0.0],
            Some(vec![std::f64::consts::LN_2]),
            vec![true],
            0.0,
        );
        let kl = kl_estimate(&kl_case).unwrap();
        assert_eq!(kl.unmasked_tokens, 1);
        assert!((kl.value - (1.0 - std::f64::consts::LN_2)).abs() <= 1e-12);
        assert!((kl.value - 0.3068528194400546).abs() <= 1e-12);

        // The penalty estimator is non-negative for arbitrary disagreement.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=20);
            let spread = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect::<Vec<_>>();
            let logp_new = spread(&mut rng);
            let logp_old = spread(&mut rng);
            let logp_ref = spread(&mut rng);
            let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
            let t = trace(logp_new, logp_old, Some(logp_ref), mask, 0.0);
            let kl = kl_estimate(&t).unwrap();
            assert!(kl.value >= 0.0, "negative penalty {}", kl.value);
        }

        // Masked tokens carry no gradient: perturbing them arbitrarily must
        // leave the objective and diagnostics untouched.
        let masks = [
            vec![true, false, true, true, false],
            vec![false, true, true, false, true],
            vec![true, true, false, true, true],
        ];
        let build = |perturb: f64| {
            let rollouts = masks
                .iter()
                .enumerate()
                .map(|(i, mask)| {
                    let base: Vec<f64> =
                        (0..5).map(|j| -0.2 - 0.1 * (i + j) as f64).collect();
                    let twist = |v: &Vec<f64>| {
                        v.iter()
                            .zip(mask)
                            .map(|(x, keep)| if *keep { *x } else { x + perturb })
                            .collect::<Vec<f64>>()
                    };
                    trace(
                        twist(&base),
                        twist(&base.iter().map(|x| x - 0.05).collect()),
                        Some(twist(&base.iter().map(|x| x + 0.08).collect())),
                        mask.clone(),
                        [1.0, 0.0, 0.5][i],
                    )
                })
                .collect();
            GroupTrace::new("masked", rollouts).unwrap()
        };
        let (clean, clean_diag) = grpo_objective(&build(0.0), &GrpoParams::default()).unwrap();
        let (noisy, noisy_diag) = grpo_objective(&build(37.5), &GrpoParams::default()).unwrap();
        assert!((clean - noisy).abs() <= 1e-12, "masked perturbation moved objective");
        assert_eq!(clean_diag.unmasked_tokens, noisy_diag.unmasked_tokens);
        assert!((clean_diag.mean_ratio - noisy_diag.mean_ratio).abs() <= 1e-12);
        assert!(
            (clean_diag.kl.unwrap() - noisy_diag.kl.unwrap()).abs() <= 1e-12,
            "masked perturbation moved the penalty"
        );
    });
}

// =====================================================================
// Criterion 6: randomized property suites
// =====================================================================

fn prop_runner() -> TestRunner {
    TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    })
}

fn gold_strategy() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9]{1,8}( [a-zA-Z0-9]{1,8}){0,2}"
        .prop_filter("gold must survive normalization", |g| {
            !normalize_answer(g).is_empty()
        })
}

fn free_text() -> BoxedStrategy<String> {
    prop_oneof![
        "[a-zA-Z0-9 ,.!?'-]{0,40}".boxed(),
        any::<String>().boxed(),
    ]
    .boxed()
}

#[test]
fn accept_6_randomized_properties_hold() {
    criterion("ACCEPT-6 randomized property suites", || {
        // Strict match implies relaxed match.
        prop_runner()
            .run(&(free_text(), gold_strategy()), |(pred, gold)| {
                let set = GoldAnswerSet::new(vec![gold]).unwrap();
                if em_strict(&pred, &set) {
                    prop_assert!(em_contains(&pred, &set));
                }
                Ok(())
            })
            .unwrap();

        // F1 stays inside the unit interval.
        prop_runner()
            .run(&(free_text(), gold_strategy()), |(pred, gold)| {
                let set = GoldAnswerSet::new(vec![gold]).unwrap();
                let f1 = token_f1(&pred, &set);
                prop_assert!((0.0..=1.0).contains(&f1), "f1 {f1}");
                Ok(())
            })
            .unwrap();

        // Normalization is idempotent.
        prop_runner()
            .run(&free_text(), |text| {
                let once = normalize_answer(&text);
                prop_assert_eq!(normalize_answer(&once), once.clone());
                Ok(())
            })
            .unwrap();

        // Advantages are mean-zero and invariant to reward shift and scale.
        let rewards = proptest::collection::vec(-10.0f64..10.0, 2..12)
            .prop_filter("needs spread", |r| {
                let max = r.iter().cloned().fold(f64::MIN, f64::max);
                let min = r.iter().cloned().fold(f64::MAX, f64::min);
                max - min > 1e-3
            });
        prop_runner()
            .run(
                &(rewards, -5.0f64..5.0, 0.5f64..4.0),
                |(rewards, shift, scale)| {
                    let base = group_advantages(&rewards, 1e-8).unwrap();
                    let mean = base.iter().sum::<f64>() / base.len() as f64;
                    prop_assert!(mean.abs() <= 1e-9, "mean {mean}");

                    let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
                    let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
                    for (a, b) in base.iter().zip(group_advantages(&shifted, 1e-8).unwrap()) {
                        prop_assert!((a - b).abs() <= 1e-9, "shift moved {a} to {b}");
                    }
                    for (a, b) in base.iter().zip(group_advantages(&scaled, 1e-8).unwrap()) {
                        prop_assert!((a - b).abs() <= 1e-9, "scale moved {a} to {b}");
                    }
                    Ok(())
                },
            )
            .unwrap();

        // Rendered information blocks parse back to the same passages.
        let line = "[a-zA-Z0-9][a-zA-Z0-9 ,.]{0,23}".prop_map(|s| s.trim_end().to_string());
        let text = proptest::collection::vec(line, 1..4).prop_map(|lines| lines.join("\n"));
        let passage = ("[a-zA-Z0-9 ]{0,12}", text).prop_map(|(title, text)| (title, text));
        let passages = proptest::collection::vec(passage, 0..5);
        prop_runner()
            .run(&passages, |entries| {
                let block = InformationBlock::from_passages(
                    entries
                        .iter()
                        .enumerate()
                        .map(|(i, (title, text))| Passage {
                            doc_id: format!("p{i}"),
                            title: title.clone(),
                            text: text.clone(),
                        })
                        .collect(),
                    vec!["q".into()],
                );
                let parsed = parse_information(&render_information(&block)).unwrap();
                prop_assert_eq!(parsed.len(), block.passages.len());
                for (got, want) in parsed.iter().zip(&block.passages) {
                    prop_assert_eq!(&got.title, &want.title);
                    prop_assert_eq!(&got.text, &want.text);
                }
                Ok(())
            })
            .unwrap();

        // Query extraction enforces the per-search cap.
        let items = proptest::collection::vec(("[a-z ]{0,10}", "[ \n]{0,2}"), 0..8);
        prop_runner()
            .run(&items, |items| {
                let interior: String = items
                    .iter()
                    .map(|(q, pad)| format!("<query>{q}</query>{pad}"))
                    .collect();
                let usable = items.iter().filter(|(q, _)| !q.trim().is_empty()).count();
                match extract_queries(&interior) {
                    Ok(extraction) => {
                        prop_assert!(usable > 0);
                        prop_assert_eq!(extraction.queries.len(), usable.min(3));
                        prop_assert_eq!(!extraction.violations.is_empty(), usable > 3);
                    }
                    Err(ProtocolError::EmptySearch) => prop_assert_eq!(usable, 0),
                    Err(other) => prop_assert!(false, "unexpected error {other}"),
                }
                Ok(())
            })
            .unwrap();
    });
}
