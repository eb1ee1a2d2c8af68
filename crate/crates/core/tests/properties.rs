mod common;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use detoxkit::anova::{anova_groups, betainc, f_pvalue};
use detoxkit::cleaning::{char_ngrams, contains_devanagari, jaccard, run_pipeline, CleaningConfig};
use detoxkit::corpus::{corpus_stats, read_pairs, write_pairs_to, Lang, Lexicon, PairFormat, ParallelPair, SourceKind};
use detoxkit::embeddings::{cosine, fallback_embed, knn, NeighborIndex};
use detoxkit::metrics::{joint, sim_from_cosines, sta, MetricWeights};
use detoxkit::prompting::{parse_model_output, select_best, CandidateSet, SelectionContext};
use detoxkit::scorer::{FallbackScorer, Scorer};
use detoxkit::spans::{delete_detoxify, detect_spans};
use detoxkit::text::{normalize, slice_chars};
use detoxkit::corpus::LexiconSet;
use proptest::prelude::*;

fn lang() -> impl Strategy<Value = Lang> {
    proptest::sample::select(Lang::ALL.to_vec())
}

fn source() -> impl Strategy<Value = SourceKind> {
    prop_oneof![Just(SourceKind::Human), Just(SourceKind::MachineTranslated), Just(SourceKind::Synthetic)]
}

/// Short texts over a mixed alphabet with plenty of collisions.
fn text() -> impl Strategy<Value = String> {
    "[a-cA-C é\u{0301}ж日本\u{0915}!?,]{0,16}"
}

fn pair_list() -> impl Strategy<Value = Vec<ParallelPair>> {
    prop::collection::vec((lang(), "[a-z ]{0,6}[a-z]", prop::option::of(text()), source()), 0..12).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (l, t, n, s))| ParallelPair::new(format!("p{i}"), l, t, n).with_source(s))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jsonl_round_trip(pairs in pair_list()) {
        let mut buf = Vec::new();
        write_pairs_to(&pairs, &mut buf).unwrap();
        let back = read_pairs(buf.as_slice(), Path::new("mem"), &PairFormat::Jsonl).unwrap();
        prop_assert_eq!(&back, &pairs);
        prop_assert_eq!(corpus_stats(&back).total, pairs.len());
    }

    #[test]
    fn jaccard_matches_set_oracle(a in text(), b in text(), n in 1usize..6) {
        let got = jaccard(&char_ngrams(&a, n), &char_ngrams(&b, n));
        prop_assert_eq!(got, common::oracle_jaccard(&a, &b, n));
        prop_assert_eq!(got, jaccard(&char_ngrams(&b, n), &char_ngrams(&a, n)));
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert_eq!(got == 1.0, char_ngrams(&a, n) == char_ngrams(&b, n));
    }

    #[test]
    fn cleaning_partitions_and_is_idempotent(pairs in pair_list()) {
        let scorer = FallbackScorer::default();
        let cfg = CleaningConfig::default();
        let input_ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
        let (kept, report) = run_pipeline(pairs, &cfg, &scorer).unwrap();
        let dropped: HashSet<&String> = report.steps.iter().flat_map(|s| &s.dropped_ids).collect();
        let kept_ids: Vec<&String> = kept.iter().map(|p| &p.id).collect();
        // Retained order is the input order, and kept + dropped cover the input exactly once.
        let expected: Vec<&String> = input_ids.iter().filter(|id| !dropped.contains(id)).collect();
        prop_assert_eq!(&kept_ids, &expected);
        prop_assert_eq!(kept.len() + dropped.len(), input_ids.len());
        for p in kept.iter().filter(|p| p.lang == Lang::Hin) {
            prop_assert!(!contains_devanagari(&p.toxic));
            prop_assert!(!p.neutral.as_deref().is_some_and(contains_devanagari));
        }
        let (again, report2) = run_pipeline(kept.clone(), &cfg, &scorer).unwrap();
        prop_assert_eq!(again, kept);
        prop_assert!(report2.drop_counts().iter().all(|&d| d == 0));
    }

    #[test]
    fn spans_slice_to_their_terms(words in prop::collection::vec("[a-dA-D]{1,3}[.,!]?", 0..10)) {
        let lexicon = Lexicon::new(Lang::En, ["ab", "c", "dd"]);
        let text = words.join(" ");
        for s in detect_spans(&text, &lexicon) {
            prop_assert_eq!(normalize(slice_chars(&text, s.start, s.end)), s.term.clone());
            prop_assert!(lexicon.contains(&s.term));
        }
        let cleaned = delete_detoxify(&text, &lexicon);
        for token in cleaned.split_whitespace() {
            let core = token.trim_matches(|c: char| detoxkit::text::is_punctuation(c));
            prop_assert!(!lexicon.contains(&normalize(core)), "{} survived in {:?}", core, cleaned);
        }
        prop_assert_eq!(delete_detoxify(&cleaned, &lexicon), cleaned.clone());
    }

    #[test]
    fn unsegmented_delete_leaves_no_substring(text in "[笨蛋坏人好]{0,20}") {
        let lexicon = Lexicon::new(Lang::Zh, ["笨蛋", "坏人", "蛋坏"]);
        for s in detect_spans(&text, &lexicon) {
            prop_assert_eq!(slice_chars(&text, s.start, s.end), s.term.as_str());
        }
        let cleaned = delete_detoxify(&text, &lexicon);
        for term in lexicon.terms() {
            prop_assert!(!cleaned.contains(term), "{} in {:?}", term, cleaned);
        }
    }

    #[test]
    fn knn_matches_sorted_oracle(texts in prop::collection::vec("[a-e ]{1,12}", 1..40), k in 0usize..50, q in 0usize..40) {
        let entries: Vec<(String, _)> = texts.iter().enumerate().map(|(i, t)| (format!("{i:03}"), fallback_embed(t))).collect();
        let index = NeighborIndex::new(Lang::En, entries.clone()).unwrap();
        let q = q % texts.len();
        let query = fallback_embed(&texts[q]);
        let exclude = format!("{q:03}");
        let got = knn(&index, &query, k, Some(&exclude)).unwrap();

        let mut oracle: Vec<(f64, String)> = entries
            .iter()
            .filter(|(id, _)| *id != exclude)
            .map(|(id, v)| (cosine(&query, v).unwrap(), id.clone()))
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        oracle.truncate(k);
        let got_pairs: Vec<(f64, String)> = got.iter().map(|n| (n.score, n.id.clone())).collect();
        prop_assert_eq!(got_pairs, oracle);
        prop_assert!(got.len() <= k);
        prop_assert!(got.iter().all(|n| n.id != exclude));
    }

    #[test]
    fn embedder_self_similarity_and_batch_permutation(texts in prop::collection::vec("[a-zж日 ]{1,20}", 1..10)) {
        let scorer = FallbackScorer::default();
        let forward = scorer.embed(&texts).unwrap();
        let mut rev = texts.clone();
        rev.reverse();
        let mut backward = scorer.embed(&rev).unwrap();
        backward.reverse();
        prop_assert_eq!(&forward, &backward);
        for v in &forward {
            prop_assert!((cosine(v, v).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sta_sim_joint_properties(p in 0.0f64..=1.0, refs in prop::collection::vec(0.0f64..=1.0, 1..6),
                                 ci in -1.0f64..=1.0, cg in -1.0f64..=1.0, w in 0.0f64..=1.0,
                                 f in 0.0f64..=1.0, s in 0.0f64..=1.0) {
        let a = sta(p, &refs).unwrap();
        let mut shuffled = refs.clone();
        shuffled.reverse();
        shuffled.rotate_left(refs.len() / 2);
        prop_assert_eq!(a, sta(p, &shuffled).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        let weights = MetricWeights::new(w, 1.0 - w).unwrap();
        let sim = sim_from_cosines(ci, cg, weights);
        prop_assert!((0.0..=1.0).contains(&sim));
        let j = joint(f, sim, a);
        prop_assert!(j <= f.min(sim).min(a));
        prop_assert!(joint(f, s, a) <= joint(f.max(s), s, a));
    }

    #[test]
    fn parse_model_output_is_total(raw in ".{0,60}") {
        let parsed = parse_model_output(&raw);
        if parsed.fallback {
            prop_assert_eq!(parsed.text, raw.trim());
        }
    }

    #[test]
    fn selection_is_permutation_invariant(cands in prop::collection::vec("(you|idiot|go|home|nice) (you|idiot|go|home|nice)", 1..6), rot in 0usize..6) {
        let mut lex = LexiconSet::default();
        lex.insert(Lexicon::new(Lang::En, ["idiot"]));
        let scorer = FallbackScorer::new(lex);
        let ctx = SelectionContext { lang: Lang::En, input_toxic: "you idiot go home".into(), golds: vec!["you go home".into()] };
        let set = CandidateSet { id: "x".into(), candidates: cands.clone(), scores: None };
        let first = select_best(&set, &ctx, &scorer, MetricWeights::default()).unwrap();
        let max = first.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(first.scores[first.index], max);
        prop_assert!(first.scores[..first.index].iter().all(|&s| s < max));

        let mut rotated = cands.clone();
        rotated.rotate_left(rot % cands.len());
        let set = CandidateSet { id: "x".into(), candidates: rotated, scores: None };
        let second = select_best(&set, &ctx, &scorer, MetricWeights::default()).unwrap();
        prop_assert_eq!(second.scores[second.index], max);
        let argmax = |c: &[String], s: &[f64]| -> HashSet<String> {
            c.iter().zip(s).filter(|(_, &v)| v == max).map(|(t, _)| t.clone()).collect()
        };
        prop_assert_eq!(argmax(&cands, &first.scores), argmax(&set.candidates, &second.scores));
    }

    #[test]
    fn anova_identities(groups in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2..6), 2..5)) {
        let res = anova_groups(&groups).unwrap();
        let n: usize = groups.iter().map(Vec::len).sum();
        let k = groups.len();
        prop_assert!((0.0..=1.0).contains(&res.eta_squared));
        let e = res.eta_squared;
        let f_from_eta = (e / (k - 1) as f64) / ((1.0 - e) / (n - k) as f64);
        prop_assert!(common::rel_close(res.f_stat, f_from_eta, 1e-8));
        prop_assert!((0.0..=1.0).contains(&res.p_value));
    }

    #[test]
    fn betainc_symmetry(a in 0.1f64..20.0, b in 0.1f64..20.0, x in 0.0f64..=1.0) {
        let lhs = betainc(a, b, x);
        let rhs = 1.0 - betainc(b, a, 1.0 - x);
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn f_pvalue_is_decreasing(f in 0.0f64..50.0, d in 0.01f64..5.0, d1 in 1usize..8, d2 in 1usize..30) {
        prop_assert!(f_pvalue(f + d, d1, d2) < f_pvalue(f, d1, d2));
    }
}

#[test]
fn f_pvalue_at_zero_is_one() {
    for (d1, d2) in [(1, 1), (2, 12), (5, 9), (4, 9)] {
        assert_eq!(f_pvalue(0.0, d1, d2), 1.0);
    }
}

#[test]
fn language_codes_outside_the_set_are_rejected() {
    let bad = "{\"lang\":\"pt\",\"toxic\":\"x\"}\n";
    assert!(read_pairs(bad.as_bytes(), Path::new("mem"), &PairFormat::Jsonl).is_err());
    let known: HashMap<&str, Lang> = Lang::ALL.iter().map(|l| (l.code(), *l)).collect();
    assert_eq!(known.len(), 15);
}
