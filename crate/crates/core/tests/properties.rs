use std::collections::{BTreeMap, BTreeSet};

use histag::corpus::{
    parse_tsv, validate, write_tsv, AnnotatedToken, Comment, Document, MorphCategory,
    ReferenceSet, Sentence,
};
use histag::evaluation::{
    confusion, pos_lemma_posttreatment, score, sentence_scores, shannon_diversity, Column,
    RuleSet, Subset, Threshold, TokenClass,
};
use histag::preprocess::{
    join_morph, segment_sentences, split_dataset, split_morph, MorphVector, SegmentationMode,
};
use histag::sweep::{rank_models, RankingPolicy, RunRecord, RunStatus};
use histag::tagger::{TaskId, TrainConfig};
use proptest::prelude::*;

fn token() -> impl Strategy<Value = AnnotatedToken> {
    (
        "[a-zàé]{1,8}",
        "[a-z]{1,6}[0-9]?",
        prop::sample::select(vec!["NOMcom", "VERcjg", "PRE", "DETdef", "PONfrt", "PONfbl", "_"]),
        prop::sample::select(vec!["_", "MORPH=empty", "NOMB.=s|GENRE=m|CAS=r", "PERS=3", "NOMB.=p"]),
    )
        .prop_map(|(f, l, p, m)| AnnotatedToken::new(f, l, p, m))
}

fn sentence() -> impl Strategy<Value = Sentence> {
    (
        prop::collection::vec(token(), 1..8),
        prop::collection::vec((0usize..8, "# [a-z ]{0,10}"), 0..3),
    )
        .prop_map(|(tokens, comments)| {
            let n = tokens.len();
            let mut comments: Vec<Comment> = comments
                .into_iter()
                .map(|(i, text)| Comment {
                    before_token: i.min(n),
                    text,
                })
                .collect();
            comments.sort_by_key(|c| c.before_token);
            Sentence { tokens, comments }
        })
}

fn document() -> impl Strategy<Value = Document> {
    (prop::collection::vec(sentence(), 1..6), any::<bool>()).prop_map(|(sentences, header)| {
        let mut doc = Document::new("", sentences);
        doc.has_header = header;
        doc
    })
}

fn morph_vector() -> impl Strategy<Value = MorphVector> {
    let value = prop::option::of(prop::sample::select(vec!["s", "p", "m", "f", "r", "1", "ind"]));
    (1usize..=3, prop::collection::vec(prop::collection::vec(value, 3), 7)).prop_map(
        |(width, per_cat)| {
            let mut v = MorphVector::default();
            for (cat, parts) in MorphCategory::ALL.iter().zip(per_cat) {
                let parts = &parts[..width];
                if parts.iter().all(Option::is_none) {
                    continue;
                }
                let label: Vec<&str> = parts.iter().map(|p| p.unwrap_or("empty")).collect();
                v.set(*cat, label.join("+"));
            }
            v
        },
    )
}

fn run(id: usize, scores: &[f64]) -> RunRecord {
    RunRecord {
        run_id: id,
        config_index: id,
        run_index: 0,
        seed: 0,
        config: TrainConfig::new(TaskId::Pos, 10, 1, 10),
        status: RunStatus::Ok,
        error: None,
        scores: scores
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("all_m{i}"), *v))
            .collect(),
        model_path: None,
    }
}

fn labels(n: usize) -> impl Strategy<Value = Vec<(String, String)>> {
    let label = prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from);
    prop::collection::vec((label.clone(), label), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tsv_round_trip(doc in document()) {
        let parsed = parse_tsv(&write_tsv(&doc)).unwrap();
        prop_assert_eq!(parsed, doc);
    }

    #[test]
    fn segmentation_conserves_tokens(doc in document()) {
        let flat: Vec<AnnotatedToken> = doc.tokens().cloned().collect();
        for mode in [SegmentationMode::Punctuation, SegmentationMode::Line] {
            let out: Vec<AnnotatedToken> = segment_sentences(&doc, mode)
                .into_iter()
                .flat_map(|s| s.tokens)
                .collect();
            prop_assert_eq!(&out, &flat);
        }
    }

    #[test]
    fn validate_is_monotone(doc in document(), extra in prop::collection::vec("[a-z]{1,6}", 0..10)) {
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let morph: BTreeMap<_, _> = MorphCategory::ALL.iter().map(|c| (*c, set(&["s"]))).collect();
        let small = ReferenceSet::new(set(&["le"]), set(&["PRE"]), morph).unwrap();
        let mut big = small.clone();
        big.lemmas.extend(extra.iter().cloned());
        big.pos_tags.extend(["NOMcom".to_string(), "VERcjg".to_string()]);
        for values in big.morph_values.values_mut() {
            values.insert("m".into());
            values.insert("r".into());
        }
        let a = validate(&doc, &small);
        let b = validate(&doc, &big);
        prop_assert!(b.len() <= a.len());
        for f in b.unallowed_lemmas.iter().chain(&b.unallowed_pos).chain(&b.unallowed_morph) {
            prop_assert!(doc.token(f.sentence, f.token).is_some());
        }
    }

    #[test]
    fn morph_join_split(v in morph_vector()) {
        let joined = join_morph(&v);
        prop_assert_eq!(split_morph(&joined).unwrap(), v);
        prop_assert_eq!(join_morph(&split_morph(&joined).unwrap()), joined);
    }

    #[test]
    fn split_partitions(n in 10usize..200, seed in any::<u64>(), dev in 1u32..30, test in 1u32..30) {
        let sentences: Vec<Sentence> = (0..n)
            .map(|i| Sentence::new(vec![AnnotatedToken::new(format!("w{i}"), "w", "NOMcom", "_")]))
            .collect();
        let ratios = [1.0 - (dev + test) as f64 / 100.0, dev as f64 / 100.0, test as f64 / 100.0];
        let Ok(split) = split_dataset(&sentences, ratios, seed) else { return Ok(()); };
        let mut ids: Vec<String> = split.train.iter().chain(&split.dev).chain(&split.test)
            .map(|s| s.tokens[0].form.clone())
            .collect();
        prop_assert_eq!(ids.len(), n);
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(split_dataset(&sentences, ratios, seed).unwrap(), split);
    }

    #[test]
    fn rank_invariant_under_monotone_rescaling(
        table in prop::collection::vec(prop::collection::vec(0u8..5, 4), 2..6),
        column in 0usize..4,
    ) {
        let log: Vec<RunRecord> = table.iter().enumerate()
            .map(|(i, r)| run(i, &r.iter().map(|v| *v as f64 / 4.0).collect::<Vec<_>>()))
            .collect();
        let mut rescaled = log.clone();
        for r in &mut rescaled {
            let v = r.scores.get_mut(&format!("all_m{column}")).unwrap();
            *v = (3.0 * *v).exp() - 7.0;
        }
        let policy = RankingPolicy { excluded: vec![], tie_break_metric: "all_m0".into() };
        let a = rank_models(&log, &policy).unwrap();
        let b = rank_models(&rescaled, &policy).unwrap();
        prop_assert_eq!(a.rank_sums, b.rank_sums);
        if column != 0 {
            prop_assert_eq!(a.selected, b.selected);
        }
    }

    #[test]
    fn dominated_run_changes_nothing(
        table in prop::collection::vec(prop::collection::vec(1u8..9, 4), 1..6),
    ) {
        let log: Vec<RunRecord> = table.iter().enumerate()
            .map(|(i, r)| run(i, &r.iter().map(|v| *v as f64 / 10.0).collect::<Vec<_>>()))
            .collect();
        let policy = RankingPolicy { excluded: vec![], tie_break_metric: "all_m0".into() };
        let before = rank_models(&log, &policy).unwrap().selected;
        let winner = &log.iter().find(|r| r.run_id == before).unwrap().scores;
        let mut extended = log.clone();
        extended.push(run(99, &winner.values().map(|v| v - 0.05).collect::<Vec<_>>()));
        prop_assert_eq!(rank_models(&extended, &policy).unwrap().selected, before);
    }

    #[test]
    fn confusion_row_sums(pairs in labels(40), t in 0usize..3) {
        let (g, p): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let exact = confusion(&g, &p, Threshold::Greater(0)).unwrap();
        for row in &exact.rows {
            prop_assert_eq!(row.predictions.iter().map(|c| c.1).sum::<usize>(), row.errors);
            let wrong = g.iter().zip(&p).filter(|(a, b)| **a == row.gold && a != b).count();
            prop_assert_eq!(row.errors, wrong);
        }
        let filtered = confusion(&g, &p, Threshold::AtLeast(t)).unwrap();
        for row in &filtered.rows {
            prop_assert!(row.predictions.iter().map(|c| c.1).sum::<usize>() <= row.errors);
        }
    }

    #[test]
    fn weighted_accuracy(pairs in labels(30), known in prop::collection::vec(any::<bool>(), 30)) {
        let (g, p): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let classes: Vec<TokenClass> = known.iter()
            .map(|k| TokenClass { known: *k, ambiguous: false, unknown_target: false })
            .collect();
        let t = score(&g, &p, &classes).unwrap();
        let (all, k, u) = (t.get(Subset::All), t.get(Subset::Known), t.get(Subset::Unknown));
        let mix = (k.accuracy * k.support as f64 + u.accuracy * u.support as f64) / all.support as f64;
        prop_assert!((mix - all.accuracy).abs() <= 1e-12);
        for m in [all, k, u] {
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn sdi_bounds(counts in prop::collection::vec(1usize..50, 1..8)) {
        let h = shannon_diversity(&counts).unwrap();
        let k = counts.len() as f64;
        prop_assert!(h >= 0.0 && h <= k.ln() + 1e-12);
        prop_assert_eq!(h == 0.0, counts.len() == 1);
        let uniform = shannon_diversity(&vec![counts[0]; counts.len()]).unwrap();
        prop_assert!((uniform - k.ln()).abs() < 1e-12);
    }

    #[test]
    fn sentence_score_identity(sentences in prop::collection::vec(sentence(), 1..6), flips in prop::collection::vec(any::<bool>(), 64)) {
        let mut pred = sentences.clone();
        let mut i = 0;
        for s in &mut pred {
            for t in &mut s.tokens {
                if flips[i % flips.len()] {
                    t.lemma.push('x');
                }
                i += 1;
            }
        }
        let hist = sentence_scores(&sentences, &pred, &[Column::Lemma]).unwrap();
        let words: usize = hist.total_words.iter().sum();
        let correct: usize = hist.correct_words.iter().sum();
        let micro = sentences.iter().flat_map(|s| &s.tokens)
            .zip(pred.iter().flat_map(|s| &s.tokens))
            .filter(|(a, b)| a.lemma == b.lemma)
            .count();
        prop_assert_eq!(correct, micro);
        prop_assert_eq!(words, sentences.iter().map(Sentence::len).sum::<usize>());
        prop_assert_eq!(hist.bins.iter().sum::<usize>(), sentences.len());
    }

    #[test]
    fn posttreatment_idempotent(
        rows in prop::collection::vec((
            prop::sample::select(vec!["que1", "que2", "que3", "que4", "ne1", "il"]),
            prop::sample::select(vec!["CONsub", "PROrel", "ADVint", "CONcoo", "ADVneg"]),
        ), 1..10),
    ) {
        let s = Sentence::new(rows.iter().map(|(l, p)| AnnotatedToken::new("que", *l, *p, "_")).collect());
        let rules = RuleSet::default();
        let once = pos_lemma_posttreatment(std::slice::from_ref(&s), &rules);
        prop_assert_eq!(pos_lemma_posttreatment(&once, &rules), once.clone());
        for (a, b) in s.tokens.iter().zip(&once[0].tokens) {
            prop_assert_eq!(&a.pos, &b.pos);
        }
    }
}
