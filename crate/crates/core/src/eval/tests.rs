use super::*;
use crate::data::synthetic::{generate_synthetic, SyntheticSpec};
use crate::trainer::Trainer;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn perfect_predictions() {
    assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    assert_eq!(mse(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
    assert_eq!(mse(&[3, 3, 3], &[1, 1, 1]).unwrap(), 4.0);
}

#[test]
fn bad_lengths_are_domain_errors() {
    assert!(matches!(accuracy(&[], &[]), Err(Error::Domain(_))));
    assert!(matches!(mse(&[1], &[1, 2]), Err(Error::Domain(_))));
}

#[test]
fn rating_metrics_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.gen_range(1..40);
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=5)).collect();
        let g: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=5)).collect();
        let mut hits = 0.0;
        let mut sq = 0.0;
        for k in 0..n {
            if p[k] == g[k] {
                hits += 1.0;
            }
            let d = p[k] as f64 - g[k] as f64;
            sq += d * d;
        }
        assert!((accuracy(&p, &g).unwrap() - hits / n as f64).abs() < 1e-15);
        assert!((mse(&p, &g).unwrap() - sq / n as f64).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn rating_metrics_are_permutation_invariant(
        pairs in prop::collection::vec((1usize..=10, 1usize..=10), 1..30),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
        let (p, g) = split(&pairs);
        let (ps, gs) = split(&shuffled);
        let acc = accuracy(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert_eq!(acc, accuracy(&ps, &gs).unwrap());
        prop_assert!((mse(&p, &g).unwrap() - mse(&ps, &gs).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn normalization_preserves_order(series in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        prop_assume!(series.iter().any(|&x| x != series[0]));
        let out = normalize_rewards(&series).unwrap();
        for i in 0..series.len() {
            prop_assert!(out[i] >= 1e-3 && out[i] <= 1.0 - 1e-3);
            for j in 0..series.len() {
                prop_assert_eq!(series[i] < series[j], out[i] < out[j]);
            }
        }
    }
}

#[test]
fn normalization_endpoints() {
    let out = normalize_rewards(&[0.0, 5.0, 10.0]).unwrap();
    assert!((out[0] - 1e-3).abs() < 1e-15);
    assert!((out[1] - 0.5).abs() < 1e-15);
    assert!((out[2] - (1.0 - 1e-3)).abs() < 1e-15);
    let up = normalize_rewards(&[1.0, 2.0, 2.5, 7.0]).unwrap();
    assert!(up.windows(2).all(|w| w[0] < w[1]));
    let err = normalize_rewards(&[3.0, 3.0]).unwrap_err();
    assert!(err.to_string().contains("degenerate reward series"));
    assert!(normalize_rewards(&[1.0]).is_err());
}

#[test]
fn selection_edge_cases() {
    let m = [true, false, true];
    let s = selection_metrics([(&m[..], &m[..])]).unwrap();
    assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    let none = [false; 3];
    let s = selection_metrics([(&none[..], &m[..])]).unwrap();
    assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    let s = selection_metrics([(&none[..], &none[..])]).unwrap();
    assert_eq!(s.precision, 1.0);
    assert!(matches!(
        selection_metrics([(&m[..], &none[..2])]),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn selection_matches_confusion_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let masks: Vec<(Vec<bool>, Vec<bool>)> = (0..rng.gen_range(1..6))
            .map(|_| {
                let n = rng.gen_range(1..10);
                let p = (0..n).map(|_| rng.gen_bool(0.4)).collect();
                let g = (0..n).map(|_| rng.gen_bool(0.4)).collect();
                (p, g)
            })
            .collect();
        let (mut tp, mut pp, mut gp) = (0.0, 0.0, 0.0);
        for (p, g) in &masks {
            for k in 0..p.len() {
                tp += f64::from(u8::from(p[k] && g[k]));
                pp += f64::from(u8::from(p[k]));
                gp += f64::from(u8::from(g[k]));
            }
        }
        let s = selection_metrics(masks.iter().map(|(p, g)| (&p[..], &g[..]))).unwrap();
        if pp > 0.0 {
            assert!((s.precision - tp / pp).abs() < 1e-15);
        }
        if gp > 0.0 {
            assert!((s.recall - tp / gp).abs() < 1e-15);
        }
        if tp > 0.0 {
            let want = 2.0 * tp / (pp + gp);
            assert!((s.f1 - want).abs() < 1e-12);
        }
    }
}

fn small_setup(documents: usize) -> (Trainer, Corpus) {
    let spec = SyntheticSpec {
        documents,
        filler_words: 10,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let cfg = Config {
        dim: 4,
        seed: 3,
        ..Config::default()
    };
    let mut t = Trainer::new(cfg, &corpus, None).unwrap();
    let ex = t.model.encode_all(&corpus.documents).unwrap();
    t.pretrain_low(&ex, 1).unwrap();
    t.pretrain_high(&ex, 1).unwrap();
    t.train_policies(&ex, 1).unwrap();
    (t, corpus)
}

use crate::data::Corpus;

#[test]
fn evaluation_ignores_thread_count() {
    let (t, corpus) = small_setup(30);
    let docs: Vec<&Document> = corpus.documents.iter().collect();
    for mode in [DecodeMode::Greedy, DecodeMode::Sample] {
        let one = evaluate(&t.model, &t.policies, &t.config, &docs, mode, 1, 9).unwrap();
        let three = evaluate(&t.model, &t.policies, &t.config, &docs, mode, 3, 9).unwrap();
        assert_eq!(metrics_jsonl(&one), metrics_jsonl(&three));
        assert_eq!(one.outcomes, three.outcomes);
        assert!((0.0..=1.0).contains(&one.accuracy) && one.mse >= 0.0);
        assert!(one.clause_selection.is_some() && one.word_selection.is_some());
        let total: usize = one.per_aspect.iter().map(|a| a.queries).sum();
        assert_eq!(total, one.queries);
    }
    assert!(matches!(
        evaluate(&t.model, &t.policies, &t.config, &docs, DecodeMode::Greedy, 0, 9),
        Err(Error::Usage(_))
    ));
}

#[test]
fn discarding_everything_falls_back() {
    let (mut t, corpus) = small_setup(10);
    t.policies.high.bias = -40.0;
    let docs: Vec<&Document> = corpus.documents.iter().collect();
    let r = evaluate(&t.model, &t.policies, &t.config, &docs, DecodeMode::Greedy, 1, 1).unwrap();
    assert_eq!(r.fallbacks, r.queries);
    let s = r.clause_selection.unwrap();
    assert_eq!((s.precision, s.recall), (0.0, 0.0));
    let o = &r.outcomes[0];
    let doc = corpus.find(&o.document).unwrap();
    let view = SelectionView::from_outcome(doc, o, r.classes).unwrap();
    assert!(render_text(&view).contains("fallback-random"));
    assert!(render_html(&view).contains("fallback-random"));
    assert!(summary_table(&r).contains("all"));
}

#[test]
fn gold_masks_pass_through_the_text_report() {
    let corpus = generate_synthetic(&SyntheticSpec {
        documents: 5,
        ..SyntheticSpec::default()
    })
    .unwrap();
    for doc in &corpus.documents {
        for label in &doc.aspects {
            let clauses = label.gold_clause_mask.as_ref().unwrap();
            let words = label.gold_word_masks.as_ref().unwrap();
            let view = SelectionView {
                document: doc,
                aspect: &label.name,
                clauses,
                words,
                predicted: label.rating,
                gold: Some(label.rating),
                fallback: false,
                classes: 5,
            };
            let text = render_text(&view);
            for ((line, &sel), (clause, mask)) in text.lines().skip(1).zip(clauses).zip(doc.clauses.iter().zip(words)) {
                assert_eq!(line.starts_with('+'), sel);
                let marked: Vec<&str> = line.split(' ').skip(1).filter(|w| w.starts_with('[')).collect();
                let want: Vec<String> = clause
                    .tokens
                    .iter()
                    .zip(mask)
                    .filter(|(_, &k)| k && sel)
                    .map(|(w, _)| format!("[{w}]"))
                    .collect();
                assert_eq!(marked, want);
            }
            let html = render_html(&view);
            assert_eq!(html.matches("<mark>").count(), view.words.iter().zip(clauses).filter(|(_, &c)| c).map(|(w, _)| w.iter().filter(|&&k| k).count()).sum::<usize>());
        }
    }
}

/// Tag-balance checker: void elements aside, every opened tag closes in
/// order, attributes are quoted, and text holds no raw `<` or `&` outside
/// entities.
fn well_formed(html: &str) -> std::result::Result<(), String> {
    let body = html.strip_prefix("<!DOCTYPE html>").ok_or("missing doctype")?;
    let mut stack: Vec<String> = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find(|c| c == '<' || c == '&') {
        let (text, tail) = rest.split_at(open);
        if text.contains('>') {
            return Err(format!("stray '>' in {text:?}"));
        }
        if tail.starts_with('&') {
            let end = tail.find(';').ok_or("unterminated entity")?;
            let name = &tail[1..end];
            let known = ["amp", "lt", "gt", "quot", "#39"];
            if !known.contains(&name) {
                return Err(format!("unknown entity {name}"));
            }
            rest = &tail[end + 1..];
            continue;
        }
        let close = tail.find('>').ok_or("unterminated tag")?;
        let tag = &tail[1..close];
        rest = &tail[close + 1..];
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(top) if top == name => {}
                other => return Err(format!("closing {name} but open {other:?}")),
            }
            continue;
        }
        let self_closing = tag.ends_with('/');
        let tag = tag.trim_end_matches('/');
        let mut parts = tag.splitn(2, ' ');
        let name = parts.next().unwrap().to_string();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(format!("bad tag name {name:?}"));
        }
        if let Some(attrs) = parts.next() {
            if attrs.matches('"').count() % 2 != 0 {
                return Err(format!("unbalanced quotes in {attrs:?}"));
            }
        }
        if !self_closing && name != "meta" {
            stack.push(name);
        }
    }
    if rest.contains('>') {
        return Err("stray '>' at end".into());
    }
    if !stack.is_empty() {
        return Err(format!("unclosed {stack:?}"));
    }
    Ok(())
}

#[test]
fn html_report_is_well_formed() {
    let (t, mut corpus) = small_setup(12);
    // hostile tokens must be escaped
    corpus.documents[0].clauses[0].tokens[0] = "<b>&\"x'".into();
    let docs: Vec<&Document> = corpus.documents.iter().collect();
    let r = evaluate(&t.model, &t.policies, &t.config, &docs, DecodeMode::Sample, 1, 4).unwrap();
    for o in &r.outcomes {
        let doc = corpus.find(&o.document).unwrap();
        let html = render_html(&SelectionView::from_outcome(doc, o, r.classes).unwrap());
        well_formed(&html).unwrap_or_else(|e| panic!("{e}\n{html}"));
    }
    assert!(well_formed("<!DOCTYPE html><p><b></p></b>").is_err());
    assert!(well_formed("<!DOCTYPE html><p>a < b</p>").is_err());
    assert!(well_formed("<!DOCTYPE html><p>a & b</p>").is_err());
}

#[test]
fn report_rejects_mismatched_masks() {
    let corpus = generate_synthetic(&SyntheticSpec {
        documents: 1,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let doc = &corpus.documents[0];
    let view = SelectionView {
        document: doc,
        aspect: "x",
        clauses: &[true],
        words: &[],
        predicted: 1,
        gold: None,
        fallback: false,
        classes: 5,
    };
    assert!(view.check().is_err());
}

#[test]
fn reward_records_normalize_both_series() {
    let curve: Vec<EpochRewards> = (0..4)
        .map(|k| EpochRewards {
            epoch: k + 1,
            high: k as f64,
            low: -(k as f64),
            selected_clause_rate: 0.5,
            selected_word_rate: 0.5,
        })
        .collect();
    let rec = reward_records(&curve);
    assert_eq!(rec[0].high_normalized, Some(1e-3));
    assert_eq!(rec[0].low_normalized, Some(1.0 - 1e-3));
    let single = reward_records(&curve[..1]);
    assert_eq!(single[0].high_normalized, None);
    let line = serde_json::to_string(&rec[1]).unwrap();
    assert!(line.contains("\"epoch\":2") && line.contains("high_normalized"));
}
