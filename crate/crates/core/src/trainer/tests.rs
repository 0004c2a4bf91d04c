use super::*;
use crate::data::{AspectDef, AspectLabel, Document};
use crate::policy::choice_prob;
use crate::segmentation::Clause;

fn config(dim: usize, classes: usize) -> Config {
    Config {
        dim,
        classes,
        batch_size: 8,
        dropout: 0.0,
        seed: 5,
        ..Config::default()
    }
}

fn doc(id: usize, clauses: &[&[&str]], ratings: &[(&str, usize)]) -> Document {
    Document {
        id: format!("d{id}"),
        clauses: clauses
            .iter()
            .map(|c| Clause::new(c.iter().map(|t| t.to_string()).collect()))
            .collect(),
        aspects: ratings
            .iter()
            .map(|&(name, rating)| AspectLabel {
                name: name.into(),
                rating,
                gold_clause_mask: None,
                gold_word_masks: None,
            })
            .collect(),
    }
}

/// Two classes decided by whether "good" or "bad" appears.
fn separable(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fillers = ["the", "a", "was", "room", "stay", "it", "very"];
    let documents = (0..n)
        .map(|i| {
            let positive = rng.gen_bool(0.5);
            let word = if positive { "good" } else { "bad" };
            let mut clauses: Vec<Vec<&str>> = (0..rng.gen_range(1..4))
                .map(|_| (0..3).map(|_| *fillers.choose(&mut rng).unwrap()).collect())
                .collect();
            let k = rng.gen_range(0..clauses.len());
            let at = rng.gen_range(0..=clauses[k].len());
            clauses[k].insert(at, word);
            let refs: Vec<&[&str]> = clauses.iter().map(Vec::as_slice).collect();
            doc(i, &refs, &[("room", if positive { 2 } else { 1 })])
        })
        .collect();
    Corpus {
        aspects: vec![AspectDef {
            name: "room".into(),
            keywords: vec!["room".into()],
        }],
        classes: 2,
        split_seed: 0,
        documents,
    }
}

fn trainer_for(corpus: &Corpus, cfg: Config) -> (Trainer, Vec<Example>) {
    let t = Trainer::new(cfg, corpus, None).unwrap();
    let ex = t.model.encode_all(&corpus.documents).unwrap();
    (t, ex)
}

#[test]
fn one_document_one_epoch_is_one_step() {
    let corpus = separable(1, 1);
    let (mut t, ex) = trainer_for(&corpus, config(4, 2));
    t.pretrain_low(&ex, 1).unwrap();
    assert_eq!(t.progress.optimizer_steps, 1);
    t.pretrain_high(&ex, 1).unwrap();
    assert_eq!(t.progress.optimizer_steps, 2);

    let corpus = separable(65, 2);
    let (mut t, ex) = trainer_for(&corpus, Config { batch_size: 64, ..config(4, 2) });
    t.pretrain_low(&ex, 1).unwrap();
    assert_eq!(t.progress.optimizer_steps, 2);
}

#[test]
fn empty_input_is_rejected() {
    let corpus = separable(3, 1);
    let (mut t, _) = trainer_for(&corpus, config(4, 2));
    assert!(matches!(t.pretrain_low(&[], 1), Err(Error::Domain(_))));
}

#[test]
fn pretraining_is_deterministic() {
    let corpus = separable(20, 3);
    let run = || {
        let (mut t, ex) = trainer_for(&corpus, Config { dropout: 0.2, ..config(5, 2) });
        t.pretrain_low(&ex, 2).unwrap();
        t.pretrain_high(&ex, 2).unwrap();
        t.to_bytes()
    };
    assert_eq!(run(), run());
}

#[test]
fn separable_corpus_is_learned_by_both_stages() {
    let corpus = separable(60, 4);
    let (mut t, ex) = trainer_for(&corpus, config(8, 2));
    let losses = t.pretrain_low(&ex, 10).unwrap();
    assert!(losses[1] <= losses[0] && losses[2] <= losses[1], "{losses:?}");
    let acc = t.select_all_accuracy(&ex, Head::Clause).unwrap();
    assert!(acc >= 0.95, "word stage accuracy {acc}");
    let losses = t.pretrain_high(&ex, 10).unwrap();
    assert!(losses[1] <= losses[0] && losses[2] <= losses[1], "{losses:?}");
    let acc = t.select_all_accuracy(&ex, Head::Document).unwrap();
    assert!(acc >= 0.95, "clause stage accuracy {acc}");
}

#[test]
fn one_step_touches_only_looked_up_rows() {
    let corpus = separable(10, 5);
    let (mut t, ex) = trainer_for(&corpus, config(4, 2));
    let before = t.model.store.get(t.model.embeddings.table).clone();
    t.pretrain_low(&ex[..1], 1).unwrap();
    let after = t.model.store.get(t.model.embeddings.table);
    let used: std::collections::HashSet<u32> = ex[0].words().collect();
    for id in 0..t.model.vocab.len() {
        let same = before.row(id) == after.row(id);
        assert_eq!(same, !used.contains(&(id as u32)), "row {id}");
    }
}

#[test]
fn stages_must_run_in_order() {
    let corpus = separable(4, 6);
    let (mut t, ex) = trainer_for(&corpus, config(4, 2));
    assert!(matches!(t.pretrain_high(&ex, 1), Err(Error::State(_))));
    assert!(matches!(t.train_policies(&ex, 1), Err(Error::State(_))));
    t.pretrain_low(&ex, 1).unwrap();
    assert!(matches!(t.train_policies(&ex, 1), Err(Error::State(_))));
    t.pretrain_high(&ex, 1).unwrap();
    t.train_policies(&ex, 1).unwrap();
}

fn pretrained(n: usize, dim: usize) -> (Trainer, Vec<Example>) {
    let corpus = separable(n, 7);
    let (mut t, ex) = trainer_for(&corpus, config(dim, 2));
    t.pretrain_low(&ex, 2).unwrap();
    t.pretrain_high(&ex, 2).unwrap();
    (t, ex)
}

#[test]
fn all_skipped_document_updates_only_the_clause_policy() {
    let (mut t, ex) = pretrained(3, 4);
    t.policies.high.bias = -40.0;
    let before = t.policies.low.clone();
    let (h0, l0) = (t.progress.high_updates, t.progress.low_updates);
    t.train_policies(&ex[..1], 1).unwrap();
    assert_eq!(t.progress.high_updates - h0, 1);
    assert_eq!(t.progress.low_updates - l0, 0);
    assert_eq!(t.policies.low, before);
}

#[test]
fn policy_training_freezes_encoders() {
    let (mut t, ex) = pretrained(12, 4);
    let store = t.model.store.clone();
    let aspects = t.model.aspects.clone();
    let curve = t.train_policies(&ex, 2).unwrap();
    assert_eq!(curve.len(), 2);
    assert_eq!(t.model.store, store);
    assert_eq!(t.model.aspects, aspects);
    assert!(t.progress.high_updates >= 24);
    assert_ne!(t.policies, Policies::zeros(4));
}

#[test]
fn policy_training_is_deterministic() {
    let run = || {
        let (mut t, ex) = pretrained(8, 4);
        t.train_policies(&ex, 2).unwrap();
        t.to_bytes()
    };
    assert_eq!(run(), run());
}

#[test]
fn fine_tune_changes_encoders() {
    let (mut t, ex) = pretrained(8, 4);
    t.config.fine_tune = true;
    t.policies.high.bias = 5.0;
    t.policies.low.bias = 5.0;
    let store = t.model.store.clone();
    t.train_policies(&ex, 1).unwrap();
    assert_ne!(t.model.store, store);
    assert_eq!(t.progress.fine_tune_epochs, 1);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (mut t, ex) = pretrained(6, 3);
    t.train_policies(&ex, 1).unwrap();
    let bytes = t.to_bytes();
    let mut back = Trainer::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    // the restored generator continues the same stream
    let mut a = t.rng.clone();
    assert_eq!(a.gen::<u64>(), back.rng_mut().gen::<u64>());
    assert!(Trainer::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Trainer::from_bytes(b"nonsense").is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Trainer::from_bytes(&extra).is_err());
}

#[test]
fn checkpoint_file_round_trip() {
    let (t, _) = pretrained(4, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    t.save(&path).unwrap();
    let back = Trainer::load(&path).unwrap();
    assert_eq!(back.to_bytes(), t.to_bytes());
    assert_eq!(back.progress, t.progress);
    assert!(Trainer::load(&dir.path().join("missing")).is_err());
}

fn context_parts(t: &Trainer, ex: &Example) -> Vec<Vec<f64>> {
    t.model.clause_vectors(ex).unwrap()
}

#[test]
fn single_sample_baseline_is_that_trajectory() {
    let (t, ex) = pretrained(4, 4);
    let cv = context_parts(&t, &ex[0]);
    let ctx = Context {
        model: &t.model,
        config: &t.config,
        clause_vectors: &cv,
        words: &ex[0].clauses,
        aspect: &t.model.aspects[0].embedding,
        gold: ex[0].queries[0].rating,
    };
    let mut p = t.policies.clone();
    p.high.bias = 0.3;
    let b = estimate_high_baseline(ctx, &p, 1, &mut ChaCha8Rng::seed_from_u64(9), &PredictorRewards).unwrap();
    let ep = rollout(ctx, &p, &mut Decode::Sample(&mut ChaCha8Rng::seed_from_u64(9)), &PredictorRewards).unwrap();
    assert_eq!(b, ep.total_reward());

    p.high.bias = 40.0;
    p.low.bias = -40.0;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws: Vec<f64> = (0..5)
        .map(|_| estimate_high_baseline(ctx, &p, 3, &mut rng, &PredictorRewards).unwrap())
        .collect();
    assert!(draws.iter().all(|&d| d == draws[0]));
    assert!(estimate_high_baseline(ctx, &p, 0, &mut rng, &PredictorRewards).is_err());
}

#[test]
fn sampled_baseline_matches_enumerated_expectation() {
    let corpus = Corpus {
        documents: vec![doc(
            0,
            &[&["the", "good"], &["room", "was"], &["a", "bad", "stay"]],
            &[("room", 2)],
        )],
        ..separable(1, 1)
    };
    let (mut t, ex) = trainer_for(&corpus, config(4, 2));
    t.pretrain_low(&ex, 1).unwrap();
    t.pretrain_high(&ex, 1).unwrap();
    let ex = &ex[0];
    let cv = context_parts(&t, ex);
    let ctx = Context {
        model: &t.model,
        config: &t.config,
        clause_vectors: &cv,
        words: &ex.clauses,
        aspect: &t.model.aspects[0].embedding,
        gold: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut p = Policies {
        high: LogisticPolicy::uniform(16, 0.8, &mut rng),
        low: LogisticPolicy::zeros(12),
    };
    p.low.bias = 40.0;
    let words: Vec<Vec<bool>> = ex.clauses.iter().map(|c| vec![true; c.len()]).collect();
    let n = ex.clauses.len();
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut total_p = 0.0;
    for bits in 0..1u32 << n {
        let options: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
        let ep = rollout(ctx, &p, &mut Decode::<ChaCha8Rng>::Forced { options: &options, words: &words }, &PredictorRewards).unwrap();
        let prob: f64 = ep.traj.steps.iter().map(|s| choice_prob(s.prob, s.option)).product();
        total_p += prob;
        mean += prob * ep.total_reward();
        second += prob * ep.total_reward().powi(2);
    }
    assert!((total_p - 1.0).abs() < 1e-12);
    let sd = (second - mean * mean).sqrt();
    let m = 1000;
    let b = estimate_high_baseline(ctx, &p, m, &mut rng, &PredictorRewards).unwrap();
    assert!((b - mean).abs() <= 3.0 * sd / (m as f64).sqrt(), "{b} vs {mean} (sd {sd})");
}

use crate::policy::LogisticPolicy;
