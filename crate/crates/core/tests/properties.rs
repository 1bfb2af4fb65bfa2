mod common;

use proptest::prelude::*;
use verbkit::ensemble::{aggregate_logit, aggregate_proba, aggregate_vote, MemberOutput};
use verbkit::experiment::{sample_fewshot, FewShotSplit};
use verbkit::scoring::{
    class_logits_mean, class_logits_weighted, cross_entropy, predict_proba, ClassScores, ResolvedVerbalizer,
};
use verbkit::verbalizer::petal_scores;
use verbkit::{enrich_maven, CoreWordForm, EmbeddingStore, Example, TokenId, Verbalizer, VocabLogits};

const VOCAB: usize = 40;

/// Random verbalizer over a 40-token vocabulary: 2-5 labels, 1-4 words each, words of 1-3 tokens.
fn verbalizer() -> impl Strategy<Value = (Vec<Vec<Vec<TokenId>>>, Vec<Vec<f64>>)> {
    prop::collection::vec(
        prop::collection::vec(
            (prop::collection::vec(0..VOCAB as u32, 1..=3), 0.05f64..3.0),
            1..=4,
        ),
        2..=5,
    )
    .prop_map(|labels| {
        let words = labels
            .iter()
            .map(|ws| ws.iter().map(|(ids, _)| ids.iter().map(|&i| TokenId(i)).collect()).collect())
            .collect();
        let weights = labels.iter().map(|ws| ws.iter().map(|(_, q)| *q).collect()).collect();
        (words, weights)
    })
}

fn resolved(words: &[Vec<Vec<TokenId>>], weights: Vec<Vec<f64>>) -> ResolvedVerbalizer {
    let labels = (0..words.len()).map(|y| format!("y{y}")).collect();
    ResolvedVerbalizer::from_ids(labels, words.to_vec(), weights).unwrap()
}

fn ones(words: &[Vec<Vec<TokenId>>]) -> Vec<Vec<f64>> {
    words.iter().map(|ws| vec![1.0; ws.len()]).collect()
}

/// Logits on a 1/256 grid, so adding an integer is exact in f32.
fn grid_logits() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-4096i32..4096, VOCAB).prop_map(|v| v.into_iter().map(|x| x as f32 / 256.0).collect())
}

fn store(rows: &[Vec<f32>]) -> EmbeddingStore {
    let words = (0..rows.len()).map(|i| format!("w{i}")).collect();
    EmbeddingStore::from_rows(words, rows.to_vec()).unwrap()
}

fn oracle_top_k(rows: &[Vec<f32>], q: usize, k: usize) -> Vec<(usize, f64)> {
    let norm = |r: &[f32]| r.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let mut all: Vec<(usize, f64)> = (0..rows.len())
        .filter(|&i| i != q && norm(&rows[i]) > 0.0)
        .map(|i| {
            let d: f64 = rows[q].iter().zip(&rows[i]).map(|(&a, &b)| a as f64 * b as f64).sum();
            (i, (d / (norm(&rows[q]) * norm(&rows[i]))).clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f32>>> {
    (2usize..6).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-4i8..=4, d), 3..40))
        .prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let mut r: Vec<f32> = r.into_iter().map(f32::from).collect();
                    if r.iter().all(|&x| x == 0.0) {
                        r[0] = 1.0;
                    }
                    r
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn unit_weights_reduce_to_the_mean((words, _) in verbalizer(), logits in prop::collection::vec(-50f32..50.0, VOCAB)) {
        let vl = VocabLogits(logits);
        let mean = class_logits_mean(&vl, &resolved(&words, ones(&words)));
        let weighted = class_logits_weighted(&vl, &resolved(&words, ones(&words))).unwrap();
        prop_assert_eq!(mean.logits(), weighted.logits());
    }

    #[test]
    fn vocab_shift_leaves_probabilities((words, _) in verbalizer(), logits in grid_logits(), c in -100i32..100) {
        let v = resolved(&words, ones(&words));
        let base = predict_proba(&class_logits_mean(&VocabLogits(logits.clone()), &v)).unwrap();
        let shifted: Vec<f32> = logits.iter().map(|x| x + c as f32).collect();
        let moved = predict_proba(&class_logits_mean(&VocabLogits(shifted), &v)).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rescaling_one_label_keeps_its_logit(
        (words, weights) in verbalizer(),
        logits in prop::collection::vec(-20f32..20.0, VOCAB),
        scale in 0.01f64..100.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let vl = VocabLogits(logits);
        let y = pick.index(words.len());
        let base = class_logits_weighted(&vl, &resolved(&words, weights.clone())).unwrap();
        let mut scaled = weights;
        scaled[y].iter_mut().for_each(|q| *q *= scale);
        let after = class_logits_weighted(&vl, &resolved(&words, scaled)).unwrap();
        for (a, b) in base.logits().iter().zip(after.logits()) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
        let l = base.logits();
        let top = base.argmax();
        let runner_up = l.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, x)| *x).fold(f64::NEG_INFINITY, f64::max);
        if l[top] - runner_up > 1e-6 {
            prop_assert_eq!(top, after.argmax());
        }
    }

    #[test]
    fn probabilities_are_a_distribution(logits in prop::collection::vec(-700f64..700.0, 1..12)) {
        let cs = ClassScores::new(logits);
        let p = predict_proba(&cs).unwrap();
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert_eq!(cs.argmax(), verbkit::scoring::ClassScores::new(p).argmax());
    }

    #[test]
    fn cross_entropy_matches_two_step_oracle(logits in prop::collection::vec(-30f64..30.0, 2..10), g in any::<prop::sample::Index>()) {
        let gold = g.index(logits.len());
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
        let oracle = -((logits[gold] - max).exp() / z).ln();
        let ce = cross_entropy(&ClassScores::new(logits), gold).unwrap();
        prop_assert!((ce - oracle).abs() < 1e-6);
    }

    #[test]
    fn top_k_matches_exhaustive_scan(rows in rows_strategy(), q in any::<prop::sample::Index>(), k in any::<prop::sample::Index>()) {
        let s = store(&rows);
        let q = q.index(rows.len());
        let k = k.index(rows.len());
        let got = s.top_k_by_index(q, k).unwrap();
        let expected = oracle_top_k(&rows, q, k);
        prop_assert_eq!(got.len(), expected.len());
        for (n, (i, sim)) in got.iter().zip(&expected) {
            prop_assert_eq!(&n.word, &format!("w{i}"));
            prop_assert!((n.similarity - sim).abs() < 1e-12);
        }
        prop_assert!(got.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        prop_assert!(got.iter().all(|n| (-1.0..=1.0).contains(&n.similarity)));
    }

    #[test]
    fn top_k_is_scale_free(rows in rows_strategy(), q in any::<prop::sample::Index>(), e in -6i32..6) {
        let q = q.index(rows.len());
        let k = rows.len() - 1;
        let scale = 2f32.powi(e);
        let scaled: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
        prop_assert_eq!(store(&rows).top_k_by_index(q, k).unwrap(), store(&scaled).top_k_by_index(q, k).unwrap());
    }

    #[test]
    fn enrichment_keeps_cores_and_grows_by_prefix(rows in rows_strategy(), k in 0usize..6) {
        prop_assume!(rows.len() > k + 2);
        let s = store(&rows);
        let v = Verbalizer::new(vec![("a".into(), vec!["w0".into()]), ("b".into(), vec!["w1".into(), "w2".into()])]).unwrap();
        let small = enrich_maven(&v, &s, k, CoreWordForm::Bare).unwrap().verbalizer;
        let big = enrich_maven(&v, &s, k + 1, CoreWordForm::Bare).unwrap().verbalizer;
        for y in 0..2 {
            let small_words: Vec<&str> = small.entries(y).iter().map(|w| w.word.as_str()).collect();
            for core in v.words(y) {
                prop_assert!(small_words.contains(&core.as_str()));
                let core_entry = small.entries(y).iter().find(|w| &w.word == core).unwrap();
                prop_assert_eq!(core_entry.weight, 1.0);
            }
            let big_words: Vec<&str> = big.entries(y).iter().map(|w| w.word.as_str()).collect();
            prop_assert!(small_words.iter().all(|w| big_words.contains(w)));
        }
        // A single core word spans exactly k + 1 words.
        prop_assert_eq!(small.entries(0).len(), k + 1);
        let nb = s.top_k_neighbors("w0", k).unwrap();
        for (entry, n) in small.entries(0)[1..].iter().zip(&nb) {
            prop_assert_eq!(&entry.word, &n.word);
            prop_assert_eq!(entry.weight, n.similarity);
        }
    }

    #[test]
    fn petal_scores_ignore_logit_shifts(
        rows in prop::collection::vec(grid_logits(), 2..8),
        shifts in prop::collection::vec(-50i32..50, 8),
        gold_seed in prop::collection::vec(0usize..3, 8),
    ) {
        let gold: Vec<usize> = gold_seed[..rows.len()].to_vec();
        let cands: Vec<TokenId> = (0..VOCAB as u32).map(TokenId).collect();
        let lp: Vec<Vec<f64>> = rows.iter().map(|r| VocabLogits(r.clone()).log_softmax()).collect();
        let lp_shifted: Vec<Vec<f64>> = rows
            .iter()
            .zip(&shifts)
            .map(|(r, &c)| VocabLogits(r.iter().map(|x| x + c as f32).collect()).log_softmax())
            .collect();
        for y in 0..3 {
            let a = petal_scores(&lp, &gold, y, &cands);
            let b = petal_scores(&lp_shifted, &gold, y, &cands);
            for (x, z) in a.iter().zip(&b) {
                prop_assert!((x - z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_is_stratified_and_disjoint(
        classes in 1usize..15,
        per_class in prop::collection::vec(0usize..30, 15),
        n in 0usize..80,
        seed in any::<u64>(),
    ) {
        let mut pool = Vec::new();
        for y in 0..classes {
            for i in 0..per_class[y] {
                pool.push(Example::new(format!("{y}-{i}"), [("text", "x")], Some(y)));
            }
        }
        let expected: Vec<usize> = (0..classes).map(|y| n / classes + usize::from(y < n % classes)).collect();
        let feasible = (0..classes).all(|y| expected[y] <= per_class[y]);
        match sample_fewshot(&pool, classes, n, seed) {
            Err(_) => prop_assert!(!feasible && n > 0),
            Ok(split) => {
                prop_assert!(feasible || n == 0);
                check_split(&split, &expected, n);
                prop_assert_eq!(&split, &sample_fewshot(&pool, classes, n, seed).unwrap());
            }
        }
    }

    #[test]
    fn agreeing_members_agree_under_every_strategy(
        base in prop::collection::vec(-10f64..10.0, 2..6),
        noise in prop::collection::vec(prop::collection::vec(0f64..1.0, 6), 1..5),
    ) {
        let top = ClassScores::new(base.clone()).argmax();
        let members: Vec<MemberOutput> = noise
            .iter()
            .enumerate()
            .map(|(t, nz)| {
                let mut l: Vec<f64> = base.iter().zip(nz).map(|(b, e)| b + e - 20.0).collect();
                l[top] += 50.0;
                MemberOutput::new(t as u32, l)
            })
            .collect();
        prop_assert_eq!(aggregate_vote(&members).unwrap(), top);
        prop_assert_eq!(aggregate_proba(&members).unwrap(), top);
        prop_assert_eq!(aggregate_logit(&members).unwrap(), top);
    }

    #[test]
    fn proba_averaging_ignores_member_shifts(
        logits in prop::collection::vec(prop::collection::vec(-2048i32..2048, 4), 1..5),
        shifts in prop::collection::vec(-64i32..64, 5),
    ) {
        let to = |l: &Vec<i32>, c: i32| l.iter().map(|&x| (x + 256 * c) as f64 / 256.0).collect::<Vec<_>>();
        let a: Vec<MemberOutput> = logits.iter().enumerate().map(|(t, l)| MemberOutput::new(t as u32, to(l, 0))).collect();
        let b: Vec<MemberOutput> = logits.iter().enumerate().map(|(t, l)| MemberOutput::new(t as u32, to(l, shifts[t]))).collect();
        let (pa, pb) = (mean_proba(&a), mean_proba(&b));
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let best = pa.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if pa.iter().filter(|&&p| best - p < 1e-9).count() == 1 {
            prop_assert_eq!(aggregate_proba(&a).unwrap(), aggregate_proba(&b).unwrap());
        }
    }
}

fn mean_proba(members: &[MemberOutput]) -> Vec<f64> {
    let c = members[0].scores.len();
    let mut acc = vec![0.0; c];
    for m in members {
        for (a, p) in acc.iter_mut().zip(predict_proba(&m.scores).unwrap()) {
            *a += p / members.len() as f64;
        }
    }
    acc
}

fn check_split(split: &FewShotSplit, expected: &[usize], n: usize) {
    assert_eq!(split.d_train.len() + split.d_valid.len(), n);
    assert_eq!(split.d_train.len(), n.div_ceil(2));
    for (y, &want) in expected.iter().enumerate() {
        let tr = split.d_train.iter().filter(|x| x.label == Some(y)).count();
        let va = split.d_valid.iter().filter(|x| x.label == Some(y)).count();
        assert_eq!(tr + va, want);
        assert!(tr == want / 2 || tr == want.div_ceil(2), "class {y}: {tr} of {want}");
    }
    let train: std::collections::HashSet<&str> = split.d_train.iter().map(|x| x.id.as_str()).collect();
    assert!(split.d_valid.iter().all(|x| !train.contains(x.id.as_str())));
    assert_eq!(train.len(), split.d_train.len());
}

#[test]
fn petal_finds_planted_tokens() {
    use verbkit::MaskedLm;
    let lm = common::StubLm::new(3, 30, 42);
    let t = verbkit::Template::parse(0, "{text} is {mask}").unwrap();
    let train: Vec<Example> = (0..12).map(|i| lm.example(i, i % 3)).collect();
    let labels: Vec<String> = (0..3).map(|y| format!("L{y}")).collect();
    let v = verbkit::build_petal(&train, &t, &lm, &labels, 2).unwrap();
    for y in 0..3 {
        assert_eq!(v.words(y).len(), 2);
        let top = lm.tokenize_label_word(&v.words(y)[0]).unwrap();
        assert_eq!(top, vec![lm.planted[y]]);
    }
    let one = verbkit::build_petal(&train, &t, &lm, &labels, 1).unwrap();
    assert!((0..3).all(|y| one.words(y).len() == 1));
    let missing: Vec<Example> = (0..4).map(|i| lm.example(i, i % 2)).collect();
    assert!(verbkit::build_petal(&missing, &t, &lm, &labels, 1).is_err());
}
