mod common;

use forge_core::analysis::FEATURE_WIDTH;
use forge_core::benchkit::{generate_corpus_from, BenchmarkItem, CorpusConfig, PreparedProject};
use forge_core::coevolve::{
    coevolve, detect, injected_rank, loss, policy_sample, policy_update, rank_by, recall_at_k,
    train_detector, training_examples, ArmChoice, CoevolveConfig, CoevolveError, DegenerateCorpus,
    DetectorModel, Example, PolicyState, TrainConfig,
};
use forge_core::harness::load_project;
use forge_core::inject::catalog::PatternId;
use forge_core::json::to_canonical;

use common::{check_golden, fixtures, prepared};

fn all_projects(seed: u64) -> Vec<PreparedProject> {
    let dirs = forge_core::benchkit::project_dirs(&fixtures().join("projects")).unwrap();
    forge_core::benchkit::prepare_projects(&dirs, seed).unwrap()
}

fn p2_program() -> forge_core::lang::Program {
    load_project(&common::project_dir("p2"))
        .unwrap()
        .program()
        .unwrap()
}

fn small_corpus() -> Vec<BenchmarkItem> {
    let projects = vec![prepared("p2", 1), prepared("p14", 1), prepared("p15", 1)];
    let config = CorpusConfig {
        n_attempts: 12,
        seed: 3,
        ..CorpusConfig::default()
    };
    generate_corpus_from(&projects, &config).items
}

#[test]
fn zero_model_ranks_by_site_id() {
    let model = DetectorModel::zero(TrainConfig::default());
    let ranked = detect(&model, &p2_program());
    assert!(ranked.len() >= 3);
    assert!(ranked.iter().all(|s| s.score == 0.5));
    let ids: Vec<u32> = ranked.iter().map(|s| s.site.site_id).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn cross_file_weight_puts_cross_file_sites_first() {
    let mut model = DetectorModel::zero(TrainConfig::default());
    model.weights[4] = 10.0;
    let ranked = detect(&model, &p2_program());
    let flags: Vec<bool> = ranked
        .iter()
        .map(|s| s.site.path.cross_file_depth >= 2)
        .collect();
    assert!(flags.contains(&true) && flags.contains(&false), "{flags:?}");
    let first_single = flags.iter().position(|f| !f).unwrap();
    assert!(flags[first_single..].iter().all(|f| !f), "{flags:?}");
}

#[test]
fn rank_by_breaks_ties_by_site_id() {
    let ranked = rank_by(&p2_program(), |x| x[1]);
    for w in ranked.windows(2) {
        assert!(
            w[0].score > w[1].score
                || (w[0].score == w[1].score && w[0].site.site_id < w[1].site.site_id)
        );
    }
}

fn separable() -> Vec<Example> {
    let mut pos = [0.0; FEATURE_WIDTH];
    pos[0] = 1.0;
    pos[1] = 1.0;
    let mut neg = [0.0; FEATURE_WIDTH];
    neg[0] = 1.0;
    vec![
        Example {
            features: pos,
            label: true,
        },
        Example {
            features: neg,
            label: false,
        },
    ]
}

#[test]
fn training_reduces_loss_on_separable_data() {
    for seed in 0..10 {
        let model = DetectorModel::zero(TrainConfig {
            seed,
            ..TrainConfig::default()
        });
        let t = train_detector(&model, &separable()).unwrap();
        assert!(
            t.loss_after < t.loss_before,
            "seed {seed}: {} !< {}",
            t.loss_after,
            t.loss_before
        );
        assert_eq!(t.loss_before, std::f64::consts::LN_2);
        assert_eq!(t.loss_after, loss(&t.model, &separable()));
    }
}

#[test]
fn degenerate_training_sets() {
    let model = DetectorModel::zero(TrainConfig::default());
    assert_eq!(train_detector(&model, &[]).unwrap_err(), DegenerateCorpus);
    let only_pos = vec![separable()[0].clone()];
    assert_eq!(
        train_detector(&model, &only_pos).unwrap_err(),
        DegenerateCorpus
    );
}

#[test]
fn recall_bounds() {
    let items = small_corpus();
    assert!(items.len() >= 3, "{}", items.len());
    let model = DetectorModel::zero(TrainConfig::default());
    assert_eq!(recall_at_k(&model, &items, 10_000), 1.0);
    assert_eq!(recall_at_k(&model, &[], 5), 0.0);

    // A large negative weight on the injected sink kind pushes that site
    // below any site of another kind.
    let item = items
        .iter()
        .find(|i| {
            let program = i.patched_program().unwrap();
            let kinds: std::collections::BTreeSet<_> = detect(&model, &program)
                .iter()
                .map(|s| s.site.path.sink_kind)
                .collect();
            kinds.len() > 1
        })
        .expect("an item on a program with mixed sink kinds");
    let sink = item.labels.injected_site.sink_kind;
    let mut adversarial = DetectorModel::zero(TrainConfig::default());
    let x = {
        let program = item.patched_program().unwrap();
        detect(&model, &program)
            .into_iter()
            .find(|s| s.site.path.sink_kind == sink)
            .unwrap()
            .site
            .features
    };
    let slot = (5..9).find(|&i| x[i] == 1.0).unwrap();
    adversarial.weights[slot] = -1e6;
    assert_eq!(
        recall_at_k(&adversarial, std::slice::from_ref(item), 1),
        0.0
    );
    assert!(injected_rank(&adversarial, item).unwrap() > 1);
}

#[test]
fn training_examples_mark_the_injected_site_positive() {
    let items = small_corpus();
    let mut total = 0;
    for item in &items {
        let examples = training_examples(std::slice::from_ref(item));
        let positives = examples.iter().filter(|e| e.label).count();
        assert!(positives >= 1, "{}", item.item_id);
        total += examples.len();
    }
    assert_eq!(training_examples(&items).len(), total);
}

fn four_arms() -> PolicyState {
    PolicyState::new(
        vec![
            PatternId::P1OffByOne,
            PatternId::P2GuardRemoval,
            PatternId::P3OverflowGuard,
            PatternId::P4DivGuard,
        ],
        0.1,
    )
}

#[test]
fn exp3_fresh_state_is_uniform() {
    assert_eq!(four_arms().probabilities(), vec![0.25; 4]);
}

#[test]
fn exp3_single_update_matches_hand_computation() {
    let state = four_arms();
    let choice = ArmChoice {
        arm: PatternId::P2GuardRemoval,
        probability: 0.25,
    };
    let next = policy_update(&state, choice, 1.0);
    // Weights are rescaled to max 1; the distribution is what matters.
    let w = 0.1f64.exp();
    let expected = 0.9 * (w / (w + 3.0)) + 0.025;
    let p = next.probabilities();
    assert!((p[1] - expected).abs() < 1e-12);
    assert!((p[1] - 0.26729).abs() < 1e-5);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let same = policy_update(&state, choice, 0.0);
    assert_eq!(same, state);
}

#[test]
fn sampling_respects_eligibility() {
    let state = four_arms();
    for seed in 0..50 {
        let c = policy_sample(
            &state,
            &[PatternId::P4DivGuard, PatternId::P1OffByOne],
            seed,
        )
        .unwrap();
        assert!(matches!(
            c.arm,
            PatternId::P4DivGuard | PatternId::P1OffByOne
        ));
        assert_eq!(c.probability, 0.5);
    }
    assert!(policy_sample(&state, &[PatternId::P5BoundSwap], 0).is_none());
}

#[test]
fn coevolve_rejects_bad_configs() {
    let config = CoevolveConfig {
        rounds: 0,
        ..CoevolveConfig::default()
    };
    assert_eq!(
        coevolve(&[prepared("p2", 0)], &config).unwrap_err(),
        CoevolveError::NoRounds
    );
    assert_eq!(
        coevolve(&[], &CoevolveConfig::default()).unwrap_err(),
        CoevolveError::NoProjects
    );
}

#[test]
fn one_round_report_shape() {
    let config = CoevolveConfig {
        rounds: 1,
        per_round: 6,
        seed: 5,
        ..CoevolveConfig::default()
    };
    let run = coevolve(&[prepared("p2", 0), prepared("p15", 0)], &config).unwrap();
    let r = &run.report.rounds[0];
    assert_eq!(r.attempts, 6);
    assert_eq!(r.items_generated, run.items.len());
    assert_eq!(r.arm_counts.values().sum::<usize>(), r.items_generated);
    let recall = r.recall_at_k.unwrap();
    assert!((0.0..=1.0).contains(&recall));
    assert_eq!(r.evasion_rate, Some(1.0 - recall));
    assert!((r.arm_probabilities.values().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn five_round_trajectory_matches_golden() {
    let config = CoevolveConfig {
        seed: 42,
        ..CoevolveConfig::default()
    };
    let projects = all_projects(42);
    let run = coevolve(&projects, &config).unwrap();
    let again = coevolve(&projects, &config).unwrap();
    assert_eq!(run.report, again.report);
    check_golden(
        "coevolve_rounds.json",
        &to_canonical(&run.report.rounds).unwrap(),
    );
}

#[test]
fn seeded_training_on_batch_corpus_matches_golden() {
    let config = CorpusConfig {
        n_attempts: 100,
        seed: 42,
        jobs: 4,
        ..CorpusConfig::default()
    };
    let items = generate_corpus_from(&all_projects(42), &config).items;
    let model = DetectorModel::zero(TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    });
    let t = train_detector(&model, &training_examples(&items)).unwrap();
    assert!(t.loss_after < t.loss_before);
    let ranks: Vec<Option<usize>> = items.iter().map(|i| injected_rank(&t.model, i)).collect();
    let record = serde_json::json!({
        "loss_before": t.loss_before,
        "loss_after": t.loss_after,
        "first_item": items[0].item_id,
        "first_item_rank": ranks[0],
        "recall_at_5": recall_at_k(&t.model, &items, 5),
    });
    if std::env::var_os("FORGE_BLESS").is_some() {
        check_golden("detector_seed7.json", &to_canonical(&record).unwrap());
        return;
    }
    let golden = std::fs::read_to_string(fixtures().join("golden/detector_seed7.json")).unwrap();
    let g: serde_json::Value = serde_json::from_str(&golden).unwrap();
    assert!((g["loss_after"].as_f64().unwrap() - t.loss_after).abs() < 1e-9);
    assert!((g["loss_before"].as_f64().unwrap() - t.loss_before).abs() < 1e-9);
    assert_eq!(g["first_item"], record["first_item"]);
    assert_eq!(g["first_item_rank"], record["first_item_rank"]);
    assert_eq!(g["recall_at_5"], record["recall_at_5"]);
}
