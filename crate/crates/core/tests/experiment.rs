//! End-to-end experiment behavior on planted synthetic data: the blend must
//! rescue cold items when tags carry signal, and fall back to the
//! factorization when they do not.

use balse::eval::{item_counts, make_split, run_experiment, Cohort, ExperimentConfig, Model, Role};
use balse::gate::blend_weight;
use balse::lasso::{train_lasso, LassoHyperParams};
use balse::synth::{generate, SynthConfig};

fn planted(tag_signal: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        n_users: 150,
        n_items: 250,
        n_tags: 20,
        rank: 5,
        density: 0.06,
        cold_fraction: 0.2,
        tag_signal,
        noise_sd: 0.3,
        quantize: false,
        seed,
    }
}

fn experiment_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        ..Default::default()
    }
}

#[test]
fn blend_rescues_cold_items_when_tags_carry_signal() {
    let (dataset, tags, _) = generate(&planted(0.6, 21)).unwrap();
    let report = run_experiment(&dataset, &tags, &experiment_config(77)).unwrap();

    let (als_cold, _, _) = report.summary(Model::Als, Cohort::ColdStart).unwrap();
    let (balse_cold, _, _) = report.summary(Model::Balse, Cohort::ColdStart).unwrap();
    assert!(
        balse_cold < als_cold,
        "blend {balse_cold} should beat factorization {als_cold} on cold items"
    );

    let (als_whole, _, _) = report.summary(Model::Als, Cohort::Whole).unwrap();
    let (balse_whole, _, _) = report.summary(Model::Balse, Cohort::Whole).unwrap();
    assert!(
        balse_whole <= als_whole + 0.02,
        "blend {balse_whole} should stay close to factorization {als_whole} overall"
    );

    for fold in &report.folds {
        assert!(fold.cohort_sizes[1] <= fold.cohort_sizes[0]);
        assert!(fold.cohort_sizes[2] <= fold.cohort_sizes[1]);
    }
}

#[test]
fn fitted_preference_rows_are_sparse_like_the_planted_ones() {
    // Planted preferences touch 4 of 20 tags; with alpha 0.01 the L1 penalty
    // must zero out at least one coordinate for every fitted user.
    let (dataset, tags, _) = generate(&planted(0.8, 5)).unwrap();
    let model = train_lasso(dataset.as_ref(), &tags, &LassoHyperParams::default()).unwrap();
    for u in 0..model.n_users() {
        if !model.trained_user_mask()[u] {
            continue;
        }
        let zeros = model.dense_row(u).iter().filter(|&&w| w == 0.0).count();
        assert!(zeros >= 1, "user {u} has a fully dense preference row");
    }
}

#[test]
fn gate_prefers_factorization_when_tags_are_noise() {
    // tag_signal 0 leaves the tags uncorrelated with the ratings.
    let (dataset, tags, _) = generate(&planted(0.0, 13)).unwrap();
    let config = experiment_config(55);
    let report = run_experiment(&dataset, &tags, &config).unwrap();

    let plan = make_split(
        dataset.triples().len(),
        config.k_folds,
        config.valid_fraction,
        config.seed,
    )
    .unwrap();
    let mut toward_als = 0;
    for (fold, result) in report.folds.iter().enumerate() {
        let train: Vec<_> = plan
            .indices(fold, Role::Train)
            .iter()
            .map(|&i| dataset.triples()[i])
            .collect();
        let counts = item_counts(&train, dataset.n_items());
        let mut valid_counts: Vec<usize> = plan
            .indices(fold, Role::Valid)
            .iter()
            .map(|&i| counts[dataset.triples()[i].item_index])
            .collect();
        valid_counts.sort_unstable();
        let median = valid_counts[valid_counts.len() / 2];
        if blend_weight(median, &result.gate) > 0.5 {
            toward_als += 1;
        }
    }
    assert!(
        toward_als >= 4,
        "expected the gate to favor the factorization at median counts in most folds, got {toward_als}/5"
    );

    let (als_whole, _, _) = report.summary(Model::Als, Cohort::Whole).unwrap();
    let (balse_whole, _, _) = report.summary(Model::Balse, Cohort::Whole).unwrap();
    assert!(balse_whole <= als_whole + 0.02);
}
