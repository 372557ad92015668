//! Offline evaluation protocol: k-fold cross validation over rating
//! triples with a within-train validation split, cohort-stratified RMSE,
//! and the two-stage train/blend procedure.
//!
//! Two different count bases coexist on purpose: the gate blends with item
//! counts taken over the train set only, while cohort membership (whole /
//! little-known / cold-start) uses counts over train plus validation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::als::{predict_als, train_als, AlsHyperParams};
use crate::dataset::{RatingDataset, RatingTriple, RatingsRef, TagMatrix};
use crate::error::{Error, Result};
use crate::gate::{blend, train_gate, BlendTriple, GateParams};
use crate::lasso::{predict_lasso, train_lasso, LassoHyperParams};

/// Which subset of one fold a triple lands in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Valid,
    Test,
}

/// Deterministic fold and validation assignments for every triple.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub k: usize,
    pub seed: u64,
    fold_of: Vec<u8>,
    /// valid[f][i] marks triple i as validation within fold f's complement.
    valid: Vec<Vec<bool>>,
}

impl SplitPlan {
    pub fn n_triples(&self) -> usize {
        self.fold_of.len()
    }

    /// The test fold each triple belongs to.
    pub fn fold_assignments(&self) -> &[u8] {
        &self.fold_of
    }

    pub fn role(&self, fold: usize, triple_index: usize) -> Role {
        if self.fold_of[triple_index] as usize == fold {
            Role::Test
        } else if self.valid[fold][triple_index] {
            Role::Valid
        } else {
            Role::Train
        }
    }

    /// Triple indices with the given role in the given fold, in dataset order.
    pub fn indices(&self, fold: usize, role: Role) -> Vec<usize> {
        (0..self.n_triples())
            .filter(|&i| self.role(fold, i) == role)
            .collect()
    }
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 of the salted seed; keeps per-fold streams independent.
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Partitions triple indices into k equal-as-possible test folds from a
/// seeded shuffle, then marks a seeded `valid_fraction` of each fold's
/// complement as validation. With k=5 and 30% this yields the 56/24/20
/// train/validation/test proportions, each within one triple of exact.
pub fn make_split(n_triples: usize, k: usize, valid_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::InvalidConfig("need at least 2 folds".into()));
    }
    if !(0.0..1.0).contains(&valid_fraction) {
        return Err(Error::InvalidConfig(
            "valid_fraction must be in [0, 1)".into(),
        ));
    }
    if n_triples < k {
        return Err(Error::EmptyInput(format!(
            "{n_triples} triples cannot be split into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_triples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut fold_of = vec![0u8; n_triples];
    let base = n_triples / k;
    let extra = n_triples % k;
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &idx in &order[cursor..cursor + size] {
            fold_of[idx] = fold as u8;
        }
        cursor += size;
    }

    let mut valid = Vec::with_capacity(k);
    for fold in 0..k {
        let mut complement: Vec<usize> = (0..n_triples)
            .filter(|&i| fold_of[i] as usize != fold)
            .collect();
        let take = (valid_fraction * complement.len() as f64).round() as usize;
        complement.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            fold as u64 + 1,
        )));
        let mut mask = vec![false; n_triples];
        for &i in &complement[..take] {
            mask[i] = true;
        }
        valid.push(mask);
    }

    Ok(SplitPlan {
        k,
        seed,
        fold_of,
        valid,
    })
}

/// Seeded single holdout split: returns `(fit, holdout)` triple indices in
/// dataset order, with `round(fraction * n)` triples held out.
pub fn holdout_split(
    n_triples: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(
            "holdout fraction must be in [0, 1)".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n_triples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        0x686f_6c64,
    )));
    let take = (fraction * n_triples as f64).round() as usize;
    let mut holdout = order[..take].to_vec();
    let mut fit = order[take..].to_vec();
    holdout.sort_unstable();
    fit.sort_unstable();
    Ok((fit, holdout))
}

/// Exact rating multiplicity of every item over the given triples.
pub fn item_counts(triples: &[RatingTriple], n_items: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_items];
    for t in triples {
        counts[t.item_index] += 1;
    }
    counts
}

/// Indices (into the test slice) of the three popularity cohorts. An item
/// counts as little-known when it has strictly fewer than `threshold`
/// ratings, and cold when it has none, so cold is a subset of little-known.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSets {
    pub whole: Vec<usize>,
    pub little_known: Vec<usize>,
    pub cold: Vec<usize>,
}

pub fn cohorts(test_triples: &[RatingTriple], counts: &[usize], threshold: usize) -> CohortSets {
    let mut sets = CohortSets {
        whole: (0..test_triples.len()).collect(),
        little_known: Vec::new(),
        cold: Vec::new(),
    };
    for (i, t) in test_triples.iter().enumerate() {
        let c = counts[t.item_index];
        if c < threshold {
            sets.little_known.push(i);
        }
        if c == 0 {
            sets.cold.push(i);
        }
    }
    sets
}

/// Root mean squared error over paired predictions and truths.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("rmse of an empty set".into()));
    }
    let mean_sq = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mean_sq.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Als,
    Lasso,
    Balse,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Als, Model::Lasso, Model::Balse];

    pub fn index(self) -> usize {
        match self {
            Model::Als => 0,
            Model::Lasso => 1,
            Model::Balse => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Model::Als => "ALS",
            Model::Lasso => "LASSO",
            Model::Balse => "BALSE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cohort {
    Whole,
    LittleKnown,
    ColdStart,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Whole, Cohort::LittleKnown, Cohort::ColdStart];

    pub fn index(self) -> usize {
        match self {
            Cohort::Whole => 0,
            Cohort::LittleKnown => 1,
            Cohort::ColdStart => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Cohort::Whole => "whole",
            Cohort::LittleKnown => "little_known",
            Cohort::ColdStart => "cold_start",
        }
    }
}

/// One fold's scores: RMSE per model per cohort (absent when the cohort is
/// empty), cohort sizes, and the gate fit that produced the blend.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub rmse: [[Option<f64>; 3]; 3],
    pub cohort_sizes: [usize; 3],
    pub gate: GateParams,
    pub gate_initial_loss: f64,
    pub gate_final_loss: f64,
}

/// Cross-validated report over all folds.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortReport {
    pub folds: Vec<FoldResult>,
    pub cohort_threshold: usize,
}

impl CohortReport {
    /// Mean, sample standard deviation and fold count for one cell,
    /// computed over the folds where the cohort was nonempty.
    pub fn summary(&self, model: Model, cohort: Cohort) -> Option<(f64, f64, usize)> {
        let values: Vec<f64> = self
            .folds
            .iter()
            .filter_map(|f| f.rmse[model.index()][cohort.index()])
            .collect();
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some((mean, std, n))
    }

    /// True if any fold learned a non-positive sharpness (inverted gate).
    pub fn gate_warning(&self) -> bool {
        self.folds.iter().any(|f| f.gate.beta <= 0.0)
    }
}

/// Everything the experiment needs besides the data itself. Defaults match
/// the standard configuration: lambda 0.1 / rank 20 / 10 sweeps, alpha 0.01,
/// 15000 gate steps, 5 folds with 30% of the train side held out, and a
/// little-known threshold of 3 ratings.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub als: AlsHyperParams,
    pub lasso: LassoHyperParams,
    pub gate_iters: usize,
    pub k_folds: usize,
    pub valid_fraction: f64,
    pub cohort_threshold: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            als: AlsHyperParams::default(),
            lasso: LassoHyperParams::default(),
            gate_iters: 15000,
            k_folds: 5,
            valid_fraction: 0.30,
            cohort_threshold: 3,
            seed: 42,
        }
    }
}

/// Scores one fold given the predictions of all three models on the test
/// triples and the train+valid item counts.
pub fn score_fold(
    test_triples: &[RatingTriple],
    als_preds: &[f64],
    lasso_preds: &[f64],
    balse_preds: &[f64],
    counts_train_plus_valid: &[usize],
    threshold: usize,
) -> Result<[[Option<f64>; 3]; 3]> {
    for preds in [als_preds, lasso_preds, balse_preds] {
        if preds.len() != test_triples.len() {
            return Err(Error::DimensionMismatch(
                "prediction count does not match test triples".into(),
            ));
        }
    }
    let sets = cohorts(test_triples, counts_train_plus_valid, threshold);
    let truths: Vec<f64> = test_triples.iter().map(|t| t.value).collect();
    let mut table = [[None; 3]; 3];
    for (model, preds) in Model::ALL.iter().zip([als_preds, lasso_preds, balse_preds]) {
        for cohort in Cohort::ALL {
            let indices = match cohort {
                Cohort::Whole => &sets.whole,
                Cohort::LittleKnown => &sets.little_known,
                Cohort::ColdStart => &sets.cold,
            };
            if indices.is_empty() {
                continue;
            }
            let p: Vec<f64> = indices.iter().map(|&i| preds[i]).collect();
            let t: Vec<f64> = indices.iter().map(|&i| truths[i]).collect();
            table[model.index()][cohort.index()] = Some(rmse(&p, &t)?);
        }
    }
    Ok(table)
}

fn gather(triples: &[RatingTriple], indices: &[usize]) -> Vec<RatingTriple> {
    indices.iter().map(|&i| triples[i]).collect()
}

fn check_finite(value: f64, what: &str, t: &RatingTriple) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            context: format!(
                "{what} prediction for user {} item {}",
                t.user_index, t.item_index
            ),
            trace: vec![value],
        })
    }
}

fn run_fold(
    dataset: &RatingDataset,
    tags: &TagMatrix,
    plan: &SplitPlan,
    fold: usize,
    config: &ExperimentConfig,
) -> Result<FoldResult> {
    let all = dataset.triples();
    let n = dataset.n_users();
    let m = dataset.n_items();
    // Subsets are gathered in dataset order, which keeps fold runs
    // deterministic regardless of how the shuffle stored its masks.
    let train = gather(all, &plan.indices(fold, Role::Train));
    let valid = gather(all, &plan.indices(fold, Role::Valid));
    let test = gather(all, &plan.indices(fold, Role::Test));

    // Stage 1: blocks on train only, gate on validation with train counts.
    let train_ref = RatingsRef {
        n_users: n,
        n_items: m,
        triples: &train,
    };
    let als_hyper = AlsHyperParams {
        seed: derive_seed(config.seed, 1000 + fold as u64),
        ..config.als.clone()
    };
    let als_train = train_als(train_ref, &als_hyper)?;
    let lasso_train = train_lasso(train_ref, tags, &config.lasso)?;
    let counts_train = item_counts(&train, m);

    let mut blend_triples = Vec::with_capacity(valid.len());
    for t in &valid {
        let a = check_finite(
            predict_als(&als_train, t.user_index, t.item_index)?,
            "als",
            t,
        )?;
        let l = check_finite(
            predict_lasso(&lasso_train, tags, t.user_index, t.item_index)?,
            "lasso",
            t,
        )?;
        blend_triples.push(BlendTriple {
            als_pred: a,
            lasso_pred: l,
            item_count: counts_train[t.item_index],
            truth: t.value,
        });
    }
    let init = GateParams::init_for(&blend_triples);
    let fit = train_gate(&blend_triples, init, config.gate_iters)?;

    // Stage 2: vanilla blocks on train + validation, blended with the
    // learned parameters and the train-only counts.
    let mut trainval = Vec::with_capacity(train.len() + valid.len());
    trainval.extend_from_slice(&train);
    trainval.extend_from_slice(&valid);
    let trainval_ref = RatingsRef {
        n_users: n,
        n_items: m,
        triples: &trainval,
    };
    let als_hyper_tv = AlsHyperParams {
        seed: derive_seed(config.seed, 2000 + fold as u64),
        ..config.als.clone()
    };
    let als_vanilla = train_als(trainval_ref, &als_hyper_tv)?;
    let lasso_vanilla = train_lasso(trainval_ref, tags, &config.lasso)?;
    let counts_tv = item_counts(&trainval, m);

    let mut als_preds = Vec::with_capacity(test.len());
    let mut lasso_preds = Vec::with_capacity(test.len());
    let mut balse_preds = Vec::with_capacity(test.len());
    for t in &test {
        let a = check_finite(
            predict_als(&als_vanilla, t.user_index, t.item_index)?,
            "als",
            t,
        )?;
        let l = check_finite(
            predict_lasso(&lasso_vanilla, tags, t.user_index, t.item_index)?,
            "lasso",
            t,
        )?;
        let b = blend(
            &BlendTriple {
                als_pred: a,
                lasso_pred: l,
                item_count: counts_train[t.item_index],
                truth: t.value,
            },
            &fit.params,
        );
        als_preds.push(a);
        lasso_preds.push(l);
        balse_preds.push(check_finite(b, "blended", t)?);
    }

    let table = score_fold(
        &test,
        &als_preds,
        &lasso_preds,
        &balse_preds,
        &counts_tv,
        config.cohort_threshold,
    )?;
    let sets = cohorts(&test, &counts_tv, config.cohort_threshold);
    Ok(FoldResult {
        rmse: table,
        cohort_sizes: [sets.whole.len(), sets.little_known.len(), sets.cold.len()],
        gate: fit.params,
        gate_initial_loss: fit.initial_loss,
        gate_final_loss: fit.final_loss,
    })
}

/// Runs the full protocol: per fold, train both blocks on the train split,
/// fit the gate on validation blend triples (train-only item counts), then
/// retrain both blocks on train+validation and score ALS, the tag model and
/// the blend on the test fold, stratified by cohort.
pub fn run_experiment(
    dataset: &RatingDataset,
    tags: &TagMatrix,
    config: &ExperimentConfig,
) -> Result<CohortReport> {
    if tags.n_items() != dataset.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "tag matrix has {} items but dataset has {}",
            tags.n_items(),
            dataset.n_items()
        )));
    }
    let plan = make_split(
        dataset.triples().len(),
        config.k_folds,
        config.valid_fraction,
        config.seed,
    )?;
    let folds: Result<Vec<FoldResult>> = (0..config.k_folds)
        .into_par_iter()
        .map(|fold| run_fold(dataset, tags, &plan, fold, config))
        .collect();
    Ok(CohortReport {
        folds: folds?,
        cohort_threshold: config.cohort_threshold,
    })
}

/// Machine-readable report: `model,cohort,fold,rmse` rows for every fold
/// plus `mean` and `std` summary rows.
pub fn write_report_csv<W: Write>(report: &CohortReport, mut w: W) -> Result<()> {
    writeln!(w, "model,cohort,fold,rmse")?;
    for model in Model::ALL {
        for cohort in Cohort::ALL {
            for (fold, result) in report.folds.iter().enumerate() {
                if let Some(v) = result.rmse[model.index()][cohort.index()] {
                    writeln!(w, "{},{},{},{}", model.label(), cohort.label(), fold, v)?;
                }
            }
            if let Some((mean, std, _)) = report.summary(model, cohort) {
                writeln!(w, "{},{},mean,{}", model.label(), cohort.label(), mean)?;
                writeln!(w, "{},{},std,{}", model.label(), cohort.label(), std)?;
            }
        }
    }
    Ok(())
}

/// Cohort sizes per fold as `cohort,fold,count` rows.
pub fn write_cohort_sizes_csv<W: Write>(report: &CohortReport, mut w: W) -> Result<()> {
    writeln!(w, "cohort,fold,count")?;
    for cohort in Cohort::ALL {
        for (fold, result) in report.folds.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                cohort.label(),
                fold,
                result.cohort_sizes[cohort.index()]
            )?;
        }
    }
    Ok(())
}

/// Human-readable summary table in the `mean ± std` format.
pub fn render_table(report: &CohortReport) -> String {
    let mut out = String::new();
    let folds = report.folds.len();
    out.push_str(&format!(
        "RMSE over {folds} folds (mean \u{b1} sample std; little-known = items with < {} train+valid ratings)\n",
        report.cohort_threshold
    ));
    out.push_str(&format!(
        "{:<8}{:>22}{:>22}{:>22}\n",
        "model", "whole test set", "little-known items", "cold-start items"
    ));
    for model in Model::ALL {
        let mut line = format!("{:<8}", model.label());
        for cohort in Cohort::ALL {
            match report.summary(model, cohort) {
                Some((mean, std, _)) => {
                    line.push_str(&format!("{:>13.5} \u{b1} {:<6.3}", mean, std));
                }
                None => line.push_str(&format!("{:>22}", "absent")),
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out.push_str("cohort sizes per fold:\n");
    for cohort in Cohort::ALL {
        let sizes: Vec<String> = report
            .folds
            .iter()
            .map(|f| f.cohort_sizes[cohort.index()].to_string())
            .collect();
        out.push_str(&format!("  {:<13} {}\n", cohort.label(), sizes.join(" ")));
    }
    out.push_str("gate fits per fold (beta, gamma, validation loss):\n");
    for (fold, f) in report.folds.iter().enumerate() {
        out.push_str(&format!(
            "  fold {fold}: beta={:.5} gamma={:.5} loss {:.4} -> {:.4}\n",
            f.gate.beta, f.gate.gamma, f.gate_initial_loss, f.gate_final_loss
        ));
    }
    if report.gate_warning() {
        out.push_str(
            "warning: a fold learned beta <= 0; the gate is inverted there (popular items lean on tags)\n",
        );
    }
    out
}
