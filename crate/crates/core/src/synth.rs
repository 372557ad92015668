//! Planted-model synthetic data: a low-rank collaborative signal mixed with
//! a sparse tag-preference signal, with a controllable fraction of items
//! forced down to one or two ratings so the cold-start cohorts are nonempty.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{RatingDataset, RatingTriple, TagMatrix};
use crate::error::{Error, Result};
use crate::lasso::clamp_tau;

/// The six values the categorical labels map to; used when quantizing.
pub const RATING_LEVELS: [f64; 6] = [4.0, 2.0, 0.1, -2.0, 0.5, -0.5];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_tags: usize,
    /// Rank of the planted collaborative signal.
    pub rank: usize,
    /// Fraction of user/item pairs observed (before cold down-sampling).
    pub density: f64,
    /// Fraction of items forced down to at most 2 ratings.
    pub cold_fraction: f64,
    /// Mixing weight between the collaborative signal (0) and the
    /// tag-driven signal (1).
    pub tag_signal: f64,
    pub noise_sd: f64,
    /// Snap observed values to the nearest categorical rating level.
    pub quantize: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 100,
            n_items: 150,
            n_tags: 20,
            rank: 5,
            density: 0.05,
            cold_fraction: 0.1,
            tag_signal: 0.5,
            noise_sd: 0.3,
            quantize: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 1 || self.n_items < 1 || self.n_tags < 1 || self.rank < 1 {
            return Err(Error::InvalidConfig(
                "synthetic sizes and rank must be >= 1".into(),
            ));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig(
                "density must be in (0, 1]; 0 would observe nothing".into(),
            ));
        }
        for (name, v) in [
            ("cold_fraction", self.cold_fraction),
            ("tag_signal", self.tag_signal),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if self.noise_sd.is_nan() || self.noise_sd < 0.0 {
            return Err(Error::InvalidConfig("noise_sd must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything the generator planted, for oracle checks and sidecar files.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Planted user factors, row-major n_users x rank.
    pub user_factors: Vec<f64>,
    /// Planted item factors, row-major n_items x rank.
    pub item_factors: Vec<f64>,
    /// Planted user tag preferences, row-major n_users x n_tags.
    pub preferences: Vec<f64>,
    /// Noiseless true rating per generated triple, parallel to the dataset.
    pub clean_values: Vec<f64>,
    /// Item indices that were forced down to at most 2 ratings.
    pub cold_items: Vec<usize>,
    /// Users that ended up with no observations (permitted, but reported).
    pub users_without_ratings: usize,
}

fn nearest_level(v: f64) -> f64 {
    let mut best = RATING_LEVELS[0];
    for &level in &RATING_LEVELS[1..] {
        if (v - level).abs() < (v - best).abs() {
            best = level;
        }
    }
    best
}

/// Generates a dataset, an aligned tag matrix and the planted ground truth.
///
/// The true rating is `(1 - s) * U_i . V_j + s * tau(P_i . T_j) + noise`
/// with `s = tag_signal`. Every item keeps at least one observation so the
/// item set survives a CSV round trip; cold-flagged items keep one or two.
pub fn generate(config: &SynthConfig) -> Result<(RatingDataset, TagMatrix, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (n, m, t, r) = (config.n_users, config.n_items, config.n_tags, config.rank);

    // Factor entries are scaled so the planted dot product has unit variance.
    let factor_scale = 1.0 / (r as f64).powf(0.25);
    let user_factors: Vec<f64> = (0..n * r)
        .map(|_| normal.sample(&mut rng) * factor_scale)
        .collect();
    let item_factors: Vec<f64> = (0..m * r)
        .map(|_| normal.sample(&mut rng) * factor_scale)
        .collect();

    // Sparse-ish tag probabilities: a quarter of the entries are active.
    let tag_rows: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..t)
                .map(|_| {
                    if rng.gen_bool(0.25) {
                        rng.gen::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    // Each user cares about a handful of tags with signed weights.
    let support = t.min(4);
    let mut preferences = vec![0.0; n * t];
    for i in 0..n {
        let mut tags: Vec<usize> = (0..t).collect();
        tags.shuffle(&mut rng);
        for &k in &tags[..support] {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            preferences[i * t + k] = sign * rng.gen_range(1.0..2.5);
        }
    }

    // Observe pairs at the requested density, then force every item to keep
    // at least one rating and cold items to keep at most two.
    let mut per_item: Vec<Vec<usize>> = vec![Vec::new(); m];
    for i in 0..n {
        for users in per_item.iter_mut() {
            if rng.gen_bool(config.density) {
                users.push(i);
            }
        }
    }
    let mut item_order: Vec<usize> = (0..m).collect();
    item_order.shuffle(&mut rng);
    let n_cold = (config.cold_fraction * m as f64).ceil() as usize;
    let cold_items: Vec<usize> = item_order[..n_cold.min(m)].to_vec();
    for &j in &cold_items {
        let keep = rng.gen_range(1..=2usize);
        if per_item[j].len() > keep {
            per_item[j].shuffle(&mut rng);
            per_item[j].truncate(keep);
        }
    }
    for users in per_item.iter_mut() {
        if users.is_empty() {
            users.push(rng.gen_range(0..n));
        }
        users.sort_unstable();
        users.dedup();
    }

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (j, users) in per_item.iter().enumerate() {
        for &i in users {
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();

    let collab = |i: usize, j: usize| -> f64 {
        (0..r)
            .map(|k| user_factors[i * r + k] * item_factors[j * r + k])
            .sum()
    };
    let tag_score = |i: usize, j: usize| -> f64 {
        (0..t)
            .map(|k| preferences[i * t + k] * tag_rows[j][k])
            .sum()
    };

    let s = config.tag_signal;
    let mut triples = Vec::with_capacity(pairs.len());
    let mut clean_values = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let clean = (1.0 - s) * collab(i, j) + s * clamp_tau(tag_score(i, j));
        let mut value = clean;
        if config.noise_sd > 0.0 {
            value += normal.sample(&mut rng) * config.noise_sd;
        }
        if config.quantize {
            value = nearest_level(value);
        }
        triples.push(RatingTriple {
            user_index: i,
            item_index: j,
            value,
        });
        clean_values.push(clean);
    }

    let mut rated = vec![false; n];
    for t in &triples {
        rated[t.user_index] = true;
    }
    let users_without_ratings = rated.iter().filter(|&&b| !b).count();

    let user_ids = (0..n).map(|i| format!("u{i}")).collect();
    let item_ids = (0..m).map(|j| format!("i{j}")).collect();
    let dataset = RatingDataset::new(user_ids, item_ids, triples)?;
    let tag_names = (0..t).map(|k| format!("tag{k}")).collect();
    let tags = TagMatrix::from_rows(tag_names, &tag_rows)?;

    Ok((
        dataset,
        tags,
        GroundTruth {
            user_factors,
            item_factors,
            preferences,
            clean_values,
            cold_items,
            users_without_ratings,
        },
    ))
}
