//! Per-user L1-regularized regression of ratings on item tag probabilities,
//! solved by cyclic coordinate descent with soft-threshold updates.
//!
//! For user i with rated items forming the design matrix X (rows are tag
//! vectors) and targets y, the fitted row minimizes
//! `1/(2N) ||y - X p||^2 + alpha ||p||_1` where N is the user's rating count.

use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;

use crate::dataset::{next_line, parse_num, RatingsRef, TagMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LassoHyperParams {
    /// L1 penalty weight.
    pub alpha: f64,
    /// Cap on full coordinate passes per user.
    pub max_passes: usize,
    /// Convergence tolerance on coordinate change and KKT residual.
    pub tol: f64,
}

impl Default for LassoHyperParams {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            // High cap: underdetermined users (fewer ratings than tags)
            // can need thousands of passes to certify their KKT residual.
            max_passes: 100_000,
            tol: 1e-6,
        }
    }
}

impl LassoHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig("lasso alpha must be >= 0".into()));
        }
        if self.max_passes < 1 {
            return Err(Error::InvalidConfig("lasso max_passes must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidConfig("lasso tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Learned user tag preferences, one sparse row per user.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoModel {
    n_tags: usize,
    alpha: f64,
    rows: Vec<Vec<(usize, f64)>>,
    /// True iff the user had at least one training rating.
    trained_user_mask: Vec<bool>,
}

impl LassoModel {
    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_tags(&self) -> usize {
        self.n_tags
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn trained_user_mask(&self) -> &[bool] {
        &self.trained_user_mask
    }

    /// Nonzero (tag_index, weight) entries of the user's preference row.
    pub fn sparse_row(&self, user_index: usize) -> &[(usize, f64)] {
        &self.rows[user_index]
    }

    /// The user's preference row densified to length `n_tags`.
    pub fn dense_row(&self, user_index: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_tags];
        for &(k, w) in &self.rows[user_index] {
            row[k] = w;
        }
        row
    }

    /// Sparse textual dump; round-trips exactly via [`read_lasso_model`].
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lasso-model v1")?;
        writeln!(
            w,
            "n {} t {} alpha {}",
            self.n_users(),
            self.n_tags,
            self.alpha
        )?;
        write!(w, "mask")?;
        for &b in &self.trained_user_mask {
            write!(w, " {}", b as u8)?;
        }
        writeln!(w)?;
        for (u, row) in self.rows.iter().enumerate() {
            for &(k, weight) in row {
                writeln!(w, "{u} {k} {weight}")?;
            }
        }
        Ok(())
    }
}

/// Reads a model written by [`LassoModel::write`].
pub fn read_lasso_model<R: Read>(r: R) -> Result<LassoModel> {
    let mut lines = BufReader::new(r).lines();
    let magic = next_line(&mut lines, 1)?;
    if magic.trim() != "lasso-model v1" {
        return Err(Error::parse(1usize, "not a lasso-model v1 file"));
    }
    let dims = next_line(&mut lines, 2)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "n" || parts[2] != "t" || parts[4] != "alpha" {
        return Err(Error::parse(2usize, "expected `n <n> t <t> alpha <a>`"));
    }
    let n: usize = parse_num(parts[1], 2)?;
    let t: usize = parse_num(parts[3], 2)?;
    let alpha: f64 = parse_num(parts[5], 2)?;
    let mask_line = next_line(&mut lines, 3)?;
    let mask_line = mask_line
        .strip_prefix("mask")
        .ok_or_else(|| Error::parse(3usize, "expected mask line"))?;
    let trained_user_mask: Vec<bool> = mask_line
        .split_whitespace()
        .map(|s| parse_num::<u8>(s, 3).map(|b| b != 0))
        .collect::<Result<_>>()?;
    if trained_user_mask.len() != n {
        return Err(Error::parse(
            3usize,
            format!(
                "expected {n} mask entries, found {}",
                trained_user_mask.len()
            ),
        ));
    }
    let mut rows = vec![Vec::new(); n];
    let mut line_no = 3;
    for line in lines {
        line_no += 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let u: usize = parse_num(it.next().unwrap_or(""), line_no)?;
        let k: usize = parse_num(it.next().unwrap_or(""), line_no)?;
        let weight: f64 = parse_num(it.next().unwrap_or(""), line_no)?;
        if u >= n || k >= t {
            return Err(Error::parse(line_no, "entry index out of bounds"));
        }
        rows[u].push((k, weight));
    }
    Ok(LassoModel {
        n_tags: t,
        alpha,
        rows,
        trained_user_mask,
    })
}

/// Shrinks its input to [-2, 2]: identity inside, saturating outside.
pub fn clamp_tau(x: f64) -> f64 {
    x.clamp(-2.0, 2.0)
}

fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

/// Fits one user's preference row by cyclic coordinate descent.
///
/// `ratings` holds the user's (item_index, value) pairs. Each coordinate
/// update is the exact scalar minimizer: with the column of tag-k values
/// over the user's items written x_k, p_k <- S(x_k . (r + x_k p_k),
/// alpha * N) / ||x_k||^2, i.e. the soft-threshold level in unnormalized
/// coordinates is alpha * N / ||x_k||^2. Passes stop once the largest
/// coordinate change falls below `tol` and the KKT residual (see
/// [`kkt_residual`]) is within `tol`, or after `max_passes`.
pub fn train_user_lasso(
    ratings: &[(usize, f64)],
    tags: &TagMatrix,
    hyper: &LassoHyperParams,
) -> Vec<f64> {
    let t = tags.n_tags();
    let n = ratings.len();
    let mut row = vec![0.0; t];
    if n == 0 || t == 0 {
        return row;
    }
    let inv_threshold = hyper.alpha * n as f64;

    let col_sq: Vec<f64> = (0..t)
        .map(|k| {
            ratings
                .iter()
                .map(|&(j, _)| {
                    let x = tags.row(j)[k];
                    x * x
                })
                .sum()
        })
        .collect();

    // Residual y - Xp, updated incrementally as coordinates move.
    let mut residual: Vec<f64> = ratings.iter().map(|&(_, y)| y).collect();

    for _ in 0..hyper.max_passes {
        let mut max_change: f64 = 0.0;
        for k in 0..t {
            if col_sq[k] == 0.0 {
                continue;
            }
            let old = row[k];
            let mut rho = 0.0;
            for (l, &(j, _)) in ratings.iter().enumerate() {
                let x = tags.row(j)[k];
                rho += x * (residual[l] + x * old);
            }
            let new = soft_threshold(rho, inv_threshold) / col_sq[k];
            if new != old {
                let delta = new - old;
                for (l, &(j, _)) in ratings.iter().enumerate() {
                    residual[l] -= tags.row(j)[k] * delta;
                }
                row[k] = new;
            }
            max_change = max_change.max((new - old).abs());
        }
        if max_change < hyper.tol && kkt_residual(ratings, tags, &row, hyper.alpha) <= hyper.tol {
            break;
        }
    }
    row
}

/// Largest violation of the coordinate-wise optimality conditions: with
/// g_k the smooth-part gradient -(1/N) x_k . (y - Xp), this is
/// max(|g_k| - alpha, 0) where p_k = 0 and |g_k + alpha sign(p_k)| elsewhere.
pub fn kkt_residual(ratings: &[(usize, f64)], tags: &TagMatrix, row: &[f64], alpha: f64) -> f64 {
    let n = ratings.len();
    if n == 0 {
        return 0.0;
    }
    let residual: Vec<f64> = ratings
        .iter()
        .map(|&(j, y)| {
            let pred: f64 = tags.row(j).iter().zip(row).map(|(x, p)| x * p).sum();
            y - pred
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (k, &weight) in row.iter().enumerate() {
        let mut g = 0.0;
        for (l, &(j, _)) in ratings.iter().enumerate() {
            g -= tags.row(j)[k] * residual[l];
        }
        g /= n as f64;
        let violation = if weight == 0.0 {
            (g.abs() - alpha).max(0.0)
        } else {
            (g + alpha * weight.signum()).abs()
        };
        worst = worst.max(violation);
    }
    worst
}

/// The per-user objective `1/(2N) ||y - Xp||^2 + alpha ||p||_1`.
pub fn objective(ratings: &[(usize, f64)], tags: &TagMatrix, row: &[f64], alpha: f64) -> f64 {
    let n = ratings.len();
    if n == 0 {
        return alpha * row.iter().map(|p| p.abs()).sum::<f64>();
    }
    let mut sq = 0.0;
    for &(j, y) in ratings {
        let pred: f64 = tags.row(j).iter().zip(row).map(|(x, p)| x * p).sum();
        let e = y - pred;
        sq += e * e;
    }
    sq / (2.0 * n as f64) + alpha * row.iter().map(|p| p.abs()).sum::<f64>()
}

/// Fits an independent row per user with at least one training rating;
/// users without ratings keep a zero row. Fits run in parallel.
pub fn train_lasso(
    data: RatingsRef<'_>,
    tags: &TagMatrix,
    hyper: &LassoHyperParams,
) -> Result<LassoModel> {
    hyper.validate()?;
    if tags.n_items() != data.n_items {
        return Err(Error::DimensionMismatch(format!(
            "tag matrix has {} items but dataset has {}",
            tags.n_items(),
            data.n_items
        )));
    }
    let by_user = data.by_user();
    let rows: Vec<Vec<(usize, f64)>> = by_user
        .par_iter()
        .map(|ratings| {
            let dense = train_user_lasso(ratings, tags, hyper);
            dense
                .into_iter()
                .enumerate()
                .filter(|&(_, w)| w != 0.0)
                .collect()
        })
        .collect();
    let trained_user_mask = by_user.iter().map(|r| !r.is_empty()).collect();
    Ok(LassoModel {
        n_tags: tags.n_tags(),
        alpha: hyper.alpha,
        rows,
        trained_user_mask,
    })
}

/// Predicted rating: the clamped dot product of the user's preference row
/// with the item's tag probabilities.
pub fn predict_lasso(
    model: &LassoModel,
    tags: &TagMatrix,
    user_index: usize,
    item_index: usize,
) -> Result<f64> {
    if user_index >= model.n_users() {
        return Err(Error::IndexOutOfBounds {
            what: "user",
            index: user_index,
            size: model.n_users(),
        });
    }
    if item_index >= tags.n_items() {
        return Err(Error::IndexOutOfBounds {
            what: "item",
            index: item_index,
            size: tags.n_items(),
        });
    }
    let tag_row = tags.row(item_index);
    let score: f64 = model.rows[user_index]
        .iter()
        .map(|&(k, w)| w * tag_row[k])
        .sum();
    Ok(clamp_tau(score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RatingTriple;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(t: usize) -> Vec<String> {
        (0..t).map(|k| format!("tag{k}")).collect()
    }

    fn hyper(alpha: f64) -> LassoHyperParams {
        LassoHyperParams {
            alpha,
            ..Default::default()
        }
    }

    /// Independent slow reference: proximal-gradient iterations on the same
    /// objective with a conservative step from the Gram trace bound.
    fn reference_fit(
        ratings: &[(usize, f64)],
        tags: &TagMatrix,
        alpha: f64,
        max_iters: usize,
    ) -> Vec<f64> {
        let t = tags.n_tags();
        let n = ratings.len();
        let mut p = vec![0.0; t];
        if n == 0 || t == 0 {
            return p;
        }
        let trace: f64 = (0..t)
            .map(|k| {
                ratings
                    .iter()
                    .map(|&(j, _)| tags.row(j)[k] * tags.row(j)[k])
                    .sum::<f64>()
            })
            .sum();
        if trace == 0.0 {
            return p;
        }
        let step = n as f64 / trace;
        let mut best = objective(ratings, tags, &p, alpha);
        let mut stall = 0;
        for _ in 0..max_iters {
            let mut grad = vec![0.0; t];
            for &(j, y) in ratings {
                let pred: f64 = tags.row(j).iter().zip(&p).map(|(x, w)| x * w).sum();
                let e = pred - y;
                for (k, g) in grad.iter_mut().enumerate() {
                    *g += e * tags.row(j)[k];
                }
            }
            for (k, w) in p.iter_mut().enumerate() {
                let q = *w - step * grad[k] / n as f64;
                let level = step * alpha;
                *w = if q > level {
                    q - level
                } else if q < -level {
                    q + level
                } else {
                    0.0
                };
            }
            let obj = objective(ratings, tags, &p, alpha);
            if best - obj < 1e-16 {
                stall += 1;
                if stall > 200 {
                    break;
                }
            } else {
                stall = 0;
            }
            best = best.min(obj);
        }
        p
    }

    fn random_instance(seed: u64, n: usize, t: usize) -> (Vec<(usize, f64)>, TagMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..t).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let tags = TagMatrix::from_rows(names(t), &rows).unwrap();
        let ratings: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-2.0..2.0))).collect();
        (ratings, tags)
    }

    #[test]
    fn clamp_saturates_and_passes_through() {
        assert_eq!(clamp_tau(3.0), 2.0);
        assert_eq!(clamp_tau(-5.0), -2.0);
        assert_eq!(clamp_tau(1.5), 1.5);
    }

    #[test]
    fn single_constant_feature_soft_thresholds_the_mean() {
        // One tag whose column is all ones: the fit is S(mean, alpha).
        let rows = vec![vec![1.0]; 4];
        let tags = TagMatrix::from_rows(names(1), &rows).unwrap();
        let ratings = vec![(0, 0.5), (1, 1.5), (2, 1.0), (3, 1.0)];
        let row = train_user_lasso(&ratings, &tags, &hyper(0.01));
        assert!((row[0] - 0.99).abs() < 1e-10, "{}", row[0]);
    }

    #[test]
    fn large_alpha_shrinks_everything_to_zero() {
        let (ratings, tags) = random_instance(3, 10, 4);
        let row = train_user_lasso(&ratings, &tags, &hyper(100.0));
        assert!(row.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn identity_features_interpolate_with_zero_penalty() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let tags = TagMatrix::from_rows(names(2), &rows).unwrap();
        let ratings = vec![(0, 2.0), (1, -2.0)];
        let row = train_user_lasso(&ratings, &tags, &hyper(0.0));
        assert!((row[0] - 2.0).abs() < 1e-9);
        assert!((row[1] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn no_ratings_gives_zero_row() {
        let (_, tags) = random_instance(4, 3, 5);
        let row = train_user_lasso(&[], &tags, &hyper(0.01));
        assert_eq!(row, vec![0.0; 5]);
    }

    #[test]
    fn all_zero_features_give_zero_row() {
        let rows = vec![vec![0.0, 0.0]; 3];
        let tags = TagMatrix::from_rows(names(2), &rows).unwrap();
        let ratings = vec![(0, 2.0), (1, 1.0), (2, -1.0)];
        let row = train_user_lasso(&ratings, &tags, &hyper(0.01));
        assert_eq!(row, vec![0.0, 0.0]);
    }

    #[test]
    fn objective_never_increases_with_more_passes() {
        let (ratings, tags) = random_instance(9, 12, 6);
        let mut prev = f64::INFINITY;
        for passes in 1..=8 {
            let h = LassoHyperParams {
                alpha: 0.05,
                max_passes: passes,
                tol: 0.0,
            };
            let row = train_user_lasso(&ratings, &tags, &h);
            let obj = objective(&ratings, &tags, &row, 0.05);
            assert!(obj <= prev * (1.0 + 1e-10), "{obj} > {prev}");
            prev = obj;
        }
    }

    #[test]
    fn kkt_residual_is_within_tolerance_after_fit() {
        for seed in 0..5 {
            let (ratings, tags) = random_instance(100 + seed, 15, 8);
            let h = hyper(0.02);
            let row = train_user_lasso(&ratings, &tags, &h);
            let res = kkt_residual(&ratings, &tags, &row, h.alpha);
            assert!(res <= h.tol, "seed {seed}: kkt residual {res}");
        }
    }

    #[test]
    fn l1_norm_shrinks_as_alpha_grows() {
        let (ratings, tags) = random_instance(42, 20, 6);
        let alphas = [0.001, 0.01, 0.05, 0.2, 1.0];
        let norms: Vec<f64> = alphas
            .iter()
            .map(|&a| {
                train_user_lasso(&ratings, &tags, &hyper(a))
                    .iter()
                    .map(|w| w.abs())
                    .sum()
            })
            .collect();
        for pair in norms.windows(2) {
            assert!(pair[0] >= pair[1] - 1e-12, "{norms:?}");
        }
    }

    #[test]
    fn matches_reference_solver_objective() {
        for seed in 0..4 {
            let (ratings, tags) = random_instance(7 + seed, 8, 4);
            let row = train_user_lasso(&ratings, &tags, &hyper(0.01));
            let reference = reference_fit(&ratings, &tags, 0.01, 500_000);
            let a = objective(&ratings, &tags, &row, 0.01);
            let b = objective(&ratings, &tags, &reference, 0.01);
            assert!((a - b).abs() <= 1e-6, "seed {seed}: {a} vs {b}");
        }
    }

    #[test]
    fn disjoint_users_fit_independently() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.8, 0.1],
            vec![0.0, 1.0],
            vec![0.2, 0.9],
        ];
        let tags = TagMatrix::from_rows(names(2), &rows).unwrap();
        let triples: Vec<RatingTriple> = [
            (0usize, 0usize, 2.0),
            (0, 1, 1.5),
            (1, 2, -2.0),
            (1, 3, -1.0),
        ]
        .iter()
        .map(|&(u, i, v)| RatingTriple {
            user_index: u,
            item_index: i,
            value: v,
        })
        .collect();
        let data = RatingsRef {
            n_users: 2,
            n_items: 4,
            triples: &triples,
        };
        let h = hyper(0.01);
        let model = train_lasso(data, &tags, &h).unwrap();
        let solo0 = train_user_lasso(&[(0, 2.0), (1, 1.5)], &tags, &h);
        let solo1 = train_user_lasso(&[(2, -2.0), (3, -1.0)], &tags, &h);
        assert_eq!(model.dense_row(0), solo0);
        assert_eq!(model.dense_row(1), solo1);
        assert_eq!(model.trained_user_mask(), &[true, true]);
    }

    #[test]
    fn untrained_user_has_zero_row_and_zero_prediction() {
        let rows = vec![vec![0.9, 0.4]];
        let tags = TagMatrix::from_rows(names(2), &rows).unwrap();
        let triples = [RatingTriple {
            user_index: 0,
            item_index: 0,
            value: 2.0,
        }];
        let data = RatingsRef {
            n_users: 2,
            n_items: 1,
            triples: &triples,
        };
        let model = train_lasso(data, &tags, &hyper(0.01)).unwrap();
        assert!(!model.trained_user_mask()[1]);
        assert!(model.sparse_row(1).is_empty());
        assert_eq!(predict_lasso(&model, &tags, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn prediction_is_clamped_dot_product() {
        let model = LassoModel {
            n_tags: 2,
            alpha: 0.01,
            rows: vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 4.0)]],
            trained_user_mask: vec![true, true],
        };
        let rows = vec![vec![0.9, 0.4], vec![1.0, 0.0]];
        let tags = TagMatrix::from_rows(names(2), &rows).unwrap();
        assert!((predict_lasso(&model, &tags, 0, 0).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(predict_lasso(&model, &tags, 1, 1).unwrap(), 2.0);
        assert!(predict_lasso(&model, &tags, 2, 0).is_err());
        assert!(predict_lasso(&model, &tags, 0, 2).is_err());
    }

    #[test]
    fn model_dump_round_trips_exactly() {
        let (ratings, tags) = random_instance(5, 10, 5);
        let triples: Vec<RatingTriple> = ratings
            .iter()
            .map(|&(j, v)| RatingTriple {
                user_index: 0,
                item_index: j,
                value: v,
            })
            .collect();
        let data = RatingsRef {
            n_users: 3,
            n_items: 10,
            triples: &triples,
        };
        let model = train_lasso(data, &tags, &hyper(0.01)).unwrap();
        let mut buf = Vec::new();
        model.write(&mut buf).unwrap();
        let back = read_lasso_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    proptest! {
        #[test]
        fn clamp_keeps_values_in_range(x in -1e6f64..1e6) {
            let y = clamp_tau(x);
            prop_assert!((-2.0..=2.0).contains(&y));
            if (-2.0..=2.0).contains(&x) {
                prop_assert_eq!(x, y);
            }
        }

        #[test]
        fn predictions_always_lie_in_range(
            weights in proptest::collection::vec(-10.0f64..10.0, 4),
            probs in proptest::collection::vec(0.0f64..=1.0, 4),
        ) {
            let model = LassoModel {
                n_tags: 4,
                alpha: 0.01,
                rows: vec![weights.iter().copied().enumerate().collect()],
                trained_user_mask: vec![true],
            };
            let tags = TagMatrix::from_rows(names(4), &[probs]).unwrap();
            let p = predict_lasso(&model, &tags, 0, 0).unwrap();
            prop_assert!((-2.0..=2.0).contains(&p));
        }
    }
}
