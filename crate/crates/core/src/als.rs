//! Matrix factorization by alternating least squares with weighted
//! regularization: each factor row is the closed-form minimizer of its own
//! regularized least-squares subproblem while the other side stays fixed.

use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{next_line, parse_num, RatingsRef};
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd};

#[derive(Debug, Clone)]
pub struct AlsHyperParams {
    /// Latent dimension r.
    pub rank: usize,
    /// Regularization weight, applied per observation.
    pub lambda: f64,
    /// Number of full (item + user) alternation sweeps.
    pub sweeps: usize,
    pub seed: u64,
    /// Optional early stop on relative training-loss change per sweep.
    pub tol: Option<f64>,
}

impl Default for AlsHyperParams {
    fn default() -> Self {
        Self {
            rank: 20,
            lambda: 0.1,
            sweeps: 10,
            seed: 0,
            tol: None,
        }
    }
}

impl AlsHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.rank < 1 {
            return Err(Error::InvalidConfig("als rank must be >= 1".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig("als lambda must be >= 0".into()));
        }
        if self.sweeps < 1 {
            return Err(Error::InvalidConfig("als sweeps must be >= 1".into()));
        }
        if let Some(tol) = self.tol {
            if tol.is_nan() || tol < 0.0 {
                return Err(Error::InvalidConfig("als tol must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Trained factor matrices. Rows of users/items that had no training
/// ratings are exactly zero, so their predictions are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AlsModel {
    n_users: usize,
    n_items: usize,
    rank: usize,
    /// Row-major n_users x rank.
    user_factors: Vec<f64>,
    /// Row-major n_items x rank.
    item_factors: Vec<f64>,
    /// True iff the item had at least one training rating.
    trained_item_mask: Vec<bool>,
}

impl AlsModel {
    pub fn from_parts(
        n_users: usize,
        n_items: usize,
        rank: usize,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
        trained_item_mask: Vec<bool>,
    ) -> Result<Self> {
        if user_factors.len() != n_users * rank
            || item_factors.len() != n_items * rank
            || trained_item_mask.len() != n_items
        {
            return Err(Error::DimensionMismatch(format!(
                "factor shapes do not match n={n_users} m={n_items} r={rank}"
            )));
        }
        if user_factors
            .iter()
            .chain(&item_factors)
            .any(|v| !v.is_finite())
        {
            return Err(Error::DimensionMismatch(
                "factor matrices contain non-finite entries".into(),
            ));
        }
        Ok(Self {
            n_users,
            n_items,
            rank,
            user_factors,
            item_factors,
            trained_item_mask,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn user_row(&self, user_index: usize) -> &[f64] {
        &self.user_factors[user_index * self.rank..(user_index + 1) * self.rank]
    }

    pub fn item_row(&self, item_index: usize) -> &[f64] {
        &self.item_factors[item_index * self.rank..(item_index + 1) * self.rank]
    }

    pub fn trained_item_mask(&self) -> &[bool] {
        &self.trained_item_mask
    }

    /// Versioned textual dump; floats use shortest-round-trip formatting so
    /// [`read_als_model`] restores the exact same bits.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "als-model v1")?;
        writeln!(w, "n {} m {} r {}", self.n_users, self.n_items, self.rank)?;
        write!(w, "mask")?;
        for &b in &self.trained_item_mask {
            write!(w, " {}", b as u8)?;
        }
        writeln!(w)?;
        for i in 0..self.n_users {
            writeln!(w, "{}", join_floats(self.user_row(i)))?;
        }
        for j in 0..self.n_items {
            writeln!(w, "{}", join_floats(self.item_row(j)))?;
        }
        Ok(())
    }
}

fn join_floats(row: &[f64]) -> String {
    row.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_float_row(line: &str, rank: usize, line_no: usize) -> Result<Vec<f64>> {
    let row: Vec<f64> = line
        .split_whitespace()
        .map(|s| parse_num::<f64>(s, line_no))
        .collect::<Result<_>>()?;
    if row.len() != rank {
        return Err(Error::parse(
            line_no,
            format!("expected {rank} factors, found {}", row.len()),
        ));
    }
    Ok(row)
}

/// Reads a model written by [`AlsModel::write`].
pub fn read_als_model<R: Read>(r: R) -> Result<AlsModel> {
    let mut lines = BufReader::new(r).lines();
    let magic = next_line(&mut lines, 1)?;
    if magic.trim() != "als-model v1" {
        return Err(Error::parse(1usize, "not an als-model v1 file"));
    }
    let dims = next_line(&mut lines, 2)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "n" || parts[2] != "m" || parts[4] != "r" {
        return Err(Error::parse(2usize, "expected `n <n> m <m> r <r>`"));
    }
    let n: usize = parse_num(parts[1], 2)?;
    let m: usize = parse_num(parts[3], 2)?;
    let rank: usize = parse_num(parts[5], 2)?;
    let mask_line = next_line(&mut lines, 3)?;
    let mask_line = mask_line
        .strip_prefix("mask")
        .ok_or_else(|| Error::parse(3usize, "expected mask line"))?;
    let mask: Vec<bool> = mask_line
        .split_whitespace()
        .map(|s| parse_num::<u8>(s, 3).map(|b| b != 0))
        .collect::<Result<_>>()?;
    if mask.len() != m {
        return Err(Error::parse(
            3usize,
            format!("expected {m} mask entries, found {}", mask.len()),
        ));
    }
    let mut user_factors = Vec::with_capacity(n * rank);
    let mut item_factors = Vec::with_capacity(m * rank);
    let mut line_no = 3;
    for _ in 0..n {
        line_no += 1;
        user_factors.extend(parse_float_row(
            &next_line(&mut lines, line_no)?,
            rank,
            line_no,
        )?);
    }
    for _ in 0..m {
        line_no += 1;
        item_factors.extend(parse_float_row(
            &next_line(&mut lines, line_no)?,
            rank,
            line_no,
        )?);
    }
    AlsModel::from_parts(n, m, rank, user_factors, item_factors, mask)
}

/// Seeded random initialization: entries i.i.d. uniform in [-0.5, 0.5]
/// scaled by 1/sqrt(rank). User factors are drawn first, then item factors,
/// both row-major, so the result is fully determined by the seed.
pub fn init_factors(n_users: usize, n_items: usize, hyper: &AlsHyperParams) -> AlsModel {
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let scale = 1.0 / (hyper.rank as f64).sqrt();
    let mut draw = |count: usize| -> Vec<f64> {
        (0..count)
            .map(|_| (rng.gen::<f64>() - 0.5) * scale)
            .collect()
    };
    let user_factors = draw(n_users * hyper.rank);
    let item_factors = draw(n_items * hyper.rank);
    AlsModel {
        n_users,
        n_items,
        rank: hyper.rank,
        user_factors,
        item_factors,
        trained_item_mask: vec![true; n_items],
    }
}

/// Solves every row of one side in closed form with the other side fixed:
/// row_i = (F'F + lambda * N_i * I)^-1 F' r where F stacks the fixed-side
/// rows the entity interacted with and N_i is its rating count. Entities
/// with no ratings get a zero row. Rows are independent, so they are solved
/// in parallel with bit-identical results regardless of thread count.
fn sweep_side(
    out: &mut [f64],
    fixed: &[f64],
    groups: &[Vec<(usize, f64)>],
    rank: usize,
    lambda: f64,
) {
    out.par_chunks_mut(rank)
        .zip(groups.par_iter())
        .for_each(|(row, group)| {
            if group.is_empty() {
                row.fill(0.0);
                return;
            }
            let mut gram = vec![0.0; rank * rank];
            let mut rhs = vec![0.0; rank];
            for &(other, value) in group {
                let f = &fixed[other * rank..(other + 1) * rank];
                for a in 0..rank {
                    let fa = f[a];
                    rhs[a] += value * fa;
                    for b in a..rank {
                        gram[a * rank + b] += fa * f[b];
                    }
                }
            }
            // Mirror the upper triangle and add the count-weighted ridge.
            let reg = lambda * group.len() as f64;
            for a in 0..rank {
                gram[a * rank + a] += reg;
                for b in a + 1..rank {
                    gram[b * rank + a] = gram[a * rank + b];
                }
            }
            row.copy_from_slice(&solve_spd(&gram, &rhs, rank));
        });
}

fn check_dims(model: &AlsModel, data: RatingsRef<'_>) -> Result<()> {
    if model.n_users != data.n_users || model.n_items != data.n_items {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{} but dataset is {}x{}",
            model.n_users, model.n_items, data.n_users, data.n_items
        )));
    }
    Ok(())
}

/// Recomputes every user row as the exact minimizer of its local objective.
pub fn half_sweep_users(model: &mut AlsModel, data: RatingsRef<'_>, lambda: f64) -> Result<()> {
    check_dims(model, data)?;
    let groups = data.by_user();
    sweep_side(
        &mut model.user_factors,
        &model.item_factors,
        &groups,
        model.rank,
        lambda,
    );
    Ok(())
}

/// Recomputes every item row as the exact minimizer of its local objective.
pub fn half_sweep_items(model: &mut AlsModel, data: RatingsRef<'_>, lambda: f64) -> Result<()> {
    check_dims(model, data)?;
    let groups = data.by_item();
    sweep_side(
        &mut model.item_factors,
        &model.user_factors,
        &groups,
        model.rank,
        lambda,
    );
    Ok(())
}

/// Trains by alternating item and user half-sweeps `sweeps` times from the
/// seeded initialization. With `tol` set, stops early once the relative
/// training-loss change over a full sweep drops below it.
pub fn train_als(data: RatingsRef<'_>, hyper: &AlsHyperParams) -> Result<AlsModel> {
    hyper.validate()?;
    let mut model = init_factors(data.n_users, data.n_items, hyper);
    let user_groups = data.by_user();
    let item_groups = data.by_item();
    let mut prev_loss = None;
    for _ in 0..hyper.sweeps {
        sweep_side(
            &mut model.item_factors,
            &model.user_factors,
            &item_groups,
            model.rank,
            hyper.lambda,
        );
        sweep_side(
            &mut model.user_factors,
            &model.item_factors,
            &user_groups,
            model.rank,
            hyper.lambda,
        );
        if let Some(tol) = hyper.tol {
            let loss = training_loss(data, &model, hyper.lambda);
            if let Some(prev) = prev_loss {
                let denom: f64 = f64::max(prev, 1e-12);
                if ((prev - loss) / denom).abs() < tol {
                    break;
                }
            }
            prev_loss = Some(loss);
        }
    }
    for (j, group) in item_groups.iter().enumerate() {
        model.trained_item_mask[j] = !group.is_empty();
    }
    Ok(model)
}

/// Predicted rating: the dot product of the user and item factor rows.
/// No clamping is applied.
pub fn predict_als(model: &AlsModel, user_index: usize, item_index: usize) -> Result<f64> {
    if user_index >= model.n_users {
        return Err(Error::IndexOutOfBounds {
            what: "user",
            index: user_index,
            size: model.n_users,
        });
    }
    if item_index >= model.n_items {
        return Err(Error::IndexOutOfBounds {
            what: "item",
            index: item_index,
            size: model.n_items,
        });
    }
    Ok(dot(model.user_row(user_index), model.item_row(item_index)))
}

/// The training objective: squared error over observed triples plus
/// lambda * (N_i ||U_i||^2 + N_j ||V_j||^2) summed per observation.
pub fn training_loss(data: RatingsRef<'_>, model: &AlsModel, lambda: f64) -> f64 {
    let mut loss = 0.0;
    for t in data.triples {
        let err = t.value - dot(model.user_row(t.user_index), model.item_row(t.item_index));
        loss += err * err;
        loss += lambda
            * (dot(model.user_row(t.user_index), model.user_row(t.user_index))
                + dot(model.item_row(t.item_index), model.item_row(t.item_index)));
    }
    loss
}
