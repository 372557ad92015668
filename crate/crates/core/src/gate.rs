//! The blending gate: a two-parameter sigmoid switch between the
//! factorization prediction and the tag-regression prediction, keyed on how
//! many training ratings the item has. `beta` controls sharpness, `gamma`
//! is the rating-count threshold; both are fit by gradient descent on the
//! squared blend error over held-out triples.

use std::io::{BufRead, BufReader, Read, Write};

use crate::dataset::parse_num;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateParams {
    /// Sharpness of the switch, per rating count. Unconstrained: a negative
    /// value inverts the gate's roles and is reported as a warning upstream.
    pub beta: f64,
    /// Rating-count threshold where both predictions weigh equally.
    pub gamma: f64,
}

impl GateParams {
    /// Default starting point for the fit: unit sharpness and the median
    /// item count, which puts the switch inside the observed count range.
    pub fn init_for(triples: &[BlendTriple]) -> Self {
        let mut counts: Vec<usize> = triples.iter().map(|t| t.item_count).collect();
        counts.sort_unstable();
        let gamma = if counts.is_empty() {
            0.0
        } else if counts.len() % 2 == 1 {
            counts[counts.len() / 2] as f64
        } else {
            (counts[counts.len() / 2 - 1] + counts[counts.len() / 2]) as f64 / 2.0
        };
        Self { beta: 1.0, gamma }
    }
}

/// One blending observation: the two model predictions for a (user, item)
/// pair, the item's training-set rating count, and the actual rating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendTriple {
    pub als_pred: f64,
    pub lasso_pred: f64,
    /// Number of ratings of this item in the train set.
    pub item_count: usize,
    pub truth: f64,
}

/// Numerically stable logistic function 1 / (1 + e^-x); branches on the
/// sign so neither exponential can overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weight given to the factorization prediction for an item with this many
/// training ratings.
pub fn blend_weight(item_count: usize, params: &GateParams) -> f64 {
    sigmoid(params.beta * (item_count as f64 - params.gamma))
}

/// Convex combination of the two predictions: w * als + (1 - w) * lasso
/// with w the sigmoid of beta * (count - gamma). Always lies between the
/// two predictions.
pub fn blend(triple: &BlendTriple, params: &GateParams) -> f64 {
    let w = blend_weight(triple.item_count, params);
    w * triple.als_pred + (1.0 - w) * triple.lasso_pred
}

fn require_nonempty(triples: &[BlendTriple]) -> Result<()> {
    if triples.is_empty() {
        return Err(Error::EmptyInput(
            "gate fitting needs at least one blend triple".into(),
        ));
    }
    Ok(())
}

/// Sum of squared blend errors over the triples.
pub fn gate_loss(triples: &[BlendTriple], params: &GateParams) -> Result<f64> {
    require_nonempty(triples)?;
    Ok(triples
        .iter()
        .map(|t| {
            let e = blend(t, params) - t.truth;
            e * e
        })
        .sum())
}

/// Analytic gradient of [`gate_loss`]: with w = sigmoid(z) and
/// z = beta * (count - gamma), d blend/dz = w (1 - w) (als - lasso),
/// dz/dbeta = count - gamma and dz/dgamma = -beta.
pub fn gate_gradient(triples: &[BlendTriple], params: &GateParams) -> Result<(f64, f64)> {
    let (_, grad) = loss_and_gradient(triples, params)?;
    Ok(grad)
}

fn loss_and_gradient(triples: &[BlendTriple], params: &GateParams) -> Result<(f64, (f64, f64))> {
    require_nonempty(triples)?;
    let mut loss = 0.0;
    let mut d_beta = 0.0;
    let mut d_gamma = 0.0;
    for t in triples {
        let offset = t.item_count as f64 - params.gamma;
        let w = sigmoid(params.beta * offset);
        let pred = w * t.als_pred + (1.0 - w) * t.lasso_pred;
        let err = pred - t.truth;
        loss += err * err;
        let chain = 2.0 * err * (t.als_pred - t.lasso_pred) * w * (1.0 - w);
        d_beta += chain * offset;
        d_gamma += chain * (-params.beta);
    }
    Ok((loss, (d_beta, d_gamma)))
}

/// Staircase exponential learning rate: 0.9 * 0.997 ^ floor(step / 20).
pub fn lr_schedule(step: usize) -> f64 {
    0.9 * 0.997f64.powi((step / 20) as i32)
}

/// Result of a gate fit, including the loss trace for diagnostics.
#[derive(Debug, Clone)]
pub struct GateFit {
    pub params: GateParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    /// Loss before each step, plus the loss after the last step.
    pub loss_trace: Vec<f64>,
}

impl GateFit {
    /// A negative sharpness inverts the gate (popular items would lean on
    /// tags); callers surface this as a warning.
    pub fn beta_is_negative(&self) -> bool {
        self.params.beta <= 0.0
    }
}

/// Fits (beta, gamma) by full-batch gradient descent under [`lr_schedule`].
/// The per-step gradient is averaged over the triples so the step size does
/// not scale with the validation-set size. Returns the best parameters seen
/// along the trace, so the final loss never exceeds the initial loss.
pub fn train_gate(triples: &[BlendTriple], init: GateParams, iters: usize) -> Result<GateFit> {
    require_nonempty(triples)?;
    let scale = 1.0 / triples.len() as f64;
    let mut params = init;
    let mut trace = Vec::with_capacity(iters + 1);
    let mut best_loss = f64::INFINITY;
    let mut best_params = init;
    for step in 0..=iters {
        let (loss, (d_beta, d_gamma)) = loss_and_gradient(triples, &params)?;
        if !loss.is_finite() || !params.beta.is_finite() || !params.gamma.is_finite() {
            trace.push(loss);
            return Err(Error::NonFinite {
                context: format!("gate descent at step {step}"),
                trace,
            });
        }
        trace.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_params = params;
        }
        if step == iters {
            break;
        }
        let lr = lr_schedule(step);
        params.beta -= lr * d_beta * scale;
        params.gamma -= lr * d_gamma * scale;
    }
    Ok(GateFit {
        params: best_params,
        initial_loss: trace[0],
        final_loss: best_loss,
        iterations: iters,
        loss_trace: trace,
    })
}

/// Plain-text parameter file: `beta=` and `gamma=` lines plus fit metadata.
pub fn write_gate_params<W: Write>(
    params: &GateParams,
    iterations: usize,
    final_loss: f64,
    mut w: W,
) -> Result<()> {
    writeln!(w, "beta={}", params.beta)?;
    writeln!(w, "gamma={}", params.gamma)?;
    writeln!(w, "iterations={iterations}")?;
    writeln!(w, "final_loss={final_loss}")?;
    Ok(())
}

/// Reads a file written by [`write_gate_params`].
pub fn read_gate_params<R: Read>(r: R) -> Result<(GateParams, usize, f64)> {
    let mut beta = None;
    let mut gamma = None;
    let mut iterations = 0usize;
    let mut final_loss = f64::NAN;
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| {
            Error::parse(line_no, format!("expected key=value, found {trimmed:?}"))
        })?;
        match key.trim() {
            "beta" => beta = Some(parse_num::<f64>(value.trim(), line_no)?),
            "gamma" => gamma = Some(parse_num::<f64>(value.trim(), line_no)?),
            "iterations" => iterations = parse_num(value.trim(), line_no)?,
            "final_loss" => final_loss = parse_num(value.trim(), line_no)?,
            other => {
                return Err(Error::parse(
                    line_no,
                    format!("unknown gate parameter key {other:?}"),
                ))
            }
        }
    }
    match (beta, gamma) {
        (Some(beta), Some(gamma)) => Ok((GateParams { beta, gamma }, iterations, final_loss)),
        _ => Err(Error::parse(0usize, "gate file is missing beta or gamma")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triple(als: f64, lasso: f64, count: usize, truth: f64) -> BlendTriple {
        BlendTriple {
            als_pred: als,
            lasso_pred: lasso,
            item_count: count,
            truth,
        }
    }

    fn random_triples(seed: u64, len: usize) -> Vec<BlendTriple> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| {
                triple(
                    rng.gen_range(-2.0..4.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(0..30),
                    rng.gen_range(-2.0..4.0),
                )
            })
            .collect()
    }

    #[test]
    fn sigmoid_reference_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        // Direct evaluation of 1 / (1 + e^-2).
        let direct = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((sigmoid(2.0) - direct).abs() < 1e-16);
        assert!((sigmoid(2.0) - 0.8807970779778823).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        for x in [-1e3, -700.0, 700.0, 1e3] {
            let y = sigmoid(x);
            assert!(y.is_finite());
            assert!((0.0..=1.0).contains(&y));
        }
        assert_eq!(sigmoid(1e3), 1.0);
        assert_eq!(sigmoid(-1e3), 0.0);
    }

    #[test]
    fn zero_sharpness_blends_to_the_mean() {
        let t = triple(3.0, 1.0, 7, 0.0);
        let p = GateParams {
            beta: 0.0,
            gamma: 100.0,
        };
        assert_eq!(blend(&t, &p), 2.0);
    }

    #[test]
    fn saturated_gate_mimics_the_factorization() {
        let t = triple(1.5, -0.5, 10, 0.0);
        let p = GateParams {
            beta: 100.0,
            gamma: 5.0,
        };
        assert!((blend(&t, &p) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn count_at_threshold_is_the_midpoint() {
        let t = triple(2.0, 0.0, 4, 0.0);
        let p = GateParams {
            beta: 3.0,
            gamma: 4.0,
        };
        assert_eq!(blend(&t, &p), 1.0);
    }

    #[test]
    fn loss_is_near_zero_when_the_right_branch_is_exact() {
        let triples: Vec<BlendTriple> = (5..10).map(|c| triple(1.0, -1.0, c, 1.0)).collect();
        let p = GateParams {
            beta: 50.0,
            gamma: 2.0,
        };
        assert!(gate_loss(&triples, &p).unwrap() < 1e-9);
    }

    #[test]
    fn agreeing_predictions_have_zero_loss_for_any_params() {
        let triples = vec![triple(1.2, 1.2, 3, 1.2)];
        for (beta, gamma) in [(0.0, 0.0), (5.0, -3.0), (-2.0, 10.0)] {
            assert_eq!(
                gate_loss(&triples, &GateParams { beta, gamma }).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn loss_matches_direct_transcription_on_hand_case() {
        let triples = vec![triple(2.0, -1.0, 3, 1.0), triple(0.5, 1.5, 0, -0.5)];
        let p = GateParams {
            beta: 0.7,
            gamma: 1.2,
        };
        // Independent re-evaluation of the blend-loss formula.
        let mut expected = 0.0;
        for t in &triples {
            let w = 1.0 / (1.0 + (-(p.beta * (t.item_count as f64 - p.gamma))).exp());
            let pred = w * t.als_pred + (1.0 - w) * t.lasso_pred;
            expected += (pred - t.truth) * (pred - t.truth);
        }
        assert!((gate_loss(&triples, &p).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn empty_triples_are_rejected() {
        let p = GateParams {
            beta: 1.0,
            gamma: 0.0,
        };
        assert!(gate_loss(&[], &p).is_err());
        assert!(gate_gradient(&[], &p).is_err());
        assert!(train_gate(&[], p, 10).is_err());
    }

    fn finite_difference(triples: &[BlendTriple], p: &GateParams, h: f64) -> (f64, f64) {
        let at = |beta: f64, gamma: f64| gate_loss(triples, &GateParams { beta, gamma }).unwrap();
        (
            (at(p.beta + h, p.gamma) - at(p.beta - h, p.gamma)) / (2.0 * h),
            (at(p.beta, p.gamma + h) - at(p.beta, p.gamma - h)) / (2.0 * h),
        )
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let triples = random_triples(seed, 40);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let p = GateParams {
                beta: rng.gen_range(-2.0..2.0),
                gamma: rng.gen_range(0.0..10.0),
            };
            let (db, dg) = gate_gradient(&triples, &p).unwrap();
            let (fb, fg) = finite_difference(&triples, &p, 1e-5);
            let check = |a: f64, f: f64| {
                let scale = a.abs().max(f.abs()).max(1e-3);
                assert!((a - f).abs() / scale <= 1e-5, "analytic {a} vs fd {f}");
            };
            check(db, fb);
            check(dg, fg);
        }
    }

    #[test]
    fn zero_beta_gives_zero_gamma_gradient() {
        let triples = random_triples(5, 30);
        let p = GateParams {
            beta: 0.0,
            gamma: 4.0,
        };
        let (_, dg) = gate_gradient(&triples, &p).unwrap();
        assert_eq!(dg, 0.0);
    }

    #[test]
    fn agreeing_predictions_give_zero_gradient() {
        let triples: Vec<BlendTriple> = (0..10)
            .map(|c| triple(0.5 * c as f64, 0.5 * c as f64, c, 1.0))
            .collect();
        let p = GateParams {
            beta: 1.3,
            gamma: 2.0,
        };
        assert_eq!(gate_gradient(&triples, &p).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn learning_rate_staircase() {
        assert_eq!(lr_schedule(0), 0.9);
        assert_eq!(lr_schedule(19), 0.9);
        assert!((lr_schedule(20) - 0.9 * 0.997).abs() < 1e-15);
        assert_eq!(lr_schedule(20), lr_schedule(39));
        assert!(lr_schedule(40) < lr_schedule(39));
    }

    #[test]
    fn recovers_a_planted_hard_switch() {
        // ALS is exact for counts >= 5, the tag model below; the learned
        // threshold must land in the gap with positive sharpness.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut triples = Vec::new();
        for _ in 0..120 {
            let truth: f64 = rng.gen_range(-2.0..2.0);
            let noise: f64 = rng.gen_range(0.5..1.5);
            let low = rng.gen_bool(0.5);
            let count = if low {
                rng.gen_range(0..=2)
            } else {
                [8, 10, 12][rng.gen_range(0..3)]
            };
            if low {
                triples.push(triple(truth + noise, truth, count, truth));
            } else {
                triples.push(triple(truth, truth + noise, count, truth));
            }
        }
        let init = GateParams::init_for(&triples);
        let fit = train_gate(&triples, init, 15000).unwrap();
        assert!(fit.params.beta > 0.0, "beta = {}", fit.params.beta);
        assert!(
            fit.params.gamma > 2.0 && fit.params.gamma < 8.0,
            "gamma = {}",
            fit.params.gamma
        );
        assert!(fit.final_loss <= fit.initial_loss);
        assert!(fit.final_loss < 0.05 * fit.initial_loss);
    }

    #[test]
    fn flat_landscape_stays_finite() {
        let triples: Vec<BlendTriple> = (0..10).map(|c| triple(1.0, 1.0, c, 0.5)).collect();
        let init = GateParams::init_for(&triples);
        let fit = train_gate(&triples, init, 500).unwrap();
        assert!(fit.params.beta.is_finite());
        assert!(fit.params.gamma.is_finite());
        assert!((fit.final_loss - fit.initial_loss).abs() < 1e-12);
    }

    #[test]
    fn descent_never_ends_above_the_start() {
        for seed in 0..5 {
            let triples = random_triples(100 + seed, 60);
            let init = GateParams::init_for(&triples);
            let fit = train_gate(&triples, init, 2000).unwrap();
            assert!(fit.final_loss <= fit.initial_loss);
            assert_eq!(fit.loss_trace.len(), 2001);
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_trace() {
        let triples = vec![triple(1e308, -1e308, 3, -1e308)];
        let init = GateParams {
            beta: 1.0,
            gamma: 0.0,
        };
        match train_gate(&triples, init, 100) {
            Err(Error::NonFinite { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn median_initialization() {
        let triples: Vec<BlendTriple> = [0, 1, 5, 9]
            .iter()
            .map(|&c| triple(0.0, 0.0, c, 0.0))
            .collect();
        let init = GateParams::init_for(&triples);
        assert_eq!(init.beta, 1.0);
        assert_eq!(init.gamma, 3.0);
        let odd: Vec<BlendTriple> = [0, 4, 9]
            .iter()
            .map(|&c| triple(0.0, 0.0, c, 0.0))
            .collect();
        assert_eq!(GateParams::init_for(&odd).gamma, 4.0);
    }

    #[test]
    fn params_file_round_trips() {
        let p = GateParams {
            beta: 1.625,
            gamma: 0.79040,
        };
        let mut buf = Vec::new();
        write_gate_params(&p, 15000, 42.5, &mut buf).unwrap();
        let (back, iters, loss) = read_gate_params(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        assert_eq!(iters, 15000);
        assert_eq!(loss, 42.5);
    }

    proptest! {
        #[test]
        fn sigmoid_symmetry(x in -500.0f64..500.0) {
            prop_assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-12);
        }

        #[test]
        fn blend_is_a_convex_combination(
            als in -10.0f64..10.0,
            lasso in -10.0f64..10.0,
            count in 0usize..1000,
            beta in -50.0f64..50.0,
            gamma in -100.0f64..100.0,
        ) {
            let t = triple(als, lasso, count, 0.0);
            let out = blend(&t, &GateParams { beta, gamma });
            prop_assert!(out >= als.min(lasso) - 1e-12);
            prop_assert!(out <= als.max(lasso) + 1e-12);
        }

        #[test]
        fn weight_is_monotone_in_count_for_positive_beta(
            beta in 0.01f64..20.0,
            gamma in -50.0f64..50.0,
            a in 0usize..500,
            b in 0usize..500,
        ) {
            let p = GateParams { beta, gamma };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(blend_weight(lo, &p) <= blend_weight(hi, &p) + 1e-15);
        }
    }
}
