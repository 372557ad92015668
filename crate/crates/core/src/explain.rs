//! Human-readable taste profiles and per-recommendation explanations built
//! from learned user tag preferences.
//!
//! A profile ranks the user's tag weights themselves; an explanation ranks
//! per-item contributions (weight times the item's tag probability), so the
//! same user gets different reasons for different items.

use crate::error::{Error, Result};
use crate::lasso::clamp_tau;

/// The user's strongest likes and dislikes by learned tag weight.
/// Zero-weight tags are never listed, so both lists may be shorter than k.
#[derive(Debug, Clone, PartialEq)]
pub struct TasteProfile {
    pub user_index: usize,
    /// Sorted by weight descending; all weights > 0.
    pub top_positive: Vec<(String, f64)>,
    /// Sorted by weight ascending; all weights < 0.
    pub top_negative: Vec<(String, f64)>,
}

fn check_aligned(values: &[f64], tag_names: &[String]) -> Result<()> {
    if values.len() != tag_names.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights vs {} tag names",
            values.len(),
            tag_names.len()
        )));
    }
    Ok(())
}

/// Named tags paired with their weight or contribution.
pub type RankedTags = Vec<(String, f64)>;

/// Top-k signed entries of `values`, split by sign. Ties break on the lower
/// tag index, so the output is deterministic.
fn top_k_signed(values: &[f64], tag_names: &[String], k: usize) -> (RankedTags, RankedTags) {
    let mut positive: Vec<(usize, f64)> = Vec::new();
    let mut negative: Vec<(usize, f64)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v > 0.0 {
            positive.push((i, v));
        } else if v < 0.0 {
            negative.push((i, v));
        }
    }
    positive.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    negative.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let name = |(i, v): (usize, f64)| (tag_names[i].clone(), v);
    (
        positive.into_iter().take(k).map(name).collect(),
        negative.into_iter().take(k).map(name).collect(),
    )
}

/// Ranks the user's preference row into a taste profile with at most `k`
/// tags per side (6 matches the usual presentation).
pub fn taste_profile(
    user_index: usize,
    preferences: &[f64],
    tag_names: &[String],
    k: usize,
) -> Result<TasteProfile> {
    check_aligned(preferences, tag_names)?;
    let (top_positive, top_negative) = top_k_signed(preferences, tag_names, k);
    Ok(TasteProfile {
        user_index,
        top_positive,
        top_negative,
    })
}

/// Why one item got its score: the strongest positive and negative tag
/// contributions plus the clamped total.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    /// Sorted by contribution descending; all > 0.
    pub positive: Vec<(String, f64)>,
    /// Sorted by contribution ascending; all < 0.
    pub negative: Vec<(String, f64)>,
    /// Unclamped sum of every tag contribution.
    pub raw_score: f64,
    /// The actual prediction: raw_score clamped to [-2, 2].
    pub score: f64,
}

/// Ranks per-tag contributions `weight * probability` for one (user, item)
/// pair, keeping the top `k` per sign (3 reads well in a sentence).
pub fn explain_prediction(
    preferences: &[f64],
    tag_row: &[f64],
    tag_names: &[String],
    k: usize,
) -> Result<Explanation> {
    check_aligned(preferences, tag_names)?;
    check_aligned(tag_row, tag_names)?;
    let contributions: Vec<f64> = preferences
        .iter()
        .zip(tag_row)
        .map(|(w, p)| w * p)
        .collect();
    let raw_score: f64 = contributions.iter().sum();
    let (positive, negative) = top_k_signed(&contributions, tag_names, k);
    Ok(Explanation {
        positive,
        negative,
        raw_score,
        score: clamp_tau(raw_score),
    })
}

/// Sentence templates with `{item}`, `{because}`, `{caveat}` and `{upside}`
/// placeholders. They are plain data so a frontend can swap the wording.
#[derive(Debug, Clone)]
pub struct Templates {
    pub recommend: String,
    pub recommend_with_caveat: String,
    pub warn: String,
    pub warn_with_upside: String,
    pub no_signal: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            recommend: "We recommend {item} because there is {because}.".into(),
            recommend_with_caveat:
                "We recommend {item} because there is {because}, even though there is {caveat}."
                    .into(),
            warn: "You might not like {item} because there is {because}.".into(),
            warn_with_upside:
                "You might not like {item} because there is {because}, even though there is {upside}."
                    .into(),
            no_signal: "No tag carries any signal for {item}.".into(),
        }
    }
}

fn join_tags(tags: &[(String, f64)]) -> String {
    let names: Vec<&str> = tags.iter().map(|(n, _)| n.as_str()).collect();
    match names.len() {
        0 => String::new(),
        1 => names[0].to_string(),
        _ => format!(
            "{} and {}",
            names[..names.len() - 1].join(", "),
            names[names.len() - 1]
        ),
    }
}

impl Templates {
    /// Renders a recommendation when the score is nonnegative and a warning
    /// otherwise; the opposite-sign tags become the "even though" clause.
    pub fn render(&self, item_label: &str, explanation: &Explanation) -> String {
        let positive = join_tags(&explanation.positive);
        let negative = join_tags(&explanation.negative);
        let template = if explanation.positive.is_empty() && explanation.negative.is_empty() {
            &self.no_signal
        } else if explanation.score >= 0.0 {
            if explanation.negative.is_empty() {
                &self.recommend
            } else {
                &self.recommend_with_caveat
            }
        } else if explanation.positive.is_empty() {
            &self.warn
        } else {
            &self.warn_with_upside
        };
        let (because, other) = if explanation.score >= 0.0 {
            (positive.as_str(), negative.as_str())
        } else {
            (negative.as_str(), positive.as_str())
        };
        template
            .replace("{item}", item_label)
            .replace("{because}", because)
            .replace("{caveat}", other)
            .replace("{upside}", other)
    }
}
