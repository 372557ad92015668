//! Layout of a trained-model directory, so `predict` and `explain` can run
//! without refitting anything:
//!
//! ```text
//! als.model        factor matrices (train+valid data)
//! lasso.model      sparse preference rows (train+valid data)
//! gate.params      beta/gamma plus fit metadata
//! tags.matrix      aligned tag probabilities and tag names
//! item_counts.csv  per-item rating counts over the gate's train subset
//! users.txt        user id per index
//! items.txt        item id per index
//! config.txt       resolved configuration echo
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use balse::als::{read_als_model, AlsModel};
use balse::dataset::{read_ids, read_tag_matrix, TagMatrix};
use balse::gate::{read_gate_params, GateParams};
use balse::lasso::{read_lasso_model, LassoModel};
use balse::{Error, Result};

pub struct Artifacts {
    pub als: AlsModel,
    pub lasso: LassoModel,
    pub gate: GateParams,
    pub tags: TagMatrix,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Ratings per item over the train subset the gate was fit against.
    pub item_counts: Vec<usize>,
}

pub fn open(path: &Path, what: &str) -> Result<File> {
    File::open(path).map_err(|e| Error::Parse {
        line: 0,
        message: format!("cannot open {what} {}: {e}", path.display()),
    })
}

pub fn create(path: &Path, what: &str) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Parse {
            line: 0,
            message: format!("cannot create {what} {}: {e}", path.display()),
        })
}

fn file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[allow(clippy::too_many_arguments)]
pub fn save(
    dir: &Path,
    als: &AlsModel,
    lasso: &LassoModel,
    gate: &GateParams,
    gate_iters: usize,
    gate_loss: f64,
    tags: &TagMatrix,
    user_ids: &[String],
    item_ids: &[String],
    item_counts: &[usize],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    als.write(create(&file(dir, "als.model"), "model file")?)?;
    lasso.write(create(&file(dir, "lasso.model"), "model file")?)?;
    balse::gate::write_gate_params(
        gate,
        gate_iters,
        gate_loss,
        create(&file(dir, "gate.params"), "gate file")?,
    )?;
    tags.write_matrix(create(&file(dir, "tags.matrix"), "tag matrix")?)?;
    balse::dataset::write_ids(user_ids, create(&file(dir, "users.txt"), "id map")?)?;
    balse::dataset::write_ids(item_ids, create(&file(dir, "items.txt"), "id map")?)?;
    let mut counts = create(&file(dir, "item_counts.csv"), "count file")?;
    writeln!(counts, "item,count")?;
    for (j, c) in item_counts.iter().enumerate() {
        writeln!(counts, "{},{c}", item_ids[j])?;
    }
    Ok(())
}

pub fn load(dir: &Path) -> Result<Artifacts> {
    let als = read_als_model(open(&file(dir, "als.model"), "model file")?)?;
    let lasso = read_lasso_model(open(&file(dir, "lasso.model"), "model file")?)?;
    let (gate, _, _) = read_gate_params(open(&file(dir, "gate.params"), "gate file")?)?;
    let tags = read_tag_matrix(open(&file(dir, "tags.matrix"), "tag matrix")?)?;
    let user_ids = read_ids(open(&file(dir, "users.txt"), "id map")?)?;
    let item_ids = read_ids(open(&file(dir, "items.txt"), "id map")?)?;

    let index: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect();
    let mut item_counts = vec![0usize; item_ids.len()];
    let reader = BufReader::new(open(&file(dir, "item_counts.csv"), "count file")?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if line.trim() != "item,count" {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header item,count".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id, count) = line.rsplit_once(',').ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("expected item,count row, found {line:?}"),
        })?;
        let j = *index.get(id).ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("count row for unknown item {id:?}"),
        })?;
        item_counts[j] = count.trim().parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("invalid count {count:?}"),
        })?;
    }

    if als.n_users() != user_ids.len()
        || als.n_items() != item_ids.len()
        || lasso.n_users() != user_ids.len()
        || tags.n_items() != item_ids.len()
        || lasso.n_tags() != tags.n_tags()
    {
        return Err(Error::DimensionMismatch(
            "model files in this directory disagree about shapes".into(),
        ));
    }
    Ok(Artifacts {
        als,
        lasso,
        gate,
        tags,
        user_ids,
        item_ids,
        item_counts,
    })
}

/// The closest known ids by edit distance, for unknown-id error messages.
pub fn nearest_ids<'a>(target: &str, known: &'a [String], k: usize) -> Vec<&'a str> {
    let mut scored: Vec<(usize, &str)> = known
        .iter()
        .map(|id| (strsim::levenshtein(target, id), id.as_str()))
        .collect();
    scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

pub fn resolve_id(target: &str, known: &[String], what: &'static str) -> Result<usize> {
    if let Some(idx) = known.iter().position(|id| id == target) {
        return Ok(idx);
    }
    let nearest = nearest_ids(target, known, 5);
    Err(Error::UnknownId {
        what,
        id: format!("{target:?} (nearest known ids: {})", nearest.join(", ")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_ids_rank_by_edit_distance() {
        let known: Vec<String> = ["alpha", "alphb", "beta", "alpaca"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let near = nearest_ids("alpha", &known, 2);
        assert_eq!(near, vec!["alpha", "alphb"]);
    }

    #[test]
    fn resolve_reports_candidates() {
        let known: Vec<String> = ["u1", "u2", "u30"].iter().map(|s| s.to_string()).collect();
        let err = resolve_id("u3", &known, "user").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("u3"), "{msg}");
        assert!(msg.contains("nearest known"), "{msg}");
    }
}
