//! Rating and tag ingestion: CSV parsing, id/index bookkeeping, the
//! categorical rating mapping and the aligned item/tag probability matrix.
//!
//! External formats:
//! - ratings CSV, header `user,item,rating` with a categorical label, or the
//!   numeric variant `user,item,value` with a real value (synthetic data);
//! - tags CSV, header `item,tag,weight` with weight in `[0,1]`.
//!
//! Indices are assigned in first-appearance order, so parsing the same file
//! twice (or a serialized copy) reproduces the exact same dataset.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};

/// One observed rating, fully indexed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingTriple {
    pub user_index: usize,
    pub item_index: usize,
    pub value: f64,
}

/// A sparse rating dataset plus the id maps needed to talk to the outside.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    triples: Vec<RatingTriple>,
}

/// Borrowed view of a set of rating triples with its matrix dimensions.
/// Trainers take this so fold subsets can be passed without copying id maps.
#[derive(Clone, Copy)]
pub struct RatingsRef<'a> {
    pub n_users: usize,
    pub n_items: usize,
    pub triples: &'a [RatingTriple],
}

impl<'a> RatingsRef<'a> {
    /// Ratings grouped per user as `(item_index, value)` lists.
    pub fn by_user(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.n_users];
        for t in self.triples {
            rows[t.user_index].push((t.item_index, t.value));
        }
        rows
    }

    /// Ratings grouped per item as `(user_index, value)` lists.
    pub fn by_item(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n_items];
        for t in self.triples {
            cols[t.item_index].push((t.user_index, t.value));
        }
        cols
    }
}

impl RatingDataset {
    /// Builds a dataset from pre-assigned ids and triples, validating the
    /// structural invariants (unique ids, in-bounds indices, no duplicate
    /// user/item pairs).
    pub fn new(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        triples: Vec<RatingTriple>,
    ) -> Result<Self> {
        let user_index = index_of(&user_ids, "user")?;
        let item_index = index_of(&item_ids, "item")?;
        let mut seen = HashSet::with_capacity(triples.len());
        for t in &triples {
            if t.user_index >= user_ids.len() {
                return Err(Error::IndexOutOfBounds {
                    what: "user",
                    index: t.user_index,
                    size: user_ids.len(),
                });
            }
            if t.item_index >= item_ids.len() {
                return Err(Error::IndexOutOfBounds {
                    what: "item",
                    index: t.item_index,
                    size: item_ids.len(),
                });
            }
            if !seen.insert((t.user_index, t.item_index)) {
                return Err(Error::DimensionMismatch(format!(
                    "duplicate rating for user {:?} item {:?}",
                    user_ids[t.user_index], item_ids[t.item_index]
                )));
            }
        }
        Ok(Self {
            user_ids,
            item_ids,
            user_index,
            item_index,
            triples,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn triples(&self) -> &[RatingTriple] {
        &self.triples
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn as_ref(&self) -> RatingsRef<'_> {
        RatingsRef {
            n_users: self.n_users(),
            n_items: self.n_items(),
            triples: &self.triples,
        }
    }

    /// Writes the dataset in the numeric CSV variant. Triple order and
    /// first-appearance id order are preserved, so re-parsing the output
    /// yields an identical dataset.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "user,item,value")?;
        for t in &self.triples {
            writeln!(
                w,
                "{},{},{}",
                csv_field(&self.user_ids[t.user_index]),
                csv_field(&self.item_ids[t.item_index]),
                t.value
            )?;
        }
        Ok(())
    }
}

fn index_of(ids: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::DimensionMismatch(format!(
                "duplicate {what} id {id:?}"
            )));
        }
    }
    Ok(map)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Maps a categorical rating label to its numeric value:
/// favorite 4, like 2, neutral 0.1, dislike -2, willsee 0.5, wontsee -0.5.
/// Case-insensitive; anything else is rejected.
pub fn map_label(label: &str) -> Result<f64> {
    label_value(label).ok_or_else(|| Error::UnknownId {
        what: "rating label",
        id: label.to_string(),
    })
}

fn label_value(label: &str) -> Option<f64> {
    match label.trim().to_ascii_lowercase().as_str() {
        "favorite" => Some(4.0),
        "like" => Some(2.0),
        "neutral" => Some(0.1),
        "dislike" => Some(-2.0),
        "willsee" => Some(0.5),
        "wontsee" => Some(-0.5),
        _ => None,
    }
}

/// Which third column the ratings CSV carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingsFormat {
    /// `user,item,rating` with a categorical label.
    Labels,
    /// `user,item,value` with a real value.
    Numeric,
}

impl RatingsFormat {
    fn header(self) -> &'static str {
        match self {
            RatingsFormat::Labels => "rating",
            RatingsFormat::Numeric => "value",
        }
    }
}

/// Parses a ratings CSV in the given format, assigning dense 0-based user
/// and item indices in first-appearance order. Malformed rows, duplicate
/// (user, item) pairs and unknown labels are rejected with their line number.
pub fn parse_ratings<R: Read>(source: R, format: RatingsFormat) -> Result<RatingDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| csv_error(e, "ratings"))?
        .clone();
    check_header(&headers, &["user", "item", format.header()], "ratings")?;

    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut triples = Vec::new();
    let mut seen: HashMap<(usize, usize), u64> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, "ratings"))?;
        let line = record_line(&record);
        if record.len() != 3 {
            return Err(Error::parse(
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let user = record[0].to_string();
        let item = record[1].to_string();
        let value = match format {
            RatingsFormat::Labels => label_value(&record[2]).ok_or_else(|| {
                Error::parse(line, format!("unknown rating label {:?}", &record[2]))
            })?,
            RatingsFormat::Numeric => {
                let v: f64 = record[2].trim().parse().map_err(|_| {
                    Error::parse(line, format!("invalid rating value {:?}", &record[2]))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(
                        line,
                        format!("non-finite rating value {:?}", &record[2]),
                    ));
                }
                v
            }
        };
        let u = *user_index.entry(user.clone()).or_insert_with(|| {
            user_ids.push(user);
            user_ids.len() - 1
        });
        let i = *item_index.entry(item.clone()).or_insert_with(|| {
            item_ids.push(item);
            item_ids.len() - 1
        });
        if let Some(first) = seen.insert((u, i), line) {
            return Err(Error::parse(
                line as usize,
                format!(
                    "duplicate rating for user {:?} item {:?} (first on line {first})",
                    &record[0], &record[1]
                ),
            ));
        }
        triples.push(RatingTriple {
            user_index: u,
            item_index: i,
            value,
        });
    }

    Ok(RatingDataset {
        user_ids,
        item_ids,
        user_index,
        item_index,
        triples,
    })
}

/// Parses a ratings CSV, picking the format from the header's third column
/// (`rating` for labels, `value` for numeric).
pub fn parse_ratings_auto<R: Read>(source: R) -> Result<RatingDataset> {
    let mut buffered = BufReader::new(source);
    let mut first_line = String::new();
    buffered.read_line(&mut first_line)?;
    let lowered = first_line.trim().to_ascii_lowercase();
    let format = if lowered == "user,item,rating" {
        RatingsFormat::Labels
    } else if lowered == "user,item,value" {
        RatingsFormat::Numeric
    } else {
        return Err(Error::parse(
            1,
            format!(
                "expected header user,item,rating or user,item,value, found {:?}",
                first_line.trim()
            ),
        ));
    };
    let rest = first_line.into_bytes();
    parse_ratings(std::io::Cursor::new(rest).chain(buffered), format)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_error(e: csv::Error, what: &str) -> Error {
    let line = match e.position() {
        Some(p) => p.line() as usize,
        None => 0,
    };
    Error::Parse {
        line,
        message: format!("malformed {what} row: {e}"),
    }
}

fn check_header(headers: &csv::StringRecord, expected: &[&str], what: &str) -> Result<()> {
    let got: Vec<String> = headers
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    if got.len() != expected.len() || got.iter().zip(expected).any(|(g, e)| g != e) {
        return Err(Error::parse(
            1usize,
            format!(
                "expected {what} header {:?}, found {:?}",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

/// Item x tag probability matrix, row-aligned with a rating dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TagMatrix {
    n_items: usize,
    tag_names: Vec<String>,
    /// Row-major, n_items x n_tags. Items without tag data keep a zero row.
    values: Vec<f64>,
}

impl TagMatrix {
    /// An all-zero matrix with `t` named tags.
    pub fn zeros(n_items: usize, tag_names: Vec<String>) -> Self {
        let t = tag_names.len();
        Self {
            n_items,
            tag_names,
            values: vec![0.0; n_items * t],
        }
    }

    /// Builds a matrix from per-item rows, validating shape and the
    /// [0, 1] probability range.
    pub fn from_rows(tag_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let t = tag_names.len();
        let mut values = Vec::with_capacity(rows.len() * t);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != t {
                return Err(Error::DimensionMismatch(format!(
                    "tag row {j} has {} entries, expected {t}",
                    row.len()
                )));
            }
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::DimensionMismatch(format!(
                        "tag probability {v} outside [0, 1] in row {j}"
                    )));
                }
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            n_items: rows.len(),
            tag_names,
            values,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_tags(&self) -> usize {
        self.tag_names.len()
    }

    pub fn tag_names(&self) -> &[String] {
        &self.tag_names
    }

    pub fn row(&self, item_index: usize) -> &[f64] {
        let t = self.n_tags();
        &self.values[item_index * t..(item_index + 1) * t]
    }

    fn set(&mut self, item_index: usize, tag_index: usize, w: f64) {
        let t = self.n_tags();
        self.values[item_index * t + tag_index] = w;
    }

    /// Writes the nonzero entries back out in the tags CSV format.
    pub fn write_csv<W: Write>(&self, item_ids: &[String], mut w: W) -> Result<()> {
        if item_ids.len() != self.n_items {
            return Err(Error::DimensionMismatch(format!(
                "{} item ids for {} tag rows",
                item_ids.len(),
                self.n_items
            )));
        }
        writeln!(w, "item,tag,weight")?;
        for (j, id) in item_ids.iter().enumerate() {
            for (k, &v) in self.row(j).iter().enumerate() {
                if v != 0.0 {
                    writeln!(
                        w,
                        "{},{},{}",
                        csv_field(id),
                        csv_field(&self.tag_names[k]),
                        v
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Versioned sparse dump used for trained-model artifacts; round-trips
    /// exactly via [`read_tag_matrix`].
    pub fn write_matrix<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tag-matrix v1")?;
        writeln!(w, "m {} t {}", self.n_items, self.n_tags())?;
        for name in &self.tag_names {
            writeln!(w, "tag {name}")?;
        }
        for j in 0..self.n_items {
            for (k, &v) in self.row(j).iter().enumerate() {
                if v != 0.0 {
                    writeln!(w, "{j} {k} {v}")?;
                }
            }
        }
        Ok(())
    }
}

/// Reads a [`TagMatrix::write_matrix`] dump.
pub fn read_tag_matrix<R: Read>(r: R) -> Result<TagMatrix> {
    let mut lines = BufReader::new(r).lines();
    let magic = next_line(&mut lines, 1)?;
    if magic.trim() != "tag-matrix v1" {
        return Err(Error::parse(1usize, "not a tag-matrix v1 file".to_string()));
    }
    let dims = next_line(&mut lines, 2)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "m" || parts[2] != "t" {
        return Err(Error::parse(2usize, "expected `m <m> t <t>`".to_string()));
    }
    let m: usize = parse_num(parts[1], 2)?;
    let t: usize = parse_num(parts[3], 2)?;
    let mut tag_names = Vec::with_capacity(t);
    let mut line_no = 2usize;
    for _ in 0..t {
        line_no += 1;
        let line = next_line(&mut lines, line_no)?;
        let name = line
            .strip_prefix("tag ")
            .ok_or_else(|| Error::parse(line_no, "expected `tag <name>` line".to_string()))?;
        tag_names.push(name.to_string());
    }
    let mut matrix = TagMatrix::zeros(m, tag_names);
    for line in lines {
        line_no += 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let j: usize = parse_num(it.next().unwrap_or(""), line_no)?;
        let k: usize = parse_num(it.next().unwrap_or(""), line_no)?;
        let v: f64 = parse_num(it.next().unwrap_or(""), line_no)?;
        if j >= m || k >= t {
            return Err(Error::parse(
                line_no,
                "entry index out of bounds".to_string(),
            ));
        }
        matrix.set(j, k, v);
    }
    Ok(matrix)
}

pub(crate) fn next_line(
    lines: &mut std::io::Lines<impl BufRead>,
    line_no: usize,
) -> Result<String> {
    match lines.next() {
        Some(Ok(l)) => Ok(l),
        Some(Err(e)) => Err(e.into()),
        None => Err(Error::parse(line_no, "unexpected end of file".to_string())),
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("invalid number {s:?}")))
}

/// Summary of non-fatal observations made while parsing tags.
#[derive(Debug, Clone, Copy, Default)]
pub struct TagParseSummary {
    /// Rows referencing item ids absent from the rating dataset.
    pub skipped_unknown_items: usize,
}

/// Parses a tags CSV against an existing dataset. Tags are indexed in
/// first-appearance order; dataset items with no tag rows get all-zero rows;
/// rows for items the dataset does not know are skipped and counted.
pub fn parse_tags<R: Read>(
    source: R,
    dataset: &RatingDataset,
) -> Result<(TagMatrix, TagParseSummary)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);

    // An entirely empty stream is a valid "no posters" tag file.
    let headers = reader.headers().map_err(|e| csv_error(e, "tags"))?.clone();
    if !headers.is_empty() && !(headers.len() == 1 && headers[0].trim().is_empty()) {
        check_header(&headers, &["item", "tag", "weight"], "tags")?;
    }

    let mut tag_names: Vec<String> = Vec::new();
    let mut tag_index: HashMap<String, usize> = HashMap::new();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut seen: HashMap<(usize, usize), u64> = HashMap::new();
    let mut summary = TagParseSummary::default();

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, "tags"))?;
        let line = record_line(&record);
        if record.len() != 3 {
            return Err(Error::parse(
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let weight: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid tag weight {:?}", &record[2])))?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::parse(
                line,
                format!("tag weight {weight} outside [0, 1]"),
            ));
        }
        let item = match dataset.item_index(&record[0]) {
            Some(j) => j,
            None => {
                summary.skipped_unknown_items += 1;
                continue;
            }
        };
        let tag = record[1].to_string();
        let k = *tag_index.entry(tag.clone()).or_insert_with(|| {
            tag_names.push(tag);
            tag_names.len() - 1
        });
        if let Some(first) = seen.insert((item, k), line) {
            return Err(Error::parse(
                line as usize,
                format!(
                    "duplicate tag {:?} for item {:?} (first on line {first})",
                    &record[1], &record[0]
                ),
            ));
        }
        entries.push((item, k, weight));
    }

    let mut matrix = TagMatrix::zeros(dataset.n_items(), tag_names);
    for (j, k, w) in entries {
        matrix.set(j, k, w);
    }
    Ok((matrix, summary))
}

/// Writes one id per line; order is the index order.
pub fn write_ids<W: Write>(ids: &[String], mut w: W) -> Result<()> {
    for id in ids {
        writeln!(w, "{id}")?;
    }
    Ok(())
}

/// Reads ids written by [`write_ids`].
pub fn read_ids<R: Read>(r: R) -> Result<Vec<String>> {
    BufReader::new(r)
        .lines()
        .map(|l| l.map_err(Error::from))
        .collect()
}
