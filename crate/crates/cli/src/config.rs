//! Run configuration: defaults, the plain key=value config file, command
//! line overrides, and the resolved-config echo written beside outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use balse::eval::ExperimentConfig;
use balse::{Error, Result};

/// Fully resolved run settings. Defaults are the standard values: ALS
/// lambda 0.1 / rank 20 / 10 sweeps, lasso alpha 0.01, learning rate 0.9
/// decaying by 0.997 every 20 steps for 15000 gate iterations, 5 folds
/// with 30% validation, cohort threshold 3.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub ratings: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub threads: usize,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    /// Parses a key=value file ('#' starts a comment). Unknown keys are
    /// rejected so typos cannot silently fall back to defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            line: 0,
            message: format!("cannot read config {}: {e}", path.display()),
        })?;
        let mut config = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected key = value, found {line:?}"),
            })?;
            config.set(key.trim(), value.trim(), line_no)?;
        }
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("invalid {what} value {value:?}"),
        };
        match key {
            "ratings" => self.ratings = Some(PathBuf::from(value)),
            "tags" => self.tags = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "threads" => self.threads = value.parse().map_err(|_| bad(key))?,
            "seed" => self.experiment.seed = value.parse().map_err(|_| bad(key))?,
            "als.rank" => self.experiment.als.rank = value.parse().map_err(|_| bad(key))?,
            "als.lambda" => self.experiment.als.lambda = value.parse().map_err(|_| bad(key))?,
            "als.sweeps" => self.experiment.als.sweeps = value.parse().map_err(|_| bad(key))?,
            "als.tol" => {
                self.experiment.als.tol = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key))?)
                }
            }
            "lasso.alpha" => self.experiment.lasso.alpha = value.parse().map_err(|_| bad(key))?,
            "lasso.max_passes" => {
                self.experiment.lasso.max_passes = value.parse().map_err(|_| bad(key))?
            }
            "lasso.tol" => self.experiment.lasso.tol = value.parse().map_err(|_| bad(key))?,
            "gate.iters" => self.experiment.gate_iters = value.parse().map_err(|_| bad(key))?,
            "split.k" => self.experiment.k_folds = value.parse().map_err(|_| bad(key))?,
            "split.valid_fraction" => {
                self.experiment.valid_fraction = value.parse().map_err(|_| bad(key))?
            }
            "cohort.threshold" => {
                self.experiment.cohort_threshold = value.parse().map_err(|_| bad(key))?
            }
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown config key {other:?}"),
                })
            }
        }
        Ok(())
    }

    /// The fully-resolved configuration in the same key=value format; this
    /// is written next to every run's outputs.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(p) = &self.ratings {
            kv("ratings", p.display().to_string());
        }
        if let Some(p) = &self.tags {
            kv("tags", p.display().to_string());
        }
        if let Some(p) = &self.out {
            kv("out", p.display().to_string());
        }
        kv("threads", self.threads.to_string());
        kv("seed", self.experiment.seed.to_string());
        kv("als.rank", self.experiment.als.rank.to_string());
        kv("als.lambda", self.experiment.als.lambda.to_string());
        kv("als.sweeps", self.experiment.als.sweeps.to_string());
        kv(
            "als.tol",
            self.experiment
                .als
                .tol
                .map_or_else(|| "none".to_string(), |t| t.to_string()),
        );
        kv("lasso.alpha", self.experiment.lasso.alpha.to_string());
        kv(
            "lasso.max_passes",
            self.experiment.lasso.max_passes.to_string(),
        );
        kv("lasso.tol", self.experiment.lasso.tol.to_string());
        kv("gate.iters", self.experiment.gate_iters.to_string());
        kv("split.k", self.experiment.k_folds.to_string());
        kv(
            "split.valid_fraction",
            self.experiment.valid_fraction.to_string(),
        );
        kv(
            "cohort.threshold",
            self.experiment.cohort_threshold.to_string(),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_the_standard_values() {
        let c = RunConfig::default();
        assert_eq!(c.experiment.als.lambda, 0.1);
        assert_eq!(c.experiment.als.rank, 20);
        assert_eq!(c.experiment.als.sweeps, 10);
        assert_eq!(c.experiment.lasso.alpha, 0.01);
        assert_eq!(c.experiment.gate_iters, 15000);
        assert_eq!(c.experiment.k_folds, 5);
        assert_eq!(c.experiment.valid_fraction, 0.30);
        assert_eq!(c.experiment.cohort_threshold, 3);
    }

    #[test]
    fn file_values_override_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "# comment\nseed = 7\nals.rank = 4\nratings = data/r.csv\nals.tol = 1e-8\n"
        )
        .unwrap();
        let c = RunConfig::load(f.path()).unwrap();
        assert_eq!(c.experiment.seed, 7);
        assert_eq!(c.experiment.als.rank, 4);
        assert_eq!(c.ratings.as_deref(), Some(Path::new("data/r.csv")));
        assert_eq!(c.experiment.als.tol, Some(1e-8));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "als.rnak = 4").unwrap();
        let err = RunConfig::load(f.path()).unwrap_err();
        assert!(err.to_string().contains("als.rnak"));
    }

    #[test]
    fn echo_round_trips_through_load() {
        let mut c = RunConfig::default();
        c.experiment.seed = 99;
        c.experiment.als.rank = 8;
        c.ratings = Some(PathBuf::from("r.csv"));
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(c.echo().as_bytes()).unwrap();
        let back = RunConfig::load(f.path()).unwrap();
        assert_eq!(back.experiment.seed, 99);
        assert_eq!(back.experiment.als.rank, 8);
        assert_eq!(back.echo(), c.echo());
    }
}
