//! Implementations of the CLI subcommands.

use std::io::Write;
use std::path::Path;

use balse::als::{predict_als, train_als, AlsHyperParams};
use balse::dataset::{parse_ratings_auto, parse_tags, RatingDataset, RatingsRef, TagMatrix};
use balse::eval::{
    holdout_split, item_counts, render_table, run_experiment, write_cohort_sizes_csv,
    write_report_csv,
};
use balse::explain::{explain_prediction, taste_profile, Templates};
use balse::gate::{blend_weight, train_gate, BlendTriple, GateParams};
use balse::lasso::{predict_lasso, train_lasso};
use balse::synth::{generate, SynthConfig};
use balse::{Error, Result};

use crate::artifacts::{self, create, open, resolve_id};
use crate::config::RunConfig;

fn load_inputs(config: &RunConfig) -> Result<(RatingDataset, TagMatrix)> {
    let ratings_path = config.ratings.as_deref().ok_or_else(|| {
        Error::InvalidConfig("no ratings path (use --ratings or the config file)".into())
    })?;
    let tags_path = config.tags.as_deref().ok_or_else(|| {
        Error::InvalidConfig("no tags path (use --tags or the config file)".into())
    })?;
    let dataset = parse_ratings_auto(open(ratings_path, "ratings file")?)?;
    let (tags, summary) = parse_tags(open(tags_path, "tags file")?, &dataset)?;
    if summary.skipped_unknown_items > 0 {
        eprintln!(
            "note: skipped {} tag rows for items absent from the ratings",
            summary.skipped_unknown_items
        );
    }
    Ok((dataset, tags))
}

fn out_dir(config: &RunConfig) -> Result<&Path> {
    let out = config.out.as_deref().ok_or_else(|| {
        Error::InvalidConfig("no output directory (use --out or the config file)".into())
    })?;
    std::fs::create_dir_all(out)?;
    Ok(out)
}

fn write_echo(dir: &Path, text: &str) -> Result<()> {
    let mut f = create(&dir.join("config.txt"), "config echo")?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn ingest(config: &RunConfig) -> Result<()> {
    let (dataset, tags) = load_inputs(config)?;
    let nonzero: usize = (0..tags.n_items())
        .map(|j| tags.row(j).iter().filter(|&&v| v != 0.0).count())
        .sum();
    println!(
        "ratings: {} triples, {} users, {} items",
        dataset.triples().len(),
        dataset.n_users(),
        dataset.n_items()
    );
    println!("tags: {} tags, {} nonzero entries", tags.n_tags(), nonzero);
    if let Some(out) = &config.out {
        std::fs::create_dir_all(out)?;
        dataset.write_csv(create(&out.join("ratings.csv"), "ratings copy")?)?;
        tags.write_csv(
            dataset.item_ids(),
            create(&out.join("tags.csv"), "tags copy")?,
        )?;
        write_echo(out, &config.echo())?;
        println!("wrote normalized copies to {}", out.display());
    }
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<()> {
    let (dataset, tags) = load_inputs(config)?;
    let out = out_dir(config)?;
    let exp = &config.experiment;
    let n = dataset.n_users();
    let m = dataset.n_items();
    let all = dataset.triples();

    // Stage 1: fit both blocks on the fit side of a holdout split, then the
    // gate on the held-out triples with fit-side item counts.
    let (fit_idx, holdout_idx) = holdout_split(all.len(), exp.valid_fraction, exp.seed)?;
    let fit: Vec<_> = fit_idx.iter().map(|&i| all[i]).collect();
    let holdout: Vec<_> = holdout_idx.iter().map(|&i| all[i]).collect();
    let fit_ref = RatingsRef {
        n_users: n,
        n_items: m,
        triples: &fit,
    };
    let als_stage = train_als(
        fit_ref,
        &AlsHyperParams {
            seed: exp.seed,
            ..exp.als.clone()
        },
    )?;
    let lasso_stage = train_lasso(fit_ref, &tags, &exp.lasso)?;
    let counts = item_counts(&fit, m);

    let mut blend_triples = Vec::with_capacity(holdout.len());
    for t in &holdout {
        blend_triples.push(BlendTriple {
            als_pred: predict_als(&als_stage, t.user_index, t.item_index)?,
            lasso_pred: predict_lasso(&lasso_stage, &tags, t.user_index, t.item_index)?,
            item_count: counts[t.item_index],
            truth: t.value,
        });
    }
    let gate_fit = train_gate(
        &blend_triples,
        GateParams::init_for(&blend_triples),
        exp.gate_iters,
    )?;

    // Stage 2: the served models are retrained on all of the data.
    let als = train_als(
        dataset.as_ref(),
        &AlsHyperParams {
            seed: exp.seed.wrapping_add(1),
            ..exp.als.clone()
        },
    )?;
    let lasso = train_lasso(dataset.as_ref(), &tags, &exp.lasso)?;

    artifacts::save(
        out,
        &als,
        &lasso,
        &gate_fit.params,
        gate_fit.iterations,
        gate_fit.final_loss,
        &tags,
        dataset.user_ids(),
        dataset.item_ids(),
        &counts,
    )?;
    write_echo(out, &config.echo())?;

    println!(
        "trained on {} triples ({} users, {} items, {} tags)",
        all.len(),
        n,
        m,
        tags.n_tags()
    );
    println!(
        "gate: beta={} gamma={} (validation loss {} -> {})",
        gate_fit.params.beta, gate_fit.params.gamma, gate_fit.initial_loss, gate_fit.final_loss
    );
    if gate_fit.beta_is_negative() {
        eprintln!("warning: learned beta <= 0; the gate is inverted (popular items lean on tags)");
    }
    println!("artifacts written to {}", out.display());
    Ok(())
}

pub fn evaluate(config: &RunConfig) -> Result<()> {
    let (dataset, tags) = load_inputs(config)?;
    let out = out_dir(config)?;
    let report = run_experiment(&dataset, &tags, &config.experiment)?;
    write_report_csv(&report, create(&out.join("report.csv"), "report")?)?;
    write_cohort_sizes_csv(&report, create(&out.join("cohort_sizes.csv"), "report")?)?;
    let table = render_table(&report);
    let mut table_file = create(&out.join("table.txt"), "report table")?;
    table_file.write_all(table.as_bytes())?;
    write_echo(out, &config.echo())?;
    print!("{table}");
    println!("reports written to {}", out.display());
    Ok(())
}

pub fn predict(model_dir: &Path, user_id: &str, item_id: &str) -> Result<()> {
    let a = artifacts::load(model_dir)?;
    let u = resolve_id(user_id, &a.user_ids, "user id")?;
    let j = resolve_id(item_id, &a.item_ids, "item id")?;
    let als = predict_als(&a.als, u, j)?;
    let lasso = predict_lasso(&a.lasso, &a.tags, u, j)?;
    let count = a.item_counts[j];
    let w = blend_weight(count, &a.gate);
    let blended = w * als + (1.0 - w) * lasso;
    println!("user {user_id}");
    println!("item {item_id}");
    println!("item_train_ratings {count}");
    println!("als {als}");
    println!("lasso {lasso}");
    println!("weight {w}");
    println!("blended {blended}");
    Ok(())
}

pub fn explain(model_dir: &Path, user_id: &str, item_id: Option<&str>) -> Result<()> {
    let a = artifacts::load(model_dir)?;
    let u = resolve_id(user_id, &a.user_ids, "user id")?;
    let row = a.lasso.dense_row(u);
    if a.lasso.sparse_row(u).is_empty() {
        println!("user {user_id} has no learned preferences");
        return Ok(());
    }
    match item_id {
        None => {
            let profile = taste_profile(u, &row, a.tags.tag_names(), 6)?;
            println!("taste profile for user {user_id}");
            let fmt = |list: &[(String, f64)]| {
                list.iter()
                    .map(|(name, w)| format!("{name} ({w:+.3})"))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            println!("likes: {}", fmt(&profile.top_positive));
            println!("dislikes: {}", fmt(&profile.top_negative));
        }
        Some(item_id) => {
            let j = resolve_id(item_id, &a.item_ids, "item id")?;
            let explanation = explain_prediction(&row, a.tags.row(j), a.tags.tag_names(), 3)?;
            println!("{}", Templates::default().render(item_id, &explanation));
            println!(
                "score {} (raw {})",
                explanation.score, explanation.raw_score
            );
            for (name, c) in &explanation.positive {
                println!("+ {name} ({c:+.4})");
            }
            for (name, c) in &explanation.negative {
                println!("- {name} ({c:+.4})");
            }
        }
    }
    Ok(())
}

pub fn synth(config: &SynthConfig, out: &Path) -> Result<()> {
    let (dataset, tags, truth) = generate(config)?;
    std::fs::create_dir_all(out)?;
    dataset.write_csv(create(&out.join("ratings.csv"), "ratings")?)?;
    tags.write_csv(dataset.item_ids(), create(&out.join("tags.csv"), "tags")?)?;

    let mut sidecar = create(&out.join("truth.csv"), "ground truth")?;
    writeln!(sidecar, "user,item,clean,observed")?;
    for (t, clean) in dataset.triples().iter().zip(&truth.clean_values) {
        writeln!(
            sidecar,
            "{},{},{},{}",
            dataset.user_ids()[t.user_index],
            dataset.item_ids()[t.item_index],
            clean,
            t.value
        )?;
    }

    let mut echo = String::new();
    for (k, v) in [
        ("synth.users", config.n_users.to_string()),
        ("synth.items", config.n_items.to_string()),
        ("synth.tags", config.n_tags.to_string()),
        ("synth.rank", config.rank.to_string()),
        ("synth.density", config.density.to_string()),
        ("synth.cold_fraction", config.cold_fraction.to_string()),
        ("synth.tag_signal", config.tag_signal.to_string()),
        ("synth.noise_sd", config.noise_sd.to_string()),
        ("synth.quantize", config.quantize.to_string()),
        ("synth.seed", config.seed.to_string()),
    ] {
        echo.push_str(&format!("{k} = {v}\n"));
    }
    write_echo(out, &echo)?;

    println!(
        "wrote {} triples ({} users, {} items, {} tags) to {}",
        dataset.triples().len(),
        dataset.n_users(),
        dataset.n_items(),
        tags.n_tags(),
        out.display()
    );
    if truth.users_without_ratings > 0 {
        eprintln!(
            "note: {} users ended up with no ratings",
            truth.users_without_ratings
        );
    }
    Ok(())
}
