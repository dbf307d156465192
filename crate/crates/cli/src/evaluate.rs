use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use microjoint::experiment::{aggregate, fit, fit_joint_shared, prepare, score, Aggregate, MeanSd, Model, Scores};
use microjoint::io::{self, fmt_real, write_table};
use microjoint::{par, Hyperparams, SamplerConfig};
use serde::Serialize;

use crate::cli::{ConfigFile, EvaluateArgs};
use crate::layout::{absolute, create_dir, load_fit, load_partition, sibling, Provenance, PARTITION};
use crate::UsageError;

/// Scores of one fit, labelled by replicate and setting.
#[derive(Debug, Serialize)]
struct Row {
    replicate: String,
    setting: String,
    scores: Scores,
}

#[derive(Debug, Serialize)]
struct Summary {
    setting: String,
    aggregate: Aggregate,
}

pub fn run(args: EvaluateArgs) -> anyhow::Result<()> {
    let prov = Provenance::start("evaluate");
    let (rows, inputs, seed, config) = if let Some(sim) = &args.sim {
        let file = ConfigFile::load(args.config.as_deref())?;
        let hyper = args.hyper.resolve(file.hyper);
        let config = args.sampler.resolve(file.sampler);
        hyper.validate()?;
        config.validate()?;
        let rows = evaluate_sim(sim, &args, &hyper, &config)?;
        let cfg = serde_json::json!({ "model": args.model, "sweep_b0": args.sweep_b0, "hyper": hyper, "sampler": config });
        (rows, vec![absolute(sim)?], Some(config.seed), cfg)
    } else if !args.runs.is_empty() {
        let rows = evaluate_runs(&args.runs, args.truth.as_deref())?;
        let inputs = args.runs.iter().map(|p| absolute(p)).collect::<anyhow::Result<Vec<_>>>()?;
        (rows, inputs, None, serde_json::json!({ "truth": args.truth }))
    } else {
        return Err(UsageError("give either --sim DIR or --runs DIR...".into()).into());
    };

    let mut settings: Vec<String> = Vec::new();
    for r in &rows {
        if !settings.contains(&r.setting) {
            settings.push(r.setting.clone());
        }
    }
    let summaries: Vec<Summary> = settings
        .iter()
        .map(|s| {
            let scores: Vec<Scores> = rows.iter().filter(|r| &r.setting == s).map(|r| r.scores.clone()).collect();
            Summary { setting: s.clone(), aggregate: aggregate(&scores) }
        })
        .collect();

    create_dir(&args.out)?;
    write_per_replicate(&args.out.join("per_replicate.csv"), &rows)?;
    write_aggregate(&args.out.join("aggregate.csv"), &summaries)?;
    io::write_json(
        &args.out.join("report.json"),
        &serde_json::json!({ "replicates": rows, "aggregate": summaries }),
    )?;
    print_table(&summaries);

    prov.finish(
        &args.out,
        seed,
        config,
        inputs,
        ["per_replicate.csv", "aggregate.csv", "report.json"].iter().map(|f| args.out.join(f)).collect(),
    )
}

fn evaluate_runs(runs: &[PathBuf], truth: Option<&Path>) -> anyhow::Result<Vec<Row>> {
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let loaded = load_fit(&absolute(run)?, None)?;
        let truth_dir = match truth {
            Some(t) => t.to_path_buf(),
            None => sibling(&loaded.record.data, "truth")
                .with_context(|| format!("no truth/ next to {}; pass --truth", loaded.record.data.display()))?,
        };
        let truth = io::read_truth(&truth_dir)?;
        rows.push(Row {
            replicate: run.display().to_string(),
            setting: loaded.record.model.to_string(),
            scores: score(&loaded.fit, &loaded.prep, &truth)?,
        });
    }
    Ok(rows)
}

fn replicate_dirs(sim: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(sim)
        .with_context(|| format!("reading {}", sim.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("train").is_dir() && p.join("truth").is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no replicate directories in {}", sim.display());
    }
    Ok(dirs)
}

fn evaluate_sim(sim: &Path, args: &EvaluateArgs, hyper: &Hyperparams, config: &SamplerConfig) -> anyhow::Result<Vec<Row>> {
    if !args.sweep_b0.is_empty() && args.model != Model::Joint {
        return Err(UsageError("--sweep-b0 applies to the joint model only".into()).into());
    }
    let dirs = replicate_dirs(sim)?;
    let partition = args.partition.clone().or_else(|| Some(sim.join(PARTITION)).filter(|p| p.exists()));
    let per_rep = par::map_range(dirs.len(), |r| -> anyhow::Result<Vec<Row>> {
        let rep = io::read_replicate(&dirs[r])?;
        let spec = load_partition(partition.as_deref(), rep.train.n_taxa())?;
        let prep = prepare(&rep.train, &rep.test)?;
        let config = SamplerConfig { seed: config.seed.wrapping_add(r as u64), ..config.clone() };
        let name = dirs[r].file_name().map_or_else(|| r.to_string(), |n| n.to_string_lossy().into_owned());
        let fits = if args.sweep_b0.is_empty() {
            vec![(args.model.to_string(), fit(&prep, args.model, hyper, &config, &spec)?)]
        } else {
            let hypers: Vec<Hyperparams> = args.sweep_b0.iter().map(|&b0| Hyperparams { b0, ..*hyper }).collect();
            let fits = fit_joint_shared(&prep, &hypers, &config, &spec)?;
            args.sweep_b0.iter().map(|b0| format!("joint b0={b0}")).zip(fits).collect()
        };
        fits.into_iter()
            .map(|(setting, f)| Ok(Row { replicate: name.clone(), setting, scores: score(&f, &prep, &rep.truth)? }))
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_rep {
        rows.extend(r?);
    }
    Ok(rows)
}

fn write_per_replicate(path: &Path, rows: &[Row]) -> anyhow::Result<()> {
    let header = [
        "replicate", "setting", "cov_tp", "cov_tn", "cov_fp", "cov_fn", "cov_sensitivity", "cov_specificity", "cov_mcc",
        "bal_tp", "bal_tn", "bal_fp", "bal_fn", "bal_sensitivity", "bal_specificity", "bal_mcc", "mse", "pmse",
    ]
    .map(str::to_owned);
    write_table(
        path,
        &header,
        rows.iter().map(|r| {
            let (c, b) = (&r.scores.covariates, &r.scores.balances);
            vec![
                r.replicate.clone(),
                r.setting.clone(),
                c.tp.to_string(),
                c.tn.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                fmt_real(c.sensitivity),
                fmt_real(c.specificity),
                fmt_real(c.mcc),
                b.tp.to_string(),
                b.tn.to_string(),
                b.fp.to_string(),
                b.fn_.to_string(),
                fmt_real(b.sensitivity),
                fmt_real(b.specificity),
                fmt_real(b.mcc),
                fmt_real(r.scores.mse.sum),
                r.scores.pmse.map_or_else(String::new, |p| fmt_real(p.sum)),
            ]
        }),
    )?;
    Ok(())
}

fn columns(a: &Aggregate) -> [(&'static str, MeanSd); 10] {
    [
        ("cov_sensitivity", a.cov_sensitivity),
        ("cov_specificity", a.cov_specificity),
        ("cov_mcc", a.cov_mcc),
        ("cov_selected", a.cov_selected),
        ("bal_sensitivity", a.bal_sensitivity),
        ("bal_specificity", a.bal_specificity),
        ("bal_mcc", a.bal_mcc),
        ("bal_selected", a.bal_selected),
        ("mse", a.mse),
        ("pmse", a.pmse),
    ]
}

fn write_aggregate(path: &Path, summaries: &[Summary]) -> anyhow::Result<()> {
    let mut header = vec!["setting".to_owned(), "replicates".to_owned()];
    if let Some(s) = summaries.first() {
        for (name, _) in columns(&s.aggregate) {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_sd"));
        }
    }
    write_table(
        path,
        &header,
        summaries.iter().map(|s| {
            let mut row = vec![s.setting.clone(), s.aggregate.replicates.to_string()];
            for (_, v) in columns(&s.aggregate) {
                row.push(fmt_real(v.mean));
                row.push(fmt_real(v.sd));
            }
            row
        }),
    )?;
    Ok(())
}

fn print_table(summaries: &[Summary]) {
    let cell = |v: MeanSd| format!("{:.2} ({:.2})", v.mean, v.sd);
    println!(
        "{:<16} {:>13} {:>13} {:>13} {:>13} | {:>13} {:>13} {:>13} {:>13} | {:>15} {:>15}",
        "setting", "cov sens", "cov spec", "cov MCC", "cov sel", "bal sens", "bal spec", "bal MCC", "bal sel", "MSE", "PMSE"
    );
    for s in summaries {
        let a = &s.aggregate;
        println!(
            "{:<16} {:>13} {:>13} {:>13} {:>13} | {:>13} {:>13} {:>13} {:>13} | {:>15} {:>15}",
            s.setting,
            cell(a.cov_sensitivity),
            cell(a.cov_specificity),
            cell(a.cov_mcc),
            cell(a.cov_selected),
            cell(a.bal_sensitivity),
            cell(a.bal_specificity),
            cell(a.bal_mcc),
            cell(a.bal_selected),
            cell(a.mse),
            cell(a.pmse),
        );
    }
}
