use microjoint::experiment::{fit, prepare, Fit, Model};
use microjoint::io;
use microjoint::simulation::TestSet;

use crate::cli::{ConfigFile, FitArgs};
use crate::layout::{absolute, create_dir, load_partition, train_dir, write_fit, FitRecord, Provenance, FIT_RECORD, PARTITION};

pub fn run(args: FitArgs) -> anyhow::Result<()> {
    let prov = Provenance::start("fit");
    let file = ConfigFile::load(args.config.as_deref())?;
    let hyper = args.hyper.resolve(file.hyper);
    let config = args.sampler.resolve(file.sampler);
    hyper.validate()?;
    config.validate()?;

    let data_dir = absolute(&train_dir(&args.data))?;
    let train = io::read_dataset(&data_dir)?;
    let spec = load_partition(args.partition.as_deref(), train.n_taxa())?;
    // Fitted values only; the test set is not needed here.
    let test = TestSet { z: train.z().clone(), x: train.x().clone(), y: None };
    let prep = prepare(&train, &test)?;
    let fitted = fit(&prep, args.model, &hyper, &config, &spec)?;

    create_dir(&args.out)?;
    write_fit(&args.out, &fitted)?;
    io::write_partition(&args.out.join(PARTITION), &spec)?;
    let record = FitRecord {
        format_version: io::FORMAT_VERSION,
        model: args.model,
        data: data_dir.clone(),
        hyper,
        config: fitted.lm_chain.config.clone(),
        preprocessing: prep.pre.clone(),
    };
    io::write_json(&args.out.join(FIT_RECORD), &record)?;
    print_summary(&fitted);

    let outputs = match args.model {
        Model::Joint => vec![args.out.join("chain")],
        Model::DmlmBayes => vec![args.out.join("stage1"), args.out.join("stage2")],
    };
    prov.finish(
        &args.out,
        Some(config.seed),
        serde_json::json!({ "model": args.model, "hyper": hyper, "sampler": config }),
        vec![data_dir],
        outputs,
    )
}

fn print_summary(f: &Fit) {
    let zeta = &f.dm_chain.mppi_zeta;
    let mut cov: Vec<(usize, usize, f64)> = Vec::new();
    for t in 0..zeta.nrows() {
        for q in 0..zeta.ncols() {
            if zeta[(t, q)] >= 0.5 {
                cov.push((t + 1, q + 1, zeta[(t, q)]));
            }
        }
    }
    let bal: Vec<(usize, f64)> =
        f.lm_chain.mppi_xi.iter().enumerate().filter(|(_, v)| **v >= 0.5).map(|(m, v)| (m + 1, *v)).collect();
    println!("model {}: {} retained samples", f.model, f.lm_chain.n_samples());
    println!("selected covariate-taxon pairs: {}", cov.len());
    for (t, q, m) in &cov {
        println!("  taxon {t:>4}  covariate {q:>3}  mppi {m:.3}");
    }
    println!("selected balances: {}", bal.len());
    for (m, v) in &bal {
        println!("  balance {m:>4}  mppi {v:.3}");
    }
}
