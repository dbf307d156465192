use anyhow::Context;
use microjoint::io;
use microjoint::model::sbp_pivot;
use microjoint::simulation::gen_replicates;

use crate::cli::{ConfigFile, SimulateArgs};
use crate::layout::{create_dir, Provenance, PARTITION};
use crate::UsageError;

pub fn replicate_name(r: usize) -> String {
    format!("replicate_{:03}", r + 1)
}

pub fn run(args: SimulateArgs) -> anyhow::Result<()> {
    let prov = Provenance::start("simulate");
    if args.replicates == 0 {
        return Err(UsageError("--replicates must be at least 1".into()).into());
    }
    let file = ConfigFile::load(args.config.as_deref())?;
    let cfg = args.sim.resolve(file.simulation, args.seed);
    cfg.validate()?;

    let reps = gen_replicates(&cfg, args.replicates)?;
    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    for (r, rep) in reps.iter().enumerate() {
        let dir = args.out.join(replicate_name(r));
        io::write_replicate(&dir, rep).with_context(|| format!("writing {}", dir.display()))?;
        outputs.push(dir);
    }
    io::write_partition(&args.out.join(PARTITION), &sbp_pivot(cfg.j)?)?;
    io::write_json(&args.out.join("simulation.json"), &cfg)?;
    outputs.push(args.out.join(PARTITION));
    outputs.push(args.out.join("simulation.json"));

    println!(
        "wrote {} replicate(s) to {} (N={}, P={}, J={}, seed {})",
        reps.len(),
        args.out.display(),
        cfg.n,
        cfg.p,
        cfg.j,
        cfg.seed
    );
    prov.finish(&args.out, Some(cfg.seed), serde_json::to_value(&cfg)?, Vec::new(), outputs)
}
