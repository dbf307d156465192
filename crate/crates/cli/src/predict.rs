use microjoint::experiment::Model;
use microjoint::io::{self, fmt_real, write_table};
use microjoint::metrics::squared_error;
use microjoint::prediction::{pointwise_loglik, pointwise_loglik_with};

use crate::cli::PredictArgs;
use crate::layout::{absolute, create_dir, load_fit, Provenance};

pub fn run(args: PredictArgs) -> anyhow::Result<()> {
    let prov = Provenance::start("predict");
    let fit_dir = absolute(&args.fit)?;
    let loaded = load_fit(&fit_dir, args.test.as_deref())?;
    let pred = &loaded.fit.prediction;
    let observed = loaded.prep.test.y.as_ref();

    create_dir(&args.out)?;
    let mut header = vec!["subject".to_owned(), "predicted".to_owned()];
    if observed.is_some() {
        header.push("observed".to_owned());
    }
    write_table(
        &args.out.join("predictions.csv"),
        &header,
        (0..pred.test.len()).map(|i| {
            let mut row = vec![(i + 1).to_string(), fmt_real(pred.test[i])];
            if let Some(y) = observed {
                row.push(fmt_real(y[i]));
            }
            row
        }),
    )?;
    write_table(
        &args.out.join("fitted.csv"),
        &["subject", "fitted", "observed"].map(str::to_owned),
        (0..pred.fitted.len())
            .map(|i| vec![(i + 1).to_string(), fmt_real(pred.fitted[i]), fmt_real(loaded.prep.y_train[i])]),
    )?;

    let train = &loaded.prep.train;
    let loglik = match (&loaded.record.model, &loaded.two_step) {
        (Model::DmlmBayes, Some(out)) => pointwise_loglik_with(train.y(), &loaded.record.hyper, &out.stage2.xi, |_| {
            Ok((out.balances.clone(), out.scaling.clone()))
        })?,
        _ => pointwise_loglik(&loaded.fit.lm_chain, train, &loaded.spec)?,
    };
    io::write_real_matrix(&args.out.join("loglik.csv"), &loglik, "sample_")?;

    let mse = squared_error(&loaded.prep.y_train, pred.fitted.as_slice())?;
    let pmse = observed.map(|y| squared_error(y.as_slice(), pred.test.as_slice())).transpose()?;
    io::write_json(
        &args.out.join("prediction.json"),
        &serde_json::json!({ "model": loaded.record.model, "mse": mse, "pmse": pmse, "intercept": pred.intercept }),
    )?;
    println!("MSE  {:.4}", mse.sum);
    if let Some(p) = pmse {
        println!("PMSE {:.4}", p.sum);
    }

    prov.finish(
        &args.out,
        Some(loaded.record.config.seed),
        serde_json::json!({ "fit": fit_dir, "test": args.test }),
        vec![fit_dir, loaded.record.data.clone()],
        ["predictions.csv", "fitted.csv", "loglik.csv", "prediction.json"].iter().map(|f| args.out.join(f)).collect(),
    )
}
