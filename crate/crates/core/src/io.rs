//! Plain-text persistence: comma-separated tables with a header row, JSON
//! summaries, and a small binary container for per-sample compositions.
//!
//! Reals are written with 17 significant digits so that a read followed by a
//! write reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{mppi, AcceptanceCounts, ChainOutput, EffectSample, Mode, SamplerConfig};
use crate::model::{Dataset, Hyperparams, PartitionSpec};
use crate::simulation::{GroundTruth, Replicate, TestSet};

pub const FORMAT_VERSION: u32 = 1;

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

/// Header and body of a delimited table; body rows carry their 1-based line.
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

pub fn read_table(path: &Path) -> Result<RawTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let to_parse = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        parse_err(path, line, 0, e.to_string())
    };
    let header = rdr.headers().map_err(to_parse)?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(to_parse)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(RawTable { header, rows })
}

pub fn write_table<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn parse_cells<T: FromStr>(path: &Path, table: &RawTable) -> Result<Vec<Vec<T>>>
where
    T::Err: std::fmt::Display,
{
    table
        .rows
        .iter()
        .map(|(line, cells)| {
            cells
                .iter()
                .enumerate()
                .map(|(c, s)| s.parse::<T>().map_err(|e| parse_err(path, *line, c + 1, format!("{s:?}: {e}"))))
                .collect()
        })
        .collect()
}

fn to_matrix<T: nalgebra::Scalar + Copy + Default>(cells: Vec<Vec<T>>, ncols: usize) -> DMatrix<T> {
    DMatrix::from_fn(cells.len(), ncols, |i, j| cells[i][j])
}

pub fn read_real_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let t = read_table(path)?;
    let cells = parse_cells::<f64>(path, &t)?;
    for (r, row) in cells.iter().enumerate() {
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(path, t.rows[r].0, c + 1, "non-finite value"));
        }
    }
    Ok(to_matrix(cells, t.header.len()))
}

pub fn read_count_matrix(path: &Path) -> Result<DMatrix<u32>> {
    let t = read_table(path)?;
    Ok(to_matrix(parse_cells::<u32>(path, &t)?, t.header.len()))
}

pub fn read_bool_matrix(path: &Path) -> Result<DMatrix<bool>> {
    let t = read_table(path)?;
    let cells = parse_cells::<u8>(path, &t)?;
    let mut out = DMatrix::from_element(cells.len(), t.header.len(), false);
    for (i, row) in cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[(i, j)] = match v {
                0 => false,
                1 => true,
                _ => return Err(parse_err(path, t.rows[i].0, j + 1, format!("expected 0 or 1, got {v}"))),
            };
        }
    }
    Ok(out)
}

pub fn read_real_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_real_matrix(path)?;
    if m.ncols() != 1 {
        return Err(parse_err(path, 1, 0, format!("expected one column, found {}", m.ncols())));
    }
    Ok(m.column(0).into_owned())
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

pub fn write_real_matrix(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    write_table(
        path,
        &numbered(prefix, m.ncols()),
        m.row_iter().map(|r| r.iter().map(|v| fmt_real(*v)).collect()),
    )
}

pub fn write_count_matrix(path: &Path, m: &DMatrix<u32>, prefix: &str) -> Result<()> {
    write_table(
        path,
        &numbered(prefix, m.ncols()),
        m.row_iter().map(|r| r.iter().map(u32::to_string).collect()),
    )
}

pub fn write_bool_matrix(path: &Path, m: &DMatrix<bool>, prefix: &str) -> Result<()> {
    write_table(
        path,
        &numbered(prefix, m.ncols()),
        m.row_iter().map(|r| r.iter().map(|&v| u8::from(v).to_string()).collect()),
    )
}

pub fn write_real_vector(path: &Path, v: &DVector<f64>, name: &str) -> Result<()> {
    write_table(path, &[name.to_owned()], v.iter().map(|x| vec![fmt_real(*x)]))
}

fn bool_rows(rows: &[Vec<bool>]) -> DMatrix<bool> {
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j])
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.column(), e.to_string()))
}

pub fn write_partition(path: &Path, spec: &PartitionSpec) -> Result<()> {
    create_parent(path)?;
    fs::write(path, spec.to_string()).map_err(|e| Error::io(path, e))
}

pub fn read_partition(path: &Path) -> Result<PartitionSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse().map_err(|e: Error| match e {
        Error::InvalidPartition(m) => parse_err(path, 0, 0, m),
        other => other,
    })
}

/// `y.csv`, `z.csv` and `x.csv` in `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    write_real_vector(&dir.join("y.csv"), data.y(), "y")?;
    write_count_matrix(&dir.join("z.csv"), data.z(), "taxon_")?;
    write_real_matrix(&dir.join("x.csv"), data.x(), "x_")
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let y = read_real_vector(&dir.join("y.csv"))?;
    let z = read_count_matrix(&dir.join("z.csv"))?;
    let x = read_real_matrix(&dir.join("x.csv"))?;
    Dataset::new(y, z, x)
}

/// Like [`write_dataset`]; `y.csv` is written only when the response is known.
pub fn write_test_set(dir: &Path, test: &TestSet) -> Result<()> {
    if let Some(y) = &test.y {
        write_real_vector(&dir.join("y.csv"), y, "y")?;
    }
    write_count_matrix(&dir.join("z.csv"), &test.z, "taxon_")?;
    write_real_matrix(&dir.join("x.csv"), &test.x, "x_")
}

pub fn read_test_set(dir: &Path) -> Result<TestSet> {
    let y_path = dir.join("y.csv");
    let y = if y_path.exists() {
        Some(read_real_vector(&y_path)?)
    } else {
        None
    };
    let test = TestSet {
        z: read_count_matrix(&dir.join("z.csv"))?,
        x: read_real_matrix(&dir.join("x.csv"))?,
        y,
    };
    test.check_dims(test.z.ncols(), test.x.ncols())?;
    Ok(test)
}

pub fn write_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    write_bool_matrix(&dir.join("zeta.csv"), &truth.zeta_true, "x_")?;
    write_real_matrix(&dir.join("phi.csv"), &truth.phi_true, "x_")?;
    write_real_vector(&dir.join("alpha.csv"), &truth.alpha_true, "alpha")?;
    let xi = DMatrix::from_fn(truth.xi_true.len(), 1, |i, _| truth.xi_true[i]);
    write_table(
        &dir.join("xi.csv"),
        &["xi".to_owned()],
        xi.iter().map(|&v| vec![u8::from(v).to_string()]),
    )?;
    write_real_vector(&dir.join("beta.csv"), &truth.beta_true, "beta")?;
    write_real_matrix(&dir.join("psi_star.csv"), &truth.psi_star, "taxon_")
}

pub fn read_truth(dir: &Path) -> Result<GroundTruth> {
    let xi = read_bool_matrix(&dir.join("xi.csv"))?;
    Ok(GroundTruth {
        zeta_true: read_bool_matrix(&dir.join("zeta.csv"))?,
        phi_true: read_real_matrix(&dir.join("phi.csv"))?,
        alpha_true: read_real_vector(&dir.join("alpha.csv"))?,
        xi_true: xi.iter().copied().collect(),
        beta_true: read_real_vector(&dir.join("beta.csv"))?,
        psi_star: read_real_matrix(&dir.join("psi_star.csv"))?,
    })
}

/// `train/`, `test/` and `truth/` under `dir`.
pub fn write_replicate(dir: &Path, rep: &Replicate) -> Result<()> {
    write_dataset(&dir.join("train"), &rep.train)?;
    write_test_set(&dir.join("test"), &rep.test)?;
    write_truth(&dir.join("truth"), &rep.truth)
}

pub fn read_replicate(dir: &Path) -> Result<Replicate> {
    Ok(Replicate {
        train: read_dataset(&dir.join("train"))?,
        test: read_test_set(&dir.join("test"))?,
        truth: read_truth(&dir.join("truth"))?,
    })
}

const PSI_MAGIC: &[u8; 4] = b"PSI1";

/// Little-endian container: magic, `S`, `N`, `J` as u64, then `S` row-major
/// `N x J` blocks of f64.
pub fn write_psi_bin(path: &Path, psi: &[DMatrix<f64>]) -> Result<()> {
    create_parent(path)?;
    let (n, j) = psi.first().map_or((0, 0), |m| m.shape());
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(PSI_MAGIC).map_err(io)?;
    for v in [psi.len(), n, j] {
        w.write_all(&(v as u64).to_le_bytes()).map_err(io)?;
    }
    for m in psi {
        if m.shape() != (n, j) {
            return Err(Error::Dimension {
                what: "composition sample size",
                expected: n * j,
                actual: m.len(),
            });
        }
        for row in m.row_iter() {
            for v in row.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_psi_bin(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != PSI_MAGIC {
        return Err(parse_err(path, 0, 0, "not a composition sample file"));
    }
    let mut dims = [0usize; 3];
    let mut buf = [0u8; 8];
    for d in dims.iter_mut() {
        r.read_exact(&mut buf).map_err(io)?;
        *d = u64::from_le_bytes(buf) as usize;
    }
    let [s, n, j] = dims;
    let mut out = Vec::with_capacity(s);
    for _ in 0..s {
        let mut m = DMatrix::zeros(n, j);
        for i in 0..n {
            for t in 0..j {
                r.read_exact(&mut buf).map_err(io)?;
                m[(i, t)] = f64::from_le_bytes(buf);
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// JSON summary written next to the traces of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub format_version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub config: SamplerConfig,
    pub hyper: Hyperparams,
    pub n_subjects: usize,
    pub n_taxa: usize,
    pub n_covariates: usize,
    pub n_balances: usize,
    pub n_samples: usize,
    pub acceptance: AcceptanceCounts,
    pub acceptance_rates: BTreeMap<String, f64>,
    pub selected_covariates: usize,
    pub selected_balances: usize,
    /// Rows are taxa.
    pub mppi_zeta: Vec<Vec<f64>>,
    pub mppi_xi: Vec<f64>,
}

impl ChainSummary {
    pub fn from_chain(chain: &ChainOutput) -> Self {
        let a = &chain.acceptance;
        let acceptance_rates = [
            ("alpha", a.alpha),
            ("add", a.add),
            ("delete", a.delete),
            ("within", a.within),
            ("xi", a.xi),
        ]
        .into_iter()
        .map(|(k, c)| (k.to_owned(), c.rate()))
        .collect();
        ChainSummary {
            format_version: FORMAT_VERSION,
            mode: chain.mode,
            seed: chain.config.seed,
            config: chain.config.clone(),
            hyper: chain.hyper,
            n_subjects: chain.n_subjects,
            n_taxa: chain.n_taxa,
            n_covariates: chain.n_covariates,
            n_balances: chain.n_balances(),
            n_samples: chain.n_samples(),
            acceptance: *a,
            acceptance_rates,
            selected_covariates: chain.mppi_zeta.iter().filter(|v| **v >= 0.5).count(),
            selected_balances: chain.mppi_xi.iter().filter(|v| **v >= 0.5).count(),
            mppi_zeta: chain.mppi_zeta.row_iter().map(|r| r.iter().copied().collect()).collect(),
            mppi_xi: chain.mppi_xi.clone(),
        }
    }
}

/// Traces, MPPIs, median-model selections and `summary.json` in `dir`.
pub fn write_chain(dir: &Path, chain: &ChainOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = ChainSummary::from_chain(chain);
    write_json(&dir.join("summary.json"), &summary)?;
    write_table(
        &dir.join("log_posterior.csv"),
        &["iteration".to_owned(), "log_posterior".to_owned()],
        chain
            .log_posterior
            .iter()
            .enumerate()
            .map(|(i, v)| vec![(i + 1).to_string(), fmt_real(*v)]),
    )?;
    if chain.mode.samples_dm() {
        write_real_matrix(&dir.join("alpha.csv"), &chain.alpha, "alpha_")?;
        write_real_matrix(&dir.join("u.csv"), &chain.u, "u_")?;
        let p = chain.n_covariates;
        write_table(
            &dir.join("effects.csv"),
            &["sample", "taxon", "covariate", "value"].map(str::to_owned),
            chain.effects.iter().enumerate().flat_map(|(s, e)| {
                e.index.iter().zip(&e.value).map(move |(&idx, &v)| {
                    let idx = idx as usize;
                    vec![
                        (s + 1).to_string(),
                        (idx / p + 1).to_string(),
                        (idx % p + 1).to_string(),
                        fmt_real(v),
                    ]
                })
            }),
        )?;
        write_real_matrix(&dir.join("mppi_zeta.csv"), &chain.mppi_zeta, "x_")?;
        write_real_matrix(&dir.join("psi_mean.csv"), &chain.psi_mean, "taxon_")?;
        let mut sel = Vec::new();
        for t in 0..chain.n_taxa {
            for q in 0..p {
                let m = chain.mppi_zeta[(t, q)];
                if m >= 0.5 {
                    sel.push(vec![(t + 1).to_string(), (q + 1).to_string(), fmt_real(m)]);
                }
            }
        }
        write_table(
            &dir.join("selected_covariates.csv"),
            &["taxon", "covariate", "mppi"].map(str::to_owned),
            sel,
        )?;
        if !chain.psi.is_empty() {
            write_psi_bin(&dir.join("psi.bin"), &chain.psi)?;
        }
    }
    if chain.mode.samples_lm() {
        write_bool_matrix(&dir.join("xi.csv"), &bool_rows(&chain.xi), "xi_")?;
        write_table(
            &dir.join("mppi_xi.csv"),
            &["balance", "mppi"].map(str::to_owned),
            chain.mppi_xi.iter().enumerate().map(|(m, v)| vec![(m + 1).to_string(), fmt_real(*v)]),
        )?;
        write_table(
            &dir.join("selected_balances.csv"),
            &["balance", "mppi"].map(str::to_owned),
            chain
                .mppi_xi
                .iter()
                .enumerate()
                .filter(|(_, v)| **v >= 0.5)
                .map(|(m, v)| vec![(m + 1).to_string(), fmt_real(*v)]),
        )?;
    }
    Ok(())
}

pub fn read_chain(dir: &Path) -> Result<ChainOutput> {
    let summary: ChainSummary = read_json(&dir.join("summary.json"))?;
    let s = summary.n_samples;
    let lp_path = dir.join("log_posterior.csv");
    let lp = read_real_matrix(&lp_path)?;
    let log_posterior = lp.column(lp.ncols().saturating_sub(1)).iter().copied().collect();
    let (mut alpha, mut u, mut effects, mut psi, mut psi_mean, mut mppi_zeta) = (
        DMatrix::zeros(s, 0),
        DMatrix::zeros(s, 0),
        vec![EffectSample::default(); s],
        Vec::new(),
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 0),
    );
    if summary.mode.samples_dm() {
        alpha = read_real_matrix(&dir.join("alpha.csv"))?;
        u = read_real_matrix(&dir.join("u.csv"))?;
        let eff_path = dir.join("effects.csv");
        let t = read_table(&eff_path)?;
        for (line, cells) in &t.rows {
            let field = |c: usize| -> Result<&str> {
                cells.get(c).map(String::as_str).ok_or_else(|| parse_err(&eff_path, *line, c + 1, "missing field"))
            };
            let idx = |c: usize, bound: usize| -> Result<usize> {
                let v: usize = field(c)?
                    .parse()
                    .map_err(|e| parse_err(&eff_path, *line, c + 1, format!("{e}")))?;
                if v == 0 || v > bound {
                    return Err(parse_err(&eff_path, *line, c + 1, format!("index {v} outside 1..={bound}")));
                }
                Ok(v - 1)
            };
            let sample = idx(0, s)?;
            let taxon = idx(1, summary.n_taxa)?;
            let cov = idx(2, summary.n_covariates)?;
            let value: f64 = field(3)?
                .parse()
                .map_err(|e| parse_err(&eff_path, *line, 4, format!("{e}")))?;
            effects[sample].index.push((taxon * summary.n_covariates + cov) as u32);
            effects[sample].value.push(value);
        }
        mppi_zeta = read_real_matrix(&dir.join("mppi_zeta.csv"))?;
        psi_mean = read_real_matrix(&dir.join("psi_mean.csv"))?;
        let bin = dir.join("psi.bin");
        if bin.exists() {
            psi = read_psi_bin(&bin)?;
        }
    }
    let xi: Vec<Vec<bool>> = if summary.mode.samples_lm() {
        let m = read_bool_matrix(&dir.join("xi.csv"))?;
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    } else {
        vec![Vec::new(); s]
    };
    if xi.len() != s || alpha.nrows() != s {
        return Err(Error::Dimension {
            what: "retained samples in chain directory",
            expected: s,
            actual: xi.len().min(alpha.nrows()),
        });
    }
    let mppi_xi = if summary.mode.samples_lm() { mppi(&xi) } else { Vec::new() };
    Ok(ChainOutput {
        mode: summary.mode,
        config: summary.config,
        hyper: summary.hyper,
        n_subjects: summary.n_subjects,
        n_taxa: summary.n_taxa,
        n_covariates: summary.n_covariates,
        alpha,
        effects,
        u,
        xi,
        psi,
        psi_mean,
        log_posterior,
        acceptance: summary.acceptance,
        mppi_zeta,
        mppi_xi,
    })
}

/// Provenance record written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub schema_version: u32,
    pub code_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(Self::FILE_NAME), self)
    }
}
