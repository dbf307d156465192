//! Isometric log-ratio balances built from a sequential binary partition.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One split of a block of taxa into two non-empty groups (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
}

impl Partition {
    pub fn new(plus: Vec<usize>, minus: Vec<usize>) -> Self {
        Partition { plus, minus }
    }

    /// `sqrt(r s / (r + s))` for group sizes `r` and `s`.
    fn scale(&self) -> f64 {
        let r = self.plus.len() as f64;
        let s = self.minus.len() as f64;
        (r * s / (r + s)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Leaf(usize),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Step {
    plus: Source,
    minus: Source,
    inv_r: f64,
    inv_s: f64,
    scale: f64,
}

/// A validated sequential binary partition of `J` taxa into `J - 1` balances.
///
/// The first partition spans every taxon and each later one splits exactly one
/// block created before it. Validation also compiles the partition tree so
/// that a full row of balances costs `O(J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    n_taxa: usize,
    parts: Vec<Partition>,
    steps: Vec<Step>,
}

impl PartitionSpec {
    pub fn new(n_taxa: usize, parts: Vec<Partition>) -> Result<Self> {
        if n_taxa < 2 {
            return Err(Error::InvalidPartition(format!(
                "need at least 2 taxa, got {n_taxa}"
            )));
        }
        if parts.len() != n_taxa - 1 {
            return Err(Error::InvalidPartition(format!(
                "expected {} partitions for {} taxa, got {}",
                n_taxa - 1,
                n_taxa,
                parts.len()
            )));
        }
        // open blocks (sorted member lists) -> (partition index, is_plus) that created them
        let mut open: HashMap<Vec<usize>, Option<(usize, bool)>> = HashMap::new();
        open.insert((0..n_taxa).collect(), None);
        let mut split_by: Vec<[Option<usize>; 2]> = vec![[None, None]; parts.len()];
        for (m, part) in parts.iter().enumerate() {
            if part.plus.is_empty() || part.minus.is_empty() {
                return Err(Error::InvalidPartition(format!("partition {} has an empty side", m + 1)));
            }
            let mut plus = part.plus.clone();
            let mut minus = part.minus.clone();
            plus.sort_unstable();
            minus.sort_unstable();
            if plus.windows(2).any(|w| w[0] == w[1]) || minus.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidPartition(format!("partition {} repeats a taxon", m + 1)));
            }
            if let Some(&bad) = plus.iter().chain(&minus).find(|&&t| t >= n_taxa) {
                return Err(Error::InvalidPartition(format!(
                    "partition {} references taxon {} of {}",
                    m + 1,
                    bad + 1,
                    n_taxa
                )));
            }
            let mut union: Vec<usize> = plus.iter().chain(&minus).copied().collect();
            union.sort_unstable();
            if union.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidPartition(format!(
                    "partition {} has overlapping sides",
                    m + 1
                )));
            }
            let parent = open.remove(&union).ok_or_else(|| {
                Error::InvalidPartition(format!(
                    "partition {} does not split a block produced earlier",
                    m + 1
                ))
            })?;
            if let Some((pm, is_plus)) = parent {
                split_by[pm][usize::from(!is_plus)] = Some(m);
            }
            open.insert(plus, Some((m, true)));
            open.insert(minus, Some((m, false)));
        }
        let steps = parts
            .iter()
            .zip(&split_by)
            .map(|(part, split)| {
                let source = |side: &[usize], child: Option<usize>| match child {
                    Some(m) => Source::Node(m),
                    None => Source::Leaf(side[0]),
                };
                Step {
                    plus: source(&part.plus, split[0]),
                    minus: source(&part.minus, split[1]),
                    inv_r: 1.0 / part.plus.len() as f64,
                    inv_s: 1.0 / part.minus.len() as f64,
                    scale: part.scale(),
                }
            })
            .collect();
        Ok(PartitionSpec {
            n_taxa,
            parts,
            steps,
        })
    }

    /// The pivot partition: taxon `m` against taxa `m + 1..J`.
    pub fn pivot(n_taxa: usize) -> Result<Self> {
        if n_taxa < 2 {
            return Err(Error::InvalidPartition(format!(
                "need at least 2 taxa, got {n_taxa}"
            )));
        }
        let parts = (0..n_taxa - 1)
            .map(|m| Partition::new(vec![m], (m + 1..n_taxa).collect()))
            .collect();
        Self::new(n_taxa, parts)
    }

    pub fn n_taxa(&self) -> usize {
        self.n_taxa
    }

    /// Number of balances, `J - 1`.
    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.parts
    }

    /// The `J x M` orthonormal contrast matrix `V` with `balances = V' ln(psi)`.
    pub fn contrast_matrix(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.n_taxa, self.len());
        for (m, part) in self.parts.iter().enumerate() {
            let r = part.plus.len() as f64;
            let s = part.minus.len() as f64;
            let cp = (s / (r * (r + s))).sqrt();
            let cm = (r / (s * (r + s))).sqrt();
            for &t in &part.plus {
                v[(t, m)] = cp;
            }
            for &t in &part.minus {
                v[(t, m)] = -cm;
            }
        }
        v
    }

    /// Balances of one composition given its component-wise logarithm.
    ///
    /// `scratch` must have length `M`; it receives the sum of logs over each
    /// partition's full block.
    pub(crate) fn balances_from_log(&self, log_row: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(log_row.len(), self.n_taxa);
        for m in (0..self.steps.len()).rev() {
            let step = &self.steps[m];
            let side = |s: Source| match s {
                Source::Leaf(t) => log_row[t],
                Source::Node(k) => scratch[k],
            };
            let sp = side(step.plus);
            let sm = side(step.minus);
            scratch[m] = sp + sm;
            out[m] = step.scale * (sp * step.inv_r - sm * step.inv_s);
        }
    }
}

impl fmt::Display for PartitionSpec {
    /// One partition per line, `plus | minus`, 1-based comma-separated indices.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| {
            v.iter()
                .map(|t| (t + 1).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        for part in &self.parts {
            writeln!(f, "{} | {}", join(&part.plus), join(&part.minus))?;
        }
        Ok(())
    }
}

impl FromStr for PartitionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_side = |text: &str, line: usize| -> Result<Vec<usize>> {
            text.split(',')
                .map(|tok| {
                    let tok = tok.trim();
                    match tok.parse::<usize>() {
                        Ok(v) if v >= 1 => Ok(v - 1),
                        _ => Err(Error::InvalidPartition(format!(
                            "line {line}: bad taxon index {tok:?}"
                        ))),
                    }
                })
                .collect()
        };
        let mut parts = Vec::new();
        for (k, raw) in s.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (plus, minus) = line.split_once('|').ok_or_else(|| {
                Error::InvalidPartition(format!("line {}: missing '|' separator", k + 1))
            })?;
            parts.push(Partition::new(
                parse_side(plus, k + 1)?,
                parse_side(minus, k + 1)?,
            ));
        }
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidPartition("no partitions".into()))?;
        let n_taxa = first.plus.len() + first.minus.len();
        PartitionSpec::new(n_taxa, parts)
    }
}

/// Default partition for `j` taxa; see [`PartitionSpec::pivot`].
pub fn sbp_pivot(j: usize) -> Result<PartitionSpec> {
    PartitionSpec::pivot(j)
}

/// The balance `sqrt(r s / (r + s)) ln(g(psi_plus) / g(psi_minus))`, where `g`
/// is the geometric mean. Invariant to rescaling `psi`.
pub fn balance_value(psi_row: &[f64], partition: &Partition) -> Result<f64> {
    let mean_log = |side: &[usize]| -> Result<f64> {
        let mut acc = 0.0;
        for &t in side {
            let v = *psi_row.get(t).ok_or_else(|| {
                Error::InvalidPartition(format!("taxon {} outside composition of length {}", t + 1, psi_row.len()))
            })?;
            if !(v > 0.0) {
                return Err(Error::Domain(format!(
                    "balance requires positive components, taxon {} is {v}",
                    t + 1
                )));
            }
            acc += v.ln();
        }
        Ok(acc / side.len() as f64)
    };
    if partition.plus.is_empty() || partition.minus.is_empty() {
        return Err(Error::InvalidPartition("empty side".into()));
    }
    Ok(partition.scale() * (mean_log(&partition.plus)? - mean_log(&partition.minus)?))
}

/// Column means and standard deviations used to standardize balances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ColumnScaling {
    /// Standardizes the columns of `b` with these statistics.
    pub fn apply(&self, b: &mut DMatrix<f64>) {
        for (m, mut col) in b.column_iter_mut().enumerate() {
            let (mu, sd) = (self.mean[m], self.sd[m]);
            col.apply(|v| *v = (*v - mu) / sd);
        }
    }

    /// Standardizes a single value of column `m`.
    #[inline]
    pub fn apply_one(&self, m: usize, v: f64) -> f64 {
        (v - self.mean[m]) / self.sd[m]
    }
}

/// Centers every column to mean zero and scales to unit sample variance,
/// returning the statistics used.
pub fn standardize_columns(b: &mut DMatrix<f64>) -> Result<ColumnScaling> {
    let n = b.nrows();
    let mut mean = Vec::with_capacity(b.ncols());
    let mut sd = Vec::with_capacity(b.ncols());
    for (m, mut col) in b.column_iter_mut().enumerate() {
        if n < 2 {
            return Err(Error::ZeroVariance { column: m });
        }
        let mu = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mu) * (v - mu)).sum();
        let s = (ss / (n as f64 - 1.0)).sqrt();
        if !(s > 1e-12 * mu.abs().max(1.0)) {
            return Err(Error::ZeroVariance { column: m });
        }
        col.apply(|v| *v = (*v - mu) / s);
        mean.push(mu);
        sd.push(s);
    }
    Ok(ColumnScaling { mean, sd })
}

/// Row-wise balances of an `N x J` matrix of strictly positive compositions.
pub fn balance_matrix(psi: &DMatrix<f64>, spec: &PartitionSpec, standardize: bool) -> Result<DMatrix<f64>> {
    let (n, j) = psi.shape();
    if j != spec.n_taxa() {
        return Err(Error::Dimension {
            what: "composition width",
            expected: spec.n_taxa(),
            actual: j,
        });
    }
    let m = spec.len();
    let mut out = DMatrix::zeros(n, m);
    let mut log_row = vec![0.0; j];
    let mut scratch = vec![0.0; m];
    let mut row = vec![0.0; m];
    for i in 0..n {
        for t in 0..j {
            let v = psi[(i, t)];
            if !(v > 0.0) {
                return Err(Error::Domain(format!(
                    "balance requires positive components, got {v} at ({i}, {t})"
                )));
            }
            log_row[t] = v.ln();
        }
        spec.balances_from_log(&log_row, &mut scratch, &mut row);
        for k in 0..m {
            out[(i, k)] = row[k];
        }
    }
    if standardize {
        standardize_columns(&mut out)?;
    }
    Ok(out)
}

/// Multiplicative replacement: components below `delta` become `delta` and
/// the rest are rescaled so the composition still sums to one.
pub fn zero_replace(psi_row: &[f64], delta: f64) -> Result<Vec<f64>> {
    let total: f64 = psi_row.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!("composition sums to {total}, not 1")));
    }
    if let Some(v) = psi_row.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("negative or NaN component {v}")));
    }
    let replaced = psi_row.iter().filter(|&&v| v < delta).count();
    if replaced == 0 {
        return Ok(psi_row.to_vec());
    }
    if delta * replaced as f64 >= 1.0 {
        return Err(Error::PseudovalueTooLarge { delta, replaced });
    }
    let kept: f64 = psi_row.iter().filter(|&&v| v >= delta).sum();
    let factor = (1.0 - replaced as f64 * delta) / kept;
    Ok(psi_row
        .iter()
        .map(|&v| if v < delta { delta } else { v * factor })
        .collect())
}

/// Log of the zero-replaced composition `c / T`, computed from `ln c` and `ln T`.
///
/// Returns the number of replaced components.
pub(crate) fn zero_replaced_log_into(log_c: impl Iterator<Item = f64> + Clone, log_t: f64, delta: f64, out: &mut [f64]) -> Result<usize> {
    let log_delta = delta.ln();
    let mut replaced = 0usize;
    let mut replaced_mass = 0.0;
    for (o, lc) in out.iter_mut().zip(log_c) {
        let lp = lc - log_t;
        *o = lp;
        if lp < log_delta {
            replaced += 1;
            replaced_mass += lp.exp();
        }
    }
    if replaced == 0 {
        return Ok(0);
    }
    if delta * replaced as f64 >= 1.0 {
        return Err(Error::PseudovalueTooLarge { delta, replaced });
    }
    let log_factor = ((1.0 - replaced as f64 * delta) / (1.0 - replaced_mass)).ln();
    for o in out.iter_mut() {
        if *o < log_delta {
            *o = log_delta;
        } else {
            *o += log_factor;
        }
    }
    Ok(replaced)
}
