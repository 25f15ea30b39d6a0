use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::EstimatorName;

pub const CSV_HEADER: [&str; 13] = [
    "sample_size",
    "estimator",
    "truth",
    "mean_estimate",
    "bias",
    "rmse",
    "mean_se",
    "power",
    "n_failures",
    "n_effective",
    "root_seed",
    "rep_start",
    "rep_end",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sample_size: usize,
    pub estimator: EstimatorName,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub mean_se: f64,
    pub power: f64,
    pub n_failures: usize,
    pub n_effective: usize,
    pub root_seed: u64,
    /// Replications `rep_start..rep_end` contributed to this row.
    pub rep_start: usize,
    pub rep_end: usize,
    /// Not carried by the CSV form.
    #[serde(default)]
    pub failures_by_kind: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudySummary {
    pub rows: Vec<SummaryRow>,
}

impl StudySummary {
    pub fn row(&self, sample_size: usize, estimator: EstimatorName) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.sample_size == sample_size && r.estimator == estimator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    /// `.json` means JSON; anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

/// Six significant digits, plain notation for moderate magnitudes.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let plain = format!("{:.*}", (5 - exp) as usize, x);
        if plain.contains('.') {
            plain.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            plain
        }
    } else {
        let (mantissa, e) = sci.split_at(sci.find('e').expect("exponent"));
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}{e}")
    }
}

pub fn write_csv<W: Write>(summary: &StudySummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &summary.rows {
        w.write_record([
            r.sample_size.to_string(),
            r.estimator.to_string(),
            format_sig6(r.truth),
            format_sig6(r.mean_estimate),
            format_sig6(r.bias),
            format_sig6(r.rmse),
            format_sig6(r.mean_se),
            format_sig6(r.power),
            r.n_failures.to_string(),
            r.n_effective.to_string(),
            r.root_seed.to_string(),
            r.rep_start.to_string(),
            r.rep_end.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<StudySummary> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::SchemaMismatch(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::SchemaMismatch(format!("row {}: {e}", line + 1)))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::SchemaMismatch(format!("row {} has {} fields", line + 1, rec.len())));
        }
        let field = |i: usize| rec.get(i).expect("length checked");
        let bad = |i: usize| Error::SchemaMismatch(format!("row {}: bad {} {:?}", line + 1, CSV_HEADER[i], field(i)));
        let int = |i: usize| field(i).parse::<usize>().map_err(|_| bad(i));
        let float = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i));
        rows.push(SummaryRow {
            sample_size: int(0)?,
            estimator: field(1).parse().map_err(|_| bad(1))?,
            truth: float(2)?,
            mean_estimate: float(3)?,
            bias: float(4)?,
            rmse: float(5)?,
            mean_se: float(6)?,
            power: float(7)?,
            n_failures: int(8)?,
            n_effective: int(9)?,
            root_seed: field(10).parse().map_err(|_| bad(10))?,
            rep_start: int(11)?,
            rep_end: int(12)?,
            failures_by_kind: BTreeMap::new(),
        });
    }
    check_rows(&rows)?;
    Ok(StudySummary { rows })
}

fn check_rows(rows: &[SummaryRow]) -> Result<()> {
    for r in rows {
        if r.rep_end < r.rep_start || r.rep_end - r.rep_start != r.n_failures + r.n_effective {
            return Err(Error::SchemaMismatch(format!(
                "{} at n={}: replication range {}..{} does not match {} + {} results",
                r.estimator, r.sample_size, r.rep_start, r.rep_end, r.n_effective, r.n_failures
            )));
        }
    }
    Ok(())
}

pub fn write_summary(summary: &StudySummary, format: OutputFormat, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        OutputFormat::Csv => write_csv(summary, file),
        OutputFormat::Json => {
            serde_json::to_writer_pretty(file, summary)?;
            Ok(())
        }
    }
}

pub fn read_summary(path: &Path) -> Result<StudySummary> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    match OutputFormat::from_path(path) {
        OutputFormat::Csv => read_csv(file),
        OutputFormat::Json => {
            let s: StudySummary =
                serde_json::from_reader(file).map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
            check_rows(&s.rows)?;
            Ok(s)
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-5 * a.abs().max(b.abs())
}

/// Combines summaries over disjoint, contiguous replication ranges of the
/// same `(sample_size, estimator)` cells.
pub fn merge_summaries(parts: &[StudySummary]) -> Result<StudySummary> {
    let mut order: Vec<(usize, EstimatorName)> = Vec::new();
    let mut cells: BTreeMap<(usize, String), Vec<&SummaryRow>> = BTreeMap::new();
    for r in parts.iter().flat_map(|p| &p.rows) {
        let key = (r.sample_size, r.estimator.to_string());
        if !cells.contains_key(&key) {
            order.push((r.sample_size, r.estimator));
        }
        cells.entry(key).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (n, name) in order {
        let mut group = cells.remove(&(n, name.to_string())).expect("recorded cell");
        group.sort_by_key(|r| r.rep_start);
        let first = group[0];
        for pair in group.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a.root_seed != b.root_seed {
                return Err(Error::SchemaMismatch(format!("{name} at n={n}: different root seeds")));
            }
            if !close(a.truth, b.truth) {
                return Err(Error::SchemaMismatch(format!("{name} at n={n}: different truths")));
            }
            if b.rep_start < a.rep_end {
                return Err(Error::SchemaMismatch(format!(
                    "{name} at n={n}: replications {}..{} and {}..{} overlap",
                    a.rep_start, a.rep_end, b.rep_start, b.rep_end
                )));
            }
            if b.rep_start > a.rep_end {
                return Err(Error::SchemaMismatch(format!(
                    "{name} at n={n}: gap between replications {} and {}",
                    a.rep_end, b.rep_start
                )));
            }
        }
        let n_eff: usize = group.iter().map(|r| r.n_effective).sum();
        let weighted = |f: &dyn Fn(&SummaryRow) -> f64| -> f64 {
            group
                .iter()
                .filter(|r| r.n_effective > 0)
                .map(|r| r.n_effective as f64 * f(r))
                .sum::<f64>()
                / n_eff as f64
        };
        let mean_estimate = weighted(&|r| r.mean_estimate);
        let mut failures_by_kind = BTreeMap::new();
        for r in &group {
            for (k, v) in &r.failures_by_kind {
                *failures_by_kind.entry(k.clone()).or_insert(0) += v;
            }
        }
        rows.push(SummaryRow {
            sample_size: n,
            estimator: name,
            truth: first.truth,
            mean_estimate,
            bias: mean_estimate - first.truth,
            rmse: weighted(&|r| r.rmse * r.rmse).sqrt(),
            mean_se: weighted(&|r| r.mean_se),
            power: weighted(&|r| r.power),
            n_failures: group.iter().map(|r| r.n_failures).sum(),
            n_effective: n_eff,
            root_seed: first.root_seed,
            rep_start: first.rep_start,
            rep_end: group.last().expect("non-empty").rep_end,
            failures_by_kind,
        });
    }
    Ok(StudySummary { rows })
}
