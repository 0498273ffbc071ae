//! Aggregated results: one row per (dataset, model, layer, method).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Evaluation of one method on one calibration/test resplit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResplitRecord {
    pub dataset: String,
    pub model: String,
    pub layer: String,
    pub method: String,
    pub run: usize,
    pub resplit: usize,
    pub n_calib: usize,
    pub n_test: usize,
    pub qhat: f64,
    pub coverage: f64,
    /// Mean width in standardized units.
    pub inefficiency: f64,
    /// Mean width in original weight units.
    pub inefficiency_raw: f64,
    pub wsc: Option<f64>,
    pub wsc_eval_coverage: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (denominator `n − 1`); 0 for one value.
    pub std: f64,
}

impl Stat {
    /// Summary of `values` summed in the given order.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if !mean.is_finite() {
            return Stat {
                mean,
                std: f64::NAN,
            };
        }
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub dataset: String,
    pub model: String,
    pub layer: String,
    pub method: String,
    /// Number of (run, resplit) evaluations aggregated.
    pub n: usize,
    pub coverage: Stat,
    pub inefficiency: Stat,
    pub inefficiency_raw: Stat,
    pub wsc: Option<Stat>,
}

impl ResultsRow {
    fn sort_key(&self) -> (&str, &str, &str, &str) {
        (&self.dataset, &self.model, &self.method, &self.layer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ResultsRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

const COLUMNS: [&str; 15] = [
    "dataset",
    "model",
    "method",
    "layer",
    "n",
    "coverage_mean",
    "coverage_std",
    "inefficiency_mean",
    "inefficiency_std",
    "inefficiency_raw_mean",
    "inefficiency_raw_std",
    "wsc_mean",
    "wsc_std",
    "config_hash",
    "seed",
];

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line: 0,
        msg: format!("not a number: '{s}'"),
    })
}

impl ResultsTable {
    /// Groups records by (dataset, model, layer, method). Within a group the
    /// values are ordered by (run, resplit) before summation, so the result
    /// does not depend on the order records arrive in.
    pub fn from_records(records: &[ResplitRecord], config_hash: &str, seed: u64) -> Self {
        let mut groups: BTreeMap<(String, String, String, String), Vec<&ResplitRecord>> =
            BTreeMap::new();
        for r in records {
            groups
                .entry((
                    r.dataset.clone(),
                    r.model.clone(),
                    r.method.clone(),
                    r.layer.clone(),
                ))
                .or_default()
                .push(r);
        }
        let rows = groups
            .into_iter()
            .map(|((dataset, model, method, layer), mut recs)| {
                recs.sort_by_key(|r| (r.run, r.resplit));
                let col = |f: &dyn Fn(&ResplitRecord) -> f64| {
                    recs.iter().map(|r| f(r)).collect::<Vec<_>>()
                };
                let wsc: Vec<f64> = recs.iter().filter_map(|r| r.wsc).collect();
                ResultsRow {
                    dataset,
                    model,
                    layer,
                    method,
                    n: recs.len(),
                    coverage: Stat::of(&col(&|r| r.coverage)),
                    inefficiency: Stat::of(&col(&|r| r.inefficiency)),
                    inefficiency_raw: Stat::of(&col(&|r| r.inefficiency_raw)),
                    wsc: (wsc.len() == recs.len()).then(|| Stat::of(&wsc)),
                }
            })
            .collect();
        let mut table = ResultsTable {
            config_hash: config_hash.to_string(),
            seed,
            rows,
        };
        table.sort();
        table
    }

    /// Orders rows by (dataset, model, method, layer).
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }

    pub fn get(
        &self,
        dataset: &str,
        model: &str,
        layer: &str,
        method: &str,
    ) -> Option<&ResultsRow> {
        self.rows.iter().find(|r| {
            r.dataset == dataset && r.model == model && r.layer == layer && r.method == method
        })
    }

    fn cells(&self, row: &ResultsRow) -> Vec<String> {
        let (wm, ws) = match row.wsc {
            Some(s) => (fmt(s.mean), fmt(s.std)),
            None => (String::new(), String::new()),
        };
        vec![
            row.dataset.clone(),
            row.model.clone(),
            row.method.clone(),
            row.layer.clone(),
            row.n.to_string(),
            fmt(row.coverage.mean),
            fmt(row.coverage.std),
            fmt(row.inefficiency.mean),
            fmt(row.inefficiency.std),
            fmt(row.inefficiency_raw.mean),
            fmt(row.inefficiency_raw.std),
            wm,
            ws,
            self.config_hash.clone(),
            self.seed.to_string(),
        ]
    }

    fn from_cells(lines: Vec<Vec<String>>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut provenance = None;
        for (i, c) in lines.into_iter().enumerate() {
            if c.len() != COLUMNS.len() {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: format!("expected {} columns, found {}", COLUMNS.len(), c.len()),
                });
            }
            let stat = |m: &str, s: &str| -> Result<Stat> {
                Ok(Stat {
                    mean: parse_f64(m)?,
                    std: parse_f64(s)?,
                })
            };
            let wsc = if c[11].trim().is_empty() {
                None
            } else {
                Some(stat(&c[11], &c[12])?)
            };
            let seed: u64 = c[14].trim().parse().map_err(|_| Error::Parse {
                line: i + 2,
                msg: format!("bad seed '{}'", c[14]),
            })?;
            provenance.get_or_insert((c[13].trim().to_string(), seed));
            rows.push(ResultsRow {
                dataset: c[0].trim().to_string(),
                model: c[1].trim().to_string(),
                method: c[2].trim().to_string(),
                layer: c[3].trim().to_string(),
                n: c[4].trim().parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    msg: format!("bad count '{}'", c[4]),
                })?,
                coverage: stat(&c[5], &c[6])?,
                inefficiency: stat(&c[7], &c[8])?,
                inefficiency_raw: stat(&c[9], &c[10])?,
                wsc,
            });
        }
        let (config_hash, seed) = provenance.ok_or_else(|| Error::Parse {
            line: 1,
            msg: "table has no rows".into(),
        })?;
        Ok(ResultsTable {
            config_hash,
            seed,
            rows,
        })
    }

    /// Parses the CSV form written by [`render_table`].
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != COLUMNS {
            return Err(Error::Parse {
                line: 1,
                msg: "unexpected results header".into(),
            });
        }
        let mut lines = Vec::new();
        for rec in reader.records() {
            lines.push(rec?.iter().map(str::to_string).collect());
        }
        Self::from_cells(lines)
    }

    /// Parses the Markdown form written by [`render_table`].
    pub fn parse_markdown(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| l.trim_start().starts_with('|'));
        let split = |l: &str| -> Vec<String> {
            let t = l.trim();
            let inner = t.strip_prefix('|').unwrap_or(t);
            let inner = inner.strip_suffix('|').unwrap_or(inner);
            inner.split('|').map(|s| s.trim().to_string()).collect()
        };
        let header = lines.next().map(split).ok_or_else(|| Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        if header != COLUMNS {
            return Err(Error::Parse {
                line: 1,
                msg: "unexpected results header".into(),
            });
        }
        lines.next();
        Self::from_cells(lines.map(split).collect())
    }
}

/// Text rendering with rows ordered by (dataset, model, method, layer).
/// Numbers are written in shortest round-trip form.
pub fn render_table(table: &ResultsTable, format: TableFormat) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot render an empty results table".into(),
        ));
    }
    let mut sorted = table.clone();
    sorted.sort();
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS)?;
            for row in &sorted.rows {
                w.write_record(sorted.cells(row))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        TableFormat::Markdown => {
            let mut out = format!("| {} |\n", COLUMNS.join(" | "));
            out.push_str(&format!("|{}\n", "---|".repeat(COLUMNS.len())));
            for row in &sorted.rows {
                out.push_str(&format!("| {} |\n", sorted.cells(row).join(" | ")));
            }
            Ok(out)
        }
    }
}
