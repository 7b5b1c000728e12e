//! On-disk artifacts: JSON-lines prior datasets and CSV tables.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical and re-running a command reproduces files exactly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::inference::{ObservedData, Prediction, Summary};
use crate::mcmc::ChainSet;
use crate::priors::{FunctionDraw, PriorDataset, PriorError};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Dataset(#[from] PriorError),
}

impl From<csv::Error> for FormatError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => FormatError::Io(io),
            other => FormatError::Csv(format!("{other:?}")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Extra {
    integral: Vec<f64>,
}

/// One line of a dataset file.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: usize,
    locations: Vec<Vec<f64>>,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<Extra>,
}

/// Writes one JSON object per draw.
pub fn write_dataset(dataset: &PriorDataset, w: &mut impl Write) -> Result<(), FormatError> {
    for d in dataset.draws() {
        let rec = Record {
            id: d.id,
            locations: d.locations.clone(),
            values: d.values.clone(),
            channels: d.integral.clone().map(|integral| Extra { integral }),
        };
        serde_json::to_writer(&mut *w, &rec).map_err(|e| FormatError::Json { line: d.id + 1, message: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Streams a dataset line by line; blank lines are skipped.
pub fn read_dataset(r: impl BufRead) -> Result<PriorDataset, FormatError> {
    let mut draws = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| FormatError::Json { line: i + 1, message: e.to_string() })?;
        draws.push(FunctionDraw {
            id: rec.id,
            locations: rec.locations,
            values: rec.values,
            integral: rec.channels.map(|c| c.integral),
        });
    }
    Ok(PriorDataset::new(draws)?)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn location_header(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("s{i}")).collect()
}

/// A header row followed by numeric rows.
fn read_numeric(r: impl std::io::Read) -> Result<(Vec<String>, Vec<Vec<f64>>), FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| FormatError::Csv(format!("row {}: `{f}` is not a number", i + 1))))
            .collect::<Result<Vec<f64>, _>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Csv(format!("row {} has non-finite entries", i + 1)));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Locations, one per row, every column a coordinate.
pub fn read_locations(r: impl std::io::Read) -> Result<Vec<Vec<f64>>, FormatError> {
    Ok(read_numeric(r)?.1)
}

pub fn write_locations(locations: &[Vec<f64>], w: impl Write) -> Result<(), FormatError> {
    let d = locations.first().map_or(1, Vec::len);
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(location_header(d))?;
    for l in locations {
        wr.write_record(l.iter().map(|&v| num(v)))?;
    }
    wr.flush()?;
    Ok(())
}

/// Observations: coordinate columns and a final `y` column, or, for event
/// data, coordinate columns only.
pub fn read_observations(r: impl std::io::Read) -> Result<ObservedData, FormatError> {
    let (header, rows) = read_numeric(r)?;
    let has_y = header.last().is_some_and(|h| h == "y");
    if has_y && header.len() < 2 {
        return Err(FormatError::Csv("need at least one coordinate column before `y`".into()));
    }
    Ok(if has_y {
        let d = header.len() - 1;
        ObservedData::new(rows.iter().map(|r| r[..d].to_vec()).collect(), rows.iter().map(|r| r[d]).collect())
    } else {
        ObservedData::new(rows, vec![])
    })
}

pub fn write_observations(data: &ObservedData, w: impl Write) -> Result<(), FormatError> {
    let d = data.locations.first().map_or(1, Vec::len);
    let mut wr = csv::Writer::from_writer(w);
    let mut header = location_header(d);
    let with_y = !data.values.is_empty();
    if with_y {
        header.push("y".into());
    }
    wr.write_record(&header)?;
    for (j, l) in data.locations.iter().enumerate() {
        let mut row: Vec<String> = l.iter().map(|&v| num(v)).collect();
        if with_y {
            row.push(num(data.values[j]));
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// `chain, draw, <parameter names...>`, one row per post-warmup draw.
pub fn write_chains(chains: &ChainSet, w: impl Write) -> Result<(), FormatError> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(chains.names.iter().cloned());
    wr.write_record(&header)?;
    for (c, chain) in chains.draws.iter().enumerate() {
        for (i, d) in chain.iter().enumerate() {
            let mut row = vec![c.to_string(), i.to_string()];
            row.extend(d.iter().map(|&v| num(v)));
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

fn summary_cells(s: &Summary) -> [String; 5] {
    [num(s.mean), num(s.sd), num(s.q025), num(s.q50), num(s.q975)]
}

/// Location columns, then `channel` when there are several, then
/// `mean, sd, q2.5, q50, q97.5`; with a noise band, the predictive columns
/// `pred_sd, pred_q2.5, pred_q50, pred_q97.5` follow on value-channel rows.
pub fn write_predictions(pred: &Prediction, w: impl Write) -> Result<(), FormatError> {
    let d = pred.locations.first().map_or(1, Vec::len);
    let channels = pred.function.first().map_or(1, Vec::len);
    let mut wr = csv::Writer::from_writer(w);
    let mut header = location_header(d);
    if channels > 1 {
        header.push("channel".into());
    }
    header.extend(["mean", "sd", "q2.5", "q50", "q97.5"].map(String::from));
    if pred.noisy.is_some() {
        header.extend(["pred_sd", "pred_q2.5", "pred_q50", "pred_q97.5"].map(String::from));
    }
    wr.write_record(&header)?;
    for (j, loc) in pred.locations.iter().enumerate() {
        for (c, s) in pred.function[j].iter().enumerate() {
            let mut row: Vec<String> = loc.iter().map(|&v| num(v)).collect();
            if channels > 1 {
                row.push(if c == 0 { "value".into() } else { "integral".into() });
            }
            row.extend(summary_cells(s));
            if let Some(noisy) = &pred.noisy {
                if c == 0 {
                    let n = &noisy[j];
                    row.extend([num(n.sd), num(n.q025), num(n.q50), num(n.q975)]);
                } else {
                    row.extend(std::iter::repeat_n(String::new(), 4));
                }
            }
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Prior function draws: `draw, <location columns>, value[, integral]`, one row
/// per draw and location. No locations gives a header-only file.
pub fn write_function_draws(
    locations: &[Vec<f64>],
    draws: &[Vec<Vec<f64>>],
    input_dim: usize,
    channels: usize,
    w: impl Write,
) -> Result<(), FormatError> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["draw".to_string()];
    header.extend(location_header(input_dim));
    header.push("value".into());
    if channels > 1 {
        header.push("integral".into());
    }
    wr.write_record(&header)?;
    for (i, draw) in draws.iter().enumerate() {
        for (loc, vals) in locations.iter().zip(draw) {
            let mut row = vec![i.to_string()];
            row.extend(loc.iter().map(|&v| num(v)));
            row.extend(vals.iter().map(|&v| num(v)));
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}
