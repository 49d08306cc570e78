//! Trajectory CSV files. The first nine columns are the standard report;
//! the trailing ones carry what auditing and the stochastic runs need.
//! Floats use Rust's shortest round-trip formatting, so a write/read cycle
//! reproduces every recorded value bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::DISPLAY_FLOOR;
use crate::optim::{StepRecord, Trajectory};

pub const REQUIRED_COLUMNS: [&str; 9] = [
    "iteration",
    "sweep",
    "layer_updated",
    "lr",
    "loss",
    "dist_to_opt_raw",
    "dist_display",
    "gamma_bound",
    "grad_frobenius",
];

pub const EXTRA_COLUMNS: [&str; 4] = ["loss_before", "dist_before_raw", "sampled_index", "skipped"];

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::parse(line, e.to_string())
}

fn write_err(e: impl Into<std::io::Error>) -> Error {
    Error::io("<trajectory stream>", e.into())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REQUIRED_COLUMNS.iter().chain(EXTRA_COLUMNS.iter()))
        .map_err(write_err)?;
    for r in &traj.records {
        w.write_record([
            r.iteration.to_string(),
            r.sweep.to_string(),
            r.layer.to_string(),
            r.lr.to_string(),
            r.loss_after.to_string(),
            r.dist_after.to_string(),
            r.dist_display().to_string(),
            opt(r.gamma_bound),
            r.grad_frobenius.to_string(),
            r.loss_before.to_string(),
            r.dist_before.to_string(),
            opt(r.sampled_index),
            u8::from(r.skipped).to_string(),
        ])
        .map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}

pub fn save_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectory(traj, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Reads records back. Only the nine standard columns are required; a
/// missing `dist_before_raw` is filled from the previous row's distance,
/// and left as NaN (unknown) on the first row. Run metadata is not part of
/// the CSV and comes back as defaults.
pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 9];
    for (k, name) in REQUIRED_COLUMNS.iter().enumerate() {
        idx[k] = find(name).ok_or_else(|| Error::parse(1, format!("missing column {name:?}")))?;
    }
    let [loss_before, dist_before, sampled, skipped] = EXTRA_COLUMNS.map(find);

    let mut records: Vec<StepRecord> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |col: usize| row.get(col).unwrap_or("");
        let num = |col: usize, name: &str| -> Result<f64> {
            field(col)
                .parse::<f64>()
                .map_err(|_| Error::parse(line, format!("{name}: not a number: {:?}", field(col))))
        };
        let int = |col: usize, name: &str| -> Result<usize> {
            field(col)
                .parse::<usize>()
                .map_err(|_| Error::parse(line, format!("{name}: not an integer: {:?}", field(col))))
        };
        let maybe_num = |col: usize, name: &str| -> Result<Option<f64>> {
            if field(col).is_empty() { Ok(None) } else { num(col, name).map(Some) }
        };
        let maybe_int = |col: usize, name: &str| -> Result<Option<usize>> {
            if field(col).is_empty() { Ok(None) } else { int(col, name).map(Some) }
        };

        let dist_after = num(idx[5], "dist_to_opt_raw")?;
        let loss_after = num(idx[4], "loss")?;
        let prev = records.last();
        let rec = StepRecord {
            iteration: int(idx[0], "iteration")?,
            sweep: int(idx[1], "sweep")?,
            layer: int(idx[2], "layer_updated")?,
            lr: num(idx[3], "lr")?,
            loss_after,
            dist_after,
            gamma_bound: maybe_num(idx[7], "gamma_bound")?,
            grad_frobenius: num(idx[8], "grad_frobenius")?,
            loss_before: match loss_before {
                Some(c) => num(c, "loss_before")?,
                None => prev.map_or(f64::NAN, |p| p.loss_after),
            },
            dist_before: match dist_before {
                Some(c) => num(c, "dist_before_raw")?,
                None => prev.map_or(f64::NAN, |p| p.dist_after),
            },
            sampled_index: match sampled {
                Some(c) => maybe_int(c, "sampled_index")?,
                None => None,
            },
            skipped: match skipped {
                Some(c) => match field(c) {
                    "0" | "false" | "" => false,
                    "1" | "true" => true,
                    other => return Err(Error::parse(line, format!("skipped: expected 0 or 1, got {other:?}"))),
                },
                None => false,
            },
        };
        let display = num(idx[6], "dist_display")?;
        if !(display >= DISPLAY_FLOOR || display.is_nan()) {
            return Err(Error::parse(line, format!("dist_display {display} is below the display floor")));
        }
        records.push(rec);
    }
    Ok(Trajectory {
        records,
        ..Trajectory::default()
    })
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectory(std::io::BufReader::new(file))
}
