//! Results table: one row per metric value.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{Criterion, MetricsRecord, RunContext, Trial};

pub const CSV_HEADER: [&str; 14] = [
    "simulation",
    "task",
    "kernel",
    "N",
    "m",
    "ell",
    "lambda",
    "trial",
    "seed",
    "criterion",
    "value",
    "wall_time_s",
    "diverged",
    "comm_floats",
];

/// Reals are written with 17 significant digits so they read back exactly.
fn real(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        let c = &r.context;
        w.write_record([
            c.simulation.clone(),
            c.task.clone(),
            c.kernel.clone(),
            opt(c.n),
            opt(c.m),
            opt(c.ell),
            c.lambda.map(real).unwrap_or_default(),
            c.trial.to_string(),
            c.seed.to_string(),
            r.criterion.to_string(),
            real(r.value),
            real(r.wall_time_s),
            r.diverged.to_string(),
            r.comm_floats.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))
}

pub fn emit_csv(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(records, std::io::BufWriter::new(file))
}

fn field<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
    s.parse().map_err(|_| Error::invalid(format!("bad {name} field `{s}`")))
}

fn opt_field<T: std::str::FromStr>(s: &str, name: &str) -> Result<Option<T>> {
    if s.is_empty() { Ok(None) } else { field(s, name).map(Some) }
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::invalid("unexpected csv header"));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_err)?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let context = RunContext {
            simulation: get(0).to_string(),
            task: get(1).to_string(),
            kernel: get(2).to_string(),
            n: opt_field(get(3), "N")?,
            m: opt_field(get(4), "m")?,
            ell: opt_field(get(5), "ell")?,
            lambda: opt_field(get(6), "lambda")?,
            trial: get(7).parse::<Trial>()?,
            seed: field(get(8), "seed")?,
        };
        out.push(MetricsRecord {
            criterion: get(9).parse::<Criterion>()?,
            value: field(get(10), "value")?,
            context,
            wall_time_s: field(get(11), "wall_time_s")?,
            diverged: field(get(12), "diverged")?,
            comm_floats: field(get(13), "comm_floats")?,
        });
    }
    Ok(out)
}
