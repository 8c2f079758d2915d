//! Corpus CSV: one series per row, `id,interval,label,v0,v1,...`, no header.
//! An empty label field means unlabeled.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::TimeSeries;

pub fn write_corpus<W: Write>(out: W, data: &[TimeSeries]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(out);
    let mut row: Vec<String> = Vec::new();
    for s in data {
        row.clear();
        row.push(s.id.clone());
        row.push(s.interval.to_string());
        row.push(s.label.clone().unwrap_or_default());
        row.extend(s.values.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_corpus_file(path: impl AsRef<Path>, data: &[TimeSeries]) -> Result<()> {
    write_corpus(std::io::BufWriter::new(File::create(path)?), data)
}

/// A parsed file: either corpus rows or a bare value stream (one number per
/// line) awaiting windowing.
#[derive(Clone, Debug, PartialEq)]
pub enum Parsed {
    Corpus(Vec<TimeSeries>),
    Stream(Vec<f64>),
}

/// `name` is used in error messages only.
pub fn parse<R: Read>(input: R, name: &str) -> Result<Parsed> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let err = |line: u64, reason: String| Error::Parse {
        path: name.to_string(),
        line: line as usize,
        reason,
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec));
    }
    let Some((_, first)) = rows.first() else {
        return Err(Error::EmptyInput("corpus file has no rows"));
    };
    let number = |line: u64, field: &str, what: &str| {
        field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(line, format!("{what} `{field}` is not a finite number")))
    };

    if first.len() == 1 {
        let mut values = Vec::with_capacity(rows.len());
        for (line, rec) in &rows {
            if rec.len() != 1 {
                return Err(err(*line, format!("expected one value per line, found {}", rec.len())));
            }
            values.push(number(*line, &rec[0], "value")?);
        }
        return Ok(Parsed::Stream(values));
    }

    let mut data = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        if rec.len() < 4 {
            return Err(err(
                *line,
                format!("expected id, interval, label and at least one value, found {} fields", rec.len()),
            ));
        }
        let interval = number(*line, &rec[1], "interval")?;
        let values = rec.iter().skip(3).map(|f| number(*line, f, "value")).collect::<Result<Vec<_>>>()?;
        let mut s = TimeSeries::new(&rec[0], interval, values).map_err(|e| err(*line, e.to_string()))?;
        if !rec[2].is_empty() {
            s.label = Some(rec[2].to_string());
        }
        data.push(s);
    }
    Ok(Parsed::Corpus(data))
}

pub fn read_corpus<R: Read>(input: R, name: &str) -> Result<Vec<TimeSeries>> {
    match parse(input, name)? {
        Parsed::Corpus(d) => Ok(d),
        Parsed::Stream(_) => Err(Error::Parse {
            path: name.to_string(),
            line: 1,
            reason: "expected corpus rows, found a single-column value stream".into(),
        }),
    }
}

pub fn read_corpus_file(path: impl AsRef<Path>) -> Result<Vec<TimeSeries>> {
    let path = path.as_ref();
    read_corpus(File::open(path)?, &path.display().to_string())
}
