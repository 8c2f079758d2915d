use std::fs::File;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Result};
use etnet::corpus::{parse, Parsed};
use etnet::datagen::DEFAULT_INTERVAL;
use etnet::TimeSeries;

/// Non-overlapping windows of `window` values; the remainder is dropped.
pub fn windows(values: &[f64], window: usize) -> Result<Vec<TimeSeries>> {
    if window < 2 {
        bail!("window must be at least 2 bins, got {window}");
    }
    let out = values
        .chunks_exact(window)
        .enumerate()
        .map(|(i, w)| TimeSeries::new(i.to_string(), DEFAULT_INTERVAL, w.to_vec()))
        .collect::<etnet::Result<Vec<_>>>()?;
    if out.is_empty() {
        bail!("stream of {} values is shorter than one window of {window}", values.len());
    }
    Ok(out)
}

pub fn ingest_reader<R: Read>(input: R, name: &str, window: usize) -> Result<Vec<TimeSeries>> {
    match parse(input, name)? {
        Parsed::Corpus(data) => Ok(data),
        Parsed::Stream(values) => windows(&values, window),
    }
}

/// Corpus CSV rows as they are, or a single-column stream cut into windows.
pub fn ingest(path: impl AsRef<Path>, window: usize) -> Result<Vec<TimeSeries>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    ingest_reader(file, &path.display().to_string(), window)
}
