use std::io::Write;

use anyhow::Result;
use etnet::model::ScoredSample;
use serde::Serialize;
use serde_json::json;

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// `id,label,score,cluster,z_w0..,z_d0..` per sample, for external plotting.
pub fn write_plot_data<W: Write>(out: W, rows: &[ScoredSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (nw, nd) = rows.first().map_or((0, 0), |r| (r.z_w.len(), r.z_d.len()));
    let mut header = vec!["id".to_string(), "label".into(), "score".into(), "cluster".into()];
    header.extend((0..nw).map(|i| format!("z_w{i}")));
    header.extend((0..nd).map(|i| format!("z_d{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.id.clone(),
            r.label.clone().unwrap_or_default(),
            r.score.to_string(),
            r.cluster.to_string(),
        ];
        rec.extend(r.z_w.iter().chain(&r.z_d).map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Stable short name for the failure class of an error chain.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    use etnet::Error as E;
    let Some(core) = e.chain().find_map(|c| c.downcast_ref::<E>()) else {
        return if e.chain().any(|c| c.is::<std::io::Error>()) { "io" } else { "invalid_input" };
    };
    match core {
        E::ShapeMismatch { .. } | E::InvalidShape { .. } | E::NonScalarLoss(_) => "shape",
        E::LengthMismatch { .. } => "length_mismatch",
        E::EmptyInput(_) => "empty_input",
        E::InvalidArgument { .. } => "invalid_argument",
        E::NotPositiveDefinite { .. } => "not_positive_definite",
        E::NonFiniteLoss { .. } => "non_finite_loss",
        E::Format(_) => "format",
        E::Parse { .. } => "parse",
        E::Io(_) => "io",
        E::Json(_) => "json",
    }
}

pub fn error_json(kind: &str, e: &anyhow::Error) -> serde_json::Value {
    json!({ "error": { "kind": kind, "message": format!("{e:#}") } })
}

/// A closed stdout (e.g. piped into `head`) is not a failure.
pub fn is_broken_pipe(e: &anyhow::Error) -> bool {
    use std::io::ErrorKind::BrokenPipe;
    e.chain().any(|c| {
        if let Some(io) = c.downcast_ref::<std::io::Error>() {
            io.kind() == BrokenPipe
        } else if let Some(etnet::Error::Io(io)) = c.downcast_ref::<etnet::Error>() {
            io.kind() == BrokenPipe
        } else if let Some(j) = c.downcast_ref::<serde_json::Error>() {
            j.io_error_kind() == Some(BrokenPipe)
        } else {
            false
        }
    })
}
