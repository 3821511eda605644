//! Plain-text dataset format, one example per line.
//!
//! ```text
//! # clipgrain dataset v1 task=classification dim=3
//! 0,0.5,-1.25,2.0,1,0,-
//! 1,0.25,0.75,-0.5,0,1,4
//! ```
//!
//! Field order per record: `id`, `dim` feature values, `target`,
//! `is_canary` (0/1), `cohort_id` (`-` when absent). The header line fixes
//! the task (how `target` parses) and the feature dimension; rows with a
//! different feature count are rejected.

use super::synth::SynthTask;
use super::{Dataset, Example, ModelError, Target};
use crate::numerics::Vector;
use crate::Scalar;

const HEADER_PREFIX: &str = "# clipgrain dataset v1";

fn parse_err(line: usize, message: impl Into<String>) -> ModelError {
    ModelError::Parse { line, message: message.into() }
}

/// Parses the text format. Returns the dataset and the declared task.
pub fn parse_dataset<F: Scalar>(input: &str) -> Result<(Dataset<F>, SynthTask), ModelError> {
    let mut lines = input.lines().enumerate();
    let (task, dim) = loop {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing header line"))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !trimmed.starts_with(HEADER_PREFIX) {
            return Err(parse_err(idx + 1, format!("expected `{HEADER_PREFIX} ...` header")));
        }
        let mut task = None;
        let mut dim = None;
        for part in trimmed[HEADER_PREFIX.len()..].split_whitespace() {
            match part.split_once('=') {
                Some(("task", "classification")) => task = Some(SynthTask::Classification),
                Some(("task", "regression")) => task = Some(SynthTask::Regression),
                Some(("task", other)) => {
                    return Err(parse_err(idx + 1, format!("unknown task `{other}`")))
                }
                Some(("dim", v)) => {
                    dim = Some(v.parse::<usize>().map_err(|_| {
                        parse_err(idx + 1, format!("bad dim `{v}`"))
                    })?)
                }
                _ => return Err(parse_err(idx + 1, format!("unknown header field `{part}`"))),
            }
        }
        match (task, dim) {
            (Some(t), Some(d)) if d > 0 => break (t, d),
            _ => return Err(parse_err(idx + 1, "header must declare task=... dim=...")),
        }
    };

    let mut examples = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        // id + dim features + target + is_canary + cohort_id
        let expected = dim + 4;
        if fields.len() != expected {
            return Err(parse_err(
                lineno,
                format!("expected {expected} fields for dim={dim}, found {}", fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad id `{}`", fields[0])))?;
        let mut features = Vec::with_capacity(dim);
        for raw in &fields[1..1 + dim] {
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad feature `{raw}`")))?;
            features.push(
                F::from_f64(v).ok_or_else(|| parse_err(lineno, format!("feature `{raw}` not representable")))?,
            );
        }
        let features = Vector::new(features)
            .map_err(|_| parse_err(lineno, "non-finite feature value"))?;
        let target_raw = fields[1 + dim];
        let target = match task {
            SynthTask::Regression => Target::Real(
                target_raw
                    .parse::<f64>()
                    .ok()
                    .and_then(F::from_f64)
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(lineno, format!("bad real target `{target_raw}`")))?,
            ),
            SynthTask::Classification => Target::Class(
                target_raw
                    .parse::<usize>()
                    .map_err(|_| parse_err(lineno, format!("bad class target `{target_raw}`")))?,
            ),
        };
        let is_canary = match fields[2 + dim] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(lineno, format!("bad is_canary flag `{other}`"))),
        };
        let cohort_id = match fields[3 + dim] {
            "-" => None,
            raw => Some(
                raw.parse::<u32>()
                    .map_err(|_| parse_err(lineno, format!("bad cohort_id `{raw}`")))?,
            ),
        };
        examples.push(Example { id, features, target, is_canary, cohort_id });
    }
    Ok((Dataset::new(examples)?, task))
}

/// Serializes a dataset back to the text format.
pub fn format_dataset<F: Scalar>(dataset: &Dataset<F>, task: SynthTask) -> String {
    let task_tag = match task {
        SynthTask::Regression => "regression",
        SynthTask::Classification => "classification",
    };
    let mut out = format!("{HEADER_PREFIX} task={task_tag} dim={}\n", dataset.dim());
    for ex in dataset.examples() {
        out.push_str(&ex.id.to_string());
        for v in ex.features.iter() {
            out.push(',');
            out.push_str(&format!("{:.16e}", v));
        }
        match &ex.target {
            Target::Real(v) => out.push_str(&format!(",{:.16e}", v)),
            Target::Class(c) => out.push_str(&format!(",{c}")),
        }
        out.push_str(if ex.is_canary { ",1" } else { ",0" });
        match ex.cohort_id {
            Some(c) => out.push_str(&format!(",{c}\n")),
            None => out.push_str(",-\n"),
        }
    }
    out
}
