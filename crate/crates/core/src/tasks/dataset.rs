//! Plain-text dataset files: a `#` header line with the task spec and seed,
//! then one `input<TAB>target` line per sample with space-separated ids.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::TaskSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub header: String,
    pub samples: Vec<TaskSample>,
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_dataset(path: &Path, header: &str, samples: &[TaskSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "# {header}")?;
    for s in samples {
        writeln!(f, "{}\t{}", join(&s.input), join(&s.target))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Format {
            what: "dataset",
            detail: "missing header line".into(),
        })?
        .to_string();
    let parse = |field: &str, line_no: usize| -> Result<Vec<usize>> {
        field
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| Error::Format {
                    what: "dataset",
                    detail: format!("line {line_no}: bad token {t:?}"),
                })
            })
            .collect()
    };
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let (input, target) = line.split_once('\t').ok_or_else(|| Error::Format {
            what: "dataset",
            detail: format!("line {}: expected input<TAB>target", i + 2),
        })?;
        samples.push(TaskSample {
            input: parse(input, i + 2)?,
            target: parse(target, i + 2)?,
            latent: None,
        });
    }
    Ok(Dataset { header, samples })
}
