//! Codebook file format.
//!
//! ```text
//! codebook_id: protest
//! version: 2
//! parent_version: 1
//!
//! ## PREAMBLE
//! Shared instructions.
//!
//! ## DIMENSION blame | Blame attribution
//! Definition text.
//!
//! ## OUTPUT
//! Response format instructions.
//! ```
//!
//! Header lines before the first section are `key: value` pairs; `#` starts a
//! comment there. Section bodies are trimmed of surrounding blank lines. A body
//! line that itself starts with `##` is written with a leading backslash.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Codebook, DataError, Dimension};

const PREAMBLE: &str = "PREAMBLE";
const DIMENSION: &str = "DIMENSION";
const OUTPUT: &str = "OUTPUT";

pub fn load_codebook(path: &Path) -> Result<Codebook, DataError> {
    let content = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_codebook(&content)
}

enum Section {
    Preamble,
    Dimension { key: String, name: String },
    Output,
}

pub fn parse_codebook(content: &str) -> Result<Codebook, DataError> {
    let mut codebook_id = None;
    let mut version = None;
    let mut parent_version = None;
    let mut preamble = None;
    let mut output = None;
    let mut dimensions = Vec::new();

    let mut current: Option<(Section, Vec<&str>)> = None;
    let mut close = |section: Option<(Section, Vec<&str>)>| -> Result<(), DataError> {
        let Some((section, lines)) = section else {
            return Ok(());
        };
        let body = section_body(&lines);
        match section {
            Section::Preamble => {
                if preamble.replace(body).is_some() {
                    return Err(DataError::MalformedCodebook(
                        "more than one PREAMBLE section".into(),
                    ));
                }
            }
            Section::Output => {
                if output.replace(body).is_some() {
                    return Err(DataError::MalformedCodebook(
                        "more than one OUTPUT section".into(),
                    ));
                }
            }
            Section::Dimension { key, name } => dimensions.push(Dimension {
                key,
                name,
                definition: body,
            }),
        }
        Ok(())
    };

    for (idx, line) in content.lines().enumerate() {
        if let Some(heading) = line.strip_prefix("## ") {
            let heading = heading.trim();
            let section = if heading == PREAMBLE {
                Section::Preamble
            } else if heading == OUTPUT {
                Section::Output
            } else if let Some(rest) = heading
                .strip_prefix(DIMENSION)
                .filter(|r| r.starts_with(' '))
            {
                let (key, name) = match rest.split_once('|') {
                    Some((key, name)) => (key.trim(), name.trim()),
                    None => (rest.trim(), rest.trim()),
                };
                if key.is_empty() {
                    return Err(DataError::MalformedCodebook(format!(
                        "line {}: dimension heading without a key",
                        idx + 1
                    )));
                }
                Section::Dimension {
                    key: key.to_string(),
                    name: name.to_string(),
                }
            } else {
                return Err(DataError::MalformedCodebook(format!(
                    "line {}: unknown section {heading:?}",
                    idx + 1
                )));
            };
            close(current.take())?;
            current = Some((section, Vec::new()));
            continue;
        }

        match current.as_mut() {
            Some((_, lines)) => lines.push(line),
            None => {
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let (key, value) = trimmed.split_once(':').ok_or_else(|| {
                    DataError::MalformedCodebook(format!(
                        "line {}: expected `key: value` header",
                        idx + 1
                    ))
                })?;
                let value = value.trim();
                let number = |v: &str| {
                    v.parse::<u32>().map_err(|_| {
                        DataError::MalformedCodebook(format!(
                            "line {}: `{}` must be an integer",
                            idx + 1,
                            key.trim()
                        ))
                    })
                };
                match key.trim() {
                    "codebook_id" => codebook_id = Some(value.to_string()),
                    "version" => version = Some(number(value)?),
                    "parent_version" => {
                        if !value.is_empty() && value != "none" {
                            parent_version = Some(number(value)?);
                        }
                    }
                    other => {
                        return Err(DataError::MalformedCodebook(format!(
                            "line {}: unknown header field {other:?}",
                            idx + 1
                        )))
                    }
                }
            }
        }
    }
    close(current.take())?;

    let codebook = Codebook {
        codebook_id: codebook_id
            .ok_or_else(|| DataError::MalformedCodebook("missing codebook_id".into()))?,
        version: version.unwrap_or(1),
        parent_version,
        preamble: preamble.unwrap_or_default(),
        dimensions,
        output_contract: output.unwrap_or_default(),
    };
    codebook.validate()?;
    Ok(codebook)
}

fn section_body(lines: &[&str]) -> String {
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(start), Some(end)) => lines[start..=end]
            .iter()
            .map(|l| match l.strip_prefix('\\') {
                Some(rest) if is_heading_like(rest) => rest,
                _ => l,
            })
            .collect::<Vec<_>>()
            .join("\n"),
        _ => String::new(),
    }
}

/// Matches lines of the form `\\*##...`, which need one escaping backslash.
fn is_heading_like(line: &str) -> bool {
    line.trim_start_matches('\\').starts_with("##")
}

fn push_body(out: &mut String, body: &str) {
    for line in body.lines() {
        if is_heading_like(line) {
            out.push('\\');
        }
        out.push_str(line);
        out.push('\n');
    }
}

/// Renders a codebook in the file format accepted by [`parse_codebook`].
pub fn write_codebook(codebook: &Codebook) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "codebook_id: {}", codebook.codebook_id);
    let _ = writeln!(out, "version: {}", codebook.version);
    if let Some(parent) = codebook.parent_version {
        let _ = writeln!(out, "parent_version: {parent}");
    }
    out.push_str("\n## PREAMBLE\n");
    push_body(&mut out, &codebook.preamble);
    for dim in &codebook.dimensions {
        let _ = writeln!(out, "\n## DIMENSION {} | {}", dim.key, dim.name);
        push_body(&mut out, &dim.definition);
    }
    out.push_str("\n## OUTPUT\n");
    push_body(&mut out, &codebook.output_contract);
    out
}

/// Output block used by newly scaffolded codebooks.
pub fn default_output_contract() -> String {
    "Classify the text on every dimension above. Reply with exactly one line that \
starts with `LABELS:` and assigns 1 (present) or 0 (absent) to each dimension key, \
in the order listed, separated by semicolons. Do not add any other text on that line."
        .to_string()
}
