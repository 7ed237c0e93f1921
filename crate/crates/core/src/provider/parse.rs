use crate::model::{Label, Vote};

pub const LABELS_PREFIX: &str = "LABELS:";

/// Parses a completion into one vote per dimension key.
///
/// Only the last line starting with `LABELS:` (any case, leading whitespace
/// allowed) is considered. Keys that are absent, assigned conflicting values,
/// or assigned anything other than `0`/`1` yield invalid votes.
pub fn parse_votes(completion_text: &str, dimension_keys: &[String], pass_index: u32) -> Vec<Vote> {
    let Some(assignments) = completion_text.lines().rev().find_map(labels_payload) else {
        return dimension_keys
            .iter()
            .map(|_| Vote::invalid(pass_index, ""))
            .collect();
    };

    let parsed: Vec<(String, &str, &str)> = assignments
        .split(';')
        .map(str::trim)
        .filter(|part| !part.is_empty())
        .map(|part| match part.split_once('=') {
            Some((key, value)) => (key.trim().to_ascii_lowercase(), value.trim(), part),
            None => (part.to_ascii_lowercase(), "", part),
        })
        .collect();

    dimension_keys
        .iter()
        .map(|key| {
            let wanted = key.to_ascii_lowercase();
            let hits: Vec<&(String, &str, &str)> =
                parsed.iter().filter(|(k, _, _)| *k == wanted).collect();
            let fragment = hits
                .iter()
                .map(|(_, _, raw)| *raw)
                .collect::<Vec<_>>()
                .join("; ");
            let labels: Vec<Option<Label>> = hits
                .iter()
                .map(|(_, value, _)| parse_value(value))
                .collect();
            match labels.split_first() {
                Some((Some(first), rest)) if rest.iter().all(|l| *l == Some(*first)) => {
                    Vote::valid(pass_index, *first, fragment)
                }
                _ => Vote::invalid(pass_index, fragment),
            }
        })
        .collect()
}

fn labels_payload(line: &str) -> Option<&str> {
    const WORD: &str = "LABELS";
    let trimmed = line.trim_start();
    let head = trimmed.get(..WORD.len())?;
    if !head.eq_ignore_ascii_case(WORD) {
        return None;
    }
    trimmed[WORD.len()..].trim_start().strip_prefix(':')
}

fn parse_value(value: &str) -> Option<Label> {
    Label::parse_bit(value.trim_end_matches(['.', ',']))
}
