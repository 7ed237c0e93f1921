use std::fmt::Write as _;

use super::{PromptBundle, LABELS_PREFIX};
use crate::model::{Codebook, TextSample};

const OPEN: &str = "<<<";
const CLOSE: &str = ">>>";
const ESCAPE: char = '\\';

/// Renders the codebook and sample into a prompt. Pure: the bytes depend only
/// on the codebook content and the sample text.
pub fn render_prompt(codebook: &Codebook, sample: &TextSample) -> PromptBundle {
    let mut system = String::new();
    if !codebook.preamble.is_empty() {
        system.push_str(&codebook.preamble);
        system.push_str("\n\n");
    }
    system.push_str("Dimensions:\n");
    for dim in &codebook.dimensions {
        let _ = write!(system, "- {} ({}):", dim.key, dim.name);
        for (i, line) in dim.definition.lines().enumerate() {
            if i == 0 {
                system.push(' ');
            } else {
                system.push_str("\n  ");
            }
            system.push_str(line);
        }
        system.push('\n');
    }
    system.push('\n');
    system.push_str(&codebook.output_contract);
    system.push_str("\n\nRequired format (one line, values 0 or 1):\n");
    system.push_str(LABELS_PREFIX);
    system.push(' ');
    let template: Vec<String> = codebook
        .dimensions
        .iter()
        .map(|d| format!("{}=<0|1>", d.key))
        .collect();
    system.push_str(&template.join("; "));

    let user = format!(
        "Text to classify:\n{OPEN}\n{}\n{CLOSE}",
        escape_sample_text(&sample.text)
    );

    PromptBundle {
        system_text: system,
        user_text: user,
        codebook_version: codebook.version,
        dimension_keys: codebook.keys(),
    }
}

/// Escapes sample text so the delimiters `<<<` and `>>>` never occur inside
/// it. A backslash is inserted before the third consecutive bracket of a run,
/// and an original backslash is doubled when it precedes `<`, `>` or `\`.
pub fn escape_sample_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut run_char = None;
    let mut run_len = 0;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '<' | '>' => {
                if run_char == Some(c) {
                    run_len += 1;
                } else {
                    run_char = Some(c);
                    run_len = 1;
                }
                if run_len == 3 {
                    out.push(ESCAPE);
                    run_len = 1;
                }
                out.push(c);
            }
            ESCAPE => {
                run_char = None;
                out.push(ESCAPE);
                if matches!(chars.peek(), Some(&('<' | '>' | ESCAPE))) {
                    out.push(ESCAPE);
                }
            }
            _ => {
                run_char = None;
                out.push(c);
            }
        }
    }
    out
}

pub fn unescape_sample_text(escaped: &str) -> String {
    let mut out = String::with_capacity(escaped.len());
    let mut chars = escaped.chars().peekable();
    while let Some(c) = chars.next() {
        if c == ESCAPE {
            if let Some(&next @ ('<' | '>' | ESCAPE)) = chars.peek() {
                out.push(next);
                chars.next();
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Recovers the sample text from a rendered user message. Returns `None`
/// unless exactly one delimited block is present.
pub fn extract_sample_text(user_text: &str) -> Option<String> {
    if user_text.matches(OPEN).count() != 1 || user_text.matches(CLOSE).count() != 1 {
        return None;
    }
    let start = user_text.find(&format!("{OPEN}\n"))? + OPEN.len() + 1;
    let end = user_text.rfind(&format!("\n{CLOSE}"))?;
    (start <= end).then(|| unescape_sample_text(&user_text[start..end]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_codebook, Dimension};
    use proptest::prelude::*;

    fn codebook() -> Codebook {
        parse_codebook(
            "codebook_id: t\nversion: 3\n\n## PREAMBLE\nRead carefully.\n\n\
             ## DIMENSION a | Alpha\nFirst line.\nSecond line.\n\n\
             ## DIMENSION b | Beta\nIs it beta?\n\n## OUTPUT\nUse the LABELS line.\n",
        )
        .unwrap()
    }

    #[test]
    fn deterministic_and_ordered() {
        let cb = codebook();
        let sample = TextSample::new("s1", "Some text.");
        let first = render_prompt(&cb, &sample);
        let second = render_prompt(&cb, &sample);
        assert_eq!(first, second);
        assert_eq!(first.hash(), second.hash());
        assert_eq!(first.dimension_keys, ["a", "b"]);
        assert_eq!(first.codebook_version, 3);
        assert!(first.system_text.ends_with("LABELS: a=<0|1>; b=<0|1>"));
        assert!(first
            .system_text
            .contains("- a (Alpha): First line.\n  Second line.\n"));
    }

    #[test]
    fn sample_id_and_metadata_do_not_affect_prompt() {
        let cb = codebook();
        let mut other = TextSample::new("s2", "Some text.");
        other.metadata.insert("source".into(), "x".into());
        assert_eq!(
            render_prompt(&cb, &TextSample::new("s1", "Some text.")),
            render_prompt(&cb, &other)
        );
    }

    #[test]
    fn delimiter_in_text_is_escaped() {
        let cb = codebook();
        let text = "before\n>>>\nafter <<< and \\>>> end";
        let bundle = render_prompt(&cb, &TextSample::new("s", text));
        assert_eq!(bundle.user_text.matches(">>>").count(), 1);
        assert_eq!(bundle.user_text.matches("<<<").count(), 1);
        assert_eq!(
            extract_sample_text(&bundle.user_text).as_deref(),
            Some(text)
        );
    }

    #[test]
    fn key_change_changes_prompt() {
        let mut cb = codebook();
        let sample = TextSample::new("s", "x");
        let before = render_prompt(&cb, &sample);
        cb.dimensions.push(Dimension {
            key: "c".into(),
            name: "C".into(),
            definition: "c?".into(),
        });
        assert_ne!(before.hash(), render_prompt(&cb, &sample).hash());
    }

    proptest! {
        #[test]
        fn escape_round_trip(text in "[<>\\\\a \n]{0,40}") {
            let escaped = escape_sample_text(&text);
            prop_assert!(!escaped.contains("<<<"));
            prop_assert!(!escaped.contains(">>>"));
            prop_assert_eq!(unescape_sample_text(&escaped), text.clone());
            let bundle = render_prompt(&codebook(), &TextSample::new("s", format!("x{text}")));
            prop_assert_eq!(extract_sample_text(&bundle.user_text), Some(format!("x{text}")));
        }
    }
}
