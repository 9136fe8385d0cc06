//! Rule-based sentence segmentation.
//!
//! A sentence ends after `.`, `!` or `?` when the mark is followed by
//! whitespace and then an uppercase letter or a digit. A period that closes
//! one of [`ABBREVIATIONS`] never ends a sentence.

use alloc::vec::Vec;
use core::ops::Range;

/// Abbreviations whose trailing period is not a sentence boundary.
/// Matching is case-sensitive and must start at a word boundary.
pub const ABBREVIATIONS: &[&str] = &["Fig.", "et al.", "e.g.", "i.e.", "Dr.", "vs.", "No."];

/// Byte ranges of the sentences of `text`, in order. Ranges never include
/// leading or trailing whitespace and are never empty.
pub fn sentence_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = match text.find(|c: char| !c.is_whitespace()) {
        Some(s) => s,
        None => return spans,
    };

    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if i < start || !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let end = i + c.len_utf8();
        let rest = &text[end..];
        if !rest.starts_with(char::is_whitespace) {
            continue;
        }
        let Some(offset) = rest.find(|c: char| !c.is_whitespace()) else {
            continue;
        };
        let next = rest[offset..].chars().next().unwrap_or(' ');
        if !(next.is_uppercase() || next.is_ascii_digit()) {
            continue;
        }
        if c == '.' && ends_with_abbreviation(&text[start..end]) {
            continue;
        }
        spans.push(start..end);
        start = end + offset;
        // skip to the next sentence start
        while iter.peek().is_some_and(|&(j, _)| j < start) {
            iter.next();
        }
    }

    let tail = text[start..].trim_end();
    if !tail.is_empty() {
        spans.push(start..start + tail.len());
    }
    spans
}

/// Splits `text` into trimmed, non-empty sentences.
pub fn split_sentences(text: &str) -> Vec<&str> {
    sentence_spans(text).into_iter().map(|r| &text[r]).collect()
}

fn ends_with_abbreviation(sentence: &str) -> bool {
    ABBREVIATIONS.iter().any(|abbr| {
        sentence.strip_suffix(abbr).is_some_and(|before| {
            before
                .chars()
                .next_back()
                .is_none_or(|p| !p.is_alphanumeric())
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use proptest::prelude::*;

    #[test]
    fn terminal_punctuation() {
        assert_eq!(split_sentences("A b. C d? E!"), ["A b.", "C d?", "E!"]);
    }

    #[test]
    fn abbreviation_guard() {
        assert_eq!(
            split_sentences("See Fig. 2. Done."),
            ["See Fig. 2.", "Done."]
        );
        assert_eq!(
            split_sentences("Shown by Smith et al. Later work agreed."),
            ["Shown by Smith et al. Later work agreed."]
        );
        assert_eq!(
            split_sentences("Treated by Dr. Who. Fine."),
            ["Treated by Dr. Who.", "Fine."]
        );
    }

    #[test]
    fn abbreviation_needs_word_boundary() {
        // "xNo." is not the abbreviation "No."
        assert_eq!(
            split_sentences("It was xNo. Then more."),
            ["It was xNo.", "Then more."]
        );
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(
            split_sentences("pH was 7. then rose."),
            ["pH was 7. then rose."]
        );
        assert_eq!(
            split_sentences("Ratio 1.5 observed. 20 cases."),
            ["Ratio 1.5 observed.", "20 cases."]
        );
    }

    #[test]
    fn empty_and_blank() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("  \n\t ").is_empty());
    }

    #[test]
    fn spans_are_trimmed() {
        let t = "  One.   Two.  ";
        let spans = sentence_spans(t);
        assert_eq!(spans, [2..6, 9..13]);
    }

    fn collapse(s: &str) -> String {
        s.split_whitespace()
            .collect::<alloc::vec::Vec<_>>()
            .join(" ")
    }

    proptest! {
        #[test]
        fn concatenation_reproduces_text(t in "[A-Za-z0-9 .!?\n]{0,120}") {
            let sentences = split_sentences(&t);
            prop_assert!(sentences.iter().all(|s| !s.trim().is_empty()));
            prop_assert_eq!(collapse(&sentences.join(" ")), collapse(&t));
        }
    }
}
