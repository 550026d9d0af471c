//! Whitespace + punctuation tokenization with character-offset preservation.
//!
//! Offsets are in Unicode scalar values (the unit BRAT standoff files use).

/// A surface token with its half-open character span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawToken {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

/// Splits text into alphanumeric runs (apostrophes kept word-internal) and
/// single punctuation characters.
pub fn tokenize_with_offsets(text: &str) -> Vec<RawToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len()
                && (chars[i].is_alphanumeric()
                    || (chars[i] == '\'' && i + 1 < chars.len() && chars[i + 1].is_alphanumeric()))
            {
                i += 1;
            }
            tokens.push(RawToken {
                text: chars[start..i].iter().collect(),
                char_start: start,
                char_end: i,
            });
        } else {
            tokens.push(RawToken {
                text: c.to_string(),
                char_start: i,
                char_end: i + 1,
            });
            i += 1;
        }
    }
    tokens
}

/// Groups a token stream into sentences, breaking after `.`, `!`, `?` and at
/// blank lines of the original text. Returns index ranges into `tokens`.
pub fn sentence_boundaries(tokens: &[RawToken], text: &str) -> Vec<std::ops::Range<usize>> {
    let chars: Vec<char> = text.chars().collect();
    let mut ranges = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        let terminal = matches!(tok.text.as_str(), "." | "!" | "?");
        // A blank line between this token and the next also ends a sentence.
        let para_break = tokens.get(i + 1).is_some_and(|next| {
            let gap: String = chars[tok.char_end..next.char_start].iter().collect();
            gap.matches('\n').count() >= 2
        });
        if terminal || para_break {
            ranges.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        ranges.push(start..tokens.len());
    }
    ranges
}
