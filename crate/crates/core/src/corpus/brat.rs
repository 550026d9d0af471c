//! Parser for the BRAT standoff T-annotation subset.

use super::tokenize::{sentence_boundaries, tokenize_with_offsets};
use super::{CorpusError, DocumentRecord, SentenceRecord, SpanRecord, TokenRecord};

struct TSpan {
    kind: String,
    start: usize,
    end: usize,
    surface: String,
}

/// Parses a `.ann` standoff file against its paired `.txt` document.
///
/// Tokens overlapping an `EVENT` span get `label = 1`; spans of any other
/// type are retained as auxiliary entity spans. Span surfaces are verified
/// against the text slice at their offsets.
pub fn parse_brat(
    ann_text: &str,
    txt_text: &str,
    doc_id: &str,
    domain: &str,
) -> Result<DocumentRecord, CorpusError> {
    let chars: Vec<char> = txt_text.chars().collect();
    let mut spans = Vec::new();
    for (lineno, line) in ann_text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || !line.starts_with('T') {
            // Attribute/relation/comment lines are outside the T subset.
            continue;
        }
        let span = parse_t_line(line).map_err(|msg| CorpusError::Parse {
            line: lineno + 1,
            msg,
        })?;
        if span.end > chars.len() || span.start >= span.end {
            return Err(CorpusError::Integrity(format!(
                "span {}..{} out of bounds for document of {} chars (line {})",
                span.start,
                span.end,
                chars.len(),
                lineno + 1
            )));
        }
        let slice: String = chars[span.start..span.end].iter().collect();
        if slice != span.surface {
            return Err(CorpusError::Integrity(format!(
                "surface {:?} does not match text slice {:?} at {}..{}",
                span.surface, slice, span.start, span.end
            )));
        }
        spans.push(span);
    }

    let raw = tokenize_with_offsets(txt_text);
    let event_spans: Vec<&TSpan> = spans
        .iter()
        .filter(|s| s.kind.eq_ignore_ascii_case("EVENT"))
        .collect();
    let mut sentences = Vec::new();
    for range in sentence_boundaries(&raw, txt_text) {
        let tokens = raw[range]
            .iter()
            .map(|t| {
                let overlaps = event_spans
                    .iter()
                    .any(|s| t.char_start < s.end && s.start < t.char_end);
                TokenRecord {
                    text: t.text.clone(),
                    pos: None,
                    label: overlaps as u8,
                    event_type: None,
                    char_start: t.char_start,
                    char_end: t.char_end,
                }
            })
            .collect();
        sentences.push(SentenceRecord {
            tokens,
            doc_id: doc_id.to_string(),
            domain: domain.to_string(),
        });
    }

    let entity_spans = spans
        .iter()
        .filter(|s| !s.kind.eq_ignore_ascii_case("EVENT"))
        .map(|s| SpanRecord {
            kind: s.kind.clone(),
            char_start: s.start,
            char_end: s.end,
            text: s.surface.clone(),
        })
        .collect();

    Ok(DocumentRecord {
        doc_id: doc_id.to_string(),
        domain: domain.to_string(),
        sentences,
        entity_spans,
    })
}

/// `T<id>\t<TYPE> <start> <end>\t<surface>`
fn parse_t_line(line: &str) -> Result<TSpan, String> {
    let mut fields = line.splitn(3, '\t');
    let id = fields.next().unwrap();
    if !id[1..].chars().all(|c| c.is_ascii_digit()) || id.len() < 2 {
        return Err(format!("malformed annotation id {id:?}"));
    }
    let middle = fields.next().ok_or("missing type/offset field")?;
    let surface = fields.next().ok_or("missing surface field")?;
    let parts: Vec<&str> = middle.split_whitespace().collect();
    // Discontinuous spans (semicolon-separated fragments) are out of scope.
    let [kind, start, end] = parts.as_slice() else {
        return Err(format!("expected `TYPE start end`, got {middle:?}"));
    };
    let start: usize = start.parse().map_err(|_| format!("bad offset {start:?}"))?;
    let end: usize = end.parse().map_err(|_| format!("bad offset {end:?}"))?;
    Ok(TSpan {
        kind: kind.to_string(),
        start,
        end,
        surface: surface.to_string(),
    })
}
