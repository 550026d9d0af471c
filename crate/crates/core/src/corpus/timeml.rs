//! Reader for the TimeML subset: only EVENT elements are interpreted,
//! everything else is stripped down to text.

use super::tokenize::{sentence_boundaries, tokenize_with_offsets};
use super::{CorpusError, DocumentRecord, EventType, SentenceRecord, TokenRecord};

struct EventRegion {
    start: usize,
    end: usize,
    event_type: EventType,
}

/// Parses TimeML-subset markup into a labeled document.
///
/// Tags are stripped and character offsets refer to the stripped text.
/// MAKEINSTANCE/TLINK/TIMEX3 and all other elements are ignored apart from
/// balance checking. An unknown EVENT `class` is accepted with a warning and
/// mapped to [`EventType::None`].
pub fn parse_timeml(
    xml_text: &str,
    doc_id: &str,
    domain: &str,
) -> Result<DocumentRecord, CorpusError> {
    let mut plain = String::new();
    let mut plain_len = 0usize; // in chars
    let mut stack: Vec<String> = Vec::new();
    let mut regions: Vec<EventRegion> = Vec::new();
    let mut open_events: Vec<(usize, EventType)> = Vec::new();

    let chars: Vec<char> = xml_text.chars().collect();
    let mut i = 0;
    let mut line = 1;
    while i < chars.len() {
        if chars[i] == '<' {
            let close = chars[i..]
                .iter()
                .position(|&c| c == '>')
                .ok_or(CorpusError::Parse {
                    line,
                    msg: "unterminated tag".into(),
                })?;
            let tag: String = chars[i + 1..i + close].iter().collect();
            line += tag.matches('\n').count();
            i += close + 1;
            if let Some(rest) = tag.strip_prefix('/') {
                let name = rest.trim().to_string();
                match stack.pop() {
                    Some(open) if open.eq_ignore_ascii_case(&name) => {}
                    other => {
                        return Err(CorpusError::Parse {
                            line,
                            msg: format!(
                                "closing tag </{name}> does not match open tag {other:?}"
                            ),
                        })
                    }
                }
                if name.eq_ignore_ascii_case("EVENT") {
                    let (start, ty) = open_events.pop().expect("stack tracked open event");
                    regions.push(EventRegion {
                        start,
                        end: plain_len,
                        event_type: ty,
                    });
                }
            } else if tag.starts_with('?') || tag.starts_with('!') {
                // declarations and comments
            } else if tag.ends_with('/') {
                // self-closing, nothing to track
            } else {
                let name = tag.split_whitespace().next().unwrap_or("").to_string();
                stack.push(name.clone());
                if name.eq_ignore_ascii_case("EVENT") {
                    let ty = match attribute(&tag, "class") {
                        Some(class) => EventType::from_timeml_class(&class).unwrap_or_else(|| {
                            log::warn!("unknown EVENT class {class:?} in {doc_id}, using None");
                            EventType::None
                        }),
                        None => EventType::None,
                    };
                    open_events.push((plain_len, ty));
                }
            }
        } else {
            let c = chars[i];
            if c == '\n' {
                line += 1;
            }
            plain.push(c);
            plain_len += 1;
            i += 1;
        }
    }
    if let Some(open) = stack.pop() {
        return Err(CorpusError::Parse {
            line,
            msg: format!("unclosed tag <{open}>"),
        });
    }

    let plain = decode_entities(&plain, &mut regions);
    let raw = tokenize_with_offsets(&plain);
    let mut sentences = Vec::new();
    for range in sentence_boundaries(&raw, &plain) {
        let tokens = raw[range]
            .iter()
            .map(|t| {
                let region = regions
                    .iter()
                    .find(|r| t.char_start < r.end && r.start < t.char_end);
                TokenRecord {
                    text: t.text.clone(),
                    pos: None,
                    label: region.is_some() as u8,
                    event_type: region.map(|r| r.event_type),
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

    Ok(DocumentRecord {
        doc_id: doc_id.to_string(),
        domain: domain.to_string(),
        sentences,
        entity_spans: Vec::new(),
    })
}

fn attribute(tag: &str, name: &str) -> Option<String> {
    // attributes of the form name="value" or name='value'
    let lower = tag.to_ascii_lowercase();
    let pat = format!("{name}=");
    let at = lower.find(&pat)?;
    let rest = &tag[at + pat.len()..];
    let quote = rest.chars().next()?;
    if quote != '"' && quote != '\'' {
        return None;
    }
    let inner = &rest[1..];
    let end = inner.find(quote)?;
    Some(inner[..end].to_string())
}

/// Replaces the XML predefined entities, shifting event regions that start
/// after a replacement accordingly.
fn decode_entities(plain: &str, regions: &mut [EventRegion]) -> String {
    const ENTITIES: [(&str, char); 5] = [
        ("&lt;", '<'),
        ("&gt;", '>'),
        ("&amp;", '&'),
        ("&quot;", '"'),
        ("&apos;", '\''),
    ];
    let chars: Vec<char> = plain.chars().collect();
    let mut out = String::new();
    let mut out_len = 0usize;
    let mut i = 0;
    let mut shifts: Vec<(usize, usize)> = Vec::new(); // (original index, new index)
    while i < chars.len() {
        let mut replaced = false;
        if chars[i] == '&' {
            let ahead: String = chars[i..chars.len().min(i + 6)].iter().collect();
            for (ent, ch) in ENTITIES {
                if ahead.starts_with(ent) {
                    out.push(ch);
                    shifts.push((i, out_len));
                    i += ent.chars().count();
                    out_len += 1;
                    replaced = true;
                    break;
                }
            }
        }
        if !replaced {
            out.push(chars[i]);
            shifts.push((i, out_len));
            i += 1;
            out_len += 1;
        }
    }
    shifts.push((chars.len(), out_len));
    let remap = |orig: usize| -> usize {
        shifts
            .iter()
            .find(|(o, _)| *o >= orig)
            .map(|(_, n)| *n)
            .unwrap_or(out_len)
    };
    for r in regions.iter_mut() {
        r.start = remap(r.start);
        r.end = remap(r.end);
    }
    out
}
