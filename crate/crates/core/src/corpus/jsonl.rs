//! Canonical JSONL interchange: one document per line.

use super::{Corpus, CorpusError, DocumentRecord, Split};
use std::io::{BufRead, Write};

pub fn write_jsonl<W: Write>(corpus: &Corpus, mut w: W) -> Result<(), CorpusError> {
    for doc in &corpus.documents {
        serde_json::to_writer(&mut w, doc)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R, split: Split) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: DocumentRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        doc.link_sentences();
        documents.push(doc);
    }
    Ok(Corpus::new(documents, split))
}

pub fn read_jsonl_path(path: &std::path::Path, split: Split) -> Result<Corpus, CorpusError> {
    let f = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(f), split)
}

pub fn write_jsonl_path(corpus: &Corpus, path: &std::path::Path) -> Result<(), CorpusError> {
    let f = std::fs::File::create(path)?;
    write_jsonl(corpus, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_brat, parse_timeml};

    #[test]
    fn round_trip_preserves_documents() {
        let d1 = parse_brat(
            "T1\tEVENT 8 17\tdiagnosed\nT2\tBodyPart 18 22\there",
            "She was diagnosed here.",
            "d0",
            "notes",
        )
        .unwrap();
        let d2 = parse_timeml(
            "It <EVENT class=\"STATE\">hurts</EVENT>.",
            "d1",
            "convos",
        )
        .unwrap();
        let corpus = Corpus::new(vec![d1, d2], Split::Test);
        let mut buf = Vec::new();
        write_jsonl(&corpus, &mut buf).unwrap();
        let back = read_jsonl(&buf[..], Split::Test).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn sentences_regain_doc_identity() {
        let d = parse_brat("", "a b", "docX", "news").unwrap();
        let corpus = Corpus::new(vec![d], Split::Train);
        let mut buf = Vec::new();
        write_jsonl(&corpus, &mut buf).unwrap();
        let back = read_jsonl(&buf[..], Split::Train).unwrap();
        let s = back.sentences().next().unwrap();
        assert_eq!(s.doc_id, "docX");
        assert_eq!(s.domain, "news");
    }
}
