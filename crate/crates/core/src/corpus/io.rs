use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::{CorpusError, Document, Vocabulary};

fn parse_date(raw: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S").ok().map(|d| d.date()))
        .or_else(|| DateTime::parse_from_rfc3339(raw).ok().map(|d| d.date_naive()))
}

/// Parses `timestamp<TAB>token token …` lines. Blank lines are skipped; the
/// timestamp field may be empty, but then it must be empty on every line.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (stamp, text) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
            line: line_no,
            message: "missing tab between timestamp and tokens".into(),
        })?;
        let stamp = stamp.trim();
        let timestamp = if stamp.is_empty() {
            None
        } else {
            Some(parse_date(stamp).ok_or_else(|| CorpusError::Parse {
                line: line_no,
                message: format!("invalid date `{stamp}`"),
            })?)
        };
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "document has no tokens".into(),
            });
        }
        docs.push(Document {
            tokens,
            timestamp,
            source_id: Some(format!("line:{line_no}")),
        });
    }
    let dated = docs.iter().filter(|d| d.timestamp.is_some()).count();
    if dated != 0 && dated != docs.len() {
        return Err(CorpusError::MixedTimestamps);
    }
    Ok(docs)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    parse_corpus(BufReader::new(File::open(path)?))
}

/// One token per line; blank lines ignored.
pub fn read_token_list<R: BufRead>(reader: R) -> Result<HashSet<String>, CorpusError> {
    let mut out = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            out.insert(t.to_string());
        }
    }
    Ok(out)
}

/// Writes tokens one per line in index order.
pub fn write_vocabulary<W: Write>(vocab: &Vocabulary, mut out: W) -> Result<(), CorpusError> {
    for t in vocab.tokens() {
        writeln!(out, "{t}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_static_and_dynamic() {
        let docs = parse_corpus("\ta b c\n\n\tc d\n".as_bytes()).unwrap();
        assert_eq!(docs.len(), 2);
        assert!(docs[0].timestamp.is_none());
        let docs = parse_corpus("2001-02-03\tx y\n2001-03-01T10:00:00\tz\n".as_bytes()).unwrap();
        assert_eq!(docs[1].timestamp, NaiveDate::from_ymd_opt(2001, 3, 1));
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_corpus("\ta\nno tab here\n".as_bytes()).unwrap_err();
        assert_eq!(err, CorpusError::Parse { line: 2, message: "missing tab between timestamp and tokens".into() });
        let err = parse_corpus("\ta\n2001-13-01\tb\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }));
        assert_eq!(parse_corpus("\ta\n2001-01-01\tb\n".as_bytes()).unwrap_err(), CorpusError::MixedTimestamps);
    }
}
