use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a raw corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub lang: String,
    pub text: String,
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Corpus {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Corpus {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_line_errors() {
        let dir = std::env::temp_dir().join(format!("cadence-corpus-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.jsonl");
        let recs = vec![
            CorpusRecord { lang: "hi".into(), text: "नमस्ते।".into() },
            CorpusRecord { lang: "en".into(), text: "hi \"there\"".into() },
        ];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_jsonl::<CorpusRecord>(&path).unwrap(), recs);

        std::fs::write(&path, "{\"lang\":\"en\",\"text\":\"a\"}\n\nnot json\n").unwrap();
        let err = read_jsonl::<CorpusRecord>(&path).unwrap_err();
        assert!(matches!(err, Error::Corpus { line: 3, .. }));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
