//! JSON-lines sketch files: a header line, then one record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::primitive::SketchRecord;

pub const JSONL_FORMAT: &str = "sketch-jsonl";
pub const JSONL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlHeader {
    pub format: String,
    pub version: u32,
}

impl Default for JsonlHeader {
    fn default() -> Self {
        Self { format: JSONL_FORMAT.into(), version: JSONL_VERSION }
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[SketchRecord]) -> Result<()> {
    serde_json::to_writer(&mut w, &JsonlHeader::default())?;
    w.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<SketchRecord>> {
    let mut lines = r.lines().enumerate();
    let header: JsonlHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?)
            .map_err(|e| Error::Format(format!("line 1: bad header: {e}")))?,
        None => return Err(Error::Format("empty file, expected a header line".into())),
    };
    if header.format != JSONL_FORMAT || header.version != JSONL_VERSION {
        return Err(Error::Format(format!(
            "unsupported header {}/{}, expected {JSONL_FORMAT}/{JSONL_VERSION}",
            header.format, header.version
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SketchRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        rec.validate()
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[SketchRecord]) -> Result<()> {
    write_records(BufWriter::new(File::create(path)?), records)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<SketchRecord>> {
    read_records(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::synth::gen_synthetic;

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let corpus = gen_synthetic(25, 8);
        save_jsonl(&path, &corpus).unwrap();
        assert_eq!(load_jsonl(&path).unwrap(), corpus);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"format":"sketch-jsonl","version":1}"#);
    }

    #[test]
    fn rejects_bad_header_and_records() {
        assert!(matches!(read_records(&b""[..]), Err(Error::Format(_))));
        assert!(matches!(
            read_records(&b"{\"format\":\"sketch-jsonl\",\"version\":2}\n"[..]),
            Err(Error::Format(_))
        ));
        let bad = b"{\"format\":\"sketch-jsonl\",\"version\":1}\n{\"id\":\"x\",\"primitives\":[{\"kind\":\"line\",\"construction\":false,\"params\":[1,2]}]}\n";
        let err = read_records(&bad[..]).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn provenance_defaults_to_synthetic() {
        let text = b"{\"format\":\"sketch-jsonl\",\"version\":1}\n{\"id\":\"x\",\"primitives\":[]}\n";
        let recs = read_records(&text[..]).unwrap();
        assert_eq!(recs[0].provenance, crate::sketch::primitive::Provenance::Synthetic);
    }
}
