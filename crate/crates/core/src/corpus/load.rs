use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{CorpusError, Dataset, InstructionSample, Turn};

/// Source label used when neither the record nor the caller names one.
pub const UNKNOWN_SOURCE: &str = "unknown";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: Option<i64>,
    #[serde(default)]
    instruction: Option<String>,
    input: Option<String>,
    output: Option<String>,
    #[serde(default)]
    turns: Vec<Turn>,
    source: Option<String>,
}

/// Loads a JSONL dataset. Ids follow file order starting at 0.
pub fn load_dataset(path: &Path, default_source: Option<&str>) -> Result<Dataset, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(BufReader::new(file), default_source).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn read_dataset<R: BufRead>(
    reader: R,
    default_source: Option<&str>,
) -> Result<Dataset, CorpusError> {
    let mut samples = Vec::new();
    let mut seen_ids: HashMap<i64, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if let Some(id) = record.id {
            if let Some(first) = seen_ids.insert(id, line_no) {
                return Err(CorpusError::DuplicateId {
                    line: line_no,
                    id,
                    first,
                });
            }
        }
        let source = record
            .source
            .or_else(|| default_source.map(str::to_owned))
            .unwrap_or_else(|| UNKNOWN_SOURCE.to_owned());
        let sample = InstructionSample {
            id: samples.len(),
            external_id: record.id,
            instruction: record.instruction.unwrap_or_default(),
            input: record.input.filter(|s| !s.is_empty()),
            output: record.output.unwrap_or_default(),
            turns: record.turns,
            source,
        };
        sample.validate().map_err(|message| CorpusError::Malformed {
            line: line_no,
            message,
        })?;
        samples.push(sample);
    }
    Ok(Dataset::new(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Dataset, CorpusError> {
        read_dataset(text.as_bytes(), Some("general"))
    }

    #[test]
    fn three_lines_get_file_order_ids() {
        let ds = read(concat!(
            r#"{"instruction":"a","output":"b"}"#,
            "\n",
            r#"{"instruction":"c","output":"d","source":"math"}"#,
            "\n",
            r#"{"turns":[{"role":"user","text":"hi"},{"role":"assistant","text":"yo"}]}"#,
            "\n"
        ))
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.iter().map(|s| s.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(ds.samples[0].source, "general");
        assert_eq!(ds.samples[1].source, "math");
        assert!(ds.samples[2].is_multi_turn());
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(read("").unwrap().is_empty());
    }

    #[test]
    fn missing_output_and_turns_names_line() {
        let err = read(concat!(
            r#"{"instruction":"a","output":"b"}"#,
            "\n",
            r#"{"instruction":"only"}"#
        ))
        .unwrap_err();
        match err {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_json_names_line() {
        let err = read("{\"instruction\":\"a\",\"output\":\"b\"}\n{oops").unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn duplicate_explicit_ids_rejected() {
        let err = read(concat!(
            r#"{"id":7,"instruction":"a","output":"b"}"#,
            "\n",
            r#"{"id":7,"instruction":"c","output":"d"}"#
        ))
        .unwrap_err();
        assert!(matches!(
            err,
            CorpusError::DuplicateId {
                line: 2,
                id: 7,
                first: 1
            }
        ));
    }

    #[test]
    fn explicit_ids_are_kept_as_external() {
        let ds = read(r#"{"id":42,"instruction":"a","output":"b"}"#).unwrap();
        assert_eq!(ds.samples[0].id, 0);
        assert_eq!(ds.samples[0].external_id, Some(42));
    }

    #[test]
    fn non_alternating_turns_rejected() {
        let err = read(
            r#"{"turns":[{"role":"user","text":"a"},{"role":"user","text":"b"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
    }
}
