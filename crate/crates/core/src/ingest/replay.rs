use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde_json::Value;

use super::{IngestError, RawEvent, StreamKind};

/// Read a JSON Lines replay file. Blank lines are skipped; the first bad line
/// aborts the replay.
pub fn replay_file(path: impl AsRef<Path>) -> Result<Vec<RawEvent>, IngestError> {
    replay_reader(File::open(path)?)
}

pub fn replay_reader(reader: impl Read) -> Result<Vec<RawEvent>, IngestError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|_| IngestError::MalformedLine(line_no))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, line_no)?);
    }
    Ok(out)
}

fn parse_line(line: &str, line_no: usize) -> Result<RawEvent, IngestError> {
    let value: Value = serde_json::from_str(line).map_err(|_| IngestError::MalformedLine(line_no))?;
    let obj = value.as_object().ok_or(IngestError::MalformedLine(line_no))?;
    let missing = |name: &str| IngestError::MissingField(name.to_string(), line_no);

    let str_field = |name: &str| -> Result<String, IngestError> {
        match obj.get(name) {
            None | Some(Value::Null) => Err(missing(name)),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(IngestError::MalformedLine(line_no)),
        }
    };
    let source = str_field("source")?;
    let stream = str_field("stream")?;
    let raw_symbol = str_field("raw_symbol")?;
    let event_time_us = match obj.get("event_time_us") {
        None | Some(Value::Null) => return Err(missing("event_time_us")),
        Some(v) => v.as_i64().filter(|t| *t > 0).ok_or(IngestError::MalformedLine(line_no))?,
    };
    let payload_obj = match obj.get("payload") {
        None | Some(Value::Null) => return Err(missing("payload")),
        Some(Value::Object(m)) => m,
        Some(_) => return Err(IngestError::MalformedLine(line_no)),
    };
    let mut payload = std::collections::BTreeMap::new();
    for (k, v) in payload_obj {
        let s = match v {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            _ => return Err(IngestError::MalformedLine(line_no)),
        };
        payload.insert(k.clone(), s);
    }

    let kind = StreamKind::parse(&stream).ok_or(IngestError::MalformedLine(line_no))?;
    for key in kind.required_payload() {
        if !payload.contains_key(*key) {
            return Err(missing(key));
        }
    }

    Ok(RawEvent {
        source,
        stream,
        raw_symbol,
        event_time_us,
        payload,
        line_no: Some(line_no),
    })
}
