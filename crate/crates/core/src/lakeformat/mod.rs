//! BRCL: a single-row-group columnar file format.
//!
//! ```text
//! "BRCL" | chunk 0 | chunk 1 | ... | footer JSON | u32 footer_len | "BRCL"
//! ```
//!
//! All integers are little-endian. The footer is canonical JSON with sorted
//! keys, so identical input always yields identical bytes.

mod crc;
mod encoding;
mod file;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crc::crc32c;
pub use encoding::{choose_encoding, decode_column, encode_column};
pub use file::{
    read_columns, read_file, read_footer, write_columns, write_file, ByteSource, ColumnChunk, FileFooter, LakeFile,
    FORMAT_VERSION, MAGIC,
};

/// BYTES min/max stats keep at most this many bytes.
pub const STATS_TRUNCATE_BYTES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhysicalType {
    #[serde(rename = "INT64")]
    Int64,
    #[serde(rename = "BYTES")]
    Bytes,
    #[serde(rename = "BOOL")]
    Bool,
}

impl fmt::Display for PhysicalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhysicalType::Int64 => "INT64",
            PhysicalType::Bytes => "BYTES",
            PhysicalType::Bool => "BOOL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Encoding {
    Plain = 0,
    Rle = 1,
    Dict = 2,
    Delta = 3,
}

impl Encoding {
    pub fn is_legal_for(self, ty: PhysicalType) -> bool {
        self != Encoding::Delta || ty == PhysicalType::Int64
    }
}

impl From<Encoding> for u8 {
    fn from(e: Encoding) -> u8 {
        e as u8
    }
}

impl TryFrom<u8> for Encoding {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Ok(match v {
            0 => Encoding::Plain,
            1 => Encoding::Rle,
            2 => Encoding::Dict,
            3 => Encoding::Delta,
            _ => return Err(format!("unknown encoding id {v}")),
        })
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Plain => "PLAIN",
            Encoding::Rle => "RLE",
            Encoding::Dict => "DICT",
            Encoding::Delta => "DELTA",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub physical_type: PhysicalType,
}

impl ColumnSchema {
    pub fn new(name: &str, physical_type: PhysicalType) -> Self {
        ColumnSchema {
            name: name.to_string(),
            physical_type,
        }
    }
}

pub fn is_valid_column_name(name: &str) -> bool {
    let mut bytes = name.bytes();
    matches!(bytes.next(), Some(b'a'..=b'z' | b'_'))
        && bytes.all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'_'))
}

pub fn validate_schema(schema: &[ColumnSchema]) -> Result<(), FormatError> {
    let mut seen = std::collections::HashSet::new();
    for c in schema {
        if !is_valid_column_name(&c.name) {
            return Err(FormatError::InvalidSchema(format!("bad column name {:?}", c.name)));
        }
        if !seen.insert(c.name.as_str()) {
            return Err(FormatError::InvalidSchema(format!("duplicate column {:?}", c.name)));
        }
    }
    Ok(())
}

/// One cell. Ordering is only meaningful within a single physical type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Int64(i64),
    Bytes(Vec<u8>),
    Bool(bool),
}

impl Value {
    pub fn physical_type(&self) -> PhysicalType {
        match self {
            Value::Int64(_) => PhysicalType::Int64,
            Value::Bytes(_) => PhysicalType::Bytes,
            Value::Bool(_) => PhysicalType::Bool,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(v) => Some(*v),
            _ => None,
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Value::Int64(a), Value::Int64(b)) => a.partial_cmp(b),
            (Value::Bytes(a), Value::Bytes(b)) => a.partial_cmp(b),
            (Value::Bool(a), Value::Bool(b)) => a.partial_cmp(b),
            _ => None,
        }
    }
}

/// Footer form of a stat: INT64 as a JSON number, BOOL as a JSON bool,
/// BYTES as lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatValue {
    Int(i64),
    Bool(bool),
    Hex(String),
}

impl StatValue {
    pub fn from_value(v: &Value) -> Self {
        match v {
            Value::Int64(x) => StatValue::Int(*x),
            Value::Bool(b) => StatValue::Bool(*b),
            Value::Bytes(b) => StatValue::Hex(hex::encode(b)),
        }
    }

    pub fn to_value(&self, ty: PhysicalType) -> Option<Value> {
        match (self, ty) {
            (StatValue::Int(x), PhysicalType::Int64) => Some(Value::Int64(*x)),
            (StatValue::Bool(b), PhysicalType::Bool) => Some(Value::Bool(*b)),
            (StatValue::Hex(h), PhysicalType::Bytes) => hex::decode(h).ok().map(Value::Bytes),
            _ => None,
        }
    }
}

/// A whole column of one physical type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnValues {
    Int64(Vec<i64>),
    Bytes(Vec<Vec<u8>>),
    Bool(Vec<bool>),
}

impl ColumnValues {
    pub fn empty(ty: PhysicalType) -> Self {
        match ty {
            PhysicalType::Int64 => ColumnValues::Int64(Vec::new()),
            PhysicalType::Bytes => ColumnValues::Bytes(Vec::new()),
            PhysicalType::Bool => ColumnValues::Bool(Vec::new()),
        }
    }

    pub fn physical_type(&self) -> PhysicalType {
        match self {
            ColumnValues::Int64(_) => PhysicalType::Int64,
            ColumnValues::Bytes(_) => PhysicalType::Bytes,
            ColumnValues::Bool(_) => PhysicalType::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Int64(v) => v.len(),
            ColumnValues::Bytes(v) => v.len(),
            ColumnValues::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Option<Value> {
        match self {
            ColumnValues::Int64(v) => v.get(i).map(|x| Value::Int64(*x)),
            ColumnValues::Bytes(v) => v.get(i).map(|x| Value::Bytes(x.clone())),
            ColumnValues::Bool(v) => v.get(i).map(|x| Value::Bool(*x)),
        }
    }

    /// Appends `v`; false if its type does not match.
    pub fn push(&mut self, v: Value) -> bool {
        match (self, v) {
            (ColumnValues::Int64(c), Value::Int64(x)) => c.push(x),
            (ColumnValues::Bytes(c), Value::Bytes(x)) => c.push(x),
            (ColumnValues::Bool(c), Value::Bool(x)) => c.push(x),
            _ => return false,
        }
        true
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match self {
            ColumnValues::Int64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[Vec<u8>]> {
        match self {
            ColumnValues::Bytes(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<&[bool]> {
        match self {
            ColumnValues::Bool(v) => Some(v),
            _ => None,
        }
    }

    /// Exact (min, max); `None` when empty.
    pub fn min_max(&self) -> Option<(Value, Value)> {
        fn mm<T: Ord + Clone>(v: &[T]) -> Option<(T, T)> {
            Some((v.iter().min()?.clone(), v.iter().max()?.clone()))
        }
        match self {
            ColumnValues::Int64(v) => mm(v).map(|(a, b)| (Value::Int64(a), Value::Int64(b))),
            ColumnValues::Bytes(v) => mm(v).map(|(a, b)| (Value::Bytes(a), Value::Bytes(b))),
            ColumnValues::Bool(v) => mm(v).map(|(a, b)| (Value::Bool(a), Value::Bool(b))),
        }
    }
}

/// Footer stats: exact for INT64/BOOL and for BYTES up to 64 bytes. Longer
/// BYTES keep a 64-byte prefix for min and the smallest 64-byte-or-shorter
/// upper bound for max, so the pair still brackets every value.
pub fn footer_stats(values: &ColumnValues) -> Option<(Value, Value)> {
    let (min, max) = values.min_max()?;
    match (min, max) {
        (Value::Bytes(mut lo), Value::Bytes(hi)) => {
            lo.truncate(STATS_TRUNCATE_BYTES);
            Some((Value::Bytes(lo), Value::Bytes(truncate_upper(hi))))
        }
        other => Some(other),
    }
}

fn truncate_upper(mut v: Vec<u8>) -> Vec<u8> {
    if v.len() <= STATS_TRUNCATE_BYTES {
        return v;
    }
    let original = v.clone();
    v.truncate(STATS_TRUNCATE_BYTES);
    while let Some(last) = v.pop() {
        if last != 0xFF {
            v.push(last + 1);
            return v;
        }
    }
    // All 0xFF: no shorter upper bound exists.
    original
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("encoding {1} is not legal for {0}")]
    IllegalEncoding(PhysicalType, Encoding),
    #[error("corrupt chunk: {0}")]
    CorruptChunk(String),
    #[error("row {row} does not match schema at column {column:?}")]
    SchemaViolation { row: usize, column: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("bad magic")]
    BadMagic,
    #[error("checksum mismatch in column {0:?}")]
    ChecksumMismatch(String),
    #[error("corrupt footer: {0}")]
    FooterCorrupt(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("empty file: at least one row is required")]
    Empty,
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
}

impl FormatError {
    pub fn kind(&self) -> &'static str {
        match self {
            FormatError::IllegalEncoding(..) => "IllegalEncoding",
            FormatError::CorruptChunk(_) => "CorruptChunk",
            FormatError::SchemaViolation { .. } => "SchemaViolation",
            FormatError::InvalidSchema(_) => "InvalidSchema",
            FormatError::BadMagic => "BadMagic",
            FormatError::ChecksumMismatch(_) => "ChecksumMismatch",
            FormatError::FooterCorrupt(_) => "FooterCorrupt",
            FormatError::UnknownColumn(_) => "UnknownColumn",
            FormatError::Empty => "Empty",
            FormatError::Io(_) => "Io",
        }
    }
}
