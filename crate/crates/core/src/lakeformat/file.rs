use std::io;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{
    choose_encoding, crc32c, decode_column, encode_column, footer_stats, validate_schema, ColumnSchema, ColumnValues,
    Encoding, FormatError, StatValue, Value,
};

pub const MAGIC: &[u8; 4] = b"BRCL";
pub const FORMAT_VERSION: u32 = 1;
const CODEC_NONE: &str = "none";
const TAIL_LEN: u64 = 8;

/// Random-access byte source so readers fetch only the ranges they need.
#[allow(clippy::len_without_is_empty)]
pub trait ByteSource {
    fn len(&self) -> io::Result<u64>;
    fn read_range(&self, range: Range<u64>) -> io::Result<Vec<u8>>;
}

impl ByteSource for [u8] {
    fn len(&self) -> io::Result<u64> {
        Ok(<[u8]>::len(self) as u64)
    }

    fn read_range(&self, range: Range<u64>) -> io::Result<Vec<u8>> {
        let (s, e) = (range.start as usize, range.end as usize);
        self.get(s..e)
            .map(<[u8]>::to_vec)
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "range past end of buffer"))
    }
}

impl ByteSource for Vec<u8> {
    fn len(&self) -> io::Result<u64> {
        ByteSource::len(self.as_slice())
    }

    fn read_range(&self, range: Range<u64>) -> io::Result<Vec<u8>> {
        self.as_slice().read_range(range)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnChunk {
    pub encoding: Encoding,
    pub value_count: u32,
    pub byte_offset: u64,
    pub byte_length: u64,
    pub crc32c: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<StatValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<StatValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileFooter {
    pub format_version: u32,
    pub row_count: u64,
    pub schema: Vec<ColumnSchema>,
    pub chunks: Vec<ColumnChunk>,
    pub writer: String,
    pub codec: String,
}

impl FileFooter {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    /// Decoded (min, max) for a column.
    pub fn stats(&self, name: &str) -> Option<(Value, Value)> {
        let i = self.column_index(name)?;
        let ty = self.schema[i].physical_type;
        let c = &self.chunks[i];
        Some((c.min.as_ref()?.to_value(ty)?, c.max.as_ref()?.to_value(ty)?))
    }

    fn validate(&self, data_end: u64) -> Result<(), FormatError> {
        let bad = |m: String| Err(FormatError::FooterCorrupt(m));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        if self.codec != CODEC_NONE {
            return bad(format!("unsupported codec {:?}", self.codec));
        }
        validate_schema(&self.schema).or_else(|e| bad(e.to_string()))?;
        if self.chunks.len() != self.schema.len() {
            return bad(format!("{} chunks for {} columns", self.chunks.len(), self.schema.len()));
        }
        for (c, s) in self.chunks.iter().zip(&self.schema) {
            if u64::from(c.value_count) != self.row_count {
                return bad(format!("column {:?} has {} values, row_count {}", s.name, c.value_count, self.row_count));
            }
            let end = c.byte_offset.checked_add(c.byte_length);
            if c.byte_offset < MAGIC.len() as u64 || end.is_none_or(|e| e > data_end) {
                return bad(format!("column {:?} chunk range out of bounds", s.name));
            }
            if !c.encoding.is_legal_for(s.physical_type) {
                return bad(format!("column {:?}: {} on {}", s.name, c.encoding, s.physical_type));
            }
        }
        Ok(())
    }
}

/// Decoded file, possibly projected.
#[derive(Debug, Clone, PartialEq)]
pub struct LakeFile {
    pub footer: FileFooter,
    pub columns: Vec<(ColumnSchema, ColumnValues)>,
}

impl LakeFile {
    pub fn column(&self, name: &str) -> Option<&ColumnValues> {
        self.columns.iter().find(|(s, _)| s.name == name).map(|(_, v)| v)
    }

    pub fn row_count(&self) -> usize {
        self.footer.row_count as usize
    }

    /// Row-major view over the decoded columns.
    pub fn rows(&self) -> Vec<Vec<Value>> {
        (0..self.row_count())
            .map(|i| self.columns.iter().map(|(_, c)| c.get(i).expect("column length = row_count")).collect())
            .collect()
    }
}

pub fn write_file(rows: &[Vec<Value>], schema: &[ColumnSchema], writer: &str) -> Result<Vec<u8>, FormatError> {
    validate_schema(schema)?;
    let mut columns: Vec<ColumnValues> = schema.iter().map(|c| ColumnValues::empty(c.physical_type)).collect();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != schema.len() {
            let column = schema.get(row.len()).map_or_else(|| "<extra>".to_string(), |c| c.name.clone());
            return Err(FormatError::SchemaViolation { row: r, column });
        }
        for ((col, v), s) in columns.iter_mut().zip(row).zip(schema) {
            if !col.push(v.clone()) {
                return Err(FormatError::SchemaViolation {
                    row: r,
                    column: s.name.clone(),
                });
            }
        }
    }
    write_columns(schema, &columns, writer)
}

pub fn write_columns(schema: &[ColumnSchema], columns: &[ColumnValues], writer: &str) -> Result<Vec<u8>, FormatError> {
    validate_schema(schema)?;
    if columns.len() != schema.len() {
        return Err(FormatError::InvalidSchema(format!(
            "{} columns for {} schema entries",
            columns.len(),
            schema.len()
        )));
    }
    let row_count = columns.first().map_or(0, ColumnValues::len);
    if row_count == 0 {
        return Err(FormatError::Empty);
    }
    let value_count = u32::try_from(row_count)
        .map_err(|_| FormatError::InvalidSchema(format!("{row_count} rows exceed the u32 chunk limit")))?;
    for (c, s) in columns.iter().zip(schema) {
        if c.physical_type() != s.physical_type || c.len() != row_count {
            let row = c.len().min(row_count);
            return Err(FormatError::SchemaViolation {
                row,
                column: s.name.clone(),
            });
        }
    }

    let mut out = MAGIC.to_vec();
    let mut chunks = Vec::with_capacity(columns.len());
    for c in columns {
        let encoding = choose_encoding(c);
        let bytes = encode_column(c, encoding)?;
        let (min, max) = footer_stats(c).expect("non-empty column");
        chunks.push(ColumnChunk {
            encoding,
            value_count,
            byte_offset: out.len() as u64,
            byte_length: bytes.len() as u64,
            crc32c: crc32c(&bytes),
            min: Some(StatValue::from_value(&min)),
            max: Some(StatValue::from_value(&max)),
        });
        out.extend_from_slice(&bytes);
    }
    let footer = FileFooter {
        format_version: FORMAT_VERSION,
        row_count: row_count as u64,
        schema: schema.to_vec(),
        chunks,
        writer: writer.to_string(),
        codec: CODEC_NONE.to_string(),
    };
    // serde_json::Value objects are BTreeMaps: keys come out sorted.
    let json = serde_json::to_value(&footer).expect("footer serializes");
    let json = serde_json::to_vec(&json).expect("footer serializes");
    out.extend_from_slice(&json);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    Ok(out)
}

/// Reads and validates the footer: three small reads (leading magic, tail,
/// footer body).
pub fn read_footer<S: ByteSource + ?Sized>(src: &S) -> Result<FileFooter, FormatError> {
    let len = src.len()?;
    if len < MAGIC.len() as u64 + TAIL_LEN {
        return Err(FormatError::BadMagic);
    }
    if src.read_range(0..4)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let tail = src.read_range(len - TAIL_LEN..len)?;
    if &tail[4..] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let footer_len = u64::from(u32::from_le_bytes(tail[..4].try_into().unwrap()));
    let data_end = (len - TAIL_LEN)
        .checked_sub(footer_len)
        .filter(|e| *e >= MAGIC.len() as u64)
        .ok_or_else(|| FormatError::FooterCorrupt(format!("footer length {footer_len} exceeds file")))?;
    let body = src.read_range(data_end..len - TAIL_LEN)?;
    let footer: FileFooter =
        serde_json::from_slice(&body).map_err(|e| FormatError::FooterCorrupt(e.to_string()))?;
    footer.validate(data_end)?;
    Ok(footer)
}

/// Fetches, checksums and decodes only the projected chunks, in schema order.
pub fn read_columns<S: ByteSource + ?Sized>(
    src: &S,
    footer: &FileFooter,
    projection: Option<&[&str]>,
) -> Result<Vec<(ColumnSchema, ColumnValues)>, FormatError> {
    if let Some(p) = projection {
        if let Some(missing) = p.iter().find(|n| footer.column_index(n).is_none()) {
            return Err(FormatError::UnknownColumn(missing.to_string()));
        }
    }
    let mut out = Vec::new();
    for (schema, chunk) in footer.schema.iter().zip(&footer.chunks) {
        if projection.is_some_and(|p| !p.contains(&schema.name.as_str())) {
            continue;
        }
        let bytes = src.read_range(chunk.byte_offset..chunk.byte_offset + chunk.byte_length)?;
        if crc32c(&bytes) != chunk.crc32c {
            return Err(FormatError::ChecksumMismatch(schema.name.clone()));
        }
        let values = decode_column(&bytes, schema.physical_type, chunk.encoding, chunk.value_count as usize)?;
        out.push((schema.clone(), values));
    }
    Ok(out)
}

pub fn read_file<S: ByteSource + ?Sized>(src: &S, projection: Option<&[&str]>) -> Result<LakeFile, FormatError> {
    let footer = read_footer(src)?;
    let columns = read_columns(src, &footer, projection)?;
    Ok(LakeFile { footer, columns })
}
