use std::collections::HashMap;
use std::hash::Hash;

use super::{ColumnValues, Encoding, FormatError, PhysicalType};

fn corrupt(msg: impl Into<String>) -> FormatError {
    FormatError::CorruptChunk(msg.into())
}

fn zigzag(n: i64) -> u64 {
    ((n << 1) ^ (n >> 63)) as u64
}

fn unzigzag(n: u64) -> i64 {
    ((n >> 1) as i64) ^ -((n & 1) as i64)
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(corrupt(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, FormatError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64, FormatError> {
        let mut v = 0u64;
        for i in 0..10 {
            let b = self.take(1)?[0];
            let bits = (b & 0x7F) as u64;
            // The 10th byte may only carry the top bit of a u64.
            if i == 9 && (b > 1) {
                return Err(corrupt("varint overflow"));
            }
            v |= bits << (7 * i);
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(corrupt("varint overflow"))
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(corrupt(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// Per-type PLAIN codec for a single value.
trait Plain: Sized + Clone + Eq + Hash {
    fn put(&self, out: &mut Vec<u8>);
    fn get(r: &mut Reader<'_>) -> Result<Self, FormatError>;
}

impl Plain for i64 {
    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(r: &mut Reader<'_>) -> Result<Self, FormatError> {
        r.i64()
    }
}

impl Plain for Vec<u8> {
    fn put(&self, out: &mut Vec<u8>) {
        let len = u32::try_from(self.len()).expect("BYTES value longer than u32::MAX");
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(self);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self, FormatError> {
        let n = r.u32()? as usize;
        Ok(r.take(n)?.to_vec())
    }
}

impl Plain for bool {
    fn put(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
    fn get(r: &mut Reader<'_>) -> Result<Self, FormatError> {
        match r.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(corrupt(format!("BOOL byte {b:#04x}"))),
        }
    }
}

fn enc_plain<T: Plain>(v: &[T], out: &mut Vec<u8>) {
    for x in v {
        x.put(out);
    }
}

fn enc_rle<T: Plain>(v: &[T], out: &mut Vec<u8>) {
    let mut i = 0;
    while i < v.len() {
        let mut j = i + 1;
        while j < v.len() && v[j] == v[i] && j - i < u32::MAX as usize {
            j += 1;
        }
        out.extend_from_slice(&((j - i) as u32).to_le_bytes());
        v[i].put(out);
        i = j;
    }
}

fn enc_dict<T: Plain>(v: &[T], out: &mut Vec<u8>) {
    let mut index: HashMap<&T, u32> = HashMap::new();
    let mut dict: Vec<&T> = Vec::new();
    let ids: Vec<u32> = v
        .iter()
        .map(|x| {
            *index.entry(x).or_insert_with(|| {
                dict.push(x);
                (dict.len() - 1) as u32
            })
        })
        .collect();
    out.extend_from_slice(&(dict.len() as u32).to_le_bytes());
    for d in dict {
        d.put(out);
    }
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
}

fn enc_delta(v: &[i64], out: &mut Vec<u8>) {
    let Some(first) = v.first() else { return };
    out.extend_from_slice(&first.to_le_bytes());
    for w in v.windows(2) {
        put_varint(out, zigzag(w[1].wrapping_sub(w[0])));
    }
}

fn dec_plain<T: Plain>(r: &mut Reader<'_>, n: usize) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::with_capacity(n.min(r.remaining()));
    for _ in 0..n {
        out.push(T::get(r)?);
    }
    Ok(out)
}

fn dec_rle<T: Plain>(r: &mut Reader<'_>, n: usize) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::with_capacity(n.min(r.remaining()));
    while out.len() < n {
        let run = r.u32()? as usize;
        if run == 0 || out.len() + run > n {
            return Err(corrupt(format!("RLE run of {run} at value {} of {n}", out.len())));
        }
        let v = T::get(r)?;
        out.extend(std::iter::repeat_n(v, run));
    }
    Ok(out)
}

fn dec_dict<T: Plain>(r: &mut Reader<'_>, n: usize) -> Result<Vec<T>, FormatError> {
    let size = r.u32()? as usize;
    let dict: Vec<T> = dec_plain(r, size)?;
    let mut out = Vec::with_capacity(n.min(r.remaining() / 4 + 1));
    for _ in 0..n {
        let i = r.u32()? as usize;
        let v = dict
            .get(i)
            .ok_or_else(|| corrupt(format!("dictionary index {i} >= dict_size {size}")))?;
        out.push(v.clone());
    }
    Ok(out)
}

fn dec_delta(r: &mut Reader<'_>, n: usize) -> Result<Vec<i64>, FormatError> {
    let mut out = Vec::with_capacity(n.min(r.remaining()));
    if n == 0 {
        return Ok(out);
    }
    let mut cur = r.i64()?;
    out.push(cur);
    for _ in 1..n {
        cur = cur.wrapping_add(unzigzag(r.varint()?));
        out.push(cur);
    }
    Ok(out)
}

fn enc_generic<T: Plain>(v: &[T], encoding: Encoding, out: &mut Vec<u8>) {
    match encoding {
        Encoding::Plain => enc_plain(v, out),
        Encoding::Rle => enc_rle(v, out),
        Encoding::Dict => enc_dict(v, out),
        Encoding::Delta => unreachable!("checked by caller"),
    }
}

fn dec_generic<T: Plain>(r: &mut Reader<'_>, encoding: Encoding, n: usize) -> Result<Vec<T>, FormatError> {
    match encoding {
        Encoding::Plain => dec_plain(r, n),
        Encoding::Rle => dec_rle(r, n),
        Encoding::Dict => dec_dict(r, n),
        Encoding::Delta => unreachable!("checked by caller"),
    }
}

pub fn encode_column(values: &ColumnValues, encoding: Encoding) -> Result<Vec<u8>, FormatError> {
    let ty = values.physical_type();
    if !encoding.is_legal_for(ty) {
        return Err(FormatError::IllegalEncoding(ty, encoding));
    }
    let mut out = Vec::new();
    match values {
        ColumnValues::Int64(v) if encoding == Encoding::Delta => enc_delta(v, &mut out),
        ColumnValues::Int64(v) => enc_generic(v, encoding, &mut out),
        ColumnValues::Bytes(v) => enc_generic(v, encoding, &mut out),
        ColumnValues::Bool(v) => enc_generic(v, encoding, &mut out),
    }
    Ok(out)
}

pub fn decode_column(
    bytes: &[u8],
    ty: PhysicalType,
    encoding: Encoding,
    value_count: usize,
) -> Result<ColumnValues, FormatError> {
    if !encoding.is_legal_for(ty) {
        return Err(FormatError::IllegalEncoding(ty, encoding));
    }
    let mut r = Reader::new(bytes);
    let values = match ty {
        PhysicalType::Int64 if encoding == Encoding::Delta => ColumnValues::Int64(dec_delta(&mut r, value_count)?),
        PhysicalType::Int64 => ColumnValues::Int64(dec_generic(&mut r, encoding, value_count)?),
        PhysicalType::Bytes => ColumnValues::Bytes(dec_generic(&mut r, encoding, value_count)?),
        PhysicalType::Bool => ColumnValues::Bool(dec_generic(&mut r, encoding, value_count)?),
    };
    r.finish()?;
    Ok(values)
}

fn distinct<T: Eq + Hash>(v: &[T]) -> usize {
    v.iter().collect::<std::collections::HashSet<_>>().len()
}

/// Sorted INT64 → DELTA; low cardinality (≤ max(1, n/10) distinct) → DICT
/// for BYTES, RLE otherwise; else PLAIN.
pub fn choose_encoding(values: &ColumnValues) -> Encoding {
    if let ColumnValues::Int64(v) = values {
        if v.windows(2).all(|w| w[0] <= w[1]) {
            return Encoding::Delta;
        }
    }
    let threshold = (values.len() / 10).max(1);
    let d = match values {
        ColumnValues::Int64(v) => distinct(v),
        ColumnValues::Bytes(v) => distinct(v),
        ColumnValues::Bool(v) => distinct(v),
    };
    if d <= threshold {
        match values {
            ColumnValues::Bytes(_) => Encoding::Dict,
            _ => Encoding::Rle,
        }
    } else {
        Encoding::Plain
    }
}
