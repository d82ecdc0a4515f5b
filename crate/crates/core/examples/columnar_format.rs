//! The BRCL columnar file: encodings, footer statistics, projection, CRC.
//!
//! cargo run --example columnar_format

use brc_lake::lakeformat::{
    choose_encoding, encode_column, read_file, read_footer, write_columns, ColumnSchema, ColumnValues, Encoding,
    PhysicalType,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 10_000;
    let schema = vec![
        ColumnSchema::new("event_time_us", PhysicalType::Int64),
        ColumnSchema::new("symbol", PhysicalType::Bytes),
        ColumnSchema::new("price_e8", PhysicalType::Int64),
        ColumnSchema::new("is_buy", PhysicalType::Bool),
    ];
    let columns = vec![
        ColumnValues::Int64((0..n).map(|i| 1_700_000_000_000_000 + i * 137).collect()),
        ColumnValues::Bytes((0..n).map(|i| ["BTC-USD", "ETH-USD", "SOL-USD"][i as usize % 3].into()).collect()),
        ColumnValues::Int64((0..n).map(|i| 3_000_000_000_000 + (i * 7919) % 10_007 - 5_000).collect()),
        ColumnValues::Bool((0..n).map(|i| (i / 100) % 2 == 0).collect()),
    ];
    let bytes = write_columns(&schema, &columns, "example")?;
    let footer = read_footer(&bytes)?;
    println!("file: {} bytes, {} rows", bytes.len(), footer.row_count);
    for (c, chunk) in schema.iter().zip(&footer.chunks) {
        println!(
            "  {:<14} {:<6} {:>6} bytes  crc32c {:08x}  min {:?} max {:?}",
            c.name,
            chunk.encoding.to_string(),
            chunk.byte_length,
            chunk.crc32c,
            chunk.min,
            chunk.max
        );
    }

    let symbols = &columns[1];
    assert_eq!(choose_encoding(symbols), Encoding::Dict);
    println!(
        "symbol column: PLAIN {} bytes, DICT {} bytes",
        encode_column(symbols, Encoding::Plain)?.len(),
        encode_column(symbols, Encoding::Dict)?.len()
    );

    let only_prices = read_file(&bytes, Some(&["price_e8"]))?;
    println!("projection read {} column(s)", only_prices.columns.len());

    let mut corrupt = bytes.clone();
    let target = &footer.chunks[2];
    corrupt[(target.byte_offset + 3) as usize] ^= 0x08;
    println!("after flipping one bit in price_e8: {:?}", read_file(&corrupt, None).err());
    println!("other columns still read: {}", read_file(&corrupt, Some(&["symbol"])).is_ok());
    Ok(())
}
