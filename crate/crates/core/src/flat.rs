//! Versioned flat text format shared by policy checkpoints and fitted click
//! models.
//!
//! ```text
//! logopt-flat v1
//! <name> <index> <rows> <cols>
//! <cols floats>          (repeated `rows` times)
//! ```
//!
//! Missing values are written as `nan`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const HEADER: &str = "logopt-flat v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub index: u64,
    pub rows: usize,
    pub cols: usize,
    /// Row-major values, `rows * cols` long.
    pub data: Vec<f64>,
}

impl Block {
    pub fn new(name: &str, index: u64, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "block {name} {index}: shape mismatch");
        Block {
            name: name.to_string(),
            index,
            rows,
            cols,
            data,
        }
    }
}

pub fn write_blocks(blocks: &[Block]) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for b in blocks {
        let _ = writeln!(out, "{} {} {} {}", b.name, b.index, b.rows, b.cols);
        for row in b.data.chunks(b.cols.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn read_blocks(text: &str) -> Result<Vec<Block>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        Some((n, h)) => return Err(Error::parse(n, format!("expected `{HEADER}`, found `{h}`"))),
        None => return Err(Error::invalid("empty flat file")),
    }
    let mut blocks = Vec::new();
    while let Some((n, header)) = lines.next() {
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::parse(n, "block header must be `<name> <index> <rows> <cols>`"));
        }
        let index: u64 = parts[1].parse().map_err(|_| Error::parse(n, "bad block index"))?;
        let rows: usize = parts[2].parse().map_err(|_| Error::parse(n, "bad row count"))?;
        let cols: usize = parts[3].parse().map_err(|_| Error::parse(n, "bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (m, row) = lines.next().ok_or_else(|| Error::parse(n, "block truncated"))?;
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::parse(m, format!("bad float `{tok}`")))?,
                );
            }
            if data.len() - before != cols {
                return Err(Error::parse(m, format!("expected {cols} values")));
            }
        }
        blocks.push(Block {
            name: parts[0].to_string(),
            index,
            rows,
            cols,
            data,
        });
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let blocks = vec![
            Block::new("layer", 0, 2, 3, vec![0.1, -2.5, 1e-300, 3.0, f64::NAN, 7.0]),
            Block::new("theta", 0, 1, 1, vec![1.0]),
        ];
        let text = write_blocks(&blocks);
        let back = read_blocks(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].data[0].to_bits(), 0.1f64.to_bits());
        assert!(back[0].data[4].is_nan());
        assert_eq!(back[1], blocks[1]);
    }

    #[test]
    fn rejects_wrong_header_and_short_rows() {
        assert!(read_blocks("nope\n").is_err());
        let bad = format!("{HEADER}\nlayer 0 1 3\n1 2\n");
        assert!(matches!(read_blocks(&bad), Err(Error::Parse { line: 3, .. })));
    }
}
