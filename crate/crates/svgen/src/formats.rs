//! Text and binary file formats: metrics CSV, sequence files, manifests,
//! shape-prefixed raw arrays and CSV grids.

use std::fmt::Write as _;
use std::path::Path;

use svgen_core::seqfmt::{MultimodalSequence, SeqFormat, Vocabulary};
use svgen_core::synthdata::ManifestEntry;

use crate::error::CliError;

/// Formats a float so that it parses back to the same bits.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// A CSV table built in memory and written in one go.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines();
        let header: Vec<String> = lines.next().ok_or_else(|| CliError::Format(String::from("empty CSV")))?.split(',').map(String::from).collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let r: Vec<String> = l.split(',').map(String::from).collect();
            if r.len() != header.len() {
                return Err(CliError::Format(format!("CSV row {} has {} fields, header has {}", i + 2, r.len(), header.len())));
            }
            rows.push(r);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_text(path, &self.render())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// `format=<TVA|TAV|MASF> L=<n>` then the ids, a new line before each special token.
pub fn write_sequence(vocab: &Vocabulary, seq: &MultimodalSequence) -> String {
    let mut s = format!("format={} L={}\n", seq.format, seq.len());
    let mut line = Vec::new();
    for &id in &seq.ids {
        if vocab.special_of(id).is_some() && !line.is_empty() {
            s.push_str(&line.join(" "));
            s.push('\n');
            line.clear();
        }
        line.push(id.to_string());
    }
    if !line.is_empty() {
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_sequence(vocab: &Vocabulary, text: &str) -> Result<MultimodalSequence, CliError> {
    let bad = |m: String| CliError::Format(format!("sequence file: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(String::from("empty file")))?;
    let mut format = None;
    let mut len = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("format", v)) => format = Some(SeqFormat::from_name(v).map_err(|e| bad(e.to_string()))?),
            Some(("L", v)) => len = Some(v.parse::<usize>().map_err(|_| bad(format!("bad length `{v}`")))?),
            _ => return Err(bad(format!("unexpected header field `{field}`"))),
        }
    }
    let (format, len) = match (format, len) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(bad(String::from("header needs format= and L="))),
    };
    let ids = lines
        .flat_map(str::split_whitespace)
        .map(|w| w.parse::<usize>().map_err(|_| bad(format!("bad token `{w}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    if ids.len() != len {
        return Err(bad(format!("header says L={len} but {} ids follow", ids.len())));
    }
    Ok(MultimodalSequence::tag(vocab, format, ids)?)
}

/// One `seed class corrupt` line per clip, under `train` and `test` headers.
pub fn write_manifest(train: &[ManifestEntry], test: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for (name, entries) in [("train", train), ("test", test)] {
        let _ = writeln!(s, "[{name}]");
        for e in entries {
            let _ = writeln!(s, "{} {} {}", e.seed, e.class_id, u8::from(e.corrupt_av));
        }
    }
    s
}

pub fn read_manifest(text: &str) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>), CliError> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut target: Option<&mut Vec<ManifestEntry>> = None;
    for (no, line) in text.lines().enumerate() {
        let bad = || CliError::Format(format!("manifest line {}: `{line}`", no + 1));
        match line.trim() {
            "" => {}
            "[train]" => target = Some(&mut train),
            "[test]" => target = Some(&mut test),
            l => {
                let f: Vec<&str> = l.split_whitespace().collect();
                let [seed, class, corrupt] = f.as_slice() else { return Err(bad()) };
                let e = ManifestEntry {
                    seed: seed.parse().map_err(|_| bad())?,
                    class_id: class.parse().map_err(|_| bad())?,
                    corrupt_av: match *corrupt {
                        "0" => false,
                        "1" => true,
                        _ => return Err(bad()),
                    },
                };
                target.as_mut().ok_or_else(bad)?.push(e);
            }
        }
    }
    Ok((train, test))
}

/// `u32 rank`, `rank × u64 dims`, then the values, all little-endian.
pub fn raw_bytes(shape: &[usize], values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * shape.len() + 8 * values.len());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_raw(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>), CliError> {
    let bad = || CliError::Format(String::from("malformed raw array"));
    let rank = u32::from_le_bytes(bytes.get(..4).ok_or_else(bad)?.try_into().expect("4 bytes")) as usize;
    let mut at = 4;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(bytes.get(at..at + 8).ok_or_else(bad)?.try_into().expect("8 bytes"));
        shape.push(usize::try_from(d).map_err(|_| bad())?);
        at += 8;
    }
    let n: usize = shape.iter().product();
    if bytes.len() - at != n * 8 {
        return Err(bad());
    }
    let values = bytes[at..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((shape, values))
}

pub fn write_raw(path: &Path, shape: &[usize], values: &[f64]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, raw_bytes(shape, values)).map_err(|e| CliError::io(path, e))
}

/// A `rows × cols` row-major grid as CSV without a header.
pub fn grid_csv(rows: usize, cols: usize, values: &[f64]) -> String {
    let mut s = String::new();
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols].iter().map(|v| num(*v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Two grids of equal height joined left to right.
pub fn side_by_side(rows: usize, a: (usize, &[f64]), b: (usize, &[f64])) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * (a.0 + b.0));
    for r in 0..rows {
        out.extend_from_slice(&a.1[r * a.0..(r + 1) * a.0]);
        out.extend_from_slice(&b.1[r * b.0..(r + 1) * b.0]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut c = Csv::new(&["a", "b"]);
        c.push(vec![num(0.1), num(f64::MIN_POSITIVE)]);
        let back = Csv::parse(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.rows[0][0].parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn raw_round_trip() {
        let v = vec![1.5, -0.0, f64::MAX, 3.0, 4.0, 5.0];
        let (s, back) = parse_raw(&raw_bytes(&[2, 3], &v)).unwrap();
        assert_eq!(s, vec![2, 3]);
        assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(parse_raw(&raw_bytes(&[2, 3], &v)[..20]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let e = |seed, class_id, corrupt_av| ManifestEntry { seed, class_id, corrupt_av };
        let (tr, te) = (vec![e(u64::MAX, 3, true), e(0, 0, false)], vec![e(7, 1, false)]);
        assert_eq!(read_manifest(&write_manifest(&tr, &te)).unwrap(), (tr, te));
        assert!(read_manifest("1 2 0\n").is_err());
    }
}
