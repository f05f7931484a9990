//! Text container for clip descriptors and trained dictionaries.
//!
//! ```text
//! # covmotion descriptors v1
//! # features: AMF d=19 off_diagonal=sqrt2
//! record	<video_id>	<clip_index>	<label>	<group>	<d>	<n>	<ridge>
//! cov	<(d²+d)/2 upper-triangle entries, row-major, unweighted>
//! log	<(d²+d)/2 log-descriptor entries, weighted as in the header>
//! ...
//! ```
//!
//! Dictionary files use the header `# covmotion dictionary v1` and add a
//! `# train_groups: g1,g2,...` line. Floats are written in shortest
//! round-trip exponent form, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::covariance::{ClipMeta, CovarianceDescriptor};
use crate::error::{Error, Result};
use crate::pnm::write_bytes_atomic;
use crate::spd::{from_upper_triangle, triangle_len, upper_triangle, LogDescriptor, OffDiagonalWeight};

pub const DESCRIPTOR_HEADER: &str = "# covmotion descriptors v1";
pub const DICTIONARY_HEADER: &str = "# covmotion dictionary v1";
pub const DESCRIPTOR_EXT: &str = "desc";
const FEATURES_PREFIX: &str = "# features:";
const GROUPS_PREFIX: &str = "# train_groups:";

/// One clip: its regularized covariance and log-Euclidean vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub cov: CovarianceDescriptor,
    pub log: LogDescriptor,
}

impl DescriptorRecord {
    pub fn meta(&self) -> &ClipMeta {
        &self.cov.meta
    }
}

/// Feature layout shared by every record of a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreHeader {
    pub features: String,
    pub dim: usize,
    pub weight: OffDiagonalWeight,
}

fn weight_name(w: OffDiagonalWeight) -> &'static str {
    match w {
        OffDiagonalWeight::Sqrt2 => "sqrt2",
        OffDiagonalWeight::Unit => "unit",
    }
}

fn push_floats(s: &mut String, tag: &str, values: impl IntoIterator<Item = f64>) {
    s.push_str(tag);
    for v in values {
        let _ = write!(s, "\t{v:e}");
    }
    s.push('\n');
}

fn write_body(s: &mut String, header: &StoreHeader, records: &[DescriptorRecord]) -> Result<()> {
    let _ = writeln!(
        s,
        "{FEATURES_PREFIX} {} d={} off_diagonal={}",
        header.features,
        header.dim,
        weight_name(header.weight)
    );
    for r in records {
        let m = &r.cov.meta;
        if r.cov.dim() != header.dim || r.log.dim != header.dim {
            return Err(Error::dims(header.dim, r.cov.dim()));
        }
        let _ = writeln!(
            s,
            "record\t{}\t{}\t{}\t{}\t{}\t{}\t{:e}",
            m.video_id,
            m.clip_index,
            m.label,
            m.group,
            r.cov.dim(),
            r.cov.sample_count,
            r.cov.ridge
        );
        push_floats(s, "cov", upper_triangle(&r.cov.matrix, OffDiagonalWeight::Unit));
        push_floats(s, "log", r.log.values.iter().copied());
    }
    Ok(())
}

pub fn descriptors_to_text(header: &StoreHeader, records: &[DescriptorRecord]) -> Result<String> {
    let mut s = format!("{DESCRIPTOR_HEADER}\n");
    write_body(&mut s, header, records)?;
    Ok(s)
}

struct Parser<'a> {
    path: &'a Path,
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Parser<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Parser {
            path,
            lines: text.lines().enumerate().peekable(),
        }
    }

    fn err(&self, line: usize, msg: impl std::fmt::Display) -> Error {
        Error::parse(self.path, format!("line {}: {msg}", line + 1))
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .ok_or_else(|| Error::parse(self.path, format!("unexpected end of file, expected {what}")))
    }

    fn expect_exact(&mut self, expected: &str) -> Result<()> {
        let (n, line) = self.next_line(expected)?;
        if line.trim_end() != expected {
            return Err(self.err(n, format!("expected `{expected}`")));
        }
        Ok(())
    }

    fn prefixed(&mut self, prefix: &str) -> Result<&'a str> {
        let (n, line) = self.next_line(prefix)?;
        line.strip_prefix(prefix)
            .map(str::trim)
            .ok_or_else(|| self.err(n, format!("expected `{prefix}`")))
    }

    fn header(&mut self) -> Result<StoreHeader> {
        let rest = self.prefixed(FEATURES_PREFIX)?;
        let bad = || Error::parse(self.path, format!("malformed features line `{rest}`"));
        let mut parts = rest.split_whitespace();
        let features = parts.next().ok_or_else(bad)?.to_owned();
        let dim = parts
            .next()
            .and_then(|p| p.strip_prefix("d="))
            .and_then(|d| d.parse().ok())
            .ok_or_else(bad)?;
        let weight = match parts.next().and_then(|p| p.strip_prefix("off_diagonal=")) {
            Some("sqrt2") => OffDiagonalWeight::Sqrt2,
            Some("unit") => OffDiagonalWeight::Unit,
            _ => return Err(bad()),
        };
        Ok(StoreHeader { features, dim, weight })
    }

    fn floats(&mut self, tag: &str, len: usize) -> Result<Vec<f64>> {
        let (n, line) = self.next_line(tag)?;
        let mut fields = line.split('\t');
        if fields.next() != Some(tag) {
            return Err(self.err(n, format!("expected `{tag}` line")));
        }
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| self.err(n, format!("bad number `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != len {
            return Err(self.err(n, format!("expected {len} values, got {}", values.len())));
        }
        Ok(values)
    }

    fn record(&mut self, header: &StoreHeader) -> Result<DescriptorRecord> {
        let (n, line) = self.next_line("record")?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 || f[0] != "record" {
            return Err(self.err(n, "expected record line with 7 fields"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| self.err(n, format!("bad integer `{s}`")));
        let meta = ClipMeta {
            video_id: f[1].to_owned(),
            clip_index: num(f[2])?,
            label: f[3].to_owned(),
            group: f[4].to_owned(),
        };
        let d = num(f[5])?;
        if d != header.dim {
            return Err(self.err(n, format!("record dimension {d} differs from header {}", header.dim)));
        }
        let sample_count = num(f[6])?;
        let ridge: f64 = f[7].parse().map_err(|_| self.err(n, format!("bad ridge `{}`", f[7])))?;
        let cov_values = self.floats("cov", triangle_len(d))?;
        let log_values = self.floats("log", triangle_len(d))?;
        let matrix = from_upper_triangle(&cov_values, OffDiagonalWeight::Unit)?;
        let log = LogDescriptor::new(log_values, meta.clone()).map_err(|e| self.err(n, e))?;
        Ok(DescriptorRecord {
            cov: CovarianceDescriptor {
                matrix,
                sample_count,
                ridge,
                meta,
            },
            log,
        })
    }

    fn records(&mut self, header: &StoreHeader) -> Result<Vec<DescriptorRecord>> {
        let mut out = Vec::new();
        while let Some((_, line)) = self.lines.peek() {
            if line.trim().is_empty() {
                self.lines.next();
                continue;
            }
            out.push(self.record(header)?);
        }
        Ok(out)
    }
}

pub fn parse_descriptors(path: &Path, text: &str) -> Result<(StoreHeader, Vec<DescriptorRecord>)> {
    let mut p = Parser::new(path, text);
    p.expect_exact(DESCRIPTOR_HEADER)?;
    let header = p.header()?;
    let records = p.records(&header)?;
    Ok((header, records))
}

pub fn write_descriptors(path: &Path, header: &StoreHeader, records: &[DescriptorRecord]) -> Result<()> {
    write_bytes_atomic(path, descriptors_to_text(header, records)?.as_bytes())
}

pub fn read_descriptors(path: &Path) -> Result<(StoreHeader, Vec<DescriptorRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_descriptors(path, &text)
}

/// Per-video descriptor file inside a store directory.
pub fn video_path(store: &Path, video_id: &str) -> PathBuf {
    store.join(format!("{video_id}.{DESCRIPTOR_EXT}"))
}

/// Training descriptors plus the groups they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryFile {
    pub header: StoreHeader,
    pub train_groups: Vec<String>,
    pub records: Vec<DescriptorRecord>,
}

impl DictionaryFile {
    pub fn to_text(&self) -> Result<String> {
        let mut s = format!("{DICTIONARY_HEADER}\n{GROUPS_PREFIX} {}\n", self.train_groups.join(","));
        write_body(&mut s, &self.header, &self.records)?;
        Ok(s)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut p = Parser::new(path, text);
        p.expect_exact(DICTIONARY_HEADER)?;
        let train_groups = p
            .prefixed(GROUPS_PREFIX)?
            .split(',')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .map(str::to_owned)
            .collect();
        let header = p.header()?;
        let records = p.records(&header)?;
        if records.is_empty() {
            return Err(Error::parse(path, "dictionary has no atoms"));
        }
        Ok(DictionaryFile {
            header,
            train_groups,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::log_descriptor;
    use nalgebra::DMatrix;

    fn record(video: &str, clip: usize, seed: f64) -> DescriptorRecord {
        let a = DMatrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64 * seed).sin());
        let m = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
        let meta = ClipMeta {
            video_id: video.into(),
            clip_index: clip,
            label: "rotate".into(),
            group: "g1".into(),
        };
        let log = log_descriptor(&m, OffDiagonalWeight::Sqrt2, meta.clone()).unwrap();
        DescriptorRecord {
            cov: CovarianceDescriptor {
                matrix: m,
                sample_count: 1234,
                ridge: 1.0 / 3.0 * 1e-7,
                meta,
            },
            log,
        }
    }

    fn header() -> StoreHeader {
        StoreHeader {
            features: "AMF".into(),
            dim: 3,
            weight: OffDiagonalWeight::Sqrt2,
        }
    }

    #[test]
    fn bit_exact_roundtrip() {
        let recs = vec![record("v1", 0, 0.3), record("v1", 1, 1.7)];
        let text = descriptors_to_text(&header(), &recs).unwrap();
        let (h, back) = parse_descriptors(Path::new("x.desc"), &text).unwrap();
        assert_eq!(h, header());
        assert_eq!(back, recs);
        assert_eq!(descriptors_to_text(&h, &back).unwrap(), text);
    }

    #[test]
    fn dictionary_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.txt");
        let d = DictionaryFile {
            header: header(),
            train_groups: vec!["g1".into(), "g3".into()],
            records: vec![record("a", 0, 0.5), record("b", 0, 0.9)],
        };
        d.save(&path).unwrap();
        assert_eq!(DictionaryFile::load(&path).unwrap(), d);
        // no temporary left behind
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn corrupt_file_names_path() {
        let recs = vec![record("v1", 0, 0.3)];
        let text = descriptors_to_text(&header(), &recs).unwrap();
        let truncated = &text[..text.trim_end().rfind('\n').unwrap()];
        let err = parse_descriptors(Path::new("bad/v1.desc"), truncated).unwrap_err();
        assert!(err.to_string().contains("bad/v1.desc"), "{err}");
        let garbled = text.replace("cov\t", "cov\tx");
        assert!(parse_descriptors(Path::new("v1.desc"), &garbled).is_err());
        assert!(parse_descriptors(Path::new("v1.desc"), "hello\n").is_err());
        assert!(DictionaryFile::parse(Path::new("d"), &text).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let h = StoreHeader { dim: 4, ..header() };
        assert!(descriptors_to_text(&h, &[record("v", 0, 0.1)]).is_err());
    }
}
