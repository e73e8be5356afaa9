//! Line-oriented correspondence files, format version 1.
//!
//! The byte-level layout is described in `docs/matchfile.md`.

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use nalgebra::{Matrix3, Vector2, Vector3};
use planemerge_core::{Correspondence, GroundTruth, Intrinsics};
use thiserror::Error;

pub const MAGIC: &str = "planemerge-matches";
pub const VERSION: u32 = 1;
/// Ground-truth value marking an outlier.
pub const OUTLIER: i64 = -1;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        message: message.into(),
    })
}

/// Optional record columns after `id x1 y1 x2 y2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Columns {
    pub color: bool,
    pub gt: bool,
}

impl Columns {
    fn width(self) -> usize {
        5 + if self.color { 3 } else { 0 } + usize::from(self.gt)
    }
}

impl fmt::Display for Columns {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("columns id x1 y1 x2 y2")?;
        if self.color {
            f.write_str(" r g b")?;
        }
        if self.gt {
            f.write_str(" gt")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchFile {
    pub intrinsics: Option<Intrinsics>,
    pub image_size: Option<[u32; 2]>,
    pub matches: Vec<Correspondence>,
}

/// Non-fatal findings from parsing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseWarnings {
    pub messages: Vec<String>,
}

fn parse_f64(line: usize, name: &str, tok: &str) -> Result<f64, ParseError> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => err(line, format!("{name} is not finite: {tok:?}")),
        Err(_) => err(line, format!("{name} is not a number: {tok:?}")),
    }
}

fn parse_header(line: usize, text: &str) -> Result<(), ParseError> {
    let mut toks = text.split_ascii_whitespace();
    if toks.next() != Some(MAGIC) {
        return err(line, format!("expected header `{MAGIC} v{VERSION}`"));
    }
    let version = match toks.next().and_then(|v| v.strip_prefix('v')).map(str::parse::<u32>) {
        Some(Ok(v)) => v,
        _ => return err(line, "malformed version in header"),
    };
    if version != VERSION {
        return err(
            line,
            format!("unsupported match file version {version}; this reader understands version {VERSION} only"),
        );
    }
    if toks.next().is_some() {
        return err(line, "unexpected text after version");
    }
    Ok(())
}

fn parse_columns(line: usize, toks: &[&str]) -> Result<Columns, ParseError> {
    let rest = match toks {
        ["id", "x1", "y1", "x2", "y2", rest @ ..] => rest,
        _ => return err(line, "columns must start with `id x1 y1 x2 y2`"),
    };
    match rest {
        [] => Ok(Columns::default()),
        ["gt"] => Ok(Columns { color: false, gt: true }),
        ["r", "g", "b"] => Ok(Columns { color: true, gt: false }),
        ["r", "g", "b", "gt"] => Ok(Columns { color: true, gt: true }),
        _ => err(line, format!("unsupported optional columns {rest:?}")),
    }
}

fn parse_record(line: usize, toks: &[&str], cols: Columns) -> Result<Correspondence, ParseError> {
    let id = match toks[0].parse::<u64>() {
        Ok(id) => id,
        Err(_) => return err(line, format!("id is not an unsigned integer: {:?}", toks[0])),
    };
    if toks.len() < cols.width() {
        return err(line, format!("expected {} fields, found {}", cols.width(), toks.len()));
    }
    let v = |i: usize, name: &str| parse_f64(line, name, toks[i]);
    let mut c = Correspondence::new(
        id,
        Vector2::new(v(1, "x1")?, v(2, "y1")?),
        Vector2::new(v(3, "x2")?, v(4, "y2")?),
    );
    let mut next = 5;
    if cols.color {
        let rgb = Vector3::new(v(5, "r")?, v(6, "g")?, v(7, "b")?);
        if rgb.iter().any(|ch| !(0.0..=1.0).contains(ch)) {
            return err(line, "color channels must lie in [0, 1]");
        }
        c = c.with_color(rgb);
        next = 8;
    }
    if cols.gt {
        let gt = match toks[next].parse::<i64>() {
            Ok(OUTLIER) => GroundTruth::Outlier,
            Ok(p) if p >= 0 => GroundTruth::Plane(p as usize),
            _ => return err(line, format!("gt must be a plane index or {OUTLIER}: {:?}", toks[next])),
        };
        c = c.with_gt(gt);
    }
    Ok(c)
}

impl MatchFile {
    /// Parses a version 1 document.
    pub fn parse(text: &str) -> Result<(MatchFile, ParseWarnings), ParseError> {
        let mut warnings = ParseWarnings::default();
        let mut header_seen = false;
        let mut intrinsics = None;
        let mut image_size = None;
        let mut columns: Option<Columns> = None;
        let mut matches: Vec<Correspondence> = Vec::new();
        let mut ids = HashSet::new();
        let mut last_line = 0;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            last_line = line;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if !header_seen {
                parse_header(line, trimmed)?;
                header_seen = true;
                continue;
            }
            let toks: Vec<&str> = trimmed.split_ascii_whitespace().collect();
            let in_header = matches.is_empty();
            match toks[0] {
                "intrinsics" | "image" | "columns" if !in_header => {
                    return err(line, format!("`{}` must precede the first record", toks[0]));
                }
                "intrinsics" => {
                    if intrinsics.is_some() {
                        return err(line, "duplicate intrinsics");
                    }
                    if toks.len() != 10 {
                        return err(line, "intrinsics needs 9 values in row-major order");
                    }
                    let mut k = [0.0; 9];
                    for (i, t) in toks[1..].iter().enumerate() {
                        k[i] = parse_f64(line, "intrinsics entry", t)?;
                    }
                    match Intrinsics::from_matrix(Matrix3::from_row_slice(&k)) {
                        Ok(k) => intrinsics = Some(k),
                        Err(e) => return err(line, e.to_string()),
                    }
                }
                "image" => {
                    if image_size.is_some() {
                        return err(line, "duplicate image size");
                    }
                    let dims: Vec<u32> = toks[1..].iter().filter_map(|t| t.parse().ok()).collect();
                    match dims[..] {
                        [w, h] if toks.len() == 3 && w > 0 && h > 0 => image_size = Some([w, h]),
                        _ => return err(line, "image needs a positive width and height"),
                    }
                }
                "columns" => {
                    if columns.is_some() {
                        return err(line, "duplicate columns");
                    }
                    columns = Some(parse_columns(line, &toks[1..])?);
                }
                first if first.starts_with(|ch: char| ch.is_ascii_digit()) => {
                    let cols = columns.unwrap_or_default();
                    let c = parse_record(line, &toks, cols)?;
                    if !ids.insert(c.id) {
                        return err(line, format!("duplicate id {}", c.id));
                    }
                    if toks.len() > cols.width() {
                        warnings.messages.push(format!(
                            "line {line}: ignoring {} unknown trailing field(s)",
                            toks.len() - cols.width()
                        ));
                    }
                    matches.push(c);
                }
                other => return err(line, format!("unknown directive {other:?}")),
            }
        }
        if !header_seen {
            return err(last_line.max(1), format!("missing `{MAGIC} v{VERSION}` header"));
        }
        if matches.is_empty() {
            return err(last_line, "no correspondence records");
        }
        Ok((
            MatchFile {
                intrinsics,
                image_size,
                matches,
            },
            warnings,
        ))
    }

    /// Serializes to version 1. Optional columns are written when every
    /// match carries them.
    pub fn to_text(&self) -> String {
        let cols = Columns {
            color: !self.matches.is_empty() && self.matches.iter().all(|c| c.color_mean.is_some()),
            gt: !self.matches.is_empty() && self.matches.iter().all(|c| c.gt_plane.is_some()),
        };
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} v{VERSION}");
        if let Some(k) = &self.intrinsics {
            out.push_str("intrinsics");
            for r in 0..3 {
                for c in 0..3 {
                    let _ = write!(out, " {}", k.matrix()[(r, c)]);
                }
            }
            out.push('\n');
        }
        if let Some([w, h]) = self.image_size {
            let _ = writeln!(out, "image {w} {h}");
        }
        let _ = writeln!(out, "{cols}");
        for c in &self.matches {
            let _ = write!(out, "{} {} {} {} {}", c.id, c.x.x, c.x.y, c.x_prime.x, c.x_prime.y);
            if cols.color {
                let rgb = c.color_mean.expect("checked above");
                let _ = write!(out, " {} {} {}", rgb.x, rgb.y, rgb.z);
            }
            if cols.gt {
                let gt = match c.gt_plane.expect("checked above") {
                    GroundTruth::Plane(p) => p as i64,
                    GroundTruth::Outlier => OUTLIER,
                };
                let _ = write!(out, " {gt}");
            }
            out.push('\n');
        }
        out
    }
}
