use std::io::Write;
use std::path::Path;

use super::GeometryError;

/// Named coordinate loop in Selig order.
#[derive(Debug, Clone, PartialEq)]
pub struct AirfoilCoordinates {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn parse_pair(line: &str) -> Option<(f64, f64)> {
    let mut it = line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty());
    let x = it.next()?.parse::<f64>().ok()?;
    let y = it.next()?.parse::<f64>().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((x, y))
}

/// Parse a Selig or Lednicer `.dat` file body.
///
/// Lednicer files are recognised by a point-count line (both values > 1)
/// right after the name; they are converted to Selig order.
pub fn parse_dat(text: &str) -> Result<AirfoilCoordinates, GeometryError> {
    let mut lines = text.lines();
    let name = lines
        .next()
        .map(|l| l.trim().to_string())
        .ok_or_else(|| GeometryError::Parse("empty file".into()))?;

    let mut blocks: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
    for (lineno, raw) in lines.enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            if !blocks.last().unwrap().is_empty() {
                blocks.push(Vec::new());
            }
            continue;
        }
        let pair = parse_pair(line).ok_or_else(|| {
            GeometryError::Parse(format!("line {}: expected 'x y', got '{line}'", lineno + 2))
        })?;
        blocks.last_mut().unwrap().push(pair);
    }
    blocks.retain(|b| !b.is_empty());
    let mut all: Vec<(f64, f64)> = blocks.iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(GeometryError::Parse("no coordinates".into()));
    }

    let (c0, c1) = all[0];
    let lednicer = c0 > 1.5 && c1 > 1.5 && c0.fract() == 0.0 && c1.fract() == 0.0;
    let points = if lednicer {
        let (nu, nl) = (c0 as usize, c1 as usize);
        all.remove(0);
        if all.len() != nu + nl {
            return Err(GeometryError::Parse(format!(
                "Lednicer header promises {} points, found {}",
                nu + nl,
                all.len()
            )));
        }
        let lower = all.split_off(nu);
        let mut pts: Vec<(f64, f64)> = all.into_iter().rev().collect();
        let skip = usize::from(lower.first() == pts.last());
        pts.extend(lower.into_iter().skip(skip));
        pts
    } else {
        all
    };
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(GeometryError::Parse("non-finite coordinate".into()));
    }
    Ok(AirfoilCoordinates { name, points })
}

pub fn read_dat(path: &Path) -> Result<AirfoilCoordinates, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_dat(&text)
}

pub fn write_selig<W: Write>(mut out: W, name: &str, points: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "{name}")?;
    for (x, y) in points {
        writeln!(out, "{x:>12.8} {y:>12.8}")?;
    }
    Ok(())
}
