//! ASCII XYZ and PLY readers/writers.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Point, PointCloud};
use crate::error::{Error, Result};

/// Formats a float with 9 significant digits in plain decimal notation.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn parse_triple(line: &str, lineno: usize) -> Result<Point> {
    let mut it = line.split_whitespace();
    let mut p = [0.0; 3];
    for c in p.iter_mut() {
        let tok = it.next().ok_or_else(|| Error::Parse { line: lineno, msg: "expected three coordinates".into() })?;
        *c = tok
            .parse()
            .map_err(|e| Error::Parse { line: lineno, msg: format!("{tok:?}: {e}") })?;
    }
    Ok(p)
}

pub fn read_xyz<R: Read>(reader: R) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        points.push(parse_triple(line, i + 1)?);
    }
    PointCloud::new(points)
}

pub fn write_xyz<W: Write>(mut writer: W, pc: &PointCloud) -> Result<()> {
    for p in &pc.points {
        writeln!(writer, "{} {} {}", fmt_sig9(p[0]), fmt_sig9(p[1]), fmt_sig9(p[2]))?;
    }
    Ok(())
}

/// Reads an ASCII PLY file, taking `x`, `y`, `z` from the vertex element and
/// skipping any other properties or elements.
pub fn read_ply<R: Read>(reader: R) -> Result<PointCloud> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(Error::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
        }
    };
    let (_, magic) = next("magic")?;
    if magic.trim() != "ply" {
        return Err(Error::Parse { line: 1, msg: "missing 'ply' magic".into() });
    }
    // (element name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    loop {
        let (ln, line) = next("header")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(Error::Parse { line: ln, msg: format!("unsupported format {fmt}") });
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| Error::Parse { line: ln, msg: "bad element count".into() })?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", ..] => {
                let el = elements.last_mut().ok_or(Error::Parse { line: ln, msg: "property before element".into() })?;
                el.2.push("<list>".into());
            }
            ["property", _ty, name] => {
                let el = elements.last_mut().ok_or(Error::Parse { line: ln, msg: "property before element".into() })?;
                el.2.push(name.to_string());
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let mut points = Vec::new();
    for (name, count, props) in &elements {
        let idx = |p: &str| props.iter().position(|q| q == p);
        let cols = if name == "vertex" {
            match (idx("x"), idx("y"), idx("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => return Err(Error::Parse { line: 0, msg: "vertex element lacks x/y/z".into() }),
            }
        } else {
            None
        };
        for _ in 0..*count {
            let (ln, line) = next("element data")?;
            if let Some(cols) = cols {
                let toks: Vec<&str> = line.split_whitespace().collect();
                let mut p = [0.0; 3];
                for (c, &col) in p.iter_mut().zip(&cols) {
                    let tok = toks.get(col).ok_or(Error::Parse { line: ln, msg: "short vertex row".into() })?;
                    *c = tok.parse().map_err(|e| Error::Parse { line: ln, msg: format!("{tok:?}: {e}") })?;
                }
                points.push(p);
            }
        }
    }
    PointCloud::new(points)
}

pub fn write_ply<W: Write>(mut writer: W, pc: &PointCloud) -> Result<()> {
    write!(
        writer,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        pc.len()
    )?;
    write_xyz(writer, pc)
}

/// Reads `.ply` or (anything else) `.xyz` based on the extension.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let file = fs::File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("ply") => read_ply(file),
        _ => read_xyz(file),
    }
}

pub fn write_cloud(path: &Path, pc: &PointCloud) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("ply") => write_ply(&mut file, pc)?,
        _ => write_xyz(&mut file, pc)?,
    }
    file.flush()?;
    Ok(())
}
