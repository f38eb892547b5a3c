//! Text file formats.
//!
//! **Observation stream** (version 1), one record per line:
//!
//! ```text
//! # scenemap observations v1
//! t,x,y,d,w
//! 0,0.5,0.5,0.5,17
//! ```
//!
//! Fields are decimal text: timestamp in seconds, position in meters
//! (`d` is depth), and the word id. Further `#` lines are comments.
//!
//! **Label grid** (version 1), used for worlds, annotations and maps:
//!
//! ```text
//! # scenemap grid v1
//! <width> <height> <cell_size> [<origin_i> <origin_j>]
//! <row 0: width labels separated by spaces>
//! ...
//! ```
//!
//! The origin defaults to `0 0` when omitted; writers always emit it.
//!
//! **Preview**: plain-text portable graymap (`P2`) of a label grid, for
//! eyeballing only.
//!
//! **Codebook**: one descriptor per line as whitespace-separated decimals,
//! `#` comments allowed. Line `n` (ignoring comments) is word `n`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::LabelGrid;
use crate::model::WordObservation;

pub const OBSERVATIONS_MAGIC: &str = "# scenemap observations v1";
pub const OBSERVATIONS_HEADER: &str = "t,x,y,d,w";
pub const GRID_MAGIC: &str = "# scenemap grid v1";

fn parse_num<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{}`", field.trim())))
}

fn check_version(line: &str, magic: &str, lineno: usize) -> Result<()> {
    let kind = magic.rsplit_once(' ').map(|(k, _)| k).unwrap_or(magic);
    if let Some(rest) = line.strip_prefix(kind) {
        let version = rest.trim();
        if format!("{kind} {version}") != magic {
            return Err(Error::parse(lineno, format!("unsupported format version `{version}`")));
        }
    }
    Ok(())
}

pub fn write_observations<W: Write>(mut out: W, observations: &[WordObservation]) -> Result<()> {
    writeln!(out, "{OBSERVATIONS_MAGIC}")?;
    writeln!(out, "{OBSERVATIONS_HEADER}")?;
    for o in observations {
        writeln!(out, "{},{},{},{},{}", o.t, o.pos[0], o.pos[1], o.pos[2], o.word)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_observations<R: BufRead>(input: R) -> Result<Vec<WordObservation>> {
    let mut out = Vec::new();
    let mut seen_header = false;
    for (n, line) in input.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            check_version(trimmed, OBSERVATIONS_MAGIC, lineno)?;
            continue;
        }
        if !seen_header {
            let header: String = trimmed.chars().filter(|c| !c.is_whitespace()).collect();
            if header != OBSERVATIONS_HEADER {
                return Err(Error::parse(
                    lineno,
                    format!("expected header `{OBSERVATIONS_HEADER}`, found `{trimmed}`"),
                ));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(lineno, format!("expected 5 fields, found {}", fields.len())));
        }
        let t: f64 = parse_num(fields[0], lineno, "timestamp")?;
        let x: f64 = parse_num(fields[1], lineno, "x")?;
        let y: f64 = parse_num(fields[2], lineno, "y")?;
        let d: f64 = parse_num(fields[3], lineno, "depth")?;
        let w: u32 = parse_num(fields[4], lineno, "word id")?;
        if ![t, x, y, d].iter().all(|v| v.is_finite()) {
            return Err(Error::parse(lineno, "non-finite value"));
        }
        out.push(WordObservation::new(t, w, [x, y, d]));
    }
    Ok(out)
}

pub fn format_grid(grid: &LabelGrid) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{GRID_MAGIC}");
    let _ = writeln!(
        s,
        "{} {} {} {} {}",
        grid.width, grid.height, grid.cell_size, grid.origin[0], grid.origin[1]
    );
    if grid.width > 0 {
        for row in grid.labels.chunks(grid.width) {
            let mut first = true;
            for l in row {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{l}");
            }
            s.push('\n');
        }
    }
    s
}

pub fn write_grid<W: Write>(mut out: W, grid: &LabelGrid) -> Result<()> {
    out.write_all(format_grid(grid).as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Plain-text graymap of the labels; unlabeled cells are black.
pub fn format_pgm(grid: &LabelGrid) -> String {
    let max = grid.labels.iter().copied().max().unwrap_or(0).max(1);
    let mut s = String::new();
    let _ = writeln!(s, "P2\n{} {}\n{max}", grid.width, grid.height);
    if grid.width > 0 {
        for row in grid.labels.chunks(grid.width) {
            let line: Vec<String> = row.iter().map(|l| l.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
    }
    s
}

pub fn read_grid<R: BufRead>(input: R) -> Result<LabelGrid> {
    let mut header: Option<(usize, usize, f64, [i64; 2])> = None;
    let mut labels = Vec::new();
    let mut rows = 0usize;
    let mut header_line = 0;
    for (n, line) in input.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            check_version(trimmed, GRID_MAGIC, lineno)?;
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match header {
            None => {
                if fields.len() != 3 && fields.len() != 5 {
                    return Err(Error::parse(
                        lineno,
                        "grid header must be `width height cell_size [origin_i origin_j]`",
                    ));
                }
                let width = parse_num(fields[0], lineno, "width")?;
                let height = parse_num(fields[1], lineno, "height")?;
                let cell_size: f64 = parse_num(fields[2], lineno, "cell size")?;
                let origin = if fields.len() == 5 {
                    [
                        parse_num(fields[3], lineno, "origin i")?,
                        parse_num(fields[4], lineno, "origin j")?,
                    ]
                } else {
                    [0, 0]
                };
                header = Some((width, height, cell_size, origin));
                header_line = lineno;
            }
            Some((width, height, _, _)) => {
                if rows == height {
                    return Err(Error::parse(lineno, format!("more than {height} rows")));
                }
                if fields.len() != width {
                    return Err(Error::parse(
                        lineno,
                        format!("row has {} labels, expected {width}", fields.len()),
                    ));
                }
                for f in fields {
                    labels.push(parse_num(f, lineno, "label")?);
                }
                rows += 1;
            }
        }
    }
    let (width, height, cell_size, origin) =
        header.ok_or_else(|| Error::parse(1, "missing grid header"))?;
    let expected_rows = if width == 0 { rows } else { height };
    if rows != expected_rows {
        return Err(Error::parse(
            header_line,
            format!("header declares {height} rows, found {rows}"),
        ));
    }
    let grid = LabelGrid {
        origin,
        width,
        height,
        cell_size,
        labels,
    };
    grid.validate()?;
    Ok(grid)
}

pub fn read_codebook<R: BufRead>(input: R) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row = trimmed
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .map(|f| parse_num::<f64>(f, lineno, "descriptor value"))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    lineno,
                    format!("descriptor has {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_codebook<W: Write>(mut out: W, codebook: &[Vec<f64>]) -> Result<()> {
    for row in codebook {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::from(e).in_file(path))
}

pub fn load_observations(path: &Path) -> Result<Vec<WordObservation>> {
    read_observations(open(path)?).map_err(|e| e.in_file(path))
}

pub fn save_observations(path: &Path, observations: &[WordObservation]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::from(e).in_file(path))?;
    write_observations(std::io::BufWriter::new(file), observations).map_err(|e| e.in_file(path))
}

pub fn load_grid(path: &Path) -> Result<LabelGrid> {
    read_grid(open(path)?).map_err(|e| e.in_file(path))
}

pub fn save_grid(path: &Path, grid: &LabelGrid) -> Result<()> {
    std::fs::write(path, format_grid(grid)).map_err(|e| Error::from(e).in_file(path))
}

pub fn save_pgm(path: &Path, grid: &LabelGrid) -> Result<()> {
    std::fs::write(path, format_pgm(grid)).map_err(|e| Error::from(e).in_file(path))
}

pub fn load_codebook(path: &Path) -> Result<Vec<Vec<f64>>> {
    read_codebook(open(path)?).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_preview() {
        let g = LabelGrid::new(3, 2, 1.0, vec![0, 1, 2, 2, 0, 5]).unwrap();
        assert_eq!(format_pgm(&g), "P2\n3 2\n5\n0 1 2\n2 0 5\n");
    }

    #[test]
    fn observation_stream_round_trip() {
        let obs = vec![
            WordObservation::new(0.0, 3, [0.5, -1.25, 2.0]),
            WordObservation::new(1.5, 0, [1e-9, 3.0, 0.1]),
        ];
        let mut buf = Vec::new();
        write_observations(&mut buf, &obs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# scenemap observations v1\nt,x,y,d,w\n"));
        assert_eq!(read_observations(&buf[..]).unwrap(), obs);
    }

    #[test]
    fn observation_errors_carry_line_numbers() {
        let text = "t,x,y,d,w\n0,1,2,3,4\n0,1,two,3,4\n";
        match read_observations(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_header = "t,x,y,w\n";
        assert!(read_observations(bad_header.as_bytes()).is_err());
        let bad_version = "# scenemap observations v7\nt,x,y,d,w\n";
        assert!(read_observations(bad_version.as_bytes()).is_err());
    }

    #[test]
    fn grid_round_trip_is_byte_exact() {
        let grid = LabelGrid::new(3, 2, 0.25, vec![1, 0, 2, 3, 3, 1])
            .unwrap()
            .with_origin([-4, 7]);
        let text = format_grid(&grid);
        assert_eq!(text, "# scenemap grid v1\n3 2 0.25 -4 7\n1 0 2\n3 3 1\n");
        let back = read_grid(text.as_bytes()).unwrap();
        assert_eq!(back, grid);
        assert_eq!(format_grid(&back), text);
    }

    #[test]
    fn grid_header_without_origin() {
        let grid = read_grid("2 1 1\n5 6\n".as_bytes()).unwrap();
        assert_eq!(grid.origin, [0, 0]);
        assert_eq!(grid.labels, vec![5, 6]);
    }

    #[test]
    fn grid_shape_errors() {
        assert!(read_grid("2 2 1\n1 2\n".as_bytes()).is_err());
        assert!(read_grid("2 1 1\n1 2 3\n".as_bytes()).is_err());
        assert!(read_grid("".as_bytes()).is_err());
    }

    #[test]
    fn empty_grid() {
        let grid = LabelGrid::new(0, 0, 1.0, vec![]).unwrap();
        let back = read_grid(format_grid(&grid).as_bytes()).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn codebook_parsing() {
        let cb = read_codebook("# two words\n0 1 2\n3,4,5\n".as_bytes()).unwrap();
        assert_eq!(cb, vec![vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0]]);
        assert!(read_codebook("0 1\n0 1 2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn observations_survive_text(
            records in proptest::collection::vec(
                (-1e6f64..1e6, 0u32..1000, -1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3), 0..40)
        ) {
            let obs: Vec<WordObservation> = records
                .into_iter()
                .map(|(t, w, x, y, d)| WordObservation::new(t, w, [x, y, d]))
                .collect();
            let mut buf = Vec::new();
            write_observations(&mut buf, &obs).unwrap();
            prop_assert_eq!(read_observations(&buf[..]).unwrap(), obs);
        }
    }
}
