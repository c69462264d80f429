//! CSV codec: header `household,category,occasion,y,x1,...,xP`, integers throughout.
//!
//! Leading `# units=...` and `# flipped=...` comment lines carry the scale note.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, Household, Observation, ScaleNote};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 4] = ["household", "category", "occasion", "y"];

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Multiply covariates by this factor and round; the unit becomes `1 / factor`.
    pub rescale: Option<f64>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(path, LoadOptions::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text, opts)
}

fn parse_error(line: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse { line, column: column.to_string(), message: message.into() }
}

fn parse_directives(text: &str) -> Result<(Option<Vec<f64>>, Vec<usize>)> {
    let mut units = None;
    let mut flipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some(body) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        let body = body.trim();
        if let Some(v) = body.strip_prefix("units=") {
            let parsed: std::result::Result<Vec<f64>, _> =
                v.split(',').map(|s| s.trim().parse::<f64>()).collect();
            units = Some(parsed.map_err(|e| parse_error(i + 1, "units", e.to_string()))?);
        } else if let Some(v) = body.strip_prefix("flipped=") {
            if !v.trim().is_empty() {
                flipped = v
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_error(i + 1, "flipped", e.to_string()))?;
            }
        }
    }
    Ok((units, flipped))
}

fn parse_dataset(text: &str, opts: LoadOptions) -> Result<Dataset> {
    if let Some(f) = opts.rescale {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::Config(format!("rescale factor {f} must be > 0")));
        }
    }
    let (units, flipped) = parse_directives(text)?;
    let mut reader = ::csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(::csv::Trim::All)
        .has_headers(true)
        .from_reader(text.as_bytes());

    let header = reader.headers().map_err(|e| csv_error(&e, "header"))?.clone();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::NoHouseholds);
    }
    for (k, want) in FIXED_COLUMNS.iter().enumerate() {
        match header.get(k) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(Error::Schema {
                    column: got.to_string(),
                    message: format!("expected `{want}` in position {}", k + 1),
                })
            }
            None => {
                return Err(Error::Schema {
                    column: want.to_string(),
                    message: "missing column".into(),
                })
            }
        }
    }
    let p = header.len() - FIXED_COLUMNS.len();
    if p == 0 {
        return Err(Error::Schema { column: "x1".into(), message: "no covariate columns".into() });
    }
    for (k, got) in header.iter().skip(FIXED_COLUMNS.len()).enumerate() {
        if got != format!("x{}", k + 1) {
            return Err(Error::Schema {
                column: got.to_string(),
                message: format!("expected `x{}`", k + 1),
            });
        }
    }

    let mut households: Vec<Household> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(&e, "row"))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let int = |k: usize| -> Result<i64> {
            let cell = &rec[k];
            cell.parse::<i64>()
                .map_err(|_| parse_error(line, &header[k], format!("`{cell}` is not an integer")))
        };
        let id = rec[0]
            .parse::<u64>()
            .map_err(|_| parse_error(line, "household", format!("`{}` is not a non-negative integer", &rec[0])))?;
        let category = u32::try_from(int(1)?)
            .map_err(|_| parse_error(line, "category", "out of range"))?;
        let occasion = u32::try_from(int(2)?)
            .map_err(|_| parse_error(line, "occasion", "out of range"))?;
        let y = int(3)?;
        let mut x = Vec::with_capacity(p);
        for k in FIXED_COLUMNS.len()..header.len() {
            match opts.rescale {
                None => x.push(int(k)?),
                Some(f) => {
                    let cell = &rec[k];
                    let v: f64 = cell.parse().map_err(|_| {
                        parse_error(line, &header[k], format!("`{cell}` is not a number"))
                    })?;
                    x.push((v * f).round() as i64);
                }
            }
        }
        let slot = *index.entry(id).or_insert_with(|| {
            households.push(Household { id, observations: Vec::new() });
            households.len() - 1
        });
        households[slot].observations.push(Observation { category, occasion, y, x });
    }
    if households.is_empty() {
        return Err(Error::NoHouseholds);
    }

    let units = match (units, opts.rescale) {
        (_, Some(f)) => Some(vec![1.0 / f; p]),
        (Some(u), None) => {
            if u.len() != p {
                return Err(Error::Schema {
                    column: "units".into(),
                    message: format!("{} units for {p} covariates", u.len()),
                });
            }
            Some(u)
        }
        (None, None) => None,
    };
    let scale_note = if units.is_some() || !flipped.is_empty() {
        Some(ScaleNote { units: units.unwrap_or_else(|| vec![1.0; p]), flipped })
    } else {
        None
    };
    Ok(Dataset { households, n_attributes: p, scale_note })
}

fn csv_error(e: &::csv::Error, column: &str) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_error(line, column, e.to_string())
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_dataset(d))?;
    Ok(())
}

fn render_dataset(d: &Dataset) -> String {
    let mut s = String::new();
    if let Some(note) = &d.scale_note {
        let units: Vec<String> = note.units.iter().map(|u| format!("{u:?}")).collect();
        let _ = writeln!(s, "# units={}", units.join(","));
        if !note.flipped.is_empty() {
            let f: Vec<String> = note.flipped.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(s, "# flipped={}", f.join(","));
        }
    }
    s.push_str("household,category,occasion,y");
    for p in 1..=d.n_attributes {
        let _ = write!(s, ",x{p}");
    }
    s.push('\n');
    for h in &d.households {
        for o in &h.observations {
            let _ = write!(s, "{},{},{},{}", h.id, o.category, o.occasion, o.y);
            for v in &o.x {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_household_round_trip() {
        let text = "household,category,occasion,y,x1,x2\n1,1,1,0,1,2\n1,1,2,1,3,0\n2,1,1,1,2,2\n";
        let d = parse_dataset(text, LoadOptions::default()).unwrap();
        assert_eq!(d.households.len(), 2);
        assert_eq!(d.n_attributes, 2);
        assert_eq!(render_dataset(&d), text);
        let again = parse_dataset(&render_dataset(&d), LoadOptions::default()).unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn non_integer_cell_reports_position() {
        let text = "household,category,occasion,y,x1\n1,1,1,0,1\n2,1,1,1,1.5\n";
        match parse_dataset(text, LoadOptions::default()) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "x1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_inputs() {
        for text in ["", "household,category,occasion,y,x1\n"] {
            let e = parse_dataset(text, LoadOptions::default()).unwrap_err();
            assert!(matches!(e, Error::NoHouseholds), "{e:?}");
            assert_eq!(e.to_string(), "no households");
        }
    }

    #[test]
    fn header_mismatch_names_column() {
        let e = parse_dataset("household,cat,occasion,y,x1\n1,1,1,0,1\n", LoadOptions::default())
            .unwrap_err();
        assert!(matches!(e, Error::Schema { ref column, .. } if column == "cat"), "{e:?}");
        let e = parse_dataset("household,category,occasion,y,z\n", LoadOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Schema { ref column, .. } if column == "z"), "{e:?}");
    }

    #[test]
    fn rescale_and_units_round_trip() {
        let text = "household,category,occasion,y,x1\n1,1,1,0,0.25\n";
        let d = parse_dataset(text, LoadOptions { rescale: Some(4.0) }).unwrap();
        assert_eq!(d.households[0].observations[0].x, vec![1]);
        assert_eq!(d.units(), vec![0.25]);
        let again = parse_dataset(&render_dataset(&d), LoadOptions::default()).unwrap();
        assert_eq!(again, d);
    }
}
