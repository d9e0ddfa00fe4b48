//! Reader for two- or three-column `x, y[, yerr]` CSV data.
//!
//! Lines starting with `#` are comments. An optional header row is
//! recognised when its first field is not a number; columns may then be
//! selected by name as well as by index.

use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("no column named `{0}`")]
    UnknownColumn(String),
    #[error("column index {0} out of range")]
    ColumnIndex(usize),
    #[error("no data rows")]
    Empty,
    #[error("csv: {0}")]
    Csv(String),
}

/// Column selector: zero-based index or header name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl FromStr for Column {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_owned()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Columns {
    pub x: Column,
    pub y: Column,
    pub yerr: Option<Column>,
}

impl Default for Columns {
    fn default() -> Self {
        Columns {
            x: Column::Index(0),
            y: Column::Index(1),
            yerr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XyData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub yerr: Option<Vec<f64>>,
}

fn resolve(c: &Column, header: Option<&[String]>, width: usize) -> Result<usize, DataError> {
    match c {
        Column::Index(i) if *i < width => Ok(*i),
        Column::Index(i) => Err(DataError::ColumnIndex(*i)),
        Column::Name(n) => header
            .and_then(|h| h.iter().position(|c| c == n))
            .ok_or_else(|| DataError::UnknownColumn(n.clone())),
    }
}

/// Parse with the default layout: x, y and, if every row has a third
/// column, yerr.
pub fn read_xy(text: &str) -> Result<XyData, DataError> {
    read_xy_columns(text, None)
}

pub fn read_xy_columns(text: &str, columns: Option<&Columns>) -> Result<XyData, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        let fields: Vec<String> = rec.iter().map(str::to_owned).collect();
        if fields.iter().all(String::is_empty) {
            continue;
        }
        let numeric = fields[0].parse::<f64>().is_ok();
        if !numeric && header.is_none() && rows.is_empty() {
            header = Some(fields);
            continue;
        }
        rows.push((i + 1, fields));
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let width = rows.iter().map(|(_, r)| r.len()).min().unwrap_or(0);
    let cols = match columns {
        Some(c) => c.clone(),
        None => {
            let all_three = rows.iter().all(|(_, r)| r.len() >= 3);
            Columns {
                yerr: all_three.then_some(Column::Index(2)),
                ..Columns::default()
            }
        }
    };
    let h = header.as_deref();
    let ix = resolve(&cols.x, h, width)?;
    let iy = resolve(&cols.y, h, width)?;
    let ie = cols.yerr.as_ref().map(|c| resolve(c, h, width)).transpose()?;
    let mut out = XyData {
        x: Vec::with_capacity(rows.len()),
        y: Vec::with_capacity(rows.len()),
        yerr: ie.map(|_| Vec::with_capacity(rows.len())),
    };
    for (row, fields) in &rows {
        let get = |j: usize, what: &str| -> Result<f64, DataError> {
            let s = &fields[j];
            let v: f64 = s.parse().map_err(|_| DataError::Row {
                row: *row,
                reason: format!("{what} `{s}` is not a number"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(DataError::Row {
                    row: *row,
                    reason: format!("{what} is not finite"),
                })
            }
        };
        out.x.push(get(ix, "x")?);
        out.y.push(get(iy, "y")?);
        if let (Some(j), Some(e)) = (ie, out.yerr.as_mut()) {
            let v = get(j, "yerr")?;
            if v <= 0.0 {
                return Err(DataError::Row {
                    row: *row,
                    reason: "yerr must be > 0".into(),
                });
            }
            e.push(v);
        }
    }
    Ok(out)
}
