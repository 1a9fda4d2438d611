//! CSV readers and writers for every table the pipeline exchanges.
//!
//! All tables carry a header row and a leading label column. Missing cells
//! are written as `NA` and accepted case-insensitively (empty cells also
//! count as missing). Floats are written in Rust's shortest round-trip
//! decimal form, so rewriting an unchanged table is byte-identical.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fuzzify::{FuzzyDataset, ResponseTimeMatrix};
use crate::fuzzy::FuzzyNumber;
use crate::irtree::RatingMatrix;

fn is_na(field: &str) -> bool {
    field.is_empty() || field.eq_ignore_ascii_case("na")
}

fn parse_f64(field: &str, path: &Path, row: usize, col: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Input(format!(
            "{}: row {}, column {col}: expected a number, got {field:?}",
            path.display(),
            row
        ))
    })
}

fn parse_opt_f64(field: &str, path: &Path, row: usize, col: &str) -> Result<Option<f64>> {
    let field = field.trim();
    if is_na(field) {
        Ok(None)
    } else {
        parse_f64(field, path, row, col).map(Some)
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))
}

fn header_fields(rdr: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    let header = rdr.headers().map_err(Error::from)?;
    if header.is_empty() {
        return Err(Error::Input(format!("{}: empty header", path.display())));
    }
    Ok(header.iter().map(str::to_string).collect())
}

fn check_width(record: &csv::StringRecord, want: usize, path: &Path, row: usize) -> Result<()> {
    if record.len() != want {
        return Err(Error::Input(format!(
            "{}: row {} has {} fields, expected {}",
            path.display(),
            row,
            record.len(),
            want
        )));
    }
    Ok(())
}

/// What to do with a cell that is present but unparseable or invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BadCell {
    /// Stop with an error naming the location.
    Fatal,
    /// Treat the cell as NA; the per-file count is logged and returned.
    TreatAsNa,
}

/// Ratings with their rater and item labels.
#[derive(Debug, Clone)]
pub struct RatingsTable {
    pub rater_ids: Vec<String>,
    pub item_names: Vec<String>,
    pub ratings: RatingMatrix,
    /// Unparseable or invalid cells converted to NA (zero in Fatal mode).
    pub n_bad_cells: usize,
}

/// Reads `rater_id,<item>,...` with integer categories (1-based) or NA.
pub fn read_ratings_csv(path: &Path, on_bad: BadCell) -> Result<RatingsTable> {
    let mut rdr = open_reader(path)?;
    let header = header_fields(&mut rdr, path)?;
    let item_names: Vec<String> = header[1..].to_vec();
    if item_names.is_empty() {
        return Err(Error::Input(format!("{}: no item columns", path.display())));
    }
    let mut rater_ids = Vec::new();
    let mut values: Vec<Option<u8>> = Vec::new();
    let mut missing = 0usize;
    let mut bad = 0usize;
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(Error::from)?;
        let row = idx + 2;
        check_width(&record, header.len(), path, row)?;
        rater_ids.push(record[0].to_string());
        for (j, field) in record.iter().skip(1).enumerate() {
            if is_na(field) {
                missing += 1;
                values.push(None);
                continue;
            }
            match field.parse::<u8>() {
                Ok(v) if v >= 1 => values.push(Some(v)),
                _ if on_bad == BadCell::TreatAsNa => {
                    bad += 1;
                    values.push(None);
                }
                _ => {
                    return Err(Error::Input(format!(
                        "{}: row {}, column {}: expected a category number, got {field:?}",
                        path.display(),
                        row,
                        item_names[j]
                    )))
                }
            }
        }
    }
    if missing > 0 {
        log::info!("{}: {} missing rating cells", path.display(), missing);
    }
    if bad > 0 {
        log::warn!("{}: {} unparseable rating cells treated as NA", path.display(), bad);
    }
    let ratings = RatingMatrix::new(rater_ids.len(), item_names.len(), values)?;
    Ok(RatingsTable { rater_ids, item_names, ratings, n_bad_cells: bad })
}

pub fn write_ratings_csv(
    path: &Path,
    rater_ids: &[String],
    item_names: &[String],
    ratings: &RatingMatrix,
) -> Result<()> {
    if rater_ids.len() != ratings.n_raters() || item_names.len() != ratings.n_items() {
        return Err(Error::Input("label counts do not match the rating matrix".into()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["rater_id".to_string()];
    header.extend_from_slice(item_names);
    wtr.write_record(&header)?;
    for (i, id) in rater_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        for j in 0..ratings.n_items() {
            rec.push(match ratings.get(i, j) {
                Some(v) => v.to_string(),
                None => "NA".to_string(),
            });
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Response times with their rater and item labels.
#[derive(Debug, Clone)]
pub struct TimesTable {
    pub rater_ids: Vec<String>,
    pub item_names: Vec<String>,
    pub times: ResponseTimeMatrix,
    /// Unparseable or nonpositive cells converted to NA (zero in Fatal mode).
    pub n_bad_cells: usize,
}

pub fn read_times_csv(path: &Path, on_bad: BadCell) -> Result<TimesTable> {
    let mut rdr = open_reader(path)?;
    let header = header_fields(&mut rdr, path)?;
    let item_names: Vec<String> = header[1..].to_vec();
    if item_names.is_empty() {
        return Err(Error::Input(format!("{}: no item columns", path.display())));
    }
    let mut rater_ids = Vec::new();
    let mut values: Vec<Option<f64>> = Vec::new();
    let mut missing = 0usize;
    let mut bad = 0usize;
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(Error::from)?;
        let row = idx + 2;
        check_width(&record, header.len(), path, row)?;
        rater_ids.push(record[0].to_string());
        for (j, field) in record.iter().skip(1).enumerate() {
            let field = field.trim();
            if is_na(field) {
                missing += 1;
                values.push(None);
                continue;
            }
            let parsed = field.parse::<f64>().ok().filter(|v| v.is_finite() && *v > 0.0);
            match parsed {
                Some(v) => values.push(Some(v)),
                None if on_bad == BadCell::TreatAsNa => {
                    bad += 1;
                    values.push(None);
                }
                None => {
                    return Err(Error::Input(format!(
                        "{}: row {}, column {}: expected a positive time, got {field:?}",
                        path.display(),
                        row,
                        item_names[j]
                    )))
                }
            }
        }
    }
    if missing > 0 {
        log::info!("{}: {} missing time cells", path.display(), missing);
    }
    if bad > 0 {
        log::warn!("{}: {} unparseable time cells treated as NA", path.display(), bad);
    }
    let times = ResponseTimeMatrix::new(rater_ids.len(), item_names.len(), values)?;
    Ok(TimesTable { rater_ids, item_names, times, n_bad_cells: bad })
}

pub fn write_times_csv(
    path: &Path,
    rater_ids: &[String],
    item_names: &[String],
    times: &ResponseTimeMatrix,
) -> Result<()> {
    if rater_ids.len() != times.n_raters() || item_names.len() != times.n_items() {
        return Err(Error::Input("label counts do not match the time matrix".into()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["rater_id".to_string()];
    header.extend_from_slice(item_names);
    wtr.write_record(&header)?;
    for (i, id) in rater_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        for j in 0..times.n_items() {
            rec.push(match times.get(i, j) {
                Some(v) => v.to_string(),
                None => "NA".to_string(),
            });
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the per-cell fuzzy ratings wide: four columns `_l,_c,_r,_w` per
/// item; cells without an observation are NA in all four.
pub fn write_fuzzy_cells_csv(
    path: &Path,
    rater_ids: &[String],
    item_names: &[String],
    cells: &FuzzyDataset,
) -> Result<()> {
    if rater_ids.len() != cells.n_raters() || item_names.len() != cells.n_items() {
        return Err(Error::Input("label counts do not match the fuzzy dataset".into()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["rater_id".to_string()];
    for name in item_names {
        for suffix in ["l", "c", "r", "w"] {
            header.push(format!("{name}_{suffix}"));
        }
    }
    wtr.write_record(&header)?;
    let fmt = |v: Option<f64>| match v {
        Some(v) => v.to_string(),
        None => "NA".to_string(),
    };
    for (i, id) in rater_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        for j in 0..cells.n_items() {
            rec.push(fmt(cells.l(i, j)));
            rec.push(fmt(cells.c(i, j)));
            rec.push(fmt(cells.r(i, j)));
            rec.push(fmt(cells.w(i, j)));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes one composite fuzzy rating per rater (`l,c,r,w`, or NA across).
pub fn write_composites_csv(
    path: &Path,
    rater_ids: &[String],
    composites: &[Option<FuzzyNumber>],
) -> Result<()> {
    if rater_ids.len() != composites.len() {
        return Err(Error::Input("label count does not match the composites".into()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["rater_id", "l", "c", "r", "w"])?;
    for (id, comp) in rater_ids.iter().zip(composites) {
        match comp {
            Some(f) => wtr.write_record([
                id.clone(),
                f.l().to_string(),
                f.c().to_string(),
                f.r().to_string(),
                f.omega().to_string(),
            ])?,
            None => wtr.write_record([id.as_str(), "NA", "NA", "NA", "NA"])?,
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a composite table back; raters with NA rows come back as None.
pub fn read_composites_csv(path: &Path) -> Result<(Vec<String>, Vec<Option<FuzzyNumber>>)> {
    let mut rdr = open_reader(path)?;
    let header = header_fields(&mut rdr, path)?;
    if header.len() != 5 {
        return Err(Error::Input(format!(
            "{}: expected columns rater_id,l,c,r,w",
            path.display()
        )));
    }
    let mut ids = Vec::new();
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(Error::from)?;
        let row = idx + 2;
        check_width(&record, 5, path, row)?;
        ids.push(record[0].to_string());
        let fields: Vec<Option<f64>> = (1..5)
            .map(|k| parse_opt_f64(&record[k], path, row, &header[k]))
            .collect::<Result<_>>()?;
        match (fields[0], fields[1], fields[2], fields[3]) {
            (Some(l), Some(c), Some(r), Some(w)) => out.push(Some(FuzzyNumber::new(l, c, r, w)?)),
            (None, None, None, None) => out.push(None),
            _ => {
                return Err(Error::Input(format!(
                    "{}: row {} mixes NA and numeric fuzzy parameters",
                    path.display(),
                    row
                )))
            }
        }
    }
    Ok((ids, out))
}

/// Writes a dense labeled matrix: `<row_label>,<col>,...` with one row per
/// matrix row. Used for trait scores, item parameters, and covariances.
pub fn write_matrix_csv(
    path: &Path,
    row_label: &str,
    row_ids: &[String],
    col_names: &[String],
    matrix: &DMatrix<f64>,
) -> Result<()> {
    if row_ids.len() != matrix.nrows() || col_names.len() != matrix.ncols() {
        return Err(Error::Input("label counts do not match the matrix".into()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec![row_label.to_string()];
    header.extend_from_slice(col_names);
    wtr.write_record(&header)?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        for j in 0..matrix.ncols() {
            rec.push(matrix[(i, j)].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a dense labeled matrix written by `write_matrix_csv`; NA is not
/// allowed here.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let mut rdr = open_reader(path)?;
    let header = header_fields(&mut rdr, path)?;
    let col_names: Vec<String> = header[1..].to_vec();
    if col_names.is_empty() {
        return Err(Error::Input(format!("{}: no data columns", path.display())));
    }
    let mut row_ids = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(Error::from)?;
        let row = idx + 2;
        check_width(&record, header.len(), path, row)?;
        row_ids.push(record[0].to_string());
        for (j, field) in record.iter().skip(1).enumerate() {
            data.push(parse_f64(field, path, row, &col_names[j])?);
        }
    }
    let matrix = DMatrix::from_row_slice(row_ids.len(), col_names.len(), &data);
    Ok((row_ids, col_names, matrix))
}

/// Reads any CSV as strings: header plus rows, all fields trimmed. The CLI
/// uses this for covariate tables whose column types a schema file decides.
pub fn read_table_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = open_reader(path)?;
    let header = header_fields(&mut rdr, path)?;
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(Error::from)?;
        check_width(&record, header.len(), path, idx + 2)?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
