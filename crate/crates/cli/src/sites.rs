//! Site CSV ingestion and output.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use circgp::circular::{deg_to_rad, wrap};
use circgp::{Angle, SiteTable};

use crate::config::{CoordFormat, DirectionUnit};
use crate::error::{validation, CliError, CliResult};
use crate::format::{exact, sig6};

/// Mean Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

pub const SITE_COLUMNS: [&str; 4] = ["site_id", "x", "y", "direction"];
pub const TARGET_COLUMNS: [&str; 3] = ["target_id", "x", "y"];

/// Maps input coordinates to planar km.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Metres to km.
    Metres,
    /// Equirectangular tangent plane about `(lon0, lat0)`, degrees.
    Equirectangular { lon0: f64, lat0: f64 },
}

impl Projection {
    /// The projection for `format`, centred on the mean of `points` when
    /// they are longitude/latitude pairs.
    pub fn fit(format: CoordFormat, points: &[(f64, f64)]) -> Self {
        match format {
            CoordFormat::UtmM => Projection::Metres,
            CoordFormat::LonLatDeg => {
                let n = points.len().max(1) as f64;
                let lon0 = points.iter().map(|p| p.0).sum::<f64>() / n;
                let lat0 = points.iter().map(|p| p.1).sum::<f64>() / n;
                Projection::Equirectangular { lon0, lat0 }
            }
        }
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        match *self {
            Projection::Metres => (x / 1000.0, y / 1000.0),
            Projection::Equirectangular { lon0, lat0 } => {
                let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
                (k * (x - lon0) * lat0.to_radians().cos(), k * (y - lat0))
            }
        }
    }

    fn format(&self) -> CoordFormat {
        match self {
            Projection::Metres => CoordFormat::UtmM,
            Projection::Equirectangular { .. } => CoordFormat::LonLatDeg,
        }
    }
}

/// Header positions of `wanted` in `headers`.
fn columns(headers: &csv::StringRecord, wanted: &[&str], source: &str) -> CliResult<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h.trim() == *w)
                .ok_or_else(|| validation(format!("{source}: missing column `{w}`")))
        })
        .collect()
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn number(record: &csv::StringRecord, col: usize, name: &str, source: &str) -> CliResult<f64> {
    let raw = record.get(col).unwrap_or("").trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(validation(format!("{source}: line {}: cannot parse {name} `{raw}` as a finite number", line_of(record)))),
    }
}

fn check_coord(format: CoordFormat, (x, y): (f64, f64), line: u64, source: &str) -> CliResult<()> {
    if format == CoordFormat::LonLatDeg && !((-180.0..=360.0).contains(&x) && (-90.0..=90.0).contains(&y)) {
        return Err(validation(format!(
            "{source}: line {line}: ({x}, {y}) is not a longitude/latitude pair in degrees"
        )));
    }
    Ok(())
}

struct Rows {
    ids: Vec<String>,
    raw: Vec<(f64, f64)>,
    extra: Vec<f64>,
    lines: Vec<u64>,
}

/// Reads id, x, y and, when `cols` names a fourth column, its numeric value;
/// rejects duplicate ids with both line numbers.
fn read_rows<R: Read>(reader: R, cols: &[&str], format: CoordFormat, source: &str) -> CliResult<Rows> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| validation(format!("{source}: {e}")))?.clone();
    let idx = columns(&headers, cols, source)?;
    let mut rows = Rows { ids: Vec::new(), raw: Vec::new(), extra: Vec::new(), lines: Vec::new() };
    let mut first_line: HashMap<String, u64> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| validation(format!("{source}: {e}")))?;
        let line = line_of(&record);
        let id = record.get(idx[0]).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(validation(format!("{source}: line {line}: empty {}", cols[0])));
        }
        if let Some(prev) = first_line.insert(id.clone(), line) {
            return Err(validation(format!("{source}: duplicate {} `{id}` on lines {prev} and {line}", cols[0])));
        }
        let xy = (number(&record, idx[1], cols[1], source)?, number(&record, idx[2], cols[2], source)?);
        check_coord(format, xy, line, source)?;
        if let Some(&c) = idx.get(3) {
            rows.extra.push(number(&record, c, cols[3], source)?);
        }
        rows.ids.push(id);
        rows.raw.push(xy);
        rows.lines.push(line);
    }
    Ok(rows)
}

fn direction(v: f64, unit: DirectionUnit, line: u64, source: &str) -> CliResult<Angle> {
    match unit {
        DirectionUnit::Deg if !(0.0..=360.0).contains(&v) => Err(validation(format!(
            "{source}: line {line}: direction {v} is outside [0, 360] degrees"
        ))),
        DirectionUnit::Deg => Ok(deg_to_rad(v)?),
        DirectionUnit::Rad => Ok(wrap(v)?),
    }
}

/// Parses site CSV text; `source` labels error messages.
pub fn parse_sites<R: Read>(
    reader: R,
    format: CoordFormat,
    unit: DirectionUnit,
    source: &str,
) -> CliResult<(SiteTable, Projection)> {
    let rows = read_rows(reader, &SITE_COLUMNS, format, source)?;
    let proj = Projection::fit(format, &rows.raw);
    let coords = rows.raw.iter().map(|&p| proj.apply(p)).collect();
    let dirs = rows
        .extra
        .iter()
        .zip(&rows.lines)
        .map(|(&v, &line)| direction(v, unit, line, source))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((SiteTable::new(rows.ids, coords, dirs)?, proj))
}

/// Reads a `site_id,x,y,direction` CSV; coordinates become km and directions
/// wrapped radians.
pub fn read_sites(path: &Path, format: CoordFormat, unit: DirectionUnit) -> CliResult<SiteTable> {
    Ok(read_sites_projected(path, format, unit)?.0)
}

/// As [`read_sites`], also returning the projection so targets can share it.
pub fn read_sites_projected(
    path: &Path,
    format: CoordFormat,
    unit: DirectionUnit,
) -> CliResult<(SiteTable, Projection)> {
    let file = std::fs::File::open(path).map_err(CliError::io(path))?;
    parse_sites(file, format, unit, &path.display().to_string())
}

/// Kriging targets: ids and planar km coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub ids: Vec<String>,
    pub coords: Vec<(f64, f64)>,
}

pub fn parse_targets<R: Read>(reader: R, proj: &Projection, source: &str) -> CliResult<Targets> {
    let rows = read_rows(reader, &TARGET_COLUMNS, proj.format(), source)?;
    Ok(Targets { ids: rows.ids, coords: rows.raw.iter().map(|&p| proj.apply(p)).collect() })
}

/// Reads a `target_id,x,y` CSV in the data's coordinate system.
pub fn read_targets(path: &Path, proj: &Projection) -> CliResult<Targets> {
    let file = std::fs::File::open(path).map_err(CliError::io(path))?;
    parse_targets(file, proj, &path.display().to_string())
}

/// Writes sites as metres and degrees at six significant digits, the
/// default input format.
pub fn write_sites<W: Write>(out: W, sites: &SiteTable) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SITE_COLUMNS)?;
    for (i, id) in sites.ids().iter().enumerate() {
        let (x, y) = sites.coord(i);
        let deg = sites.directions()[i].degrees();
        w.write_record([id.clone(), sig6(x * 1000.0), sig6(y * 1000.0), sig6(deg)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes sites at full precision: km coordinates and radians, plus extra
/// named columns per site.
pub fn write_sites_exact<W: Write>(
    out: W,
    sites: &SiteTable,
    extra_names: &[&str],
    extra: &[Vec<String>],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["site_id", "x_km", "y_km", "direction_rad"];
    header.extend_from_slice(extra_names);
    w.write_record(&header)?;
    for (i, id) in sites.ids().iter().enumerate() {
        let (x, y) = sites.coord(i);
        let mut row = vec![id.clone(), exact(x), exact(y), exact(sites.directions()[i].radians())];
        row.extend(extra[i].iter().cloned());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
