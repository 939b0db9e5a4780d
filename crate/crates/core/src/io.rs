//! CSV and text persistence for fields, receiver data, error samples,
//! mixture models, inversion reports and run manifests.
//!
//! Floats are written with `{:e}`, which is the shortest representation that
//! parses back to the same bits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gmm::{read_model, ErrorSampleSet, MixtureModel};
use crate::grid::{ComplexField, Field, GridSpec, ReceiverSet, Rect, ScattererField};
use crate::helmholtz::DataRecord;
use crate::inversion::{DataSet, InversionReport, ModelSet};

pub const FIELD_HEADER: &str = "# nx,ny,x_min,x_max,y_min,y_max";
pub const RECEIVER_HEADER: &str = "index,x,y,re,im";
pub const REPORT_HEADER: &str = "kappa,angle,misfit,step,rel_error,seconds";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| Error::format(path, format!("line {line}: `{}` is not a number", tok.trim())))
}

fn parse_usize(tok: &str, path: &Path, line: usize) -> Result<usize> {
    tok.trim()
        .parse::<usize>()
        .map_err(|_| Error::format(path, format!("line {line}: `{}` is not a count", tok.trim())))
}

/// Value of `key=<v>` inside a `# a=1 b=2` comment line.
fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.trim_start_matches('#')
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn header_f64(line: &str, key: &str, path: &Path) -> Result<f64> {
    let v = header_value(line, key).ok_or_else(|| Error::format(path, format!("header lacks `{key}=`")))?;
    parse_f64(v, path, 1)
}

fn grid_header(grid: &GridSpec) -> String {
    let d = &grid.domain;
    format!(
        "{FIELD_HEADER}\n{},{},{:e},{:e},{:e},{:e}\n",
        grid.nx, grid.ny, d.x_min, d.x_max, d.y_min, d.y_max
    )
}

/// Parses the two header lines; returns the grid and the index of the first data line.
fn parse_grid_header(lines: &[&str], omega: Rect, path: &Path) -> Result<GridSpec> {
    if lines.first().map(|l| l.trim()) != Some(FIELD_HEADER) {
        return Err(Error::format(path, format!("first line must be `{FIELD_HEADER}`")));
    }
    let dims: Vec<&str> = lines
        .get(1)
        .ok_or_else(|| Error::format(path, "missing grid dimensions"))?
        .split(',')
        .collect();
    if dims.len() != 6 {
        return Err(Error::format(path, "line 2: expected six values"));
    }
    let nx = parse_usize(dims[0], path, 2)?;
    let ny = parse_usize(dims[1], path, 2)?;
    let b: Vec<f64> = dims[2..].iter().map(|t| parse_f64(t, path, 2)).collect::<Result<_>>()?;
    GridSpec::new(nx, ny, Rect::new(b[0], b[1], b[2], b[3]), omega)
        .map_err(|e| Error::format(path, format!("line 2: {e}")))
}

fn field_to_string<T>(field: &Field<T>, per_node: usize, mut emit: impl FnMut(&mut String, &T)) -> String {
    let g = &field.grid;
    let mut out = grid_header(g);
    out.reserve(g.len() * per_node * 24);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if i > 0 {
                out.push(',');
            }
            emit(&mut out, &field.values[g.index(i, j)]);
        }
        out.push('\n');
    }
    out
}

fn read_rows(path: &Path, omega: Rect, per_node: usize) -> Result<(GridSpec, Vec<f64>)> {
    let text = read_text(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let grid = parse_grid_header(&lines, omega, path)?;
    let rows: Vec<&str> = lines[2..].iter().copied().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != grid.ny {
        return Err(Error::format(
            path,
            format!("expected {} grid rows, found {}", grid.ny, rows.len()),
        ));
    }
    let mut values = Vec::with_capacity(grid.len() * per_node);
    for (j, row) in rows.iter().enumerate() {
        let before = values.len();
        for tok in row.split(',') {
            values.push(parse_f64(tok, path, j + 3)?);
        }
        if values.len() - before != grid.nx * per_node {
            return Err(Error::format(
                path,
                format!(
                    "line {}: expected {} values, found {}",
                    j + 3,
                    grid.nx * per_node,
                    values.len() - before
                ),
            ));
        }
    }
    Ok((grid, values))
}

pub fn scatterer_to_string(q: &ScattererField) -> String {
    field_to_string(q, 1, |s, v| {
        let _ = write!(s, "{v:e}");
    })
}

pub fn write_scatterer(path: &Path, q: &ScattererField) -> Result<()> {
    write_text(path, &scatterer_to_string(q))
}

/// Reads a real field; `omega` is the reconstruction region of the grid.
pub fn read_scatterer(path: &Path, omega: Rect) -> Result<ScattererField> {
    let (grid, values) = read_rows(path, omega, 1)?;
    Field::from_values(grid, values)
}

pub fn write_complex_field(path: &Path, u: &ComplexField) -> Result<()> {
    let text = field_to_string(u, 2, |s, v| {
        let _ = write!(s, "{:e},{:e}", v.re, v.im);
    });
    write_text(path, &text)
}

pub fn read_complex_field(path: &Path, omega: Rect) -> Result<ComplexField> {
    let (grid, values) = read_rows(path, omega, 2)?;
    let values = values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Field::from_values(grid, values)
}

pub fn data_record_to_string(receivers: &ReceiverSet, record: &DataRecord) -> Result<String> {
    if receivers.count() != record.values.len() {
        return Err(Error::Geometry(format!(
            "{} receivers but {} data values",
            receivers.count(),
            record.values.len()
        )));
    }
    let mut out = format!(
        "# kappa={:e} angle={:e}\n{RECEIVER_HEADER}\n",
        record.kappa, record.angle
    );
    for (n, ((x, y), v)) in receivers.points.iter().zip(&record.values).enumerate() {
        let _ = writeln!(out, "{n},{x:e},{y:e},{:e},{:e}", v.re, v.im);
    }
    Ok(out)
}

pub fn write_data_record(path: &Path, receivers: &ReceiverSet, record: &DataRecord) -> Result<()> {
    write_text(path, &data_record_to_string(receivers, record)?)
}

/// Reads a receiver dump; returns the record and the receiver positions it lists.
pub fn read_data_record(path: &Path) -> Result<(DataRecord, ReceiverSet)> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    if !first.starts_with('#') {
        return Err(Error::format(path, "first line must be `# kappa=<k> angle=<a>`"));
    }
    let kappa = header_f64(first, "kappa", path)?;
    let angle = header_f64(first, "angle", path)?;
    match lines.next() {
        Some((_, l)) if l.trim() == RECEIVER_HEADER => {}
        _ => return Err(Error::format(path, format!("second line must be `{RECEIVER_HEADER}`"))),
    }
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (ln, line) in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::format(path, format!("line {}: expected 5 columns", ln + 1)));
        }
        let index = parse_usize(cols[0], path, ln + 1)?;
        if index != values.len() {
            return Err(Error::format(
                path,
                format!("line {}: receiver index {index} out of order", ln + 1),
            ));
        }
        let v: Vec<f64> = cols[1..]
            .iter()
            .map(|t| parse_f64(t, path, ln + 1))
            .collect::<Result<_>>()?;
        points.push((v[0], v[1]));
        values.push(Complex64::new(v[2], v[3]));
    }
    Ok((DataRecord { kappa, angle, values }, ReceiverSet { points }))
}

pub fn data_file_name(ik: usize, ia: usize) -> String {
    format!("data_k{ik:03}_a{ia:03}.csv")
}

pub fn samples_file_name(ik: usize, ia: Option<usize>) -> String {
    match ia {
        Some(ia) => format!("samples_k{ik:03}_a{ia:03}.csv"),
        None => format!("samples_k{ik:03}.csv"),
    }
}

pub fn model_file_name(ik: usize) -> String {
    format!("model_k{ik:03}.cgmm")
}

/// Files in `dir` named `<prefix>*<suffix>`, sorted by name.
pub fn list_files(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with(prefix) && name.ends_with(suffix) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every `data_*.csv` in `dir`; all files must share one receiver layout.
pub fn read_data_dir(dir: &Path) -> Result<(DataSet, ReceiverSet)> {
    let files = list_files(dir, "data_", ".csv")?;
    if files.is_empty() {
        return Err(Error::Config(format!("no data_*.csv files in {}", dir.display())));
    }
    let mut records = Vec::with_capacity(files.len());
    let mut layout: Option<ReceiverSet> = None;
    for f in &files {
        let (rec, rx) = read_data_record(f)?;
        match &layout {
            None => layout = Some(rx),
            Some(l) if *l != rx => {
                return Err(Error::format(f, "receiver positions differ from the other data files"));
            }
            Some(_) => {}
        }
        records.push(rec);
    }
    Ok((DataSet { records }, layout.unwrap_or(ReceiverSet { points: vec![] })))
}

/// Loads every `model_*.cgmm` in `dir`; returns the models and the files read.
pub fn read_model_dir(dir: &Path) -> Result<(ModelSet, Vec<PathBuf>)> {
    let files = list_files(dir, "model_", ".cgmm")?;
    let models = files
        .iter()
        .map(|f| read_model(f))
        .collect::<Result<Vec<MixtureModel>>>()?;
    Ok((ModelSet { models }, files))
}

pub fn samples_to_string(set: &ErrorSampleSet) -> String {
    let angle = set.angle.map_or_else(|| "pooled".to_string(), |a| format!("{a:e}"));
    let mut out = format!(
        "# kappa={:e} angle={angle} Ns={} Nd={}\n",
        set.kappa,
        set.len(),
        set.dim()
    );
    for (n, s) in set.samples.iter().enumerate() {
        let _ = write!(out, "{n}");
        for z in s {
            let _ = write!(out, ",{:e},{:e}", z.re, z.im);
        }
        out.push('\n');
    }
    out
}

pub fn write_samples(path: &Path, set: &ErrorSampleSet) -> Result<()> {
    write_text(path, &samples_to_string(set))
}

pub fn read_samples(path: &Path) -> Result<ErrorSampleSet> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    if !first.starts_with('#') {
        return Err(Error::format(
            path,
            "first line must be `# kappa=.. angle=.. Ns=.. Nd=..`",
        ));
    }
    let kappa = header_f64(first, "kappa", path)?;
    let angle = match header_value(first, "angle") {
        Some("pooled") => None,
        Some(v) => Some(parse_f64(v, path, 1)?),
        None => return Err(Error::format(path, "header lacks `angle=`")),
    };
    let ns = parse_usize(header_value(first, "Ns").unwrap_or(""), path, 1)?;
    let nd = parse_usize(header_value(first, "Nd").unwrap_or(""), path, 1)?;
    let mut samples = Vec::with_capacity(ns);
    for (ln, line) in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 1 + 2 * nd {
            return Err(Error::format(
                path,
                format!("line {}: expected {} columns", ln + 1, 1 + 2 * nd),
            ));
        }
        if parse_usize(cols[0], path, ln + 1)? != samples.len() {
            return Err(Error::format(
                path,
                format!("line {}: sample index out of order", ln + 1),
            ));
        }
        let v: Vec<f64> = cols[1..]
            .iter()
            .map(|t| parse_f64(t, path, ln + 1))
            .collect::<Result<_>>()?;
        samples.push(v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect());
    }
    if samples.len() != ns {
        return Err(Error::format(
            path,
            format!("header says Ns={ns}, found {} samples", samples.len()),
        ));
    }
    ErrorSampleSet::new(kappa, angle, samples).map_err(|e| Error::format(path, e.to_string()))
}

pub fn report_to_string(report: &InversionReport) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in &report.records {
        let err = r.rel_error.map_or_else(|| "nan".to_string(), |e| format!("{e:e}"));
        let _ = writeln!(
            out,
            "{:e},{:e},{:e},{:e},{err},{:e}",
            r.kappa, r.angle, r.misfit, r.step, r.seconds
        );
    }
    out
}

/// One parsed line of `report.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub kappa: f64,
    pub angle: f64,
    pub misfit: f64,
    pub step: f64,
    pub rel_error: Option<f64>,
    pub seconds: f64,
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == REPORT_HEADER => {}
        _ => return Err(Error::format(path, format!("first line must be `{REPORT_HEADER}`"))),
    }
    lines
        .map(|(ln, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(Error::format(path, format!("line {}: expected 6 columns", ln + 1)));
            }
            let v: Vec<f64> = cols.iter().map(|t| parse_f64(t, path, ln + 1)).collect::<Result<_>>()?;
            Ok(ReportRow {
                kappa: v[0],
                angle: v[1],
                misfit: v[2],
                step: v[3],
                rel_error: (!v[4].is_nan()).then_some(v[4]),
                seconds: v[5],
            })
        })
        .collect()
}

/// Provenance written next to every command's outputs.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub config: String,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub notes: Vec<(String, String)>,
    pub timings: Vec<(String, f64)>,
}

impl Manifest {
    pub fn new(command: &str, config: String) -> Self {
        Self {
            command: command.to_string(),
            config,
            ..Self::default()
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.push((name.to_string(), value));
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn timing(&mut self, name: &str, seconds: f64) {
        self.timings.push((name.to_string(), seconds));
    }

    /// Timing lines all start with `time.` so runs can be compared without them.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.seeds {
            let _ = writeln!(out, "seed.{k} = {v}");
        }
        for p in &self.inputs {
            let _ = writeln!(out, "input = {}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(out, "output = {}", p.display());
        }
        for (k, v) in &self.notes {
            let _ = writeln!(out, "note.{k} = {v}");
        }
        out.push_str("[config]\n");
        out.push_str(&self.config);
        out.push_str("[timings]\n");
        for (k, v) in &self.timings {
            let _ = writeln!(out, "time.{k} = {v:.3}");
        }
        out
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        ensure_dir(out_dir)?;
        let path = out_dir.join("manifest");
        write_text(&path, &self.render())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PmlProfile;
    use crate::inversion::UpdateRecord;

    fn omega() -> Rect {
        Rect::new(-1.0, 1.0, -1.0, 1.0)
    }

    fn grid(n: usize) -> GridSpec {
        GridSpec::with_pml(n, omega(), &PmlProfile::default()).unwrap()
    }

    #[test]
    fn scatterer_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let q = ScattererField::supported_from_fn(grid(17), |x, y| (3.1 * x).sin() * (y + 0.3).exp() / 7.0);
        let path = dir.path().join("q.csv");
        write_scatterer(&path, &q).unwrap();
        let text = read_text(&path).unwrap();
        assert!(text.starts_with(FIELD_HEADER));
        assert_eq!(text.lines().count(), 2 + 17);
        assert_eq!(read_scatterer(&path, omega()).unwrap(), q);
    }

    #[test]
    fn complex_field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let u = ComplexField::from_fn(grid(9), |x, y| Complex64::new(x.cos() / 3.0, y * 1e-17));
        let path = dir.path().join("sub/u.csv");
        write_complex_field(&path, &u).unwrap();
        let back = read_complex_field(&path, omega()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn malformed_field_reports_path_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        write_text(&path, &format!("{FIELD_HEADER}\n3,3,-1,1,-1,1\n0,0,0\n0,x,0\n0,0,0\n")).unwrap();
        let err = read_scatterer(&path, Rect::new(-0.5, 0.5, -0.5, 0.5)).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("line 4"), "{err}");
        assert!(err.to_string().contains("bad.csv"), "{err}");
    }

    #[test]
    fn data_record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rx = crate::grid::build_receivers(7, 1.0).unwrap();
        let rec = DataRecord {
            kappa: std::f64::consts::PI,
            angle: 0.1,
            values: (0..7)
                .map(|k| Complex64::new(k as f64 / 3.0, -1.0 / (k + 1) as f64))
                .collect(),
        };
        let path = dir.path().join(data_file_name(0, 1));
        write_data_record(&path, &rx, &rec).unwrap();
        let (back, rx_back) = read_data_record(&path).unwrap();
        assert_eq!(back, rec);
        assert_eq!(rx_back, rx);
        let (set, _) = read_data_dir(dir.path()).unwrap();
        assert_eq!(set.records, vec![rec]);
    }

    #[test]
    fn samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Vec<Complex64>> = (0..4)
            .map(|n| {
                (0..3)
                    .map(|d| Complex64::new((n * d) as f64 / 7.0, 0.1 * n as f64))
                    .collect()
            })
            .collect();
        for angle in [Some(0.25), None] {
            let set = ErrorSampleSet::new(2.0, angle, samples.clone()).unwrap();
            let path = dir.path().join("s.csv");
            write_samples(&path, &set).unwrap();
            let text = read_text(&path).unwrap();
            assert!(text.lines().next().unwrap().contains("Ns=4 Nd=3"));
            assert_eq!(read_samples(&path).unwrap(), set);
        }
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = InversionReport {
            records: vec![],
            snapshots: vec![],
            warnings: vec![],
            final_q: ScattererField::zeros(grid(5)),
        };
        for (k, err) in [(1.0, Some(0.5)), (2.0, None)] {
            report.records.push(UpdateRecord {
                kappa: k,
                angle: 0.3,
                misfit: 1.0 / 3.0,
                step: 0.01,
                rel_error: err,
                seconds: 0.2,
                ..UpdateRecord::default()
            });
        }
        let path = dir.path().join("report.csv");
        write_text(&path, &report_to_string(&report)).unwrap();
        let rows = read_report(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].rel_error, Some(0.5));
        assert_eq!(rows[1].rel_error, None);
        assert_eq!(rows[0].misfit, 1.0 / 3.0);
    }

    #[test]
    fn manifest_creates_directory_and_lists_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a/b");
        let mut m = Manifest::new("invert", "grid.coarse = 65\n".into());
        m.seed("noise", 42);
        m.inputs.push(PathBuf::from("models/model_k000.cgmm"));
        m.timing("total", 1.5);
        let path = m.write(&out).unwrap();
        let text = read_text(&path).unwrap();
        assert!(text.contains("input = models/model_k000.cgmm"));
        assert!(text.contains("seed.noise = 42"));
        assert!(text.contains("grid.coarse = 65"));
    }
}
