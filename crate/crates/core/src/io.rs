//! CSV ingestion and result export.
//!
//! Every float is written with 17 significant digits so that a value read back
//! parses to the identical double. Writers never depend on hash-map order or
//! timing unless asked to, which keeps artifacts byte-stable between runs.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::RunRecord;
use crate::oracle::BoundDiagnostics;
use crate::vectorization::Space;

/// File name of the run manifest written next to the other artifacts.
pub const MANIFEST_FILE: &str = "MANIFEST.sha256";

/// Formats a double so that parsing the text returns the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Center each column and divide by its standard deviation over the whole file.
    pub standardize: bool,
    /// Divide by `T - 1` instead of `T` when computing that standard deviation.
    pub sample_std: bool,
}

/// Per-column statistics gathered on the first pass over a file.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

/// A validated numeric CSV file, streamed row by row.
///
/// Opening the file reads it once to validate every cell and, if requested,
/// compute standardization statistics; iterating reads it a second time. Memory
/// use is independent of the number of rows.
#[derive(Debug, Clone)]
pub struct CsvSource {
    path: PathBuf,
    header: Vec<String>,
    rows: usize,
    stats: Option<ColumnStats>,
}

impl CsvSource {
    pub fn open(path: impl AsRef<Path>, options: IngestOptions) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut reader = open_reader(&path)?;
        let header = read_header(&mut reader, &path)?;
        let n = header.len();

        // Welford accumulation keeps the first pass single-sweep and stable.
        let mut count = 0usize;
        let mut mean = DVector::<f64>::zeros(n);
        let mut m2 = DVector::<f64>::zeros(n);
        let mut record = csv::StringRecord::new();
        loop {
            let more = reader
                .read_record(&mut record)
                .map_err(|e| csv_error(&path, count + 1, e))?;
            if !more {
                break;
            }
            count += 1;
            let row = parse_row(&record, &header, count)?;
            if options.standardize {
                let k = count as f64;
                for c in 0..n {
                    let delta = row[c] - mean[c];
                    mean[c] += delta / k;
                    m2[c] += delta * (row[c] - mean[c]);
                }
            }
        }
        if count == 0 {
            return Err(Error::Ingestion {
                row: None,
                column: None,
                message: format!("{} contains a header but no data rows", path.display()),
            });
        }

        let stats = if options.standardize {
            let denom = if options.sample_std {
                if count < 2 {
                    return Err(Error::Ingestion {
                        row: None,
                        column: None,
                        message: "sample standard deviation needs at least two rows".into(),
                    });
                }
                (count - 1) as f64
            } else {
                count as f64
            };
            let std = m2.map(|v| (v / denom).sqrt());
            if let Some(c) = (0..n).find(|&c| !(std[c] > 0.0)) {
                return Err(Error::Ingestion {
                    row: None,
                    column: Some(header[c].clone()),
                    message: "column is constant and cannot be standardized".into(),
                });
            }
            Some(ColumnStats { mean, std })
        } else {
            None
        };

        Ok(CsvSource {
            path,
            header,
            rows: count,
            stats,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    /// Number of nodes (columns).
    pub fn n(&self) -> usize {
        self.header.len()
    }

    /// Number of data rows.
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn stats(&self) -> Option<&ColumnStats> {
        self.stats.as_ref()
    }

    /// Streams the rows again, standardized if the source was opened that way.
    pub fn stream(&self) -> Result<CsvRows<'_>> {
        let mut reader = open_reader(&self.path)?;
        read_header(&mut reader, &self.path)?;
        Ok(CsvRows {
            source: self,
            reader,
            record: csv::StringRecord::new(),
            row: 0,
        })
    }

    pub fn read_all(&self) -> Result<Vec<DVector<f64>>> {
        self.stream()?.collect()
    }
}

pub struct CsvRows<'a> {
    source: &'a CsvSource,
    reader: csv::Reader<File>,
    record: csv::StringRecord,
    row: usize,
}

impl Iterator for CsvRows<'_> {
    type Item = Result<DVector<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        let path = &self.source.path;
        match self.reader.read_record(&mut self.record) {
            Ok(false) => None,
            Err(e) => Some(Err(csv_error(path, self.row + 1, e))),
            Ok(true) => {
                self.row += 1;
                let row = parse_row(&self.record, &self.source.header, self.row);
                Some(row.map(|mut x| {
                    if let Some(stats) = &self.source.stats {
                        for c in 0..x.len() {
                            x[c] = (x[c] - stats.mean[c]) / stats.std[c];
                        }
                    }
                    x
                }))
            }
        }
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn read_header(reader: &mut csv::Reader<File>, path: &Path) -> Result<Vec<String>> {
    let mut record = csv::StringRecord::new();
    let found = reader
        .read_record(&mut record)
        .map_err(|e| csv_error(path, 0, e))?;
    if !found || record.iter().all(str::is_empty) {
        return Err(Error::Ingestion {
            row: None,
            column: None,
            message: format!("{} has no header row", path.display()),
        });
    }
    Ok(record.iter().map(str::to_owned).collect())
}

fn parse_row(record: &csv::StringRecord, header: &[String], row: usize) -> Result<DVector<f64>> {
    if record.len() != header.len() {
        return Err(Error::Ingestion {
            row: Some(row),
            column: None,
            message: format!("expected {} fields, found {}", header.len(), record.len()),
        });
    }
    let mut out = DVector::zeros(header.len());
    for (c, cell) in record.iter().enumerate() {
        let value = cell.parse::<f64>().ok().filter(|v| v.is_finite());
        out[c] = value.ok_or_else(|| Error::Ingestion {
            row: Some(row),
            column: Some(header[c].clone()),
            message: if cell.is_empty() {
                "missing value".into()
            } else {
                format!("`{cell}` is not a finite number")
            },
        })?;
    }
    Ok(out)
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Ingestion {
            row: Some(row),
            column: None,
            message: format!("{other:?}"),
        },
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

const METRICS_HEADER: &str = "t,nse,td,edge_count,tgrad_norm,step_seconds\n";

/// Incremental writer for the per-step metrics file.
///
/// An absent NSE is an empty cell. Wall-clock times vary between runs, so the
/// last column is left empty unless `timing` is set.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
    timing: bool,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>, timing: bool) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut out = create(&path)?;
        out.write_all(METRICS_HEADER.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter { path, out, timing })
    }

    pub fn write(&mut self, r: &RunRecord) -> Result<()> {
        let nse = r.nse.map(fmt_f64).unwrap_or_default();
        let secs = if self.timing { fmt_f64(r.step_seconds) } else { String::new() };
        writeln!(
            self.out,
            "{},{},{},{},{},{}",
            r.t,
            nse,
            fmt_f64(r.td),
            r.edge_count,
            fmt_f64(r.tgrad_norm),
            secs
        )
        .map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(self) -> Result<()> {
        finish(&self.path, self.out)
    }
}

/// Writes `records` as a complete metrics file (see [`MetricsWriter`]).
pub fn write_metrics(path: impl AsRef<Path>, records: &[RunRecord], timing: bool) -> Result<()> {
    let mut w = MetricsWriter::create(path, timing)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

/// `(i, j)` pairs, 1-based with `i >= j`, in the order of the reduced coordinates.
pub fn edge_pairs(space: Space, n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(space.dim(n));
    for j in 0..n {
        let start = match space {
            Space::Half => j,
            Space::HollowHalf => j + 1,
        };
        for i in start..n {
            out.push((i + 1, j + 1));
        }
    }
    out
}

/// Writes the graph `s` as an `i,j,weight` list with 1-based node indices.
///
/// Every reduced coordinate appears, zeros included, so that files for the same
/// model always have the same number of lines. Half-space graphs list their
/// diagonal entries too.
pub fn write_edge_list(path: impl AsRef<Path>, s: &DVector<f64>, space: Space, n: usize) -> Result<()> {
    let path = path.as_ref();
    crate::error::check_len(space.dim(n), s.len())?;
    let mut body = String::from("i,j,weight\n");
    for ((i, j), w) in edge_pairs(space, n).into_iter().zip(s.iter()) {
        body.push_str(&format!("{i},{j},{}\n", fmt_f64(*w)));
    }
    let mut w = create(path)?;
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Reads back a file written by [`write_edge_list`] into reduced coordinates.
pub fn read_edge_list(path: impl AsRef<Path>, space: Space, n: usize) -> Result<DVector<f64>> {
    let source = CsvSource::open(path.as_ref(), IngestOptions::default())?;
    let pairs = edge_pairs(space, n);
    if source.len() != pairs.len() || source.n() != 3 {
        return Err(Error::Ingestion {
            row: None,
            column: None,
            message: format!("expected {} edge rows of 3 fields", pairs.len()),
        });
    }
    let mut s = DVector::zeros(pairs.len());
    for (k, row) in source.stream()?.enumerate() {
        let row = row?;
        if (row[0], row[1]) != (pairs[k].0 as f64, pairs[k].1 as f64) {
            return Err(Error::Ingestion {
                row: Some(k + 1),
                column: None,
                message: format!("expected edge ({}, {})", pairs[k].0, pairs[k].1),
            });
        }
        s[k] = row[2];
    }
    Ok(s)
}

/// Writes signals as a CSV with header `x1,...,xN`, one row per sample.
pub fn write_signals(path: impl AsRef<Path>, signals: &[DVector<f64>]) -> Result<()> {
    let path = path.as_ref();
    let n = signals.first().map_or(0, |x| x.len());
    let mut body = (1..=n).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    body.push('\n');
    for x in signals {
        crate::error::check_len(n, x.len())?;
        let cells: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    let mut w = create(path)?;
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Writes the per-step bound check, one row per solver step.
pub fn write_diagnostics(path: impl AsRef<Path>, steps: &[BoundDiagnostics]) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::from(
        "t,q,q_pred,q_corr,m,l,error_prev,d,phi,c0_estimate,lhs,rhs,phi_bound,violated,gap\n",
    );
    for s in steps {
        let reals = [
            s.q, s.q_pred, s.q_corr, s.m, s.l, s.error_prev, s.d, s.phi, s.c0_estimate, s.lhs,
            s.rhs, s.phi_bound,
        ];
        let cells: Vec<String> = reals.iter().map(|v| fmt_f64(*v)).collect();
        body.push_str(&format!(
            "{},{},{},{}\n",
            s.t,
            cells.join(","),
            u8::from(s.violated),
            u8::from(s.gap)
        ));
    }
    let mut w = create(path)?;
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Writes `MANIFEST.sha256` in `dir`, listing `files` (relative to `dir`) in
/// the format `sha256sum -c` accepts. Entries are sorted by name.
pub fn write_manifest(dir: impl AsRef<Path>, files: &[String]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut names = files.to_vec();
    names.sort();
    names.dedup();
    let mut body = String::new();
    for name in &names {
        let digest = sha256_file(dir.join(name))?;
        body.push_str(&format!("{digest}  {name}\n"));
    }
    let path = dir.join(MANIFEST_FILE);
    let mut w = create(&path)?;
    w.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
    finish(&path, w)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn standardizes_with_population_std() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "a\n1\n2\n3\n");
        let opts = IngestOptions { standardize: true, sample_std: false };
        let rows = CsvSource::open(&p, opts).unwrap().read_all().unwrap();
        let scale = (2.0f64 / 3.0).sqrt();
        let want = [-1.0 / scale, 0.0, 1.0 / scale];
        for (r, w) in rows.iter().zip(want) {
            assert!((r[0] - w).abs() < 1e-15);
        }
        let opts = IngestOptions { standardize: true, sample_std: true };
        let rows = CsvSource::open(&p, opts).unwrap().read_all().unwrap();
        let got: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        assert_eq!(got, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_cell_names_its_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("a,b\n");
        for k in 1..=10 {
            if k == 7 {
                body.push_str("1.0,\n");
            } else {
                body.push_str(&format!("{k},{}\n", k * 2));
            }
        }
        let p = write(dir.path(), "m.csv", &body);
        let err = CsvSource::open(&p, IngestOptions::default()).unwrap_err();
        match &err {
            Error::Ingestion { row, column, .. } => {
                assert_eq!(*row, Some(7));
                assert_eq!(column.as_deref(), Some("b"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn ragged_row_and_junk_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "a,b\n1,2\n3\n");
        let err = CsvSource::open(&p, IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: Some(2), column: None, .. }));
        let p = write(dir.path(), "j.csv", "a,b\n1,2\n3,x\n");
        let err = CsvSource::open(&p, IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: Some(2), .. }));
    }

    #[test]
    fn constant_column_rejected_only_when_standardizing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "a,b\n1,5\n2,5\n");
        assert!(CsvSource::open(&p, IngestOptions::default()).is_ok());
        let opts = IngestOptions { standardize: true, sample_std: false };
        let err = CsvSource::open(&p, opts).unwrap_err();
        assert!(matches!(err, Error::Ingestion { column: Some(ref c), .. } if c == "b"));
    }

    #[test]
    fn header_only_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "z.csv", "a,b,c\n");
        let err = CsvSource::open(&p, IngestOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn empty_metrics_file_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&p, &[], false).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "t,nse,td,edge_count,tgrad_norm,step_seconds\n"
        );
    }

    #[test]
    fn hollow_edge_list_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let s = DVector::from_vec(vec![0.25, -1.5, 3.0]);
        write_edge_list(&p, &s, Space::HollowHalf, 3).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,weight");
        assert_eq!(lines[1], format!("2,1,{}", fmt_f64(0.25)));
        assert_eq!(lines[2], format!("3,1,{}", fmt_f64(-1.5)));
        assert_eq!(lines[3], format!("3,2,{}", fmt_f64(3.0)));
        assert_eq!(read_edge_list(&p, Space::HollowHalf, 3).unwrap(), s);
    }

    #[test]
    fn half_edge_list_includes_diagonal() {
        assert_eq!(edge_pairs(Space::Half, 2), vec![(1, 1), (2, 1), (2, 2)]);
    }

    #[test]
    fn manifest_lists_sorted_hashes() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "b.txt", "");
        write(dir.path(), "a.txt", "abc");
        let p = write_manifest(dir.path(), &["b.txt".into(), "a.txt".into()]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(
            text,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad  a.txt\n\
             e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855  b.txt\n"
        );
    }
    #[test]
    fn signal_export_round_trips_bit_for_bit() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let signals: Vec<DVector<f64>> = (0..50)
            .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1e3..1e3) * rng.random::<f64>().powi(7)))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.csv");
        write_signals(&first, &signals).unwrap();
        let back = CsvSource::open(&first, IngestOptions::default()).unwrap().read_all().unwrap();
        assert_eq!(back, signals);
        let second = dir.path().join("b.csv");
        write_signals(&second, &back).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    }

    #[test]
    fn standardized_columns_are_centred_with_unit_variance() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("a,b\n");
        for k in 0..300 {
            let k = k as f64;
            body.push_str(&format!("{},{}\n", 1e4 + (k * 0.7).sin() * 3.0, k * k * 1e-3 - 7.0));
        }
        let p = write(dir.path(), "s.csv", &body);
        let opts = IngestOptions { standardize: true, sample_std: false };
        let rows = CsvSource::open(&p, opts).unwrap().read_all().unwrap();
        let m = rows.len() as f64;
        for c in 0..2 {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / m;
            let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / m;
            assert!(mean.abs() <= 1e-12, "column {c} mean {mean}");
            assert!((var - 1.0).abs() <= 1e-12, "column {c} variance {var}");
        }
    }
}
