use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Provenance, SeriesDataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Reads a wide CSV (`timestamp,<id1>,<id2>,...`), optionally gzip-compressed when the
/// file name ends in `.gz`. Lines starting with `#` are comments. Any ragged or unparseable
/// row is rejected with its line number.
pub fn load_csv(path: &Path) -> Result<SeriesDataset> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let reader: Box<dyn Read> = if is_gzip(path) {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    read_csv(reader, &path.display().to_string())
}

pub(crate) fn read_csv<R: Read>(reader: R, source: &str) -> Result<SeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "file is empty".into(),
            })
        }
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
    };
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header needs a timestamp column and at least one channel".into(),
        });
    }
    let ids: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let c = ids.len();
    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != c + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", c + 1, rec.len()),
            });
        }
        timestamps.push(rec[0].trim().to_string());
        for (k, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {} value {field:?} is not a number", ids[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {} value {field:?} is not finite", ids[k]),
                });
            }
            data.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "file has a header but no rows".into(),
        });
    }
    let n = timestamps.len();
    let mut ds = SeriesDataset::new(
        Tensor::new(vec![n, c], data)?,
        ids,
        Provenance::File(source.to_string()),
    )?;
    ds.timestamps = timestamps;
    Ok(ds)
}

fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes the dataset in wide format; values use the shortest exact decimal form, so a
/// reload reproduces them bit for bit.
pub fn write_csv(ds: &SeriesDataset, path: &Path) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let sink: Box<dyn Write> = if is_gzip(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    write_csv_to(ds, sink).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub(crate) fn write_csv_to<W: Write>(ds: &SeriesDataset, sink: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["timestamp".to_string()];
    header.extend(ds.channel_ids.iter().cloned());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(ds.n_channels() + 1);
    for t in 0..ds.len() {
        row.clear();
        row.push(ds.timestamps[t].clone());
        row.extend(ds.values.row(t).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_small_file_exactly() {
        let text = "timestamp,a,b\n0,1.5,2\n1,-3,4e-1\n2,0,7\n";
        let ds = read_csv(text.as_bytes(), "mem").unwrap();
        assert_eq!(ds.channel_ids, vec!["a", "b"]);
        assert_eq!(ds.values.data(), &[1.5, 2.0, -3.0, 0.4, 0.0, 7.0]);
        assert_eq!(ds.timestamps, vec!["0", "1", "2"]);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = "timestamp,a,b\n0,1,2\n1,x,4\n";
        match read_csv(text.as_bytes(), "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let ragged = "timestamp,a,b\n0,1,2\n1,3\n";
        match read_csv(ragged.as_bytes(), "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comment_lines_are_skipped() {
        let text = "# config_digest: abc\ntimestamp,a\n0,1\n# trailing note\n1,2\n";
        let ds = read_csv(text.as_bytes(), "mem").unwrap();
        assert_eq!(ds.values.data(), &[1.0, 2.0]);
    }

    #[test]
    fn empty_input_is_parse_error() {
        assert!(matches!(
            read_csv("".as_bytes(), "mem"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            read_csv("timestamp,a\n".as_bytes(), "mem"),
            Err(Error::Parse { .. })
        ));
    }
}
