//! Headerless CSV for matrices and per-sample label files. Writers use LF line
//! endings and the shortest round-tripping decimal form of each value.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BinaryFactorMatrix, DataMatrix};

fn records<R: Read>(reader: R) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows = vec![];
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    if rows.is_empty() {
        return Err(Error::Parse("no rows in input".into()));
    }
    Ok(rows)
}

fn parse_cell<T: std::str::FromStr>(cell: &str, i: usize, j: usize) -> Result<T> {
    cell.parse().map_err(|_| Error::Parse(format!("row {}, column {}: cannot parse {cell:?}", i + 1, j + 1)))
}

pub fn read_data_matrix<R: Read>(reader: R) -> Result<DataMatrix> {
    let rows = records(reader)?
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().map(|(j, c)| parse_cell::<f64>(c, i, j)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    DataMatrix::from_rows(&rows)
}

pub fn read_binary_matrix<R: Read>(reader: R) -> Result<BinaryFactorMatrix> {
    let rows = records(reader)?
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().map(|(j, c)| parse_cell::<u8>(c, i, j)).collect())
        .collect::<Result<Vec<Vec<u8>>>>()?;
    BinaryFactorMatrix::from_rows(&rows)
}

/// One integer group label per line.
pub fn read_labels<R: Read>(reader: R) -> Result<Vec<usize>> {
    records(reader)?
        .iter()
        .enumerate()
        .map(|(i, r)| match r.as_slice() {
            [cell] => parse_cell(cell, i, 0),
            _ => Err(Error::Parse(format!("row {}: expected a single label, got {} fields", i + 1, r.len()))),
        })
        .collect()
}

fn write_rows<W: Write, T: std::fmt::Display>(mut w: W, rows: impl Iterator<Item = Vec<T>>) -> Result<()> {
    for row in rows {
        let line: Vec<String> = row.iter().map(ToString::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_data_matrix<W: Write>(w: W, x: &DataMatrix) -> Result<()> {
    write_rows(w, (0..x.n()).map(|i| x.row(i).to_vec()))
}

pub fn write_binary_matrix<W: Write>(w: W, z: &BinaryFactorMatrix) -> Result<()> {
    write_rows(w, z.to_rows().into_iter())
}

pub fn write_labels<W: Write>(w: W, labels: &[usize]) -> Result<()> {
    write_rows(w, labels.iter().map(|&l| vec![l]))
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_binary_with_spaces_and_blank_lines() {
        let z = read_binary_matrix("1, 0\n\n0,1\n".as_bytes()).unwrap();
        assert_eq!(z.to_rows(), vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_binary_matrix("1,2\n".as_bytes()).is_err());
        assert!(read_binary_matrix("1,0\n1\n".as_bytes()).is_err());
        assert!(read_data_matrix("1.0,x\n".as_bytes()).is_err());
        assert!(read_data_matrix("1.0,NaN\n".as_bytes()).is_err());
        assert!(read_data_matrix("".as_bytes()).is_err());
        assert!(read_labels("0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn writes_plain_lf_csv() {
        let z = BinaryFactorMatrix::from_rows(&[vec![1, 0, 1], vec![0, 1, 1]]).unwrap();
        let mut buf = vec![];
        write_binary_matrix(&mut buf, &z).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0,1\n0,1,1\n");
        let mut buf = vec![];
        write_labels(&mut buf, &[0, 1, 1]).unwrap();
        assert_eq!(buf, b"0\n1\n1\n");
        assert_eq!(read_labels(buf.as_slice()).unwrap(), vec![0, 1, 1]);
    }

    proptest! {
        #[test]
        fn real_matrices_round_trip_exactly(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..6),
        ) {
            let x = DataMatrix::from_rows(&rows).unwrap();
            let mut buf = vec![];
            write_data_matrix(&mut buf, &x).unwrap();
            prop_assert_eq!(read_data_matrix(buf.as_slice()).unwrap(), x);
        }
    }
}
