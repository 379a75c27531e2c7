//! CSV readers for node features and labels.

use std::io::Read;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

/// Reads an `N x d` feature matrix. Every record must have the same width.
pub fn read_features_csv<R: Read>(reader: R, has_header: bool) -> Result<DenseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("invalid number {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: "non-finite feature value".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "feature file has no rows".into(),
        });
    }
    DenseMatrix::from_rows(&rows)
}

/// Reads `node_id,label` records (header optional: a first record whose
/// node id does not parse is treated as a header). Returns a dense label
/// vector of length `n_nodes`; every node must be labelled exactly once.
pub fn read_labels_csv<R: Read>(reader: R, n_nodes: usize) -> Result<Vec<usize>> {
    read_node_records(reader, n_nodes, "label")
}

/// Reads `node_id,value` real regression targets, same layout rules as
/// [`read_labels_csv`].
pub fn read_targets_csv<R: Read>(reader: R, n_nodes: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = read_node_records(reader, n_nodes, "target")?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse {
            line: 0,
            msg: "non-finite target value".into(),
        });
    }
    Ok(v)
}

fn read_node_records<R: Read, T: std::str::FromStr + Copy>(reader: R, n_nodes: usize, what: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut labels = vec![None; n_nodes];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected node_id,{what} but got {} fields", rec.len()),
            });
        }
        let Ok(node) = rec[0].parse::<usize>() else {
            if i == 0 {
                continue;
            }
            return Err(Error::Parse {
                line,
                msg: format!("invalid node id {:?}", &rec[0]),
            });
        };
        let label: T = rec[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid {what} {:?}", &rec[1]),
        })?;
        if node >= n_nodes {
            return Err(Error::Parse {
                line,
                msg: format!("node id {node} outside 0..{n_nodes}"),
            });
        }
        if labels[node].replace(label).is_some() {
            return Err(Error::Parse {
                line,
                msg: format!("node {node} listed twice"),
            });
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::invalid(format!("node {i} has no {what}"))))
        .collect()
}
