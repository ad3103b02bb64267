use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major feature matrix with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    n_rows: usize,
    col_names: Vec<String>,
    values: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(col_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let p = col_names.len();
        if p == 0 {
            return Err(Error::Data(
                "design matrix needs at least one column".into(),
            ));
        }
        if values.is_empty() || values.len() % p != 0 {
            return Err(Error::Data(format!(
                "{} values do not fill whole rows of {p} columns",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column `{}`",
                i / p,
                col_names[i % p]
            )));
        }
        Ok(DesignMatrix {
            n_rows: values.len() / p,
            col_names,
            values,
        })
    }

    pub fn from_rows(col_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = col_names.len();
        if let Some(r) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Data(format!(
                "row {r} has {} values, expected {p}",
                rows[r].len()
            )));
        }
        DesignMatrix::new(col_names, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.col_names.len()
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<DesignMatrix> {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        DesignMatrix::new(self.col_names.clone(), values)
    }

    pub fn select_columns(&self, names: &[&str]) -> Result<DesignMatrix> {
        let owned: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        self.project(&owned, true)
    }

    /// Reorders columns to `names`; fails when the column sets differ.
    pub fn align_to(&self, names: &[String]) -> Result<DesignMatrix> {
        self.project(names, false)
    }

    fn project(&self, names: &[String], allow_extra: bool) -> Result<DesignMatrix> {
        let idx: Vec<Option<usize>> = names
            .iter()
            .map(|n| self.col_names.iter().position(|c| c == n))
            .collect();
        let missing: Vec<String> = names
            .iter()
            .zip(&idx)
            .filter(|(_, i)| i.is_none())
            .map(|(n, _)| n.clone())
            .collect();
        let extra: Vec<String> = if allow_extra {
            Vec::new()
        } else {
            self.col_names
                .iter()
                .filter(|c| !names.contains(c))
                .cloned()
                .collect()
        };
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::ColumnMismatch { missing, extra });
        }
        let idx: Vec<usize> = idx.into_iter().map(|i| i.expect("checked")).collect();
        if !allow_extra && idx.iter().enumerate().all(|(k, &i)| k == i) {
            return Ok(self.clone());
        }
        let mut values = Vec::with_capacity(self.n_rows * idx.len());
        for r in 0..self.n_rows {
            let row = self.row(r);
            values.extend(idx.iter().map(|&i| row[i]));
        }
        DesignMatrix::new(names.to_vec(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rejects_nan_and_ragged() {
        assert!(DesignMatrix::new(names(&["a"]), vec![1.0, f64::NAN]).is_err());
        assert!(DesignMatrix::new(names(&["a", "b"]), vec![1.0, 2.0, 3.0]).is_err());
        assert!(DesignMatrix::new(names(&["a"]), vec![]).is_err());
    }

    #[test]
    fn align_reorders_by_name() {
        let m = DesignMatrix::new(names(&["a", "b"]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = m.align_to(&names(&["b", "a"])).unwrap();
        assert_eq!(r.values(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn align_reports_missing_and_extra() {
        let m = DesignMatrix::new(names(&["a", "b"]), vec![1.0, 2.0]).unwrap();
        match m.align_to(&names(&["a", "c"])) {
            Err(Error::ColumnMismatch { missing, extra }) => {
                assert_eq!(missing, vec!["c"]);
                assert_eq!(extra, vec!["b"]);
            }
            other => panic!("{other:?}"),
        }
    }
}
