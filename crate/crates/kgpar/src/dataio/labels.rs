//! Binary image-attribute annotations, stored as CSV with header
//! `image_id,<attr1>,...,<attrM>`. Column order is the attribute order
//! everywhere downstream.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::DataError;

/// N x M binary annotation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub image_ids: Vec<String>,
    pub attr_names: Vec<String>,
    values: Vec<u8>,
}

impl LabelMatrix {
    pub fn new(
        image_ids: Vec<String>,
        attr_names: Vec<String>,
        values: Vec<u8>,
    ) -> Result<Self, DataError> {
        if values.len() != image_ids.len() * attr_names.len() {
            return Err(DataError::Invalid(format!(
                "label matrix needs {} x {} entries, got {}",
                image_ids.len(),
                attr_names.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| **v > 1) {
            return Err(DataError::Invalid(format!("non-binary label value {v}")));
        }
        check_unique(&image_ids, "image_id")?;
        check_unique(&attr_names, "attribute")?;
        Ok(LabelMatrix {
            image_ids,
            attr_names,
            values,
        })
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.attr_names.len()
    }

    pub fn get(&self, image: usize, attr: usize) -> u8 {
        self.values[image * self.attr_names.len() + attr]
    }

    pub fn row(&self, image: usize) -> &[u8] {
        let m = self.attr_names.len();
        &self.values[image * m..(image + 1) * m]
    }

    /// Positive count per attribute (column sums).
    pub fn column_sums(&self) -> Vec<usize> {
        let m = self.n_attrs();
        let mut sums = vec![0usize; m];
        for i in 0..self.n_images() {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += *v as usize;
            }
        }
        sums
    }

    /// Rows `[lo, hi)` as a new matrix (used for train/eval splits).
    pub fn slice(&self, lo: usize, hi: usize) -> Result<LabelMatrix, DataError> {
        if lo > hi || hi > self.n_images() {
            return Err(DataError::Invalid(format!(
                "label slice [{lo}, {hi}) out of range for {} images",
                self.n_images()
            )));
        }
        let m = self.n_attrs();
        LabelMatrix::new(
            self.image_ids[lo..hi].to_vec(),
            self.attr_names.clone(),
            self.values[lo * m..hi * m].to_vec(),
        )
    }
}

fn check_unique(names: &[String], what: &str) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(DataError::Invalid(format!("duplicate {what} \"{n}\"")));
        }
    }
    Ok(())
}

pub fn load_label_matrix(path: &Path) -> Result<LabelMatrix, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_label_csv(&text)
}

pub fn parse_label_csv(text: &str) -> Result<LabelMatrix, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::parse(1, "empty file"))?;
    let mut cols = header.split(',').map(str::trim);
    match cols.next() {
        Some("image_id") => {}
        other => {
            return Err(DataError::parse(
                1,
                format!("first header column must be image_id, got {other:?}"),
            ))
        }
    }
    let attr_names: Vec<String> = cols.map(str::to_string).collect();
    if attr_names.is_empty() || attr_names.iter().any(String::is_empty) {
        return Err(DataError::parse(1, "missing or empty attribute names"));
    }

    let mut image_ids = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut fields = line.split(',').map(str::trim);
        let id = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| DataError::parse(line_no, "missing image_id"))?;
        let row: Vec<&str> = fields.collect();
        if row.len() != attr_names.len() {
            return Err(DataError::parse(
                line_no,
                format!(
                    "ragged row: expected {} label cells, got {}",
                    attr_names.len(),
                    row.len()
                ),
            ));
        }
        for cell in row {
            match cell {
                "0" => values.push(0),
                "1" => values.push(1),
                other => {
                    return Err(DataError::parse(
                        line_no,
                        format!("non-binary cell \"{other}\""),
                    ))
                }
            }
        }
        image_ids.push(id.to_string());
    }
    if image_ids.is_empty() {
        return Err(DataError::Invalid("no images".into()));
    }
    LabelMatrix::new(image_ids, attr_names, values)
}

pub fn save_label_matrix(matrix: &LabelMatrix, path: &Path) -> Result<(), DataError> {
    let mut out = String::from("image_id");
    for name in &matrix.attr_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..matrix.n_images() {
        out.push_str(&matrix.image_ids[i]);
        for v in matrix.row(i) {
            out.push(',');
            out.push(if *v == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_by_three_fixture() {
        let text = "image_id,a,b,c\nimg0,1,1,0\nimg1,1,0,1\nimg2,0,1,1\n";
        let m = parse_label_csv(text).unwrap();
        assert_eq!(m.n_images(), 3);
        assert_eq!(m.n_attrs(), 3);
        assert_eq!(m.column_sums(), vec![2, 2, 2]);
    }

    #[test]
    fn empty_data_section() {
        let err = parse_label_csv("image_id,a,b\n").unwrap_err();
        assert!(err.to_string().contains("no images"));
    }

    #[test]
    fn header_names_trimmed_and_round_trip() {
        let text = "image_id, long hair , hat\nimg0,1,0\n";
        let m = parse_label_csv(text).unwrap();
        assert_eq!(m.attr_names, vec!["long hair", "hat"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        save_label_matrix(&m, &path).unwrap();
        let again = load_label_matrix(&path).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn non_binary_cell_reports_line() {
        let err = parse_label_csv("image_id,a\nimg0,1\nimg1,2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("non-binary"), "{msg}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse_label_csv("image_id,a\nx,1\nx,0\n").unwrap_err();
        assert!(err.to_string().contains("duplicate image_id"));
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse_label_csv("image_id,a,b\nimg0,1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("ragged"), "{msg}");
    }
}
