//! CSV ingestion and emission.
//!
//! Default layout: a header with `y`, covariates `x1, x2, ...` and a grouping
//! column `grp`. An intercept is prepended to X unless disabled. Pre-built
//! designs can be read by naming the X and Z columns explicitly.

use std::fs;
use std::io::Write;
use std::path::Path;

use mixed_em_core::model::z_from_groups;
use mixed_em_core::{ModelData, Simulation};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Default)]
pub struct Layout {
    pub response: String,
    /// X columns; `None` means every `x<digits>` column in header order.
    pub design_cols: Option<Vec<String>>,
    /// Z columns; `None` means build Z from the `grp` column.
    pub z_cols: Option<Vec<String>>,
    pub no_intercept: bool,
}

impl Layout {
    pub fn standard() -> Self {
        Self {
            response: "y".into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub model: ModelData,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    pub digest: InputDigest,
}

const GROUP_COL: &str = "grp";
const INTERCEPT: &str = "(Intercept)";

fn is_covariate(name: &str) -> bool {
    name.len() > 1 && name.starts_with('x') && name[1..].bytes().all(|b| b.is_ascii_digit())
}

pub fn load(path: &Path, layout: &Layout) -> Result<LoadedData, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("bad CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(format!("bad CSV record: {e}")))?;
    if rows.is_empty() {
        return Err(CliError::Input("CSV has no data rows".into()));
    }

    let col = |name: &str| -> Result<usize, CliError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("column '{name}' not found in header")))
    };
    let numeric = |idx: usize| -> Result<Vec<f64>, CliError> {
        rows.iter()
            .enumerate()
            .map(|(r, rec)| {
                let raw = rec.get(idx).unwrap_or("").trim();
                raw.parse::<f64>().map_err(|_| {
                    CliError::Input(format!(
                        "row {}: column '{}' is not numeric: {raw:?}",
                        r + 2,
                        headers[idx]
                    ))
                })
            })
            .collect()
    };

    let n = rows.len();
    let y = DVector::from_vec(numeric(col(&layout.response)?)?);

    let covariates: Vec<String> = match &layout.design_cols {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .filter(|h| is_covariate(h))
            .cloned()
            .collect(),
    };
    let mut x_names = Vec::new();
    let mut x_cols: Vec<Vec<f64>> = Vec::new();
    if !layout.no_intercept {
        x_names.push(INTERCEPT.to_string());
        x_cols.push(vec![1.0; n]);
    }
    for name in &covariates {
        x_cols.push(numeric(col(name)?)?);
        x_names.push(name.clone());
    }
    if x_cols.is_empty() {
        return Err(CliError::Input(
            "no fixed-effect columns (X would be empty)".into(),
        ));
    }
    let x = DMatrix::from_fn(n, x_cols.len(), |i, j| x_cols[j][i]);

    let (z, z_names) = match &layout.z_cols {
        Some(cols) => {
            let data: Vec<Vec<f64>> = cols
                .iter()
                .map(|c| col(c).and_then(numeric))
                .collect::<Result<_, _>>()?;
            (
                DMatrix::from_fn(n, cols.len(), |i, j| data[j][i]),
                cols.clone(),
            )
        }
        None => {
            let idx = headers.iter().position(|h| h == GROUP_COL).ok_or_else(|| {
                CliError::Input(format!(
                    "no '{GROUP_COL}' column; name explicit Z columns with --z-cols"
                ))
            })?;
            let labels: Vec<&str> = rows
                .iter()
                .map(|r| r.get(idx).unwrap_or("").trim())
                .collect();
            let z = z_from_groups(&labels)?;
            let (_, levels) = mixed_em_core::model::group_index(&labels);
            (z, levels)
        }
    };

    let model = ModelData::new(y, x, z)?;
    let digest = InputDigest {
        path: path.display().to_string(),
        sha256,
        n: model.n(),
        p: model.p(),
        q: model.q(),
    };
    Ok(LoadedData {
        model,
        x_names,
        z_names,
        digest,
    })
}

/// Simulated data in the default layout: `y, x1..x{p-1}, grp`.
pub fn write_simulation(out: &mut impl Write, sim: &Simulation) -> Result<(), CliError> {
    let data = &sim.data;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((1..data.p()).map(|j| format!("x{j}")));
    header.push(GROUP_COL.into());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![data.y()[i].to_string()];
        rec.extend((1..data.p()).map(|j| data.x()[(i, j)].to_string()));
        rec.push(sim.groups[i].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Response plus the full X and Z exactly as ingested, with their column
/// names; readable again with `--design-cols`/`--z-cols --no-intercept`.
pub fn write_design(out: &mut impl Write, data: &LoadedData) -> Result<(), CliError> {
    let model = &data.model;
    let x_names: Vec<String> = data.x_names.iter().map(|n| format!("X:{n}")).collect();
    let z_names: Vec<String> = data.z_names.iter().map(|n| format!("Z:{n}")).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend(x_names);
    header.extend(z_names);
    w.write_record(&header)?;
    for i in 0..model.n() {
        let mut rec = vec![model.y()[i].to_string()];
        rec.extend(model.x().row(i).iter().map(f64::to_string));
        rec.extend(model.z().row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn default_layout() {
        let f = write_tmp("y,x1,grp\n1.5,0.2,a\n2.0,-1,b\n0.5,3,a\n");
        let d = load(f.path(), &Layout::standard()).unwrap();
        assert_eq!((d.model.n(), d.model.p(), d.model.q()), (3, 2, 2));
        assert_eq!(d.x_names, vec!["(Intercept)", "x1"]);
        assert_eq!(d.z_names, vec!["a", "b"]);
        assert_eq!(d.model.x()[(1, 1)], -1.0);
        assert_eq!(d.digest.sha256.len(), 64);
    }

    #[test]
    fn missing_group_column_is_an_input_error() {
        let f = write_tmp("y,x1\n1,2\n3,4\n");
        assert!(matches!(
            load(f.path(), &Layout::standard()),
            Err(CliError::Input(_))
        ));
    }

    #[test]
    fn non_numeric_value() {
        let f = write_tmp("y,x1,grp\n1,abc,a\n2,1,b\n");
        assert!(matches!(
            load(f.path(), &Layout::standard()),
            Err(CliError::Input(_))
        ));
    }

    #[test]
    fn explicit_columns() {
        let f = write_tmp("resp,i,c,u1,u2\n1,1,0.5,1,0\n2,1,0.1,0,1\n3,1,-0.2,1,1\n");
        let layout = Layout {
            response: "resp".into(),
            design_cols: Some(vec!["i".into(), "c".into()]),
            z_cols: Some(vec!["u1".into(), "u2".into()]),
            no_intercept: true,
        };
        let d = load(f.path(), &layout).unwrap();
        assert_eq!(
            d.model.x(),
            &DMatrix::from_row_slice(3, 2, &[1., 0.5, 1., 0.1, 1., -0.2])
        );
        assert_eq!(
            d.model.z(),
            &DMatrix::from_row_slice(3, 2, &[1., 0., 0., 1., 1., 1.])
        );
    }
}
