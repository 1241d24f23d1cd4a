//! Loaders for the bundled CSV datasets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::poisson::SubjectRecord;

/// The value observation 78 of the galaxy data must carry; some
/// distributions of the data set have the digits transposed.
pub const GALAXY_OBS78: f64 = 26960.0;
/// Subject removed from the epilepsy data before analysis.
pub const EPILEPSY_EXCLUDED_SUBJECT: u32 = 49;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    Wind,
    Galaxy,
    Epilepsy,
}

impl Schema {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Schema::Wind => &["volts", "wind_speed"],
            Schema::Galaxy => &["velocity"],
            Schema::Epilepsy => &["subject", "period", "count", "treatment"],
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Schema::Wind => "wind.csv",
            Schema::Galaxy => "galaxy.csv",
            Schema::Epilepsy => "epilepsy.csv",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Schema::Wind => "Montgomery, Peck and Vining (2001), Introduction to Linear Regression Analysis, p. 128",
            Schema::Galaxy => "Postman, Huchra and Geller (1986), via R package MASS, observation 78 corrected",
            Schema::Epilepsy => "Thall and Vail (1990), via Diggle, Liang and Zeger (1995)",
        }
    }
}

/// A validated table of numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub schema: Schema,
    pub columns: Vec<String>,
    /// Column-major values.
    pub values: Vec<Vec<f64>>,
    pub source: String,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let i = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Data(format!("{}: no column `{name}`", self.name)))?;
        Ok(&self.values[i])
    }

    /// Per-subject epilepsy records, baseline count first.
    pub fn subjects(&self) -> Result<Vec<SubjectRecord>> {
        if self.schema != Schema::Epilepsy {
            return Err(Error::Data(format!("{} is not longitudinal count data", self.name)));
        }
        let (sub, per, cnt, trt) = (
            self.column("subject")?,
            self.column("period")?,
            self.column("count")?,
            self.column("treatment")?,
        );
        let mut by_subject: BTreeMap<u32, (f64, BTreeMap<u32, u64>)> = BTreeMap::new();
        for i in 0..self.rows() {
            let entry = by_subject.entry(sub[i] as u32).or_insert((trt[i], BTreeMap::new()));
            if entry.0 != trt[i] {
                return Err(Error::Data(format!("subject {} changes treatment arm", sub[i])));
            }
            if entry.1.insert(per[i] as u32, cnt[i] as u64).is_some() {
                return Err(Error::Data(format!("subject {} has period {} twice", sub[i], per[i])));
            }
        }
        by_subject
            .into_iter()
            .map(|(id, (treatment, periods))| {
                let expected: Vec<u32> = (0..periods.len() as u32).collect();
                if periods.keys().copied().collect::<Vec<_>>() != expected {
                    return Err(Error::Data(format!("subject {id} has non-contiguous periods")));
                }
                Ok(SubjectRecord {
                    id,
                    treatment,
                    counts: periods.into_values().collect(),
                })
            })
            .collect()
    }
}

fn read_csv(path: &Path, schema: Schema) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != schema.columns() {
        return Err(Error::Data(format!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            schema.columns(),
            header
        )));
    }
    let mut values = vec![Vec::new(); header.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!("{}: row {}: `{field}` is not a number", path.display(), row + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("{}: row {}: non-finite value", path.display(), row + 1)));
            }
            values[j].push(v);
        }
    }
    Ok((header, values))
}

/// Reads and validates a dataset.
///
/// Wind data must have 25 rows. Galaxy data must have 82 rows with
/// observation 78 equal to 26960. Epilepsy data must have 59 subjects with
/// five periods each; subject 49 is removed, leaving 58.
pub fn load_dataset(path: impl AsRef<Path>, schema: Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let (columns, mut values) = read_csv(path, schema)?;
    let rows = values[0].len();
    let name = path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    match schema {
        Schema::Wind => {
            if rows != 25 {
                return Err(Error::Data(format!("{}: wind data has {rows} rows, expected 25", path.display())));
            }
            if values[1].iter().any(|&x| x <= 0.0) {
                return Err(Error::Data("wind speeds must be positive".into()));
            }
        }
        Schema::Galaxy => {
            if rows != 82 {
                return Err(Error::Data(format!("{}: galaxy data has {rows} rows, expected 82", path.display())));
            }
            if values[0][77] != GALAXY_OBS78 {
                return Err(Error::Data(format!(
                    "{}: observation 78 is {} but must be the corrected value {GALAXY_OBS78}",
                    path.display(),
                    values[0][77]
                )));
            }
        }
        Schema::Epilepsy => {
            if values[2].iter().any(|&c| c < 0.0 || c.fract() != 0.0) {
                return Err(Error::Data("counts must be non-negative integers".into()));
            }
            let mut subjects: Vec<u32> = values[0].iter().map(|&s| s as u32).collect();
            subjects.dedup();
            if subjects.len() != 59 || rows != 59 * 5 {
                return Err(Error::Data(format!(
                    "{}: expected 59 subjects x 5 periods, found {} subjects and {rows} rows",
                    path.display(),
                    subjects.len()
                )));
            }
            let keep: Vec<bool> = values[0].iter().map(|&s| s as u32 != EPILEPSY_EXCLUDED_SUBJECT).collect();
            for col in &mut values {
                let mut it = keep.iter();
                col.retain(|_| *it.next().unwrap());
            }
        }
    }
    Ok(Dataset {
        name,
        schema,
        columns,
        values,
        source: schema.source().into(),
    })
}

/// Loads `schema`'s file from a data directory.
pub fn load_bundled(data_dir: impl AsRef<Path>, schema: Schema) -> Result<Dataset> {
    load_dataset(data_dir.as_ref().join(schema.file_name()), schema)
}

/// Galaxy velocities in units of 1000 km/s, the scale the mixture prior is
/// stated on.
pub fn galaxy_velocities(ds: &Dataset) -> Result<Vec<f64>> {
    Ok(ds.column("velocity")?.iter().map(|v| v / 1000.0).collect())
}
