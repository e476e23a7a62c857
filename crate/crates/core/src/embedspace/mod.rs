//! Embedding sets: latent vectors with ids, splits and reconstruction
//! errors, plus the embedding CSV format and the feature spaces used for
//! neighbor distances.

mod pca;

pub use pca::{symmetric_eigen, PcaModel, JACOBI_TOLERANCE};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoenc::LatentVector;
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::format::{fmt_float, parse_float};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub split: Split,
    pub z: LatentVector,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    by_id: BTreeMap<u64, usize>,
}

impl EmbeddingSet {
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records.first().map(|r| r.z.dim()).unwrap_or(0);
        let mut by_id = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.z.dim() != dim {
                return Err(Error::Shape {
                    what: "embedding",
                    expected: dim,
                    got: r.z.dim(),
                });
            }
            if r.z.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("embedding {} has a non-finite component", r.id)));
            }
            if let Some(e) = r.error {
                if !(e.is_finite() && e >= 0.0) {
                    return Err(Error::Data(format!("embedding {} has invalid error {e}", r.id)));
                }
            }
            if by_id.insert(r.id, i).is_some() {
                return Err(Error::Data(format!("duplicate embedding id {}", r.id)));
            }
        }
        Ok(EmbeddingSet { dim, records, by_id })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&EmbeddingRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Top-`k` PCA of the train split.
    pub fn fit_pca(&self, k: usize) -> Result<PcaModel> {
        let rows: Vec<&[f64]> = self.split(Split::Train).map(|r| r.z.as_slice()).collect();
        PcaModel::fit(&rows, k)
    }

    pub fn header(dim: usize) -> Vec<String> {
        let mut h = vec!["id".to_string(), "split".into(), "err".into()];
        h.extend((0..dim).map(|i| format!("z{i}")));
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(Self::header(self.dim)).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            let mut row = vec![
                r.id.to_string(),
                r.split.name().to_string(),
                r.error.map(fmt_float).unwrap_or_default(),
            ];
            row.extend(r.z.as_slice().iter().map(|&x| fmt_float(x)));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 4 {
            return Err(Error::input(path, "header: expected `id,split,err,z0,...`"));
        }
        let dim = header.len() - 3;
        if header != Self::header(dim) {
            return Err(Error::input(
                path,
                format!("header: expected `{}`", Self::header(dim).join(",")),
            ));
        }
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| csv_err(path, e))?;
            let at = |field: &str, msg: String| Error::input(path, format!("row {}: field `{field}`: {msg}", line + 1));
            if row.len() != header.len() {
                return Err(at("*", format!("expected {} columns, got {}", header.len(), row.len())));
            }
            let id: u64 = row[0].parse().map_err(|_| at("id", format!("not an integer: `{}`", &row[0])))?;
            let split: Split = row[1].parse().map_err(|e: Error| at("split", e.to_string()))?;
            let error = match &row[2] {
                "" => None,
                s => Some(parse_float(s).map_err(|m| at("err", m))?),
            };
            let z = (0..dim)
                .map(|i| parse_float(&row[3 + i]).map_err(|m| at(&header[3 + i], m)))
                .collect::<Result<Vec<_>>>()?;
            records.push(EmbeddingRecord {
                id,
                split,
                z: LatentVector(z),
                error,
            });
        }
        Self::new(records).map_err(|e| Error::input(path, e.to_string()))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::input(path, format!("{other:?}")),
    }
}

/// Which coordinates neighbor distances are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceSpace {
    /// The full latent space.
    #[default]
    Latent,
    /// The first two principal components of the training embeddings.
    Pca,
}

/// Map from latent vectors to the coordinates used for distances, fitted on
/// a reference (training) set: optional per-dimension z-scoring, then an
/// optional 2-component PCA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    standardize: Option<(Vec<f64>, Vec<f64>)>,
    pca: Option<PcaModel>,
}

impl FeatureSpace {
    pub fn identity() -> Self {
        FeatureSpace {
            standardize: None,
            pca: None,
        }
    }

    pub fn fit(reference: &[&[f64]], standardize: bool, space: DistanceSpace) -> Result<Self> {
        let mut fs = Self::identity();
        if reference.is_empty() {
            return Err(Error::Param("feature space needs a nonempty reference set".into()));
        }
        if standardize {
            let dim = reference[0].len();
            let n = reference.len() as f64;
            let mut mean = vec![0.0; dim];
            for r in reference {
                mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x);
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; dim];
            for r in reference {
                var.iter_mut()
                    .zip(r.iter().zip(&mean))
                    .for_each(|(v, (x, m))| *v += (x - m) * (x - m));
            }
            // Constant dimensions keep unit scale.
            let scale = var
                .iter()
                .map(|v| {
                    let sd = (v / (n - 1.0).max(1.0)).sqrt();
                    if sd > 0.0 { sd } else { 1.0 }
                })
                .collect();
            fs.standardize = Some((mean, scale));
        }
        if space == DistanceSpace::Pca {
            let rows: Vec<Vec<f64>> = reference.iter().map(|r| fs.standardized(r)).collect();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let k = 2.min(refs[0].len());
            fs.pca = Some(PcaModel::fit(&refs, k)?);
        }
        Ok(fs)
    }

    fn standardized(&self, z: &[f64]) -> Vec<f64> {
        match &self.standardize {
            Some((mean, scale)) => z
                .iter()
                .zip(mean.iter().zip(scale))
                .map(|(x, (m, s))| (x - m) / s)
                .collect(),
            None => z.to_vec(),
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        let s = self.standardized(z);
        match &self.pca {
            Some(p) => p.transform(&s),
            None => Ok(s),
        }
    }
}
