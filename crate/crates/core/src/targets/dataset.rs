use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TRAIN_FRACTION: f64 = 0.8;
const MIN_STD: f64 = 1e-8;

/// Label encoding of a CSV file; the class label is always the last column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// `g` -> 1, `b` -> 0
    Ionosphere,
    /// `M` -> 1, `R` -> 0
    Sonar,
    /// `0` / `1` passthrough
    GenericCsv,
}

impl DatasetFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetFormat::Ionosphere => "ionosphere",
            DatasetFormat::Sonar => "sonar",
            DatasetFormat::GenericCsv => "generic_csv",
        }
    }

    fn parse_label(&self, s: &str) -> Option<u8> {
        let s = s.trim();
        match self {
            DatasetFormat::Ionosphere => match s {
                "g" => Some(1),
                "b" => Some(0),
                _ => None,
            },
            DatasetFormat::Sonar => match s {
                "M" => Some(1),
                "R" => Some(0),
                _ => None,
            },
            DatasetFormat::GenericCsv => match s.parse::<f64>() {
                Ok(v) if v == 0.0 => Some(0),
                Ok(v) if v == 1.0 => Some(1),
                _ => None,
            },
        }
    }
}

/// Binary classification data with a train/test split. Features are
/// standardized with statistics of the train rows.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    n_features: usize,
    /// `rows x n_features`, standardized.
    features: Vec<f64>,
    labels: Vec<u8>,
    train: Vec<usize>,
    test: Vec<usize>,
    mean: Vec<f64>,
    std: Vec<f64>,
    split_seed: u64,
}

/// Split indices and standardization parameters, written next to runs so
/// an evaluation can be reproduced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSidecar {
    pub split_seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LabeledDataset {
    /// Builds a dataset from raw rows, splitting 80/20 with `split_seed`.
    pub fn from_rows(raw: Vec<Vec<f64>>, labels: Vec<u8>, split_seed: u64) -> Result<Self> {
        let m = raw.len();
        if m == 0 || labels.len() != m {
            return Err(crate::error::invalid("data", "need a nonempty set of labelled rows"));
        }
        let d = raw[0].len();
        if let Some(bad) = raw.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        if labels.iter().any(|l| *l > 1) {
            return Err(crate::error::invalid("labels", "must be 0 or 1"));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
        let n_train = ((m as f64) * TRAIN_FRACTION).round() as usize;
        let mut train = order[..n_train].to_vec();
        let mut test = order[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();

        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        if !train.is_empty() {
            for &i in &train {
                for (mu, v) in mean.iter_mut().zip(&raw[i]) {
                    *mu += v;
                }
            }
            mean.iter_mut().for_each(|mu| *mu /= train.len() as f64);
            for &i in &train {
                for ((s, v), mu) in std.iter_mut().zip(&raw[i]).zip(&mean) {
                    *s += (v - mu) * (v - mu);
                }
            }
        }
        let denom = train.len().max(1) as f64;
        std.iter_mut().for_each(|s| *s = (*s / denom).sqrt().max(MIN_STD));

        let features = raw
            .iter()
            .flat_map(|row| {
                row.iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((v, mu), s)| (v - mu) / s)
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(Self {
            n_features: d,
            features,
            labels,
            train,
            test,
            mean,
            std,
            split_seed,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn sidecar(&self) -> SplitSidecar {
        SplitSidecar {
            split_seed: self.split_seed,
            train: self.train.clone(),
            test: self.test.clone(),
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }
}

fn is_numeric(s: &str) -> bool {
    s.trim().parse::<f64>().is_ok()
}

/// Reads a comma-separated file whose last column is the class label. A
/// first row with non-numeric feature fields is taken as a header.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat, split_seed: u64) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line + 1,
            reason: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line + 1,
                reason: "need at least one feature and a label".into(),
            });
        }
        let n = record.len();
        if line == 0 && record.iter().take(n - 1).any(|f| !is_numeric(f)) {
            continue;
        }
        let row = record
            .iter()
            .take(n - 1)
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: line + 1,
                    reason: format!("cannot parse `{f}` as a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let symbol = &record[n - 1];
        let label = format
            .parse_label(symbol)
            .ok_or_else(|| Error::UnknownLabel(symbol.to_string()))?;
        raw.push(row);
        labels.push(label);
    }
    LabeledDataset::from_rows(raw, labels, split_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn generic_split_is_80_20_and_disjoint() {
        let body: String = (0..10).map(|i| format!("{},{},{}\n", i, i * i, i % 2)).collect();
        let f = write(&format!("a,b,label\n{body}"));
        let data = load_dataset(f.path(), DatasetFormat::GenericCsv, 3).unwrap();
        assert_eq!(data.n_rows(), 10);
        assert_eq!(data.train().len(), 8);
        assert_eq!(data.test().len(), 2);
        let mut all: Vec<usize> = data.train().iter().chain(data.test()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        // train features standardized
        for j in 0..2 {
            let mean: f64 = data.train().iter().map(|&i| data.row(i)[j]).sum::<f64>() / 8.0;
            let var: f64 = data.train().iter().map(|&i| data.row(i)[j].powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_label_is_an_error() {
        let f = write("1.0,2.0,x\n");
        let err = load_dataset(f.path(), DatasetFormat::Ionosphere, 0).unwrap_err();
        assert!(err.to_string().contains("unknown label symbol"));
    }

    #[test]
    fn unparseable_row_is_an_error() {
        let f = write("1.0,2.0,g\n1.0,oops,b\n");
        assert!(matches!(
            load_dataset(f.path(), DatasetFormat::Ionosphere, 0),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn constant_columns_standardize_to_zero() {
        let f = write("0,1,M\n0,2,R\n0,3,M\n0,4,R\n0,5,M\n");
        let data = load_dataset(f.path(), DatasetFormat::Sonar, 1).unwrap();
        for i in 0..data.n_rows() {
            assert_eq!(data.row(i)[0], 0.0);
        }
    }

    #[test]
    fn ionosphere_file_shape() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/ionosphere.data");
        let data = load_dataset(path, DatasetFormat::Ionosphere, 0).unwrap();
        assert_eq!(data.n_rows(), 351);
        assert_eq!(data.n_features(), 34);
        assert_eq!(data.train().len() + data.test().len(), 351);
        let side = data.sidecar();
        let json = serde_json::to_string(&side).unwrap();
        assert_eq!(serde_json::from_str::<SplitSidecar>(&json).unwrap(), side);
    }
}
