//! Tabular ingestion, discretization, one-hot encoding and column-wise SIMD
//! packing.
//!
//! Each binary column of the one-hot matrix becomes its own ciphertext list,
//! chunked by the slot count, so columns of different attributes are
//! pre-aligned record-by-record for marginal computation.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::he::{Ciphertext, EncryptKey, EvaluateKey, HeEngine, HeError};

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("domain file: {0}")]
    Domain(String),
    #[error("attribute {attr:?}: domain size {size} below the minimum of 2")]
    DomainTooSmall { attr: String, size: usize },
    #[error("duplicate attribute name {0:?}")]
    DuplicateAttribute(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {attr:?}: value {value:?} outside declared labels")]
    ValueOutsideLabels { attr: String, value: String },
    #[error("attribute {attr:?}: {distinct} distinct values exceed declared size {size}")]
    TooManyDistinctValues { attr: String, distinct: usize, size: usize },
    #[error("attribute {attr:?}: value {value:?} is not numeric")]
    NonNumericValue { attr: String, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RowLengthMismatch { row: usize, expected: usize, found: usize },
    #[error("N >= 1 violated: dataset has no rows")]
    EmptyDataset,
    #[error("he: {0}")]
    He(#[from] HeError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttributeKind {
    Categorical { labels: Vec<String> },
    /// Left-closed right-open bins over `edges`; values outside are clipped to
    /// the outer bins.
    Binned { edges: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDomain {
    pub name: String,
    pub kind: AttributeKind,
}

impl AttributeDomain {
    pub fn size(&self) -> usize {
        match &self.kind {
            AttributeKind::Categorical { labels } => labels.len(),
            AttributeKind::Binned { edges } => edges.len() - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub attributes: Vec<AttributeDomain>,
}

impl DatasetSchema {
    pub fn new(attributes: Vec<AttributeDomain>) -> Result<Self, EncodeError> {
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if a.size() < 2 {
                return Err(EncodeError::DomainTooSmall { attr: a.name.clone(), size: a.size() });
            }
            if !seen.insert(a.name.clone()) {
                return Err(EncodeError::DuplicateAttribute(a.name.clone()));
            }
        }
        Ok(DatasetSchema { attributes })
    }

    pub fn attr_count(&self) -> usize {
        self.attributes.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.size()).collect()
    }

    /// Total domain size |Omega| = product of the attribute domain sizes.
    pub fn total_domain(&self) -> u64 {
        self.attributes.iter().map(|a| a.size() as u64).product()
    }

    /// One-hot bit offset of attribute `i` within a flattened row.
    pub fn offset(&self, i: usize) -> usize {
        self.attributes[..i].iter().map(|a| a.size()).sum()
    }

    pub fn total_bins(&self) -> usize {
        self.attributes.iter().map(|a| a.size()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("schema json");
        let mut h = Sha256::new();
        h.update(&json);
        format!("{:x}", h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Arc<DatasetSchema>,
    /// Category codes, row-major; rows[r][i] < size of attribute i.
    pub rows: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn new(schema: Arc<DatasetSchema>, rows: Vec<Vec<u32>>) -> Result<Self, EncodeError> {
        if rows.is_empty() {
            return Err(EncodeError::EmptyDataset);
        }
        let sizes = schema.sizes();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != sizes.len() {
                return Err(EncodeError::RowLengthMismatch {
                    row: r,
                    expected: sizes.len(),
                    found: row.len(),
                });
            }
            for (i, &code) in row.iter().enumerate() {
                assert!((code as usize) < sizes[i], "code {code} out of domain for attribute {i}");
            }
        }
        Ok(Dataset { schema, rows })
    }

    pub fn record_count(&self) -> usize {
        self.rows.len()
    }

    /// Seeded-shuffle split; the first `floor(frac * N)` shuffled records form
    /// the train set.
    pub fn split(&self, frac: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n_train = (frac * self.rows.len() as f64).floor() as usize;
        let train: Vec<Vec<u32>> = idx[..n_train].iter().map(|&i| self.rows[i].clone()).collect();
        let test: Vec<Vec<u32>> = idx[n_train..].iter().map(|&i| self.rows[i].clone()).collect();
        (
            Dataset { schema: self.schema.clone(), rows: train },
            Dataset { schema: self.schema.clone(), rows: test },
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EncodeError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.attributes.iter().map(|a| a.name.as_str()))?;
        for row in &self.rows {
            let fields: Vec<String> = row
                .iter()
                .zip(&self.schema.attributes)
                .map(|(&code, attr)| match &attr.kind {
                    AttributeKind::Categorical { labels } => labels[code as usize].clone(),
                    // binned attributes are emitted as the bin midpoint
                    AttributeKind::Binned { edges } => {
                        let lo = edges[code as usize];
                        let hi = edges[code as usize + 1];
                        format!("{}", (lo + hi) / 2.0)
                    }
                })
                .collect();
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses the domain JSON: attribute -> size (categorical, labels taken from
/// the data in sorted order), -> [labels], or -> {"edges": [...]}.
fn parse_domain(value: &Value) -> Result<Vec<(String, DomainSpec)>, EncodeError> {
    let obj = value
        .as_object()
        .ok_or_else(|| EncodeError::Domain("domain file must be a JSON object".into()))?;
    let mut specs = Vec::new();
    for (name, v) in obj {
        let spec = match v {
            Value::Number(n) => {
                let size = n
                    .as_u64()
                    .ok_or_else(|| EncodeError::Domain(format!("{name}: size must be a positive integer")))?;
                DomainSpec::Size(size as usize)
            }
            Value::Array(items) => {
                let labels: Result<Vec<String>, _> = items
                    .iter()
                    .map(|x| {
                        x.as_str()
                            .map(str::to_owned)
                            .ok_or_else(|| EncodeError::Domain(format!("{name}: labels must be strings")))
                    })
                    .collect();
                DomainSpec::Labels(labels?)
            }
            Value::Object(m) => {
                let edges = m
                    .get("edges")
                    .and_then(|e| e.as_array())
                    .ok_or_else(|| EncodeError::Domain(format!("{name}: expected an \"edges\" array")))?;
                let edges: Result<Vec<f64>, _> = edges
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| EncodeError::Domain(format!("{name}: edges must be numbers"))))
                    .collect();
                let edges = edges?;
                if edges.len() < 3 || edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(EncodeError::Domain(format!("{name}: edges must be strictly increasing, >= 3")));
                }
                DomainSpec::Edges(edges)
            }
            _ => return Err(EncodeError::Domain(format!("{name}: unsupported domain entry"))),
        };
        specs.push((name.clone(), spec));
    }
    Ok(specs)
}

enum DomainSpec {
    Size(usize),
    Labels(Vec<String>),
    Edges(Vec<f64>),
}

fn bin_index(edges: &[f64], x: f64) -> u32 {
    let bins = edges.len() - 1;
    if x < edges[0] {
        return 0;
    }
    // left-closed right-open; values at or past the last edge clip to the top bin
    for b in 0..bins {
        if x >= edges[b] && x < edges[b + 1] {
            return b as u32;
        }
    }
    (bins - 1) as u32
}

/// Loads a CSV table against its domain file. Attribute order follows the
/// domain file; the CSV header must cover exactly the same names.
pub fn load_dataset(table_file: &Path, domain_file: &Path) -> Result<Dataset, EncodeError> {
    let domain_json: Value = serde_json::from_str(&std::fs::read_to_string(domain_file)?)?;
    let specs = parse_domain(&domain_json)?;

    let mut reader = csv::Reader::from_path(table_file)?;
    let headers = reader.headers()?.clone();
    let mut col_of = Vec::with_capacity(specs.len());
    for (name, _) in &specs {
        let col = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EncodeError::UnknownAttribute(name.clone()))?;
        col_of.push(col);
    }
    for h in headers.iter() {
        if !specs.iter().any(|(name, _)| name == h) {
            return Err(EncodeError::UnknownAttribute(h.to_string()));
        }
    }

    let mut raw: Vec<Vec<String>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(EncodeError::RowLengthMismatch {
                row: r,
                expected: headers.len(),
                found: record.len(),
            });
        }
        raw.push(col_of.iter().map(|&c| record[c].to_string()).collect());
    }
    if raw.is_empty() {
        return Err(EncodeError::EmptyDataset);
    }

    let mut attributes = Vec::with_capacity(specs.len());
    let mut codes: Vec<Vec<u32>> = vec![Vec::with_capacity(specs.len()); raw.len()];
    for (i, (name, spec)) in specs.iter().enumerate() {
        match spec {
            DomainSpec::Labels(labels) => {
                for (r, row) in raw.iter().enumerate() {
                    let code = labels.iter().position(|l| l == &row[i]).ok_or_else(|| {
                        EncodeError::ValueOutsideLabels { attr: name.clone(), value: row[i].clone() }
                    })?;
                    codes[r].push(code as u32);
                }
                attributes.push(AttributeDomain {
                    name: name.clone(),
                    kind: AttributeKind::Categorical { labels: labels.clone() },
                });
            }
            DomainSpec::Size(size) => {
                let distinct: BTreeSet<String> = raw.iter().map(|row| row[i].clone()).collect();
                if distinct.len() > *size {
                    return Err(EncodeError::TooManyDistinctValues {
                        attr: name.clone(),
                        distinct: distinct.len(),
                        size: *size,
                    });
                }
                // codes by sorted label order; pad with placeholder labels up to
                // the declared size so the domain size is schema-driven
                let mut labels: Vec<String> = distinct.into_iter().collect();
                let mut pad = 0usize;
                while labels.len() < *size {
                    labels.push(format!("__unused_{pad}"));
                    pad += 1;
                }
                for (r, row) in raw.iter().enumerate() {
                    let code = labels.iter().position(|l| l == &row[i]).expect("label present");
                    codes[r].push(code as u32);
                }
                attributes.push(AttributeDomain {
                    name: name.clone(),
                    kind: AttributeKind::Categorical { labels },
                });
            }
            DomainSpec::Edges(edges) => {
                for (r, row) in raw.iter().enumerate() {
                    let x: f64 = row[i].parse().map_err(|_| EncodeError::NonNumericValue {
                        attr: name.clone(),
                        value: row[i].clone(),
                    })?;
                    codes[r].push(bin_index(edges, x));
                }
                attributes.push(AttributeDomain {
                    name: name.clone(),
                    kind: AttributeKind::Binned { edges: edges.clone() },
                });
            }
        }
    }

    let schema = Arc::new(DatasetSchema::new(attributes)?);
    Dataset::new(schema, codes)
}

/// Dense one-hot encoding: row r of attribute i sets bit offset(i) + code.
#[derive(Debug, Clone)]
pub struct OneHotMatrix {
    pub n: usize,
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    /// row-major, n x total_bins
    pub bits: Vec<u8>,
}

impl OneHotMatrix {
    pub fn total_bins(&self) -> usize {
        self.offsets.last().map(|o| o + self.sizes[self.sizes.len() - 1]).unwrap_or(0)
    }

    pub fn bit(&self, row: usize, attr: usize, bin: usize) -> u8 {
        self.bits[row * self.total_bins() + self.offsets[attr] + bin]
    }

    /// The one-hot column for (attr, bin) as 0/1 reals.
    pub fn column(&self, attr: usize, bin: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.bit(r, attr, bin) as f64).collect()
    }
}

pub fn one_hot(ds: &Dataset) -> OneHotMatrix {
    let sizes = ds.schema.sizes();
    let offsets: Vec<usize> = (0..sizes.len()).map(|i| ds.schema.offset(i)).collect();
    let width: usize = sizes.iter().sum();
    let mut bits = vec![0u8; ds.rows.len() * width];
    for (r, row) in ds.rows.iter().enumerate() {
        for (i, &code) in row.iter().enumerate() {
            bits[r * width + offsets[i] + code as usize] = 1;
        }
    }
    OneHotMatrix { n: ds.rows.len(), offsets, sizes, bits }
}

/// Column-wise packed encryption: one ciphertext list per (attribute, bin),
/// chunked by the slot count; slot r of chunk c encodes record c*L + r.
pub struct EncryptedColumns {
    pub record_count: usize,
    pub slot_count: usize,
    pub chunk_count: usize,
    pub sizes: Vec<usize>,
    /// indexed [attribute][bin][chunk]
    pub columns: Vec<Vec<Vec<Ciphertext>>>,
}

pub fn pack_and_encrypt(
    ohe: &OneHotMatrix,
    engine: &HeEngine,
    cap: &EncryptKey,
) -> Result<EncryptedColumns, EncodeError> {
    let l = engine.slot_count();
    let chunk_count = ohe.n.div_ceil(l);
    let mut columns = Vec::with_capacity(ohe.sizes.len());
    for (attr, &size) in ohe.sizes.iter().enumerate() {
        let mut bins = Vec::with_capacity(size);
        for bin in 0..size {
            let col = ohe.column(attr, bin);
            let mut chunks = Vec::with_capacity(chunk_count);
            for c in 0..chunk_count {
                let lo = c * l;
                let hi = ((c + 1) * l).min(ohe.n);
                chunks.push(engine.encrypt(&col[lo..hi], cap)?);
            }
            bins.push(chunks);
        }
        columns.push(bins);
    }
    Ok(EncryptedColumns {
        record_count: ohe.n,
        slot_count: l,
        chunk_count,
        sizes: ohe.sizes.clone(),
        columns,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ColumnManifest {
    pub record_count: usize,
    pub slot_count: usize,
    pub chunk_count: usize,
    pub attributes: Vec<ColumnManifestAttr>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ColumnManifestAttr {
    pub index: usize,
    pub bins: Vec<Vec<String>>,
}

impl EncryptedColumns {
    /// Writes one ciphertext file per chunk plus a manifest mapping
    /// attribute -> bin -> chunk file paths.
    pub fn write_to_dir(&self, dir: &Path) -> Result<std::path::PathBuf, EncodeError> {
        std::fs::create_dir_all(dir)?;
        let mut attributes = Vec::new();
        for (attr, bins) in self.columns.iter().enumerate() {
            let mut bin_paths = Vec::new();
            for (bin, chunks) in bins.iter().enumerate() {
                let mut chunk_paths = Vec::new();
                for (c, ct) in chunks.iter().enumerate() {
                    let name = format!("col_a{attr}_b{bin}_c{c}.json");
                    std::fs::write(dir.join(&name), ct.to_json())?;
                    chunk_paths.push(name);
                }
                bin_paths.push(chunk_paths);
            }
            attributes.push(ColumnManifestAttr { index: attr, bins: bin_paths });
        }
        let manifest = ColumnManifest {
            record_count: self.record_count,
            slot_count: self.slot_count,
            chunk_count: self.chunk_count,
            attributes,
        };
        let path = dir.join("columns_manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }

    pub fn read_from_dir(dir: &Path) -> Result<EncryptedColumns, EncodeError> {
        let manifest: ColumnManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("columns_manifest.json"))?)?;
        let mut columns = Vec::new();
        let mut sizes = Vec::new();
        for attr in &manifest.attributes {
            sizes.push(attr.bins.len());
            let mut bins = Vec::new();
            for chunk_paths in &attr.bins {
                let mut chunks = Vec::new();
                for name in chunk_paths {
                    let ct = Ciphertext::from_json(&std::fs::read_to_string(dir.join(name))?)?;
                    chunks.push(ct);
                }
                bins.push(chunks);
            }
            columns.push(bins);
        }
        Ok(EncryptedColumns {
            record_count: manifest.record_count,
            slot_count: manifest.slot_count,
            chunk_count: manifest.chunk_count,
            sizes,
            columns,
        })
    }
}

/// Exact-backend check that per record and attribute exactly one bin is hot.
pub fn check_one_hot_validity(
    cols: &EncryptedColumns,
    engine: &HeEngine,
    evk: &EvaluateKey,
    dk: &crate::he::DecryptKey,
) -> Result<bool, EncodeError> {
    let _ = evk;
    for bins in &cols.columns {
        let mut totals = vec![0.0; cols.record_count];
        for chunks in bins {
            for (c, ct) in chunks.iter().enumerate() {
                let dec = engine.decrypt(ct, dk)?;
                let lo = c * cols.slot_count;
                for (r, v) in dec.iter().enumerate() {
                    if lo + r < cols.record_count {
                        totals[lo + r] += v;
                    }
                }
            }
        }
        if totals.iter().any(|&t| (t - 1.0).abs() > 1e-9) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::HeParams;
    use std::io::Write;

    fn write_tmp(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn toy_schema() -> Arc<DatasetSchema> {
        Arc::new(
            DatasetSchema::new(vec![
                AttributeDomain {
                    name: "age".into(),
                    kind: AttributeKind::Categorical {
                        labels: vec!["10".into(), "20".into(), "30".into()],
                    },
                },
                AttributeDomain {
                    name: "gender".into(),
                    kind: AttributeKind::Categorical { labels: vec!["M".into(), "F".into()] },
                },
            ])
            .unwrap(),
        )
    }

    #[test]
    fn load_categorical_and_binned() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_tmp(
            dir.path(),
            "t.csv",
            "color,score\nred,0.5\nblue,1.0\nred,2.5\n",
        );
        let dom = write_tmp(
            dir.path(),
            "d.json",
            r#"{"color": ["red", "blue", "green"], "score": {"edges": [0.0, 1.0, 2.0, 3.0]}}"#,
        );
        let ds = load_dataset(&csv, &dom).unwrap();
        assert_eq!(ds.record_count(), 3);
        assert_eq!(ds.schema.sizes(), vec![3, 3]);
        assert_eq!(ds.rows[0], vec![0, 0]);
        // inner bin edge goes to the right bin
        assert_eq!(ds.rows[1], vec![1, 1]);
        assert_eq!(ds.rows[2], vec![0, 2]);
    }

    #[test]
    fn binning_clips_to_outer_bins() {
        let edges = [0.0, 1.0, 2.0];
        assert_eq!(bin_index(&edges, -5.0), 0);
        assert_eq!(bin_index(&edges, 5.0), 1);
        assert_eq!(bin_index(&edges, 2.0), 1);
    }

    #[test]
    fn empty_csv_body_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_tmp(dir.path(), "t.csv", "a,b\n");
        let dom = write_tmp(dir.path(), "d.json", r#"{"a": 2, "b": 2}"#);
        assert!(matches!(load_dataset(&csv, &dom), Err(EncodeError::EmptyDataset)));
    }

    #[test]
    fn unknown_attribute_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_tmp(dir.path(), "t.csv", "a,b\nx,y\n");
        let dom = write_tmp(dir.path(), "d.json", r#"{"a": 2, "c": 2}"#);
        assert!(matches!(load_dataset(&csv, &dom), Err(EncodeError::UnknownAttribute(_))));
    }

    #[test]
    fn value_outside_labels_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_tmp(dir.path(), "t.csv", "a\nzebra\n");
        let dom = write_tmp(dir.path(), "d.json", r#"{"a": ["x", "y"]}"#);
        assert!(matches!(load_dataset(&csv, &dom), Err(EncodeError::ValueOutsideLabels { .. })));
    }

    #[test]
    fn binning_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_tmp(dir.path(), "t.csv", "a,b\n0.5,x\n1.5,y\n0.1,x\n");
        let dom = write_tmp(dir.path(), "d.json", r#"{"a": {"edges": [0.0, 1.0, 2.0]}, "b": 2}"#);
        let d1 = load_dataset(&csv, &dom).unwrap();
        let d2 = load_dataset(&csv, &dom).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn one_hot_layout() {
        let schema = toy_schema();
        let ds = Dataset::new(schema, vec![vec![2, 0]]).unwrap();
        let ohe = one_hot(&ds);
        assert_eq!(ohe.bits, vec![0, 0, 1, 1, 0]);
    }

    #[test]
    fn one_hot_rows_sum_to_d() {
        let schema = toy_schema();
        let ds = Dataset::new(schema, vec![vec![0, 1], vec![2, 0], vec![1, 1]]).unwrap();
        let ohe = one_hot(&ds);
        let width = ohe.total_bins();
        for r in 0..ds.record_count() {
            let s: u32 = ohe.bits[r * width..(r + 1) * width].iter().map(|&b| b as u32).sum();
            assert_eq!(s, 2);
        }
    }

    #[test]
    fn one_hot_column_sums_are_marginals() {
        let schema = toy_schema();
        let ds =
            Dataset::new(schema, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0]]).unwrap();
        let ohe = one_hot(&ds);
        // brute-force count oracle
        for attr in 0..2 {
            for bin in 0..ds.schema.attributes[attr].size() {
                let oracle = ds.rows.iter().filter(|r| r[attr] as usize == bin).count() as f64;
                let col_sum: f64 = ohe.column(attr, bin).iter().sum();
                assert_eq!(col_sum, oracle);
            }
        }
    }

    #[test]
    fn packing_chunk_counts() {
        let (engine, keys) = HeEngine::keygen_seeded(HeParams::exact(64, 4), 1).unwrap();
        let schema = toy_schema();
        let rows: Vec<Vec<u32>> = (0..100).map(|i| vec![(i % 3) as u32, (i % 2) as u32]).collect();
        let ds = Dataset::new(schema, rows).unwrap();
        let cols = pack_and_encrypt(&one_hot(&ds), &engine, &keys.encrypt).unwrap();
        assert_eq!(cols.chunk_count, 2); // ceil(100/64)
        // exact-backend decrypt of a packed column equals the OHE column
        let ohe = one_hot(&ds);
        let dec0 = engine.decrypt(&cols.columns[0][1][0], &keys.decrypt).unwrap();
        let dec1 = engine.decrypt(&cols.columns[0][1][1], &keys.decrypt).unwrap();
        let col = ohe.column(0, 1);
        for r in 0..100 {
            let got = if r < 64 { dec0[r] } else { dec1[r - 64] };
            assert_eq!(got, col[r]);
        }
        // trailing slots of the last chunk are zero
        assert!(dec1[36..].iter().all(|&x| x == 0.0));
        assert!(check_one_hot_validity(&cols, &engine, &keys.evaluate, &keys.decrypt).unwrap());
    }

    #[test]
    fn single_chunk_when_n_below_l() {
        let (engine, keys) = HeEngine::keygen_seeded(HeParams::exact(256, 4), 1).unwrap();
        let schema = toy_schema();
        let rows: Vec<Vec<u32>> = (0..228).map(|i| vec![(i % 3) as u32, (i % 2) as u32]).collect();
        let ds = Dataset::new(schema, rows).unwrap();
        let cols = pack_and_encrypt(&one_hot(&ds), &engine, &keys.encrypt).unwrap();
        assert_eq!(cols.chunk_count, 1);
    }

    #[test]
    fn column_manifest_roundtrip() {
        let (engine, keys) = HeEngine::keygen_seeded(HeParams::exact(64, 4), 1).unwrap();
        let schema = toy_schema();
        let rows: Vec<Vec<u32>> = (0..70).map(|i| vec![(i % 3) as u32, (i % 2) as u32]).collect();
        let ds = Dataset::new(schema, rows).unwrap();
        let cols = pack_and_encrypt(&one_hot(&ds), &engine, &keys.encrypt).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cols.write_to_dir(dir.path()).unwrap();
        let back = EncryptedColumns::read_from_dir(dir.path()).unwrap();
        assert_eq!(back.record_count, 70);
        assert_eq!(back.sizes, vec![3, 2]);
        let a = engine.decrypt(&cols.columns[1][0][0], &keys.decrypt).unwrap();
        let b = engine.decrypt(&back.columns[1][0][0], &keys.decrypt).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_fractions() {
        let schema = toy_schema();
        let rows: Vec<Vec<u32>> = (0..285).map(|i| vec![(i % 3) as u32, (i % 2) as u32]).collect();
        let ds = Dataset::new(schema, rows).unwrap();
        let (train, test) = ds.split(0.8, 42);
        assert_eq!(train.record_count(), 228);
        assert_eq!(test.record_count(), 57);
        // deterministic under seed
        let (train2, _) = ds.split(0.8, 42);
        assert_eq!(train.rows, train2.rows);
    }
}
