//! Bag file formats.
//!
//! JSONL holds one bag per line: `{"id": "...", "label": 1, "instances": [[...], ...]}`
//! with one row per instance. The multi-class variant replaces `label` by a
//! string `class`. A CSV directory holds `labels.csv` (columns `id,label`) and
//! one headerless `<id>.csv` per bag with one instance per row.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use convmpt_core::{Bag, ClassBag, Dataset, Label, Matrix, MulticlassDataset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    /// JSONL for files, csv-dir for directories.
    Auto,
    Jsonl,
    CsvDir,
}

impl Format {
    pub fn resolve(self, path: &Path) -> Format {
        match self {
            Format::Auto if path.is_dir() => Format::CsvDir,
            Format::Auto => Format::Jsonl,
            other => other,
        }
    }
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    /// Set when labels were given as `{0, 1}` and mapped to `{-1, +1}`.
    pub labels_remapped: bool,
}

#[derive(Serialize, Deserialize)]
struct BagRecord {
    id: String,
    label: i64,
    instances: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ClassRecord {
    id: String,
    class: String,
    instances: Vec<Vec<f64>>,
}

struct RawBag {
    location: String,
    id: String,
    label: i64,
    instances: Vec<Vec<f64>>,
}

pub fn load_dataset(path: &Path, format: Format) -> CliResult<LoadedDataset> {
    let raw = match format.resolve(path) {
        Format::CsvDir => read_csv_dir(path)?,
        _ => read_jsonl(path)?,
    };
    assemble(raw)
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn jsonl_lines(path: &Path) -> CliResult<Vec<(String, String)>> {
    let mut lines = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push((format!("{}:{}", path.display(), i + 1), line));
    }
    Ok(lines)
}

fn read_jsonl(path: &Path) -> CliResult<Vec<RawBag>> {
    jsonl_lines(path)?
        .into_iter()
        .map(|(location, line)| {
            let record: BagRecord = serde_json::from_str(&line)
                .map_err(|e| CliError::Parse { location: location.clone(), message: e.to_string() })?;
            Ok(RawBag { location, id: record.id, label: record.label, instances: record.instances })
        })
        .collect()
}

fn check_id(id: &str, location: &str) -> CliResult<()> {
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) {
        return Err(CliError::Parse {
            location: location.to_string(),
            message: format!("bag id `{id}` cannot be used as a file name"),
        });
    }
    Ok(())
}

fn read_csv_dir(dir: &Path) -> CliResult<Vec<RawBag>> {
    let manifest = dir.join("labels.csv");
    let mut reader = csv::Reader::from_reader(open(&manifest)?);
    let mut bags = Vec::new();
    for (i, row) in reader.deserialize::<(String, i64)>().enumerate() {
        // Line 1 is the header.
        let location = format!("{}:{}", manifest.display(), i + 2);
        let (id, label) = row.map_err(|e| CliError::Parse { location: location.clone(), message: e.to_string() })?;
        check_id(&id, &location)?;
        let instances = read_instance_csv(&dir.join(format!("{id}.csv")))?;
        bags.push(RawBag { location, id, label, instances });
    }
    Ok(bags)
}

fn read_instance_csv(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(open(path)?);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let location = format!("{}:{}", path.display(), i + 1);
        let record = record.map_err(|e| CliError::Parse { location: location.clone(), message: e.to_string() })?;
        let row = record
            .iter()
            .map(|field| {
                field.trim().parse::<f64>().map_err(|e| CliError::Parse {
                    location: location.clone(),
                    message: format!("`{field}`: {e}"),
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn instance_matrix(instances: &[Vec<f64>], location: &str, dim: &mut Option<usize>) -> CliResult<Matrix> {
    let record = |source| CliError::Record { location: location.to_string(), source };
    if let Some(first) = instances.first() {
        let d = *dim.get_or_insert(first.len());
        if let Some(bad) = instances.iter().find(|row| row.len() != d) {
            return Err(record(convmpt_core::Error::DimensionMismatch { expected: d, found: bad.len() }));
        }
    }
    let rows: Vec<&[f64]> = instances.iter().map(Vec::as_slice).collect();
    Matrix::from_rows(&rows).map_err(record)
}

fn assemble(raw: Vec<RawBag>) -> CliResult<LoadedDataset> {
    let labels: BTreeSet<i64> = raw.iter().map(|b| b.label).collect();
    let remap = labels.contains(&0);
    if remap {
        if let Some(bad) = raw.iter().find(|b| b.label != 0 && b.label != 1) {
            return Err(CliError::Record {
                location: bad.location.clone(),
                source: convmpt_core::Error::InvalidLabel(bad.label),
            });
        }
    }
    let mut dim = None;
    let mut bags = Vec::with_capacity(raw.len());
    for b in &raw {
        let record = |source| CliError::Record { location: b.location.clone(), source };
        let label = if remap { Label::from_sign(2 * b.label - 1) } else { Label::from_sign(b.label) }.map_err(record)?;
        let instances = instance_matrix(&b.instances, &b.location, &mut dim)?;
        bags.push(Bag::new(b.id.clone(), label, instances).map_err(record)?);
    }
    Ok(LoadedDataset { dataset: Dataset::new(bags)?, labels_remapped: remap })
}

pub fn load_multiclass(path: &Path) -> CliResult<MulticlassDataset> {
    let records = jsonl_lines(path)?
        .into_iter()
        .map(|(location, line)| {
            serde_json::from_str::<ClassRecord>(&line)
                .map(|r| (location.clone(), r))
                .map_err(|e| CliError::Parse { location, message: e.to_string() })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let classes: Vec<String> = records.iter().map(|(_, r)| r.class.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut dim = None;
    let mut bags = Vec::with_capacity(records.len());
    for (location, r) in records {
        let instances = instance_matrix(&r.instances, &location, &mut dim)?;
        if instances.rows() == 0 {
            return Err(CliError::Record { location, source: convmpt_core::Error::EmptyBag { id: r.id } });
        }
        let class = classes.binary_search(&r.class).expect("class collected above");
        bags.push(ClassBag { id: r.id, class, instances });
    }
    MulticlassDataset::new(bags, classes)
        .map_err(|source| CliError::Record { location: path.display().to_string(), source })
}

fn instance_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

pub fn write_jsonl<W: Write>(dataset: &Dataset, out: &mut W) -> CliResult<()> {
    for bag in dataset.bags() {
        let record =
            BagRecord { id: bag.id().to_string(), label: bag.label().as_i64(), instances: instance_rows(bag.instances()) };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n").map_err(|e| CliError::io("<output>", e))?;
    }
    Ok(())
}

pub fn write_multiclass_jsonl<W: Write>(dataset: &MulticlassDataset, out: &mut W) -> CliResult<()> {
    for bag in dataset.bags() {
        let record = ClassRecord {
            id: bag.id.clone(),
            class: dataset.classes()[bag.class].clone(),
            instances: instance_rows(&bag.instances),
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n").map_err(|e| CliError::io("<output>", e))?;
    }
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: Format) -> CliResult<()> {
    match format {
        Format::CsvDir => save_csv_dir(dataset, path),
        _ => {
            let mut out = create(path)?;
            write_jsonl(dataset, &mut out)?;
            out.flush().map_err(|e| CliError::io(path, e))
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Parse { location: path.display().to_string(), message: e.to_string() }
}

fn save_csv_dir(dataset: &Dataset, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let manifest = dir.join("labels.csv");
    let mut labels = csv::Writer::from_writer(create(&manifest)?);
    labels.write_record(["id", "label"]).map_err(|e| csv_error(&manifest, e))?;
    for bag in dataset.bags() {
        check_id(bag.id(), &manifest.display().to_string())?;
        labels.write_record([bag.id(), &bag.label().as_i64().to_string()]).map_err(|e| csv_error(&manifest, e))?;
        let path = dir.join(format!("{}.csv", bag.id()));
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(&path)?);
        for row in bag.instances().iter_rows() {
            // `{:?}` prints the shortest decimal that parses back to the same bits.
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    labels.flush().map_err(|e| CliError::io(&manifest, e))
}

/// SHA-256 over ids, labels, shapes and the raw bits of every feature.
pub fn fingerprint(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((dataset.len() as u64).to_le_bytes());
    for bag in dataset.bags() {
        h.update((bag.id().len() as u64).to_le_bytes());
        h.update(bag.id().as_bytes());
        h.update(bag.label().as_i64().to_le_bytes());
        h.update((bag.len() as u64).to_le_bytes());
        h.update((bag.dim() as u64).to_le_bytes());
        for v in bag.instances().as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn fingerprint_multiclass(dataset: &MulticlassDataset) -> String {
    let mut h = Sha256::new();
    for class in dataset.classes() {
        h.update((class.len() as u64).to_le_bytes());
        h.update(class.as_bytes());
    }
    for bag in dataset.bags() {
        h.update((bag.id.len() as u64).to_le_bytes());
        h.update(bag.id.as_bytes());
        h.update((bag.class as u64).to_le_bytes());
        h.update((bag.instances.rows() as u64).to_le_bytes());
        for v in bag.instances.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Dataset name used in reports: the file stem, or the directory name.
pub fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(PathBuf::from(path), e))
}
