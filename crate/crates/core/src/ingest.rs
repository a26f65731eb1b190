//! CSV datasets and `id,label` files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{
    majority_vote, AnnotatedItem, Category, Label, LabelSource, SourceKind, VoteError,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("duplicate id {id:?} at row {row}")]
    DuplicateId { id: String, row: usize },
    #[error("bad label cell {value:?} at row {row}, column {column:?}")]
    BadLabelCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("invalid UTF-8 at row {row}")]
    Encoding { row: usize },
    #[error("empty id at row {row}")]
    EmptyId { row: usize },
    #[error("id {id:?} at row {row} contains whitespace padding or control characters")]
    InvalidId { id: String, row: usize },
    #[error("item {id:?} at row {row} has empty text")]
    EmptyText { id: String, row: usize },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("{count} item(s) have no {label_source} label: {}", ids.join(", "))]
    MissingLabel {
        label_source: LabelSource,
        count: usize,
        ids: Vec<String>,
    },
    #[error("cannot vote {kind:?} labels for {id:?}: {err}")]
    Vote {
        id: String,
        kind: SourceKind,
        err: VoteError,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Column layout of an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub id_column: String,
    pub text_column: String,
    /// Column name to the label slot it fills.
    #[serde(default)]
    pub label_columns: IndexMap<String, LabelSource>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id_column: "id".into(),
            text_column: "text".into(),
            label_columns: IndexMap::new(),
        }
    }
}

impl CsvSchema {
    pub fn with_label_column(mut self, column: impl Into<String>, source: LabelSource) -> Self {
        self.label_columns.insert(column.into(), source);
        self
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.id_column == self.text_column {
            return Err(IngestError::InvalidSchema(
                "id and text columns must differ".into(),
            ));
        }
        let mut sources = HashSet::new();
        for (column, source) in &self.label_columns {
            if column == &self.id_column || column == &self.text_column {
                return Err(IngestError::InvalidSchema(format!(
                    "label column {column:?} collides with id/text column"
                )));
            }
            if !sources.insert(*source) {
                return Err(IngestError::InvalidSchema(format!(
                    "label source {source} mapped twice"
                )));
            }
        }
        Ok(())
    }
}

/// Ordered collection of items with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    items: Vec<AnnotatedItem>,
    index: HashMap<String, usize>,
    category_counts: BTreeMap<Category, usize>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items(items: impl IntoIterator<Item = AnnotatedItem>) -> Result<Self, IngestError> {
        let mut ds = Dataset::new();
        for (row, item) in items.into_iter().enumerate() {
            ds.push(item, row + 1)?;
        }
        Ok(ds)
    }

    fn push(&mut self, item: AnnotatedItem, row: usize) -> Result<(), IngestError> {
        if self.index.contains_key(&item.id) {
            return Err(IngestError::DuplicateId { id: item.id, row });
        }
        self.index.insert(item.id.clone(), self.items.len());
        *self.category_counts.entry(item.category).or_default() += 1;
        self.items.push(item);
        Ok(())
    }

    /// Appends every item of `other`; ids must stay unique.
    pub fn extend(&mut self, other: Dataset) -> Result<(), IngestError> {
        let base = self.items.len();
        for (i, item) in other.items.into_iter().enumerate() {
            self.push(item, base + i + 1)?;
        }
        Ok(())
    }

    pub fn items(&self) -> &[AnnotatedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.id.as_str())
    }

    pub fn category_counts(&self) -> &BTreeMap<Category, usize> {
        &self.category_counts
    }

    /// Items of one category, in order.
    pub fn category_slice(&self, category: Category) -> Dataset {
        let items = self
            .items
            .iter()
            .filter(|i| i.category == category)
            .cloned();
        Dataset::from_items(items).expect("ids already unique")
    }

    /// Sets a label; returns `false` if `id` is unknown.
    pub fn set_label(&mut self, id: &str, source: LabelSource, label: Label) -> bool {
        match self.index.get(id) {
            Some(&i) => {
                self.items[i].labels.insert(source, label);
                true
            }
            None => false,
        }
    }

    /// Labels held by `source`, keyed by id in dataset order.
    pub fn labels_of(&self, source: LabelSource) -> IndexMap<String, Label> {
        self.items
            .iter()
            .filter_map(|i| i.label(source).map(|l| (i.id.clone(), l)))
            .collect()
    }

    /// Ids lacking a label from `source`.
    pub fn unlabeled(&self, source: LabelSource) -> Vec<String> {
        self.items
            .iter()
            .filter(|i| i.label(source).is_none())
            .map(|i| i.id.clone())
            .collect()
    }

    /// Fills the consensus slot of `kind` with the majority vote over its
    /// individual labels. Items without any individual label are skipped.
    pub fn derive_consensus(&mut self, kind: SourceKind) -> Result<(), IngestError> {
        for item in &mut self.items {
            let votes = item.individual_labels(kind);
            if votes.is_empty() {
                continue;
            }
            let voted = majority_vote(&votes).map_err(|err| IngestError::Vote {
                id: item.id.clone(),
                kind,
                err,
            })?;
            item.labels.insert(LabelSource::consensus(kind), voted);
        }
        Ok(())
    }

    /// The sub-dataset of items that carry a `source` label.
    pub fn labeled_subset(&self, source: LabelSource) -> Dataset {
        let items = self
            .items
            .iter()
            .filter(|i| i.label(source).is_some())
            .cloned();
        Dataset::from_items(items).expect("ids already unique")
    }
}

fn validate_id(id: &str, row: usize) -> Result<(), IngestError> {
    if id.is_empty() {
        return Err(IngestError::EmptyId { row });
    }
    if id.trim() != id || id.chars().any(char::is_control) {
        return Err(IngestError::InvalidId {
            id: id.to_string(),
            row,
        });
    }
    Ok(())
}

fn column_index(headers: &csv::ByteRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h == name.as_bytes())
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

/// Reads a dataset from CSV bytes. Text cells are kept verbatim.
pub fn read_dataset<R: Read>(
    reader: R,
    schema: &CsvSchema,
    category: Category,
) -> Result<Dataset, IngestError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.byte_headers()?.clone();
    let id_col = column_index(&headers, &schema.id_column)?;
    let text_col = column_index(&headers, &schema.text_column)?;
    let label_cols = schema
        .label_columns
        .iter()
        .map(|(name, source)| Ok((name.as_str(), column_index(&headers, name)?, *source)))
        .collect::<Result<Vec<_>, IngestError>>()?;

    let mut ds = Dataset::new();
    let mut record = csv::ByteRecord::new();
    let mut row = 0usize;
    while rdr.read_byte_record(&mut record)? {
        row += 1;
        let cell = |i: usize| -> Result<&str, IngestError> {
            std::str::from_utf8(&record[i]).map_err(|_| IngestError::Encoding { row })
        };
        let id = cell(id_col)?;
        validate_id(id, row)?;
        let text = cell(text_col)?;
        if text.trim().is_empty() {
            return Err(IngestError::EmptyText {
                id: id.to_string(),
                row,
            });
        }
        let mut item = AnnotatedItem::new(id, text, category);
        for &(name, col, source) in &label_cols {
            let value = cell(col)?;
            if value.trim().is_empty() {
                continue;
            }
            let label = Label::parse_cell(value).map_err(|_| IngestError::BadLabelCell {
                row,
                column: name.to_string(),
                value: value.to_string(),
            })?;
            item.labels.insert(source, label);
        }
        ds.push(item, row)?;
    }
    Ok(ds)
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    category: Category,
) -> Result<Dataset, IngestError> {
    let file = File::open(path)?;
    read_dataset(io::BufReader::new(file), schema, category)
}

/// Reads an `id,label` file into an ordered map.
pub fn read_labels<R: Read>(reader: R) -> Result<IndexMap<String, Label>, IngestError> {
    let schema = CsvSchema::default();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.byte_headers()?.clone();
    let id_col = column_index(&headers, &schema.id_column)?;
    let label_col = column_index(&headers, "label")?;
    let mut out = IndexMap::new();
    let mut record = csv::ByteRecord::new();
    let mut row = 0usize;
    while rdr.read_byte_record(&mut record)? {
        row += 1;
        let id = std::str::from_utf8(&record[id_col]).map_err(|_| IngestError::Encoding { row })?;
        validate_id(id, row)?;
        let value =
            std::str::from_utf8(&record[label_col]).map_err(|_| IngestError::Encoding { row })?;
        let label = Label::parse_cell(value).map_err(|_| IngestError::BadLabelCell {
            row,
            column: "label".into(),
            value: value.to_string(),
        })?;
        if out.insert(id.to_string(), label).is_some() {
            return Err(IngestError::DuplicateId {
                id: id.to_string(),
                row,
            });
        }
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<IndexMap<String, Label>, IngestError> {
    read_labels(io::BufReader::new(File::open(path)?))
}

/// Writes `id,label` rows for every `(id, label)` pair, in order.
pub fn write_label_pairs<'a, W: Write>(
    writer: W,
    pairs: impl IntoIterator<Item = (&'a str, Label)>,
) -> Result<(), IngestError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(["id", "label"])?;
    for (id, label) in pairs {
        wtr.write_record([id, label.as_str()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the `source` labels of every item as `id,label` CSV.
///
/// Fails with [`IngestError::MissingLabel`] before touching `path` if any
/// item lacks a label. The file is replaced atomically.
pub fn write_labels(
    dataset: &Dataset,
    source: LabelSource,
    path: impl AsRef<Path>,
) -> Result<(), IngestError> {
    let missing = dataset.unlabeled(source);
    if !missing.is_empty() {
        return Err(IngestError::MissingLabel {
            label_source: source,
            count: missing.len(),
            ids: missing,
        });
    }
    write_atomic(path.as_ref(), |w| {
        write_label_pairs(
            w,
            dataset
                .items()
                .iter()
                .map(|i| (i.id.as_str(), i.label(source).expect("checked above"))),
        )
    })
}

/// Writes through a temp file in the target directory, then renames it
/// over `path`. Nothing is left behind if `fill` fails.
pub fn write_atomic<E>(
    path: &Path,
    fill: impl FnOnce(&mut io::BufWriter<&mut File>) -> Result<(), E>,
) -> Result<(), E>
where
    E: From<io::Error>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| E::from(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expert_schema() -> CsvSchema {
        CsvSchema::default().with_label_column("expert", LabelSource::new(SourceKind::Expert, 1))
    }

    #[test]
    fn loads_three_rows() {
        let csv = "id,text,expert\na,ran 5k,Yes\nb,so tired,No\nc,hmm,Unclear\n";
        let ds = read_dataset(csv.as_bytes(), &expert_schema(), Category::PhysicalActivity).unwrap();
        assert_eq!(ds.len(), 3);
        let e1 = LabelSource::new(SourceKind::Expert, 1);
        let labels: Vec<_> = ds.items().iter().map(|i| i.label(e1).unwrap()).collect();
        assert_eq!(labels, vec![Label::Yes, Label::No, Label::Unclear]);
        assert_eq!(ds.category_counts()[&Category::PhysicalActivity], 3);
        assert_eq!(ds.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn duplicate_id_rejected() {
        let csv = "id,text,expert\na,x,Yes\na,y,No\n";
        let err = read_dataset(csv.as_bytes(), &expert_schema(), Category::SleepProblems).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateId { ref id, row: 2 } if id == "a"));
    }

    #[test]
    fn emoji_and_quoting_preserved() {
        let csv = "id,text\nr1,\"🏃 5k done, \"\"finally\"\"\nline two\"\n";
        let ds = read_dataset(csv.as_bytes(), &CsvSchema::default(), Category::PhysicalActivity)
            .unwrap();
        let text = &ds.items()[0].text;
        assert_eq!(text, "🏃 5k done, \"finally\"\nline two");
        assert!(text.contains('\u{1F3C3}'));
    }

    #[test]
    fn blank_label_cells_stay_unset() {
        let csv = "id,text,expert\na,x,\nb,y,-1\n";
        let ds = read_dataset(csv.as_bytes(), &expert_schema(), Category::SleepProblems).unwrap();
        let e1 = LabelSource::new(SourceKind::Expert, 1);
        assert_eq!(ds.items()[0].label(e1), None);
        assert_eq!(ds.items()[1].label(e1), Some(Label::No));
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let csv = "id,text,expert\na,x,Yes\nb,y,Maybe\n";
        let err = read_dataset(csv.as_bytes(), &expert_schema(), Category::SleepProblems).unwrap_err();
        match err {
            IngestError::BadLabelCell { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "expert", "Maybe"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column() {
        let csv = "id,body\na,x\n";
        let err = read_dataset(csv.as_bytes(), &CsvSchema::default(), Category::SleepProblems)
            .unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn(ref c) if c == "text"));
    }

    #[test]
    fn invalid_utf8_is_encoding_error() {
        let mut bytes = b"id,text\na,".to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe, b'\n']);
        let err = read_dataset(&bytes[..], &CsvSchema::default(), Category::SleepProblems)
            .unwrap_err();
        assert!(matches!(err, IngestError::Encoding { row: 1 }));
    }

    #[test]
    fn empty_text_rejected() {
        let csv = "id,text\na,   \n";
        let err = read_dataset(csv.as_bytes(), &CsvSchema::default(), Category::SleepProblems)
            .unwrap_err();
        assert!(matches!(err, IngestError::EmptyText { .. }));
    }

    #[test]
    fn schema_rejects_collisions() {
        let s = CsvSchema {
            id_column: "x".into(),
            text_column: "x".into(),
            label_columns: IndexMap::new(),
        };
        assert!(s.validate().is_err());
        let s = CsvSchema::default()
            .with_label_column("a", LabelSource::new(SourceKind::Expert, 1))
            .with_label_column("b", LabelSource::new(SourceKind::Expert, 1));
        assert!(s.validate().is_err());
    }

    #[test]
    fn write_labels_format_and_missing() {
        let llm = LabelSource::consensus(SourceKind::Llm);
        let mut ds = Dataset::from_items([
            AnnotatedItem::new("a", "x", Category::PhysicalActivity),
            AnnotatedItem::new("b", "y", Category::PhysicalActivity),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        ds.set_label("a", llm, Label::Yes);
        let err = write_labels(&ds, llm, &path).unwrap_err();
        assert!(matches!(err, IngestError::MissingLabel { ref ids, .. } if ids == &["b"]));
        assert!(!path.exists());
        ds.set_label("b", llm, Label::No);
        write_labels(&ds, llm, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body, "id,label\na,Yes\nb,No\n");
        let back = load_labels(&path).unwrap();
        assert_eq!(back, ds.labels_of(llm));
    }

    #[test]
    fn consensus_from_individuals() {
        let e = |i| LabelSource::new(SourceKind::Expert, i);
        let mut ds = Dataset::from_items([AnnotatedItem::new("a", "x", Category::SleepProblems)
            .with_label(e(1), Label::Yes)
            .with_label(e(2), Label::No)
            .with_label(e(3), Label::Yes)])
        .unwrap();
        ds.derive_consensus(SourceKind::Expert).unwrap();
        assert_eq!(
            ds.items()[0].label(LabelSource::consensus(SourceKind::Expert)),
            Some(Label::Yes)
        );
    }
}
