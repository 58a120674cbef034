//! Relational views: flat rows projected from latest document versions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::RelationalRow;
use crate::model::{extract_paths, DocId, DocKind, Path, PathEntry, SourceFormat, TypedValue, VersionId};
use crate::schema::SynonymTable;
use crate::store::{KernelStore, StoreError};

pub const ANNOTATES: &str = "annotates";

/// Where a view column takes its value from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum ColumnSource {
    /// First non-null value at the path (or a synonym) in the document itself.
    Path(Path),
    /// First value at the path in any latest annotation of the document,
    /// taking annotations in DocId order.
    Annotation(Path),
    /// The document id as a string.
    DocId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewColumn {
    pub name: String,
    pub source: ColumnSource,
}

/// Which documents contribute rows.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DocFilter {
    /// Empty means base documents only.
    pub kinds: Vec<DocKind>,
    /// Empty means every format.
    pub formats: Vec<SourceFormat>,
    pub require_paths: Vec<Path>,
}

impl DocFilter {
    fn admits_meta(&self, kind: DocKind, format: SourceFormat) -> bool {
        let kind_ok = if self.kinds.is_empty() { kind == DocKind::Base } else { self.kinds.contains(&kind) };
        kind_ok && (self.formats.is_empty() || self.formats.contains(&format))
    }

    fn admits_paths(&self, entries: &[PathEntry], synonyms: &SynonymTable) -> bool {
        self.require_paths.iter().all(|required| {
            let paths = synonyms.expand(required);
            entries.iter().any(|e| paths.contains(&e.path))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewDef {
    pub name: String,
    pub columns: Vec<ViewColumn>,
    #[serde(default)]
    pub filter: DocFilter,
}

impl ViewDef {
    /// A view reproducing a relational schema column for column.
    pub fn identity(name: &str, row: &RelationalRow) -> ViewDef {
        let columns = row
            .columns
            .iter()
            .map(|c| ViewColumn { name: c.name.clone(), source: ColumnSource::Path(Path::root("row").child(&c.name)) })
            .collect();
        let filter = DocFilter { formats: vec![SourceFormat::RelationalRow], ..DocFilter::default() };
        ViewDef { name: name.to_string(), columns, filter }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRow {
    pub doc_id: DocId,
    pub version: VersionId,
    pub values: Vec<Option<TypedValue>>,
}

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("unregistered view {0:?}")]
    Unregistered(String),
    #[error("view {0:?} already registered")]
    Duplicate(String),
    #[error("invalid view: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Debug, Default)]
pub struct ViewRegistry {
    views: BTreeMap<String, ViewDef>,
}

impl ViewRegistry {
    pub fn register(&mut self, view: ViewDef) -> Result<(), ViewError> {
        if view.name.is_empty() || view.columns.is_empty() {
            return Err(ViewError::Invalid("a view needs a name and at least one column".into()));
        }
        let mut names: Vec<&str> = view.columns.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(ViewError::Invalid(format!("duplicate column names in view {:?}", view.name)));
        }
        if self.views.contains_key(&view.name) {
            return Err(ViewError::Duplicate(view.name));
        }
        self.views.insert(view.name.clone(), view);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ViewDef, ViewError> {
        self.views.get(name).ok_or_else(|| ViewError::Unregistered(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.views.keys().map(String::as_str)
    }
}

fn first_value(entries: &[PathEntry], paths: &[Path]) -> Option<TypedValue> {
    entries.iter().filter(|e| paths.contains(&e.path)).find_map(|e| e.value.clone())
}

/// Projects one document into a view row, or `None` when the filter rejects it.
pub fn project(
    store: &KernelStore,
    view: &ViewDef,
    synonyms: &SynonymTable,
    doc: DocId,
    version: VersionId,
) -> Result<Option<ViewRow>, ViewError> {
    let meta = store.meta(doc, version).ok_or(StoreError::UnknownDoc(doc))?;
    if !view.filter.admits_meta(meta.kind, meta.source_format) {
        return Ok(None);
    }
    let document = store.get(doc, Some(version))?;
    let entries = extract_paths(&document.root);
    if !view.filter.admits_paths(&entries, synonyms) {
        return Ok(None);
    }
    let needs_annotations = view.columns.iter().any(|c| matches!(c.source, ColumnSource::Annotation(_)));
    let annotations = if needs_annotations { annotation_entries(store, doc, version)? } else { Vec::new() };
    let values = view
        .columns
        .iter()
        .map(|column| match &column.source {
            ColumnSource::Path(path) => first_value(&entries, &synonyms.expand(path)),
            ColumnSource::Annotation(path) => {
                let paths = [path.clone()];
                annotations.iter().find_map(|entries| first_value(entries, &paths))
            }
            ColumnSource::DocId => Some(TypedValue::string(doc.to_string())),
        })
        .collect();
    Ok(Some(ViewRow { doc_id: doc, version, values }))
}

/// Path listings of the latest annotations that annotate `(doc, version)`,
/// in annotation DocId order.
fn annotation_entries(store: &KernelStore, doc: DocId, version: VersionId) -> Result<Vec<Vec<PathEntry>>, ViewError> {
    let mut out = Vec::new();
    let referrers: Vec<DocId> =
        store.referrers(doc).filter(|(_, relation)| relation == ANNOTATES).map(|(id, _)| *id).collect();
    for annotation in referrers {
        let document = store.get(annotation, None)?;
        let current = document
            .references
            .iter()
            .any(|r| r.relation == ANNOTATES && r.target_doc == doc && r.target_version == version);
        if current {
            out.push(extract_paths(&document.root));
        }
    }
    Ok(out)
}

/// Rows of `view` over every latest document version, in DocId order.
pub fn relational_view(
    store: &KernelStore,
    view: &ViewDef,
    synonyms: &SynonymTable,
) -> Result<Vec<ViewRow>, ViewError> {
    let latest: Vec<(DocId, VersionId)> = store.latest_documents().map(|(id, m)| (id, m.version)).collect();
    let mut rows = Vec::new();
    for (doc, version) in latest {
        if let Some(row) = project(store, view, synonyms, doc, version)? {
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{ColumnDef, ColumnType};
    use crate::ring::{NodeId, Ring};
    use crate::store::StoreConfig;

    fn setup() -> (KernelStore, Ring) {
        let ids = [NodeId(0), NodeId(1), NodeId(2)];
        (KernelStore::new(StoreConfig::default(), 8, &ids).unwrap(), Ring::new(8, &ids))
    }

    fn sample_row() -> RelationalRow {
        RelationalRow {
            columns: vec![
                ColumnDef { name: "id".into(), column_type: ColumnType::Int },
                ColumnDef { name: "name".into(), column_type: ColumnType::Text },
                ColumnDef { name: "score".into(), column_type: ColumnType::Decimal },
            ],
            values: vec![Some(TypedValue::Integer(7)), Some(TypedValue::string("Ada")), None],
        }
    }

    #[test]
    fn identity_view_round_trips_a_row() {
        let (mut store, ring) = setup();
        let row = sample_row();
        store.ingest(&row.to_payload(), SourceFormat::RelationalRow, 0, &ring).unwrap();
        store.ingest(b"not a row", SourceFormat::PlainText, 0, &ring).unwrap();
        let view = ViewDef::identity("people", &row);
        let rows = relational_view(&store, &view, &SynonymTable::new()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].values, row.values);
    }

    #[test]
    fn absent_paths_project_to_null() {
        let (mut store, ring) = setup();
        store.ingest(br#"{"a": 1}"#, SourceFormat::JsonLike, 0, &ring).unwrap();
        store.ingest(br#"{"a": 2, "b": "x"}"#, SourceFormat::JsonLike, 0, &ring).unwrap();
        let view = ViewDef {
            name: "v".into(),
            columns: vec![
                ViewColumn { name: "a".into(), source: ColumnSource::Path(Path::parse("/json/a").unwrap()) },
                ViewColumn { name: "b".into(), source: ColumnSource::Path(Path::parse("/json/b").unwrap()) },
            ],
            filter: DocFilter::default(),
        };
        let rows = relational_view(&store, &view, &SynonymTable::new()).unwrap();
        assert_eq!(rows[0].values, vec![Some(TypedValue::Integer(1)), None]);
        assert_eq!(rows[1].values[1], Some(TypedValue::string("x")));
    }

    #[test]
    fn registry_rejects_duplicates_and_unknown_names() {
        let mut registry = ViewRegistry::default();
        let view = ViewDef::identity("people", &sample_row());
        registry.register(view.clone()).unwrap();
        assert!(matches!(registry.register(view), Err(ViewError::Duplicate(_))));
        assert!(matches!(registry.get("nope"), Err(ViewError::Unregistered(_))));
    }
}
