//! Value (token), structure (path) and path-value indexes, partitioned like
//! the documents they cover and maintained incrementally.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{extract_paths, DocId, LogicalTime, Path, PathEntry, TypedValue, UniversalDocument, VersionId};
use crate::ring::{NodeId, PartitionId};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IndexKey {
    Token { token: String },
    Path { path: Path },
    PathValue { path: Path, value: TypedValue },
}

impl IndexKey {
    pub fn token(token: impl Into<String>) -> Self {
        IndexKey::Token { token: token.into() }
    }

    pub fn path(path: Path) -> Self {
        IndexKey::Path { path }
    }

    pub fn path_value(path: Path, value: TypedValue) -> Self {
        IndexKey::PathValue { path, value }
    }
}

impl fmt::Display for IndexKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexKey::Token { token } => write!(f, "token:{token}"),
            IndexKey::Path { path } => write!(f, "path:{path}"),
            IndexKey::PathValue { path, value } => write!(f, "path_value:{path}={}", value.text_form()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Posting {
    pub doc_id: DocId,
    pub version: VersionId,
    pub path: Path,
    pub position: u32,
    pub payload: Option<TypedValue>,
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Every (key, posting) pair a document version contributes.
pub fn postings_for(doc: &UniversalDocument) -> Vec<(IndexKey, Posting)> {
    let mut out = Vec::new();
    for entry in extract_paths(&doc.root) {
        let posting = Posting {
            doc_id: doc.doc_id,
            version: doc.version,
            path: entry.path.clone(),
            position: entry.position,
            payload: entry.value.clone(),
        };
        out.push((IndexKey::path(entry.path.clone()), posting.clone()));
        if let Some(value) = &entry.value {
            out.push((IndexKey::path_value(entry.path.clone(), value.clone()), posting.clone()));
            let mut tokens = tokenize(&value.text_form());
            tokens.sort();
            tokens.dedup();
            for token in tokens {
                out.push((IndexKey::Token { token }, posting.clone()));
            }
        }
    }
    out
}

/// The postings of one document partition.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IndexPartition {
    postings: BTreeMap<IndexKey, BTreeSet<Posting>>,
    forward: BTreeMap<DocId, (VersionId, BTreeSet<IndexKey>, Vec<PathEntry>)>,
}

impl IndexPartition {
    pub fn new() -> Self {
        IndexPartition::default()
    }

    /// Indexes `doc`, replacing an older indexed version of the same
    /// document. Returns the number of postings added; re-indexing the same
    /// or an older version adds nothing.
    pub fn index_document(&mut self, doc: &UniversalDocument) -> usize {
        if let Some((indexed, _, _)) = self.forward.get(&doc.doc_id) {
            if *indexed >= doc.version {
                return 0;
            }
        }
        self.remove(doc.doc_id);
        let pairs = postings_for(doc);
        let mut keys = BTreeSet::new();
        let mut added = 0;
        for (key, posting) in pairs {
            keys.insert(key.clone());
            if self.postings.entry(key).or_default().insert(posting) {
                added += 1;
            }
        }
        let entries = extract_paths(&doc.root);
        self.forward.insert(doc.doc_id, (doc.version, keys, entries));
        added
    }

    fn remove(&mut self, doc: DocId) {
        let Some((version, keys, _)) = self.forward.remove(&doc) else { return };
        for key in keys {
            if let Some(list) = self.postings.get_mut(&key) {
                list.retain(|p| !(p.doc_id == doc && p.version == version));
                if list.is_empty() {
                    self.postings.remove(&key);
                }
            }
        }
    }

    pub fn lookup(&self, key: &IndexKey) -> impl Iterator<Item = &Posting> {
        self.postings.get(key).into_iter().flatten()
    }

    pub fn posting_count(&self, key: &IndexKey) -> usize {
        self.postings.get(key).map_or(0, BTreeSet::len)
    }

    pub fn keys(&self) -> impl Iterator<Item = &IndexKey> {
        self.postings.keys()
    }

    pub fn indexed_version(&self, doc: DocId) -> Option<VersionId> {
        self.forward.get(&doc).map(|(v, _, _)| *v)
    }

    /// Indexed documents with their path listings, in DocId order.
    pub fn documents(&self) -> impl Iterator<Item = (DocId, VersionId, &[PathEntry])> {
        self.forward.iter().map(|(id, (v, _, entries))| (*id, *v, entries.as_slice()))
    }

    pub fn entries(&self, doc: DocId) -> Option<&[PathEntry]> {
        self.forward.get(&doc).map(|(_, _, e)| e.as_slice())
    }

    pub fn document_count(&self) -> usize {
        self.forward.len()
    }

    pub fn total_postings(&self) -> usize {
        self.postings.values().map(BTreeSet::len).sum()
    }

    /// Canonical listing used to compare partitions.
    pub fn listing(&self) -> Vec<(IndexKey, Vec<Posting>)> {
        self.postings.iter().map(|(k, v)| (k.clone(), v.iter().cloned().collect())).collect()
    }
}

/// Staleness watermark of asynchronous indexing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexEpoch {
    pub high_watermark: LogicalTime,
}

/// All index partitions plus the persisted-but-unindexed bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct Index {
    partitions: BTreeMap<PartitionId, IndexPartition>,
    location: BTreeMap<PartitionId, NodeId>,
    pending: BTreeSet<LogicalTime>,
    last_persisted: LogicalTime,
    epoch: IndexEpoch,
}

impl Index {
    pub fn new() -> Self {
        Index::default()
    }

    /// Records a persisted version whose index task is now outstanding.
    pub fn note_persisted(&mut self, at: LogicalTime) {
        self.pending.insert(at);
        self.last_persisted = self.last_persisted.max(at);
    }

    /// Indexes a persisted version into its partition and clears its
    /// outstanding marker. Partitions without a location are placed on
    /// `node`.
    pub fn index_document(
        &mut self,
        partition: PartitionId,
        node: NodeId,
        doc: &UniversalDocument,
        persisted_at: LogicalTime,
    ) -> usize {
        self.location.entry(partition).or_insert(node);
        let added = self.partitions.entry(partition).or_default().index_document(doc);
        self.pending.remove(&persisted_at);
        self.advance();
        added
    }

    /// Merges a batch of persisted versions. Equivalent to indexing them one
    /// at a time.
    pub fn maintain<'a>(
        &mut self,
        batch: impl IntoIterator<Item = (PartitionId, NodeId, &'a UniversalDocument, LogicalTime)>,
    ) -> IndexEpoch {
        for (partition, node, doc, at) in batch {
            self.index_document(partition, node, doc, at);
        }
        self.epoch
    }

    /// Gives up on an outstanding marker whose version can no longer be
    /// indexed (its data is gone); keeps the watermark moving.
    pub fn abandon(&mut self, persisted_at: LogicalTime) {
        self.pending.remove(&persisted_at);
        self.advance();
    }

    fn advance(&mut self) {
        let mark = match self.pending.first() {
            Some(first) => LogicalTime(first.0.saturating_sub(1)),
            None => self.last_persisted,
        };
        self.epoch.high_watermark = self.epoch.high_watermark.max(mark);
    }

    pub fn epoch(&self) -> IndexEpoch {
        self.epoch
    }

    pub fn is_caught_up(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn partition(&self, partition: PartitionId) -> Option<&IndexPartition> {
        self.partitions.get(&partition)
    }

    pub fn partitions(&self) -> impl Iterator<Item = (PartitionId, &IndexPartition)> {
        self.partitions.iter().map(|(p, i)| (*p, i))
    }

    pub fn location(&self, partition: PartitionId) -> Option<NodeId> {
        self.location.get(&partition).copied()
    }

    pub fn locations(&self) -> &BTreeMap<PartitionId, NodeId> {
        &self.location
    }

    /// Drops every partition stored on `node`; returns the lost partitions.
    pub fn lose_node(&mut self, node: NodeId) -> Vec<PartitionId> {
        let lost: Vec<PartitionId> = self.location.iter().filter(|(_, n)| **n == node).map(|(p, _)| *p).collect();
        for p in &lost {
            self.location.remove(p);
            self.partitions.remove(p);
        }
        lost
    }

    /// Installs a rebuilt partition on `node`.
    pub fn install(&mut self, partition: PartitionId, node: NodeId, rebuilt: IndexPartition) {
        self.location.insert(partition, node);
        self.partitions.insert(partition, rebuilt);
    }

    /// Postings for `key` across all partitions, sorted by (DocId, VersionId).
    pub fn lookup(&self, key: &IndexKey) -> Vec<Posting> {
        let mut out: Vec<Posting> = self.partitions.values().flat_map(|p| p.lookup(key).cloned()).collect();
        out.sort();
        out
    }

    pub fn posting_count(&self, key: &IndexKey) -> usize {
        self.partitions.values().map(|p| p.posting_count(key)).sum()
    }

    /// Number of documents with at least one posting under `key`.
    pub fn document_frequency(&self, key: &IndexKey) -> usize {
        self.partitions
            .values()
            .map(|p| {
                let mut docs: Vec<DocId> = p.lookup(key).map(|q| q.doc_id).collect();
                docs.dedup();
                docs.len()
            })
            .sum()
    }

    pub fn document_count(&self) -> usize {
        self.partitions.values().map(IndexPartition::document_count).sum()
    }

    pub fn has_path(&self, path: &Path) -> bool {
        let key = IndexKey::path(path.clone());
        self.partitions.values().any(|p| p.posting_count(&key) > 0)
    }

    pub fn entries(&self, partition: PartitionId, doc: DocId) -> Option<&[PathEntry]> {
        self.partitions.get(&partition)?.entries(doc)
    }
}

/// Builds a partition from scratch over the given versions.
pub fn build_partition<'a>(docs: impl IntoIterator<Item = &'a UniversalDocument>) -> IndexPartition {
    let mut partition = IndexPartition::new();
    for doc in docs {
        partition.index_document(doc);
    }
    partition
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DocKind, DocNode, SourceFormat};

    fn doc(seq: u64, version: u32, root: DocNode) -> UniversalDocument {
        UniversalDocument {
            doc_id: DocId::new(0, seq),
            version: VersionId::new(version).unwrap(),
            kind: DocKind::Base,
            source_format: SourceFormat::RelationalRow,
            root,
            references: vec![],
            lineage: None,
            ingested_at: LogicalTime(seq),
        }
    }

    fn row(name: &str) -> DocNode {
        DocNode::new("row")
            .with_child(DocNode::leaf("id", TypedValue::Integer(7)))
            .with_child(DocNode::leaf("name", TypedValue::string(name)))
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Acme-Corp, inc. 42x"), vec!["acme", "corp", "inc", "42x"]);
        assert!(tokenize(" ,;").is_empty());
    }

    #[test]
    fn a_valued_node_yields_three_key_kinds() {
        let d = doc(1, 1, DocNode::new("row").with_child(DocNode::leaf("name", TypedValue::string("Ada"))));
        let keys: Vec<IndexKey> = postings_for(&d).into_iter().map(|(k, _)| k).collect();
        let name = Path::parse("/row/name").unwrap();
        assert_eq!(
            keys,
            vec![
                IndexKey::path(name.clone()),
                IndexKey::path_value(name, TypedValue::string("Ada")),
                IndexKey::token("ada"),
            ]
        );
    }

    #[test]
    fn valueless_documents_get_path_postings_only() {
        let d = doc(1, 1, DocNode::new("a").with_child(DocNode::new("b")));
        let pairs = postings_for(&d);
        assert_eq!(pairs.len(), 1);
        assert!(matches!(pairs[0].0, IndexKey::Path { .. }));
    }

    #[test]
    fn reindexing_is_idempotent_and_newer_versions_replace_older() {
        let mut p = IndexPartition::new();
        assert!(p.index_document(&doc(1, 1, row("Ada"))) > 0);
        assert_eq!(p.index_document(&doc(1, 1, row("Ada"))), 0);
        p.index_document(&doc(1, 2, row("Grace")));
        assert_eq!(p.posting_count(&IndexKey::token("ada")), 0);
        let grace: Vec<&Posting> = p.lookup(&IndexKey::token("grace")).collect();
        assert_eq!(grace.len(), 1);
        assert_eq!(grace[0].version.number(), 2);
        // A late task for the old version is ignored.
        assert_eq!(p.index_document(&doc(1, 1, row("Ada"))), 0);
    }

    #[test]
    fn watermark_trails_the_oldest_pending_version() {
        let mut index = Index::new();
        assert_eq!(index.epoch().high_watermark, LogicalTime(0));
        let docs: Vec<UniversalDocument> = (1..=3).map(|i| doc(i, 1, row("x"))).collect();
        for d in &docs {
            index.note_persisted(d.ingested_at);
        }
        index.index_document(PartitionId(0), NodeId(0), &docs[1], LogicalTime(2));
        assert_eq!(index.epoch().high_watermark, LogicalTime(0));
        index.index_document(PartitionId(0), NodeId(0), &docs[0], LogicalTime(1));
        assert_eq!(index.epoch().high_watermark, LogicalTime(2));
        let before = index.epoch();
        index.maintain(std::iter::empty());
        assert_eq!(index.epoch(), before);
        index.index_document(PartitionId(0), NodeId(0), &docs[2], LogicalTime(3));
        assert_eq!(index.epoch().high_watermark, LogicalTime(3));
        assert!(index.is_caught_up());
    }
}
