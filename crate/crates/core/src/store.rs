//! The kernel store: append-only, sequentially versioned documents
//! replicated over data-node segments, with a latest-version registry.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode_record, encode_record, fnv1a64};
use crate::formats::{self, ParseError};
use crate::model::{
    DocId, DocKind, DocNode, Lineage, LogicalTime, Reference, SourceFormat, StorageClass, StorageClassKind,
    UniversalDocument, VersionId,
};
use crate::ring::{NodeId, PartitionId, Ring};
use crate::segment::{segment_path, Journal, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub user_base: u32,
    pub annotation_derived: u32,
    pub index_derived: u32,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig { user_base: 2, annotation_derived: 1, index_derived: 1 }
    }
}

impl ReplicationConfig {
    pub fn factor(&self, class: StorageClassKind) -> u32 {
        match class {
            StorageClassKind::UserBase => self.user_base,
            StorageClassKind::AnnotationDerived => self.annotation_derived,
            StorageClassKind::IndexDerived => self.index_derived,
        }
    }

    pub fn storage_class(&self, kind: DocKind) -> StorageClass {
        let class = StorageClassKind::of(kind);
        StorageClass { class, replication_factor: self.factor(class) }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.user_base < 2 {
            return Err("replication.user_base must be at least 2".into());
        }
        if self.annotation_derived < 1 || self.index_derived < 1 {
            return Err("derived replication factors must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreConfig {
    pub max_document_bytes: usize,
    pub max_depth: usize,
    pub replication: ReplicationConfig,
    pub data_dir: Option<PathBuf>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            max_document_bytes: 1 << 20,
            max_depth: 32,
            replication: ReplicationConfig::default(),
            data_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("document of {size} bytes exceeds the {limit}-byte limit")]
    Oversized { size: usize, limit: usize },
    #[error("invalid document: {0}")]
    Invalid(String),
    #[error("unknown document {0}")]
    UnknownDoc(DocId),
    #[error("document {doc} has no version {version} (latest is {latest})")]
    UnknownVersion { doc: DocId, version: VersionId, latest: VersionId },
    #[error("no live replica holds {doc} version {version}")]
    Unavailable { doc: DocId, version: VersionId },
    #[error("reference target {doc} version {version} does not exist")]
    DanglingReference { doc: DocId, version: VersionId },
    #[error("content hash mismatch for {doc} version {version}: recorded {recorded:016x}, read {read:016x}")]
    Corrupt { doc: DocId, version: VersionId, recorded: u64, read: u64 },
    #[error("no live data node can accept writes")]
    NoLiveNodes,
    #[error("storage i/o: {0}")]
    Io(#[from] io::Error),
}

pub type StoreResult<T> = Result<T, StoreError>;

/// Registry metadata of one persisted version.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VersionMeta {
    pub version: VersionId,
    pub kind: DocKind,
    pub source_format: SourceFormat,
    pub partition: PartitionId,
    pub hash: u64,
    pub len: usize,
    pub persisted_at: LogicalTime,
    pub references: Vec<Reference>,
    pub lineage: Option<Lineage>,
}

impl VersionMeta {
    pub fn class(&self) -> StorageClassKind {
        StorageClassKind::of(self.kind)
    }
}

/// Acknowledgement of a committed version.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Persisted {
    pub doc_id: DocId,
    pub version: VersionId,
    pub partition: PartitionId,
    pub hash: u64,
    pub persisted_at: LogicalTime,
    pub replicas: Vec<NodeId>,
}

/// Content of a document that has not been assigned an identity yet.
#[derive(Clone, Debug, PartialEq)]
pub struct DocDraft {
    pub kind: DocKind,
    pub source_format: SourceFormat,
    pub root: DocNode,
    pub references: Vec<Reference>,
    pub lineage: Option<Lineage>,
}

#[derive(Debug, Default)]
struct NodeStore {
    segment: Segment,
    locations: BTreeMap<(DocId, VersionId), (usize, usize)>,
}

pub type ReplicaKey = (PartitionId, StorageClassKind);

#[derive(Debug)]
pub struct KernelStore {
    config: StoreConfig,
    partitions: u32,
    registry: BTreeMap<DocId, Vec<VersionMeta>>,
    by_partition: BTreeMap<ReplicaKey, BTreeSet<(DocId, VersionId)>>,
    holders: BTreeMap<ReplicaKey, BTreeSet<NodeId>>,
    nodes: BTreeMap<NodeId, NodeStore>,
    referrers: BTreeMap<DocId, BTreeSet<(DocId, String)>>,
    sequences: BTreeMap<u64, u64>,
    clock: u64,
    journal: Journal,
}

impl KernelStore {
    pub fn new(config: StoreConfig, partitions: u32, data_nodes: &[NodeId]) -> StoreResult<Self> {
        let journal = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Journal::open(dir)?
            }
            None => Journal::in_memory(),
        };
        let mut store = KernelStore {
            config,
            partitions,
            registry: BTreeMap::new(),
            by_partition: BTreeMap::new(),
            holders: BTreeMap::new(),
            nodes: BTreeMap::new(),
            referrers: BTreeMap::new(),
            sequences: BTreeMap::new(),
            clock: 0,
            journal,
        };
        for node in data_nodes {
            store.add_node(*node)?;
        }
        Ok(store)
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn partition_count(&self) -> u32 {
        self.partitions
    }

    /// Registers an empty, writable data node.
    pub fn add_node(&mut self, node: NodeId) -> StoreResult<()> {
        let segment = match &self.config.data_dir {
            Some(dir) => Segment::open(&segment_path(dir, node.0))?,
            None => Segment::in_memory(),
        };
        self.nodes.entry(node).or_insert(NodeStore { segment, locations: BTreeMap::new() });
        Ok(())
    }

    /// The node's storage is gone: its replicas stop counting.
    pub fn fail_node(&mut self, node: NodeId) {
        self.nodes.remove(&node);
        for set in self.holders.values_mut() {
            set.remove(&node);
        }
    }

    pub fn is_live(&self, node: NodeId) -> bool {
        self.nodes.contains_key(&node)
    }

    pub fn live_nodes(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    /// The id the next document created with `origin` will receive.
    pub fn peek_doc_id(&self, origin: u64) -> DocId {
        DocId::new(origin, self.sequences.get(&origin).copied().unwrap_or(0) + 1)
    }

    pub fn next_doc_id(&mut self, origin: u64) -> DocId {
        let seq = self.sequences.entry(origin).or_insert(0);
        *seq += 1;
        DocId::new(origin, *seq)
    }

    /// Parses, maps and persists a new base document as version 1.
    pub fn ingest(&mut self, raw: &[u8], format: SourceFormat, origin: u64, ring: &Ring) -> StoreResult<Persisted> {
        if raw.len() > self.config.max_document_bytes {
            return Err(StoreError::Oversized { size: raw.len(), limit: self.config.max_document_bytes });
        }
        let root = formats::parse(raw, format)?;
        self.create(
            DocDraft { kind: DocKind::Base, source_format: format, root, references: Vec::new(), lineage: None },
            origin,
            ring,
        )
    }

    /// Persists a draft under a fresh identity as version 1.
    pub fn create(&mut self, draft: DocDraft, origin: u64, ring: &Ring) -> StoreResult<Persisted> {
        self.check_draft(&draft)?;
        let doc_id = self.next_doc_id(origin);
        self.write_version(doc_id, VersionId::FIRST, draft, ring)
    }

    /// Appends a new version with `new_root`; kind, format, references and
    /// lineage carry over from the previous latest version.
    pub fn update(&mut self, doc: DocId, new_root: DocNode, ring: &Ring) -> StoreResult<Persisted> {
        let latest = self.latest_meta(doc)?.clone();
        let draft = DocDraft {
            kind: latest.kind,
            source_format: latest.source_format,
            root: new_root,
            references: latest.references.clone(),
            lineage: latest.lineage.clone(),
        };
        self.check_draft(&draft)?;
        self.write_version(doc, latest.version.next(), draft, ring)
    }

    fn check_draft(&self, draft: &DocDraft) -> StoreResult<()> {
        draft.root.validate(self.config.max_depth).map_err(StoreError::Invalid)?;
        for r in &draft.references {
            if r.relation.is_empty() {
                return Err(StoreError::Invalid("reference relations must be non-empty".into()));
            }
            self.resolve(r.target_doc, r.target_version)?;
        }
        if let Some(lineage) = &draft.lineage {
            for (doc, version) in &lineage.inputs {
                self.resolve(*doc, *version)?;
            }
        }
        Ok(())
    }

    fn resolve(&self, doc: DocId, version: VersionId) -> StoreResult<()> {
        if self.meta(doc, version).is_some() {
            Ok(())
        } else {
            Err(StoreError::DanglingReference { doc, version })
        }
    }

    fn write_version(
        &mut self,
        doc_id: DocId,
        version: VersionId,
        draft: DocDraft,
        ring: &Ring,
    ) -> StoreResult<Persisted> {
        self.clock += 1;
        let persisted_at = LogicalTime(self.clock);
        let document = UniversalDocument {
            doc_id,
            version,
            kind: draft.kind,
            source_format: draft.source_format,
            root: draft.root,
            references: draft.references,
            lineage: draft.lineage,
            ingested_at: persisted_at,
        };
        document.check_kind_invariants().map_err(StoreError::Invalid)?;
        let record = encode_record(&document);
        let partition = ring.partition_of(doc_id);
        let class = StorageClassKind::of(document.kind);
        let key = (partition, class);

        let mut targets: Vec<NodeId> = self
            .holders
            .get(&key)
            .map(|set| set.iter().copied().filter(|n| self.nodes.contains_key(n)).collect())
            .unwrap_or_default();
        if targets.is_empty() {
            let factor = self.config.replication.factor(class) as usize;
            targets = ring.preference(partition, factor, |n| self.nodes.contains_key(&n));
            if targets.is_empty() {
                targets = self.nodes.keys().copied().take(factor).collect();
            }
            if targets.is_empty() {
                return Err(StoreError::NoLiveNodes);
            }
            self.holders.insert(key, targets.iter().copied().collect());
        }
        for node in &targets {
            let store = self.nodes.get_mut(node).expect("targets are live");
            let offset = store.segment.append(&record)?;
            store.locations.insert((doc_id, version), (offset, record.len()));
        }

        let hash = fnv1a64(&record);
        self.journal.append(format!(
            "{doc_id}\t{version}\t{:?}\t{partition}\t{hash:016x}\t{}",
            document.kind,
            record.len()
        ))?;
        for r in &document.references {
            self.referrers.entry(r.target_doc).or_default().insert((doc_id, r.relation.clone()));
        }
        self.by_partition.entry(key).or_default().insert((doc_id, version));
        self.registry.entry(doc_id).or_default().push(VersionMeta {
            version,
            kind: document.kind,
            source_format: document.source_format,
            partition,
            hash,
            len: record.len(),
            persisted_at,
            references: document.references,
            lineage: document.lineage,
        });
        Ok(Persisted { doc_id, version, partition, hash, persisted_at, replicas: targets })
    }

    pub fn latest(&self, doc: DocId) -> Option<VersionId> {
        self.registry.get(&doc).and_then(|v| v.last()).map(|m| m.version)
    }

    fn latest_meta(&self, doc: DocId) -> StoreResult<&VersionMeta> {
        self.registry.get(&doc).and_then(|v| v.last()).ok_or(StoreError::UnknownDoc(doc))
    }

    pub fn meta(&self, doc: DocId, version: VersionId) -> Option<&VersionMeta> {
        self.registry.get(&doc)?.get(version.number() as usize - 1)
    }

    pub fn versions(&self, doc: DocId) -> &[VersionMeta] {
        self.registry.get(&doc).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, doc: DocId) -> bool {
        self.registry.contains_key(&doc)
    }

    /// Reads a version (the registry's latest when `version` is `None`) from
    /// any live replica, verifying the persist-time content hash.
    pub fn get(&self, doc: DocId, version: Option<VersionId>) -> StoreResult<UniversalDocument> {
        let version = self.checked_version(doc, version)?;
        let holder = self
            .nodes
            .iter()
            .find(|(_, store)| store.locations.contains_key(&(doc, version)))
            .map(|(id, _)| *id)
            .ok_or(StoreError::Unavailable { doc, version })?;
        self.get_from(holder, doc, version)
    }

    /// Reads a version from one specific replica.
    pub fn get_from(&self, node: NodeId, doc: DocId, version: VersionId) -> StoreResult<UniversalDocument> {
        let record = self.record_on(node, doc, version)?;
        decode_record(record).map_err(|e| StoreError::Invalid(format!("undecodable record for {doc} v{version}: {e}")))
    }

    fn checked_version(&self, doc: DocId, version: Option<VersionId>) -> StoreResult<VersionId> {
        let latest = self.latest(doc).ok_or(StoreError::UnknownDoc(doc))?;
        match version {
            None => Ok(latest),
            Some(v) if v <= latest => Ok(v),
            Some(v) => Err(StoreError::UnknownVersion { doc, version: v, latest }),
        }
    }

    /// Raw framed bytes of a version on `node`, hash-checked.
    pub fn record_on(&self, node: NodeId, doc: DocId, version: VersionId) -> StoreResult<&[u8]> {
        let meta = self.meta(doc, version).ok_or(StoreError::UnknownDoc(doc))?;
        let store = self.nodes.get(&node).ok_or(StoreError::Unavailable { doc, version })?;
        let (offset, len) = *store.locations.get(&(doc, version)).ok_or(StoreError::Unavailable { doc, version })?;
        let record = store.segment.read(offset, len).ok_or(StoreError::Unavailable { doc, version })?;
        let read = fnv1a64(record);
        if read != meta.hash {
            return Err(StoreError::Corrupt { doc, version, recorded: meta.hash, read });
        }
        Ok(record)
    }

    /// Live nodes currently holding a readable copy of the version.
    pub fn replicas_of(&self, doc: DocId, version: VersionId) -> Vec<NodeId> {
        self.nodes.iter().filter(|(_, s)| s.locations.contains_key(&(doc, version))).map(|(id, _)| *id).collect()
    }

    /// Every document's latest version, in document order.
    pub fn latest_documents(&self) -> impl Iterator<Item = (DocId, &VersionMeta)> {
        self.registry.iter().filter_map(|(id, versions)| versions.last().map(|m| (*id, m)))
    }

    /// Latest versions whose document hashes into `partition`.
    pub fn latest_in_partition(&self, partition: PartitionId) -> Vec<(DocId, VersionId)> {
        let mut out: Vec<(DocId, VersionId)> = [StorageClassKind::UserBase, StorageClassKind::AnnotationDerived]
            .into_iter()
            .flat_map(|class| self.by_partition.get(&(partition, class)).into_iter().flatten())
            .filter(|(doc, v)| self.latest(*doc) == Some(*v))
            .copied()
            .collect();
        out.sort();
        out
    }

    /// Documents referencing `doc`, with the relation label.
    pub fn referrers(&self, doc: DocId) -> impl Iterator<Item = &(DocId, String)> {
        self.referrers.get(&doc).into_iter().flatten()
    }

    pub fn document_count(&self) -> usize {
        self.registry.len()
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    pub fn segment_bytes(&self, node: NodeId) -> Option<&[u8]> {
        self.nodes.get(&node).map(|s| s.segment.bytes())
    }

    // ---- replica management -------------------------------------------

    pub fn replica_keys(&self) -> impl Iterator<Item = &ReplicaKey> {
        self.by_partition.keys()
    }

    /// Versions stored under a replica key.
    pub fn records_under(&self, key: ReplicaKey) -> impl Iterator<Item = &(DocId, VersionId)> {
        self.by_partition.get(&key).into_iter().flatten()
    }

    pub fn holders(&self, key: ReplicaKey) -> BTreeSet<NodeId> {
        self.holders.get(&key).cloned().unwrap_or_default()
    }

    /// Versions under `key` that no live node can serve.
    pub fn missing_under(&self, key: ReplicaKey) -> Vec<(DocId, VersionId)> {
        self.records_under(key).filter(|(doc, v)| self.replicas_of(*doc, *v).is_empty()).copied().collect()
    }

    /// Copies every readable version under `key` from `from` onto `to` and
    /// makes `to` a holder. Returns the number of bytes moved.
    pub fn copy_replica(&mut self, key: ReplicaKey, from: NodeId, to: NodeId) -> StoreResult<usize> {
        if !self.nodes.contains_key(&to) {
            return Err(StoreError::NoLiveNodes);
        }
        let items: Vec<(DocId, VersionId)> = self.records_under(key).copied().collect();
        let mut copied = Vec::new();
        for (doc, version) in items {
            if self.nodes[&to].locations.contains_key(&(doc, version)) {
                continue;
            }
            match self.record_on(from, doc, version) {
                Ok(bytes) => copied.push((doc, version, bytes.to_vec())),
                Err(StoreError::Unavailable { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        let mut moved = 0;
        let target = self.nodes.get_mut(&to).expect("checked above");
        for (doc, version, bytes) in copied {
            let offset = target.segment.append(&bytes)?;
            target.locations.insert((doc, version), (offset, bytes.len()));
            moved += bytes.len();
        }
        self.holders.entry(key).or_default().insert(to);
        Ok(moved)
    }

    /// The framed record `(doc, version)` would have with `root` as its
    /// tree; every other field comes from the registry.
    pub fn rebuild_record(&self, doc: DocId, version: VersionId, root: DocNode) -> StoreResult<Vec<u8>> {
        let meta = self.meta(doc, version).ok_or(StoreError::UnknownVersion {
            doc,
            version,
            latest: self.latest(doc).unwrap_or(VersionId::FIRST),
        })?;
        let document = UniversalDocument {
            doc_id: doc,
            version,
            kind: meta.kind,
            source_format: meta.source_format,
            root,
            references: meta.references.clone(),
            lineage: meta.lineage.clone(),
            ingested_at: meta.persisted_at,
        };
        Ok(encode_record(&document))
    }

    /// Re-persists a rebuilt record on `to`. The record must reproduce the
    /// registry hash byte for byte.
    pub fn restore(&mut self, record: &[u8], to: NodeId) -> StoreResult<()> {
        let doc = decode_record(record).map_err(|e| StoreError::Invalid(e.to_string()))?;
        let meta = self.meta(doc.doc_id, doc.version).ok_or(StoreError::UnknownDoc(doc.doc_id))?;
        let read = fnv1a64(record);
        if read != meta.hash {
            return Err(StoreError::Corrupt { doc: doc.doc_id, version: doc.version, recorded: meta.hash, read });
        }
        let key = (meta.partition, meta.class());
        let target = self.nodes.get_mut(&to).ok_or(StoreError::NoLiveNodes)?;
        if !target.locations.contains_key(&(doc.doc_id, doc.version)) {
            let offset = target.segment.append(record)?;
            target.locations.insert((doc.doc_id, doc.version), (offset, record.len()));
        }
        self.holders.entry(key).or_default().insert(to);
        Ok(())
    }

    /// Stops counting `node` as a holder of `key`; its bytes stay in the
    /// append-only segment but are no longer served.
    pub fn drop_replica(&mut self, key: ReplicaKey, node: NodeId) {
        if let Some(set) = self.holders.get_mut(&key) {
            set.remove(&node);
        }
        let items: Vec<(DocId, VersionId)> = self.records_under(key).copied().collect();
        if let Some(store) = self.nodes.get_mut(&node) {
            for item in items {
                store.locations.remove(&item);
            }
        }
    }

    /// Re-reads every version from every live replica and checks the
    /// persist-time hash. Returns the number of reads performed.
    pub fn verify_integrity(&self) -> StoreResult<usize> {
        let mut reads = 0;
        for (doc, versions) in &self.registry {
            for meta in versions {
                for node in self.replicas_of(*doc, meta.version) {
                    self.record_on(node, *doc, meta.version)?;
                    reads += 1;
                }
            }
        }
        Ok(reads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TypedValue;

    fn setup(nodes: u64) -> (KernelStore, Ring) {
        let ids: Vec<NodeId> = (0..nodes).map(NodeId).collect();
        (KernelStore::new(StoreConfig::default(), 16, &ids).unwrap(), Ring::new(16, &ids))
    }

    #[test]
    fn ingest_then_get_returns_version_one() {
        let (mut store, ring) = setup(3);
        let p = store.ingest(b"hello world", SourceFormat::PlainText, 9, &ring).unwrap();
        assert_eq!(p.version, VersionId::FIRST);
        assert_eq!(p.replicas.len(), 2);
        let doc = store.get(p.doc_id, None).unwrap();
        assert_eq!(doc.root, DocNode::leaf("text", TypedValue::string("hello world")));
        assert_eq!(doc.kind, DocKind::Base);
    }

    #[test]
    fn updates_are_dense_and_history_is_kept() {
        let (mut store, ring) = setup(3);
        let id = store.ingest(b"v1", SourceFormat::PlainText, 1, &ring).unwrap().doc_id;
        let v2 = store.update(id, DocNode::leaf("text", TypedValue::string("v2")), &ring).unwrap();
        assert_eq!(v2.version.number(), 2);
        // Identical content still yields a new version.
        let v3 = store.update(id, DocNode::leaf("text", TypedValue::string("v2")), &ring).unwrap();
        assert_eq!(v3.version.number(), 3);
        assert_eq!(store.get(id, VersionId::new(1)).unwrap().root.value, Some(TypedValue::string("v1")));
        assert!(matches!(
            store.get(id, VersionId::new(4)),
            Err(StoreError::UnknownVersion { latest, .. }) if latest.number() == 3
        ));
        assert!(matches!(store.update(DocId::new(5, 5), DocNode::new("x"), &ring), Err(StoreError::UnknownDoc(_))));
    }

    #[test]
    fn oversized_and_unparseable_input_is_rejected() {
        let ids = [NodeId(0), NodeId(1)];
        let config = StoreConfig { max_document_bytes: 4, ..StoreConfig::default() };
        let mut store = KernelStore::new(config, 4, &ids).unwrap();
        let ring = Ring::new(4, &ids);
        assert!(matches!(
            store.ingest(b"12345", SourceFormat::PlainText, 0, &ring),
            Err(StoreError::Oversized { size: 5, limit: 4 })
        ));
        assert!(matches!(store.ingest(b"{", SourceFormat::JsonLike, 0, &ring), Err(StoreError::Parse(_))));
        assert_eq!(store.document_count(), 0);
    }

    #[test]
    fn surviving_replica_serves_identical_content() {
        let (mut store, ring) = setup(4);
        let p = store.ingest(b"keep me", SourceFormat::PlainText, 0, &ring).unwrap();
        let before = store.record_on(p.replicas[0], p.doc_id, p.version).unwrap().to_vec();
        store.fail_node(p.replicas[0]);
        let after = store.record_on(p.replicas[1], p.doc_id, p.version).unwrap();
        assert_eq!(fnv1a64(&before), fnv1a64(after));
        assert_eq!(store.get(p.doc_id, None).unwrap().root.value, Some(TypedValue::string("keep me")));
        store.fail_node(p.replicas[1]);
        assert!(matches!(store.get(p.doc_id, None), Err(StoreError::Unavailable { .. })));
    }

    #[test]
    fn annotation_requires_existing_target() {
        let (mut store, ring) = setup(2);
        let draft = DocDraft {
            kind: DocKind::Annotation,
            source_format: SourceFormat::JsonLike,
            root: DocNode::new("annotation"),
            references: vec![Reference {
                target_doc: DocId::new(7, 7),
                target_version: VersionId::FIRST,
                relation: "annotates".into(),
            }],
            lineage: Some(Lineage { producer: "x".into(), inputs: vec![] }),
        };
        assert!(matches!(store.create(draft, 0, &ring), Err(StoreError::DanglingReference { .. })));
    }

    #[test]
    fn copy_replica_restores_factor() {
        let (mut store, ring) = setup(3);
        let p = store.ingest(b"x", SourceFormat::PlainText, 0, &ring).unwrap();
        let key = (p.partition, StorageClassKind::UserBase);
        store.fail_node(p.replicas[0]);
        let spare = (0..3).map(NodeId).find(|n| !p.replicas.contains(n)).unwrap();
        let moved = store.copy_replica(key, p.replicas[1], spare).unwrap();
        assert!(moved > 0);
        assert_eq!(store.replicas_of(p.doc_id, p.version), {
            let mut v = vec![p.replicas[1], spare];
            v.sort();
            v
        });
        assert_eq!(store.holders(key).len(), 2);
    }

    #[test]
    fn store_is_shareable_across_threads() {
        let (mut store, ring) = setup(2);
        let ids: Vec<DocId> = (0..20)
            .map(|i| store.ingest(format!("doc {i}").as_bytes(), SourceFormat::PlainText, 0, &ring).unwrap().doc_id)
            .collect();
        let store = std::sync::Arc::new(store);
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let store = store.clone();
                let ids = ids.clone();
                std::thread::spawn(move || ids.iter().filter(|id| store.get(**id, None).is_ok()).count())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), 20);
        }
    }
}
