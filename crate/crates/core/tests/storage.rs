mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use impliance::codec::{decode_record, split_records};
use impliance::formats::parse;
use impliance::model::{DocId, DocNode, SourceFormat, TypedValue, VersionId};
use impliance::ring::{NodeId, Ring};
use impliance::store::{KernelStore, StoreConfig, StoreError};

fn data_nodes(n: u64) -> Vec<NodeId> {
    (1..=n).map(NodeId).collect()
}

fn body(n: i64, tag: &str) -> DocNode {
    DocNode::new("doc")
        .with_child(DocNode::leaf("n", TypedValue::Integer(n)))
        .with_child(DocNode::leaf("tag", TypedValue::string(tag)))
}

#[derive(Clone, Debug)]
enum Op {
    Create(i64),
    Update(usize, i64),
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(
        prop_oneof![
            any::<i64>().prop_map(Op::Create),
            (any::<usize>(), any::<i64>()).prop_map(|(i, n)| Op::Update(i, n))
        ],
        1..80,
    )
}

/// Applies `ops` and returns, per document, the roots written in order.
fn apply(store: &mut KernelStore, ring: &Ring, ops: &[Op]) -> BTreeMap<DocId, Vec<DocNode>> {
    let mut written: BTreeMap<DocId, Vec<DocNode>> = BTreeMap::new();
    let mut ids = Vec::new();
    for op in ops {
        match op {
            Op::Create(n) => {
                let raw = format!("{{\"n\": {n}, \"tag\": \"c\"}}");
                let p = store.ingest(raw.as_bytes(), SourceFormat::JsonLike, 1, ring).unwrap();
                assert_eq!(p.version, VersionId::FIRST);
                ids.push(p.doc_id);
                written.entry(p.doc_id).or_default().push(parse(raw.as_bytes(), SourceFormat::JsonLike).unwrap());
            }
            Op::Update(i, n) if !ids.is_empty() => {
                let doc = ids[i % ids.len()];
                let root = body(*n, "u");
                let p = store.update(doc, root.clone(), ring).unwrap();
                written.get_mut(&doc).unwrap().push(root);
                assert_eq!(p.version.number() as usize, written[&doc].len());
            }
            Op::Update(..) => {}
        }
    }
    written
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn versions_are_dense_and_every_version_reads_back(ops in ops(), nodes in 1u64..5) {
        let ring = Ring::new(16, &data_nodes(nodes));
        let mut store = KernelStore::new(StoreConfig::default(), 16, &data_nodes(nodes)).unwrap();
        let written = apply(&mut store, &ring, &ops);
        for (doc, roots) in &written {
            let versions: Vec<u32> = store.versions(*doc).iter().map(|m| m.version.number()).collect();
            prop_assert_eq!(versions, (1..=roots.len() as u32).collect::<Vec<_>>());
            prop_assert_eq!(store.latest(*doc).unwrap().number() as usize, roots.len());
            for (i, root) in roots.iter().enumerate() {
                let v = VersionId::new(i as u32 + 1).unwrap();
                let replicas = store.replicas_of(*doc, v);
                prop_assert_eq!(replicas.len(), (nodes as usize).min(2));
                for node in replicas {
                    let record = store.record_on(node, *doc, v).unwrap();
                    prop_assert_eq!(common::fnv1a(record), store.meta(*doc, v).unwrap().hash);
                    prop_assert_eq!(&store.get_from(node, *doc, v).unwrap().root, root);
                }
            }
            prop_assert_eq!(&store.get(*doc, None).unwrap().root, roots.last().unwrap());
        }
    }

    #[test]
    fn persisted_segments_agree_with_the_journal(ops in ops()) {
        let dir = tempfile::tempdir().unwrap();
        let config = StoreConfig { data_dir: Some(dir.path().to_path_buf()), ..StoreConfig::default() };
        let ring = Ring::new(8, &data_nodes(3));
        let mut store = KernelStore::new(config, 8, &data_nodes(3)).unwrap();
        let written = apply(&mut store, &ring, &ops);

        let journal = std::fs::read_to_string(dir.path().join("registry.journal")).unwrap();
        let mut logged = BTreeMap::new();
        for line in journal.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            prop_assert_eq!(fields.len(), 6);
            logged.insert((fields[0].to_string(), fields[1].to_string()), (fields[4].to_string(), fields[5].parse::<usize>().unwrap()));
        }
        prop_assert_eq!(logged.len(), written.values().map(Vec::len).sum::<usize>());

        let mut copies = 0;
        for node in data_nodes(3) {
            let bytes = std::fs::read(dir.path().join(format!("node-{}.seg", node.0))).unwrap();
            prop_assert_eq!(Some(bytes.as_slice()), store.segment_bytes(node));
            for (_, record) in split_records(&bytes).unwrap() {
                let doc = decode_record(record).unwrap();
                let (hash, len) = &logged[&(doc.doc_id.to_string(), doc.version.to_string())];
                prop_assert_eq!(hash, &format!("{:016x}", common::fnv1a(record)));
                prop_assert_eq!(*len, record.len());
                prop_assert_eq!(&doc.root, &written[&doc.doc_id][doc.version.number() as usize - 1]);
                copies += 1;
            }
        }
        prop_assert_eq!(copies, 2 * logged.len());
    }
}

#[test]
fn a_failed_node_leaves_the_other_replica_readable() {
    let ring = Ring::new(4, &data_nodes(2));
    let mut store = KernelStore::new(StoreConfig::default(), 4, &data_nodes(2)).unwrap();
    let p = store.ingest(b"{\"a\": 1}", SourceFormat::JsonLike, 1, &ring).unwrap();
    store.fail_node(NodeId(1));
    assert!(!store.is_live(NodeId(1)));
    assert_eq!(store.replicas_of(p.doc_id, p.version), vec![NodeId(2)]);
    assert!(store.get(p.doc_id, None).is_ok());
}

#[test]
fn oversized_and_malformed_inputs_are_rejected() {
    let ring = Ring::new(4, &data_nodes(1));
    let config = StoreConfig { max_document_bytes: 16, ..StoreConfig::default() };
    let mut store = KernelStore::new(config, 4, &data_nodes(1)).unwrap();
    let big = format!("{{\"a\": \"{}\"}}", "x".repeat(32));
    assert!(matches!(
        store.ingest(big.as_bytes(), SourceFormat::JsonLike, 1, &ring),
        Err(StoreError::Oversized { .. })
    ));
    assert!(store.ingest(b"{\"a\": ", SourceFormat::JsonLike, 1, &ring).is_err());
    assert_eq!(store.document_count(), 0);
    assert!(store.update(DocId::new(1, 9), body(1, "x"), &ring).is_err());
}
