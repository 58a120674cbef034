mod common;

use proptest::prelude::*;

use impliance::codec::{decode_record, encode_record, fnv1a64, split_records};
use impliance::model::{
    DocId, DocKind, DocNode, Lineage, LogicalTime, Reference, SourceFormat, Timestamp, TypedValue, UniversalDocument,
    VersionId,
};

fn value() -> impl Strategy<Value = TypedValue> {
    prop_oneof![
        any::<bool>().prop_map(TypedValue::Boolean),
        any::<i64>().prop_map(TypedValue::Integer),
        (-1e12f64..1e12).prop_filter_map("finite", TypedValue::decimal),
        (-4_000_000_000i64..4_000_000_000).prop_map(|s| TypedValue::Timestamp(Timestamp(s))),
        "\\PC{0,12}".prop_map(TypedValue::String),
    ]
}

fn tree() -> impl Strategy<Value = DocNode> {
    let leaf = ("[a-z@]{1,6}", proptest::option::of(value())).prop_map(|(label, value)| DocNode {
        label,
        value,
        children: vec![],
    });
    leaf.prop_recursive(4, 40, 5, |inner| {
        ("[a-z]{1,6}", proptest::collection::vec(inner, 1..5)).prop_map(|(label, children)| DocNode {
            label,
            value: None,
            children,
        })
    })
}

fn document() -> impl Strategy<Value = UniversalDocument> {
    (tree(), 1u64..50, 1u64..10_000, 1u32..30, proptest::bool::ANY, 0u64..1_000_000).prop_map(
        |(root, origin, seq, v, annotated, at)| {
            let doc_id = DocId::new(origin, seq);
            let version = VersionId::new(v).expect("positive");
            let (kind, references, lineage) = if annotated {
                let target = DocId::new(origin, seq + 1);
                (
                    DocKind::Annotation,
                    vec![Reference {
                        target_doc: target,
                        target_version: VersionId::FIRST,
                        relation: "annotates".into(),
                    }],
                    Some(Lineage { producer: "p".into(), inputs: vec![(target, VersionId::FIRST)] }),
                )
            } else {
                (DocKind::Base, vec![], None)
            };
            UniversalDocument {
                doc_id,
                version,
                kind,
                source_format: SourceFormat::JsonLike,
                root,
                references,
                lineage,
                ingested_at: LogicalTime(at),
            }
        },
    )
}

proptest! {
    #[test]
    fn records_round_trip(doc in document()) {
        let record = encode_record(&doc);
        prop_assert_eq!(decode_record(&record).unwrap(), doc);
    }

    #[test]
    fn content_hash_is_fnv1a_over_the_frame(doc in document()) {
        let record = encode_record(&doc);
        prop_assert_eq!(fnv1a64(&record), common::fnv1a(&record));
        let body = u32::from_le_bytes(record[..4].try_into().unwrap()) as usize;
        prop_assert_eq!(body + 4, record.len());
    }

    #[test]
    fn concatenated_records_split_back(docs in proptest::collection::vec(document(), 1..6)) {
        let records: Vec<Vec<u8>> = docs.iter().map(encode_record).collect();
        let stream: Vec<u8> = records.concat();
        let split = split_records(&stream).unwrap();
        prop_assert_eq!(split.len(), docs.len());
        let mut offset = 0;
        for ((at, bytes), record) in split.iter().zip(&records) {
            prop_assert_eq!(*at, offset);
            prop_assert_eq!(*bytes, record.as_slice());
            offset += record.len();
        }
    }

    #[test]
    fn truncation_is_detected(doc in document(), cut in 1usize..64) {
        let record = encode_record(&doc);
        let cut = cut.min(record.len() - 1);
        prop_assert!(decode_record(&record[..record.len() - cut]).is_err());
    }
}

#[test]
fn fnv_reference_vectors() {
    assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
    assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
}
