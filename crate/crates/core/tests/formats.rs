use std::collections::BTreeMap;

use proptest::prelude::*;

use impliance::formats::{parse, ColumnDef, ColumnType, RelationalRow};
use impliance::model::{DocNode, SourceFormat, Timestamp, TypedValue};

fn column() -> impl Strategy<Value = (ColumnType, Option<TypedValue>)> {
    let typed = prop_oneof![
        any::<i64>().prop_map(|i| (ColumnType::Int, TypedValue::Integer(i))),
        (-1e9f64..1e9).prop_map(|f| (ColumnType::Decimal, TypedValue::decimal(f).unwrap())),
        "\\PC{0,10}".prop_map(|s| (ColumnType::Text, TypedValue::String(s))),
        any::<bool>().prop_map(|b| (ColumnType::Bool, TypedValue::Boolean(b))),
        (-2_000_000_000_000i64..4_000_000_000_000)
            .prop_map(|ms| (ColumnType::Timestamp, TypedValue::Timestamp(Timestamp(ms)))),
    ];
    (typed, proptest::bool::weighted(0.15)).prop_map(|((t, v), null)| (t, if null { None } else { Some(v) }))
}

proptest! {
    #[test]
    fn rows_keep_every_non_null_column(cols in proptest::collection::vec(column(), 0..8)) {
        let row = RelationalRow {
            columns: cols.iter().enumerate().map(|(i, (t, _))| ColumnDef { name: format!("col{i}"), column_type: *t }).collect(),
            values: cols.iter().map(|(_, v)| v.clone()).collect(),
        };
        let root = parse(&row.to_payload(), SourceFormat::RelationalRow).unwrap();
        let mut want = DocNode::new("row");
        for (i, (_, v)) in cols.iter().enumerate() {
            if let Some(v) = v {
                want = want.with_child(DocNode::leaf(format!("col{i}"), v.clone()));
            }
        }
        prop_assert_eq!(root, want);
    }

    #[test]
    fn a_delimited_line_maps_field_by_field(fields in proptest::collection::vec("[a-z0-9 ,.\"-]{0,8}", 1..8)) {
        let quoted: Vec<String> = fields
            .iter()
            .map(|f| if f.is_empty() || f.contains([',', '"']) { format!("\"{}\"", f.replace('"', "\"\"")) } else { f.clone() })
            .collect();
        let line = quoted.join(",") + "\n";
        let root = parse(line.as_bytes(), SourceFormat::Delimited).unwrap();
        prop_assert_eq!(root.label.as_str(), "record");
        prop_assert_eq!(root.children.len(), fields.len());
        for (i, (node, field)) in root.children.iter().zip(&fields).enumerate() {
            prop_assert_eq!(&node.label, &format!("c{}", i + 1));
            match &node.value {
                None => prop_assert!(field.is_empty()),
                Some(v) => prop_assert_eq!(&v.text_form(), field),
            }
        }
    }

    #[test]
    fn plain_text_is_one_string_leaf(text in "\\PC{0,80}") {
        prop_assert_eq!(parse(text.as_bytes(), SourceFormat::PlainText).unwrap(), DocNode::leaf("text", TypedValue::String(text)));
    }

    #[test]
    fn json_objects_map_keys_to_labels(obj in proptest::collection::btree_map("[a-z]{1,5}", prop_oneof![
        any::<i64>().prop_map(serde_json::Value::from),
        any::<bool>().prop_map(serde_json::Value::from),
        "[a-z ]{0,6}".prop_map(serde_json::Value::from),
        proptest::collection::vec(any::<i32>(), 0..4).prop_map(serde_json::Value::from),
        Just(serde_json::Value::Null),
    ], 0..8)) {
        let text = serde_json::to_string(&serde_json::Value::Object(obj.clone().into_iter().collect())).unwrap();
        let root = parse(text.as_bytes(), SourceFormat::JsonLike).unwrap();
        let mut want = DocNode::new("json");
        for (k, v) in &obj {
            let leaf = |v: &serde_json::Value| match v {
                serde_json::Value::Null => DocNode::new(k.clone()),
                serde_json::Value::Bool(b) => DocNode::leaf(k.clone(), TypedValue::Boolean(*b)),
                serde_json::Value::Number(n) => DocNode::leaf(k.clone(), TypedValue::Integer(n.as_i64().unwrap())),
                serde_json::Value::String(s) => DocNode::leaf(k.clone(), TypedValue::String(s.clone())),
                _ => unreachable!(),
            };
            match v {
                serde_json::Value::Array(items) => want.children.extend(items.iter().map(leaf)),
                other => want.children.push(leaf(other)),
            }
        }
        prop_assert_eq!(root, want);
    }

    #[test]
    fn xml_attributes_precede_child_elements(attrs in proptest::collection::btree_map("[a-z]{1,4}", "[a-z0-9]{0,5}", 0..4),
                                            kids in proptest::collection::vec(("[a-z]{1,4}", "[a-z0-9]{1,5}"), 0..4)) {
        let attr_text: String = attrs.iter().map(|(k, v)| format!(" {k}=\"{v}\"")).collect();
        let kid_text: String = kids.iter().map(|(k, v)| format!("<{k}> {v} </{k}>")).collect();
        let root = parse(format!("<doc{attr_text}>{kid_text}</doc>").as_bytes(), SourceFormat::XmlLike).unwrap();
        let mut want = DocNode::new("doc");
        for (k, v) in &attrs {
            want.children.push(DocNode::leaf(format!("@{k}"), TypedValue::infer(v)));
        }
        for (k, v) in &kids {
            want.children.push(DocNode::leaf(k.clone(), TypedValue::infer(v)));
        }
        prop_assert_eq!(root, want);
    }
}

#[test]
fn each_format_names_its_root() {
    let cases: BTreeMap<&str, (SourceFormat, &[u8])> = BTreeMap::from([
        ("json", (SourceFormat::JsonLike, b"{}".as_slice())),
        ("record", (SourceFormat::Delimited, b"a".as_slice())),
        ("text", (SourceFormat::PlainText, b"hi".as_slice())),
        ("invoice", (SourceFormat::XmlLike, b"<invoice/>".as_slice())),
        ("row", (SourceFormat::RelationalRow, br#"{"columns":[],"values":[]}"#.as_slice())),
    ]);
    for (label, (format, raw)) in cases {
        assert_eq!(parse(raw, format).unwrap().label, label);
    }
}

#[test]
fn mismatched_row_arity_is_rejected() {
    let raw = br#"{"columns":[{"name":"a","type":"INT"}],"values":[1,2]}"#;
    assert!(parse(raw, SourceFormat::RelationalRow).is_err());
}
