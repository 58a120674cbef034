//! Mapping of raw input formats into document trees.
//!
//! | format           | root label          | mapping                                     |
//! |------------------|---------------------|---------------------------------------------|
//! | `relational_row` | `row`               | one typed child per non-null column         |
//! | `delimited`      | `record`            | children `c1..cn`, values inferred          |
//! | `json_like`      | `json`              | object keys become labels, arrays repeat    |
//! | `xml_like`       | the element name    | attributes become `@name` children          |
//! | `plain_text`     | `text`              | the whole text as one string value          |

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Decimal, DocNode, SourceFormat, Timestamp, TypedValue};

/// Where a parse failed. Lines and columns are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse {} input at {position}: {message}", format.name())]
pub struct ParseError {
    pub format: SourceFormat,
    pub position: Position,
    pub message: String,
}

impl ParseError {
    fn new(format: SourceFormat, position: Position, message: impl Into<String>) -> Self {
        ParseError { format, position, message: message.into() }
    }

    fn at_start(format: SourceFormat, message: impl Into<String>) -> Self {
        ParseError::new(format, Position { line: 1, column: 1 }, message)
    }
}

/// Column types accepted in relational rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ColumnType {
    Int,
    Decimal,
    Text,
    Bool,
    Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub column_type: ColumnType,
}

/// A relational row with its schema. `None` values are SQL nulls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationalRow {
    pub columns: Vec<ColumnDef>,
    pub values: Vec<Option<TypedValue>>,
}

#[derive(Serialize, Deserialize)]
struct RowPayload {
    columns: Vec<ColumnDef>,
    values: Vec<serde_json::Value>,
}

impl RelationalRow {
    /// Renders the wire payload accepted by [`parse`] for `relational_row`.
    pub fn to_payload(&self) -> Vec<u8> {
        let values = self
            .values
            .iter()
            .map(|v| match v {
                None => serde_json::Value::Null,
                Some(TypedValue::Integer(i)) => serde_json::Value::from(*i),
                Some(TypedValue::Decimal(d)) => serde_json::Value::from(d.get()),
                Some(TypedValue::Boolean(b)) => serde_json::Value::from(*b),
                Some(TypedValue::String(s)) => serde_json::Value::from(s.as_str()),
                Some(TypedValue::Timestamp(t)) => serde_json::Value::from(t.to_string()),
            })
            .collect();
        serde_json::to_vec(&RowPayload { columns: self.columns.clone(), values }).expect("row payload serializes")
    }
}

/// Parses `raw` in the declared format into a document tree.
pub fn parse(raw: &[u8], format: SourceFormat) -> Result<DocNode, ParseError> {
    match format {
        SourceFormat::RelationalRow => parse_row(raw),
        SourceFormat::Delimited => parse_delimited(raw),
        SourceFormat::JsonLike => parse_json(raw),
        SourceFormat::XmlLike => parse_xml(raw),
        SourceFormat::PlainText => Ok(DocNode::leaf("text", TypedValue::String(utf8(raw, format)?.to_string()))),
    }
}

fn utf8(raw: &[u8], format: SourceFormat) -> Result<&str, ParseError> {
    std::str::from_utf8(raw).map_err(|e| {
        let valid = &raw[..e.valid_up_to()];
        let line = valid.iter().filter(|b| **b == b'\n').count() + 1;
        let column = valid.iter().rev().take_while(|b| **b != b'\n').count() + 1;
        ParseError::new(format, Position { line, column }, "invalid UTF-8")
    })
}

fn json_error(format: SourceFormat, e: &serde_json::Error) -> ParseError {
    ParseError::new(format, Position { line: e.line().max(1), column: e.column().max(1) }, e.to_string())
}

fn parse_row(raw: &[u8]) -> Result<DocNode, ParseError> {
    let format = SourceFormat::RelationalRow;
    let payload: RowPayload = serde_json::from_slice(raw).map_err(|e| json_error(format, &e))?;
    if payload.columns.len() != payload.values.len() {
        return Err(ParseError::at_start(
            format,
            format!("{} columns declared but {} values given", payload.columns.len(), payload.values.len()),
        ));
    }
    let mut root = DocNode::new("row");
    for (col, value) in payload.columns.iter().zip(&payload.values) {
        if col.name.is_empty() || col.name.contains('/') {
            return Err(ParseError::at_start(format, format!("invalid column name {:?}", col.name)));
        }
        let typed = match (col.column_type, value) {
            (_, serde_json::Value::Null) => continue,
            (ColumnType::Int, serde_json::Value::Number(n)) => n.as_i64().map(TypedValue::Integer),
            (ColumnType::Decimal, serde_json::Value::Number(n)) => {
                n.as_f64().and_then(Decimal::new).map(TypedValue::Decimal)
            }
            (ColumnType::Text, serde_json::Value::String(s)) => Some(TypedValue::String(s.clone())),
            (ColumnType::Bool, serde_json::Value::Bool(b)) => Some(TypedValue::Boolean(*b)),
            (ColumnType::Timestamp, serde_json::Value::String(s)) => {
                Timestamp::parse_rfc3339(s).map(TypedValue::Timestamp)
            }
            (ColumnType::Timestamp, serde_json::Value::Number(n)) => {
                n.as_i64().map(|ms| TypedValue::Timestamp(Timestamp(ms)))
            }
            _ => None,
        };
        let typed = typed.ok_or_else(|| {
            ParseError::at_start(
                format,
                format!("value {value} does not fit column {} {:?}", col.name, col.column_type),
            )
        })?;
        root.children.push(DocNode::leaf(col.name.clone(), typed));
    }
    Ok(root)
}

fn parse_delimited(raw: &[u8]) -> Result<DocNode, ParseError> {
    let format = SourceFormat::Delimited;
    utf8(raw, format)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(raw);
    let mut records = reader.records();
    let first = match records.next() {
        None => return Ok(DocNode::new("record")),
        Some(r) => r.map_err(|e| csv_error(&e))?,
    };
    if let Some(next) = records.next() {
        let line = match next {
            Ok(r) => r.position().map_or(2, |p| p.line() as usize),
            Err(e) => return Err(csv_error(&e)),
        };
        return Err(ParseError::new(
            format,
            Position { line, column: 1 },
            "a delimited document holds exactly one record",
        ));
    }
    let mut root = DocNode::new("record");
    for (i, field) in first.iter().enumerate() {
        let label = format!("c{}", i + 1);
        root.children.push(match field {
            "" => DocNode::new(label),
            text => DocNode::leaf(label, TypedValue::infer(text)),
        });
    }
    Ok(root)
}

fn csv_error(e: &csv::Error) -> ParseError {
    let line = e.position().map_or(1, |p| p.line() as usize);
    ParseError::new(SourceFormat::Delimited, Position { line, column: 1 }, e.to_string())
}

fn parse_json(raw: &[u8]) -> Result<DocNode, ParseError> {
    let format = SourceFormat::JsonLike;
    let value: serde_json::Value = serde_json::from_slice(raw).map_err(|e| json_error(format, &e))?;
    json_node("json", &value).map_err(|m| ParseError::at_start(format, m))
}

fn json_node(label: &str, value: &serde_json::Value) -> Result<DocNode, String> {
    use serde_json::Value;
    if label.is_empty() || label.contains('/') {
        return Err(format!("object key {label:?} cannot be used as a label"));
    }
    let mut node = DocNode::new(label);
    match value {
        Value::Null => {}
        Value::Bool(b) => node.value = Some(TypedValue::Boolean(*b)),
        Value::Number(n) => {
            node.value = Some(match n.as_i64() {
                Some(i) => TypedValue::Integer(i),
                None => {
                    n.as_f64().and_then(TypedValue::decimal).ok_or_else(|| format!("number {n} is out of range"))?
                }
            })
        }
        Value::String(s) => node.value = Some(TypedValue::String(s.clone())),
        Value::Array(items) => {
            for item in items {
                node.children.push(json_node("item", item)?);
            }
        }
        Value::Object(map) => {
            for (key, item) in map {
                match item {
                    Value::Array(items) => {
                        for element in items {
                            node.children.push(json_node(key, element)?);
                        }
                    }
                    other => node.children.push(json_node(key, other)?),
                }
            }
        }
    }
    Ok(node)
}

fn parse_xml(raw: &[u8]) -> Result<DocNode, ParseError> {
    let format = SourceFormat::XmlLike;
    let text = utf8(raw, format)?;
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        ParseError::new(format, Position { line: pos.row as usize, column: pos.col as usize }, e.to_string())
    })?;
    Ok(xml_node(doc.root_element()))
}

fn xml_node(element: roxmltree::Node<'_, '_>) -> DocNode {
    let mut node = DocNode::new(element.tag_name().name());
    for attr in element.attributes() {
        node.children.push(DocNode::leaf(format!("@{}", attr.name()), TypedValue::infer(attr.value())));
    }
    let mut text = String::new();
    for child in element.children() {
        if child.is_element() {
            node.children.push(xml_node(child));
        } else if child.is_text() {
            text.push_str(child.text().unwrap_or_default());
        }
    }
    let text = text.trim();
    if !text.is_empty() {
        node.value = Some(TypedValue::infer(text));
    }
    node
}
