//! The uniform document model.
//!
//! Every ingested row, record, object, markup document and text blob is
//! mapped into a [`UniversalDocument`]: a tree of labeled [`DocNode`]s with
//! optional typed leaf values, plus references to other documents and an
//! optional lineage record for data produced by the system itself.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Globally unique document identifier: the ingesting node plus a
/// per-origin counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DocId {
    pub origin: u64,
    pub sequence: u64,
}

impl DocId {
    pub fn new(origin: u64, sequence: u64) -> Self {
        DocId { origin, sequence }
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.origin, self.sequence)
    }
}

impl TryFrom<String> for DocId {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<DocId> for String {
    fn from(d: DocId) -> String {
        d.to_string()
    }
}

impl FromStr for DocId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (origin, sequence) =
            s.split_once('-').ok_or_else(|| format!("document id {s:?} is not of the form <origin>-<sequence>"))?;
        let origin = origin.parse().map_err(|_| format!("bad origin in document id {s:?}"))?;
        let sequence = sequence.parse().map_err(|_| format!("bad sequence in document id {s:?}"))?;
        Ok(DocId { origin, sequence })
    }
}

/// Dense, 1-based version number of a document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct VersionId(u32);

impl VersionId {
    pub const FIRST: VersionId = VersionId(1);

    pub fn new(number: u32) -> Option<Self> {
        (number >= 1).then_some(VersionId(number))
    }

    pub fn number(self) -> u32 {
        self.0
    }

    pub fn next(self) -> VersionId {
        VersionId(self.0 + 1)
    }
}

impl TryFrom<u32> for VersionId {
    type Error = String;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        VersionId::new(value).ok_or_else(|| "version numbers start at 1".to_string())
    }
}

impl From<VersionId> for u32 {
    fn from(v: VersionId) -> u32 {
        v.0
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Monotonic logical clock stamped on every persisted version.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogicalTime(pub u64);

/// A finite 64-bit decimal with a total order, usable as a map key.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Decimal(f64);

impl Decimal {
    pub fn new(value: f64) -> Option<Self> {
        value.is_finite().then_some(Decimal(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Decimal {
    type Error = String;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Decimal::new(value).ok_or_else(|| format!("{value} is not a finite decimal"))
    }
}

impl From<Decimal> for f64 {
    fn from(d: Decimal) -> f64 {
        d.0
    }
}

impl PartialEq for Decimal {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Decimal {}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Hash for Decimal {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Debug formatting is the shortest round-tripping form and always
        // carries a '.' or an exponent, so it never reads back as an integer.
        write!(f, "{:?}", self.0)
    }
}

/// Milliseconds since the Unix epoch, rendered as RFC 3339 in UTC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn parse_rfc3339(text: &str) -> Option<Self> {
        chrono::DateTime::parse_from_rfc3339(text).ok().map(|dt| Timestamp(dt.timestamp_millis()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match chrono::DateTime::from_timestamp_millis(self.0) {
            Some(dt) => write!(f, "{}", dt.format("%Y-%m-%dT%H:%M:%S%.3fZ")),
            None => write!(f, "@{}", self.0),
        }
    }
}

/// A typed leaf value. The derived order (by variant, then value) is the
/// canonical sort order used for facet and group listings.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum TypedValue {
    Boolean(bool),
    Integer(i64),
    Decimal(Decimal),
    Timestamp(Timestamp),
    String(String),
}

impl TypedValue {
    pub fn string(s: impl Into<String>) -> Self {
        TypedValue::String(s.into())
    }

    pub fn decimal(v: f64) -> Option<Self> {
        Decimal::new(v).map(TypedValue::Decimal)
    }

    /// The text form used for tokenization and annotator matching.
    pub fn text_form(&self) -> String {
        match self {
            TypedValue::String(s) => s.clone(),
            TypedValue::Integer(i) => i.to_string(),
            TypedValue::Decimal(d) => d.to_string(),
            TypedValue::Boolean(b) => b.to_string(),
            TypedValue::Timestamp(t) => t.to_string(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            TypedValue::Integer(i) => Some(*i as f64),
            TypedValue::Decimal(d) => Some(d.get()),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, TypedValue::Integer(_) | TypedValue::Decimal(_))
    }

    /// Comparison for structural predicates. Integers and decimals compare
    /// numerically with each other; otherwise only same-typed values are
    /// comparable.
    pub fn compare(&self, other: &TypedValue) -> Option<Ordering> {
        use TypedValue::*;
        match (self, other) {
            (Integer(a), Integer(b)) => Some(a.cmp(b)),
            (Integer(_), Decimal(_)) | (Decimal(_), Integer(_)) | (Decimal(_), Decimal(_)) => {
                self.as_f64()?.partial_cmp(&other.as_f64()?)
            }
            (Boolean(a), Boolean(b)) => Some(a.cmp(b)),
            (Timestamp(a), Timestamp(b)) => Some(a.cmp(b)),
            (String(a), String(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    /// Infers a value from untyped text, accepting only canonical spellings
    /// so that the text form always reproduces the input.
    pub fn infer(text: &str) -> TypedValue {
        if let Ok(i) = text.parse::<i64>() {
            if i.to_string() == text {
                return TypedValue::Integer(i);
            }
        }
        if text.contains(['.', 'e', 'E']) {
            if let Ok(f) = text.parse::<f64>() {
                if let Some(d) = Decimal::new(f) {
                    if d.to_string() == text {
                        return TypedValue::Decimal(d);
                    }
                }
            }
        }
        match text {
            "true" => TypedValue::Boolean(true),
            "false" => TypedValue::Boolean(false),
            _ => TypedValue::String(text.to_string()),
        }
    }
}

impl fmt::Display for TypedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text_form())
    }
}

/// Absolute, `/`-separated label path. Positions are not part of the path.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Path(String);

impl Path {
    pub fn parse(text: &str) -> Result<Path, String> {
        if !text.starts_with('/') || text.len() < 2 {
            return Err(format!("path {text:?} must be absolute and non-empty"));
        }
        if text[1..].split('/').any(str::is_empty) {
            return Err(format!("path {text:?} has an empty label"));
        }
        Ok(Path(text.to_string()))
    }

    pub fn root(label: &str) -> Path {
        Path(format!("/{label}"))
    }

    pub fn child(&self, label: &str) -> Path {
        Path(format!("{}/{label}", self.0))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0[1..].split('/')
    }
}

impl TryFrom<String> for Path {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Path::parse(&value)
    }
}

impl From<Path> for String {
    fn from(p: Path) -> String {
        p.0
    }
}

impl FromStr for Path {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Path::parse(s)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One labeled node of a document tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DocNode {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<TypedValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<DocNode>,
}

impl DocNode {
    pub fn new(label: impl Into<String>) -> Self {
        DocNode { label: label.into(), value: None, children: Vec::new() }
    }

    pub fn leaf(label: impl Into<String>, value: TypedValue) -> Self {
        DocNode { label: label.into(), value: Some(value), children: Vec::new() }
    }

    pub fn with_child(mut self, child: DocNode) -> Self {
        self.children.push(child);
        self
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(DocNode::depth).max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(DocNode::node_count).sum::<usize>()
    }

    /// Checks label non-emptiness and the depth bound.
    pub fn validate(&self, max_depth: usize) -> Result<(), String> {
        fn walk(node: &DocNode, depth: usize, max_depth: usize) -> Result<(), String> {
            if node.label.is_empty() {
                return Err("node labels must be non-empty".into());
            }
            if node.label.contains('/') {
                return Err(format!("label {:?} contains '/'", node.label));
            }
            if depth > max_depth {
                return Err(format!("tree depth exceeds the configured maximum of {max_depth}"));
            }
            node.children.iter().try_for_each(|c| walk(c, depth + 1, max_depth))
        }
        walk(self, 1, max_depth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    Base,
    Annotation,
    Derived,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    RelationalRow,
    Delimited,
    JsonLike,
    XmlLike,
    PlainText,
}

impl SourceFormat {
    pub const ALL: [SourceFormat; 5] = [
        SourceFormat::RelationalRow,
        SourceFormat::Delimited,
        SourceFormat::JsonLike,
        SourceFormat::XmlLike,
        SourceFormat::PlainText,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SourceFormat::RelationalRow => "relational_row",
            SourceFormat::Delimited => "delimited",
            SourceFormat::JsonLike => "json_like",
            SourceFormat::XmlLike => "xml_like",
            SourceFormat::PlainText => "plain_text",
        }
    }
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SourceFormat::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| format!("unknown source format {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reference {
    pub target_doc: DocId,
    pub target_version: VersionId,
    pub relation: String,
}

/// Producer and inputs of a system-produced document.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lineage {
    pub producer: String,
    pub inputs: Vec<(DocId, VersionId)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniversalDocument {
    pub doc_id: DocId,
    pub version: VersionId,
    pub kind: DocKind,
    pub source_format: SourceFormat,
    pub root: DocNode,
    pub references: Vec<Reference>,
    pub lineage: Option<Lineage>,
    pub ingested_at: LogicalTime,
}

impl UniversalDocument {
    /// Structural invariants that must hold before a document is persisted.
    pub fn check_kind_invariants(&self) -> Result<(), String> {
        match self.kind {
            DocKind::Annotation if self.references.is_empty() => {
                Err("annotation documents must reference the document they annotate".into())
            }
            DocKind::Annotation | DocKind::Derived if self.lineage.is_none() => {
                Err(format!("{:?} documents must carry lineage", self.kind))
            }
            _ => Ok(()),
        }?;
        if self.references.iter().any(|r| r.relation.is_empty()) {
            return Err("reference relations must be non-empty".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageClassKind {
    UserBase,
    AnnotationDerived,
    IndexDerived,
}

impl StorageClassKind {
    pub fn of(kind: DocKind) -> StorageClassKind {
        match kind {
            DocKind::Base => StorageClassKind::UserBase,
            DocKind::Annotation | DocKind::Derived => StorageClassKind::AnnotationDerived,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageClass {
    pub class: StorageClassKind,
    pub replication_factor: u32,
}

/// One entry of a document's path listing.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathEntry {
    pub path: Path,
    pub value: Option<TypedValue>,
    /// Ordinal among entries with the same path, in depth-first order.
    pub position: u32,
}

/// Lists every leaf or valued node of a tree in depth-first order.
pub fn extract_paths(root: &DocNode) -> Vec<PathEntry> {
    fn walk(node: &DocNode, path: Path, seen: &mut std::collections::HashMap<Path, u32>, out: &mut Vec<PathEntry>) {
        if node.value.is_some() || node.children.is_empty() {
            let position = seen.entry(path.clone()).or_insert(0);
            out.push(PathEntry { path: path.clone(), value: node.value.clone(), position: *position });
            *position += 1;
        }
        for child in &node.children {
            walk(child, path.child(&child.label), seen, out);
        }
    }
    let mut out = Vec::new();
    walk(root, Path::root(&root.label), &mut std::collections::HashMap::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doc_id_text_round_trip() {
        let id = DocId::new(3, 17);
        assert_eq!(id.to_string(), "3-17");
        assert_eq!("3-17".parse::<DocId>().unwrap(), id);
        assert!("3_17".parse::<DocId>().is_err());
    }

    #[test]
    fn doc_ids_order_lexicographically() {
        assert!(DocId::new(1, 99) < DocId::new(2, 0));
        assert!(DocId::new(2, 1) < DocId::new(2, 2));
    }

    #[test]
    fn version_zero_is_rejected() {
        assert!(VersionId::new(0).is_none());
        assert_eq!(VersionId::FIRST.next().number(), 2);
        assert!(serde_json::from_str::<VersionId>("0").is_err());
    }

    #[test]
    fn inference_only_accepts_canonical_spellings() {
        assert_eq!(TypedValue::infer("42"), TypedValue::Integer(42));
        assert_eq!(TypedValue::infer("042"), TypedValue::string("042"));
        assert_eq!(TypedValue::infer("1.5"), TypedValue::decimal(1.5).unwrap());
        assert_eq!(TypedValue::infer("1.50"), TypedValue::string("1.50"));
        assert_eq!(TypedValue::infer("true"), TypedValue::Boolean(true));
        assert_eq!(TypedValue::infer("NaN"), TypedValue::string("NaN"));
    }

    #[test]
    fn decimal_text_never_looks_like_an_integer() {
        assert_eq!(TypedValue::decimal(100.0).unwrap().text_form(), "100.0");
    }

    #[test]
    fn mixed_numeric_comparison() {
        let one = TypedValue::Integer(1);
        let half = TypedValue::decimal(0.5).unwrap();
        assert_eq!(one.compare(&half), Some(Ordering::Greater));
        assert_eq!(one.compare(&TypedValue::string("1")), None);
    }

    #[test]
    fn timestamp_renders_rfc3339() {
        let t = Timestamp::parse_rfc3339("2024-05-01T12:00:00Z").unwrap();
        assert_eq!(t.to_string(), "2024-05-01T12:00:00.000Z");
        assert_eq!(Timestamp::parse_rfc3339(&t.to_string()), Some(t));
    }

    #[test]
    fn path_parsing() {
        assert!(Path::parse("/row/id").is_ok());
        assert!(Path::parse("row/id").is_err());
        assert!(Path::parse("/row//id").is_err());
        assert_eq!(Path::root("row").child("id").as_str(), "/row/id");
    }

    #[test]
    fn extract_paths_of_a_row() {
        let root = DocNode::new("row")
            .with_child(DocNode::leaf("id", TypedValue::Integer(7)))
            .with_child(DocNode::leaf("name", TypedValue::string("Ada")));
        let entries = extract_paths(&root);
        let pairs: Vec<_> = entries.iter().map(|e| (e.path.as_str(), e.value.clone())).collect();
        assert_eq!(
            pairs,
            vec![("/row/id", Some(TypedValue::Integer(7))), ("/row/name", Some(TypedValue::string("Ada")))]
        );
    }

    #[test]
    fn single_node_document_has_one_entry() {
        let entries = extract_paths(&DocNode::new("text"));
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].path.as_str(), "/text");
    }

    #[test]
    fn repeated_siblings_get_distinct_positions() {
        let root = DocNode::new("order")
            .with_child(DocNode::leaf("item", TypedValue::string("a")))
            .with_child(DocNode::leaf("item", TypedValue::string("b")));
        let entries = extract_paths(&root);
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].path, entries[1].path);
        assert_eq!((entries[0].position, entries[1].position), (0, 1));
    }

    #[test]
    fn depth_bound_is_enforced() {
        let mut node = DocNode::leaf("n", TypedValue::Integer(0));
        for _ in 0..32 {
            node = DocNode::new("n").with_child(node);
        }
        assert_eq!(node.depth(), 33);
        assert!(node.validate(32).is_err());
        assert!(node.validate(33).is_ok());
    }
}
