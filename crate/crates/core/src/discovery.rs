//! Rule-based annotators, entity resolution by normalized key, and the join
//! index built from shared entities.
//!
//! Annotators are declared in a TOML file:
//!
//! ```toml
//! [[annotator]]
//! name = "companies"
//! scope = "intra"
//! [annotator.selector]
//! formats = ["plain_text", "json_like"]   # empty or absent: any format
//! paths = ["/text"]                       # empty or absent: any document
//! [[annotator.dictionary]]
//! text = "acme corp"
//! entity_type = "company"
//! [[annotator.pattern]]
//! regex = "[A-Z]{3}-[0-9]{4}"
//! entity_type = "part_number"
//!
//! [[annotator]]
//! name = "shared-entities"
//! scope = "inter"
//! entity_types = ["company"]              # empty or absent: every type
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    extract_paths, DocId, DocKind, DocNode, Lineage, Path, Reference, SourceFormat, TypedValue, UniversalDocument,
    VersionId,
};
use crate::store::DocDraft;
use crate::views::ANNOTATES;

pub const REFERENCES_ENTITY: &str = "references_entity";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Intra,
    Inter,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Selector {
    pub formats: Vec<SourceFormat>,
    /// The document must contain at least one of these paths.
    pub paths: Vec<Path>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryEntry {
    pub text: String,
    pub entity_type: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternRule {
    pub regex: String,
    pub entity_type: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorSpec {
    pub name: String,
    pub scope: Scope,
    #[serde(default)]
    pub selector: Selector,
    #[serde(default)]
    pub dictionary: Vec<DictionaryEntry>,
    #[serde(default)]
    pub pattern: Vec<PatternRule>,
    /// Inter-document annotators only: the entity types they resolve.
    #[serde(default)]
    pub entity_types: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotatorFile {
    #[serde(default)]
    annotator: Vec<AnnotatorSpec>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiscoveryError {
    #[error("annotator file: {0}")]
    File(String),
    #[error("annotator {0:?} is already registered")]
    Duplicate(String),
    #[error("annotator {name:?}: {message}")]
    Invalid { name: String, message: String },
}

/// Parses an annotator definition file.
pub fn parse_annotators(text: &str) -> Result<Vec<AnnotatorSpec>, DiscoveryError> {
    let file: AnnotatorFile = toml::from_str(text).map_err(|e| DiscoveryError::File(e.to_string()))?;
    Ok(file.annotator)
}

/// Lowercases and collapses runs of whitespace to one space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityKey {
    pub entity_type: String,
    pub text: String,
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.entity_type, self.text)
    }
}

/// One extracted entity; `start..end` is a character span of the value at
/// `source_path`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub entity_type: String,
    pub text: String,
    pub source_path: Path,
    pub start: usize,
    pub end: usize,
}

impl Entity {
    pub fn key(&self) -> EntityKey {
        EntityKey { entity_type: self.entity_type.clone(), text: self.text.clone() }
    }
}

#[derive(Clone, Debug)]
struct Rule {
    regex: Regex,
    entity_type: String,
}

/// An annotator with its rules compiled.
#[derive(Clone, Debug)]
pub struct Annotator {
    spec: AnnotatorSpec,
    rules: Vec<Rule>,
}

impl Annotator {
    pub fn compile(spec: AnnotatorSpec) -> Result<Annotator, DiscoveryError> {
        let invalid = |message: String| DiscoveryError::Invalid { name: spec.name.clone(), message };
        if spec.name.is_empty() {
            return Err(invalid("name must be non-empty".into()));
        }
        let mut rules = Vec::new();
        match spec.scope {
            Scope::Intra => {
                if !spec.entity_types.is_empty() {
                    return Err(invalid("entity_types applies to inter annotators only".into()));
                }
                for entry in &spec.dictionary {
                    let words: Vec<String> = entry.text.split_whitespace().map(regex::escape).collect();
                    if words.is_empty() || entry.entity_type.is_empty() {
                        return Err(invalid("dictionary entries need text and entity_type".into()));
                    }
                    let source = format!(r"\b{}\b", words.join(r"\s+"));
                    let regex = RegexBuilder::new(&source)
                        .case_insensitive(true)
                        .build()
                        .map_err(|e| invalid(e.to_string()))?;
                    rules.push(Rule { regex, entity_type: entry.entity_type.clone() });
                }
                for pattern in &spec.pattern {
                    if pattern.entity_type.is_empty() {
                        return Err(invalid("patterns need an entity_type".into()));
                    }
                    let regex = Regex::new(&pattern.regex).map_err(|e| invalid(format!("{}: {e}", pattern.regex)))?;
                    rules.push(Rule { regex, entity_type: pattern.entity_type.clone() });
                }
            }
            Scope::Inter => {
                if !spec.dictionary.is_empty() || !spec.pattern.is_empty() {
                    return Err(invalid("inter annotators take entity_types, not rules".into()));
                }
            }
        }
        Ok(Annotator { spec, rules })
    }

    pub fn spec(&self) -> &AnnotatorSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn scope(&self) -> Scope {
        self.spec.scope
    }

    /// Intra annotators run on base documents accepted by the selector.
    pub fn selects(&self, doc: &UniversalDocument) -> bool {
        if self.spec.scope != Scope::Intra || doc.kind != DocKind::Base {
            return false;
        }
        let selector = &self.spec.selector;
        if !selector.formats.is_empty() && !selector.formats.contains(&doc.source_format) {
            return false;
        }
        selector.paths.is_empty() || {
            let entries = extract_paths(&doc.root);
            selector.paths.iter().any(|p| entries.iter().any(|e| &e.path == p))
        }
    }

    /// Inter annotators: whether an entity type is in scope.
    pub fn resolves(&self, entity_type: &str) -> bool {
        self.spec.scope == Scope::Inter
            && (self.spec.entity_types.is_empty() || self.spec.entity_types.iter().any(|t| t == entity_type))
    }

    /// Every match of every rule over the document's values, in path order,
    /// then rule order, then position.
    pub fn extract(&self, doc: &UniversalDocument) -> Vec<Entity> {
        let mut out = Vec::new();
        for entry in extract_paths(&doc.root) {
            let Some(value) = &entry.value else { continue };
            let text = value.text_form();
            for rule in &self.rules {
                for m in rule.regex.find_iter(&text) {
                    if m.start() == m.end() {
                        continue;
                    }
                    let start = text[..m.start()].chars().count();
                    let end = start + m.as_str().chars().count();
                    out.push(Entity {
                        entity_type: rule.entity_type.clone(),
                        text: normalize(m.as_str()),
                        source_path: entry.path.clone(),
                        start,
                        end,
                    });
                }
            }
        }
        out
    }
}

/// Runs an intra annotator; `None` when it finds nothing.
pub fn run_intra(doc: &UniversalDocument, annotator: &Annotator) -> Option<DocDraft> {
    if !annotator.selects(doc) {
        return None;
    }
    let entities = annotator.extract(doc);
    if entities.is_empty() {
        return None;
    }
    Some(annotation_draft(doc.doc_id, doc.version, annotator.name(), &entities))
}

/// The annotation document recording `entities` found in `(doc, version)`.
pub fn annotation_draft(doc: DocId, version: VersionId, annotator: &str, entities: &[Entity]) -> DocDraft {
    let mut root = DocNode::new("annotation")
        .with_child(DocNode::leaf("annotator", TypedValue::string(annotator)))
        .with_child(DocNode::leaf("target", TypedValue::string(doc.to_string())))
        .with_child(DocNode::leaf("target_version", TypedValue::Integer(i64::from(version.number()))));
    for e in entities {
        root = root.with_child(
            DocNode::new("entity")
                .with_child(DocNode::leaf("type", TypedValue::string(e.entity_type.as_str())))
                .with_child(DocNode::leaf("text", TypedValue::string(e.text.as_str())))
                .with_child(DocNode::leaf("source_path", TypedValue::string(e.source_path.as_str())))
                .with_child(DocNode::leaf("start", TypedValue::Integer(e.start as i64)))
                .with_child(DocNode::leaf("end", TypedValue::Integer(e.end as i64))),
        );
    }
    DocDraft {
        kind: DocKind::Annotation,
        source_format: SourceFormat::JsonLike,
        root,
        references: vec![Reference { target_doc: doc, target_version: version, relation: ANNOTATES.into() }],
        lineage: Some(Lineage { producer: annotator.to_string(), inputs: vec![(doc, version)] }),
    }
}

/// Reads the entities back out of an annotation document.
pub fn entities_of(annotation: &DocNode) -> Vec<Entity> {
    annotation
        .children
        .iter()
        .filter(|c| c.label == "entity")
        .filter_map(|c| {
            let field = |name: &str| c.children.iter().find(|f| f.label == name).and_then(|f| f.value.clone());
            let text_of = |name: &str| match field(name) {
                Some(TypedValue::String(s)) => Some(s),
                _ => None,
            };
            let int_of = |name: &str| match field(name) {
                Some(TypedValue::Integer(i)) => usize::try_from(i).ok(),
                _ => None,
            };
            Some(Entity {
                entity_type: text_of("type")?,
                text: text_of("text")?,
                source_path: Path::parse(&text_of("source_path")?).ok()?,
                start: int_of("start")?,
                end: int_of("end")?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JoinIndexEntry {
    pub left: (DocId, VersionId),
    pub right: (DocId, VersionId),
    pub relation: String,
    pub evidence: EntityKey,
}

/// Pairs every two documents sharing an entity key, once per pair and key,
/// with `left < right` by DocId.
pub fn run_inter(stream: &[(EntityKey, DocId, VersionId)]) -> Vec<JoinIndexEntry> {
    pairs(stream, None)
}

/// The entries of [`run_inter`] that have `doc` as an endpoint.
pub fn run_inter_for(doc: DocId, stream: &[(EntityKey, DocId, VersionId)]) -> Vec<JoinIndexEntry> {
    pairs(stream, Some(doc))
}

fn pairs(stream: &[(EntityKey, DocId, VersionId)], focus: Option<DocId>) -> Vec<JoinIndexEntry> {
    let mut groups: BTreeMap<&EntityKey, BTreeMap<DocId, VersionId>> = BTreeMap::new();
    for (key, doc, version) in stream {
        let slot = groups.entry(key).or_default().entry(*doc).or_insert(*version);
        *slot = (*slot).max(*version);
    }
    let mut out = Vec::new();
    for (key, docs) in groups {
        let docs: Vec<(DocId, VersionId)> = docs.into_iter().collect();
        for (i, left) in docs.iter().enumerate() {
            for right in &docs[i + 1..] {
                if focus.is_some_and(|d| left.0 != d && right.0 != d) {
                    continue;
                }
                out.push(JoinIndexEntry {
                    left: *left,
                    right: *right,
                    relation: REFERENCES_ENTITY.into(),
                    evidence: key.clone(),
                });
            }
        }
    }
    out
}

/// Latest entity keys known per document, fed by persisted annotations.
#[derive(Clone, Debug, Default)]
pub struct EntityRegistry {
    by_doc: BTreeMap<DocId, (VersionId, BTreeMap<String, BTreeSet<EntityKey>>)>,
    by_key: BTreeMap<EntityKey, BTreeSet<DocId>>,
}

impl EntityRegistry {
    /// Records the keys `annotator` found in `(doc, version)` and returns
    /// the keys that became newly associated with the document. Results for
    /// versions older than the recorded one are ignored.
    pub fn record(
        &mut self,
        doc: DocId,
        version: VersionId,
        annotator: &str,
        keys: BTreeSet<EntityKey>,
    ) -> Vec<EntityKey> {
        let before = self.keys_of(doc);
        let entry = self.by_doc.entry(doc).or_insert_with(|| (version, BTreeMap::new()));
        if version < entry.0 {
            return Vec::new();
        }
        if version > entry.0 {
            *entry = (version, BTreeMap::new());
        }
        entry.1.insert(annotator.to_string(), keys);
        let after = self.keys_of(doc);
        for gone in before.difference(&after) {
            if let Some(set) = self.by_key.get_mut(gone) {
                set.remove(&doc);
            }
        }
        for key in &after {
            self.by_key.entry(key.clone()).or_default().insert(doc);
        }
        after.difference(&before).cloned().collect()
    }

    pub fn version_of(&self, doc: DocId) -> Option<VersionId> {
        self.by_doc.get(&doc).map(|(v, _)| *v)
    }

    pub fn keys_of(&self, doc: DocId) -> BTreeSet<EntityKey> {
        self.by_doc.get(&doc).map(|(_, per)| per.values().flatten().cloned().collect()).unwrap_or_default()
    }

    /// Documents currently associated with `key`, with their versions.
    pub fn holders(&self, key: &EntityKey) -> Vec<(DocId, VersionId)> {
        self.by_key.get(key).into_iter().flatten().filter_map(|d| self.version_of(*d).map(|v| (*d, v))).collect()
    }

    /// The inter stream for one document: its current keys accepted by `filter`.
    pub fn stream_for(&self, doc: DocId, filter: impl Fn(&EntityKey) -> bool) -> Vec<(EntityKey, DocId, VersionId)> {
        let Some(version) = self.version_of(doc) else { return Vec::new() };
        let mut out = Vec::new();
        for key in self.keys_of(doc).into_iter().filter(|k| filter(k)) {
            for (other, v) in self.holders(&key) {
                out.push((key.clone(), other, v));
            }
            if !out.iter().any(|(k, d, _)| *k == key && *d == doc) {
                out.push((key, doc, version));
            }
        }
        out
    }
}

/// Stored join entries, queryable from either endpoint.
#[derive(Clone, Debug, Default)]
pub struct JoinIndex {
    entries: BTreeSet<JoinIndexEntry>,
    by_doc: BTreeMap<DocId, BTreeSet<JoinIndexEntry>>,
}

impl JoinIndex {
    /// Inserts entries; returns how many were new.
    pub fn insert(&mut self, entries: impl IntoIterator<Item = JoinIndexEntry>) -> usize {
        let mut added = 0;
        for entry in entries {
            if self.entries.insert(entry.clone()) {
                self.by_doc.entry(entry.left.0).or_default().insert(entry.clone());
                self.by_doc.entry(entry.right.0).or_default().insert(entry);
                added += 1;
            }
        }
        added
    }

    /// Entries touching `doc` whose endpoints are both current according to
    /// `latest`.
    pub fn visible_for<'a>(
        &'a self,
        doc: DocId,
        latest: impl Fn(DocId) -> Option<VersionId> + 'a,
    ) -> impl Iterator<Item = &'a JoinIndexEntry> + 'a {
        self.by_doc.get(&doc).into_iter().flatten().filter(move |e| is_current(e, &latest))
    }

    pub fn visible<'a>(
        &'a self,
        latest: impl Fn(DocId) -> Option<VersionId> + 'a,
    ) -> impl Iterator<Item = &'a JoinIndexEntry> + 'a {
        self.entries.iter().filter(move |e| is_current(e, &latest))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn is_current(entry: &JoinIndexEntry, latest: &impl Fn(DocId) -> Option<VersionId>) -> bool {
    latest(entry.left.0) == Some(entry.left.1) && latest(entry.right.0) == Some(entry.right.1)
}

/// The annotators shipped with the appliance.
pub const DEFAULT_ANNOTATORS: &str = r#"
[[annotator]]
name = "organizations"
scope = "intra"
[[annotator.dictionary]]
text = "acme corp"
entity_type = "company"
[[annotator.dictionary]]
text = "globex"
entity_type = "company"
[[annotator.dictionary]]
text = "initech"
entity_type = "company"
[[annotator.dictionary]]
text = "umbrella corporation"
entity_type = "company"

[[annotator]]
name = "contact-points"
scope = "intra"
[[annotator.pattern]]
regex = "[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\\.[A-Za-z]{2,}"
entity_type = "email"
[[annotator.pattern]]
regex = "\\b[A-Z]{2,4}-[0-9]{3,6}\\b"
entity_type = "code"

[[annotator]]
name = "shared-entities"
scope = "inter"
"#;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LogicalTime;

    fn text_doc(seq: u64, text: &str) -> UniversalDocument {
        UniversalDocument {
            doc_id: DocId::new(0, seq),
            version: VersionId::FIRST,
            kind: DocKind::Base,
            source_format: SourceFormat::PlainText,
            root: DocNode::leaf("text", TypedValue::string(text)),
            references: vec![],
            lineage: None,
            ingested_at: LogicalTime(seq),
        }
    }

    fn companies() -> Annotator {
        Annotator::compile(AnnotatorSpec {
            name: "companies".into(),
            scope: Scope::Intra,
            selector: Selector::default(),
            dictionary: vec![DictionaryEntry { text: "acme corp".into(), entity_type: "company".into() }],
            pattern: vec![],
            entity_types: vec![],
        })
        .unwrap()
    }

    #[test]
    fn dictionary_match_is_case_insensitive_with_char_span() {
        let doc = text_doc(1, "bought from Acme  Corp");
        let entities = companies().extract(&doc);
        assert_eq!(
            entities,
            vec![Entity {
                entity_type: "company".into(),
                text: "acme corp".into(),
                source_path: Path::root("text"),
                start: 12,
                end: 22,
            }]
        );
        // Word boundaries: no match inside a longer word.
        assert!(companies().extract(&text_doc(2, "acme corporation")).is_empty());
    }

    #[test]
    fn spans_count_characters_not_bytes() {
        let entities = companies().extract(&text_doc(1, "déjà vu: acme corp"));
        assert_eq!((entities[0].start, entities[0].end), (9, 18));
    }

    #[test]
    fn no_match_means_no_annotation() {
        assert!(run_intra(&text_doc(1, "nothing here"), &companies()).is_none());
        let draft = run_intra(&text_doc(1, "acme corp"), &companies()).unwrap();
        assert_eq!(draft.kind, DocKind::Annotation);
        assert_eq!(entities_of(&draft.root).len(), 1);
    }

    #[test]
    fn inter_pairs_are_emitted_once() {
        let key = EntityKey { entity_type: "company".into(), text: "acme corp".into() };
        let v = VersionId::FIRST;
        let stream: Vec<_> = (1..=5).map(|i| (key.clone(), DocId::new(0, i), v)).collect();
        let entries = run_inter(&stream);
        assert_eq!(entries.len(), 10);
        assert!(entries.iter().all(|e| e.left.0 < e.right.0));
        assert!(run_inter(&stream[..1]).is_empty());
        let focused = run_inter_for(DocId::new(0, 3), &stream);
        assert_eq!(focused.len(), 4);
        assert!(focused.iter().all(|e| e.left.0 == DocId::new(0, 3) || e.right.0 == DocId::new(0, 3)));
    }

    #[test]
    fn annotator_file_round_trip() {
        let specs = parse_annotators(DEFAULT_ANNOTATORS).unwrap();
        assert_eq!(specs.len(), 3);
        for spec in specs {
            Annotator::compile(spec).unwrap();
        }
        assert!(matches!(parse_annotators("[[annotator]]\nname = 1"), Err(DiscoveryError::File(_))));
    }

    #[test]
    fn registry_tracks_latest_version_keys() {
        let mut reg = EntityRegistry::default();
        let k = |t: &str| EntityKey { entity_type: "t".into(), text: t.into() };
        let d = DocId::new(0, 1);
        let v2 = VersionId::new(2).unwrap();
        assert_eq!(reg.record(d, VersionId::FIRST, "a", [k("x")].into()), vec![k("x")]);
        assert_eq!(reg.record(d, v2, "a", [k("y")].into()), vec![k("y")]);
        assert!(reg.holders(&k("x")).is_empty());
        assert_eq!(reg.holders(&k("y")), vec![(d, v2)]);
        assert!(reg.record(d, VersionId::FIRST, "a", [k("z")].into()).is_empty());
    }
}
