//! Query-time schema consolidation and structural predicates.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Path, PathEntry, TypedValue};

/// Groups of paths that name the same attribute in differently shaped
/// sources, e.g. `/row/cust_name` and `/order/customer/name`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec<Path>>", into = "Vec<Vec<Path>>")]
pub struct SynonymTable {
    classes: Vec<Vec<Path>>,
    lookup: BTreeMap<Path, usize>,
}

impl From<Vec<Vec<Path>>> for SynonymTable {
    fn from(classes: Vec<Vec<Path>>) -> Self {
        SynonymTable::from_classes(classes)
    }
}

impl From<SynonymTable> for Vec<Vec<Path>> {
    fn from(table: SynonymTable) -> Self {
        table.classes
    }
}

impl SynonymTable {
    pub fn new() -> Self {
        SynonymTable::default()
    }

    /// Declares `paths` equivalent. Classes sharing a path are merged.
    pub fn add_class(&mut self, paths: impl IntoIterator<Item = Path>) {
        let mut members: Vec<Path> = paths.into_iter().collect();
        let mut merged: Vec<usize> = members.iter().filter_map(|p| self.lookup.get(p).copied()).collect();
        merged.sort_unstable();
        merged.dedup();
        for idx in merged.iter().rev() {
            members.extend(self.classes.remove(*idx));
        }
        members.sort();
        members.dedup();
        if members.len() > 1 {
            self.classes.push(members);
        }
        self.reindex();
    }

    fn reindex(&mut self) {
        self.classes.sort();
        self.lookup =
            self.classes.iter().enumerate().flat_map(|(i, class)| class.iter().map(move |p| (p.clone(), i))).collect();
    }

    pub fn classes(&self) -> &[Vec<Path>] {
        &self.classes
    }

    /// All paths equivalent to `path`, itself included, in sorted order.
    pub fn expand(&self, path: &Path) -> Vec<Path> {
        match self.lookup.get(path) {
            Some(i) => self.classes[*i].clone(),
            None => vec![path.clone()],
        }
    }

    /// Canonical representative: the smallest path of the class.
    pub fn canonical(&self, path: &Path) -> Path {
        self.expand(path).into_iter().next().expect("expand is never empty")
    }

    pub fn from_classes(classes: Vec<Vec<Path>>) -> Self {
        let mut table = SynonymTable::new();
        for class in classes {
            table.add_class(class);
        }
        table
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn holds(self, ordering: Ordering) -> bool {
        match self {
            Comparator::Eq => ordering == Ordering::Equal,
            Comparator::Lt => ordering == Ordering::Less,
            Comparator::Le => ordering != Ordering::Greater,
            Comparator::Gt => ordering == Ordering::Greater,
            Comparator::Ge => ordering != Ordering::Less,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Comparator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "=" => Comparator::Eq,
            "<" => Comparator::Lt,
            "<=" => Comparator::Le,
            ">" => Comparator::Gt,
            ">=" => Comparator::Ge,
            other => return Err(format!("unknown comparator {other:?}")),
        })
    }
}

/// `path <op> value`; satisfied when any value found at the path (or a
/// synonym) compares accordingly.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StructuralPredicate {
    pub path: Path,
    pub op: Comparator,
    pub value: TypedValue,
}

impl StructuralPredicate {
    pub fn new(path: Path, op: Comparator, value: TypedValue) -> Self {
        StructuralPredicate { path, op, value }
    }

    pub fn accepts(&self, candidate: &TypedValue) -> bool {
        candidate.compare(&self.value).is_some_and(|o| self.op.holds(o))
    }

    pub fn matches(&self, entries: &[PathEntry], synonyms: &SynonymTable) -> bool {
        let paths = synonyms.expand(&self.path);
        entries.iter().filter(|e| paths.contains(&e.path)).filter_map(|e| e.value.as_ref()).any(|v| self.accepts(v))
    }
}
