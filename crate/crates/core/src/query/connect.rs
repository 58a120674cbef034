//! Shortest connection paths over references and join-index entries.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::discovery::JoinIndex;
use crate::model::DocId;
use crate::store::KernelStore;

/// Most paths reported for one query.
pub const MAX_PATHS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Hop {
    pub doc: DocId,
    pub relation: String,
}

/// The hops after the start document; the last hop reaches the target.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConnectionPath {
    pub hops: Vec<Hop>,
}

/// Undirected neighbors of `doc`, sorted by (doc, relation). Edges come from
/// the latest version's references, the latest versions referring to `doc`,
/// and join entries whose endpoints are both current.
pub fn neighbors(store: &KernelStore, joins: &JoinIndex, doc: DocId) -> Vec<Hop> {
    let mut out: BTreeSet<Hop> = BTreeSet::new();
    if let Some(meta) = store.latest(doc).and_then(|v| store.meta(doc, v)) {
        for r in &meta.references {
            out.insert(Hop { doc: r.target_doc, relation: r.relation.clone() });
        }
    }
    for (src, relation) in store.referrers(doc) {
        let current = store
            .latest(*src)
            .and_then(|v| store.meta(*src, v))
            .is_some_and(|m| m.references.iter().any(|r| r.target_doc == doc && &r.relation == relation));
        if current {
            out.insert(Hop { doc: *src, relation: relation.clone() });
        }
    }
    for entry in joins.visible_for(doc, |d| store.latest(d)) {
        let other = if entry.left.0 == doc { entry.right.0 } else { entry.left.0 };
        out.insert(Hop { doc: other, relation: entry.relation.clone() });
    }
    out.remove(&Hop { doc, relation: String::new() });
    out.into_iter().filter(|h| h.doc != doc).collect()
}

/// Counts work as neighbor expansions.
pub struct Traversal {
    pub paths: Vec<ConnectionPath>,
    pub expansions: usize,
}

fn bfs(
    store: &KernelStore,
    joins: &JoinIndex,
    start: DocId,
    limit: usize,
    cache: &mut BTreeMap<DocId, Vec<Hop>>,
    expansions: &mut usize,
) -> BTreeMap<DocId, usize> {
    let mut dist = BTreeMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(x) = queue.pop_front() {
        let d = dist[&x];
        if d == limit {
            continue;
        }
        *expansions += 1;
        let hops = cache.entry(x).or_insert_with(|| neighbors(store, joins, x)).clone();
        for hop in hops {
            if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(hop.doc) {
                slot.insert(d + 1);
                queue.push_back(hop.doc);
            }
        }
    }
    dist
}

/// All shortest paths from `a` to `b` of at most `max_hops` hops, at most
/// [`MAX_PATHS`] of them, in lexicographic order of their hops.
pub fn connection_paths(store: &KernelStore, joins: &JoinIndex, a: DocId, b: DocId, max_hops: usize) -> Traversal {
    let mut cache = BTreeMap::new();
    let mut expansions = 0;
    let from_a = bfs(store, joins, a, max_hops, &mut cache, &mut expansions);
    let Some(&length) = from_a.get(&b) else { return Traversal { paths: Vec::new(), expansions } };
    let from_b = bfs(store, joins, b, length, &mut cache, &mut expansions);

    let mut paths = Vec::new();
    let mut stack: Vec<Hop> = Vec::new();
    extend(a, b, length, &from_a, &from_b, &mut cache, store, joins, &mut stack, &mut paths);
    Traversal { paths, expansions }
}

#[allow(clippy::too_many_arguments)]
fn extend(
    at: DocId,
    b: DocId,
    length: usize,
    from_a: &BTreeMap<DocId, usize>,
    from_b: &BTreeMap<DocId, usize>,
    cache: &mut BTreeMap<DocId, Vec<Hop>>,
    store: &KernelStore,
    joins: &JoinIndex,
    stack: &mut Vec<Hop>,
    paths: &mut Vec<ConnectionPath>,
) {
    if paths.len() >= MAX_PATHS {
        return;
    }
    if at == b {
        paths.push(ConnectionPath { hops: stack.clone() });
        return;
    }
    let depth = stack.len();
    let hops = cache.entry(at).or_insert_with(|| neighbors(store, joins, at)).clone();
    for hop in hops {
        let on_shortest =
            from_a.get(&hop.doc) == Some(&(depth + 1)) && from_b.get(&hop.doc).is_some_and(|d| depth + 1 + d == length);
        if on_shortest {
            stack.push(hop.clone());
            extend(hop.doc, b, length, from_a, from_b, cache, store, joins, stack, paths);
            stack.pop();
            if paths.len() >= MAX_PATHS {
                return;
            }
        }
    }
}
