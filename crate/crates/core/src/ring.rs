//! Partition ring for replica placement.
//!
//! The hash space is cut into a fixed number of equal partition slots laid
//! out on a ring; each slot is owned by one data node. A document hashes to
//! a slot, and its replicas go to the slot owner followed by the next
//! distinct owners clockwise. Joins steal whole slots from the most loaded
//! nodes and removals hand a slot to its clockwise successor, so both move
//! only the slots they must.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::fnv1a64;
use crate::model::DocId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartitionId(pub u32);

impl fmt::Display for PartitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// One slot changing hands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotMove {
    pub partition: PartitionId,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ring {
    owners: Vec<NodeId>,
}

impl Ring {
    /// Deals `partitions` slots round-robin over the nodes in id order.
    ///
    /// Panics if `nodes` is empty or `partitions` is zero.
    pub fn new(partitions: u32, nodes: &[NodeId]) -> Ring {
        assert!(partitions > 0, "a ring needs at least one partition");
        let mut sorted: Vec<NodeId> = nodes.to_vec();
        sorted.sort();
        sorted.dedup();
        assert!(!sorted.is_empty(), "a ring needs at least one node");
        let owners = (0..partitions as usize).map(|i| sorted[i % sorted.len()]).collect();
        Ring { owners }
    }

    pub fn partition_count(&self) -> u32 {
        self.owners.len() as u32
    }

    pub fn partitions(&self) -> impl Iterator<Item = PartitionId> {
        (0..self.owners.len() as u32).map(PartitionId)
    }

    pub fn partition_of(&self, doc: DocId) -> PartitionId {
        partition_for(doc, self.partition_count())
    }

    pub fn owner(&self, partition: PartitionId) -> NodeId {
        self.owners[partition.0 as usize]
    }

    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.owners.iter().copied().collect()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.owners.contains(&node)
    }

    /// Slots owned per node.
    pub fn load(&self) -> BTreeMap<NodeId, Vec<PartitionId>> {
        let mut map: BTreeMap<NodeId, Vec<PartitionId>> = BTreeMap::new();
        for (i, owner) in self.owners.iter().enumerate() {
            map.entry(*owner).or_default().push(PartitionId(i as u32));
        }
        map
    }

    /// Distinct owners clockwise from `partition`, starting with its owner.
    pub fn walk(&self, partition: PartitionId) -> Vec<NodeId> {
        let n = self.owners.len();
        let mut seen = Vec::new();
        for step in 0..n {
            let owner = self.owners[(partition.0 as usize + step) % n];
            if !seen.contains(&owner) {
                seen.push(owner);
            }
        }
        seen
    }

    /// The first `count` nodes of the walk that pass `usable`.
    pub fn preference(&self, partition: PartitionId, count: usize, usable: impl Fn(NodeId) -> bool) -> Vec<NodeId> {
        self.walk(partition).into_iter().filter(|n| usable(*n)).take(count).collect()
    }

    /// Adds a node, stealing slots one at a time from the most loaded owner
    /// (ties: lowest node id, its lowest slot) until the newcomer holds
    /// `floor(P / (n + 1))` slots.
    pub fn add_node(&mut self, node: NodeId) -> Vec<SlotMove> {
        if self.contains(node) {
            return Vec::new();
        }
        let members = self.nodes().len() + 1;
        let target = self.owners.len() / members;
        let mut moves = Vec::with_capacity(target);
        for _ in 0..target {
            let load = self.load();
            let (&donor, slots) =
                load.iter().max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0))).expect("ring is never empty");
            let partition = slots[0];
            self.owners[partition.0 as usize] = node;
            moves.push(SlotMove { partition, from: donor, to: node });
        }
        moves
    }

    /// Removes a node; each of its slots passes to the next clockwise owner
    /// that is not the departing node. Refuses to remove the last node.
    pub fn remove_node(&mut self, node: NodeId) -> Option<Vec<SlotMove>> {
        if !self.contains(node) {
            return Some(Vec::new());
        }
        if self.nodes().len() == 1 {
            return None;
        }
        let n = self.owners.len();
        let before = self.owners.clone();
        let mut moves = Vec::new();
        for i in 0..n {
            if before[i] != node {
                continue;
            }
            let successor = (1..n).map(|step| before[(i + step) % n]).find(|o| *o != node).expect("other owners exist");
            self.owners[i] = successor;
            moves.push(SlotMove { partition: PartitionId(i as u32), from: node, to: successor });
        }
        Some(moves)
    }
}

/// Slot of a document in a ring with `partitions` slots.
pub fn partition_for(doc: DocId, partitions: u32) -> PartitionId {
    let mut key = [0u8; 16];
    key[..8].copy_from_slice(&doc.origin.to_le_bytes());
    key[8..].copy_from_slice(&doc.sequence.to_le_bytes());
    PartitionId((mix64(fnv1a64(&key)) % u64::from(partitions)) as u32)
}

// FNV's low bits track the low bits of each input byte; a splitmix64
// finalizer spreads them before taking the modulus.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
