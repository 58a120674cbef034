//! Nodes, the data ring and consistency groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::query::Flavor;
use crate::ring::{NodeId, PartitionId, Ring, SlotMove};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Up,
    Failed,
    Leaving,
}

impl NodeState {
    pub fn name(self) -> &'static str {
        match self {
            NodeState::Up => "up",
            NodeState::Failed => "failed",
            NodeState::Leaving => "leaving",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: NodeId,
    pub flavor: Flavor,
    /// Work units per tick.
    pub compute_capacity: u64,
    /// Bytes per tick; data nodes only.
    pub io_bandwidth: u64,
    /// Bytes; data nodes only.
    pub storage_capacity: u64,
    pub state: NodeState,
    /// Free-form hardware tag with no scheduling effect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyGroup {
    pub group_id: u32,
    pub members: Vec<NodeId>,
    /// `None` only while every member is down.
    pub leader: Option<NodeId>,
    /// Covered partitions form the contiguous range `first..=last`.
    pub first: PartitionId,
    pub last: PartitionId,
}

impl ConsistencyGroup {
    pub fn covers(&self, p: PartitionId) -> bool {
        self.first <= p && p <= self.last
    }
}

/// Node counts and capacities per flavor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub data_nodes: u32,
    pub grid_nodes: u32,
    pub cluster_nodes: u32,
    pub partitions: u32,
    pub group_size: u32,
    pub data_capacity: u64,
    pub grid_capacity: u64,
    pub cluster_capacity: u64,
    pub io_bandwidth: u64,
    pub storage_capacity: u64,
    pub heartbeat_period: u64,
    pub missed_heartbeats: u32,
    pub max_hops: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            data_nodes: 4,
            grid_nodes: 2,
            cluster_nodes: 3,
            partitions: 64,
            group_size: 3,
            data_capacity: 10,
            grid_capacity: 10,
            cluster_capacity: 10,
            io_bandwidth: 1 << 20,
            storage_capacity: 1 << 30,
            heartbeat_period: 10,
            missed_heartbeats: 3,
            max_hops: 6,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.data_nodes == 0 {
            return Err("cluster.data_nodes must be at least 1".into());
        }
        if self.cluster_nodes == 0 {
            return Err("cluster.cluster_nodes must be at least 1".into());
        }
        let positive = [
            ("partitions", self.partitions as u64),
            ("group_size", self.group_size as u64),
            ("data_capacity", self.data_capacity),
            ("grid_capacity", self.grid_capacity),
            ("cluster_capacity", self.cluster_capacity),
            ("io_bandwidth", self.io_bandwidth),
            ("storage_capacity", self.storage_capacity),
            ("heartbeat_period", self.heartbeat_period),
            ("missed_heartbeats", self.missed_heartbeats as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("cluster.{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeDescriptor>,
    ring: Ring,
    groups: Vec<ConsistencyGroup>,
    grid_cursor: Option<NodeId>,
}

fn descriptor(node_id: NodeId, flavor: Flavor, config: &ClusterConfig, capacity: Option<u64>) -> NodeDescriptor {
    let (compute, io, storage) = match flavor {
        Flavor::Data => (config.data_capacity, config.io_bandwidth, config.storage_capacity),
        Flavor::Grid => (config.grid_capacity, 0, 0),
        Flavor::Cluster => (config.cluster_capacity, 0, 0),
    };
    NodeDescriptor {
        node_id,
        flavor,
        compute_capacity: capacity.unwrap_or(compute),
        io_bandwidth: io,
        storage_capacity: storage,
        state: NodeState::Up,
        capability: None,
    }
}

impl Topology {
    /// Ids are dealt data nodes first, then cluster nodes, then grid nodes,
    /// so that changing the grid count leaves every other id unchanged.
    pub fn build(config: &ClusterConfig) -> Result<Topology, String> {
        config.validate()?;
        let mut nodes = BTreeMap::new();
        let mut next = 1u64;
        for (flavor, count) in [
            (Flavor::Data, config.data_nodes),
            (Flavor::Cluster, config.cluster_nodes),
            (Flavor::Grid, config.grid_nodes),
        ] {
            for _ in 0..count {
                nodes.insert(NodeId(next), descriptor(NodeId(next), flavor, config, None));
                next += 1;
            }
        }
        let data: Vec<NodeId> = nodes.values().filter(|n| n.flavor == Flavor::Data).map(|n| n.node_id).collect();
        let ring = Ring::new(config.partitions, &data);
        let cluster: Vec<NodeId> = nodes.values().filter(|n| n.flavor == Flavor::Cluster).map(|n| n.node_id).collect();
        let chunks: Vec<Vec<NodeId>> = cluster.chunks(config.group_size as usize).map(<[NodeId]>::to_vec).collect();
        let count = chunks.len() as u32;
        let groups = chunks
            .into_iter()
            .enumerate()
            .map(|(i, members)| {
                let i = i as u32;
                let first = PartitionId(i * config.partitions / count);
                let last = PartitionId((i + 1) * config.partitions / count - 1);
                ConsistencyGroup { group_id: i, leader: members.first().copied(), members, first, last }
            })
            .collect();
        Ok(Topology { nodes, ring, groups, grid_cursor: None })
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeDescriptor> {
        self.nodes.values()
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeDescriptor> {
        self.nodes.get(&id)
    }

    pub fn is_up(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.state == NodeState::Up)
    }

    pub fn up_nodes(&self, flavor: Flavor) -> Vec<NodeId> {
        self.nodes.values().filter(|n| n.flavor == flavor && n.state == NodeState::Up).map(|n| n.node_id).collect()
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn groups(&self) -> &[ConsistencyGroup] {
        &self.groups
    }

    pub fn group(&self, id: u32) -> Option<&ConsistencyGroup> {
        self.groups.iter().find(|g| g.group_id == id)
    }

    pub fn group_for(&self, p: PartitionId) -> &ConsistencyGroup {
        self.groups.iter().find(|g| g.covers(p)).expect("groups cover every partition")
    }

    /// The leader currently recorded for the partition's group.
    pub fn leader_for(&self, p: PartitionId) -> Option<NodeId> {
        self.group_for(p).leader
    }

    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.keys().next_back().map_or(1, |n| n.0 + 1))
    }

    /// Marks a node failed without any reconfiguration; detection happens
    /// later through missed heartbeats.
    pub fn mark_failed(&mut self, id: NodeId) -> bool {
        match self.nodes.get_mut(&id) {
            Some(n) if n.state == NodeState::Up => {
                n.state = NodeState::Failed;
                true
            }
            _ => false,
        }
    }

    /// Removes a detected-failed data node from the ring.
    pub fn remove_from_ring(&mut self, id: NodeId) -> Vec<SlotMove> {
        self.ring.remove_node(id).unwrap_or_default()
    }

    /// Re-elects leaders: lowest-id member that is up. Returns the groups
    /// whose leader changed, with the new leader.
    pub fn elect(&mut self) -> Vec<(u32, Option<NodeId>)> {
        let mut changed = Vec::new();
        for g in &mut self.groups {
            let leader =
                g.members.iter().copied().find(|m| self.nodes.get(m).is_some_and(|n| n.state == NodeState::Up));
            if leader != g.leader {
                g.leader = leader;
                changed.push((g.group_id, leader));
            }
        }
        changed
    }

    /// Adds a fresh node. Data nodes enter the ring; cluster nodes join the
    /// smallest group (ties: lowest id).
    pub fn join(&mut self, flavor: Flavor, capacity: u64, config: &ClusterConfig) -> (NodeId, Vec<SlotMove>) {
        let id = self.next_id();
        self.nodes.insert(id, descriptor(id, flavor, config, Some(capacity.max(1))));
        let moves = match flavor {
            Flavor::Data => self.ring.add_node(id),
            Flavor::Cluster => {
                let g = self
                    .groups
                    .iter_mut()
                    .min_by_key(|g| (g.members.len(), g.group_id))
                    .expect("at least one consistency group exists");
                g.members.push(id);
                if g.leader.is_none() {
                    g.leader = Some(id);
                }
                Vec::new()
            }
            Flavor::Grid => Vec::new(),
        };
        (id, moves)
    }

    /// Least-loaded node of the list, ties broken round-robin in id order
    /// after the previously chosen grid node.
    pub fn pick_round_robin(&mut self, candidates: &[NodeId], load: impl Fn(NodeId) -> u64) -> Option<NodeId> {
        let min = candidates.iter().map(|n| load(*n)).min()?;
        let tied: Vec<NodeId> = candidates.iter().copied().filter(|n| load(*n) == min).collect();
        let chosen = match self.grid_cursor {
            Some(last) => tied.iter().copied().find(|n| *n > last).unwrap_or(tied[0]),
            None => tied[0],
        };
        self.grid_cursor = Some(chosen);
        Some(chosen)
    }
}
