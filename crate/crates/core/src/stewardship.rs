//! Resource groups, the broker, and replication repair planning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fabric::NodeDescriptor;
use crate::index::Index;
use crate::model::StorageClassKind;
use crate::query::Flavor;
use crate::ring::{NodeId, PartitionId, Ring};
use crate::store::{KernelStore, ReplicaKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    DataStorage,
    GridCompute,
    ClusterService,
}

impl Role {
    pub fn flavor(self) -> Flavor {
        match self {
            Role::DataStorage => Flavor::Data,
            Role::GridCompute => Flavor::Grid,
            Role::ClusterService => Flavor::Cluster,
        }
    }

    pub fn of(flavor: Flavor) -> Role {
        match flavor {
            Flavor::Data => Role::DataStorage,
            Flavor::Grid => Role::GridCompute,
            Flavor::Cluster => Role::ClusterService,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::DataStorage => "data_storage",
            Role::GridCompute => "grid_compute",
            Role::ClusterService => "cluster_service",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSpec {
    /// Work units per tick summed over members.
    pub min_throughput: u64,
    /// Storage bytes summed over members.
    pub min_capacity: u64,
    /// Member count.
    pub min_replication: u64,
}

/// What a group currently provides, in the units of [`ServiceSpec`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Capability {
    pub throughput: u64,
    pub capacity: u64,
    pub replication: u64,
}

impl Capability {
    fn of<'a>(members: impl IntoIterator<Item = &'a NodeDescriptor>) -> Capability {
        members.into_iter().fold(Capability::default(), |c, d| Capability {
            throughput: c.throughput + d.compute_capacity,
            capacity: c.capacity + d.storage_capacity,
            replication: c.replication + 1,
        })
    }

    fn meets(&self, spec: &ServiceSpec) -> bool {
        self.throughput >= spec.min_throughput
            && self.capacity >= spec.min_capacity
            && self.replication >= spec.min_replication
    }

    fn shortfall(&self, spec: &ServiceSpec) -> Capability {
        Capability {
            throughput: spec.min_throughput.saturating_sub(self.throughput),
            capacity: spec.min_capacity.saturating_sub(self.capacity),
            replication: spec.min_replication.saturating_sub(self.replication),
        }
    }
}

/// Largest per-dimension shortfall relative to the spec.
fn normalized(shortfall: &Capability, spec: &ServiceSpec) -> f64 {
    let part = |missing: u64, wanted: u64| if wanted == 0 { 0.0 } else { missing as f64 / wanted as f64 };
    part(shortfall.throughput, spec.min_throughput)
        .max(part(shortfall.capacity, spec.min_capacity))
        .max(part(shortfall.replication, spec.min_replication))
}

/// Smallest per-dimension capability over spec; infinite for an empty spec.
fn ratio(cap: &Capability, spec: &ServiceSpec) -> f64 {
    let part = |have: u64, wanted: u64| if wanted == 0 { f64::INFINITY } else { have as f64 / wanted as f64 };
    part(cap.throughput, spec.min_throughput)
        .min(part(cap.capacity, spec.min_capacity))
        .min(part(cap.replication, spec.min_replication))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceGroup {
    pub group_id: u32,
    pub role: Role,
    pub members: BTreeSet<NodeId>,
    pub spec: ServiceSpec,
    pub parent: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum GroupStatus {
    /// `offer` is the member the group can spare.
    Surplus {
        offer: NodeId,
    },
    Deficit {
        shortfall: Capability,
    },
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Transfer {
    pub tick: u64,
    pub node: NodeId,
    /// `None` for a newly added node.
    pub from: Option<u32>,
    pub to: u32,
}

impl fmt::Display for Transfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let from = self.from.map_or_else(|| "new".to_string(), |g| format!("g{g}"));
        write!(f, "{}\tn{}\t{}\tg{}", self.tick, self.node, from, self.to)
    }
}

/// Configured group; members chosen from the built topology by flavor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub group_id: u32,
    pub role: Role,
    #[serde(default)]
    pub parent: Option<u32>,
    #[serde(default)]
    pub members: Vec<u64>,
    #[serde(default)]
    pub spec: ServiceSpec,
}

#[derive(Clone, Debug, Default)]
pub struct Stewardship {
    groups: BTreeMap<u32, ResourceGroup>,
    log: Vec<Transfer>,
}

impl Stewardship {
    /// Builds groups from config; nodes not listed in any group join a
    /// default group of their role (created when missing).
    pub fn new<'a>(
        configured: &[GroupConfig],
        nodes: impl IntoIterator<Item = &'a NodeDescriptor>,
    ) -> Result<Stewardship, String> {
        let nodes: Vec<&NodeDescriptor> = nodes.into_iter().collect();
        let mut s = Stewardship::default();
        let mut placed = BTreeSet::new();
        for g in configured {
            if s.groups.contains_key(&g.group_id) {
                return Err(format!("groups: duplicate group_id {}", g.group_id));
            }
            let mut members = BTreeSet::new();
            for m in &g.members {
                let Some(d) = nodes.iter().find(|d| d.node_id.0 == *m) else {
                    return Err(format!("groups: group {} lists unknown node {m}", g.group_id));
                };
                if d.flavor != g.role.flavor() {
                    return Err(format!(
                        "groups: node {m} is a {} node but group {} has role {}",
                        d.flavor,
                        g.group_id,
                        g.role.name()
                    ));
                }
                if !placed.insert(*m) {
                    return Err(format!("groups: node {m} is listed twice"));
                }
                members.insert(d.node_id);
            }
            s.groups.insert(
                g.group_id,
                ResourceGroup { group_id: g.group_id, role: g.role, members, spec: g.spec, parent: g.parent },
            );
        }
        for g in configured {
            if let Some(p) = g.parent {
                if !s.groups.contains_key(&p) {
                    return Err(format!("groups: group {} names unknown parent {p}", g.group_id));
                }
            }
        }
        if !s.is_forest() {
            return Err("groups: parent links form a cycle".into());
        }
        for d in nodes {
            if placed.contains(&d.node_id.0) {
                continue;
            }
            let role = Role::of(d.flavor);
            let gid = match s.groups.values().find(|g| g.role == role) {
                Some(g) => g.group_id,
                None => s.create_group(role),
            };
            s.groups.get_mut(&gid).expect("exists").members.insert(d.node_id);
        }
        Ok(s)
    }

    fn create_group(&mut self, role: Role) -> u32 {
        let id = self.groups.keys().next_back().map_or(0, |g| g + 1);
        self.groups.insert(
            id,
            ResourceGroup { group_id: id, role, members: BTreeSet::new(), spec: ServiceSpec::default(), parent: None },
        );
        id
    }

    pub fn groups(&self) -> impl Iterator<Item = &ResourceGroup> {
        self.groups.values()
    }

    pub fn group(&self, id: u32) -> Option<&ResourceGroup> {
        self.groups.get(&id)
    }

    pub fn log(&self) -> &[Transfer] {
        &self.log
    }

    pub fn group_of(&self, node: NodeId) -> Option<u32> {
        self.groups.values().find(|g| g.members.contains(&node)).map(|g| g.group_id)
    }

    /// True when following parent links never revisits a group.
    pub fn is_forest(&self) -> bool {
        self.groups.values().all(|g| {
            let mut seen = BTreeSet::from([g.group_id]);
            let mut at = g.parent;
            while let Some(p) = at {
                if !seen.insert(p) {
                    return false;
                }
                at = self.groups.get(&p).and_then(|x| x.parent);
            }
            true
        })
    }

    pub fn capability(&self, id: u32, nodes: &BTreeMap<NodeId, NodeDescriptor>) -> Capability {
        self.groups
            .get(&id)
            .map_or_else(Capability::default, |g| Capability::of(g.members.iter().filter_map(|m| nodes.get(m))))
    }

    /// Classifies one group. The spare member offered by a surplus group is
    /// its highest-id member whose release keeps the spec met.
    pub fn report_status(&self, id: u32, nodes: &BTreeMap<NodeId, NodeDescriptor>) -> GroupStatus {
        let Some(g) = self.groups.get(&id) else { return GroupStatus::Balanced };
        let cap = self.capability(id, nodes);
        if !cap.meets(&g.spec) {
            return GroupStatus::Deficit { shortfall: cap.shortfall(&g.spec) };
        }
        for m in g.members.iter().rev() {
            let rest = Capability::of(g.members.iter().filter(|x| *x != m).filter_map(|x| nodes.get(x)));
            if rest.meets(&g.spec) {
                return GroupStatus::Surplus { offer: *m };
            }
        }
        GroupStatus::Balanced
    }

    /// Removes a node from whatever group holds it.
    pub fn remove_node(&mut self, node: NodeId) {
        for g in self.groups.values_mut() {
            g.members.remove(&node);
        }
    }

    fn move_node(&mut self, tick: u64, node: NodeId, from: Option<u32>, to: u32) {
        if let Some(f) = from {
            self.groups.get_mut(&f).expect("donor exists").members.remove(&node);
        }
        self.groups.get_mut(&to).expect("recipient exists").members.insert(node);
        self.log.push(Transfer { tick, node, from, to });
    }

    /// One broker cycle. Deficits are served largest normalized shortfall
    /// first (ties: lower group id), each from the lowest-id offer of its
    /// flavor, until it closes or no offer of its flavor is left. Every
    /// surplus group offers at most one node per cycle.
    pub fn broker_match(&mut self, tick: u64, nodes: &BTreeMap<NodeId, NodeDescriptor>) -> Vec<Transfer> {
        let mut deficits: Vec<(f64, u32)> = Vec::new();
        let mut offers: Vec<(NodeId, u32)> = Vec::new();
        for id in self.groups.keys().copied().collect::<Vec<_>>() {
            match self.report_status(id, nodes) {
                GroupStatus::Deficit { shortfall } => {
                    deficits.push((normalized(&shortfall, &self.groups[&id].spec), id))
                }
                GroupStatus::Surplus { offer } => offers.push((offer, id)),
                GroupStatus::Balanced => {}
            }
        }
        deficits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        offers.sort();
        let start = self.log.len();
        for (_, gid) in deficits {
            let role = self.groups[&gid].role;
            loop {
                let cap = self.capability(gid, nodes);
                if cap.meets(&self.groups[&gid].spec) {
                    break;
                }
                let Some(pos) =
                    offers.iter().position(|(n, _)| nodes.get(n).is_some_and(|d| Role::of(d.flavor) == role))
                else {
                    break;
                };
                let (node, donor) = offers.remove(pos);
                self.move_node(tick, node, Some(donor), gid);
            }
        }
        self.log[start..].to_vec()
    }

    /// Places a fresh node: into the open deficit of its role with the
    /// largest shortfall, else into the group of its role with the lowest
    /// capability/spec ratio (ties: lower id), else into a new group.
    pub fn add_resource(&mut self, tick: u64, node: &NodeDescriptor, nodes: &BTreeMap<NodeId, NodeDescriptor>) -> u32 {
        let role = Role::of(node.flavor);
        let candidates: Vec<u32> = self.groups.values().filter(|g| g.role == role).map(|g| g.group_id).collect();
        let deficit = candidates
            .iter()
            .filter_map(|id| match self.report_status(*id, nodes) {
                GroupStatus::Deficit { shortfall } => Some((normalized(&shortfall, &self.groups[id].spec), *id)),
                _ => None,
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let target = match deficit {
            Some((_, id)) => id,
            None => match candidates
                .iter()
                .map(|id| (ratio(&self.capability(*id, nodes), &self.groups[id].spec), *id))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            {
                Some((_, id)) => id,
                None => self.create_group(role),
            },
        };
        self.move_node(tick, node.node_id, None, target);
        target
    }

    pub fn open_deficits(&self, nodes: &BTreeMap<NodeId, NodeDescriptor>) -> usize {
        self.groups.keys().filter(|id| matches!(self.report_status(**id, nodes), GroupStatus::Deficit { .. })).count()
    }
}

/// A background action that restores a replication factor.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Repair {
    /// Copy every record of a user-base partition onto `to`.
    Copy { partition: PartitionId, class: StorageClassKind, from: NodeId, to: NodeId },
    /// Recompute records of a derived partition from lineage onto `to`.
    Rebuild { partition: PartitionId, class: StorageClassKind, to: NodeId },
    /// Rebuild an index partition on `to`.
    RebuildIndex { partition: PartitionId, to: NodeId },
    /// Stop serving a partition from a node the ring no longer prefers.
    Trim { partition: PartitionId, class: StorageClassKind, node: NodeId },
}

impl Repair {
    pub fn node(&self) -> NodeId {
        match self {
            Repair::Copy { to, .. } | Repair::Rebuild { to, .. } | Repair::RebuildIndex { to, .. } => *to,
            Repair::Trim { node, .. } => *node,
        }
    }

    pub fn partition(&self) -> PartitionId {
        match self {
            Repair::Copy { partition, .. }
            | Repair::Rebuild { partition, .. }
            | Repair::RebuildIndex { partition, .. }
            | Repair::Trim { partition, .. } => *partition,
        }
    }
}

impl fmt::Display for Repair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repair::Copy { partition, class, from, to } => write!(f, "copy {partition} {class:?} n{from}->n{to}"),
            Repair::Rebuild { partition, class, to } => write!(f, "rebuild {partition} {class:?} on n{to}"),
            Repair::RebuildIndex { partition, to } => write!(f, "rebuild-index {partition} on n{to}"),
            Repair::Trim { partition, class, node } => write!(f, "trim {partition} {class:?} on n{node}"),
        }
    }
}

/// Lists the repairs that bring every partition to its factor on the
/// nodes the ring prefers. Trims are only proposed for fully replicated
/// keys, so data is never dropped before its new copy exists.
pub fn enforce_replication(
    store: &KernelStore,
    index: &Index,
    ring: &Ring,
    lost_index: &BTreeSet<PartitionId>,
) -> Vec<Repair> {
    let live = |n: NodeId| store.is_live(n);
    let mut out = Vec::new();
    let keys: BTreeSet<ReplicaKey> = store.replica_keys().copied().collect();
    for (partition, class) in keys {
        if store.records_under((partition, class)).next().is_none() {
            continue;
        }
        let factor = store.config().replication.factor(class) as usize;
        let desired = ring.preference(partition, factor, live);
        let holders = store.holders((partition, class));
        let missing_records = !store.missing_under((partition, class)).is_empty();
        let mut repaired = false;
        for to in &desired {
            if holders.contains(to) {
                continue;
            }
            repaired = true;
            let source = holders.iter().copied().find(|h| live(*h));
            match (class, source) {
                (StorageClassKind::UserBase, Some(from)) => out.push(Repair::Copy { partition, class, from, to: *to }),
                _ => out.push(Repair::Rebuild { partition, class, to: *to }),
            }
        }
        if missing_records && !repaired {
            // Some versions have no replica although the holder set looks
            // complete (they were written only to the lost node).
            if let Some(to) = desired.first() {
                out.push(Repair::Rebuild { partition, class, to: *to });
                repaired = true;
            }
        }
        if !repaired {
            for h in &holders {
                if !desired.contains(h) {
                    out.push(Repair::Trim { partition, class, node: *h });
                }
            }
        }
    }
    for p in ring.partitions() {
        let owner = ring.owner(p);
        let has_docs = !store.latest_in_partition(p).is_empty();
        let misplaced = index.location(p).is_some_and(|n| n != owner);
        if lost_index.contains(&p) || (has_docs && misplaced) {
            out.push(Repair::RebuildIndex { partition: p, to: owner });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::NodeState;

    fn node(id: u64, flavor: Flavor, compute: u64) -> NodeDescriptor {
        NodeDescriptor {
            node_id: NodeId(id),
            flavor,
            compute_capacity: compute,
            io_bandwidth: 0,
            storage_capacity: 0,
            state: NodeState::Up,
            capability: None,
        }
    }

    fn nodes(list: &[NodeDescriptor]) -> BTreeMap<NodeId, NodeDescriptor> {
        list.iter().map(|d| (d.node_id, d.clone())).collect()
    }

    fn grid_groups(specs: &[(u32, u64, &[u64])]) -> Vec<GroupConfig> {
        specs
            .iter()
            .map(|(id, tp, members)| GroupConfig {
                group_id: *id,
                role: Role::GridCompute,
                parent: None,
                members: members.to_vec(),
                spec: ServiceSpec { min_throughput: *tp, ..ServiceSpec::default() },
            })
            .collect()
    }

    #[test]
    fn status_classification() {
        let list = vec![node(1, Flavor::Grid, 10), node(2, Flavor::Grid, 10), node(3, Flavor::Grid, 10)];
        let all = nodes(&list);
        let s = Stewardship::new(&grid_groups(&[(0, 20, &[1, 2]), (1, 5, &[3]), (2, 30, &[])]), &list).unwrap();
        assert_eq!(s.report_status(0, &all), GroupStatus::Balanced);
        assert_eq!(s.report_status(1, &all), GroupStatus::Balanced, "releasing the only member would leave 0 < 5");
        assert_eq!(
            s.report_status(2, &all),
            GroupStatus::Deficit { shortfall: Capability { throughput: 30, capacity: 0, replication: 0 } }
        );
    }

    #[test]
    fn broker_moves_offer_into_deficit() {
        let list = vec![node(1, Flavor::Grid, 10), node(2, Flavor::Grid, 10), node(3, Flavor::Grid, 10)];
        let all = nodes(&list);
        let mut s = Stewardship::new(&grid_groups(&[(0, 10, &[1, 2, 3]), (1, 10, &[])]), &list).unwrap();
        let moved = s.broker_match(7, &all);
        assert_eq!(moved, vec![Transfer { tick: 7, node: NodeId(3), from: Some(0), to: 1 }]);
        assert_eq!(s.open_deficits(&all), 0);
        assert_eq!(moved[0].to_string(), "7\tn3\tg0\tg1");
    }

    #[test]
    fn add_resource_prefers_deficit_then_ratio_then_new_group() {
        let list = vec![node(1, Flavor::Grid, 10)];
        let mut all = nodes(&list);
        let mut s = Stewardship::new(&grid_groups(&[(0, 10, &[1]), (1, 40, &[])]), &list).unwrap();
        let fresh = node(2, Flavor::Grid, 10);
        all.insert(fresh.node_id, fresh.clone());
        assert_eq!(s.add_resource(0, &fresh, &all), 1);
        let data = node(3, Flavor::Data, 10);
        all.insert(data.node_id, data.clone());
        let created = s.add_resource(0, &data, &all);
        assert_eq!(s.group(created).unwrap().role, Role::DataStorage);
        assert!(s.is_forest());
    }

    #[test]
    fn cycles_are_rejected() {
        let mut cfg = grid_groups(&[(0, 0, &[]), (1, 0, &[])]);
        cfg[0].parent = Some(1);
        cfg[1].parent = Some(0);
        assert!(Stewardship::new(&cfg, &[]).unwrap_err().contains("cycle"));
    }
}
