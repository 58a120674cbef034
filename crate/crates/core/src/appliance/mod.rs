//! The assembled appliance: engine state plus the simulated cluster that
//! accounts for every piece of work.
//!
//! Writes commit synchronously and are acknowledged at once. Indexing,
//! annotation, join discovery and repairs run later as background tasks on
//! the simulator; their effects apply when the task completes. Queries
//! execute against the state at admission and their operators are charged
//! to the nodes the plan names.

mod job;
mod report;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use job::{Job, Stage, SCAN_KINDS};
pub use report::{percentile, LatencySummary};

use crate::config::{ApplianceConfig, ConfigError};
use crate::discovery::{
    annotation_draft, entities_of, parse_annotators, run_inter_for, run_intra, Annotator, DiscoveryError, EntityKey,
    EntityRegistry, JoinIndex, Scope, DEFAULT_ANNOTATORS,
};
use crate::fabric::{
    ConsistencyGroup, CostModel, NodeDescriptor, Priority, SchedulerConfig, SimEvent, Simulator, TaskId, TaskSpec,
    Topology,
};
use crate::formats;
use crate::index::{build_partition, postings_for, Index, IndexPartition};
use crate::model::{extract_paths, DocId, DocKind, DocNode, LogicalTime, SourceFormat, UniversalDocument, VersionId};
use crate::query::{
    self, replay, AggregateRequest, AggregateRow, ConnectionPath, ConnectionRequest, DrillState, Execution, Flavor,
    QueryContext, QueryError, QueryOutput, QueryPlan, Recipe, Request, SearchRequest, SearchResult, ViewQuery,
    ViewResult,
};
use crate::ring::{NodeId, PartitionId};
use crate::schema::SynonymTable;
use crate::stewardship::{enforce_replication, Repair, ResourceGroup, Stewardship, Transfer};
use crate::store::{KernelStore, Persisted, StoreError};
use crate::views::{ViewDef, ViewError, ViewRegistry};
use crate::workload::{Barrier, Command, Corpus, QuerySpec, Script};

#[derive(Debug, Error)]
pub enum ApplianceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("scheduling: {0}")]
    Scheduling(String),
    #[error("quiesce did not complete within {0} ticks")]
    Timeout(u64),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
}

fn store_code(e: &StoreError) -> &'static str {
    match e {
        StoreError::Parse(_) => "parse_error",
        StoreError::Oversized { .. } => "oversized",
        StoreError::Invalid(_) => "invalid_document",
        StoreError::UnknownDoc(_) => "unknown_doc",
        StoreError::UnknownVersion { .. } => "unknown_version",
        StoreError::Unavailable { .. } | StoreError::NoLiveNodes => "unavailable",
        StoreError::DanglingReference { .. } => "dangling_reference",
        StoreError::Corrupt { .. } => "corrupt",
        StoreError::Io(_) => "io_error",
    }
}

fn view_code(e: &ViewError) -> &'static str {
    match e {
        ViewError::Unregistered(_) => "unknown_view",
        ViewError::Duplicate(_) => "duplicate_view",
        ViewError::Invalid(_) => "invalid_view",
        ViewError::Store(s) => store_code(s),
    }
}

impl ApplianceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ApplianceError::Config(_) => "invalid_config",
            ApplianceError::Store(e) => store_code(e),
            ApplianceError::Query(e) => match e {
                QueryError::Invalid(_) => "invalid_request",
                QueryError::FacetNotRequested(_) => "facet_not_requested",
                QueryError::UnknownView(_) => "unknown_view",
                QueryError::UnknownColumn { .. } => "unknown_column",
                QueryError::NoIndex { .. } => "no_index",
                QueryError::UnknownDoc(_) => "unknown_doc",
                QueryError::SameEndpoints => "same_endpoints",
                QueryError::TooManyHops { .. } => "too_many_hops",
                QueryError::NonNumericMeasure { .. } => "non_numeric_measure",
                QueryError::Lint(_) => "plan_rejected",
                QueryError::Store(s) => store_code(s),
                QueryError::View(v) => view_code(v),
            },
            ApplianceError::View(e) => view_code(e),
            ApplianceError::Discovery(_) => "invalid_annotator",
            ApplianceError::Unavailable(_) => "unavailable",
            ApplianceError::UnknownNode(_) => "unknown_node",
            ApplianceError::Invalid(_) => "invalid_request",
            ApplianceError::Scheduling(_) => "scheduling_error",
            ApplianceError::Timeout(_) => "quiesce_timeout",
            ApplianceError::Script { .. } => "script_error",
        }
    }
}

pub type Result<T, E = ApplianceError> = std::result::Result<T, E>;

/// A membership or reconfiguration event, in the order it happened.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MembershipEvent {
    pub tick: u64,
    pub event: &'static str,
    pub node: Option<NodeId>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryRecord {
    pub id: u64,
    pub kind: String,
    pub submitted: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartitionView {
    pub partition: PartitionId,
    pub owner: NodeId,
    pub index_location: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopologySnapshot {
    pub tick: u64,
    pub nodes: Vec<NodeDescriptor>,
    pub consistency_groups: Vec<ConsistencyGroup>,
    pub resource_groups: Vec<ResourceGroup>,
    pub partitions: Vec<PartitionView>,
}

/// A query's answer together with the id its tasks carry in the trace.
#[derive(Clone, Debug)]
pub struct Answer<T> {
    pub query: u64,
    pub value: T,
    /// The derived document a materializing query committed.
    pub materialized: Option<Persisted>,
}

pub struct Appliance {
    config: ApplianceConfig,
    topology: Topology,
    store: KernelStore,
    index: Index,
    annotators: Vec<Annotator>,
    entities: EntityRegistry,
    joins: JoinIndex,
    synonyms: SynonymTable,
    views: ViewRegistry,
    recipes: BTreeMap<(DocId, VersionId), Recipe>,
    stewardship: Stewardship,
    sim: Simulator<Job>,
    membership: Vec<MembershipEvent>,
    /// Failed nodes not yet detected, with the tick they failed.
    undetected: BTreeMap<NodeId, u64>,
    /// Nodes whose tasks were already moved elsewhere.
    relocated: BTreeSet<NodeId>,
    lost_index: BTreeSet<PartitionId>,
    inflight: BTreeSet<Repair>,
    failed_repairs: BTreeSet<Repair>,
    repairs_dirty: bool,
    intra_seen: BTreeSet<(DocId, VersionId, usize)>,
    pending: [usize; Stage::COUNT],
    queries: Vec<QueryRecord>,
    plans: BTreeMap<u64, QueryPlan>,
    rejected: u64,
    rng: ChaCha8Rng,
    corpus: Corpus,
}

fn load_annotators(config: &ApplianceConfig) -> Result<Vec<Annotator>> {
    let mut specs = Vec::new();
    if config.annotators.defaults {
        specs.extend(parse_annotators(DEFAULT_ANNOTATORS)?);
    }
    if let Some(path) = &config.annotators.file {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ApplianceError::Config(ConfigError::Read { path: path.display().to_string(), message: e.to_string() })
        })?;
        specs.extend(parse_annotators(&text)?);
    }
    let mut out: Vec<Annotator> = Vec::new();
    for spec in specs {
        if out.iter().any(|a| a.name() == spec.name) {
            return Err(DiscoveryError::Duplicate(spec.name).into());
        }
        out.push(Annotator::compile(spec)?);
    }
    Ok(out)
}

impl Appliance {
    pub fn new(config: ApplianceConfig, seed: u64) -> Result<Appliance> {
        config.validate()?;
        let topology = Topology::build(&config.cluster).map_err(|m| ApplianceError::Config(ConfigError::Invalid(m)))?;
        let data = topology.up_nodes(Flavor::Data);
        let store = KernelStore::new(config.store.clone(), config.cluster.partitions, &data)?;
        let annotators = load_annotators(&config)?;
        let stewardship = Stewardship::new(&config.groups, topology.nodes())
            .map_err(|m| ApplianceError::Config(ConfigError::Invalid(m)))?;
        let scheduler = SchedulerConfig {
            aging_threshold: config.scheduler.aging_threshold,
            background_slots: config.scheduler.background_slots,
            heartbeat_period: config.cluster.heartbeat_period,
        };
        let mut sim = Simulator::new(scheduler, config.cost_model.gamma, SCAN_KINDS);
        for n in topology.nodes() {
            sim.add_node(n.node_id, n.flavor, n.compute_capacity);
        }
        let synonyms = SynonymTable::from_classes(config.synonyms.clone());
        Ok(Appliance {
            topology,
            store,
            index: Index::new(),
            annotators,
            entities: EntityRegistry::default(),
            joins: JoinIndex::default(),
            synonyms,
            views: ViewRegistry::default(),
            recipes: BTreeMap::new(),
            stewardship,
            sim,
            membership: Vec::new(),
            undetected: BTreeMap::new(),
            relocated: BTreeSet::new(),
            lost_index: BTreeSet::new(),
            inflight: BTreeSet::new(),
            failed_repairs: BTreeSet::new(),
            repairs_dirty: false,
            intra_seen: BTreeSet::new(),
            pending: [0; Stage::COUNT],
            queries: Vec::new(),
            plans: BTreeMap::new(),
            rejected: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            corpus: Corpus::new(),
            config,
        })
    }

    pub fn config(&self) -> &ApplianceConfig {
        &self.config
    }

    pub fn store(&self) -> &KernelStore {
        &self.store
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn joins(&self) -> &JoinIndex {
        &self.joins
    }

    pub fn entities(&self) -> &EntityRegistry {
        &self.entities
    }

    pub fn annotators(&self) -> &[Annotator] {
        &self.annotators
    }

    /// Loads more annotators. They apply to versions committed afterwards.
    pub fn add_annotators(&mut self, text: &str) -> Result<Vec<String>> {
        let mut compiled = Vec::new();
        for spec in parse_annotators(text)? {
            if self.annotators.iter().chain(&compiled).any(|a: &Annotator| a.name() == spec.name) {
                return Err(DiscoveryError::Duplicate(spec.name).into());
            }
            compiled.push(Annotator::compile(spec)?);
        }
        let names = compiled.iter().map(|a| a.name().to_string()).collect();
        self.annotators.extend(compiled);
        Ok(names)
    }

    pub fn synonyms(&self) -> &SynonymTable {
        &self.synonyms
    }

    pub fn views(&self) -> &ViewRegistry {
        &self.views
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn stewardship(&self) -> &Stewardship {
        &self.stewardship
    }

    pub fn simulator(&self) -> &Simulator<Job> {
        &self.sim
    }

    pub fn membership(&self) -> &[MembershipEvent] {
        &self.membership
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    /// The plan each admitted query ran, by query id.
    pub fn plans(&self) -> &BTreeMap<u64, QueryPlan> {
        &self.plans
    }

    pub fn now(&self) -> u64 {
        self.sim.now()
    }

    /// Index partitions lost with a failed node and not rebuilt yet.
    pub fn lost_index_partitions(&self) -> &BTreeSet<PartitionId> {
        &self.lost_index
    }

    /// Repairs that could not be carried out and will not be retried.
    pub fn failed_repairs(&self) -> &BTreeSet<Repair> {
        &self.failed_repairs
    }

    fn cost(&self) -> &CostModel {
        &self.config.cost_model
    }

    fn event(&mut self, event: &'static str, node: Option<NodeId>, detail: String) {
        self.membership.push(MembershipEvent { tick: self.sim.now(), event, node, detail });
    }

    // ---- placement ----

    fn up(&self, node: NodeId) -> bool {
        self.topology.is_up(node)
    }

    /// Where the operators of a partition run: its index, else its owner,
    /// else the first live node along the ring.
    fn partition_node(&self, p: PartitionId) -> NodeId {
        let ring = self.topology.ring();
        if let Some(n) = self.index.location(p).filter(|n| self.up(*n)) {
            return n;
        }
        let owner = ring.owner(p);
        if self.up(owner) {
            return owner;
        }
        ring.walk(p).into_iter().find(|n| self.up(*n)).unwrap_or(owner)
    }

    fn placement(&self) -> BTreeMap<PartitionId, NodeId> {
        self.topology.ring().partitions().map(|p| (p, self.partition_node(p))).collect()
    }

    fn index_node(&self, p: PartitionId) -> NodeId {
        match self.index.location(p).filter(|n| self.up(*n)) {
            Some(n) => n,
            None => self.topology.ring().owner(p),
        }
    }

    /// A live holder of the version, preferring the partition owner.
    fn holder_node(&self, p: PartitionId, doc: DocId, version: VersionId) -> NodeId {
        let owner = self.topology.ring().owner(p);
        let holders: Vec<NodeId> = self.store.replicas_of(doc, version).into_iter().filter(|n| self.up(*n)).collect();
        if holders.contains(&owner) || holders.is_empty() {
            owner
        } else {
            holders[0]
        }
    }

    fn live_leader(&self, p: PartitionId) -> Option<NodeId> {
        self.topology.leader_for(p).filter(|n| self.up(*n))
    }

    fn leader_or_any(&self, p: PartitionId) -> Option<NodeId> {
        self.live_leader(p).or_else(|| self.topology.up_nodes(Flavor::Cluster).first().copied())
    }

    fn least_loaded(&self, nodes: &[NodeId]) -> Option<NodeId> {
        nodes.iter().copied().min_by_key(|n| (self.sim.load(*n), *n))
    }

    /// A grid node, least loaded with round-robin ties; data nodes stand in
    /// (flagged) when no grid node is up.
    fn grid_node(&mut self) -> Result<(NodeId, bool)> {
        let grid = self.topology.up_nodes(Flavor::Grid);
        let sim = &self.sim;
        if let Some(n) = self.topology.pick_round_robin(&grid, |n| sim.load(n)) {
            return Ok((n, false));
        }
        let data = self.topology.up_nodes(Flavor::Data);
        self.least_loaded(&data)
            .map(|n| (n, true))
            .ok_or_else(|| ApplianceError::Scheduling("no grid or data node is up".into()))
    }

    fn origin(&self) -> Result<u64> {
        self.topology
            .up_nodes(Flavor::Cluster)
            .first()
            .map(|n| n.0)
            .ok_or_else(|| ApplianceError::Unavailable("no cluster node is up".into()))
    }

    fn submit(&mut self, job: Job, priority: Priority, node: NodeId, work: u64, deps: Vec<(TaskId, usize)>) -> TaskId {
        self.submit_flagged(job, priority, node, work, deps, false, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn submit_flagged(
        &mut self,
        job: Job,
        priority: Priority,
        node: NodeId,
        work: u64,
        deps: Vec<(TaskId, usize)>,
        fallback: bool,
        query: Option<u64>,
    ) -> TaskId {
        self.pending[job.stage() as usize] += 1;
        self.sim.submit(TaskSpec { payload: job, priority, node, work, deps, fallback, query })
    }

    // ---- writes ----

    fn write_leader(&self, doc: DocId) -> Result<NodeId> {
        let p = self.topology.ring().partition_of(doc);
        self.live_leader(p).ok_or_else(|| {
            ApplianceError::Unavailable(format!(
                "consistency group {} has no live leader",
                self.topology.group_for(p).group_id
            ))
        })
    }

    /// Parses and commits a new base document.
    pub fn ingest(&mut self, format: SourceFormat, payload: &[u8]) -> Result<Persisted> {
        let result = self.try_ingest(format, payload);
        if result.is_err() {
            self.rejected += 1;
        }
        result
    }

    fn try_ingest(&mut self, format: SourceFormat, payload: &[u8]) -> Result<Persisted> {
        let origin = self.origin()?;
        let leader = self.write_leader(self.store.peek_doc_id(origin))?;
        let persisted = self.store.ingest(payload, format, origin, self.topology.ring())?;
        self.after_commit(&persisted, leader);
        Ok(persisted)
    }

    /// Commits a new version of `doc` from a payload in `format`.
    pub fn update(&mut self, doc: DocId, format: SourceFormat, payload: &[u8]) -> Result<Persisted> {
        let root = formats::parse(payload, format).map_err(StoreError::from)?;
        self.update_root(doc, root)
    }

    pub fn update_root(&mut self, doc: DocId, root: DocNode) -> Result<Persisted> {
        let result = self.try_update(doc, root);
        if result.is_err() {
            self.rejected += 1;
        }
        result
    }

    fn try_update(&mut self, doc: DocId, root: DocNode) -> Result<Persisted> {
        if !self.store.contains(doc) {
            return Err(StoreError::UnknownDoc(doc).into());
        }
        let leader = self.write_leader(doc)?;
        let persisted = self.store.update(doc, root, self.topology.ring())?;
        self.after_commit(&persisted, leader);
        Ok(persisted)
    }

    fn after_commit(&mut self, persisted: &Persisted, leader: NodeId) {
        let (doc, version, p) = (persisted.doc_id, persisted.version, persisted.partition);
        let document = self.store.get(doc, Some(version)).expect("just committed");
        let len = self.store.meta(doc, version).map_or(0, |m| m.len);
        let work = self.cost().work("commit", 1, persisted.replicas.len());
        let commit =
            self.submit(Job::Commit { doc, version, partition: p }, Priority::Interactive, leader, work, vec![]);
        self.schedule_index(&document, p, persisted.persisted_at, vec![(commit, len)]);
        if document.kind == DocKind::Base {
            self.schedule_intra(&document, p, vec![(commit, len)]);
        }
    }

    fn schedule_index(
        &mut self,
        document: &UniversalDocument,
        p: PartitionId,
        at: LogicalTime,
        deps: Vec<(TaskId, usize)>,
    ) {
        self.index.note_persisted(at);
        let node = self.index_node(p);
        let work = self.cost().work("index", postings_for(document).len(), 1);
        let job = Job::Index { doc: document.doc_id, version: document.version, partition: p, persisted_at: at };
        self.submit(job, Priority::Background, node, work, deps);
    }

    fn schedule_intra(&mut self, document: &UniversalDocument, p: PartitionId, deps: Vec<(TaskId, usize)>) {
        let (doc, version) = (document.doc_id, document.version);
        for i in 0..self.annotators.len() {
            let annotator = &self.annotators[i];
            if annotator.scope() != Scope::Intra || !annotator.selects(document) {
                continue;
            }
            if !self.intra_seen.insert((doc, version, i)) {
                continue;
            }
            let draft = run_intra(document, annotator);
            let found = draft.as_ref().map_or(0, |d| entities_of(&d.root).len());
            let work = self.cost().work("run_intra", extract_paths(&document.root).len(), found);
            let node = self.holder_node(p, doc, version);
            let job = Job::Intra { doc, version, partition: p, annotator: i, draft: draft.map(Box::new) };
            self.submit(job, Priority::Background, node, work, deps.clone());
        }
    }

    fn record_keys(&mut self, doc: DocId, version: VersionId, annotator: usize, keys: BTreeSet<EntityKey>) {
        let prior = self.entities.version_of(doc);
        let name = self.annotators[annotator].name().to_string();
        let added = self.entities.record(doc, version, &name, keys);
        let advanced = prior != Some(version) && self.entities.version_of(doc) == Some(version);
        if (added.is_empty() && !advanced) || self.entities.keys_of(doc).is_empty() {
            return;
        }
        for i in 0..self.annotators.len() {
            if self.annotators[i].scope() != Scope::Inter {
                continue;
            }
            let resolver = &self.annotators[i];
            let stream = self.entities.stream_for(doc, |k| resolver.resolves(&k.entity_type));
            if stream.is_empty() {
                continue;
            }
            let work = self.cost().work("run_inter", stream.len(), stream.len());
            let (node, fallback) = match self.grid_node() {
                Ok(placed) => placed,
                Err(_) => continue,
            };
            self.submit_flagged(
                Job::Inter { doc, annotator: i },
                Priority::Background,
                node,
                work,
                vec![],
                fallback,
                None,
            );
        }
    }

    // ---- completion handling ----

    fn handle(&mut self, event: SimEvent<Job>) {
        match event {
            SimEvent::Completed { task, payload, node, .. } => {
                self.pending[payload.stage() as usize] -= 1;
                self.complete(task, payload, node);
            }
            SimEvent::Heartbeat { tick } => self.heartbeat(tick),
        }
        for job in self.sim.take_cancelled() {
            self.pending[job.stage() as usize] -= 1;
            self.cancelled(job);
        }
    }

    fn cancelled(&mut self, job: Job) {
        match job {
            Job::Index { partition, persisted_at, .. } => {
                self.index.abandon(persisted_at);
                self.lost_index.insert(partition);
                self.repairs_dirty = true;
            }
            Job::Repair(r) => {
                self.inflight.remove(&r);
                self.repairs_dirty = true;
            }
            _ => {}
        }
    }

    fn complete(&mut self, task: TaskId, job: Job, node: NodeId) {
        match job {
            Job::Commit { .. } | Job::Op { .. } | Job::Analyze { .. } => {}
            Job::Index { doc, version, partition, persisted_at } => {
                if self.lost_index.contains(&partition) {
                    self.index.abandon(persisted_at);
                    return;
                }
                match self.store.get(doc, Some(version)) {
                    Ok(document) => {
                        self.index.index_document(partition, node, &document, persisted_at);
                    }
                    Err(_) => {
                        self.index.abandon(persisted_at);
                        self.lost_index.insert(partition);
                        self.repairs_dirty = true;
                    }
                }
            }
            Job::Intra { doc, version, partition, annotator, draft } => match draft {
                Some(draft) => {
                    let Some(leader) = self.leader_or_any(partition) else { return };
                    let work = self.cost().work("persist_annotation", draft.root.node_count(), 1);
                    let bytes = 16 * draft.root.node_count();
                    let job = Job::PersistAnnotation { target: (doc, version), partition, annotator, draft };
                    self.submit(job, Priority::Background, leader, work, vec![(task, bytes)]);
                }
                None => self.record_keys(doc, version, annotator, BTreeSet::new()),
            },
            Job::PersistAnnotation { target, annotator, draft, .. } => {
                let keys: BTreeSet<EntityKey> = entities_of(&draft.root).iter().map(|e| e.key()).collect();
                let Ok(origin) = self.origin() else { return };
                match self.store.create(*draft, origin, self.topology.ring()) {
                    Ok(persisted) => {
                        let document =
                            self.store.get(persisted.doc_id, Some(persisted.version)).expect("just committed");
                        let len = self.store.meta(persisted.doc_id, persisted.version).map_or(0, |m| m.len);
                        self.schedule_index(&document, persisted.partition, persisted.persisted_at, vec![(task, len)]);
                        self.record_keys(target.0, target.1, annotator, keys);
                    }
                    Err(_) => self.rejected += 1,
                }
            }
            Job::Inter { doc, annotator } => {
                let resolver = &self.annotators[annotator];
                let stream = self.entities.stream_for(doc, |k| resolver.resolves(&k.entity_type));
                let entries = run_inter_for(doc, &stream);
                if entries.is_empty() {
                    return;
                }
                let partition = self.topology.ring().partition_of(doc);
                let Some(leader) = self.leader_or_any(partition) else { return };
                let work = self.cost().work("persist_joins", entries.len(), entries.len());
                let bytes = 48 * entries.len();
                self.submit(
                    Job::PersistJoins { doc, partition, entries },
                    Priority::Background,
                    leader,
                    work,
                    vec![(task, bytes)],
                );
            }
            Job::PersistJoins { entries, .. } => {
                self.joins.insert(entries);
            }
            Job::Repair(repair) => {
                self.inflight.remove(&repair);
                self.repairs_dirty = true;
                match self.apply_repair(&repair) {
                    Ok(()) => self.event("repair", Some(repair.node()), repair.to_string()),
                    Err(RepairFailure::Retry) => {}
                    Err(RepairFailure::Permanent(message)) => {
                        self.event("repair_failed", Some(repair.node()), format!("{repair}: {message}"));
                        self.failed_repairs.insert(repair);
                    }
                }
            }
        }
    }

    // ---- membership ----

    /// Stops a node now. Detection, reconfiguration and repair follow
    /// through heartbeats.
    pub fn fail_node(&mut self, id: NodeId) -> Result<()> {
        let Some(node) = self.topology.node(id) else { return Err(ApplianceError::UnknownNode(id.0)) };
        let flavor = node.flavor;
        if !self.topology.mark_failed(id) {
            return Err(ApplianceError::Invalid(format!("node {id} is not up")));
        }
        self.sim.fail_node(id);
        if flavor == Flavor::Data {
            self.store.fail_node(id);
            self.lost_index.extend(self.index.lose_node(id));
        }
        self.undetected.insert(id, self.sim.now());
        self.event("fail", Some(id), flavor.name().to_string());
        Ok(())
    }

    /// Fails the current leader of consistency group `group`.
    pub fn fail_leader(&mut self, group: u32) -> Result<NodeId> {
        let g = self
            .topology
            .group(group)
            .ok_or_else(|| ApplianceError::Invalid(format!("no consistency group {group}")))?;
        let leader = g.leader.ok_or_else(|| ApplianceError::Unavailable(format!("group {group} has no leader")))?;
        self.fail_node(leader)?;
        Ok(leader)
    }

    /// Adds a fresh node of `flavor`.
    pub fn join_node(&mut self, flavor: Flavor, capacity: u64) -> Result<NodeId> {
        if capacity == 0 {
            return Err(ApplianceError::Invalid("capacity must be positive".into()));
        }
        let (id, moves) = self.topology.join(flavor, capacity, &self.config.cluster);
        let descriptor = self.topology.node(id).expect("just joined").clone();
        self.sim.add_node(id, flavor, descriptor.compute_capacity);
        if flavor == Flavor::Data {
            self.store.add_node(id)?;
        }
        let nodes = self.node_map();
        let group = self.stewardship.add_resource(self.sim.now(), &descriptor, &nodes);
        self.event(
            "join",
            Some(id),
            format!("{} capacity={capacity} moved={} group=g{group}", flavor.name(), moves.len()),
        );
        if flavor == Flavor::Data {
            self.repairs_dirty = true;
        }
        Ok(id)
    }

    fn node_map(&self) -> BTreeMap<NodeId, NodeDescriptor> {
        self.topology.nodes().map(|n| (n.node_id, n.clone())).collect()
    }

    fn heartbeat(&mut self, tick: u64) {
        for (group, leader) in self.topology.elect() {
            let detail = format!("g{group}");
            self.event("leader", leader, detail);
        }
        let failed_cluster: Vec<NodeId> = self
            .undetected
            .keys()
            .copied()
            .filter(|n| {
                self.topology.node(*n).is_some_and(|d| d.flavor == Flavor::Cluster) && !self.relocated.contains(n)
            })
            .collect();
        for n in failed_cluster {
            self.relocate(n);
        }
        let window = u64::from(self.config.cluster.missed_heartbeats) * self.config.cluster.heartbeat_period;
        let due: Vec<NodeId> =
            self.undetected.iter().filter(|(_, at)| tick.saturating_sub(**at) >= window).map(|(n, _)| *n).collect();
        for n in due {
            self.detect(n, tick);
        }
        if self.repairs_dirty {
            self.enforce();
        }
    }

    fn detect(&mut self, node: NodeId, tick: u64) {
        self.undetected.remove(&node);
        self.event("detect", Some(node), String::new());
        if self.topology.node(node).is_some_and(|d| d.flavor == Flavor::Data) {
            let moves = self.topology.remove_from_ring(node);
            self.event("rebalance", Some(node), format!("moved={}", moves.len()));
        }
        self.stewardship.remove_node(node);
        let nodes = self.node_map();
        for transfer in self.stewardship.broker_match(tick, &nodes) {
            self.event("transfer", Some(transfer.node), transfer.to_string());
        }
        if !self.relocated.contains(&node) {
            self.relocate(node);
        }
        self.repairs_dirty = true;
    }

    fn place(&mut self, job: &Job) -> (Option<NodeId>, bool) {
        match job {
            Job::Commit { partition, .. }
            | Job::PersistAnnotation { partition, .. }
            | Job::PersistJoins { partition, .. } => (self.leader_or_any(*partition), false),
            Job::Index { partition, .. } => {
                let n = self.index_node(*partition);
                (self.up(n).then_some(n), false)
            }
            Job::Intra { doc, version, partition, .. } => {
                let n = self.holder_node(*partition, *doc, *version);
                (self.up(n).then_some(n), false)
            }
            Job::Inter { .. } | Job::Analyze { .. } => match self.grid_node() {
                Ok((n, fallback)) => (Some(n), fallback),
                Err(_) => (None, false),
            },
            Job::Op { flavor, partition, .. } => match flavor {
                Flavor::Data => {
                    let n = partition.map(|p| self.partition_node(p));
                    (
                        n.filter(|n| self.up(*n)).or_else(|| self.least_loaded(&self.topology.up_nodes(Flavor::Data))),
                        false,
                    )
                }
                Flavor::Grid => match self.grid_node() {
                    Ok((n, fallback)) => (Some(n), fallback),
                    Err(_) => (None, false),
                },
                Flavor::Cluster => (self.topology.up_nodes(Flavor::Cluster).first().copied(), false),
            },
            Job::Repair(_) => (None, false),
        }
    }

    /// Moves every unfinished task of a failed node to a live one.
    fn relocate(&mut self, node: NodeId) {
        self.relocated.insert(node);
        let jobs: Vec<(TaskId, Job)> =
            self.sim.pending().filter(|(_, _, n)| *n == node).map(|(id, job, _)| (id, job.clone())).collect();
        let mut targets = BTreeMap::new();
        let mut flagged = Vec::new();
        for (id, job) in &jobs {
            let (target, fallback) = self.place(job);
            targets.insert(*id, target);
            if fallback {
                flagged.push(*id);
            }
        }
        self.sim.relocate(node, |id, _| targets.get(&id).copied().flatten());
        for id in flagged {
            self.sim.set_fallback(id);
        }
        self.event("relocate", Some(node), format!("tasks={}", jobs.len()));
    }

    // ---- repairs ----

    fn enforce(&mut self) {
        let repairs = enforce_replication(&self.store, &self.index, self.topology.ring(), &self.lost_index);
        let mut waiting = false;
        for repair in repairs {
            if self.inflight.contains(&repair) || self.failed_repairs.contains(&repair) {
                continue;
            }
            let node = repair.node();
            if !self.up(node) {
                waiting = true;
                continue;
            }
            let work = self.repair_work(&repair);
            self.inflight.insert(repair.clone());
            self.submit(Job::Repair(repair), Priority::Background, node, work, vec![]);
        }
        self.repairs_dirty = waiting;
    }

    fn partition_bytes(&self, key: crate::store::ReplicaKey) -> (usize, usize) {
        let records: Vec<&(DocId, VersionId)> = self.store.records_under(key).collect();
        let bytes = records.iter().filter_map(|(d, v)| self.store.meta(*d, *v)).map(|m| m.len).sum();
        (bytes, records.len())
    }

    fn repair_work(&self, repair: &Repair) -> u64 {
        match repair {
            Repair::Copy { partition, class, .. } => {
                let (bytes, n) = self.partition_bytes((*partition, *class));
                self.cost().work("copy", bytes, n)
            }
            Repair::Rebuild { partition, class, .. } => {
                let (bytes, n) = self.partition_bytes((*partition, *class));
                self.cost().work("rebuild", bytes, n)
            }
            Repair::RebuildIndex { partition, .. } => {
                let latest = self.store.latest_in_partition(*partition);
                let bytes = latest.iter().filter_map(|(d, v)| self.store.meta(*d, *v)).map(|m| m.len).sum();
                self.cost().work("rebuild", bytes, latest.len())
            }
            Repair::Trim { .. } => self.cost().work("copy", 0, 0),
        }
    }

    /// Recomputes a derived or annotation version from its lineage.
    pub fn recompute(&self, doc: DocId, version: VersionId) -> std::result::Result<DocNode, String> {
        let meta = self.store.meta(doc, version).ok_or_else(|| format!("unknown version {doc} v{version}"))?;
        let lineage = meta.lineage.as_ref().ok_or_else(|| format!("{doc} v{version} has no lineage"))?;
        match meta.kind {
            DocKind::Annotation => {
                let annotator = self
                    .annotators
                    .iter()
                    .find(|a| a.name() == lineage.producer)
                    .ok_or_else(|| format!("annotator {:?} is not loaded", lineage.producer))?;
                let &(input, input_version) = lineage.inputs.first().ok_or("annotation without input")?;
                let base = self.store.get(input, Some(input_version)).map_err(|e| e.to_string())?;
                let entities = annotator.extract(&base);
                Ok(annotation_draft(input, input_version, annotator.name(), &entities).root)
            }
            DocKind::Derived => {
                let recipe =
                    self.recipes.get(&(doc, version)).ok_or_else(|| format!("no recipe for {doc} v{version}"))?;
                replay(&self.store, &self.synonyms, &self.views, recipe, &lineage.inputs).map_err(|e| e.to_string())
            }
            DocKind::Base => Err("base documents are copied, not rebuilt".into()),
        }
    }

    /// A fresh index over the latest versions of a partition.
    pub fn fresh_index_partition(&self, p: PartitionId) -> std::result::Result<IndexPartition, StoreError> {
        let docs = self
            .store
            .latest_in_partition(p)
            .into_iter()
            .map(|(d, v)| self.store.get(d, Some(v)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(build_partition(&docs))
    }

    fn apply_repair(&mut self, repair: &Repair) -> std::result::Result<(), RepairFailure> {
        match repair {
            Repair::Copy { partition, class, from, to } => {
                self.store.copy_replica((*partition, *class), *from, *to).map(|_| ()).map_err(|_| RepairFailure::Retry)
            }
            Repair::Rebuild { partition, class, to } => {
                let records: Vec<(DocId, VersionId)> =
                    self.store.records_under((*partition, *class)).copied().collect();
                for (doc, version) in records {
                    let root = self.recompute(doc, version).map_err(RepairFailure::Permanent)?;
                    let record = self
                        .store
                        .rebuild_record(doc, version, root)
                        .map_err(|e| RepairFailure::Permanent(e.to_string()))?;
                    self.store.restore(&record, *to).map_err(|e| match e {
                        StoreError::NoLiveNodes => RepairFailure::Retry,
                        other => RepairFailure::Permanent(other.to_string()),
                    })?;
                }
                Ok(())
            }
            Repair::RebuildIndex { partition, to } => match self.fresh_index_partition(*partition) {
                Ok(rebuilt) => {
                    self.index.install(*partition, *to, rebuilt);
                    self.lost_index.remove(partition);
                    Ok(())
                }
                // A derived version may still be awaiting its own rebuild.
                Err(_) if self.inflight.iter().any(|r| !matches!(r, Repair::RebuildIndex { .. })) => {
                    Err(RepairFailure::Retry)
                }
                Err(e) => Err(RepairFailure::Permanent(e.to_string())),
            },
            Repair::Trim { partition, class, node } => {
                self.store.drop_replica((*partition, *class), *node);
                Ok(())
            }
        }
    }

    // ---- time ----

    /// Processes everything up to and including `tick`.
    pub fn run_until(&mut self, tick: u64) {
        while let Some(event) = self.sim.step(tick) {
            self.handle(event);
        }
    }

    pub fn wait(&mut self, ticks: u64) {
        let target = self.sim.now().saturating_add(ticks);
        self.run_until(target);
    }

    pub fn barrier_met(&self, barrier: Barrier) -> bool {
        let index = self.pending[Stage::Index as usize] == 0 && self.lost_index.is_empty() && self.index.is_caught_up();
        match barrier {
            Barrier::Index => index,
            Barrier::Pipeline => {
                index && self.pending[Stage::Discovery as usize] == 0 && self.pending[Stage::Commit as usize] == 0
            }
            Barrier::All => {
                index
                    && self.sim.outstanding() == 0
                    && self.undetected.is_empty()
                    && self.inflight.is_empty()
                    && !self.repairs_dirty
            }
        }
    }

    /// Advances the clock until `barrier` holds. Returns the ticks spent.
    pub fn quiesce(&mut self, barrier: Barrier) -> Result<u64> {
        let start = self.sim.now();
        let limit = start.saturating_add(self.config.scheduler.quiesce_limit);
        while !self.barrier_met(barrier) {
            match self.sim.step(limit) {
                Some(event) => self.handle(event),
                None => return Err(ApplianceError::Timeout(self.config.scheduler.quiesce_limit)),
            }
        }
        Ok(self.sim.now() - start)
    }

    /// Runs all outstanding work to completion.
    pub fn settle(&mut self) -> Result<u64> {
        self.quiesce(Barrier::All)
    }

    // ---- reads ----

    pub fn get(&self, doc: DocId, version: Option<VersionId>) -> Result<UniversalDocument> {
        Ok(self.store.get(doc, version)?)
    }

    fn admit(&mut self, request: Request) -> Result<(u64, Execution, Option<Persisted>)> {
        let placement = self.placement();
        let ctx = QueryContext {
            store: &self.store,
            index: &self.index,
            joins: &self.joins,
            synonyms: &self.synonyms,
            views: &self.views,
            placement: &placement,
            max_hops_cap: self.config.cluster.max_hops,
        };
        let plan = query::plan(&ctx, &request)?;
        let execution = query::execute(&ctx, &plan)?;
        let qid = self.queries.len() as u64 + 1;
        let mut materialized = None;
        let mut persist_leader = None;
        if let Some((draft, recipe)) = &execution.persist {
            let origin = self.origin()?;
            let leader = self.write_leader(self.store.peek_doc_id(origin))?;
            let persisted = self.store.create(draft.clone(), origin, self.topology.ring())?;
            self.recipes.insert((persisted.doc_id, persisted.version), recipe.clone());
            let document = self.store.get(persisted.doc_id, Some(persisted.version))?;
            self.schedule_index(&document, persisted.partition, persisted.persisted_at, vec![]);
            persist_leader = Some(leader);
            materialized = Some(persisted);
        }
        let mut ids: Vec<TaskId> = Vec::with_capacity(plan.nodes.len());
        for (n, stats) in plan.nodes.iter().zip(&execution.stats) {
            let kind = n.op.kind();
            let (node, fallback) = match n.flavor {
                Flavor::Data => match n.node {
                    Some(node) => (node, false),
                    None => (
                        self.least_loaded(&self.topology.up_nodes(Flavor::Data))
                            .ok_or_else(|| ApplianceError::Scheduling("no data node is up".into()))?,
                        false,
                    ),
                },
                Flavor::Grid => self.grid_node()?,
                Flavor::Cluster => {
                    match persist_leader.or_else(|| self.topology.up_nodes(Flavor::Cluster).first().copied()) {
                        Some(node) => (node, false),
                        None => (self.grid_node()?.0, true),
                    }
                }
            };
            let deps = n.inputs.iter().map(|i| (ids[*i], execution.stats[*i].bytes_out)).collect();
            let work = self.cost().work(kind.name(), stats.tuples_in, stats.tuples_out);
            let partition = match &n.op {
                query::Operator::IndexScan { partitions, .. } | query::Operator::Fetch { partitions, .. } => {
                    partitions.first().copied()
                }
                _ => None,
            };
            let job = Job::Op { query: qid, node: n.id, op: kind, flavor: n.flavor, partition };
            ids.push(self.submit_flagged(job, Priority::Interactive, node, work, deps, fallback, Some(qid)));
        }
        self.queries.push(QueryRecord { id: qid, kind: request.to_string(), submitted: self.sim.now() });
        self.plans.insert(qid, plan);
        Ok((qid, execution, materialized))
    }

    pub fn search(&mut self, request: SearchRequest) -> Result<Answer<SearchResult>> {
        let (query, execution, materialized) = self.admit(Request::Search(request))?;
        match execution.output {
            QueryOutput::Search(value) => Ok(Answer { query, value, materialized }),
            other => unreachable!("search produced {other:?}"),
        }
    }

    /// Evaluates the request a drill state denotes.
    pub fn drill(&mut self, state: &DrillState) -> Result<Answer<SearchResult>> {
        self.search(state.effective())
    }

    pub fn aggregate(&mut self, request: AggregateRequest) -> Result<Answer<Vec<AggregateRow>>> {
        let (query, execution, materialized) = self.admit(Request::Aggregate(request))?;
        match execution.output {
            QueryOutput::Aggregate(value) => Ok(Answer { query, value, materialized }),
            other => unreachable!("aggregate produced {other:?}"),
        }
    }

    pub fn connect(&mut self, request: ConnectionRequest) -> Result<Answer<Vec<ConnectionPath>>> {
        let (query, execution, materialized) = self.admit(Request::Connection(request))?;
        match execution.output {
            QueryOutput::Connection(value) => Ok(Answer { query, value, materialized }),
            other => unreachable!("connect produced {other:?}"),
        }
    }

    pub fn register_view(&mut self, view: ViewDef) -> Result<()> {
        Ok(self.views.register(view)?)
    }

    pub fn view_query(&mut self, request: ViewQuery) -> Result<Answer<ViewResult>> {
        let (query, execution, materialized) = self.admit(Request::View(request))?;
        match execution.output {
            QueryOutput::View(value) => Ok(Answer { query, value, materialized }),
            other => unreachable!("view query produced {other:?}"),
        }
    }

    /// Full scan of every partition; returns the documents read.
    pub fn scan(&mut self) -> Result<Answer<usize>> {
        let (query, execution, materialized) = self.admit(Request::Scan)?;
        match execution.output {
            QueryOutput::Scan { documents } => Ok(Answer { query, value: documents, materialized }),
            other => unreachable!("scan produced {other:?}"),
        }
    }

    /// A purely analytic grid task of `work` units.
    pub fn analyze(&mut self, work: u64) -> Result<u64> {
        let qid = self.queries.len() as u64 + 1;
        let (node, fallback) = self.grid_node()?;
        self.submit_flagged(
            Job::Analyze { query: qid },
            Priority::Interactive,
            node,
            work.max(1),
            vec![],
            fallback,
            Some(qid),
        );
        self.queries.push(QueryRecord { id: qid, kind: "analyze".into(), submitted: self.sim.now() });
        Ok(qid)
    }

    pub fn topology_snapshot(&self) -> TopologySnapshot {
        let ring = self.topology.ring();
        TopologySnapshot {
            tick: self.sim.now(),
            nodes: self.topology.nodes().cloned().collect(),
            consistency_groups: self.topology.groups().to_vec(),
            resource_groups: self.stewardship.groups().cloned().collect(),
            partitions: ring
                .partitions()
                .map(|p| PartitionView { partition: p, owner: ring.owner(p), index_location: self.index.location(p) })
                .collect(),
        }
    }

    pub fn transfers(&self) -> &[Transfer] {
        self.stewardship.log()
    }

    // ---- scripts ----

    pub fn run_script(&mut self, script: &Script) -> Result<()> {
        for (line, command) in &script.commands {
            self.run_command(command).map_err(|e| match e {
                ApplianceError::Script { .. } => e,
                other => ApplianceError::Script { line: *line, message: other.to_string() },
            })?;
        }
        self.settle()?;
        Ok(())
    }

    fn run_command(&mut self, command: &Command) -> Result<()> {
        match command {
            Command::Ingest { count, generator } => {
                for _ in 0..*count {
                    let (format, payload) = self.corpus.generate(*generator, &mut self.rng);
                    // Rejections are counted in the report; the script goes on.
                    let _ = self.ingest(format, &payload);
                }
            }
            Command::Update { count } => {
                let bases: Vec<(DocId, SourceFormat)> = self
                    .store
                    .latest_documents()
                    .filter(|(_, m)| m.kind == DocKind::Base)
                    .map(|(d, m)| (d, m.source_format))
                    .collect();
                for _ in 0..*count {
                    let Some(&(doc, format)) = bases.choose(&mut self.rng) else { break };
                    let payload = self.corpus.payload(format, &mut self.rng);
                    let _ = self.update(doc, format, &payload);
                }
            }
            Command::Query(spec) => {
                let outcome = match spec {
                    QuerySpec::Search { terms, k, facets } => self
                        .search(SearchRequest {
                            terms: terms.clone(),
                            k: *k,
                            facets: facets.clone(),
                            ..SearchRequest::default()
                        })
                        .map(|_| ()),
                    QuerySpec::Scan => self.scan().map(|_| ()),
                    QuerySpec::Analyze { work } => self.analyze(*work).map(|_| ()),
                    QuerySpec::Canonical { term } => {
                        let name = format!("canonical-{}", self.queries.len() + 1);
                        let request = SearchRequest {
                            terms: vec![term.clone()],
                            entity_facets: true,
                            materialize: Some(name),
                            ..SearchRequest::default()
                        };
                        self.search(request).map(|_| ())
                    }
                };
                if outcome.is_err() {
                    self.rejected += 1;
                }
            }
            Command::Fail { node } => self.fail_node(NodeId(*node))?,
            Command::FailLeader { group } => {
                self.fail_leader(*group)?;
            }
            Command::Join { flavor, capacity } => {
                self.join_node(*flavor, *capacity)?;
            }
            Command::Wait { ticks } => self.wait(*ticks),
            Command::Quiesce(barrier) => {
                self.quiesce(*barrier)?;
            }
        }
        Ok(())
    }
}

enum RepairFailure {
    /// Try again at the next repair round.
    Retry,
    Permanent(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::parse_script;

    fn small() -> ApplianceConfig {
        let mut c = ApplianceConfig::default();
        c.cluster.data_nodes = 4;
        c.cluster.grid_nodes = 2;
        c.cluster.cluster_nodes = 3;
        c.cluster.partitions = 16;
        c
    }

    fn appliance() -> Appliance {
        Appliance::new(small(), 7).unwrap()
    }

    #[test]
    fn ingest_is_readable_before_background_work() {
        let mut a = appliance();
        let p = a.ingest(SourceFormat::JsonLike, br#"{"city":"Oslo","note":"hello"}"#).unwrap();
        assert!(a.simulator().outstanding() > 0);
        let doc = a.get(p.doc_id, None).unwrap();
        assert_eq!(doc.version, p.version);
        assert_eq!(a.index().document_count(), 0);
        a.settle().unwrap();
        assert_eq!(a.index().document_count(), 1);
    }

    #[test]
    fn annotations_produce_join_entries() {
        let mut a = appliance();
        a.ingest(SourceFormat::PlainText, b"Met with Acme Corp about pricing.").unwrap();
        a.ingest(SourceFormat::PlainText, b"Acme Corp signed the order.").unwrap();
        a.settle().unwrap();
        assert!(!a.joins().is_empty());
        let kinds: BTreeSet<DocKind> = a.store().latest_documents().map(|(_, m)| m.kind).collect();
        assert!(kinds.contains(&DocKind::Annotation));
    }

    #[test]
    fn search_finds_settled_documents() {
        let mut a = appliance();
        a.ingest(SourceFormat::JsonLike, br#"{"note":"zebra crossing"}"#).unwrap();
        a.ingest(SourceFormat::JsonLike, br#"{"note":"plain road"}"#).unwrap();
        a.settle().unwrap();
        let answer = a.search(SearchRequest::terms(&["zebra"])).unwrap();
        assert_eq!(answer.value.hits.len(), 1);
        a.settle().unwrap();
        assert!(a.query_latencies().count >= 1);
    }

    #[test]
    fn update_adds_a_version() {
        let mut a = appliance();
        let p = a.ingest(SourceFormat::JsonLike, br#"{"n":1}"#).unwrap();
        let q = a.update(p.doc_id, SourceFormat::JsonLike, br#"{"n":2}"#).unwrap();
        assert_eq!(q.version.number(), 2);
        assert!(a.update(DocId::new(99, 99), SourceFormat::JsonLike, b"{}").is_err());
    }

    #[test]
    fn data_node_failure_is_repaired() {
        let mut a = appliance();
        for i in 0..30 {
            a.ingest(SourceFormat::JsonLike, format!(r#"{{"n":{i},"note":"word{i}"}}"#).as_bytes()).unwrap();
        }
        a.settle().unwrap();
        let victim = a.topology().up_nodes(Flavor::Data)[0];
        a.fail_node(victim).unwrap();
        a.settle().unwrap();
        assert!(a.lost_index_partitions().is_empty());
        assert!(a.failed_repairs().is_empty());
        for (doc, meta) in a.store().latest_documents() {
            let live = a.store().replicas_of(doc, meta.version).len();
            let want = a.config().store.replication.factor(meta.class()) as usize;
            assert!(live >= want, "{doc} has {live} replicas");
        }
        for (p, part) in a.index().partitions() {
            assert_eq!(part.listing(), a.fresh_index_partition(p).unwrap().listing());
        }
        assert!(a.membership().iter().any(|e| e.event == "detect"));
    }

    #[test]
    fn leader_failure_elects_a_replacement() {
        let mut a = appliance();
        let old = a.fail_leader(0).unwrap();
        let period = a.config().cluster.heartbeat_period;
        a.wait(period);
        let g = a.topology().group(0).unwrap();
        assert!(g.leader.is_some() && g.leader != Some(old));
    }

    #[test]
    fn added_annotators_must_have_fresh_names() {
        let mut a = appliance();
        let text = "[[annotator]]\nname = \"cities\"\nscope = \"intra\"\n[[annotator.dictionary]]\ntext = \"Oslo\"\nentity_type = \"city\"\n";
        match a.add_annotators(text) {
            Ok(names) => assert_eq!(names, vec!["cities".to_string()]),
            Err(e) => panic!("{e}"),
        }
        assert_eq!(a.add_annotators(text).unwrap_err().code(), "invalid_annotator");
    }

    #[test]
    fn errors_carry_codes() {
        let mut a = appliance();
        assert_eq!(a.fail_node(NodeId(999)).unwrap_err().code(), "unknown_node");
        assert_eq!(a.ingest(SourceFormat::JsonLike, b"{").unwrap_err().code(), "parse_error");
        assert_eq!(a.get(DocId::new(1, 1), None).unwrap_err().code(), "unknown_doc");
    }

    #[test]
    fn scripts_are_deterministic() {
        let script =
            parse_script("INGEST 40 mixed\nQUERY SEARCH acme k=5\nUPDATE 5\nQUIESCE pipeline\nQUERY SCAN\n").unwrap();
        let run = || {
            let mut a = appliance();
            a.run_script(&script).unwrap();
            (a.metrics_report(), a.trace_report())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn unknown_node_in_script_names_the_line() {
        let script = parse_script("INGEST 1 rows\nFAIL 404\n").unwrap();
        let err = appliance().run_script(&script).unwrap_err();
        assert!(matches!(err, ApplianceError::Script { line: 2, .. }), "{err}");
    }
}
