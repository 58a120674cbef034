//! The discrete-event core: per-node queues, non-preemptive execution,
//! dependency edges with network delay, and the aging scheduler.
//!
//! Events are processed in `(tick, sequence)` order. A node runs one task at
//! a time. Interactive tasks come first, FIFO, unless the oldest admitted
//! background task has waited more than the aging threshold. Background
//! tasks enter a node's ready queue through a bounded number of admission
//! slots; the rest wait in a per-node backlog, FIFO.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::Serialize;

use super::cost::duration;
use crate::query::Flavor;
use crate::ring::NodeId;

pub type TaskId = u64;

/// A task payload with a name for traces.
pub trait Job: Clone {
    fn kind(&self) -> &'static str;
    fn detail(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Interactive,
    Background,
}

impl Priority {
    pub fn name(self) -> &'static str {
        match self {
            Priority::Interactive => "interactive",
            Priority::Background => "background",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskSpec<P> {
    pub payload: P,
    pub priority: Priority,
    pub node: NodeId,
    pub work: u64,
    /// Tasks whose completion this one waits for, with the bytes each ships.
    pub deps: Vec<(TaskId, usize)>,
    /// Set when the task runs on a node of another flavor than its home.
    pub fallback: bool,
    /// The query this task belongs to, if any.
    pub query: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Done,
    /// The node failed while running the task.
    Aborted,
    Cancelled,
}

/// One line of the task trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TaskRecord {
    pub task: TaskId,
    pub kind: &'static str,
    pub detail: String,
    pub query: Option<u64>,
    pub priority: Priority,
    pub node: NodeId,
    pub flavor: Flavor,
    pub fallback: bool,
    pub submitted: u64,
    pub admitted: u64,
    pub start: u64,
    pub end: u64,
    pub work: u64,
    pub bytes_in: usize,
    /// Queue state when the task was dispatched: interactive tasks waiting
    /// and admitted background tasks older than the aging threshold.
    pub queued_interactive: usize,
    pub queued_aged: usize,
    pub outcome: Outcome,
}

#[derive(Clone, Debug)]
struct Task<P> {
    spec: TaskSpec<P>,
    submitted: u64,
    ready_at: u64,
    admitted: u64,
    waiting: usize,
    bytes_in: usize,
    dependents: Vec<(TaskId, usize)>,
    dispatch: (usize, usize),
    queued: bool,
    done: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounters {
    pub tasks: u64,
    pub work: u64,
    pub busy: u64,
    pub scan_work: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub interactive_tasks: u64,
    pub background_tasks: u64,
}

#[derive(Clone, Debug)]
struct NodeSim {
    flavor: Flavor,
    capacity: u64,
    up: bool,
    interactive: VecDeque<TaskId>,
    background: VecDeque<TaskId>,
    backlog: VecDeque<TaskId>,
    running: Option<(TaskId, u64)>,
    /// Work units queued or running.
    load: u64,
    counters: NodeCounters,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Ready(TaskId),
    Finish(NodeId, TaskId),
}

/// What the caller must react to.
#[derive(Clone, Debug)]
pub enum SimEvent<P> {
    Completed { task: TaskId, payload: P, node: NodeId, end: u64 },
    Heartbeat { tick: u64 },
}

#[derive(Clone, Debug)]
pub struct SchedulerConfig {
    pub aging_threshold: u64,
    pub background_slots: usize,
    pub heartbeat_period: u64,
}

#[derive(Clone, Debug)]
pub struct Simulator<P: Job> {
    config: SchedulerConfig,
    now: u64,
    seq: u64,
    events: BinaryHeap<Reverse<(u64, u64, EventKind)>>,
    tasks: BTreeMap<TaskId, Task<P>>,
    next_task: TaskId,
    nodes: BTreeMap<NodeId, NodeSim>,
    trace: Vec<TaskRecord>,
    last_heartbeat: u64,
    outstanding: usize,
    gamma: f64,
    scan_kinds: &'static [&'static str],
    cancelled: Vec<P>,
}

fn transfer_ticks(bytes: usize, gamma: f64) -> u64 {
    if bytes == 0 {
        0
    } else {
        (gamma * bytes as f64).ceil() as u64
    }
}

impl<P: Job> Simulator<P> {
    pub fn new(config: SchedulerConfig, gamma: f64, scan_kinds: &'static [&'static str]) -> Self {
        Simulator {
            config,
            now: 0,
            seq: 0,
            events: BinaryHeap::new(),
            tasks: BTreeMap::new(),
            next_task: 1,
            nodes: BTreeMap::new(),
            trace: Vec::new(),
            last_heartbeat: 0,
            outstanding: 0,
            gamma,
            scan_kinds,
            cancelled: Vec::new(),
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn add_node(&mut self, node: NodeId, flavor: Flavor, capacity: u64) {
        self.nodes.insert(
            node,
            NodeSim {
                flavor,
                capacity,
                up: true,
                interactive: VecDeque::new(),
                background: VecDeque::new(),
                backlog: VecDeque::new(),
                running: None,
                load: 0,
                counters: NodeCounters::default(),
            },
        );
    }

    pub fn load(&self, node: NodeId) -> u64 {
        self.nodes.get(&node).map_or(u64::MAX, |n| n.load)
    }

    pub fn counters(&self) -> impl Iterator<Item = (NodeId, Flavor, &NodeCounters)> {
        self.nodes.iter().map(|(id, n)| (*id, n.flavor, &n.counters))
    }

    pub fn trace(&self) -> &[TaskRecord] {
        &self.trace
    }

    /// Tasks submitted and not yet finished or cancelled.
    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    pub fn pending(&self) -> impl Iterator<Item = (TaskId, &P, NodeId)> {
        self.tasks.iter().filter(|(_, t)| !t.done).map(|(id, t)| (*id, &t.spec.payload, t.spec.node))
    }

    fn push(&mut self, at: u64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, kind)));
    }

    pub fn submit(&mut self, spec: TaskSpec<P>) -> TaskId {
        let id = self.next_task;
        self.next_task += 1;
        let mut waiting = 0;
        let mut ready_at = self.now;
        let mut bytes_in = 0;
        for &(dep, bytes) in &spec.deps {
            let Some(d) = self.tasks.get_mut(&dep) else { continue };
            if d.done {
                // Already finished: only the transfer remains.
                if d.spec.node != spec.node {
                    ready_at = ready_at.max(self.now + transfer_ticks(bytes, self.gamma));
                    bytes_in += bytes;
                }
            } else {
                d.dependents.push((id, bytes));
                waiting += 1;
            }
        }
        if let Some(n) = self.nodes.get_mut(&spec.node) {
            n.load += spec.work;
        }
        self.tasks.insert(
            id,
            Task {
                spec,
                submitted: self.now,
                ready_at,
                admitted: 0,
                waiting,
                bytes_in,
                dependents: Vec::new(),
                dispatch: (0, 0),
                queued: false,
                done: false,
            },
        );
        self.outstanding += 1;
        if waiting == 0 {
            self.push(ready_at, EventKind::Ready(id));
        }
        id
    }

    /// Processes events up to and including `limit`, returning the next one
    /// the caller must handle. Returns `None` once nothing remains at or
    /// before `limit`; the clock then stands at `limit`.
    pub fn step(&mut self, limit: u64) -> Option<SimEvent<P>> {
        loop {
            let next_beat = self.last_heartbeat + self.config.heartbeat_period;
            let next_event = self.events.peek().map(|Reverse((t, _, _))| *t);
            if next_beat <= limit && next_event.is_none_or(|t| t > next_beat) {
                self.now = next_beat;
                self.last_heartbeat = next_beat;
                return Some(SimEvent::Heartbeat { tick: next_beat });
            }
            match next_event {
                Some(t) if t <= limit => {
                    let Reverse((t, _, kind)) = self.events.pop().expect("peeked");
                    self.now = t;
                    if let Some(done) = self.handle(kind) {
                        return Some(done);
                    }
                }
                _ => {
                    self.now = self.now.max(limit);
                    return None;
                }
            }
        }
    }

    /// Time of the next event or heartbeat, whichever is earlier.
    pub fn next_time(&self) -> u64 {
        let beat = self.last_heartbeat + self.config.heartbeat_period;
        self.events.peek().map_or(beat, |Reverse((t, _, _))| (*t).min(beat))
    }

    fn handle(&mut self, kind: EventKind) -> Option<SimEvent<P>> {
        match kind {
            EventKind::Ready(id) => {
                let task = self.tasks.get_mut(&id)?;
                if task.done || task.queued {
                    return None;
                }
                task.queued = true;
                let node = task.spec.node;
                let priority = task.spec.priority;
                let n = self.nodes.get_mut(&node)?;
                match priority {
                    Priority::Interactive => {
                        n.interactive.push_back(id);
                        self.tasks.get_mut(&id).expect("exists").admitted = self.now;
                    }
                    Priority::Background => n.backlog.push_back(id),
                }
                self.admit(node);
                self.dispatch(node);
                None
            }
            EventKind::Finish(node, id) => {
                let n = self.nodes.get_mut(&node).expect("known node");
                if n.running.map(|(r, _)| r) != Some(id) {
                    // Aborted by a failure before finishing.
                    return None;
                }
                let (_, start) = n.running.take().expect("running");
                let task = self.tasks.get_mut(&id).expect("exists");
                task.done = true;
                self.outstanding -= 1;
                let work = task.spec.work;
                n.load = n.load.saturating_sub(work);
                n.counters.tasks += 1;
                n.counters.work += work;
                n.counters.busy += self.now - start;
                n.counters.bytes_in += task.bytes_in as u64;
                if self.scan_kinds.contains(&task.spec.payload.kind()) {
                    n.counters.scan_work += work;
                }
                match task.spec.priority {
                    Priority::Interactive => n.counters.interactive_tasks += 1,
                    Priority::Background => n.counters.background_tasks += 1,
                }
                let flavor = n.flavor;
                let record = record_of(id, task, node, flavor, start, self.now, Outcome::Done);
                self.trace.push(record);
                let payload = task.spec.payload.clone();
                let dependents = std::mem::take(&mut task.dependents);
                for (dep, bytes) in dependents {
                    let Some(d) = self.tasks.get_mut(&dep) else { continue };
                    if d.done {
                        continue;
                    }
                    let ready = if d.spec.node != node {
                        d.bytes_in += bytes;
                        if let Some(src) = self.nodes.get_mut(&node) {
                            src.counters.bytes_out += bytes as u64;
                        }
                        self.now + transfer_ticks(bytes, self.gamma)
                    } else {
                        self.now
                    };
                    let d = self.tasks.get_mut(&dep).expect("exists");
                    d.ready_at = d.ready_at.max(ready);
                    d.waiting -= 1;
                    if d.waiting == 0 {
                        let at = d.ready_at;
                        self.push(at, EventKind::Ready(dep));
                    }
                }
                self.admit(node);
                self.dispatch(node);
                Some(SimEvent::Completed { task: id, payload, node, end: self.now })
            }
        }
    }

    fn admit(&mut self, node: NodeId) {
        let slots = self.config.background_slots;
        let Some(n) = self.nodes.get_mut(&node) else { return };
        while n.background.len() < slots {
            let Some(id) = n.backlog.pop_front() else { break };
            n.background.push_back(id);
            if let Some(t) = self.tasks.get_mut(&id) {
                t.admitted = self.now;
            }
        }
    }

    fn aged(&self, id: TaskId) -> bool {
        self.tasks.get(&id).is_some_and(|t| self.now - t.admitted > self.config.aging_threshold)
    }

    fn dispatch(&mut self, node: NodeId) {
        let Some(n) = self.nodes.get(&node) else { return };
        if !n.up || n.running.is_some() {
            return;
        }
        let aged = n.background.iter().filter(|id| self.aged(**id)).count();
        let interactive = n.interactive.len();
        let take_background = match n.background.front() {
            Some(front) if self.aged(*front) => true,
            Some(_) => interactive == 0,
            None => false,
        };
        let n = self.nodes.get_mut(&node).expect("checked");
        let id = if take_background { n.background.pop_front() } else { n.interactive.pop_front() };
        let Some(id) = id else { return };
        let task = self.tasks.get_mut(&id).expect("queued tasks exist");
        task.dispatch = (interactive, aged);
        task.queued = false;
        let end = self.now + duration(task.spec.work, n.capacity);
        n.running = Some((id, self.now));
        self.push(end, EventKind::Finish(node, id));
        self.admit(node);
    }

    /// Stops a node. Its running task is aborted and, with everything
    /// queued there, stays assigned to it until [`Simulator::relocate`].
    pub fn fail_node(&mut self, node: NodeId) {
        let now = self.now;
        let Some(n) = self.nodes.get_mut(&node) else { return };
        n.up = false;
        if let Some((id, start)) = n.running.take() {
            let flavor = n.flavor;
            let task = self.tasks.get_mut(&id).expect("running task exists");
            self.trace.push(record_of(id, task, node, flavor, start, now, Outcome::Aborted));
            task.queued = true;
            match task.spec.priority {
                Priority::Interactive => n.interactive.push_front(id),
                Priority::Background => n.background.push_front(id),
            }
        }
    }

    /// Moves every unfinished task assigned to `node` to the node `place`
    /// picks, or cancels it when `place` returns `None`. Task identity,
    /// submission time and dependencies are kept.
    pub fn relocate(&mut self, node: NodeId, mut place: impl FnMut(TaskId, &P) -> Option<NodeId>) {
        let ids: Vec<TaskId> =
            self.tasks.iter().filter(|(_, t)| !t.done && t.spec.node == node).map(|(id, _)| *id).collect();
        if let Some(n) = self.nodes.get_mut(&node) {
            n.interactive.clear();
            n.background.clear();
            n.backlog.clear();
            n.load = 0;
        }
        for id in ids {
            let task = self.tasks.get_mut(&id).expect("exists");
            match place(id, &task.spec.payload) {
                Some(target) if self.nodes.get(&target).is_some_and(|n| n.up) => {
                    task.spec.node = target;
                    let work = task.spec.work;
                    self.nodes.get_mut(&target).expect("checked").load += work;
                    // Queued tasks re-enter at the new node now; others
                    // still have a pending readiness event or dependency.
                    if task.queued {
                        task.queued = false;
                        self.push(self.now, EventKind::Ready(id));
                    }
                }
                _ => self.cancel(id, node),
            }
        }
    }

    /// Marks a task placed on a different flavor than its home.
    pub fn set_fallback(&mut self, id: TaskId) {
        if let Some(t) = self.tasks.get_mut(&id) {
            t.spec.fallback = true;
        }
    }

    fn cancel(&mut self, id: TaskId, node: NodeId) {
        let now = self.now;
        let flavor = self.nodes.get(&node).map_or(Flavor::Data, |n| n.flavor);
        let task = self.tasks.get_mut(&id).expect("exists");
        task.done = true;
        self.outstanding -= 1;
        self.trace.push(record_of(id, task, node, flavor, now, now, Outcome::Cancelled));
        self.cancelled.push(task.spec.payload.clone());
        let dependents = std::mem::take(&mut task.dependents);
        for (dep, _) in dependents {
            let Some(d) = self.tasks.get(&dep) else { continue };
            if !d.done {
                let dep_node = d.spec.node;
                self.cancel(dep, dep_node);
            }
        }
    }

    /// Payloads of tasks cancelled since the last call, in cancel order.
    pub fn take_cancelled(&mut self) -> Vec<P> {
        std::mem::take(&mut self.cancelled)
    }

    pub fn is_up(&self, node: NodeId) -> bool {
        self.nodes.get(&node).is_some_and(|n| n.up)
    }

    pub fn flavor_of(&self, node: NodeId) -> Option<Flavor> {
        self.nodes.get(&node).map(|n| n.flavor)
    }
}

fn record_of<P: Job>(
    id: TaskId,
    task: &Task<P>,
    node: NodeId,
    flavor: Flavor,
    start: u64,
    end: u64,
    outcome: Outcome,
) -> TaskRecord {
    TaskRecord {
        task: id,
        kind: task.spec.payload.kind(),
        detail: task.spec.payload.detail(),
        query: task.spec.query,
        priority: task.spec.priority,
        node,
        flavor,
        fallback: task.spec.fallback,
        submitted: task.submitted,
        admitted: task.admitted,
        start,
        end,
        work: task.spec.work,
        bytes_in: task.bytes_in,
        queued_interactive: task.dispatch.0,
        queued_aged: task.dispatch.1,
        outcome,
    }
}
