use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use impliance::fabric::{duration, Job, Outcome, Priority, SchedulerConfig, SimEvent, Simulator, TaskRecord, TaskSpec};
use impliance::query::plan::Flavor;
use impliance::ring::NodeId;

const GAMMA: f64 = 0.05;

#[derive(Clone, Debug)]
struct Work(&'static str);

impl Job for Work {
    fn kind(&self) -> &'static str {
        self.0
    }
    fn detail(&self) -> String {
        String::new()
    }
}

#[derive(Clone, Debug)]
struct Arrival {
    at: u64,
    background: bool,
    node: u64,
    work: u64,
    deps: Vec<(usize, usize)>,
}

fn arrivals() -> impl Strategy<Value = Vec<Arrival>> {
    proptest::collection::vec(
        (
            0u64..40,
            proptest::bool::weighted(0.4),
            1u64..4,
            1u64..30,
            proptest::collection::vec((any::<usize>(), 0usize..400), 0..3),
        ),
        1..60,
    )
    .prop_map(|raw| {
        let mut at = 0;
        raw.into_iter()
            .map(|(gap, background, node, work, deps)| {
                at += gap;
                Arrival { at, background, node, work, deps }
            })
            .collect()
    })
}

/// Dependencies of each task as (task, bytes shipped).
type Deps = BTreeMap<u64, Vec<(u64, usize)>>;

fn run(arrivals: &[Arrival], threshold: u64, capacity: u64) -> (Vec<TaskRecord>, Deps) {
    let mut sim = Simulator::new(
        SchedulerConfig { aging_threshold: threshold, background_slots: 1, heartbeat_period: 1 << 40 },
        GAMMA,
        &["scan"],
    );
    for n in 1..4 {
        sim.add_node(NodeId(n), Flavor::Data, capacity);
    }
    let mut ids = Vec::new();
    let mut deps = BTreeMap::new();
    let mut completed = BTreeSet::new();
    for a in arrivals {
        while let Some(e) = sim.step(a.at) {
            if let SimEvent::Completed { task, .. } = e {
                assert!(completed.insert(task), "task {task} completed twice");
            }
        }
        let on: Vec<(u64, usize)> =
            if ids.is_empty() { vec![] } else { a.deps.iter().map(|(i, b)| (ids[i % ids.len()], *b)).collect() };
        let id = sim.submit(TaskSpec {
            payload: Work(if a.background { "scan" } else { "probe" }),
            priority: if a.background { Priority::Background } else { Priority::Interactive },
            node: NodeId(a.node),
            work: a.work,
            deps: on.clone(),
            fallback: false,
            query: None,
        });
        deps.insert(id, on);
        ids.push(id);
    }
    while sim.outstanding() > 0 {
        match sim.step(u64::MAX / 2) {
            Some(SimEvent::Completed { task, .. }) => assert!(completed.insert(task), "task {task} completed twice"),
            Some(SimEvent::Heartbeat { .. }) => {}
            None => break,
        }
    }
    assert_eq!(sim.outstanding(), 0);
    assert_eq!(completed.len(), arrivals.len());
    (sim.trace().to_vec(), deps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_task_runs_once_without_overlap(tasks in arrivals(), threshold in 0u64..50, capacity in 1u64..4) {
        let (trace, _) = run(&tasks, threshold, capacity);
        prop_assert_eq!(trace.len(), tasks.len());
        prop_assert!(trace.iter().all(|r| r.outcome == Outcome::Done));
        let mut by_node: BTreeMap<NodeId, Vec<&TaskRecord>> = BTreeMap::new();
        for r in &trace {
            prop_assert_eq!(r.end - r.start, duration(r.work, capacity));
            prop_assert!(r.submitted <= r.admitted && r.admitted <= r.start);
            by_node.entry(r.node).or_default().push(r);
        }
        for runs in by_node.values_mut() {
            runs.sort_by_key(|r| r.start);
            for pair in runs.windows(2) {
                prop_assert!(pair[0].end <= pair[1].start, "{:?} overlaps {:?}", pair[0].task, pair[1].task);
            }
        }
    }

    #[test]
    fn dependencies_finish_and_ship_before_the_dependent_starts(tasks in arrivals()) {
        let (trace, deps) = run(&tasks, 20, 1);
        let by_id: BTreeMap<u64, &TaskRecord> = trace.iter().map(|r| (r.task, r)).collect();
        for r in &trace {
            let mut shipped = 0;
            for (dep, bytes) in &deps[&r.task] {
                let d = by_id[dep];
                let transfer = if d.node == r.node || *bytes == 0 { 0 } else { (GAMMA * *bytes as f64).ceil() as u64 };
                prop_assert!(d.end + transfer <= r.start);
                if d.node != r.node {
                    shipped += bytes;
                }
            }
            prop_assert_eq!(r.bytes_in, shipped);
        }
    }

    #[test]
    fn dispatch_respects_priority_and_aging(tasks in arrivals(), threshold in 0u64..50) {
        let (trace, _) = run(&tasks, threshold, 1);
        let longest = trace.iter().map(|r| r.end - r.start).max().unwrap_or(0);
        for r in &trace {
            match r.priority {
                Priority::Interactive => prop_assert_eq!(r.queued_aged, 0, "interactive {} ran past aged work", r.task),
                Priority::Background => {
                    let waited = r.start - r.admitted;
                    if r.queued_interactive > 0 {
                        prop_assert!(waited > threshold, "background {} jumped the interactive queue", r.task);
                    }
                    prop_assert!(waited <= threshold + longest, "background {} waited {}", r.task, waited);
                }
            }
        }
    }

    #[test]
    fn equal_inputs_give_equal_traces(tasks in arrivals(), threshold in 0u64..50) {
        let (a, _) = run(&tasks, threshold, 2);
        let (b, _) = run(&tasks, threshold, 2);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
