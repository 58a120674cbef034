//! The simulated cluster: topology, cost model and the event-driven
//! scheduler.

pub mod cost;
pub mod sim;
pub mod topology;

pub use cost::{duration, CostModel};
pub use sim::{Job, Outcome, Priority, SchedulerConfig, SimEvent, Simulator, TaskId, TaskRecord, TaskSpec};
pub use topology::{ClusterConfig, ConsistencyGroup, NodeDescriptor, NodeState, Topology};
