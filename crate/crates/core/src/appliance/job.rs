//! Simulator payloads for every kind of work the appliance schedules.

use crate::discovery::JoinIndexEntry;
use crate::fabric::Job as SimJob;
use crate::model::{DocId, LogicalTime, VersionId};
use crate::query::{Flavor, OpKind};
use crate::ring::PartitionId;
use crate::stewardship::Repair;
use crate::store::DocDraft;

/// Task kinds whose work counts as scanning.
pub const SCAN_KINDS: &[&str] = &["index_scan", "fetch"];

#[derive(Clone, Debug)]
pub enum Job {
    /// Version assignment for a committed write, on the group leader.
    Commit {
        doc: DocId,
        version: VersionId,
        partition: PartitionId,
    },
    Index {
        doc: DocId,
        version: VersionId,
        partition: PartitionId,
        persisted_at: LogicalTime,
    },
    /// An intra annotator over one version; the result is computed when the
    /// task is created since versions are immutable.
    Intra {
        doc: DocId,
        version: VersionId,
        partition: PartitionId,
        annotator: usize,
        draft: Option<Box<DocDraft>>,
    },
    PersistAnnotation {
        target: (DocId, VersionId),
        partition: PartitionId,
        annotator: usize,
        draft: Box<DocDraft>,
    },
    /// An inter annotator over the entity stream of `doc`, read at completion.
    Inter {
        doc: DocId,
        annotator: usize,
    },
    PersistJoins {
        doc: DocId,
        partition: PartitionId,
        entries: Vec<JoinIndexEntry>,
    },
    /// One operator instance of a query plan.
    Op {
        query: u64,
        node: usize,
        op: OpKind,
        flavor: Flavor,
        partition: Option<PartitionId>,
    },
    Analyze {
        query: u64,
    },
    Repair(Repair),
}

/// Bookkeeping classes used by quiesce barriers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Commit,
    Index,
    Discovery,
    Query,
    Repair,
}

impl Stage {
    pub const COUNT: usize = 5;
}

impl Job {
    pub fn stage(&self) -> Stage {
        match self {
            Job::Commit { .. } => Stage::Commit,
            Job::Index { .. } => Stage::Index,
            Job::Intra { .. } | Job::PersistAnnotation { .. } | Job::Inter { .. } | Job::PersistJoins { .. } => {
                Stage::Discovery
            }
            Job::Op { .. } | Job::Analyze { .. } => Stage::Query,
            Job::Repair(_) => Stage::Repair,
        }
    }
}

impl SimJob for Job {
    fn kind(&self) -> &'static str {
        match self {
            Job::Commit { .. } => "commit",
            Job::Index { .. } => "index",
            Job::Intra { .. } => "run_intra",
            Job::PersistAnnotation { .. } => "persist_annotation",
            Job::Inter { .. } => "run_inter",
            Job::PersistJoins { .. } => "persist_joins",
            Job::Op { op, .. } => op.name(),
            Job::Analyze { .. } => "analyze",
            Job::Repair(Repair::Copy { .. }) => "copy",
            Job::Repair(Repair::Rebuild { .. }) => "rebuild",
            Job::Repair(Repair::RebuildIndex { .. }) => "rebuild_index",
            Job::Repair(Repair::Trim { .. }) => "trim",
        }
    }

    fn detail(&self) -> String {
        match self {
            Job::Commit { doc, version, partition } => format!("{doc} v{version} {partition}"),
            Job::Index { doc, version, partition, .. } => format!("{doc} v{version} {partition}"),
            Job::Intra { doc, version, annotator, .. } => format!("{doc} v{version} a{annotator}"),
            Job::PersistAnnotation { target: (doc, version), annotator, .. } => {
                format!("{doc} v{version} a{annotator}")
            }
            Job::Inter { doc, annotator } => format!("{doc} a{annotator}"),
            Job::PersistJoins { doc, entries, .. } => format!("{doc} {} entries", entries.len()),
            Job::Op { node, .. } => format!("#{node}"),
            Job::Analyze { .. } => String::new(),
            Job::Repair(r) => r.to_string(),
        }
    }
}
