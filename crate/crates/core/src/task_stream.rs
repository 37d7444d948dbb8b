//! Per-node class-incremental task schedules with asynchronous start offsets.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Shard};
use crate::seed::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub node_id: usize,
    /// Disjoint class groups in the order this node visits them.
    pub tasks: Vec<Vec<usize>>,
    pub rounds_per_task: usize,
    pub offset_rounds: usize,
}

impl TaskSchedule {
    /// Task active during the 0-based round `round`: task 0 before the offset, then one
    /// task every `rounds_per_task` rounds, the last task staying active.
    pub fn task_index(&self, round: usize) -> usize {
        let elapsed = round.saturating_sub(self.offset_rounds);
        (elapsed / self.rounds_per_task).min(self.tasks.len() - 1)
    }

    pub fn active_classes(&self, round: usize) -> &[usize] {
        &self.tasks[self.task_index(round)]
    }
}

/// Training rows visible to a node in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveView {
    pub node_id: usize,
    pub round: usize,
    pub task_index: usize,
    pub train: Vec<usize>,
}

pub fn make_schedules(
    num_classes: usize,
    num_tasks: usize,
    num_nodes: usize,
    rounds_per_task: usize,
    max_offset: usize,
    seed: u64,
) -> Result<Vec<TaskSchedule>> {
    if num_tasks == 0 || !num_classes.is_multiple_of(num_tasks) {
        return Err(Error::InvalidSchedule(format!(
            "{num_classes} classes cannot be split into {num_tasks} equal tasks"
        )));
    }
    if rounds_per_task == 0 {
        return Err(Error::InvalidSchedule(
            "rounds_per_task must be positive".into(),
        ));
    }
    let width = num_classes / num_tasks;
    let groups: Vec<Vec<usize>> = (0..num_tasks)
        .map(|k| (k * width..(k + 1) * width).collect())
        .collect();
    Ok((0..num_nodes)
        .map(|node| {
            let mut rng = seed::stream_rng(seed, Stream::Tasks, &[node as u64]);
            let mut order: Vec<usize> = (0..num_tasks).collect();
            order.shuffle(&mut rng);
            let offset_rounds = rng.gen_range(0..=max_offset);
            TaskSchedule {
                node_id: node,
                tasks: order.into_iter().map(|k| groups[k].clone()).collect(),
                rounds_per_task,
                offset_rounds,
            }
        })
        .collect())
}

/// The node's training rows restricted to the classes of its active task.
pub fn active_view(
    schedule: &TaskSchedule,
    dataset: &Dataset,
    shard: &Shard,
    round: usize,
) -> ActiveView {
    let task_index = schedule.task_index(round);
    let classes = &schedule.tasks[task_index];
    let mut active = vec![false; dataset.num_classes()];
    for &c in classes {
        if c < active.len() {
            active[c] = true;
        }
    }
    let labels = dataset.labels();
    ActiveView {
        node_id: schedule.node_id,
        round,
        task_index,
        train: shard
            .train
            .iter()
            .copied()
            .filter(|&i| active[labels[i]])
            .collect(),
    }
}
