use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{check_id, ModelError};

/// One task of the L1-L4 hierarchy. Dependencies must sit at strictly lower
/// levels; the graph-level check lives in `harness::dag`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaskRepr")]
pub struct TaskNode {
    pub task_id: String,
    pub item_id: String,
    pub level: u8,
    #[serde(default)]
    pub dependencies: BTreeSet<String>,
    /// Locator of the best known optimized kernel for this task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_kernel: Option<String>,
}

#[derive(Deserialize)]
struct TaskRepr {
    task_id: String,
    item_id: String,
    level: u8,
    #[serde(default)]
    dependencies: BTreeSet<String>,
    #[serde(default)]
    best_kernel: Option<String>,
}

impl TryFrom<TaskRepr> for TaskNode {
    type Error = ModelError;

    fn try_from(r: TaskRepr) -> Result<Self, ModelError> {
        let mut node = TaskNode::new(r.task_id, r.item_id, r.level, r.dependencies)?;
        node.best_kernel = r.best_kernel;
        Ok(node)
    }
}

impl TaskNode {
    pub fn new(
        task_id: impl Into<String>,
        item_id: impl Into<String>,
        level: u8,
        dependencies: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, ModelError> {
        let task_id = task_id.into();
        let item_id = item_id.into();
        check_id(&task_id)?;
        check_id(&item_id)?;
        if !(1..=4).contains(&level) {
            return Err(ModelError::InvalidLevel(level));
        }
        let dependencies: BTreeSet<String> = dependencies.into_iter().map(Into::into).collect();
        for d in &dependencies {
            check_id(d)?;
        }
        Ok(TaskNode { task_id, item_id, level, dependencies, best_kernel: None })
    }

    pub fn with_best_kernel(mut self, locator: impl Into<String>) -> Self {
        self.best_kernel = Some(locator.into());
        self
    }
}
