//! The L1-L4 task graph and the lower-level kernel reuse rule.

use std::collections::{BTreeMap, BTreeSet};

use super::HarnessError;
use crate::model::{Registry, TaskNode};

/// A validated task DAG. Dependencies always sit at strictly lower levels,
/// so ordering by `(level, task_id)` is a topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    nodes: BTreeMap<String, TaskNode>,
    order: Vec<String>,
}

pub fn register_task_graph(nodes: impl IntoIterator<Item = TaskNode>) -> Result<TaskGraph, HarnessError> {
    let mut map = BTreeMap::new();
    for node in nodes {
        if map.contains_key(&node.task_id) {
            return Err(HarnessError::DuplicateTask(node.task_id));
        }
        map.insert(node.task_id.clone(), node);
    }
    for node in map.values() {
        for dep in &node.dependencies {
            let Some(target) = map.get(dep) else {
                return Err(HarnessError::DanglingDependency { task: node.task_id.clone(), dependency: dep.clone() });
            };
            if target.level >= node.level {
                return Err(HarnessError::LevelViolation {
                    task: node.task_id.clone(),
                    level: node.level,
                    dependency: dep.clone(),
                    dependency_level: target.level,
                });
            }
        }
    }
    let mut order: Vec<&TaskNode> = map.values().collect();
    order.sort_by(|a, b| (a.level, &a.task_id).cmp(&(b.level, &b.task_id)));
    let order = order.into_iter().map(|n| n.task_id.clone()).collect();
    Ok(TaskGraph { nodes: map, order })
}

impl TaskGraph {
    pub fn topological_order(&self) -> &[String] {
        &self.order
    }

    pub fn node(&self, task_id: &str) -> Option<&TaskNode> {
        self.nodes.get(task_id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TaskNode> {
        self.order.iter().map(|id| &self.nodes[id])
    }

    pub fn task_for_item(&self, item_id: &str) -> Option<&TaskNode> {
        self.nodes().find(|n| n.item_id == item_id)
    }

    pub fn set_best_kernel(&mut self, task_id: &str, locator: impl Into<String>) -> Result<(), HarnessError> {
        let node = self.nodes.get_mut(task_id).ok_or_else(|| HarnessError::UnknownTask(task_id.to_string()))?;
        node.best_kernel = Some(locator.into());
        Ok(())
    }

    pub fn clear_best_kernel(&mut self, task_id: &str) -> Result<(), HarnessError> {
        let node = self.nodes.get_mut(task_id).ok_or_else(|| HarnessError::UnknownTask(task_id.to_string()))?;
        node.best_kernel = None;
        Ok(())
    }

    /// Sub-kernel slot bindings for `task_id`: every transitive dependency is
    /// bound to its best kernel when one is registered, else to its item's
    /// reference runner.
    pub fn resolve_composition(
        &self,
        task_id: &str,
        registry: &Registry,
    ) -> Result<BTreeMap<String, String>, HarnessError> {
        let root = self.nodes.get(task_id).ok_or_else(|| HarnessError::UnknownTask(task_id.to_string()))?;
        let mut bindings = BTreeMap::new();
        let mut pending: Vec<&str> = root.dependencies.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        while let Some(dep) = pending.pop() {
            if !seen.insert(dep) {
                continue;
            }
            let node = &self.nodes[dep];
            let locator = match &node.best_kernel {
                Some(best) => best.clone(),
                None => registry
                    .item(&node.item_id)
                    .map(|i| i.reference_runner.clone())
                    .ok_or_else(|| HarnessError::UnknownItem(node.item_id.clone()))?,
            };
            bindings.insert(node.task_id.clone(), locator);
            pending.extend(node.dependencies.iter().map(String::as_str));
        }
        Ok(bindings)
    }
}
