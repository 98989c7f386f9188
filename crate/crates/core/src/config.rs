//! TOML loading for devices, task sets, and tuning budgets.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::oracle::DeviceSpec;
use crate::space::TaskSpec;
use crate::tuner::TuneBudget;

/// The workload shipped in `configs/tasks.toml`.
pub const DEFAULT_TASKS_TOML: &str = include_str!("../../../configs/tasks.toml");

#[derive(Deserialize)]
struct TaskFile {
    tasks: Vec<TaskSpec>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn parse_tasks(text: &str) -> Result<Vec<TaskSpec>> {
    let file: TaskFile = toml::from_str(text).map_err(|e| Error::Config(format!("task file: {e}")))?;
    if file.tasks.is_empty() {
        return Err(Error::Config("task file lists no tasks".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for t in &file.tasks {
        t.validate()?;
        if !seen.insert(t.id.as_str()) {
            return Err(Error::InvalidTask(format!("duplicate task id `{}`", t.id)));
        }
    }
    Ok(file.tasks)
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>> {
    parse_tasks(&read(path)?)
}

pub fn default_tasks() -> Vec<TaskSpec> {
    parse_tasks(DEFAULT_TASKS_TOML).expect("shipped task file is valid")
}

pub fn parse_device(text: &str) -> Result<DeviceSpec> {
    let d: DeviceSpec = toml::from_str(text).map_err(|e| Error::Config(format!("device file: {e}")))?;
    d.validate()?;
    Ok(d)
}

pub fn load_device(path: &Path) -> Result<DeviceSpec> {
    parse_device(&read(path)?)
}

/// Missing keys fall back to the defaults.
pub fn parse_budget(text: &str) -> Result<TuneBudget> {
    let b: TuneBudget = toml::from_str(text).map_err(|e| Error::Config(format!("budget file: {e}")))?;
    b.validate()?;
    Ok(b)
}

pub fn load_budget(path: &Path) -> Result<TuneBudget> {
    parse_budget(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_files_parse() {
        let tasks = default_tasks();
        assert_eq!(tasks.len(), 8);
        assert!(tasks.iter().all(|t| t.knobs.len() == 5));
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        assert_eq!(load_device(&dir.join("server.toml")).unwrap(), DeviceSpec::server());
        assert_eq!(load_device(&dir.join("embedded.toml")).unwrap(), DeviceSpec::embedded());
    }

    #[test]
    fn partial_budget_uses_defaults() {
        let b = parse_budget("trials_per_task = 32\n[controller]\ncv_threshold = 0.1\n").unwrap();
        assert_eq!(b.trials_per_task, 32);
        assert_eq!(b.controller.cv_threshold, 0.1);
        assert_eq!(b.controller.num_batches, 5);
        assert_eq!(b.hyper.learning_rate, crate::tuner::ONLINE_LEARNING_RATE);
        let b = parse_budget("[hyper]\nweight_decay = 0.5\n").unwrap();
        assert_eq!(b.hyper.weight_decay, 0.5);
        assert_eq!(b.hyper.learning_rate, crate::tuner::ONLINE_LEARNING_RATE);
    }

    #[test]
    fn bad_files_rejected() {
        assert!(parse_tasks("tasks = []").is_err());
        let dup = "[[tasks]]\nid='a'\nwork_gflops=1.0\nbytes_per_unit=1.0\nideal_log2_tiles=1.0\nideal_log2_unroll=1.0\n";
        assert!(matches!(parse_tasks(&dup.repeat(2)), Err(Error::InvalidTask(_))));
        assert!(parse_device("id = 'x'").is_err());
        assert!(parse_budget("trials_per_task = 2").is_err());
    }
}
