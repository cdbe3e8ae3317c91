use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::TrainerConfig;
use crate::trainer::log::{EpisodeRecord, TaskKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCommand {
    Train,
    Test,
    Undo,
    Done,
}

impl TaskCommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
            Self::Undo => "undo",
            Self::Done => "done",
        }
    }
}

/// What the trainer reports back after each task.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskOutcome {
    Episode(EpisodeRecord),
    Undone { record: EpisodeRecord },
    Rejected { command: TaskCommand, reason: String },
}

/// Trainer state visible to the driver when choosing a task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriverContext {
    pub can_undo: bool,
    pub train_episodes: u64,
    pub episodes: u64,
}

/// The party that issues tasks, confirms resets and can end episodes.
pub trait SafetyDriver {
    fn next_task(&mut self, ctx: &DriverContext) -> TaskCommand;

    /// Blocks until the vehicle is back at the start of the route.
    fn confirm_reset(&mut self) {}

    /// Polled once per policy step of a running episode; `true` takes control.
    fn intervene(&mut self, _step: usize) -> bool {
        false
    }

    fn task_finished(&mut self, _outcome: &TaskOutcome) {}
}

/// Automatic stand-in for the safety driver. Episodes end on the simulator's
/// own termination; tasks follow the configured schedule.
#[derive(Clone, Debug)]
pub struct AutoOracle {
    exploration: u64,
    train_budget: u64,
    test_every: u64,
    stop_at: Option<f64>,
    patience: Option<u64>,
    trains: u64,
    test_due: bool,
    best_test: f64,
    stale_tests: u64,
    stop: bool,
}

impl AutoOracle {
    pub fn new(cfg: &TrainerConfig) -> Self {
        Self {
            exploration: cfg.exploration_episodes,
            train_budget: cfg.train_episodes,
            test_every: cfg.test_every,
            stop_at: cfg.stop_at_test_m,
            patience: cfg.auto_stop_patience,
            trains: 0,
            test_due: false,
            best_test: f64::NEG_INFINITY,
            stale_tests: 0,
            stop: false,
        }
    }
}

impl SafetyDriver for AutoOracle {
    fn next_task(&mut self, _ctx: &DriverContext) -> TaskCommand {
        if self.stop {
            TaskCommand::Done
        } else if self.test_due {
            TaskCommand::Test
        } else if self.trains < self.train_budget {
            TaskCommand::Train
        } else {
            TaskCommand::Done
        }
    }

    fn task_finished(&mut self, outcome: &TaskOutcome) {
        let TaskOutcome::Episode(r) = outcome else { return };
        match r.task {
            TaskKind::Train => {
                self.trains += 1;
                let learned = self.trains.saturating_sub(self.exploration);
                self.test_due = learned > 0 && learned % self.test_every == 0;
            }
            TaskKind::Test => {
                self.test_due = false;
                if r.distance > self.best_test {
                    self.best_test = r.distance;
                    self.stale_tests = 0;
                } else {
                    self.stale_tests += 1;
                }
                if self.stop_at.is_some_and(|m| r.distance >= m) || self.patience.is_some_and(|p| self.stale_tests >= p)
                {
                    self.stop = true;
                }
            }
        }
    }
}

/// Replays a fixed command list, then finishes. Interventions are keyed by
/// the command's position in the list.
#[derive(Clone, Debug, Default)]
pub struct ScriptedDriver {
    commands: Vec<TaskCommand>,
    interventions: HashMap<usize, usize>,
    next: usize,
    current: usize,
}

impl ScriptedDriver {
    pub fn new(commands: Vec<TaskCommand>) -> Self {
        Self { commands, ..Self::default() }
    }

    /// Takes control at `step` of the episode run by command `command_index`.
    pub fn intervene_at(mut self, command_index: usize, step: usize) -> Self {
        self.interventions.insert(command_index, step);
        self
    }
}

impl SafetyDriver for ScriptedDriver {
    fn next_task(&mut self, _ctx: &DriverContext) -> TaskCommand {
        let cmd = self.commands.get(self.next).copied().unwrap_or(TaskCommand::Done);
        self.current = self.next;
        self.next += 1;
        cmd
    }

    fn intervene(&mut self, step: usize) -> bool {
        self.interventions.get(&self.current) == Some(&step)
    }
}

impl<D: SafetyDriver + ?Sized> SafetyDriver for Box<D> {
    fn next_task(&mut self, ctx: &DriverContext) -> TaskCommand {
        (**self).next_task(ctx)
    }

    fn confirm_reset(&mut self) {
        (**self).confirm_reset();
    }

    fn intervene(&mut self, step: usize) -> bool {
        (**self).intervene(step)
    }

    fn task_finished(&mut self, outcome: &TaskOutcome) {
        (**self).task_finished(outcome);
    }
}
