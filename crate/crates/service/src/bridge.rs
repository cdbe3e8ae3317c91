//! Trainer-side ends of the console link: the outbound message queue, a
//! safety driver fed by console messages, and the telemetry observer.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::Receiver;
use lanerl_core::env::{DoneReason, RoadSpec};
use lanerl_core::trainer::{
    DriverContext, EpisodeRecord, Observer, SafetyDriver, StepTelemetry, TaskCommand, TaskKind, TaskOutcome,
};

use crate::protocol::{ClientMessage, RunState, ServerMessage, TelemetryFrame};

/// Bounded outbound queue. When full, the oldest telemetry frame is dropped;
/// other messages are never dropped.
#[derive(Debug)]
pub struct Outbound {
    capacity: usize,
    queue: Mutex<VecDeque<ServerMessage>>,
    dropped: Mutex<u64>,
}

impl Outbound {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), queue: Mutex::new(VecDeque::new()), dropped: Mutex::new(0) }
    }

    pub fn push(&self, msg: ServerMessage) {
        let mut q = self.queue.lock().unwrap();
        if q.len() >= self.capacity {
            if let Some(i) = q.iter().position(|m| matches!(m, ServerMessage::Telemetry(_))) {
                q.remove(i);
                *self.dropped.lock().unwrap() += 1;
            }
        }
        q.push_back(msg);
    }

    pub fn drain(&self) -> Vec<ServerMessage> {
        self.queue.lock().unwrap().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Telemetry frames discarded so far.
    pub fn dropped(&self) -> u64 {
        *self.dropped.lock().unwrap()
    }
}

/// What the network thread may read about the run.
#[derive(Clone, Debug)]
pub struct View {
    pub state: RunState,
    pub can_undo: bool,
    pub history: Vec<EpisodeRecord>,
}

/// State shared between the trainer and network threads.
#[derive(Debug)]
pub struct Hub {
    pub config_hash: String,
    pub experiment: String,
    pub read_only: bool,
    pub outbound: Outbound,
    view: Mutex<View>,
}

impl Hub {
    pub fn new(config_hash: String, experiment: String, read_only: bool, queue: usize) -> Self {
        Self {
            config_hash,
            experiment,
            read_only,
            outbound: Outbound::new(queue),
            view: Mutex::new(View { state: RunState::Starting, can_undo: false, history: Vec::new() }),
        }
    }

    pub fn view(&self) -> View {
        self.view.lock().unwrap().clone()
    }

    pub fn hello(&self) -> ServerMessage {
        let v = self.view.lock().unwrap();
        ServerMessage::Hello {
            protocol_version: crate::protocol::PROTOCOL_VERSION,
            config_hash: self.config_hash.clone(),
            experiment: self.experiment.clone(),
            read_only: self.read_only,
            state: v.state,
            can_undo: v.can_undo,
        }
    }

    /// Updates the run state and broadcasts it.
    pub fn set_state(&self, state: RunState, can_undo: Option<bool>, message: Option<String>) {
        let mut v = self.view.lock().unwrap();
        v.state = state;
        if let Some(c) = can_undo {
            v.can_undo = c;
        }
        self.outbound.push(ServerMessage::Status { state, can_undo: v.can_undo, message });
    }

    fn record_outcome(&self, outcome: &TaskOutcome) {
        let mut v = self.view.lock().unwrap();
        match outcome {
            TaskOutcome::Episode(r) => {
                v.history.push(r.clone());
                v.can_undo = true;
            }
            TaskOutcome::Undone { record } => {
                if let Some(h) = v.history.iter_mut().rev().find(|h| h.episode_id == record.episode_id) {
                    h.reverted = true;
                }
                v.can_undo = false;
            }
            TaskOutcome::Rejected { .. } => {}
        }
    }
}

/// Safety driver operated from a console: tasks, resets and interventions
/// arrive as [`ClientMessage`]s. A closed channel ends the experiment.
pub struct ConsoleDriver {
    control: Receiver<ClientMessage>,
    queued: VecDeque<TaskCommand>,
}

impl ConsoleDriver {
    pub fn new(control: Receiver<ClientMessage>) -> Self {
        Self { control, queued: VecDeque::new() }
    }
}

impl SafetyDriver for ConsoleDriver {
    fn next_task(&mut self, _ctx: &DriverContext) -> TaskCommand {
        if let Some(t) = self.queued.pop_front() {
            return t;
        }
        loop {
            match self.control.recv() {
                Ok(ClientMessage::SetTask { task, .. }) => return task,
                // Interventions and resets outside an episode are stale.
                Ok(_) => {}
                Err(_) => return TaskCommand::Done,
            }
        }
    }

    fn confirm_reset(&mut self) {
        loop {
            match self.control.recv() {
                Ok(ClientMessage::ResetComplete { .. }) | Err(_) => return,
                Ok(ClientMessage::SetTask { task, .. }) => self.queued.push_back(task),
                Ok(_) => {}
            }
        }
    }

    fn intervene(&mut self, _step: usize) -> bool {
        let mut stop = false;
        while let Ok(msg) = self.control.try_recv() {
            match msg {
                ClientMessage::Intervene { .. } => stop = true,
                ClientMessage::SetTask { task, .. } => self.queued.push_back(task),
                _ => {}
            }
        }
        stop
    }
}

/// Wraps a driver and publishes the waiting states it implies.
pub struct Announced<D> {
    pub inner: D,
    hub: Arc<Hub>,
}

impl<D: SafetyDriver> Announced<D> {
    pub fn new(inner: D, hub: Arc<Hub>) -> Self {
        Self { inner, hub }
    }
}

impl<D: SafetyDriver> SafetyDriver for Announced<D> {
    fn next_task(&mut self, ctx: &DriverContext) -> TaskCommand {
        self.hub.set_state(RunState::AwaitingTask, Some(ctx.can_undo), None);
        let task = self.inner.next_task(ctx);
        if task == TaskCommand::Done {
            self.hub.set_state(RunState::Finished, None, None);
        }
        task
    }

    fn confirm_reset(&mut self) {
        self.hub.set_state(RunState::AwaitingReset, None, None);
        self.inner.confirm_reset();
    }

    fn intervene(&mut self, step: usize) -> bool {
        self.inner.intervene(step)
    }

    fn task_finished(&mut self, outcome: &TaskOutcome) {
        self.inner.task_finished(outcome);
    }
}

/// Publishes roads, telemetry and episode results; optionally paces
/// episodes at the policy rate.
pub struct TelemetryObserver {
    hub: Arc<Hub>,
    thumbnail_px: usize,
    period: Option<Duration>,
    next_tick: Instant,
}

impl TelemetryObserver {
    pub fn new(hub: Arc<Hub>, thumbnail_px: usize, period: Option<Duration>) -> Self {
        Self { hub, thumbnail_px, period, next_tick: Instant::now() }
    }
}

impl Observer for TelemetryObserver {
    fn episode_started(&mut self, episode_id: u64, task: TaskKind, road: &Arc<RoadSpec>) {
        self.hub.outbound.push(ServerMessage::Road {
            episode_id,
            task,
            centerline: road.centerline.clone(),
            lane_half_width: road.lane_half_width,
            route_length: road.route_length,
        });
        self.hub.set_state(RunState::Running, None, None);
        self.next_tick = Instant::now();
    }

    fn step(&mut self, t: &StepTelemetry) {
        self.hub.outbound.push(ServerMessage::Telemetry(TelemetryFrame::from_step(t, self.thumbnail_px)));
        if let Some(p) = self.period {
            self.next_tick += p;
            let now = Instant::now();
            if self.next_tick > now {
                std::thread::sleep(self.next_tick - now);
            } else {
                self.next_tick = now;
            }
        }
    }

    fn episode_ended(&mut self, episode_id: u64, done_reason: DoneReason, distance: f64) {
        self.hub.outbound.push(ServerMessage::EpisodeEnded { episode_id, done_reason, distance });
        self.hub.set_state(RunState::Optimizing, None, None);
    }

    fn task_finished(&mut self, outcome: &TaskOutcome) {
        self.hub.record_outcome(outcome);
        let msg = match outcome {
            TaskOutcome::Episode(r) => ServerMessage::Episode { record: r.clone() },
            TaskOutcome::Undone { record } => ServerMessage::Episode { record: record.clone() },
            TaskOutcome::Rejected { reason, .. } => ServerMessage::Error { message: reason.clone() },
        };
        self.hub.outbound.push(msg);
    }
}
