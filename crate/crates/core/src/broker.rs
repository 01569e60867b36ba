//! Task broker between email clients and their paired phone.
//!
//! Clients submit AEAD frames as tasks; the broker routes each one to the
//! device the client is paired with, wakes that device's long-poll
//! waiters, and hands tasks out oldest-first. A task moves
//! `pending -> delivered -> completed | failed`; the broker never sees
//! anything but sealed frames and metadata.
//!
//! Timeouts (enforced lazily on every call): a task nobody fetched, or
//! one fetched but never completed, fails with `device-unreachable` after
//! the delivery timeout. Terminal tasks are dropped after the task TTL.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;
use uuid::Uuid;

use crate::clock::{chrono_duration, Clock, SystemClock};
use crate::crypto::{FrameAction, TransportFrame};
use crate::error::{ErrorBody, MegError, Result};
use crate::journal::{JournalEvent, JournalSink};

pub const DEFAULT_TASK_TTL: Duration = Duration::from_secs(60 * 60);
pub const DEFAULT_DELIVERY_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskAction {
    Encrypt,
    Decrypt,
}

impl TaskAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskAction::Encrypt => "encrypt",
            TaskAction::Decrypt => "decrypt",
        }
    }

    pub fn frame_action(&self) -> FrameAction {
        match self {
            TaskAction::Encrypt => FrameAction::Encrypt,
            TaskAction::Decrypt => FrameAction::Decrypt,
        }
    }
}

impl FromStr for TaskAction {
    type Err = MegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encrypt" => Ok(TaskAction::Encrypt),
            "decrypt" => Ok(TaskAction::Decrypt),
            other => Err(MegError::InvalidArgument(format!("unknown action {other:?}"))),
        }
    }
}

impl fmt::Display for TaskAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Delivered,
    Completed,
    Failed,
}

impl TaskStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskStatus::Completed | TaskStatus::Failed)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskStatus::Pending => "pending",
            TaskStatus::Delivered => "delivered",
            TaskStatus::Completed => "completed",
            TaskStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerTask {
    pub task_id: Uuid,
    pub client_id: Uuid,
    pub device_id: Uuid,
    pub action: TaskAction,
    pub request_frame: TransportFrame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_frame: Option<TransportFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
    pub status: TaskStatus,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskOutcome {
    Completed(TransportFrame),
    Failed(ErrorBody),
}

/// What a client sees when polling a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: Uuid,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_frame: Option<TransportFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl From<&BrokerTask> for TaskView {
    fn from(t: &BrokerTask) -> Self {
        TaskView {
            task_id: t.task_id,
            status: t.status,
            result_frame: t.result_frame.clone(),
            error: t.error.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Notification {
    Pending { count: usize },
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRegistration {
    pub device_id: Uuid,
    pub paired_clients: BTreeSet<Uuid>,
}

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub task_ttl: Duration,
    pub delivery_timeout: Duration,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self { task_ttl: DEFAULT_TASK_TTL, delivery_timeout: DEFAULT_DELIVERY_TIMEOUT }
    }
}

#[derive(Debug, Default)]
struct Device {
    paired_clients: BTreeSet<Uuid>,
    queue: VecDeque<Uuid>,
    notify: Arc<Notify>,
}

#[derive(Debug, Default)]
struct State {
    devices: HashMap<Uuid, Device>,
    routes: HashMap<Uuid, Uuid>,
    tasks: HashMap<Uuid, BrokerTask>,
}

impl State {
    fn apply(&mut self, event: &JournalEvent) {
        match event {
            JournalEvent::DeviceRegistered { device_id } => {
                self.devices.entry(*device_id).or_default();
            }
            JournalEvent::Paired { device_id, client_id } => {
                self.devices.entry(*device_id).or_default().paired_clients.insert(*client_id);
                self.routes.insert(*client_id, *device_id);
            }
            JournalEvent::TaskUpserted { task } => {
                let is_new = !self.tasks.contains_key(&task.task_id);
                let device = self.devices.entry(task.device_id).or_default();
                if task.status == TaskStatus::Pending {
                    if is_new {
                        device.queue.push_back(task.task_id);
                    }
                } else if !is_new {
                    device.queue.retain(|id| *id != task.task_id);
                }
                self.tasks.insert(task.task_id, task.clone());
            }
            JournalEvent::TaskRemoved { task_id } => {
                if let Some(task) = self.tasks.remove(task_id) {
                    if let Some(d) = self.devices.get_mut(&task.device_id) {
                        d.queue.retain(|id| id != task_id);
                    }
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug)]
pub struct Broker {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
    journal: Option<Arc<dyn JournalSink>>,
    config: BrokerConfig,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new(BrokerConfig::default(), Arc::new(SystemClock), None)
    }
}

impl Broker {
    pub fn new(config: BrokerConfig, clock: Arc<dyn Clock>, journal: Option<Arc<dyn JournalSink>>) -> Self {
        Self { state: Mutex::new(State::default()), clock, journal, config }
    }

    pub fn restore(
        events: &[JournalEvent],
        config: BrokerConfig,
        clock: Arc<dyn Clock>,
        journal: Option<Arc<dyn JournalSink>>,
    ) -> Self {
        let broker = Self::new(config, clock, journal);
        {
            let mut st = broker.state.lock().unwrap();
            for ev in events {
                st.apply(ev);
            }
        }
        broker
    }

    fn commit(&self, st: &mut State, event: JournalEvent) -> Result<()> {
        if let Some(j) = &self.journal {
            j.append(&event)?;
        }
        st.apply(&event);
        Ok(())
    }

    fn sweep(&self, st: &mut State) -> Result<()> {
        let now = self.clock.now();
        let delivery = chrono_duration(self.config.delivery_timeout);
        let ttl = chrono_duration(self.config.task_ttl);
        let mut events = Vec::new();
        for task in st.tasks.values() {
            let expired = match task.status {
                TaskStatus::Pending => now - task.created_at >= delivery,
                TaskStatus::Delivered => now - task.updated_at >= delivery,
                TaskStatus::Completed | TaskStatus::Failed => {
                    if now - task.updated_at >= ttl {
                        events.push(JournalEvent::TaskRemoved { task_id: task.task_id });
                    }
                    false
                }
            };
            if expired {
                let mut failed = task.clone();
                failed.status = TaskStatus::Failed;
                failed.error = Some(MegError::DeviceUnreachable.to_body());
                failed.updated_at = now;
                events.push(JournalEvent::TaskUpserted { task: failed });
            }
        }
        for ev in events {
            self.commit(st, ev)?;
        }
        Ok(())
    }

    /// Idempotent.
    pub fn register_device(&self, device_id: Uuid) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        if st.devices.contains_key(&device_id) {
            return Ok(());
        }
        self.commit(&mut st, JournalEvent::DeviceRegistered { device_id })
    }

    pub fn device(&self, device_id: Uuid) -> Result<DeviceRegistration> {
        let st = self.state.lock().unwrap();
        let d = st.devices.get(&device_id).ok_or(MegError::UnknownDevice)?;
        Ok(DeviceRegistration { device_id, paired_clients: d.paired_clients.clone() })
    }

    /// Routes `client_id` to `device_id`. A client serves exactly one
    /// device: re-pairing with the same device is a no-op, pairing with a
    /// different one is `already-paired`.
    pub fn record_pairing(&self, device_id: Uuid, client_id: Uuid) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        if !st.devices.contains_key(&device_id) {
            return Err(MegError::UnknownDevice);
        }
        match st.routes.get(&client_id) {
            Some(existing) if *existing == device_id => Ok(()),
            Some(_) => Err(MegError::AlreadyPaired),
            None => self.commit(&mut st, JournalEvent::Paired { device_id, client_id }),
        }
    }

    pub fn pairing_of(&self, client_id: Uuid) -> Result<Uuid> {
        let st = self.state.lock().unwrap();
        st.routes
            .get(&client_id)
            .copied()
            .ok_or_else(|| MegError::NotFound(format!("client {client_id} is not paired")))
    }

    pub fn submit_task(&self, client_id: Uuid, action: TaskAction, frame: TransportFrame) -> Result<Uuid> {
        if frame.client_id != client_id {
            return Err(MegError::InvalidArgument("frame client id does not match submitter".into()));
        }
        if frame.aad_tag != action.as_str() {
            return Err(MegError::InvalidArgument("frame label does not match action".into()));
        }
        let mut st = self.state.lock().unwrap();
        self.sweep(&mut st)?;
        let device_id = *st.routes.get(&client_id).ok_or(MegError::UnpairedClient)?;
        let now = self.clock.now();
        let task = BrokerTask {
            task_id: Uuid::new_v4(),
            client_id,
            device_id,
            action,
            request_frame: frame,
            result_frame: None,
            error: None,
            status: TaskStatus::Pending,
            created_at: now,
            updated_at: now,
        };
        let task_id = task.task_id;
        self.commit(&mut st, JournalEvent::TaskUpserted { task })?;
        st.devices[&device_id].notify.notify_waiters();
        Ok(task_id)
    }

    pub fn pending_count(&self, device_id: Uuid) -> Result<usize> {
        let mut st = self.state.lock().unwrap();
        self.sweep(&mut st)?;
        Ok(st.devices.get(&device_id).ok_or(MegError::UnknownDevice)?.queue.len())
    }

    /// Long-poll: returns as soon as the device has pending work, or
    /// `Timeout` once `timeout` elapses. Every waiter on a device is woken
    /// when a task arrives for it.
    pub async fn await_notification(&self, device_id: Uuid, timeout: Duration) -> Result<Notification> {
        let notify = {
            let st = self.state.lock().unwrap();
            st.devices.get(&device_id).ok_or(MegError::UnknownDevice)?.notify.clone()
        };
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            // Register interest before checking, so a submit that lands in
            // between still wakes us.
            let notified = notify.notified();
            let mut notified = std::pin::pin!(notified);
            notified.as_mut().enable();
            let count = self.pending_count(device_id)?;
            if count > 0 {
                return Ok(Notification::Pending { count });
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return Ok(Notification::Timeout);
            }
        }
    }

    /// Hands out every pending task for the device, oldest first, marking
    /// each delivered in the same critical section.
    pub fn fetch_pending(&self, device_id: Uuid) -> Result<Vec<BrokerTask>> {
        let mut st = self.state.lock().unwrap();
        self.sweep(&mut st)?;
        let ids: Vec<Uuid> = st
            .devices
            .get(&device_id)
            .ok_or(MegError::UnknownDevice)?
            .queue
            .iter()
            .copied()
            .collect();
        let now = self.clock.now();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let mut task = st.tasks[&id].clone();
            task.status = TaskStatus::Delivered;
            task.updated_at = now;
            self.commit(&mut st, JournalEvent::TaskUpserted { task: task.clone() })?;
            out.push(task);
        }
        Ok(out)
    }

    pub fn complete_task(&self, task_id: Uuid, outcome: TaskOutcome) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        self.sweep(&mut st)?;
        let task = st.tasks.get(&task_id).ok_or(MegError::UnknownTask)?;
        if task.status != TaskStatus::Delivered {
            return Err(MegError::WrongState(format!("task is {}", task.status.as_str())));
        }
        let mut task = task.clone();
        task.updated_at = self.clock.now();
        match outcome {
            TaskOutcome::Completed(frame) => {
                task.status = TaskStatus::Completed;
                task.result_frame = Some(frame);
            }
            TaskOutcome::Failed(error) => {
                task.status = TaskStatus::Failed;
                task.error = Some(error);
            }
        }
        self.commit(&mut st, JournalEvent::TaskUpserted { task })
    }

    pub fn poll_result(&self, task_id: Uuid) -> Result<TaskView> {
        let mut st = self.state.lock().unwrap();
        self.sweep(&mut st)?;
        st.tasks.get(&task_id).map(TaskView::from).ok_or(MegError::UnknownTask)
    }

    pub fn tasks(&self) -> Vec<BrokerTask> {
        let st = self.state.lock().unwrap();
        let mut tasks: Vec<_> = st.tasks.values().cloned().collect();
        tasks.sort_by_key(|t| (t.created_at, t.task_id));
        tasks
    }

    /// Devices, routes and tasks as JSON, for at-rest inspection.
    pub fn dump(&self) -> String {
        let st = self.state.lock().unwrap();
        let devices: Vec<_> = st
            .devices
            .iter()
            .map(|(id, d)| DeviceRegistration { device_id: *id, paired_clients: d.paired_clients.clone() })
            .collect();
        let tasks: Vec<_> = st.tasks.values().collect();
        serde_json::json!({ "devices": devices, "routes": st.routes, "tasks": tasks }).to_string()
    }
}
