//! A minimal actor runtime: entities with private state, unbounded FIFO
//! mailboxes, and a dispatch policy deciding which threads run them.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};

use super::Message;
use crate::error::EmasError;

/// Stack of a dedicated entity thread; handlers never recurse deeply.
const ENTITY_STACK: usize = 256 << 10;

/// How entities are mapped onto threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DispatchPolicy {
    OwnThread,
    ThreadPool(usize),
    SingleThread,
}

impl Default for DispatchPolicy {
    fn default() -> Self {
        DispatchPolicy::ThreadPool(4)
    }
}

impl fmt::Display for DispatchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DispatchPolicy::OwnThread => f.write_str("own"),
            DispatchPolicy::ThreadPool(n) => write!(f, "pool:{n}"),
            DispatchPolicy::SingleThread => f.write_str("single"),
        }
    }
}

impl FromStr for DispatchPolicy {
    type Err = EmasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "own" => Ok(DispatchPolicy::OwnThread),
            "single" => Ok(DispatchPolicy::SingleThread),
            _ => match s.strip_prefix("pool:").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 1 => Ok(DispatchPolicy::ThreadPool(n)),
                _ => Err(EmasError::Config(format!("bad dispatch policy `{s}` (own|pool:N|single)"))),
            },
        }
    }
}

impl TryFrom<String> for DispatchPolicy {
    type Error = EmasError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DispatchPolicy> for String {
    fn from(p: DispatchPolicy) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

pub trait Entity: Send {
    fn handle(&mut self, msg: Message, ctx: &Ctx) -> Flow;
}

/// Messages a pool worker processes from one mailbox before yielding.
const BATCH: usize = 64;

struct Cell {
    id: u64,
    tx: Sender<Message>,
    rx: Receiver<Message>,
    entity: Mutex<Option<Box<dyn Entity>>>,
    scheduled: AtomicBool,
    stopped: AtomicBool,
    runtime: Arc<Inner>,
}

/// Handle for sending to an entity.
#[derive(Clone)]
pub struct Addr(Arc<Cell>);

impl fmt::Debug for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Addr({})", self.0.id)
    }
}

impl PartialEq for Addr {
    fn eq(&self, other: &Self) -> bool {
        self.0.id == other.0.id
    }
}

impl Addr {
    /// Queues `msg`. Returns false if the entity has stopped, in which case
    /// the message is dropped.
    pub fn send(&self, msg: Message) -> bool {
        let cell = &self.0;
        if cell.stopped.load(Ordering::Acquire) || cell.tx.send(msg).is_err() {
            return false;
        }
        cell.runtime.schedule(cell);
        true
    }

    pub fn is_stopped(&self) -> bool {
        self.0.stopped.load(Ordering::Acquire)
    }
}

/// Passed to an entity while it handles a message.
pub struct Ctx {
    me: Addr,
    runtime: Runtime,
}

impl Ctx {
    pub fn me(&self) -> &Addr {
        &self.me
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn spawn(&self, entity: Box<dyn Entity>) -> Addr {
        self.runtime.spawn(entity)
    }
}

/// Shared queue of cells that have mail, drained by pool workers.
type RunQueue = (Sender<Option<Arc<Cell>>>, Receiver<Option<Arc<Cell>>>);

struct Inner {
    policy: DispatchPolicy,
    next_id: AtomicU64,
    cells: Mutex<HashMap<u64, Addr>>,
    run_queue: Option<RunQueue>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    shut_down: AtomicBool,
}

impl Inner {
    fn schedule(&self, cell: &Arc<Cell>) {
        if let Some((queue, _)) = &self.run_queue {
            if !cell.scheduled.swap(true, Ordering::AcqRel) {
                let _ = queue.send(Some(cell.clone()));
            }
        }
    }
}

#[derive(Clone)]
pub struct Runtime(Arc<Inner>);

impl Runtime {
    pub fn new(policy: DispatchPolicy) -> Self {
        let workers = match policy {
            DispatchPolicy::OwnThread => 0,
            DispatchPolicy::ThreadPool(n) => n.max(1),
            DispatchPolicy::SingleThread => 1,
        };
        let inner = Arc::new(Inner {
            policy,
            next_id: AtomicU64::new(0),
            cells: Mutex::new(HashMap::new()),
            run_queue: (workers > 0).then(unbounded),
            threads: Mutex::new(Vec::new()),
            shut_down: AtomicBool::new(false),
        });
        let rt = Runtime(inner);
        for w in 0..workers {
            let this = rt.clone();
            let handle = std::thread::Builder::new()
                .name(format!("emas-worker-{w}"))
                .spawn(move || this.worker_loop())
                .expect("spawn worker thread");
            rt.0.threads.lock().unwrap().push(handle);
        }
        rt
    }

    pub fn policy(&self) -> DispatchPolicy {
        self.0.policy
    }

    pub fn spawn(&self, entity: Box<dyn Entity>) -> Addr {
        let (tx, rx) = unbounded();
        let cell = Arc::new(Cell {
            id: self.0.next_id.fetch_add(1, Ordering::Relaxed),
            tx,
            rx,
            entity: Mutex::new(Some(entity)),
            scheduled: AtomicBool::new(false),
            stopped: AtomicBool::new(false),
            runtime: self.0.clone(),
        });
        let addr = Addr(cell.clone());
        self.0.cells.lock().unwrap().insert(cell.id, addr.clone());
        if self.0.policy == DispatchPolicy::OwnThread {
            let this = self.clone();
            let handle = std::thread::Builder::new()
                .name(format!("emas-entity-{}", cell.id))
                .stack_size(ENTITY_STACK)
                .spawn(move || this.own_thread_loop(cell))
                .expect("spawn entity thread");
            let mut threads = self.0.threads.lock().unwrap();
            threads.retain(|h| !h.is_finished());
            threads.push(handle);
        }
        addr
    }

    /// Number of entities that have not stopped.
    pub fn live_entities(&self) -> usize {
        self.0.cells.lock().unwrap().len()
    }

    pub fn entities(&self) -> Vec<Addr> {
        self.0.cells.lock().unwrap().values().cloned().collect()
    }

    fn retire(&self, cell: &Arc<Cell>) {
        cell.stopped.store(true, Ordering::Release);
        self.0.cells.lock().unwrap().remove(&cell.id);
    }

    fn deliver(&self, cell: &Arc<Cell>, entity: &mut Box<dyn Entity>, msg: Message) -> Flow {
        if matches!(msg, Message::Shutdown) {
            return Flow::Stop;
        }
        let ctx = Ctx { me: Addr(cell.clone()), runtime: self.clone() };
        entity.handle(msg, &ctx)
    }

    fn own_thread_loop(&self, cell: Arc<Cell>) {
        let Some(mut entity) = cell.entity.lock().unwrap().take() else { return };
        while let Ok(msg) = cell.rx.recv() {
            if self.deliver(&cell, &mut entity, msg) == Flow::Stop {
                break;
            }
        }
        self.retire(&cell);
    }

    fn worker_loop(&self) {
        let Some((_, queue)) = &self.0.run_queue else { return };
        while let Ok(Some(cell)) = queue.recv() {
            let mut slot = cell.entity.lock().unwrap();
            if let Some(entity) = slot.as_mut() {
                for _ in 0..BATCH {
                    let Ok(msg) = cell.rx.try_recv() else { break };
                    if self.deliver(&cell, entity, msg) == Flow::Stop {
                        *slot = None;
                        self.retire(&cell);
                        break;
                    }
                }
            }
            let alive = slot.is_some();
            drop(slot);
            cell.scheduled.store(false, Ordering::Release);
            if alive && !cell.rx.is_empty() {
                self.0.schedule(&cell);
            }
        }
    }

    /// Stops every entity and joins all runtime threads.
    pub fn shutdown(&self) {
        if self.0.shut_down.swap(true, Ordering::AcqRel) {
            return;
        }
        for addr in self.entities() {
            addr.send(Message::Shutdown);
        }
        if let Some((queue, _)) = &self.0.run_queue {
            // Workers drain the shutdown messages queued above before the sentinels.
            let workers = match self.0.policy {
                DispatchPolicy::ThreadPool(n) => n.max(1),
                _ => 1,
            };
            for _ in 0..workers {
                let _ = queue.send(None);
            }
        }
        let threads = std::mem::take(&mut *self.0.threads.lock().unwrap());
        for handle in threads {
            let _ = handle.join();
        }
        self.0.cells.lock().unwrap().clear();
    }
}
