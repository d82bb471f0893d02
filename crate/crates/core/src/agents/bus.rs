//! In-process message bus with typed envelopes.
//!
//! Delivery goes to the addressee plus every other subscriber of the kind, at
//! most once each. Ids are assigned at publish time and strictly increase.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{mpsc, Notify};

use super::envelope::{AgentName, Envelope, MessageKind, Payload};
use crate::clock::Clock;

const TRACE_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentName),
    #[error("agent {0} cannot address itself")]
    SelfAddressed(AgentName),
    #[error("bus closed")]
    BusClosed,
}

/// One envelope queued for one recipient.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub recipient: AgentName,
    pub envelope: Envelope,
}

/// Published-envelope summary kept for diagnostics and ordering checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub id: u64,
    pub kind: MessageKind,
    pub from: AgentName,
    pub to: AgentName,
}

/// Count of deliveries and stimuli not yet handled, with a wait-for-zero.
#[derive(Debug, Default)]
pub struct Activity {
    count: AtomicUsize,
    idle: Notify,
}

impl Activity {
    pub fn add(&self, n: usize) {
        self.count.fetch_add(n, Ordering::SeqCst);
    }

    pub fn done(&self) {
        if self.count.fetch_sub(1, Ordering::SeqCst) == 1 {
            self.idle.notify_waiters();
        }
    }

    pub fn outstanding(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub async fn wait_idle(&self) {
        loop {
            let notified = self.idle.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.outstanding() == 0 {
                return;
            }
            notified.await;
        }
    }
}

enum Sink {
    /// One global FIFO, drained by the step scheduler.
    Queue(VecDeque<Delivery>),
    Mailboxes(HashMap<AgentName, mpsc::UnboundedSender<Envelope>>),
}

struct Inner {
    next_id: u64,
    sink: Sink,
    trace: VecDeque<TraceEntry>,
}

#[derive(Clone)]
pub struct Bus {
    agents: Arc<BTreeSet<AgentName>>,
    subs: Arc<RwLock<BTreeMap<MessageKind, BTreeSet<AgentName>>>>,
    inner: Arc<Mutex<Inner>>,
    closed: Arc<AtomicBool>,
    clock: Arc<dyn Clock>,
    activity: Arc<Activity>,
}

/// Proof of a subscription; dropping it does not unsubscribe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub agent: AgentName,
    pub kinds: Vec<MessageKind>,
}

impl Bus {
    fn build(agents: &[AgentName], sink: Sink, clock: Arc<dyn Clock>) -> Self {
        Bus {
            agents: Arc::new(agents.iter().copied().collect()),
            subs: Arc::default(),
            inner: Arc::new(Mutex::new(Inner {
                next_id: 1,
                sink,
                trace: VecDeque::new(),
            })),
            closed: Arc::new(AtomicBool::new(false)),
            clock,
            activity: Arc::default(),
        }
    }

    /// A bus whose deliveries wait in one queue for [`Bus::pop`].
    pub fn queued(agents: &[AgentName], clock: Arc<dyn Clock>) -> Self {
        Self::build(agents, Sink::Queue(VecDeque::new()), clock)
    }

    /// A bus delivering straight into per-agent mailboxes.
    pub fn with_mailboxes(
        agents: &[AgentName],
        clock: Arc<dyn Clock>,
    ) -> (Self, HashMap<AgentName, mpsc::UnboundedReceiver<Envelope>>) {
        let mut senders = HashMap::new();
        let mut receivers = HashMap::new();
        for &a in agents {
            let (tx, rx) = mpsc::unbounded_channel();
            senders.insert(a, tx);
            receivers.insert(a, rx);
        }
        (Self::build(agents, Sink::Mailboxes(senders), clock), receivers)
    }

    pub fn subscribe(&self, agent: AgentName, kinds: &[MessageKind]) -> Result<Subscription, BusError> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(BusError::BusClosed);
        }
        if !self.agents.contains(&agent) {
            return Err(BusError::UnknownAgent(agent));
        }
        let mut subs = self.subs.write();
        for kind in kinds {
            subs.entry(*kind).or_default().insert(agent);
        }
        Ok(Subscription {
            agent,
            kinds: kinds.to_vec(),
        })
    }

    /// Stamps and delivers one envelope, returning it as published.
    pub fn send(&self, from: AgentName, to: AgentName, payload: Payload) -> Result<Envelope, BusError> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(BusError::BusClosed);
        }
        for agent in [from, to] {
            if !self.agents.contains(&agent) {
                return Err(BusError::UnknownAgent(agent));
            }
        }
        if from == to {
            return Err(BusError::SelfAddressed(from));
        }
        let kind = payload.kind();
        let mut recipients: BTreeSet<AgentName> =
            self.subs.read().get(&kind).cloned().unwrap_or_default();
        recipients.insert(to);
        recipients.remove(&from);

        let mut inner = self.inner.lock();
        let envelope = Envelope {
            id: inner.next_id,
            from,
            to,
            timestamp: self.clock.now(),
            payload,
        };
        inner.next_id += 1;
        self.activity.add(recipients.len());
        match &mut inner.sink {
            Sink::Queue(q) => {
                for r in &recipients {
                    q.push_back(Delivery {
                        recipient: *r,
                        envelope: envelope.clone(),
                    });
                }
            }
            Sink::Mailboxes(boxes) => {
                for r in &recipients {
                    if boxes[r].send(envelope.clone()).is_err() {
                        return Err(BusError::BusClosed);
                    }
                }
            }
        }
        if inner.trace.len() == TRACE_CAP {
            inner.trace.pop_front();
        }
        inner.trace.push_back(TraceEntry {
            id: envelope.id,
            kind,
            from,
            to,
        });
        Ok(envelope)
    }

    /// Next queued delivery (queued buses only).
    pub fn pop(&self) -> Option<Delivery> {
        match &mut self.inner.lock().sink {
            Sink::Queue(q) => q.pop_front(),
            Sink::Mailboxes(_) => None,
        }
    }

    pub fn pending(&self) -> usize {
        match &self.inner.lock().sink {
            Sink::Queue(q) => q.len(),
            Sink::Mailboxes(_) => 0,
        }
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.inner.lock().trace.iter().cloned().collect()
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        if let Sink::Mailboxes(boxes) = &mut self.inner.lock().sink {
            boxes.clear();
        }
    }

    /// Every delivery counts here until its recipient reports it handled.
    pub fn activity(&self) -> Arc<Activity> {
        self.activity.clone()
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }
}
