//! Schedulers for the agents: a deterministic single-task stepper and a
//! task-per-agent runtime.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use tokio::sync::mpsc;
use tokio::task::JoinSet;
use tracing::warn;

use super::bus::{Activity, Bus, BusError, TraceEntry};
use super::envelope::AgentName;
use super::roles::{Agent, BiometricAgent, Outbox, PatientAgent, PhysicianAgent, SimopacAgent, Stimulus};
use super::DeviceContext;

pub fn standard_agents(ctx: &Arc<DeviceContext>) -> Vec<Box<dyn Agent>> {
    vec![
        Box::new(PatientAgent::new(ctx.clone())),
        Box::new(BiometricAgent::new(ctx.clone())),
        Box::new(PhysicianAgent::new(ctx.clone())),
        Box::new(SimopacAgent::new(ctx.clone())),
    ]
}

fn publish(bus: &Bus, from: AgentName, out: Outbox) {
    for (to, payload) in out.items {
        if let Err(e) = bus.send(from, to, payload) {
            warn!(%from, %to, "dropped envelope: {e}");
        }
    }
}

/// Runs every handler on the caller's task, one at a time. Pending
/// deliveries always go before the next external stimulus.
pub struct StepRuntime {
    bus: Bus,
    agents: BTreeMap<AgentName, Box<dyn Agent>>,
    stimuli: VecDeque<Stimulus>,
}

impl StepRuntime {
    pub fn new(agents: Vec<Box<dyn Agent>>, clock: Arc<dyn crate::clock::Clock>) -> Result<Self, BusError> {
        let names: Vec<AgentName> = agents.iter().map(|a| a.name()).collect();
        let bus = Bus::queued(&names, clock);
        for a in &agents {
            bus.subscribe(a.name(), &a.subscriptions())?;
        }
        Ok(StepRuntime {
            bus,
            agents: agents.into_iter().map(|a| (a.name(), a)).collect(),
            stimuli: VecDeque::new(),
        })
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn inject(&mut self, stimulus: Stimulus) {
        self.stimuli.push_back(stimulus);
    }

    /// Handles one delivery or stimulus. False when there was nothing to do.
    pub async fn step(&mut self) -> bool {
        if let Some(d) = self.bus.pop() {
            let mut out = Outbox::default();
            if let Some(agent) = self.agents.get_mut(&d.recipient) {
                agent.on_envelope(&d.envelope, &mut out).await;
            }
            publish(&self.bus, d.recipient, out);
            self.bus.activity().done();
            return true;
        }
        let Some(stimulus) = self.stimuli.pop_front() else {
            return false;
        };
        let target = stimulus.target();
        let mut out = Outbox::default();
        match self.agents.get_mut(&target) {
            Some(agent) => agent.on_stimulus(stimulus, &mut out).await,
            None => warn!(%target, "no agent for stimulus"),
        }
        publish(&self.bus, target, out);
        true
    }

    pub async fn run_until_idle(&mut self) -> usize {
        let mut steps = 0;
        while self.step().await {
            steps += 1;
        }
        steps
    }
}

/// Handle to a running set of agents.
#[derive(Clone)]
pub struct RuntimeHandle {
    submit: mpsc::UnboundedSender<Stimulus>,
    bus: Bus,
    activity: Arc<Activity>,
}

impl RuntimeHandle {
    pub fn submit(&self, stimulus: Stimulus) -> Result<(), BusError> {
        self.activity.add(1);
        self.submit.send(stimulus).map_err(|_| {
            self.activity.done();
            BusError::BusClosed
        })
    }

    /// Resolves once every submitted stimulus and every envelope it caused is handled.
    pub async fn settle(&self) {
        self.activity.wait_idle().await
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.bus.trace()
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }
}

/// Stepper driven from one task; each stimulus runs to quiescence before the next.
pub fn spawn_deterministic(
    agents: Vec<Box<dyn Agent>>,
    clock: Arc<dyn crate::clock::Clock>,
) -> Result<RuntimeHandle, BusError> {
    let mut rt = StepRuntime::new(agents, clock)?;
    let bus = rt.bus.clone();
    let activity = bus.activity();
    let (tx, mut rx) = mpsc::unbounded_channel::<Stimulus>();
    let act = activity.clone();
    tokio::spawn(async move {
        while let Some(stimulus) = rx.recv().await {
            rt.inject(stimulus);
            rt.run_until_idle().await;
            act.done();
        }
    });
    Ok(RuntimeHandle {
        submit: tx,
        bus,
        activity,
    })
}

/// One task per agent; envelopes are preferred over stimuli when both wait.
pub fn spawn_concurrent(
    agents: Vec<Box<dyn Agent>>,
    clock: Arc<dyn crate::clock::Clock>,
) -> Result<RuntimeHandle, BusError> {
    let names: Vec<AgentName> = agents.iter().map(|a| a.name()).collect();
    let (bus, mut mailboxes) = Bus::with_mailboxes(&names, clock);
    let activity = bus.activity();
    let mut stimulus_tx = BTreeMap::new();
    let mut tasks = JoinSet::new();
    for mut agent in agents {
        let name = agent.name();
        bus.subscribe(name, &agent.subscriptions())?;
        let mut mail = mailboxes.remove(&name).expect("mailbox per agent");
        let (tx, mut stim) = mpsc::unbounded_channel::<Stimulus>();
        stimulus_tx.insert(name, tx);
        let bus = bus.clone();
        let act = activity.clone();
        tasks.spawn(async move {
            loop {
                let mut out = Outbox::default();
                tokio::select! {
                    biased;
                    Some(env) = mail.recv() => agent.on_envelope(&env, &mut out).await,
                    Some(s) = stim.recv() => agent.on_stimulus(s, &mut out).await,
                    else => break,
                }
                publish(&bus, name, out);
                act.done();
            }
        });
    }

    let (tx, mut rx) = mpsc::unbounded_channel::<Stimulus>();
    let act = activity.clone();
    let router_bus = bus.clone();
    tokio::spawn(async move {
        while let Some(stimulus) = rx.recv().await {
            match stimulus_tx.get(&stimulus.target()) {
                Some(tx) if tx.send(stimulus).is_ok() => {}
                _ => act.done(),
            }
        }
        // no more stimuli: let the agents drain and stop
        drop(stimulus_tx);
        router_bus.close();
        while tasks.join_next().await.is_some() {}
    });
    Ok(RuntimeHandle {
        submit: tx,
        bus,
        activity,
    })
}
