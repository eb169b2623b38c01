//! The fixed-cadence decision loop.
//!
//! A dedicated thread owns the [`Session`]. Transport handlers talk to it
//! through two channels only: the feedback queue and the control mailbox.
//! Every cycle's messages fan out on a broadcast channel; a send never
//! blocks, so a slow client loses frames instead of stalling the loop.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use coach_core::coach::TraceId;
use tokio::sync::broadcast;

use crate::protocol::{encode, ControlCmd, ServerMsg};
use crate::session::{FeedbackMapper, Session, Setup};

/// Frames buffered per subscriber before it starts losing them.
const BROADCAST_CAPACITY: usize = 256;

#[derive(Debug)]
struct Feedback {
    value: f64,
    trace: TraceId,
    received: Instant,
}

#[derive(Debug)]
enum Control {
    Cmd(ControlCmd),
    Configure(Setup),
}

/// Counters published by the loop.
#[derive(Debug, Default)]
pub struct Stats {
    pub cycles: AtomicU64,
    pub steps: AtomicU64,
    pub overruns: AtomicU64,
    /// Longest work time of a single cycle, in nanoseconds.
    pub max_work_ns: AtomicU64,
    pub feedback_applied: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub cycles: u64,
    pub steps: u64,
    pub overruns: u64,
    pub max_work: Duration,
    pub feedback_applied: u64,
}

impl Stats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            cycles: self.cycles.load(Ordering::Acquire),
            steps: self.steps.load(Ordering::Acquire),
            overruns: self.overruns.load(Ordering::Acquire),
            max_work: Duration::from_nanos(self.max_work_ns.load(Ordering::Acquire)),
            feedback_applied: self.feedback_applied.load(Ordering::Acquire),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopOptions {
    pub period: Duration,
    /// Stop by itself after this many cycles.
    pub max_cycles: Option<u64>,
}

impl LoopOptions {
    pub fn with_period(period: Duration) -> Self {
        Self { period, max_cycles: None }
    }
}

/// Cloneable access to a running loop.
#[derive(Debug, Clone)]
pub struct LoopClient {
    feedback: Sender<Feedback>,
    control: Sender<Control>,
    events: broadcast::Sender<Arc<str>>,
    snapshot: Arc<Mutex<ServerMsg>>,
    next_step: Arc<AtomicU64>,
    mapper: Arc<FeedbackMapper>,
    stats: Arc<Stats>,
}

impl LoopClient {
    /// Maps raw feedback and stamps it with the server's receipt time.
    /// Returns the id of the cycle that will apply it; `Err` means the
    /// request was refused.
    pub fn feedback(&self, value: f64, trace: Option<&str>) -> Result<u64, String> {
        let received = Instant::now();
        let step = self.next_step.load(Ordering::Acquire);
        if let Some((value, trace)) = self.mapper.map(value, trace)? {
            self.feedback.send(Feedback { value, trace, received }).map_err(|_| "session stopped".to_string())?;
        }
        Ok(step)
    }

    pub fn control(&self, cmd: ControlCmd) -> Result<u64, String> {
        self.send_control(Control::Cmd(cmd))
    }

    pub fn configure(&self, setup: Setup) -> Result<u64, String> {
        self.send_control(Control::Configure(setup))
    }

    fn send_control(&self, c: Control) -> Result<u64, String> {
        let step = self.next_step.load(Ordering::Acquire);
        self.control.send(c).map_err(|_| "session stopped".to_string())?;
        Ok(step)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.events.subscribe()
    }

    /// Latest published state.
    pub fn snapshot(&self) -> ServerMsg {
        self.snapshot.lock().expect("snapshot lock").clone()
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }
}

/// Owner of the loop thread.
#[derive(Debug)]
pub struct LoopHandle {
    client: LoopClient,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Session>>,
}

impl LoopHandle {
    pub fn spawn(session: Session, options: LoopOptions) -> Self {
        let (fb_tx, fb_rx) = mpsc::channel();
        let (ctl_tx, ctl_rx) = mpsc::channel();
        let (events, _) = broadcast::channel(BROADCAST_CAPACITY);
        let client = LoopClient {
            feedback: fb_tx,
            control: ctl_tx,
            events: events.clone(),
            snapshot: Arc::new(Mutex::new(session.snapshot())),
            next_step: Arc::new(AtomicU64::new(session.next_step())),
            mapper: Arc::new(session.mapper().clone()),
            stats: Arc::new(Stats::default()),
        };
        let stop = Arc::new(AtomicBool::new(false));
        let runner = Runner {
            session,
            options,
            feedback: fb_rx,
            control: ctl_rx,
            client: client.clone(),
            stop: stop.clone(),
        };
        let thread = std::thread::Builder::new()
            .name("decision-loop".into())
            .spawn(move || runner.run())
            .expect("spawn decision loop");
        Self { client, stop, thread: Some(thread) }
    }

    pub fn client(&self) -> LoopClient {
        self.client.clone()
    }

    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(|t| t.is_finished())
    }

    /// Stops the loop and hands back the session.
    pub fn stop(mut self) -> Session {
        self.stop.store(true, Ordering::Release);
        self.thread.take().expect("joined once").join().expect("decision loop panicked")
    }

    /// Waits for a loop started with `max_cycles` to finish on its own.
    pub fn join(mut self) -> Session {
        self.thread.take().expect("joined once").join().expect("decision loop panicked")
    }
}

impl Drop for LoopHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

struct Runner {
    session: Session,
    options: LoopOptions,
    feedback: Receiver<Feedback>,
    control: Receiver<Control>,
    client: LoopClient,
    stop: Arc<AtomicBool>,
}

impl Runner {
    fn run(mut self) -> Session {
        let epoch = Instant::now();
        let period = self.options.period;
        let stats = self.client.stats.clone();
        let mut boundary = epoch + period;
        while !self.stop.load(Ordering::Acquire) {
            if let Some(max) = self.options.max_cycles {
                if stats.cycles.load(Ordering::Acquire) >= max {
                    break;
                }
            }
            let now = Instant::now();
            if boundary > now {
                std::thread::sleep(boundary - now);
            }
            let started = Instant::now();
            self.tick(started.duration_since(epoch).as_secs_f64(), epoch);
            let done = Instant::now();

            let work = done.duration_since(started);
            stats.max_work_ns.fetch_max(work.as_nanos() as u64, Ordering::AcqRel);
            stats.cycles.fetch_add(1, Ordering::AcqRel);
            boundary += period;
            if done > boundary {
                stats.overruns.fetch_add(1, Ordering::AcqRel);
                log::warn!("cycle overran its {period:?} budget by {:?}", done - boundary);
                boundary = done;
            }
        }
        self.session
    }

    fn tick(&mut self, now: f64, epoch: Instant) {
        while let Ok(c) = self.control.try_recv() {
            let result = match c {
                Control::Cmd(cmd) => self.session.control(cmd),
                Control::Configure(setup) => self.session.configure(setup),
            };
            if let Err(e) = result {
                self.broadcast(&ServerMsg::error(crate::protocol::REJECTED, e.to_string()));
            }
        }
        while let Ok(f) = self.feedback.try_recv() {
            let received = f.received.saturating_duration_since(epoch).as_secs_f64();
            self.session.enqueue(f.value, f.trace, received);
        }
        match self.session.cycle(now) {
            Ok(Some(cycle)) => {
                let stats = &self.client.stats;
                stats.steps.fetch_add(1, Ordering::AcqRel);
                if let Some((_, n)) = cycle.feedback {
                    stats.feedback_applied.fetch_add(n as u64, Ordering::AcqRel);
                }
                for m in &cycle.messages {
                    self.broadcast(m);
                }
            }
            Ok(None) => {}
            Err(e) => {
                log::error!("learner fault, pausing: {e}");
                self.broadcast(&ServerMsg::error("learner_fault", e.to_string()));
                let _ = self.session.control(ControlCmd::Pause);
            }
        }
        self.client.next_step.store(self.session.next_step(), Ordering::Release);
        *self.client.snapshot.lock().expect("snapshot lock") = self.session.snapshot();
    }

    fn broadcast(&self, m: &ServerMsg) {
        // no subscribers is not an error
        let _ = self.client.events.send(Arc::from(encode(m)));
    }
}
