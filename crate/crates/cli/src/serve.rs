//! Live service: line-delimited JSON over TCP.
//!
//! One simulation task owns the generator and every piece of run state.
//! Client commands and paced generation ticks are handled by that task in a
//! single order, so each SET_BS lands between two well-defined events. Each
//! client has its own unbounded outgoing queue; nothing is dropped for slow
//! readers.

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use qeraser_core::amplitude::DensityModel;
use qeraser_core::{
    fringe_visibility, ApparatusConfig, BiphotonEvent, Binning, Engine, Gate, GatedHistogram, IdlerDetector,
};
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::{interval, MissedTickBehavior};

use crate::args::ServeArgs;
use crate::UsageError;

pub const PROTOCOL: &str = "qeraser-live";
pub const PROTOCOL_VERSION: u32 = 1;
const INTERARRIVAL_MEAN_NS: f64 = 1000.0;
const OVERLAY_POINTS: usize = 1001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServeConfig {
    pub apparatus: ApparatusConfig,
    pub seed: u64,
    pub bins: usize,
    pub rate: f64,
    pub max_pairs: Option<u64>,
    pub lookahead: usize,
    pub initial_bs_in: bool,
}

impl ServeConfig {
    pub fn from_args(args: &ServeArgs) -> Result<Self, UsageError> {
        if !(args.rate.is_finite() && args.rate > 0.0) {
            return Err(UsageError("--rate must be a positive number".into()));
        }
        if args.lookahead == 0 {
            return Err(UsageError("--lookahead must be at least 1".into()));
        }
        let apparatus = args.geometry.apparatus()?;
        Binning::new(apparatus.detector_range, args.bins).map_err(|e| UsageError(e.to_string()))?;
        Ok(ServeConfig {
            apparatus,
            seed: args.seed,
            bins: args.bins,
            rate: args.rate,
            max_pairs: args.pairs,
            lookahead: args.lookahead,
            initial_bs_in: args.bs_in,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "cmd", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClientCommand {
    Hello { version: u32 },
    SetBs { value: bool },
    Snapshot,
    Start,
    Pause,
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
    Overlay,
}

impl ClientCommand {
    fn name(&self) -> &'static str {
        match self {
            ClientCommand::Hello { .. } => "HELLO",
            ClientCommand::SetBs { .. } => "SET_BS",
            ClientCommand::Snapshot => "SNAPSHOT",
            ClientCommand::Start => "START",
            ClientCommand::Pause => "PAUSE",
            ClientCommand::Reset { .. } => "RESET",
            ClientCommand::Overlay => "OVERLAY",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub seed: u64,
    pub running: bool,
    pub bs_in: bool,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMessage {
    pub pair_id: u64,
    pub t_signal_ns: f64,
    pub u_signal: f64,
    pub bs_in: bool,
    pub idler_detector: IdlerDetector,
    pub t_idler_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub bin_edges: Vec<f64>,
    pub ungated: Vec<u64>,
    pub d1: Vec<u64>,
    pub d2: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub bs_in: bool,
    pub ungated: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol: String,
        version: u32,
        config: serde_json::Value,
        state: RunState,
    },
    Event(EventMessage),
    Ack {
        cmd: String,
        state: RunState,
    },
    /// Broadcast when the splitter setting changes; applies from `at_event` on.
    Choice {
        value: bool,
        at_event: u64,
    },
    Snapshot {
        state: RunState,
        histograms: Histograms,
        /// Gated visibilities once a gate holds enough counts.
        visibility_d1: Option<f64>,
        visibility_d2: Option<f64>,
        /// `(at_event, value)` for every change since the last reset.
        choices: Vec<(u64, bool)>,
    },
    /// Normalized densities on a uniform grid, for both splitter settings.
    Overlay {
        u: Vec<f64>,
        curves: Vec<Curves>,
    },
    Reset {
        state: RunState,
    },
    Finished {
        state: RunState,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    fn line(&self) -> Arc<str> {
        let mut s = serde_json::to_string(self).expect("server messages serialize");
        s.push('\n');
        s.into()
    }
}

enum Input {
    Join(u64, mpsc::UnboundedSender<Arc<str>>),
    Leave(u64),
    Command(u64, Result<ClientCommand, String>),
}

struct Sim {
    cfg: ServeConfig,
    binning: Binning,
    live: qeraser_core::engine::LiveGenerator,
    pending: VecDeque<BiphotonEvent>,
    state: RunState,
    hist: [GatedHistogram; 3],
    choices: Vec<(u64, bool)>,
    clients: BTreeMap<u64, mpsc::UnboundedSender<Arc<str>>>,
}

impl Sim {
    fn new(cfg: ServeConfig) -> anyhow::Result<Self> {
        let binning = Binning::new(cfg.apparatus.detector_range, cfg.bins)?;
        let engine = Engine::new(&cfg.apparatus, cfg.seed, INTERARRIVAL_MEAN_NS)?;
        Ok(Sim {
            binning,
            live: engine.live(),
            pending: VecDeque::new(),
            state: RunState {
                seed: cfg.seed,
                running: false,
                bs_in: cfg.initial_bs_in,
                events: 0,
            },
            hist: [Gate::Ungated, Gate::D1, Gate::D2].map(|g| GatedHistogram::empty(binning, g)),
            choices: Vec::new(),
            clients: BTreeMap::new(),
            cfg,
        })
    }

    fn send(&mut self, client: u64, msg: &ServerMessage) {
        if let Some(tx) = self.clients.get(&client) {
            if tx.send(msg.line()).is_err() {
                self.clients.remove(&client);
            }
        }
    }

    fn broadcast(&mut self, msg: &ServerMessage) {
        let line = msg.line();
        self.clients.retain(|_, tx| tx.send(line.clone()).is_ok());
    }

    fn hello(&self) -> ServerMessage {
        ServerMessage::Hello {
            protocol: PROTOCOL.into(),
            version: PROTOCOL_VERSION,
            config: serde_json::to_value(&self.cfg).unwrap_or_default(),
            state: self.state,
        }
    }

    fn exhausted(&self) -> bool {
        self.cfg.max_pairs.is_some_and(|n| self.state.events >= n)
    }

    fn reset(&mut self, seed: u64) -> anyhow::Result<()> {
        let engine = Engine::new(&self.cfg.apparatus, seed, INTERARRIVAL_MEAN_NS)?;
        self.live = engine.live();
        self.pending.clear();
        self.state = RunState {
            seed,
            running: false,
            bs_in: self.cfg.initial_bs_in,
            events: 0,
        };
        self.hist = [Gate::Ungated, Gate::D1, Gate::D2].map(|g| GatedHistogram::empty(self.binning, g));
        self.choices.clear();
        Ok(())
    }

    /// Emits the oldest buffered signal with its idler resolved now.
    fn emit_one(&mut self) -> anyhow::Result<()> {
        let limit = self.cfg.max_pairs.unwrap_or(u64::MAX);
        while self.pending.len() < self.cfg.lookahead && self.live.pairs_generated() < limit {
            let signal = self.live.next_signal();
            self.pending.push_back(signal);
        }
        let Some(signal) = self.pending.pop_front() else {
            return Ok(());
        };
        let e = self.live.resolve(signal, self.state.bs_in)?;
        for h in &mut self.hist {
            h.record(e.u_signal, e.idler_detector);
        }
        self.state.events += 1;
        let msg = ServerMessage::Event(EventMessage {
            pair_id: e.pair_id,
            t_signal_ns: e.t_signal.as_ns(),
            u_signal: e.u_signal,
            bs_in: self.state.bs_in,
            idler_detector: e.idler_detector.expect("resolved"),
            t_idler_ns: e.t_idler.expect("resolved").as_ns(),
        });
        self.broadcast(&msg);
        if self.exhausted() {
            self.state.running = false;
            let done = ServerMessage::Finished { state: self.state };
            self.broadcast(&done);
        }
        Ok(())
    }

    fn snapshot(&self) -> ServerMessage {
        let cfg = self.cfg.apparatus.with_beam_splitter(self.state.bs_in);
        let vis = |h: &GatedHistogram| fringe_visibility(h, &cfg).ok().map(|f| f.visibility);
        ServerMessage::Snapshot {
            state: self.state,
            histograms: Histograms {
                bin_edges: self.binning.edges(),
                ungated: self.hist[0].counts.clone(),
                d1: self.hist[1].counts.clone(),
                d2: self.hist[2].counts.clone(),
            },
            visibility_d1: vis(&self.hist[1]),
            visibility_d2: vis(&self.hist[2]),
            choices: self.choices.clone(),
        }
    }

    fn overlay(&self) -> anyhow::Result<ServerMessage> {
        let r = self.cfg.apparatus.detector_range;
        let u: Vec<f64> = (0..OVERLAY_POINTS)
            .map(|i| -r + 2.0 * r * i as f64 / (OVERLAY_POINTS - 1) as f64)
            .collect();
        let mut curves = Vec::new();
        for bs_in in [true, false] {
            let model = DensityModel::new(&self.cfg.apparatus.with_beam_splitter(bs_in))?;
            let mut c = Curves {
                bs_in,
                ungated: Vec::with_capacity(u.len()),
                d1: Vec::with_capacity(u.len()),
                d2: Vec::with_capacity(u.len()),
            };
            for &x in &u {
                c.ungated.push(model.marginal_normalized(x)?);
                c.d1.push(model.joint_normalized(x, IdlerDetector::D1)?);
                c.d2.push(model.joint_normalized(x, IdlerDetector::D2)?);
            }
            curves.push(c);
        }
        Ok(ServerMessage::Overlay { u, curves })
    }

    fn command(&mut self, client: u64, cmd: ClientCommand) -> anyhow::Result<()> {
        let name = cmd.name();
        match cmd {
            ClientCommand::Hello { version } if version != PROTOCOL_VERSION => {
                let msg = ServerMessage::Error {
                    message: format!("version mismatch: server speaks {PROTOCOL_VERSION}, client {version}"),
                };
                self.send(client, &msg);
                return Ok(());
            }
            ClientCommand::Hello { .. } => {
                let hello = self.hello();
                self.send(client, &hello);
                return Ok(());
            }
            ClientCommand::SetBs { value } => {
                if value != self.state.bs_in {
                    self.state.bs_in = value;
                    self.choices.push((self.state.events, value));
                    let msg = ServerMessage::Choice {
                        value,
                        at_event: self.state.events,
                    };
                    self.broadcast(&msg);
                }
            }
            ClientCommand::Snapshot => {
                let snap = self.snapshot();
                self.send(client, &snap);
                return Ok(());
            }
            ClientCommand::Overlay => {
                let overlay = self.overlay()?;
                self.send(client, &overlay);
                return Ok(());
            }
            ClientCommand::Start => self.state.running = !self.exhausted(),
            ClientCommand::Pause => self.state.running = false,
            ClientCommand::Reset { seed } => {
                self.reset(seed.unwrap_or(self.state.seed))?;
                let msg = ServerMessage::Reset { state: self.state };
                self.broadcast(&msg);
            }
        }
        let ack = ServerMessage::Ack {
            cmd: name.into(),
            state: self.state,
        };
        self.send(client, &ack);
        Ok(())
    }

    async fn run(mut self, mut inputs: mpsc::UnboundedReceiver<Input>) {
        let period = Duration::from_secs_f64((1.0 / self.cfg.rate).max(1e-3));
        let per_tick = (self.cfg.rate * period.as_secs_f64()).round().max(1.0) as u64;
        let mut ticker = interval(period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                biased;
                input = inputs.recv() => {
                    let Some(input) = input else { return };
                    match input {
                        Input::Join(id, tx) => {
                            let hello = self.hello().line();
                            if tx.send(hello).is_ok() {
                                self.clients.insert(id, tx);
                            }
                        }
                        Input::Leave(id) => {
                            self.clients.remove(&id);
                        }
                        Input::Command(id, Ok(cmd)) => {
                            if let Err(e) = self.command(id, cmd) {
                                self.send(id, &ServerMessage::Error { message: e.to_string() });
                            }
                        }
                        Input::Command(id, Err(message)) => {
                            self.send(id, &ServerMessage::Error { message });
                        }
                    }
                }
                _ = ticker.tick() => {
                    for _ in 0..per_tick {
                        if !self.state.running {
                            break;
                        }
                        if let Err(e) = self.emit_one() {
                            self.state.running = false;
                            self.broadcast(&ServerMessage::Error { message: e.to_string() });
                        }
                    }
                }
            }
        }
    }
}

fn parse_command(line: &str) -> Result<ClientCommand, String> {
    serde_json::from_str(line).map_err(|e| format!("malformed command: {e}"))
}

async fn handle_client(stream: TcpStream, id: u64, inputs: mpsc::UnboundedSender<Input>) {
    let (read, mut write) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Arc<str>>();
    if inputs.send(Input::Join(id, tx)).is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(line) = rx.recv().await {
            if write.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    });
    let mut lines = BufReader::new(read).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        if line.trim().is_empty() {
            continue;
        }
        if inputs.send(Input::Command(id, parse_command(&line))).is_err() {
            break;
        }
    }
    let _ = inputs.send(Input::Leave(id));
    writer.abort();
}

/// A running service. Dropping it stops the listener and the simulation.
pub struct Server {
    addr: SocketAddr,
    accept: JoinHandle<()>,
    sim: JoinHandle<()>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Serves until the listener fails.
    pub async fn wait(mut self) {
        let _ = (&mut self.accept).await;
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.accept.abort();
        self.sim.abort();
    }
}

/// Binds `addr` and starts the simulation task. The run starts paused.
pub async fn bind(cfg: ServeConfig, addr: SocketAddr) -> anyhow::Result<Server> {
    let listener = TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let addr = listener.local_addr()?;
    let sim = Sim::new(cfg)?;
    let (inputs, rx) = mpsc::unbounded_channel();
    let sim = tokio::spawn(sim.run(rx));
    let accept = tokio::spawn(async move {
        let mut next_id = 0u64;
        while let Ok((stream, _)) = listener.accept().await {
            let _ = stream.set_nodelay(true);
            tokio::spawn(handle_client(stream, next_id, inputs.clone()));
            next_id += 1;
        }
    });
    Ok(Server { addr, accept, sim })
}

pub fn cmd_serve(args: &ServeArgs) -> anyhow::Result<()> {
    let cfg = ServeConfig::from_args(args)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = bind(cfg, SocketAddr::from(([127, 0, 0, 1], args.port))).await?;
        println!("listening on {}", server.local_addr());
        server.wait().await;
        Ok(())
    })
}
