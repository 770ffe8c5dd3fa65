//! Live service protocol over a real socket.

use std::net::SocketAddr;
use std::time::Duration;

use qeraser_cli::serve::{bind, EventMessage, ServeConfig, Server, ServerMessage, PROTOCOL, PROTOCOL_VERSION};
use qeraser_core::{run_experiment, ApparatusConfig, DelayedChoicePolicy, RunConfig};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::time::timeout;

const WAIT: Duration = Duration::from_secs(30);

fn config(seed: u64, max_pairs: u64) -> ServeConfig {
    ServeConfig {
        apparatus: ApparatusConfig::default(),
        seed,
        bins: 64,
        rate: 50_000.0,
        max_pairs: Some(max_pairs),
        lookahead: 16,
        initial_bs_in: true,
    }
}

async fn start(cfg: ServeConfig) -> Server {
    bind(cfg, SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap()
}

struct Client {
    lines: Lines<BufReader<OwnedReadHalf>>,
    write: OwnedWriteHalf,
}

impl Client {
    async fn connect(server: &Server) -> (Client, ServerMessage) {
        let stream = TcpStream::connect(server.local_addr()).await.unwrap();
        let (read, write) = stream.into_split();
        let mut c = Client {
            lines: BufReader::new(read).lines(),
            write,
        };
        let hello = c.next().await;
        (c, hello)
    }

    async fn send(&mut self, line: &str) {
        self.write.write_all(line.as_bytes()).await.unwrap();
        self.write.write_all(b"\n").await.unwrap();
    }

    async fn next(&mut self) -> ServerMessage {
        let line = timeout(WAIT, self.lines.next_line())
            .await
            .expect("server answers in time")
            .unwrap()
            .expect("connection open");
        serde_json::from_str(&line).unwrap()
    }

    /// Reads until a message matching `want`, returning the events seen on the way.
    async fn until(&mut self, want: impl Fn(&ServerMessage) -> bool) -> (Vec<EventMessage>, ServerMessage) {
        let mut events = Vec::new();
        loop {
            let m = self.next().await;
            if want(&m) {
                return (events, m);
            }
            if let ServerMessage::Event(e) = m {
                events.push(e);
            }
        }
    }

    async fn until_finished(&mut self) -> Vec<EventMessage> {
        self.until(|m| matches!(m, ServerMessage::Finished { .. })).await.0
    }
}

fn batch(seed: u64, n: u64) -> qeraser_core::EventLog {
    run_experiment(&RunConfig::new(ApparatusConfig::default(), n, seed, DelayedChoicePolicy::AlwaysIn)).unwrap()
}

#[tokio::test]
async fn hello_and_version_check() {
    let server = start(config(1, 10)).await;
    let (mut c, hello) = Client::connect(&server).await;
    match hello {
        ServerMessage::Hello {
            protocol,
            version,
            state,
            ..
        } => {
            assert_eq!(protocol, PROTOCOL);
            assert_eq!(version, PROTOCOL_VERSION);
            assert!(!state.running && state.bs_in && state.events == 0);
        }
        other => panic!("{other:?}"),
    }
    c.send(r#"{"cmd":"HELLO","version":1}"#).await;
    assert!(matches!(c.next().await, ServerMessage::Hello { .. }));
    c.send(r#"{"cmd":"HELLO","version":99}"#).await;
    match c.next().await {
        ServerMessage::Error { message } => assert!(message.contains("version mismatch")),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn untouched_stream_matches_batch_run() {
    let n = 2000;
    let server = start(config(5, n)).await;
    let (mut c, _) = Client::connect(&server).await;
    c.send(r#"{"cmd":"START"}"#).await;
    let events = c.until_finished().await;
    let log = batch(5, n);
    assert_eq!(events.len(), log.len());
    for (live, e) in events.iter().zip(&log.events) {
        assert_eq!(live.pair_id, e.pair_id);
        assert_eq!(live.u_signal.to_bits(), e.u_signal.to_bits());
        assert_eq!(live.t_signal_ns, e.t_signal.as_ns());
        assert_eq!(Some(live.idler_detector), e.idler_detector);
        assert_eq!(live.t_idler_ns - live.t_signal_ns, 8.0);
    }
}

#[tokio::test]
async fn toggling_leaves_the_signal_trajectory_alone() {
    let n = 3000;
    let toggled = start(config(5, n)).await;
    let untouched = start(config(5, n)).await;
    let (mut a, _) = Client::connect(&toggled).await;
    let (mut b, _) = Client::connect(&untouched).await;
    a.send(r#"{"cmd":"START"}"#).await;
    b.send(r#"{"cmd":"START"}"#).await;

    let mut events = Vec::new();
    let mut choices = Vec::new();
    let mut script = vec![(600, false), (1500, true), (2200, false)].into_iter().peekable();
    loop {
        match a.next().await {
            ServerMessage::Event(e) => {
                events.push(e);
                if let Some(&(at, value)) = script.peek() {
                    if events.len() >= at {
                        a.send(&format!(r#"{{"cmd":"SET_BS","value":{value}}}"#)).await;
                        script.next();
                    }
                }
            }
            ServerMessage::Choice { value, at_event } => choices.push((at_event, value)),
            ServerMessage::Finished { .. } => break,
            _ => {}
        }
    }
    assert_eq!(choices.len(), 3);
    // Every event carries the setting in force when it was emitted.
    for e in &events {
        let expected = choices
            .iter()
            .rev()
            .find(|(at, _)| e.pair_id >= *at)
            .is_none_or(|&(_, v)| v);
        assert_eq!(e.bs_in, expected, "pair {}", e.pair_id);
    }

    let reference = b.until_finished().await;
    let signals = |v: &[EventMessage]| -> Vec<(u64, u64, u64)> {
        v.iter()
            .map(|e| (e.pair_id, e.u_signal.to_bits(), e.t_signal_ns.to_bits()))
            .collect()
    };
    assert_eq!(signals(&events), signals(&reference));

    // Snapshots: conservation, and the ungated view ignores the toggles.
    a.send(r#"{"cmd":"SNAPSHOT"}"#).await;
    b.send(r#"{"cmd":"SNAPSHOT"}"#).await;
    let (_, sa) = a.until(|m| matches!(m, ServerMessage::Snapshot { .. })).await;
    let (_, sb) = b.until(|m| matches!(m, ServerMessage::Snapshot { .. })).await;
    let (
        ServerMessage::Snapshot {
            state,
            histograms: ha,
            choices: history,
            ..
        },
        ServerMessage::Snapshot { histograms: hb, .. },
    ) = (sa, sb)
    else {
        unreachable!()
    };
    assert_eq!(state.events, n);
    assert_eq!(ha.ungated.iter().sum::<u64>(), n);
    assert!(ha.d1.iter().zip(&ha.d2).zip(&ha.ungated).all(|((x, y), z)| x + y == *z));
    assert_eq!(ha.ungated, hb.ungated);
    assert_ne!(ha.d1, hb.d1);
    assert_eq!(history, choices);
}

#[tokio::test]
async fn two_clients_see_the_same_stream() {
    let server = start(config(8, 1500)).await;
    let (mut a, _) = Client::connect(&server).await;
    let (mut b, _) = Client::connect(&server).await;
    a.send(r#"{"cmd":"START"}"#).await;
    let ea = a.until_finished().await;
    let eb = b.until_finished().await;
    assert_eq!(ea.len(), 1500);
    assert_eq!(ea, eb);
}

#[tokio::test]
async fn malformed_commands_get_an_error_and_the_stream_continues() {
    let server = start(config(9, 1000)).await;
    let (mut c, _) = Client::connect(&server).await;
    c.send(r#"{"cmd":"START"}"#).await;
    for bad in ["SET_BS true", r#"{"cmd":"SET_BS","value":"yes"}"#, r#"{"cmd":"WARP"}"#, "{"] {
        c.send(bad).await;
    }
    let mut errors = 0;
    let mut events = 0;
    loop {
        match c.next().await {
            ServerMessage::Error { message } => {
                assert!(message.starts_with("malformed command"));
                errors += 1;
            }
            ServerMessage::Event(_) => events += 1,
            ServerMessage::Finished { state } => {
                assert_eq!(state.events, 1000);
                break;
            }
            _ => {}
        }
    }
    assert_eq!(errors, 4);
    assert_eq!(events, 1000);
}

#[tokio::test]
async fn pause_resume_reset_and_idempotent_toggle() {
    let mut cfg = config(3, 100_000);
    cfg.rate = 2000.0;
    let server = start(cfg).await;
    let (mut c, _) = Client::connect(&server).await;
    c.send(r#"{"cmd":"START"}"#).await;
    c.until(|m| matches!(m, ServerMessage::Event(e) if e.pair_id == 50)).await;
    c.send(r#"{"cmd":"PAUSE"}"#).await;
    let (_, ack) = c.until(|m| matches!(m, ServerMessage::Ack { .. })).await;
    let ServerMessage::Ack { state, .. } = ack else { unreachable!() };
    assert!(!state.running);
    // Nothing is emitted while paused.
    assert!(timeout(Duration::from_millis(200), c.lines.next_line()).await.is_err());

    c.send(r#"{"cmd":"SET_BS","value":true}"#).await;
    match c.next().await {
        ServerMessage::Ack { cmd, state } => {
            assert_eq!(cmd, "SET_BS");
            assert!(state.bs_in);
        }
        other => panic!("no-op toggle should only be acknowledged, got {other:?}"),
    }

    c.send(r#"{"cmd":"RESET","seed":42}"#).await;
    match c.next().await {
        ServerMessage::Reset { state } => assert_eq!((state.seed, state.events), (42, 0)),
        other => panic!("{other:?}"),
    }
    c.send(r#"{"cmd":"START"}"#).await;
    let (events, _) = c
        .until(|m| matches!(m, ServerMessage::Event(e) if e.pair_id == 2))
        .await;
    let log = batch(42, 3);
    assert_eq!(events[0].pair_id, 0);
    assert_eq!(events[0].u_signal, log.events[0].u_signal);
    assert_eq!(events[1].u_signal, log.events[1].u_signal);
}

#[tokio::test]
async fn overlay_curves() {
    let server = start(config(1, 10)).await;
    let (mut c, _) = Client::connect(&server).await;
    c.send(r#"{"cmd":"OVERLAY"}"#).await;
    let ServerMessage::Overlay { u, curves } = c.next().await else {
        panic!("expected overlay")
    };
    assert_eq!(curves.len(), 2);
    assert_eq!(u.first(), Some(&-5.0));
    assert_eq!(u.last(), Some(&5.0));
    for c in &curves {
        assert_eq!(c.ungated.len(), u.len());
        for i in 0..u.len() {
            assert!((c.d1[i] + c.d2[i] - c.ungated[i]).abs() < 1e-12);
        }
    }
    for i in 0..u.len() {
        assert!((curves[0].ungated[i] - curves[1].ungated[i]).abs() < 1e-12);
    }
}

#[tokio::test]
async fn binary_announces_its_address() {
    use std::io::BufRead;
    let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_qeraser"))
        .args(["serve", "--port", "0", "--rate", "1000", "--seed", "4"])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    std::io::BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr: SocketAddr = line.trim().strip_prefix("listening on ").unwrap().parse().unwrap();
    let stream = TcpStream::connect(addr).await.unwrap();
    let mut lines = BufReader::new(stream).lines();
    let hello = timeout(WAIT, lines.next_line()).await.unwrap().unwrap().unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    match serde_json::from_str(&hello).unwrap() {
        ServerMessage::Hello { state, .. } => assert_eq!(state.seed, 4),
        other => panic!("{other:?}"),
    }
}
