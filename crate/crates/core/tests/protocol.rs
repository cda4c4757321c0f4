use instructdrive_core::goal::Category;
use instructdrive_core::log::{EndReason, Event, TrajectoryLog};
use instructdrive_core::protocol::server::{serve, ServeConfig};
use instructdrive_core::protocol::{encode, AgentMessage, EnvMessage, ExternChannel, PROTOCOL_VERSION};
use instructdrive_core::scenario::{generate_scenario, Density, MapKind, Scenario};
use instructdrive_core::{run_episode, Driver, EpisodeOptions};
use serde_json::{json, Value as Json};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::thread::JoinHandle;
use tungstenite::Message;

fn scenario(seed: u64) -> Scenario {
    generate_scenario(Category::Speed, MapKind::Highway, Density::Low, seed).unwrap()
}

fn options() -> EpisodeOptions {
    let mut o = EpisodeOptions::default();
    o.eval.t_limit = 5.0;
    o
}

fn start(dir: &Path, scenarios: Vec<Scenario>, connections: usize) -> (u16, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let config = ServeConfig {
        scenarios,
        options: options(),
        out: Some(dir.join("out")),
        feedback_path: dir.join("feedback.jsonl"),
        ui_dir: Some(dir.join("ui")),
    };
    let h = std::thread::spawn(move || serve(listener, config, Some(connections)).unwrap());
    (port, h)
}

fn text(ws: &mut tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>) -> Json {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Close(_) => panic!("closed early"),
            _ => continue,
        }
    }
}

fn send(ws: &mut tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>, msg: Json) {
    ws.send(Message::Text(msg.to_string())).unwrap();
}

#[test]
fn websocket_agent_episode_with_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let wanted = scenario(21);
    let (port, server) = start(dir.path(), vec![scenario(20), wanted.clone()], 1);
    let (mut ws, _) = tungstenite::connect(format!("ws://127.0.0.1:{port}/agent?scenario={}", wanted.id)).unwrap();

    let hello = text(&mut ws);
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["protocol_version"], PROTOCOL_VERSION);
    assert_eq!(hello["scenario_id"], wanted.id.as_str());
    assert!(hello["map"].is_object(), "ui needs the map");
    let prompt = text(&mut ws);
    assert_eq!(prompt["type"], "prompt");
    assert!(prompt["api_docs"].as_str().unwrap().contains("def get_ego_vehicle"));

    send(&mut ws, json!({"type": "call", "id": 1, "fn": "get_target_speed", "args": []}));
    let r = text(&mut ws);
    assert_eq!(r["type"], "result");
    assert_eq!(r["id"], 1);
    assert!(r["value"].is_number(), "{r}");

    send(&mut ws, json!({"type": "call", "id": 2, "fn": "get_speed_of", "args": [{"vehicle": 999}]}));
    let r = text(&mut ws);
    assert_eq!(r["id"], 2);
    assert!(r["error"].is_object(), "{r}");

    send(&mut ws, json!({"type": "yield_step"}));
    let st = text(&mut ws);
    assert_eq!(st["type"], "stepped");
    assert_eq!(st["done"], false);
    assert!((st["time"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(st["snapshot"]["vehicles"].is_array(), "{st}");

    send(&mut ws, json!({"type": "finish"}));
    let end = text(&mut ws);
    assert_eq!(end["type"], "episode_end");
    assert_eq!(end["reason"], "time_limit");
    assert!(end["result"].is_object());
    drop(ws);
    server.join().unwrap();

    let out: Vec<_> = std::fs::read_dir(dir.path().join("out")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(out.len(), 2);
    let log_path = out.iter().find(|p| p.to_string_lossy().ends_with(".log.jsonl")).unwrap();
    let log = TrajectoryLog::read(log_path).unwrap();
    assert_eq!(log.scenario_id(), Some(wanted.id.as_str()));
    assert_eq!(log.events().filter(|(_, e)| matches!(e, Event::Call { .. })).count(), 2);
}

#[test]
fn feedback_socket_acks_and_appends() {
    let dir = tempfile::tempdir().unwrap();
    let (port, server) = start(dir.path(), vec![scenario(22)], 1);
    let (mut ws, _) = tungstenite::connect(format!("ws://127.0.0.1:{port}/feedback")).unwrap();
    send(&mut ws, json!({"type": "feedback", "scenario_id": "x", "rating": 4}));
    assert_eq!(text(&mut ws), json!({"type": "ack"}));
    ws.send(Message::Text("{not json".into())).unwrap();
    let err = text(&mut ws);
    assert_eq!(err["type"], "error");
    assert!(err["reason"].is_string());
    send(&mut ws, json!({"type": "takeover", "time": 3.5}));
    assert_eq!(text(&mut ws)["type"], "ack");
    ws.close(None).unwrap();
    let _ = ws.read();
    server.join().unwrap();

    let lines: Vec<Json> = std::fs::read_to_string(dir.path().join("feedback.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["rating"], 4);
    assert_eq!(lines[1]["type"], "takeover");
}

fn http_get(port: u16, path: &str) -> (String, String) {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let (head, body) = resp.split_once("\r\n\r\n").unwrap();
    (head.to_string(), body.to_string())
}

#[test]
fn static_assets_are_served_from_the_ui_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("ui")).unwrap();
    std::fs::write(dir.path().join("ui/index.html"), "<html>ui</html>").unwrap();
    std::fs::write(dir.path().join("ui/app.js"), "run()").unwrap();
    std::fs::write(dir.path().join("secret.txt"), "no").unwrap();
    let (port, server) = start(dir.path(), vec![scenario(23)], 4);

    let (head, body) = http_get(port, "/");
    assert!(head.starts_with("HTTP/1.1 200"));
    assert!(head.contains("text/html"));
    assert_eq!(body, "<html>ui</html>");
    let (head, _) = http_get(port, "/app.js?v=2");
    assert!(head.contains("text/javascript"), "{head}");
    assert!(http_get(port, "/missing.css").0.starts_with("HTTP/1.1 404"));
    assert!(http_get(port, "/../secret.txt").0.starts_with("HTTP/1.1 404"));
    server.join().unwrap();
}

#[test]
fn plain_tcp_agent_gets_the_line_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let (port, server) = start(dir.path(), vec![scenario(24)], 1);
    let stream = TcpStream::connect(("127.0.0.1", port)).unwrap();
    let mut w = stream.try_clone().unwrap();
    let mut lines = BufReader::new(stream).lines();
    let mut next = || serde_json::from_str::<EnvMessage>(&lines.next().unwrap().unwrap()).unwrap();
    assert!(matches!(next(), EnvMessage::Hello { .. }));
    assert!(matches!(next(), EnvMessage::Prompt { .. }));
    writeln!(w, "{}", encode(&AgentMessage::YieldStep)).unwrap();
    match next() {
        EnvMessage::Stepped { snapshot, time, .. } => {
            assert!(snapshot.is_none(), "snapshots are for the ui only");
            assert!((time - 1.0).abs() < 1e-9);
        }
        m => panic!("{m:?}"),
    }
    writeln!(w, "{}", encode(&AgentMessage::Finish)).unwrap();
    assert!(matches!(next(), EnvMessage::EpisodeEnd { reason: EndReason::TimeLimit, .. }));
    server.join().unwrap();
}

#[test]
fn extern_process_agent() {
    // a shell agent: skip the handshake, yield once, then bail out
    let agent = r#"read a; read b; echo '{"type":"call","id":1,"fn":"get_ego_vehicle","args":[]}'; read r;
echo '{"type":"yield_step"}'; read s; echo '{"type":"error","reason":"shell agent done"}'; cat > /dev/null"#;
    let mut channel = ExternChannel::spawn(agent).unwrap();
    let out = run_episode(&scenario(25), Driver::Agent(&mut channel), &options()).unwrap();
    drop(channel);
    let reasons: Vec<_> = out
        .log
        .events()
        .filter_map(|(_, e)| match e {
            Event::FallbackEngaged { reason } => Some(reason.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(reasons, ["shell agent done"]);
    assert_eq!(out.log.events().filter(|(_, e)| matches!(e, Event::Call { .. })).count(), 1);
}

#[test]
fn extern_agent_that_cannot_start_is_a_disconnect() {
    let mut channel = ExternChannel::spawn("exit 3").unwrap();
    let out = run_episode(&scenario(26), Driver::Agent(&mut channel), &options()).unwrap();
    assert!(out
        .log
        .events()
        .any(|(_, e)| *e == Event::FallbackEngaged { reason: "disconnect".into() }));
}
