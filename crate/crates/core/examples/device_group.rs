//! A robot and a wall screen share one conversation over the websocket API.
//!
//! Starts the server on an ephemeral port, opens a session from the robot,
//! joins the screen with the group token and prints what each device receives.

use std::sync::Arc;
use std::time::Duration;

use concierge::assistant::{AssistantData, POI_SMALL};
use concierge::gateway::{serve, AppState, FixedClock, Hub, HubConfig};
use concierge::logstore::LogStore;
use concierge::nlu::DEFAULT_THRESHOLD;
use concierge::profile::ProfileStore;
use concierge::skill_poi::load_catalog;
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Device {
    name: &'static str,
    ws: Socket,
    seq: u64,
}

impl Device {
    async fn connect(name: &'static str, addr: std::net::SocketAddr) -> Self {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws"))
            .await
            .unwrap();
        Self { name, ws, seq: 0 }
    }

    async fn send(&mut self, kind: &str, session: &str, payload: Value) {
        self.seq += 1;
        let msg =
            json!({"v": 1, "type": kind, "session": session, "seq": self.seq, "payload": payload});
        self.ws.send(Message::text(msg.to_string())).await.unwrap();
    }

    /// Frames that arrive before the connection goes quiet.
    async fn receive(&mut self) -> Vec<Value> {
        let mut frames = Vec::new();
        while let Ok(Some(Ok(msg))) =
            tokio::time::timeout(Duration::from_millis(200), self.ws.next()).await
        {
            if let Message::Text(t) = msg {
                frames.push(serde_json::from_str(t.as_str()).unwrap());
            }
        }
        frames
    }

    async fn show(&mut self) -> Vec<Value> {
        let frames = self.receive().await;
        for f in &frames {
            let detail = match f["type"].as_str() {
                Some("bot_response") => format!("seq {} {}", f["seq"], f["payload"]["response"]),
                _ => f["payload"].to_string(),
            };
            println!(
                "  {:<6} <- {} {detail}",
                self.name,
                f["type"].as_str().unwrap_or("?")
            );
        }
        frames
    }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = AssistantData::seed().with_catalog(load_catalog(POI_SMALL)?);
    let engine = data.build_engine(
        DEFAULT_THRESHOLD,
        Arc::new(ProfileStore::in_memory()),
        Arc::new(LogStore::in_memory()),
    )?;
    let clock = Arc::new(FixedClock::new("2022-04-11T08:00:00Z".parse()?));
    let state = AppState {
        hub: Arc::new(Hub::with_clock(
            Arc::new(engine),
            HubConfig::default(),
            clock,
        )),
        admin_token: None,
        web_dir: None,
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(serve(listener, state, std::future::pending()));

    let mut robot = Device::connect("robot", addr).await;
    robot
        .send("session_open", "", json!({"channel": "robot"}))
        .await;
    let ack = robot
        .show()
        .await
        .into_iter()
        .find(|f| f["type"] == "session_open")
        .unwrap();
    let session = ack["payload"]["session"].as_str().unwrap().to_string();
    let token = ack["payload"]["group_token"].as_str().unwrap().to_string();

    let mut screen = Device::connect("screen", addr).await;
    screen
        .send(
            "session_join",
            "",
            json!({"group_token": token, "channel": "screen"}),
        )
        .await;
    screen.show().await;

    for line in [
        "Hello",
        "Do you know of any good Indian restaurants?",
        "no",
        "yes",
        "How do I get there?",
    ] {
        println!("robot  -> {line:?}");
        robot
            .send("user_utterance", &session, json!({"text": line}))
            .await;
        robot.show().await;
        screen.show().await;
    }

    println!("screen -> \"hello\" (display-only devices cannot speak)");
    screen
        .send("user_utterance", &session, json!({"text": "hello"}))
        .await;
    screen.show().await;
    Ok(())
}
