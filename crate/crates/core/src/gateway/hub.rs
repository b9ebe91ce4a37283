//! Session registry, device groups and turn-atomic broadcasting.

use std::collections::HashMap;
use std::sync::atomic::{AtomicI64, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use tokio::sync::mpsc;
use tracing::{debug, info};

use super::wire::{
    BotResponsePayload, ConsentPayload, ErrorCode, IdentifyPayload, MessageType,
    SessionJoinPayload, SessionOpenPayload, UtterancePayload, WireError, WireMessage,
};
use super::{render_for_channel, ChannelDescriptor, ChannelKind};
use crate::dialogue::{DialogueEngine, Session};
use crate::profile::ProfileError;
use crate::response::Response;

pub type ConnId = u64;
pub type HubError = WireError;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Manually driven clock for tests and demos.
#[derive(Debug)]
pub struct FixedClock(Mutex<DateTime<Utc>>);

impl FixedClock {
    pub fn new(at: DateTime<Utc>) -> Self {
        Self(Mutex::new(at))
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.0.lock().expect("clock lock") = at;
    }

    pub fn advance(&self, by: Duration) {
        let mut t = self.0.lock().expect("clock lock");
        *t += by;
    }
}

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock lock")
    }
}

#[derive(Debug, Clone)]
pub struct HubConfig {
    /// Maximum number of live sessions.
    pub capacity: usize,
    /// Sessions without members are evictable after this long without activity.
    pub idle_ttl: Duration,
    /// Descriptor used for sessions opened and answered over REST.
    pub rest_channel: ChannelDescriptor,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            capacity: 1000,
            idle_ttl: Duration::minutes(30),
            rest_channel: ChannelDescriptor::rest(),
        }
    }
}

struct Member {
    conn: ConnId,
    channel: ChannelDescriptor,
    tx: mpsc::UnboundedSender<WireMessage>,
}

/// A response already sent to the group, kept for replay.
#[derive(Clone)]
struct Sent {
    seq: u64,
    turn: u32,
    response: Response,
}

struct SessionState {
    session: Session,
    out_seq: u64,
    members: Vec<Member>,
    current_turn: Vec<Sent>,
}

struct SessionEntry {
    id: String,
    group_token: String,
    last_active_ms: AtomicI64,
    member_count: AtomicUsize,
    state: tokio::sync::Mutex<SessionState>,
}

impl SessionEntry {
    fn touch(&self, now: DateTime<Utc>) {
        self.last_active_ms
            .fetch_max(now.timestamp_millis(), Ordering::Relaxed);
    }

    fn idle_since(&self) -> Option<i64> {
        (self.member_count.load(Ordering::Relaxed) == 0)
            .then(|| self.last_active_ms.load(Ordering::Relaxed))
    }
}

#[derive(Default)]
struct Registry {
    sessions: HashMap<String, Arc<SessionEntry>>,
    groups: HashMap<String, String>,
}

struct ConnState {
    tx: mpsc::UnboundedSender<WireMessage>,
    session: Option<Arc<SessionEntry>>,
    channel: Option<ChannelDescriptor>,
    last_in_seq: Option<u64>,
}

/// Owns every live session and routes messages between connections and the engine.
pub struct Hub {
    engine: Arc<DialogueEngine>,
    config: HubConfig,
    clock: Arc<dyn Clock>,
    registry: Mutex<Registry>,
    conns: Mutex<HashMap<ConnId, ConnState>>,
    next_conn: AtomicU64,
}

fn mint_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn bot_message(session: &str, sent: &Sent, channel: &ChannelDescriptor) -> WireMessage {
    WireMessage::new(
        MessageType::BotResponse,
        session,
        sent.seq,
        BotResponsePayload {
            turn: sent.turn,
            skill: sent.response.skill.clone(),
            response: render_for_channel(&sent.response.payload, &channel.capabilities),
        },
    )
}

fn profile_error(e: ProfileError) -> WireError {
    match e {
        ProfileError::ConsentNotRequested => WireError::new(
            ErrorCode::ConsentNotRequested,
            "no consent request is pending in this session",
        ),
        ProfileError::ConsentAlreadyAnswered => WireError::new(
            ErrorCode::ConsentAlreadyAnswered,
            "consent was already answered in this session",
        ),
        other => WireError::new(ErrorCode::Internal, other.to_string()),
    }
}

impl Hub {
    pub fn new(engine: Arc<DialogueEngine>, config: HubConfig) -> Self {
        Self::with_clock(engine, config, Arc::new(SystemClock))
    }

    pub fn with_clock(
        engine: Arc<DialogueEngine>,
        config: HubConfig,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            engine,
            config,
            clock,
            registry: Mutex::new(Registry::default()),
            conns: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(1),
        }
    }

    pub fn engine(&self) -> &Arc<DialogueEngine> {
        &self.engine
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn session_count(&self) -> usize {
        self.registry.lock().expect("registry lock").sessions.len()
    }

    /// Registers a connection; outbound messages arrive on the returned receiver.
    pub fn attach(&self) -> (ConnId, mpsc::UnboundedReceiver<WireMessage>) {
        let id = self.next_conn.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::unbounded_channel();
        self.conns.lock().expect("conn lock").insert(
            id,
            ConnState {
                tx,
                session: None,
                channel: None,
                last_in_seq: None,
            },
        );
        (id, rx)
    }

    /// Drops a connection. Its session stays open for reconnects until it idles out.
    pub async fn detach(&self, conn: ConnId) {
        let Some(state) = self.conns.lock().expect("conn lock").remove(&conn) else {
            return;
        };
        if let Some(entry) = state.session {
            let mut st = entry.state.lock().await;
            st.members.retain(|m| m.conn != conn);
            entry
                .member_count
                .store(st.members.len(), Ordering::Relaxed);
            st.session.display_attached = st
                .members
                .iter()
                .any(|m| m.channel.channel_kind == ChannelKind::Screen);
            entry.touch(self.clock.now());
        }
    }

    /// Opens a session, evicting idle ones if at capacity.
    pub fn open_session(&self, channel: ChannelDescriptor) -> Result<(String, String), WireError> {
        let now = self.clock.now();
        let mut reg = self.registry.lock().expect("registry lock");
        if reg.sessions.len() >= self.config.capacity {
            self.evict_idle(&mut reg, now);
        }
        if reg.sessions.len() >= self.config.capacity {
            let ttl_ms = self.config.idle_ttl.num_milliseconds();
            let retry = reg
                .sessions
                .values()
                .filter_map(|e| e.idle_since())
                .map(|since| since + ttl_ms - now.timestamp_millis())
                .min()
                .unwrap_or(ttl_ms)
                .max(1000);
            let mut err = WireError::new(
                ErrorCode::Capacity,
                "server is at session capacity, retry later",
            );
            err.retry_after_ms = Some(retry as u64);
            return Err(err);
        }
        let session = self.engine.new_session(channel);
        let id = session.id.clone();
        let token = mint_token();
        let entry = Arc::new(SessionEntry {
            id: id.clone(),
            group_token: token.clone(),
            last_active_ms: AtomicI64::new(now.timestamp_millis()),
            member_count: AtomicUsize::new(0),
            state: tokio::sync::Mutex::new(SessionState {
                session,
                out_seq: 0,
                members: Vec::new(),
                current_turn: Vec::new(),
            }),
        });
        reg.groups.insert(token.clone(), id.clone());
        reg.sessions.insert(id.clone(), entry);
        info!(session = %id, channel = ?channel.channel_kind, "session opened");
        Ok((id, token))
    }

    fn evict_idle(&self, reg: &mut Registry, now: DateTime<Utc>) {
        let cutoff = (now - self.config.idle_ttl).timestamp_millis();
        let stale: Vec<(String, String)> = reg
            .sessions
            .values()
            .filter(|e| e.idle_since().is_some_and(|t| t <= cutoff))
            .map(|e| (e.id.clone(), e.group_token.clone()))
            .collect();
        for (id, token) in stale {
            debug!(session = %id, "evicting idle session");
            reg.sessions.remove(&id);
            reg.groups.remove(&token);
        }
    }

    /// Evicts every idle session past its TTL; returns how many were removed.
    pub fn sweep(&self) -> usize {
        let mut reg = self.registry.lock().expect("registry lock");
        let before = reg.sessions.len();
        self.evict_idle(&mut reg, self.clock.now());
        before - reg.sessions.len()
    }

    fn entry(&self, id: &str) -> Option<Arc<SessionEntry>> {
        self.registry
            .lock()
            .expect("registry lock")
            .sessions
            .get(id)
            .cloned()
    }

    /// Read access to a live session.
    pub async fn inspect<R>(&self, id: &str, f: impl FnOnce(&Session) -> R) -> Option<R> {
        let entry = self.entry(id)?;
        let st = entry.state.lock().await;
        Some(f(&st.session))
    }

    /// One REST turn. Opens a session when `session` is absent. Members of the
    /// session's device group receive the same responses.
    pub async fn rest_message(
        &self,
        session: Option<&str>,
        text: &str,
    ) -> Result<(String, Vec<Response>), WireError> {
        let id = match session {
            Some(id) => id.to_string(),
            None => self.open_session(self.config.rest_channel)?.0,
        };
        let entry = self.entry(&id).ok_or_else(|| {
            WireError::new(ErrorCode::UnknownSession, format!("unknown session `{id}`"))
        })?;
        let sent = self
            .run_turn(&entry, |engine, s, now| {
                Ok(engine.handle_message(s, text, now))
            })
            .await?;
        Ok((id, sent.into_iter().map(|s| s.response).collect()))
    }

    /// Runs one engine call under the session lock and broadcasts its output
    /// before releasing the lock, so members never see two turns interleave.
    async fn run_turn<F>(&self, entry: &SessionEntry, f: F) -> Result<Vec<Sent>, WireError>
    where
        F: FnOnce(&DialogueEngine, &mut Session, DateTime<Utc>) -> Result<Vec<Response>, WireError>,
    {
        let mut st = entry.state.lock().await;
        let now = self.clock.now();
        let responses = f(&self.engine, &mut st.session, now)?;
        entry.touch(now);
        let turn = st.session.turn_count();
        if st.current_turn.first().is_some_and(|s| s.turn != turn) {
            st.current_turn.clear();
        }
        let mut sent = Vec::with_capacity(responses.len());
        for response in responses {
            st.out_seq += 1;
            sent.push(Sent {
                seq: st.out_seq,
                turn,
                response,
            });
        }
        st.current_turn.extend(sent.iter().cloned());
        for m in &st.members {
            for s in &sent {
                let _ = m.tx.send(bot_message(&entry.id, s, &m.channel));
            }
        }
        Ok(sent)
    }

    /// Parses and routes one text frame from a connection.
    pub async fn handle_text(&self, conn: ConnId, text: &str) {
        match WireMessage::parse(text) {
            Ok(msg) => self.route_inbound(conn, msg).await,
            Err(e) => self.reply_error(conn, "", &e),
        }
    }

    fn reply(&self, conn: ConnId, msg: WireMessage) {
        if let Some(c) = self.conns.lock().expect("conn lock").get(&conn) {
            let _ = c.tx.send(msg);
        }
    }

    /// Connection-local replies use seq 0 and sit outside the session stream.
    fn reply_error(&self, conn: ConnId, session: &str, err: &WireError) {
        debug!(conn, error = %err, "protocol error");
        self.reply(conn, WireMessage::error(session, 0, err));
    }

    pub async fn route_inbound(&self, conn: ConnId, msg: WireMessage) {
        let bound = {
            let mut conns = self.conns.lock().expect("conn lock");
            let Some(c) = conns.get_mut(&conn) else {
                return;
            };
            if c.last_in_seq.is_some_and(|last| msg.seq <= last) {
                let err = WireError::new(
                    ErrorCode::OutOfOrder,
                    format!(
                        "seq {} not greater than {}",
                        msg.seq,
                        c.last_in_seq.unwrap_or(0)
                    ),
                );
                let _ = c.tx.send(WireMessage::error(msg.session.clone(), 0, &err));
                return;
            }
            c.last_in_seq = Some(msg.seq);
            c.session.clone().zip(c.channel)
        };
        let session_label = bound
            .as_ref()
            .map(|(e, _)| e.id.clone())
            .unwrap_or_default();
        if let Err(e) = self.dispatch(conn, msg, bound).await {
            self.reply_error(conn, &session_label, &e);
        }
    }

    async fn dispatch(
        &self,
        conn: ConnId,
        msg: WireMessage,
        bound: Option<(Arc<SessionEntry>, ChannelDescriptor)>,
    ) -> Result<(), WireError> {
        match msg.kind {
            MessageType::Hello => {
                self.reply(
                    conn,
                    WireMessage::new(
                        MessageType::Hello,
                        "",
                        0,
                        serde_json::json!({"server": "concierge", "version": env!("CARGO_PKG_VERSION")}),
                    ),
                );
                Ok(())
            }
            MessageType::Ping => {
                self.reply(
                    conn,
                    WireMessage::new(MessageType::Pong, msg.session, 0, msg.payload),
                );
                Ok(())
            }
            MessageType::SessionOpen => {
                if bound.is_some() {
                    return Err(WireError::new(
                        ErrorCode::AlreadyInSession,
                        "connection already joined a session",
                    ));
                }
                let p: SessionOpenPayload = msg.payload_as()?;
                let channel = ChannelDescriptor::for_kind(p.channel);
                let (id, token) = self.open_session(channel)?;
                let entry = self.entry(&id).expect("just opened");
                self.bind(conn, &entry, channel, false).await?;
                self.reply(
                    conn,
                    WireMessage::new(
                        MessageType::SessionOpen,
                        id.clone(),
                        0,
                        serde_json::json!({"session": id, "group_token": token}),
                    ),
                );
                Ok(())
            }
            MessageType::SessionJoin => {
                if bound.is_some() {
                    return Err(WireError::new(
                        ErrorCode::AlreadyInSession,
                        "connection already joined a session",
                    ));
                }
                let p: SessionJoinPayload = msg.payload_as()?;
                let id = self
                    .registry
                    .lock()
                    .expect("registry lock")
                    .groups
                    .get(&p.group_token)
                    .cloned()
                    .ok_or_else(|| {
                        WireError::new(ErrorCode::UnknownGroup, "unknown or expired group token")
                    })?;
                let entry = self.entry(&id).ok_or_else(|| {
                    WireError::new(ErrorCode::UnknownGroup, "unknown or expired group token")
                })?;
                self.bind(conn, &entry, ChannelDescriptor::for_kind(p.channel), true)
                    .await
            }
            MessageType::UserUtterance => {
                let (entry, channel) = self.require_bound(&msg, bound)?;
                if channel.capabilities.display_only {
                    return Err(WireError::new(
                        ErrorCode::DisplayOnly,
                        "display-only channels cannot send utterances",
                    ));
                }
                let p: UtterancePayload = msg.payload_as()?;
                self.run_turn(&entry, |engine, s, now| {
                    Ok(engine.handle_message(s, &p.text, now))
                })
                .await
                .map(drop)
            }
            MessageType::Identify => {
                let (entry, _) = self.require_bound(&msg, bound)?;
                let p: IdentifyPayload = msg.payload_as()?;
                self.run_turn(&entry, |engine, s, now| {
                    Ok(engine.handle_identify(s, p.token.as_deref(), now))
                })
                .await
                .map(drop)
            }
            MessageType::Consent => {
                let (entry, _) = self.require_bound(&msg, bound)?;
                let p: ConsentPayload = msg.payload_as()?;
                self.run_turn(&entry, |engine, s, now| {
                    engine
                        .handle_consent(s, p.decision, now)
                        .map_err(profile_error)
                })
                .await
                .map(drop)
            }
            MessageType::BotResponse | MessageType::Error | MessageType::Pong => {
                Err(WireError::new(
                    ErrorCode::UnexpectedType,
                    format!("{:?} is server-to-client only", msg.kind),
                ))
            }
        }
    }

    fn require_bound(
        &self,
        msg: &WireMessage,
        bound: Option<(Arc<SessionEntry>, ChannelDescriptor)>,
    ) -> Result<(Arc<SessionEntry>, ChannelDescriptor), WireError> {
        match bound {
            Some((entry, channel)) => {
                if !msg.session.is_empty() && msg.session != entry.id {
                    return Err(WireError::new(
                        ErrorCode::UnknownSession,
                        format!(
                            "connection is bound to another session than `{}`",
                            msg.session
                        ),
                    ));
                }
                Ok((entry, channel))
            }
            None if self.entry(&msg.session).is_some() => Err(WireError::new(
                ErrorCode::NotInSession,
                "join the session with its group token first",
            )),
            None => Err(WireError::new(
                ErrorCode::UnknownSession,
                format!("unknown session `{}`", msg.session),
            )),
        }
    }

    /// Adds the connection to the session's device group and replays the current turn.
    async fn bind(
        &self,
        conn: ConnId,
        entry: &Arc<SessionEntry>,
        channel: ChannelDescriptor,
        joining: bool,
    ) -> Result<(), WireError> {
        let tx = {
            let conns = self.conns.lock().expect("conn lock");
            conns.get(&conn).map(|c| c.tx.clone())
        };
        let Some(tx) = tx else {
            return Ok(());
        };
        let mut st = entry.state.lock().await;
        let unique = matches!(
            channel.channel_kind,
            ChannelKind::Robot | ChannelKind::Screen
        );
        if unique
            && st
                .members
                .iter()
                .any(|m| m.channel.channel_kind == channel.channel_kind)
        {
            return Err(WireError::new(
                ErrorCode::GroupFull,
                format!("group already has a {:?} member", channel.channel_kind),
            ));
        }
        st.members.push(Member {
            conn,
            channel,
            tx: tx.clone(),
        });
        entry
            .member_count
            .store(st.members.len(), Ordering::Relaxed);
        if channel.channel_kind == ChannelKind::Screen {
            st.session.display_attached = true;
        }
        entry.touch(self.clock.now());
        if let Some(c) = self.conns.lock().expect("conn lock").get_mut(&conn) {
            c.session = Some(entry.clone());
            c.channel = Some(channel);
        }
        if joining {
            let _ = tx.send(WireMessage::new(
                MessageType::SessionJoin,
                entry.id.clone(),
                0,
                serde_json::json!({"session": entry.id}),
            ));
            for s in &st.current_turn {
                let _ = tx.send(bot_message(&entry.id, s, &channel));
            }
        }
        Ok(())
    }
}
