//! WebSocket endpoint, run on its own thread. It reads only the hub's view
//! and outbound queue and writes only to the control channel.

use std::collections::HashSet;
use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::Sender;
use log::{debug, info, warn};
use tungstenite::{Message, WebSocket};

use crate::bridge::Hub;
use crate::protocol::{ClientMessage, RunState, ServerMessage};

pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Server {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(addr: &str, hub: Arc<Hub>, control: Sender<ClientMessage>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::Builder::new()
            .name("console-link".into())
            .spawn(move || Link { hub, control, seen: HashSet::new(), clients: Vec::new() }.run(listener, &flag))?;
        Ok(Self { addr, stop, handle: Some(handle) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Delivers queued messages, closes every connection and joins the thread.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

type Client = WebSocket<TcpStream>;

struct Link {
    hub: Arc<Hub>,
    control: Sender<ClientMessage>,
    seen: HashSet<u64>,
    clients: Vec<Client>,
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if io.kind() == ErrorKind::WouldBlock)
}

/// Sends `text`; `false` when the connection is gone.
fn send(ws: &mut Client, text: &str) -> bool {
    match ws.send(Message::text(text)) {
        Ok(()) => true,
        Err(e) => would_block(&e),
    }
}

fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

impl Link {
    fn run(mut self, listener: TcpListener, stop: &AtomicBool) {
        loop {
            let mut busy = self.accept(&listener);
            busy |= self.read_clients();
            let out = self.hub.outbound.drain();
            busy |= !out.is_empty();
            for msg in &out {
                let text = encode(msg);
                self.clients.retain_mut(|c| send(c, &text));
            }
            self.clients.retain_mut(|c| match c.flush() {
                Ok(()) => true,
                Err(e) => would_block(&e),
            });
            if stop.load(Ordering::SeqCst) && self.hub.outbound.is_empty() {
                break;
            }
            if !busy {
                std::thread::sleep(Duration::from_millis(2));
            }
        }
        for mut c in self.clients.drain(..) {
            let _ = c.close(None);
            for _ in 0..50 {
                match c.flush() {
                    Err(e) if would_block(&e) => std::thread::sleep(Duration::from_millis(2)),
                    _ => break,
                }
            }
        }
    }

    fn accept(&mut self, listener: &TcpListener) -> bool {
        match listener.accept() {
            Ok((stream, peer)) => {
                let handshake = stream.set_nonblocking(false).map_err(tungstenite::Error::Io).and_then(|()| {
                    stream.set_read_timeout(Some(Duration::from_secs(5))).map_err(tungstenite::Error::Io)?;
                    tungstenite::accept(stream).map_err(|e| match e {
                        tungstenite::HandshakeError::Failure(e) => e,
                        tungstenite::HandshakeError::Interrupted(_) => {
                            tungstenite::Error::Io(io::Error::new(ErrorKind::TimedOut, "handshake interrupted"))
                        }
                    })
                });
                match handshake {
                    Ok(mut ws) => {
                        if ws.get_mut().set_nonblocking(true).is_ok() && send(&mut ws, &encode(&self.hub.hello())) {
                            info!("console connected from {peer}");
                            self.clients.push(ws);
                        }
                    }
                    Err(e) => warn!("console handshake with {peer} failed: {e}"),
                }
                true
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => false,
            Err(e) => {
                warn!("accept failed: {e}");
                false
            }
        }
    }

    fn read_clients(&mut self) -> bool {
        let mut busy = false;
        let mut clients = std::mem::take(&mut self.clients);
        clients.retain_mut(|ws| loop {
            match ws.read() {
                Ok(Message::Text(text)) => {
                    busy = true;
                    let reply = match serde_json::from_str::<ClientMessage>(text.as_str()) {
                        Ok(msg) => self.handle(msg),
                        Err(e) => ServerMessage::Error { message: format!("unreadable message: {e}") },
                    };
                    if !send(ws, &encode(&reply)) {
                        break false;
                    }
                }
                Ok(Message::Close(_)) => break false,
                Ok(_) => busy = true,
                Err(e) if would_block(&e) => break true,
                Err(e) => {
                    debug!("console dropped: {e}");
                    break false;
                }
            }
        });
        self.clients = clients;
        busy
    }

    /// Reply to one console message; accepted control messages are forwarded
    /// to the trainer in arrival order.
    fn handle(&mut self, msg: ClientMessage) -> ServerMessage {
        let id = msg.id();
        let ack = |accepted: bool, duplicate: bool, reason: Option<&str>| ServerMessage::Ack {
            id,
            accepted,
            duplicate,
            reason: reason.map(str::to_owned),
        };
        if let ClientMessage::GetHistory { .. } = msg {
            return ServerMessage::History { id, records: self.hub.view().history };
        }
        if self.hub.read_only {
            return ack(false, false, Some("read-only: this experiment is driven by the automatic oracle"));
        }
        if self.seen.contains(&id) {
            return ack(true, true, None);
        }
        let view = self.hub.view();
        if matches!(msg, ClientMessage::Intervene { .. }) && view.state != RunState::Running {
            return ack(false, false, Some("no episode is running"));
        }
        if view.state == RunState::Finished {
            return ack(false, false, Some("the experiment has finished"));
        }
        self.seen.insert(id);
        if self.control.send(msg).is_err() {
            return ack(false, false, Some("the trainer has stopped"));
        }
        ack(true, false, None)
    }
}
