#![allow(dead_code)]

use std::collections::VecDeque;
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use lanerl::protocol::{ClientMessage, ServerMessage};
use lanerl_core::config::{ExperimentConfig, Representation};
use tungstenite::{Message, WebSocket};

/// Few-second experiments: tiny camera and networks, short episodes.
pub fn tiny(representation: Representation, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.name = "tiny".into();
    cfg.env.camera.width = 16;
    cfg.env.camera.height = 16;
    cfg.env.max_steps = 40;
    cfg.agent.conv_layers = 2;
    cfg.agent.conv_features = 3;
    cfg.agent.batch_size = 8;
    cfg.agent.opt_steps_per_episode = 3;
    cfg.agent.replay_capacity = 300;
    cfg.vae.conv_layers = 2;
    cfg.vae.conv_features = 3;
    cfg.vae.latent_dim = 4;
    cfg.trainer.representation = representation;
    cfg.trainer.exploration_episodes = 1;
    cfg.trainer.train_episodes = 3;
    cfg.trainer.seed = seed;
    cfg.service.realtime = false;
    cfg
}

/// Minimal console: JSON over a blocking WebSocket with a read timeout.
pub struct Console {
    ws: WebSocket<TcpStream>,
    /// Messages passed over while waiting for an acknowledgement.
    backlog: VecDeque<ServerMessage>,
    pub seen: Vec<ServerMessage>,
}

impl Console {
    pub fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).expect("connect");
        stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
        let (ws, _) = tungstenite::client(format!("ws://{addr}/"), stream).expect("handshake");
        Self { ws, backlog: VecDeque::new(), seen: Vec::new() }
    }

    pub fn send(&mut self, msg: &ClientMessage) {
        self.ws.send(Message::text(serde_json::to_string(msg).unwrap())).unwrap();
    }

    pub fn recv(&mut self) -> ServerMessage {
        if let Some(msg) = self.backlog.pop_front() {
            return msg;
        }
        self.read()
    }

    fn read(&mut self) -> ServerMessage {
        loop {
            match self.ws.read().expect("server message within 30 s") {
                Message::Text(t) => {
                    let msg: ServerMessage = serde_json::from_str(t.as_str()).expect("valid server message");
                    self.seen.push(msg.clone());
                    return msg;
                }
                Message::Close(_) => panic!("server closed the connection"),
                _ => {}
            }
        }
    }

    /// Reads until `pick` returns a value.
    pub fn until<T>(&mut self, mut pick: impl FnMut(&ServerMessage) -> Option<T>) -> T {
        loop {
            let msg = self.recv();
            if let Some(v) = pick(&msg) {
                return v;
            }
        }
    }

    /// Sends and waits for the acknowledgement of `msg`'s id. Other messages
    /// stay queued for [`Console::recv`].
    pub fn request(&mut self, msg: ClientMessage) -> (bool, bool, Option<String>) {
        self.send(&msg);
        let id = msg.id();
        loop {
            match self.read() {
                ServerMessage::Ack { id: a, accepted, duplicate, reason } if a == id => return (accepted, duplicate, reason),
                other => self.backlog.push_back(other),
            }
        }
    }
}
