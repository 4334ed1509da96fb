use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use super::wire::{self, Message, WireObs, WIRE_EGO_FOV_DEG};
use super::{BlindModel, BlindSession, ModelError, ModelInfo, RolloutContext, WorldModelConfig};
use crate::action_api::{ControlInput, ControlKind};
use crate::render::{Observation, ViewKind};
use crate::scene::Pose;

/// A child process speaking the wire protocol. Requests are strictly
/// sequential; after any transport-level failure the client refuses further
/// requests because replies could no longer be matched to requests.
pub struct RemoteClient {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    control_kind: ControlKind,
    observation_kind: ViewKind,
    broken: bool,
}

impl RemoteClient {
    /// Spawns `command` and performs the hello handshake.
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, ModelError> {
        let (prog, args) = command.split_first().ok_or_else(|| ModelError::Config("empty command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelError::Transport(format!("spawn {prog}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut client = Self {
            child,
            stdin,
            lines: rx,
            timeout,
            control_kind: ControlKind::Text,
            observation_kind: ViewKind::Ego,
            broken: false,
        };
        match client.exchange(&Message::Hello { control_kind: None, observation_kind: None })? {
            Message::Hello { control_kind: Some(c), observation_kind: Some(o) } => {
                client.control_kind = c;
                client.observation_kind = o.into();
                Ok(client)
            }
            Message::Error { msg } => Err(ModelError::Remote(msg)),
            other => Err(ModelError::Malformed(format!("expected hello reply, got {other:?}"))),
        }
    }

    pub fn control_kind(&self) -> ControlKind {
        self.control_kind
    }

    pub fn observation_kind(&self) -> ViewKind {
        self.observation_kind
    }

    fn exchange(&mut self, msg: &Message) -> Result<Message, ModelError> {
        if self.broken {
            return Err(ModelError::Transport("endpoint unusable after an earlier failure".into()));
        }
        let result = self.exchange_inner(msg);
        if matches!(
            result,
            Err(ModelError::Timeout(_) | ModelError::Transport(_) | ModelError::Malformed(_) | ModelError::Version { .. })
        ) {
            self.broken = true;
        }
        result
    }

    fn exchange_inner(&mut self, msg: &Message) -> Result<Message, ModelError> {
        writeln!(self.stdin, "{}", wire::encode(msg))
            .and_then(|_| self.stdin.flush())
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => wire::decode(&line),
            Ok(Err(e)) => Err(ModelError::Transport(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(ModelError::Timeout(self.timeout.as_secs_f64())),
            Err(RecvTimeoutError::Disconnected) => Err(ModelError::Transport("endpoint closed its output".into())),
        }
    }

    /// Sends one rollout request and validates the reply's frame count.
    pub fn rollout(
        &mut self,
        obs: &Observation,
        control: &ControlInput,
        horizon: usize,
        seed: u64,
    ) -> Result<Vec<Observation>, ModelError> {
        let req = Message::Rollout { obs: WireObs::from_obs(obs), control: control.clone(), horizon, seed };
        match self.exchange(&req)? {
            Message::Frames { frames } => {
                if frames.len() != horizon {
                    return Err(ModelError::FrameCount { expected: horizon, got: frames.len() });
                }
                let fov = if obs.kind == ViewKind::Ego { obs.fov_deg } else { WIRE_EGO_FOV_DEG };
                frames.into_iter().map(|f| f.into_obs(fov)).collect()
            }
            Message::Error { msg } => Err(ModelError::Remote(msg)),
            other => Err(ModelError::Malformed(format!("expected frames, got {other:?}"))),
        }
    }
}

impl Drop for RemoteClient {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Blind model delegating to a [`RemoteClient`]. Sessions share the client.
pub struct RemoteModel {
    info: ModelInfo,
    client: Mutex<RemoteClient>,
}

impl RemoteModel {
    pub fn new(client: RemoteClient, config: &WorldModelConfig) -> Self {
        let name = match &config.variant {
            super::Variant::Remote { command, .. } => format!("remote({})", command.join(" ")),
            _ => "remote".into(),
        };
        let info = ModelInfo {
            name,
            control_kind: client.control_kind(),
            observation_kind: client.observation_kind(),
            width: config.width,
            fov_deg: config.fov_deg,
            vocab: config.vocab.clone(),
        };
        Self { info, client: Mutex::new(client) }
    }
}

struct RemoteSession<'a> {
    model: &'a RemoteModel,
}

impl BlindModel for RemoteModel {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn session(&self) -> Result<Box<dyn BlindSession + '_>, ModelError> {
        Ok(Box::new(RemoteSession { model: self }))
    }
}

impl BlindSession for RemoteSession<'_> {
    fn observe(&mut self, _: &Observation, _: &Pose) {}

    fn rollout(&self, ctx: &RolloutContext, control: &ControlInput, horizon: usize) -> Result<Vec<Observation>, ModelError> {
        let mut client = self.model.client.lock().unwrap_or_else(|p| p.into_inner());
        client.rollout(ctx.observation, control, horizon, ctx.key.wire_seed())
    }
}
