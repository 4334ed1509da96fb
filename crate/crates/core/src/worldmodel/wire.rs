//! Newline-delimited JSON protocol spoken with external world models over a
//! child process's stdin/stdout.
//!
//! ```text
//! -> {"v":1,"type":"hello"}
//! <- {"v":1,"type":"hello","control_kind":"text","observation_kind":"ego"}
//! -> {"v":1,"type":"rollout","obs":{..},"control":{..},"horizon":L,"seed":n}
//! <- {"v":1,"type":"frames","frames":[{..},..]}  |  {"v":1,"type":"error","msg":".."}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::action_api::{ControlInput, ControlKind};
use crate::render::{Column, Observation, ViewKind, EGO_FOV_DEG};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireKind {
    Ego,
    Pano,
}

impl From<ViewKind> for WireKind {
    fn from(k: ViewKind) -> Self {
        match k {
            ViewKind::Ego => WireKind::Ego,
            ViewKind::Panorama => WireKind::Pano,
        }
    }
}

impl From<WireKind> for ViewKind {
    fn from(k: WireKind) -> Self {
        match k {
            WireKind::Ego => ViewKind::Ego,
            WireKind::Pano => ViewKind::Panorama,
        }
    }
}

/// `{"kind":"ego|pano","width":W,"cols":[[d,c,i],...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireObs {
    pub kind: WireKind,
    pub width: usize,
    pub cols: Vec<(f64, u16, u32)>,
}

impl WireObs {
    pub fn from_obs(o: &Observation) -> Self {
        Self {
            kind: o.kind.into(),
            width: o.width(),
            cols: o.columns.iter().map(|c| (c.depth_m, c.class_id, c.instance_id)).collect(),
        }
    }

    /// Ego views take `fov_deg`; panoramas are always 360°.
    pub fn into_obs(self, fov_deg: f64) -> Result<Observation, ModelError> {
        if self.cols.len() != self.width {
            return Err(ModelError::Malformed(format!("width {} but {} columns", self.width, self.cols.len())));
        }
        let kind: ViewKind = self.kind.into();
        Ok(Observation {
            kind,
            fov_deg: if kind == ViewKind::Panorama { 360.0 } else { fov_deg },
            columns: self
                .cols
                .into_iter()
                .map(|(depth_m, class_id, instance_id)| Column { depth_m, class_id, instance_id })
                .collect(),
            pose: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        control_kind: Option<ControlKind>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        observation_kind: Option<WireKind>,
    },
    Rollout {
        obs: WireObs,
        control: ControlInput,
        horizon: usize,
        seed: u64,
    },
    Frames {
        frames: Vec<WireObs>,
    },
    Error {
        msg: String,
    },
}

#[derive(Serialize)]
struct Envelope<'a> {
    v: u64,
    #[serde(flatten)]
    msg: &'a Message,
}

/// One protocol line (without the trailing newline).
pub fn encode(msg: &Message) -> String {
    serde_json::to_string(&Envelope { v: PROTOCOL_VERSION, msg }).expect("messages always serialize")
}

/// Parses one line, checking the version before the body.
pub fn decode(line: &str) -> Result<Message, ModelError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| ModelError::Malformed(e.to_string()))?;
    let v = value
        .get("v")
        .and_then(|v| v.as_u64().or_else(|| v.as_str().and_then(|s| s.parse().ok())))
        .ok_or_else(|| ModelError::Malformed("missing version field".into()))?;
    if v != PROTOCOL_VERSION {
        return Err(ModelError::Version { expected: PROTOCOL_VERSION, got: v });
    }
    serde_json::from_value(value).map_err(|e| ModelError::Malformed(e.to_string()))
}

/// Serves the frozen behaviour (every frame repeats the input observation)
/// until `input` closes.
pub fn serve_frozen<R: BufRead, W: Write>(input: R, mut output: W, control_kind: ControlKind, kind: ViewKind) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match decode(&line) {
            Ok(Message::Hello { .. }) => Message::Hello { control_kind: Some(control_kind), observation_kind: Some(kind.into()) },
            Ok(Message::Rollout { obs, control, horizon, .. }) => {
                if control.kind() != control_kind {
                    Message::Error { msg: format!("unsupported control kind {:?}", control.kind()) }
                } else {
                    Message::Frames { frames: vec![obs; horizon] }
                }
            }
            Ok(other) => Message::Error { msg: format!("unexpected message {other:?}") },
            Err(e) => Message::Error { msg: format!("{e}: {line}") },
        };
        writeln!(output, "{}", encode(&reply))?;
        output.flush()?;
    }
    Ok(())
}

/// Default ego field of view assumed for frames received over the wire.
pub const WIRE_EGO_FOV_DEG: f64 = EGO_FOV_DEG;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_shape() {
        let line = encode(&Message::Hello { control_kind: None, observation_kind: None });
        assert_eq!(line, r#"{"v":1,"type":"hello"}"#);
        let obs = WireObs { kind: WireKind::Ego, width: 1, cols: vec![(1.5, 2, 3)] };
        let line = encode(&Message::Frames { frames: vec![obs] });
        assert_eq!(line, r#"{"v":1,"type":"frames","frames":[{"kind":"ego","width":1,"cols":[[1.5,2,3]]}]}"#);
    }

    #[test]
    fn version_checked_first() {
        assert!(matches!(decode(r#"{"v":"2","type":"hello"}"#), Err(ModelError::Version { got: 2, .. })));
        assert!(matches!(decode(r#"{"v":1,"type":"nope"}"#), Err(ModelError::Malformed(_))));
        assert!(matches!(decode("{"), Err(ModelError::Malformed(_))));
    }

    #[test]
    fn frozen_server_loop() {
        let obs = WireObs { kind: WireKind::Ego, width: 2, cols: vec![(1.0, 0, 0), (2.0, 3, 4)] };
        let req = Message::Rollout {
            obs: obs.clone(),
            control: ControlInput::Text { prompt: "stop".into() },
            horizon: 3,
            seed: 9,
        };
        let input = format!("{}\n{}\nnot json\n", encode(&Message::Hello { control_kind: None, observation_kind: None }), encode(&req));
        let mut out = Vec::new();
        serve_frozen(input.as_bytes(), &mut out, ControlKind::Text, ViewKind::Ego).unwrap();
        let lines: Vec<Message> = String::from_utf8(out).unwrap().lines().map(|l| decode(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        assert!(matches!(lines[0], Message::Hello { control_kind: Some(ControlKind::Text), .. }));
        assert_eq!(lines[1], Message::Frames { frames: vec![obs; 3] });
        assert!(matches!(&lines[2], Message::Error { msg } if msg.contains("not json")));
    }
}
