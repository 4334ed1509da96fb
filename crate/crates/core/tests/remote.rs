use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use worldloop::action_api::{to_text, ControlInput, ControlKind};
use worldloop::render::{raycast_view, ViewKind, EGO_FOV_DEG};
use worldloop::scene::{ActionPrimitive, ActionSequence, Heading};
use worldloop::scenegen::{gen_scene, SceneParams};
use worldloop::worldmodel::wire::{decode, encode, Message, WireObs, PROTOCOL_VERSION};
use worldloop::worldmodel::{
    GroundTruth, ModelError, ModelHandle, RemoteClient, RolloutContext, RolloutKey, Variant, WorldModelConfig,
};

const TIMEOUT: Duration = Duration::from_secs(10);

fn serve_cmd() -> Vec<String> {
    vec![env!("CARGO_BIN_EXE_worldloop").to_string(), "serve".to_string()]
}

/// A fake endpoint that answers the handshake and then prints `reply`.
fn scripted(reply: &str) -> Vec<String> {
    let hello = r#"{"v":1,"type":"hello","control_kind":"text","observation_kind":"ego"}"#;
    let script = format!("read l; printf '%s\\n' '{hello}'; read l; printf '%s\\n' '{reply}'; sleep 5");
    vec!["sh".into(), "-c".into(), script]
}

fn sample_obs() -> worldloop::render::Observation {
    let scene = gen_scene(1, &SceneParams::default()).unwrap();
    let pose = scene.pose_at(scene.free_cells()[30], Heading::from_index(2));
    raycast_view(&scene, &pose, EGO_FOV_DEG, 64).unwrap()
}

fn text(n: usize) -> ControlInput {
    to_text(&ActionSequence::new(vec![ActionPrimitive::Forward; n]).unwrap()).unwrap()
}

#[test]
fn handshake_declares_kinds() {
    let c = RemoteClient::spawn(&serve_cmd(), TIMEOUT).unwrap();
    assert_eq!(c.control_kind(), ControlKind::Text);
    assert_eq!(c.observation_kind(), ViewKind::Ego);
    let mut cmd = serve_cmd();
    cmd.extend(["--control".into(), "lowlevel".into(), "--kind".into(), "panorama".into()]);
    let c = RemoteClient::spawn(&cmd, TIMEOUT).unwrap();
    assert_eq!(c.control_kind(), ControlKind::LowLevel);
    assert_eq!(c.observation_kind(), ViewKind::Panorama);
}

#[test]
fn remote_frozen_matches_builtin() {
    let remote = ModelHandle::build(&WorldModelConfig::new(Variant::Remote { command: serve_cmd(), timeout_s: 10.0 })).unwrap();
    let frozen = ModelHandle::build(&WorldModelConfig::new(Variant::Frozen)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for i in 0..20u64 {
        let scene = gen_scene(rng.random_range(0..1000), &SceneParams::default()).unwrap();
        let free = scene.free_cells();
        let pose = scene.pose_at(free[rng.random_range(0..free.len())], Heading::from_index(rng.random_range(0..16)));
        let obs = raycast_view(&scene, &pose, EGO_FOV_DEG, 64).unwrap();
        let horizon = rng.random_range(1..=8);
        let plan: Vec<ActionPrimitive> =
            (0..horizon).map(|_| ActionPrimitive::MOTION[rng.random_range(0..3)]).collect();
        let control = to_text(&ActionSequence::new(plan).unwrap()).unwrap();
        let ctx = RolloutContext { observation: &obs, odometry: pose, key: RolloutKey { seed: i, ..Default::default() } };
        let truth = GroundTruth { scene: &scene, pose };
        let a = remote.session().unwrap().rollout(&truth, &ctx, &control, horizon).unwrap();
        let b = frozen.session().unwrap().rollout(&truth, &ctx, &control, horizon).unwrap();
        assert_eq!(a.frames, b.frames, "request {i}");
        assert_eq!(serde_json::to_string(&a.frames).unwrap(), serde_json::to_string(&b.frames).unwrap());
    }
}

#[test]
fn short_frame_count_is_typed() {
    let obs = sample_obs();
    let frames = vec![WireObs::from_obs(&obs); 2];
    let reply = encode(&Message::Frames { frames });
    let mut c = RemoteClient::spawn(&scripted(&reply), TIMEOUT).unwrap();
    let err = c.rollout(&obs, &text(3), 3, 0).unwrap_err();
    assert!(matches!(err, ModelError::FrameCount { expected: 3, got: 2 }), "{err:?}");
}

#[test]
fn version_mismatch_is_typed() {
    let mut c = RemoteClient::spawn(&scripted(r#"{"v":"2","type":"frames","frames":[]}"#), TIMEOUT).unwrap();
    let err = c.rollout(&sample_obs(), &text(1), 1, 0).unwrap_err();
    assert!(matches!(err, ModelError::Version { expected: 1, got: 2 }), "{err:?}");
    // the client refuses to continue after a protocol failure
    assert!(matches!(c.rollout(&sample_obs(), &text(1), 1, 0), Err(ModelError::Transport(_))));
}

#[test]
fn malformed_reply_is_typed() {
    let mut c = RemoteClient::spawn(&scripted("{not json"), TIMEOUT).unwrap();
    assert!(matches!(c.rollout(&sample_obs(), &text(1), 1, 0), Err(ModelError::Malformed(_))));
}

#[test]
fn remote_error_message_is_surfaced() {
    let mut c = RemoteClient::spawn(&scripted(r#"{"v":1,"type":"error","msg":"out of memory"}"#), TIMEOUT).unwrap();
    assert!(matches!(c.rollout(&sample_obs(), &text(1), 1, 0), Err(ModelError::Remote(m)) if m == "out of memory"));
}

#[test]
fn silent_endpoint_times_out() {
    let cmd = scripted("").into_iter().map(|s| s.replace("printf '%s\\n' ''", "sleep 30")).collect::<Vec<_>>();
    let mut c = RemoteClient::spawn(&cmd, Duration::from_millis(300)).unwrap();
    assert!(matches!(c.rollout(&sample_obs(), &text(1), 1, 0), Err(ModelError::Timeout(_))));
}

#[test]
fn closed_endpoint_is_transport_error() {
    assert!(matches!(RemoteClient::spawn(&["true".to_string()], TIMEOUT), Err(ModelError::Transport(_))));
    assert!(matches!(RemoteClient::spawn(&["/nonexistent/model".to_string()], TIMEOUT), Err(ModelError::Transport(_))));
}

/// The server answers every bad line with a typed error instead of silence.
#[test]
fn server_answers_protocol_errors() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_worldloop"))
        .arg("serve")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let obs = WireObs::from_obs(&sample_obs());
    let rollout = |control: ControlInput, horizon| encode(&Message::Rollout { obs: obs.clone(), control, horizon, seed: 1 });
    let lines = [
        "{broken".to_string(),
        r#"{"v":2,"type":"hello"}"#.to_string(),
        rollout(ControlInput::LowLevel { tokens: vec!["forward".into()] }, 1),
        rollout(text(4), 4),
    ];
    {
        let mut stdin = child.stdin.take().unwrap();
        for l in &lines {
            writeln!(stdin, "{l}").unwrap();
        }
    }
    let replies: Vec<String> = BufReader::new(child.stdout.take().unwrap()).lines().map(Result::unwrap).collect();
    assert!(child.wait().unwrap().success());
    assert_eq!(replies.len(), lines.len());
    for r in &replies[..3] {
        assert!(matches!(decode(r).unwrap(), Message::Error { .. }), "{r}");
    }
    let v: serde_json::Value = serde_json::from_str(&replies[0]).unwrap();
    assert_eq!(v["v"], PROTOCOL_VERSION);
    assert_eq!(decode(&replies[3]).unwrap(), Message::Frames { frames: vec![obs; 4] });
}
