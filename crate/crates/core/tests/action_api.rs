use proptest::prelude::*;

use worldloop::action_api::{
    decode_control, encode_control, to_lowlevel, to_text, to_trajectory, ActionApiError, ActionVocab, ControlInput,
    ControlKind,
};
use worldloop::scene::{apply_action, ActionPrimitive, ActionSequence, GridScene, Heading, Pose};

use ActionPrimitive::*;

fn seq(v: &[ActionPrimitive]) -> ActionSequence {
    ActionSequence::new(v.to_vec()).unwrap()
}

/// Plans of motion primitives, optionally ending in Stop.
fn plan() -> impl Strategy<Value = ActionSequence> {
    (prop::collection::vec(prop::sample::select(vec![Forward, TurnLeft, TurnRight]), 0..12), any::<bool>()).prop_filter_map(
        "non-empty",
        |(mut v, stop)| {
            if stop {
                v.push(Stop);
            }
            ActionSequence::new(v).ok()
        },
    )
}

/// Parses a prompt back by reading each phrase's verb and checking its
/// magnitude.
fn parse_prompt(prompt: &str) -> Vec<ActionPrimitive> {
    prompt
        .split(", then ")
        .map(|p| {
            let w: Vec<&str> = p.split(' ').collect();
            match w.as_slice() {
                ["move", "forward", "0.2", "meters"] => Forward,
                ["turn", "left", "22.5", "degrees"] => TurnLeft,
                ["turn", "right", "22.5", "degrees"] => TurnRight,
                ["stop"] => Stop,
                _ => panic!("unexpected phrase {p:?}"),
            }
        })
        .collect()
}

#[test]
fn text_examples() {
    assert_eq!(to_text(&seq(&[Forward])).unwrap(), ControlInput::Text { prompt: "move forward 0.2 meters".into() });
    assert_eq!(
        to_text(&seq(&[TurnLeft, Forward])).unwrap(),
        ControlInput::Text { prompt: "turn left 22.5 degrees, then move forward 0.2 meters".into() }
    );
}

#[test]
fn trajectory_examples() {
    let origin = Pose::new(0.0, 0.0, Heading::default());
    assert_eq!(
        to_trajectory(&seq(&[Forward]), &origin).unwrap(),
        ControlInput::Trajectory { points: vec![[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]] }
    );
    let ControlInput::Trajectory { points } = to_trajectory(&seq(&[Stop]), &origin).unwrap() else { unreachable!() };
    assert_eq!(points.len(), 2);
    assert_eq!(points[0], points[1]);
}

#[test]
fn lowlevel_examples() {
    let id = ActionVocab::identity();
    assert_eq!(
        to_lowlevel(&seq(&[Forward, TurnLeft, TurnRight, Stop]), &id).unwrap(),
        ControlInput::LowLevel { tokens: vec!["forward".into(), "turn_left".into(), "turn_right".into(), "stop".into()] }
    );
    let fwd = ActionVocab::new([(Forward, "FWD".to_string())]).unwrap();
    assert_eq!(to_lowlevel(&seq(&[Forward]), &fwd).unwrap(), ControlInput::LowLevel { tokens: vec!["FWD".into()] });
    assert_eq!(to_lowlevel(&seq(&[TurnLeft]), &fwd), Err(ActionApiError::UnmappablePrimitive(TurnLeft)));
    assert!(matches!(
        ActionVocab::new([(Forward, "x".to_string()), (Stop, "x".to_string())]),
        Err(ActionApiError::DuplicateToken(_))
    ));
}

#[test]
fn encode_dispatches_by_kind() {
    let s = seq(&[TurnRight, Forward]);
    let start = Pose::new(1.0, 1.0, Heading::from_index(4));
    let vocab = ActionVocab::identity();
    assert_eq!(encode_control(&s, ControlKind::Text, &start, &vocab).unwrap(), to_text(&s).unwrap());
    assert_eq!(encode_control(&s, ControlKind::Trajectory, &start, &vocab).unwrap(), to_trajectory(&s, &start).unwrap());
    assert_eq!(encode_control(&s, ControlKind::LowLevel, &start, &vocab).unwrap(), to_lowlevel(&s, &vocab).unwrap());
    for kind in [ControlKind::Text, ControlKind::Trajectory, ControlKind::LowLevel] {
        assert_eq!(encode_control(&s, kind, &start, &vocab).unwrap().kind(), kind);
    }
}

proptest! {
    #[test]
    fn prompt_parses_back(s in plan()) {
        let ControlInput::Text { prompt } = to_text(&s).unwrap() else { unreachable!() };
        prop_assert_eq!(parse_prompt(&prompt), s.as_slice().to_vec());
        prop_assert_eq!(decode_control(&ControlInput::Text { prompt }, &ActionVocab::identity()).unwrap(), s);
    }

    #[test]
    fn trajectory_is_collision_free_fold(s in plan(), h in 0i64..16, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let start = Pose::new(x, y, Heading::from_index(h));
        let ControlInput::Trajectory { points } = to_trajectory(&s, &start).unwrap() else { unreachable!() };
        prop_assert_eq!(points.len(), s.len() + 1);
        // an obstacle-free frame large enough to hold every plan
        let room = GridScene::empty(400, 400, 0.1).unwrap();
        let shifted = Pose::new(20.0 + x, 20.0 + y, start.heading);
        let end = s.iter().fold(shifted, |p, a| apply_action(&room, &p, *a));
        let last = points[points.len() - 1];
        prop_assert!((last[0] - (end.x - 20.0)).abs() < 1e-9);
        prop_assert!((last[1] - (end.y - 20.0)).abs() < 1e-9);
        prop_assert_eq!(last[2], end.heading.degrees());
        let back = decode_control(&ControlInput::Trajectory { points }, &ActionVocab::identity()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn lowlevel_round_trips_through_renamed_vocab(s in plan(), salt in any::<u32>()) {
        let vocab = ActionVocab::new(
            ActionPrimitive::PLANNABLE.iter().enumerate().map(|(i, p)| (*p, format!("tok{}", salt as usize * 4 + i))),
        )
        .unwrap();
        let enc = to_lowlevel(&s, &vocab).unwrap();
        prop_assert_eq!(&enc, &to_lowlevel(&s, &vocab).unwrap());
        let ControlInput::LowLevel { tokens } = &enc else { unreachable!() };
        prop_assert_eq!(tokens.len(), s.len());
        prop_assert_eq!(decode_control(&enc, &vocab).unwrap(), s);
    }
}
