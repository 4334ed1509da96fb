//! Encode one plan in the three control formats a world model may accept.

use worldloop::action_api::{decode_control, to_lowlevel, to_text, to_trajectory, ActionVocab};
use worldloop::scene::{ActionPrimitive::*, ActionSequence, Heading, Pose};

fn main() -> anyhow::Result<()> {
    let plan = ActionSequence::new(vec![Forward, TurnLeft, TurnLeft, Forward, Stop])?;
    let start = Pose::new(1.0, 2.0, Heading::from_index(4));
    let vocab = ActionVocab::new([
        (Forward, "W".to_string()),
        (TurnLeft, "A".to_string()),
        (TurnRight, "D".to_string()),
        (Stop, "X".to_string()),
    ])?;

    for control in [to_text(&plan)?, to_trajectory(&plan, &start)?, to_lowlevel(&plan, &vocab)?] {
        println!("{}", serde_json::to_string(&control)?);
        assert_eq!(decode_control(&control, &vocab)?, plan);
    }
    Ok(())
}
