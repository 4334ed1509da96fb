use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use worldloop::planner::{
    admissible, heuristic_next, plan_step, propose, satisfies_rules, score, select, visibility, Decision, Objective,
    PlannerConfig, PlannerError, ProposalContext, ProposalPolicy, StepInput, MAX_CONSECUTIVE_TURNS,
};
use worldloop::render::{raycast_view, Column, Observation, ViewKind, EGO_FOV_DEG};
use worldloop::scene::{ActionPrimitive, ActionSequence, Heading};
use worldloop::scenegen::{gen_scene, SceneParams};
use worldloop::worldmodel::{GroundTruth, ModelHandle, PredictedRollout, Variant, WorldModelConfig};

use ActionPrimitive::*;

#[test]
fn admissible_rules() {
    assert_eq!(admissible(&[]), vec![Forward, TurnLeft, TurnRight]);
    assert!(!admissible(&[TurnLeft]).contains(&TurnRight));
    assert!(!admissible(&[TurnRight]).contains(&TurnLeft));
    assert_eq!(admissible(&[Forward]).len(), 3);
    assert_eq!(admissible(&[TurnLeft; MAX_CONSECUTIVE_TURNS]), vec![Forward]);
    assert_eq!(admissible(&[TurnRight, TurnLeft, TurnLeft, TurnLeft]), vec![Forward, TurnLeft]);
}

#[test]
fn heuristic_is_uniform_on_empty_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 10_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let a = heuristic_next(&[], &mut rng);
        counts[ActionPrimitive::MOTION.iter().position(|m| *m == a).unwrap()] += 1;
    }
    for c in counts {
        let f = c as f64 / n as f64;
        assert!((f - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
    }
}

/// Exhaustive argmax with first-wins ties.
fn brute_select(s: &[f64]) -> usize {
    (0..s.len()).find(|&i| s.iter().all(|&t| s[i] >= t)).unwrap()
}

#[test]
fn select_examples() {
    assert_eq!(select(&[0.2, 0.9, 0.9]).unwrap(), 1);
    assert_eq!(select(&[0.4]).unwrap(), 0);
    assert!(matches!(select(&[]), Err(PlannerError::Empty)));
}

#[test]
fn visibility_fixture() {
    let mut cols = vec![Column::EMPTY; 64];
    for c in cols.iter_mut().skip(28).take(4) {
        c.instance_id = 9;
    }
    let view = Observation { kind: ViewKind::Ego, fov_deg: 90.0, columns: cols, pose: None };
    assert_eq!(visibility(&view, 9), 4.0 / 64.0);
    let blank = Observation { columns: vec![Column::EMPTY; 64], ..view.clone() };
    let r = PredictedRollout {
        frames: vec![blank, view],
        horizon: 2,
        source: "t".into(),
        aligned_actions: ActionSequence::new(vec![Forward, Forward]).unwrap(),
    };
    assert_eq!(score(&r, &Objective::Visibility { instance: 9, final_only: true }).unwrap(), 4.0 / 64.0);
    let mut early = r.clone();
    early.frames.reverse();
    assert_eq!(score(&early, &Objective::Visibility { instance: 9, final_only: true }).unwrap(), 0.0);
    assert_eq!(score(&early, &Objective::Visibility { instance: 9, final_only: false }).unwrap(), 4.0 / 64.0);
}

#[test]
fn proposals_are_mostly_distinct() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ctx = ProposalContext { history: &[], heading: Heading::default(), goal_bearing_deg: None };
    let (mut dup, trials) = (0, 2000);
    for _ in 0..trials {
        let p = propose(ProposalPolicy::Heuristic, &ctx, 3, 5, &mut rng);
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|s| s.len() == 5 && satisfies_rules(&[], s.as_slice())));
        if p[0] == p[1] || p[0] == p[2] || p[1] == p[2] {
            dup += 1;
        }
    }
    assert!((dup as f64) / (trials as f64) < 0.05, "{dup} duplicate batches");
}

#[test]
fn plan_step_commits_winner_prefix() {
    let scene = gen_scene(6, &SceneParams::default()).unwrap();
    let free = scene.free_cells();
    let pose = scene.pose_at(free[free.len() / 3], Heading::from_index(5));
    let oracle = ModelHandle::build(&WorldModelConfig::new(Variant::Oracle)).unwrap();
    let session = oracle.session().unwrap();
    let obs = oracle.info().render(&scene, &pose).unwrap();
    let goal_view = raycast_view(&scene, &pose, EGO_FOV_DEG, obs.width()).unwrap();
    let cfg = PlannerConfig::new(4, 5, 2);
    let input = StepInput {
        obs: &obs,
        model_obs: &obs,
        objective: Objective::ImageNav { goal_view: &goal_view },
        answerer: None,
        history: &[],
        goal_bearing_deg: None,
        odometry: pose,
        truth: GroundTruth { scene: &scene, pose },
        episode: 3,
        step: 0,
    };
    let out = plan_step(&cfg, &input, Some(&session)).unwrap();
    assert_eq!(out.inferences, 4);
    assert!(out.fallback.is_none());
    let scores: Vec<f64> = out.candidates.iter().map(|c| c.score.unwrap()).collect();
    let w = out.winner.unwrap();
    assert_eq!(w, brute_select(&scores));
    let Decision::Plan { seq } = &out.decision else { panic!("expected a plan") };
    assert_eq!(seq.as_slice(), &out.candidates[w].seq.as_slice()[..2]);
    let again = plan_step(&cfg, &input, Some(&session)).unwrap();
    assert_eq!(again.decision, out.decision);

    let base = plan_step(&cfg, &input, None).unwrap();
    assert_eq!(base.inferences, 0);
    assert_eq!(base.winner, Some(0));
    assert!(base.candidates.iter().all(|c| c.score.is_none()));
}

#[test]
fn bad_config_rejected() {
    assert!(PlannerConfig::new(0, 5, 1).validate().is_err());
    assert!(PlannerConfig::new(2, 5, 6).validate().is_err());
    assert!(PlannerConfig::new(2, 5, 0).validate().is_err());
    assert!(PlannerConfig::new(1, 1, 1).validate().is_ok());
}

proptest! {
    #[test]
    fn select_matches_brute_force(s in prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 0.75, 1.0]), 1..12)) {
        prop_assert_eq!(select(&s).unwrap(), brute_select(&s));
    }

    #[test]
    fn heuristic_sequences_obey_rules(seed in any::<u64>(), hist in prop::collection::vec(prop::sample::select(ActionPrimitive::MOTION.to_vec()), 0..6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = hist.clone();
        for _ in 0..12 {
            let a = heuristic_next(&h, &mut rng);
            prop_assert!(admissible(&h).contains(&a));
            h.push(a);
        }
        prop_assert!(satisfies_rules(&hist, &h[hist.len()..]));
    }
}
