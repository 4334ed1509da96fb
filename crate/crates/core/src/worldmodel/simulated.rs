use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{GroundTruth, ModelError, ModelInfo, RolloutContext};
use crate::render::{Observation, MAX_RANGE_M};
use crate::rng::{domain, stream};
use crate::scene::{apply_action, ActionPrimitive, ActionSequence, GridScene, Pose, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimulatorKind {
    Oracle,
    /// Each action is replaced, with probability `p_flip`, by a uniformly
    /// chosen different motion primitive before simulation.
    NoisyAction { p_flip: f64 },
    /// Truthful simulation, then Gaussian depth noise and random class flips.
    NoisyObs { sigma: f64, p_class: f64 },
}

impl SimulatorKind {
    pub fn label(&self) -> String {
        match self {
            SimulatorKind::Oracle => "oracle".into(),
            SimulatorKind::NoisyAction { p_flip } => format!("noisy_action(p={p_flip})"),
            SimulatorKind::NoisyObs { sigma, p_class } => format!("noisy_obs(s={sigma},p={p_class})"),
        }
    }
}

/// A model backed by the simulator itself.
#[derive(Debug, Clone)]
pub struct SimulatorModel {
    kind: SimulatorKind,
    info: ModelInfo,
    seed: u64,
}

/// Ground-truth frames after each action of `actions` from `start`.
pub(crate) fn true_frames(
    info: &ModelInfo,
    scene: &GridScene,
    start: &Pose,
    actions: &[ActionPrimitive],
) -> Result<Vec<Observation>, ModelError> {
    let mut pose = *start;
    actions
        .iter()
        .map(|a| {
            pose = apply_action(scene, &pose, *a);
            Ok(info.render(scene, &pose)?.without_pose())
        })
        .collect()
}

impl SimulatorModel {
    pub fn new(kind: SimulatorKind, info: ModelInfo, seed: u64) -> Self {
        Self { kind, info, seed }
    }

    pub fn kind(&self) -> SimulatorKind {
        self.kind
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub(crate) fn simulate(
        &self,
        truth: &GroundTruth,
        ctx: &RolloutContext,
        actions: &ActionSequence,
    ) -> Result<Vec<Observation>, ModelError> {
        let k = ctx.key;
        let mut rng = stream(k.seed, &[domain::MODEL_NOISE, self.seed, k.episode, k.step, k.candidate]);
        match self.kind {
            SimulatorKind::Oracle => true_frames(&self.info, truth.scene, &truth.pose, actions.as_slice()),
            SimulatorKind::NoisyAction { p_flip } => {
                let executed: Vec<ActionPrimitive> = actions
                    .iter()
                    .map(|&a| {
                        if rng.random_bool(p_flip) {
                            let others: Vec<ActionPrimitive> =
                                ActionPrimitive::MOTION.into_iter().filter(|&b| b != a).collect();
                            others[rng.random_range(0..others.len())]
                        } else {
                            a
                        }
                    })
                    .collect();
                true_frames(&self.info, truth.scene, &truth.pose, &executed)
            }
            SimulatorKind::NoisyObs { sigma, p_class } => {
                let mut frames = true_frames(&self.info, truth.scene, &truth.pose, actions.as_slice())?;
                let normal = Normal::new(0.0, sigma).map_err(|e| ModelError::Config(e.to_string()))?;
                for f in &mut frames {
                    for c in &mut f.columns {
                        if sigma > 0.0 {
                            c.depth_m = (c.depth_m + normal.sample(&mut rng)).clamp(0.0, MAX_RANGE_M);
                        }
                        if rng.random_bool(p_class) {
                            let shift = rng.random_range(1..NUM_CLASSES);
                            c.class_id = (c.class_id + shift) % NUM_CLASSES;
                            c.instance_id = 0;
                        }
                    }
                }
                Ok(frames)
            }
        }
    }
}
