//! The simulated side of a teleoperation session, independent of any
//! transport. Feeding the same inputs produces the same frames and demos.

use std::path::PathBuf;

use demoaug_core::demo::{self, Action, Demonstration, Provenance};
use demoaug_core::render::{render_scene_with, Scene};
use demoaug_core::sim::{TaskKind, TaskSpec, World, WorldState};

use crate::protocol::{ControlMessage, FrameMessage, Handshake, RecordEvent, ResetRequest, WireImage, PROTO_VERSION};
use crate::TeleopError;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub task: TaskSpec,
    pub seed: u64,
    pub scene: Scene,
    /// Successful recordings are saved here; `None` keeps them in memory only.
    pub out_dir: Option<PathBuf>,
}

impl SessionConfig {
    pub fn new(task: TaskSpec, seed: u64) -> SessionConfig {
        SessionConfig { task, seed, scene: Scene::default(), out_dir: None }
    }
}

struct Recording {
    start: WorldState,
    actions: Vec<Action>,
}

pub struct Session {
    world: World,
    state: WorldState,
    seed: u64,
    scene: Scene,
    out_dir: Option<PathBuf>,
    recording: Option<Recording>,
    takes: usize,
    /// Demos saved so far, in order.
    pub saved: Vec<Demonstration>,
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Session {
        let world = World::new(cfg.task);
        let state = world.reset(cfg.seed);
        Session {
            world,
            state,
            seed: cfg.seed,
            scene: cfg.scene,
            out_dir: cfg.out_dir,
            recording: None,
            takes: 0,
            saved: Vec::new(),
        }
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    pub fn handshake(&self) -> Handshake {
        Handshake {
            proto: PROTO_VERSION,
            task: self.world.task.kind.to_string(),
            fingers: self.world.config.fingers,
            resolution: [self.scene.camera.width, self.scene.camera.height],
        }
    }

    fn reset(&mut self, req: &ResetRequest) -> Result<Option<RecordEvent>, TeleopError> {
        let kind: TaskKind = req.task.parse().map_err(TeleopError::Protocol)?;
        self.world = World::with_config(TaskSpec::new(kind, req.level), self.world.config.clone());
        self.seed = req.seed;
        self.state = self.world.reset(req.seed);
        Ok(self.recording.take().map(|_| RecordEvent::Discarded { reason: "reset while recording".into() }))
    }

    fn finish_recording(&mut self, rec: Recording) -> Result<RecordEvent, TeleopError> {
        let id = format!("{}-teleop-{}-{}", self.world.task.kind, self.seed, self.takes);
        self.takes += 1;
        let d = Demonstration::from_rollout(
            &id,
            &self.world,
            &rec.start,
            &rec.actions,
            self.scene.clone(),
            Provenance::Teleop,
        );
        if d.len() < 2 {
            tracing::warn!(%id, "discarding recording with fewer than two frames");
            return Ok(RecordEvent::Discarded { reason: "too short".into() });
        }
        if !demo::replay(&d, &self.world)?.success {
            tracing::warn!(%id, "discarding unsuccessful recording");
            return Ok(RecordEvent::Discarded { reason: "task not accomplished".into() });
        }
        let path = match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let p = dir.join(format!("{id}.json"));
                demo::save(&d, &p)?;
                p.display().to_string()
            }
            None => String::new(),
        };
        self.saved.push(d);
        Ok(RecordEvent::Saved { id, path })
    }

    /// Advances one tick. Without input the hand holds still and the fingers
    /// keep their current targets.
    pub fn tick(&mut self, input: Option<&ControlMessage>) -> Result<FrameMessage, TeleopError> {
        let mut event = None;
        if let Some(req) = input.and_then(|m| m.reset.as_ref()) {
            event = self.reset(req)?;
        }
        if input.is_some_and(|m| m.record_toggle) {
            event = Some(match self.recording.take() {
                None => {
                    self.recording = Some(Recording { start: self.state.clone(), actions: Vec::new() });
                    RecordEvent::Started
                }
                Some(rec) => self.finish_recording(rec)?,
            });
        }
        let action = match input {
            Some(m) => {
                if m.fingers.len() != self.world.config.fingers {
                    return Err(TeleopError::Protocol(format!(
                        "expected {} finger values, got {}",
                        self.world.config.fingers,
                        m.fingers.len()
                    )));
                }
                if m.ee_delta.iter().chain(&m.fingers).any(|v| !v.is_finite()) {
                    return Err(TeleopError::Protocol("non-finite control value".into()));
                }
                Action::new(m.ee_delta, m.fingers.iter().map(|v| v.clamp(0.0, 1.0)).collect()).clamped()
            }
            None => Action::hold(&self.state.finger_values),
        };
        if let Some(rec) = &mut self.recording {
            rec.actions.push(action.clone());
        }
        self.state = self.world.step(&self.state, &action);
        Ok(self.frame(event))
    }

    pub fn frame(&self, event: Option<RecordEvent>) -> FrameMessage {
        let image = render_scene_with(&self.state, &self.scene, &self.world.config);
        FrameMessage {
            tick: self.state.tick,
            image: WireImage::from(&image),
            proprio: self.state.proprio(),
            success_flag: self.world.eval_success(&self.state),
            recording_flag: self.recording.is_some(),
            event,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use demoaug_core::sim::{scripted_expert, ExpertConfig};

    fn session(kind: TaskKind) -> Session {
        Session::new(SessionConfig::new(TaskSpec::new(kind, 1), 4))
    }

    #[test]
    fn missing_input_holds_still() {
        let mut s = session(TaskKind::Pour);
        let before = s.state().clone();
        let f = s.tick(None).unwrap();
        assert_eq!(f.tick, 1);
        assert_eq!(s.state().ee_pose, before.ee_pose);
        assert_eq!(s.state().finger_values, before.finger_values);
    }

    #[test]
    fn transcript_replay_is_identical() {
        let world = World::new(TaskSpec::new(TaskKind::Rotate, 1));
        let expert = scripted_expert(&world, &world.reset(4), 4, &ExpertConfig::default()).unwrap();
        let mut transcript: Vec<Option<ControlMessage>> = vec![None, None];
        for (i, a) in expert.actions().iter().enumerate() {
            let m = ControlMessage::new(a.ee_delta, a.fingers.clone());
            transcript.push(Some(if i == 0 { m.toggling() } else { m }));
        }
        transcript.push(Some(ControlMessage::new([0.0; 6], vec![1.0, 0.0]).toggling()));
        let run = || {
            let mut s = session(TaskKind::Rotate);
            for m in &transcript {
                s.tick(m.as_ref()).unwrap();
            }
            s.saved
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 1);
        assert_eq!(demo::to_json(&a[0]).unwrap(), demo::to_json(&b[0]).unwrap());
    }

    #[test]
    fn failed_recording_is_discarded() {
        let mut s = session(TaskKind::PickPlace);
        s.tick(Some(&ControlMessage::new([0.0; 6], vec![1.0, 0.0]).toggling())).unwrap();
        s.tick(Some(&ControlMessage::new([0.0, 0.0, 0.0, 1.0, 0.0, 0.0], vec![1.0, 0.0]))).unwrap();
        let f = s.tick(Some(&ControlMessage::new([0.0; 6], vec![1.0, 0.0]).toggling())).unwrap();
        assert!(matches!(f.event, Some(RecordEvent::Discarded { .. })));
        assert!(s.saved.is_empty());
    }

    #[test]
    fn wrong_finger_count_is_a_protocol_error() {
        let mut s = session(TaskKind::Pour);
        assert!(s.tick(Some(&ControlMessage::new([0.0; 6], vec![1.0]))).is_err());
    }
}
