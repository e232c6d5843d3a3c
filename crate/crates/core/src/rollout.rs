//! Autoregressive simulation under a per-train action model.

use std::collections::HashMap;

use rand::Rng;

use crate::dynamics::{step_snapshot, JointAction};
use crate::error::{Error, Result};
use crate::features::{FeatureMode, NormalizationStats, SnapshotEncoder};
use crate::network::RailNetwork;
use crate::policy::{greedy_action, sample_action, stall_clamp, Head, MlpPolicy};
use crate::schedule::{Snapshot, Timetable, TrainId};

/// Per-train action distribution given the encoded state.
pub trait ActionModel: Sync {
    fn distribution(&self, snapshot: &Snapshot, index: usize, features: &[f64]) -> Result<[f64; 3]>;

    /// Whether `distribution` reads the features; models that do not skip encoding.
    fn uses_features(&self) -> bool {
        true
    }
}

impl ActionModel for MlpPolicy {
    fn distribution(&self, _: &Snapshot, _: usize, features: &[f64]) -> Result<[f64; 3]> {
        self.action_probs(features)
    }
}

/// The same distribution for every train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel(pub [f64; 3]);

impl ActionModel for ConstantModel {
    fn distribution(&self, _: &Snapshot, _: usize, _: &[f64]) -> Result<[f64; 3]> {
        Ok(self.0)
    }

    fn uses_features(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Sample,
    Greedy,
}

impl Sampling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Sampling::Sample),
            "greedy" => Ok(Sampling::Greedy),
            _ => Err(Error::Config(format!("unknown sampling mode `{s}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sampling::Sample => "sample",
            Sampling::Greedy => "greedy",
        }
    }
}

/// Largest probability of advancing one station seen since each train last advanced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StallFloors(HashMap<TrainId, f64>);

impl StallFloors {
    pub fn get(&self, id: &str) -> f64 {
        self.0.get(id).copied().unwrap_or(0.0)
    }

    /// Records `dist`, then returns it clamped to the train's floor.
    pub fn clamp(&mut self, id: &TrainId, dist: &[f64; 3]) -> [f64; 3] {
        let mu = self.0.entry(id.clone()).or_insert(0.0);
        *mu = mu.max(dist[1]);
        stall_clamp(dist, *mu)
    }

    pub fn reset(&mut self, id: &str) {
        self.0.remove(id);
    }
}

/// Static inputs shared by every rollout.
#[derive(Clone, Copy)]
pub struct Environment<'a> {
    pub network: &'a RailNetwork,
    pub norm: &'a NormalizationStats,
    pub timetable: &'a Timetable,
}

impl Environment<'_> {
    /// Simulation-mode features of every train, row-major.
    pub fn encode(&self, snapshot: &Snapshot) -> Result<Vec<f64>> {
        let dim = FeatureMode::Simulation.dim();
        let mut out = Vec::with_capacity(snapshot.len() * dim);
        if snapshot.is_empty() {
            return Ok(out);
        }
        let mut enc = SnapshotEncoder::new(snapshot, self.network, FeatureMode::Simulation, self.norm)?;
        let mut row = Vec::with_capacity(dim);
        for i in 0..snapshot.len() {
            enc.encode_into(i, &mut row)?;
            out.extend_from_slice(&row);
        }
        Ok(out)
    }

    /// Draws one action per train. With `floors`, distributions are stall-clamped first.
    pub fn choose_actions(
        &self,
        snapshot: &Snapshot,
        features: &[f64],
        model: &dyn ActionModel,
        sampling: Sampling,
        mut floors: Option<&mut StallFloors>,
        rng: &mut impl Rng,
    ) -> Result<JointAction> {
        let dim = FeatureMode::Simulation.dim();
        let mut joint = JointAction::default();
        for (i, t) in snapshot.trains.iter().enumerate() {
            let x = if model.uses_features() {
                &features[i * dim..(i + 1) * dim]
            } else {
                &[][..]
            };
            let mut dist = model.distribution(snapshot, i, x)?;
            if let Some(f) = floors.as_deref_mut() {
                dist = f.clamp(t.train_id(), &dist);
            }
            let a = match sampling {
                Sampling::Sample => sample_action(&dist, rng)?,
                Sampling::Greedy => greedy_action(&dist),
            };
            joint.0.insert(t.train_id().clone(), a);
        }
        Ok(joint)
    }

    /// One simulated step; returns the next snapshot. `features` must come from
    /// [`Environment::encode`] on `snapshot` when the model reads them.
    pub fn step(
        &self,
        snapshot: &Snapshot,
        features: &[f64],
        model: &dyn ActionModel,
        sampling: Sampling,
        mut floors: Option<&mut StallFloors>,
        rng: &mut impl Rng,
    ) -> Result<Snapshot> {
        let joint = self.choose_actions(snapshot, features, model, sampling, floors.as_deref_mut(), rng)?;
        let next = step_snapshot(snapshot, &joint, self.timetable)?;
        if let Some(f) = floors {
            for t in &snapshot.trains {
                let advanced = next
                    .get(t.train_id())
                    .is_some_and(|n| n.position_index() > t.position_index());
                if advanced {
                    f.reset(t.train_id());
                }
            }
        }
        Ok(next)
    }

    /// Encodes then steps.
    pub fn advance(
        &self,
        snapshot: &Snapshot,
        model: &dyn ActionModel,
        sampling: Sampling,
        floors: Option<&mut StallFloors>,
        rng: &mut impl Rng,
    ) -> Result<Snapshot> {
        let features = if model.uses_features() {
            self.encode(snapshot)?
        } else {
            Vec::new()
        };
        self.step(snapshot, &features, model, sampling, floors, rng)
    }
}

/// Fails unless the policy has an action head.
pub fn require_action_head(policy: &MlpPolicy) -> Result<()> {
    match policy.head() {
        Head::Softmax3 => Ok(()),
        Head::Linear(k) => Err(Error::Invalid(format!(
            "rollouts need an action policy, got a linear head with {k} outputs"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::schedule::{Itinerary, TrainState, TrainType};

    #[test]
    fn floors_track_running_maximum() {
        let mut f = StallFloors::default();
        let id: TrainId = Arc::from("a");
        let first = f.clamp(&id, &[0.5, 0.4, 0.1]);
        assert_eq!(first, [0.5, 0.4, 0.1]);
        let second = f.clamp(&id, &[0.98, 0.01, 0.01]);
        assert!((second[1] - 0.4 / 1.39).abs() < 1e-12);
        assert_eq!(f.get("a"), 0.4);
        f.reset("a");
        assert_eq!(f.get("a"), 0.0);
    }

    #[test]
    fn floor_resets_on_advance() {
        let stops: Vec<(String, i64)> = (0..5).map(|k| (format!("S{k}"), 1000 + 300 * k)).collect();
        let it = Arc::new(Itinerary::new("a", TrainType::Regional, &stops).unwrap());
        let snap = Snapshot::new(1000, vec![TrainState::from_actuals(it, &[1000]).unwrap()]).unwrap();
        let network = crate::data::desk_network();
        let norm = NormalizationStats::default();
        let tt = Timetable::default();
        let env = Environment {
            network: &network,
            norm: &norm,
            timetable: &tt,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut floors = StallFloors::default();
        let stay = ConstantModel([0.7, 0.3, 0.0]);
        let greedy = env
            .advance(&snap, &stay, Sampling::Greedy, Some(&mut floors), &mut rng)
            .unwrap();
        assert_eq!(greedy.trains[0].position_index(), 1);
        assert_eq!(floors.get("a"), 0.3);
        let go = ConstantModel([0.0, 1.0, 0.0]);
        let moved = env
            .advance(&greedy, &go, Sampling::Sample, Some(&mut floors), &mut rng)
            .unwrap();
        assert_eq!(moved.trains[0].position_index(), 2);
        assert_eq!(floors.get("a"), 0.0);
    }
}
