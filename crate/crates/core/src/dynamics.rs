//! Macroscopic transition model: per-train station advances on a fixed clock step.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::schedule::{Snapshot, Timetable, TrainId, TrainState, PLACEHOLDER_SECS};

/// Simulation time step in seconds.
pub const STEP_SECS: i64 = 30;

/// Stations advanced during one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action(u8);

impl Action {
    pub const STAY: Action = Action(0);
    pub const ONE: Action = Action(1);
    pub const TWO: Action = Action(2);
    pub const ALL: [Action; 3] = [Action::STAY, Action::ONE, Action::TWO];
    pub const COUNT: usize = 3;

    pub fn new(value: u8) -> Result<Self> {
        if value <= 2 {
            Ok(Action(value))
        } else {
            Err(Error::Invalid(format!("action {value} outside {{0, 1, 2}}")))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One action per active train.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JointAction(pub BTreeMap<TrainId, Action>);

impl JointAction {
    pub fn uniform(snapshot: &Snapshot, action: Action) -> Self {
        JointAction(snapshot.trains.iter().map(|t| (t.train_id().clone(), action)).collect())
    }

    pub fn get(&self, id: &str) -> Option<Action> {
        self.0.get(id).copied()
    }
}

/// Advances `state` by `action` stations, clipped at the final station; newly passed stations
/// are stamped with `new_clock`.
pub fn apply_action(state: &TrainState, action: Action, new_clock: i64) -> TrainState {
    let mut next = state.clone();
    let steps = (action.value() as usize).min(state.remaining());
    for _ in 0..steps {
        next.pass_next(new_clock);
    }
    next
}

/// Advances a whole snapshot by one step: moves trains, retires trains whose post-arrival window
/// has closed, and injects timetabled trains whose window has opened.
pub fn step_snapshot(snapshot: &Snapshot, joint: &JointAction, timetable: &Timetable) -> Result<Snapshot> {
    if joint.0.len() != snapshot.len() {
        let missing = snapshot.trains.iter().find(|t| !joint.0.contains_key(t.train_id()));
        return Err(match missing {
            Some(t) => Error::State(format!("joint action is missing train `{}`", t.train_id())),
            None => Error::State("joint action names trains outside the snapshot".into()),
        });
    }
    let new_clock = snapshot.clock + STEP_SECS;
    let mut trains = Vec::with_capacity(snapshot.len() + 2);
    for t in &snapshot.trains {
        let action = joint
            .get(t.train_id())
            .ok_or_else(|| Error::State(format!("joint action is missing train `{}`", t.train_id())))?;
        let next = apply_action(t, action, new_clock);
        if next.is_finished() && new_clock > next.last_actual_time() + PLACEHOLDER_SECS {
            continue;
        }
        trains.push(next);
    }
    // A retired train left at least PLACEHOLDER_SECS after its window opened, so looking back
    // less than that never resurrects one.
    for it in timetable.opening_between(new_clock - PLACEHOLDER_SECS, new_clock) {
        if snapshot.get(&it.train_id).is_none() {
            trains.push(TrainState::at_placeholder(Arc::clone(it)));
        }
    }
    Snapshot::new(new_clock, trains)
}

/// Number of stations separating two states of the same train.
pub fn itinerary_distance(reference: &TrainState, other: &TrainState) -> Result<usize> {
    if reference.train_id() != other.train_id() {
        return Err(Error::TrainMismatch(
            reference.train_id().to_string(),
            other.train_id().to_string(),
        ));
    }
    Ok(reference.position_index().abs_diff(other.position_index()))
}

/// Expert action between two consecutive logged states, capped at two stations.
pub fn derive_expert_action(prev: &TrainState, next: &TrainState) -> Result<Action> {
    if prev.train_id() != next.train_id() {
        return Err(Error::TrainMismatch(
            prev.train_id().to_string(),
            next.train_id().to_string(),
        ));
    }
    let advance = next
        .position_index()
        .checked_sub(prev.position_index())
        .ok_or_else(|| {
            Error::Data(format!(
                "train `{}` moved backwards ({} -> {})",
                prev.train_id(),
                prev.position_index(),
                next.position_index()
            ))
        })?;
    Ok(Action(advance.min(2) as u8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{Itinerary, TrainType};

    fn itinerary(id: &str, start: i64, n: usize) -> Arc<Itinerary> {
        let stops: Vec<(String, i64)> = (0..n).map(|k| (format!("S{k}"), start + 120 * k as i64)).collect();
        Arc::new(Itinerary::new(id, TrainType::Regional, &stops).unwrap())
    }

    #[test]
    fn stay_is_identity() {
        let s = TrainState::from_actuals(itinerary("A", 1000, 4), &[1000]).unwrap();
        let n = apply_action(&s, Action::STAY, 1030);
        assert_eq!(n, s);
    }

    #[test]
    fn double_advance_stamps_both_stations() {
        let s = TrainState::from_actuals(itinerary("A", 1000, 4), &[1000]).unwrap();
        let n = apply_action(&s, Action::TWO, 1030);
        assert_eq!(n.position_index(), 3);
        assert_eq!(&n.actual_times()[2..], &[1030, 1030]);
        assert_eq!(&n.realized_delays()[2..], &[1030 - 1120, 1030 - 1240]);
    }

    #[test]
    fn advance_is_clipped_at_final_station() {
        let s = TrainState::from_actuals(itinerary("A", 1000, 3), &[1000, 1120]).unwrap();
        let n = apply_action(&s, Action::TWO, 1300);
        assert_eq!(n.position_index(), 3);
        assert!(n.is_finished());
        assert_eq!(apply_action(&n, Action::TWO, 1330), n);
    }

    #[test]
    fn step_with_all_stay() {
        let tt = Timetable::new(vec![itinerary("A", 1000, 4)]);
        let snap = Snapshot::new(
            990,
            vec![TrainState::from_actuals(itinerary("A", 1000, 4), &[]).unwrap()],
        )
        .unwrap();
        let next = step_snapshot(&snap, &JointAction::uniform(&snap, Action::STAY), &tt).unwrap();
        assert_eq!(next.clock, 1020);
        assert_eq!(next.trains, snap.trains);
    }

    #[test]
    fn injection_when_window_opens() {
        // departs 290 s after the old clock: window opened 10 s before it
        let it = itinerary("B", 1290, 3);
        let tt = Timetable::new(vec![it]);
        let snap = Snapshot::new(1000, vec![]).unwrap();
        let next = step_snapshot(&snap, &JointAction::default(), &tt).unwrap();
        assert_eq!(next.len(), 1);
        assert_eq!(next.trains[0].position_index(), 0);
        // already present: not duplicated
        let again = step_snapshot(&next, &JointAction::uniform(&next, Action::STAY), &tt).unwrap();
        assert_eq!(again.len(), 1);
    }

    #[test]
    fn finished_train_retires_after_window() {
        let it = itinerary("A", 1000, 2);
        let tt = Timetable::new(vec![it.clone()]);
        let done = TrainState::from_actuals(it, &[1000, 1100]).unwrap();
        let snap = Snapshot::new(1370, vec![done]).unwrap();
        let stay = JointAction::uniform(&snap, Action::STAY);
        let s1 = step_snapshot(&snap, &stay, &tt).unwrap();
        assert_eq!(s1.clock, 1400);
        assert_eq!(s1.len(), 1, "window closes at 1400 inclusive");
        let s2 = step_snapshot(&s1, &JointAction::uniform(&s1, Action::STAY), &tt).unwrap();
        assert!(s2.is_empty());
        // and is not re-injected later
        let s3 = step_snapshot(&s2, &JointAction::default(), &tt).unwrap();
        assert!(s3.is_empty());
    }

    #[test]
    fn missing_train_in_joint_action() {
        let snap = Snapshot::new(0, vec![TrainState::at_placeholder(itinerary("A", 300, 3))]).unwrap();
        assert!(step_snapshot(&snap, &JointAction::default(), &Timetable::default()).is_err());
    }

    #[test]
    fn distinct_actions_give_distinct_successors() {
        let it = itinerary("A", 1000, 6);
        let snap = Snapshot::new(1010, vec![TrainState::from_actuals(it, &[1000]).unwrap()]).unwrap();
        let tt = Timetable::default();
        let outs: Vec<Snapshot> = Action::ALL
            .iter()
            .map(|&a| step_snapshot(&snap, &JointAction::uniform(&snap, a), &tt).unwrap())
            .collect();
        assert_ne!(outs[0], outs[1]);
        assert_ne!(outs[1], outs[2]);
        assert_ne!(outs[0], outs[2]);
    }

    #[test]
    fn distance_and_expert_action() {
        let it = itinerary("A", 1000, 6);
        let at = |n: usize| {
            let times: Vec<i64> = (0..n as i64).map(|k| 1000 + 120 * k).collect();
            TrainState::from_actuals(it.clone(), &times).unwrap()
        };
        assert_eq!(itinerary_distance(&at(2), &at(2)).unwrap(), 0);
        assert_eq!(itinerary_distance(&at(4), &at(2)).unwrap(), 2);
        assert_eq!(itinerary_distance(&at(2), &at(3)).unwrap(), 1);
        assert_eq!(derive_expert_action(&at(2), &at(2)).unwrap(), Action::STAY);
        assert_eq!(derive_expert_action(&at(2), &at(3)).unwrap(), Action::ONE);
        assert_eq!(derive_expert_action(&at(1), &at(4)).unwrap(), Action::TWO);
        assert!(matches!(derive_expert_action(&at(3), &at(2)), Err(Error::Data(_))));
        let other = TrainState::at_placeholder(itinerary("B", 1000, 6));
        assert!(itinerary_distance(&at(1), &other).is_err());
    }
}
