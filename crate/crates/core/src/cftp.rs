//! Dominated coupling from the past.
//!
//! The dominating process `D` is a spatial birth–death process with unit
//! per-point death rate and birth rate equal to the model's dominating rate
//! per unit area; its stationary law is the Poisson process with that rate.
//! It is sampled at time 0 and then extended into the past segment by
//! segment. Because the dynamics are reversible, a past segment is produced by
//! running the same dynamics backwards from the oldest known state and
//! flipping event kinds: a reversed-time birth is a forward death and vice
//! versa. Each segment draws from its own seed stream, so extending the
//! horizon never touches randomness already used.
//!
//! Upper and lower processes `U ⊇ L` are then evolved forwards from the
//! oldest state, accepting each dominating birth according to its uniform
//! mark and the thresholds from [`MultiscaleModel::birth_bounds`]. If they
//! agree at time 0 the common pattern is an exact draw.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use thiserror::Error;

use crate::geometry::{self, CellIndex, Point, PointId, PointPattern, Window};
use crate::models::MultiscaleModel;
use crate::rng::SeedPath;

/// Largest horizon tried by default (time units).
pub const DEFAULT_MAX_HORIZON: f64 = 1_048_576.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CftpError {
    #[error("no coalescence by horizon cap {cap}")]
    HorizonCapExceeded { cap: f64 },
    #[error("new horizon {requested} must exceed current horizon {current}")]
    HorizonNotExtended { current: f64, requested: f64 },
    #[error("invalid horizon schedule: initial {initial}, cap {cap}")]
    InvalidSchedule { initial: f64, cap: f64 },
    #[error("sandwich violated at time {time}: point {point_id} entered the lower process only")]
    SandwichBreach { time: f64, point_id: PointId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Birth { location: Point, mark: f64 },
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub point_id: PointId,
    pub kind: EventKind,
}

impl Event {
    pub fn is_birth(&self) -> bool {
        matches!(self.kind, EventKind::Birth { .. })
    }
}

/// Location and mark of a dominating point; the mark is drawn once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub location: Point,
    pub mark: f64,
}

/// Poisson process at `rate` per unit area on `window`, with ids `0..n`.
pub fn sample_dominating<R: Rng + ?Sized>(window: &Window, rate: f64, rng: &mut R) -> PointPattern {
    let mean = rate * window.area();
    let n = if mean > 0.0 {
        Poisson::new(mean).expect("positive finite mean").sample(rng) as usize
    } else {
        0
    };
    let points = (0..n).map(|_| window.sample_uniform(rng)).collect();
    PointPattern::new(*window, points).expect("uniform points lie inside the window")
}

/// The dominating birth–death process on `[-horizon, 0]`.
#[derive(Debug, Clone)]
pub struct DominatingTrajectory {
    window: Window,
    rate: f64,
    seed: SeedPath,
    horizon: f64,
    /// Newest first: `segments[0]` ends at time 0. Each holds events in
    /// forward time order.
    segments: Vec<Vec<Event>>,
    oldest: Vec<PointId>,
    present: Vec<PointId>,
    records: Vec<PointRecord>,
}

impl DominatingTrajectory {
    /// Samples `D(0)` from the stationary law; the horizon starts at 0.
    pub fn new(window: Window, rate: f64, seed: SeedPath) -> Self {
        let mut rng = seed.child(0).rng();
        let initial = sample_dominating(&window, rate, &mut rng);
        let records: Vec<PointRecord> = initial
            .points()
            .iter()
            .map(|&location| PointRecord {
                location,
                mark: rng.random(),
            })
            .collect();
        let present: Vec<PointId> = initial.ids().to_vec();
        Self {
            window,
            rate,
            seed,
            horizon: 0.0,
            segments: Vec::new(),
            oldest: present.clone(),
            present,
            records,
        }
    }

    pub fn for_model(model: &MultiscaleModel, seed: SeedPath) -> Self {
        Self::new(*model.window(), model.dominating_rate(), seed)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    /// Dominating rate per unit area.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn record(&self, id: PointId) -> &PointRecord {
        &self.records[id as usize]
    }

    /// Ids of `D(-horizon)`.
    pub fn oldest_ids(&self) -> &[PointId] {
        &self.oldest
    }

    /// `D(-horizon)` as a pattern.
    pub fn state_at_horizon(&self) -> PointPattern {
        self.pattern_of(&self.oldest)
    }

    /// `D(0)` as a pattern.
    pub fn state_at_zero(&self) -> PointPattern {
        self.pattern_of(&self.present)
    }

    fn pattern_of(&self, ids: &[PointId]) -> PointPattern {
        PointPattern::with_ids(
            self.window,
            ids.iter().map(|&id| (id, self.records[id as usize].location)),
        )
        .expect("trajectory points are distinct and inside the window")
    }

    /// All events on `[-horizon, 0]` in forward time order.
    pub fn events(&self) -> impl Iterator<Item = &Event> + '_ {
        self.segments.iter().rev().flat_map(|s| s.iter())
    }

    pub fn event_count(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    /// Extends the trajectory back to `-new_horizon`, leaving every existing
    /// event and mark untouched.
    pub fn extend_backward(&mut self, new_horizon: f64) -> Result<(), CftpError> {
        if new_horizon.is_nan() || new_horizon <= self.horizon {
            return Err(CftpError::HorizonNotExtended {
                current: self.horizon,
                requested: new_horizon,
            });
        }
        let mut rng = self.seed.child(self.segments.len() as u64 + 1).rng();
        let birth_rate = self.rate * self.window.area();
        let mut state = std::mem::take(&mut self.oldest);
        let mut backwards = Vec::new();
        let mut t = -self.horizon;
        loop {
            let total = birth_rate + state.len() as f64;
            if total <= 0.0 {
                break;
            }
            let wait: f64 = Exp1.sample(&mut rng);
            t -= wait / total;
            if t < -new_horizon {
                break;
            }
            if rng.random::<f64>() * total < birth_rate {
                // appears going backwards: alive before t, dies at t
                let id = self.records.len() as PointId;
                let location = self.window.sample_uniform(&mut rng);
                let mark = rng.random();
                self.records.push(PointRecord { location, mark });
                state.push(id);
                backwards.push(Event {
                    time: t,
                    point_id: id,
                    kind: EventKind::Death,
                });
            } else {
                // vanishes going backwards: born at t
                let k = rng.random_range(0..state.len());
                let id = state.swap_remove(k);
                let rec = self.records[id as usize];
                backwards.push(Event {
                    time: t,
                    point_id: id,
                    kind: EventKind::Birth {
                        location: rec.location,
                        mark: rec.mark,
                    },
                });
            }
        }
        backwards.reverse();
        self.segments.push(backwards);
        self.oldest = state;
        self.horizon = new_horizon;
        Ok(())
    }
}

/// A point set with a neighbour index, used for the evolving `U` and `L`.
#[derive(Debug, Clone)]
pub struct LiveSet {
    members: HashMap<PointId, Point>,
    index: CellIndex,
}

impl LiveSet {
    fn new(window: Window, reach: f64) -> Self {
        Self {
            members: HashMap::new(),
            index: CellIndex::new(window, reach),
        }
    }

    fn insert(&mut self, id: PointId, p: Point) {
        if self.members.insert(id, p).is_none() {
            self.index.insert(id, p);
        }
    }

    fn remove(&mut self, id: PointId) -> bool {
        match self.members.remove(&id) {
            Some(p) => self.index.remove(id, p),
            None => false,
        }
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.members.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = PointId> + '_ {
        self.members.keys().copied()
    }

    /// Ids in increasing order.
    pub fn sorted_ids(&self) -> Vec<PointId> {
        let mut ids: Vec<PointId> = self.ids().collect();
        ids.sort_unstable();
        ids
    }

    fn to_pattern(&self, window: Window) -> PointPattern {
        let mut items: Vec<(PointId, Point)> = self.members.iter().map(|(&i, &p)| (i, p)).collect();
        items.sort_unstable_by_key(|&(i, _)| i);
        PointPattern::with_ids(window, items).expect("live points are distinct and inside the window")
    }
}

/// Upper and lower configurations at some time.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichState {
    pub upper: PointPattern,
    pub lower: PointPattern,
    pub time: f64,
}

impl SandwichState {
    pub fn coalesced(&self) -> bool {
        self.upper.len() == self.lower.len()
    }
}

/// Outcome of one forward pass from `-horizon` to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichRun {
    pub state: SandwichState,
    pub events_processed: usize,
    /// First time at which `U = L`, if any.
    pub coalesced_at: Option<f64>,
}

/// What an observer sees after each event of a forward pass.
pub struct StepView<'a> {
    /// Position of the event in the forward event sequence.
    pub index: usize,
    pub event: &'a Event,
    pub upper: &'a LiveSet,
    pub lower: &'a LiveSet,
    /// `added_area` evaluations spent on this event.
    pub area_evaluations: u64,
}

pub fn evolve_sandwich(traj: &DominatingTrajectory, model: &MultiscaleModel) -> Result<SandwichRun, CftpError> {
    evolve_sandwich_observed(traj, model, &mut |_| {})
}

/// Forward pass with a callback after every event.
pub fn evolve_sandwich_observed(
    traj: &DominatingTrajectory,
    model: &MultiscaleModel,
    observer: &mut dyn FnMut(&StepView<'_>),
) -> Result<SandwichRun, CftpError> {
    let window = *model.window();
    let reach = 2.0 * model.interaction_radius();
    let mut upper = LiveSet::new(window, reach);
    let mut lower = LiveSet::new(window, reach);
    let thin = model.lower_thinning_probability();
    for &id in traj.oldest_ids() {
        let rec = traj.record(id);
        upper.insert(id, rec.location);
        if rec.mark <= thin {
            lower.insert(id, rec.location);
        }
    }
    let start = -traj.horizon();
    let mut coalesced_at = (upper.len() == lower.len()).then_some(start);
    let mut near_upper = Vec::new();
    let mut near_lower = Vec::new();
    let mut processed = 0;
    for (index, event) in traj.events().enumerate() {
        let before = geometry::added_area_evaluations();
        match event.kind {
            EventKind::Birth { location, mark } => {
                let (hi, lo) = if reach > 0.0 {
                    near_upper.clear();
                    near_lower.clear();
                    upper.index.neighbours(location, reach, &mut near_upper);
                    lower.index.neighbours(location, reach, &mut near_lower);
                    let b = model.birth_bounds(location, &near_upper, &near_lower);
                    (b.upper, b.lower)
                } else {
                    (1.0, 1.0)
                };
                let into_upper = mark < hi;
                let into_lower = mark < lo;
                if into_lower && !into_upper {
                    return Err(CftpError::SandwichBreach {
                        time: event.time,
                        point_id: event.point_id,
                    });
                }
                if into_upper {
                    upper.insert(event.point_id, location);
                }
                if into_lower {
                    lower.insert(event.point_id, location);
                }
            }
            EventKind::Death => {
                upper.remove(event.point_id);
                lower.remove(event.point_id);
            }
        }
        processed += 1;
        if coalesced_at.is_none() && upper.len() == lower.len() {
            coalesced_at = Some(event.time);
        }
        observer(&StepView {
            index,
            event,
            upper: &upper,
            lower: &lower,
            area_evaluations: geometry::added_area_evaluations() - before,
        });
    }
    Ok(SandwichRun {
        state: SandwichState {
            upper: upper.to_pattern(window),
            lower: lower.to_pattern(window),
            time: 0.0,
        },
        events_processed: processed,
        coalesced_at,
    })
}

/// Doubling horizons `initial · 2^k` up to `cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub initial_horizon: f64,
    pub max_horizon: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            initial_horizon: 1.0,
            max_horizon: DEFAULT_MAX_HORIZON,
        }
    }
}

impl Schedule {
    pub fn horizons(&self) -> impl Iterator<Item = f64> {
        let cap = self.max_horizon;
        std::iter::successors(Some(self.initial_horizon), |t| Some(t * 2.0)).take_while(move |&t| t <= cap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CftpResult {
    pub sample: PointPattern,
    pub horizon_used: f64,
    /// Horizons tried before the successful one.
    pub restarts: usize,
    /// Events processed over all forward passes.
    pub events_processed: usize,
}

/// Exact draw from `model`'s stationary law (for its area discretisation).
pub fn perfect_sample(model: &MultiscaleModel, seed: SeedPath, schedule: &Schedule) -> Result<CftpResult, CftpError> {
    perfect_sample_traced(model, seed, schedule).map(|(result, _)| result)
}

/// [`perfect_sample`], also returning the dominating trajectory at the
/// horizon that coalesced.
pub fn perfect_sample_traced(
    model: &MultiscaleModel,
    seed: SeedPath,
    schedule: &Schedule,
) -> Result<(CftpResult, DominatingTrajectory), CftpError> {
    if !(schedule.initial_horizon > 0.0 && schedule.initial_horizon <= schedule.max_horizon) {
        return Err(CftpError::InvalidSchedule {
            initial: schedule.initial_horizon,
            cap: schedule.max_horizon,
        });
    }
    let mut traj = DominatingTrajectory::for_model(model, seed);
    let mut events_processed = 0;
    for (restarts, horizon) in schedule.horizons().enumerate() {
        traj.extend_backward(horizon)?;
        let run = evolve_sandwich(&traj, model)?;
        events_processed += run.events_processed;
        if run.state.coalesced() {
            let result = CftpResult {
                sample: run.state.upper,
                horizon_used: horizon,
                restarts,
                events_processed,
            };
            return Ok((result, traj));
        }
    }
    Err(CftpError::HorizonCapExceeded {
        cap: schedule.max_horizon,
    })
}
