//! Episode runner: drives the decision loop, background traffic, logging,
//! and scoring.

use crate::api::{ApiError, Session, Value};
use crate::behavior::{self, MobilParams};
use crate::context::{default_exemplars, describe_state, Exemplar, PromptBundle};
use crate::eval::{score_episode, CompletionChecker, EpisodeResult, EvalConfig, EvalError, Progress};
use crate::log::{CallOutcome, DecisionSource, EndReason, Event, StepRecord, TrajectoryLog};
use crate::network::{LaneId, LaneRole};
use crate::protocol::{registry_entries, AgentChannel, AgentMessage, EnvMessage, ResultBody, PROTOCOL_VERSION};
use crate::scenario::{instantiate, Maneuver, Scenario, ScenarioError};
use crate::world::{self, detect_collisions, Control, SimConfig, SimError, VehicleId, WorldState, EGO_ID, STANDSTILL_SPEED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Duration;

/// Background desired speeds wander by this much per drift event...
const DRIFT_STEP: f64 = 0.5;
/// ...within this band around their initial value.
const DRIFT_BAND: f64 = 1.5;
const DRIFT_PERIOD: f64 = 5.0;
/// Braking a background cut-in may impose on whoever it lands in front of.
const MANEUVER_SAFE_DECEL: f64 = 4.0;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("idm parameters: {0}")]
    Behavior(#[from] behavior::BehaviorError),
}

#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub sim: SimConfig,
    pub eval: EvalConfig,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    pub patience: Duration,
    pub exemplars: Vec<Exemplar>,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            eval: EvalConfig::default(),
            seed: None,
            patience: crate::protocol::DEFAULT_PATIENCE,
            exemplars: default_exemplars(),
        }
    }
}

/// Who issues ego decisions.
pub enum Driver<'a> {
    /// Pure autopilot from the first decision on.
    Idm,
    /// Autopilot plus MOBIL lane-change requests on highway lanes.
    Mobil(MobilParams),
    Agent(&'a mut dyn AgentChannel),
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub log: TrajectoryLog,
    pub result: EpisodeResult,
    pub end: EndReason,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One episode, advanced a decision period at a time.
pub struct Episode {
    scenario_id: String,
    goal: crate::goal::GoalSpec,
    session: Session,
    sim: SimConfig,
    eval: EvalConfig,
    steps_per_decision: u64,
    max_steps: u64,
    drift_every: u64,
    checker: CompletionChecker,
    log: TrajectoryLog,
    initial_desired: BTreeMap<VehicleId, f64>,
    maneuvers: Vec<Maneuver>,
    finished: bool,
    end: Option<EndReason>,
    last_call_id: Option<u64>,
}

impl Episode {
    pub fn new(scenario: &Scenario, options: &EpisodeOptions) -> Result<Self, EngineError> {
        scenario.validate()?;
        options.eval.validate()?;
        let mut world = instantiate(scenario)?;
        let seed = options.seed.unwrap_or(scenario.seed);
        world.seed = seed;
        let idm = scenario.idm.unwrap_or_default();
        idm.validate()?;
        let sim = SimConfig { seed, ..options.sim };
        let steps_per_decision = sim.steps_per_decision()?;
        let max_steps = ((options.eval.t_limit / sim.dt).round() as u64).max(1);
        let drift_every = ((DRIFT_PERIOD / sim.dt).round() as u64).max(1);
        let initial_desired = world.vehicles.iter().map(|v| (v.id, v.target_speed)).collect();
        let mut maneuvers = scenario.maneuvers.clone();
        maneuvers.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.vehicle.cmp(&b.vehicle)));
        let mut record = StepRecord::from_world(&world);
        record.events.push(Event::EpisodeStart { scenario_id: scenario.id.clone(), seed });
        let mut checker = CompletionChecker::new(scenario.goal.clone(), options.eval.criteria, options.eval.t_limit);
        let first = checker.observe(&record, &world.network);
        let session = Session::new(world, idm)?;
        Ok(Self {
            scenario_id: scenario.id.clone(),
            goal: scenario.goal.clone(),
            session,
            sim,
            eval: options.eval.clone(),
            steps_per_decision,
            max_steps,
            drift_every,
            checker,
            log: TrajectoryLog { records: vec![record] },
            initial_desired,
            maneuvers,
            finished: false,
            end: matches!(first, Progress::Completed(_)).then_some(EndReason::Completed),
            last_call_id: None,
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn world(&self) -> &WorldState {
        &self.session.world
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    pub fn is_over(&self) -> bool {
        self.end.is_some()
    }

    pub fn end_reason(&self) -> Option<EndReason> {
        self.end
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn fallback_active(&self) -> bool {
        self.session.actuation.fallback_active
    }

    /// Whether decisions still come from the agent.
    pub fn agent_active(&self) -> bool {
        !self.finished && !self.fallback_active() && !self.is_over()
    }

    pub fn context(&self) -> String {
        describe_state(&self.session.world)
    }

    fn push_event(&mut self, e: Event) {
        self.log.records.last_mut().expect("initial record").events.push(e);
    }

    /// Executes one primitive call and logs it. Errors only on a protocol
    /// violation (non-increasing call id), which the caller turns into a
    /// fallback.
    pub fn call(&mut self, id: u64, name: &str, args: Vec<Value>) -> Result<CallOutcome, String> {
        if let Some(last) = self.last_call_id {
            if id <= last {
                return Err(format!("protocol: call id {id} is not greater than {last}"));
            }
        }
        self.last_call_id = Some(id);
        let outcome = match self.session.call(name, &args) {
            Ok(v) => CallOutcome::Value(v),
            Err(e) => CallOutcome::Error(e.info()),
        };
        self.push_event(Event::Call { id, function: name.to_string(), args, result: outcome.clone() });
        for e in self.session.take_events() {
            self.push_event(e);
        }
        Ok(outcome)
    }

    pub fn finish(&mut self) {
        if !self.finished {
            self.finished = true;
            self.push_event(Event::Finish);
        }
    }

    /// Autopilot for the rest of the episode; pending lane requests are
    /// dropped. Idempotent.
    pub fn engage_fallback(&mut self, reason: &str) {
        if self.session.engage_fallback(reason) {
            self.session.actuation.pending_lane_request = None;
            self.push_event(Event::FallbackEngaged { reason: reason.to_string() });
        }
    }

    fn next_internal_id(&self) -> u64 {
        self.last_call_id.map_or(1, |l| l + 1)
    }

    /// Issues MOBIL lane requests through the primitive path.
    fn mobil_decide(&mut self, params: &MobilParams) {
        let world = &self.session.world;
        let ego = self.session.ego();
        if ego.target_lane != ego.current_lane || self.session.actuation.pending_lane_request.is_some() {
            return;
        }
        let lane = world.network.lane_ref(ego.current_lane);
        if !matches!(lane.role, LaneRole::Highway { .. }) {
            return;
        }
        let choice = [lane.left_neighbor, lane.right_neighbor]
            .into_iter()
            .flatten()
            .find(|c| behavior::mobil_should_change(ego, *c, world, &self.session.idm, params));
        if let Some(c) = choice {
            let id = self.next_internal_id();
            let _ = self.call(id, "set_target_lane", vec![Value::Lane(c)]);
        }
    }

    /// Advances one decision period, or less when the episode ends inside it.
    pub fn advance(&mut self) -> Result<(), EngineError> {
        if self.is_over() {
            return Ok(());
        }
        let source = if self.fallback_active() {
            DecisionSource::Fallback
        } else if self.finished {
            DecisionSource::Finished
        } else {
            DecisionSource::Yield
        };
        self.push_event(Event::Decision { source });
        self.session.queue_route_hop();
        if let Some(lane) = self.session.begin_pending_lane_change() {
            self.push_event(Event::LaneChange { lane });
        }
        for _ in 0..self.steps_per_decision {
            self.physics_step()?;
            if self.is_over() {
                break;
            }
        }
        self.session.sync_from_world();
        Ok(())
    }

    fn background_updates(&mut self) {
        let step = self.session.world.step_count();
        let seed = self.session.world.seed;
        let half = self.steps_per_decision / 2;
        if step % self.steps_per_decision == half {
            let now = self.session.world.time();
            let idm = self.session.idm;
            let mut done = Vec::new();
            for (i, m) in self.maneuvers.iter().enumerate() {
                if m.time > now + 1e-9 {
                    continue;
                }
                let world = &self.session.world;
                let Some(v) = world.vehicle(m.vehicle) else {
                    done.push(i);
                    continue;
                };
                if v.current_lane == m.target_lane {
                    done.push(i);
                    continue;
                }
                if v.target_lane == v.current_lane
                    && world.network.are_adjacent(v.current_lane, m.target_lane)
                    && behavior::is_safe_to_enter(world, v, m.target_lane, MANEUVER_SAFE_DECEL, &idm)
                {
                    let target: LaneId = m.target_lane;
                    let v = self.session.world.vehicle_mut(m.vehicle).expect("checked");
                    v.target_lane = target;
                    v.route = vec![target];
                    done.push(i);
                }
            }
            for i in done.into_iter().rev() {
                self.maneuvers.remove(i);
            }
        }
        let drift = step % self.drift_every == 3 % self.drift_every;
        for v in self.session.world.vehicles.iter_mut().filter(|v| v.id != EGO_ID) {
            if v.stopped_at_sign && !v.stop_released && v.speed < STANDSTILL_SPEED {
                v.stopped_at_sign = false;
                v.stop_released = true;
            }
            if drift {
                let base = self.initial_desired.get(&v.id).copied().unwrap_or(v.target_speed);
                if base > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, step, v.id as u64));
                    let delta = if rng.gen_bool(0.5) { DRIFT_STEP } else { -DRIFT_STEP };
                    v.target_speed = (v.target_speed + delta).clamp((base - DRIFT_BAND).max(0.0), base + DRIFT_BAND);
                }
            }
        }
    }

    fn physics_step(&mut self) -> Result<(), EngineError> {
        self.background_updates();
        let signal = self.session.actuation.pending_lane_request;
        if let Some(ego) = self.session.world.vehicle_mut(EGO_ID) {
            ego.signal = signal;
        }
        let world = &self.session.world;
        let idm = self.session.idm;
        let outputs: Vec<(VehicleId, behavior::AutopilotOutput)> =
            world.vehicles.iter().map(|v| (v.id, behavior::autopilot(v, world, &idm))).collect();
        let mut controls: BTreeMap<VehicleId, Control> = BTreeMap::new();
        for (id, out) in outputs {
            controls.insert(id, out.control);
            if let Some(v) = self.session.world.vehicle_mut(id) {
                v.yielding = out.yielding;
            }
        }
        let next = world::step(&self.session.world, &controls, self.sim.dt)?;
        self.session.world = next;
        let mut record = StepRecord::from_world(&self.session.world);
        let collisions = detect_collisions(&self.session.world);
        let ego_hit = collisions.iter().any(|(a, b)| *a == EGO_ID || *b == EGO_ID);
        record.events.extend(collisions.into_iter().map(|(a, b)| Event::Collision { ids: [a, b] }));
        let progress = self.checker.observe(&record, &self.session.world.network);
        self.log.records.push(record);
        if ego_hit {
            self.end = Some(EndReason::Collision);
        } else if matches!(progress, Progress::Completed(_)) {
            self.end = Some(EndReason::Completed);
        } else if self.session.world.step_count() >= self.max_steps {
            self.end = Some(EndReason::TimeLimit);
        }
        Ok(())
    }

    /// Closes the log and scores it.
    pub fn into_outcome(mut self) -> Result<EpisodeOutcome, EngineError> {
        let end = self.end.unwrap_or(EndReason::TimeLimit);
        let verdict = self.checker.verdict();
        self.push_event(Event::Completion { verdict: verdict.verdict, t_complete: verdict.t_complete });
        self.push_event(Event::EpisodeEnd { reason: end });
        let result = score_episode(&self.scenario_id, &self.goal, &self.log, &self.session.world.network, &self.eval)?;
        Ok(EpisodeOutcome { log: self.log, result, end })
    }
}

/// Runs one episode to termination with the given driver.
pub fn run_episode(scenario: &Scenario, driver: Driver<'_>, options: &EpisodeOptions) -> Result<EpisodeOutcome, EngineError> {
    let mut ep = Episode::new(scenario, options)?;
    match driver {
        Driver::Idm => {
            ep.finish();
            while !ep.is_over() {
                ep.advance()?;
            }
            ep.into_outcome()
        }
        Driver::Mobil(params) => {
            let params = scenario.mobil.unwrap_or(params);
            while !ep.is_over() {
                ep.mobil_decide(&params);
                ep.advance()?;
            }
            ep.into_outcome()
        }
        Driver::Agent(channel) => run_with_channel(ep, scenario, channel, options, &mut |_| {}),
    }
}

/// Agent episode that calls `observe` at every decision boundary, after the
/// agent's calls and right before the world advances.
pub fn run_agent_observed(
    scenario: &Scenario,
    channel: &mut dyn AgentChannel,
    options: &EpisodeOptions,
    observe: &mut dyn FnMut(&Episode),
) -> Result<EpisodeOutcome, EngineError> {
    let ep = Episode::new(scenario, options)?;
    run_with_channel(ep, scenario, channel, options, observe)
}

fn run_with_channel(
    mut ep: Episode,
    scenario: &Scenario,
    channel: &mut dyn AgentChannel,
    options: &EpisodeOptions,
    observe: &mut dyn FnMut(&Episode),
) -> Result<EpisodeOutcome, EngineError> {
    let hello = EnvMessage::Hello {
        protocol_version: PROTOCOL_VERSION,
        scenario_id: scenario.id.clone(),
        registry: registry_entries(),
        map: Some(scenario.map),
    };
    let bundle = PromptBundle::new(ep.context(), scenario.instruction.clone(), options.exemplars.clone())
        .map_err(|e| ScenarioError::Invalid { id: scenario.id.clone(), reason: e.to_string() })?;
    let prompt = EnvMessage::Prompt {
        api_docs: bundle.api_docs,
        context: bundle.context,
        instruction: bundle.instruction,
        exemplars: bundle.exemplars,
    };
    if channel.send(&hello).is_err() || channel.send(&prompt).is_err() {
        ep.engage_fallback("disconnect");
    }
    while !ep.is_over() {
        if ep.agent_active() {
            decide(&mut ep, channel, options.patience);
        }
        let was_active = ep.agent_active();
        observe(&ep);
        ep.advance()?;
        if was_active {
            let snapshot = channel.wants_snapshots().then(|| ep.log().records.last().expect("records").clone());
            let stepped = EnvMessage::Stepped {
                new_context_digest: ep.context(),
                state_digest: ep.log().records.last().expect("records").state_digest(),
                time: ep.world().time(),
                done: ep.is_over(),
                snapshot,
            };
            if channel.send(&stepped).is_err() && !ep.is_over() {
                ep.engage_fallback("disconnect");
            }
        }
    }
    let outcome = ep.into_outcome()?;
    let _ = channel.send(&EnvMessage::EpisodeEnd { reason: outcome.end, result: Some(outcome.result.clone()) });
    Ok(outcome)
}

/// Serves agent messages until the agent yields, finishes, or fails.
fn decide(ep: &mut Episode, channel: &mut dyn AgentChannel, patience: Duration) {
    loop {
        match channel.recv(patience) {
            Ok(AgentMessage::Call { id, function, args }) => match ep.call(id, &function, args) {
                Ok(outcome) => {
                    let body = match outcome {
                        CallOutcome::Value(value) => ResultBody::Value { value },
                        CallOutcome::Error(error) => ResultBody::Error { error },
                    };
                    if channel.send(&EnvMessage::Result { id, body }).is_err() {
                        ep.engage_fallback("disconnect");
                        return;
                    }
                }
                Err(reason) => {
                    ep.engage_fallback(&reason);
                    return;
                }
            },
            Ok(AgentMessage::YieldStep) => return,
            Ok(AgentMessage::Finish) => {
                ep.finish();
                return;
            }
            Ok(AgentMessage::Error { reason }) => {
                ep.engage_fallback(&reason);
                return;
            }
            Err(e) => {
                ep.engage_fallback(&e.fallback_reason());
                return;
            }
        }
    }
}
