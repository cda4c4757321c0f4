//! Hand-written protocol agents: one scripted policy per category, a fuzzer,
//! and helpers to attach a policy over the in-process or TCP transport.

use crate::api::{Value, REGISTRY};
use crate::engine::{run_agent_observed, run_episode, Driver, EngineError, Episode, EpisodeOptions, EpisodeOutcome};
use crate::goal::Category;
use crate::network::LaneId;
use crate::protocol::channel::{in_process, LineChannel};
use crate::protocol::client::{AgentTransport, ClientError, LineTransport, PolicyClient};
use crate::scenario::Scenario;
use crate::world::VehicleId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use std::io::BufReader;
use std::net::{TcpListener, TcpStream};

pub type Client = PolicyClient<Box<dyn AgentTransport + Send>>;

/// How a policy reaches the environment in [`run_policy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    Tcp,
}

/// Runs `policy` as an agent for one episode. The policy's own outcome is
/// returned next to the episode's.
pub fn run_policy<F>(
    scenario: &Scenario,
    options: &EpisodeOptions,
    transport: Transport,
    policy: F,
) -> Result<(EpisodeOutcome, Result<(), ClientError>), EngineError>
where
    F: FnOnce(&mut Client) -> Result<(), ClientError> + Send + 'static,
{
    match transport {
        Transport::InProcess => {
            let (mut channel, agent_end) = in_process();
            let handle = std::thread::spawn(move || attach(Box::new(agent_end), policy));
            let outcome = run_episode(scenario, Driver::Agent(&mut channel), options);
            drop(channel);
            let agent = handle.join().unwrap_or(Err(ClientError::Disconnected));
            Ok((outcome?, agent))
        }
        Transport::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0").map_err(io_err(scenario))?;
            let addr = listener.local_addr().map_err(io_err(scenario))?;
            let handle = std::thread::spawn(move || {
                let stream = TcpStream::connect(addr).map_err(|_| ClientError::Disconnected)?;
                let reader = BufReader::new(stream.try_clone().map_err(|_| ClientError::Disconnected)?);
                attach(Box::new(LineTransport::new(reader, stream)), policy)
            });
            let (stream, _) = listener.accept().map_err(io_err(scenario))?;
            let mut channel = LineChannel::tcp(stream).map_err(io_err(scenario))?;
            let outcome = run_episode(scenario, Driver::Agent(&mut channel), options);
            drop(channel);
            let agent = handle.join().unwrap_or(Err(ClientError::Disconnected));
            Ok((outcome?, agent))
        }
    }
}

/// In-process [`run_policy`] with a hook at every decision boundary (see
/// [`run_agent_observed`]).
pub fn run_policy_observed<F>(
    scenario: &Scenario,
    options: &EpisodeOptions,
    policy: F,
    observe: &mut dyn FnMut(&Episode),
) -> Result<(EpisodeOutcome, Result<(), ClientError>), EngineError>
where
    F: FnOnce(&mut Client) -> Result<(), ClientError> + Send + 'static,
{
    let (mut channel, agent_end) = in_process();
    let handle = std::thread::spawn(move || attach(Box::new(agent_end), policy));
    let outcome = run_agent_observed(scenario, &mut channel, options, observe);
    drop(channel);
    let agent = handle.join().unwrap_or(Err(ClientError::Disconnected));
    Ok((outcome?, agent))
}

fn io_err(scenario: &Scenario) -> impl Fn(std::io::Error) -> EngineError + '_ {
    move |e| {
        EngineError::Scenario(crate::scenario::ScenarioError::Invalid { id: scenario.id.clone(), reason: e.to_string() })
    }
}

/// Connects a policy to an already open transport and sees the episode through
/// to its end.
pub fn attach<F>(t: Box<dyn AgentTransport + Send>, policy: F) -> Result<(), ClientError>
where
    F: FnOnce(&mut Client) -> Result<(), ClientError>,
{
    let mut client = PolicyClient::connect(t)?;
    let r = policy(&mut client);
    if client.ended().is_none() {
        // a policy that returns without finishing hands over to autopilot
        match &r {
            Ok(()) => {
                let _ = client.finish();
            }
            Err(e) => {
                let _ = client.fail(&e.to_string());
            }
        }
        let _ = client.wait_end();
    }
    r
}

/// Guesses the category of an instruction from its wording.
pub fn classify_instruction(text: &str) -> Option<Category> {
    let t = text.to_lowercase();
    let has = |words: &[&str]| words.iter().any(|w| t.contains(w));
    if has(&["pull over", "shoulder", "emergency lane", "park "]) {
        Some(Category::PullOver)
    } else if has(&["overtake", "pass the", "get past", "go around"]) {
        Some(Category::Overtake)
    } else if has(&["intersection", "junction", "turn"]) {
        Some(Category::Routing)
    } else if has(&["m/s", "speed", "faster", "slower", "accelerate", "slow down", "per second"]) {
        Some(Category::Speed)
    } else if has(&["distance", "gap", "behind", "meter", " m ", "closer", "back off", "fall back", "follow"]) {
        Some(Category::Distance)
    } else if has(&["lane"]) {
        Some(Category::LaneChange)
    } else {
        None
    }
}

fn first_number(text: &str) -> Option<f64> {
    let re = Regex::new(r"(\d+(?:\.\d+)?)").expect("valid regex");
    re.captures(text).and_then(|c| c[1].parse().ok())
}

/// Relative change requested by the instruction: `Some(+1)` for more,
/// `Some(-1)` for less, `None` for an absolute target.
fn relative_sign(text: &str, up: &[&str], down: &[&str]) -> Option<f64> {
    let t = text.to_lowercase();
    if up.iter().any(|w| t.contains(w)) {
        Some(1.0)
    } else if down.iter().any(|w| t.contains(w)) {
        Some(-1.0)
    } else {
        None
    }
}

fn direction(text: &str) -> Option<&'static str> {
    let t = text.to_lowercase();
    if t.contains("left") {
        Some("left")
    } else if t.contains("right") {
        Some("right")
    } else if t.contains("straight") {
        Some("straight")
    } else {
        None
    }
}

/// Yields until the episode ends, running `each` before every yield.
fn drive<F>(c: &mut Client, mut each: F) -> Result<(), ClientError>
where
    F: FnMut(&mut Client) -> Result<(), ClientError>,
{
    loop {
        match each(c) {
            Ok(()) => {}
            Err(ClientError::EpisodeOver) => return Ok(()),
            Err(e) => return Err(e),
        }
        match c.yield_step() {
            Ok(s) if s.done => return Ok(()),
            Ok(_) => {}
            Err(ClientError::EpisodeOver) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
}

fn ego(c: &mut Client) -> Result<VehicleId, ClientError> {
    c.vehicle("get_ego_vehicle", vec![])?.ok_or_else(|| ClientError::Unexpected("get_ego_vehicle".into()))
}

fn ego_lane(c: &mut Client, ego: VehicleId) -> Result<LaneId, ClientError> {
    c.lane("get_lane_of", vec![Value::Vehicle(ego)])?.ok_or_else(|| ClientError::Unexpected("get_lane_of".into()))
}

fn front_of(c: &mut Client, ego: VehicleId) -> Result<Option<(VehicleId, f64, f64)>, ClientError> {
    let lane = ego_lane(c, ego)?;
    let Some(front) = c.vehicle("detect_front_vehicle_in", vec![Value::Lane(lane)])? else {
        return Ok(None);
    };
    let d = c.number("get_distance_between_vehicles", vec![Value::Vehicle(front), Value::Vehicle(ego)])?;
    let v = c.number("get_speed_of", vec![Value::Vehicle(front)])?;
    Ok(Some((front, d, v)))
}

pub fn speed_policy(c: &mut Client) -> Result<(), ClientError> {
    let instruction = c.instruction.clone();
    let n = first_number(&instruction).ok_or_else(|| ClientError::Unexpected("no speed in instruction".into()))?;
    let sign = relative_sign(&instruction, &["up", "increase", "faster", "accelerate"], &["slow", "decrease", "reduce"]);
    let target = match sign {
        Some(s) => c.number("get_target_speed", vec![])? + s * n,
        None => n,
    };
    c.call_ok("say", vec![Value::Text(format!("Adjusting speed to {target:.1} m/s."))])?;
    c.call_ok("set_target_speed", vec![Value::Number(target)])?;
    drive(c, |_| Ok(()))
}

pub fn distance_policy(c: &mut Client) -> Result<(), ClientError> {
    let instruction = c.instruction.clone();
    let n = first_number(&instruction).ok_or_else(|| ClientError::Unexpected("no distance in instruction".into()))?;
    let sign = relative_sign(&instruction, &["increase", "back off", "more", "fall back"], &["close", "closer", "reduce"]);
    let me = ego(c)?;
    let d0 = front_of(c, me)?.map(|(_, d, _)| d);
    let desired = match (sign, d0) {
        (Some(s), Some(d0)) => d0 + s * n,
        _ => n,
    };
    let mut trim = 0.0;
    drive(c, move |c| {
        let Some((_, d, v_front)) = front_of(c, me)? else {
            return Ok(());
        };
        // cruise a little faster than the leader so the gap is set by headway
        let cruise = (v_front + 6.0).min(40.0);
        c.call_ok("set_target_speed", vec![Value::Number(cruise)])?;
        // IDM equilibrium: gap = (s0 + v T) / sqrt(1 - (v/v0)^4)
        let v = v_front.max(1.0);
        let free = (1.0 - (v / cruise).powi(4)).max(0.05).sqrt();
        trim = (trim + 0.05 * (desired - d)).clamp(-5.0, 5.0);
        let gap = (desired - 5.0 + trim) * free;
        let headway = ((gap - 2.0) / v).max(0.1);
        c.call_ok("set_desired_time_headway", vec![Value::Number(headway)])?;
        Ok(())
    })
}

/// Shifts speed relative to the target lane's traffic until a gap lines up.
fn seek_gap(c: &mut Client, me: VehicleId, target: LaneId, cruise: f64) -> Result<(), ClientError> {
    let near = |c: &mut Client, f: &str| -> Result<Option<(f64, f64)>, ClientError> {
        let Some(v) = c.vehicle(f, vec![Value::Lane(target)])? else {
            return Ok(None);
        };
        let d = c.number("get_distance_between_vehicles", vec![Value::Vehicle(v), Value::Vehicle(me)])?;
        Ok(Some((d.abs(), c.number("get_speed_of", vec![Value::Vehicle(v)])?)))
    };
    let front = near(c, "detect_front_vehicle_in")?;
    let rear = near(c, "detect_rear_vehicle_in")?;
    // let a close follower by, otherwise drop in behind the leader
    let speed = match (front, rear) {
        (_, Some((dr, vr))) if dr < 30.0 => vr - 4.0,
        (Some((df, vf)), _) if df < 30.0 => vf - 3.0,
        (_, Some((_, vr))) if vr > cruise => cruise.min(vr - 4.0),
        _ => cruise,
    };
    c.call_ok("set_target_speed", vec![Value::Number(speed.clamp(3.0, 40.0))])?;
    Ok(())
}

pub fn pull_over_policy(c: &mut Client) -> Result<(), ClientError> {
    let me = ego(c)?;
    let cruise = c.number("get_target_speed", vec![])?;
    c.call_ok("say", vec![Value::Text("Pulling over.".into())])?;
    let mut blocked = 0;
    drive(c, move |c| {
        match c.lane("get_right_lane", vec![Value::Vehicle(me)])? {
            Some(right) => {
                c.call_ok("set_target_lane", vec![Value::Lane(right)])?;
                if c.call_ok("is_safe_enter", vec![Value::Lane(right)])? == Value::Bool(true) {
                    blocked = 0;
                } else {
                    blocked += 1;
                    if blocked >= 3 {
                        seek_gap(c, me, right, cruise)?;
                    }
                }
            }
            None => {
                c.call_ok("set_target_speed", vec![Value::Number(0.0)])?;
            }
        }
        Ok(())
    })
}

pub fn routing_policy(c: &mut Client) -> Result<(), ClientError> {
    let f = match direction(&c.instruction) {
        Some("left") => "turn_left_at_next_intersection",
        Some("right") => "turn_right_at_next_intersection",
        _ => "go_straight_at_next_intersection",
    };
    c.call_ok(f, vec![])?;
    let me = ego(c)?;
    drive(c, move |c| {
        let sign = c.number("detect_stop_sign_ahead", vec![])?;
        let speed = c.number("get_speed_of", vec![Value::Vehicle(me)])?;
        if (0.0..8.0).contains(&sign) && speed < 0.2 {
            // refused while conditions are not met; try again next step
            let _ = c.call("recover_from_stop", vec![])?;
        }
        Ok(())
    })
}

/// Requests the lane up front, which signals the move; the environment
/// starts it once `is_safe_enter` holds. Meanwhile slides toward a gap.
pub fn lane_change_policy(c: &mut Client) -> Result<(), ClientError> {
    let me = ego(c)?;
    let f = if direction(&c.instruction) == Some("right") { "get_right_lane" } else { "get_left_lane" };
    let Some(target) = c.lane(f, vec![Value::Vehicle(me)])? else {
        return Err(ClientError::Unexpected(format!("{f} returned none")));
    };
    let cruise = c.number("get_target_speed", vec![])?;
    c.call_ok("set_target_lane", vec![Value::Lane(target)])?;
    let mut waited = 0;
    let mut done = false;
    drive(c, move |c| {
        if done {
            return Ok(());
        }
        if ego_lane(c, me)? == target {
            c.call_ok("set_target_speed", vec![Value::Number(cruise)])?;
            done = true;
        } else if c.call_ok("is_safe_enter", vec![Value::Lane(target)])? == Value::Bool(false) {
            waited += 1;
            if waited >= 3 {
                seek_gap(c, me, target, cruise)?;
            }
        }
        Ok(())
    })
}

pub fn overtake_policy(c: &mut Client) -> Result<(), ClientError> {
    let me = ego(c)?;
    let Some((target, _, v_target)) = front_of(c, me)? else {
        return Err(ClientError::Unexpected("nothing to overtake".into()));
    };
    let start_lane = ego_lane(c, me)?;
    let Some(left) = c.lane("get_left_lane", vec![Value::Vehicle(me)])? else {
        return Err(ClientError::Unexpected("no lane to pass in".into()));
    };
    c.call_ok("set_target_speed", vec![Value::Number((v_target + 10.0).min(40.0))])?;
    drive(c, move |c| {
        let lane = ego_lane(c, me)?;
        if lane == start_lane && c.call_ok("is_safe_enter", vec![Value::Lane(left)])? == Value::Bool(true) {
            c.call_ok("set_target_lane", vec![Value::Lane(left)])?;
        }
        let _ = c.number("get_distance_between_vehicles", vec![Value::Vehicle(me), Value::Vehicle(target)])?;
        Ok(())
    })
}

pub fn policy_for(category: Category) -> fn(&mut Client) -> Result<(), ClientError> {
    match category {
        Category::Distance => distance_policy,
        Category::Speed => speed_policy,
        Category::PullOver => pull_over_policy,
        Category::Routing => routing_policy,
        Category::LaneChange => lane_change_policy,
        Category::Overtake => overtake_policy,
    }
}

/// Picks the scripted policy from the instruction text.
pub fn scripted_policy(c: &mut Client) -> Result<(), ClientError> {
    match classify_instruction(&c.instruction) {
        Some(cat) => policy_for(cat)(c),
        None => c.finish(),
    }
}

fn random_value(rng: &mut ChaCha8Rng, kind: &str) -> Value {
    match kind {
        "number" => Value::Number(rng.gen_range(-5.0..45.0)),
        "lane" => Value::Lane(LaneId(rng.gen_range(0..12))),
        "vehicle" => Value::Vehicle(rng.gen_range(0..30)),
        "string" => Value::Text(format!("note {}", rng.gen_range(0..100))),
        _ => Value::Null,
    }
}

/// Issues `calls` random registry calls (with occasional unknown names,
/// wrong arity, and wrong argument kinds), yielding every few calls, then
/// finishes. Returns how many calls were answered.
pub fn fuzz_policy(c: &mut Client, seed: u64, calls: usize) -> Result<usize, ClientError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut answered = 0;
    while answered < calls {
        let (name, args) = match rng.gen_range(0..20) {
            0 => ("no_such_primitive".to_string(), vec![]),
            1 => {
                let spec = REGISTRY.choose(&mut rng).expect("non-empty");
                let args = (0..spec.params.len() + 1).map(|_| Value::Number(1.0)).collect();
                (spec.name.to_string(), args)
            }
            2 => {
                let spec = REGISTRY.choose(&mut rng).expect("non-empty");
                let args = spec.params.iter().map(|_| Value::Text("x".into())).collect();
                (spec.name.to_string(), args)
            }
            _ => {
                let spec = REGISTRY.choose(&mut rng).expect("non-empty");
                let n = rng.gen_range(spec.required_arity()..=spec.params.len());
                let args = spec.params[..n].iter().map(|p| random_value(&mut rng, p.kind)).collect();
                (spec.name.to_string(), args)
            }
        };
        match c.call(&name, args) {
            Ok(_) => answered += 1,
            Err(ClientError::EpisodeOver) => return Ok(answered),
            Err(e) => return Err(e),
        }
        if rng.gen_range(0..8) == 0 {
            match c.yield_step() {
                Ok(s) if s.done => return Ok(answered),
                Ok(_) => {}
                Err(ClientError::EpisodeOver) => return Ok(answered),
                Err(e) => return Err(e),
            }
        }
    }
    c.finish()?;
    Ok(answered)
}
