//! Replaying a recorded call transcript as an agent.

use super::client::{AgentTransport, ClientError, PolicyClient};
use crate::api::Value;
use crate::log::{CallOutcome, DecisionSource, Event, TrajectoryLog};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("log has no episode_start event")]
    NoEpisodeStart,
    #[error("log is for scenario {recorded}, environment offers {offered}")]
    ScenarioMismatch { recorded: String, offered: String },
    #[error("replay diverged at step {step}: {what}")]
    Divergence { step: u64, what: String },
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone, PartialEq)]
struct RecordedCall {
    id: u64,
    function: String,
    args: Vec<Value>,
    result: CallOutcome,
}

#[derive(Debug, Clone, PartialEq)]
enum Ending {
    Yield { digest: String, step: u64 },
    Finish,
    Fail(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Boundary {
    step: u64,
    calls: Vec<RecordedCall>,
    ending: Ending,
}

/// The agent-visible part of a recorded episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayScript {
    pub scenario_id: String,
    pub seed: u64,
    boundaries: Vec<Boundary>,
}

impl ReplayScript {
    pub fn from_log(log: &TrajectoryLog) -> Result<Self, ReplayError> {
        let (scenario_id, seed) = log
            .records
            .first()
            .and_then(|r| {
                r.events.iter().find_map(|e| match e {
                    Event::EpisodeStart { scenario_id, seed } => Some((scenario_id.clone(), *seed)),
                    _ => None,
                })
            })
            .ok_or(ReplayError::NoEpisodeStart)?;
        let decision_records: Vec<usize> = log
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.events.iter().any(|e| matches!(e, Event::Decision { .. })))
            .map(|(i, _)| i)
            .collect();
        let mut boundaries = Vec::new();
        for (k, &i) in decision_records.iter().enumerate() {
            let record = &log.records[i];
            let mut calls = Vec::new();
            let mut ending = None;
            for e in &record.events {
                match e {
                    Event::Call { id, function, args, result } => calls.push(RecordedCall {
                        id: *id,
                        function: function.clone(),
                        args: args.clone(),
                        result: result.clone(),
                    }),
                    Event::Finish => ending = Some(Ending::Finish),
                    Event::FallbackEngaged { reason } if ending.is_none() => ending = Some(Ending::Fail(reason.clone())),
                    Event::Decision { source: DecisionSource::Yield } if ending.is_none() => {
                        let next = decision_records.get(k + 1).copied().unwrap_or(log.records.len() - 1);
                        let after = &log.records[next];
                        ending = Some(Ending::Yield { digest: after.state_digest(), step: after.step });
                    }
                    _ => {}
                }
            }
            let Some(ending) = ending else { break };
            let stop = !matches!(ending, Ending::Yield { .. });
            boundaries.push(Boundary { step: record.step, calls, ending });
            if stop {
                break;
            }
        }
        Ok(Self { scenario_id, seed, boundaries })
    }

    /// Runs the script against a connected client.
    pub fn play<T: AgentTransport>(&self, client: &mut PolicyClient<T>) -> Result<(), ReplayError> {
        if client.scenario_id != self.scenario_id {
            let _ = client.fail("replay: scenario mismatch");
            return Err(ReplayError::ScenarioMismatch { recorded: self.scenario_id.clone(), offered: client.scenario_id.clone() });
        }
        for b in &self.boundaries {
            for c in &b.calls {
                let got = client.call_with_id(c.id, &c.function, c.args.clone())?;
                let got = match got {
                    Ok(v) => CallOutcome::Value(v),
                    Err(e) => CallOutcome::Error(e),
                };
                if got != c.result {
                    let what = format!("call {} `{}` returned {:?}, recorded {:?}", c.id, c.function, got, c.result);
                    let _ = client.fail("replay divergence");
                    return Err(ReplayError::Divergence { step: b.step, what });
                }
            }
            match &b.ending {
                Ending::Yield { digest, step } => {
                    let stepped = client.yield_step()?;
                    if &stepped.state_digest != digest {
                        if !stepped.done {
                            let _ = client.fail("replay divergence");
                        }
                        return Err(ReplayError::Divergence { step: *step, what: "state digest differs".into() });
                    }
                }
                Ending::Finish => client.finish()?,
                Ending::Fail(reason) => client.fail(reason)?,
            }
        }
        if client.ended().is_none() {
            client.wait_end()?;
        }
        Ok(())
    }
}

/// First record whose state differs between two logs.
pub fn first_divergence(recorded: &TrajectoryLog, replayed: &TrajectoryLog) -> Option<u64> {
    for (a, b) in recorded.records.iter().zip(&replayed.records) {
        if a.state_digest() != b.state_digest() || a.events != b.events {
            return Some(a.step);
        }
    }
    if recorded.records.len() != replayed.records.len() {
        let n = recorded.records.len().min(replayed.records.len());
        return Some(n as u64);
    }
    None
}
