//! JSON-lines episode traces and reward replay.
//!
//! The first line is a header carrying what is needed to recompute rewards;
//! every following line is one step.

use std::io::{BufRead, Write};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{reward_high, reward_low, HighReward, HighStep, LowObservation, LowReward, RewardCoefficients, HIGH_ACTION_DIM, HIGH_OBS_DIM, LOW_OBS_DIM};
use crate::error::{Error, Result};
use crate::geometry::HingeToolSpec;

/// Recomputed rewards must match the logged ones this closely.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub spec: HingeToolSpec,
    pub coefficients: RewardCoefficients,
    pub dt: f64,
    pub effort_reward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRecord {
    pub episode: usize,
    pub step: usize,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub goal: [f64; 2],
    pub reward: LowReward,
    pub success: bool,
    pub phi: f64,
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighRecord {
    pub episode: usize,
    pub step: usize,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: HighReward,
    pub t_tool: [f64; 3],
    pub p_obj: [f64; 3],
    pub p_tgt: [f64; 3],
    pub end_effector_z: f64,
    pub grasped: bool,
    pub phi: f64,
    pub terminal: bool,
}

impl HighRecord {
    pub fn from_step(episode: usize, step: usize, action: &[f64], s: &HighStep) -> Self {
        Self {
            episode,
            step,
            observation: s.observation.as_slice().to_vec(),
            action: action.to_vec(),
            reward: s.reward,
            t_tool: s.t_tool.into(),
            p_obj: s.object.p_obj.into(),
            p_tgt: s.object.p_tgt.into(),
            end_effector_z: s.end_effector_z,
            grasped: s.object.grasped,
            phi: s.phi,
            terminal: s.terminal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Low(LowRecord),
    High(HighRecord),
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, header: TraceHeader) -> Result<Self> {
        serde_json::to_writer(&mut out, &TraceLine::Header(header))?;
        out.write_all(b"\n")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, line: &TraceLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// One replayed step: logged and recomputed reward terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayRow {
    pub episode: usize,
    pub step: usize,
    pub level: &'static str,
    /// `(name, logged, recomputed)` for every term and the total.
    pub terms: Vec<(&'static str, f64, f64)>,
}

impl ReplayRow {
    pub fn matches(&self) -> bool {
        self.terms.iter().all(|(_, a, b)| (a - b).abs() <= REPLAY_TOLERANCE)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReplayReport {
    pub rows: Vec<ReplayRow>,
}

impl ReplayReport {
    pub fn mismatches(&self) -> usize {
        self.rows.iter().filter(|r| !r.matches()).count()
    }

    /// Plain-text step table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let terms: Vec<String> = r
                .terms
                .iter()
                .map(|(n, logged, re)| format!("{n}={logged:.6}/{re:.6}"))
                .collect();
            let flag = if r.matches() { "ok" } else { "MISMATCH" };
            s.push_str(&format!("{:>4} {:>4} {:<4} {} {}\n", r.episode, r.step, r.level, terms.join(" "), flag));
        }
        s
    }
}

fn low_row(h: &TraceHeader, canonical: &crate::cloud::PointCloud, r: &LowRecord) -> Result<ReplayRow> {
    let obs: [f64; LOW_OBS_DIM] = r
        .observation
        .as_slice()
        .try_into()
        .map_err(|_| Error::Format(format!("low observation needs {LOW_OBS_DIM} entries")))?;
    let re = reward_low(&LowObservation(obs), &Vector2::from(r.goal), &h.coefficients, canonical, h.dt, h.effort_reward);
    Ok(ReplayRow {
        episode: r.episode,
        step: r.step,
        level: "low",
        terms: vec![
            ("goal", r.reward.goal, re.goal),
            ("effort", r.reward.effort, re.effort),
            ("total", r.reward.total, re.total),
        ],
    })
}

fn high_row(h: &TraceHeader, r: &HighRecord) -> Result<ReplayRow> {
    if r.observation.len() != HIGH_OBS_DIM || r.action.len() != HIGH_ACTION_DIM {
        return Err(Error::Format("high record has wrong dimensions".into()));
    }
    let re = reward_high(&Vector3::from(r.t_tool), &Vector3::from(r.p_obj), &Vector3::from(r.p_tgt), r.end_effector_z, &h.coefficients);
    Ok(ReplayRow {
        episode: r.episode,
        step: r.step,
        level: "high",
        terms: vec![
            ("sparse", r.reward.sparse, re.sparse),
            ("dense", r.reward.dense, re.dense),
            ("penalty", r.reward.penalty, re.penalty),
            ("total", r.reward.total, re.total),
        ],
    })
}

/// Recomputes every logged reward. An empty input gives an empty report.
pub fn replay<R: BufRead>(input: R) -> Result<ReplayReport> {
    let mut header: Option<(TraceHeader, crate::cloud::PointCloud)> = None;
    let mut report = ReplayReport::default();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        match parsed {
            TraceLine::Header(h) => {
                let canonical = h.spec.canonical_cloud();
                header = Some((h, canonical));
            }
            TraceLine::Low(r) => {
                let (h, c) = header.as_ref().ok_or_else(|| Error::Format("step before header".into()))?;
                report.rows.push(low_row(h, c, &r)?);
            }
            TraceLine::High(r) => {
                let (h, _) = header.as_ref().ok_or_else(|| Error::Format("step before header".into()))?;
                report.rows.push(high_row(h, &r)?);
            }
        }
    }
    Ok(report)
}
