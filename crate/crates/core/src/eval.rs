//! Per-particle error metrics and timing reports.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameSequence;
use crate::Vec3;

/// Mean Euclidean distance between corresponding particles.
pub fn per_particle_error(candidate: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    if candidate.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} candidate particles vs {} ground truth", candidate.len(), truth.len())));
    }
    Ok(candidate.iter().zip(truth).map(|(a, b)| (a - b).norm()).sum::<f64>() / truth.len() as f64)
}

/// Wall-clock milliseconds for one output frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub sim_ms: f64,
    pub infer_ms: f64,
    pub total_ms: f64,
}

pub fn timing_csv(timings: &[FrameTiming]) -> String {
    let mut s = String::from("frame,sim_ms,infer_ms,total_ms\n");
    for (k, t) in timings.iter().enumerate() {
        s.push_str(&format!("{k},{:.6},{:.6},{:.6}\n", t.sim_ms, t.infer_ms, t.total_ms));
    }
    s
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub candidate: String,
    pub ground_truth: String,
    pub scene_hash: String,
    pub first_frame: usize,
    pub per_frame_error: Vec<f64>,
    pub mean_error: f64,
    pub max_error: f64,
    pub timings: Option<Vec<FrameTiming>>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "candidate    {}\nground truth {}\nframes       {}\nmean error   {:.6e}\nmax error    {:.6e}\n",
            self.candidate,
            self.ground_truth,
            self.per_frame_error.len(),
            self.mean_error,
            self.max_error
        );
        s.push_str(&format!("\n{:>6}  {:>12}", "frame", "error"));
        if self.timings.is_some() {
            s.push_str(&format!("  {:>10}  {:>10}  {:>10}", "sim_ms", "infer_ms", "total_ms"));
        }
        s.push('\n');
        for (k, e) in self.per_frame_error.iter().enumerate() {
            s.push_str(&format!("{:>6}  {:>12.6e}", self.first_frame + k, e));
            if let Some(t) = self.timings.as_ref().and_then(|t| t.get(self.first_frame + k)) {
                s.push_str(&format!("  {:>10.3}  {:>10.3}  {:>10.3}", t.sim_ms, t.infer_ms, t.total_ms));
            }
            s.push('\n');
        }
        s
    }
}

/// Compare two trajectories frame by frame over `range` (all frames if `None`).
pub fn evaluate(candidate: &FrameSequence, truth: &FrameSequence, range: Option<Range<usize>>) -> Result<EvalReport> {
    if (candidate.rows, candidate.cols) != (truth.rows, truth.cols) {
        return Err(Error::DimensionMismatch(format!(
            "candidate grid {}x{} vs ground truth {}x{}",
            candidate.rows, candidate.cols, truth.rows, truth.cols
        )));
    }
    let range = match range {
        Some(r) => r,
        None if candidate.len() == truth.len() => 0..truth.len(),
        None => {
            return Err(Error::DimensionMismatch(format!(
                "{} candidate frames vs {} ground-truth frames",
                candidate.len(),
                truth.len()
            )))
        }
    };
    if range.is_empty() || range.end > candidate.len() || range.end > truth.len() {
        return Err(Error::FrameOutOfRange { t: range.end, available: candidate.len().min(truth.len()) });
    }
    let per_frame_error = range
        .clone()
        .map(|t| per_particle_error(&candidate.frames[t], &truth.frames[t]))
        .collect::<Result<Vec<_>>>()?;
    let mean_error = per_frame_error.iter().sum::<f64>() / per_frame_error.len() as f64;
    let max_error = per_frame_error.iter().copied().fold(0.0, f64::max);
    Ok(EvalReport {
        candidate: candidate.meta.label.clone(),
        ground_truth: truth.meta.label.clone(),
        scene_hash: truth.meta.scene_hash.clone(),
        first_frame: range.start,
        per_frame_error,
        mean_error,
        max_error,
        timings: None,
    })
}
