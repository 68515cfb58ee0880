//! Serializable detection reports and curve export.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::estimation::FitResult;
use crate::multi_detect::{MultiDetection, ScreeningTrace, TwoStepOutcome, WindowCurve};
use crate::series::Interval;
use crate::single_detect::SingleDetection;
use crate::{Error, Result};

/// JSON form of a fit: matrices row-major plus summary statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitJson {
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rank_estimate: usize,
    pub sparse_support_size: usize,
}

impl FitJson {
    pub fn from_fit(fit: &FitResult) -> Self {
        let row_major = |m: &nalgebra::DMatrix<f64>| {
            let mut out = Vec::with_capacity(m.nrows() * m.ncols());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)]);
                }
            }
            out
        };
        Self {
            l: row_major(&fit.l_hat),
            s: row_major(&fit.s_hat),
            objective: fit.objective_value,
            iterations: fit.iterations,
            converged: fit.converged,
            rank_estimate: fit.rank_estimate(),
            sparse_support_size: fit.sparse_support_size(),
        }
    }
}

/// Compact per-segment summary used in detection reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentReport {
    pub interval: Interval,
    pub rank_estimate: usize,
    pub sparse_support_size: usize,
    pub relative_objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceJson {
    pub omega_t: f64,
    pub steps: Vec<TraceStepJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStepJson {
    pub retained: Vec<usize>,
    pub ic: f64,
}

impl TraceJson {
    fn from_trace(trace: &ScreeningTrace) -> Self {
        Self {
            omega_t: trace.omega_t,
            steps: trace
                .steps
                .iter()
                .map(|s| TraceStepJson {
                    retained: s.retained.clone(),
                    ic: s.ic,
                })
                .collect(),
        }
    }
}

/// Surrogate applicability block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApplicabilityJson {
    pub q: f64,
    #[serde(rename = "R_q")]
    pub r_q: f64,
    pub radius_lower_bound: f64,
    pub applicable: bool,
}

/// Detection report written by every detector front end.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: String,
    pub t_len: usize,
    pub p: usize,
    pub change_points: Vec<usize>,
    pub m_hat: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_plan: Option<WindowPlanJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_t: Option<f64>,
    pub per_segment: Vec<SegmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub applicability: Option<ApplicabilityJson>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowPlanJson {
    pub h: usize,
    pub l: usize,
    pub windows: Vec<Interval>,
}

impl DetectionReport {
    /// Report for a multi-point detection over a series of length `t_len`.
    pub fn from_multi(
        method: &str,
        detection: &MultiDetection,
        t_len: usize,
        p: usize,
        seed: u64,
    ) -> Self {
        let segments = detection.segments(t_len);
        let per_segment = segments
            .iter()
            .zip(&detection.segment_fits)
            .map(|(iv, fit)| SegmentReport {
                interval: *iv,
                rank_estimate: fit.rank_estimate(),
                sparse_support_size: fit.sparse_support_size(),
                relative_objective: fit.objective_value,
            })
            .collect();
        Self {
            method: method.to_string(),
            t_len,
            p,
            change_points: detection.change_points.clone(),
            m_hat: detection.m_hat,
            window_plan: None,
            omega_t: None,
            per_segment,
            trace: Some(TraceJson::from_trace(&detection.trace)),
            applicability: None,
            seed,
        }
    }

    pub fn from_two_step(
        method: &str,
        outcome: &TwoStepOutcome,
        t_len: usize,
        p: usize,
        seed: u64,
    ) -> Self {
        let mut report = Self::from_multi(method, &outcome.detection, t_len, p, seed);
        report.omega_t = Some(outcome.omega_t);
        report.window_plan = Some(WindowPlanJson {
            h: outcome.candidates.h,
            l: outcome.candidates.l,
            windows: outcome
                .candidates
                .window_curves
                .iter()
                .map(|c| c.window)
                .collect(),
        });
        report
    }

    /// Report for a single change point detection.
    pub fn from_single(
        method: &str,
        detection: &SingleDetection,
        t_len: usize,
        p: usize,
        seed: u64,
    ) -> Self {
        let per_segment = vec![
            SegmentReport {
                interval: Interval::new(0, detection.tau_hat),
                rank_estimate: detection.left_fit.rank_estimate(),
                sparse_support_size: detection.left_fit.sparse_support_size(),
                relative_objective: detection.left_fit.objective_value,
            },
            SegmentReport {
                interval: Interval::new(detection.tau_hat - 1, t_len),
                rank_estimate: detection.right_fit.rank_estimate(),
                sparse_support_size: detection.right_fit.sparse_support_size(),
                relative_objective: detection.right_fit.objective_value,
            },
        ];
        Self {
            method: method.to_string(),
            t_len,
            p,
            change_points: vec![detection.tau_hat],
            m_hat: 1,
            window_plan: None,
            omega_t: None,
            per_segment,
            trace: None,
            applicability: None,
            seed,
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("report serialization failed: {e}")))
    }
}

/// Writes an objective curve as TSV with a `tau\tobjective` header.
pub fn write_curve_tsv(mut out: impl Write, curve: &[(usize, f64)]) -> std::io::Result<()> {
    writeln!(out, "tau\tobjective")?;
    for &(tau, value) in curve {
        writeln!(out, "{tau}\t{value:.12e}")?;
    }
    Ok(())
}

/// Writes every window curve of a candidate search, one file per window,
/// naming files `curve_window_<i>.tsv` under `dir`.
pub fn write_window_curves(dir: &std::path::Path, curves: &[WindowCurve]) -> std::io::Result<()> {
    for (i, wc) in curves.iter().enumerate() {
        let path = dir.join(format!("curve_window_{i}.tsv"));
        let file = std::fs::File::create(path)?;
        write_curve_tsv(std::io::BufWriter::new(file), &wc.curve)?;
    }
    Ok(())
}
