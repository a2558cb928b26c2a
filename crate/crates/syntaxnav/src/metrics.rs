//! Trajectory-fidelity metrics: success rate, SPL, nDTW, sDTW and CLS.
//!
//! All distances between viewpoints are shortest-path metric distances on
//! the graph, the same notion the reward scheme uses. Every score lies in
//! [0, 1] and identity trajectories score exactly 1.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::world::{EnvironmentGraph, Episode, Split, WorldError};

pub const DEFAULT_SUCCESS_RADIUS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("expected {expected} trajectories for {expected} episodes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    World(#[from] WorldError),
}

/// A predicted trajectory against its reference path, with the graph that
/// defines metric distances.
pub struct TrajectoryPair<'a> {
    pub graph: &'a EnvironmentGraph,
    pub predicted: &'a [String],
    pub reference: &'a [String],
    /// Success radius in meters (strictly-less-than test).
    pub threshold: f64,
}

impl<'a> TrajectoryPair<'a> {
    pub fn new(
        graph: &'a EnvironmentGraph,
        predicted: &'a [String],
        reference: &'a [String],
    ) -> Self {
        TrajectoryPair {
            graph,
            predicted,
            reference,
            threshold: DEFAULT_SUCCESS_RADIUS,
        }
    }

    fn d(&self, a: &str, b: &str) -> f64 {
        self.graph.distance(a, b).expect("paths are graph-valid")
    }
}

/// 1 iff the agent stopped strictly within the success radius of the goal.
pub fn success(pair: &TrajectoryPair) -> bool {
    let q_end = pair.predicted.last().expect("non-empty predicted path");
    let r_end = pair.reference.last().expect("non-empty reference path");
    pair.d(q_end, r_end) < pair.threshold
}

/// Success weighted by path length: S * l / max(p, l).
pub fn spl(pair: &TrajectoryPair) -> f64 {
    if !success(pair) {
        return 0.0;
    }
    let l = pair.d(&pair.reference[0], pair.reference.last().unwrap());
    let p = path_length(pair.graph, pair.predicted);
    if l == 0.0 {
        // Degenerate single-point reference: perfect only if the agent
        // also went nowhere.
        return if p == 0.0 { 1.0 } else { 0.0 };
    }
    l / p.max(l)
}

fn path_length(graph: &EnvironmentGraph, path: &[String]) -> f64 {
    graph.path_length(path).expect("paths are graph-valid")
}

/// Minimal cumulative distance over monotone alignments matching both
/// endpoints, by dynamic programming.
pub fn dtw_cost(pair: &TrajectoryPair) -> f64 {
    let (n, m) = (pair.predicted.len(), pair.reference.len());
    let mut dp = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let d = pair.d(&pair.predicted[i], &pair.reference[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 {
                    b = b.min(dp[i - 1][j]);
                }
                if j > 0 {
                    b = b.min(dp[i][j - 1]);
                }
                if i > 0 && j > 0 {
                    b = b.min(dp[i - 1][j - 1]);
                }
                b
            };
            dp[i][j] = d + best;
        }
    }
    dp[n - 1][m - 1]
}

/// Normalized DTW: exp(-DTW / (|R| * threshold)).
pub fn ndtw(pair: &TrajectoryPair) -> f64 {
    let denom = pair.reference.len() as f64 * pair.threshold;
    (-dtw_cost(pair) / denom).exp()
}

/// nDTW gated by success.
pub fn sdtw(pair: &TrajectoryPair) -> f64 {
    if success(pair) {
        ndtw(pair)
    } else {
        0.0
    }
}

/// Coverage weighted by length score: PC * LS.
pub fn cls(pair: &TrajectoryPair) -> f64 {
    let pc = pair
        .reference
        .iter()
        .map(|r| {
            let min_d = pair
                .predicted
                .iter()
                .map(|q| pair.d(q, r))
                .fold(f64::INFINITY, f64::min);
            (-min_d / pair.threshold).exp()
        })
        .sum::<f64>()
        / pair.reference.len() as f64;
    let epl = pc * path_length(pair.graph, pair.reference);
    let p = path_length(pair.graph, pair.predicted);
    let denom = epl + (epl - p).abs();
    let ls = if denom == 0.0 { 1.0 } else { epl / denom };
    pc * ls
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeScores {
    pub id: String,
    pub split: String,
    pub success: bool,
    pub spl: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    pub cls: f64,
    pub path_length_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitAggregate {
    pub split: String,
    pub episodes: usize,
    /// Mean success in [0, 1].
    pub sr: f64,
    pub spl: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    pub cls: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryReport {
    pub format: String,
    pub aggregates: Vec<SplitAggregate>,
    pub episodes: Vec<EpisodeScores>,
}

impl TrajectoryReport {
    pub fn aggregate(&self, split: Split) -> Option<&SplitAggregate> {
        self.aggregates.iter().find(|a| a.split == split.as_str())
    }
}

/// Scores aligned (episode, trajectory) lists and aggregates per split with
/// unweighted means. Order-invariant in the aggregates.
pub fn evaluate<'g>(
    graph_of: impl Fn(&Episode) -> Result<&'g EnvironmentGraph, WorldError>,
    episodes: &[Episode],
    trajectories: &[Vec<String>],
) -> Result<TrajectoryReport, MetricsError> {
    if episodes.len() != trajectories.len() {
        return Err(MetricsError::LengthMismatch {
            expected: episodes.len(),
            got: trajectories.len(),
        });
    }
    let mut rows = Vec::with_capacity(episodes.len());
    for (ep, traj) in episodes.iter().zip(trajectories) {
        let graph = graph_of(ep)?;
        let pair = TrajectoryPair::new(graph, traj, &ep.path);
        rows.push(EpisodeScores {
            id: ep.id.clone(),
            split: ep.split.as_str().to_string(),
            success: success(&pair),
            spl: spl(&pair),
            ndtw: ndtw(&pair),
            sdtw: sdtw(&pair),
            cls: cls(&pair),
            path_length_m: path_length(graph, traj),
        });
    }

    let mut groups: BTreeMap<String, Vec<&EpisodeScores>> = BTreeMap::new();
    for row in &rows {
        groups.entry(row.split.clone()).or_default().push(row);
    }
    let aggregates = groups
        .into_iter()
        .map(|(split, members)| {
            let n = members.len() as f64;
            let mean = |f: &dyn Fn(&EpisodeScores) -> f64| {
                members.iter().map(|m| f(m)).sum::<f64>() / n
            };
            SplitAggregate {
                split,
                episodes: members.len(),
                sr: mean(&|m| if m.success { 1.0 } else { 0.0 }),
                spl: mean(&|m| m.spl),
                ndtw: mean(&|m| m.ndtw),
                sdtw: mean(&|m| m.sdtw),
                cls: mean(&|m| m.cls),
            }
        })
        .collect();

    Ok(TrajectoryReport {
        format: "syntaxnav-report/1".to_string(),
        aggregates,
        episodes: rows,
    })
}

pub fn write_report_json(path: &Path, report: &TrajectoryReport) -> Result<(), std::io::Error> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json)
}

/// CSV with the standard column order: SR(%), SPL, nDTW, sDTW, CLS.
pub fn write_report_csv(path: &Path, report: &TrajectoryReport) -> Result<(), std::io::Error> {
    let mut out = String::from("split,episodes,sr_percent,spl,ndtw,sdtw,cls\n");
    for a in &report.aggregates {
        out.push_str(&format!(
            "{},{},{:.1},{:.4},{:.4},{:.4},{:.4}\n",
            a.split,
            a.episodes,
            100.0 * a.sr,
            a.spl,
            a.ndtw,
            a.sdtw,
            a.cls
        ));
    }
    std::fs::write(path, out)
}
